#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stagdid/cli.hpp"

using stagdid::cli::Command;
using stagdid::cli::RunConfig;

namespace {

void add_common_flags(CLI::App* cmd, RunConfig& cfg) {
  cmd->add_option("--output", cfg.output, "Output path prefix")->required();
  cmd->add_option("--seed", cfg.seed, "Master RNG seed");
  cmd->add_option("--level", cfg.level, "Confidence level");
  cmd->add_option("--threads", cfg.threads, "Worker threads");
}

void add_estimator_flags(CLI::App* cmd, RunConfig& cfg, std::string& method) {
  cmd->add_option("--method", method, "Estimator: nb|drdid|iwes|ascm");
  cmd->add_option("--input", cfg.input, "Panel CSV");
  cmd->add_option("--config", cfg.config_path, "Schema/options JSON");
  cmd->add_option("--control-group", cfg.control_group, "never|notyet");
  cmd->add_option("--delta", cfg.delta, "Anticipation periods");
  cmd->add_option("--base-period", cfg.base_period, "varying|universal");
  cmd->add_option("--covariates", cfg.covariates, "Covariate names")->delimiter(',');
  cmd->add_option("--lambda", cfg.lambda, "SCM ridge penalty");
  cmd->add_option("--nu", cfg.nu, "SCM pooling weight in [0,1]");
  cmd->add_option("--bootstrap-B", cfg.bootstrap_reps, "Multiplier bootstrap replications");
  cmd->add_option("--e-min", cfg.e_min, "Smallest event time");
  cmd->add_option("--e-max", cfg.e_max, "Largest event time");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Staggered-adoption treatment-effect estimators"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string method = "drdid";
  std::string methods_csv;

  auto* ingest = app.add_subcommand("ingest", "Validate and preprocess a panel CSV");
  add_common_flags(ingest, cfg);
  ingest->add_option("--input", cfg.input, "Raw panel CSV")->required();
  ingest->add_option("--config", cfg.config_path, "Schema JSON")->required();
  ingest->add_flag("--repair-negatives", cfg.repair_negatives,
                   "Spline-repair negative count increments");
  ingest->add_flag("--asinh", cfg.asinh_transform, "Apply the asinh outcome transform");

  auto* simulate = app.add_subcommand("simulate", "Draw a ground-truth panel");
  add_common_flags(simulate, cfg);
  simulate->add_option("--spec", cfg.sim_spec_path, "SimSpec JSON (default: desk scenario)");

  auto* estimate = app.add_subcommand("estimate", "Run one estimator on a panel");
  add_common_flags(estimate, cfg);
  add_estimator_flags(estimate, cfg, method);

  auto* benchmark = app.add_subcommand("benchmark", "Monte Carlo bias/coverage study");
  add_common_flags(benchmark, cfg);
  benchmark->add_option("--methods", methods_csv, "Comma list: drdid,iwes,ascm,nb");
  benchmark->add_option("--reps", cfg.reps, "Replications");
  benchmark->add_option("--spec", cfg.sim_spec_path, "SimSpec JSON (default: desk scenario)");
  benchmark->add_option("--e-min", cfg.e_min, "Smallest event time");
  benchmark->add_option("--e-max", cfg.e_max, "Largest event time");
  benchmark->add_option("--bootstrap-B", cfg.bootstrap_reps, "Bootstrap replications");
  benchmark->add_option("--control-group", cfg.control_group, "never|notyet");
  benchmark->add_option("--base-period", cfg.base_period, "varying|universal");
  benchmark->add_option("--lambda", cfg.lambda, "SCM ridge penalty");
  benchmark->add_option("--nu", cfg.nu, "SCM pooling weight");

  auto* report = app.add_subcommand("report", "Side-by-side comparison of result files");
  add_common_flags(report, cfg);
  report->add_option("--inputs", cfg.inputs, "Event-study CSVs")->delimiter(',')->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(ingest)) cfg.command = Command::kIngest;
    else if (app.got_subcommand(simulate)) cfg.command = Command::kSimulate;
    else if (app.got_subcommand(estimate)) cfg.command = Command::kEstimate;
    else if (app.got_subcommand(benchmark)) cfg.command = Command::kBenchmark;
    else if (app.got_subcommand(report)) cfg.command = Command::kReport;

    if (cfg.command == Command::kEstimate) {
      cfg.methods = {stagdid::cli::parse_method(method)};
    } else if (cfg.command == Command::kBenchmark) {
      cfg.methods.clear();
      std::string token;
      std::istringstream in(methods_csv.empty() ? std::string("drdid,iwes,ascm")
                                                : methods_csv);
      while (std::getline(in, token, ','))
        if (!token.empty()) cfg.methods.push_back(stagdid::cli::parse_method(token));
    }
  } catch (const stagdid::Error& e) {
    std::cerr << "{\"error\":\"" << e.what() << "\"}\n";
    return 2;  // usage error
  }

  return stagdid::cli::run(cfg, std::cout, std::cerr);
}
