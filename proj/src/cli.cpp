#include "stagdid/cli.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "stagdid/ascm.hpp"
#include "stagdid/csv.hpp"
#include "stagdid/drdid.hpp"
#include "stagdid/event_study.hpp"
#include "stagdid/iwes.hpp"
#include "stagdid/panel.hpp"

namespace stagdid::cli {

namespace {

using nlohmann::ordered_json;

void parallel_for(int n, int threads, const std::function<void(int)>& body) {
  threads = std::max(1, threads);
  if (threads == 1 || n <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

ordered_json load_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open '" + path + "'");
  ordered_json j;
  in >> j;
  return j;
}

void write_json(const ordered_json& j, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

ControlGroup parse_control_group(const std::string& s) {
  if (s == "never") return ControlGroup::kNeverTreated;
  if (s == "notyet") return ControlGroup::kNotYetTreated;
  throw ValidationError("unknown control group '" + s + "' (never|notyet)");
}

BasePeriod parse_base_period(const std::string& s) {
  if (s == "varying") return BasePeriod::kVarying;
  if (s == "universal") return BasePeriod::kUniversal;
  throw ValidationError("unknown base period '" + s + "' (varying|universal)");
}

ordered_json config_echo(const RunConfig& c) {
  ordered_json j;
  std::vector<std::string> methods;
  for (Method m : c.methods) methods.push_back(method_name(m));
  j["command"] = static_cast<int>(c.command);
  j["methods"] = methods;
  j["input"] = c.input;
  j["inputs"] = c.inputs;
  j["output"] = c.output;
  j["config_path"] = c.config_path;
  j["seed"] = c.seed;
  j["reps"] = c.reps;
  j["level"] = c.level;
  j["control_group"] = c.control_group;
  j["delta"] = c.delta;
  j["base_period"] = c.base_period;
  j["covariates"] = c.covariates;
  j["lambda"] = c.lambda;
  j["nu"] = c.nu;
  j["bootstrap_reps"] = c.bootstrap_reps;
  j["e_min"] = c.e_min;
  j["e_max"] = c.e_max;
  j["threads"] = c.threads;
  j["repair_negatives"] = c.repair_negatives;
  j["asinh_transform"] = c.asinh_transform;
  j["sim_spec_path"] = c.sim_spec_path;
  return j;
}

void write_manifest(const RunConfig& c, const std::vector<std::string>& input_files,
                    const std::vector<std::string>& output_files) {
  ordered_json j;
  j["tool"] = "stagdid";
  j["version"] = kVersion;
  j["seed"] = c.seed;
  j["config"] = config_echo(c);
  ordered_json hashes;
  for (const auto& f : input_files) hashes[f] = file_hash(f);
  j["input_hashes"] = hashes;
  j["outputs"] = output_files;
  write_json(j, c.output + "_manifest.json");
}

// Panel plus schema from --input and --config. The config JSON either IS a
// schema or wraps one under "schema" (alongside optional estimator defaults).
struct LoadedPanel {
  PanelDataset ds;
  PanelSchema schema;
  ordered_json config;
};

LoadedPanel load_input_panel(const RunConfig& c) {
  if (c.input.empty()) throw SchemaError("missing --input panel path");
  if (c.config_path.empty()) throw SchemaError("missing --config schema path");
  LoadedPanel lp;
  lp.config = load_json(c.config_path);
  lp.schema = PanelSchema::from_json(lp.config.contains("schema") ? lp.config.at("schema")
                                                                  : lp.config);
  lp.ds = load_panel(c.input, lp.schema);
  return lp;
}

std::vector<std::string> effective_covariates(const RunConfig& c, const ordered_json& config) {
  if (!c.covariates.empty()) return c.covariates;
  if (config.contains("covariates"))
    return config.at("covariates").get<std::vector<std::string>>();
  return {};
}

AggregateOptions aggregate_options(const RunConfig& c, const std::string& tag) {
  AggregateOptions a;
  a.e_min = c.e_min;
  a.e_max = c.e_max;
  a.level = c.level;
  a.bootstrap_reps = c.bootstrap_reps;
  a.seed = c.seed;
  a.method_tag = tag;
  return a;
}

DidOptions did_options(const RunConfig& c, const std::vector<std::string>& covs,
                       DidMethod method = DidMethod::kDoublyRobust) {
  DidOptions opt;
  opt.control_group = parse_control_group(c.control_group);
  opt.covariates = covs;
  opt.method = method;
  opt.delta = c.delta;
  opt.base_period = parse_base_period(c.base_period);
  return opt;
}

// ---------------------------------------------------------------------------
// Negative-binomial event study (two-way fixed effects on event-time dummies,
// log-exposure offset, cluster-robust by unit).
// ---------------------------------------------------------------------------

struct NbEventStudy {
  EventStudyResult result;
  RegressionFit fit;
  std::vector<std::pair<int, std::string>> event_terms;  // e -> coefficient name
};

NbEventStudy nb_event_study(const PanelDataset& ds, const RunConfig& c,
                            const std::vector<std::string>& covariates) {
  const int n = ds.n_units();
  const int T = ds.n_periods();
  const long rows = static_cast<long>(n) * T;

  std::vector<std::string> names;
  names.push_back("(Intercept)");
  std::map<int, int> unit_col;
  for (int j = 1; j < n; ++j) {
    unit_col[j] = static_cast<int>(names.size());
    names.push_back("unit_" + ds.units[j]);
  }
  std::map<int, int> time_col;
  for (int t = 2; t <= T; ++t) {
    time_col[t] = static_cast<int>(names.size());
    names.push_back("period_" + std::to_string(t));
  }
  std::vector<int> cov_col;
  for (const auto& name : covariates) {
    cov_col.push_back(static_cast<int>(names.size()));
    names.push_back(name);
  }

  // Observed event times, clipped to the display window with pooled endpoint
  // bins so no treated observation lands in the reference bucket by accident.
  std::set<int> ks;
  for (int j = 0; j < n; ++j) {
    if (ds.cohort[j] == kNever) continue;
    for (int t = 1; t <= T; ++t) ks.insert(t - ds.cohort[j]);
  }
  bool pre_bin = false, post_bin = false;
  std::map<int, int> event_col;
  for (int k : ks) {
    if (k == -1) continue;  // reference period
    if (k < c.e_min) pre_bin = true;
    else if (k > c.e_max) post_bin = true;
  }
  int pre_col = -1, post_col = -1;
  if (pre_bin) {
    pre_col = static_cast<int>(names.size());
    names.push_back("event_le_" + std::to_string(c.e_min - 1));
  }
  for (int k : ks) {
    if (k == -1 || k < c.e_min || k > c.e_max) continue;
    event_col[k] = static_cast<int>(names.size());
    names.push_back("event_" + std::to_string(k));
  }
  if (post_bin) {
    post_col = static_cast<int>(names.size());
    names.push_back("event_ge_" + std::to_string(c.e_max + 1));
  }

  const int p = static_cast<int>(names.size());
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(rows, p);
  Eigen::VectorXd y(rows), offset = Eigen::VectorXd::Zero(rows);
  std::vector<int> clusters(rows);
  long row = 0;
  for (int j = 0; j < n; ++j) {
    double log_exp = ds.exposure ? std::log((*ds.exposure)(j)) : 0.0;
    for (int ti = 0; ti < T; ++ti, ++row) {
      const int t = ti + 1;
      X(row, 0) = 1.0;
      if (j > 0) X(row, unit_col[j]) = 1.0;
      if (t >= 2) X(row, time_col[t]) = 1.0;
      for (std::size_t q = 0; q < covariates.size(); ++q)
        X(row, cov_col[q]) = ds.covariate_value(covariates[q], j, t);
      if (ds.cohort[j] != kNever) {
        int k = t - ds.cohort[j];
        if (k != -1) {
          if (k < c.e_min) X(row, pre_col) = 1.0;
          else if (k > c.e_max) X(row, post_col) = 1.0;
          else X(row, event_col[k]) = 1.0;
        }
      }
      y(row) = ds.outcome(j, ti);
      offset(row) = log_exp;
      clusters[row] = j;
    }
  }

  NbEventStudy out;
  out.fit = negbin_fit(X, names, y, offset, clusters);

  // Influence representation of the event coefficients for the sup-t band.
  Eigen::VectorXd mu = out.fit.fitted;
  Eigen::VectorXd scale =
      (y - mu).array() / (1.0 + out.fit.dispersion * mu.array());
  Eigen::MatrixXd scores = scale.asDiagonal() * X;
  Eigen::MatrixXd unit_scores = detail::cluster_score_sums(scores, clusters, n);
  Eigen::MatrixXd psi = static_cast<double>(n) * unit_scores * out.fit.xtwx_inv;

  EventStudyResult& res = out.result;
  res.method = "nb";
  res.horizon = T;
  res.level = c.level;
  const double z = normal_quantile(0.5 + c.level / 2.0);
  std::vector<int> live_cols;
  for (int e = c.e_min; e <= c.e_max; ++e) {
    auto it = event_col.find(e);
    if (it == event_col.end() || out.fit.aliased[it->second]) {
      if (e != -1) res.omitted.push_back(e);
      continue;
    }
    EventStudyEntry entry;
    entry.e = e;
    entry.estimate = out.fit.coef(it->second);
    entry.se = std::sqrt(out.fit.vcov(it->second, it->second));
    entry.ci_low = entry.estimate - z * entry.se;
    entry.ci_high = entry.estimate + z * entry.se;
    entry.n_cohorts = 0;
    for (const auto& [g, size] : ds.cohort_sizes())
      if (g + e >= 1 && g + e <= T) ++entry.n_cohorts;
    res.entries.push_back(entry);
    live_cols.push_back(it->second);
    out.event_terms.push_back({e, names[it->second]});
  }
  if (!res.entries.empty()) {
    Eigen::MatrixXd fam(n, live_cols.size());
    for (std::size_t k = 0; k < live_cols.size(); ++k) fam.col(k) = psi.col(live_cols[k]);
    double crit =
        multiplier_bootstrap(fam, c.bootstrap_reps, c.level, c.seed).critical_value;
    for (auto& entry : res.entries) {
      entry.sim_low = entry.estimate - crit * entry.se;
      entry.sim_high = entry.estimate + crit * entry.se;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

EventStudyResult estimate_with_method(const PanelDataset& ds, Method m,
                                      const RunConfig& c,
                                      const std::vector<std::string>& covs,
                                      ordered_json* diagnostics) {
  switch (m) {
    case Method::kDrdid: {
      AttSurface surface = att_surface(ds, did_options(c, covs));
      EventStudyResult res =
          aggregate_att_surface(surface, ds, aggregate_options(c, "drdid"));
      if (diagnostics) {
        ordered_json d;
        d["n_units"] = ds.n_units();
        d["n_periods"] = ds.n_periods();
        d["n_cells"] = surface.cells.size();
        auto fails = ordered_json::array();
        for (const auto& f : surface.failures)
          fails.push_back({{"g", f.g}, {"t", f.t}, {"error", f.message}});
        d["dropped_cells"] = fails;
        (*diagnostics)["drdid"] = d;
      }
      if (!c.output.empty()) {
        // Group-time surface dump alongside the aggregate.
        std::ofstream gt(c.output + "_gt.csv", std::ios::binary);
        gt << "g,t,estimate,se,n_treated,n_control\n";
        for (const auto& cell : surface.cells)
          gt << cell.g << ',' << cell.t << ',' << format_double(cell.estimate) << ','
             << format_double(cell.se) << ',' << cell.n_treated << ','
             << cell.n_control << '\n';
      }
      return res;
    }
    case Method::kIwes: {
      IwesFit fit = iwes_fit(ds, covs);
      EventStudyResult res = iwes_aggregate(fit, aggregate_options(c, "iwes"));
      if (diagnostics) {
        ordered_json d;
        d["n_obs"] = fit.reg.n_obs;
        d["converged"] = fit.reg.converged;
        auto aliased = ordered_json::array();
        for (const auto& [cell, col] : fit.cell_column)
          if (fit.reg.aliased[col])
            aliased.push_back({{"g", cell.first}, {"e", cell.second}});
        d["aliased_cells"] = aliased;
        (*diagnostics)["iwes"] = d;
      }
      return res;
    }
    case Method::kAscm: {
      ScmOptions opt;
      opt.lambda = c.lambda;
      opt.nu = c.nu;
      opt.k_min = c.e_min;
      opt.k_max = c.e_max;
      opt.level = c.level;
      ScmFit fit = fit_partially_pooled(ds, opt);
      EventStudyResult res;
      res.method = "ascm";
      res.horizon = ds.n_periods();
      res.level = c.level;
      const double z = normal_quantile(0.5 + c.level / 2.0);
      for (const auto& [k, estimate] : fit.att) {
        EventStudyEntry entry;
        entry.e = k;
        entry.estimate = estimate;
        auto se = fit.se.at(k);
        entry.se = se.value_or(0.0);
        entry.ci_low = entry.estimate - z * entry.se;
        entry.ci_high = entry.estimate + z * entry.se;
        // No influence-function machinery here; the simultaneous band falls
        // back to the pointwise one.
        entry.sim_low = entry.ci_low;
        entry.sim_high = entry.ci_high;
        entry.n_cohorts = 0;
        for (const auto& [g, size] : ds.cohort_sizes())
          if (g + k >= 1 && g + k <= ds.n_periods()) ++entry.n_cohorts;
        res.entries.push_back(entry);
      }
      if (diagnostics) (*diagnostics)["ascm"] = fit.diagnostics_json(ds);
      if (!c.output.empty()) {
        // Companion file in the result-table shape: upper before lower.
        std::ofstream tbl(c.output + "_table.csv", std::ios::binary);
        tbl << "event_time,estimate,se,ci_upper,ci_lower\n";
        for (const auto& entry : res.entries)
          tbl << entry.e << ',' << format_double(entry.estimate) << ','
              << format_double(entry.se) << ',' << format_double(entry.ci_high) << ','
              << format_double(entry.ci_low) << '\n';
      }
      return res;
    }
    case Method::kNb: {
      NbEventStudy nb = nb_event_study(ds, c, covs);
      if (diagnostics) {
        ordered_json d;
        d["converged"] = nb.fit.converged;
        d["iterations"] = nb.fit.iterations;
        d["dispersion"] = nb.fit.dispersion;
        ordered_json irr_table = ordered_json::array();
        for (const auto& [e, name] : nb.event_terms) {
          RateRatio rr = irr(nb.fit, name);
          irr_table.push_back({{"event_time", e},
                               {"irr", rr.ratio},
                               {"ci_low", rr.ci_low},
                               {"ci_high", rr.ci_high}});
        }
        d["irr"] = irr_table;
        (*diagnostics)["nb"] = d;
      }
      return nb.result;
    }
  }
  throw ValidationError("unknown method");
}

int cmd_estimate(const RunConfig& c, std::ostream& out) {
  LoadedPanel lp = load_input_panel(c);
  auto covs = effective_covariates(c, lp.config);
  if (c.methods.size() != 1)
    throw ValidationError("estimate takes exactly one --method");

  ordered_json diagnostics;
  EventStudyResult res = estimate_with_method(lp.ds, c.methods[0], c, covs, &diagnostics);

  res.write_csv(c.output + ".csv");
  write_json(res.to_json(), c.output + ".json");

  // Self-check: the emitted file must parse back under the declared schema.
  auto emitted = EventStudyResult::read_csv(c.output + ".csv");
  if (emitted.entries.size() != res.entries.size())
    throw Error("emitted event-study CSV failed its schema self-check");

  diagnostics["n_entries"] = res.entries.size();
  diagnostics["omitted_event_times"] = res.omitted;
  write_json(diagnostics, c.output + "_diagnostics.json");
  write_manifest(c, {c.input, c.config_path},
                 {c.output + ".csv", c.output + ".json", c.output + "_diagnostics.json"});
  out << "wrote " << c.output << ".csv\n";
  return 0;
}

// ---------------------------------------------------------------------------
// simulate / ingest
// ---------------------------------------------------------------------------

SimSpec load_sim_spec(const RunConfig& c) {
  SimSpec spec = c.sim_spec_path.empty() ? SimSpec::desk_default(c.seed)
                                         : SimSpec::from_json(load_json(c.sim_spec_path));
  spec.seed = c.seed;
  return spec;
}

int cmd_simulate(const RunConfig& c, std::ostream& out) {
  SimSpec spec = load_sim_spec(c);
  auto [ds, truth] = generate(spec);
  PanelSchema schema = save_panel(ds, c.output + "_panel.csv");
  ordered_json schema_json;
  schema_json["schema"] = schema.to_json();
  write_json(schema_json, c.output + "_schema.json");

  ordered_json tj;
  tj["spec"] = spec.to_json();
  ordered_json att = ordered_json::array();
  for (const auto& [gt, v] : truth.att)
    att.push_back({{"g", gt.first}, {"t", gt.second}, {"att", v}});
  tj["att"] = att;
  ordered_json theta;
  for (const auto& [e, v] : truth.theta_es) theta[std::to_string(e)] = v;
  tj["theta_es"] = theta;
  write_json(tj, c.output + "_truth.json");

  std::vector<std::string> inputs;
  if (!c.sim_spec_path.empty()) inputs.push_back(c.sim_spec_path);
  write_manifest(c, inputs,
                 {c.output + "_panel.csv", c.output + "_schema.json",
                  c.output + "_truth.json"});
  out << "wrote " << c.output << "_panel.csv\n";
  return 0;
}

int cmd_ingest(const RunConfig& c, std::ostream& out) {
  LoadedPanel lp = load_input_panel(c);
  PanelDataset ds = lp.ds;
  CleaningReport report;
  if (c.repair_negatives) {
    for (int j = 0; j < ds.n_units(); ++j) {
      std::vector<double> series(ds.outcome.row(j).data(),
                                 ds.outcome.row(j).data() + ds.n_periods());
      for (int t = 0; t < ds.n_periods(); ++t) series[t] = ds.outcome(j, t);
      auto [repaired, rep] = repair_negative_increments(series, ds.units[j]);
      for (int t = 0; t < ds.n_periods(); ++t) ds.outcome(j, t) = repaired[t];
      report.merge(rep);
    }
  }
  if (c.asinh_transform) {
    for (int j = 0; j < ds.n_units(); ++j)
      for (int t = 0; t < ds.n_periods(); ++t)
        ds.outcome(j, t) = asinh_outcome(ds.outcome(j, t));
  }
  PanelSchema schema = save_panel(ds, c.output + "_panel.csv");
  ordered_json schema_json;
  schema_json["schema"] = schema.to_json();
  write_json(schema_json, c.output + "_schema.json");
  write_json(report.to_json(), c.output + "_cleaning.json");
  write_manifest(c, {c.input, c.config_path},
                 {c.output + "_panel.csv", c.output + "_schema.json",
                  c.output + "_cleaning.json"});
  out << "wrote " << c.output << "_panel.csv\n";
  return 0;
}

// ---------------------------------------------------------------------------
// benchmark
// ---------------------------------------------------------------------------

struct RepOutcome {
  // method -> (e -> {estimate, ci_low, ci_high}) plus the rep's truth.
  std::map<Method, std::map<int, std::array<double, 3>>> estimates;
  std::map<int, double> truth;
  bool failed = false;
  std::string error;
};

}  // namespace

std::vector<BenchmarkRow> run_benchmark(const SimSpec& base_spec, const RunConfig& c) {
  if (c.reps < 1) throw ValidationError("benchmark needs at least one replication");
  std::vector<RepOutcome> outcomes(c.reps);

  parallel_for(c.reps, c.threads, [&](int rep) {
    RepOutcome& res = outcomes[rep];
    try {
      SimSpec spec = base_spec;
      spec.seed = derive_seed(c.seed, static_cast<std::uint64_t>(rep));
      auto [ds, truth] = generate(spec);
      res.truth = truth.theta_es;
      RunConfig rc = c;
      rc.seed = spec.seed;
      rc.output.clear();  // estimators write no side files inside the loop
      for (Method m : c.methods) {
        EventStudyResult r = estimate_with_method(ds, m, rc, {}, nullptr);
        for (const auto& entry : r.entries)
          res.estimates[m][entry.e] = {entry.estimate, entry.ci_low, entry.ci_high};
      }
    } catch (const Error& e) {
      res.failed = true;
      res.error = e.what();
    }
  });

  std::vector<BenchmarkRow> rows;
  for (Method m : c.methods) {
    for (int e = c.e_min; e <= c.e_max; ++e) {
      BenchmarkRow row;
      row.method = m;
      row.e = e;
      double sum = 0.0, sum2 = 0.0, truth_sum = 0.0;
      int used = 0, covered = 0;
      for (int rep = 0; rep < c.reps; ++rep) {
        const RepOutcome& res = outcomes[rep];
        if (res.failed) continue;
        auto mit = res.estimates.find(m);
        if (mit == res.estimates.end()) continue;
        auto eit = mit->second.find(e);
        if (eit == mit->second.end()) continue;
        double truth = e >= 0 ? res.truth.count(e) ? res.truth.at(e) : 0.0 : 0.0;
        const auto& [est, lo, hi] = eit->second;
        sum += est;
        sum2 += est * est;
        truth_sum += truth;
        if (truth >= lo && truth <= hi) ++covered;
        ++used;
      }
      if (used == 0) continue;
      row.reps_used = used;
      row.true_value = truth_sum / used;
      row.mean_estimate = sum / used;
      row.bias = row.mean_estimate - row.true_value;
      double var = std::max(0.0, sum2 / used - row.mean_estimate * row.mean_estimate);
      row.mc_se = std::sqrt(var / used);
      row.coverage = static_cast<double>(covered) / used;
      rows.push_back(row);
    }
  }
  return rows;
}

namespace {

int cmd_benchmark(const RunConfig& c, std::ostream& out) {
  SimSpec spec = load_sim_spec(c);
  auto rows = run_benchmark(spec, c);

  std::ofstream csv(c.output + "_benchmark.csv", std::ios::binary);
  csv << "method,event_time,true_value,mean_estimate,bias,mc_se,coverage,reps\n";
  ordered_json arr = ordered_json::array();
  for (const auto& row : rows) {
    csv << method_name(row.method) << ',' << row.e << ',' << format_double(row.true_value)
        << ',' << format_double(row.mean_estimate) << ',' << format_double(row.bias) << ','
        << format_double(row.mc_se) << ',' << format_double(row.coverage) << ','
        << row.reps_used << '\n';
    arr.push_back({{"method", method_name(row.method)},
                   {"event_time", row.e},
                   {"true_value", row.true_value},
                   {"mean_estimate", row.mean_estimate},
                   {"bias", row.bias},
                   {"mc_se", row.mc_se},
                   {"coverage", row.coverage},
                   {"reps", row.reps_used}});
  }
  csv.close();
  write_json(arr, c.output + "_benchmark.json");
  std::vector<std::string> inputs;
  if (!c.sim_spec_path.empty()) inputs.push_back(c.sim_spec_path);
  write_manifest(c, inputs,
                 {c.output + "_benchmark.csv", c.output + "_benchmark.json"});
  out << "wrote " << c.output << "_benchmark.csv\n";
  return 0;
}

int cmd_report(const RunConfig& c, std::ostream& out) {
  compare_report(c.inputs, c.output + "_compare.csv");
  // Self-check the emitted table.
  CsvTable emitted = read_csv(c.output + "_compare.csv");
  const std::vector<std::string> expected = {"method", "event_time", "estimate",
                                             "ci_low", "ci_high"};
  if (emitted.header != expected)
    throw Error("emitted comparison CSV failed its schema self-check");
  write_manifest(c, c.inputs, {c.output + "_compare.csv"});
  out << "wrote " << c.output << "_compare.csv\n";
  return 0;
}

}  // namespace

Method parse_method(const std::string& name) {
  if (name == "nb") return Method::kNb;
  if (name == "drdid") return Method::kDrdid;
  if (name == "iwes") return Method::kIwes;
  if (name == "ascm") return Method::kAscm;
  throw ValidationError("unknown method '" + name + "' (nb|drdid|iwes|ascm)");
}

std::string method_name(Method m) {
  switch (m) {
    case Method::kNb: return "nb";
    case Method::kDrdid: return "drdid";
    case Method::kIwes: return "iwes";
    case Method::kAscm: return "ascm";
  }
  return "?";
}

void RunConfig::validate() const {
  if (output.empty()) throw ValidationError("missing --output path prefix");
  if (!(level > 0.0 && level < 1.0)) throw ValidationError("level must be in (0,1)");
  if (e_min > e_max) throw ValidationError("event window is empty (e_min > e_max)");
  if (command == Command::kEstimate || command == Command::kIngest) {
    if (input.empty()) throw ValidationError("missing --input");
    if (input == output) throw ValidationError("input and output paths must differ");
  }
  if (command == Command::kReport && inputs.size() < 2)
    throw ValidationError("report needs at least two --inputs files");
}

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return "missing";
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
    if (!in) break;
  }
  std::ostringstream hex;
  hex << std::hex << h;
  return hex.str();
}

void compare_report(const std::vector<std::string>& result_files,
                    const std::string& out_csv) {
  if (result_files.size() < 2)
    throw ValidationError("comparison needs at least two result files");
  const std::vector<std::string> expected = {"event_time", "estimate", "se",      "ci_low",
                                             "ci_high",    "sim_low",  "sim_high"};
  struct Loaded {
    std::string method;
    std::map<int, EventStudyEntry> entries;
  };
  std::vector<Loaded> loaded;
  std::set<int> all_e;
  for (const auto& path : result_files) {
    CsvTable csv = read_csv(path);
    if (csv.header != expected) {
      std::string offending = "(count mismatch)";
      for (std::size_t i = 0; i < std::min(csv.header.size(), expected.size()); ++i)
        if (csv.header[i] != expected[i]) {
          offending = csv.header[i];
          break;
        }
      throw SchemaError("'" + path + "' does not match the event-study schema: column '" +
                        offending + "'");
    }
    Loaded l;
    // Method label from the sibling JSON when present, else the file stem.
    std::string stem = path;
    if (auto slash = stem.find_last_of('/'); slash != std::string::npos)
      stem = stem.substr(slash + 1);
    if (auto dot = stem.find_last_of('.'); dot != std::string::npos) stem = stem.substr(0, dot);
    l.method = stem;
    std::string json_path = path.substr(0, path.size() - 4) + ".json";
    std::ifstream jin(json_path);
    if (jin) {
      ordered_json j;
      jin >> j;
      if (j.contains("method") && j.at("method").is_string() &&
          !j.at("method").get<std::string>().empty())
        l.method = j.at("method").get<std::string>();
    }
    for (const auto& row : csv.rows) {
      EventStudyEntry entry;
      entry.e = std::stoi(row[0]);
      entry.estimate = std::stod(row[1]);
      entry.se = std::stod(row[2]);
      entry.ci_low = std::stod(row[3]);
      entry.ci_high = std::stod(row[4]);
      l.entries[entry.e] = entry;
      all_e.insert(entry.e);
    }
    loaded.push_back(std::move(l));
  }

  std::ofstream out(out_csv, std::ios::binary);
  if (!out) throw Error("cannot write '" + out_csv + "'");
  out << "method,event_time,estimate,ci_low,ci_high\n";
  for (const auto& l : loaded) {
    for (int e : all_e) {
      auto it = l.entries.find(e);
      out << csv_escape(l.method) << ',' << e << ',';
      if (it == l.entries.end()) {
        out << ",,\n";  // explicit gap
      } else {
        out << format_double(it->second.estimate) << ','
            << format_double(it->second.ci_low) << ','
            << format_double(it->second.ci_high) << '\n';
      }
    }
  }
}

int run(const RunConfig& config, std::ostream& out, std::ostream& err) {
  try {
    config.validate();
    switch (config.command) {
      case Command::kIngest: return cmd_ingest(config, out);
      case Command::kSimulate: return cmd_simulate(config, out);
      case Command::kEstimate: return cmd_estimate(config, out);
      case Command::kBenchmark: return cmd_benchmark(config, out);
      case Command::kReport: return cmd_report(config, out);
    }
    throw ValidationError("unknown command");
  } catch (const Error& e) {
    ordered_json j;
    j["error"] = e.what();
    if (!config.input.empty()) j["path"] = config.input;
    err << j.dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    ordered_json j;
    j["error"] = e.what();
    err << j.dump() << '\n';
    return 1;
  }
}

}  // namespace stagdid::cli
