#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "stagdid/common.hpp"
#include "stagdid/simgen.hpp"

namespace stagdid::cli {

inline constexpr const char* kVersion = "0.1.0";

enum class Command { kIngest, kSimulate, kEstimate, kBenchmark, kReport };

enum class Method { kNb, kDrdid, kIwes, kAscm };

struct RunConfig {
  Command command = Command::kEstimate;
  std::vector<Method> methods = {Method::kDrdid};
  std::string input;                  // panel CSV (estimate/ingest)
  std::vector<std::string> inputs;    // result files (report)
  std::string output;                 // output path prefix
  std::string config_path;            // JSON: panel schema + options
  std::uint64_t seed = 0;
  int reps = 200;
  double level = 0.95;
  std::string control_group = "never";  // "never" | "notyet"
  int delta = 0;
  std::string base_period = "varying";  // "varying" | "universal"
  std::vector<std::string> covariates;
  double lambda = 0.0;
  double nu = 0.5;
  int bootstrap_reps = 1000;
  int e_min = -8;
  int e_max = 12;
  int threads = 1;
  bool repair_negatives = false;
  bool asinh_transform = false;
  std::string sim_spec_path;          // SimSpec JSON (simulate/benchmark)

  void validate() const;
};

Method parse_method(const std::string& name);
std::string method_name(Method m);

// Executes one command. Returns the process exit status; on failure a
// machine-readable error JSON is printed to `err` and the status is nonzero.
// Every run writes <output>_manifest.json echoing the configuration, seed,
// version, and input hashes.
int run(const RunConfig& config, std::ostream& out, std::ostream& err);

// Merges >= 2 event-study result CSVs into one long-format table
// (method,event_time,estimate,ci_low,ci_high); disjoint event windows produce
// explicit empty cells. Schema mismatches raise SchemaError naming the column.
void compare_report(const std::vector<std::string>& result_files,
                    const std::string& out_csv);

// FNV-1a content hash used in run manifests.
std::string file_hash(const std::string& path);

// One (method, event time) row of a Monte Carlo benchmark.
struct BenchmarkRow {
  Method method;
  int e = 0;
  double true_value = 0.0;
  double mean_estimate = 0.0;
  double bias = 0.0;
  double mc_se = 0.0;       // sd of estimates across reps / sqrt(reps)
  double coverage = 0.0;    // share of reps whose pointwise CI covers truth
  int reps_used = 0;
};

// Generates `reps` panels from the spec (seeds derived from config.seed) and
// collects bias/coverage per method and event time. Replications run on
// config.threads workers but are accumulated in replication order, so output
// is byte-identical for any thread count.
std::vector<BenchmarkRow> run_benchmark(const SimSpec& spec, const RunConfig& config);

}  // namespace stagdid::cli
