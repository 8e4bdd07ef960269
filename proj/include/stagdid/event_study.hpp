#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "stagdid/common.hpp"

namespace stagdid {

// One (g,t)-indexed estimate with its per-unit influence vector (full panel
// length, mean zero). The generic input to event-time aggregation; drdid and
// iwes both produce these.
struct GtCell {
  int g = 0;
  int t = 0;
  double estimate = 0.0;
  Eigen::VectorXd influence;
};

struct EventStudyEntry {
  int e = 0;
  double estimate = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double sim_low = 0.0;
  double sim_high = 0.0;
  int n_cohorts = 0;
};

struct EventStudyResult {
  std::vector<EventStudyEntry> entries;  // sorted by e, unique e
  std::vector<int> omitted;              // requested e with no estimated cell
  std::string method;
  int horizon = 0;    // T
  double level = 0.95;

  // The fixed file contract:
  // event_time,estimate,se,ci_low,ci_high,sim_low,sim_high
  void write_csv(const std::string& path) const;
  nlohmann::ordered_json to_json() const;
  static EventStudyResult read_csv(const std::string& path);
};

struct AggregateOptions {
  int e_min = -8;
  int e_max = 12;
  double level = 0.95;
  int bootstrap_reps = 1000;
  std::uint64_t seed = 0;
  std::string method_tag;
};

// Event-time aggregation: theta_es(e) = sum_g P(G=g | eligible) * cell(g,g+e)
// over cohorts with g+e <= T and an estimated cell, weights proportional to
// cohort size. The aggregate influence is the same weighted sum of cell
// influences (cohort shares treated as known); simultaneous bands come from
// the multiplier bootstrap over the aggregated influence family.
EventStudyResult aggregate_event_study(const std::vector<GtCell>& cells,
                                       const std::map<int, int>& cohort_sizes,
                                       int horizon,
                                       const AggregateOptions& opt);

struct BootstrapBand {
  double critical_value = 0.0;
  Eigen::VectorXd half_width;  // critical_value * pointwise se, per parameter
};

// Rademacher multiplier bootstrap of a family of influence vectors (columns
// of `influence`, shared unit dimension). The sup-t critical value is the
// `level` empirical quantile of max_k |mean_j v_j psi_jk| / se_k over B
// replications; deterministic given the seed. Parameters with identically
// zero influence are an error.
BootstrapBand multiplier_bootstrap(const Eigen::MatrixXd& influence,
                                   int replications, double level,
                                   std::uint64_t seed);

// Standard normal quantile (Acklam's rational approximation, ~1e-9).
double normal_quantile(double p);

}  // namespace stagdid
