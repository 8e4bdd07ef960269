#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "stagdid/panel.hpp"

namespace stagdid {

// tau(g, k): treatment effect for cohort g at event time k >= 0 (zero before
// adoption).
struct EffectSpec {
  enum class Kind { kConstant, kLinear, kTable };
  Kind kind = Kind::kConstant;
  double value = 1.0;                            // constant level / linear intercept
  double slope = 0.0;                            // linear term in k
  std::map<std::pair<int, int>, double> table;   // (g,k) -> tau

  double at(int g, int k) const;  // kTable throws on a missing required entry
};

struct CovariateSpec {
  int count = 0;
  std::vector<std::string> distributions;  // "normal" or "bernoulli" per covariate
  Eigen::VectorXd outcome_loadings;
  Eigen::VectorXd adoption_loadings;       // log-odds per unit of covariate
};

struct CohortScheme {
  // Explicit scheme: listed (period, size) blocks plus never_count units.
  std::vector<std::pair<int, int>> cohorts;
  int never_count = 0;
  // Logistic adoption: unit treated with probability
  // invlogit(adoption_intercept + adoption_loadings' x), cohort period uniform
  // on [g_min, g_max].
  bool logistic = false;
  double adoption_intercept = 0.0;
  int g_min = 2;
  int g_max = 2;
};

struct ErrorModel {
  double sigma = 1.0;
  double rho = 0.0;  // AR(1) coefficient; 0 = iid
};

struct SimSpec {
  int n_units = 0;
  int n_periods = 0;
  CohortScheme cohorts;
  EffectSpec effect;
  ErrorModel errors;
  CovariateSpec covariates;
  double sigma_unit = 1.0;   // sd of unit effects
  double sigma_time = 0.5;   // sd of period effects
  bool count_outcome = false;
  double nb_dispersion = 0.0;
  double log_exposure_mean = 10.0;  // only used with count outcomes
  double log_exposure_sd = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
  static SimSpec from_json(const nlohmann::ordered_json& j);
  nlohmann::ordered_json to_json() const;

  // The default desk-scale scenario: 59 units over 37 weekly periods, eight
  // cohorts of five units adopting between periods 10 and 31 plus 19
  // never-treated units, homogeneous effect 1, AR(1) noise.
  static SimSpec desk_default(std::uint64_t seed);
};

struct SimTruth {
  Eigen::MatrixXd y_untreated;                  // potential outcomes Y(inf)
  Eigen::MatrixXd y_treated;                    // Y(g); equals Y(inf) off-cohort/pre
  std::map<std::pair<int, int>, double> att;    // exact ATT(g,t), t >= g
  std::map<int, double> theta_es;               // implied by cohort sizes

  double att_at(int g, int t) const;
};

// Draws a panel and its exact ground truth. Both potential-outcome surfaces
// are stored so any estimand is computable exactly. Deterministic under the
// seed: two calls with equal specs produce bitwise-identical outputs.
std::pair<PanelDataset, SimTruth> generate(const SimSpec& spec);

// Cohort labels from the logistic adoption scheme, given covariates. Exposed
// for tests of covariate-driven selection.
std::vector<int> selection_on_covariates(const SimSpec& spec,
                                         const Eigen::MatrixXd& covariates,
                                         std::uint64_t seed);

}  // namespace stagdid
