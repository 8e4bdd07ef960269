#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "stagdid/panel.hpp"

namespace stagdid {

// One treated unit's synthetic-control problem: match its lagged outcomes
// Y_{j,T_j - l}, l = 1..L_j, with a convex combination of donor outcomes at
// the same calendar periods, ridge-penalized towards uniform weights.
struct ScmProblem {
  int treated_unit = -1;            // index into the dataset
  int treatment_period = 0;         // T_j
  std::vector<int> donors;          // unit indices
  Eigen::VectorXd treated_lags;     // length L_j, entry l-1 = Y_{j,T_j-l}
  Eigen::MatrixXd donor_lags;       // L_j x |donors|
  double lambda = 0.0;

  int n_lags() const { return static_cast<int>(treated_lags.size()); }
  void validate() const;
};

// Minimizes (1/L)||y - D w||^2 + lambda ||w||^2 over the probability simplex
// by accelerated projected gradient with exact simplex projection, to a
// complementarity gap below 1e-8 (at most 10000 iterations, then
// ConvergenceError reporting the final residual).
Eigen::VectorXd scm_weights(const ScmProblem& problem);

// Exact Euclidean projection onto the probability simplex.
Eigen::VectorXd project_simplex(const Eigen::VectorXd& v);

struct ScmOptions {
  double lambda = 0.0;
  double nu = 0.5;      // 0 = fully separate, 1 = fully pooled
  int k_min = 0;        // smallest evaluated event time (negative = in-sample
                        // pre-treatment gaps, reported as placebos)
  int k_max = -1;       // largest evaluated event time; -1 = max observable
  double level = 0.95;
};

struct ScmFit {
  std::vector<int> treated_units;            // dataset indices, ascending
  std::map<int, Eigen::VectorXd> weights;    // unit -> full-length weight vector
  double nu = 0.5;
  double lambda = 0.0;
  double q_sep = 0.0;
  double q_pool = 0.0;
  bool normalized = true;   // false when the separate fit was perfect and the
                            // pooled objective fell back to unnormalized form
  std::vector<std::string> warnings;
  std::map<std::pair<int, int>, double> unit_effects;  // (unit, k) -> tau
  std::map<int, double> att;                            // k -> ATT_k
  std::map<int, std::optional<double>> se;              // jackknife; absent if J(k) < 2
  int k_max = 0;

  nlohmann::ordered_json diagnostics_json(const PanelDataset& ds) const;
};

// Donor pool for a treated unit: every never-treated unit, plus treated units
// whose own adoption lies beyond T_j + k_max so they stay clean donors over
// the whole evaluation window.
std::vector<int> donor_pool(const PanelDataset& ds, int treated_unit, int k_max);

// Weighted average of donor outcomes at period T_j + k. Errors if a donor
// carrying weight is itself treated by then.
double impute_counterfactual(const PanelDataset& ds, int treated_unit,
                             const Eigen::VectorXd& unit_weights, int k);

// tau_jk = observed - imputed, and ATT_k = mean over treated units observed
// at event time k.
double unit_effect(double observed, double imputed);
std::optional<double> att_k(const std::vector<double>& unit_effects_at_k);

// Pre-treatment fit diagnostics for a weight set: q_sep is the RMS over units
// and lags of per-unit imbalance; q_pool the RMS over lags of the imbalance
// averaged across units still untreated at that lag.
std::pair<double, double> fit_quality(const PanelDataset& ds,
                                      const std::map<int, Eigen::VectorXd>& weights);

// Partially pooled fit: minimizes
//   nu * q_pool^2 / q_pool(sep)^2 + (1-nu) * q_sep^2 / q_sep(sep)^2
// plus the ridge term scaled so nu = 0 reproduces the per-unit scm_weights
// solutions exactly. Block-coordinate projected gradient over units, warm
// started at the separate solution, to a joint complementarity gap < 1e-7.
ScmFit fit_partially_pooled(const PanelDataset& ds, const ScmOptions& opt);

// Leave-one-out jackknife standard error of the mean; absent for fewer than
// two effects.
std::optional<double> jackknife_se(const std::vector<double>& effects);

}  // namespace stagdid
