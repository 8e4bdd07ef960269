#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "stagdid/common.hpp"

namespace stagdid {

// Result of any regression fit in this module. Collinear columns are dropped
// by the rank-revealing elimination (pivot tolerance 1e-10 * max diagonal of
// the weighted Gram matrix), flagged in `aliased`, and carry zero rows/columns
// in `vcov` and `xtwx_inv`.
struct RegressionFit {
  std::vector<std::string> names;
  Eigen::VectorXd coef;       // 0 for aliased columns
  std::vector<bool> aliased;
  Eigen::MatrixXd vcov;       // cluster-robust sandwich (one-way)
  Eigen::MatrixXd xtwx_inv;   // inverse weighted Gram over retained columns;
                              // the "bread", needed for influence functions
  int n_obs = 0;
  double dispersion = 0.0;    // NB2 alpha; 0 elsewhere
  bool converged = true;
  int iterations = 0;
  std::vector<double> loglik_trace;  // per-iteration log-likelihood (logit, negbin)
  Eigen::VectorXd fitted;            // mean scale: Xb, probabilities, or mu

  int index_of(const std::string& name) const;      // -1 if absent
  double coef_of(const std::string& name) const;    // throws on unknown name
  double se_of(const std::string& name) const;
};

// Weighted least squares with one-way cluster-robust covariance
// (X'WX)^-1 [sum_c s_c s_c'] (X'WX)^-1 with s_c = sum_{i in c} w_i e_i x_i.
// No small-sample correction, so singleton clusters reproduce HC0.
RegressionFit wls_fit(const Eigen::MatrixXd& design,
                      const std::vector<std::string>& names,
                      const Eigen::VectorXd& response,
                      const Eigen::VectorXd& weights,
                      const std::vector<int>& clusters);

// Logistic regression by Newton/IRLS with step-halving (log-likelihood is
// non-decreasing across iterations). Stops at score norm < 1e-9 or 100
// iterations. Throws SeparationError when the linear predictor diverges.
RegressionFit logit_fit(const Eigen::MatrixXd& design,
                        const std::vector<std::string>& names,
                        const Eigen::VectorXd& response01,
                        const std::vector<int>& clusters);

// NB2 regression: log mu = X b + offset, Var = mu + alpha mu^2. Coefficients
// by IRLS given alpha, alpha by the method-of-moments update
// sum[(y-mu)^2 - mu]/sum[mu^2], alternated until both settle (at most 200
// outer rounds; a fit that runs out is returned with converged = false).
// `fixed_dispersion` pins alpha instead (0 gives Poisson).
RegressionFit negbin_fit(const Eigen::MatrixXd& design,
                         const std::vector<std::string>& names,
                         const Eigen::VectorXd& counts,
                         const Eigen::VectorXd& offset,
                         const std::vector<int>& clusters,
                         std::optional<double> fixed_dispersion = std::nullopt);

struct RateRatio {
  double ratio;
  double ci_low;
  double ci_high;
};

// Incidence-rate ratio of one coefficient: exp(b) with the delta-method
// interval exp(b +- 1.96 se). Errors on aliased coefficients.
RateRatio irr(const RegressionFit& fit, const std::string& name);

namespace detail {

// Rank-revealing factorization of a symmetric PSD Gram matrix, dropping
// columns in input order whenever the remaining pivot falls below
// 1e-10 * max diagonal. Earlier columns win ties, so the later copy of a
// duplicated column is the aliased one.
struct GramSolver {
  std::vector<bool> retained;
  Eigen::MatrixXd inv;  // inverse over retained columns, zero elsewhere

  void factor(const Eigen::MatrixXd& gram);
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;
};

// Shared sandwich assembly: vcov = inv * [sum_c s_c s_c'] * inv where
// s_c sums score rows within a cluster.
Eigen::MatrixXd cluster_sandwich(const Eigen::MatrixXd& inv,
                                 const Eigen::MatrixXd& score_rows,
                                 const std::vector<int>& clusters);

// Per-cluster score sums, one row per cluster id (ids must be 0-based and
// dense). Used for influence-function representations of ML fits.
Eigen::MatrixXd cluster_score_sums(const Eigen::MatrixXd& score_rows,
                                   const std::vector<int>& clusters,
                                   int n_clusters);

}  // namespace detail

}  // namespace stagdid
