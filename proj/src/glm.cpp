#include "stagdid/glm.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace stagdid {

int RegressionFit::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  return -1;
}

double RegressionFit::coef_of(const std::string& name) const {
  int i = index_of(name);
  if (i < 0) throw ValidationError("no coefficient named '" + name + "'");
  return coef(i);
}

double RegressionFit::se_of(const std::string& name) const {
  int i = index_of(name);
  if (i < 0) throw ValidationError("no coefficient named '" + name + "'");
  return std::sqrt(vcov(i, i));
}

namespace detail {

void GramSolver::factor(const Eigen::MatrixXd& gram) {
  const int p = static_cast<int>(gram.cols());
  retained.assign(p, false);
  const double maxdiag = p > 0 ? gram.diagonal().maxCoeff() : 0.0;
  const double tol = 1e-10 * std::max(maxdiag, 0.0);

  // Left-looking Cholesky in column order, skipping any column whose
  // remaining pivot falls below the tolerance. Skipped columns take no part
  // in later eliminations, so the first of two identical columns survives.
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(p, p);
  for (int j = 0; j < p; ++j) {
    double d = gram(j, j);
    for (int k = 0; k < j; ++k)
      if (retained[k]) d -= L(j, k) * L(j, k);
    if (!(d > tol)) continue;
    retained[j] = true;
    L(j, j) = std::sqrt(d);
    for (int i = j + 1; i < p; ++i) {
      double s = gram(i, j);
      for (int k = 0; k < j; ++k)
        if (retained[k]) s -= L(i, k) * L(j, k);
      L(i, j) = s / L(j, j);
    }
  }

  std::vector<int> keep;
  for (int j = 0; j < p; ++j)
    if (retained[j]) keep.push_back(j);
  const int r = static_cast<int>(keep.size());
  Eigen::MatrixXd sub(r, r);
  for (int a = 0; a < r; ++a)
    for (int b = 0; b < r; ++b) sub(a, b) = gram(keep[a], keep[b]);
  Eigen::MatrixXd sub_inv = sub.ldlt().solve(Eigen::MatrixXd::Identity(r, r));
  inv = Eigen::MatrixXd::Zero(p, p);
  for (int a = 0; a < r; ++a)
    for (int b = 0; b < r; ++b) inv(keep[a], keep[b]) = sub_inv(a, b);
}

Eigen::VectorXd GramSolver::solve(const Eigen::VectorXd& rhs) const {
  return inv * rhs;  // zero rows of inv null out aliased coordinates
}

Eigen::MatrixXd cluster_score_sums(const Eigen::MatrixXd& score_rows,
                                   const std::vector<int>& clusters,
                                   int n_clusters) {
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(n_clusters, score_rows.cols());
  for (int i = 0; i < score_rows.rows(); ++i) sums.row(clusters[i]) += score_rows.row(i);
  return sums;
}

Eigen::MatrixXd cluster_sandwich(const Eigen::MatrixXd& inv,
                                 const Eigen::MatrixXd& score_rows,
                                 const std::vector<int>& clusters) {
  int n_clusters = 0;
  for (int c : clusters) n_clusters = std::max(n_clusters, c + 1);
  Eigen::MatrixXd s = cluster_score_sums(score_rows, clusters, n_clusters);
  Eigen::MatrixXd meat = s.transpose() * s;
  return inv * meat * inv;
}

}  // namespace detail

namespace {

void check_inputs(const Eigen::MatrixXd& X, const std::vector<std::string>& names,
                  const Eigen::VectorXd& y, const std::vector<int>& clusters) {
  if (X.rows() == 0) throw ValidationError("regression with zero rows");
  if (static_cast<int>(names.size()) != X.cols())
    throw ValidationError("design column names do not match design width");
  if (y.size() != X.rows() || static_cast<int>(clusters.size()) != X.rows())
    throw ValidationError("response/cluster length does not match design rows");
}

}  // namespace

RegressionFit wls_fit(const Eigen::MatrixXd& X, const std::vector<std::string>& names,
                      const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                      const std::vector<int>& clusters) {
  check_inputs(X, names, y, clusters);
  if (w.size() != X.rows()) throw ValidationError("weight length mismatch");
  if ((w.array() <= 0.0).any()) throw ValidationError("weights must be positive");

  Eigen::MatrixXd Xw = w.asDiagonal() * X;
  detail::GramSolver gs;
  gs.factor(X.transpose() * Xw);
  Eigen::VectorXd beta = gs.solve(X.transpose() * (w.cwiseProduct(y)));

  RegressionFit fit;
  fit.names = names;
  fit.coef = beta;
  fit.aliased.resize(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) fit.aliased[i] = !gs.retained[i];
  fit.n_obs = static_cast<int>(X.rows());
  fit.fitted = X * beta;
  Eigen::VectorXd resid = y - fit.fitted;
  Eigen::MatrixXd scores = (w.cwiseProduct(resid)).asDiagonal() * X;
  fit.vcov = detail::cluster_sandwich(gs.inv, scores, clusters);
  fit.xtwx_inv = gs.inv;
  fit.converged = true;
  fit.iterations = 1;
  return fit;
}

namespace {

double logit_loglik(const Eigen::VectorXd& y, const Eigen::VectorXd& eta) {
  // log L = sum y*eta - log(1 + e^eta), computed stably.
  double ll = 0.0;
  for (int i = 0; i < y.size(); ++i) {
    double e = eta(i);
    double log1pe = e > 30 ? e : std::log1p(std::exp(e));
    ll += y(i) * e - log1pe;
  }
  return ll;
}

}  // namespace

RegressionFit logit_fit(const Eigen::MatrixXd& X, const std::vector<std::string>& names,
                        const Eigen::VectorXd& y, const std::vector<int>& clusters) {
  check_inputs(X, names, y, clusters);
  const int n = static_cast<int>(X.rows());
  const int p = static_cast<int>(X.cols());
  bool any0 = false, any1 = false;
  for (int i = 0; i < n; ++i) {
    if (y(i) == 0.0) any0 = true;
    else if (y(i) == 1.0) any1 = true;
    else throw ValidationError("logit response must be 0/1");
  }
  if (!any0 || !any1) throw ValidationError("logit response has a single class");

  // Aliasing pattern is structural, so pin it down once at beta = 0 where the
  // working weights are constant.
  detail::GramSolver gs;
  gs.factor(X.transpose() * X * 0.25);

  auto separating_column = [&](const Eigen::VectorXd& beta) {
    // Most suspicious coefficient on the standardized scale, intercept-like
    // (constant) columns excluded.
    int best = -1;
    double best_score = -1.0;
    for (int j = 0; j < p; ++j) {
      if (!gs.retained[j]) continue;
      double sd = std::sqrt((X.col(j).array() - X.col(j).mean()).square().sum() / n);
      if (sd < 1e-12) continue;
      double score = std::abs(beta(j)) * sd;
      if (score > best_score) {
        best_score = score;
        best = j;
      }
    }
    return best >= 0 ? names[best] : std::string("(unknown)");
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  RegressionFit fit;
  fit.names = names;
  fit.aliased.resize(p);
  for (int j = 0; j < p; ++j) fit.aliased[j] = !gs.retained[j];
  fit.n_obs = n;

  Eigen::VectorXd eta = X * beta;
  double ll = logit_loglik(y, eta);
  fit.loglik_trace.push_back(ll);
  Eigen::VectorXd prob(n), wvec(n);
  bool converged = false;
  int iter = 0;
  for (; iter < 100; ++iter) {
    prob = (1.0 + (-eta.array()).exp()).inverse();
    if (eta.cwiseAbs().maxCoeff() > 30.0)
      throw SeparationError("perfect separation detected in logistic fit (column '" +
                                separating_column(beta) + "')",
                            separating_column(beta));
    Eigen::VectorXd grad = X.transpose() * (y - prob);
    // Zero the gradient on aliased coordinates before testing convergence.
    for (int j = 0; j < p; ++j)
      if (!gs.retained[j]) grad(j) = 0.0;
    if (grad.norm() < 1e-9) {
      converged = true;
      break;
    }
    wvec = prob.array() * (1.0 - prob.array()) + 1e-12;
    detail::GramSolver step;
    // Recompute with current weights but the fixed retained pattern: build the
    // Gram over retained columns only by zeroing aliased ones.
    Eigen::MatrixXd Xr = X;
    for (int j = 0; j < p; ++j)
      if (!gs.retained[j]) Xr.col(j).setZero();
    step.factor(Xr.transpose() * wvec.asDiagonal() * Xr);
    Eigen::VectorXd delta = step.solve(grad);

    // Half-step until the log-likelihood does not decrease.
    double scale = 1.0;
    Eigen::VectorXd beta_new, eta_new;
    double ll_new = ll;
    for (int h = 0; h < 40; ++h) {
      beta_new = beta + scale * delta;
      eta_new = X * beta_new;
      ll_new = logit_loglik(y, eta_new);
      if (ll_new >= ll - 1e-12) break;
      scale *= 0.5;
    }
    beta = beta_new;
    eta = eta_new;
    ll = ll_new;
    fit.loglik_trace.push_back(ll);
  }
  fit.converged = converged;
  fit.iterations = iter;
  fit.coef = beta;
  prob = (1.0 + (-eta.array()).exp()).inverse();
  fit.fitted = prob;

  wvec = prob.array() * (1.0 - prob.array());
  Eigen::MatrixXd Xr = X;
  for (int j = 0; j < p; ++j)
    if (!gs.retained[j]) Xr.col(j).setZero();
  detail::GramSolver info;
  info.factor(Xr.transpose() * wvec.asDiagonal() * Xr);
  Eigen::MatrixXd scores = (y - prob).asDiagonal() * Xr;
  fit.vcov = detail::cluster_sandwich(info.inv, scores, clusters);
  fit.xtwx_inv = info.inv;
  return fit;
}

namespace {

double negbin_loglik(const Eigen::VectorXd& y, const Eigen::VectorXd& mu, double alpha) {
  double ll = 0.0;
  for (int i = 0; i < y.size(); ++i) {
    double m = mu(i);
    if (alpha <= 1e-12) {
      ll += y(i) * std::log(m) - m - std::lgamma(y(i) + 1.0);
    } else {
      double inv_a = 1.0 / alpha;
      ll += std::lgamma(y(i) + inv_a) - std::lgamma(inv_a) - std::lgamma(y(i) + 1.0) +
            y(i) * std::log(alpha * m) - (y(i) + inv_a) * std::log1p(alpha * m);
    }
  }
  return ll;
}

// IRLS for the log-link mean model at a fixed dispersion. Returns beta.
Eigen::VectorXd negbin_irls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                            const Eigen::VectorXd& offset, double alpha,
                            const detail::GramSolver& pattern, Eigen::VectorXd beta) {
  const int p = static_cast<int>(X.cols());
  Eigen::MatrixXd Xr = X;
  for (int j = 0; j < p; ++j)
    if (!pattern.retained[j]) Xr.col(j).setZero();
  for (int iter = 0; iter < 100; ++iter) {
    Eigen::VectorXd eta = (Xr * beta + offset).cwiseMin(30.0).cwiseMax(-30.0);
    Eigen::VectorXd mu = eta.array().exp();
    Eigen::VectorXd w = (mu.array() / (1.0 + alpha * mu.array())).max(1e-12);
    Eigen::VectorXd z = (eta - offset).array() + (y - mu).array() / mu.array();
    detail::GramSolver gs;
    gs.factor(Xr.transpose() * w.asDiagonal() * Xr);
    Eigen::VectorXd beta_new = gs.solve(Xr.transpose() * (w.cwiseProduct(z)));
    double change = (beta_new - beta).cwiseAbs().maxCoeff();
    beta = beta_new;
    if (change < 1e-10 * (1.0 + beta.cwiseAbs().maxCoeff())) break;
  }
  return beta;
}

}  // namespace

RegressionFit negbin_fit(const Eigen::MatrixXd& X, const std::vector<std::string>& names,
                         const Eigen::VectorXd& y, const Eigen::VectorXd& offset,
                         const std::vector<int>& clusters,
                         std::optional<double> fixed_dispersion) {
  check_inputs(X, names, y, clusters);
  if (offset.size() != X.rows()) throw ValidationError("offset length mismatch");
  if (!offset.allFinite()) throw ValidationError("offset must be finite");
  for (int i = 0; i < y.size(); ++i) {
    if (y(i) < 0.0 || std::abs(y(i) - std::round(y(i))) > 1e-9)
      throw ValidationError("negative-binomial response must be non-negative counts");
  }
  if (y.maxCoeff() <= 0.0) throw ValidationError("all-zero count response");

  const int n = static_cast<int>(X.rows());
  const int p = static_cast<int>(X.cols());

  detail::GramSolver pattern;
  pattern.factor(X.transpose() * X);

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  auto mu_at = [&](const Eigen::VectorXd& b) {
    Eigen::VectorXd eta = (X * b + offset).cwiseMin(30.0).cwiseMax(-30.0);
    return Eigen::VectorXd(eta.array().exp());
  };
  auto mom_alpha = [&](const Eigen::VectorXd& mu) {
    double num = ((y - mu).array().square() - mu.array()).sum();
    double den = mu.array().square().sum();
    return std::max(0.0, num / den);
  };

  RegressionFit fit;
  fit.names = names;
  fit.aliased.resize(p);
  for (int j = 0; j < p; ++j) fit.aliased[j] = !pattern.retained[j];
  fit.n_obs = n;

  // Poisson pass to seed both beta and the dispersion.
  beta = negbin_irls(X, y, offset, 0.0, pattern, beta);
  double alpha = fixed_dispersion.value_or(mom_alpha(mu_at(beta)));
  fit.loglik_trace.push_back(negbin_loglik(y, mu_at(beta).cwiseMax(1e-12), alpha));

  bool converged = fixed_dispersion.has_value();
  int outer = 0;
  if (fixed_dispersion) {
    beta = negbin_irls(X, y, offset, alpha, pattern, beta);
    outer = 1;
  } else {
    for (; outer < 200; ++outer) {
      Eigen::VectorXd beta_new = negbin_irls(X, y, offset, alpha, pattern, beta);
      double alpha_new = mom_alpha(mu_at(beta_new));
      double db = (beta_new - beta).cwiseAbs().maxCoeff();
      double da = std::abs(alpha_new - alpha);
      beta = beta_new;
      alpha = alpha_new;
      fit.loglik_trace.push_back(negbin_loglik(y, mu_at(beta).cwiseMax(1e-12), alpha));
      if (db < 1e-8 * (1.0 + beta.cwiseAbs().maxCoeff()) && da < 1e-8 * (1.0 + alpha)) {
        converged = true;
        ++outer;
        break;
      }
    }
  }

  Eigen::VectorXd mu = mu_at(beta);
  fit.coef = beta;
  fit.dispersion = alpha;
  fit.converged = converged;
  fit.iterations = outer;
  fit.fitted = mu;

  Eigen::MatrixXd Xr = X;
  for (int j = 0; j < p; ++j)
    if (!pattern.retained[j]) Xr.col(j).setZero();
  Eigen::VectorXd w = mu.array() / (1.0 + alpha * mu.array());
  detail::GramSolver info;
  info.factor(Xr.transpose() * w.asDiagonal() * Xr);
  Eigen::VectorXd score_scale = (y - mu).array() / (1.0 + alpha * mu.array());
  Eigen::MatrixXd scores = score_scale.asDiagonal() * Xr;
  fit.vcov = detail::cluster_sandwich(info.inv, scores, clusters);
  fit.xtwx_inv = info.inv;
  return fit;
}

RateRatio irr(const RegressionFit& fit, const std::string& name) {
  int i = fit.index_of(name);
  if (i < 0) throw ValidationError("no coefficient named '" + name + "'");
  if (fit.aliased[i]) throw ValidationError("coefficient '" + name + "' is aliased");
  double b = fit.coef(i);
  double se = std::sqrt(fit.vcov(i, i));
  return {std::exp(b), std::exp(b - 1.96 * se), std::exp(b + 1.96 * se)};
}

}  // namespace stagdid
