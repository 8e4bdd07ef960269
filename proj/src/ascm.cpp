#include "stagdid/ascm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

namespace stagdid {

Eigen::VectorXd project_simplex(const Eigen::VectorXd& v) {
  const int n = static_cast<int>(v.size());
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0, theta = 0.0;
  for (int i = 0; i < n; ++i) {
    css += u[i];
    double t = (css - 1.0) / (i + 1);
    if (u[i] - t > 0.0) theta = t;
  }
  return (v.array() - theta).max(0.0);
}

void ScmProblem::validate() const {
  if (n_lags() < 1) throw ValidationError("synthetic control needs at least one lag");
  if (donors.empty()) throw ValidationError("empty donor pool");
  if (donor_lags.rows() != treated_lags.size() ||
      donor_lags.cols() != static_cast<long>(donors.size()))
    throw ValidationError("donor lag matrix shape mismatch");
  if (!(lambda >= 0.0)) throw ValidationError("ridge penalty must be >= 0");
  if (!treated_lags.allFinite() || !donor_lags.allFinite())
    throw ValidationError("lagged outcomes must be complete over the lag window");
}

namespace {

// Complementarity gap of min f over the simplex at feasible w:
// w'grad - min_i grad_i, zero exactly at a KKT point.
double simplex_kkt_gap(const Eigen::VectorXd& w, const Eigen::VectorXd& grad) {
  return w.dot(grad) - grad.minCoeff();
}

// Accelerated projected gradient for a quadratic 0.5 w'Hw + b'w over the
// simplex. `lipschitz` must dominate the largest eigenvalue of H.
struct SimplexQp {
  const Eigen::MatrixXd& H;
  const Eigen::VectorXd& b;
  double lipschitz;

  double value(const Eigen::VectorXd& w) const {
    return 0.5 * w.dot(H * w) + b.dot(w);
  }
  Eigen::VectorXd gradient(const Eigen::VectorXd& w) const { return H * w + b; }

  // Gap below which double precision cannot resolve the complementarity
  // residual: differences of gradient-sized quantities carry O(eps * scale)
  // noise, so the absolute tolerance is floored there.
  static double resolvable(const Eigen::VectorXd& w, const Eigen::VectorXd& grad) {
    double scale = std::abs(w.dot(grad)) + grad.cwiseAbs().maxCoeff();
    return 32.0 * std::numeric_limits<double>::epsilon() * scale;
  }

  // Returns the iterate and the number of iterations used; stops at the gap
  // tolerance or the iteration cap, whichever first.
  std::pair<Eigen::VectorXd, int> solve(Eigen::VectorXd w, double tol, int max_iter,
                                        double* final_gap = nullptr) const {
    Eigen::VectorXd z = w;
    double theta = 1.0;
    double f_prev = value(w);
    double gap = simplex_kkt_gap(w, gradient(w));
    int iter = 0;
    const double step = 1.0 / std::max(lipschitz, 1e-300);
    while (gap > std::max(tol, resolvable(w, gradient(w))) && iter < max_iter) {
      Eigen::VectorXd w_new = project_simplex(z - step * gradient(z));
      double f_new = value(w_new);
      if (f_new > f_prev + 1e-15) {
        // Momentum overshoot: restart from the last point.
        theta = 1.0;
        z = w;
        w_new = project_simplex(z - step * gradient(z));
        f_new = value(w_new);
      }
      double theta_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * theta * theta));
      z = w_new + ((theta - 1.0) / theta_new) * (w_new - w);
      w = w_new;
      theta = theta_new;
      f_prev = f_new;
      gap = simplex_kkt_gap(w, gradient(w));
      ++iter;
    }
    if (final_gap) *final_gap = gap;
    return {w, iter};
  }
};

double largest_eigenvalue(const Eigen::MatrixXd& H) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

}  // namespace

Eigen::VectorXd scm_weights(const ScmProblem& problem) {
  problem.validate();
  const int d = static_cast<int>(problem.donors.size());
  const double L = problem.n_lags();
  Eigen::MatrixXd H = (2.0 / L) * problem.donor_lags.transpose() * problem.donor_lags +
                      2.0 * problem.lambda * Eigen::MatrixXd::Identity(d, d);
  Eigen::VectorXd b = -(2.0 / L) * problem.donor_lags.transpose() * problem.treated_lags;
  SimplexQp qp{H, b, largest_eigenvalue(H)};
  double gap = 0.0;
  Eigen::VectorXd w =
      qp.solve(Eigen::VectorXd::Constant(d, 1.0 / d), 1e-8, 10000, &gap).first;
  if (gap > std::max(1e-8, SimplexQp::resolvable(w, qp.gradient(w))))
    throw ConvergenceError("synthetic-control weights did not converge in 10000 "
                           "iterations (KKT residual " +
                           format_double(gap) + ")");
  return w;
}

std::vector<int> donor_pool(const PanelDataset& ds, int treated_unit, int k_max) {
  const int t_treat = ds.cohort[treated_unit];
  if (t_treat == kNever)
    throw ValidationError("unit '" + ds.units[treated_unit] + "' is never treated");
  std::vector<int> pool;
  for (int i = 0; i < ds.n_units(); ++i) {
    if (i == treated_unit) continue;
    if (ds.cohort[i] == kNever) pool.push_back(i);
    else if (ds.cohort[i] > t_treat + k_max)
      pool.push_back(i);  // adopts after the whole evaluation window
  }
  return pool;
}

double impute_counterfactual(const PanelDataset& ds, int treated_unit,
                             const Eigen::VectorXd& unit_weights, int k) {
  if (unit_weights.size() != ds.n_units())
    throw ValidationError("weight vector length must match the unit count");
  const int t_eval = ds.cohort[treated_unit] + k;
  if (t_eval < 1 || t_eval > ds.n_periods())
    throw ValidationError("event time " + std::to_string(k) + " outside the panel");
  double value = 0.0;
  for (int i = 0; i < ds.n_units(); ++i) {
    double w = unit_weights(i);
    if (w <= 1e-12) continue;
    if (ds.cohort[i] <= t_eval)
      throw ValidationError("donor '" + ds.units[i] + "' is treated by period " +
                            std::to_string(t_eval) + " (donor contamination)");
    value += w * ds.outcome(i, ds.time_index(t_eval));
  }
  return value;
}

double unit_effect(double observed, double imputed) { return observed - imputed; }

std::optional<double> att_k(const std::vector<double>& unit_effects_at_k) {
  if (unit_effects_at_k.empty()) return std::nullopt;
  double s = std::accumulate(unit_effects_at_k.begin(), unit_effects_at_k.end(), 0.0);
  return s / static_cast<double>(unit_effects_at_k.size());
}

std::optional<double> jackknife_se(const std::vector<double>& effects) {
  const int J = static_cast<int>(effects.size());
  if (J < 2) return std::nullopt;
  double total = std::accumulate(effects.begin(), effects.end(), 0.0);
  std::vector<double> loo(J);
  for (int j = 0; j < J; ++j) loo[j] = (total - effects[j]) / (J - 1);
  double mean_loo = std::accumulate(loo.begin(), loo.end(), 0.0) / J;
  double ss = 0.0;
  for (double v : loo) ss += (v - mean_loo) * (v - mean_loo);
  return std::sqrt(ss * (J - 1) / J);
}

namespace {

// Internal view of one treated unit's matching problem inside the pooled fit.
struct PooledBlock {
  int unit = -1;            // dataset index
  int t_treat = 0;          // adoption period
  int n_lags = 0;           // T_j - 1: every available pre-period
  std::vector<int> donors;  // dataset indices
  Eigen::VectorXd y;        // treated lags, entry l-1 = Y_{j, T_j - l}
  Eigen::MatrixXd D;        // n_lags x donors
};

std::vector<PooledBlock> build_blocks(const PanelDataset& ds, int k_max) {
  std::vector<PooledBlock> blocks;
  for (int j = 0; j < ds.n_units(); ++j) {
    if (ds.cohort[j] == kNever) continue;
    PooledBlock blk;
    blk.unit = j;
    blk.t_treat = ds.cohort[j];
    blk.n_lags = blk.t_treat - 1;
    blk.donors = donor_pool(ds, j, k_max);
    if (blk.donors.empty())
      throw ValidationError("empty donor pool for treated unit '" + ds.units[j] + "'");
    blk.y.resize(blk.n_lags);
    blk.D.resize(blk.n_lags, static_cast<long>(blk.donors.size()));
    for (int l = 1; l <= blk.n_lags; ++l) {
      int ti = ds.time_index(blk.t_treat - l);
      blk.y(l - 1) = ds.outcome(j, ti);
      for (std::size_t i = 0; i < blk.donors.size(); ++i)
        blk.D(l - 1, static_cast<long>(i)) = ds.outcome(blk.donors[i], ti);
    }
    blocks.push_back(std::move(blk));
  }
  if (blocks.empty()) throw ValidationError("no treated unit in the panel");
  return blocks;
}

struct QualityAccumulator {
  double q_sep2 = 0.0;
  double q_pool2 = 0.0;
};

// q_sep^2 and q_pool^2 for per-block weight vectors (donor-indexed).
QualityAccumulator quality(const std::vector<PooledBlock>& blocks,
                           const std::vector<Eigen::VectorXd>& gamma) {
  const int J = static_cast<int>(blocks.size());
  int L = 0;
  for (const auto& blk : blocks) L = std::max(L, blk.n_lags);
  Eigen::VectorXd pooled = Eigen::VectorXd::Zero(L);
  Eigen::VectorXi eligible = Eigen::VectorXi::Zero(L);
  double sep = 0.0;
  for (int j = 0; j < J; ++j) {
    Eigen::VectorXd imb = blocks[j].y - blocks[j].D * gamma[j];
    sep += imb.squaredNorm() / blocks[j].n_lags;
    for (int l = 0; l < blocks[j].n_lags; ++l) {
      pooled(l) += imb(l);
      eligible(l) += 1;
    }
  }
  QualityAccumulator acc;
  acc.q_sep2 = sep / J;
  double pool = 0.0;
  for (int l = 0; l < L; ++l) {
    double m = pooled(l) / eligible(l);
    pool += m * m;
  }
  acc.q_pool2 = pool / L;
  return acc;
}

}  // namespace

std::pair<double, double> fit_quality(const PanelDataset& ds,
                                      const std::map<int, Eigen::VectorXd>& weights) {
  std::vector<PooledBlock> blocks;
  std::vector<Eigen::VectorXd> gamma;
  for (const auto& [unit, w] : weights) {
    if (ds.cohort[unit] == kNever)
      throw ValidationError("weights supplied for a never-treated unit");
    if (w.size() != ds.n_units())
      throw ValidationError("weight vector length must match the unit count");
    PooledBlock blk;
    blk.unit = unit;
    blk.t_treat = ds.cohort[unit];
    blk.n_lags = blk.t_treat - 1;
    std::vector<double> gvals;
    for (int i = 0; i < ds.n_units(); ++i) {
      if (i == unit) continue;
      if (std::abs(w(i)) > 0.0) {
        blk.donors.push_back(i);
        gvals.push_back(w(i));
      }
    }
    if (blk.donors.empty()) throw ValidationError("weight vector has no support");
    blk.y.resize(blk.n_lags);
    blk.D.resize(blk.n_lags, static_cast<long>(blk.donors.size()));
    for (int l = 1; l <= blk.n_lags; ++l) {
      int ti = ds.time_index(blk.t_treat - l);
      blk.y(l - 1) = ds.outcome(unit, ti);
      for (std::size_t i = 0; i < blk.donors.size(); ++i)
        blk.D(l - 1, static_cast<long>(i)) = ds.outcome(blk.donors[i], ti);
    }
    blocks.push_back(std::move(blk));
    gamma.push_back(Eigen::Map<Eigen::VectorXd>(gvals.data(), static_cast<long>(gvals.size())));
  }
  QualityAccumulator acc = quality(blocks, gamma);
  return {std::sqrt(acc.q_sep2), std::sqrt(acc.q_pool2)};
}

ScmFit fit_partially_pooled(const PanelDataset& ds, const ScmOptions& opt) {
  ds.validate();
  if (!(opt.nu >= 0.0 && opt.nu <= 1.0)) throw ValidationError("nu must be in [0,1]");
  if (!(opt.lambda >= 0.0)) throw ValidationError("lambda must be >= 0");
  const int T = ds.n_periods();
  int k_max = opt.k_max;
  if (k_max < 0) {
    k_max = 0;
    for (int j = 0; j < ds.n_units(); ++j)
      if (ds.cohort[j] != kNever) k_max = std::max(k_max, T - ds.cohort[j]);
  }

  std::vector<PooledBlock> blocks = build_blocks(ds, k_max);
  const int J = static_cast<int>(blocks.size());
  int L = 0;
  for (const auto& blk : blocks) L = std::max(L, blk.n_lags);
  Eigen::VectorXi eligible = Eigen::VectorXi::Zero(L);
  for (const auto& blk : blocks)
    for (int l = 0; l < blk.n_lags; ++l) eligible(l) += 1;

  // Separate fits give the warm start and the normalizing constants.
  std::vector<Eigen::VectorXd> gamma(J);
  for (int j = 0; j < J; ++j) {
    ScmProblem prob;
    prob.treated_unit = blocks[j].unit;
    prob.treatment_period = blocks[j].t_treat;
    prob.donors = blocks[j].donors;
    prob.treated_lags = blocks[j].y;
    prob.donor_lags = blocks[j].D;
    prob.lambda = opt.lambda;
    gamma[j] = scm_weights(prob);
  }

  ScmFit fit;
  fit.nu = opt.nu;
  fit.lambda = opt.lambda;
  fit.k_max = k_max;

  QualityAccumulator sep_point = quality(blocks, gamma);
  double norm_sep = sep_point.q_sep2;
  double norm_pool = sep_point.q_pool2;
  fit.normalized = norm_sep > 1e-12 && norm_pool > 1e-12;
  if (!fit.normalized) {
    fit.warnings.push_back(
        "separate fit is (near) perfect; pooled objective left unnormalized");
    norm_sep = 1.0;
    norm_pool = 1.0;
  }

  // Objective: nu q_pool^2 / norm_pool + (1-nu) q_sep^2 / norm_sep
  //            + lambda/(norm_sep J) sum_j |gamma_j|^2.
  // The ridge scaling makes the nu = 0 problem separate into exactly the
  // per-unit scm_weights objectives, so the warm start is already optimal
  // there and the sweep loop exits on its first residual check.
  {
    const double c_sep = 2.0 * (1.0 - opt.nu) / (norm_sep * J);
    const double c_pool = 2.0 * opt.nu / (norm_pool * L);
    const double c_ridge = 2.0 * opt.lambda / (norm_sep * J);

    // Constant per-block Hessians and their Lipschitz bounds.
    std::vector<Eigen::MatrixXd> H(J);
    std::vector<double> lip(J);
    for (int j = 0; j < J; ++j) {
      const auto& blk = blocks[j];
      const int d = static_cast<int>(blk.donors.size());
      Eigen::MatrixXd h = (c_sep / blk.n_lags) * (blk.D.transpose() * blk.D);
      for (int l = 0; l < blk.n_lags; ++l) {
        double scale = c_pool / (static_cast<double>(eligible(l)) * eligible(l));
        h += scale * (blk.D.row(l).transpose() * blk.D.row(l));
      }
      h += c_ridge * Eigen::MatrixXd::Identity(d, d);
      lip[j] = largest_eigenvalue(h);
      H[j] = std::move(h);
    }

    auto pooled_residual = [&](int skip) {
      // Per-lag imbalance sums across all blocks except `skip`.
      Eigen::VectorXd r = Eigen::VectorXd::Zero(L);
      for (int j = 0; j < J; ++j) {
        if (j == skip) continue;
        Eigen::VectorXd imb = blocks[j].y - blocks[j].D * gamma[j];
        for (int l = 0; l < blocks[j].n_lags; ++l) r(l) += imb(l);
      }
      return r;
    };

    auto block_b = [&](int j, const Eigen::VectorXd& rest) {
      const auto& blk = blocks[j];
      Eigen::VectorXd b = -(c_sep / blk.n_lags) * (blk.D.transpose() * blk.y);
      for (int l = 0; l < blk.n_lags; ++l) {
        double c_l = (blk.y(l) + rest(l)) / eligible(l);
        b -= (c_pool / eligible(l)) * c_l * blk.D.row(l).transpose();
      }
      return b;
    };

    const double joint_tol = 1e-7;
    const int max_sweeps = 1000;
    double residual = std::numeric_limits<double>::infinity();
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
      for (int j = 0; j < J; ++j) {
        Eigen::VectorXd b = block_b(j, pooled_residual(j));
        SimplexQp qp{H[j], b, lip[j]};
        gamma[j] = qp.solve(gamma[j], 0.1 * joint_tol, 5000).first;
      }
      residual = 0.0;
      for (int j = 0; j < J; ++j) {
        Eigen::VectorXd b = block_b(j, pooled_residual(j));
        residual = std::max(residual, simplex_kkt_gap(gamma[j], H[j] * gamma[j] + b));
      }
      if (residual < joint_tol) break;
    }
    if (residual >= joint_tol)
      throw ConvergenceError("partially pooled fit did not reach the joint KKT "
                             "tolerance (residual " +
                             format_double(residual) + ")");
  }

  QualityAccumulator final_q = quality(blocks, gamma);
  fit.q_sep = std::sqrt(final_q.q_sep2);
  fit.q_pool = std::sqrt(final_q.q_pool2);

  const int N = ds.n_units();
  for (int j = 0; j < J; ++j) {
    fit.treated_units.push_back(blocks[j].unit);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(N);
    for (std::size_t i = 0; i < blocks[j].donors.size(); ++i)
      w(blocks[j].donors[i]) = gamma[j](static_cast<long>(i));
    fit.weights[blocks[j].unit] = std::move(w);
  }

  for (int k = opt.k_min; k <= k_max; ++k) {
    std::vector<double> effects;
    for (int j = 0; j < J; ++j) {
      const int unit = blocks[j].unit;
      const int t_eval = blocks[j].t_treat + k;
      if (t_eval > T || t_eval < 1) continue;
      double imputed = impute_counterfactual(ds, unit, fit.weights[unit], k);
      double tau = unit_effect(ds.outcome(unit, ds.time_index(t_eval)), imputed);
      fit.unit_effects[{unit, k}] = tau;
      effects.push_back(tau);
    }
    if (auto mean = att_k(effects)) {
      fit.att[k] = *mean;
      fit.se[k] = jackknife_se(effects);
    }
  }
  return fit;
}

nlohmann::ordered_json ScmFit::diagnostics_json(const PanelDataset& ds) const {
  nlohmann::ordered_json j;
  j["q_sep"] = q_sep;
  j["q_pool"] = q_pool;
  j["lambda"] = lambda;
  j["nu"] = nu;
  j["normalized"] = normalized;
  j["k_max"] = k_max;
  j["warnings"] = warnings;
  nlohmann::ordered_json w;
  for (int unit : treated_units) {
    nlohmann::ordered_json entry;
    const Eigen::VectorXd& g = weights.at(unit);
    for (int i = 0; i < g.size(); ++i)
      if (g(i) > 1e-12) entry[ds.units[i]] = g(i);
    w[ds.units[unit]] = entry;
  }
  j["weights"] = w;
  return j;
}

}  // namespace stagdid
