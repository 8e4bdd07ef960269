#include "stagdid/drdid.hpp"

#include <algorithm>
#include <cmath>

#include "stagdid/glm.hpp"

namespace stagdid {

namespace {

// Estimation sample for one (g,t) cell: cohort-g units plus the control pool.
struct CellSample {
  std::vector<int> unit_ids;  // dataset indices, panel order
  Eigen::VectorXd treated;    // 1 for cohort-g members
  int n_treated = 0;
  int n_control = 0;
};

CellSample build_sample(const PanelDataset& ds, int g, int t, ControlGroup cg) {
  CellSample s;
  std::vector<double> d;
  const int threshold = std::max(t, g);
  for (int j = 0; j < ds.n_units(); ++j) {
    if (ds.cohort[j] == g) {
      s.unit_ids.push_back(j);
      d.push_back(1.0);
      ++s.n_treated;
    } else if (ds.cohort[j] == kNever ||
               (cg == ControlGroup::kNotYetTreated && ds.cohort[j] > threshold)) {
      s.unit_ids.push_back(j);
      d.push_back(0.0);
      ++s.n_control;
    }
  }
  s.treated = Eigen::Map<Eigen::VectorXd>(d.data(), static_cast<long>(d.size()));
  return s;
}

}  // namespace

GroupTimeAtt group_time_att(const PanelDataset& ds, int g, int t, const DidOptions& opt) {
  const int T = ds.n_periods();
  if (g == kNever || g < 2 || g > T)
    throw ValidationError("invalid cohort " + std::to_string(g));
  if (t < 1 || t > T) throw ValidationError("period " + std::to_string(t) + " out of range");
  if (opt.delta < 0) throw ValidationError("anticipation delta must be >= 0");

  const int ref = g - opt.delta - 1;
  if (ref < 1)
    throw ValidationError("no reference period: g - delta - 1 = " + std::to_string(ref));
  if (t == ref)
    throw ValidationError("period " + std::to_string(t) +
                          " is the reference period for cohort " + std::to_string(g));
  int base = ref;
  if (t < ref && opt.base_period == BasePeriod::kVarying) base = t - 1;
  if (base < 1)
    throw ValidationError("no base period before t = " + std::to_string(t));

  CellSample sample = build_sample(ds, g, t, opt.control_group);
  if (sample.n_treated == 0)
    throw ValidationError("no units in cohort " + std::to_string(g));
  if (sample.n_control == 0)
    throw ValidationError("empty control pool for (g=" + std::to_string(g) +
                          ", t=" + std::to_string(t) + ")");

  const int n = static_cast<int>(sample.unit_ids.size());
  const Eigen::VectorXd& D = sample.treated;

  Eigen::VectorXd dy(n);
  for (int i = 0; i < n; ++i) {
    int j = sample.unit_ids[i];
    dy(i) = ds.outcome(j, ds.time_index(t)) - ds.outcome(j, ds.time_index(base));
  }

  // Covariate design: intercept plus the named columns; time-varying
  // covariates are frozen at the base period.
  const int p = 1 + static_cast<int>(opt.covariates.size());
  Eigen::MatrixXd X(n, p);
  std::vector<std::string> names(p);
  X.col(0).setOnes();
  names[0] = "(Intercept)";
  for (std::size_t k = 0; k < opt.covariates.size(); ++k) {
    names[k + 1] = opt.covariates[k];
    for (int i = 0; i < n; ++i)
      X(i, k + 1) = ds.covariate_value(opt.covariates[k], sample.unit_ids[i], base);
  }
  std::vector<int> self_cluster(n);
  for (int i = 0; i < n; ++i) self_cluster[i] = i;

  const bool use_pscore = opt.method != DidMethod::kOutcomeRegression;
  const bool use_outreg = opt.method != DidMethod::kIpw;

  // Propensity of being the cohort-g member within the cell sample.
  Eigen::VectorXd pscore = Eigen::VectorXd::Constant(n, D.mean());
  Eigen::MatrixXd ps_bread;  // [sum p(1-p) x x']^-1, for the estimation effect
  if (use_pscore) {
    RegressionFit ps;
    try {
      ps = logit_fit(X, names, D, self_cluster);
    } catch (const SeparationError& e) {
      throw OverlapError("propensity model separated on column '" + e.column +
                         "'; the overlap condition appears violated");
    }
    pscore = ps.fitted;
    ps_bread = ps.xtwx_inv;
    for (int i = 0; i < n; ++i)
      if (pscore(i) < 0.001 || pscore(i) > 0.999)
        throw OverlapError("fitted propensity " + format_double(pscore(i)) +
                           " outside [0.001, 0.999]; overlap condition violated");
  }

  // Outcome regression on the control group's change.
  Eigen::VectorXd m = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd or_bread;  // [sum (1-D) x x']^-1
  if (use_outreg) {
    std::vector<int> ctrl_rows;
    for (int i = 0; i < n; ++i)
      if (D(i) == 0.0) ctrl_rows.push_back(i);
    Eigen::MatrixXd Xc(ctrl_rows.size(), p);
    Eigen::VectorXd yc(ctrl_rows.size());
    std::vector<int> cc(ctrl_rows.size());
    for (std::size_t r = 0; r < ctrl_rows.size(); ++r) {
      Xc.row(r) = X.row(ctrl_rows[r]);
      yc(r) = dy(ctrl_rows[r]);
      cc[r] = static_cast<int>(r);
    }
    RegressionFit orfit =
        wls_fit(Xc, names, yc, Eigen::VectorXd::Ones(static_cast<long>(ctrl_rows.size())), cc);
    m = X * orfit.coef;
    or_bread = orfit.xtwx_inv;
  }

  // Sample estimand: treated-weighted minus odds-weighted average of the
  // regression-adjusted change, each side normalized by its own weight mean.
  Eigen::VectorXd w_treat = D;
  Eigen::VectorXd w_cont =
      (pscore.array() * (1.0 - D.array()) / (1.0 - pscore.array())).matrix();
  const double mean_wt = w_treat.mean();
  const double mean_wc = w_cont.mean();
  Eigen::VectorXd r = dy - m;
  const double eta_treat = w_treat.cwiseProduct(r).mean() / mean_wt;
  const double eta_cont = w_cont.cwiseProduct(r).mean() / mean_wc;
  const double att = eta_treat - eta_cont;

  // Influence function with estimation-effect corrections for each nuisance
  // actually estimated. lin_or row i is the influence of the outcome-
  // regression coefficients; lin_ps the same for the propensity.
  Eigen::MatrixXd lin_or, lin_ps;
  if (use_outreg)
    lin_or = static_cast<double>(n) *
             (((1.0 - D.array()) * r.array()).matrix().asDiagonal() * X) * or_bread;
  if (use_pscore)
    lin_ps = static_cast<double>(n) *
             (((D - pscore).array()).matrix().asDiagonal() * X) * ps_bread;

  Eigen::VectorXd inf_treat = w_treat.cwiseProduct(r) - w_treat * eta_treat;
  if (use_outreg) {
    Eigen::VectorXd m1 = (w_treat.asDiagonal() * X).colwise().mean().transpose();
    inf_treat -= lin_or * m1;
  }
  inf_treat /= mean_wt;

  Eigen::VectorXd inf_cont = w_cont.cwiseProduct(r) - w_cont * eta_cont;
  if (use_pscore) {
    Eigen::VectorXd m2 =
        (w_cont.cwiseProduct(r - Eigen::VectorXd::Constant(n, eta_cont)).asDiagonal() * X)
            .colwise()
            .mean()
            .transpose();
    inf_cont += lin_ps * m2;
  }
  if (use_outreg) {
    Eigen::VectorXd m3 = (w_cont.asDiagonal() * X).colwise().mean().transpose();
    inf_cont -= lin_or * m3;
  }
  inf_cont /= mean_wc;

  Eigen::VectorXd psi = inf_treat - inf_cont;
  // Centered by construction up to the nuisance solvers' stopping tolerance;
  // remove that residue so downstream aggregation sees exact zero mean.
  psi.array() -= psi.mean();

  GroupTimeAtt out;
  out.g = g;
  out.t = t;
  out.estimate = att;
  out.se = std::sqrt(psi.squaredNorm()) / n;
  out.n_treated = sample.n_treated;
  out.n_control = sample.n_control;
  out.control_group = opt.control_group;
  out.method = opt.method;
  out.delta = opt.delta;

  // Scale to the full panel so influence vectors from different cells share a
  // unit dimension; the implied SE is unchanged.
  const int N = ds.n_units();
  out.influence = Eigen::VectorXd::Zero(N);
  const double scale = static_cast<double>(N) / n;
  for (int i = 0; i < n; ++i) out.influence(sample.unit_ids[i]) = scale * psi(i);
  return out;
}

AttSurface att_surface(const PanelDataset& ds, const DidOptions& opt) {
  AttSurface surface;
  const int T = ds.n_periods();
  auto cohorts = ds.treated_cohorts();
  if (cohorts.empty()) throw ValidationError("no treated cohort in the panel");
  for (int g : cohorts) {
    const int ref = g - opt.delta - 1;
    if (ref < 1) {
      surface.failures.push_back(
          {g, 0, "cohort " + std::to_string(g) + " has no reference period at delta " +
                     std::to_string(opt.delta)});
      continue;
    }
    for (int t = 2; t <= T; ++t) {
      if (t == ref) continue;
      try {
        surface.cells.push_back(group_time_att(ds, g, t, opt));
      } catch (const Error& e) {
        surface.failures.push_back({g, t, e.what()});
      }
    }
  }
  return surface;
}

EventStudyResult aggregate_att_surface(const AttSurface& surface, const PanelDataset& ds,
                                       const AggregateOptions& opt) {
  std::vector<GtCell> cells;
  cells.reserve(surface.cells.size());
  for (const auto& c : surface.cells)
    cells.push_back({c.g, c.t, c.estimate, c.influence});
  return aggregate_event_study(cells, ds.cohort_sizes(), ds.n_periods(), opt);
}

}  // namespace stagdid
