#include "stagdid/iwes.hpp"

#include <algorithm>
#include <cmath>

namespace stagdid {

bool IwesFit::has_cell(int g, int e) const {
  return cell_column.count({g, e}) > 0;
}

bool IwesFit::cell_aliased(int g, int e) const {
  auto it = cell_column.find({g, e});
  if (it == cell_column.end()) return true;
  return reg.aliased[it->second];
}

double IwesFit::beta(int g, int e) const {
  auto it = cell_column.find({g, e});
  if (it == cell_column.end())
    throw ValidationError("no interaction cell (g=" + std::to_string(g) +
                          ", e=" + std::to_string(e) + ")");
  if (reg.aliased[it->second])
    throw ValidationError("interaction cell (g=" + std::to_string(g) +
                          ", e=" + std::to_string(e) + ") is aliased");
  return reg.coef(it->second);
}

Eigen::MatrixXd IwesFit::cell_covariance(
    const std::vector<std::pair<int, int>>& cells) const {
  Eigen::MatrixXd v(cells.size(), cells.size());
  for (std::size_t a = 0; a < cells.size(); ++a)
    for (std::size_t b = 0; b < cells.size(); ++b)
      v(a, b) = reg.vcov(cell_column.at(cells[a]), cell_column.at(cells[b]));
  return v;
}

IwesFit iwes_fit(const PanelDataset& ds, const std::vector<std::string>& covariates) {
  ds.validate();
  const int n = ds.n_units();
  const int T = ds.n_periods();
  auto cohorts = ds.treated_cohorts();
  bool has_never = false;
  for (int c : ds.cohort)
    if (c == kNever) has_never = true;
  if (!has_never)
    throw ValidationError("interaction-weighted event study needs never-treated units");
  if (cohorts.empty()) throw ValidationError("no treated cohort in the panel");

  // Fully saturated specification at the (cohort, period) level: intercept,
  // cohort effects, time effects, covariates, and one dummy per observed
  // (cohort, relative period) with e = -1 excluded as the reference.
  std::vector<std::string> names;
  names.push_back("(Intercept)");
  std::map<int, int> cohort_col;
  for (int g : cohorts) {
    cohort_col[g] = static_cast<int>(names.size());
    names.push_back("cohort_" + std::to_string(g));
  }
  std::map<int, int> time_col;
  for (int t = 2; t <= T; ++t) {
    time_col[t] = static_cast<int>(names.size());
    names.push_back("period_" + std::to_string(t));
  }
  std::vector<int> cov_col;
  for (const auto& c : covariates) {
    if (!ds.has_covariate(c)) throw SchemaError("unknown covariate '" + c + "'");
    cov_col.push_back(static_cast<int>(names.size()));
    names.push_back(c);
  }
  std::map<std::pair<int, int>, int> cell_column;
  for (int g : cohorts) {
    for (int t = 1; t <= T; ++t) {
      int e = t - g;
      if (e == -1) continue;
      cell_column[{g, e}] = static_cast<int>(names.size());
      names.push_back("g" + std::to_string(g) + "_e" + std::to_string(e));
    }
  }

  const int p = static_cast<int>(names.size());
  const long rows = static_cast<long>(n) * T;
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(rows, p);
  Eigen::VectorXd y(rows);
  std::vector<int> clusters(rows);
  long row = 0;
  for (int j = 0; j < n; ++j) {
    for (int ti = 0; ti < T; ++ti, ++row) {
      const int t = ti + 1;
      X(row, 0) = 1.0;
      if (ds.cohort[j] != kNever) {
        X(row, cohort_col[ds.cohort[j]]) = 1.0;
        int e = t - ds.cohort[j];
        if (e != -1) X(row, cell_column[{ds.cohort[j], e}]) = 1.0;
      }
      if (t >= 2) X(row, time_col[t]) = 1.0;
      for (std::size_t k = 0; k < covariates.size(); ++k)
        X(row, cov_col[k]) = ds.covariate_value(covariates[k], j, t);
      y(row) = ds.outcome(j, ti);
      clusters[row] = j;
    }
  }

  IwesFit fit;
  fit.reg = wls_fit(X, names, y, Eigen::VectorXd::Ones(rows), clusters);
  fit.cell_column = std::move(cell_column);
  fit.controls = covariates;
  fit.horizon = T;
  fit.cohort_sizes = ds.cohort_sizes();

  // Per-unit influence representation of every coefficient: J * Q^-1 s_j with
  // s_j the unit's score sum. Columns line up with the design columns; the
  // implied SEs match the sandwich covariance exactly.
  Eigen::VectorXd resid = y - fit.reg.fitted;
  Eigen::MatrixXd scores = resid.asDiagonal() * X;
  Eigen::MatrixXd unit_scores = detail::cluster_score_sums(scores, clusters, n);
  fit.unit_influence = static_cast<double>(n) * unit_scores * fit.reg.xtwx_inv;
  return fit;
}

EventStudyResult iwes_aggregate(const IwesFit& fit, const AggregateOptions& opt) {
  std::vector<GtCell> cells;
  for (const auto& [key, col] : fit.cell_column) {
    if (fit.reg.aliased[col]) continue;
    // Period-1 interactions keep the regression saturated but have no
    // pre-period and are not comparison cells; aggregation runs over the
    // same t in 2..T domain as the group-time surface.
    if (key.first + key.second < 2) continue;
    GtCell cell;
    cell.g = key.first;
    cell.t = key.first + key.second;
    cell.estimate = fit.reg.coef(col);
    cell.influence = fit.unit_influence.col(col);
    cells.push_back(std::move(cell));
  }
  AggregateOptions o = opt;
  if (o.method_tag.empty()) o.method_tag = "iwes";
  return aggregate_event_study(cells, fit.cohort_sizes, fit.horizon, o);
}

}  // namespace stagdid
