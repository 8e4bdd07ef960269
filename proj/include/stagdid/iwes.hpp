#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "stagdid/event_study.hpp"
#include "stagdid/glm.hpp"
#include "stagdid/panel.hpp"

namespace stagdid {

// Saturated cohort-by-relative-period event-study fit: one regression of the
// outcome on intercept, cohort effects, time effects, covariates, and an
// interaction dummy for every (cohort, relative period) with support except
// the reference period e = -1. Never-treated units are the control cohort.
struct IwesFit {
  RegressionFit reg;
  std::map<std::pair<int, int>, int> cell_column;  // (g,e) -> design column
  std::vector<std::string> controls;
  Eigen::MatrixXd unit_influence;  // n_units x n_coef influence representation
  int horizon = 0;
  std::map<int, int> cohort_sizes;

  bool has_cell(int g, int e) const;
  bool cell_aliased(int g, int e) const;
  double beta(int g, int e) const;  // throws on missing/aliased cells
  // Covariance of the interaction coefficients (cluster-robust by unit).
  Eigen::MatrixXd cell_covariance(const std::vector<std::pair<int, int>>& cells) const;
};

// Covariates may be static or time-varying; time-varying ones enter at their
// own (unit, t) value. Requires never-treated units.
IwesFit iwes_fit(const PanelDataset& ds, const std::vector<std::string>& covariates);

// Cohort-share aggregation of the interaction coefficients, shares treated as
// known. Event times whose cells are all aliased are omitted and flagged.
EventStudyResult iwes_aggregate(const IwesFit& fit, const AggregateOptions& opt);

}  // namespace stagdid
