#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "stagdid/event_study.hpp"
#include "stagdid/panel.hpp"

namespace stagdid {

enum class ControlGroup { kNeverTreated, kNotYetTreated };

enum class DidMethod {
  kDoublyRobust,       // propensity odds weighting + outcome regression
  kOutcomeRegression,  // constant propensity, outcome regression only
  kIpw                 // propensity odds weighting, m(X) = 0
};

// Base period for pre-treatment cells. Post cells always compare against
// g - delta - 1. kVarying gives one-period placebos (t vs t-1) before
// treatment; kUniversal compares every period against g - delta - 1, which
// makes the cells algebraically identical to interaction-weighted event-study
// coefficients on no-covariate panels.
enum class BasePeriod { kVarying, kUniversal };

struct DidOptions {
  ControlGroup control_group = ControlGroup::kNeverTreated;
  std::vector<std::string> covariates;
  DidMethod method = DidMethod::kDoublyRobust;
  int delta = 0;  // anticipation periods
  BasePeriod base_period = BasePeriod::kVarying;
};

struct GroupTimeAtt {
  int g = 0;
  int t = 0;
  double estimate = 0.0;
  Eigen::VectorXd influence;  // full panel length, mean zero
  double se = 0.0;
  int n_treated = 0;
  int n_control = 0;
  ControlGroup control_group = ControlGroup::kNeverTreated;
  DidMethod method = DidMethod::kDoublyRobust;
  int delta = 0;
};

struct CellFailure {
  int g = 0;
  int t = 0;
  std::string message;
};

struct AttSurface {
  std::vector<GroupTimeAtt> cells;
  std::vector<CellFailure> failures;
};

// ATT(g,t) by the doubly-robust estimand: treated-weighted minus
// odds-weighted average of (Y_t - Y_base - m(X)), with m fit on the control
// group's outcome change and the propensity by logit of cohort-g membership
// against the control pool. Time-varying covariates are read at the base
// period. The influence vector carries estimation-effect terms for both
// nuisances. Fitted propensities outside [0.001, 0.999] raise OverlapError.
GroupTimeAtt group_time_att(const PanelDataset& ds, int g, int t,
                            const DidOptions& opt);

// The full family over treated cohorts g (with a valid reference period) and
// t in 2..T excluding the reference period. Per-cell failures are recorded
// rather than aborting the surface.
AttSurface att_surface(const PanelDataset& ds, const DidOptions& opt);

// Event-time aggregation of a surface (Eq.-style cohort-share weights plus
// multiplier-bootstrap simultaneous bands).
EventStudyResult aggregate_att_surface(const AttSurface& surface,
                                       const PanelDataset& ds,
                                       const AggregateOptions& opt);

}  // namespace stagdid
