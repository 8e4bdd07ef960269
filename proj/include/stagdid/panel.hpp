#pragma once

#include <Eigen/Dense>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "stagdid/common.hpp"

namespace stagdid {

// Cohort label for units that are never treated inside the sample window.
// Using the largest int keeps "not yet treated by period t" a plain
// integer comparison (cohort > t) for treated and never-treated units alike.
inline constexpr int kNever = std::numeric_limits<int>::max();

// Balanced unit-by-time panel. Immutable by convention once validated:
// nothing in the library mutates a dataset after construction, so sharing
// across threads is safe.
struct PanelDataset {
  std::vector<std::string> units;             // row order of all matrices
  std::vector<int> times;                     // 1..T, contiguous
  Eigen::MatrixXd outcome;                    // units x times
  std::vector<std::string> static_names;      // per-unit covariates
  Eigen::MatrixXd covariates_static;          // units x |static_names|
  std::vector<std::string> tv_names;          // per-(unit,time) covariates
  std::vector<Eigen::MatrixXd> covariates_tv; // one units-x-times matrix per name
  std::vector<int> cohort;                    // kNever or first-treated period in 2..T
  std::optional<Eigen::VectorXd> exposure;    // per unit, strictly positive

  int n_units() const { return static_cast<int>(units.size()); }
  int n_periods() const { return static_cast<int>(times.size()); }

  bool is_never_treated(int unit_index) const { return cohort[unit_index] == kNever; }

  // Sorted distinct treated cohort periods (never-treated excluded).
  std::vector<int> treated_cohorts() const;
  // Unit counts per treated cohort.
  std::map<int, int> cohort_sizes() const;

  // Column index of a period (times are 1..T so this is t-1), with bounds check.
  int time_index(int t) const;
  // Value of a named covariate for a unit; time-varying ones are read at
  // period t, static ones ignore t. Throws SchemaError for unknown names.
  double covariate_value(const std::string& name, int unit_index, int t) const;
  bool has_covariate(const std::string& name) const;

  // Throws ValidationError when any dataset invariant fails.
  void validate() const;

  bool operator==(const PanelDataset& other) const;
};

// Record of what repair_negative_increments changed. Counts always equal the
// lengths of the index lists.
struct CleaningReport {
  long cells_interpolated = 0;
  long cells_clamped = 0;
  std::map<std::string, std::vector<int>> interpolated; // series label -> 0-based indices
  std::map<std::string, std::vector<int>> clamped;

  void merge(const CleaningReport& other);
  nlohmann::ordered_json to_json() const;
};

// Column mapping for CSV ingestion. Cohorts come either from an integer
// cohort column ("never", "", or "NA" mark never-treated) or from a
// treatment-date column mapped to week indices: both the date and
// `date_origin` (the first day of period 1) are floored to their Monday and
// the cohort is the 1-based week offset.
struct PanelSchema {
  std::string unit_col;
  std::string time_col;
  std::string outcome_col;
  std::string cohort_col;          // exactly one of cohort_col /
  std::string treatment_date_col;  // treatment_date_col must be set
  std::string date_origin;         // required with treatment_date_col, YYYY-MM-DD
  std::string exposure_col;        // optional
  std::vector<std::string> static_cols;
  std::vector<std::string> tv_cols;

  static PanelSchema from_json(const nlohmann::ordered_json& j);
  nlohmann::ordered_json to_json() const;
};

// Reads and validates a panel. Errors: missing columns (SchemaError),
// missing/duplicate (unit,time) cells, non-contiguous times, cohorts before
// period 2, non-positive exposure (ValidationError, naming the offender).
PanelDataset load_panel(const std::string& path, const PanelSchema& schema);

// Writes the canonical long-format CSV; the returned schema reloads it into
// an identical object via load_panel.
PanelSchema save_panel(const PanelDataset& ds, const std::string& path);

// Days since 1970-01-01 for an ISO date, and the Monday-floored week index
// (1-based) of `date` relative to `origin`.
long days_from_civil(int y, int m, int d);
long parse_date(const std::string& iso);  // throws SchemaError on bad input
int week_index(const std::string& iso_date, const std::string& iso_origin);

// Replaces every negative entry of a per-period count series with the value
// of the natural cubic spline through the non-negative entries, clamped at 0
// (splines can undershoot and these series are counts). Needs at least 4
// non-negative support points. `label` keys the cleaning report.
std::pair<std::vector<double>, CleaningReport> repair_negative_increments(
    const std::vector<double>& series, const std::string& label = "series");

// Inverse hyperbolic sine transform for count outcomes: ln(c + sqrt(c^2+1)).
// Negative input is an error; run repair_negative_increments first.
double asinh_outcome(double count);

// k = t - g. Never-treated units have no event time.
int event_time(int t, int g);

// P(G = g | G + e <= T): weight of each treated cohort among those still
// observed at event time e, proportional to cohort size. Errors when no
// cohort satisfies g + e <= T.
std::map<int, double> cohort_shares(const PanelDataset& ds, int e, int horizon);

// Natural cubic spline through (x_i, y_i), x strictly increasing, evaluated
// at a point. Exposed for tests; repair_negative_increments uses it.
double natural_cubic_spline_at(const std::vector<double>& x,
                               const std::vector<double>& y, double at);

}  // namespace stagdid
