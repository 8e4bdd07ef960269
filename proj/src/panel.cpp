#include "stagdid/panel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "stagdid/csv.hpp"

namespace stagdid {

std::vector<int> PanelDataset::treated_cohorts() const {
  std::set<int> s;
  for (int c : cohort)
    if (c != kNever) s.insert(c);
  return {s.begin(), s.end()};
}

std::map<int, int> PanelDataset::cohort_sizes() const {
  std::map<int, int> sizes;
  for (int c : cohort)
    if (c != kNever) ++sizes[c];
  return sizes;
}

int PanelDataset::time_index(int t) const {
  if (times.empty() || t < times.front() || t > times.back())
    throw ValidationError("period " + std::to_string(t) + " outside panel window");
  return t - times.front();
}

bool PanelDataset::has_covariate(const std::string& name) const {
  return std::find(static_names.begin(), static_names.end(), name) != static_names.end() ||
         std::find(tv_names.begin(), tv_names.end(), name) != tv_names.end();
}

double PanelDataset::covariate_value(const std::string& name, int unit_index, int t) const {
  for (std::size_t i = 0; i < static_names.size(); ++i)
    if (static_names[i] == name) return covariates_static(unit_index, i);
  for (std::size_t i = 0; i < tv_names.size(); ++i)
    if (tv_names[i] == name) return covariates_tv[i](unit_index, time_index(t));
  throw SchemaError("unknown covariate '" + name + "'");
}

void PanelDataset::validate() const {
  const int n = n_units();
  const int T = n_periods();
  if (n == 0 || T == 0) throw ValidationError("empty panel");
  if (times.front() != 1) throw ValidationError("time index must start at 1");
  for (int i = 1; i < T; ++i)
    if (times[i] != times[i - 1] + 1)
      throw ValidationError("time index has a gap after period " +
                            std::to_string(times[i - 1]));
  if (outcome.rows() != n || outcome.cols() != T)
    throw ValidationError("outcome matrix shape does not match units x times");
  for (int j = 0; j < n; ++j)
    for (int ti = 0; ti < T; ++ti)
      if (!std::isfinite(outcome(j, ti)))
        throw ValidationError("missing outcome for unit '" + units[j] +
                              "' at period " + std::to_string(times[ti]));
  if (static_cast<int>(cohort.size()) != n)
    throw ValidationError("cohort vector length does not match units");
  for (int j = 0; j < n; ++j) {
    if (cohort[j] == kNever) continue;
    if (cohort[j] < 2)
      throw ValidationError("unit '" + units[j] +
                            "' treated in period " + std::to_string(cohort[j]) +
                            "'; a unit treated before period 2 has no pre-period");
    if (cohort[j] > T)
      throw ValidationError("unit '" + units[j] + "' cohort " +
                            std::to_string(cohort[j]) + " beyond horizon " +
                            std::to_string(T));
  }
  if (covariates_static.rows() != n && static_names.empty() == false)
    throw ValidationError("static covariate matrix shape mismatch");
  if (static_cast<int>(static_names.size()) != covariates_static.cols())
    throw ValidationError("static covariate names/columns mismatch");
  if (tv_names.size() != covariates_tv.size())
    throw ValidationError("time-varying covariate names/matrices mismatch");
  for (const auto& m : covariates_tv)
    if (m.rows() != n || m.cols() != T)
      throw ValidationError("time-varying covariate matrix shape mismatch");
  if (exposure) {
    if (exposure->size() != n) throw ValidationError("exposure length mismatch");
    for (int j = 0; j < n; ++j)
      if (!((*exposure)(j) > 0.0))
        throw ValidationError("non-positive exposure for unit '" + units[j] + "'");
  }
  std::set<std::string> seen(units.begin(), units.end());
  if (static_cast<int>(seen.size()) != n)
    throw ValidationError("duplicate unit identifiers");
}

bool PanelDataset::operator==(const PanelDataset& other) const {
  auto eq = [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
  };
  if (!(units == other.units && times == other.times && cohort == other.cohort &&
        static_names == other.static_names && tv_names == other.tv_names))
    return false;
  if (!eq(outcome, other.outcome)) return false;
  if (!eq(covariates_static, other.covariates_static)) return false;
  if (covariates_tv.size() != other.covariates_tv.size()) return false;
  for (std::size_t i = 0; i < covariates_tv.size(); ++i)
    if (!eq(covariates_tv[i], other.covariates_tv[i])) return false;
  if (exposure.has_value() != other.exposure.has_value()) return false;
  if (exposure && !(exposure->size() == other.exposure->size() &&
                    *exposure == *other.exposure))
    return false;
  return true;
}

void CleaningReport::merge(const CleaningReport& other) {
  cells_interpolated += other.cells_interpolated;
  cells_clamped += other.cells_clamped;
  for (const auto& [k, v] : other.interpolated)
    interpolated[k].insert(interpolated[k].end(), v.begin(), v.end());
  for (const auto& [k, v] : other.clamped)
    clamped[k].insert(clamped[k].end(), v.begin(), v.end());
}

nlohmann::ordered_json CleaningReport::to_json() const {
  nlohmann::ordered_json j;
  j["cells_interpolated"] = cells_interpolated;
  j["cells_clamped"] = cells_clamped;
  j["interpolated"] = interpolated;
  j["clamped"] = clamped;
  return j;
}

// ---------------------------------------------------------------------------
// Dates. Weeks are Monday-floored: the week index of a date is the number of
// whole weeks between its Monday and the origin's Monday, 1-based.
// ---------------------------------------------------------------------------

long days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const long era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<long>(doe) - 719468;
}

long parse_date(const std::string& iso) {
  int y = 0, m = 0, d = 0;
  char dash1 = 0, dash2 = 0;
  std::istringstream in(iso);
  in >> y >> dash1 >> m >> dash2 >> d;
  if (!in || dash1 != '-' || dash2 != '-' || m < 1 || m > 12 || d < 1 || d > 31)
    throw SchemaError("bad date '" + iso + "' (expected YYYY-MM-DD)");
  return days_from_civil(y, m, d);
}

namespace {
long monday_floor(long days) {
  // 1970-01-01 was a Thursday; day 4 of the Monday-based week 1969-12-29.
  long dow = ((days + 3) % 7 + 7) % 7;  // 0 = Monday
  return days - dow;
}
}  // namespace

int week_index(const std::string& iso_date, const std::string& iso_origin) {
  long date = monday_floor(parse_date(iso_date));
  long origin = monday_floor(parse_date(iso_origin));
  long weeks = (date - origin) / 7;  // both Monday-floored, difference is a multiple of 7
  return static_cast<int>(weeks) + 1;
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

PanelSchema PanelSchema::from_json(const nlohmann::ordered_json& j) {
  PanelSchema s;
  auto get = [&](const char* key) -> std::string {
    if (!j.contains(key)) throw SchemaError(std::string("schema missing '") + key + "'");
    return j.at(key).get<std::string>();
  };
  s.unit_col = get("unit_col");
  s.time_col = get("time_col");
  s.outcome_col = get("outcome_col");
  if (j.contains("cohort_col")) s.cohort_col = j.at("cohort_col").get<std::string>();
  if (j.contains("treatment_date_col"))
    s.treatment_date_col = j.at("treatment_date_col").get<std::string>();
  if (j.contains("date_origin")) s.date_origin = j.at("date_origin").get<std::string>();
  if (j.contains("exposure_col")) s.exposure_col = j.at("exposure_col").get<std::string>();
  if (j.contains("static_cols"))
    s.static_cols = j.at("static_cols").get<std::vector<std::string>>();
  if (j.contains("tv_cols")) s.tv_cols = j.at("tv_cols").get<std::vector<std::string>>();
  if (s.cohort_col.empty() == s.treatment_date_col.empty())
    throw SchemaError("exactly one of cohort_col / treatment_date_col must be set");
  if (!s.treatment_date_col.empty() && s.date_origin.empty())
    throw SchemaError("treatment_date_col requires date_origin");
  return s;
}

nlohmann::ordered_json PanelSchema::to_json() const {
  nlohmann::ordered_json j;
  j["unit_col"] = unit_col;
  j["time_col"] = time_col;
  j["outcome_col"] = outcome_col;
  if (!cohort_col.empty()) j["cohort_col"] = cohort_col;
  if (!treatment_date_col.empty()) j["treatment_date_col"] = treatment_date_col;
  if (!date_origin.empty()) j["date_origin"] = date_origin;
  if (!exposure_col.empty()) j["exposure_col"] = exposure_col;
  j["static_cols"] = static_cols;
  j["tv_cols"] = tv_cols;
  return j;
}

namespace {

double parse_number(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw SchemaError("cannot parse " + what + " value '" + s + "'");
  }
}

bool is_never_token(const std::string& s) {
  return s.empty() || s == "never" || s == "NEVER" || s == "NA" || s == "Inf";
}

}  // namespace

PanelDataset load_panel(const std::string& path, const PanelSchema& schema) {
  CsvTable csv = read_csv(path);
  const int c_unit = csv.require_column(schema.unit_col);
  const int c_time = csv.require_column(schema.time_col);
  const int c_out = csv.require_column(schema.outcome_col);
  const int c_cohort = schema.cohort_col.empty() ? -1 : csv.require_column(schema.cohort_col);
  const int c_date = schema.treatment_date_col.empty()
                         ? -1
                         : csv.require_column(schema.treatment_date_col);
  const int c_exp = schema.exposure_col.empty() ? -1 : csv.require_column(schema.exposure_col);
  std::vector<int> c_static, c_tv;
  for (const auto& name : schema.static_cols) c_static.push_back(csv.require_column(name));
  for (const auto& name : schema.tv_cols) c_tv.push_back(csv.require_column(name));

  // First pass: discover units (in order of appearance) and the time range.
  std::vector<std::string> units;
  std::map<std::string, int> unit_index;
  int t_min = 0, t_max = 0;
  bool first = true;
  for (const auto& row : csv.rows) {
    const std::string& u = row[c_unit];
    if (!unit_index.count(u)) {
      unit_index[u] = static_cast<int>(units.size());
      units.push_back(u);
    }
    int t = static_cast<int>(parse_number(row[c_time], "time"));
    if (first || t < t_min) t_min = t;
    if (first || t > t_max) t_max = t;
    first = false;
  }
  if (first) throw ValidationError("panel file has no data rows");
  if (t_min != 1)
    throw ValidationError("time index must start at 1 (found " + std::to_string(t_min) + ")");
  const int n = static_cast<int>(units.size());
  const int T = t_max;

  PanelDataset ds;
  ds.units = units;
  ds.times.resize(T);
  for (int t = 0; t < T; ++t) ds.times[t] = t + 1;
  ds.outcome = Eigen::MatrixXd::Constant(n, T, std::numeric_limits<double>::quiet_NaN());
  ds.static_names = schema.static_cols;
  ds.covariates_static = Eigen::MatrixXd::Zero(n, static_cast<int>(c_static.size()));
  ds.tv_names = schema.tv_cols;
  ds.covariates_tv.assign(c_tv.size(), Eigen::MatrixXd::Zero(n, T));
  ds.cohort.assign(n, kNever);
  Eigen::VectorXd exposure = Eigen::VectorXd::Zero(n);

  std::vector<std::vector<bool>> seen(n, std::vector<bool>(T, false));
  std::vector<bool> cohort_set(n, false);

  for (const auto& row : csv.rows) {
    int j = unit_index[row[c_unit]];
    int t = static_cast<int>(parse_number(row[c_time], "time"));
    int ti = t - 1;
    if (seen[j][ti])
      throw ValidationError("duplicate cell (unit '" + units[j] + "', period " +
                            std::to_string(t) + ")");
    seen[j][ti] = true;
    ds.outcome(j, ti) = parse_number(row[c_out], "outcome");

    int g = kNever;
    if (c_cohort >= 0) {
      const std::string& v = row[c_cohort];
      if (!is_never_token(v)) g = static_cast<int>(parse_number(v, "cohort"));
    } else {
      const std::string& v = row[c_date];
      if (!is_never_token(v)) {
        g = week_index(v, schema.date_origin);
        if (g > T) g = kNever;  // treated after the sample window
      }
    }
    if (cohort_set[j] && ds.cohort[j] != g)
      throw ValidationError("conflicting cohort values for unit '" + units[j] + "'");
    ds.cohort[j] = g;
    cohort_set[j] = true;
    if (g != kNever && g < 2)
      throw ValidationError("unit '" + units[j] + "' treated in period " +
                            std::to_string(g) + "; treatment before period 2 is rejected");

    for (std::size_t k = 0; k < c_static.size(); ++k)
      ds.covariates_static(j, static_cast<int>(k)) =
          parse_number(row[c_static[k]], schema.static_cols[k]);
    for (std::size_t k = 0; k < c_tv.size(); ++k)
      ds.covariates_tv[k](j, ti) = parse_number(row[c_tv[k]], schema.tv_cols[k]);
    if (c_exp >= 0) exposure(j) = parse_number(row[c_exp], "exposure");
  }

  // Balance check with a precise message for the first hole.
  for (int j = 0; j < n; ++j)
    for (int ti = 0; ti < T; ++ti)
      if (!seen[j][ti])
        throw ValidationError("unbalanced panel: missing cell (unit '" + units[j] +
                              "', period " + std::to_string(ti + 1) + ")");

  if (c_exp >= 0) ds.exposure = exposure;
  ds.validate();
  return ds;
}

PanelSchema save_panel(const PanelDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "unit,time,outcome,cohort";
  if (ds.exposure) out << ",exposure";
  for (const auto& name : ds.static_names) out << ',' << csv_escape(name);
  for (const auto& name : ds.tv_names) out << ',' << csv_escape(name);
  out << '\n';
  for (int j = 0; j < ds.n_units(); ++j) {
    for (int ti = 0; ti < ds.n_periods(); ++ti) {
      out << csv_escape(ds.units[j]) << ',' << ds.times[ti] << ','
          << format_double(ds.outcome(j, ti)) << ',';
      if (ds.cohort[j] == kNever) out << "never";
      else out << ds.cohort[j];
      if (ds.exposure) out << ',' << format_double((*ds.exposure)(j));
      for (int k = 0; k < ds.covariates_static.cols(); ++k)
        out << ',' << format_double(ds.covariates_static(j, k));
      for (const auto& m : ds.covariates_tv) out << ',' << format_double(m(j, ti));
      out << '\n';
    }
  }
  PanelSchema schema;
  schema.unit_col = "unit";
  schema.time_col = "time";
  schema.outcome_col = "outcome";
  schema.cohort_col = "cohort";
  if (ds.exposure) schema.exposure_col = "exposure";
  schema.static_cols = ds.static_names;
  schema.tv_cols = ds.tv_names;
  return schema;
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

double natural_cubic_spline_at(const std::vector<double>& x,
                               const std::vector<double>& y, double at) {
  const int n = static_cast<int>(x.size());
  if (n < 2 || y.size() != x.size())
    throw ValidationError("spline needs at least two support points");
  for (int i = 1; i < n; ++i)
    if (!(x[i] > x[i - 1])) throw ValidationError("spline abscissae must increase");

  // Second derivatives M from the natural-spline tridiagonal system
  // (M_0 = M_{n-1} = 0), solved by the Thomas algorithm.
  std::vector<double> m(n, 0.0);
  if (n > 2) {
    std::vector<double> diag(n - 2), rhs(n - 2), sub(n - 2), sup(n - 2);
    for (int i = 1; i <= n - 2; ++i) {
      double h0 = x[i] - x[i - 1];
      double h1 = x[i + 1] - x[i];
      diag[i - 1] = 2.0 * (h0 + h1);
      sub[i - 1] = h0;
      sup[i - 1] = h1;
      rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
    }
    for (int i = 1; i < n - 2; ++i) {
      double f = sub[i] / diag[i - 1];
      diag[i] -= f * sup[i - 1];
      rhs[i] -= f * rhs[i - 1];
    }
    for (int i = n - 3; i >= 0; --i) {
      double upper = (i + 1 <= n - 3) ? sup[i] * m[i + 2] : 0.0;
      m[i + 1] = (rhs[i] - upper) / diag[i];
    }
  }

  // Locate the interval; extrapolate linearly outside the support using the
  // natural end conditions (second derivative zero at the boundary).
  int i = 0;
  if (at <= x[0]) {
    i = 0;
  } else if (at >= x[n - 1]) {
    i = n - 2;
  } else {
    while (i < n - 2 && x[i + 1] < at) ++i;
  }
  double h = x[i + 1] - x[i];
  double a = (x[i + 1] - at) / h;
  double b = (at - x[i]) / h;
  return a * y[i] + b * y[i + 1] +
         ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) * h * h / 6.0;
}

std::pair<std::vector<double>, CleaningReport> repair_negative_increments(
    const std::vector<double>& series, const std::string& label) {
  if (series.size() < 4)
    throw ValidationError("series too short for spline repair (need >= 4 points)");
  std::vector<double> xs, ys;
  std::vector<int> bad;
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (series[i] < 0.0) bad.push_back(static_cast<int>(i));
    else {
      xs.push_back(static_cast<double>(i));
      ys.push_back(series[i]);
    }
  }
  CleaningReport report;
  std::vector<double> repaired = series;
  if (bad.empty()) return {repaired, report};
  if (xs.size() < 4)
    throw ValidationError("fewer than 4 non-negative entries; insufficient spline support");
  for (int idx : bad) {
    double v = natural_cubic_spline_at(xs, ys, static_cast<double>(idx));
    report.interpolated[label].push_back(idx);
    ++report.cells_interpolated;
    if (v < 0.0) {
      v = 0.0;
      report.clamped[label].push_back(idx);
      ++report.cells_clamped;
    }
    repaired[idx] = v;
  }
  return {repaired, report};
}

double asinh_outcome(double count) {
  if (count < 0.0)
    throw ValidationError("negative count passed to the outcome transform; "
                          "repair negative increments first");
  return std::log(count + std::sqrt(count * count + 1.0));
}

int event_time(int t, int g) {
  if (g == kNever) throw ValidationError("never-treated units have no event time");
  return t - g;
}

std::map<int, double> cohort_shares(const PanelDataset& ds, int e, int horizon) {
  std::map<int, double> shares;
  double total = 0.0;
  for (const auto& [g, size] : ds.cohort_sizes()) {
    if (g + e <= horizon) {
      shares[g] = static_cast<double>(size);
      total += size;
    }
  }
  if (shares.empty())
    throw ValidationError("no cohort observed at event time " + std::to_string(e) +
                          " within horizon " + std::to_string(horizon));
  for (auto& [g, w] : shares) w /= total;
  return shares;
}

}  // namespace stagdid
