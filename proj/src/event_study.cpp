#include "stagdid/event_study.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>

#include <nlohmann/json.hpp>

#include "stagdid/csv.hpp"

namespace stagdid {

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ValidationError("quantile argument must be in (0,1)");
  // Acklam's rational approximation, relative error below 1.2e-9.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double q, r;
  if (p < plow) {
    q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - plow) {
    q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  q = p - 0.5;
  r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

BootstrapBand multiplier_bootstrap(const Eigen::MatrixXd& influence, int replications,
                                   double level, std::uint64_t seed) {
  const int n = static_cast<int>(influence.rows());
  const int K = static_cast<int>(influence.cols());
  if (n == 0 || K == 0) throw ValidationError("empty influence family");
  if (replications < 200) throw ValidationError("bootstrap needs at least 200 replications");
  if (!(level > 0.0 && level < 1.0)) throw ValidationError("level must be in (0,1)");

  Eigen::VectorXd se(K);
  for (int k = 0; k < K; ++k) {
    se(k) = std::sqrt(influence.col(k).squaredNorm()) / n;
    if (se(k) == 0.0)
      throw ValidationError("degenerate (all-zero) influence column in bootstrap");
  }

  // Per-replication generators derived from the master seed keep the draw
  // sequence independent of any outer parallelism.
  std::vector<double> sup_t(replications);
  Eigen::VectorXd v(n);
  for (int b = 0; b < replications; ++b) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
    for (int i = 0; i < n; ++i) v(i) = (rng() & 1ULL) ? 1.0 : -1.0;
    double worst = 0.0;
    for (int k = 0; k < K; ++k) {
      double r = influence.col(k).dot(v) / n;
      worst = std::max(worst, std::abs(r) / se(k));
    }
    sup_t[b] = worst;
  }
  std::sort(sup_t.begin(), sup_t.end());
  int idx = static_cast<int>(std::ceil(level * replications)) - 1;
  idx = std::clamp(idx, 0, replications - 1);

  BootstrapBand band;
  band.critical_value = sup_t[idx];
  band.half_width = band.critical_value * se;
  return band;
}

EventStudyResult aggregate_event_study(const std::vector<GtCell>& cells,
                                       const std::map<int, int>& cohort_sizes,
                                       int horizon, const AggregateOptions& opt) {
  EventStudyResult result;
  result.method = opt.method_tag;
  result.horizon = horizon;
  result.level = opt.level;

  long n_units = -1;
  std::map<int, std::vector<const GtCell*>> by_event;
  for (const auto& cell : cells) {
    if (n_units < 0) n_units = cell.influence.size();
    else if (cell.influence.size() != n_units)
      throw ValidationError("influence vectors have mismatched unit dimension");
    by_event[cell.t - cell.g].push_back(&cell);
  }
  if (n_units <= 0) throw ValidationError("no cells to aggregate");

  std::vector<Eigen::VectorXd> influences;
  for (int e = opt.e_min; e <= opt.e_max; ++e) {
    auto it = by_event.find(e);
    std::vector<const GtCell*> eligible;
    if (it != by_event.end())
      for (const GtCell* c : it->second)
        if (c->g + e <= horizon) eligible.push_back(c);
    if (eligible.empty()) {
      result.omitted.push_back(e);
      continue;
    }
    double total = 0.0;
    for (const GtCell* c : eligible) total += cohort_sizes.at(c->g);
    EventStudyEntry entry;
    entry.e = e;
    entry.n_cohorts = static_cast<int>(eligible.size());
    Eigen::VectorXd psi = Eigen::VectorXd::Zero(n_units);
    for (const GtCell* c : eligible) {
      double w = cohort_sizes.at(c->g) / total;
      entry.estimate += w * c->estimate;
      psi += w * c->influence;
    }
    entry.se = std::sqrt(psi.squaredNorm()) / static_cast<double>(n_units);
    influences.push_back(std::move(psi));
    result.entries.push_back(entry);
  }
  if (result.entries.empty()) throw ValidationError("no event time could be aggregated");

  const double z = normal_quantile(0.5 + opt.level / 2.0);
  for (auto& entry : result.entries) {
    entry.ci_low = entry.estimate - z * entry.se;
    entry.ci_high = entry.estimate + z * entry.se;
  }

  // Simultaneous band: sup-t critical value over the aggregated influence
  // family. Entries with a degenerate influence keep their pointwise band.
  std::vector<int> live;
  for (std::size_t i = 0; i < result.entries.size(); ++i)
    if (result.entries[i].se > 0.0) live.push_back(static_cast<int>(i));
  double crit = z;
  if (!live.empty()) {
    Eigen::MatrixXd fam(n_units, live.size());
    for (std::size_t k = 0; k < live.size(); ++k) fam.col(k) = influences[live[k]];
    crit = multiplier_bootstrap(fam, opt.bootstrap_reps, opt.level, opt.seed).critical_value;
  }
  for (auto& entry : result.entries) {
    double half = (entry.se > 0.0 ? crit : z) * entry.se;
    entry.sim_low = entry.estimate - half;
    entry.sim_high = entry.estimate + half;
  }
  return result;
}

void EventStudyResult::write_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "event_time,estimate,se,ci_low,ci_high,sim_low,sim_high\n";
  for (const auto& entry : entries) {
    out << entry.e << ',' << format_double(entry.estimate) << ','
        << format_double(entry.se) << ',' << format_double(entry.ci_low) << ','
        << format_double(entry.ci_high) << ',' << format_double(entry.sim_low) << ','
        << format_double(entry.sim_high) << '\n';
  }
}

nlohmann::ordered_json EventStudyResult::to_json() const {
  nlohmann::ordered_json j;
  j["method"] = method;
  j["horizon"] = horizon;
  j["level"] = level;
  j["omitted_event_times"] = omitted;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& entry : entries) {
    nlohmann::ordered_json e;
    e["event_time"] = entry.e;
    e["estimate"] = entry.estimate;
    e["se"] = entry.se;
    e["ci_low"] = entry.ci_low;
    e["ci_high"] = entry.ci_high;
    e["sim_low"] = entry.sim_low;
    e["sim_high"] = entry.sim_high;
    e["n_cohorts"] = entry.n_cohorts;
    arr.push_back(e);
  }
  j["entries"] = arr;
  return j;
}

EventStudyResult EventStudyResult::read_csv(const std::string& path) {
  CsvTable csv = stagdid::read_csv(path);
  const std::vector<std::string> expected = {"event_time", "estimate", "se",      "ci_low",
                                             "ci_high",    "sim_low",  "sim_high"};
  for (const auto& name : expected) csv.require_column(name);
  EventStudyResult result;
  for (const auto& row : csv.rows) {
    EventStudyEntry entry;
    entry.e = std::stoi(row[csv.column("event_time")]);
    entry.estimate = std::stod(row[csv.column("estimate")]);
    entry.se = std::stod(row[csv.column("se")]);
    entry.ci_low = std::stod(row[csv.column("ci_low")]);
    entry.ci_high = std::stod(row[csv.column("ci_high")]);
    entry.sim_low = std::stod(row[csv.column("sim_low")]);
    entry.sim_high = std::stod(row[csv.column("sim_high")]);
    result.entries.push_back(entry);
  }
  std::sort(result.entries.begin(), result.entries.end(),
            [](const EventStudyEntry& a, const EventStudyEntry& b) { return a.e < b.e; });
  return result;
}

}  // namespace stagdid
