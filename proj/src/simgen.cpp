#include "stagdid/simgen.hpp"

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

namespace stagdid {

double EffectSpec::at(int g, int k) const {
  if (k < 0) return 0.0;
  switch (kind) {
    case Kind::kConstant:
      return value;
    case Kind::kLinear:
      return value + slope * k;
    case Kind::kTable: {
      auto it = table.find({g, k});
      if (it == table.end())
        throw ValidationError("effect table missing entry (g=" + std::to_string(g) +
                              ", k=" + std::to_string(k) + ")");
      return it->second;
    }
  }
  return 0.0;
}

void SimSpec::validate() const {
  if (n_units < 2 || n_periods < 2) throw ValidationError("simulation needs >= 2 units and periods");
  if (!(errors.rho > -1.0 && errors.rho < 1.0)) throw ValidationError("rho must be in (-1,1)");
  if (errors.sigma < 0.0) throw ValidationError("sigma must be >= 0");
  if (nb_dispersion < 0.0) throw ValidationError("dispersion must be >= 0");
  if (covariates.count < 0) throw ValidationError("covariate count must be >= 0");
  if (covariates.count > 0) {
    if (static_cast<int>(covariates.distributions.size()) != covariates.count ||
        covariates.outcome_loadings.size() != covariates.count)
      throw ValidationError("covariate spec lengths do not match count");
    if (covariates.adoption_loadings.size() != 0 &&
        covariates.adoption_loadings.size() != covariates.count)
      throw ValidationError("adoption loading length does not match covariate count");
  }
  if (cohorts.logistic) {
    if (cohorts.g_min < 2 || cohorts.g_max > n_periods || cohorts.g_min > cohorts.g_max)
      throw ValidationError("logistic cohort window must lie in [2, T]");
  } else {
    int total = cohorts.never_count;
    for (const auto& [g, size] : cohorts.cohorts) {
      if (g < 2 || g > n_periods)
        throw ValidationError("cohort period " + std::to_string(g) + " outside [2, T]");
      if (size < 0) throw ValidationError("negative cohort size");
      total += size;
    }
    if (total != n_units)
      throw ValidationError("cohort sizes plus never-treated must sum to n_units");
  }
}

SimSpec SimSpec::desk_default(std::uint64_t seed) {
  SimSpec spec;
  spec.n_units = 59;
  spec.n_periods = 37;
  spec.cohorts.never_count = 19;
  for (int g : {10, 13, 16, 19, 22, 25, 28, 31}) spec.cohorts.cohorts.push_back({g, 5});
  spec.effect.kind = EffectSpec::Kind::kConstant;
  spec.effect.value = 1.0;
  spec.errors.sigma = 0.4;
  spec.errors.rho = 0.3;
  spec.covariates.count = 2;
  spec.covariates.distributions = {"normal", "normal"};
  spec.covariates.outcome_loadings = Eigen::Vector2d(0.5, -0.3);
  spec.covariates.adoption_loadings = Eigen::Vector2d(0.0, 0.0);
  spec.sigma_unit = 1.0;
  spec.sigma_time = 0.5;
  spec.seed = seed;
  return spec;
}

namespace {

Eigen::MatrixXd draw_covariates(const SimSpec& spec, std::mt19937_64& rng) {
  Eigen::MatrixXd X(spec.n_units, spec.covariates.count);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int j = 0; j < spec.n_units; ++j) {
    for (int k = 0; k < spec.covariates.count; ++k) {
      const std::string& d = spec.covariates.distributions[k];
      if (d == "normal") X(j, k) = normal(rng);
      else if (d == "bernoulli") X(j, k) = unif(rng) < 0.5 ? 1.0 : 0.0;
      else throw ValidationError("unknown covariate distribution '" + d + "'");
    }
  }
  return X;
}

std::vector<int> assign_cohorts(const SimSpec& spec, const Eigen::MatrixXd& X,
                                std::mt19937_64& rng) {
  std::vector<int> cohort(spec.n_units, kNever);
  if (spec.cohorts.logistic) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::uniform_int_distribution<int> period(spec.cohorts.g_min, spec.cohorts.g_max);
    for (int j = 0; j < spec.n_units; ++j) {
      double eta = spec.cohorts.adoption_intercept;
      if (spec.covariates.adoption_loadings.size() > 0)
        eta += spec.covariates.adoption_loadings.dot(X.row(j));
      double p = 1.0 / (1.0 + std::exp(-eta));
      if (p >= 1.0 - 1e-12)
        throw ValidationError("adoption scheme leaves no never-treated units");
      // Draw order is fixed per unit: adoption indicator first, then a period
      // draw that is consumed either way, keeping the stream aligned.
      bool treated = unif(rng) < p;
      int g = period(rng);
      if (treated) cohort[j] = g;
    }
    bool any_never = false;
    for (int c : cohort)
      if (c == kNever) any_never = true;
    if (!any_never)
      throw ValidationError("adoption scheme produced no never-treated units");
  } else {
    int j = 0;
    for (int k = 0; k < spec.cohorts.never_count; ++k) cohort[j++] = kNever;
    for (const auto& [g, size] : spec.cohorts.cohorts)
      for (int k = 0; k < size; ++k) cohort[j++] = g;
  }
  return cohort;
}

}  // namespace

std::vector<int> selection_on_covariates(const SimSpec& spec,
                                         const Eigen::MatrixXd& covariates,
                                         std::uint64_t seed) {
  if (!spec.cohorts.logistic)
    throw ValidationError("selection_on_covariates requires the logistic scheme");
  std::mt19937_64 rng(seed);
  return assign_cohorts(spec, covariates, rng);
}

std::pair<PanelDataset, SimTruth> generate(const SimSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  const int n = spec.n_units;
  const int T = spec.n_periods;

  // Fixed draw order: covariates, cohorts, unit effects, period effects,
  // exposures, error innovations (unit-major), then any count draws.
  Eigen::MatrixXd X = spec.covariates.count > 0 ? draw_covariates(spec, rng)
                                                : Eigen::MatrixXd(n, 0);
  std::vector<int> cohort = assign_cohorts(spec, X, rng);

  Eigen::VectorXd unit_fx(n), time_fx(T);
  for (int j = 0; j < n; ++j) unit_fx(j) = spec.sigma_unit * normal(rng);
  for (int t = 0; t < T; ++t) time_fx(t) = spec.sigma_time * normal(rng);

  Eigen::VectorXd exposure;
  if (spec.count_outcome) {
    exposure.resize(n);
    for (int j = 0; j < n; ++j)
      exposure(j) = std::exp(spec.log_exposure_mean + spec.log_exposure_sd * normal(rng));
  }

  Eigen::MatrixXd eps(n, T);
  const double rho = spec.errors.rho;
  const double sigma = spec.errors.sigma;
  for (int j = 0; j < n; ++j) {
    double prev = sigma * normal(rng);
    eps(j, 0) = prev;
    for (int t = 1; t < T; ++t) {
      prev = rho * prev + sigma * std::sqrt(1.0 - rho * rho) * normal(rng);
      eps(j, t) = prev;
    }
  }

  SimTruth truth;
  truth.y_untreated.resize(n, T);
  truth.y_treated.resize(n, T);

  Eigen::VectorXd xb = spec.covariates.count > 0
                           ? Eigen::VectorXd(X * spec.covariates.outcome_loadings)
                           : Eigen::VectorXd::Zero(n);
  for (int j = 0; j < n; ++j) {
    for (int t = 0; t < T; ++t) {
      double base = unit_fx(j) + time_fx(t) + xb(j) + eps(j, t);
      double tau = 0.0;
      if (cohort[j] != kNever && (t + 1) >= cohort[j])
        tau = spec.effect.at(cohort[j], (t + 1) - cohort[j]);
      truth.y_untreated(j, t) = base;
      truth.y_treated(j, t) = base + tau;
    }
  }

  PanelDataset ds;
  ds.units.resize(n);
  for (int j = 0; j < n; ++j) ds.units[j] = "u" + std::to_string(j + 1);
  ds.times.resize(T);
  for (int t = 0; t < T; ++t) ds.times[t] = t + 1;
  ds.cohort = cohort;
  for (int k = 0; k < spec.covariates.count; ++k)
    ds.static_names.push_back("x" + std::to_string(k + 1));
  ds.covariates_static = X;

  if (spec.count_outcome) {
    // Exponentiate the linear index, add the log-exposure offset, and draw
    // negative-binomial counts for both potential outcomes.
    auto draw_nb = [&](double mu) {
      if (spec.nb_dispersion <= 0.0) {
        std::poisson_distribution<long> pois(mu);
        return static_cast<double>(pois(rng));
      }
      double shape = 1.0 / spec.nb_dispersion;
      std::gamma_distribution<double> gamma(shape, spec.nb_dispersion * mu);
      std::poisson_distribution<long> pois(std::max(gamma(rng), 1e-12));
      return static_cast<double>(pois(rng));
    };
    Eigen::MatrixXd y0(n, T), y1(n, T);
    for (int j = 0; j < n; ++j) {
      for (int t = 0; t < T; ++t) {
        double mu0 = std::exp(truth.y_untreated(j, t) + std::log(exposure(j)));
        double mu1 = std::exp(truth.y_treated(j, t) + std::log(exposure(j)));
        y0(j, t) = draw_nb(mu0);
        y1(j, t) = (mu1 == mu0) ? y0(j, t) : draw_nb(mu1);
      }
    }
    truth.y_untreated = y0;
    truth.y_treated = y1;
    ds.exposure = exposure;
  }

  ds.outcome.resize(n, T);
  for (int j = 0; j < n; ++j)
    for (int t = 0; t < T; ++t)
      ds.outcome(j, t) = (cohort[j] != kNever && (t + 1) >= cohort[j])
                             ? truth.y_treated(j, t)
                             : truth.y_untreated(j, t);

  // Exact ATT(g,t): realized mean treated-minus-untreated gap per cohort cell.
  std::map<int, std::vector<int>> members;
  for (int j = 0; j < n; ++j)
    if (cohort[j] != kNever) members[cohort[j]].push_back(j);
  for (const auto& [g, ids] : members) {
    for (int t = g; t <= T; ++t) {
      double s = 0.0;
      for (int j : ids) s += truth.y_treated(j, t - 1) - truth.y_untreated(j, t - 1);
      truth.att[{g, t}] = s / ids.size();
    }
  }
  for (int e = 0; e <= T - 2; ++e) {
    double num = 0.0, den = 0.0;
    for (const auto& [g, ids] : members) {
      if (g + e <= T) {
        num += ids.size() * truth.att.at({g, g + e});
        den += ids.size();
      }
    }
    if (den > 0.0) truth.theta_es[e] = num / den;
  }

  ds.validate();
  return {std::move(ds), std::move(truth)};
}

double SimTruth::att_at(int g, int t) const {
  auto it = att.find({g, t});
  return it == att.end() ? 0.0 : it->second;
}

// ---------------------------------------------------------------------------
// JSON round trip for SimSpec
// ---------------------------------------------------------------------------

SimSpec SimSpec::from_json(const nlohmann::ordered_json& j) {
  SimSpec s;
  s.n_units = j.at("n_units").get<int>();
  s.n_periods = j.at("n_periods").get<int>();
  if (j.contains("cohorts")) {
    const auto& c = j.at("cohorts");
    if (c.contains("explicit")) {
      for (const auto& item : c.at("explicit"))
        s.cohorts.cohorts.push_back({item.at("period").get<int>(), item.at("size").get<int>()});
      s.cohorts.never_count = c.at("never_count").get<int>();
    }
    if (c.contains("logistic") && c.at("logistic").get<bool>()) {
      s.cohorts.logistic = true;
      s.cohorts.adoption_intercept = c.value("adoption_intercept", 0.0);
      s.cohorts.g_min = c.value("g_min", 2);
      s.cohorts.g_max = c.value("g_max", s.n_periods);
    }
  }
  if (j.contains("effect")) {
    const auto& e = j.at("effect");
    std::string kind = e.value("kind", "constant");
    if (kind == "constant") s.effect.kind = EffectSpec::Kind::kConstant;
    else if (kind == "linear") s.effect.kind = EffectSpec::Kind::kLinear;
    else if (kind == "table") s.effect.kind = EffectSpec::Kind::kTable;
    else throw ValidationError("unknown effect kind '" + kind + "'");
    s.effect.value = e.value("value", 1.0);
    s.effect.slope = e.value("slope", 0.0);
    if (e.contains("table"))
      for (const auto& item : e.at("table"))
        s.effect.table[{item.at("g").get<int>(), item.at("k").get<int>()}] =
            item.at("tau").get<double>();
  }
  if (j.contains("errors")) {
    s.errors.sigma = j.at("errors").value("sigma", 1.0);
    s.errors.rho = j.at("errors").value("rho", 0.0);
  }
  if (j.contains("covariates")) {
    const auto& c = j.at("covariates");
    s.covariates.count = c.value("count", 0);
    if (c.contains("distributions"))
      s.covariates.distributions = c.at("distributions").get<std::vector<std::string>>();
    auto get_vec = [&](const char* key) {
      std::vector<double> v = c.value(key, std::vector<double>{});
      return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<long>(v.size())).eval();
    };
    if (c.contains("outcome_loadings")) s.covariates.outcome_loadings = get_vec("outcome_loadings");
    if (c.contains("adoption_loadings"))
      s.covariates.adoption_loadings = get_vec("adoption_loadings");
  }
  s.sigma_unit = j.value("sigma_unit", 1.0);
  s.sigma_time = j.value("sigma_time", 0.5);
  s.count_outcome = j.value("count_outcome", false);
  s.nb_dispersion = j.value("nb_dispersion", 0.0);
  s.log_exposure_mean = j.value("log_exposure_mean", 10.0);
  s.log_exposure_sd = j.value("log_exposure_sd", 0.5);
  s.seed = j.value("seed", static_cast<std::uint64_t>(0));
  return s;
}

nlohmann::ordered_json SimSpec::to_json() const {
  nlohmann::ordered_json j;
  j["n_units"] = n_units;
  j["n_periods"] = n_periods;
  nlohmann::ordered_json c;
  if (cohorts.logistic) {
    c["logistic"] = true;
    c["adoption_intercept"] = cohorts.adoption_intercept;
    c["g_min"] = cohorts.g_min;
    c["g_max"] = cohorts.g_max;
  } else {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& [g, size] : cohorts.cohorts)
      arr.push_back({{"period", g}, {"size", size}});
    c["explicit"] = arr;
    c["never_count"] = cohorts.never_count;
  }
  j["cohorts"] = c;
  nlohmann::ordered_json e;
  e["kind"] = effect.kind == EffectSpec::Kind::kConstant ? "constant"
              : effect.kind == EffectSpec::Kind::kLinear ? "linear"
                                                         : "table";
  e["value"] = effect.value;
  e["slope"] = effect.slope;
  if (!effect.table.empty()) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& [gk, tau] : effect.table)
      arr.push_back({{"g", gk.first}, {"k", gk.second}, {"tau", tau}});
    e["table"] = arr;
  }
  j["effect"] = e;
  j["errors"] = {{"sigma", errors.sigma}, {"rho", errors.rho}};
  nlohmann::ordered_json cov;
  cov["count"] = covariates.count;
  cov["distributions"] = covariates.distributions;
  auto put_vec = [](const Eigen::VectorXd& v) {
    std::vector<double> out(v.data(), v.data() + v.size());
    return out;
  };
  cov["outcome_loadings"] = put_vec(covariates.outcome_loadings);
  cov["adoption_loadings"] = put_vec(covariates.adoption_loadings);
  j["covariates"] = cov;
  j["sigma_unit"] = sigma_unit;
  j["sigma_time"] = sigma_time;
  j["count_outcome"] = count_outcome;
  j["nb_dispersion"] = nb_dispersion;
  j["log_exposure_mean"] = log_exposure_mean;
  j["log_exposure_sd"] = log_exposure_sd;
  j["seed"] = seed;
  return j;
}

}  // namespace stagdid
