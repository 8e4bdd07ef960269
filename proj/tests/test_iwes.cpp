#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "helpers.hpp"
#include "stagdid/drdid.hpp"
#include "stagdid/iwes.hpp"

using namespace stagdid;

namespace {

// Cell-mean oracle for the saturated no-covariate specification:
// beta(g,e) = [mean_{cohort g}(Y_{g+e}) - mean_{cohort g}(Y_{g-1})]
//           - [mean_{never}(Y_{g+e}) - mean_{never}(Y_{g-1})].
double cell_mean_beta(const PanelDataset& ds, int g, int e) {
  auto mean_at = [&](bool never, int t) {
    double s = 0;
    int c = 0;
    for (int j = 0; j < ds.n_units(); ++j) {
      bool in = never ? ds.cohort[j] == kNever : ds.cohort[j] == g;
      if (in) {
        s += ds.outcome(j, ds.time_index(t));
        ++c;
      }
    }
    return s / c;
  };
  return (mean_at(false, g + e) - mean_at(false, g - 1)) -
         (mean_at(true, g + e) - mean_at(true, g - 1));
}

PanelDataset random_panel(std::uint64_t seed, std::vector<int> cohorts, int T) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd y(cohorts.size(), T);
  for (int j = 0; j < y.rows(); ++j)
    for (int t = 0; t < T; ++t)
      y(j, t) = 0.5 * j + 0.2 * t + normal(rng) +
                ((cohorts[j] != kNever && t + 1 >= cohorts[j]) ? 1.0 + 0.1 * j : 0.0);
  return testutil::make_panel(cohorts, T, [&](int j, int t) { return y(j, t - 1); });
}

}  // namespace

TEST_CASE("saturated regression equals cell-mean algebra") {
  // 6 units, 6 periods: cohorts 3 (two units), 5 (one unit), three never.
  auto ds = random_panel(5, {3, 3, 5, kNever, kNever, kNever}, 6);
  auto fit = iwes_fit(ds, {});
  for (int g : {3, 5}) {
    for (int t = 1; t <= 6; ++t) {
      int e = t - g;
      if (e == -1) continue;
      REQUIRE(fit.has_cell(g, e));
      CHECK(fit.beta(g, e) == doctest::Approx(cell_mean_beta(ds, g, e)).epsilon(1e-9));
    }
  }
}

TEST_CASE("outcome shifts are absorbed by the intercept") {
  auto ds = random_panel(6, {3, 4, kNever, kNever}, 5);
  auto fit = iwes_fit(ds, {});
  PanelDataset shifted = ds;
  shifted.outcome.array() += 250.0;
  auto fit2 = iwes_fit(shifted, {});
  for (const auto& [cell, col] : fit.cell_column)
    CHECK(fit2.beta(cell.first, cell.second) ==
          doctest::Approx(fit.beta(cell.first, cell.second)).epsilon(1e-8));
}

TEST_CASE("single cohort coefficients equal unconditional group-time ATTs") {
  auto ds = random_panel(7, {4, 4, kNever, kNever, kNever}, 7);
  auto fit = iwes_fit(ds, {});
  DidOptions opt;
  opt.base_period = BasePeriod::kUniversal;  // pre cells share the e=-1 base
  for (int t = 2; t <= 7; ++t) {
    if (t == 3) continue;  // reference period
    auto att = group_time_att(ds, 4, t, opt);
    CHECK(fit.beta(4, t - 4) == doctest::Approx(att.estimate).epsilon(1e-8));
  }
}

TEST_CASE("never-treated units are required") {
  auto ds = random_panel(8, {3, 3, 4, 4}, 5);
  CHECK_THROWS_AS(iwes_fit(ds, {}), ValidationError);
}

TEST_CASE("duplicating never-treated units leaves coefficients unchanged") {
  auto ds = random_panel(9, {3, 5, kNever, kNever}, 6);
  std::vector<int> cohorts2 = {3, 5, kNever, kNever, kNever, kNever};
  auto dup = testutil::make_panel(cohorts2, 6, [&](int j, int t) {
    int src = j < 4 ? j : j - 2;  // copies of the two never-treated units
    return ds.outcome(src, t - 1);
  });
  auto fit = iwes_fit(ds, {});
  auto fit2 = iwes_fit(dup, {});
  for (const auto& [cell, col] : fit.cell_column)
    CHECK(fit2.beta(cell.first, cell.second) ==
          doctest::Approx(fit.beta(cell.first, cell.second)).epsilon(1e-9));
}

TEST_CASE("interaction-coefficient covariance is symmetric PSD") {
  auto ds = random_panel(18, {3, 3, 5, kNever, kNever, kNever}, 7);
  auto fit = iwes_fit(ds, {});
  std::vector<std::pair<int, int>> cells;
  for (const auto& [cell, col] : fit.cell_column)
    if (!fit.reg.aliased[col]) cells.push_back(cell);
  Eigen::MatrixXd v = fit.cell_covariance(cells);
  double scale = 1.0 + v.cwiseAbs().maxCoeff();
  CHECK((v - v.transpose()).cwiseAbs().maxCoeff() < 1e-8 * scale);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(v);
  CHECK(es.eigenvalues().minCoeff() > -1e-8 * scale);
}

TEST_CASE("time-varying covariates enter directly") {
  auto ds = random_panel(10, {3, 4, kNever, kNever, kNever}, 6);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd tv(ds.n_units(), ds.n_periods());
  for (int j = 0; j < tv.rows(); ++j)
    for (int t = 0; t < tv.cols(); ++t) tv(j, t) = normal(rng);
  ds.tv_names.push_back("stringency");
  ds.covariates_tv.push_back(tv);
  auto fit = iwes_fit(ds, {"stringency"});
  CHECK(fit.reg.index_of("stringency") >= 0);
  CHECK(fit.controls == std::vector<std::string>{"stringency"});
  // The coefficient exists and the interaction cells are still estimated.
  for (const auto& [cell, col] : fit.cell_column) CHECK_FALSE(fit.reg.aliased[col]);
}

TEST_CASE("iwes aggregation") {
  SUBCASE("single cohort: theta equals beta") {
    auto ds = random_panel(12, {4, 4, kNever, kNever}, 7);
    auto fit = iwes_fit(ds, {});
    AggregateOptions opt;
    opt.e_min = 0;
    opt.e_max = 3;
    opt.bootstrap_reps = 500;
    auto res = iwes_aggregate(fit, opt);
    for (const auto& entry : res.entries)
      CHECK(entry.estimate == doctest::Approx(fit.beta(4, entry.e)).epsilon(1e-12));
  }

  SUBCASE("two equal cohorts average their cells") {
    // Deterministic outcomes so beta values are exact: cohort 3 gains 1 from
    // period 3 on, cohort 5 gains 3 from period 5 on.
    auto ds = testutil::make_panel(
        {3, 5, kNever, kNever}, 6, [](int j, int t) {
          double base = 0.5 * j + 0.1 * t;
          if (j == 0 && t >= 3) base += 1.0;
          if (j == 1 && t >= 5) base += 3.0;
          return base;
        });
    auto fit = iwes_fit(ds, {});
    AggregateOptions opt;
    opt.e_min = 0;
    opt.e_max = 1;
    opt.bootstrap_reps = 500;
    auto res = iwes_aggregate(fit, opt);
    REQUIRE(res.entries.size() == 2);
    CHECK(res.entries[0].estimate == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(res.entries[1].estimate == doctest::Approx(2.0).epsilon(1e-9));
  }

  SUBCASE("three unequal cohorts: hand-weighted sum and delta-method variance") {
    auto ds = random_panel(14, {3, 3, 3, 4, 5, 5, kNever, kNever, kNever}, 7);
    auto fit = iwes_fit(ds, {});
    AggregateOptions opt;
    opt.e_min = 1;
    opt.e_max = 1;
    opt.bootstrap_reps = 500;
    auto res = iwes_aggregate(fit, opt);
    REQUIRE(res.entries.size() == 1);
    // Weights 3:1:2 over cohorts 3, 4, 5 at e=1 (all eligible, T=7).
    double hand = (3.0 * fit.beta(3, 1) + 1.0 * fit.beta(4, 1) + 2.0 * fit.beta(5, 1)) / 6.0;
    CHECK(res.entries[0].estimate == doctest::Approx(hand).epsilon(1e-12));

    Eigen::Vector3d s(3.0 / 6, 1.0 / 6, 2.0 / 6);
    Eigen::MatrixXd v = fit.cell_covariance({{3, 1}, {4, 1}, {5, 1}});
    double var_hand = s.transpose() * v * s;
    CHECK(res.entries[0].se == doctest::Approx(std::sqrt(var_hand)).epsilon(1e-9));
  }

  SUBCASE("event times beyond any cohort's horizon are omitted") {
    auto ds = random_panel(15, {5, 5, kNever, kNever}, 6);
    auto fit = iwes_fit(ds, {});
    AggregateOptions opt;
    opt.e_min = 0;
    opt.e_max = 4;
    opt.bootstrap_reps = 500;
    auto res = iwes_aggregate(fit, opt);
    CHECK(res.entries.back().e == 1);  // T - g = 1
    CHECK(res.omitted == std::vector<int>{2, 3, 4});
  }
}

TEST_CASE("pipeline equivalence with DR-DiD on no-covariate panels") {
  auto ds = random_panel(16, {4, 4, 6, kNever, kNever, kNever}, 8);
  auto fit = iwes_fit(ds, {});
  AggregateOptions agg;
  agg.e_min = -6;
  agg.e_max = 4;
  agg.bootstrap_reps = 500;
  auto iwes_res = iwes_aggregate(fit, agg);

  DidOptions universal;
  universal.base_period = BasePeriod::kUniversal;
  auto dr_universal = aggregate_att_surface(att_surface(ds, universal), ds, agg);

  // Universal base: the two estimators are the same cell algebra at every
  // shared event time, pre-treatment included.
  REQUIRE(iwes_res.entries.size() == dr_universal.entries.size());
  for (std::size_t i = 0; i < iwes_res.entries.size(); ++i) {
    CHECK(iwes_res.entries[i].e == dr_universal.entries[i].e);
    CHECK(iwes_res.entries[i].estimate ==
          doctest::Approx(dr_universal.entries[i].estimate).epsilon(1e-8));
  }

  // Varying base differs before treatment but must agree from e = 0 on.
  DidOptions varying;
  auto dr_varying = aggregate_att_surface(att_surface(ds, varying), ds, agg);
  for (const auto& entry : dr_varying.entries) {
    if (entry.e < 0) continue;
    for (const auto& ie : iwes_res.entries)
      if (ie.e == entry.e)
        CHECK(ie.estimate == doctest::Approx(entry.estimate).epsilon(1e-8));
  }
}
