#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "helpers.hpp"
#include "stagdid/drdid.hpp"

using namespace stagdid;

namespace {

// ---------------------------------------------------------------------------
// Independent oracle: evaluates the doubly-robust sample estimand term by
// term, with its own 2-parameter Newton logit and its own least-squares solve.
// Shares no code with the implementation under test.
// ---------------------------------------------------------------------------
double dr_oracle(const std::vector<double>& dy, const std::vector<double>& x,
                 const std::vector<int>& treated) {
  const int n = static_cast<int>(dy.size());

  // Logit of treated on (1, x) by damped Newton.
  double b0 = 0.0, b1 = 0.0;
  for (int it = 0; it < 200; ++it) {
    double g0 = 0, g1 = 0, h00 = 0, h01 = 0, h11 = 0;
    for (int i = 0; i < n; ++i) {
      double p = 1.0 / (1.0 + std::exp(-(b0 + b1 * x[i])));
      double r = treated[i] - p;
      g0 += r;
      g1 += r * x[i];
      double w = p * (1 - p);
      h00 += w;
      h01 += w * x[i];
      h11 += w * x[i] * x[i];
    }
    double det = h00 * h11 - h01 * h01;
    double d0 = (h11 * g0 - h01 * g1) / det;
    double d1 = (h00 * g1 - h01 * g0) / det;
    b0 += d0;
    b1 += d1;
    if (std::abs(d0) + std::abs(d1) < 1e-13) break;
  }

  // OLS of dy on (1, x) over controls.
  double sw = 0, sx = 0, sxx = 0, sy = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    if (treated[i]) continue;
    sw += 1;
    sx += x[i];
    sxx += x[i] * x[i];
    sy += dy[i];
    sxy += x[i] * dy[i];
  }
  double det = sw * sxx - sx * sx;
  double a0 = (sxx * sy - sx * sxy) / det;
  double a1 = (sw * sxy - sx * sy) / det;

  // Sample estimand: treated-share weights against odds weights.
  double sum_d = 0, sum_odds = 0;
  for (int i = 0; i < n; ++i) {
    double p = 1.0 / (1.0 + std::exp(-(b0 + b1 * x[i])));
    sum_d += treated[i];
    if (!treated[i]) sum_odds += p / (1 - p);
  }
  double att = 0.0;
  for (int i = 0; i < n; ++i) {
    double p = 1.0 / (1.0 + std::exp(-(b0 + b1 * x[i])));
    double m = a0 + a1 * x[i];
    double w_t = treated[i] / sum_d;
    double w_c = treated[i] ? 0.0 : (p / (1 - p)) / sum_odds;
    att += (w_t - w_c) * (dy[i] - m);
  }
  return att;
}

PanelDataset two_by_two() {
  // Control y = (1,1), treated y = (1,3), g = 2.
  return testutil::make_panel({kNever, 2}, 2, [](int j, int t) {
    if (j == 0) return 1.0;
    return t == 1 ? 1.0 : 3.0;
  });
}

}  // namespace

TEST_CASE("2x2 collapses to difference-in-differences") {
  auto ds = two_by_two();
  for (auto method : {DidMethod::kDoublyRobust, DidMethod::kOutcomeRegression,
                      DidMethod::kIpw}) {
    DidOptions opt;
    opt.method = method;
    auto att = group_time_att(ds, 2, 2, opt);
    CHECK(att.estimate == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(att.n_treated == 1);
    CHECK(att.n_control == 1);
  }
}

TEST_CASE("constant covariate reduces to the unconditional estimate") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> normal;
  auto ds = testutil::make_panel({kNever, kNever, kNever, 2, 2}, 3,
                                 [&](int j, int t) { return normal(rng) + (j >= 3 && t >= 2 ? 1.5 : 0.0); });
  testutil::add_static_covariate(ds, "ones", {1, 1, 1, 1, 1});

  DidOptions plain;
  DidOptions with_cov;
  with_cov.covariates = {"ones"};
  // The constant column is collinear with the intercept, so both nuisances
  // collapse to their unconditional versions.
  auto a = group_time_att(ds, 2, 2, plain);
  auto b = group_time_att(ds, 2, 2, with_cov);
  CHECK(b.estimate == doctest::Approx(a.estimate).epsilon(1e-14));
}

TEST_CASE("doubly-robust estimand matches the term-by-term oracle") {
  // 6 units: 2 treated in g=3, 4 never-treated, 4 periods, binary covariate.
  std::vector<int> cohorts = {3, 3, kNever, kNever, kNever, kNever};
  std::vector<double> xvals = {1, 0, 1, 1, 0, 0};
  std::mt19937_64 rng(21);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd y(6, 4);
  for (int j = 0; j < 6; ++j)
    for (int t = 0; t < 4; ++t)
      y(j, t) = 0.5 * j + 0.3 * t + 0.8 * xvals[j] * t + normal(rng);
  auto ds = testutil::make_panel(cohorts, 4, [&](int j, int t) { return y(j, t - 1); });
  testutil::add_static_covariate(ds, "x", xvals);

  DidOptions opt;
  opt.covariates = {"x"};
  for (int t : {3, 4}) {
    auto att = group_time_att(ds, 3, t, opt);
    std::vector<double> dy(6);
    std::vector<int> treated = {1, 1, 0, 0, 0, 0};
    for (int j = 0; j < 6; ++j) dy[j] = y(j, t - 1) - y(j, 2 - 1);  // base g-1 = 2
    double oracle = dr_oracle(dy, xvals, treated);
    CHECK(att.estimate == doctest::Approx(oracle).epsilon(1e-10));
  }
}

TEST_CASE("group-time influence functions") {
  std::mt19937_64 rng(33);
  std::normal_distribution<double> normal;
  std::vector<int> cohorts = {3, 3, 4, kNever, kNever, kNever, kNever, kNever};
  auto ds = testutil::make_panel(cohorts, 5, [&](int j, int t) {
    return 0.2 * j + 0.1 * t + normal(rng);
  });
  std::vector<double> x = {0.5, -1, 0.2, 1.4, -0.3, 0.9, 0, -1.2};
  testutil::add_static_covariate(ds, "x", x);

  DidOptions opt;
  opt.covariates = {"x"};
  for (auto method : {DidMethod::kDoublyRobust, DidMethod::kOutcomeRegression,
                      DidMethod::kIpw}) {
    opt.method = method;
    auto att = group_time_att(ds, 3, 4, opt);
    CHECK(std::abs(att.influence.mean()) < 1e-10);
    double se = std::sqrt(att.influence.squaredNorm()) / ds.n_units();
    CHECK(se == doctest::Approx(att.se).epsilon(1e-10));
  }
}

TEST_CASE("no-covariate point estimates agree across DR, OR, IPW") {
  std::mt19937_64 rng(55);
  std::normal_distribution<double> normal;
  std::vector<int> cohorts = {3, 3, 4, 4, 4, kNever, kNever, kNever, kNever, 5};
  auto ds = testutil::make_panel(cohorts, 6, [&](int j, int t) {
    return j - 0.4 * t + normal(rng) + ((cohorts[j] != kNever && t >= cohorts[j]) ? 1.0 : 0.0);
  });
  for (auto cg : {ControlGroup::kNeverTreated, ControlGroup::kNotYetTreated}) {
    DidOptions opt;
    opt.control_group = cg;
    opt.method = DidMethod::kDoublyRobust;
    auto surface = att_surface(ds, opt);
    REQUIRE(!surface.cells.empty());
    for (const auto& cell : surface.cells) {
      opt.method = DidMethod::kOutcomeRegression;
      auto or_att = group_time_att(ds, cell.g, cell.t, opt);
      opt.method = DidMethod::kIpw;
      auto ipw_att = group_time_att(ds, cell.g, cell.t, opt);
      opt.method = DidMethod::kDoublyRobust;
      CHECK(or_att.estimate == doctest::Approx(cell.estimate).epsilon(1e-10));
      CHECK(ipw_att.estimate == doctest::Approx(cell.estimate).epsilon(1e-10));
    }
  }
}

TEST_CASE("translation and relabeling invariance") {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> normal;
  std::vector<int> cohorts = {3, 4, kNever, kNever, kNever, 3};
  Eigen::MatrixXd base(6, 5);
  for (int j = 0; j < 6; ++j)
    for (int t = 0; t < 5; ++t) base(j, t) = normal(rng);
  auto ds = testutil::make_panel(cohorts, 5, [&](int j, int t) { return base(j, t - 1); });

  DidOptions opt;
  auto att = group_time_att(ds, 3, 4, opt);

  SUBCASE("adding a constant changes nothing") {
    auto shifted = testutil::make_panel(cohorts, 5,
                                        [&](int j, int t) { return base(j, t - 1) + 100.0; });
    auto att2 = group_time_att(shifted, 3, 4, opt);
    CHECK(att2.estimate == doctest::Approx(att.estimate).epsilon(1e-10));
  }

  SUBCASE("permuting units permutes influence, keeps estimate and se") {
    std::vector<int> perm = {4, 2, 0, 5, 1, 3};  // new index -> old index
    std::vector<int> cohorts_p(6);
    for (int j = 0; j < 6; ++j) cohorts_p[j] = cohorts[perm[j]];
    auto permuted = testutil::make_panel(
        cohorts_p, 5, [&](int j, int t) { return base(perm[j], t - 1); });
    auto att2 = group_time_att(permuted, 3, 4, opt);
    CHECK(att2.estimate == doctest::Approx(att.estimate).epsilon(1e-12));
    CHECK(att2.se == doctest::Approx(att.se).epsilon(1e-12));
    for (int j = 0; j < 6; ++j)
      CHECK(att2.influence(j) == doctest::Approx(att.influence(perm[j])).epsilon(1e-10));
  }
}

TEST_CASE("surface admissibility bookkeeping") {
  SUBCASE("single cohort g=5, T=8: cells for t in 2..8 except 4") {
    auto ds = testutil::make_panel({5, 5, kNever, kNever}, 8,
                                   [](int j, int t) { return j + 0.1 * t; });
    auto surface = att_surface(ds, DidOptions{});
    std::set<int> ts;
    for (const auto& cell : surface.cells) {
      CHECK(cell.g == 5);
      ts.insert(cell.t);
    }
    CHECK(ts == std::set<int>{2, 3, 5, 6, 7, 8});
    CHECK(surface.failures.empty());
  }

  SUBCASE("no never-treated units: every never-control cell fails") {
    auto ds = testutil::make_panel({3, 3, 5, 5}, 6, [](int j, int t) { return j + t; });
    DidOptions opt;
    opt.control_group = ControlGroup::kNeverTreated;
    auto surface = att_surface(ds, opt);
    CHECK(surface.cells.empty());
    CHECK(!surface.failures.empty());
  }

  SUBCASE("not-yet-treated pools shrink as t passes later cohorts") {
    // Cohorts 3, 5, 7 and two never-treated units, T = 8.
    auto ds = testutil::make_panel({3, 5, 7, kNever, kNever}, 8,
                                   [](int j, int t) { return 0.3 * j + 0.05 * t; });
    DidOptions opt;
    opt.control_group = ControlGroup::kNotYetTreated;
    // Cell (g=3, t=4): controls need cohort > max(t,g)=4, so cohorts 5 and 7
    // qualify alongside the never-treated.
    auto early = group_time_att(ds, 3, 4, opt);
    CHECK(early.n_control == 4);
    // Cell (g=3, t=5): the cohort-5 unit is treated by t, cohort 7 still clean.
    auto mid = group_time_att(ds, 3, 5, opt);
    CHECK(mid.n_control == 3);
    // Cell (g=3, t=7): only the never-treated remain.
    auto late = group_time_att(ds, 3, 7, opt);
    CHECK(late.n_control == 2);
  }
}

TEST_CASE("error paths") {
  SUBCASE("missing reference period") {
    auto ds = two_by_two();
    DidOptions opt;
    opt.delta = 1;  // g - delta - 1 = 0
    CHECK_THROWS_AS(group_time_att(ds, 2, 2, opt), ValidationError);
  }
  SUBCASE("reference period itself is rejected") {
    auto ds = testutil::make_panel({3, kNever}, 4, [](int j, int t) { return j + t; });
    CHECK_THROWS_AS(group_time_att(ds, 3, 2, DidOptions{}), ValidationError);
  }
  SUBCASE("overlap failure raises OverlapError") {
    // A covariate that perfectly separates cohort membership: the propensity
    // fit diverges and the failure surfaces as an overlap error.
    std::vector<int> cohorts = {2, 2, 2, kNever, kNever, kNever, kNever, kNever};
    std::vector<double> x = {4.0, 4.1, 3.9, -4.0, -4.2, -3.9, -4.1, -4.05};
    auto ds = testutil::make_panel(cohorts, 2, [](int j, int t) { return j + t; });
    testutil::add_static_covariate(ds, "x", x);
    DidOptions opt;
    opt.covariates = {"x"};
    CHECK_THROWS_AS(group_time_att(ds, 2, 2, opt), OverlapError);
  }
}

TEST_CASE("simultaneous bands cover a flat truth in most replications") {
  // Homogeneous effect tau = 1: the whole post-treatment curve must sit
  // inside the simultaneous band in at least 90% of replications at the 95%
  // level (joint coverage, so the nominal rate applies to the full curve).
  const int reps = 120;
  int covered = 0;
  std::vector<int> cohorts(80, kNever);
  for (int j = 0; j < 12; ++j) cohorts[j] = 5;
  for (int j = 12; j < 24; ++j) cohorts[j] = 8;
  for (int rep = 0; rep < reps; ++rep) {
    std::mt19937_64 rng(9000 + rep);
    std::normal_distribution<double> normal;
    auto ds = testutil::make_panel(cohorts, 12, [&](int j, int t) {
      double tau = (cohorts[j] != kNever && t >= cohorts[j]) ? 1.0 : 0.0;
      return 0.3 * j + 0.1 * t + 0.4 * normal(rng) + tau;
    });
    AggregateOptions agg;
    agg.e_min = 0;
    agg.e_max = 6;
    agg.bootstrap_reps = 300;
    agg.seed = 9000 + rep;
    auto res = aggregate_att_surface(att_surface(ds, DidOptions{}), ds, agg);
    bool all_inside = true;
    for (const auto& entry : res.entries)
      if (1.0 < entry.sim_low || 1.0 > entry.sim_high) all_inside = false;
    if (all_inside) ++covered;
  }
  CHECK(static_cast<double>(covered) / reps >= 0.90);
}

TEST_CASE("anticipation shifts the base period") {
  // With delta = 1 the comparison runs from g-2; effects present at g-1
  // (anticipation) count as treatment.
  auto ds = testutil::make_panel({4, kNever}, 5, [](int j, int t) {
    if (j == 1) return 1.0;                    // flat control
    return t >= 3 ? 5.0 : 1.0;                 // effect starts one period early
  });
  DidOptions opt;
  opt.delta = 1;
  auto att = group_time_att(ds, 4, 4, opt);  // base = 4 - 1 - 1 = 2
  CHECK(att.estimate == doctest::Approx(4.0).epsilon(1e-12));
  auto placebo = group_time_att(ds, 4, 3, opt);  // t = g - delta: anticipation cell
  CHECK(placebo.estimate == doctest::Approx(4.0).epsilon(1e-12));
}
