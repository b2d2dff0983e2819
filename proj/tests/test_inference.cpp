#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "eventcausal/dgp.hpp"
#include "eventcausal/errors.hpp"
#include "eventcausal/estimators.hpp"
#include "eventcausal/inference.hpp"
#include "eventcausal/panel.hpp"

using namespace eventcausal;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

template <class F>
void expect_errc(F&& f, errc code) {
  try {
    f();
    FAIL("expected an Error to be thrown");
  } catch (const Error& e) {
    CHECK(e.code() == code);
  }
}

Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<int>(xs.size()));
  int i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

}  // namespace

TEST_CASE("welch interval on samples with exact rational moments") {
  // var = 0.5 and 2.0 exactly; se^2 = 0.5/2 + 2/2 = 1.25, df = 25/17.
  Eigen::VectorXd a = vec({0.5, -0.5});
  Eigen::VectorXd b = vec({1.0, -1.0});
  IntervalEstimate iv = ttest_interval(a, b);
  CHECK(iv.point == 0.0);
  CHECK(iv.se == std::sqrt(1.25));
  CHECK(iv.df == 25.0 / 17.0);
  CHECK(iv.level == 0.95);
  CHECK(iv.method == IntervalEstimate::Method::TTest);
}

TEST_CASE("welch interval matches the frozen unequal-variance reference") {
  // n1=10 with variance exactly 1, n2=20 with variance exactly 4.
  Eigen::VectorXd a = vec({1.5, -1.5, 1.5, -1.5, 0, 0, 0, 0, 0, 0});
  Eigen::VectorXd b = vec({6.0, -6.0, 1.0, -1.0, 1.0, -1.0, 0, 0, 0, 0,
                           0, 0, 0, 0, 0, 0, 0, 0, 0, 0});
  IntervalEstimate iv = ttest_interval(a, b);
  CHECK(iv.point == 0.0);
  CHECK(iv.se == 0.54772255750516619);
  CHECK(iv.df == 27.981818181818184);
  double tcrit = (iv.ci_hi - iv.point) / iv.se;
  CHECK_THAT(tcrit, WithinAbs(2.0484671071316645, 1e-12));
  // Equal-sample shortcut se = s*sqrt(2/n) agrees with the general formula.
  CHECK(std::sqrt(0.49 / 12 + 0.49 / 12) == 0.28577380332470409);
}

TEST_CASE("welch degrees of freedom collapse to n1-1 against a constant") {
  Eigen::VectorXd a(20);
  a.setZero();
  a(0) = 1.5;
  a(1) = -1.5;
  a(2) = 1.5;
  a(3) = -1.5;
  Eigen::VectorXd b = vec({0.25, 0.25});
  IntervalEstimate iv = ttest_interval(a, b);
  CHECK_THAT(iv.df, WithinAbs(19.0, 1e-12));
  CHECK(iv.point == -0.25);
  double tcrit = (iv.ci_hi - iv.point) / iv.se;
  CHECK_THAT(tcrit, WithinAbs(2.093024054408263, 1e-11));
}

TEST_CASE("welch moments agree with an extended-precision rebuild") {
  Eigen::VectorXd a = vec({5, 1, -2, 4, -8, 3, 2, -6});
  Eigen::VectorXd b = vec({2, -1, 7, -4, 0, 3});
  IntervalEstimate iv = ttest_interval(a, b);

  auto stats = [](const Eigen::VectorXd& v, long double* mean, long double* var) {
    long double s = 0.0L;
    for (int i = 0; i < v.size(); ++i) s += static_cast<long double>(v(i));
    *mean = s / static_cast<long double>(v.size());
    long double q = 0.0L;
    for (int i = 0; i < v.size(); ++i) {
      long double d = static_cast<long double>(v(i)) - *mean;
      q += d * d;
    }
    *var = q / static_cast<long double>(v.size() - 1);
  };
  long double m1, v1, m2, v2;
  stats(a, &m1, &v1);
  stats(b, &m2, &v2);
  long double u1 = v1 / 8.0L, u2 = v2 / 6.0L;
  long double se = std::sqrt(u1 + u2);
  long double df = (u1 + u2) * (u1 + u2) / (u1 * u1 / 7.0L + u2 * u2 / 5.0L);
  CHECK_THAT(iv.point, WithinRel(static_cast<double>(m1 - m2), 1e-15));
  CHECK_THAT(iv.se, WithinRel(static_cast<double>(se), 1e-15));
  CHECK_THAT(iv.df, WithinRel(static_cast<double>(df), 1e-14));
}

TEST_CASE("degenerate zero-variance samples give a point interval") {
  Eigen::VectorXd a = vec({0.25, 0.25, 0.25});
  Eigen::VectorXd b = vec({0.125, 0.125});
  IntervalEstimate iv = ttest_interval(a, b);
  CHECK(iv.se == 0.0);
  CHECK(iv.df == 3.0);  // n1 + n2 - 2 fallback
  CHECK(iv.point == 0.125);
  CHECK(iv.ci_lo == iv.point);
  CHECK(iv.ci_hi == iv.point);
}

TEST_CASE("welch input validation and recentering") {
  expect_errc([&] { ttest_interval(vec({1.0}), vec({1.0, 2.0})); },
              errc::sample_too_small);
  expect_errc([&] { ttest_interval(vec({1.0, 2.0}), vec({1.0})); },
              errc::sample_too_small);

  IntervalEstimate iv = ttest_interval(vec({0.5, -0.5, 0.25}), vec({1.0, -1.0}));
  double width = iv.ci_hi - iv.ci_lo;
  IntervalEstimate moved = recentered(iv, 0.042);
  CHECK(moved.point == 0.042);
  CHECK_THAT(moved.ci_hi - moved.ci_lo, WithinAbs(width, 1e-15));
  CHECK_THAT(moved.ci_hi - moved.point, WithinAbs(iv.ci_hi - iv.point, 1e-15));
  CHECK(moved.se == iv.se);
}

TEST_CASE("coverage counts interval hits inclusively") {
  auto mk = [](double lo, double hi) {
    IntervalEstimate iv;
    iv.ci_lo = lo;
    iv.ci_hi = hi;
    return iv;
  };
  std::vector<IntervalEstimate> ivs = {mk(0, 1), mk(0, 1), mk(0, 1), mk(-2, -1)};
  std::vector<double> truths = {0.5, 1.0, 1.5, 0.0};
  CHECK(coverage(ivs, truths) == 0.5);  // hit, boundary hit, miss, miss

  expect_errc([&] { coverage(ivs, {0.5}); }, errc::length_mismatch);
  expect_errc([&] { coverage({}, {}); }, errc::sample_too_small);
}

TEST_CASE("welch intervals cover a true mean difference at their level") {
  std::mt19937_64 rng(424242);
  std::normal_distribution<double> ga(0.3, 1.0), gb(0.0, 1.0);
  const int reps = 2000, n = 30;
  std::vector<IntervalEstimate> ivs;
  ivs.reserve(reps);
  for (int r = 0; r < reps; ++r) {
    Eigen::VectorXd a(n), b(n);
    for (int i = 0; i < n; ++i) a(i) = ga(rng);
    for (int i = 0; i < n; ++i) b(i) = gb(rng);
    ivs.push_back(ttest_interval(a, b));
  }
  double cov = coverage(ivs, std::vector<double>(reps, 0.3));
  CHECK(cov > 0.93);
  CHECK(cov < 0.97);
}

namespace {

struct Sim {
  SimOutput out;
  ReturnsPanel excess;
};

Sim make_sim(std::uint64_t seed, double noise_sd = 0.002, int n_firms = 50,
             int n_pre = 59, int n_post = 4) {
  SimDesign d;
  d.n_firms = n_firms;
  d.n_pre = n_pre;
  d.n_post = n_post;
  d.noise_sd = noise_sd;
  d.seed = seed;
  Sim s;
  s.out = generate(d);
  s.excess = to_excess(s.out.panel, s.out.factors);
  return s;
}

}  // namespace

TEST_CASE("placebo intervals are deterministic in the seed") {
  Sim s = make_sim(21);
  EstimatorSpec spec = EstimatorSpec::parse("diff_means");
  auto a = placebo_intervals(s.excess, &s.out.factors, s.out.schedule, spec, 2, 16, 99);
  auto b = placebo_intervals(s.excess, &s.out.factors, s.out.schedule, spec, 2, 16, 99);
  REQUIRE(a.size() == 3);
  for (const auto& [kappa, iv] : a) {
    CHECK(iv.se == b.at(kappa).se);
    CHECK(iv.point == b.at(kappa).point);
    CHECK(iv.se > 0.0);
    CHECK(iv.n_draws == 16);
    CHECK(iv.method == IntervalEstimate::Method::Placebo);
    CHECK(iv.ci_lo == iv.point - 1.96 * iv.se);
    CHECK(iv.ci_hi == iv.point + 1.96 * iv.se);
  }
  auto c = placebo_intervals(s.excess, &s.out.factors, s.out.schedule, spec, 2, 16, 100);
  bool any_diff = false;
  for (const auto& [kappa, iv] : c)
    if (iv.se != a.at(kappa).se) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("placebo draws depend on labels, not panel row order") {
  Sim s = make_sim(22);
  // Reverse the storage order of every security.
  ReturnsPanel rev;
  rev.times = s.excess.times;
  rev.excess_adjusted = s.excess.excess_adjusted;
  const int n = s.excess.n_securities();
  rev.values.resize(n, s.excess.n_times());
  for (int i = 0; i < n; ++i) {
    rev.securities.push_back(s.excess.securities[n - 1 - i]);
    rev.values.row(i) = s.excess.values.row(n - 1 - i);
  }
  EstimatorSpec spec = EstimatorSpec::parse("diff_means");
  auto a = placebo_intervals(s.excess, &s.out.factors, s.out.schedule, spec, 2, 12, 5);
  auto b = placebo_intervals(rev, &s.out.factors, s.out.schedule, spec, 2, 12, 5);
  for (const auto& [kappa, iv] : a) {
    CHECK(iv.se == b.at(kappa).se);
    CHECK(iv.point == b.at(kappa).point);
  }
}

TEST_CASE("placebo preconditions") {
  Sim s = make_sim(23, 0.002, 12, 39, 2);
  EstimatorSpec spec = EstimatorSpec::parse("diff_means");
  expect_errc(
      [&] {
        placebo_intervals(s.excess, &s.out.factors, s.out.schedule, spec, 1, 1, 5);
      },
      errc::invalid_config);

  // Treat 6 of 12: controls (6) are not strictly more than treated.
  EventSchedule crowded = s.out.schedule;
  int flipped = 0;
  for (auto& [id, t] : crowded.event_time)
    if (!t && flipped + static_cast<int>(s.out.truth.treated_ids.size()) < 6) {
      t = s.out.truth.event_period;
      ++flipped;
    }
  REQUIRE(crowded.cohorts().size() == 1);
  expect_errc(
      [&] {
        placebo_intervals(s.excess, &s.out.factors, crowded, spec, 1, 8, 5);
      },
      errc::not_enough_controls);
}

TEST_CASE("factor-structure bootstrap is deterministic and shaped correctly") {
  Sim s = make_sim(24);
  EstimatorSpec spec = EstimatorSpec::parse("gsynth:3");
  GsynthModel model;
  auto effs = gsynth(s.excess, s.out.schedule, spec, &model);
  auto a = gsynth_bootstrap_intervals(s.excess, s.out.schedule, spec, model, effs,
                                      2, 24, 77);
  auto b = gsynth_bootstrap_intervals(s.excess, s.out.schedule, spec, model, effs,
                                      2, 24, 77);
  REQUIRE(a.size() == 3);
  for (const auto& [kappa, iv] : a) {
    CHECK(iv.se == b.at(kappa).se);
    CHECK(iv.pct_lo == b.at(kappa).pct_lo);
    CHECK(iv.pct_hi == b.at(kappa).pct_hi);
    CHECK(iv.se > 0.0);
    CHECK(iv.pct_lo <= iv.pct_hi);
    CHECK(std::isfinite(iv.pct_lo));
    CHECK(iv.n_draws == 24);
    CHECK(iv.method == IntervalEstimate::Method::ParametricBootstrap);
  }
}

TEST_CASE("bootstrap dispersion vanishes without idiosyncratic noise") {
  Sim s = make_sim(25, 0.0);
  EstimatorSpec spec = EstimatorSpec::parse("gsynth:3");
  auto ivs = gsynth_bootstrap_intervals(s.excess, s.out.schedule, spec, 2, 12, 3);
  for (const auto& [kappa, iv] : ivs) CHECK(iv.se < 1e-10);
}

TEST_CASE("bootstrap preconditions") {
  Sim s = make_sim(26);
  EstimatorSpec spec = EstimatorSpec::parse("gsynth:3");
  GsynthModel unfitted;
  expect_errc(
      [&] {
        gsynth_bootstrap_intervals(s.excess, s.out.schedule, spec, unfitted, {}, 1, 8, 1);
      },
      errc::model_not_fitted);

  GsynthModel model;
  auto effs = gsynth(s.excess, s.out.schedule, spec, &model);
  expect_errc(
      [&] {
        gsynth_bootstrap_intervals(s.excess, s.out.schedule, spec, model, effs, 1, 1, 1);
      },
      errc::invalid_config);
}
