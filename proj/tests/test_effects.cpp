#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <vector>

#include "eventcausal/dgp.hpp"
#include "eventcausal/effects.hpp"
#include "eventcausal/errors.hpp"
#include "eventcausal/estimators.hpp"
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

CohortEffect make_effect(int cohort, const std::map<int, double>& tau) {
  CohortEffect e;
  e.cohort = cohort;
  e.per_period = tau;
  for (const auto& [t, v] : tau) {
    e.treated_mean[t] = v;
    e.counterfactual[t] = 0.0;
  }
  return e;
}

}  // namespace

TEST_CASE("event-time aggregation weights cohorts by size") {
  // Cohort 5 (2 firms): 0.010, 0.002.  Cohort 7 (3 firms): 0.004, -0.001.
  std::vector<CohortEffect> effs = {
      make_effect(5, {{5, 0.010}, {6, 0.002}}),
      make_effect(7, {{7, 0.004}, {8, -0.001}}),
  };
  CohortWeights w;
  w.weights[5] = 2.0 / 5.0;
  w.weights[7] = 3.0 / 5.0;

  EffectSeries s = aggregate_event_time(effs, w, 1);
  CHECK(s.event_time_att.at(0) == 0.0063999999999999994);
  CHECK(s.event_time_att.at(1) == 0.0002000000000000001);
  CHECK(s.cumulative_att.at(0) == s.event_time_att.at(0));
  CHECK(s.cumulative_att.at(1) == 0.0066);
  // Cumulative values are running partial sums of the event-time path.
  double run = 0.0;
  for (const auto& [k, v] : s.event_time_att) {
    run += v;
    CHECK(s.cumulative_att.at(k) == run);
  }
}

TEST_CASE("aggregation error paths") {
  std::vector<CohortEffect> effs = {make_effect(5, {{5, 0.01}})};
  CohortWeights w;
  w.weights[5] = 1.0;

  expect_errc([&] { aggregate_event_time({}, w, 0); }, errc::empty_cohort);
  expect_errc([&] { aggregate_event_time(effs, w, -1); }, errc::invalid_config);
  // Horizon runs past the cohort's estimates.
  expect_errc([&] { aggregate_event_time(effs, w, 1); }, errc::missing_horizon);
  // No weight recorded for the cohort.
  CohortWeights none;
  expect_errc([&] { aggregate_event_time(effs, none, 0); }, errc::missing_horizon);
}

TEST_CASE("geometric and arithmetic effects differ by a second-order term") {
  // Two treated firms, two horizons, a known counterfactual path.
  ReturnsPanel p;
  p.securities = {"A", "B"};
  p.times = {1, 2};
  p.values.resize(2, 2);
  p.values << 0.10, -0.05, 0.02, 0.03;
  EventSchedule sched;
  sched.event_time["A"] = 1;
  sched.event_time["B"] = 1;
  CohortWeights w;
  w.weights[1] = 1.0;
  std::map<int, std::map<int, double>> cf = {{1, {{1, 0.04}, {2, -0.01}}}};

  // Arithmetic path through the aggregator.
  CohortEffect e;
  e.cohort = 1;
  for (int j = 0; j < 2; ++j) {
    double tmean = (p.values(0, j) + p.values(1, j)) / 2.0;
    e.treated_mean[p.times[j]] = tmean;
    e.counterfactual[p.times[j]] = cf[1][p.times[j]];
    e.per_period[p.times[j]] = tmean - cf[1][p.times[j]];
  }
  EffectSeries s = aggregate_event_time({e}, w, 1);
  double att = s.cumulative_att.at(1);
  CHECK_THAT(att, WithinAbs(0.020000000000000004, 1e-16));

  double geo = geometric_att(p, sched, cf, w, 1);
  CHECK_THAT(geo, WithinAbs(0.017518780177469367, 1e-16));

  // Second-order expansion of the log difference.
  double second = 0.0;
  for (int j = 0; j < 2; ++j) {
    double msq = (p.values(0, j) * p.values(0, j) + p.values(1, j) * p.values(1, j)) / 2.0;
    second += msq - cf[1][p.times[j]] * cf[1][p.times[j]];
  }
  second *= 0.5;
  double gap = std::abs(geo - (att - second));
  CHECK_THAT(att - second, WithinAbs(0.017400000000000002, 1e-15));
  CHECK_THAT(gap, WithinAbs(0.00011878017746936448, 1e-15));
  // Third-order remainder bound: 2 max|x|^3 (H+1).
  CHECK(gap < 2.0 * std::pow(0.10, 3) * 2);
}

TEST_CASE("pure volatility produces geometric drag with zero arithmetic effect") {
  // One firm alternating +/-20% against a flat-zero counterfactual.
  ReturnsPanel p;
  p.securities = {"A"};
  p.times = {1, 2, 3, 4};
  p.values.resize(1, 4);
  p.values << 0.2, -0.2, 0.2, -0.2;
  EventSchedule sched;
  sched.event_time["A"] = 1;
  CohortWeights w;
  w.weights[1] = 1.0;
  std::map<int, std::map<int, double>> cf = {
      {1, {{1, 0.0}, {2, 0.0}, {3, 0.0}, {4, 0.0}}}};

  CohortEffect e = make_effect(1, {{1, 0.2}, {2, -0.2}, {3, 0.2}, {4, -0.2}});
  EffectSeries s = aggregate_event_time({e}, w, 3);
  CHECK(s.cumulative_att.at(3) == 0.0);  // exact cancellation

  double geo = geometric_att(p, sched, cf, w, 3);
  CHECK_THAT(geo, WithinAbs(-0.081643989040510234, 2e-16));
  // Well past the half-variance drag threshold.
  CHECK(geo < -0.5 * 0.04 * 4 / 2.0);
}

TEST_CASE("geometric effect guards its domain") {
  ReturnsPanel p;
  p.securities = {"A"};
  p.times = {1, 2};
  p.values.resize(1, 2);
  p.values << 0.1, -1.0;  // total loss in period 2
  EventSchedule sched;
  sched.event_time["A"] = 1;
  CohortWeights w;
  w.weights[1] = 1.0;
  std::map<int, std::map<int, double>> cf = {{1, {{1, 0.0}, {2, 0.0}}}};

  expect_errc([&] { geometric_att(p, sched, cf, w, 1); },
              errc::non_positive_gross_return);
  // Horizon 0 never touches the bad period.
  CHECK_THAT(geometric_att(p, sched, cf, w, 0), WithinAbs(std::log1p(0.1), 1e-15));

  std::map<int, std::map<int, double>> bad_cf = {{1, {{1, -1.0}, {2, 0.0}}}};
  expect_errc([&] { geometric_att(p, sched, bad_cf, w, 0); },
              errc::non_positive_gross_return);

  expect_errc([&] { geometric_att(p, sched, cf, w, -1); }, errc::invalid_config);
  expect_errc([&] { geometric_att(p, sched, {}, w, 0); }, errc::missing_horizon);
  std::map<int, std::map<int, double>> sparse = {{1, {{1, 0.0}}}};
  expect_errc([&] { geometric_att(p, sched, sparse, w, 1); }, errc::missing_horizon);

  // Horizon walking off the panel axis (clean values so only the axis fails).
  ReturnsPanel ok = p;
  ok.values << 0.1, 0.2;
  expect_errc([&] { geometric_att(ok, sched, cf, w, 5); }, errc::missing_horizon);

  EventSchedule empty;
  empty.event_time["A"] = std::nullopt;
  expect_errc([&] { geometric_att(p, empty, cf, w, 0); }, errc::empty_cohort);
}

namespace {

// Minimal truth bundle: one firm, loadings (1, 0.8), zero alpha and noise.
struct MicroTruth {
  SimTruth truth;
  ReturnsPanel panel;
  FactorSeries factors;
};

MicroTruth make_micro() {
  MicroTruth m;
  m.truth.alphas = Eigen::VectorXd::Zero(1);
  m.truth.loadings.resize(1, 2);
  m.truth.loadings << 1.0, 0.8;
  m.truth.eps = Eigen::MatrixXd::Zero(1, 1);
  m.panel.securities = {"A"};
  m.panel.times = {1};
  m.panel.values = Eigen::MatrixXd::Zero(1, 1);
  m.factors.times = {1};
  m.factors.names = {"Mkt-RF", "SMB"};
  m.factors.values.resize(1, 2);
  m.factors.values << 0.02, -0.01;
  m.factors.risk_free = Eigen::VectorXd::Zero(1);
  return m;
}

}  // namespace

TEST_CASE("analytic abnormal-return bias on a known miss") {
  MicroTruth m = make_micro();
  FittedCohortParams fitted;
  fitted.alpha = 0.001;
  fitted.betas = Eigen::VectorXd::Constant(1, 0.9);
  fitted.observed_idx = {0};

  BiasDecomposition d = analytic_bias_ar(m.truth, m.panel, m.factors, {"A"}, fitted, 1);
  CHECK_THAT(d.total, WithinRel(-0.0070000000000000019, 1e-12));
  CHECK(d.total == d.alpha_gap + d.loading_gap_term + d.noise_term);
  CHECK_THAT(d.alpha_gap, WithinAbs(-0.001, 1e-18));
  CHECK_THAT(d.noise_term, WithinAbs(0.0, 1e-18));

  // Validation: mismatched beta/index lengths, bad columns, bad period.
  FittedCohortParams broken = fitted;
  broken.observed_idx = {0, 1};
  expect_errc([&] { analytic_bias_ar(m.truth, m.panel, m.factors, {"A"}, broken, 1); },
              errc::length_mismatch);
  FittedCohortParams oob = fitted;
  oob.observed_idx = {7};
  expect_errc([&] { analytic_bias_ar(m.truth, m.panel, m.factors, {"A"}, oob, 1); },
              errc::invalid_config);
  expect_errc([&] { analytic_bias_ar(m.truth, m.panel, m.factors, {"A"}, fitted, 9); },
              errc::misaligned);
  expect_errc([&] { analytic_bias_ar(m.truth, m.panel, m.factors, {}, fitted, 1); },
              errc::empty_cohort);

  SimTruth no_truth;
  expect_errc([&] { analytic_bias_ar(no_truth, m.panel, m.factors, {"A"}, fitted, 1); },
              errc::truth_unavailable);
}

TEST_CASE("omitted-loading bias scales with the omitted exposure") {
  MicroTruth m = make_micro();
  FittedCohortParams fitted;
  fitted.alpha = 0.0;
  fitted.betas = Eigen::VectorXd::Constant(1, 1.0);  // observed loading matched
  fitted.observed_idx = {0};

  double prev = -1.0;
  for (double c : {0.0, 0.5, 1.0, 2.0, 4.0}) {
    m.truth.loadings(0, 1) = c;
    BiasDecomposition d =
        analytic_bias_ar(m.truth, m.panel, m.factors, {"A"}, fitted, 1);
    CHECK_THAT(d.alpha_gap, WithinAbs(0.0, 1e-18));
    CHECK_THAT(d.loading_gap_term, WithinAbs(c * -0.01, 1e-15));
    CHECK(std::abs(d.total) >= prev);
    prev = std::abs(d.total);
  }
}

TEST_CASE("control-mean bias decomposition matches hand computation") {
  SimTruth truth;
  truth.alphas = Eigen::VectorXd::Zero(4);
  truth.loadings.resize(4, 2);
  truth.loadings << 1.2, 1.0,   // treated A
      0.8, 0.6,                 // treated B
      1.0, 0.1,                 // control C
      1.0, 0.3;                 // control D
  truth.eps.resize(4, 1);
  truth.eps << 0.004, -0.002, 0.001, -0.003;

  ReturnsPanel p;
  p.securities = {"A", "B", "C", "D"};
  p.times = {1};
  p.values = Eigen::MatrixXd::Zero(4, 1);
  FactorSeries f;
  f.times = {1};
  f.names = {"Mkt-RF", "SMB"};
  f.values.resize(1, 2);
  f.values << 0.02, -0.01;
  f.risk_free = Eigen::VectorXd::Zero(1);

  BiasDecomposition d =
      analytic_bias_cont(truth, p, f, {"A", "B"}, {"C", "D"}, 1);
  CHECK_THAT(d.alpha_gap, WithinAbs(0.0, 1e-18));
  // (mean treated beta - mean control beta) . F
  double want_load = (1.0 - 1.0) * 0.02 + (0.8 - 0.2) * -0.01;
  CHECK_THAT(d.loading_gap_term, WithinAbs(want_load, 1e-15));
  CHECK_THAT(d.noise_term, WithinAbs(0.001 - (-0.001), 1e-15));
  CHECK(d.total == d.alpha_gap + d.loading_gap_term + d.noise_term);

  expect_errc([&] { analytic_bias_cont(truth, p, f, {"A"}, {}, 1); },
              errc::empty_controls);
  expect_errc([&] { analytic_bias_cont(truth, p, f, {}, {"C"}, 1); },
              errc::empty_cohort);
  expect_errc([&] { analytic_bias_cont(truth, p, f, {"A"}, {"C"}, 3); },
              errc::misaligned);
}

TEST_CASE("realized estimator error equals its analytic decomposition") {
  // Simulated panel with noise: the decomposition is an algebraic identity
  // per (cohort, period), so realized and analytic biases agree to rounding.
  SimDesign d;
  d.n_firms = 60;
  d.n_pre = 79;
  d.n_post = 6;
  d.seed = 321;
  SimOutput out = generate(d);
  ReturnsPanel excess = to_excess(out.panel, out.factors);

  auto check_periods = [&](const CohortEffect& e, auto analytic) {
    for (int t = out.truth.event_period - 3; t <= out.truth.event_period + 6; ++t) {
      double truth_att = t == out.truth.event_period ? 0.03 : 0.0;
      double realized = e.per_period.at(t) - truth_att;
      CHECK_THAT(realized, WithinAbs(analytic(t), 1e-12));
    }
  };

  // Two-factor abnormal returns.
  auto ar = estimate(excess, &out.factors, out.schedule,
                     EstimatorSpec::parse("factor:Mkt-RF,SMB"));
  FittedCohortParams fitted;
  fitted.alpha = ar.front().implied_alpha;
  fitted.betas = ar.front().implied_loadings;
  fitted.observed_idx = {0, 1};
  check_periods(ar.front(), [&](int t) {
    return analytic_bias_ar(out.truth, excess, out.factors,
                            ar.front().treated_ids, fitted, t)
        .total;
  });

  // Difference in means.
  auto dm = estimate(excess, &out.factors, out.schedule,
                     EstimatorSpec::parse("diff_means"));
  check_periods(dm.front(), [&](int t) {
    return analytic_bias_cont(out.truth, excess, out.factors,
                              dm.front().treated_ids, dm.front().control_ids, t)
        .total;
  });
}

TEST_CASE("long-run drift from a persistent loading gap") {
  Eigen::VectorXd gap = Eigen::VectorXd::Constant(1, -0.1);
  Eigen::VectorXd mean = Eigen::VectorXd::Constant(1, 0.06);
  CHECK(long_run_drift(gap, mean, 3) == -0.018);
  CHECK(long_run_drift(gap, mean, 0) == 0.0);

  // Multi-component accumulation follows column order.
  Eigen::VectorXd g2(2), m2(2);
  g2 << -0.1, 0.25;
  m2 << 0.06, -0.002;
  double want = -0.1 * (3.0 * 0.06);
  want += 0.25 * (3.0 * -0.002);
  CHECK(long_run_drift(g2, m2, 3) == want);

  expect_errc([&] { long_run_drift(g2, mean, 3); }, errc::length_mismatch);
}
