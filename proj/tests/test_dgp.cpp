#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <vector>

#include "eventcausal/dgp.hpp"
#include "eventcausal/errors.hpp"

using namespace eventcausal;
using Catch::Matchers::WithinAbs;

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

SimDesign small_design() {
  SimDesign d;
  d.n_firms = 40;
  d.n_pre = 59;
  d.n_post = 5;
  d.seed = 555;
  return d;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  double m = mean_of(v), s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

TEST_CASE("generate is bit-deterministic under the seed") {
  SimDesign d = small_design();
  SimOutput a = generate(d);
  SimOutput b = generate(d);
  REQUIRE(a.panel.values.rows() == b.panel.values.rows());
  CHECK(a.panel.values == b.panel.values);
  CHECK(a.factors.values == b.factors.values);
  CHECK(a.truth.event_period == b.truth.event_period);
  CHECK(a.truth.treated_ids == b.truth.treated_ids);

  d.seed += 1;
  SimOutput c = generate(d);
  CHECK(a.panel.values != c.panel.values);
}

TEST_CASE("every cell satisfies the factor equation exactly") {
  SimDesign d = small_design();
  SimOutput s = generate(d);
  const int event_pos = [&] {
    for (int t = 0; t < s.factors.n_times(); ++t)
      if (s.factors.times[t] == s.truth.event_period) return t;
    return -1;
  }();
  REQUIRE(event_pos >= 0);
  for (int i = 0; i < s.panel.n_securities(); ++i) {
    const bool treated = s.truth.treated_ids.count(s.panel.securities[i]) > 0;
    for (int t = 0; t < s.panel.n_times(); ++t) {
      double r = s.factors.risk_free(t) +
                 s.truth.loadings(i, 0) * s.factors.values(t, 0) +
                 s.truth.loadings(i, 1) * s.factors.values(t, 1) + s.truth.eps(i, t);
      if (treated && t == event_pos) r += d.effect_size;
      CHECK(s.panel.values(i, t) == r);
    }
  }
}

TEST_CASE("degenerate design produces only the treatment effect") {
  SimDesign d;
  d.n_firms = 10;
  d.n_pre = 10;
  d.n_post = 3;
  d.noise_sd = 0.0;
  d.loading_sd = 0.0;
  d.seed = 77;
  // Zero out the factor draws entirely.
  d.factor_source.synth.mean_mkt = 0.0;
  d.factor_source.synth.iqr_mkt = 0.0;
  d.factor_source.synth.mean_smb = 0.0;
  d.factor_source.synth.iqr_smb = 0.0;
  d.factor_source.synth.rf_daily = 0.0;
  SimOutput s = generate(d);
  CHECK(s.truth.eps.isZero(0.0));
  const int event_pos = d.n_pre;
  for (int i = 0; i < 10; ++i) {
    bool treated = s.truth.treated_ids.count(s.panel.securities[i]) > 0;
    for (int t = 0; t < s.panel.n_times(); ++t) {
      double expect = (treated && t == event_pos) ? 0.03 : 0.0;
      CHECK(s.panel.values(i, t) == expect);
    }
  }
}

TEST_CASE("fixed timing always lands on the designated day") {
  SimDesign d;  // defaults: 239 pre periods, times labeled 1..250
  d.n_firms = 5;
  for (std::uint64_t seed : {1ull, 2ull, 99ull}) {
    d.seed = seed;
    SimOutput s = generate(d);
    CHECK(s.truth.event_period == 240);
    CHECK(s.schedule.anticipation_delta == 0);
  }
}

TEST_CASE("random assignment hits the configured share on average") {
  SimDesign d;
  std::mt19937_64 rng(2024);
  Eigen::MatrixXd loadings = Eigen::MatrixXd::Constant(500, 2, 1.0);
  double total = 0.0;
  const int reps = 10000;
  for (int r = 0; r < reps; ++r)
    total += static_cast<double>(assign_treatment(d, loadings, rng).size());
  double mean_count = total / reps;
  CHECK(mean_count > 49.0);
  CHECK(mean_count < 51.0);
}

TEST_CASE("logit assignment matches the closed-form rate at homogeneous loadings") {
  SimDesign d;
  d.assignment = Assignment::LogitOnSmb;
  std::mt19937_64 rng(4048);
  Eigen::MatrixXd loadings = Eigen::MatrixXd::Constant(500, 2, 1.0);
  // With every beta at the mean, p = exp(ln 0.1)/(1+exp(ln 0.1)) = 1/11.
  double total = 0.0;
  const int reps = 4000;
  for (int r = 0; r < reps; ++r)
    total += static_cast<double>(assign_treatment(d, loadings, rng).size());
  double rate = total / (reps * 500.0);
  double se = std::sqrt((1.0 / 11.0) * (10.0 / 11.0) / (reps * 500.0));
  CHECK(std::abs(rate - 1.0 / 11.0) < 5.0 * se);
}

TEST_CASE("logit assignment prefers low smb loadings") {
  SimDesign d;
  d.assignment = Assignment::LogitOnSmb;
  std::mt19937_64 rng(7);
  const int N = 400;
  Eigen::MatrixXd loadings(N, 2);
  for (int i = 0; i < N; ++i) {
    loadings(i, 0) = 1.0;
    loadings(i, 1) = i < N / 2 ? 0.5 : 1.5;  // mean exactly 1
  }
  int low = 0, high = 0;
  const int reps = 2000;
  for (int r = 0; r < reps; ++r)
    for (int row : assign_treatment(d, loadings, rng))
      (row < N / 2 ? low : high) += 1;
  // Closed form: p(0.5) ~ 0.240, p(1.5) ~ 0.031 -> low dominates by far.
  CHECK(low > 4 * high);
  double p_low = static_cast<double>(low) / (reps * N / 2.0);
  double p_high = static_cast<double>(high) / (reps * N / 2.0);
  CHECK_THAT(p_low, WithinAbs(0.2404, 0.01));
  CHECK_THAT(p_high, WithinAbs(0.0307, 0.005));
}

TEST_CASE("rank-logit timing selects high-smb days") {
  SimDesign d;
  d.timing = Timing::RankLogitOnSmb;
  std::mt19937_64 factor_rng(11);
  FactorSeries f = synthetic_factors(d.factor_source.synth, d.n_periods(), factor_rng);

  double uncond = f.values.col(1).mean();
  std::mt19937_64 rng(13);
  std::vector<double> selected;
  const int reps = 10000;
  for (int r = 0; r < reps; ++r) {
    int label = select_timing(d, f, rng);
    int pos = label - f.times.front();
    selected.push_back(f.values(pos, 1));
  }
  double m = mean_of(selected);
  double se = sd_of(selected) / std::sqrt(static_cast<double>(reps));
  CHECK((m - uncond) / se > 5.0);
}

TEST_CASE("rank-logit timing respects the eligibility window") {
  SimDesign d;
  d.timing = Timing::RankLogitOnSmb;
  std::mt19937_64 factor_rng(21);
  FactorSeries f = synthetic_factors(d.factor_source.synth, d.n_periods(), factor_rng);
  std::mt19937_64 rng(22);
  for (int r = 0; r < 2000; ++r) {
    int label = select_timing(d, f, rng);
    int pos = label - f.times.front();
    CHECK(pos >= 1);                            // at least one pre period
    CHECK(pos <= d.n_periods() - 1 - d.n_post);  // full post horizon fits
  }
}

TEST_CASE("rank-logit timing is uniform when every smb value ties") {
  SimDesign d;
  d.timing = Timing::RankLogitOnSmb;
  FactorSeries f;
  f.names = {"Mkt-RF", "SMB"};
  const int T = d.n_periods();
  f.times.resize(T);
  for (int t = 0; t < T; ++t) f.times[t] = t + 1;
  f.values.setZero(T, 2);  // SMB identically zero -> pure tie-break
  f.risk_free.setZero(T);

  const int lo = 1, hi = T - 1 - d.n_post;  // eligible positions
  const int bins = hi - lo + 1;
  std::vector<long> count(static_cast<std::size_t>(bins), 0);
  std::mt19937_64 rng(31);
  const long reps = 100000;
  for (long r = 0; r < reps; ++r) {
    int pos = select_timing(d, f, rng) - 1;
    REQUIRE(pos >= lo);
    REQUIRE(pos <= hi);
    count[static_cast<std::size_t>(pos - lo)] += 1;
  }
  double expect = static_cast<double>(reps) / bins;
  double chi2 = 0.0;
  for (long c : count) {
    double gap = static_cast<double>(c) - expect;
    chi2 += gap * gap / expect;
  }
  // 99th percentile of chi-squared with 238 degrees of freedom.
  CHECK(bins == 239);
  CHECK(chi2 < 291.67519536252456);
}

TEST_CASE("synthetic factors honor configured scale and have fat tails") {
  SyntheticFatTailParams p;
  std::mt19937_64 rng(17);
  FactorSeries f = synthetic_factors(p, 1000000, rng);
  REQUIRE(f.n_times() == 1000000);
  CHECK(f.names == std::vector<std::string>{"Mkt-RF", "SMB"});

  std::vector<double> mkt(1000000);
  for (int t = 0; t < 1000000; ++t) mkt[t] = f.values(t, 0);
  std::sort(mkt.begin(), mkt.end());
  double iqr = mkt[749999] - mkt[249999];
  CHECK_THAT(iqr, WithinAbs(p.iqr_mkt, 0.0005));

  double m = mean_of(mkt);
  CHECK_THAT(m, WithinAbs(p.mean_mkt, 0.001));

  // Excess kurtosis far above the normal benchmark.
  double s2 = 0.0, s4 = 0.0;
  for (double x : mkt) {
    double c = x - m;
    s2 += c * c;
    s4 += c * c * c * c;
  }
  s2 /= 1000000.0;
  s4 /= 1000000.0;
  CHECK(s4 / (s2 * s2) > 5.0);

  CHECK(f.risk_free.minCoeff() == p.rf_daily);
  CHECK(f.risk_free.maxCoeff() == p.rf_daily);
}

TEST_CASE("file-sourced factors draw one contiguous block") {
  SyntheticFatTailParams p;
  std::mt19937_64 hist_rng(41);
  FactorSeries history = synthetic_factors(p, 1000, hist_rng);

  SimDesign d;
  d.factor_source.kind = FactorSource::Kind::File;
  d.seed = 4242;
  std::mt19937_64 rng(d.seed);
  FactorSeries block = sample_factors(d, &history, rng);
  REQUIRE(block.n_times() == d.n_periods());
  // Times are relabeled 1..n.
  CHECK(block.times.front() == 1);
  CHECK(block.times.back() == d.n_periods());

  // Find the start row in the history and confirm contiguity of all columns.
  int start = -1;
  for (int t = 0; t + d.n_periods() <= 1000; ++t)
    if (history.values(t, 0) == block.values(0, 0) &&
        history.values(t, 1) == block.values(0, 1)) {
      start = t;
      break;
    }
  REQUIRE(start >= 0);
  for (int t = 0; t < d.n_periods(); ++t) {
    CHECK(block.values(t, 0) == history.values(start + t, 0));
    CHECK(block.values(t, 1) == history.values(start + t, 1));
    CHECK(block.risk_free(t) == history.risk_free(start + t));
  }

  // Same seed -> same block.
  std::mt19937_64 rng2(d.seed);
  FactorSeries again = sample_factors(d, &history, rng2);
  CHECK(again.values == block.values);
}

TEST_CASE("history of exactly the panel length is the only feasible block") {
  SyntheticFatTailParams p;
  std::mt19937_64 hist_rng(43);
  SimDesign d;
  FactorSeries history = synthetic_factors(p, d.n_periods(), hist_rng);
  std::mt19937_64 rng(9);
  FactorSeries block = sample_factors(d, &history, rng);
  CHECK(block.values == history.values);

  FactorSeries short_hist = synthetic_factors(p, d.n_periods() - 1, hist_rng);
  std::mt19937_64 rng2(9);
  expect_errc([&] { sample_factors(d, &short_hist, rng2); }, errc::history_too_short);
}

TEST_CASE("treated set is never empty even at tiny shares") {
  SimDesign d;
  d.n_firms = 2;
  d.n_pre = 10;
  d.n_post = 2;
  d.treat_share = 0.001;
  d.seed = 3;
  SimOutput s = generate(d);
  CHECK(s.truth.treated_ids.size() >= 1);
}

TEST_CASE("design validation rejects bad parameters") {
  SimDesign d;
  d.n_firms = 1;
  expect_errc([&] { validate_design(d); }, errc::invalid_config);
  d = SimDesign{};
  d.treat_share = 0.0;
  expect_errc([&] { validate_design(d); }, errc::invalid_config);
  d = SimDesign{};
  d.treat_share = 1.0;
  expect_errc([&] { validate_design(d); }, errc::invalid_config);
  d = SimDesign{};
  d.noise_sd = -0.1;
  expect_errc([&] { validate_design(d); }, errc::invalid_config);
  d = SimDesign{};
  d.factor_source.synth.nu = 1.0;
  expect_errc([&] { validate_design(d); }, errc::invalid_config);
  d = SimDesign{};
  d.n_pre = 0;
  expect_errc([&] { validate_design(d); }, errc::invalid_config);
}

TEST_CASE("firm identifiers are stable and zero-padded") {
  SimDesign d = small_design();
  SimOutput s = generate(d);
  CHECK(s.panel.securities.front() == "F0001");
  CHECK(s.panel.securities.back() == "F0040");
}
