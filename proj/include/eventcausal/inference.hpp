#pragma once

// Standard errors and confidence intervals: Welch two-sample t intervals from
// per-firm samples, placebo inference that reassigns event labels among
// control units, and a parametric bootstrap for the factor-structure
// estimator. All procedures are deterministic given their seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include "eventcausal/effects.hpp"
#include "eventcausal/errors.hpp"
#include "eventcausal/estimators.hpp"
#include "eventcausal/panel.hpp"

namespace eventcausal {

struct IntervalEstimate {
  enum class Method { TTest, Placebo, ParametricBootstrap };
  double point = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double level = 0.95;
  Method method = Method::TTest;
  int n_draws = 0;     // repetitions / bootstrap samples behind the interval
  double df = std::numeric_limits<double>::quiet_NaN();      // TTest only
  double pct_lo = std::numeric_limits<double>::quiet_NaN();  // bootstrap percentile
  double pct_hi = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline double sample_mean(const Eigen::VectorXd& v) { return v.mean(); }

inline double sample_var(const Eigen::VectorXd& v) {
  const double m = v.mean();
  return (v.array() - m).square().sum() / static_cast<double>(v.size() - 1);
}

}  // namespace detail

// Welch unequal-variance two-sample interval on the mean difference, with
// Welch–Satterthwaite fractional degrees of freedom and a t critical value.
inline IntervalEstimate ttest_interval(const Eigen::VectorXd& treated,
                                       const Eigen::VectorXd& control,
                                       double level = 0.95) {
  const int n1 = static_cast<int>(treated.size());
  const int n2 = static_cast<int>(control.size());
  if (n1 < 2 || n2 < 2)
    throw Error(errc::sample_too_small, "ttest_interval",
                "both samples need at least 2 observations (have " +
                    std::to_string(n1) + " and " + std::to_string(n2) + ")");
  const double v1 = detail::sample_var(treated) / n1;
  const double v2 = detail::sample_var(control) / n2;

  IntervalEstimate iv;
  iv.method = IntervalEstimate::Method::TTest;
  iv.level = level;
  iv.point = detail::sample_mean(treated) - detail::sample_mean(control);
  iv.se = std::sqrt(v1 + v2);
  const double denom = v1 * v1 / (n1 - 1) + v2 * v2 / (n2 - 1);
  iv.df = denom > 0.0 ? (v1 + v2) * (v1 + v2) / denom
                      : static_cast<double>(n1 + n2 - 2);
  double half = 0.0;
  if (iv.se > 0.0) {
    boost::math::students_t_distribution<double> dist(iv.df);
    half = boost::math::quantile(dist, 0.5 + level / 2.0) * iv.se;
  }
  iv.ci_lo = iv.point - half;
  iv.ci_hi = iv.point + half;
  return iv;
}

// Same interval shifted to a caller-supplied center (used when the point
// estimate of interest is not the raw mean difference of the two samples).
inline IntervalEstimate recentered(IntervalEstimate iv, double point) {
  const double shift = point - iv.point;
  iv.point = point;
  iv.ci_lo += shift;
  iv.ci_hi += shift;
  return iv;
}

// Placebo inference: repeatedly reassign the cohort structure to uniformly
// drawn fake treated sets among the control units (without replacement within
// a repetition, real treated units excluded entirely), re-run the estimator,
// and use the dispersion of the fake effect paths as the standard error.
// Intervals are point +/- 1.96 se around the real estimates.
inline std::map<int, IntervalEstimate> placebo_intervals(
    const ReturnsPanel& panel, const FactorSeries* factors, const EventSchedule& schedule,
    const EstimatorSpec& spec, int horizon, int n_reps = 100, std::uint64_t seed = 1) {
  const std::string component = "placebo_intervals";
  if (n_reps < 2)
    throw Error(errc::invalid_config, component, "need at least 2 repetitions");

  auto effs = estimate(panel, factors, schedule, spec);
  CohortWeights weights = default_cohort_weights(schedule);
  EffectSeries real = aggregate_event_time(effs, weights, horizon);

  // Cohort sizes in ascending cohort order; sorted control ids so the draw
  // depends only on the set of labels, not on panel row order.
  std::vector<std::pair<int, int>> cohort_sizes;
  int treated_total = 0;
  for (int s : schedule.cohorts()) {
    int n = static_cast<int>(schedule.cohort_members(s).size());
    cohort_sizes.push_back({s, n});
    treated_total += n;
  }
  std::vector<std::string> controls = schedule.control_ids();
  std::sort(controls.begin(), controls.end());
  if (static_cast<int>(controls.size()) < treated_total + 1)
    throw Error(errc::not_enough_controls, component,
                "need more controls than total treated (have " +
                    std::to_string(controls.size()) + ", treated " +
                    std::to_string(treated_total) + ")");

  std::map<int, std::vector<double>> draws;  // kappa -> placebo thetas
  for (int rep = 0; rep < n_reps; ++rep) {
    std::mt19937_64 rng(seed + static_cast<std::uint64_t>(rep));
    std::vector<std::string> pool = controls;
    std::shuffle(pool.begin(), pool.end(), rng);

    EventSchedule fake;
    fake.anticipation_delta = schedule.anticipation_delta;
    std::size_t next = 0;
    for (const auto& [s, n] : cohort_sizes)
      for (int k = 0; k < n; ++k) fake.event_time[pool[next++]] = s;
    for (; next < pool.size(); ++next) fake.event_time[pool[next]] = std::nullopt;

    auto fake_effs = estimate(panel, factors, fake, spec);
    EffectSeries fake_series =
        aggregate_event_time(fake_effs, default_cohort_weights(fake), horizon);
    for (const auto& [kappa, theta] : fake_series.event_time_att)
      draws[kappa].push_back(theta);
  }

  std::map<int, IntervalEstimate> out;
  for (const auto& [kappa, theta] : real.event_time_att) {
    const auto& d = draws[kappa];
    double mean = 0.0;
    for (double x : d) mean += x;
    mean /= static_cast<double>(d.size());
    double var = 0.0;
    for (double x : d) var += (x - mean) * (x - mean);
    var /= static_cast<double>(d.size() - 1);

    IntervalEstimate iv;
    iv.method = IntervalEstimate::Method::Placebo;
    iv.n_draws = n_reps;
    iv.point = theta;
    iv.se = std::sqrt(var);
    iv.ci_lo = theta - 1.96 * iv.se;
    iv.ci_hi = theta + 1.96 * iv.se;
    out[kappa] = iv;
  }
  return out;
}

namespace detail {

inline double percentile_sorted(const std::vector<double>& sorted, double p) {
  const std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  double h = p * static_cast<double>(n - 1);
  std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo >= n - 1) return sorted[n - 1];
  double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace detail

// Parametric bootstrap around a fitted factor-structure model: rebuild every
// modeled series from its fitted systematic part plus the estimated effects,
// add residuals resampled i.i.d. from the pooled in-sample residuals, and
// re-estimate with the selected rank held fixed. se = dispersion of the
// resampled effect paths; a percentile interval is reported alongside.
inline std::map<int, IntervalEstimate> gsynth_bootstrap_intervals(
    const ReturnsPanel& panel, const EventSchedule& schedule, const EstimatorSpec& spec,
    const GsynthModel& model, const std::vector<CohortEffect>& fitted_effects,
    int horizon, int n_samples = 1000, std::uint64_t seed = 1) {
  const std::string component = "gsynth_bootstrap_intervals";
  if (!model.fitted || model.residual_pool.empty())
    throw Error(errc::model_not_fitted, component, "bootstrap needs a fitted model");
  if (n_samples < 2)
    throw Error(errc::invalid_config, component, "need at least 2 samples");

  CohortWeights weights = default_cohort_weights(schedule);
  EffectSeries real = aggregate_event_time(fitted_effects, weights, horizon);

  // Fitted systematic base, with estimated effects laid back on treated rows
  // from the event period forward.
  const int T = panel.n_times();
  Eigen::MatrixXd base = panel.values;
  std::vector<int> modeled_rows;
  for (std::size_t j = 0; j < model.control_rows.size(); ++j) {
    int row = model.control_rows[j];
    modeled_rows.push_back(row);
    for (int t = 0; t < T; ++t)
      base(row, t) = model.control_intercepts(static_cast<int>(j)) +
                     model.control_loadings.row(static_cast<int>(j))
                         .dot(model.factors.row(t));
  }
  for (const auto& cf : model.cohorts) {
    const CohortEffect* eff = nullptr;
    for (const auto& e : fitted_effects)
      if (e.cohort == cf.cohort) eff = &e;
    if (!eff)
      throw Error(errc::model_not_fitted, component, "model and effects disagree on cohorts");
    const int event_pos = panel.time_pos(cf.cohort);
    for (std::size_t i = 0; i < cf.treated_rows.size(); ++i) {
      int row = cf.treated_rows[i];
      modeled_rows.push_back(row);
      for (int t = 0; t < T; ++t) {
        base(row, t) = cf.alphas(static_cast<int>(i)) +
                       cf.loadings.row(static_cast<int>(i)).dot(model.factors.row(t));
        if (t >= event_pos) base(row, t) += eff->per_period.at(panel.times[t]);
      }
    }
  }

  std::map<int, std::vector<double>> draws;
  for (int b = 0; b < n_samples; ++b) {
    std::mt19937_64 rng(seed + static_cast<std::uint64_t>(b));
    std::uniform_int_distribution<std::size_t> pick(0, model.residual_pool.size() - 1);
    ReturnsPanel boot = panel;
    boot.values = base;
    for (int row : modeled_rows)
      for (int t = 0; t < T; ++t)
        boot.values(row, t) += model.residual_pool[pick(rng)];

    auto boot_effs = gsynth(boot, schedule, spec, nullptr, model.r_hat);
    EffectSeries series = aggregate_event_time(boot_effs, weights, horizon);
    for (const auto& [kappa, theta] : series.event_time_att) draws[kappa].push_back(theta);
  }

  std::map<int, IntervalEstimate> out;
  for (const auto& [kappa, theta] : real.event_time_att) {
    std::vector<double> d = draws[kappa];
    double mean = 0.0;
    for (double x : d) mean += x;
    mean /= static_cast<double>(d.size());
    double var = 0.0;
    for (double x : d) var += (x - mean) * (x - mean);
    var /= static_cast<double>(d.size() - 1);
    std::sort(d.begin(), d.end());

    IntervalEstimate iv;
    iv.method = IntervalEstimate::Method::ParametricBootstrap;
    iv.n_draws = n_samples;
    iv.point = theta;
    iv.se = std::sqrt(var);
    iv.ci_lo = theta - 1.96 * iv.se;
    iv.ci_hi = theta + 1.96 * iv.se;
    iv.pct_lo = detail::percentile_sorted(d, 0.025);
    iv.pct_hi = detail::percentile_sorted(d, 0.975);
    out[kappa] = iv;
  }
  return out;
}

// Convenience entry that fits the model first.
inline std::map<int, IntervalEstimate> gsynth_bootstrap_intervals(
    const ReturnsPanel& panel, const EventSchedule& schedule, const EstimatorSpec& spec,
    int horizon, int n_samples = 1000, std::uint64_t seed = 1) {
  GsynthModel model;
  auto effs = gsynth(panel, schedule, spec, &model);
  return gsynth_bootstrap_intervals(panel, schedule, spec, model, effs, horizon,
                                    n_samples, seed);
}

// Share of replications whose interval contains the matching true value.
inline double coverage(const std::vector<IntervalEstimate>& intervals,
                       const std::vector<double>& truths) {
  if (intervals.size() != truths.size())
    throw Error(errc::length_mismatch, "coverage",
                "interval and truth lists differ in length");
  if (intervals.empty())
    throw Error(errc::sample_too_small, "coverage", "no intervals");
  int hit = 0;
  for (std::size_t i = 0; i < intervals.size(); ++i)
    if (intervals[i].ci_lo <= truths[i] && truths[i] <= intervals[i].ci_hi) ++hit;
  return static_cast<double>(hit) / static_cast<double>(intervals.size());
}

}  // namespace eventcausal
