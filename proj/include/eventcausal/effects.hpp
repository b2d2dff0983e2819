#pragma once

// Aggregation of per-cohort effect paths into event-time, cumulative, and
// geometric estimands, plus the analytic error decomposition used to validate
// estimators on simulated data (where the truth is known) and a closed-form
// long-horizon drift formula for loading mismatches.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eventcausal/dgp.hpp"
#include "eventcausal/errors.hpp"
#include "eventcausal/estimators.hpp"
#include "eventcausal/panel.hpp"

namespace eventcausal {

// theta-hat paths keyed by event-time horizon kappa (periods after the
// event; 0 = event day).
struct EffectSeries {
  std::map<int, double> event_time_att;  // kappa -> weighted tau(s, s+kappa)
  std::map<int, double> cumulative_att;  // H -> partial sum through H
  std::map<int, double> geometric_att;   // H -> log-based estimand (optional)
  CohortWeights weights;
};

// theta_kappa = sum_s w_s tau(s, s+kappa); cumulative values are exact
// partial sums in ascending kappa.
inline EffectSeries aggregate_event_time(const std::vector<CohortEffect>& cohort_effects,
                                         const CohortWeights& weights, int horizon) {
  const std::string component = "aggregate_event_time";
  if (cohort_effects.empty())
    throw Error(errc::empty_cohort, component, "no cohort effects to aggregate");
  if (horizon < 0)
    throw Error(errc::invalid_config, component, "horizon must be non-negative");

  EffectSeries series;
  series.weights = weights;
  double running = 0.0;
  for (int kappa = 0; kappa <= horizon; ++kappa) {
    double theta = 0.0;
    for (const auto& eff : cohort_effects) {
      int t = eff.cohort + kappa;
      auto it = eff.per_period.find(t);
      if (it == eff.per_period.end())
        throw Error(errc::missing_horizon, component,
                    "cohort " + std::to_string(eff.cohort) + " has no estimate at period " +
                        std::to_string(t));
      theta += weights.at(eff.cohort) * it->second;
    }
    series.event_time_att[kappa] = theta;
    running += theta;
    series.cumulative_att[kappa] = running;
  }
  return series;
}

// Convenience: cohort -> (t -> counterfactual level) from estimator output.
inline std::map<int, std::map<int, double>> counterfactual_maps(
    const std::vector<CohortEffect>& cohort_effects) {
  std::map<int, std::map<int, double>> out;
  for (const auto& eff : cohort_effects) out[eff.cohort] = eff.counterfactual;
  return out;
}

// Geometric (log-return) effect at holding horizon H: per cohort,
// sum over kappa of [ mean_i log(1+R_{i,s+kappa}) - log(1+Rhat_{s+kappa}) ],
// then weighted across cohorts. Cumulates within the holding period first
// and averages across firms inside the log, never log of an averaged return.
inline double geometric_att(const ReturnsPanel& panel, const EventSchedule& schedule,
                            const std::map<int, std::map<int, double>>& counterfactuals,
                            const CohortWeights& weights, int horizon) {
  const std::string component = "geometric_att";
  if (horizon < 0)
    throw Error(errc::invalid_config, component, "horizon must be non-negative");
  double total = 0.0;
  bool any = false;
  for (int s : schedule.cohorts()) {
    any = true;
    auto cf_it = counterfactuals.find(s);
    if (cf_it == counterfactuals.end())
      throw Error(errc::missing_horizon, component,
                  "no counterfactual path for cohort " + std::to_string(s));
    std::vector<std::string> ids = schedule.cohort_members(s);
    std::vector<int> rows = detail::rows_for(panel, ids, component);
    double cohort_sum = 0.0;
    for (int kappa = 0; kappa <= horizon; ++kappa) {
      const int t = s + kappa;
      const int pos = panel.time_pos(t);
      if (pos < 0)
        throw Error(errc::missing_horizon, component,
                    "period " + std::to_string(t) + " not on the panel axis");
      auto rt = cf_it->second.find(t);
      if (rt == cf_it->second.end())
        throw Error(errc::missing_horizon, component,
                    "counterfactual missing period " + std::to_string(t));
      if (rt->second <= -1.0)
        throw Error(errc::non_positive_gross_return, component,
                    "counterfactual gross return <= 0 at period " + std::to_string(t));
      double mean_log = 0.0;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        double r = panel.values(rows[i], pos);
        if (r <= -1.0)
          throw Error(errc::non_positive_gross_return, component,
                      "security '" + ids[i] + "' gross return <= 0 at period " +
                          std::to_string(t));
        mean_log += std::log1p(r);
      }
      mean_log /= static_cast<double>(rows.size());
      cohort_sum += mean_log - std::log1p(rt->second);
    }
    total += weights.at(s) * cohort_sum;
  }
  if (!any) throw Error(errc::empty_cohort, component, "schedule has no events");
  return total;
}

// Additive decomposition of an estimator's per-period error into the
// intercept gap, the factor-loading gap, and the averaged idiosyncratic term.
struct BiasDecomposition {
  double alpha_gap = 0.0;
  double loading_gap_term = 0.0;
  double noise_term = 0.0;
  double total = 0.0;  // alpha_gap + loading_gap_term + noise_term, exactly
};

// Cohort-level fitted counterfactual parameters of a factor-model estimator:
// the cohort-mean intercept and slopes, with the factor columns they load on.
struct FittedCohortParams {
  double alpha = 0.0;
  Eigen::VectorXd betas;
  std::vector<int> observed_idx;  // columns of the factor series
};

namespace detail {

inline void require_truth(const SimTruth& truth, const std::string& component) {
  if (truth.eps.size() == 0)
    throw Error(errc::truth_unavailable, component,
                "analytic decomposition needs simulation truth");
}

struct CohortTrueParams {
  double alpha = 0.0;
  Eigen::VectorXd betas;  // true loadings, cohort mean
  double eps = 0.0;       // realized idiosyncratic mean at the period
};

inline CohortTrueParams cohort_true_params(const SimTruth& truth, const ReturnsPanel& panel,
                                           const std::vector<std::string>& ids, int pos,
                                           const std::string& component) {
  CohortTrueParams p;
  p.betas = Eigen::VectorXd::Zero(truth.loadings.cols());
  for (const auto& id : ids) {
    int row = panel.security_pos(id);
    if (row < 0)
      throw Error(errc::misaligned, component, "security '" + id + "' not in panel");
    p.alpha += truth.alphas(row);
    p.betas += truth.loadings.row(row).transpose();
    p.eps += truth.eps(row, pos);
  }
  const double n = static_cast<double>(ids.size());
  p.alpha /= n;
  p.betas /= n;
  p.eps /= n;
  return p;
}

inline double true_factor_part(const Eigen::VectorXd& betas, const FactorSeries& factors,
                               int pos) {
  double v = 0.0;
  for (int l = 0; l < betas.size(); ++l) v += betas(l) * factors.values(pos, l);
  return v;
}

}  // namespace detail

// Error decomposition for per-firm counterfactual (abnormal-return style)
// estimators: (alpha_s - alpha_hat) + (beta_s F_t - beta_hat F^o_t) + eps_bar.
// True loadings are the realized cohort means; the true factor part uses the
// leading factor columns in simulation order.
inline BiasDecomposition analytic_bias_ar(const SimTruth& truth, const ReturnsPanel& panel,
                                          const FactorSeries& factors,
                                          const std::vector<std::string>& cohort_ids,
                                          const FittedCohortParams& fitted, int t_label) {
  const std::string component = "analytic_bias_ar";
  detail::require_truth(truth, component);
  if (fitted.betas.size() != static_cast<long>(fitted.observed_idx.size()))
    throw Error(errc::length_mismatch, component, "fitted betas vs observed column list");
  const int pos = factors.times.empty() ? -1 : [&] {
    for (int t = 0; t < factors.n_times(); ++t)
      if (factors.times[t] == t_label) return t;
    return -1;
  }();
  if (pos < 0 || panel.time_pos(t_label) < 0)
    throw Error(errc::misaligned, component,
                "period " + std::to_string(t_label) + " not on the shared time axis");
  if (cohort_ids.empty()) throw Error(errc::empty_cohort, component, "empty cohort");

  auto truep = detail::cohort_true_params(truth, panel, cohort_ids,
                                          panel.time_pos(t_label), component);
  double fitted_part = 0.0;
  for (std::size_t k = 0; k < fitted.observed_idx.size(); ++k) {
    int c = fitted.observed_idx[k];
    if (c < 0 || c >= factors.n_factors())
      throw Error(errc::invalid_config, component, "observed factor column out of range");
    fitted_part += fitted.betas(static_cast<int>(k)) * factors.values(pos, c);
  }
  BiasDecomposition d;
  d.alpha_gap = truep.alpha - fitted.alpha;
  d.loading_gap_term = detail::true_factor_part(truep.betas, factors, pos) - fitted_part;
  d.noise_term = truep.eps;
  d.total = d.alpha_gap + d.loading_gap_term + d.noise_term;
  return d;
}

// Error decomposition for the control-mean (difference-in-means) estimator:
// (alpha_s - alpha_C) + (beta_s - beta_C) F_t + (eps_s - eps_C), with control
// means playing the role of the fitted counterfactual.
inline BiasDecomposition analytic_bias_cont(const SimTruth& truth, const ReturnsPanel& panel,
                                            const FactorSeries& factors,
                                            const std::vector<std::string>& cohort_ids,
                                            const std::vector<std::string>& control_ids,
                                            int t_label) {
  const std::string component = "analytic_bias_cont";
  detail::require_truth(truth, component);
  const int pos = panel.time_pos(t_label);
  if (pos < 0)
    throw Error(errc::misaligned, component,
                "period " + std::to_string(t_label) + " not on the panel axis");
  if (cohort_ids.empty()) throw Error(errc::empty_cohort, component, "empty cohort");
  if (control_ids.empty()) throw Error(errc::empty_controls, component, "empty control set");

  auto ts = detail::cohort_true_params(truth, panel, cohort_ids, pos, component);
  auto tc = detail::cohort_true_params(truth, panel, control_ids, pos, component);
  BiasDecomposition d;
  d.alpha_gap = ts.alpha - tc.alpha;
  d.loading_gap_term =
      detail::true_factor_part(Eigen::VectorXd(ts.betas - tc.betas), factors, pos);
  d.noise_term = ts.eps - tc.eps;
  d.total = d.alpha_gap + d.loading_gap_term + d.noise_term;
  return d;
}

// Expected cumulative drift from a persistent loading gap over H periods:
// sum_k gap_k * (H * mean_k). The inner product is evaluated term by term in
// column order with this exact association.
inline double long_run_drift(const Eigen::VectorXd& loading_gap,
                             const Eigen::VectorXd& mean_factors, int horizon) {
  if (loading_gap.size() != mean_factors.size())
    throw Error(errc::length_mismatch, "long_run_drift",
                "gap and factor-mean vectors differ in length");
  const double h = static_cast<double>(horizon);
  double total = 0.0;
  for (int k = 0; k < loading_gap.size(); ++k)
    total += loading_gap(k) * (h * mean_factors(k));
  return total;
}

}  // namespace eventcausal
