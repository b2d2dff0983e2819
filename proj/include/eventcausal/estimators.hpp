#pragma once

// Counterfactual estimators for event-study effects. Each produces, per event
// cohort, a full time path of estimated effects tau_hat(s,t) together with the
// counterfactual path and per-firm samples for inference.
//
// Conventions shared by all estimators:
//   - a cohort is the set of securities whose event time is the label s;
//   - controls default to all never-treated securities;
//   - pre-estimation windows are resolved in position (trading-day) space,
//     always strictly before s minus the anticipation delta;
//   - per_period[t] = treated_mean[t] - counterfactual[t], exactly;
//   - factor-based estimators expect excess returns and a factor series on
//     the same time axis as the panel.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eventcausal/errors.hpp"
#include "eventcausal/numerics.hpp"
#include "eventcausal/panel.hpp"

namespace eventcausal {

struct EstimatorSpec {
  enum class Kind { DiffInMeans, MarketAdjusted, FactorModel, SyntheticControl, Gsynth };
  enum class ControlRule { AllNeverTreated, ExplicitSet };

  Kind kind = Kind::DiffInMeans;
  std::vector<std::string> factor_names;  // FactorModel: observed factor columns
  bool sum_to_one = false;                // SyntheticControl: rescale weights to sum 1
  int r_max = 5;                          // Gsynth: largest factor rank considered
  // Estimation window bounds in positions relative to the event (e.g. -239
  // and -1); unset = every period strictly before the anticipation window.
  std::optional<int> pre_lo, pre_hi;
  ControlRule control_rule = ControlRule::AllNeverTreated;
  std::set<std::string> control_ids;  // ExplicitSet only

  // Config-file name round trip: diff_means | market | factor:<names> | sc | gsynth:<r_max>
  std::string name() const {
    switch (kind) {
      case Kind::DiffInMeans: return "diff_means";
      case Kind::MarketAdjusted: return "market";
      case Kind::FactorModel: {
        std::string s = "factor:";
        for (std::size_t i = 0; i < factor_names.size(); ++i)
          s += (i ? "," : "") + factor_names[i];
        return s;
      }
      case Kind::SyntheticControl: return "sc";
      case Kind::Gsynth: return "gsynth:" + std::to_string(r_max);
    }
    return "?";
  }

  static EstimatorSpec parse(const std::string& text) {
    EstimatorSpec spec;
    auto bad = [&](const std::string& msg) {
      throw Error(errc::invalid_config, "EstimatorSpec", msg + ": '" + text + "'");
    };
    if (text == "diff_means") {
      spec.kind = Kind::DiffInMeans;
    } else if (text == "market") {
      spec.kind = Kind::MarketAdjusted;
    } else if (text.rfind("factor:", 0) == 0) {
      spec.kind = Kind::FactorModel;
      for (const auto& tok : detail::split_csv(text.substr(7)))
        if (!detail::trim(tok).empty()) spec.factor_names.push_back(detail::trim(tok));
      if (spec.factor_names.empty()) bad("factor spec needs at least one factor name");
    } else if (text == "sc") {
      spec.kind = Kind::SyntheticControl;
    } else if (text.rfind("gsynth:", 0) == 0) {
      spec.kind = Kind::Gsynth;
      long r = 0;
      if (!detail::parse_int(text.substr(7), &r) || r < 1)
        bad("gsynth spec needs a positive integer rank bound");
      spec.r_max = static_cast<int>(r);
    } else {
      bad("unknown estimator name");
    }
    return spec;
  }
};

// Effect path for one event cohort. The sample matrices hold per-firm
// abnormal values (observed minus that firm's counterfactual) over the full
// time axis; control_sample is empty for estimators without a per-firm
// control-side analog (synthetic control).
struct CohortEffect {
  int cohort = 0;                        // event time label s
  std::map<int, double> per_period;      // t -> tau_hat(s,t)
  std::map<int, double> counterfactual;  // t -> cohort counterfactual mean
  std::map<int, double> treated_mean;    // t -> cohort observed mean
  double implied_alpha = 0.0;
  Eigen::VectorXd implied_loadings;  // fitted betas / pca loadings / sc weights
  std::vector<std::string> treated_ids;  // sorted
  std::vector<std::string> control_ids;  // sorted
  std::vector<int> times;                // panel time labels
  Eigen::MatrixXd treated_sample;        // n_treated x T
  Eigen::MatrixXd control_sample;        // n_controls x T, or 0 x 0
};

namespace detail {

struct CohortContext {
  int cohort = 0;
  int event_pos = 0;
  std::vector<int> treated_rows, control_rows;
  std::vector<std::string> treated_ids, control_ids;
  std::vector<int> pre_positions;
};

inline std::vector<int> rows_for(const ReturnsPanel& panel,
                                 const std::vector<std::string>& ids,
                                 const std::string& component) {
  std::vector<int> rows;
  rows.reserve(ids.size());
  for (const auto& id : ids) {
    int r = panel.security_pos(id);
    if (r < 0)
      throw Error(errc::misaligned, component, "security '" + id + "' not in panel");
    rows.push_back(r);
  }
  return rows;
}

// Resolve the estimation window for cohort s: positions strictly before the
// anticipation window, optionally clipped to [s+pre_lo, s+pre_hi].
inline std::vector<int> resolve_pre_positions(const EstimatorSpec& spec, int event_pos,
                                              int delta, int n_times,
                                              const std::string& component) {
  int hard_hi = event_pos - delta - 1;  // last admissible position
  int lo = 0, hi = hard_hi;
  if (spec.pre_lo) lo = event_pos + *spec.pre_lo;
  if (spec.pre_hi) {
    if (*spec.pre_hi > -delta - 1)
      throw Error(errc::invalid_config, component,
                  "pre_window must end strictly before the anticipation window");
    hi = event_pos + *spec.pre_hi;
  }
  lo = std::max(lo, 0);
  hi = std::min({hi, hard_hi, n_times - 1});
  std::vector<int> positions;
  for (int p = lo; p <= hi; ++p) positions.push_back(p);
  return positions;
}

inline std::vector<CohortContext> build_contexts(const ReturnsPanel& panel,
                                                 const EventSchedule& schedule,
                                                 const EstimatorSpec& spec,
                                                 const std::string& component) {
  std::vector<std::string> controls;
  if (spec.control_rule == EstimatorSpec::ControlRule::AllNeverTreated) {
    controls = schedule.control_ids();
  } else {
    for (const auto& id : spec.control_ids) {
      auto it = schedule.event_time.find(id);
      if (it != schedule.event_time.end() && it->second.has_value())
        throw Error(errc::invalid_config, component,
                    "explicit control '" + id + "' is a treated security");
      controls.push_back(id);
    }
    std::sort(controls.begin(), controls.end());
  }
  if (controls.empty()) throw Error(errc::empty_controls, component, "no control securities");
  std::vector<int> control_rows = rows_for(panel, controls, component);

  std::vector<CohortContext> out;
  for (int s : schedule.cohorts()) {
    CohortContext ctx;
    ctx.cohort = s;
    ctx.treated_ids = schedule.cohort_members(s);
    if (ctx.treated_ids.empty()) throw Error(errc::empty_cohort, component, "empty cohort");
    ctx.treated_rows = rows_for(panel, ctx.treated_ids, component);
    ctx.control_ids = controls;
    ctx.control_rows = control_rows;
    ctx.event_pos = panel.time_pos(s);
    if (ctx.event_pos < 0)
      throw Error(errc::misaligned, component,
                  "event time " + std::to_string(s) + " not on the panel axis");
    ctx.pre_positions = resolve_pre_positions(spec, ctx.event_pos,
                                              schedule.anticipation_delta,
                                              panel.n_times(), component);
    out.push_back(std::move(ctx));
  }
  if (out.empty()) throw Error(errc::empty_cohort, component, "schedule has no treated securities");
  return out;
}

inline Eigen::VectorXd mean_over_rows(const Eigen::MatrixXd& values,
                                      const std::vector<int>& rows) {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(values.cols());
  for (int r : rows) m += values.row(r).transpose();
  return m / static_cast<double>(rows.size());
}

inline void require_factor_alignment(const ReturnsPanel& panel, const FactorSeries& factors,
                                     const std::string& component) {
  if (factors.times != panel.times)
    throw Error(errc::misaligned, component,
                "factor series and panel are on different time axes");
}

inline void fill_summary_maps(CohortEffect& eff, const ReturnsPanel& panel,
                              const std::vector<int>& treated_rows,
                              const Eigen::VectorXd& counterfactual) {
  Eigen::VectorXd tmean = mean_over_rows(panel.values, treated_rows);
  for (int t = 0; t < panel.n_times(); ++t) {
    int label = panel.times[t];
    eff.treated_mean[label] = tmean(t);
    eff.counterfactual[label] = counterfactual(t);
    eff.per_period[label] = tmean(t) - counterfactual(t);
  }
}

}  // namespace detail

// Treated-mean minus control-mean, every period.
inline std::vector<CohortEffect> diff_in_means(const ReturnsPanel& panel,
                                               const EventSchedule& schedule,
                                               const EstimatorSpec& spec) {
  auto contexts = detail::build_contexts(panel, schedule, spec, "diff_in_means");
  std::vector<CohortEffect> out;
  for (const auto& ctx : contexts) {
    CohortEffect eff;
    eff.cohort = ctx.cohort;
    eff.treated_ids = ctx.treated_ids;
    eff.control_ids = ctx.control_ids;
    eff.times = panel.times;
    Eigen::VectorXd cf = detail::mean_over_rows(panel.values, ctx.control_rows);
    detail::fill_summary_maps(eff, panel, ctx.treated_rows, cf);
    const int T = panel.n_times();
    eff.treated_sample.resize(static_cast<int>(ctx.treated_rows.size()), T);
    eff.control_sample.resize(static_cast<int>(ctx.control_rows.size()), T);
    for (std::size_t i = 0; i < ctx.treated_rows.size(); ++i)
      eff.treated_sample.row(static_cast<int>(i)) =
          panel.values.row(ctx.treated_rows[i]) - cf.transpose();
    for (std::size_t j = 0; j < ctx.control_rows.size(); ++j)
      eff.control_sample.row(static_cast<int>(j)) =
          panel.values.row(ctx.control_rows[j]) - cf.transpose();
    out.push_back(std::move(eff));
  }
  return out;
}

// Per-firm factor-model abnormal returns, averaged within cohort.
// MarketAdjusted pins alpha = 0 and a unit loading on the first factor
// column; FactorModel fits per-firm OLS on the pre window.
inline std::vector<CohortEffect> abnormal_returns(const ReturnsPanel& panel,
                                                  const FactorSeries& factors,
                                                  const EventSchedule& schedule,
                                                  const EstimatorSpec& spec) {
  const std::string component = "abnormal_returns";
  if (spec.kind != EstimatorSpec::Kind::MarketAdjusted &&
      spec.kind != EstimatorSpec::Kind::FactorModel)
    throw Error(errc::invalid_config, component, "spec must be market or factor:<names>");
  detail::require_factor_alignment(panel, factors, component);

  std::vector<int> cols;
  if (spec.kind == EstimatorSpec::Kind::MarketAdjusted) {
    cols = {0};
  } else {
    for (const auto& nm : spec.factor_names) {
      int c = factors.column(nm);
      if (c < 0) {
        std::string have;
        for (const auto& n : factors.names) have += (have.empty() ? "" : ",") + n;
        throw Error(errc::invalid_config, component,
                    "unknown factor '" + nm + "' (available: " + have + ")");
      }
      cols.push_back(c);
    }
  }
  const int K = static_cast<int>(cols.size());
  const int T = panel.n_times();
  Eigen::MatrixXd X(T, K);
  for (int k = 0; k < K; ++k) X.col(k) = factors.values.col(cols[k]);

  auto contexts = detail::build_contexts(panel, schedule, spec, component);
  std::vector<CohortEffect> out;
  for (const auto& ctx : contexts) {
    const int P = static_cast<int>(ctx.pre_positions.size());
    Eigen::MatrixXd Xpre(P, K);
    for (int p = 0; p < P; ++p) Xpre.row(p) = X.row(ctx.pre_positions[p]);

    // counterfactual per firm row: alpha + beta'F_t
    auto fit_rows = [&](const std::vector<int>& rows, Eigen::MatrixXd& sample,
                        double* alpha_acc, Eigen::VectorXd* beta_acc) {
      sample.resize(static_cast<int>(rows.size()), T);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        double alpha = 0.0;
        Eigen::VectorXd beta;
        if (spec.kind == EstimatorSpec::Kind::MarketAdjusted) {
          beta = Eigen::VectorXd::Ones(1);
        } else {
          if (P <= K + 1)
            throw Error(errc::window_too_short, component,
                        "estimation window has " + std::to_string(P) +
                            " periods, need more than " + std::to_string(K + 1));
          Eigen::VectorXd ypre(P);
          for (int p = 0; p < P; ++p) ypre(p) = panel.values(rows[i], ctx.pre_positions[p]);
          OlsFit fit = ols(ypre, Xpre, true);
          alpha = fit.intercept;
          beta = fit.slopes;
        }
        for (int t = 0; t < T; ++t)
          sample(static_cast<int>(i), t) =
              panel.values(rows[i], t) - (alpha + beta.dot(X.row(t)));
        if (alpha_acc) *alpha_acc += alpha;
        if (beta_acc) *beta_acc += beta;
      }
    };

    CohortEffect eff;
    eff.cohort = ctx.cohort;
    eff.treated_ids = ctx.treated_ids;
    eff.control_ids = ctx.control_ids;
    eff.times = panel.times;
    double alpha_sum = 0.0;
    Eigen::VectorXd beta_sum = Eigen::VectorXd::Zero(K);
    fit_rows(ctx.treated_rows, eff.treated_sample, &alpha_sum, &beta_sum);
    const double n_treated = static_cast<double>(ctx.treated_rows.size());
    eff.implied_alpha = alpha_sum / n_treated;
    eff.implied_loadings = beta_sum / n_treated;
    fit_rows(ctx.control_rows, eff.control_sample, nullptr, nullptr);

    // Cohort counterfactual = treated mean minus mean abnormal value; build it
    // directly as mean over firms of (alpha_i + beta_i'F_t).
    Eigen::VectorXd cf = Eigen::VectorXd::Zero(T);
    for (std::size_t i = 0; i < ctx.treated_rows.size(); ++i)
      cf += (panel.values.row(ctx.treated_rows[i]) -
             eff.treated_sample.row(static_cast<int>(i)))
                .transpose();
    cf /= n_treated;
    detail::fill_summary_maps(eff, panel, ctx.treated_rows, cf);
    out.push_back(std::move(eff));
  }
  return out;
}

// Cohort-portfolio synthetic control: non-negative weights over control
// series chosen to track the treated-average series on the pre window.
inline std::vector<CohortEffect> synthetic_control(const ReturnsPanel& panel,
                                                   const EventSchedule& schedule,
                                                   const EstimatorSpec& spec) {
  const std::string component = "synthetic_control";
  auto contexts = detail::build_contexts(panel, schedule, spec, component);
  std::vector<CohortEffect> out;
  for (const auto& ctx : contexts) {
    const int P = static_cast<int>(ctx.pre_positions.size());
    if (P == 0)
      throw Error(errc::window_too_short, component, "empty pre-event window");
    const int J = static_cast<int>(ctx.control_rows.size());
    const int T = panel.n_times();

    Eigen::VectorXd target_full = detail::mean_over_rows(panel.values, ctx.treated_rows);
    Eigen::VectorXd target(P);
    Eigen::MatrixXd cols(P, J);
    for (int p = 0; p < P; ++p) {
      target(p) = target_full(ctx.pre_positions[p]);
      for (int j = 0; j < J; ++j)
        cols(p, j) = panel.values(ctx.control_rows[j], ctx.pre_positions[p]);
    }
    NnlsSolution sol = nnls(target, cols);
    Eigen::VectorXd w = sol.weights;
    if (spec.sum_to_one) {
      double total = w.sum();
      if (total <= 0.0)
        throw Error(errc::numerical_failure, component,
                    "cannot normalize all-zero weights to sum 1");
      w /= total;
    }

    CohortEffect eff;
    eff.cohort = ctx.cohort;
    eff.treated_ids = ctx.treated_ids;
    eff.control_ids = ctx.control_ids;
    eff.times = panel.times;
    eff.implied_alpha = 0.0;
    eff.implied_loadings = w;
    Eigen::VectorXd cf = Eigen::VectorXd::Zero(T);
    for (int j = 0; j < J; ++j)
      cf += w(j) * panel.values.row(ctx.control_rows[j]).transpose();
    detail::fill_summary_maps(eff, panel, ctx.treated_rows, cf);
    eff.treated_sample.resize(static_cast<int>(ctx.treated_rows.size()), T);
    for (std::size_t i = 0; i < ctx.treated_rows.size(); ++i)
      eff.treated_sample.row(static_cast<int>(i)) =
          panel.values.row(ctx.treated_rows[i]) - cf.transpose();
    out.push_back(std::move(eff));
  }
  return out;
}

// Fitted state of one gsynth run, retained for parametric-bootstrap reuse.
struct GsynthModel {
  int r_hat = 0;
  Eigen::MatrixXd factors;             // T x r_hat, scaled F'F/T = I
  std::vector<int> control_rows;       // panel row of each control
  Eigen::VectorXd control_intercepts;  // per control
  Eigen::MatrixXd control_loadings;    // n_controls x r_hat
  // Per cohort: treated rows with fitted (alpha, lambda)
  struct CohortFit {
    int cohort = 0;
    std::vector<int> treated_rows;
    Eigen::VectorXd alphas;
    Eigen::MatrixXd loadings;  // n_treated x r_hat
    std::vector<int> pre_positions;
  };
  std::vector<CohortFit> cohorts;
  std::vector<double> residual_pool;  // in-sample model residuals
  bool fitted = false;
};

// Interactive-fixed-effects counterfactual: (1) principal-component factors
// from control units over all periods, (2) factor count chosen by
// leave-one-period-out cross-validation on treated pre-event data, (3)
// per-treated loadings fit on the pre window. fixed_r > 0 skips step 2 and
// uses that rank (bootstrap re-estimation path).
inline std::vector<CohortEffect> gsynth(const ReturnsPanel& panel,
                                        const EventSchedule& schedule,
                                        const EstimatorSpec& spec,
                                        GsynthModel* model_out = nullptr,
                                        int fixed_r = 0) {
  const std::string component = "gsynth";
  if (spec.r_max < 1)
    throw Error(errc::invalid_config, component, "rank bound must be positive");
  auto contexts = detail::build_contexts(panel, schedule, spec, component);
  const int T = panel.n_times();
  const int J = static_cast<int>(contexts.front().control_rows.size());
  if (J < spec.r_max)
    throw Error(errc::rank_too_large, component,
                "rank bound " + std::to_string(spec.r_max) + " exceeds control count " +
                    std::to_string(J));

  // Step 1: control-unit principal components over the full sample.
  Eigen::MatrixXd ctrl(J, T);
  for (int j = 0; j < J; ++j) ctrl.row(j) = panel.values.row(contexts.front().control_rows[j]);
  PcaFactors pca = pca_factors(ctrl, spec.r_max);

  // Step 2: pick r by leave-one-period-out prediction error on treated
  // pre-event returns, summed over treated firms of every cohort.
  int r_hat = fixed_r > 0 ? fixed_r : spec.r_max;
  if (fixed_r == 0) {
    for (const auto& ctx : contexts)
      if (static_cast<int>(ctx.pre_positions.size()) < 2 * spec.r_max)
        throw Error(errc::window_too_short, component,
                    "estimation window shorter than twice the rank bound");
    std::vector<int> candidates;
    for (int r = 1; r <= spec.r_max; ++r) candidates.push_back(r);
    if (candidates.size() > 1) {
      // Pool all (cohort, holdout-period) pairs; each evaluate() call returns
      // the squared leave-one-out error summed over that cohort's firms.
      struct Holdout { int ctx_idx; int local; };
      std::vector<Holdout> holdouts;
      for (std::size_t c = 0; c < contexts.size(); ++c)
        for (std::size_t p = 0; p < contexts[c].pre_positions.size(); ++p)
          holdouts.push_back({static_cast<int>(c), static_cast<int>(p)});

      // Per candidate r and cohort: residual matrix and leverage of the
      // pooled pre-window regression of treated returns on [1, F_r].
      std::vector<std::vector<Eigen::MatrixXd>> resid(candidates.size());
      std::vector<std::vector<Eigen::VectorXd>> lever(candidates.size());
      for (std::size_t ci = 0; ci < candidates.size(); ++ci) {
        int r = candidates[ci];
        resid[ci].resize(contexts.size());
        lever[ci].resize(contexts.size());
        for (std::size_t c = 0; c < contexts.size(); ++c) {
          const auto& ctx = contexts[c];
          const int P = static_cast<int>(ctx.pre_positions.size());
          const int n = static_cast<int>(ctx.treated_rows.size());
          Eigen::MatrixXd Xd(P, r + 1);
          Eigen::MatrixXd Y(P, n);
          for (int p = 0; p < P; ++p) {
            Xd(p, 0) = 1.0;
            Xd.block(p, 1, 1, r) = pca.factors.row(ctx.pre_positions[p]).head(r);
            for (int i = 0; i < n; ++i)
              Y(p, i) = panel.values(ctx.treated_rows[i], ctx.pre_positions[p]);
          }
          if (P <= r + 1)
            throw Error(errc::window_too_short, component,
                        "too few pre periods for rank " + std::to_string(r));
          Eigen::MatrixXd coef = Xd.colPivHouseholderQr().solve(Y);
          resid[ci][c] = Y - Xd * coef;
          Eigen::MatrixXd XtX = Xd.transpose() * Xd;
          Eigen::MatrixXd inner = XtX.ldlt().solve(Xd.transpose()).transpose();
          lever[ci][c] = (Xd.array() * inner.array()).rowwise().sum();
        }
      }
      auto evaluate = [&](int r, int h) -> double {
        std::size_t ci = 0;
        while (candidates[ci] != r) ++ci;
        const auto& hd = holdouts[static_cast<std::size_t>(h)];
        double hlev = lever[ci][hd.ctx_idx](hd.local);
        double denom = 1.0 - hlev;
        if (denom < 1e-10)
          throw Error(errc::numerical_failure, component,
                      "degenerate leave-one-out leverage");
        double sse = 0.0;
        const Eigen::MatrixXd& E = resid[ci][hd.ctx_idx];
        for (int i = 0; i < E.cols(); ++i) {
          double e = E(hd.local, i) / denom;
          sse += e * e;
        }
        return sse;
      };
      std::vector<int> holdout_ids(holdouts.size());
      for (std::size_t h = 0; h < holdouts.size(); ++h) holdout_ids[h] = static_cast<int>(h);
      r_hat = cross_validate(candidates, evaluate, holdout_ids);
    }
  }
  if (r_hat > spec.r_max || r_hat < 1)
    throw Error(errc::rank_too_large, component, "selected rank outside [1, r_max]");

  Eigen::MatrixXd F = pca.factors.leftCols(r_hat);

  GsynthModel model;
  model.r_hat = r_hat;
  model.factors = F;
  model.control_rows = contexts.front().control_rows;
  model.control_intercepts = pca.intercepts;
  model.control_loadings = pca.loadings.leftCols(r_hat);

  // Step 3: per-firm loadings on the pre window; counterfactual everywhere.
  std::vector<CohortEffect> out;
  for (const auto& ctx : contexts) {
    const int P = static_cast<int>(ctx.pre_positions.size());
    Eigen::MatrixXd Fpre(P, r_hat);
    for (int p = 0; p < P; ++p) Fpre.row(p) = F.row(ctx.pre_positions[p]);

    auto fit_rows = [&](const std::vector<int>& rows, Eigen::MatrixXd& sample,
                        Eigen::VectorXd* alphas, Eigen::MatrixXd* lambdas) {
      sample.resize(static_cast<int>(rows.size()), T);
      if (alphas) alphas->resize(static_cast<int>(rows.size()));
      if (lambdas) lambdas->resize(static_cast<int>(rows.size()), r_hat);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        Eigen::VectorXd ypre(P);
        for (int p = 0; p < P; ++p) ypre(p) = panel.values(rows[i], ctx.pre_positions[p]);
        OlsFit fit;
        try {
          fit = ols(ypre, Fpre, true);
        } catch (const Error& e) {
          if (e.code() == errc::too_few_observations)
            throw Error(errc::window_too_short, component,
                        "estimation window too short for rank " + std::to_string(r_hat));
          throw;
        }
        for (int t = 0; t < T; ++t)
          sample(static_cast<int>(i), t) =
              panel.values(rows[i], t) - (fit.intercept + fit.slopes.dot(F.row(t)));
        if (alphas) (*alphas)(static_cast<int>(i)) = fit.intercept;
        if (lambdas) lambdas->row(static_cast<int>(i)) = fit.slopes.transpose();
      }
    };

    CohortEffect eff;
    eff.cohort = ctx.cohort;
    eff.treated_ids = ctx.treated_ids;
    eff.control_ids = ctx.control_ids;
    eff.times = panel.times;
    GsynthModel::CohortFit cfit;
    cfit.cohort = ctx.cohort;
    cfit.treated_rows = ctx.treated_rows;
    cfit.pre_positions = ctx.pre_positions;
    fit_rows(ctx.treated_rows, eff.treated_sample, &cfit.alphas, &cfit.loadings);
    fit_rows(ctx.control_rows, eff.control_sample, nullptr, nullptr);
    eff.implied_alpha = cfit.alphas.mean();
    eff.implied_loadings = cfit.loadings.colwise().mean().transpose();

    Eigen::VectorXd cf = Eigen::VectorXd::Zero(T);
    for (std::size_t i = 0; i < ctx.treated_rows.size(); ++i)
      cf += (panel.values.row(ctx.treated_rows[i]) -
             eff.treated_sample.row(static_cast<int>(i)))
                .transpose();
    cf /= static_cast<double>(ctx.treated_rows.size());
    detail::fill_summary_maps(eff, panel, ctx.treated_rows, cf);

    // Residual pool: treated pre-window residuals plus control residuals
    // against the factor reconstruction, all periods.
    for (std::size_t i = 0; i < ctx.treated_rows.size(); ++i)
      for (int p : ctx.pre_positions)
        model.residual_pool.push_back(eff.treated_sample(static_cast<int>(i), p));
    model.cohorts.push_back(std::move(cfit));
    out.push_back(std::move(eff));
  }
  for (int j = 0; j < J; ++j)
    for (int t = 0; t < T; ++t)
      model.residual_pool.push_back(ctrl(j, t) - model.control_intercepts(j) -
                                    model.control_loadings.row(j).dot(F.row(t)));
  model.fitted = true;
  if (model_out) *model_out = std::move(model);
  return out;
}

// Dispatch on spec.kind. `factors` may be null for estimators that do not
// use a factor series.
inline std::vector<CohortEffect> estimate(const ReturnsPanel& panel,
                                          const FactorSeries* factors,
                                          const EventSchedule& schedule,
                                          const EstimatorSpec& spec) {
  switch (spec.kind) {
    case EstimatorSpec::Kind::DiffInMeans:
      return diff_in_means(panel, schedule, spec);
    case EstimatorSpec::Kind::MarketAdjusted:
    case EstimatorSpec::Kind::FactorModel:
      if (!factors)
        throw Error(errc::invalid_config, "estimate",
                    "estimator '" + spec.name() + "' needs a factor series");
      return abnormal_returns(panel, *factors, schedule, spec);
    case EstimatorSpec::Kind::SyntheticControl:
      return synthetic_control(panel, schedule, spec);
    case EstimatorSpec::Kind::Gsynth:
      return gsynth(panel, schedule, spec);
  }
  throw Error(errc::invalid_config, "estimate", "unknown estimator kind");
}

}  // namespace eventcausal
