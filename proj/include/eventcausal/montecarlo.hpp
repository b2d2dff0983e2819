#pragma once

// Replication harness for the 2x2 assignment/timing design: repeatedly
// simulate, estimate with every configured estimator, score bias against the
// known truth, and pool (replication, period) cells into per-scope summary
// statistics. Deterministic: replication r always uses seed base_seed + r and
// the reduction runs in replication order, so reports are bit-identical for a
// fixed (design, estimator list, n_reps, base_seed) regardless of thread
// count.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "eventcausal/dgp.hpp"
#include "eventcausal/effects.hpp"
#include "eventcausal/errors.hpp"
#include "eventcausal/estimators.hpp"
#include "eventcausal/inference.hpp"
#include "eventcausal/panel.hpp"

namespace eventcausal {

// One summary row: a (panel, estimator, scope) cell of the report, in
// percentage points (coverage stays a fraction; NaN = not computable for the
// estimator, e.g. no per-firm control sample).
struct McCell {
  std::string panel;      // "A".."D" or caller-chosen tag
  std::string estimator;  // config name (diff_means, factor:..., ...)
  std::string scope;      // AllPeriods | TreatedPeriod | UntreatedPeriods
  double e_bias_pp = 0.0;
  double mad_pp = 0.0;
  double rmse_pp = 0.0;
  double coverage = 0.0;
};

struct McReport {
  std::vector<McCell> cells;
  int n_reps = 0;
  std::uint64_t base_seed = 0;

  void validate() const {
    for (const auto& c : cells) {
      if (c.rmse_pp + 1e-9 < std::abs(c.e_bias_pp))
        throw Error(errc::numerical_failure, "McReport",
                    "RMSE below |E(Bias)| in cell " + c.panel + "/" + c.estimator +
                        "/" + c.scope);
      if (c.mad_pp < 0.0)
        throw Error(errc::numerical_failure, "McReport", "negative MAD");
      if (!std::isnan(c.coverage) && (c.coverage < 0.0 || c.coverage > 1.0))
        throw Error(errc::numerical_failure, "McReport", "coverage outside [0,1]");
    }
  }
};

namespace detail {

struct RepResult {
  // Per estimator: bias at horizon kappa = 0..n_post (decimal), and interval
  // hit flags (1 hit, 0 miss, -1 not computable). ok[e] is false when the
  // estimator was undefined on this draw (e.g. the selected event day left too
  // short a pre window); such reps drop out of that estimator's cells only.
  std::vector<std::vector<double>> bias;
  std::vector<std::vector<int>> hit;
  std::vector<char> ok;
};

inline bool window_failure(const Error& err) {
  return err.code() == errc::window_too_short ||
         err.code() == errc::too_few_observations ||
         err.code() == errc::rank_deficient;
}

inline RepResult run_one_rep(const SimDesign& base_design,
                             const std::vector<EstimatorSpec>& estimators,
                             std::uint64_t seed, const FactorSeries* history) {
  SimDesign design = base_design;
  design.seed = seed;
  SimOutput sim = generate(design, history);
  ReturnsPanel excess = to_excess(sim.panel, sim.factors);
  const int s = sim.truth.event_period;
  const int H = design.n_post;

  RepResult res;
  res.bias.resize(estimators.size());
  res.hit.resize(estimators.size());
  res.ok.assign(estimators.size(), 1);
  for (std::size_t e = 0; e < estimators.size(); ++e) {
    std::vector<CohortEffect> effs;
    try {
      effs = estimate(excess, &sim.factors, sim.schedule, estimators[e]);
    } catch (const Error& err) {
      if (!window_failure(err)) throw;
      res.ok[e] = 0;
      continue;
    }
    EffectSeries series =
        aggregate_event_time(effs, default_cohort_weights(sim.schedule), H);
    const CohortEffect* single = effs.size() == 1 ? &effs.front() : nullptr;
    for (int kappa = 0; kappa <= H; ++kappa) {
      const double truth = kappa == 0 ? design.effect_size : 0.0;
      const double theta = series.event_time_att.at(kappa);
      res.bias[e].push_back(theta - truth);

      int hit = -1;
      if (single && single->control_sample.rows() >= 2 &&
          single->treated_sample.rows() >= 2) {
        int pos = excess.time_pos(s + kappa);
        IntervalEstimate iv = recentered(
            ttest_interval(single->treated_sample.col(pos),
                           single->control_sample.col(pos)),
            theta);
        hit = (iv.ci_lo <= truth && truth <= iv.ci_hi) ? 1 : 0;
      }
      res.hit[e].push_back(hit);
    }
  }
  return res;
}

struct ScopeDef {
  const char* name;
  int lo, hi;  // kappa range, inclusive
};

}  // namespace detail

// Run n_reps replications of one design and pool per-period biases into the
// three reporting scopes. Replication r uses seed base_seed + r; results are
// identical for any n_threads (0 = hardware concurrency).
inline std::vector<McCell> run_design(const std::string& panel_letter,
                                      const SimDesign& design,
                                      const std::vector<EstimatorSpec>& estimators,
                                      int n_reps, std::uint64_t base_seed,
                                      int n_threads = 0,
                                      const FactorSeries* history = nullptr) {
  const std::string component = "run_design";
  if (estimators.empty())
    throw Error(errc::invalid_config, component, "estimator list is empty");
  if (n_reps < 1)
    throw Error(errc::invalid_config, component, "n_reps must be positive");

  std::vector<detail::RepResult> slots(static_cast<std::size_t>(n_reps));
  int workers = n_threads > 0 ? n_threads
                              : static_cast<int>(std::thread::hardware_concurrency());
  if (workers < 1) workers = 1;
  workers = std::min(workers, n_reps);

  if (workers == 1) {
    for (int r = 0; r < n_reps; ++r)
      slots[static_cast<std::size_t>(r)] = detail::run_one_rep(
          design, estimators, base_seed + static_cast<std::uint64_t>(r), history);
  } else {
    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto work = [&]() {
      while (true) {
        int r = next.fetch_add(1);
        if (r >= n_reps) return;
        try {
          slots[static_cast<std::size_t>(r)] = detail::run_one_rep(
              design, estimators, base_seed + static_cast<std::uint64_t>(r), history);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  const int H = design.n_post;
  const detail::ScopeDef scopes[] = {
      {"AllPeriods", 0, H}, {"TreatedPeriod", 0, 0}, {"UntreatedPeriods", 1, H}};

  std::vector<McCell> cells;
  for (std::size_t e = 0; e < estimators.size(); ++e) {
    for (const auto& sc : scopes) {
      if (sc.lo > sc.hi) continue;  // no post periods -> skip Untreated scope
      double sum = 0.0, sum_abs = 0.0, sum_sq = 0.0;
      long n_cells = 0, n_cover = 0, n_hit = 0;
      for (int r = 0; r < n_reps; ++r) {
        const auto& res = slots[static_cast<std::size_t>(r)];
        if (!res.ok[e]) continue;
        for (int kappa = sc.lo; kappa <= sc.hi; ++kappa) {
          double b = res.bias[e][static_cast<std::size_t>(kappa)];
          sum += b;
          sum_abs += std::abs(b);
          sum_sq += b * b;
          ++n_cells;
          int h = res.hit[e][static_cast<std::size_t>(kappa)];
          if (h >= 0) {
            ++n_cover;
            n_hit += h;
          }
        }
      }
      McCell cell;
      cell.panel = panel_letter;
      cell.estimator = estimators[e].name();
      cell.scope = sc.name;
      const double nan = std::numeric_limits<double>::quiet_NaN();
      const double n = static_cast<double>(n_cells);
      cell.e_bias_pp = n_cells > 0 ? 100.0 * (sum / n) : nan;
      cell.mad_pp = n_cells > 0 ? 100.0 * (sum_abs / n) : nan;
      cell.rmse_pp = n_cells > 0 ? 100.0 * std::sqrt(sum_sq / n) : nan;
      cell.coverage = n_cover > 0
                          ? static_cast<double>(n_hit) / static_cast<double>(n_cover)
                          : std::numeric_limits<double>::quiet_NaN();
      cells.push_back(cell);
    }
  }
  return cells;
}

// The four-panel table: A random assignment + fixed (exogenous) timing,
// B selected assignment, C selected timing, D both selections.
inline McReport run_table(const SimDesign& base_design,
                          const std::vector<EstimatorSpec>& estimators, int n_reps,
                          std::uint64_t base_seed, int n_threads = 0,
                          const FactorSeries* history = nullptr) {
  struct PanelDef {
    const char* letter;
    Assignment assignment;
    Timing timing;
  };
  const PanelDef panels[] = {
      {"A", Assignment::Random, Timing::Fixed},
      {"B", Assignment::LogitOnSmb, Timing::Fixed},
      {"C", Assignment::Random, Timing::RankLogitOnSmb},
      {"D", Assignment::LogitOnSmb, Timing::RankLogitOnSmb},
  };
  McReport report;
  report.n_reps = n_reps;
  report.base_seed = base_seed;
  for (const auto& p : panels) {
    SimDesign d = base_design;
    d.assignment = p.assignment;
    d.timing = p.timing;
    auto cells = run_design(p.letter, d, estimators, n_reps, base_seed, n_threads, history);
    report.cells.insert(report.cells.end(), cells.begin(), cells.end());
  }
  report.validate();
  return report;
}

// One (omitted-factor realization, treated-period bias) point per
// replication, for the bias-vs-factor diagnostic plot. Defined for
// observed-factor estimators that omit at least one of the simulation's true
// factor columns; the x value is the realization of the highest-index
// omitted column on the event day.
struct ScatterPoint {
  double factor_realization = 0.0;  // decimal
  double bias = 0.0;                // decimal
};

inline std::vector<ScatterPoint> bias_scatter(const SimDesign& design,
                                              const EstimatorSpec& spec, int n_reps,
                                              std::uint64_t base_seed,
                                              const FactorSeries* history = nullptr) {
  const std::string component = "bias_scatter";
  if (n_reps < 1)
    throw Error(errc::invalid_config, component, "n_reps must be positive");
  if (spec.kind == EstimatorSpec::Kind::SyntheticControl ||
      spec.kind == EstimatorSpec::Kind::Gsynth)
    throw Error(errc::nothing_omitted, component,
                "estimator '" + spec.name() + "' has no observed-factor restriction");

  std::vector<ScatterPoint> points;
  int omitted_col = -1;
  for (int r = 0; r < n_reps; ++r) {
    SimDesign d = design;
    d.seed = base_seed + static_cast<std::uint64_t>(r);
    SimOutput sim = generate(d, history);
    if (omitted_col < 0) {
      std::set<int> observed;
      if (spec.kind == EstimatorSpec::Kind::MarketAdjusted) observed.insert(0);
      if (spec.kind == EstimatorSpec::Kind::FactorModel)
        for (const auto& nm : spec.factor_names) {
          int c = sim.factors.column(nm);
          if (c < 0)
            throw Error(errc::invalid_config, component, "unknown factor '" + nm + "'");
          observed.insert(c);
        }
      for (int c = 0; c < static_cast<int>(sim.truth.loadings.cols()); ++c)
        if (!observed.count(c)) omitted_col = c;
      if (omitted_col < 0)
        throw Error(errc::nothing_omitted, component,
                    "estimator observes every simulated factor");
    }
    ReturnsPanel excess = to_excess(sim.panel, sim.factors);
    std::vector<CohortEffect> effs;
    try {
      effs = estimate(excess, &sim.factors, sim.schedule, spec);
    } catch (const Error& err) {
      // Selected event days can sit too early for the estimation window; such
      // draws contribute no point.
      if (!detail::window_failure(err)) throw;
      continue;
    }
    EffectSeries series =
        aggregate_event_time(effs, default_cohort_weights(sim.schedule), 0);
    int event_pos = -1;
    for (int t = 0; t < sim.factors.n_times(); ++t)
      if (sim.factors.times[t] == sim.truth.event_period) event_pos = t;
    if (event_pos < 0)
      throw Error(errc::misaligned, component, "event period not on the factor axis");
    ScatterPoint p;
    p.factor_realization = sim.factors.values(event_pos, omitted_col);
    p.bias = series.event_time_att.at(0) - d.effect_size;
    points.push_back(p);
  }
  return points;
}

// ------------------------------------------------------------- serialization

// Full-precision CSV so identical runs produce identical bytes. Coverage is
// empty where not computable.
inline void emit_mc_csv(const McReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(errc::io_error, "emit_mc_csv", "cannot write " + path);
  out << "# base_seed=" << report.base_seed << "\n";
  out << "# n_reps=" << report.n_reps << "\n";
  out << "panel,estimator,scope,e_bias_pp,mad_pp,rmse_pp,coverage\n";
  auto field = [](double v) { return std::isnan(v) ? std::string() : detail::fmt17(v); };
  auto quoted = [](const std::string& s) {
    if (s.find_first_of(",\"") == std::string::npos) return s;
    std::string q = "\"";
    for (char ch : s) {
      if (ch == '"') q += '"';
      q += ch;
    }
    return q + "\"";
  };
  for (const auto& c : report.cells) {
    out << c.panel << "," << quoted(c.estimator) << "," << c.scope << ","
        << field(c.e_bias_pp) << "," << field(c.mad_pp) << ","
        << field(c.rmse_pp) << "," << field(c.coverage) << "\n";
  }
  if (!out) throw Error(errc::io_error, "emit_mc_csv", "write failed " + path);
}

inline std::string estimator_display_name(const std::string& config_name) {
  if (config_name == "diff_means") return "Simple Means";
  if (config_name == "market") return "Market-Adjusted";
  if (config_name == "factor:Mkt-RF") return "CAPM";
  if (config_name == "factor:Mkt-RF,SMB") return "Two-Factor";
  if (config_name == "sc") return "Synthetic Control";
  if (config_name.rfind("gsynth", 0) == 0) return "Gsynth (PCA)";
  return config_name;
}

// Monospace table, one block per panel, estimators as rows and
// scope-grouped statistics as columns.
inline std::string render_mc_table(const McReport& report) {
  static const char* panel_titles[] = {
      "Panel A: Random Assignment + Random Timing",
      "Panel B: Assignment Selection + Random Timing",
      "Panel C: Random Assignment + Timing Selection",
      "Panel D: Assignment Selection + Timing Selection",
  };
  auto title_for = [&](const std::string& p) -> std::string {
    if (p.size() == 1 && p[0] >= 'A' && p[0] <= 'D')
      return panel_titles[p[0] - 'A'];
    return "Panel " + p;
  };
  auto fmt2 = [](double v, int width) {
    char buf[32];
    if (std::isnan(v))
      std::snprintf(buf, sizeof(buf), "%*s", width, "--");
    else
      std::snprintf(buf, sizeof(buf), "%*.2f", width, v);
    return std::string(buf);
  };

  std::vector<std::string> panel_order;
  for (const auto& c : report.cells)
    if (std::find(panel_order.begin(), panel_order.end(), c.panel) == panel_order.end())
      panel_order.push_back(c.panel);

  std::ostringstream os;
  os << "Monte Carlo bias report (" << report.n_reps << " replications, base seed "
     << report.base_seed << "; percentage points)\n";
  for (const auto& p : panel_order) {
    os << "\n" << title_for(p) << "\n";
    os << "                      |      All Periods      |     Treated Period    |"
          "    Untreated Periods\n";
    os << "  Estimator           | E(Bias)   MAD  Cover  | E(Bias)   MAD  Cover  |"
          " E(Bias)   MAD  Cover\n";
    os << "  --------------------+-----------------------+-----------------------+"
          "---------------------\n";
    std::vector<std::string> ests;
    for (const auto& c : report.cells)
      if (c.panel == p && std::find(ests.begin(), ests.end(), c.estimator) == ests.end())
        ests.push_back(c.estimator);
    for (const auto& est : ests) {
      char label[32];
      std::snprintf(label, sizeof(label), "%-20s",
                    estimator_display_name(est).c_str());
      std::string row = std::string("  ") + label + "|";
      for (const char* scope : {"AllPeriods", "TreatedPeriod", "UntreatedPeriods"}) {
        const McCell* cell = nullptr;
        for (const auto& c : report.cells)
          if (c.panel == p && c.estimator == est && c.scope == scope) cell = &c;
        if (cell)
          row += " " + fmt2(cell->e_bias_pp, 7) + " " + fmt2(cell->mad_pp, 5) + " " +
                 fmt2(cell->coverage, 6) + "  |";
        else
          row += "      --    --     --  |";
      }
      row.pop_back();
      os << row << "\n";
    }
  }
  return os.str();
}

// Percent units on both axes, full precision.
inline void emit_scatter_csv(const std::vector<ScatterPoint>& points,
                             std::uint64_t base_seed, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(errc::io_error, "emit_scatter_csv", "cannot write " + path);
  out << "# base_seed=" << base_seed << "\n";
  out << "omitted_factor_pct,treated_period_bias_pct\n";
  for (const auto& p : points)
    out << detail::fmt17(100.0 * p.factor_realization) << ","
        << detail::fmt17(100.0 * p.bias) << "\n";
  if (!out) throw Error(errc::io_error, "emit_scatter_csv", "write failed " + path);
}

}  // namespace eventcausal
