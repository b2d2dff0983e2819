#pragma once

// Simulated return panels under a two-factor linear model with selectable
// treatment-assignment and event-timing mechanisms, plus a fat-tailed
// synthetic factor generator for environments without a factor history file.
//
// generate() is a pure function of (design, seed): the draw order is frozen
// (loadings, factors, assignment, timing, noise) so replications are
// reproducible and can run concurrently with per-replication seeds.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include "eventcausal/errors.hpp"
#include "eventcausal/panel.hpp"

namespace eventcausal {

enum class Assignment { Random, LogitOnSmb };
enum class Timing { Fixed, RankLogitOnSmb };

// Independent Student-t draws per factor, scaled/shifted to a target mean and
// interquartile range. Heavy tails are the point: daily factor returns have
// calm medians and violent extremes, and several downstream diagnostics
// (selection toward extreme days, MAD vs RMSE gaps) depend on that shape.
struct SyntheticFatTailParams {
  double nu = 2.2;           // tail index; lower = heavier tails
  double mean_mkt = 0.0005;  // market excess return, daily mean
  double iqr_mkt = 0.01;     // market excess return, daily IQR
  double mean_smb = 0.00005;
  double iqr_smb = 0.0022;
  double rf_daily = 0.000119;  // flat short rate, ~3%/yr
};

struct FactorSource {
  enum class Kind { File, Synthetic };
  Kind kind = Kind::Synthetic;
  std::string path;  // File: normalized factor CSV (see load_factor_csv)
  SyntheticFatTailParams synth;
};

struct SimDesign {
  int n_firms = 500;
  int n_pre = 239;
  int n_post = 10;
  double treat_share = 0.10;
  double effect_size = 0.03;  // added on the event day only
  double loading_mean = 1.0;
  double loading_sd = 0.3;
  double noise_sd = 0.002;  // daily idiosyncratic sd, decimal
  Assignment assignment = Assignment::Random;
  Timing timing = Timing::Fixed;
  FactorSource factor_source;
  int block_length = 0;  // 0 = one block of the full panel length
  std::uint64_t seed = 20260822;

  int n_periods() const { return n_pre + 1 + n_post; }
};

inline void validate_design(const SimDesign& d) {
  auto bad = [&](const std::string& msg) {
    throw Error(errc::invalid_config, "SimDesign", msg);
  };
  if (d.n_firms < 2) bad("n_firms must be at least 2");
  if (d.n_pre < 1) bad("n_pre must be at least 1");
  if (d.n_post < 0) bad("n_post must be non-negative");
  if (!(d.treat_share > 0.0 && d.treat_share < 1.0)) bad("treat_share must be in (0,1)");
  if (d.loading_sd < 0.0) bad("loading_sd must be non-negative");
  if (d.noise_sd < 0.0) bad("noise_sd must be non-negative");
  if (d.block_length != 0 && d.block_length != d.n_periods())
    bad("block_length must be 0 (auto) or equal to the panel length");
  if (d.factor_source.kind == FactorSource::Kind::Synthetic &&
      d.factor_source.synth.nu <= 1.0)
    bad("synthetic tail index nu must exceed 1");
}

// Ground truth retained from a simulation run, for bias oracles downstream.
struct SimTruth {
  Eigen::VectorXd alphas;    // per-firm intercepts (identically 0 here)
  Eigen::MatrixXd loadings;  // N x 2: market loading, smb loading
  std::set<std::string> treated_ids;
  int event_period = 0;  // time label on the panel axis
  std::map<std::pair<std::string, int>, double> true_effects;
  Eigen::MatrixXd eps;  // N x T realized idiosyncratic draws
};

namespace detail {

inline double student_t_scale(double nu, double iqr) {
  boost::math::students_t_distribution<double> dist(nu);
  return iqr / (2.0 * boost::math::quantile(dist, 0.75));
}

}  // namespace detail

// Draw a length-n synthetic factor series (market excess + smb analog),
// i.i.d. across days, heavy-tailed within each day, flat risk-free rate.
inline FactorSeries synthetic_factors(const SyntheticFatTailParams& p, int n_days,
                                      std::mt19937_64& rng) {
  std::student_t_distribution<double> tdist(p.nu);
  const double s_mkt = detail::student_t_scale(p.nu, p.iqr_mkt);
  const double s_smb = detail::student_t_scale(p.nu, p.iqr_smb);
  FactorSeries f;
  f.names = {"Mkt-RF", "SMB"};
  f.times.resize(n_days);
  f.values.resize(n_days, 2);
  f.risk_free.setConstant(n_days, p.rf_daily);
  for (int t = 0; t < n_days; ++t) {
    f.times[t] = t + 1;
    f.values(t, 0) = p.mean_mkt + s_mkt * tdist(rng);
    f.values(t, 1) = p.mean_smb + s_smb * tdist(rng);
  }
  return f;
}

// One contiguous block of the panel length from a factor history, start drawn
// uniformly; rows move jointly so contemporaneous correlation and
// autocorrelation survive. With a synthetic source the block is drawn fresh.
// The returned series lives on the panel's own axis (times 1..n).
inline FactorSeries sample_factors(const SimDesign& design,
                                   const FactorSeries* history,
                                   std::mt19937_64& rng) {
  const int n = design.n_periods();
  if (design.factor_source.kind == FactorSource::Kind::Synthetic && history == nullptr)
    return synthetic_factors(design.factor_source.synth, n, rng);

  if (history == nullptr)
    throw Error(errc::invalid_config, "sample_factors",
                "file factor source requires a loaded history");
  const int H = history->n_times();
  if (H < n)
    throw Error(errc::history_too_short, "sample_factors",
                "history has " + std::to_string(H) + " rows, need " + std::to_string(n));
  std::uniform_int_distribution<int> start_dist(0, H - n);
  const int start = start_dist(rng);

  FactorSeries f;
  f.names = history->names;
  f.times.resize(n);
  f.values = history->values.middleRows(start, n);
  f.risk_free = history->risk_free.segment(start, n);
  for (int t = 0; t < n; ++t) f.times[t] = t + 1;
  return f;
}

// Treated-firm draw. Random: independent coin flips at the configured share.
// LogitOnSmb: p_i = logistic(delta * beta_smb_i) with the slope anchored so a
// firm at the realized mean smb loading sits near the configured share;
// delta < 0, so low-smb firms are the likely treated. A draw with zero
// treated firms is redrawn wholesale.
inline std::vector<int> assign_treatment(const SimDesign& design,
                                         const Eigen::MatrixXd& loadings,
                                         std::mt19937_64& rng) {
  const int n = static_cast<int>(loadings.rows());
  std::vector<double> prob(n, design.treat_share);
  if (design.assignment == Assignment::LogitOnSmb) {
    const double mean_smb = loadings.col(1).mean();
    const double delta = std::log(design.treat_share) / mean_smb;
    for (int i = 0; i < n; ++i) {
      double e = std::exp(delta * loadings(i, 1));
      prob[i] = e / (1.0 + e);
    }
  }
  for (int attempt = 0; attempt < 100000; ++attempt) {
    std::vector<int> treated;
    for (int i = 0; i < n; ++i) {
      std::bernoulli_distribution coin(prob[i]);
      if (coin(rng)) treated.push_back(i);
    }
    if (!treated.empty()) return treated;
  }
  throw Error(errc::numerical_failure, "assign_treatment",
              "no non-empty assignment after 100000 redraws");
}

// Event-day draw, returning a time label on the factor series axis. Fixed:
// the day after the pre window. RankLogitOnSmb: rank days by smb realization
// (rank 1 = highest, equal values randomly ordered), give each eligible day
// p_t = logistic(delta * rank_t) with delta = ln(1/T)/mean(rank) < 0, keep the
// highest-smb day among those drawn, redraw if none. Days without at least
// one pre period and a full post horizon are never candidates.
inline int select_timing(const SimDesign& design, const FactorSeries& factors,
                         std::mt19937_64& rng) {
  const int T = factors.n_times();
  if (T != design.n_periods())
    throw Error(errc::misaligned, "select_timing",
                "factor series length != panel length");
  if (design.timing == Timing::Fixed) return factors.times[design.n_pre];

  const int lo = 1, hi = T - 1 - design.n_post;
  if (hi < lo)
    throw Error(errc::invalid_config, "select_timing",
                "no eligible event day given the post horizon");

  // Ranks over all T days; a pre-shuffle randomizes equal-value order so that
  // degenerate (all-equal) series make every eligible day equiprobable.
  std::vector<int> order(T);
  for (int i = 0; i < T; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return factors.values(a, 1) > factors.values(b, 1);
  });
  std::vector<int> rank(T);
  for (int r = 0; r < T; ++r) rank[order[r]] = r + 1;

  const double mean_rank = (static_cast<double>(T) + 1.0) / 2.0;
  const double delta = std::log(1.0 / static_cast<double>(T)) / mean_rank;

  for (int attempt = 0; attempt < 100000; ++attempt) {
    int best_pos = -1;
    for (int pos = lo; pos <= hi; ++pos) {
      double e = std::exp(delta * static_cast<double>(rank[pos]));
      std::bernoulli_distribution coin(e / (1.0 + e));
      if (coin(rng) && (best_pos < 0 || rank[pos] < rank[best_pos])) best_pos = pos;
    }
    if (best_pos >= 0) return factors.times[best_pos];
  }
  throw Error(errc::numerical_failure, "select_timing",
              "no event day drawn after 100000 redraws");
}

struct SimOutput {
  ReturnsPanel panel;
  FactorSeries factors;
  EventSchedule schedule;
  SimTruth truth;
};

inline std::string firm_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "F%04d", i + 1);
  return buf;
}

// Build one simulated panel:
//   r_it = rf_t + beta_mkt_i * (mkt excess)_t + beta_smb_i * smb_t + eps_it
// plus the configured effect for treated firms on the event day. Raw (not
// excess) returns are emitted; callers subtract rf via to_excess before
// estimating, mirroring how real data flows through the pipeline.
inline SimOutput generate(const SimDesign& design, const FactorSeries* history = nullptr) {
  validate_design(design);
  std::mt19937_64 rng(design.seed);

  const int N = design.n_firms;
  const int T = design.n_periods();

  // 1. loadings
  std::normal_distribution<double> load_dist(design.loading_mean, design.loading_sd);
  Eigen::MatrixXd loadings(N, 2);
  for (int i = 0; i < N; ++i) {
    loadings(i, 0) = load_dist(rng);
    loadings(i, 1) = load_dist(rng);
  }

  // 2. factors
  FactorSeries factors = sample_factors(design, history, rng);
  if (factors.n_factors() < 2)
    throw Error(errc::invalid_config, "generate",
                "factor source must provide at least 2 columns");

  // 3. assignment, 4. timing
  std::vector<int> treated_rows = assign_treatment(design, loadings, rng);
  const int event_time = select_timing(design, factors, rng);
  const int event_pos = [&] {
    for (int t = 0; t < T; ++t)
      if (factors.times[t] == event_time) return t;
    throw Error(errc::misaligned, "generate", "event time not on factor axis");
  }();

  // 5. noise
  std::normal_distribution<double> noise_dist(0.0, design.noise_sd > 0.0 ? design.noise_sd : 1.0);
  Eigen::MatrixXd eps(N, T);
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t)
      eps(i, t) = design.noise_sd > 0.0 ? noise_dist(rng) : 0.0;

  std::set<int> treated_set(treated_rows.begin(), treated_rows.end());
  SimOutput out;
  out.factors = factors;
  out.panel.times = factors.times;
  out.panel.securities.resize(N);
  out.panel.values.resize(N, T);
  out.panel.excess_adjusted = false;
  out.truth.alphas = Eigen::VectorXd::Zero(N);
  out.truth.loadings = loadings;
  out.truth.event_period = event_time;
  out.truth.eps = eps;

  for (int i = 0; i < N; ++i) {
    out.panel.securities[i] = firm_id(i);
    const bool is_treated = treated_set.count(i) > 0;
    for (int t = 0; t < T; ++t) {
      double r = factors.risk_free(t) + loadings(i, 0) * factors.values(t, 0) +
                 loadings(i, 1) * factors.values(t, 1) + eps(i, t);
      if (is_treated && t == event_pos) r += design.effect_size;
      out.panel.values(i, t) = r;
    }
    if (is_treated) {
      out.truth.treated_ids.insert(out.panel.securities[i]);
      out.truth.true_effects[{out.panel.securities[i], event_time}] = design.effect_size;
      out.schedule.event_time[out.panel.securities[i]] = event_time;
    } else {
      out.schedule.event_time[out.panel.securities[i]] = std::nullopt;
    }
  }
  out.schedule.anticipation_delta = 0;
  return out;
}

// Write a synthetic factor history in the public daily-factor research-file
// layout: preamble text, header, rows "YYYYMMDD,Mkt-RF,SMB,HML,RF" in percent,
// a text footer. The third factor column is drawn like the second; dates are
// synthetic but strictly increasing. Used to exercise the ingestion path when
// no real history file is available.
inline void write_synthetic_ff_file(const SyntheticFatTailParams& p, int n_days,
                                    std::uint64_t seed, const std::string& path) {
  std::mt19937_64 rng(seed);
  std::student_t_distribution<double> tdist(p.nu);
  const double s_mkt = detail::student_t_scale(p.nu, p.iqr_mkt);
  const double s_smb = detail::student_t_scale(p.nu, p.iqr_smb);

  std::ofstream out(path);
  if (!out) throw Error(errc::io_error, "write_synthetic_ff_file", "cannot write " + path);
  out << "This file was created from synthetic draws for offline testing\n";
  out << "\n,Mkt-RF,SMB,HML,RF\n";
  char date[16];
  for (int i = 0; i < n_days; ++i) {
    int day = 1 + i % 28, month = 1 + (i / 28) % 12, year = 1926 + i / (28 * 12);
    std::snprintf(date, sizeof(date), "%04d%02d%02d", year, month, day);
    double mkt = p.mean_mkt + s_mkt * tdist(rng);
    double smb = p.mean_smb + s_smb * tdist(rng);
    double hml = p.mean_smb + s_smb * tdist(rng);
    out << date << "," << detail::fmt17(mkt * 100.0) << "," << detail::fmt17(smb * 100.0)
        << "," << detail::fmt17(hml * 100.0) << "," << detail::fmt17(p.rf_daily * 100.0)
        << "\n";
  }
  out << "\nCopyright-style footer line, ignored by the reader\n";
  if (!out) throw Error(errc::io_error, "write_synthetic_ff_file", "write failed " + path);
}

}  // namespace eventcausal
