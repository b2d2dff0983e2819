#pragma once

// Data model for return panels, factor series, and event schedules, plus the
// CSV ingestion/emission layer. Panels are balanced and dense by construction:
// unbalanced input is rejected at load time, never imputed. Time is an abstract
// integer index everywhere; calendar dates exist only inside the daily-factor
// file reader. All types are immutable-by-convention after construction and
// safe to share across threads.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "eventcausal/errors.hpp"

namespace eventcausal {

struct ReturnsPanel {
  std::vector<std::string> securities;  // N opaque ids, row order
  std::vector<int> times;               // T strictly increasing period indices
  Eigen::MatrixXd values;               // N x T simple returns, decimal
  bool excess_adjusted = false;         // true once risk-free subtracted

  int n_securities() const { return static_cast<int>(securities.size()); }
  int n_times() const { return static_cast<int>(times.size()); }

  // Position of a time label, or -1.
  int time_pos(int t) const {
    auto it = std::lower_bound(times.begin(), times.end(), t);
    if (it == times.end() || *it != t) return -1;
    return static_cast<int>(it - times.begin());
  }

  int security_pos(const std::string& id) const {
    for (int i = 0; i < n_securities(); ++i)
      if (securities[i] == id) return i;
    return -1;
  }
};

struct FactorSeries {
  std::vector<int> times;          // aligned with any panel it is used with
  Eigen::MatrixXd values;          // T x K decimal factor returns
  std::vector<std::string> names;  // K labels
  Eigen::VectorXd risk_free;       // length T, decimal

  int n_times() const { return static_cast<int>(times.size()); }
  int n_factors() const { return static_cast<int>(names.size()); }

  int column(const std::string& name) const {
    for (int k = 0; k < n_factors(); ++k)
      if (names[k] == name) return k;
    return -1;
  }
};

// Event time per security: a period index, or nothing (never treated).
using EventTime = std::optional<int>;

struct EventSchedule {
  std::map<std::string, EventTime> event_time;  // security id -> Finite/Never
  int anticipation_delta = 0;                   // periods of permitted leakage

  // Distinct finite event times, ascending.
  std::vector<int> cohorts() const {
    std::set<int> s;
    for (const auto& [id, t] : event_time)
      if (t) s.insert(*t);
    return {s.begin(), s.end()};
  }

  std::vector<std::string> cohort_members(int s) const {
    std::vector<std::string> out;
    for (const auto& [id, t] : event_time)
      if (t && *t == s) out.push_back(id);
    return out;
  }

  std::vector<std::string> control_ids() const {
    std::vector<std::string> out;
    for (const auto& [id, t] : event_time)
      if (!t) out.push_back(id);
    return out;
  }
};

struct CohortWeights {
  std::map<int, double> weights;  // cohort time s -> w_s, sums to 1

  double at(int s) const {
    auto it = weights.find(s);
    if (it == weights.end())
      throw Error(errc::missing_horizon, "CohortWeights",
                  "no weight for cohort " + std::to_string(s));
    return it->second;
  }
};

// Default rule: w_s = N_s / sum N_{s'}.
inline CohortWeights default_cohort_weights(const EventSchedule& schedule) {
  CohortWeights w;
  double total = 0.0;
  for (const auto& [id, t] : schedule.event_time)
    if (t) {
      w.weights[*t] += 1.0;
      total += 1.0;
    }
  if (total == 0.0)
    throw Error(errc::empty_cohort, "CohortWeights", "schedule has no events");
  for (auto& [s, v] : w.weights) v /= total;
  return w;
}

// ---------------------------------------------------------------- csv utils

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline bool parse_double(const std::string& s, double* out) {
  if (s.empty()) return false;
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) return false;
  *out = v;
  return true;
}

inline bool parse_int(const std::string& s, long* out) {
  if (s.empty()) return false;
  char* end = nullptr;
  long v = std::strtol(s.c_str(), &end, 10);
  if (end != s.c_str() + s.size()) return false;
  *out = v;
  return true;
}

// 17 significant digits: enough for exact double round-trips.
inline std::string fmt17(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline bool skippable(const std::string& line) {
  std::string t = trim(line);
  return t.empty() || t[0] == '#';
}

}  // namespace detail

// ------------------------------------------------------------- panel csv io

// Long format: header "security_id,time,return", one row per cell. Rows may
// arrive in any order; the panel is normalized (times ascending, securities in
// first-appearance order). Duplicate cells, missing cells, and non-finite
// values are all hard errors.
inline ReturnsPanel load_panel_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(errc::io_error, "ReturnsPanel", "cannot open " + path);

  std::string line;
  long line_no = 0;
  bool saw_header = false;
  struct Cell {
    int sec;
    int time;
    double value;
  };
  std::vector<Cell> cells;
  std::vector<std::string> sec_order;
  std::unordered_map<std::string, int> sec_idx;
  std::set<int> time_set;

  while (std::getline(in, line)) {
    ++line_no;
    if (detail::skippable(line)) continue;
    auto f = detail::split_csv(line);
    if (!saw_header) {
      if (f.size() != 3 || f[0] != "security_id" || f[1] != "time" || f[2] != "return")
        throw Error(errc::parse_error, "ReturnsPanel",
                    "expected header security_id,time,return at line " +
                        std::to_string(line_no));
      saw_header = true;
      continue;
    }
    if (f.size() != 3)
      throw Error(errc::parse_error, "ReturnsPanel",
                  "malformed row at line " + std::to_string(line_no));
    long t = 0;
    double v = 0.0;
    if (f[0].empty() || !detail::parse_int(f[1], &t) || !detail::parse_double(f[2], &v))
      throw Error(errc::parse_error, "ReturnsPanel",
                  "malformed row at line " + std::to_string(line_no));
    if (!std::isfinite(v))
      throw Error(errc::non_finite, "ReturnsPanel",
                  "non-finite return at line " + std::to_string(line_no));
    auto [it, inserted] = sec_idx.try_emplace(f[0], static_cast<int>(sec_order.size()));
    if (inserted) sec_order.push_back(f[0]);
    cells.push_back({it->second, static_cast<int>(t), v});
    time_set.insert(static_cast<int>(t));
  }
  if (!saw_header)
    throw Error(errc::parse_error, "ReturnsPanel", "empty file " + path);
  if (cells.empty())
    throw Error(errc::parse_error, "ReturnsPanel", "no data rows in " + path);

  ReturnsPanel p;
  p.securities = sec_order;
  p.times.assign(time_set.begin(), time_set.end());
  const int n = p.n_securities(), t_count = p.n_times();
  std::unordered_map<int, int> time_pos;
  for (int j = 0; j < t_count; ++j) time_pos[p.times[j]] = j;

  p.values.setZero(n, t_count);
  std::vector<uint8_t> seen(static_cast<size_t>(n) * t_count, 0);
  for (const auto& c : cells) {
    size_t slot = static_cast<size_t>(c.sec) * t_count + time_pos[c.time];
    if (seen[slot])
      throw Error(errc::parse_error, "ReturnsPanel",
                  "duplicate cell (" + sec_order[c.sec] + "," +
                      std::to_string(c.time) + ")");
    seen[slot] = 1;
    p.values(c.sec, time_pos[c.time]) = c.value;
  }
  std::vector<std::string> missing;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < t_count; ++j)
      if (!seen[static_cast<size_t>(i) * t_count + j]) {
        missing.push_back(sec_order[i]);
        break;
      }
  if (!missing.empty()) {
    std::string list;
    for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
    throw Error(errc::unbalanced_panel, "ReturnsPanel",
                "securities with missing periods: " + list);
  }
  if (t_count < 2)
    throw Error(errc::parse_error, "ReturnsPanel", "need at least 2 periods");
  return p;
}

inline void emit_panel_csv(const ReturnsPanel& p, const std::string& path,
                           const std::string& header_comment = "") {
  std::ofstream out(path);
  if (!out) throw Error(errc::io_error, "ReturnsPanel", "cannot write " + path);
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  out << "security_id,time,return\n";
  for (int i = 0; i < p.n_securities(); ++i)
    for (int j = 0; j < p.n_times(); ++j)
      out << p.securities[i] << "," << p.times[j] << ","
          << detail::fmt17(p.values(i, j)) << "\n";
  if (!out) throw Error(errc::io_error, "ReturnsPanel", "write failed " + path);
}

// -------------------------------------------------------- factor series io

// Normalized factor CSV: header "time,<name1>,...,<nameK>,rf".
inline FactorSeries load_factor_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(errc::io_error, "FactorSeries", "cannot open " + path);
  std::string line;
  long line_no = 0;
  bool saw_header = false;
  std::vector<std::string> names;
  std::vector<int> times;
  std::vector<std::vector<double>> rows;
  std::vector<double> rf;

  while (std::getline(in, line)) {
    ++line_no;
    if (detail::skippable(line)) continue;
    auto f = detail::split_csv(line);
    if (!saw_header) {
      if (f.size() < 2 || f[0] != "time" || f.back() != "rf")
        throw Error(errc::parse_error, "FactorSeries",
                    "expected header time,<names...>,rf at line " +
                        std::to_string(line_no));
      names.assign(f.begin() + 1, f.end() - 1);
      saw_header = true;
      continue;
    }
    if (f.size() != names.size() + 2)
      throw Error(errc::parse_error, "FactorSeries",
                  "malformed row at line " + std::to_string(line_no));
    long t = 0;
    if (!detail::parse_int(f[0], &t))
      throw Error(errc::parse_error, "FactorSeries",
                  "bad time at line " + std::to_string(line_no));
    std::vector<double> vals(names.size());
    for (size_t k = 0; k < names.size(); ++k) {
      if (!detail::parse_double(f[k + 1], &vals[k]) || !std::isfinite(vals[k]))
        throw Error(errc::non_finite, "FactorSeries",
                    "bad factor value at line " + std::to_string(line_no));
    }
    double r = 0.0;
    if (!detail::parse_double(f.back(), &r) || !std::isfinite(r))
      throw Error(errc::non_finite, "FactorSeries",
                  "bad rf value at line " + std::to_string(line_no));
    times.push_back(static_cast<int>(t));
    rows.push_back(std::move(vals));
    rf.push_back(r);
  }
  if (!saw_header)
    throw Error(errc::parse_error, "FactorSeries", "empty file " + path);
  if (times.empty()) throw Error(errc::empty_series, "FactorSeries", path);

  FactorSeries s;
  s.times = times;
  s.names = names;
  s.values.resize(static_cast<int>(rows.size()), static_cast<int>(names.size()));
  s.risk_free.resize(static_cast<int>(rf.size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    for (size_t k = 0; k < names.size(); ++k)
      s.values(static_cast<int>(i), static_cast<int>(k)) = rows[i][k];
    s.risk_free(static_cast<int>(i)) = rf[i];
  }
  return s;
}

inline void emit_factor_csv(const FactorSeries& s, const std::string& path,
                            const std::string& header_comment = "") {
  std::ofstream out(path);
  if (!out) throw Error(errc::io_error, "FactorSeries", "cannot write " + path);
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  out << "time";
  for (const auto& n : s.names) out << "," << n;
  out << ",rf\n";
  for (int t = 0; t < s.n_times(); ++t) {
    out << s.times[t];
    for (int k = 0; k < s.n_factors(); ++k)
      out << "," << detail::fmt17(s.values(t, k));
    out << "," << detail::fmt17(s.risk_free(t)) << "\n";
  }
  if (!out) throw Error(errc::io_error, "FactorSeries", "write failed " + path);
}

// Daily-factor research file: optional preamble/footer text, a header line,
// then rows "YYYYMMDD, Mkt-RF, SMB, HML, RF" in percent. Non-matching lines
// are skipped (the published files carry copyright footers and blank lines);
// matching rows are converted to decimals and indexed 0..n-1 in file order.
inline FactorSeries load_ff_daily(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(errc::io_error, "FactorSeries", "cannot open " + path);
  std::string line;
  std::vector<std::array<double, 4>> rows;  // mkt-rf, smb, hml, rf (decimal)
  while (std::getline(in, line)) {
    auto f = detail::split_csv(line);
    if (f.size() != 5) continue;
    const std::string& d = f[0];
    if (d.size() != 8 ||
        !std::all_of(d.begin(), d.end(),
                     [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
      continue;
    std::array<double, 4> v{};
    bool ok = true;
    for (int k = 0; k < 4; ++k) {
      double x = 0.0;
      if (!detail::parse_double(f[k + 1], &x) || !std::isfinite(x)) {
        ok = false;
        break;
      }
      v[k] = x / 100.0;
    }
    if (!ok) continue;
    rows.push_back(v);
  }
  if (rows.empty())
    throw Error(errc::empty_series, "FactorSeries",
                "no factor rows recognized in " + path);
  FactorSeries s;
  s.names = {"Mkt-RF", "SMB", "HML"};
  const int n = static_cast<int>(rows.size());
  s.times.resize(n);
  s.values.resize(n, 3);
  s.risk_free.resize(n);
  for (int i = 0; i < n; ++i) {
    s.times[i] = i;
    s.values(i, 0) = rows[i][0];
    s.values(i, 1) = rows[i][1];
    s.values(i, 2) = rows[i][2];
    s.risk_free(i) = rows[i][3];
  }
  return s;
}

// ------------------------------------------------------------ event schedule

// Events CSV: header "security_id,event_time"; event_time is an integer period
// or the literal "never". An optional comment "# anticipation_delta=<int>"
// before the header carries the leakage horizon.
inline EventSchedule load_events_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(errc::io_error, "EventSchedule", "cannot open " + path);
  EventSchedule sched;
  std::string line;
  long line_no = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = detail::trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      auto pos = t.find("anticipation_delta=");
      if (pos != std::string::npos) {
        long d = 0;
        if (detail::parse_int(detail::trim(t.substr(pos + 19)), &d) && d >= 0)
          sched.anticipation_delta = static_cast<int>(d);
      }
      continue;
    }
    auto f = detail::split_csv(line);
    if (!saw_header) {
      if (f.size() != 2 || f[0] != "security_id" || f[1] != "event_time")
        throw Error(errc::parse_error, "EventSchedule",
                    "expected header security_id,event_time at line " +
                        std::to_string(line_no));
      saw_header = true;
      continue;
    }
    if (f.size() != 2 || f[0].empty())
      throw Error(errc::parse_error, "EventSchedule",
                  "malformed row at line " + std::to_string(line_no));
    if (sched.event_time.count(f[0]))
      throw Error(errc::parse_error, "EventSchedule",
                  "duplicate security " + f[0]);
    if (f[1] == "never") {
      sched.event_time[f[0]] = std::nullopt;
    } else {
      long t2 = 0;
      if (!detail::parse_int(f[1], &t2))
        throw Error(errc::parse_error, "EventSchedule",
                    "bad event_time at line " + std::to_string(line_no));
      sched.event_time[f[0]] = static_cast<int>(t2);
    }
  }
  if (!saw_header)
    throw Error(errc::parse_error, "EventSchedule", "empty file " + path);
  return sched;
}

inline void emit_events_csv(const EventSchedule& sched, const std::string& path,
                            const std::string& header_comment = "") {
  std::ofstream out(path);
  if (!out) throw Error(errc::io_error, "EventSchedule", "cannot write " + path);
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  out << "# anticipation_delta=" << sched.anticipation_delta << "\n";
  out << "security_id,event_time\n";
  for (const auto& [id, t] : sched.event_time)
    out << id << "," << (t ? std::to_string(*t) : std::string("never")) << "\n";
  if (!out) throw Error(errc::io_error, "EventSchedule", "write failed " + path);
}

// -------------------------------------------------------------- adjustments

// Subtract the risk-free rate from every cell. Guarded: a second application
// is an error, never a silent double subtraction.
inline ReturnsPanel to_excess(const ReturnsPanel& panel, const FactorSeries& factors) {
  if (panel.excess_adjusted)
    throw Error(errc::already_adjusted, "ReturnsPanel",
                "panel already risk-free adjusted");
  if (panel.times != factors.times)
    throw Error(errc::misaligned, "ReturnsPanel",
                "panel and factor time axes differ");
  ReturnsPanel out = panel;
  for (int j = 0; j < out.n_times(); ++j)
    out.values.col(j).array() -= factors.risk_free(j);
  out.excess_adjusted = true;
  return out;
}

// Schedule/panel consistency: every scheduled id exists in the panel and every
// finite event time lies on the panel's time axis.
inline void validate_schedule(const ReturnsPanel& panel, const EventSchedule& sched) {
  for (const auto& [id, t] : sched.event_time) {
    if (panel.security_pos(id) < 0)
      throw Error(errc::parse_error, "EventSchedule",
                  "security " + id + " not present in panel");
    if (t && panel.time_pos(*t) < 0)
      throw Error(errc::misaligned, "EventSchedule",
                  "event time " + std::to_string(*t) + " not on panel axis");
  }
}

}  // namespace eventcausal
