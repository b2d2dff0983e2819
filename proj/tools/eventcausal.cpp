// Command-line front end: simulate panels, estimate event effects on files,
// run the Monte Carlo bias table, emit the bias-vs-factor scatter, and
// normalize a daily factor research file. Batch-only; every output is a file
// under --out, and identical configs + seeds produce identical bytes.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "eventcausal/config.hpp"
#include "eventcausal/dgp.hpp"
#include "eventcausal/effects.hpp"
#include "eventcausal/errors.hpp"
#include "eventcausal/estimators.hpp"
#include "eventcausal/inference.hpp"
#include "eventcausal/montecarlo.hpp"
#include "eventcausal/panel.hpp"

namespace ec = eventcausal;
using nlohmann::json;

namespace {

struct GlobalFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> reps;
  std::string out_dir = ".";
  int threads = 0;
  std::vector<std::string> formats;
};

ec::RunConfig load_config_or_default(const GlobalFlags& g) {
  ec::RunConfig cfg;
  cfg.montecarlo.estimators = ec::default_mc_estimators();
  if (!g.config_path.empty()) cfg = ec::load_run_config(g.config_path);
  if (!g.formats.empty()) {
    cfg.output.formats.clear();
    for (const auto& f : g.formats) cfg.output.formats.insert(f);
  }
  if (g.out_dir != ".") cfg.output.directory = g.out_dir;
  return cfg;
}

std::string out_path(const ec::RunConfig& cfg, const std::string& name) {
  std::filesystem::create_directories(cfg.output.directory);
  return (std::filesystem::path(cfg.output.directory) / name).string();
}

// Factor history: a normalized CSV (header "time,...") or a raw daily
// research file, sniffed by the first non-comment line.
ec::FactorSeries load_factor_history(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw ec::Error(ec::errc::io_error, "FactorSeries", "cannot open " + path);
  std::string line;
  while (std::getline(in, line)) {
    std::string t = ec::detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.rfind("time,", 0) == 0) return ec::load_factor_csv(path);
    return ec::load_ff_daily(path);
  }
  throw ec::Error(ec::errc::empty_series, "FactorSeries", "no data rows in " + path);
}

std::string resolve_ff_path(const std::string& explicit_path) {
  if (!explicit_path.empty()) return explicit_path;
  const char* env = std::getenv("EVENTCAUSAL_FF_PATH");
  if (env && *env) return env;
  throw ec::Error(ec::errc::invalid_config, "FactorSeries",
                  "no factor file given and EVENTCAUSAL_FF_PATH is unset");
}

json interval_json(const ec::IntervalEstimate& iv) {
  json j;
  j["point"] = iv.point;
  j["se"] = iv.se;
  j["ci_lo"] = iv.ci_lo;
  j["ci_hi"] = iv.ci_hi;
  j["level"] = iv.level;
  j["method"] = iv.method == ec::IntervalEstimate::Method::TTest ? "ttest"
                : iv.method == ec::IntervalEstimate::Method::Placebo
                    ? "placebo"
                    : "bootstrap";
  if (iv.n_draws > 0) j["n_draws"] = iv.n_draws;
  if (!std::isnan(iv.pct_lo)) {
    j["pct_lo"] = iv.pct_lo;
    j["pct_hi"] = iv.pct_hi;
  }
  return j;
}

int cmd_simulate(const GlobalFlags& g) {
  ec::RunConfig cfg = load_config_or_default(g);
  ec::SimDesign design = cfg.simulate;
  if (g.seed) design.seed = *g.seed;

  ec::FactorSeries history;
  const ec::FactorSeries* hist_ptr = nullptr;
  if (design.factor_source.kind == ec::FactorSource::Kind::File) {
    history = load_factor_history(resolve_ff_path(design.factor_source.path));
    hist_ptr = &history;
  }
  ec::SimOutput sim = ec::generate(design, hist_ptr);

  const std::string tag = "seed=" + std::to_string(design.seed);
  ec::emit_panel_csv(sim.panel, out_path(cfg, "panel.csv"), tag);
  ec::emit_factor_csv(sim.factors, out_path(cfg, "factors.csv"), tag);
  ec::emit_events_csv(sim.schedule, out_path(cfg, "events.csv"), tag);

  json truth;
  truth["seed"] = design.seed;
  truth["event_period"] = sim.truth.event_period;
  truth["effect_size"] = design.effect_size;
  truth["treated_ids"] = sim.truth.treated_ids;
  json loadings = json::object();
  for (int i = 0; i < sim.panel.n_securities(); ++i)
    loadings[sim.panel.securities[i]] = {sim.truth.loadings(i, 0),
                                         sim.truth.loadings(i, 1)};
  truth["loadings"] = loadings;
  json effects = json::array();
  for (const auto& [key, v] : sim.truth.true_effects)
    effects.push_back({{"security_id", key.first}, {"period", key.second}, {"effect", v}});
  truth["true_effects"] = effects;
  std::ofstream tj(out_path(cfg, "truth.json"));
  if (!tj)
    throw ec::Error(ec::errc::io_error, "cmd_simulate", "cannot write truth.json");
  tj << truth.dump(2) << "\n";

  std::cout << "wrote panel.csv, factors.csv, events.csv, truth.json to "
            << cfg.output.directory << " (seed " << design.seed << ")\n";
  return 0;
}

int cmd_estimate(const GlobalFlags& g) {
  ec::RunConfig cfg = load_config_or_default(g);
  const auto& ecfg = cfg.estimate;
  if (ecfg.panel_path.empty() || ecfg.events_path.empty())
    throw ec::Error(ec::errc::invalid_config, "cmd_estimate",
                    "estimate.panel and estimate.events are required");
  if (ecfg.estimators.empty())
    throw ec::Error(ec::errc::invalid_config, "cmd_estimate",
                    "estimate.estimators is empty");

  ec::ReturnsPanel raw = ec::load_panel_csv(ecfg.panel_path);
  ec::EventSchedule schedule = ec::load_events_csv(ecfg.events_path);
  ec::validate_schedule(raw, schedule);

  ec::FactorSeries factors;
  bool have_factors = !ecfg.factors_path.empty();
  if (have_factors) factors = load_factor_history(ecfg.factors_path);

  ec::ReturnsPanel panel = have_factors ? ec::to_excess(raw, factors) : raw;
  ec::CohortWeights weights = ec::default_cohort_weights(schedule);
  const std::uint64_t seed = g.seed ? *g.seed : cfg.simulate.seed;

  std::ofstream csv(out_path(cfg, "effects.csv"));
  if (!csv)
    throw ec::Error(ec::errc::io_error, "cmd_estimate", "cannot write effects.csv");
  csv << "# seed=" << seed << "\n";
  csv << "estimator,estimand,horizon,value,se_lo,se_hi\n";
  json out_json;
  out_json["seed"] = seed;
  json jests = json::array();

  for (const auto& spec : ecfg.estimators) {
    auto effs = ec::estimate(panel, have_factors ? &factors : nullptr, schedule, spec);
    ec::EffectSeries series = ec::aggregate_event_time(effs, weights, ecfg.horizon);

    std::map<int, ec::IntervalEstimate> intervals;
    if (ecfg.inference == "ttest") {
      if (effs.size() == 1 && effs[0].control_sample.rows() >= 2 &&
          effs[0].treated_sample.rows() >= 2) {
        for (int k = 0; k <= ecfg.horizon; ++k) {
          int pos = panel.time_pos(effs[0].cohort + k);
          intervals[k] = ec::recentered(
              ec::ttest_interval(effs[0].treated_sample.col(pos),
                                 effs[0].control_sample.col(pos)),
              series.event_time_att.at(k));
        }
      }
    } else if (ecfg.inference == "placebo") {
      intervals = ec::placebo_intervals(panel, have_factors ? &factors : nullptr,
                                        schedule, spec, ecfg.horizon,
                                        ecfg.placebo_reps, seed);
    } else if (ecfg.inference == "bootstrap") {
      if (spec.kind != ec::EstimatorSpec::Kind::Gsynth)
        throw ec::Error(ec::errc::invalid_config, "cmd_estimate",
                        "bootstrap inference is defined for gsynth only");
      intervals = ec::gsynth_bootstrap_intervals(panel, schedule, spec, ecfg.horizon,
                                                 ecfg.bootstrap_samples, seed);
    }

    // Geometric estimand on raw gross returns; with factors present the
    // counterfactual is shifted back to raw units by adding the risk-free
    // rate before compounding.
    std::map<int, std::map<int, double>> cf = ec::counterfactual_maps(effs);
    if (have_factors)
      for (auto& [cohort, path] : cf)
        for (auto& [t, v] : path) v += factors.risk_free(raw.time_pos(t));

    for (int k = 0; k <= ecfg.horizon; ++k) {
      std::string lo, hi;
      auto it = intervals.find(k);
      if (it != intervals.end()) {
        lo = ec::detail::fmt17(it->second.ci_lo);
        hi = ec::detail::fmt17(it->second.ci_hi);
      }
      csv << spec.name() << ",event_time," << k << ","
          << ec::detail::fmt17(series.event_time_att.at(k)) << "," << lo << "," << hi
          << "\n";
    }
    for (int k = 0; k <= ecfg.horizon; ++k)
      csv << spec.name() << ",cumulative," << k << ","
          << ec::detail::fmt17(series.cumulative_att.at(k)) << ",,\n";
    for (int k = 0; k <= ecfg.horizon; ++k) {
      double geo = ec::geometric_att(raw, schedule, cf, weights, k);
      series.geometric_att[k] = geo;
      csv << spec.name() << ",geometric," << k << "," << ec::detail::fmt17(geo)
          << ",,\n";
    }

    auto horizon_object = [](const std::map<int, double>& m) {
      json j = json::object();
      for (const auto& [k, v] : m) j[std::to_string(k)] = v;
      return j;
    };
    json je;
    je["estimator"] = spec.name();
    je["event_time_att"] = horizon_object(series.event_time_att);
    je["cumulative_att"] = horizon_object(series.cumulative_att);
    je["geometric_att"] = horizon_object(series.geometric_att);
    if (!intervals.empty()) {
      json ji = json::object();
      for (const auto& [k, iv] : intervals) ji[std::to_string(k)] = interval_json(iv);
      je["intervals"] = ji;
    }
    jests.push_back(je);
  }
  out_json["estimators"] = jests;
  std::ofstream js(out_path(cfg, "effects.json"));
  if (!js)
    throw ec::Error(ec::errc::io_error, "cmd_estimate", "cannot write effects.json");
  js << out_json.dump(2) << "\n";
  std::cout << "wrote effects.csv, effects.json to " << cfg.output.directory << "\n";
  return 0;
}

json report_json(const ec::McReport& report) {
  json j;
  j["base_seed"] = report.base_seed;
  j["n_reps"] = report.n_reps;
  json cells = json::array();
  for (const auto& c : report.cells) {
    json jc;
    jc["panel"] = c.panel;
    jc["estimator"] = c.estimator;
    jc["scope"] = c.scope;
    auto put = [&jc](const char* key, double v) {
      if (std::isnan(v))
        jc[key] = nullptr;
      else
        jc[key] = v;
    };
    put("e_bias_pp", c.e_bias_pp);
    put("mad_pp", c.mad_pp);
    put("rmse_pp", c.rmse_pp);
    put("coverage", c.coverage);
    cells.push_back(jc);
  }
  j["cells"] = cells;
  return j;
}

int cmd_montecarlo(const GlobalFlags& g) {
  ec::RunConfig cfg = load_config_or_default(g);
  ec::MonteCarloConfig mc = cfg.montecarlo;
  if (g.seed) mc.design.seed = *g.seed;
  if (g.reps) mc.n_reps = *g.reps;

  ec::FactorSeries history;
  const ec::FactorSeries* hist_ptr = nullptr;
  if (mc.design.factor_source.kind == ec::FactorSource::Kind::File) {
    history = load_factor_history(resolve_ff_path(mc.design.factor_source.path));
    hist_ptr = &history;
  }

  ec::McReport report;
  report.n_reps = mc.n_reps;
  report.base_seed = mc.design.seed;
  struct PanelDef {
    char letter;
    ec::Assignment assignment;
    ec::Timing timing;
  };
  const PanelDef defs[] = {
      {'A', ec::Assignment::Random, ec::Timing::Fixed},
      {'B', ec::Assignment::LogitOnSmb, ec::Timing::Fixed},
      {'C', ec::Assignment::Random, ec::Timing::RankLogitOnSmb},
      {'D', ec::Assignment::LogitOnSmb, ec::Timing::RankLogitOnSmb},
  };
  for (const auto& def : defs) {
    if (mc.panels.find(def.letter) == std::string::npos) continue;
    ec::SimDesign d = mc.design;
    d.assignment = def.assignment;
    d.timing = def.timing;
    auto cells = ec::run_design(std::string(1, def.letter), d, mc.estimators, mc.n_reps,
                                mc.design.seed, g.threads, hist_ptr);
    report.cells.insert(report.cells.end(), cells.begin(), cells.end());
  }
  report.validate();

  // Scatter: the misspecified estimator on the timing-selection design, so
  // the omitted factor's event-day realizations spread wide.
  ec::SimDesign sd = mc.design;
  sd.assignment = ec::Assignment::Random;
  sd.timing = ec::Timing::RankLogitOnSmb;
  auto points = ec::bias_scatter(sd, ec::EstimatorSpec::parse(mc.scatter_estimator),
                                 mc.scatter_reps > 0 ? mc.scatter_reps : mc.n_reps,
                                 mc.design.seed, hist_ptr);

  if (cfg.output.formats.count("csv")) {
    ec::emit_mc_csv(report, out_path(cfg, "report.csv"));
    ec::emit_scatter_csv(points, mc.design.seed, out_path(cfg, "scatter.csv"));
  }
  if (cfg.output.formats.count("json")) {
    std::ofstream js(out_path(cfg, "report.json"));
    if (!js)
      throw ec::Error(ec::errc::io_error, "cmd_montecarlo", "cannot write report.json");
    js << report_json(report).dump(2) << "\n";
  }
  if (cfg.output.formats.count("table")) {
    std::ofstream tt(out_path(cfg, "table.txt"));
    if (!tt)
      throw ec::Error(ec::errc::io_error, "cmd_montecarlo", "cannot write table.txt");
    tt << ec::render_mc_table(report);
    std::cout << ec::render_mc_table(report);
  }
  std::cout << "wrote Monte Carlo report to " << cfg.output.directory << " (base seed "
            << mc.design.seed << ", " << mc.n_reps << " reps)\n";
  return 0;
}

int cmd_biasplot(const GlobalFlags& g, const std::string& estimator_flag) {
  ec::RunConfig cfg = load_config_or_default(g);
  ec::MonteCarloConfig mc = cfg.montecarlo;
  if (g.seed) mc.design.seed = *g.seed;
  if (g.reps) mc.n_reps = *g.reps;
  std::string est = estimator_flag.empty() ? mc.scatter_estimator : estimator_flag;

  ec::FactorSeries history;
  const ec::FactorSeries* hist_ptr = nullptr;
  if (mc.design.factor_source.kind == ec::FactorSource::Kind::File) {
    history = load_factor_history(resolve_ff_path(mc.design.factor_source.path));
    hist_ptr = &history;
  }
  ec::SimDesign sd = mc.design;
  sd.assignment = ec::Assignment::Random;
  sd.timing = ec::Timing::RankLogitOnSmb;
  auto points = ec::bias_scatter(sd, ec::EstimatorSpec::parse(est),
                                 mc.scatter_reps > 0 ? mc.scatter_reps : mc.n_reps,
                                 mc.design.seed, hist_ptr);
  ec::emit_scatter_csv(points, mc.design.seed, out_path(cfg, "scatter.csv"));
  std::cout << "wrote scatter.csv (" << points.size() << " points) to "
            << cfg.output.directory << "\n";
  return 0;
}

int cmd_ingest_ff(const GlobalFlags& g, const std::string& input) {
  ec::RunConfig cfg = load_config_or_default(g);
  std::string path = resolve_ff_path(input);
  ec::FactorSeries f = ec::load_ff_daily(path);
  ec::emit_factor_csv(f, out_path(cfg, "factors.csv"), "source=" + path);
  std::cout << "normalized " << f.n_times() << " factor rows to "
            << out_path(cfg, "factors.csv") << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"event-study causal inference toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalFlags g;
  app.add_option("--config", g.config_path, "JSON run configuration");
  std::uint64_t seed_val = 0;
  auto* seed_opt = app.add_option("--seed", seed_val, "base seed override");
  int reps_val = 0;
  auto* reps_opt = app.add_option("--reps", reps_val, "replication count override");
  app.add_option("--out", g.out_dir, "output directory");
  app.add_option("--threads", g.threads, "worker thread cap (0 = all cores)");
  app.add_option("--format", g.formats, "output formats: csv|json|table")
      ->check(CLI::IsMember({"csv", "json", "table"}));

  auto* sim = app.add_subcommand("simulate", "generate a simulated panel");
  auto* est = app.add_subcommand("estimate", "estimate event effects from files");
  auto* mc = app.add_subcommand("montecarlo", "run the bias/coverage table");
  auto* bp = app.add_subcommand("biasplot", "emit bias-vs-omitted-factor scatter data");
  std::string bp_estimator;
  bp->add_option("--estimator", bp_estimator, "estimator name (default from config)");
  auto* ff = app.add_subcommand("ingest-ff", "normalize a daily factor research file");
  std::string ff_input;
  ff->add_option("--input", ff_input, "raw factor file (default $EVENTCAUSAL_FF_PATH)");

  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) g.seed = seed_val;
  if (*reps_opt) g.reps = reps_val;

  try {
    if (*sim) return cmd_simulate(g);
    if (*est) return cmd_estimate(g);
    if (*mc) return cmd_montecarlo(g);
    if (*bp) return cmd_biasplot(g, bp_estimator);
    if (*ff) return cmd_ingest_ff(g, ff_input);
  } catch (const ec::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
