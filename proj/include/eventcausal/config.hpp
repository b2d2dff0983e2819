#pragma once

// JSON run configuration with command-scoped sections. Parsing is strict:
// unknown keys anywhere in the document are errors, so a typo can never
// silently fall back to a default.

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "eventcausal/dgp.hpp"
#include "eventcausal/errors.hpp"
#include "eventcausal/estimators.hpp"

namespace eventcausal {

struct EstimateConfig {
  std::string panel_path, factors_path, events_path;
  std::vector<EstimatorSpec> estimators;
  int horizon = 10;
  std::string inference = "ttest";  // ttest | placebo | bootstrap | none
  int placebo_reps = 100;
  int bootstrap_samples = 1000;
};

struct MonteCarloConfig {
  SimDesign design;
  std::string panels = "ABCD";
  int n_reps = 50;
  std::vector<EstimatorSpec> estimators;
  std::string scatter_estimator = "factor:Mkt-RF";
  int scatter_reps = 0;  // 0 = n_reps
};

struct OutputConfig {
  std::string directory = ".";
  std::set<std::string> formats = {"csv", "json", "table"};
};

struct RunConfig {
  SimDesign simulate;
  EstimateConfig estimate;
  MonteCarloConfig montecarlo;
  OutputConfig output;
};

inline std::vector<EstimatorSpec> default_mc_estimators() {
  return {
      EstimatorSpec::parse("diff_means"),
      EstimatorSpec::parse("factor:Mkt-RF"),
      EstimatorSpec::parse("factor:Mkt-RF,SMB"),
      EstimatorSpec::parse("gsynth:5"),
  };
}

namespace detail {

using json = nlohmann::json;

[[noreturn]] inline void config_fail(const std::string& where, const std::string& msg) {
  throw Error(errc::invalid_config, "RunConfig", where + ": " + msg);
}

inline void require_keys(const json& j, const std::string& where,
                         const std::set<std::string>& known) {
  if (!j.is_object()) config_fail(where, "expected an object");
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) config_fail(where, "unknown key '" + key + "'");
}

inline double get_num(const json& j, const std::string& where, const std::string& key,
                      double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) config_fail(where, "'" + key + "' must be a number");
  return j.at(key).get<double>();
}

inline int get_int(const json& j, const std::string& where, const std::string& key,
                   int fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number_integer()) config_fail(where, "'" + key + "' must be an integer");
  return j.at(key).get<int>();
}

inline std::uint64_t get_u64(const json& j, const std::string& where, const std::string& key,
                             std::uint64_t fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number_unsigned() && !j.at(key).is_number_integer())
    config_fail(where, "'" + key + "' must be an integer seed");
  return j.at(key).get<std::uint64_t>();
}

inline std::string get_str(const json& j, const std::string& where, const std::string& key,
                           const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string()) config_fail(where, "'" + key + "' must be a string");
  return j.at(key).get<std::string>();
}

inline void parse_design(const json& j, const std::string& where, SimDesign* d) {
  require_keys(j, where,
               {"n_firms", "n_pre", "n_post", "treat_share", "effect_size", "loading_mean",
                "loading_sd", "noise_sd", "assignment", "timing", "factor_source",
                "block_length", "seed"});
  d->n_firms = get_int(j, where, "n_firms", d->n_firms);
  d->n_pre = get_int(j, where, "n_pre", d->n_pre);
  d->n_post = get_int(j, where, "n_post", d->n_post);
  d->treat_share = get_num(j, where, "treat_share", d->treat_share);
  d->effect_size = get_num(j, where, "effect_size", d->effect_size);
  d->loading_mean = get_num(j, where, "loading_mean", d->loading_mean);
  d->loading_sd = get_num(j, where, "loading_sd", d->loading_sd);
  d->noise_sd = get_num(j, where, "noise_sd", d->noise_sd);
  d->block_length = get_int(j, where, "block_length", d->block_length);
  d->seed = get_u64(j, where, "seed", d->seed);

  std::string assignment = get_str(j, where, "assignment",
                                   d->assignment == Assignment::Random ? "random"
                                                                       : "logit_on_smb");
  if (assignment == "random")
    d->assignment = Assignment::Random;
  else if (assignment == "logit_on_smb")
    d->assignment = Assignment::LogitOnSmb;
  else
    config_fail(where, "assignment must be random|logit_on_smb");

  std::string timing = get_str(j, where, "timing",
                               d->timing == Timing::Fixed ? "fixed" : "rank_logit_on_smb");
  if (timing == "fixed")
    d->timing = Timing::Fixed;
  else if (timing == "rank_logit_on_smb")
    d->timing = Timing::RankLogitOnSmb;
  else
    config_fail(where, "timing must be fixed|rank_logit_on_smb");

  if (j.contains("factor_source")) {
    const json& fs = j.at("factor_source");
    const std::string fw = where + ".factor_source";
    require_keys(fs, fw,
                 {"kind", "path", "nu", "mean_mkt", "iqr_mkt", "mean_smb", "iqr_smb",
                  "rf_daily"});
    std::string kind = get_str(fs, fw, "kind", "synthetic");
    if (kind == "file")
      d->factor_source.kind = FactorSource::Kind::File;
    else if (kind == "synthetic")
      d->factor_source.kind = FactorSource::Kind::Synthetic;
    else
      config_fail(fw, "kind must be file|synthetic");
    d->factor_source.path = get_str(fs, fw, "path", d->factor_source.path);
    auto& p = d->factor_source.synth;
    p.nu = get_num(fs, fw, "nu", p.nu);
    p.mean_mkt = get_num(fs, fw, "mean_mkt", p.mean_mkt);
    p.iqr_mkt = get_num(fs, fw, "iqr_mkt", p.iqr_mkt);
    p.mean_smb = get_num(fs, fw, "mean_smb", p.mean_smb);
    p.iqr_smb = get_num(fs, fw, "iqr_smb", p.iqr_smb);
    p.rf_daily = get_num(fs, fw, "rf_daily", p.rf_daily);
  }
}

inline std::vector<EstimatorSpec> parse_estimator_list(const json& j,
                                                       const std::string& where) {
  if (!j.is_array()) config_fail(where, "must be an array of estimator names");
  std::vector<EstimatorSpec> out;
  for (const auto& item : j) {
    if (!item.is_string()) config_fail(where, "estimator entries must be strings");
    out.push_back(EstimatorSpec::parse(item.get<std::string>()));
  }
  if (out.empty()) config_fail(where, "estimator list is empty");
  return out;
}

}  // namespace detail

inline RunConfig parse_run_config(const std::string& text) {
  using detail::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw Error(errc::parse_error, "RunConfig", std::string("bad JSON: ") + e.what());
  }
  RunConfig cfg;
  cfg.montecarlo.estimators = default_mc_estimators();
  detail::require_keys(j, "config", {"simulate", "estimate", "montecarlo", "output"});

  if (j.contains("simulate"))
    detail::parse_design(j.at("simulate"), "simulate", &cfg.simulate);

  if (j.contains("estimate")) {
    const json& e = j.at("estimate");
    const std::string w = "estimate";
    detail::require_keys(e, w,
                         {"panel", "factors", "events", "estimators", "horizon",
                          "inference", "placebo_reps", "bootstrap_samples"});
    cfg.estimate.panel_path = detail::get_str(e, w, "panel", "");
    cfg.estimate.factors_path = detail::get_str(e, w, "factors", "");
    cfg.estimate.events_path = detail::get_str(e, w, "events", "");
    if (e.contains("estimators"))
      cfg.estimate.estimators = detail::parse_estimator_list(e.at("estimators"),
                                                             w + ".estimators");
    cfg.estimate.horizon = detail::get_int(e, w, "horizon", cfg.estimate.horizon);
    cfg.estimate.inference = detail::get_str(e, w, "inference", cfg.estimate.inference);
    if (cfg.estimate.inference != "ttest" && cfg.estimate.inference != "placebo" &&
        cfg.estimate.inference != "bootstrap" && cfg.estimate.inference != "none")
      detail::config_fail(w, "inference must be ttest|placebo|bootstrap|none");
    cfg.estimate.placebo_reps =
        detail::get_int(e, w, "placebo_reps", cfg.estimate.placebo_reps);
    cfg.estimate.bootstrap_samples =
        detail::get_int(e, w, "bootstrap_samples", cfg.estimate.bootstrap_samples);
  }

  if (j.contains("montecarlo")) {
    const json& m = j.at("montecarlo");
    const std::string w = "montecarlo";
    detail::require_keys(m, w,
                         {"design", "panels", "n_reps", "estimators",
                          "scatter_estimator", "scatter_reps"});
    if (m.contains("design"))
      detail::parse_design(m.at("design"), w + ".design", &cfg.montecarlo.design);
    cfg.montecarlo.panels = detail::get_str(m, w, "panels", cfg.montecarlo.panels);
    for (char p : cfg.montecarlo.panels)
      if (p < 'A' || p > 'D')
        detail::config_fail(w, "panels must be a subset of \"ABCD\"");
    if (cfg.montecarlo.panels.empty()) detail::config_fail(w, "panels is empty");
    cfg.montecarlo.n_reps = detail::get_int(m, w, "n_reps", cfg.montecarlo.n_reps);
    if (m.contains("estimators"))
      cfg.montecarlo.estimators =
          detail::parse_estimator_list(m.at("estimators"), w + ".estimators");
    cfg.montecarlo.scatter_estimator =
        detail::get_str(m, w, "scatter_estimator", cfg.montecarlo.scatter_estimator);
    cfg.montecarlo.scatter_reps =
        detail::get_int(m, w, "scatter_reps", cfg.montecarlo.scatter_reps);
  }

  if (j.contains("output")) {
    const json& o = j.at("output");
    const std::string w = "output";
    detail::require_keys(o, w, {"directory", "formats"});
    cfg.output.directory = detail::get_str(o, w, "directory", cfg.output.directory);
    if (o.contains("formats")) {
      if (!o.at("formats").is_array()) detail::config_fail(w, "formats must be an array");
      cfg.output.formats.clear();
      for (const auto& f : o.at("formats")) {
        if (!f.is_string()) detail::config_fail(w, "formats entries must be strings");
        std::string s = f.get<std::string>();
        if (s != "csv" && s != "json" && s != "table")
          detail::config_fail(w, "formats entries must be csv|json|table");
        cfg.output.formats.insert(s);
      }
      if (cfg.output.formats.empty()) detail::config_fail(w, "formats is empty");
    }
  }
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(errc::io_error, "RunConfig", "cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

}  // namespace eventcausal
