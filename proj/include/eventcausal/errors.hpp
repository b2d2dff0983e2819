#pragma once

#include <stdexcept>
#include <string>

namespace eventcausal {

// Every failure mode in the library carries a stable code so callers (CLI,
// tests) can dispatch without string-matching free-form messages.
enum class errc {
  parse_error,
  io_error,
  unbalanced_panel,
  non_finite,
  empty_series,
  already_adjusted,
  misaligned,
  rank_deficient,
  too_few_observations,
  numerical_failure,
  rank_too_large,
  empty_cohort,
  empty_controls,
  window_too_short,
  missing_horizon,
  non_positive_gross_return,
  truth_unavailable,
  nothing_omitted,
  sample_too_small,
  not_enough_controls,
  model_not_fitted,
  length_mismatch,
  history_too_short,
  invalid_config,
};

inline const char* errc_name(errc c) {
  switch (c) {
    case errc::parse_error: return "ParseError";
    case errc::io_error: return "IoError";
    case errc::unbalanced_panel: return "UnbalancedPanel";
    case errc::non_finite: return "NonFinite";
    case errc::empty_series: return "EmptySeries";
    case errc::already_adjusted: return "AlreadyAdjusted";
    case errc::misaligned: return "Misaligned";
    case errc::rank_deficient: return "RankDeficient";
    case errc::too_few_observations: return "TooFewObservations";
    case errc::numerical_failure: return "NumericalFailure";
    case errc::rank_too_large: return "RankTooLarge";
    case errc::empty_cohort: return "EmptyCohort";
    case errc::empty_controls: return "EmptyControls";
    case errc::window_too_short: return "WindowTooShort";
    case errc::missing_horizon: return "MissingHorizon";
    case errc::non_positive_gross_return: return "NonPositiveGrossReturn";
    case errc::truth_unavailable: return "TruthUnavailable";
    case errc::nothing_omitted: return "NothingOmitted";
    case errc::sample_too_small: return "SampleTooSmall";
    case errc::not_enough_controls: return "NotEnoughControls";
    case errc::model_not_fitted: return "ModelNotFitted";
    case errc::length_mismatch: return "LengthMismatch";
    case errc::history_too_short: return "HistoryTooShort";
    case errc::invalid_config: return "InvalidConfig";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(errc code, const std::string& component, const std::string& detail)
      : std::runtime_error(component + ": " + errc_name(code) + ": " + detail),
        code_(code),
        component_(component) {}

  errc code() const noexcept { return code_; }
  const std::string& component() const noexcept { return component_; }

 private:
  errc code_;
  std::string component_;
};

}  // namespace eventcausal
