#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "transweight/dataset.hpp"
#include "transweight/membership_model.hpp"
#include "transweight/survival.hpp"

namespace transweight {

enum class AnalysisKind {
  CombinedCrude,       // A
  NonMembersCrude,     // B
  NonMembersWeighted,  // C
  MembersOnly,         // D
  CombinedWeighted,    // E
};

inline constexpr std::array<AnalysisKind, 5> kAllAnalyses = {
    AnalysisKind::CombinedCrude, AnalysisKind::NonMembersCrude, AnalysisKind::NonMembersWeighted,
    AnalysisKind::MembersOnly, AnalysisKind::CombinedWeighted};

inline constexpr std::size_t index_of(AnalysisKind kind) { return static_cast<std::size_t>(kind); }

/// Single letter A-E.
const char* letter(AnalysisKind kind) noexcept;
/// Stable identifier, e.g. "CombinedCrude".
const char* to_string(AnalysisKind kind) noexcept;
/// Row label used in the text report.
const char* description(AnalysisKind kind) noexcept;
std::optional<AnalysisKind> analysis_from_string(std::string_view s);

struct AnalysisConfig {
  /// Covariates entering the membership model; empty means all.
  std::vector<std::string> model_covariates;
  double horizon_days = 365.0;
  int n_bootstrap = 2000;
  std::uint64_t seed = 0;
  WeightOptions weights;
  LogisticOptions logistic;
  /// Share of failed bootstrap iterations above which an interval is refused.
  double max_failed_fraction = 0.10;
  /// Worker count for bootstrap iterations. Not part of the echoed
  /// configuration because results do not depend on it.
  unsigned threads = 1;

  /// Resolved configuration echoed into every report.
  nlohmann::json to_json() const;
};

struct EstimateWithCI {
  AnalysisKind kind = AnalysisKind::CombinedCrude;
  PfsDifference point;
  double ci_lower = std::numeric_limits<double>::quiet_NaN();
  double ci_upper = std::numeric_limits<double>::quiet_NaN();
  double cld = std::numeric_limits<double>::quiet_NaN();
  int n_bootstrap = 0;
  int n_failed_bootstrap = 0;
  /// Failed bootstrap iterations by cause.
  std::map<std::string, int> failures;
  /// Set when the analysis could not be completed; other fields are then unreliable.
  std::optional<std::string> error;

  bool ok() const noexcept { return !error.has_value(); }
  bool has_interval() const noexcept { return ok() && n_bootstrap > 0; }
};

struct PooledEstimate {
  double point = 0.0;
  double variance = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  static constexpr const char* kLabel =
      "independence-assumed inverse-variance fixed-effect pool, normal approximation";
};

struct DatasetProvenance {
  std::size_t n_records = 0;
  std::size_t n_members = 0;
  std::size_t n_nonmembers = 0;
  std::size_t dropped_incomplete = 0;
};

struct AnalysisReport {
  std::array<EstimateWithCI, 5> estimates;
  BalanceTable balance;
  FittedMembershipModel model;
  std::optional<PooledEstimate> pooled;
  std::optional<std::string> pooled_error;
  AnalysisConfig config;
  CovariateSpec spec;
  DatasetProvenance provenance;

  const EstimateWithCI& at(AnalysisKind kind) const { return estimates[index_of(kind)]; }
};

/// Fits the membership model on the full data, computes the five point
/// estimates, bootstraps all five and assembles the report. Fit errors on the
/// full data propagate; per-analysis problems are recorded in the report.
AnalysisReport run_analysis_suite(const TrialDataset& ds, const AnalysisConfig& config);

/// Stratified (by membership) percentile bootstrap for one analysis, refitting
/// the membership model in every resample. Throws EstimationError when more
/// than `max_failed_fraction` of iterations fail.
EstimateWithCI bootstrap_ci(const TrialDataset& ds, const AnalysisConfig& config, AnalysisKind kind,
                            std::uint64_t seed);

/// Empirical quantile of sorted values, interpolating linearly between order
/// statistics at 1-based position 1 + q (n - 1).
double percentile(std::span<const double> sorted_values, double q);

double confidence_limit_difference(double lower, double upper);
double confidence_limit_difference(const EstimateWithCI& e);

/// Inverse-variance fixed-effect pool of independent estimates.
PooledEstimate pool_fixed_effect(std::span<const double> points, std::span<const double> variances);

/// Pools the members-only and weighted non-member estimates, recovering each
/// variance from its percentile interval as (CLD / (2 * 1.96))^2.
PooledEstimate pooled_meta_estimate(const EstimateWithCI& members,
                                    const EstimateWithCI& weighted_nonmembers);

nlohmann::json report_to_json(const AnalysisReport& report);
/// Table with one row per analysis: PFSD and CI in percent to one decimal, CLD to two.
void write_report_text(std::ostream& out, const AnalysisReport& report);

}  // namespace transweight
