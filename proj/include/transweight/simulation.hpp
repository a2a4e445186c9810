#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "transweight/dataset.hpp"
#include "transweight/estimator.hpp"

namespace transweight {

/// Binary covariate law. P(X = 1 | parents) in group g is
/// logistic(logit(prob_g) + sum of parent coefficients over parents equal to 1);
/// parents must be declared earlier.
struct CovariateLaw {
  std::string name;
  double member_prob = 0.5;
  double nonmember_prob = 0.5;
  std::vector<std::pair<std::string, double>> parents;
};

/// Exponential event times with log-linear daily rate
///   log(base_rate) + treatment*x + membership*m + treatment_x_membership*x*m
///   + sum_k (covariate_k + treatment_x_covariate_k * x) * L_k.
struct OutcomeModel {
  double base_rate = 0.002;
  double treatment = 0.0;
  double membership = 0.0;
  /// Direct treatment-by-membership modification; zero means membership is
  /// not a conditional modifier given the covariates.
  double treatment_x_membership = 0.0;
  std::map<std::string, double> covariate;
  std::map<std::string, double> treatment_x_covariate;
};

struct CensoringLaw {
  double administrative_days = 730.0;
  /// Daily rate of independent exponential dropout; 0 disables it.
  double dropout_rate = 0.0;
};

/// Monte Carlo defaults carried by a scenario file.
struct MonteCarloSettings {
  int replicates = 200;
  int n_bootstrap = 2000;
  double horizon_days = 365.0;
  std::vector<std::string> model_covariates;
};

struct ScenarioConfig {
  std::string name;
  std::size_t n_members = 0;
  std::size_t n_nonmembers = 0;
  std::vector<CovariateLaw> covariates;
  double treatment_probability = 0.5;
  OutcomeModel outcome;
  CensoringLaw censoring;
  std::uint64_t seed = 0;
  MonteCarloSettings monte_carlo;

  /// Throws ConfigError for out-of-range parameters or unknown names.
  void validate() const;
  /// Daily event rate for one subject.
  double rate(int arm, int member, std::span<const int> covariates) const;
  /// Probability that covariate k equals 1 given the earlier values.
  double covariate_prob(std::size_t k, int member, std::span<const int> earlier) const;

  static ScenarioConfig from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

ScenarioConfig load_scenario(const std::filesystem::path& path);

struct SimulatedTrial {
  TrialDataset dataset;
  /// Potential event times (days) under intervention and comparator.
  std::vector<double> potential_time1;
  std::vector<double> potential_time0;
};

/// Deterministic in (cfg.seed, replicate_index). Members come first.
SimulatedTrial generate_trial(const ScenarioConfig& cfg, std::uint64_t replicate_index);

/// Exact one-year-style estimand among members:
/// P(T^{x=1} > h | M = 1) - P(T^{x=0} > h | M = 1).
double true_member_effect(const ScenarioConfig& cfg, double horizon);

struct EmmContrast {
  double difference_level1 = 0.0;
  double difference_level0 = 0.0;
  bool is_emm = false;
};

/// True risk differences within the two levels of `modifier` (a covariate
/// name or "member"), with the conditioning covariates standardized to their
/// distribution at modifier level 1. Computed exactly by enumeration.
EmmContrast emm_contrast(const ScenarioConfig& cfg, const std::string& modifier,
                         std::span<const std::string> conditioning, double horizon);

struct AnalysisSummary {
  AnalysisKind kind = AnalysisKind::CombinedCrude;
  int n_estimates = 0;
  double mean_estimate = 0.0;
  /// mean_estimate - truth.
  double bias = 0.0;
  double empirical_se = 0.0;
  /// Monte Carlo standard error of the bias, empirical_se / sqrt(n).
  double bias_mc_se = 0.0;
  int n_intervals = 0;
  double mean_cld = 0.0;
  double median_cld = 0.0;
  double coverage = 0.0;
};

struct ReplicateOutcome {
  bool failed = false;
  std::string failure;
  std::array<EstimateWithCI, 5> estimates;
};

struct MonteCarloSummary {
  std::string scenario;
  double truth = 0.0;
  double horizon_days = 365.0;
  int n_replicates = 0;
  int n_failed_replicates = 0;
  std::map<std::string, int> replicate_failures;
  std::array<AnalysisSummary, 5> analyses;
  std::vector<ReplicateOutcome> replicates;
  nlohmann::json configuration;

  const AnalysisSummary& at(AnalysisKind kind) const { return analyses[index_of(kind)]; }
};

/// Runs the analysis suite on `n_replicates` generated trials, replicates in
/// parallel on `threads` workers, and aggregates against the exact truth.
/// Throws when more than 10% of replicates fail outright.
MonteCarloSummary monte_carlo_evaluate(const ScenarioConfig& cfg, const AnalysisConfig& analysis,
                                       int n_replicates, unsigned threads = 1);

/// One row per analysis.
void write_summary_csv(std::ostream& out, const MonteCarloSummary& summary);
nlohmann::json summary_to_json(const MonteCarloSummary& summary);

}  // namespace transweight
