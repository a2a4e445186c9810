#pragma once

#include <Eigen/Dense>

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "transweight/dataset.hpp"
#include "transweight/error.hpp"

namespace transweight {

struct LogisticOptions {
  double score_tolerance = 1e-8;
  double step_tolerance = 1e-10;
  int max_iterations = 100;
  /// Any |coefficient| above this during fitting is reported as separation.
  double divergence_bound = 30.0;
  int max_step_halvings = 50;
};

struct IterationTrace {
  int iteration = 0;
  double log_likelihood = 0.0;
  double max_abs_score = 0.0;
  int step_halvings = 0;
};

struct FittedMembershipModel {
  /// Log-odds scale, aligned with the design columns.
  Eigen::VectorXd coefficients;
  std::vector<std::string> column_labels;
  /// Unclamped model probabilities, one per design row.
  Eigen::VectorXd fitted_probs;
  int n_iterations = 0;
  bool converged = false;
  double max_abs_score = 0.0;
  double log_likelihood = 0.0;
  std::vector<IterationTrace> trace;
};

class ConvergenceError : public ModelError {
 public:
  ConvergenceError(const std::string& what, std::vector<IterationTrace> trace)
      : ModelError(Kind::NonConvergence, what), trace_(std::move(trace)) {}
  const std::vector<IterationTrace>& trace() const noexcept { return trace_; }

 private:
  std::vector<IterationTrace> trace_;
};

/// Maximum-likelihood logistic regression by IRLS with step-halving.
///
/// `frequency` gives optional non-negative case weights (a row with weight k
/// counts as k identical rows; weight 0 drops the row). Throws ModelError on
/// separation, rank deficiency or non-convergence.
FittedMembershipModel fit_logistic(const Eigen::MatrixXd& design, std::span<const int> labels,
                                   std::span<const double> frequency = {},
                                   const LogisticOptions& options = {},
                                   std::span<const std::string> column_labels = {});

FittedMembershipModel fit_logistic(const DesignMatrix& design, std::span<const int> labels,
                                   const LogisticOptions& options = {});

/// Clamped log-likelihood used by the optimizer.
double logistic_log_likelihood(const Eigen::MatrixXd& design, std::span<const int> labels,
                               std::span<const double> frequency, const Eigen::VectorXd& beta);

struct WeightOptions {
  /// Upper bound applied to non-member weights; unset means raw odds.
  std::optional<double> cap;
};

/// Members get exactly 1; non-members p/(1-p). Throws a weight-overflow
/// ModelError when a non-member probability reaches 1 - 1e-12.
std::vector<double> odds_weights(std::span<const int> member, std::span<const double> probs,
                                 const WeightOptions& options = {});

class WeightedCohort {
 public:
  WeightedCohort(const TrialDataset& dataset, std::vector<double> weights);

  const TrialDataset& dataset() const noexcept { return dataset_.get(); }
  const std::vector<double>& weights() const noexcept { return weights_; }
  double pseudo_n_nonmembers() const noexcept { return pseudo_n_nonmembers_; }

 private:
  std::reference_wrapper<const TrialDataset> dataset_;
  std::vector<double> weights_;
  double pseudo_n_nonmembers_ = 0.0;
};

WeightedCohort compute_odds_weights(const TrialDataset& ds, const FittedMembershipModel& model,
                                    const WeightOptions& options = {});

struct BalanceRow {
  std::string covariate;
  /// Level text for categorical rows, empty otherwise.
  std::string level;
  /// True for continuous covariates: values are means, percents unused.
  bool is_mean = false;
  double member = 0.0;
  double member_percent = 0.0;
  double crude = 0.0;
  double crude_percent = 0.0;
  double weighted = 0.0;
  double weighted_percent = 0.0;
  /// Standardized mean difference of members vs non-members.
  double smd_crude = 0.0;
  double smd_weighted = 0.0;

  std::string label() const;
};

struct BalanceTable {
  double member_n = 0.0;
  double nonmember_n = 0.0;
  double weighted_nonmember_n = 0.0;
  std::vector<BalanceRow> rows;
};

BalanceTable balance_table(const WeightedCohort& cohort);

void write_balance_csv(std::ostream& out, const BalanceTable& table);
/// Aligned text: counts with percents in parentheses, weighted counts to one decimal.
void write_balance_text(std::ostream& out, const BalanceTable& table,
                        const std::string& member_label = "Members",
                        const std::string& nonmember_label = "Non-members");
nlohmann::json balance_to_json(const BalanceTable& table);

}  // namespace transweight
