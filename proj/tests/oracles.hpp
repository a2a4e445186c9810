#pragma once

// Independent reference computations used only by the tests.

#include <Eigen/Dense>

#include <span>
#include <utility>
#include <vector>

namespace transweight::oracle {

/// Exact (unclamped) logistic log-likelihood written from the definition.
double logistic_log_likelihood(const Eigen::MatrixXd& x, std::span<const int> y, const Eigen::VectorXd& beta);

/// Maximizes the log-likelihood with GSL's Nelder-Mead simplex, restarting
/// from the best vertex until the simplex collapses.
Eigen::VectorXd nelder_mead_logistic(const Eigen::MatrixXd& x, std::span<const int> y);

/// Exhaustive grid maximization over a box for two parameters, refined by
/// repeatedly shrinking the grid around the best point.
std::pair<double, double> grid_search_logistic(const Eigen::MatrixXd& x, std::span<const int> y,
                                               double lo, double hi);

struct StepPoint {
  double time;
  double survival;
};

/// Product-limit by direct risk-set enumeration: for each distinct time with
/// a positively weighted event, sums weights of everyone with time >= t.
std::vector<StepPoint> km_by_enumeration(std::span<const double> times, std::span<const int> events,
                                         std::span<const double> weights);

/// Classic unweighted Kaplan-Meier with integer counts.
std::vector<StepPoint> km_unweighted(std::span<const double> times, std::span<const int> events);

double step_value(const std::vector<StepPoint>& curve, double t);

/// Sort-and-interpolate quantile (type 7).
double brute_percentile(std::vector<double> values, double q);

}  // namespace transweight::oracle
