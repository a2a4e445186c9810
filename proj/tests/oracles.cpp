#include "oracles.hpp"

#include <gsl/gsl_multimin.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

namespace transweight::oracle {

double logistic_log_likelihood(const Eigen::MatrixXd& x, std::span<const int> y, const Eigen::VectorXd& beta) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double eta = x.row(i).dot(beta);
    // log(1 + e^eta) computed without overflow.
    const double log1pexp = eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
    ll += y[static_cast<std::size_t>(i)] * eta - log1pexp;
  }
  return ll;
}

namespace {

struct Problem {
  const Eigen::MatrixXd* x;
  std::span<const int> y;
};

double negative_ll(const gsl_vector* v, void* params) {
  const auto* p = static_cast<const Problem*>(params);
  Eigen::VectorXd beta(p->x->cols());
  for (Eigen::Index j = 0; j < beta.size(); ++j) beta(j) = gsl_vector_get(v, static_cast<std::size_t>(j));
  return -logistic_log_likelihood(*p->x, p->y, beta);
}

}  // namespace

Eigen::VectorXd nelder_mead_logistic(const Eigen::MatrixXd& x, std::span<const int> y) {
  const auto dim = static_cast<std::size_t>(x.cols());
  Problem problem{&x, y};
  gsl_multimin_function fn{&negative_ll, dim, &problem};

  Eigen::VectorXd best = Eigen::VectorXd::Zero(x.cols());
  double step = 1.0;
  for (int restart = 0; restart < 12; ++restart) {
    gsl_vector* start = gsl_vector_alloc(dim);
    gsl_vector* steps = gsl_vector_alloc(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      gsl_vector_set(start, j, best(static_cast<Eigen::Index>(j)));
      gsl_vector_set(steps, j, step);
    }
    gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, dim);
    gsl_multimin_fminimizer_set(s, &fn, start, steps);
    for (int iter = 0; iter < 20000; ++iter) {
      if (gsl_multimin_fminimizer_iterate(s) != GSL_SUCCESS) break;
      if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), 1e-11) == GSL_SUCCESS) break;
    }
    for (std::size_t j = 0; j < dim; ++j) best(static_cast<Eigen::Index>(j)) = gsl_vector_get(s->x, j);
    gsl_multimin_fminimizer_free(s);
    gsl_vector_free(start);
    gsl_vector_free(steps);
    step = std::max(step * 0.1, 1e-4);
  }
  return best;
}

std::pair<double, double> grid_search_logistic(const Eigen::MatrixXd& x, std::span<const int> y,
                                               double lo, double hi) {
  double a_lo = lo, a_hi = hi, b_lo = lo, b_hi = hi;
  double best_a = 0.0, best_b = 0.0;
  for (int round = 0; round < 40; ++round) {
    double best = -std::numeric_limits<double>::infinity();
    constexpr int kPoints = 41;
    for (int i = 0; i < kPoints; ++i) {
      for (int j = 0; j < kPoints; ++j) {
        const double a = a_lo + (a_hi - a_lo) * i / (kPoints - 1);
        const double b = b_lo + (b_hi - b_lo) * j / (kPoints - 1);
        Eigen::Vector2d beta(a, b);
        const double ll = logistic_log_likelihood(x, y, beta);
        if (ll > best) {
          best = ll;
          best_a = a;
          best_b = b;
        }
      }
    }
    const double wa = (a_hi - a_lo) / 8.0;
    const double wb = (b_hi - b_lo) / 8.0;
    a_lo = best_a - wa;
    a_hi = best_a + wa;
    b_lo = best_b - wb;
    b_hi = best_b + wb;
  }
  return {best_a, best_b};
}

std::vector<StepPoint> km_by_enumeration(std::span<const double> times, std::span<const int> events,
                                         std::span<const double> weights) {
  std::set<double> event_times;
  for (std::size_t i = 0; i < times.size(); ++i)
    if (events[i] == 1 && weights[i] > 0.0) event_times.insert(times[i]);
  std::vector<StepPoint> curve;
  double s = 1.0;
  for (double t : event_times) {
    double at_risk = 0.0;
    double died = 0.0;
    for (std::size_t i = 0; i < times.size(); ++i) {
      if (times[i] >= t) at_risk += weights[i];
      if (times[i] == t && events[i] == 1) died += weights[i];
    }
    s *= 1.0 - died / at_risk;
    curve.push_back({t, s});
  }
  return curve;
}

std::vector<StepPoint> km_unweighted(std::span<const double> times, std::span<const int> events) {
  std::map<double, std::pair<long, long>> by_time;  // time -> (deaths, removed)
  for (std::size_t i = 0; i < times.size(); ++i) {
    auto& slot = by_time[times[i]];
    slot.first += events[i];
    slot.second += 1;
  }
  long at_risk = static_cast<long>(times.size());
  double s = 1.0;
  std::vector<StepPoint> curve;
  for (const auto& [t, counts] : by_time) {
    if (counts.first > 0) {
      s *= 1.0 - static_cast<double>(counts.first) / static_cast<double>(at_risk);
      curve.push_back({t, s});
    }
    at_risk -= counts.second;
  }
  return curve;
}

double step_value(const std::vector<StepPoint>& curve, double t) {
  double s = 1.0;
  for (const auto& p : curve) {
    if (p.time <= t) s = p.survival;
  }
  return s;
}

double brute_percentile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * q + 1.0;
  const auto below = static_cast<std::size_t>(std::floor(h));
  const double x_below = values[below - 1];
  const double x_above = below < values.size() ? values[below] : values.back();
  return x_below + (h - static_cast<double>(below)) * (x_above - x_below);
}

}  // namespace transweight::oracle
