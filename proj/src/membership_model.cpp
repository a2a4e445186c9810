#include "transweight/membership_model.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "transweight/text_format.hpp"

namespace transweight {

namespace {

constexpr double kProbClamp = 1e-12;
constexpr double kSeparatedProb = 1e-10;
constexpr double kConvergedStep = 1e-3;

double logistic(double eta) {
  if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

double frequency_at(std::span<const double> frequency, Eigen::Index i) {
  return frequency.empty() ? 1.0 : frequency[static_cast<std::size_t>(i)];
}

std::string format_trace(const std::vector<IterationTrace>& trace) {
  std::ostringstream os;
  for (const auto& t : trace) {
    os << "\n  iter " << t.iteration << ": loglik=" << format_number(t.log_likelihood)
       << " max|score|=" << format_number(t.max_abs_score) << " halvings=" << t.step_halvings;
  }
  return os.str();
}

void check_rank(const Eigen::MatrixXd& design, std::span<const double> frequency,
                std::span<const std::string> column_labels) {
  Eigen::MatrixXd scaled = design;
  for (Eigen::Index i = 0; i < scaled.rows(); ++i) scaled.row(i) *= std::sqrt(frequency_at(frequency, i));
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(scaled);
  const auto rank = qr.rank();
  if (rank == design.cols()) return;
  std::string names;
  for (Eigen::Index j = rank; j < design.cols(); ++j) {
    const auto col = qr.colsPermutation().indices()(j);
    if (!names.empty()) names += ", ";
    names += static_cast<std::size_t>(col) < column_labels.size()
                 ? column_labels[static_cast<std::size_t>(col)]
                 : "column " + std::to_string(col);
  }
  throw ModelError(ModelError::Kind::Collinearity,
                   "design matrix is rank deficient (rank " + std::to_string(rank) + " of " +
                       std::to_string(design.cols()) + "); dependent columns: " + names);
}

}  // namespace

double logistic_log_likelihood(const Eigen::MatrixXd& design, std::span<const int> labels,
                               std::span<const double> frequency, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = design * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double f = frequency_at(frequency, i);
    if (f == 0.0) continue;
    const double p = std::clamp(logistic(eta(i)), kProbClamp, 1.0 - kProbClamp);
    ll += f * (labels[static_cast<std::size_t>(i)] == 1 ? std::log(p) : std::log1p(-p));
  }
  return ll;
}

FittedMembershipModel fit_logistic(const Eigen::MatrixXd& design, std::span<const int> labels,
                                   std::span<const double> frequency, const LogisticOptions& options,
                                   std::span<const std::string> column_labels) {
  const Eigen::Index n = design.rows();
  const Eigen::Index p = design.cols();
  if (static_cast<std::size_t>(n) != labels.size())
    throw ModelError(ModelError::Kind::Input, "design rows and label count differ");
  if (!frequency.empty() && frequency.size() != labels.size())
    throw ModelError(ModelError::Kind::Input, "frequency weights and label count differ");
  if (p == 0) throw ModelError(ModelError::Kind::Input, "design matrix has no columns");

  double pos = 0.0;
  double neg = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double f = frequency_at(frequency, i);
    if (!(f >= 0.0) || !std::isfinite(f))
      throw ModelError(ModelError::Kind::Input, "frequency weights must be finite and non-negative");
    const int y = labels[static_cast<std::size_t>(i)];
    if (y != 0 && y != 1) throw ModelError(ModelError::Kind::Input, "labels must be 0 or 1");
    (y == 1 ? pos : neg) += f;
  }
  if (pos == 0.0 || neg == 0.0)
    throw ModelError(ModelError::Kind::Input, "both members and non-members are required");

  check_rank(design, frequency, column_labels);

  Eigen::VectorXd y(n);
  Eigen::VectorXd f(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i) = labels[static_cast<std::size_t>(i)];
    f(i) = frequency_at(frequency, i);
  }

  FittedMembershipModel model;
  model.column_labels.assign(column_labels.begin(), column_labels.end());
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  double ll = logistic_log_likelihood(design, labels, frequency, beta);
  Eigen::VectorXd prob(n);
  Eigen::VectorXd score(p);

  auto evaluate_score = [&](const Eigen::VectorXd& b) {
    const Eigen::VectorXd eta = design * b;
    for (Eigen::Index i = 0; i < n; ++i) prob(i) = logistic(eta(i));
    score = design.transpose() * (f.array() * (y - prob).array()).matrix();
    return score.cwiseAbs().maxCoeff();
  };

  bool converged = false;
  double max_score = evaluate_score(beta);
  int iter = 0;
  while (iter < options.max_iterations) {
    ++iter;
    const Eigen::VectorXd w = f.array() * prob.array() * (1.0 - prob.array());
    const Eigen::MatrixXd info = design.transpose() * w.asDiagonal() * design;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success || ldlt.isPositive() == false ||
        ldlt.vectorD().minCoeff() <= 0.0) {
      throw ModelError(ModelError::Kind::Separation,
                       "information matrix became singular at iteration " + std::to_string(iter) +
                           " (fitted probabilities collapsed to 0 or 1)");
    }
    const Eigen::VectorXd step = ldlt.solve(score);
    // Under separation the score vanishes but the Newton step stays O(1).
    if (max_score <= options.score_tolerance && step.cwiseAbs().maxCoeff() <= kConvergedStep) {
      --iter;
      converged = true;
      break;
    }

    // Log-likelihood change of a step, summed as y*d - log1p(p*expm1(d)) per
    // row so that gains far below the rounding of the total stay resolved.
    const Eigen::VectorXd direction = design * step;
    auto gain = [&](double scale) {
      double total = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (f(i) == 0.0) continue;
        const double d = scale * direction(i);
        total += f(i) * (y(i) * d - std::log1p(prob(i) * std::expm1(d)));
      }
      return total;
    };
    double scale = 1.0;
    double delta = gain(scale);
    int halvings = 0;
    while (!(delta >= 0.0) && halvings < options.max_step_halvings) {
      scale *= 0.5;
      delta = gain(scale);
      ++halvings;
    }
    double change = (scale * step).cwiseAbs().maxCoeff();
    if (!(delta >= 0.0)) {
      // Stalled: no ascent direction at working precision.
      change = 0.0;
    } else {
      beta += scale * step;
      ll += delta;
      max_score = evaluate_score(beta);
    }
    model.trace.push_back({iter, ll, max_score, halvings});

    if (beta.cwiseAbs().maxCoeff() > options.divergence_bound) {
      throw ModelError(ModelError::Kind::Separation,
                       "coefficient magnitude exceeded " + format_number(options.divergence_bound) +
                           " at iteration " + std::to_string(iter) +
                           "; members and non-members are (quasi-)completely separated");
    }
    if (change <= options.step_tolerance) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw ConvergenceError("IRLS did not converge within " + std::to_string(options.max_iterations) +
                               " iterations" + format_trace(model.trace),
                           model.trace);
  }

  // Quasi-complete separation that stalled below the divergence bound.
  for (Eigen::Index i = 0; i < n; ++i) {
    if (f(i) == 0.0) continue;
    if (prob(i) < kSeparatedProb || prob(i) > 1.0 - kSeparatedProb) {
      throw ModelError(ModelError::Kind::Separation,
                       "fitted probabilities numerically 0 or 1 (within " +
                           format_number(kSeparatedProb) +
                           "); members and non-members are (quasi-)completely separated");
    }
  }

  model.coefficients = beta;
  model.fitted_probs = prob;
  model.n_iterations = iter;
  model.converged = true;
  model.max_abs_score = max_score;
  model.log_likelihood = logistic_log_likelihood(design, labels, frequency, beta);
  return model;
}

FittedMembershipModel fit_logistic(const DesignMatrix& design, std::span<const int> labels,
                                   const LogisticOptions& options) {
  return fit_logistic(design.values, labels, {}, options, design.labels);
}

std::vector<double> odds_weights(std::span<const int> member, std::span<const double> probs,
                                 const WeightOptions& options) {
  if (member.size() != probs.size())
    throw ModelError(ModelError::Kind::Input, "membership flags and probabilities differ in length");
  std::vector<double> weights(member.size(), 1.0);
  for (std::size_t i = 0; i < member.size(); ++i) {
    if (member[i] == 1) continue;
    const double p = probs[i];
    if (!(p >= 0.0) || p >= 1.0 - kProbClamp) {
      throw ModelError(ModelError::Kind::WeightOverflow,
                       "non-member row " + std::to_string(i) + " has fitted membership probability " +
                           format_number(p) + "; its odds weight is unbounded");
    }
    double w = p / (1.0 - p);
    if (options.cap) w = std::min(w, *options.cap);
    weights[i] = w;
  }
  return weights;
}

WeightedCohort::WeightedCohort(const TrialDataset& dataset, std::vector<double> weights)
    : dataset_(dataset), weights_(std::move(weights)) {
  if (weights_.size() != dataset.size())
    throw ModelError(ModelError::Kind::Input, "weight count does not match the dataset");
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    if (!(weights_[i] >= 0.0) || !std::isfinite(weights_[i]))
      throw ModelError(ModelError::Kind::Input, "weights must be finite and non-negative");
    if (dataset.records[i].member == 0) pseudo_n_nonmembers_ += weights_[i];
  }
}

WeightedCohort compute_odds_weights(const TrialDataset& ds, const FittedMembershipModel& model,
                                    const WeightOptions& options) {
  if (static_cast<std::size_t>(model.fitted_probs.size()) != ds.size())
    throw ModelError(ModelError::Kind::Input, "model was not fitted on this dataset");
  std::vector<int> member(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) member[i] = ds.records[i].member;
  std::span<const double> probs(model.fitted_probs.data(), ds.size());
  return WeightedCohort(ds, odds_weights(member, probs, options));
}

namespace {

struct Moments {
  double weight = 0.0;
  double sum = 0.0;
  double sum_sq = 0.0;

  void add(double w, double x) {
    weight += w;
    sum += w * x;
    sum_sq += w * x * x;
  }
  double mean() const { return weight > 0 ? sum / weight : 0.0; }
  double variance() const {
    if (weight <= 0) return 0.0;
    const double m = mean();
    return std::max(0.0, sum_sq / weight - m * m);
  }
};

double smd(const Moments& a, const Moments& b) {
  const double diff = a.mean() - b.mean();
  const double pooled = std::sqrt((a.variance() + b.variance()) / 2.0);
  if (pooled == 0.0) return diff == 0.0 ? 0.0 : std::copysign(INFINITY, diff);
  return diff / pooled;
}

}  // namespace

std::string BalanceRow::label() const {
  if (is_mean) return covariate + " mean";
  if (level.empty()) return covariate + " N (%)";
  return covariate + "=" + level + " N (%)";
}

BalanceTable balance_table(const WeightedCohort& cohort) {
  const auto& ds = cohort.dataset();
  const auto& weights = cohort.weights();
  BalanceTable table;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.records[i].member == 1) {
      table.member_n += 1.0;
    } else {
      table.nonmember_n += 1.0;
      table.weighted_nonmember_n += weights[i];
    }
  }

  auto summarize = [&](std::string covariate, std::string level, bool is_mean, auto&& value_of) {
    Moments member;
    Moments crude;
    Moments weighted;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const double x = value_of(ds.records[i]);
      if (ds.records[i].member == 1) {
        member.add(1.0, x);
      } else {
        crude.add(1.0, x);
        weighted.add(weights[i], x);
      }
    }
    BalanceRow row;
    row.covariate = std::move(covariate);
    row.level = std::move(level);
    row.is_mean = is_mean;
    if (is_mean) {
      row.member = member.mean();
      row.crude = crude.mean();
      row.weighted = weighted.mean();
    } else {
      row.member = member.sum;
      row.crude = crude.sum;
      row.weighted = weighted.sum;
      row.member_percent = 100.0 * member.mean();
      row.crude_percent = 100.0 * crude.mean();
      row.weighted_percent = 100.0 * weighted.mean();
    }
    row.smd_crude = smd(member, crude);
    row.smd_weighted = smd(member, weighted);
    table.rows.push_back(std::move(row));
  };

  for (std::size_t k = 0; k < ds.spec.arity(); ++k) {
    const auto& e = ds.spec.at(k);
    switch (e.kind) {
      case CovariateKind::Binary:
        summarize(e.name, "", false, [k](const SubjectRecord& r) { return r.covariates[k]; });
        break;
      case CovariateKind::Continuous:
        summarize(e.name, "", true, [k](const SubjectRecord& r) { return r.covariates[k]; });
        break;
      case CovariateKind::Categorical:
        for (std::size_t l = 0; l < e.levels.size(); ++l) {
          const auto level = static_cast<double>(l);
          summarize(e.name, e.levels[l], false,
                    [k, level](const SubjectRecord& r) { return r.covariates[k] == level ? 1.0 : 0.0; });
        }
        break;
    }
  }
  return table;
}

void write_balance_csv(std::ostream& out, const BalanceTable& table) {
  out << "covariate,level,statistic,member,member_pct,nonmember_crude,nonmember_crude_pct,"
         "nonmember_weighted,nonmember_weighted_pct,smd_crude,smd_weighted\n";
  out << "N,,count," << format_number(table.member_n) << ",," << format_number(table.nonmember_n)
      << ",," << format_number(table.weighted_nonmember_n) << ",,,\n";
  for (const auto& r : table.rows) {
    out << r.covariate << ',' << r.level << ',' << (r.is_mean ? "mean" : "count") << ','
        << format_number(r.member) << ',' << (r.is_mean ? "" : format_number(r.member_percent)) << ','
        << format_number(r.crude) << ',' << (r.is_mean ? "" : format_number(r.crude_percent)) << ','
        << format_number(r.weighted) << ','
        << (r.is_mean ? "" : format_number(r.weighted_percent)) << ','
        << format_number(r.smd_crude) << ',' << format_number(r.smd_weighted) << '\n';
  }
}

void write_balance_text(std::ostream& out, const BalanceTable& table, const std::string& member_label,
                        const std::string& nonmember_label) {
  auto count_cell = [](double count, double pct, int decimals) {
    return format_fixed(count, decimals) + " (" + format_fixed(pct, 0) + "%)";
  };
  std::vector<std::vector<std::string>> cells;
  cells.push_back({"Potential effect measure modifier",
                   nonmember_label + " (N=" + format_fixed(table.nonmember_n, 0) + ")",
                   member_label + " (N=" + format_fixed(table.member_n, 0) + ")",
                   "Odds-weighted " + nonmember_label + " (N=" + format_fixed(table.weighted_nonmember_n, 1) + ")"});
  for (const auto& r : table.rows) {
    if (r.is_mean) {
      cells.push_back({r.label(), format_fixed(r.crude, 1), format_fixed(r.member, 1), format_fixed(r.weighted, 1)});
    } else {
      cells.push_back({r.label(), count_cell(r.crude, r.crude_percent, 0),
                       count_cell(r.member, r.member_percent, 0),
                       count_cell(r.weighted, r.weighted_percent, 1)});
    }
  }
  std::vector<std::size_t> widths(4, 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      out << (c + 1 < row.size() ? pad_right(row[c], widths[c] + 2) : row[c]);
    }
    out << '\n';
  }
}

nlohmann::json balance_to_json(const BalanceTable& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : table.rows) {
    nlohmann::json row = {{"covariate", r.covariate},
                          {"statistic", r.is_mean ? "mean" : "count"},
                          {"member", r.member},
                          {"nonmember_crude", r.crude},
                          {"nonmember_weighted", r.weighted},
                          {"smd_crude", r.smd_crude},
                          {"smd_weighted", r.smd_weighted}};
    if (!r.level.empty()) row["level"] = r.level;
    if (!r.is_mean) {
      row["member_pct"] = r.member_percent;
      row["nonmember_crude_pct"] = r.crude_percent;
      row["nonmember_weighted_pct"] = r.weighted_percent;
    }
    rows.push_back(std::move(row));
  }
  return {{"member_n", table.member_n},
          {"nonmember_n", table.nonmember_n},
          {"weighted_nonmember_n", table.weighted_nonmember_n},
          {"rows", std::move(rows)}};
}

}  // namespace transweight
