#include "transweight/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>

#include "transweight/error.hpp"
#include "transweight/parallel.hpp"
#include "transweight/text_format.hpp"

namespace transweight {

const char* letter(AnalysisKind kind) noexcept {
  static constexpr const char* kLetters[] = {"A", "B", "C", "D", "E"};
  return kLetters[index_of(kind)];
}

const char* to_string(AnalysisKind kind) noexcept {
  static constexpr const char* kNames[] = {"CombinedCrude", "NonMembersCrude", "NonMembersWeighted",
                                           "MembersOnly", "CombinedWeighted"};
  return kNames[index_of(kind)];
}

const char* description(AnalysisKind kind) noexcept {
  static constexpr const char* kRows[] = {
      "Unweighted combined analysis", "Non-target patients only", "Weighted non-target patients only",
      "Target subgroup patients only", "Weighted combined analysis"};
  return kRows[index_of(kind)];
}

std::optional<AnalysisKind> analysis_from_string(std::string_view s) {
  for (auto kind : kAllAnalyses) {
    if (s == letter(kind) || s == to_string(kind)) return kind;
  }
  return std::nullopt;
}

nlohmann::json AnalysisConfig::to_json() const {
  nlohmann::json out = {{"model_covariates", model_covariates},
                        {"horizon_days", horizon_days},
                        {"n_bootstrap", n_bootstrap},
                        {"seed", seed},
                        {"weight_cap", weights.cap ? nlohmann::json(*weights.cap) : nlohmann::json()},
                        {"bootstrap_strata", "membership"},
                        {"refit_in_bootstrap", true},
                        {"percentile_rule", "linear interpolation at 1 + q(n-1)"},
                        {"max_failed_fraction", max_failed_fraction},
                        {"logistic",
                         {{"score_tolerance", logistic.score_tolerance},
                          {"step_tolerance", logistic.step_tolerance},
                          {"max_iterations", logistic.max_iterations},
                          {"divergence_bound", logistic.divergence_bound}}}};
  return out;
}

double percentile(std::span<const double> sorted_values, double q) {
  if (sorted_values.empty())
    throw EstimationError(EstimationError::Kind::Input, "estimator", "percentile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0))
    throw EstimationError(EstimationError::Kind::Input, "estimator", "quantile must lie in [0, 1]");
  const double pos = q * static_cast<double>(sorted_values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= sorted_values.size()) return sorted_values.back();
  return sorted_values[lo] + frac * (sorted_values[lo + 1] - sorted_values[lo]);
}

double confidence_limit_difference(double lower, double upper) { return upper - lower; }

double confidence_limit_difference(const EstimateWithCI& e) {
  return confidence_limit_difference(e.ci_lower, e.ci_upper);
}

PooledEstimate pool_fixed_effect(std::span<const double> points, std::span<const double> variances) {
  if (points.size() != variances.size() || points.empty())
    throw EstimationError(EstimationError::Kind::Input, "estimator",
                          "pooling needs matching, non-empty points and variances");
  double sum_w = 0.0;
  double sum_wx = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!(variances[i] > 0.0) || !std::isfinite(variances[i]) || !std::isfinite(points[i]))
      throw EstimationError(EstimationError::Kind::Input, "estimator",
                            "pooling requires finite estimates with positive finite variance");
    const double w = 1.0 / variances[i];
    sum_w += w;
    sum_wx += w * points[i];
  }
  PooledEstimate out;
  out.point = sum_wx / sum_w;
  out.variance = 1.0 / sum_w;
  const double half = 1.96 * std::sqrt(out.variance);
  out.ci_lower = out.point - half;
  out.ci_upper = out.point + half;
  return out;
}

PooledEstimate pooled_meta_estimate(const EstimateWithCI& members,
                                    const EstimateWithCI& weighted_nonmembers) {
  auto variance = [](const EstimateWithCI& e) {
    if (!e.has_interval())
      throw EstimationError(EstimationError::Kind::Input, "estimator",
                            std::string("analysis ") + letter(e.kind) + " has no bootstrap interval");
    const double half = confidence_limit_difference(e) / (2.0 * 1.96);
    return half * half;
  };
  const std::array<double, 2> points = {members.point.difference, weighted_nonmembers.point.difference};
  const std::array<double, 2> variances = {variance(members), variance(weighted_nonmembers)};
  return pool_fixed_effect(points, variances);
}

namespace {

bool needs_weights(AnalysisKind kind) {
  return kind == AnalysisKind::NonMembersWeighted || kind == AnalysisKind::CombinedWeighted;
}

// Design rows collapsed to distinct (covariate pattern, membership) cells.
struct PatternDesign {
  Eigen::MatrixXd design;
  std::vector<int> labels;
  std::vector<std::string> column_labels;
  std::vector<std::size_t> pattern_of;
};

PatternDesign collapse(const TrialDataset& ds, const std::vector<std::string>& covariates) {
  const DesignMatrix dm = encode_design_matrix(ds, covariates);
  PatternDesign out;
  out.column_labels = dm.labels;
  std::map<std::vector<double>, std::size_t> seen;
  std::vector<std::vector<double>> rows;
  out.pattern_of.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::vector<double> key(dm.values.cols() + 1);
    for (Eigen::Index j = 0; j < dm.values.cols(); ++j) key[static_cast<std::size_t>(j)] = dm.values(static_cast<Eigen::Index>(i), j);
    key.back() = ds.records[i].member;
    auto [it, inserted] = seen.emplace(key, rows.size());
    if (inserted) rows.push_back(key);
    out.pattern_of[i] = it->second;
  }
  out.design.resize(static_cast<Eigen::Index>(rows.size()), dm.values.cols());
  out.labels.resize(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (Eigen::Index j = 0; j < dm.values.cols(); ++j) out.design(static_cast<Eigen::Index>(r), j) = rows[r][static_cast<std::size_t>(j)];
    out.labels[r] = static_cast<int>(rows[r].back());
  }
  return out;
}

struct IterationResult {
  std::array<double, 5> value{};
  std::array<std::string, 5> failure;
};

class Engine {
 public:
  Engine(const TrialDataset& ds, const AnalysisConfig& config)
      : ds_(ds),
        config_(config),
        patterns_(collapse(ds, config.model_covariates)),
        followup_(ds) {
    member_.resize(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      member_[i] = ds.records[i].member;
      (member_[i] == 1 ? member_idx_ : nonmember_idx_).push_back(i);
    }
  }

  /// Fit with per-subject multiplicities; returns per-subject probabilities.
  std::vector<double> fit_probs(std::span<const double> multiplicity, FittedMembershipModel* out) const {
    std::vector<double> freq(patterns_.labels.size(), 0.0);
    for (std::size_t i = 0; i < multiplicity.size(); ++i) freq[patterns_.pattern_of[i]] += multiplicity[i];
    FittedMembershipModel model =
        fit_logistic(patterns_.design, patterns_.labels, freq, config_.logistic, patterns_.column_labels);
    std::vector<double> probs(ds_.size());
    for (std::size_t i = 0; i < ds_.size(); ++i) probs[i] = model.fitted_probs(static_cast<Eigen::Index>(patterns_.pattern_of[i]));
    if (out) {
      *out = std::move(model);
      out->fitted_probs = Eigen::Map<const Eigen::VectorXd>(probs.data(), static_cast<Eigen::Index>(probs.size()));
    }
    return probs;
  }

  /// Odds weights restricted to subjects present in the resample.
  std::vector<double> weights_for(std::span<const double> multiplicity, std::span<const double> probs) const {
    std::vector<int> member(member_);
    std::vector<double> p(probs.begin(), probs.end());
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (multiplicity[i] == 0.0) p[i] = 0.0;
    }
    return odds_weights(member, p, config_.weights);
  }

  double estimate(AnalysisKind kind, std::span<const double> multiplicity, std::span<const double> ow) const {
    std::vector<double> w(ds_.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double c = multiplicity[i];
      const bool m = member_[i] == 1;
      switch (kind) {
        case AnalysisKind::CombinedCrude: w[i] = c; break;
        case AnalysisKind::NonMembersCrude: w[i] = m ? 0.0 : c; break;
        case AnalysisKind::NonMembersWeighted: w[i] = m ? 0.0 : c * ow[i]; break;
        case AnalysisKind::MembersOnly: w[i] = m ? c : 0.0; break;
        case AnalysisKind::CombinedWeighted: w[i] = m ? c : c * ow[i]; break;
      }
    }
    return followup_.difference_at(w, config_.horizon_days).difference;
  }

  PfsDifference point(AnalysisKind kind, std::span<const double> ow) const {
    std::vector<double> ones(ds_.size(), 1.0);
    std::vector<double> w(ds_.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
      const bool m = member_[i] == 1;
      switch (kind) {
        case AnalysisKind::CombinedCrude: w[i] = 1.0; break;
        case AnalysisKind::NonMembersCrude: w[i] = m ? 0.0 : 1.0; break;
        case AnalysisKind::NonMembersWeighted: w[i] = m ? 0.0 : ow[i]; break;
        case AnalysisKind::MembersOnly: w[i] = m ? 1.0 : 0.0; break;
        case AnalysisKind::CombinedWeighted: w[i] = m ? 1.0 : ow[i]; break;
      }
    }
    return followup_.difference_at(w, config_.horizon_days);
  }

  IterationResult iterate(std::uint64_t seed, std::size_t b, std::span<const AnalysisKind> kinds) const {
    auto rng = make_stream(seed, StreamPurpose::Bootstrap, b);
    std::vector<double> count(ds_.size(), 0.0);
    for (const auto* stratum : {&member_idx_, &nonmember_idx_}) {
      std::uniform_int_distribution<std::size_t> pick(0, stratum->size() - 1);
      for (std::size_t k = 0; k < stratum->size(); ++k) count[(*stratum)[pick(rng)]] += 1.0;
    }

    IterationResult result;
    std::vector<double> ow;
    std::string fit_failure;
    const bool want_weights =
        std::any_of(kinds.begin(), kinds.end(), [](AnalysisKind k) { return needs_weights(k); });
    if (want_weights) {
      try {
        ow = weights_for(count, fit_probs(count, nullptr));
      } catch (const ModelError& e) {
        fit_failure = to_string(e.kind());
      }
    }
    for (auto kind : kinds) {
      auto& failure = result.failure[index_of(kind)];
      if (needs_weights(kind) && !fit_failure.empty()) {
        failure = fit_failure;
        continue;
      }
      try {
        result.value[index_of(kind)] = estimate(kind, count, ow);
      } catch (const EstimationError& e) {
        failure = to_string(e.kind());
      }
    }
    return result;
  }

  /// Runs the bootstrap and fills interval fields of the requested estimates.
  void bootstrap(std::uint64_t seed, std::span<const AnalysisKind> kinds,
                 std::array<EstimateWithCI, 5>& estimates) const {
    const auto n = static_cast<std::size_t>(config_.n_bootstrap);
    std::vector<IterationResult> results(n);
    parallel_for(n, config_.threads, [&](std::size_t b) { results[b] = iterate(seed, b, kinds); });

    for (auto kind : kinds) {
      auto& e = estimates[index_of(kind)];
      std::vector<double> values;
      values.reserve(n);
      e.n_bootstrap = config_.n_bootstrap;
      e.n_failed_bootstrap = 0;
      e.failures.clear();
      for (const auto& r : results) {
        const auto& failure = r.failure[index_of(kind)];
        if (failure.empty()) {
          values.push_back(r.value[index_of(kind)]);
        } else {
          ++e.n_failed_bootstrap;
          ++e.failures[failure];
        }
      }
      const double failed_share = static_cast<double>(e.n_failed_bootstrap) / static_cast<double>(n);
      if (values.empty() || failed_share > config_.max_failed_fraction) {
        std::string breakdown;
        for (const auto& [cause, count] : e.failures)
          breakdown += (breakdown.empty() ? "" : ", ") + cause + "=" + std::to_string(count);
        e.error = std::string("unstable bootstrap for analysis ") + letter(kind) + ": " +
                  std::to_string(e.n_failed_bootstrap) + " of " + std::to_string(n) +
                  " iterations failed (" + breakdown + ")";
        continue;
      }
      std::sort(values.begin(), values.end());
      e.ci_lower = percentile(values, 0.025);
      e.ci_upper = percentile(values, 0.975);
      e.cld = confidence_limit_difference(e);
    }
  }

 private:
  const TrialDataset& ds_;
  const AnalysisConfig& config_;
  PatternDesign patterns_;
  FollowupIndex followup_;
  std::vector<int> member_;
  std::vector<std::size_t> member_idx_;
  std::vector<std::size_t> nonmember_idx_;
};

void validate_config(const TrialDataset& ds, const AnalysisConfig& config, bool suite) {
  if (suite ? config.n_bootstrap < 0 : config.n_bootstrap < 1)
    throw ConfigError("estimator", "n_bootstrap must be at least 1");
  if (!(config.horizon_days >= 0.0))
    throw ConfigError("estimator", "horizon must be non-negative");
  if (config.weights.cap && !(*config.weights.cap > 0.0))
    throw ConfigError("estimator", "weight cap must be positive");
  for (const auto& name : config.model_covariates) {
    if (!ds.spec.index_of(name))
      throw ConfigError("estimator", "model covariate '" + name + "' is not in the covariate spec");
  }
  ds.validate();
}

}  // namespace

AnalysisReport run_analysis_suite(const TrialDataset& ds, const AnalysisConfig& config) {
  validate_config(ds, config, true);
  Engine engine(ds, config);

  AnalysisReport report;
  report.config = config;
  report.spec = ds.spec;
  report.provenance = {ds.size(), ds.member_count(), ds.nonmember_count(), ds.dropped_incomplete};

  const std::vector<double> ones(ds.size(), 1.0);
  const std::vector<double> probs = engine.fit_probs(ones, &report.model);
  std::vector<int> member(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) member[i] = ds.records[i].member;
  const std::vector<double> ow = odds_weights(member, probs, config.weights);
  report.balance = balance_table(WeightedCohort(ds, ow));

  for (auto kind : kAllAnalyses) {
    auto& e = report.estimates[index_of(kind)];
    e.kind = kind;
    try {
      e.point = engine.point(kind, ow);
    } catch (const EstimationError& ex) {
      e.error = ex.what();
    }
  }

  std::vector<AnalysisKind> to_bootstrap;
  for (auto kind : kAllAnalyses)
    if (report.at(kind).ok()) to_bootstrap.push_back(kind);
  if (config.n_bootstrap > 0 && !to_bootstrap.empty())
    engine.bootstrap(config.seed, to_bootstrap, report.estimates);

  try {
    report.pooled = pooled_meta_estimate(report.at(AnalysisKind::MembersOnly),
                                         report.at(AnalysisKind::NonMembersWeighted));
  } catch (const EstimationError& ex) {
    report.pooled_error = ex.what();
  }
  return report;
}

EstimateWithCI bootstrap_ci(const TrialDataset& ds, const AnalysisConfig& config, AnalysisKind kind,
                            std::uint64_t seed) {
  validate_config(ds, config, false);
  Engine engine(ds, config);
  std::array<EstimateWithCI, 5> estimates;
  auto& e = estimates[index_of(kind)];
  e.kind = kind;
  std::vector<double> ow(ds.size(), 1.0);
  if (needs_weights(kind)) {
    const std::vector<double> ones(ds.size(), 1.0);
    ow = engine.weights_for(ones, engine.fit_probs(ones, nullptr));
  }
  e.point = engine.point(kind, ow);
  const std::array<AnalysisKind, 1> kinds = {kind};
  engine.bootstrap(seed, kinds, estimates);
  if (e.error) throw EstimationError(EstimationError::Kind::UnstableBootstrap, "estimator", *e.error);
  return e;
}

nlohmann::json report_to_json(const AnalysisReport& report) {
  using nlohmann::json;
  auto number = [](double v) { return std::isfinite(v) ? json(v) : json(); };
  json estimates = json::array();
  for (const auto& e : report.estimates) {
    json item = {{"analysis", letter(e.kind)},
                 {"kind", to_string(e.kind)},
                 {"description", description(e.kind)}};
    if (e.ok()) {
      item["horizon_days"] = e.point.horizon;
      item["s1"] = e.point.s1;
      item["s0"] = e.point.s0;
      item["difference"] = e.point.difference;
    }
    item["ci_lower"] = number(e.ci_lower);
    item["ci_upper"] = number(e.ci_upper);
    item["cld"] = number(e.cld);
    item["n_bootstrap"] = e.n_bootstrap;
    item["n_failed_bootstrap"] = e.n_failed_bootstrap;
    item["failures"] = e.failures;
    item["error"] = e.error ? json(*e.error) : json();
    estimates.push_back(std::move(item));
  }
  json model = {{"columns", report.model.column_labels},
                {"coefficients", std::vector<double>(report.model.coefficients.data(),
                                                     report.model.coefficients.data() +
                                                         report.model.coefficients.size())},
                {"iterations", report.model.n_iterations},
                {"converged", report.model.converged},
                {"max_abs_score", report.model.max_abs_score},
                {"log_likelihood", report.model.log_likelihood}};
  json pooled;
  if (report.pooled) {
    pooled = {{"method", PooledEstimate::kLabel},
              {"inputs", {letter(AnalysisKind::MembersOnly), letter(AnalysisKind::NonMembersWeighted)}},
              {"point", report.pooled->point},
              {"variance", report.pooled->variance},
              {"ci_lower", report.pooled->ci_lower},
              {"ci_upper", report.pooled->ci_upper}};
  } else if (report.pooled_error) {
    pooled = {{"method", PooledEstimate::kLabel}, {"error", *report.pooled_error}};
  }
  return {{"configuration", {{"analysis", report.config.to_json()}, {"covariates", report.spec.to_json()}}},
          {"dataset",
           {{"n_records", report.provenance.n_records},
            {"n_members", report.provenance.n_members},
            {"n_nonmembers", report.provenance.n_nonmembers},
            {"dropped_incomplete", report.provenance.dropped_incomplete}}},
          {"membership_model", std::move(model)},
          {"estimates", std::move(estimates)},
          {"pooled_meta_estimate", std::move(pooled)},
          {"balance", balance_to_json(report.balance)}};
}

void write_report_text(std::ostream& out, const AnalysisReport& report) {
  auto pct = [](double v) { return format_fixed(100.0 * v, 1) + "%"; };
  out << "One-year PFS difference at " << format_number(report.config.horizon_days)
      << " days (positive = intervention beneficial)\n";
  out << "95% CIs: 2.5th and 97.5th percentiles of " << report.config.n_bootstrap
      << " bootstrap iterations, seed " << report.config.seed << "\n";
  out << "Members N=" << report.provenance.n_members << ", non-members N=" << report.provenance.n_nonmembers
      << ", odds-weighted non-members N=" << format_fixed(report.balance.weighted_nonmember_n, 1)
      << ", dropped incomplete rows=" << report.provenance.dropped_incomplete << "\n\n";

  std::vector<std::array<std::string, 3>> rows;
  rows.push_back({"Analysis", "1-year PFSD (95% CI)", "CLD"});
  for (const auto& e : report.estimates) {
    std::string name = std::string(letter(e.kind)) + "  " + description(e.kind);
    if (!e.ok()) {
      rows.push_back({name, "error: " + *e.error, ""});
    } else if (!e.has_interval()) {
      rows.push_back({name, pct(e.point.difference), ""});
    } else {
      rows.push_back({name, pct(e.point.difference) + " (" + pct(e.ci_lower) + ", " + pct(e.ci_upper) + ")",
                      format_fixed(e.cld, 2)});
    }
  }
  std::size_t w0 = 0;
  std::size_t w1 = 0;
  for (const auto& r : rows) {
    w0 = std::max(w0, r[0].size());
    w1 = std::max(w1, r[1].size());
  }
  for (const auto& r : rows) out << pad_right(r[0], w0 + 2) << pad_right(r[1], w1 + 2) << r[2] << '\n';

  out << '\n';
  if (report.pooled) {
    out << "Pooled D + C (" << PooledEstimate::kLabel << "): " << pct(report.pooled->point) << " ("
        << pct(report.pooled->ci_lower) << ", " << pct(report.pooled->ci_upper) << ")\n";
  } else if (report.pooled_error) {
    out << "Pooled D + C unavailable: " << *report.pooled_error << '\n';
  }
}

}  // namespace transweight
