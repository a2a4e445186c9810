#include "transweight/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>

#include "transweight/error.hpp"
#include "transweight/parallel.hpp"
#include "transweight/text_format.hpp"

namespace transweight {

namespace {

using nlohmann::json;

constexpr std::size_t kMaxEnumeratedCovariates = 20;

ConfigError config_error(const std::string& what) { return ConfigError("simulation", what); }

double logit(double p) { return std::log(p / (1.0 - p)); }

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

}  // namespace

void ScenarioConfig::validate() const {
  if (n_members < 1 || n_nonmembers < 1)
    throw config_error("scenario needs at least one member and one non-member");
  if (!is_probability(treatment_probability) || treatment_probability == 0.0 ||
      treatment_probability == 1.0)
    throw config_error("treatment_probability must lie strictly between 0 and 1");
  if (covariates.size() > kMaxEnumeratedCovariates)
    throw config_error("at most " + std::to_string(kMaxEnumeratedCovariates) + " covariates are supported");
  std::set<std::string> names;
  for (const auto& law : covariates) {
    if (law.name.empty() || law.name == "member")
      throw config_error("covariate names must be non-empty and not 'member'");
    if (!is_probability(law.member_prob) || !is_probability(law.nonmember_prob))
      throw config_error("covariate '" + law.name + "' has a probability outside [0, 1]");
    for (const auto& [parent, coef] : law.parents) {
      if (!names.count(parent))
        throw config_error("covariate '" + law.name + "' lists parent '" + parent +
                           "' that is not declared before it");
      if (!std::isfinite(coef)) throw config_error("non-finite parent coefficient");
    }
    if (!names.insert(law.name).second) throw config_error("duplicate covariate '" + law.name + "'");
  }
  if (!(outcome.base_rate > 0.0) || !std::isfinite(outcome.base_rate))
    throw config_error("outcome base_rate must be positive");
  for (const auto* terms : {&outcome.covariate, &outcome.treatment_x_covariate}) {
    for (const auto& [name, coef] : *terms) {
      if (!names.count(name)) throw config_error("outcome term names unknown covariate '" + name + "'");
      if (!std::isfinite(coef)) throw config_error("non-finite outcome coefficient");
    }
  }
  if (!(censoring.administrative_days > 0.0))
    throw config_error("administrative censoring horizon must be positive");
  if (!(censoring.dropout_rate >= 0.0)) throw config_error("dropout rate must be non-negative");
}

double ScenarioConfig::rate(int arm, int member, std::span<const int> covs) const {
  double log_rate = std::log(outcome.base_rate) + outcome.treatment * arm + outcome.membership * member +
                    outcome.treatment_x_membership * arm * member;
  for (std::size_t k = 0; k < covariates.size(); ++k) {
    if (covs[k] == 0) continue;
    const auto& name = covariates[k].name;
    if (auto it = outcome.covariate.find(name); it != outcome.covariate.end()) log_rate += it->second;
    if (auto it = outcome.treatment_x_covariate.find(name); it != outcome.treatment_x_covariate.end())
      log_rate += it->second * arm;
  }
  return std::exp(log_rate);
}

double ScenarioConfig::covariate_prob(std::size_t k, int member, std::span<const int> earlier) const {
  const auto& law = covariates[k];
  const double base = member == 1 ? law.member_prob : law.nonmember_prob;
  if (base == 0.0 || base == 1.0 || law.parents.empty()) return base;
  double eta = logit(base);
  for (const auto& [parent, coef] : law.parents) {
    for (std::size_t j = 0; j < k; ++j) {
      if (covariates[j].name == parent && earlier[j] == 1) eta += coef;
    }
  }
  return logistic(eta);
}

ScenarioConfig ScenarioConfig::from_json(const json& doc) {
  ScenarioConfig cfg;
  try {
    cfg.name = doc.value("name", std::string("scenario"));
    cfg.n_members = doc.at("n_members").get<std::size_t>();
    cfg.n_nonmembers = doc.at("n_nonmembers").get<std::size_t>();
    cfg.treatment_probability = doc.value("treatment_probability", 0.5);
    for (const auto& item : doc.at("covariates")) {
      CovariateLaw law;
      law.name = item.at("name").get<std::string>();
      law.member_prob = item.at("member_prob").get<double>();
      law.nonmember_prob = item.at("nonmember_prob").get<double>();
      if (item.contains("parents")) {
        for (const auto& [parent, coef] : item.at("parents").items()) law.parents.emplace_back(parent, coef.get<double>());
      }
      cfg.covariates.push_back(std::move(law));
    }
    const auto& out = doc.at("outcome");
    cfg.outcome.base_rate = out.at("base_rate").get<double>();
    cfg.outcome.treatment = out.value("treatment", 0.0);
    cfg.outcome.membership = out.value("membership", 0.0);
    cfg.outcome.treatment_x_membership = out.value("treatment_x_membership", 0.0);
    if (out.contains("covariates")) cfg.outcome.covariate = out.at("covariates").get<std::map<std::string, double>>();
    if (out.contains("treatment_x_covariates"))
      cfg.outcome.treatment_x_covariate = out.at("treatment_x_covariates").get<std::map<std::string, double>>();
    if (doc.contains("censoring")) {
      const auto& c = doc.at("censoring");
      cfg.censoring.administrative_days = c.value("administrative_days", cfg.censoring.administrative_days);
      cfg.censoring.dropout_rate = c.value("dropout_rate", cfg.censoring.dropout_rate);
    }
    cfg.seed = doc.value("seed", std::uint64_t{0});
    if (doc.contains("monte_carlo")) {
      const auto& mc = doc.at("monte_carlo");
      cfg.monte_carlo.replicates = mc.value("replicates", cfg.monte_carlo.replicates);
      cfg.monte_carlo.n_bootstrap = mc.value("n_bootstrap", cfg.monte_carlo.n_bootstrap);
      cfg.monte_carlo.horizon_days = mc.value("horizon_days", cfg.monte_carlo.horizon_days);
      if (mc.contains("model_covariates"))
        cfg.monte_carlo.model_covariates = mc.at("model_covariates").get<std::vector<std::string>>();
    }
  } catch (const json::exception& ex) {
    throw config_error(std::string("invalid scenario document: ") + ex.what());
  }
  cfg.validate();
  for (const auto& name : cfg.monte_carlo.model_covariates) {
    if (std::none_of(cfg.covariates.begin(), cfg.covariates.end(),
                     [&](const CovariateLaw& l) { return l.name == name; }))
      throw config_error("monte_carlo.model_covariates names unknown covariate '" + name + "'");
  }
  return cfg;
}

json ScenarioConfig::to_json() const {
  json covs = json::array();
  for (const auto& law : covariates) {
    json parents = json::object();
    for (const auto& [p, c] : law.parents) parents[p] = c;
    covs.push_back({{"name", law.name},
                    {"member_prob", law.member_prob},
                    {"nonmember_prob", law.nonmember_prob},
                    {"parents", parents}});
  }
  return {{"name", name},
          {"n_members", n_members},
          {"n_nonmembers", n_nonmembers},
          {"treatment_probability", treatment_probability},
          {"covariates", covs},
          {"outcome",
           {{"base_rate", outcome.base_rate},
            {"treatment", outcome.treatment},
            {"membership", outcome.membership},
            {"treatment_x_membership", outcome.treatment_x_membership},
            {"covariates", outcome.covariate},
            {"treatment_x_covariates", outcome.treatment_x_covariate}}},
          {"censoring",
           {{"administrative_days", censoring.administrative_days},
            {"dropout_rate", censoring.dropout_rate}}},
          {"seed", seed},
          {"monte_carlo",
           {{"replicates", monte_carlo.replicates},
            {"n_bootstrap", monte_carlo.n_bootstrap},
            {"horizon_days", monte_carlo.horizon_days},
            {"model_covariates", monte_carlo.model_covariates}}}};
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open scenario file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& ex) {
    throw config_error("scenario file " + path.string() + " is not valid JSON: " + ex.what());
  }
  return ScenarioConfig::from_json(doc);
}

SimulatedTrial generate_trial(const ScenarioConfig& cfg, std::uint64_t replicate_index) {
  cfg.validate();
  auto rng = make_stream(cfg.seed, StreamPurpose::Trial, replicate_index);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto exponential = [&](double rate) { return -std::log1p(-unif(rng)) / rate; };

  std::vector<CovariateEntry> entries;
  for (const auto& law : cfg.covariates) entries.push_back({law.name, CovariateKind::Binary, {}, {}});

  SimulatedTrial trial;
  trial.dataset.spec = CovariateSpec(std::move(entries));
  const std::size_t n = cfg.n_members + cfg.n_nonmembers;
  trial.dataset.records.reserve(n);
  trial.potential_time1.reserve(n);
  trial.potential_time0.reserve(n);
  std::vector<int> covs(cfg.covariates.size());
  for (std::size_t i = 0; i < n; ++i) {
    const int member = i < cfg.n_members ? 1 : 0;
    for (std::size_t k = 0; k < covs.size(); ++k) covs[k] = unif(rng) < cfg.covariate_prob(k, member, covs) ? 1 : 0;
    const int arm = unif(rng) < cfg.treatment_probability ? 1 : 0;
    const double t1 = exponential(cfg.rate(1, member, covs));
    const double t0 = exponential(cfg.rate(0, member, covs));
    double censor = cfg.censoring.administrative_days;
    if (cfg.censoring.dropout_rate > 0.0) censor = std::min(censor, exponential(cfg.censoring.dropout_rate));

    const double t = arm == 1 ? t1 : t0;
    SubjectRecord r;
    r.id = "s" + std::to_string(i + 1);
    r.arm = arm;
    r.member = member;
    r.event = t <= censor ? 1 : 0;
    r.time = std::min(t, censor);
    r.covariates.assign(covs.begin(), covs.end());
    trial.dataset.records.push_back(std::move(r));
    trial.potential_time1.push_back(t1);
    trial.potential_time0.push_back(t0);
  }
  return trial;
}

namespace {

// Joint law of (member, covariates) with each cell's treatment effect.
struct Cell {
  int member = 0;
  std::vector<int> covs;
  double prob = 0.0;
  double effect = 0.0;
};

std::vector<Cell> enumerate_cells(const ScenarioConfig& cfg, double horizon, bool members_only) {
  const std::size_t k = cfg.covariates.size();
  const double n = static_cast<double>(cfg.n_members + cfg.n_nonmembers);
  std::vector<Cell> cells;
  for (int member = 1; member >= 0; --member) {
    if (members_only && member == 0) continue;
    const double p_member = members_only ? 1.0
                            : member == 1 ? static_cast<double>(cfg.n_members) / n
                                          : static_cast<double>(cfg.n_nonmembers) / n;
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << k); ++mask) {
      Cell cell;
      cell.member = member;
      cell.covs.resize(k);
      double p = p_member;
      for (std::size_t j = 0; j < k; ++j) {
        cell.covs[j] = static_cast<int>((mask >> j) & 1u);
        const double q = cfg.covariate_prob(j, member, cell.covs);
        p *= cell.covs[j] == 1 ? q : 1.0 - q;
      }
      if (p == 0.0) continue;
      cell.prob = p;
      cell.effect = std::exp(-cfg.rate(1, member, cell.covs) * horizon) -
                    std::exp(-cfg.rate(0, member, cell.covs) * horizon);
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

}  // namespace

double true_member_effect(const ScenarioConfig& cfg, double horizon) {
  cfg.validate();
  double total = 0.0;
  for (const auto& cell : enumerate_cells(cfg, horizon, true)) total += cell.prob * cell.effect;
  return total;
}

EmmContrast emm_contrast(const ScenarioConfig& cfg, const std::string& modifier,
                         std::span<const std::string> conditioning, double horizon) {
  cfg.validate();
  // Variable 0 is membership, 1..k the covariates.
  auto variable_index = [&](const std::string& name) -> std::size_t {
    if (name == "member") return 0;
    for (std::size_t j = 0; j < cfg.covariates.size(); ++j)
      if (cfg.covariates[j].name == name) return j + 1;
    throw config_error("unknown variable '" + name + "'");
  };
  const std::size_t v = variable_index(modifier);
  std::vector<std::size_t> cond;
  for (const auto& name : conditioning) {
    const std::size_t c = variable_index(name);
    if (c == v) throw config_error("the modifier cannot be in its own conditioning set");
    cond.push_back(c);
  }
  auto value_of = [](const Cell& cell, std::size_t var) {
    return var == 0 ? cell.member : cell.covs[var - 1];
  };

  const auto cells = enumerate_cells(cfg, horizon, false);
  // Per modifier level and conditioning stratum: probability mass and effect mass.
  std::array<std::map<std::vector<int>, std::pair<double, double>>, 2> strata;
  std::array<double, 2> level_prob = {0.0, 0.0};
  std::array<double, 2> level_effect = {0.0, 0.0};
  for (const auto& cell : cells) {
    const int level = value_of(cell, v);
    std::vector<int> key;
    for (std::size_t c : cond) key.push_back(value_of(cell, c));
    auto& slot = strata[static_cast<std::size_t>(level)][key];
    slot.first += cell.prob;
    slot.second += cell.prob * cell.effect;
    level_prob[static_cast<std::size_t>(level)] += cell.prob;
    level_effect[static_cast<std::size_t>(level)] += cell.prob * cell.effect;
  }
  for (int level = 0; level < 2; ++level) {
    if (level_prob[static_cast<std::size_t>(level)] == 0.0)
      throw config_error("modifier '" + modifier + "' level " + std::to_string(level) + " has probability 0");
  }

  EmmContrast out;
  if (cond.empty()) {
    out.difference_level1 = level_effect[1] / level_prob[1];
    out.difference_level0 = level_effect[0] / level_prob[0];
  } else {
    // Standardize both levels to the conditioning distribution at level 1.
    for (int level = 1; level >= 0; --level) {
      double total = 0.0;
      for (const auto& [key, mass] : strata[1]) {
        const double weight = mass.first / level_prob[1];
        auto it = strata[static_cast<std::size_t>(level)].find(key);
        if (it == strata[static_cast<std::size_t>(level)].end() || it->second.first == 0.0)
          throw config_error("conditioning stratum present at modifier level 1 is absent at level 0");
        total += weight * it->second.second / it->second.first;
      }
      (level == 1 ? out.difference_level1 : out.difference_level0) = total;
    }
  }
  out.is_emm = std::abs(out.difference_level1 - out.difference_level0) > 1e-9;
  return out;
}

MonteCarloSummary monte_carlo_evaluate(const ScenarioConfig& cfg, const AnalysisConfig& analysis,
                                       int n_replicates, unsigned threads) {
  cfg.validate();
  if (n_replicates < 1) throw config_error("n_replicates must be at least 1");

  MonteCarloSummary summary;
  summary.scenario = cfg.name;
  summary.horizon_days = analysis.horizon_days;
  summary.n_replicates = n_replicates;
  summary.truth = true_member_effect(cfg, analysis.horizon_days);
  summary.replicates.resize(static_cast<std::size_t>(n_replicates));
  {
    json echo = analysis.to_json();
    echo.erase("seed");
    summary.configuration = {{"scenario", cfg.to_json()}, {"analysis", echo}, {"replicates", n_replicates}};
  }

  parallel_for(static_cast<std::size_t>(n_replicates), threads, [&](std::size_t r) {
    auto& out = summary.replicates[r];
    try {
      const SimulatedTrial trial = generate_trial(cfg, r);
      AnalysisConfig config = analysis;
      config.seed = derive_seed(cfg.seed, StreamPurpose::Replicate, r);
      config.threads = 1;
      out.estimates = run_analysis_suite(trial.dataset, config).estimates;
    } catch (const Error& e) {
      out.failed = true;
      if (const auto* m = dynamic_cast<const ModelError*>(&e)) {
        out.failure = to_string(m->kind());
      } else if (const auto* d = dynamic_cast<const DataError*>(&e)) {
        out.failure = d->kind() == DataError::Kind::Invariant ? "dataset-invariant" : "dataset";
      } else {
        out.failure = e.what();
      }
    }
  });

  for (const auto& rep : summary.replicates) {
    if (rep.failed) {
      ++summary.n_failed_replicates;
      ++summary.replicate_failures[rep.failure];
    }
  }
  if (summary.n_failed_replicates * 10 > n_replicates) {
    std::string breakdown;
    for (const auto& [cause, count] : summary.replicate_failures)
      breakdown += (breakdown.empty() ? "" : ", ") + cause + "=" + std::to_string(count);
    throw EstimationError(EstimationError::Kind::UnstableMonteCarlo, "simulation",
                          std::to_string(summary.n_failed_replicates) + " of " +
                              std::to_string(n_replicates) + " replicates failed (" + breakdown + ")");
  }

  for (auto kind : kAllAnalyses) {
    auto& s = summary.analyses[index_of(kind)];
    s.kind = kind;
    std::vector<double> points;
    std::vector<double> clds;
    int covered = 0;
    for (const auto& rep : summary.replicates) {
      if (rep.failed) continue;
      const auto& e = rep.estimates[index_of(kind)];
      if (!e.ok()) continue;
      points.push_back(e.point.difference);
      if (e.has_interval()) {
        clds.push_back(e.cld);
        if (e.ci_lower <= summary.truth && summary.truth <= e.ci_upper) ++covered;
      }
    }
    s.n_estimates = static_cast<int>(points.size());
    s.n_intervals = static_cast<int>(clds.size());
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (points.empty()) {
      s.mean_estimate = s.bias = s.empirical_se = s.bias_mc_se = nan;
    } else {
      const double n = static_cast<double>(points.size());
      s.mean_estimate = std::accumulate(points.begin(), points.end(), 0.0) / n;
      s.bias = s.mean_estimate - summary.truth;
      double ss = 0.0;
      for (double p : points) ss += (p - s.mean_estimate) * (p - s.mean_estimate);
      s.empirical_se = points.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
      s.bias_mc_se = s.empirical_se / std::sqrt(n);
    }
    if (clds.empty()) {
      s.mean_cld = s.median_cld = s.coverage = nan;
    } else {
      s.mean_cld = std::accumulate(clds.begin(), clds.end(), 0.0) / static_cast<double>(clds.size());
      std::sort(clds.begin(), clds.end());
      s.median_cld = percentile(clds, 0.5);
      s.coverage = static_cast<double>(covered) / static_cast<double>(clds.size());
    }
  }
  return summary;
}

void write_summary_csv(std::ostream& out, const MonteCarloSummary& summary) {
  out << "analysis,kind,truth,n_estimates,mean_estimate,bias,empirical_se,bias_mc_se,n_intervals,"
         "mean_cld,median_cld,coverage\n";
  for (const auto& s : summary.analyses) {
    out << letter(s.kind) << ',' << to_string(s.kind) << ',' << format_number(summary.truth) << ','
        << s.n_estimates << ',' << format_number(s.mean_estimate) << ',' << format_number(s.bias) << ','
        << format_number(s.empirical_se) << ',' << format_number(s.bias_mc_se) << ',' << s.n_intervals
        << ',' << format_number(s.mean_cld) << ',' << format_number(s.median_cld) << ','
        << format_number(s.coverage) << '\n';
  }
}

json summary_to_json(const MonteCarloSummary& summary) {
  auto number = [](double v) { return std::isfinite(v) ? json(v) : json(); };
  json analyses = json::array();
  for (const auto& s : summary.analyses) {
    analyses.push_back({{"analysis", letter(s.kind)},
                        {"kind", to_string(s.kind)},
                        {"n_estimates", s.n_estimates},
                        {"mean_estimate", number(s.mean_estimate)},
                        {"bias", number(s.bias)},
                        {"empirical_se", number(s.empirical_se)},
                        {"bias_mc_se", number(s.bias_mc_se)},
                        {"n_intervals", s.n_intervals},
                        {"mean_cld", number(s.mean_cld)},
                        {"median_cld", number(s.median_cld)},
                        {"coverage", number(s.coverage)}});
  }
  return {{"configuration", summary.configuration},
          {"scenario", summary.scenario},
          {"truth", summary.truth},
          {"horizon_days", summary.horizon_days},
          {"n_replicates", summary.n_replicates},
          {"n_failed_replicates", summary.n_failed_replicates},
          {"replicate_failures", summary.replicate_failures},
          {"analyses", std::move(analyses)}};
}

}  // namespace transweight
