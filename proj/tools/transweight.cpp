// Command-line front end: analyze, balance, simulate.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "transweight/dataset.hpp"
#include "transweight/error.hpp"
#include "transweight/estimator.hpp"
#include "transweight/membership_model.hpp"
#include "transweight/parallel.hpp"
#include "transweight/simulation.hpp"
#include "transweight/survival.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace transweight;

namespace {

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kModel = 4, kEstimation = 5 };

struct RunConfig {
  std::string command;
  std::string input;
  std::string spec;
  std::string target_column;
  std::string target_level;
  double horizon_days = 365.0;
  int n_bootstrap = 2000;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::optional<double> weight_cap;
  unsigned threads = default_thread_count();

  json to_json() const {
    json j = {{"command", command}, {"input", input}, {"horizon_days", horizon_days},
              {"n_bootstrap", n_bootstrap}};
    if (!spec.empty()) j["spec"] = spec;
    if (!target_column.empty()) j["target_column"] = target_column;
    if (!target_level.empty()) j["target_level"] = target_level;
    j["seed"] = seed ? json(*seed) : json();
    j["weight_cap"] = weight_cap ? json(*weight_cap) : json();
    return j;
  }
};

std::string remediation(const Error& e) {
  if (const auto* m = dynamic_cast<const ModelError*>(&e)) {
    switch (m->kind()) {
      case ModelError::Kind::Separation:
      case ModelError::Kind::WeightOverflow:
        return "drop or merge sparse covariate levels in model_covariates so every covariate "
               "pattern contains both members and non-members";
      case ModelError::Kind::Collinearity:
        return "remove the dependent columns from model_covariates";
      case ModelError::Kind::NonConvergence:
        return "simplify the membership model; the iteration trace is shown above";
      case ModelError::Kind::Input:
        return "check the membership column and the model covariates";
    }
  }
  if (dynamic_cast<const DataError*>(&e))
    return "check the --spec column names, declared levels and the CSV contents";
  if (dynamic_cast<const EstimationError*>(&e))
    return "check follow-up length against --horizon-days and the size of each arm";
  return "check the command-line flags and configuration files";
}

int exit_code_for(const Error& e) {
  switch (e.category()) {
    case ErrorCategory::Config: return kUsage;
    case ErrorCategory::Data: return kData;
    case ErrorCategory::Model: return kModel;
    case ErrorCategory::Estimation: return kEstimation;
  }
  return kEstimation;
}

void write_file(const fs::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cli", "cannot write " + path.string());
  out << contents;
}

struct LoadedInput {
  InputSchema schema;
  TrialDataset dataset;
};

LoadedInput load_input(const RunConfig& run) {
  LoadedInput in;
  in.schema = load_input_schema(run.spec);
  if (!run.target_column.empty()) in.schema.columns.member = run.target_column;
  if (!run.target_level.empty()) in.schema.columns.member_level = run.target_level;
  in.dataset = load_dataset(run.input, in.schema.spec, in.schema.columns);
  return in;
}

std::vector<std::string> model_covariates(const InputSchema& schema) {
  if (!schema.model_covariates.empty()) return schema.model_covariates;
  std::vector<std::string> names;
  for (const auto& e : schema.spec.entries())
    if (e.physical_column() != schema.columns.member) names.push_back(e.name);
  return names;
}

json resolved_configuration(const RunConfig& run, const InputSchema& schema) {
  return {{"run", run.to_json()}, {"schema", schema.to_json()}};
}

std::string comment_line(const json& config) { return "# configuration: " + config.dump() + "\n"; }

int run_balance(const RunConfig& run) {
  const LoadedInput in = load_input(run);
  const auto covariates = model_covariates(in.schema);
  const DesignMatrix design = encode_design_matrix(in.dataset, covariates);
  std::vector<int> labels;
  for (const auto& r : in.dataset.records) labels.push_back(r.member);
  const FittedMembershipModel model = fit_logistic(design, labels);
  const WeightedCohort cohort = compute_odds_weights(in.dataset, model, {run.weight_cap});
  const BalanceTable table = balance_table(cohort);

  const json config = resolved_configuration(run, in.schema);
  fs::create_directories(run.out);
  std::ostringstream csv;
  csv << comment_line(config);
  write_balance_csv(csv, table);
  write_file(fs::path(run.out) / "balance.csv", csv.str());
  std::ostringstream text;
  write_balance_text(text, table);
  write_file(fs::path(run.out) / "balance.txt", text.str() + "\n" + comment_line(config));
  std::cout << text.str();
  return kOk;
}

int run_analyze(const RunConfig& run) {
  const LoadedInput in = load_input(run);
  AnalysisConfig config;
  config.model_covariates = model_covariates(in.schema);
  config.horizon_days = run.horizon_days;
  config.n_bootstrap = run.n_bootstrap;
  config.seed = *run.seed;
  config.weights.cap = run.weight_cap;
  config.threads = run.threads;
  const AnalysisReport report = run_analysis_suite(in.dataset, config);

  const json run_config = resolved_configuration(run, in.schema);
  fs::create_directories(run.out);
  json doc = report_to_json(report);
  doc["configuration"]["run"] = run_config["run"];
  doc["configuration"]["schema"] = run_config["schema"];
  write_file(fs::path(run.out) / "report.json", doc.dump(2) + "\n");

  std::ostringstream text;
  write_report_text(text, report);
  write_file(fs::path(run.out) / "report.txt", text.str() + "\n" + comment_line(run_config));
  std::ostringstream csv;
  csv << comment_line(run_config);
  write_balance_csv(csv, report.balance);
  write_file(fs::path(run.out) / "balance.csv", csv.str());

  // Product-limit curves for each analysis population and arm.
  const fs::path curves = fs::path(run.out) / "curves";
  fs::create_directories(curves);
  std::vector<double> ow(report.model.fitted_probs.size(), 1.0);
  for (std::size_t i = 0; i < in.dataset.size(); ++i) {
    if (in.dataset.records[i].member == 0) {
      const double p = report.model.fitted_probs(static_cast<Eigen::Index>(i));
      ow[i] = p / (1.0 - p);
      if (run.weight_cap) ow[i] = std::min(ow[i], *run.weight_cap);
    }
  }
  const FollowupIndex index(in.dataset);
  for (auto kind : kAllAnalyses) {
    std::vector<double> w(in.dataset.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
      const bool m = in.dataset.records[i].member == 1;
      switch (kind) {
        case AnalysisKind::CombinedCrude: w[i] = 1.0; break;
        case AnalysisKind::NonMembersCrude: w[i] = m ? 0.0 : 1.0; break;
        case AnalysisKind::NonMembersWeighted: w[i] = m ? 0.0 : ow[i]; break;
        case AnalysisKind::MembersOnly: w[i] = m ? 1.0 : 0.0; break;
        case AnalysisKind::CombinedWeighted: w[i] = m ? 1.0 : ow[i]; break;
      }
    }
    for (int arm = 0; arm < 2; ++arm) {
      std::ostringstream os;
      os << comment_line(run_config);
      try {
        write_curve_csv(os, index.arm(arm).curve(w));
      } catch (const EstimationError&) {
        continue;
      }
      write_file(curves / (std::string(letter(kind)) + "_arm" + std::to_string(arm) + ".csv"), os.str());
    }
  }

  std::cout << text.str();
  for (const auto& e : report.estimates) {
    if (!e.ok()) {
      std::cerr << "error [estimator]: analysis " << letter(e.kind) << ": " << *e.error << "\n";
      return kEstimation;
    }
  }
  return kOk;
}

int run_simulate(const RunConfig& run, bool bootstrap_given, bool horizon_given) {
  ScenarioConfig scenario = load_scenario(run.input);
  scenario.seed = *run.seed;
  AnalysisConfig config;
  config.model_covariates = scenario.monte_carlo.model_covariates;
  config.horizon_days = horizon_given ? run.horizon_days : scenario.monte_carlo.horizon_days;
  config.n_bootstrap = bootstrap_given ? run.n_bootstrap : scenario.monte_carlo.n_bootstrap;
  config.weights.cap = run.weight_cap;
  const MonteCarloSummary summary =
      monte_carlo_evaluate(scenario, config, scenario.monte_carlo.replicates, run.threads);

  json doc = summary_to_json(summary);
  doc["configuration"]["run"] = run.to_json();
  fs::create_directories(run.out);
  write_file(fs::path(run.out) / "mc_summary.json", doc.dump(2) + "\n");
  std::ostringstream csv;
  csv << comment_line(doc["configuration"]);
  write_summary_csv(csv, summary);
  write_file(fs::path(run.out) / "mc_summary.csv", csv.str());
  std::cout << "scenario " << summary.scenario << ": truth " << summary.truth << ", "
            << summary.n_replicates - summary.n_failed_replicates << "/" << summary.n_replicates
            << " replicates\n";
  write_summary_csv(std::cout, summary);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transport-weighted subgroup analysis of two-arm trials"};
  app.require_subcommand(1);
  RunConfig run;

  auto add_common = [&](CLI::App* sub, bool needs_spec) {
    sub->add_option("--input", run.input, "Input CSV (analyze/balance) or scenario JSON (simulate)")
        ->required()
        ->check(CLI::ExistingFile);
    if (needs_spec) {
      sub->add_option("--spec", run.spec, "Covariate schema JSON")->required()->check(CLI::ExistingFile);
      sub->add_option("--target-column", run.target_column, "Column defining subgroup membership");
      sub->add_option("--target-level", run.target_level,
                      "Value of --target-column marking members (default: boolean column)");
    }
    sub->add_option("--out", run.out, "Output directory");
    sub->add_option("--weight-cap", run.weight_cap, "Upper bound on non-member odds weights")
        ->check(CLI::PositiveNumber);
  };

  auto* analyze = app.add_subcommand("analyze", "Five analyses with percentile bootstrap intervals");
  add_common(analyze, true);
  auto* balance = app.add_subcommand("balance", "Covariate balance before and after odds weighting");
  add_common(balance, true);
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo evaluation of a scenario");
  add_common(simulate, false);

  CLI::Option* bootstrap_opt = nullptr;
  CLI::Option* horizon_opt = nullptr;
  for (auto* sub : {analyze, simulate}) {
    auto* h = sub->add_option("--horizon-days", run.horizon_days, "Survival horizon in days")
                  ->check(CLI::NonNegativeNumber);
    auto* b = sub->add_option("--n-bootstrap", run.n_bootstrap, "Bootstrap iterations")
                  ->check(CLI::PositiveNumber);
    sub->add_option("--seed", run.seed, "Root random seed")->required();
    sub->add_option("--threads", run.threads, "Worker threads")->check(CLI::PositiveNumber);
    if (sub == simulate) {
      bootstrap_opt = b;
      horizon_opt = h;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (analyze->parsed()) {
      run.command = "analyze";
      return run_analyze(run);
    }
    if (balance->parsed()) {
      run.command = "balance";
      return run_balance(run);
    }
    run.command = "simulate";
    return run_simulate(run, bootstrap_opt->count() > 0, horizon_opt->count() > 0);
  } catch (const Error& e) {
    std::cerr << "error [" << e.module() << "]: " << e.what() << "\n"
              << "remediation: " << remediation(e) << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error [cli]: " << e.what() << "\n";
    return kUsage;
  }
}
