// Command-line entry point: ingest -> fit -> report -> interpret, plus
// simulate for synthetic validation runs.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "cropdml/commands.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<int> folds;
  std::optional<double> trim_lo;
  std::optional<double> trim_hi;
  std::string output_dir;
  std::optional<std::size_t> reps;
};

cropdml::RunConfig resolve(const Overrides& o) {
  cropdml::RunConfig cfg;
  if (!o.config.empty()) cfg = cropdml::load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.threads) cfg.threads = *o.threads;
  if (o.folds) cfg.folds = *o.folds;
  if (o.trim_lo) cfg.trim_lo = *o.trim_lo;
  if (o.trim_hi) cfg.trim_hi = *o.trim_hi;
  if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;
  if (o.reps) cfg.simulate.reps = *o.reps;
  return cfg;
}

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "INI run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--threads", o.threads, "worker threads (0: all cores)");
  cmd->add_option("--output-dir", o.output_dir, "output directory");
}

void add_estimator(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--folds", o.folds, "cross-fitting folds");
  cmd->add_option("--trim-lo", o.trim_lo, "lowest retained propensity score");
  cmd->add_option("--trim-hi", o.trim_hi, "highest retained propensity score");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Heterogeneous treatment effects of crop diversification with double machine learning"};
  app.set_version_flag("--version", cropdml::app::kVersion);
  app.require_subcommand(1);
  Overrides o;
  bool agricultural_only = false;
  bool emit_dataset = false;

  auto* ingest = app.add_subcommand("ingest", "build the per-cell dataset from parcels, env and outcome files");
  add_common(ingest, o);
  auto* fit = app.add_subcommand("fit", "selection diagnostic, propensity trimming, cross-fitting and final stage");
  add_common(fit, o);
  add_estimator(fit, o);
  auto* report = app.add_subcommand("report", "per-cell CATE table and ATE summary");
  add_common(report, o);
  report->add_flag("--agricultural-only", agricultural_only,
                   "restrict to cells meeting the agricultural coverage threshold");
  auto* interp = app.add_subcommand("interpret", "interpreter tree and binned effect curves");
  add_common(interp, o);
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo validation on a synthetic process");
  add_common(simulate, o);
  add_estimator(simulate, o);
  simulate->add_option("--reps", o.reps, "Monte Carlo replications");
  simulate->add_flag("--emit-dataset", emit_dataset,
                     "write one synthetic dataset in the ingest schema instead of running reps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : cropdml::exit_code(cropdml::ErrorCode::kInvalidArgument);
  }

  try {
    const cropdml::RunConfig cfg = resolve(o);
    std::string summary;
    if (*ingest) summary = cropdml::app::run_ingest(cfg);
    if (*fit) summary = cropdml::app::run_fit(cfg);
    if (*report) summary = cropdml::app::run_report(cfg, agricultural_only);
    if (*interp) summary = cropdml::app::run_interpret(cfg);
    if (*simulate) summary = cropdml::app::run_simulate(cfg, emit_dataset);
    std::cout << summary;
    return 0;
  } catch (const cropdml::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cropdml::exit_code(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: io: " << e.what() << "\n";
    return cropdml::exit_code(cropdml::ErrorCode::kIo);
  }
}
