#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cropdml/causal.hpp"
#include "cropdml/config.hpp"
#include "cropdml/geoingest.hpp"
#include "cropdml/interpret.hpp"
#include "cropdml/io.hpp"
#include "cropdml/selection.hpp"
#include "cropdml/synth.hpp"

namespace cropdml::app {

namespace fs = std::filesystem;
using io::Json;

inline constexpr const char* kVersion = "0.1.0";

// Records how an output set was produced: settings hash, seed and digests
// of every input and output file. Thread count is deliberately absent.
inline void write_manifest(const RunConfig& cfg, const std::string& command,
                           const std::vector<std::pair<std::string, fs::path>>& inputs,
                           const std::vector<fs::path>& outputs, Json extra = Json::object()) {
  Json m;
  m["tool"] = "cropdml";
  m["version"] = kVersion;
  m["command"] = command;
  m["seed"] = cfg.seed;
  m["config_hash"] = cfg.hash();
  Json in = Json::object();
  for (const auto& [name, path] : inputs) in[name] = sha256_file(path);
  m["inputs"] = std::move(in);
  Json out = Json::object();
  for (const auto& path : outputs) out[path.filename().string()] = sha256_file(path);
  m["outputs"] = std::move(out);
  for (auto& [k, v] : extra.items()) m[k] = v;
  io::write_json(cfg.output_dir / ("manifest_" + command + ".json"), m);
}

inline std::string num(double v) { return csv::format_double(v); }

// ---------------------------------------------------------------------------

inline std::string run_ingest(const RunConfig& cfg) {
  cfg.validate();
  cfg.grid.validate();
  require(!cfg.parcels.empty() && !cfg.env.empty() && !cfg.outcome.empty(),
          ErrorCode::kInvalidArgument, "ingest needs paths.parcels, paths.env and paths.outcome");
  const auto parcels = load_parcels(csv::read(cfg.parcels.string()));
  const auto env = load_env(csv::read(cfg.env.string()));
  const auto outcome = load_outcome(csv::read(cfg.outcome.string()));
  const auto abundance = compute_abundance(parcels, cfg.grid, cfg.threads);
  AssembleOptions options;
  options.years = cfg.years;
  options.max_missing_year_fraction = cfg.max_missing_year_fraction;
  const auto assembled = assemble_dataset(abundance, env, outcome, cfg.grid, options);

  io::DatasetFile d;
  d.data = assembled.data;
  d.scaler = assembled.scaler;
  d.cells = assembled.cells;
  d.centers = assembled.centers;
  std::map<CellId, double> coverage;
  for (std::size_t i = 0; i < assembled.cells.size(); ++i) {
    coverage[assembled.cells[i]] = assembled.coverage[i];
  }
  d.coverage = std::move(coverage);
  const fs::path dataset = cfg.dataset_path();
  io::write_dataset(dataset, d);

  std::string ab = "cell_id,year,crop_code,abundance\n";
  for (const auto& [key, crops] : abundance.entries()) {
    for (const auto& [crop, a] : crops) {
      ab += std::to_string(key.cell) + "," + std::to_string(key.year) + "," + csv::quote(crop) +
            "," + num(a) + "\n";
    }
  }
  const fs::path abundance_path = cfg.output_dir / "abundance.csv";
  io::write_file(abundance_path, ab);

  const auto& r = assembled.report;
  Json report;
  report["parcels"] = parcels.size();
  report["cells_with_parcels"] = abundance.cells().size();
  report["years"] = r.years;
  report["cells_considered"] = r.cells_considered;
  report["kept"] = r.kept;
  report["dropped"] = {{"outside_grid", r.dropped_outside_grid},
                       {"missing_env", r.dropped_missing_env},
                       {"missing_outcome", r.dropped_missing_outcome},
                       {"missing_parcels", r.dropped_missing_parcels}};
  report["treated"] = r.treated;
  report["control"] = r.control;
  report["median_threshold"] = r.median_threshold;
  report["median_ties"] = r.median_ties;
  report["zero_variance_columns"] = r.zero_variance_columns;
  const fs::path report_path = cfg.output_dir / "ingest_report.json";
  io::write_json(report_path, report);

  write_manifest(cfg, "ingest",
                 {{"parcels", cfg.parcels}, {"env", cfg.env}, {"outcome", cfg.outcome}},
                 {dataset, io::scaler_path(dataset), io::coverage_path(dataset), abundance_path,
                  report_path});

  return "ingest: " + std::to_string(r.kept) + " cells kept of " +
         std::to_string(r.cells_considered) + " (treated " + std::to_string(r.treated) +
         ", control " + std::to_string(r.control) + ", median diversification " +
         num(r.median_threshold) + ")\n";
}

// ---------------------------------------------------------------------------

inline Json selection_json(const causal::SelectionReport& s) {
  Json rows = Json::array();
  for (const auto& r : s.rows) {
    rows.push_back({{"task", r.task},
                    {"metric", r.metric},
                    {"model", r.label},
                    {"train", r.train},
                    {"test", r.test},
                    {"gap", r.gap()},
                    {"selected", r.selected}});
  }
  return {{"n_train", s.n_train}, {"n_test", s.n_test}, {"folds", s.folds}, {"rows", rows}};
}

inline Json trim_json(const causal::TrimReport& t) {
  return {{"lo", t.lo},
          {"hi", t.hi},
          {"input_total", t.input_total},
          {"kept_total", t.kept_total},
          {"kept_treated", t.kept_treated},
          {"kept_control", t.kept_control},
          {"removed_total", t.removed_total()},
          {"removed_treated", t.removed_treated},
          {"removed_control", t.removed_control}};
}

inline std::string run_fit(const RunConfig& cfg) {
  cfg.validate();
  const fs::path dataset = cfg.dataset_path();
  const io::DatasetFile d = io::read_dataset(dataset);

  const auto selection = causal::first_stage_selection(
      d.data, causal::default_outcome_contenders(cfg.forest),
      causal::default_treatment_contenders(cfg.forest, cfg.boosting), cfg.selection_test_fraction,
      cfg.folds, derive_seed(cfg.seed, 11), cfg.threads);
  const std::string table = selection.table();
  const fs::path selection_path = cfg.output_dir / "selection.txt";
  io::write_file(selection_path, table);

  const auto dml = causal::run_dml(d.data, d.scaler, cfg.dml_config(), cfg.seed);
  const fs::path model_path = cfg.output_dir / "model.json";
  io::write_json(model_path, io::model_json(dml.model));

  std::set<std::size_t> kept(dml.trimmed.report.kept_indices.begin(),
                             dml.trimmed.report.kept_indices.end());
  std::string prop = "cell_id,propensity,treated,kept\n";
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    prop += std::to_string(d.cells[i]) + "," + num(dml.propensity.scores[i]) + "," +
            std::to_string(d.data.t[i]) + "," + (kept.count(i) ? "1" : "0") + "\n";
  }
  const fs::path propensity_path = cfg.output_dir / "propensity.csv";
  io::write_file(propensity_path, prop);

  std::string res = "cell_id,fold,y_hat,t_hat,y_res,t_res\n";
  const auto& rs = dml.residuals;
  for (std::size_t k = 0; k < rs.size(); ++k) {
    const std::size_t i = dml.trimmed.report.kept_indices[k];
    res += std::to_string(d.cells[i]) + "," + std::to_string(rs.fold_id[k]) + "," +
           num(rs.y_hat[k]) + "," + num(rs.t_hat[k]) + "," + num(rs.y_res[k]) + "," +
           num(rs.t_res[k]) + "\n";
  }
  const fs::path residuals_path = cfg.output_dir / "residuals.csv";
  io::write_file(residuals_path, res);

  const double orth = causal::normal_equation_residual(dml.model, dml.residuals, dml.trimmed.data.x);
  Json beta = Json::array();
  for (std::size_t j = 0; j < dml.model.dim(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j + 1);
    const double se = std::sqrt(std::max(0.0, dml.model.covariance(jj, jj)));
    beta.push_back({{"feature", dml.model.column_names[j]},
                    {"estimate", dml.model.beta[j]},
                    {"std_error", se}});
  }
  Json report;
  report["selection"] = selection_json(selection);
  report["trim"] = trim_json(dml.trimmed.report);
  report["ate"] = io::estimate_json(dml.ate.estimate);
  report["ate"]["mean_outcome"] = dml.ate.mean_outcome;
  report["ate"]["percent_of_mean_outcome"] = dml.ate.percent_of_mean_outcome;
  report["ate"]["n"] = dml.ate.n;
  report["final_stage"] = {{"intercept", dml.model.intercept},
                           {"intercept_std_error", std::sqrt(std::max(0.0, dml.model.covariance(0, 0)))},
                           {"beta", beta},
                           {"normal_equation_residual", orth},
                           {"y_residual_norm", causal::euclidean_norm(dml.residuals.y_res)}};
  const fs::path report_path = cfg.output_dir / "fit_report.json";
  io::write_json(report_path, report);

  const auto& t = dml.trimmed.report;
  write_manifest(cfg, "fit", {{"dataset", dataset}, {"scaler", io::scaler_path(dataset)}},
                 {selection_path, model_path, propensity_path, residuals_path, report_path},
                 {{"kept", t.kept_total},
                  {"removed", t.removed_total()},
                  {"kept_treated", t.kept_treated},
                  {"kept_control", t.kept_control}});

  const auto& a = dml.ate.estimate;
  return table + "trim [" + num(t.lo) + ", " + num(t.hi) + "]: kept " +
         std::to_string(t.kept_total) + " (treated " + std::to_string(t.kept_treated) +
         ", control " + std::to_string(t.kept_control) + "), removed " +
         std::to_string(t.removed_total()) + "\nATE " + num(a.point) + " (95% CI " +
         num(a.ci_low) + ", " + num(a.ci_high) + "; p " + num(a.p_value) + "), " +
         num(dml.ate.percent_of_mean_outcome) + "% of mean outcome\n";
}

// ---------------------------------------------------------------------------

inline causal::LinearCateModel load_model(const RunConfig& cfg) {
  const fs::path path = cfg.output_dir / "model.json";
  require(fs::exists(path), ErrorCode::kIo, "model file missing; run fit first",
          {{"file", path.string()}});
  auto model = io::model_from_json(io::read_json(path), path);
  return model;
}

struct PropensityFile {
  std::map<std::string, double> score;
  std::map<std::string, bool> kept;
};

inline std::optional<PropensityFile> load_propensity(const RunConfig& cfg) {
  const fs::path path = cfg.output_dir / "propensity.csv";
  if (!fs::exists(path)) return std::nullopt;
  const auto table = csv::read(path.string());
  const auto c_cell = table.column("cell_id");
  const auto c_p = table.column("propensity");
  const auto c_kept = table.column("kept");
  PropensityFile out;
  for (const auto& row : table.rows) {
    const std::string id = table.field(row, c_cell);
    out.score[id] = table.number(row, c_p);
    out.kept[id] = table.integer(row, c_kept) == 1;
  }
  return out;
}

inline void check_model_matches(const causal::LinearCateModel& model, const io::DatasetFile& d) {
  require(model.column_names == d.data.x.column_names(), ErrorCode::kSchema,
          "model columns differ from dataset columns");
}

inline std::string run_report(const RunConfig& cfg, bool agricultural_only) {
  cfg.validate();
  const auto model = load_model(cfg);
  const fs::path dataset = cfg.dataset_path();
  const io::DatasetFile d = io::read_dataset(dataset);
  check_model_matches(model, d);
  const auto propensity = load_propensity(cfg);

  std::vector<std::size_t> rows;
  if (agricultural_only) {
    require(d.coverage.has_value(), ErrorCode::kIo,
            "agricultural mask needs the dataset coverage file",
            {{"file", io::coverage_path(dataset).string()}});
    const auto mask = agricultural_mask(*d.coverage, cfg.mask_threshold);
    for (std::size_t i = 0; i < d.data.size(); ++i) {
      if (mask.count(d.cells[i])) rows.push_back(i);
    }
  } else {
    rows.resize(d.data.size());
    std::iota(rows.begin(), rows.end(), 0);
  }
  require(!rows.empty(), ErrorCode::kInvalidArgument, "no cells to report");

  const LabeledDataset subset = d.data.subset(rows);
  const auto effects = causal::cate_standardized(model, subset.x);
  std::string out =
      "cell_id,x_center,y_center,theta,std_error,ci_low,ci_high,p_value,treated,propensity\n";
  std::size_t significant = 0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t i = rows[k];
    const auto& e = effects[k];
    if (e.p_value < 0.05) ++significant;
    const std::string id = std::to_string(d.cells[i]);
    std::string p;
    if (propensity && propensity->score.count(id)) p = num(propensity->score.at(id));
    out += id + "," + num(d.centers[i].x) + "," + num(d.centers[i].y) + "," + num(e.point) + "," +
           num(e.std_error) + "," + num(e.ci_low) + "," + num(e.ci_high) + "," + num(e.p_value) +
           "," + std::to_string(d.data.t[i]) + "," + p + "\n";
  }
  const std::string suffix = agricultural_only ? "_agricultural" : "";
  const fs::path cate_path = cfg.output_dir / ("cate" + suffix + ".csv");
  io::write_file(cate_path, out);

  const auto summary = causal::summarize_ate(model, subset.x, subset.y);
  const double share = static_cast<double>(significant) / static_cast<double>(rows.size());
  Json s;
  s["cells"] = rows.size();
  s["agricultural_only"] = agricultural_only;
  if (agricultural_only) s["mask_threshold"] = cfg.mask_threshold;
  s["ate"] = io::estimate_json(summary.estimate);
  s["mean_outcome"] = summary.mean_outcome;
  s["percent_of_mean_outcome"] = summary.percent_of_mean_outcome;
  s["significant_cells"] = significant;
  s["share_significant"] = share;
  const fs::path summary_path = cfg.output_dir / ("report_summary" + suffix + ".json");
  io::write_json(summary_path, s);

  std::vector<std::pair<std::string, fs::path>> inputs{{"dataset", dataset},
                                                       {"model", cfg.output_dir / "model.json"}};
  if (agricultural_only) inputs.emplace_back("coverage", io::coverage_path(dataset));
  write_manifest(cfg, "report" + suffix, inputs, {cate_path, summary_path});

  return "report: " + std::to_string(rows.size()) + " cells, ATE " + num(summary.estimate.point) +
         " (95% CI " + num(summary.estimate.ci_low) + ", " + num(summary.estimate.ci_high) +
         "), share with p < 0.05: " + num(share) + "\n";
}

// ---------------------------------------------------------------------------

inline std::string run_interpret(const RunConfig& cfg) {
  cfg.validate();
  const auto model = load_model(cfg);
  const fs::path dataset = cfg.dataset_path();
  const io::DatasetFile d = io::read_dataset(dataset);
  check_model_matches(model, d);
  const auto propensity = load_propensity(cfg);

  // Analysis population: the rows retained by trimming when fit outputs are
  // present, otherwise every row.
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    const std::string id = std::to_string(d.cells[i]);
    if (!propensity || (propensity->kept.count(id) && propensity->kept.at(id))) rows.push_back(i);
  }
  require(!rows.empty(), ErrorCode::kInvalidArgument, "no rows to interpret");
  const FeatureMatrix z = d.data.x.select_rows(rows);
  const FeatureMatrix raw = model.scaler.inverse(z);
  const auto effects = causal::cate_standardized(model, z);
  std::vector<double> points;
  points.reserve(effects.size());
  for (const auto& e : effects) points.push_back(e.point);

  const auto tree = interpret::fit_interpreter(raw, points, cfg.interpret.max_depth,
                                               cfg.interpret.min_leaf_size);
  const fs::path text_path = cfg.output_dir / "tree.txt";
  const fs::path json_path = cfg.output_dir / "tree.json";
  io::write_file(text_path, interpret::render_text(tree));
  io::write_json(json_path, interpret::to_json(tree));
  std::vector<fs::path> outputs{text_path, json_path};
  for (const auto& feature : z.column_names()) {
    const auto curve = interpret::effect_curve(z, effects, feature, cfg.interpret.n_bins);
    const fs::path path = cfg.output_dir / "curves" / (feature + ".csv");
    io::write_file(path, interpret::curve_csv(curve));
    outputs.push_back(path);
  }
  write_manifest(cfg, "interpret", {{"dataset", dataset}, {"model", cfg.output_dir / "model.json"}},
                 outputs, {{"rows", rows.size()}});
  return "interpret: tree over " + std::to_string(rows.size()) + " rows with " +
         std::to_string(tree.tree.leaf_count()) + " leaves; " + std::to_string(z.cols()) +
         " effect curves\n";
}

// ---------------------------------------------------------------------------

inline Json dgp_json(const synth::DgpSpec& s) {
  std::string theta;
  switch (s.theta.kind) {
    case synth::ThetaForm::Kind::kConstant: theta = "constant"; break;
    case synth::ThetaForm::Kind::kLinear: theta = "linear"; break;
    case synth::ThetaForm::Kind::kNonlinear: theta = s.theta.name; break;
  }
  return {{"n", s.n},           {"p", s.p},
          {"theta", theta},     {"theta_intercept", s.theta.intercept},
          {"theta_slopes", s.theta.slopes}, {"g_form", s.g_form},
          {"f_form", s.f_form}, {"f_scale", s.f_scale},
          {"noise_sd", s.noise_sd}};
}

inline std::string emit_dataset(const RunConfig& cfg) {
  const synth::DgpSpec spec = cfg.dgp_spec();
  const auto sample = synth::generate(spec);
  io::DatasetFile d;
  d.data = sample.data;
  d.scaler = sample.scaler;
  const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(spec.n))));
  constexpr double kCell = 500.0;
  std::string truth = "cell_id,theta,propensity\n";
  for (std::size_t i = 0; i < spec.n; ++i) {
    d.cells.push_back(static_cast<CellId>(i));
    d.centers.push_back({(static_cast<double>(i % side) + 0.5) * kCell,
                         -(static_cast<double>(i / side) + 0.5) * kCell});
    truth += std::to_string(i) + "," + num(sample.theta[i]) + "," + num(sample.propensity[i]) + "\n";
  }
  const fs::path dataset = cfg.dataset_path();
  io::write_dataset(dataset, d);
  const fs::path truth_path = cfg.output_dir / "truth.csv";
  io::write_file(truth_path, truth);
  Json extra;
  extra["dgp"] = dgp_json(spec);
  write_manifest(cfg, "simulate_dataset", {}, {dataset, io::scaler_path(dataset), truth_path}, extra);
  return "simulate: wrote " + std::to_string(spec.n) + "-row dataset to " + dataset.string() + "\n";
}

inline std::string run_simulate(const RunConfig& cfg, bool emit) {
  cfg.validate();
  if (emit) return emit_dataset(cfg);
  const synth::DgpSpec spec = cfg.dgp_spec();
  const auto mc = synth::monte_carlo(spec, cfg.dml_config(), cfg.simulate.reps, cfg.seed, cfg.threads);

  std::string reps =
      "rep,seed,ok,ate,std_error,ci_low,ci_high,true_ate,covered,naive,kept,removed,error\n";
  for (const auto& r : mc.per_rep) {
    reps += std::to_string(r.rep) + "," + std::to_string(r.seed) + "," + (r.ok ? "1" : "0") + ",";
    if (r.ok) {
      reps += num(r.ate.point) + "," + num(r.ate.std_error) + "," + num(r.ate.ci_low) + "," +
              num(r.ate.ci_high) + "," + num(r.true_ate) + "," + (r.covered ? "1" : "0") + "," +
              num(r.naive) + "," + std::to_string(r.kept) + "," + std::to_string(r.removed) + ",";
    } else {
      reps += ",,,,,,,,," + csv::quote(r.error);
    }
    reps += "\n";
  }
  const fs::path reps_path = cfg.output_dir / "mc_reps.csv";
  io::write_file(reps_path, reps);

  Json j;
  j["dgp"] = dgp_json(spec);
  j["reps"] = mc.reps;
  j["failures"] = mc.failures;
  j["bias"] = mc.bias;
  j["rmse"] = mc.rmse;
  j["mae"] = mc.mae;
  j["coverage"] = mc.coverage;
  j["mean_ci_width"] = mc.mean_ci_width;
  j["naive_bias"] = mc.naive_bias;
  j["naive_mae"] = mc.naive_mae;
  j["beta_bias"] = mc.beta_bias;
  const fs::path report_path = cfg.output_dir / "mc_report.json";
  io::write_json(report_path, j);
  write_manifest(cfg, "simulate", {}, {report_path, reps_path});

  return "simulate: " + std::to_string(mc.reps) + " reps (" + std::to_string(mc.failures) +
         " failed), bias " + num(mc.bias) + ", RMSE " + num(mc.rmse) + ", coverage " +
         num(mc.coverage) + "\n";
}

}  // namespace cropdml::app
