#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "gtest/gtest.h"
#include "cropdml/commands.hpp"
#include "cropdml/csv.hpp"
#include "cropdml/io.hpp"
#include "oracles.hpp"

namespace cropdml::app {
namespace {

namespace fs = std::filesystem;
using cropdml::testing::TempDir;

std::string cli_path() {
  if (const char* env = std::getenv("CROPDML_CLI")) return env;
  return CROPDML_CLI_PATH;
}

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run run(const fs::path& dir, const std::string& args) {
  const fs::path out = dir / "stdout.txt";
  const fs::path err = dir / "stderr.txt";
  const std::string cmd =
      "'" + cli_path() + "' " + args + " >'" + out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

void write(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream(path) << text;
}

std::string rect(double x0, double y0, double x1, double y1) {
  const auto n = [](double v) { return csv::format_double(v); };
  return "\"POLYGON ((" + n(x0) + " " + n(y0) + ", " + n(x1) + " " + n(y0) + ", " + n(x1) + " " +
         n(y1) + ", " + n(x0) + " " + n(y1) + ", " + n(x0) + " " + n(y0) + "))\"";
}

// One row of three 500 m cells with origin (0, 1000):
//   cell 0: wheat 0.5 + barley 0.25            -> 2 crops, coverage 0.75
//   cell 1: olive 0.2 (parcel shared with 2)   -> 1 crop,  coverage 0.2
//   cell 2: olive 0.2 + vines 0.16 + wheat 0.16 -> 3 crops, coverage 0.52
void write_three_cell_fixture(const fs::path& dir, bool with_soile = true) {
  write(dir / "parcels.csv",
        "parcel_id,year,crop_code,wkt\n"
        "p1,2020,wheat," + rect(0, 500, 250, 1000) + "\n"
        "p2,2020,barley," + rect(250, 500, 500, 750) + "\n"
        "p3,2020,olive," + rect(900, 500, 1100, 1000) + "\n"
        "p4,2020,vines," + rect(1100, 500, 1500, 600) + "\n"
        "p5,2020,wheat," + rect(1100, 600, 1200, 1000) + "\n");
  std::string env = "cell_id,year";
  for (const auto& name : covariate_names()) {
    if (name != "soile" || with_soile) env += "," + name;
  }
  env += "\n";
  for (int cell = 0; cell < 3; ++cell) {
    env += std::to_string(cell) + ",2020";
    for (std::size_t j = 0; j < covariate_names().size(); ++j) {
      if (covariate_names()[j] == "soile" && !with_soile) continue;
      env += "," + csv::format_double((j + 1.0) * (cell + 1.0) + 0.1 * j * cell * cell);
    }
    env += "\n";
  }
  write(dir / "env.csv", env);
  write(dir / "outcome.csv", "cell_id,year,npp\n0,2020,1.5\n1,2020,2.5\n2,2020,4.0\n");
  write(dir / "run.ini",
        "[paths]\nparcels = parcels.csv\nenv = env.csv\noutcome = outcome.csv\noutput_dir = out\n"
        "[grid]\norigin_x = 0\norigin_y = 1000\ncell_size = 500\nn_cols = 3\nn_rows = 1\n");
}

std::map<std::pair<long long, std::string>, double> read_abundance(const fs::path& path) {
  const auto t = csv::read(path.string());
  std::map<std::pair<long long, std::string>, double> out;
  for (const auto& row : t.rows) {
    out[{t.integer(row, t.column("cell_id")), t.field(row, t.column("crop_code"))}] =
        t.number(row, t.column("abundance"));
  }
  return out;
}

// Model over a dataset's columns with one nonzero slope.
causal::LinearCateModel single_slope_model(const io::DatasetFile& d, const std::string& feature,
                                           double intercept, double slope) {
  causal::LinearCateModel m;
  m.column_names = d.data.x.column_names();
  m.intercept = intercept;
  m.beta.assign(m.column_names.size(), 0.0);
  m.beta[*d.data.x.column_index(feature)] = slope;
  const auto k = static_cast<Eigen::Index>(m.beta.size() + 1);
  m.covariance = Eigen::MatrixXd::Identity(k, k) * 0.04;
  m.scaler = d.scaler;
  m.n_obs = d.data.size();
  return m;
}

TEST(Cli, ParseErrorsAndUnknownKeys) {
  TempDir dir("cli_args");
  EXPECT_EQ(run(dir.path(), "").code, 2);
  EXPECT_EQ(run(dir.path(), "fit --no-such-flag").code, 2);
  EXPECT_EQ(run(dir.path(), "--version").code, 0);
  write(dir.path() / "bad.ini", "[run]\nseed = 1\nsed = 2\n");
  auto r = run(dir.path(), "fit --config '" + (dir.path() / "bad.ini").string() + "'");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("run.sed"), std::string::npos) << r.err;
  write(dir.path() / "bad2.ini", "[forests]\nn_trees = 3\n");
  r = run(dir.path(), "fit --config '" + (dir.path() / "bad2.ini").string() + "'");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("forests"), std::string::npos) << r.err;
  write(dir.path() / "bad3.ini", "[run]\nseed = twelve\n");
  EXPECT_EQ(run(dir.path(), "fit --config '" + (dir.path() / "bad3.ini").string() + "'").code, 2);
}

TEST(Cli, IngestThreeCellFixture) {
  TempDir dir("cli_ingest");
  write_three_cell_fixture(dir.path());
  const auto r = run(dir.path(), "ingest --config '" + (dir.path() / "run.ini").string() + "'");
  ASSERT_EQ(r.code, 0) << r.err;
  const fs::path out = dir.path() / "out";
  const auto d = io::read_dataset(out / "dataset.csv");
  ASSERT_EQ(d.data.size(), 3u);
  EXPECT_EQ(d.cells, (std::vector<CellId>{0, 1, 2}));
  EXPECT_EQ(d.data.t, (std::vector<int>{0, 0, 1}));
  EXPECT_EQ(d.data.y, (std::vector<double>{1.5, 2.5, 4.0}));
  EXPECT_EQ(d.centers[1].x, 750.0);
  EXPECT_EQ(d.centers[1].y, 750.0);

  const auto report = io::read_json(out / "ingest_report.json");
  EXPECT_EQ(report["kept"], 3);
  EXPECT_EQ(report["treated"].get<int>() + report["control"].get<int>(), report["kept"].get<int>());
  EXPECT_EQ(report["median_threshold"], 2.0);
  EXPECT_EQ(report["median_ties"], 1);
  EXPECT_EQ(report["parcels"], 5);

  const auto ab = read_abundance(out / "abundance.csv");
  const std::map<std::pair<long long, std::string>, double> expected{
      {{0, "wheat"}, 0.5},  {{0, "barley"}, 0.25}, {{1, "olive"}, 0.2},
      {{2, "olive"}, 0.2},  {{2, "vines"}, 0.16},  {{2, "wheat"}, 0.16}};
  ASSERT_EQ(ab.size(), expected.size());
  for (const auto& [key, a] : expected) {
    ASSERT_TRUE(ab.count(key)) << key.first << " " << key.second;
    EXPECT_NEAR(ab.at(key), a, 1e-12) << key.first << " " << key.second;
  }
  ASSERT_TRUE(d.coverage.has_value());
  EXPECT_NEAR(d.coverage->at(0), 0.75, 1e-12);
  EXPECT_NEAR(d.coverage->at(1), 0.2, 1e-12);
  EXPECT_NEAR(d.coverage->at(2), 0.52, 1e-12);

  const auto manifest = io::read_json(out / "manifest_ingest.json");
  EXPECT_EQ(manifest["inputs"]["parcels"], sha256_file(dir.path() / "parcels.csv"));
  EXPECT_EQ(manifest["outputs"]["dataset.csv"], sha256_file(out / "dataset.csv"));
}

TEST(Cli, IngestMissingSoilErosibilityIsSchemaError) {
  TempDir dir("cli_soile");
  write_three_cell_fixture(dir.path(), false);
  const auto r = run(dir.path(), "ingest --config '" + (dir.path() / "run.ini").string() + "'");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("soile"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("env.csv"), std::string::npos) << r.err;
}

TEST(Cli, ReportAndInterpretOnFixtureModel) {
  TempDir dir("cli_report");
  write_three_cell_fixture(dir.path());
  const std::string cfg = " --config '" + (dir.path() / "run.ini").string() + "'";
  ASSERT_EQ(run(dir.path(), "ingest" + cfg).code, 0);
  const fs::path out = dir.path() / "out";

  auto r = run(dir.path(), "report" + cfg);
  EXPECT_EQ(r.code, 5) << "report without a model";

  const auto d = io::read_dataset(out / "dataset.csv");
  const auto model = single_slope_model(d, "tmax", 2.0, 1.5);
  io::write_json(out / "model.json", io::model_json(model));

  r = run(dir.path(), "report" + cfg);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto all = csv::read((out / "cate.csv").string());
  ASSERT_EQ(all.rows.size(), 3u);
  const auto expected = causal::cate_standardized(model, d.data.x);
  for (std::size_t k = 0; k < all.rows.size(); ++k) {
    const auto& row = all.rows[k];
    const double theta = all.number(row, all.column("theta"));
    EXPECT_LE(all.number(row, all.column("ci_low")), theta);
    EXPECT_LE(theta, all.number(row, all.column("ci_high")));
    EXPECT_EQ(theta, expected[k].point);
  }

  r = run(dir.path(), "report --agricultural-only" + cfg);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ag = csv::read((out / "cate_agricultural.csv").string());
  std::set<long long> cells;
  for (const auto& row : ag.rows) cells.insert(ag.integer(row, 0));
  EXPECT_EQ(cells, (std::set<long long>{0, 2}));
  const auto summary = io::read_json(out / "report_summary_agricultural.json");
  EXPECT_EQ(summary["cells"], 2);

  write(dir.path() / "depth0.ini", read_file(dir.path() / "run.ini") + "[interpret]\nmax_depth = 0\n");
  r = run(dir.path(), "interpret --config '" + (dir.path() / "depth0.ini").string() + "'");
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string tree = read_file(out / "tree.txt");
  EXPECT_EQ(std::count(tree.begin(), tree.end(), '\n'), 1) << tree;
  EXPECT_EQ(tree.rfind("leaf 0: n=3 ", 0), 0u) << tree;
  std::size_t curves = 0;
  for (const auto& entry : fs::directory_iterator(out / "curves")) {
    ++curves;
    const std::string text = read_file(entry.path());
    EXPECT_EQ(text.rfind("feature,bin_center,mean_effect,ci_low,ci_high,n\n", 0), 0u);
  }
  EXPECT_EQ(curves, 9u);
  EXPECT_TRUE(fs::exists(out / "curves" / "tmax.csv"));
  EXPECT_TRUE(fs::exists(out / "curves" / "soilm.csv"));
}

// Shared synthetic run: emit a dataset with a strong constant effect and fit it.
class SyntheticPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("cli_pipeline");
    write(root() / "sim.ini",
          "; strong constant effect, small learners\n"
          "[paths]\noutput_dir = sim\ndataset = sim/dataset.csv\n"
          "[run]\nseed = 7\n"
          "[forest]\nn_trees = 15\nmax_depth = 8\n"
          "[boosting]\nn_rounds = 40\n"
          "[simulate]\nn = 600\np = 9\ntheta = constant\ntheta_intercept = 10\nnoise_sd = 1\n");
    const auto e = run(root(), "simulate --emit-dataset" + config());
    ASSERT_EQ(e.code, 0) << e.err;
    const auto f = run(root(), "fit" + config());
    ASSERT_EQ(f.code, 0) << f.err;
    fit_stdout_ = new std::string(f.out);
  }
  static void TearDownTestSuite() {
    delete dir_;
    delete fit_stdout_;
  }

  static const fs::path& root() { return dir_->path(); }
  static fs::path sim() { return root() / "sim"; }
  static std::string config() { return " --config '" + (root() / "sim.ini").string() + "'"; }

  static TempDir* dir_;
  static std::string* fit_stdout_;
};

TempDir* SyntheticPipeline::dir_ = nullptr;
std::string* SyntheticPipeline::fit_stdout_ = nullptr;

TEST_F(SyntheticPipeline, FitRecoversConstantEffect) {
  const auto report = io::read_json(sim() / "fit_report.json");
  const double ate = report["ate"]["point"];
  const double se = report["ate"]["std_error"];
  EXPECT_LE(std::abs(ate - 10.0), 4.0 * se) << ate << " +- " << se;
  EXPECT_LE(report["final_stage"]["normal_equation_residual"].get<double>(), 1e-6);
  const auto& trim = report["trim"];
  EXPECT_EQ(trim["kept_treated"].get<int>() + trim["kept_control"].get<int>(),
            trim["kept_total"].get<int>());
  EXPECT_EQ(trim["kept_total"].get<int>() + trim["removed_total"].get<int>(), 600);
  const auto prop = csv::read((sim() / "propensity.csv").string());
  for (const auto& row : prop.rows) {
    const double p = prop.number(row, 1);
    EXPECT_EQ(prop.integer(row, 3) == 1, 0.2 <= p && p <= 0.8);
  }
  EXPECT_NE(fit_stdout_->find("first-stage model selection"), std::string::npos);
  EXPECT_EQ(report["selection"]["rows"].size(), 4u);
  const auto manifest = io::read_json(sim() / "manifest_fit.json");
  EXPECT_EQ(manifest["seed"], 7);
  EXPECT_EQ(manifest["kept"], trim["kept_total"]);
  EXPECT_EQ(manifest["inputs"]["dataset"], sha256_file(sim() / "dataset.csv"));
}

TEST_F(SyntheticPipeline, FitIsByteIdenticalOnRerun) {
  const auto r = run(root(), "fit --threads 3 --output-dir '" + (root() / "again").string() + "'" + config());
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* name : {"selection.txt", "model.json", "propensity.csv", "residuals.csv",
                           "fit_report.json", "manifest_fit.json"}) {
    EXPECT_EQ(read_file(sim() / name), read_file(root() / "again" / name)) << name;
  }
}

TEST_F(SyntheticPipeline, FullTrimBoundsKeepEveryRow) {
  const auto r = run(root(), "fit --trim-lo 0 --trim-hi 1 --output-dir '" +
                                 (root() / "notrim").string() + "'" + config());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = io::read_json(root() / "notrim" / "fit_report.json");
  EXPECT_EQ(report["trim"]["kept_total"], 600);
  EXPECT_EQ(report["trim"]["removed_total"], 0);
}

TEST_F(SyntheticPipeline, ReportIntervalsAndStrongSignalShare) {
  const auto r = run(root(), "report" + config());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto cate = csv::read((sim() / "cate.csv").string());
  ASSERT_EQ(cate.rows.size(), 600u);
  for (const auto& row : cate.rows) {
    const double theta = cate.number(row, cate.column("theta"));
    EXPECT_LE(cate.number(row, cate.column("ci_low")), theta);
    EXPECT_LE(theta, cate.number(row, cate.column("ci_high")));
  }
  const auto summary = io::read_json(sim() / "report_summary.json");
  EXPECT_GE(summary["share_significant"].get<double>(), 0.9);
  // No coverage file for synthetic datasets.
  EXPECT_EQ(run(root(), "report --agricultural-only" + config()).code, 5);
}

TEST_F(SyntheticPipeline, InterpretDeepTreeAndCurves) {
  const fs::path out = root() / "deep";
  fs::create_directories(out);
  fs::copy_file(sim() / "model.json", out / "model.json");
  fs::copy_file(sim() / "propensity.csv", out / "propensity.csv");
  write(root() / "deep.ini", read_file(root() / "sim.ini") + "[interpret]\nmax_depth = 9\nmin_leaf_size = 1\n");
  const auto r = run(root(), "interpret --output-dir '" + out.string() + "' --config '" +
                                 (root() / "deep.ini").string() + "'");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto kept = io::read_json(sim() / "fit_report.json")["trim"]["kept_total"].get<std::size_t>();
  const auto outline = interpret::parse_outline(read_file(out / "tree.txt"));
  ASSERT_GT(outline.size(), 1u);
  EXPECT_EQ(outline[0].n, kept);
  std::size_t leaf_total = 0;
  for (const auto& node : outline) {
    if (node.feature.empty()) leaf_total += node.n;
  }
  EXPECT_EQ(leaf_total, kept);
  const auto tree = io::read_json(out / "tree.json");
  EXPECT_EQ(tree["max_depth"], 9);
  for (const auto& name : covariate_names()) {
    const auto curve = csv::read((out / "curves" / (name + ".csv")).string());
    EXPECT_EQ(curve.rows.size(), 20u) << name;
    std::size_t n = 0;
    for (const auto& row : curve.rows) n += static_cast<std::size_t>(curve.integer(row, 5));
    EXPECT_EQ(n, kept) << name;
  }
}

TEST_F(SyntheticPipeline, SingleSlopeModelGivesAffineCurve) {
  const fs::path out = root() / "linear";
  const auto d = io::read_dataset(sim() / "dataset.csv");
  const auto model = single_slope_model(d, "tmax", -1.0, 0.75);
  fs::create_directories(out);
  io::write_json(out / "model.json", io::model_json(model));
  const auto r = run(root(), "interpret --output-dir '" + out.string() + "'" + config());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto curve = csv::read((out / "curves" / "tmax.csv").string());
  const auto col = d.data.x.column(*d.data.x.column_index("tmax"));
  const auto [lo, hi] = std::minmax_element(col.begin(), col.end());
  const double half = 0.5 * (*hi - *lo) / 20.0;
  double prev = -1e300;
  for (const auto& row : curve.rows) {
    if (curve.integer(row, 5) == 0) continue;
    const double center = curve.number(row, 1);
    const double effect = curve.number(row, 2);
    EXPECT_LE(std::abs(effect - (-1.0 + 0.75 * center)), 0.75 * half + 1e-12);
    EXPECT_GT(effect, prev);
    prev = effect;
  }
}

TEST(Cli, FitWithoutOverlapExitsThree) {
  TempDir dir("cli_overlap");
  write(dir.path() / "sep.ini",
        "[paths]\noutput_dir = out\n[forest]\nn_trees = 5\n[boosting]\nn_rounds = 20\n"
        "[simulate]\nn = 300\nf_form = x1\nf_scale = 60\n");
  const std::string cfg = " --config '" + (dir.path() / "sep.ini").string() + "'";
  ASSERT_EQ(run(dir.path(), "simulate --emit-dataset" + cfg).code, 0);
  const auto r = run(dir.path(), "fit" + cfg);
  EXPECT_EQ(r.code, 3) << r.err;
}

TEST(Cli, SimulateIsReproducibleAndSingleRepIdentity) {
  TempDir dir("cli_sim");
  write(dir.path() / "mc.ini",
        "[run]\nseed = 3\n[forest]\nn_trees = 5\n[boosting]\nn_rounds = 20\n"
        "[simulate]\nn = 300\nreps = 3\ntheta = linear\ntheta_intercept = 1\ntheta_slopes = 1, 0, 0.5\n");
  const std::string cfg = " --config '" + (dir.path() / "mc.ini").string() + "'";
  const auto a = run(dir.path(), "simulate --threads 1 --output-dir '" + (dir.path() / "a").string() + "'" + cfg);
  const auto b = run(dir.path(), "simulate --threads 3 --output-dir '" + (dir.path() / "b").string() + "'" + cfg);
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  for (const char* name : {"mc_report.json", "mc_reps.csv", "manifest_simulate.json"}) {
    EXPECT_EQ(read_file(dir.path() / "a" / name), read_file(dir.path() / "b" / name)) << name;
  }
  const auto report = io::read_json(dir.path() / "a" / "mc_report.json");
  EXPECT_EQ(report["reps"], 3);
  EXPECT_EQ(report["beta_bias"].size(), 5u);
  EXPECT_GE(report["rmse"].get<double>(), std::abs(report["bias"].get<double>()));

  const auto one = run(dir.path(), "simulate --reps 1 --output-dir '" + (dir.path() / "one").string() + "'" + cfg);
  ASSERT_EQ(one.code, 0) << one.err;
  const auto single = io::read_json(dir.path() / "one" / "mc_report.json");
  EXPECT_EQ(single["reps"], 1);
  EXPECT_EQ(single["rmse"].get<double>(), std::abs(single["bias"].get<double>()));
}

}  // namespace
}  // namespace cropdml::app
