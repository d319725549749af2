#pragma once

#include <openssl/evp.h>

#include <array>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "cropdml/causal.hpp"
#include "cropdml/csv.hpp"
#include "cropdml/error.hpp"
#include "cropdml/geoingest.hpp"
#include "cropdml/learners/boosting.hpp"
#include "cropdml/learners/forest.hpp"
#include "cropdml/synth.hpp"

namespace cropdml {

inline std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  require(EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr) == 1,
          ErrorCode::kIo, "SHA-256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[md[i] >> 4];
    out += kHex[md[i] & 0xf];
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open file", {{"file", path.string()}});
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

struct SimulateSettings {
  std::size_t n = 2000;
  std::size_t p = 5;
  std::size_t reps = 200;
  std::string theta = "constant";  // constant | linear | step | sine
  double theta_intercept = 0.0;
  std::vector<double> theta_slopes;
  std::string g_form = "default";
  std::string f_form = "default";
  double f_scale = 1.0;
  double noise_sd = 1.0;
};

struct InterpretSettings {
  int max_depth = 3;
  int min_leaf_size = 0;  // 0: 5% of rows
  int n_bins = 20;
};

struct RunConfig {
  std::filesystem::path parcels;
  std::filesystem::path env;
  std::filesystem::path outcome;
  std::filesystem::path output_dir = "out";
  std::optional<std::filesystem::path> dataset;  // default: output_dir/dataset.csv

  GridSpec grid;
  std::vector<int> years;  // empty: every year present in the inputs
  double max_missing_year_fraction = 0.0;

  std::uint64_t seed = 0;
  int folds = 3;
  int threads = 1;
  double trim_lo = 0.2;
  double trim_hi = 0.8;
  double selection_test_fraction = 0.2;

  learners::ForestParams forest;
  learners::BoostParams boosting;
  InterpretSettings interpret;
  double mask_threshold = 0.5;
  SimulateSettings simulate;

  std::filesystem::path dataset_path() const {
    return dataset ? *dataset : output_dir / "dataset.csv";
  }

  void validate() const {
    require(folds >= 2, ErrorCode::kInvalidArgument, "folds must be >= 2");
    require(threads >= 0, ErrorCode::kInvalidArgument, "threads must be >= 0");
    require(0.0 <= trim_lo && trim_lo <= trim_hi && trim_hi <= 1.0, ErrorCode::kInvalidArgument,
            "trim bounds must satisfy 0 <= lo <= hi <= 1");
    require(selection_test_fraction > 0.0 && selection_test_fraction < 1.0,
            ErrorCode::kInvalidArgument, "selection test_fraction must be in (0, 1)");
    require(mask_threshold >= 0.0 && mask_threshold <= 1.0, ErrorCode::kInvalidArgument,
            "mask threshold must be in [0, 1]");
    require(max_missing_year_fraction >= 0.0 && max_missing_year_fraction <= 1.0,
            ErrorCode::kInvalidArgument, "max_missing_year_fraction must be in [0, 1]");
    require(interpret.max_depth >= 0, ErrorCode::kInvalidArgument, "interpret max_depth must be >= 0");
    require(interpret.min_leaf_size >= 0, ErrorCode::kInvalidArgument,
            "interpret min_leaf_size must be >= 0");
    require(interpret.n_bins >= 2, ErrorCode::kInvalidArgument, "interpret n_bins must be >= 2");
    require(simulate.reps >= 1, ErrorCode::kInvalidArgument, "simulate reps must be >= 1");
    require(forest.max_features >= 0, ErrorCode::kInvalidArgument, "max_features must be >= 0");
    forest.validate(static_cast<std::size_t>(forest.max_features));
    boosting.validate();
  }

  causal::DmlConfig dml_config() const {
    causal::DmlConfig c;
    c.folds = folds;
    c.trim_lo = trim_lo;
    c.trim_hi = trim_hi;
    c.propensity = boosting;
    c.outcome.kind = learners::LearnerSpec::Kind::kForestRegressor;
    c.outcome.forest = forest;
    c.treatment.kind = learners::LearnerSpec::Kind::kForestClassifier;
    c.treatment.forest = forest;
    c.threads = threads;
    return c;
  }

  synth::DgpSpec dgp_spec() const {
    synth::DgpSpec s;
    s.n = simulate.n;
    s.p = simulate.p;
    if (simulate.theta == "constant") {
      s.theta = synth::ThetaForm::constant(simulate.theta_intercept);
    } else if (simulate.theta == "linear") {
      s.theta = synth::ThetaForm::linear(simulate.theta_intercept, simulate.theta_slopes);
    } else {
      s.theta = synth::ThetaForm::nonlinear(simulate.theta, simulate.theta_intercept);
    }
    s.g_form = simulate.g_form;
    s.f_form = simulate.f_form;
    s.f_scale = simulate.f_scale;
    s.noise_sd = simulate.noise_sd;
    s.seed = seed;
    return s;
  }

  // Settings that determine primary outputs, one "section.key=value" per
  // line. Thread count and file locations are excluded; input files enter
  // manifests through their digests.
  std::string canonical() const {
    std::ostringstream os;
    auto num = [](double v) { return csv::format_double(v); };
    os << "grid.origin_x=" << num(grid.origin_x) << "\n"
       << "grid.origin_y=" << num(grid.origin_y) << "\n"
       << "grid.cell_size=" << num(grid.cell_size) << "\n"
       << "grid.n_cols=" << grid.n_cols << "\n"
       << "grid.n_rows=" << grid.n_rows << "\n";
    os << "ingest.years=";
    for (std::size_t i = 0; i < years.size(); ++i) os << (i ? "," : "") << years[i];
    os << "\ningest.max_missing_year_fraction=" << num(max_missing_year_fraction) << "\n";
    os << "run.seed=" << seed << "\nrun.folds=" << folds << "\n";
    os << "trim.lo=" << num(trim_lo) << "\ntrim.hi=" << num(trim_hi) << "\n";
    os << "selection.test_fraction=" << num(selection_test_fraction) << "\n";
    os << "forest.n_trees=" << forest.n_trees << "\nforest.max_depth=" << forest.max_depth
       << "\nforest.min_leaf_size=" << forest.min_leaf_size
       << "\nforest.max_features=" << forest.max_features
       << "\nforest.bootstrap=" << (forest.bootstrap ? "true" : "false") << "\n";
    os << "boosting.n_rounds=" << boosting.n_rounds << "\nboosting.max_depth=" << boosting.max_depth
       << "\nboosting.learning_rate=" << num(boosting.learning_rate)
       << "\nboosting.min_leaf_size=" << boosting.min_leaf_size << "\n";
    os << "interpret.max_depth=" << interpret.max_depth
       << "\ninterpret.min_leaf_size=" << interpret.min_leaf_size
       << "\ninterpret.n_bins=" << interpret.n_bins << "\n";
    os << "mask.threshold=" << num(mask_threshold) << "\n";
    os << "simulate.n=" << simulate.n << "\nsimulate.p=" << simulate.p
       << "\nsimulate.reps=" << simulate.reps << "\nsimulate.theta=" << simulate.theta
       << "\nsimulate.theta_intercept=" << num(simulate.theta_intercept) << "\nsimulate.theta_slopes=";
    for (std::size_t i = 0; i < simulate.theta_slopes.size(); ++i) {
      os << (i ? "," : "") << num(simulate.theta_slopes[i]);
    }
    os << "\nsimulate.g_form=" << simulate.g_form << "\nsimulate.f_form=" << simulate.f_form
       << "\nsimulate.f_scale=" << num(simulate.f_scale)
       << "\nsimulate.noise_sd=" << num(simulate.noise_sd) << "\n";
    return os.str();
  }

  std::string hash() const { return sha256_hex(canonical()); }
};

namespace detail {

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    fail(ErrorCode::kSchema, "invalid config value", {{"key", key}, {"value", text}});
  }
  return value;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  fail(ErrorCode::kSchema, "invalid boolean config value", {{"key", key}, {"value", text}});
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  if (text.empty()) return out;
  for (const auto& field : csv::split_line(text)) {
    const auto b = field.find_first_not_of(' ');
    const auto e = field.find_last_not_of(' ');
    out.push_back(parse_value<T>(key, b == std::string::npos ? "" : field.substr(b, e - b + 1)));
  }
  return out;
}

}  // namespace detail

// INI file with sections [paths] [grid] [ingest] [run] [trim] [selection]
// [forest] [boosting] [interpret] [mask] [simulate]. Comments start with ';'.
// Unknown sections or keys are rejected. Relative paths resolve against the
// directory holding the config file.
inline RunConfig parse_config(std::istream& in, const std::filesystem::path& base_dir,
                              const std::string& source = "config") {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    fail(ErrorCode::kSchema, "cannot parse config",
         {{"file", source}, {"line", std::to_string(e.line())}, {"reason", e.message()}});
  }
  RunConfig c;
  auto path = [&](const std::string& v) {
    std::filesystem::path p(v);
    return p.is_absolute() ? p : base_dir / p;
  };
  using Setter = std::function<void(const std::string& key, const std::string& value)>;
  using detail::parse_value;
  const std::map<std::string, std::map<std::string, Setter>> schema = {
      {"paths",
       {{"parcels", [&](auto&, auto& v) { c.parcels = path(v); }},
        {"env", [&](auto&, auto& v) { c.env = path(v); }},
        {"outcome", [&](auto&, auto& v) { c.outcome = path(v); }},
        {"output_dir", [&](auto&, auto& v) { c.output_dir = path(v); }},
        {"dataset", [&](auto&, auto& v) { c.dataset = path(v); }}}},
      {"grid",
       {{"origin_x", [&](auto& k, auto& v) { c.grid.origin_x = parse_value<double>(k, v); }},
        {"origin_y", [&](auto& k, auto& v) { c.grid.origin_y = parse_value<double>(k, v); }},
        {"cell_size", [&](auto& k, auto& v) { c.grid.cell_size = parse_value<double>(k, v); }},
        {"n_cols", [&](auto& k, auto& v) { c.grid.n_cols = parse_value<int>(k, v); }},
        {"n_rows", [&](auto& k, auto& v) { c.grid.n_rows = parse_value<int>(k, v); }}}},
      {"ingest",
       {{"years", [&](auto& k, auto& v) { c.years = detail::parse_list<int>(k, v); }},
        {"max_missing_year_fraction",
         [&](auto& k, auto& v) { c.max_missing_year_fraction = parse_value<double>(k, v); }}}},
      {"run",
       {{"seed", [&](auto& k, auto& v) { c.seed = parse_value<std::uint64_t>(k, v); }},
        {"folds", [&](auto& k, auto& v) { c.folds = parse_value<int>(k, v); }},
        {"threads", [&](auto& k, auto& v) { c.threads = parse_value<int>(k, v); }}}},
      {"trim",
       {{"lo", [&](auto& k, auto& v) { c.trim_lo = parse_value<double>(k, v); }},
        {"hi", [&](auto& k, auto& v) { c.trim_hi = parse_value<double>(k, v); }}}},
      {"selection",
       {{"test_fraction",
         [&](auto& k, auto& v) { c.selection_test_fraction = parse_value<double>(k, v); }}}},
      {"forest",
       {{"n_trees", [&](auto& k, auto& v) { c.forest.n_trees = parse_value<int>(k, v); }},
        {"max_depth", [&](auto& k, auto& v) { c.forest.max_depth = parse_value<int>(k, v); }},
        {"min_leaf_size", [&](auto& k, auto& v) { c.forest.min_leaf_size = parse_value<int>(k, v); }},
        {"max_features", [&](auto& k, auto& v) { c.forest.max_features = parse_value<int>(k, v); }},
        {"bootstrap", [&](auto& k, auto& v) { c.forest.bootstrap = detail::parse_bool(k, v); }}}},
      {"boosting",
       {{"n_rounds", [&](auto& k, auto& v) { c.boosting.n_rounds = parse_value<int>(k, v); }},
        {"max_depth", [&](auto& k, auto& v) { c.boosting.max_depth = parse_value<int>(k, v); }},
        {"learning_rate",
         [&](auto& k, auto& v) { c.boosting.learning_rate = parse_value<double>(k, v); }},
        {"min_leaf_size",
         [&](auto& k, auto& v) { c.boosting.min_leaf_size = parse_value<int>(k, v); }}}},
      {"interpret",
       {{"max_depth", [&](auto& k, auto& v) { c.interpret.max_depth = parse_value<int>(k, v); }},
        {"min_leaf_size",
         [&](auto& k, auto& v) { c.interpret.min_leaf_size = parse_value<int>(k, v); }},
        {"n_bins", [&](auto& k, auto& v) { c.interpret.n_bins = parse_value<int>(k, v); }}}},
      {"mask",
       {{"threshold", [&](auto& k, auto& v) { c.mask_threshold = parse_value<double>(k, v); }}}},
      {"simulate",
       {{"n", [&](auto& k, auto& v) { c.simulate.n = parse_value<std::size_t>(k, v); }},
        {"p", [&](auto& k, auto& v) { c.simulate.p = parse_value<std::size_t>(k, v); }},
        {"reps", [&](auto& k, auto& v) { c.simulate.reps = parse_value<std::size_t>(k, v); }},
        {"theta", [&](auto&, auto& v) { c.simulate.theta = v; }},
        {"theta_intercept",
         [&](auto& k, auto& v) { c.simulate.theta_intercept = parse_value<double>(k, v); }},
        {"theta_slopes",
         [&](auto& k, auto& v) { c.simulate.theta_slopes = detail::parse_list<double>(k, v); }},
        {"g_form", [&](auto&, auto& v) { c.simulate.g_form = v; }},
        {"f_form", [&](auto&, auto& v) { c.simulate.f_form = v; }},
        {"f_scale", [&](auto& k, auto& v) { c.simulate.f_scale = parse_value<double>(k, v); }},
        {"noise_sd", [&](auto& k, auto& v) { c.simulate.noise_sd = parse_value<double>(k, v); }}}},
  };
  for (const auto& [section, body] : tree) {
    const auto s = schema.find(section);
    if (s == schema.end() || body.empty()) {
      fail(ErrorCode::kSchema, "unknown config section", {{"file", source}, {"section", section}});
    }
    for (const auto& [key, node] : body) {
      const auto setter = s->second.find(key);
      const std::string full = section + "." + key;
      require(setter != s->second.end(), ErrorCode::kSchema, "unknown config key",
              {{"file", source}, {"key", full}});
      setter->second(full, node.get_value<std::string>());
    }
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open config", {{"file", file.string()}});
  return parse_config(in, std::filesystem::absolute(file).parent_path(), file.string());
}

}  // namespace cropdml
