#pragma once

// Text model format, version 1. Reals are written as C99 hex floats so a
// save/load cycle is bit-exact.
//
//   cropdml-forest 1
//   task <regression|classification>
//   params <n_trees> <max_depth> <min_leaf_size> <max_features> <bootstrap 0|1>
//   seed <u64>
//   features <p>
//   trees <count>
//   tree <node_count>
//   <feature> <threshold> <left> <right> <value> <count>     (one per node)
//   ...
//
//   cropdml-boosted 1
//   base_score <real>
//   learning_rate <real>
//   features <p>
//   trees <count>
//   tree ... (as above)

#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <string>

#include "cropdml/learners/boosting.hpp"
#include "cropdml/learners/forest.hpp"

namespace cropdml::learners {

namespace detail {

inline std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

inline double parse_real(const std::string& token) {
  char* end = nullptr;
  const double v = std::strtod(token.c_str(), &end);
  require(end != token.c_str() && *end == '\0', ErrorCode::kSchema, "malformed real in model file",
          {{"token", token}});
  return v;
}

inline void expect(std::istream& in, const std::string& keyword) {
  std::string got;
  in >> got;
  require(static_cast<bool>(in) && got == keyword, ErrorCode::kSchema, "malformed model file",
          {{"expected", keyword}, {"got", got}});
}

inline void write_tree(std::ostream& out, const DecisionTree& tree) {
  out << "tree " << tree.nodes().size() << '\n';
  for (const auto& n : tree.nodes()) {
    out << n.feature << ' ' << hex(n.threshold) << ' ' << n.left << ' ' << n.right << ' '
        << hex(n.value) << ' ' << n.count << '\n';
  }
}

inline DecisionTree read_tree(std::istream& in) {
  expect(in, "tree");
  std::size_t count = 0;
  in >> count;
  std::vector<TreeNode> nodes(count);
  for (auto& n : nodes) {
    std::string thr;
    std::string val;
    in >> n.feature >> thr >> n.left >> n.right >> val >> n.count;
    require(static_cast<bool>(in), ErrorCode::kSchema, "truncated tree in model file");
    n.threshold = parse_real(thr);
    n.value = parse_real(val);
  }
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& n = nodes[i];
    if (!n.is_leaf()) {
      require(n.left > static_cast<int>(i) && n.right > static_cast<int>(i) &&
                  n.left < static_cast<int>(count) && n.right < static_cast<int>(count),
              ErrorCode::kSchema, "tree node has invalid children");
    }
  }
  require(count > 0, ErrorCode::kSchema, "empty tree in model file");
  return DecisionTree(std::move(nodes));
}

}  // namespace detail

inline void save_model(std::ostream& out, const ForestModel& model) {
  const auto& p = model.params();
  out << "cropdml-forest 1\n";
  out << "task " << (model.task() == Task::kClassification ? "classification" : "regression") << '\n';
  out << "params " << p.n_trees << ' ' << p.max_depth << ' ' << p.min_leaf_size << ' '
      << p.max_features << ' ' << (p.bootstrap ? 1 : 0) << '\n';
  out << "seed " << model.seed() << '\n';
  out << "features " << model.n_features() << '\n';
  out << "trees " << model.trees().size() << '\n';
  for (const auto& t : model.trees()) detail::write_tree(out, t);
}

inline ForestModel load_forest(std::istream& in) {
  detail::expect(in, "cropdml-forest");
  int version = 0;
  in >> version;
  require(version == 1, ErrorCode::kSchema, "unsupported forest model version",
          {{"version", std::to_string(version)}});
  detail::expect(in, "task");
  std::string task;
  in >> task;
  require(task == "regression" || task == "classification", ErrorCode::kSchema,
          "unknown task in model file", {{"task", task}});
  ForestParams p;
  int bootstrap = 0;
  detail::expect(in, "params");
  in >> p.n_trees >> p.max_depth >> p.min_leaf_size >> p.max_features >> bootstrap;
  p.bootstrap = bootstrap != 0;
  std::uint64_t seed = 0;
  detail::expect(in, "seed");
  in >> seed;
  std::size_t features = 0;
  detail::expect(in, "features");
  in >> features;
  std::size_t count = 0;
  detail::expect(in, "trees");
  in >> count;
  require(static_cast<bool>(in), ErrorCode::kSchema, "truncated forest header");
  std::vector<DecisionTree> trees;
  trees.reserve(count);
  for (std::size_t i = 0; i < count; ++i) trees.push_back(detail::read_tree(in));
  return ForestModel(task == "classification" ? Task::kClassification : Task::kRegression, p, seed,
                     features, std::move(trees));
}

inline void save_model(std::ostream& out, const BoostedModel& model) {
  out << "cropdml-boosted 1\n";
  out << "base_score " << detail::hex(model.base_score()) << '\n';
  out << "learning_rate " << detail::hex(model.learning_rate()) << '\n';
  out << "features " << model.n_features() << '\n';
  out << "trees " << model.trees().size() << '\n';
  for (const auto& t : model.trees()) detail::write_tree(out, t);
}

inline BoostedModel load_boosted(std::istream& in) {
  detail::expect(in, "cropdml-boosted");
  int version = 0;
  in >> version;
  require(version == 1, ErrorCode::kSchema, "unsupported boosted model version");
  std::string token;
  detail::expect(in, "base_score");
  in >> token;
  const double base = detail::parse_real(token);
  detail::expect(in, "learning_rate");
  in >> token;
  const double lr = detail::parse_real(token);
  std::size_t features = 0;
  detail::expect(in, "features");
  in >> features;
  std::size_t count = 0;
  detail::expect(in, "trees");
  in >> count;
  require(static_cast<bool>(in), ErrorCode::kSchema, "truncated boosted header");
  std::vector<DecisionTree> trees;
  trees.reserve(count);
  for (std::size_t i = 0; i < count; ++i) trees.push_back(detail::read_tree(in));
  return BoostedModel(base, lr, features, std::move(trees));
}

}  // namespace cropdml::learners
