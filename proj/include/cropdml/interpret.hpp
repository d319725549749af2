#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cropdml/causal.hpp"
#include "cropdml/core.hpp"
#include "cropdml/learners/tree.hpp"

namespace cropdml::interpret {

struct LeafStats {
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (0 when n == 1)
  double ci_low = 0.0;
  double ci_high = 0.0;
};

inline LeafStats leaf_stats(std::span<const double> values) {
  LeafStats s;
  s.n = values.size();
  if (s.n == 0) return s;
  s.mean = mean(values);
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  const double half = causal::kZ95 * s.std / std::sqrt(static_cast<double>(s.n));
  s.ci_low = s.mean - half;
  s.ci_high = s.mean + half;
  return s;
}

// CART over raw covariates fitted to per-row CATE points.
struct InterpreterTree {
  std::vector<std::string> feature_names;
  learners::DecisionTree tree;
  std::vector<std::optional<LeafStats>> leaves;  // indexed by node id
  int max_depth = 3;
  int min_leaf_size = 1;

  std::size_t leaf_of(std::span<const double> x_raw) const {
    return static_cast<std::size_t>(tree.leaf_index(x_raw));
  }
};

inline int default_min_leaf_size(std::size_t n) {
  return std::max(1, static_cast<int>(std::lround(0.05 * static_cast<double>(n))));
}

// min_leaf_size <= 0 selects the default (5% of rows).
inline InterpreterTree fit_interpreter(const FeatureMatrix& x_raw, std::span<const double> cate_points,
                                       int max_depth = 3, int min_leaf_size = 0) {
  require(cate_points.size() == x_raw.rows(), ErrorCode::kInvalidArgument,
          "CATE points and X rows differ",
          {{"rows", std::to_string(x_raw.rows())}, {"cate", std::to_string(cate_points.size())}});
  require(max_depth >= 0, ErrorCode::kInvalidArgument, "max_depth must be >= 0");
  const std::size_t n = x_raw.rows();
  if (min_leaf_size <= 0) min_leaf_size = default_min_leaf_size(n);
  require(n >= 2 * static_cast<std::size_t>(min_leaf_size) && n > 0, ErrorCode::kInvalidArgument,
          "interpreter needs n >= 2 * min_leaf_size",
          {{"rows", std::to_string(n)}, {"min_leaf_size", std::to_string(min_leaf_size)}});

  learners::TreeParams params;
  params.max_depth = max_depth;
  params.min_leaf_size = min_leaf_size;
  params.max_features = 0;
  Rng rng(0);  // unused: no feature subsampling
  InterpreterTree out;
  out.feature_names = x_raw.column_names();
  out.max_depth = max_depth;
  out.min_leaf_size = min_leaf_size;
  out.tree = learners::fit_tree(x_raw, cate_points, learners::Task::kRegression, params, rng);

  // Leaf statistics come from a replay of the split conditions so they are
  // exact functions of the member rows.
  const auto& nodes = out.tree.nodes();
  std::vector<std::vector<double>> members(nodes.size());
  for (std::size_t i = 0; i < n; ++i) members[out.leaf_of(x_raw.row(i))].push_back(cate_points[i]);
  out.leaves.resize(nodes.size());
  auto& mutable_nodes = out.tree.mutable_nodes();
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    if (!nodes[k].is_leaf()) continue;
    out.leaves[k] = leaf_stats(members[k]);
    mutable_nodes[k].value = out.leaves[k]->mean;
  }
  return out;
}

inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// One line per node in depth-first order, the true branch (x <= threshold)
// first. Children are indented two spaces below their parent.
inline std::string render_text(const InterpreterTree& t) {
  std::ostringstream os;
  const auto& nodes = t.tree.nodes();
  struct Item {
    int node;
    int depth;
    const char* branch;
  };
  std::vector<Item> stack{{0, 0, ""}};
  while (!stack.empty()) {
    const Item it = stack.back();
    stack.pop_back();
    const auto& node = nodes[static_cast<std::size_t>(it.node)];
    os << std::string(static_cast<std::size_t>(2 * it.depth), ' ') << it.branch;
    if (node.is_leaf()) {
      const LeafStats& s = *t.leaves[static_cast<std::size_t>(it.node)];
      os << "leaf " << it.node << ": n=" << s.n << " mean=" << format_number(s.mean)
         << " std=" << format_number(s.std) << " ci_low=" << format_number(s.ci_low)
         << " ci_high=" << format_number(s.ci_high) << "\n";
    } else {
      os << "node " << it.node << ": " << t.feature_names[static_cast<std::size_t>(node.feature)]
         << " <= " << format_number(node.threshold) << " n=" << node.count << "\n";
      stack.push_back({node.right, it.depth + 1, "false -> "});
      stack.push_back({node.left, it.depth + 1, "true -> "});
    }
  }
  return os.str();
}

// Split structure recovered from render_text output.
struct OutlineNode {
  int id = -1;
  std::string feature;  // empty for leaves
  double threshold = 0.0;
  std::size_t n = 0;
  int left = -1;
  int right = -1;

  bool operator==(const OutlineNode&) const = default;
};

inline std::vector<OutlineNode> parse_outline(const std::string& text) {
  std::vector<OutlineNode> out;
  std::vector<std::pair<int, std::size_t>> open;  // (depth, index into out)
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  auto bad = [&](const char* why) {
    fail(ErrorCode::kSchema, why, {{"line", std::to_string(line_no)}});
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::size_t indent = line.find_first_not_of(' ');
    if (indent == std::string::npos || indent % 2 != 0) bad("bad indentation");
    const int depth = static_cast<int>(indent / 2);
    std::string rest = line.substr(indent);
    bool is_true = false;
    if (rest.rfind("true -> ", 0) == 0) {
      is_true = true;
      rest = rest.substr(8);
    } else if (rest.rfind("false -> ", 0) == 0) {
      rest = rest.substr(9);
    } else if (depth != 0) {
      bad("missing branch marker");
    }
    std::istringstream ls(rest);
    std::string kind;
    std::string id_token;
    ls >> kind >> id_token;
    if (id_token.empty() || id_token.back() != ':') bad("missing node id");
    OutlineNode node;
    node.id = std::stoi(id_token.substr(0, id_token.size() - 1));
    std::string token;
    if (kind == "node") {
      std::string op;
      std::string thr;
      ls >> node.feature >> op >> thr >> token;
      if (op != "<=" || token.rfind("n=", 0) != 0) bad("malformed split line");
      node.threshold = std::strtod(thr.c_str(), nullptr);
      node.n = std::stoul(token.substr(2));
    } else if (kind == "leaf") {
      ls >> token;
      if (token.rfind("n=", 0) != 0) bad("malformed leaf line");
      node.n = std::stoul(token.substr(2));
    } else {
      bad("unknown line kind");
    }
    while (!open.empty() && open.back().first >= depth) open.pop_back();
    if (depth > 0) {
      if (open.empty() || open.back().first != depth - 1) bad("orphan node");
      OutlineNode& parent = out[open.back().second];
      (is_true ? parent.left : parent.right) = node.id;
    }
    out.push_back(node);
    if (kind == "node") open.emplace_back(depth, out.size() - 1);
  }
  std::sort(out.begin(), out.end(), [](const OutlineNode& a, const OutlineNode& b) { return a.id < b.id; });
  return out;
}

inline nlohmann::ordered_json leaf_json(const LeafStats& s) {
  return {{"n", s.n}, {"mean", s.mean}, {"std", s.std}, {"ci_low", s.ci_low}, {"ci_high", s.ci_high}};
}

inline nlohmann::ordered_json node_json(const InterpreterTree& t, int index) {
  const auto& node = t.tree.nodes()[static_cast<std::size_t>(index)];
  nlohmann::ordered_json j;
  j["id"] = index;
  j["n"] = node.count;
  if (node.is_leaf()) {
    j["leaf"] = leaf_json(*t.leaves[static_cast<std::size_t>(index)]);
  } else {
    j["condition"] = {{"feature", t.feature_names[static_cast<std::size_t>(node.feature)]},
                      {"op", "<="},
                      {"threshold", node.threshold}};
    j["true"] = node_json(t, node.left);
    j["false"] = node_json(t, node.right);
  }
  return j;
}

inline nlohmann::ordered_json to_json(const InterpreterTree& t) {
  nlohmann::ordered_json j;
  j["max_depth"] = t.max_depth;
  j["min_leaf_size"] = t.min_leaf_size;
  j["features"] = t.feature_names;
  j["root"] = node_json(t, 0);
  return j;
}

struct CurveBin {
  double lower = 0.0;
  double upper = 0.0;
  double center = 0.0;
  std::size_t n = 0;
  double mean_effect = std::numeric_limits<double>::quiet_NaN();
  double mean_std_error = std::numeric_limits<double>::quiet_NaN();
  double ci_low = std::numeric_limits<double>::quiet_NaN();
  double ci_high = std::numeric_limits<double>::quiet_NaN();

  bool empty() const { return n == 0; }
};

struct EffectCurve {
  std::string feature;
  std::vector<double> edges;  // n_bins + 1 edges in standardized units
  std::vector<CurveBin> bins;
};

// Equal-width bins over the observed range of `feature` in the standardized
// matrix. Each bin reports the mean CATE point of its rows and a band of
// +-1.96 times their mean standard error.
inline EffectCurve effect_curve(const FeatureMatrix& x_std,
                                std::span<const causal::EffectEstimate> effects,
                                const std::string& feature, int n_bins = 20) {
  require(n_bins >= 2, ErrorCode::kInvalidArgument, "n_bins must be >= 2");
  require(effects.size() == x_std.rows() && x_std.rows() > 0, ErrorCode::kInvalidArgument,
          "effects and X rows differ");
  const auto j = x_std.column_index(feature);
  require(j.has_value(), ErrorCode::kInvalidArgument, "unknown feature", {{"feature", feature}});
  const std::vector<double> col = x_std.column(*j);
  const auto [mn, mx] = std::minmax_element(col.begin(), col.end());
  const double lo = *mn;
  const double hi = *mx;
  const double width = (hi - lo) / n_bins;

  EffectCurve curve;
  curve.feature = feature;
  curve.edges.resize(static_cast<std::size_t>(n_bins) + 1);
  for (int b = 0; b <= n_bins; ++b) curve.edges[b] = b == n_bins ? hi : lo + b * width;
  curve.bins.resize(static_cast<std::size_t>(n_bins));
  std::vector<double> sum_effect(curve.bins.size(), 0.0);
  std::vector<double> sum_se(curve.bins.size(), 0.0);
  for (std::size_t i = 0; i < col.size(); ++i) {
    std::size_t b = 0;
    if (width > 0.0) {
      const double pos = std::floor((col[i] - lo) / width);
      b = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(n_bins - 1)));
    }
    ++curve.bins[b].n;
    sum_effect[b] += effects[i].point;
    sum_se[b] += effects[i].std_error;
  }
  for (std::size_t b = 0; b < curve.bins.size(); ++b) {
    CurveBin& bin = curve.bins[b];
    bin.lower = curve.edges[b];
    bin.upper = curve.edges[b + 1];
    bin.center = 0.5 * (bin.lower + bin.upper);
    if (bin.empty()) continue;
    const double k = static_cast<double>(bin.n);
    bin.mean_effect = sum_effect[b] / k;
    bin.mean_std_error = sum_se[b] / k;
    bin.ci_low = bin.mean_effect - causal::kZ95 * bin.mean_std_error;
    bin.ci_high = bin.mean_effect + causal::kZ95 * bin.mean_std_error;
  }
  return curve;
}

inline EffectCurve effect_curve(const causal::LinearCateModel& model, const FeatureMatrix& x_std,
                                const std::string& feature, int n_bins = 20) {
  const auto effects = causal::cate_standardized(model, x_std);
  return effect_curve(x_std, effects, feature, n_bins);
}

// CSV with header feature,bin_center,mean_effect,ci_low,ci_high,n. Empty
// bins leave the effect columns blank.
inline std::string curve_csv(const EffectCurve& curve) {
  std::string out = "feature,bin_center,mean_effect,ci_low,ci_high,n\n";
  for (const auto& b : curve.bins) {
    out += curve.feature + "," + csv::format_double(b.center) + ",";
    if (!b.empty()) {
      out += csv::format_double(b.mean_effect) + "," + csv::format_double(b.ci_low) + "," +
             csv::format_double(b.ci_high);
    } else {
      out += ",,";
    }
    out += "," + std::to_string(b.n) + "\n";
  }
  return out;
}

}  // namespace cropdml::interpret
