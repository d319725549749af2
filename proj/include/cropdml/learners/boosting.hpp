#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "cropdml/learners/tree.hpp"

namespace cropdml::learners {

struct BoostParams {
  int n_rounds = 100;
  int max_depth = 3;
  double learning_rate = 0.1;
  int min_leaf_size = 5;

  void validate() const {
    require(n_rounds >= 0, ErrorCode::kInvalidArgument, "n_rounds must be >= 0");
    require(max_depth >= 0, ErrorCode::kInvalidArgument, "max_depth must be >= 0");
    require(min_leaf_size >= 1, ErrorCode::kInvalidArgument, "min_leaf_size must be >= 1");
    require(learning_rate >= 0.0 && std::isfinite(learning_rate), ErrorCode::kInvalidArgument,
            "learning_rate must be finite and >= 0");
  }
};

inline constexpr double kProbabilityFloor = 1e-6;

inline double logistic(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

inline double clip_probability(double p) {
  return std::clamp(p, kProbabilityFloor, 1.0 - kProbabilityFloor);
}

// Logistic-loss gradient boosting. Leaf values hold Newton steps.
class BoostedModel {
 public:
  BoostedModel() = default;
  BoostedModel(double base_score, double learning_rate, std::size_t n_features,
               std::vector<DecisionTree> trees)
      : base_score_(base_score),
        learning_rate_(learning_rate),
        n_features_(n_features),
        trees_(std::move(trees)) {}

  double base_score() const { return base_score_; }
  double learning_rate() const { return learning_rate_; }
  std::size_t n_features() const { return n_features_; }
  const std::vector<DecisionTree>& trees() const { return trees_; }

  double raw_score(std::span<const double> x) const {
    double s = 0.0;
    for (const auto& t : trees_) s += t.predict(x);
    return base_score_ + learning_rate_ * s;
  }

  double predict(std::span<const double> x) const { return clip_probability(logistic(raw_score(x))); }

  std::vector<double> predict(const FeatureMatrix& x, int /*threads*/ = 1) const {
    require(x.cols() == n_features_, ErrorCode::kInvalidArgument,
            "feature count differs from the fitted model");
    std::vector<double> out(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) out[r] = predict(x.row(r));
    return out;
  }

  bool operator==(const BoostedModel&) const = default;

 private:
  double base_score_ = 0.0;
  double learning_rate_ = 0.1;
  std::size_t n_features_ = 0;
  std::vector<DecisionTree> trees_;
};

// Each round fits a regression tree to t - p, then sets every leaf to
// sum(t - p) / sum(p (1 - p)) over its training rows.
inline BoostedModel fit_gradient_boosted_classifier(const FeatureMatrix& x,
                                                    std::span<const double> t,
                                                    const BoostParams& params,
                                                    std::uint64_t seed) {
  params.validate();
  require(t.size() == x.rows() && !t.empty(), ErrorCode::kInvalidArgument,
          "treatment length differs from X rows");
  double positives = 0.0;
  for (double v : t) {
    require(v == 0.0 || v == 1.0, ErrorCode::kInvalidArgument, "targets must be 0 or 1");
    positives += v;
  }
  const double n = static_cast<double>(t.size());
  if (positives == 0.0 || positives == n) {
    fail(ErrorCode::kDegenerateTreatment, "boosted classifier needs both classes",
         {{"rows", std::to_string(t.size())}});
  }
  const double rate = positives / n;
  const double base = std::log(rate / (1.0 - rate));

  TreeParams tp;
  tp.max_depth = params.max_depth;
  tp.min_leaf_size = params.min_leaf_size;
  tp.max_features = 0;

  std::vector<double> raw(t.size(), base);
  std::vector<double> prob(t.size());
  std::vector<double> gradient(t.size());
  const SortedColumns cols(x);
  std::vector<DecisionTree> trees;
  trees.reserve(static_cast<std::size_t>(params.n_rounds));
  for (int round = 0; round < params.n_rounds; ++round) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      prob[i] = clip_probability(logistic(raw[i]));
      gradient[i] = t[i] - prob[i];
    }
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(round)));
    DecisionTree tree = fit_tree(cols, gradient, Task::kRegression, tp, rng);
    auto& nodes = tree.mutable_nodes();
    std::vector<double> num(nodes.size(), 0.0);
    std::vector<double> den(nodes.size(), 0.0);
    std::vector<int> leaf_of(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      leaf_of[i] = tree.leaf_index(x.row(i));
      num[leaf_of[i]] += gradient[i];
      den[leaf_of[i]] += prob[i] * (1.0 - prob[i]);
    }
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (nodes[k].is_leaf()) nodes[k].value = den[k] > 1e-12 ? num[k] / den[k] : 0.0;
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
      raw[i] += params.learning_rate * nodes[leaf_of[i]].value;
    }
    trees.push_back(std::move(tree));
  }
  return BoostedModel(base, params.learning_rate, x.cols(), std::move(trees));
}

}  // namespace cropdml::learners
