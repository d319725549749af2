#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "cropdml/learners/tree.hpp"

namespace cropdml::learners {

struct ForestParams {
  int n_trees = 200;
  int max_depth = 12;
  int min_leaf_size = 5;
  int max_features = 0;  // 0: ceil(sqrt(p)) for classification, ceil(p/3) for regression
  bool bootstrap = true;

  int resolved_max_features(Task task, std::size_t p) const {
    if (max_features > 0) return max_features;
    const double pd = static_cast<double>(p);
    const int m = task == Task::kClassification ? static_cast<int>(std::ceil(std::sqrt(pd)))
                                                : static_cast<int>(std::ceil(pd / 3.0));
    return std::max(1, std::min(m, static_cast<int>(p)));
  }

  void validate(std::size_t p) const {
    require(n_trees >= 1, ErrorCode::kInvalidArgument, "n_trees must be >= 1");
    require(max_depth >= 0, ErrorCode::kInvalidArgument, "max_depth must be >= 0");
    require(min_leaf_size >= 1, ErrorCode::kInvalidArgument, "min_leaf_size must be >= 1");
    require(max_features >= 0 && static_cast<std::size_t>(max_features) <= p,
            ErrorCode::kInvalidArgument, "max_features outside [0, n_features]");
  }

  bool operator==(const ForestParams&) const = default;
};

class ForestModel {
 public:
  ForestModel() = default;
  ForestModel(Task task, ForestParams params, std::uint64_t seed, std::size_t n_features,
              std::vector<DecisionTree> trees)
      : task_(task),
        params_(params),
        seed_(seed),
        n_features_(n_features),
        trees_(std::move(trees)) {}

  Task task() const { return task_; }
  const ForestParams& params() const { return params_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t n_features() const { return n_features_; }
  const std::vector<DecisionTree>& trees() const { return trees_; }

  // Mean of tree outputs: a regression estimate or a class-1 probability.
  double predict(std::span<const double> x) const {
    double s = 0.0;
    for (const auto& t : trees_) s += t.predict(x);
    return s / static_cast<double>(trees_.size());
  }

  std::vector<double> predict(const FeatureMatrix& x, int threads = 1) const {
    require(x.cols() == n_features_, ErrorCode::kInvalidArgument,
            "feature count differs from the fitted forest");
    std::vector<double> out(x.rows());
    constexpr std::size_t kChunk = 256;
    const std::size_t chunks = (x.rows() + kChunk - 1) / kChunk;
    parallel_for(chunks, threads, [&](std::size_t c) {
      const std::size_t end = std::min(x.rows(), (c + 1) * kChunk);
      for (std::size_t r = c * kChunk; r < end; ++r) out[r] = predict(x.row(r));
    });
    return out;
  }

  bool operator==(const ForestModel&) const = default;

 private:
  Task task_ = Task::kRegression;
  ForestParams params_;
  std::uint64_t seed_ = 0;
  std::size_t n_features_ = 0;
  std::vector<DecisionTree> trees_;
};

// Each tree draws its bootstrap sample and feature subsets from a generator
// seeded by (seed, tree index); trees are stored in index order, so the model
// is identical at any thread count.
inline ForestModel fit_random_forest(const FeatureMatrix& x, std::span<const double> targets,
                                     Task task, const ForestParams& params, std::uint64_t seed,
                                     int threads = 1) {
  params.validate(x.cols());
  require(targets.size() == x.rows(), ErrorCode::kInvalidArgument,
          "targets length differs from X rows");
  require(x.rows() >= 2 * static_cast<std::size_t>(params.min_leaf_size),
          ErrorCode::kInvalidArgument, "too few rows for min_leaf_size",
          {{"rows", std::to_string(x.rows())},
           {"min_leaf_size", std::to_string(params.min_leaf_size)}});
  TreeParams tp;
  tp.max_depth = params.max_depth;
  tp.min_leaf_size = params.min_leaf_size;
  tp.max_features = params.resolved_max_features(task, x.cols());
  std::vector<DecisionTree> trees(static_cast<std::size_t>(params.n_trees));
  const std::size_t n = x.rows();
  const SortedColumns cols(x);
  parallel_for(trees.size(), threads, [&](std::size_t t) {
    Rng rng(derive_seed(seed, t));
    std::vector<std::size_t> rows(n);
    if (params.bootstrap) {
      for (auto& r : rows) r = uniform_index(rng, n);
    } else {
      std::iota(rows.begin(), rows.end(), 0);
    }
    trees[t] = fit_tree(cols, targets, task, tp, rng, std::move(rows));
  });
  return ForestModel(task, params, seed, x.cols(), std::move(trees));
}

}  // namespace cropdml::learners
