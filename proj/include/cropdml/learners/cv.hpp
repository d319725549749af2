#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cropdml/learners/boosting.hpp"
#include "cropdml/learners/forest.hpp"
#include "cropdml/learners/metrics.hpp"

namespace cropdml::learners {

// A fitted model as a batch prediction function.
using Predictor = std::function<std::vector<double>(const FeatureMatrix&)>;
// Fits on (X, targets) with a seed and returns a predictor.
using Learner = std::function<Predictor(const FeatureMatrix&, std::span<const double>, std::uint64_t)>;

struct LearnerSpec {
  enum class Kind { kForestRegressor, kForestClassifier, kBoostedClassifier, kConstantMean };
  Kind kind = Kind::kForestRegressor;
  ForestParams forest;
  BoostParams boost;
  int threads = 1;

  bool is_classifier() const {
    return kind == Kind::kForestClassifier || kind == Kind::kBoostedClassifier;
  }

  std::string name() const {
    switch (kind) {
      case Kind::kForestRegressor: return "random_forest_regressor";
      case Kind::kForestClassifier: return "random_forest_classifier";
      case Kind::kBoostedClassifier: return "gradient_boosted_classifier";
      case Kind::kConstantMean: return "constant_mean";
    }
    return "unknown";
  }
};

inline Learner make_learner(const LearnerSpec& spec) {
  switch (spec.kind) {
    case LearnerSpec::Kind::kForestRegressor:
    case LearnerSpec::Kind::kForestClassifier:
      return [spec](const FeatureMatrix& x, std::span<const double> y, std::uint64_t seed) {
        const Task task = spec.kind == LearnerSpec::Kind::kForestClassifier
                              ? Task::kClassification
                              : Task::kRegression;
        auto model = std::make_shared<ForestModel>(
            fit_random_forest(x, y, task, spec.forest, seed, spec.threads));
        const int threads = spec.threads;
        return Predictor([model, threads](const FeatureMatrix& q) { return model->predict(q, threads); });
      };
    case LearnerSpec::Kind::kBoostedClassifier:
      return [spec](const FeatureMatrix& x, std::span<const double> y, std::uint64_t seed) {
        auto model = std::make_shared<BoostedModel>(
            fit_gradient_boosted_classifier(x, y, spec.boost, seed));
        return Predictor([model](const FeatureMatrix& q) { return model->predict(q); });
      };
    case LearnerSpec::Kind::kConstantMean:
      return [](const FeatureMatrix&, std::span<const double> y, std::uint64_t) {
        double m = 0.0;
        for (double v : y) m += v;
        m /= static_cast<double>(y.size());
        return Predictor([m](const FeatureMatrix& q) { return std::vector<double>(q.rows(), m); });
      };
  }
  fail(ErrorCode::kInvalidArgument, "unknown learner kind");
}

// Deterministic k-fold assignment. Rows are put in a canonical order (by key
// when keys are given, so the assignment follows the rows under any
// permutation), shuffled from the seed, grouped by stratum when strata are
// given, and dealt round-robin. Fold sizes differ by at most one, and so do
// the per-stratum counts of any two folds.
inline std::vector<int> assign_folds(std::size_t n, int k, std::uint64_t seed,
                                     std::span<const int> strata = {},
                                     std::span<const std::string> keys = {}) {
  require(k >= 2, ErrorCode::kInvalidArgument, "need at least 2 folds");
  require(static_cast<std::size_t>(k) <= n, ErrorCode::kInvalidArgument,
          "more folds than rows", {{"folds", std::to_string(k)}, {"rows", std::to_string(n)}});
  require(strata.empty() || strata.size() == n, ErrorCode::kInvalidArgument,
          "strata length differs from rows");
  require(keys.empty() || keys.size() == n, ErrorCode::kInvalidArgument,
          "keys length differs from rows");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (!keys.empty()) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
  }
  Rng rng(derive_seed(seed, 0, 0xf01d));
  shuffle(order, rng);
  if (!strata.empty()) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return strata[a] < strata[b]; });
  }
  std::vector<int> fold(n);
  for (std::size_t pos = 0; pos < n; ++pos) fold[order[pos]] = static_cast<int>(pos % k);
  return fold;
}

// Row indices of the given fold (held out) and of all other folds (training).
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_by_fold(
    std::span<const int> fold_id, int fold) {
  std::vector<std::size_t> held;
  std::vector<std::size_t> train;
  for (std::size_t i = 0; i < fold_id.size(); ++i) {
    (fold_id[i] == fold ? held : train).push_back(i);
  }
  return {std::move(held), std::move(train)};
}

// Rows in canonical (row-id) order so a fit does not depend on how the
// caller ordered its rows.
inline void canonical_order(std::vector<std::size_t>& rows, const FeatureMatrix& x) {
  const auto& ids = x.row_ids();
  std::stable_sort(rows.begin(), rows.end(),
                   [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
}

enum class Metric { kR2, kF1 };

inline std::vector<int> threshold_labels(std::span<const double> prob) {
  std::vector<int> out(prob.size());
  for (std::size_t i = 0; i < prob.size(); ++i) out[i] = prob[i] >= 0.5 ? 1 : 0;
  return out;
}

inline double score(Metric metric, std::span<const double> truth, std::span<const double> pred) {
  if (metric == Metric::kR2) return r2_score(truth, pred);
  std::vector<int> t(truth.begin(), truth.end());
  return f1_score(t, threshold_labels(pred));
}

struct CvResult {
  std::vector<double> fold_scores;
  double mean = 0.0;
  std::vector<int> fold_id;
};

// k-fold cross-validation; F1 folds are stratified on the binary target.
inline CvResult cross_validate(const Learner& learner, Metric metric, const FeatureMatrix& x,
                               std::span<const double> targets, int k, std::uint64_t seed,
                               int threads = 1) {
  require(targets.size() == x.rows(), ErrorCode::kInvalidArgument,
          "targets length differs from X rows");
  std::vector<int> strata;
  if (metric == Metric::kF1) strata.assign(targets.begin(), targets.end());
  CvResult out;
  out.fold_id = assign_folds(x.rows(), k, seed, strata, x.row_ids());
  out.fold_scores.assign(static_cast<std::size_t>(k), 0.0);
  parallel_for(static_cast<std::size_t>(k), threads, [&](std::size_t f) {
    auto [held, train] = split_by_fold(out.fold_id, static_cast<int>(f));
    canonical_order(train, x);
    const FeatureMatrix x_train = x.select_rows(train);
    std::vector<double> y_train;
    y_train.reserve(train.size());
    for (std::size_t i : train) y_train.push_back(targets[i]);
    const Predictor predict = learner(x_train, y_train, derive_seed(seed, f, 0xc5));
    const std::vector<double> pred = predict(x.select_rows(held));
    std::vector<double> truth;
    truth.reserve(held.size());
    for (std::size_t i : held) truth.push_back(targets[i]);
    out.fold_scores[f] = score(metric, truth, pred);
  });
  double s = 0.0;
  for (double v : out.fold_scores) s += v;
  out.mean = s / static_cast<double>(k);
  return out;
}

inline CvResult cross_validate(const LearnerSpec& spec, const FeatureMatrix& x,
                               std::span<const double> targets, int k, std::uint64_t seed) {
  return cross_validate(make_learner(spec), spec.is_classifier() ? Metric::kF1 : Metric::kR2, x,
                        targets, k, seed);
}

}  // namespace cropdml::learners
