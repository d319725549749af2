#pragma once

#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include "cropdml/causal.hpp"
#include "cropdml/core.hpp"
#include "cropdml/learners/cv.hpp"

namespace cropdml::causal {

struct Contender {
  std::string label;
  learners::LearnerSpec spec;
};

struct SelectionRow {
  std::string task;  // "Y ~ X" or "T ~ X"
  std::string metric;
  std::string label;
  double train = 0.0;  // mean K-fold CV score inside the training split
  double test = 0.0;   // score on the holdout of a model refit on the training split
  bool selected = false;

  double gap() const { return std::abs(train - test); }
};

struct SelectionReport {
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  int folds = 3;
  std::vector<SelectionRow> rows;

  std::string table() const {
    std::string out = "first-stage model selection: train = " + std::to_string(folds) +
                      "-fold CV mean on " + std::to_string(n_train) + " rows, test = holdout of " +
                      std::to_string(n_test) + " rows\n";
    char line[256];
    std::snprintf(line, sizeof(line), "%-7s %-6s %-24s %8s %8s %8s\n", "task", "metric", "model",
                  "train", "test", "gap");
    out += line;
    for (const auto& r : rows) {
      std::snprintf(line, sizeof(line), "%-7s %-6s %-24s %8.4f %8.4f %8.4f%s\n", r.task.c_str(),
                    r.metric.c_str(), r.label.c_str(), r.train, r.test, r.gap(),
                    r.selected ? "  *" : "");
      out += line;
    }
    return out;
  }
};

// Stratified by treatment: within each arm a seeded shuffle of the
// canonical (row id) order sends the first round(fraction * arm size) rows
// to the test split.
inline std::vector<bool> holdout_split(const LabeledDataset& data, double test_fraction,
                                       std::uint64_t seed) {
  require(test_fraction > 0.0 && test_fraction < 1.0, ErrorCode::kInvalidArgument,
          "test_fraction must be in (0, 1)");
  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  learners::canonical_order(order, data.x);
  Rng rng(derive_seed(seed, 0, 0x5e1));
  shuffle(order, rng);
  std::vector<bool> is_test(n, false);
  for (int arm : {0, 1}) {
    std::vector<std::size_t> members;
    for (std::size_t i : order) {
      if (data.t[i] == arm) members.push_back(i);
    }
    const auto take = static_cast<std::size_t>(std::lround(test_fraction * members.size()));
    for (std::size_t k = 0; k < take; ++k) is_test[members[k]] = true;
  }
  return is_test;
}

inline std::vector<Contender> default_outcome_contenders(const learners::ForestParams& forest) {
  learners::LearnerSpec rf{learners::LearnerSpec::Kind::kForestRegressor, forest, {}, 1};
  learners::LearnerSpec shallow = rf;
  shallow.forest.max_depth = std::min(forest.max_depth, 6);
  return {{"random_forest", rf}, {"random_forest_depth6", shallow}};
}

inline std::vector<Contender> default_treatment_contenders(const learners::ForestParams& forest,
                                                           const learners::BoostParams& boost) {
  learners::LearnerSpec rf{learners::LearnerSpec::Kind::kForestClassifier, forest, {}, 1};
  learners::LearnerSpec gb{learners::LearnerSpec::Kind::kBoostedClassifier, {}, boost, 1};
  return {{"random_forest", rf}, {"gradient_boosting", gb}};
}

// Overfitting diagnostic for the first-stage learners: R^2 for Y ~ X and F1
// for T ~ X. Within each task the contender with the best train score is
// marked selected.
inline SelectionReport first_stage_selection(const LabeledDataset& data,
                                             const std::vector<Contender>& outcome,
                                             const std::vector<Contender>& treatment,
                                             double test_fraction, int folds, std::uint64_t seed,
                                             int threads = 1) {
  data.validate();
  const auto is_test = holdout_split(data, test_fraction, seed);
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
  for (std::size_t i = 0; i < data.size(); ++i) (is_test[i] ? test_rows : train_rows).push_back(i);
  const LabeledDataset train = data.subset(train_rows);
  const LabeledDataset test = data.subset(test_rows);
  require_both_classes(train.t, "selection training split");
  require_both_classes(test.t, "selection test split");

  SelectionReport report;
  report.n_train = train.size();
  report.n_test = test.size();
  report.folds = folds;
  const auto t_train = train.t_as_double();
  const auto t_test = test.t_as_double();

  auto run = [&](const std::vector<Contender>& list, const std::string& task,
                 std::span<const double> y_train, std::span<const double> y_test,
                 std::uint64_t stream) {
    const std::size_t first = report.rows.size();
    for (std::size_t c = 0; c < list.size(); ++c) {
      learners::LearnerSpec spec = list[c].spec;
      spec.threads = threads;
      const auto metric = spec.is_classifier() ? learners::Metric::kF1 : learners::Metric::kR2;
      const std::uint64_t s = derive_seed(seed, c, stream);
      const auto learner = learners::make_learner(spec);
      SelectionRow row;
      row.task = task;
      row.metric = metric == learners::Metric::kF1 ? "F1" : "R2";
      row.label = list[c].label;
      row.train = learners::cross_validate(learner, metric, train.x, y_train, folds, s).mean;
      const auto predictor = learner(train.x, y_train, derive_seed(s, 1));
      row.test = learners::score(metric, y_test, predictor(test.x));
      report.rows.push_back(row);
    }
    std::size_t best = first;
    for (std::size_t r = first; r < report.rows.size(); ++r) {
      if (report.rows[r].train > report.rows[best].train) best = r;
    }
    if (best < report.rows.size()) report.rows[best].selected = true;
  };
  run(outcome, "Y ~ X", train.y, test.y, 0x51);
  run(treatment, "T ~ X", t_train, t_test, 0x52);
  return report;
}

}  // namespace cropdml::causal
