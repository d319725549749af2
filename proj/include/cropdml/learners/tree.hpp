#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "cropdml/core.hpp"
#include "cropdml/error.hpp"
#include "cropdml/parallel.hpp"

namespace cropdml::learners {

enum class Task { kRegression, kClassification };

struct TreeParams {
  int max_depth = 12;
  int min_leaf_size = 5;
  int max_features = 0;  // 0: all features

  void validate(std::size_t n_features) const {
    require(max_depth >= 0, ErrorCode::kInvalidArgument, "max_depth must be >= 0");
    require(min_leaf_size >= 1, ErrorCode::kInvalidArgument, "min_leaf_size must be >= 1");
    require(max_features >= 0 && static_cast<std::size_t>(max_features) <= n_features,
            ErrorCode::kInvalidArgument, "max_features outside [0, n_features]");
  }
};

// Flat node storage. Internal nodes route x[feature] <= threshold to `left`.
// Leaves have feature == -1. `value` is the mean target of the node's
// training rows (the class-1 fraction for classification).
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
  int count = 0;

  bool is_leaf() const { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

class DecisionTree {
 public:
  DecisionTree() = default;
  explicit DecisionTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  std::vector<TreeNode>& mutable_nodes() { return nodes_; }

  int leaf_index(std::span<const double> x) const {
    int i = 0;
    while (!nodes_[i].is_leaf()) {
      const TreeNode& n = nodes_[i];
      i = x[n.feature] <= n.threshold ? n.left : n.right;
    }
    return i;
  }

  double predict(std::span<const double> x) const { return nodes_[leaf_index(x)].value; }

  // Number of internal nodes on the longest root-to-leaf path.
  int depth() const { return nodes_.empty() ? 0 : depth_from(0); }

  std::size_t leaf_count() const {
    return static_cast<std::size_t>(std::count_if(
        nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.is_leaf(); }));
  }

  bool operator==(const DecisionTree&) const = default;

 private:
  int depth_from(int i) const {
    const TreeNode& n = nodes_[i];
    if (n.is_leaf()) return 0;
    return 1 + std::max(depth_from(n.left), depth_from(n.right));
  }

  std::vector<TreeNode> nodes_;
};

struct SplitCandidate {
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;

  bool valid() const { return feature >= 0; }
};

// A later candidate replaces the incumbent only if its gain is larger by more
// than round-off, so ties keep the lowest feature index, then the lowest
// threshold.
inline bool improves(double gain, double best) {
  return gain > best + 1e-12 * std::max(1.0, std::abs(best));
}

// Midpoint of two consecutive distinct sorted values, kept strictly below hi.
inline double split_midpoint(double lo, double hi) {
  const double mid = 0.5 * (lo + hi);
  return mid < hi ? mid : lo;
}

// Column-major copy of X plus, per column, the row order sorted by
// (value, row index). Built once and shared by every tree of a forest.
class SortedColumns {
 public:
  explicit SortedColumns(const FeatureMatrix& x) : rows_(x.rows()) {
    require(x.rows() < std::numeric_limits<std::uint32_t>::max(), ErrorCode::kInvalidArgument,
            "too many rows");
    columns_.resize(x.cols());
    order_.resize(x.cols());
    for (std::size_t f = 0; f < x.cols(); ++f) {
      columns_[f] = x.column(f);
      auto& ord = order_[f];
      ord.resize(x.rows());
      std::iota(ord.begin(), ord.end(), 0u);
      const auto& col = columns_[f];
      std::sort(ord.begin(), ord.end(), [&](std::uint32_t a, std::uint32_t b) {
        return col[a] < col[b] || (col[a] == col[b] && a < b);
      });
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return columns_.size(); }
  const std::vector<double>& column(std::size_t f) const { return columns_[f]; }
  const std::vector<std::uint32_t>& order(std::size_t f) const { return order_[f]; }

 private:
  std::size_t rows_ = 0;
  std::vector<std::vector<double>> columns_;
  std::vector<std::vector<std::uint32_t>> order_;
};

namespace detail {

// Greedy CART on a multiset of rows. Samples (one per row occurrence) are
// kept, per feature, in (value, row) order; a node owns the same index range
// in every feature's order and children are produced by stable partitioning.
class TreeBuilder {
 public:
  TreeBuilder(const SortedColumns& cols, std::span<const double> targets, Task task,
              const TreeParams& params, Rng& rng)
      : cols_(cols), targets_(targets), task_(task), params_(params), rng_(rng) {}

  std::vector<TreeNode> build(std::vector<std::size_t> rows) {
    std::sort(rows.begin(), rows.end());
    const std::size_t m = rows.size();
    std::vector<std::uint32_t> first(cols_.rows(), 0);
    std::vector<std::uint32_t> mult(cols_.rows(), 0);
    sample_row_.resize(m);
    sample_y_.resize(m);
    for (std::size_t s = 0; s < m; ++s) {
      const std::size_t r = rows[s];
      if (mult[r] == 0) first[r] = static_cast<std::uint32_t>(s);
      ++mult[r];
      sample_row_[s] = static_cast<std::uint32_t>(r);
      sample_y_[s] = targets_[r];
    }
    order_.assign(cols_.cols(), {});
    for (std::size_t f = 0; f < cols_.cols(); ++f) {
      auto& ord = order_[f];
      ord.reserve(m);
      for (std::uint32_t r : cols_.order(f)) {
        for (std::uint32_t c = 0; c < mult[r]; ++c) ord.push_back(first[r] + c);
      }
    }
    goes_left_.assign(m, 0);
    buffer_.resize(m);
    grow(0, m, 0);
    return std::move(nodes_);
  }

 private:
  std::vector<int> sample_features() {
    const int p = static_cast<int>(cols_.cols());
    const int m = params_.max_features == 0 ? p : params_.max_features;
    std::vector<int> all(p);
    std::iota(all.begin(), all.end(), 0);
    if (m < p) {
      for (int i = 0; i < m; ++i) {
        const std::size_t j = i + uniform_index(rng_, static_cast<std::size_t>(p - i));
        std::swap(all[i], all[j]);
      }
      all.resize(m);
      std::sort(all.begin(), all.end());
    }
    return all;
  }

  // Regression gain: reduction of the sum of squared deviations (targets
  // centred on the node mean). Classification gain: reduction of the
  // count-weighted Gini impurity.
  SplitCandidate scan(int f, std::size_t lo, std::size_t hi, double centre, double total) const {
    SplitCandidate best;
    const auto& col = cols_.column(static_cast<std::size_t>(f));
    const std::uint32_t* ord = order_[static_cast<std::size_t>(f)].data();
    const std::size_t n = hi - lo;
    const double nd = static_cast<double>(n);
    const std::size_t min_leaf = static_cast<std::size_t>(params_.min_leaf_size);
    const double parent_gini =
        task_ == Task::kClassification ? 2.0 * total * (nd - total) / nd : 0.0;
    double left_sum = 0.0;
    double x_cur = col[sample_row_[ord[lo]]];
    for (std::size_t k = 0; k + 1 < n; ++k) {
      const std::uint32_t s = ord[lo + k];
      left_sum += sample_y_[s] - centre;
      const double x_next = col[sample_row_[ord[lo + k + 1]]];
      const double x_here = x_cur;
      x_cur = x_next;
      if (x_here == x_next) continue;
      const std::size_t nl = k + 1;
      const std::size_t nr = n - nl;
      if (nl < min_leaf) continue;
      if (nr < min_leaf) break;
      const double nld = static_cast<double>(nl);
      const double nrd = static_cast<double>(nr);
      double gain;
      if (task_ == Task::kRegression) {
        const double right_sum = total - left_sum;
        gain = left_sum * left_sum / nld + right_sum * right_sum / nrd - total * total / nd;
      } else {
        const double r1 = total - left_sum;
        gain = parent_gini - 2.0 * left_sum * (nld - left_sum) / nld -
               2.0 * r1 * (nrd - r1) / nrd;
      }
      if (!best.valid() || improves(gain, best.gain)) {
        best = {f, split_midpoint(x_here, x_next), gain};
      }
    }
    return best;
  }

  int grow(std::size_t lo, std::size_t hi, int depth) {
    const int index = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    const std::size_t n = hi - lo;
    const std::uint32_t* ord0 = order_[0].data();
    double sum = 0.0;
    bool pure = true;
    const double y0 = sample_y_[ord0[lo]];
    for (std::size_t k = lo; k < hi; ++k) {
      const double y = sample_y_[ord0[k]];
      sum += y;
      pure = pure && y == y0;
    }
    nodes_[index].value = sum / static_cast<double>(n);
    nodes_[index].count = static_cast<int>(n);

    if (depth >= params_.max_depth || n < 2 * static_cast<std::size_t>(params_.min_leaf_size) ||
        pure) {
      return index;
    }
    const double centre = task_ == Task::kRegression ? sum / static_cast<double>(n) : 0.0;
    double total = 0.0;
    if (task_ == Task::kRegression) {
      for (std::size_t k = lo; k < hi; ++k) total += sample_y_[ord0[k]] - centre;
    } else {
      total = sum;
    }
    SplitCandidate best;
    for (int f : sample_features()) {
      const SplitCandidate c = scan(f, lo, hi, centre, total);
      if (c.valid() && (!best.valid() || improves(c.gain, best.gain))) best = c;
    }
    if (!best.valid() || !(best.gain > 0.0)) return index;

    const auto& col = cols_.column(static_cast<std::size_t>(best.feature));
    std::size_t n_left = 0;
    for (std::size_t k = lo; k < hi; ++k) {
      const std::uint32_t s = ord0[k];
      goes_left_[s] = col[sample_row_[s]] <= best.threshold ? 1 : 0;
      n_left += goes_left_[s];
    }
    for (auto& ord : order_) {
      std::size_t l = lo;
      std::size_t r = 0;
      for (std::size_t k = lo; k < hi; ++k) {
        const std::uint32_t s = ord[k];
        if (goes_left_[s]) {
          ord[l++] = s;
        } else {
          buffer_[r++] = s;
        }
      }
      std::copy(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(r),
                ord.begin() + static_cast<std::ptrdiff_t>(l));
    }
    nodes_[index].feature = best.feature;
    nodes_[index].threshold = best.threshold;
    const int left = grow(lo, lo + n_left, depth + 1);
    const int right = grow(lo + n_left, hi, depth + 1);
    nodes_[index].left = left;
    nodes_[index].right = right;
    return index;
  }

  const SortedColumns& cols_;
  std::span<const double> targets_;
  Task task_;
  const TreeParams& params_;
  Rng& rng_;
  std::vector<TreeNode> nodes_;
  std::vector<std::vector<std::uint32_t>> order_;
  std::vector<std::uint32_t> sample_row_;
  std::vector<double> sample_y_;
  std::vector<std::uint8_t> goes_left_;
  std::vector<std::uint32_t> buffer_;
};

}  // namespace detail

// Greedy CART over `rows` (all rows when empty; duplicates allowed, as in a
// bootstrap sample). Each node draws max_features candidate features and
// splits at the midpoint between consecutive distinct values.
inline DecisionTree fit_tree(const SortedColumns& cols, std::span<const double> targets, Task task,
                             const TreeParams& params, Rng& rng,
                             std::vector<std::size_t> rows = {}) {
  require(targets.size() == cols.rows(), ErrorCode::kInvalidArgument,
          "targets length differs from X rows");
  params.validate(cols.cols());
  require(cols.cols() > 0, ErrorCode::kInvalidArgument, "cannot fit a tree without features");
  if (rows.empty()) {
    rows.resize(cols.rows());
    std::iota(rows.begin(), rows.end(), 0);
  }
  require(!rows.empty(), ErrorCode::kInvalidArgument, "cannot fit a tree on zero rows");
  for (std::size_t r : rows) {
    require(r < cols.rows(), ErrorCode::kInvalidArgument, "row index out of range");
    if (task == Task::kClassification) {
      require(targets[r] == 0.0 || targets[r] == 1.0, ErrorCode::kInvalidArgument,
              "classification targets must be 0 or 1");
    } else {
      require(std::isfinite(targets[r]), ErrorCode::kInvalidArgument, "non-finite target");
    }
  }
  detail::TreeBuilder builder(cols, targets, task, params, rng);
  return DecisionTree(builder.build(std::move(rows)));
}

inline DecisionTree fit_tree(const FeatureMatrix& x, std::span<const double> targets, Task task,
                             const TreeParams& params, Rng& rng,
                             std::vector<std::size_t> rows = {}) {
  require(!x.empty(), ErrorCode::kInvalidArgument, "cannot fit a tree on an empty matrix");
  return fit_tree(SortedColumns(x), targets, task, params, rng, std::move(rows));
}

}  // namespace cropdml::learners
