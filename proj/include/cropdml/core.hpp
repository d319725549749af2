#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cropdml/error.hpp"

namespace cropdml {

// The nine environmental covariates of the canonical pipeline.
inline const std::vector<std::string>& covariate_names() {
  static const std::vector<std::string> names = {
      "ws", "ppt", "q", "def", "srad", "tmin", "tmax", "soilm", "soile"};
  return names;
}

// Dense row-major matrix of finite reals with named columns and opaque row
// identifiers.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;

  // Throws kSchema on duplicate names or shape mismatch and
  // kInvalidArgument on a non-finite value (details carry row and column).
  // Empty row_ids are replaced by "0", "1", ...
  FeatureMatrix(std::vector<std::string> column_names, std::size_t rows,
                std::vector<double> values,
                std::vector<std::string> row_ids = {})
      : names_(std::move(column_names)),
        rows_(rows),
        values_(std::move(values)),
        row_ids_(std::move(row_ids)) {
    std::set<std::string> seen;
    for (const auto& n : names_) {
      require(seen.insert(n).second, ErrorCode::kSchema,
              "duplicate column name", {{"column", n}});
    }
    require(values_.size() == rows_ * names_.size(), ErrorCode::kSchema,
            "value count does not match rows x columns");
    if (row_ids_.empty()) {
      row_ids_.reserve(rows_);
      for (std::size_t i = 0; i < rows_; ++i) row_ids_.push_back(std::to_string(i));
    }
    require(row_ids_.size() == rows_, ErrorCode::kSchema,
            "row id count does not match rows");
    for (std::size_t r = 0; r < rows_; ++r) {
      for (std::size_t c = 0; c < names_.size(); ++c) {
        if (!std::isfinite((*this)(r, c))) {
          fail(ErrorCode::kInvalidArgument, "non-finite feature value",
               {{"row", std::to_string(r)}, {"column", names_[c]}});
        }
      }
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return names_.size(); }
  bool empty() const { return rows_ == 0 || names_.empty(); }

  double operator()(std::size_t r, std::size_t c) const {
    return values_[r * names_.size() + c];
  }
  std::span<const double> row(std::size_t r) const {
    return {values_.data() + r * names_.size(), names_.size()};
  }
  std::vector<double> column(std::size_t c) const {
    std::vector<double> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
  }

  const std::vector<std::string>& column_names() const { return names_; }
  const std::vector<std::string>& row_ids() const { return row_ids_; }
  const std::vector<double>& values() const { return values_; }

  std::optional<std::size_t> column_index(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - names_.begin());
  }

  FeatureMatrix select_rows(std::span<const std::size_t> indices) const {
    std::vector<double> values;
    values.reserve(indices.size() * cols());
    std::vector<std::string> ids;
    ids.reserve(indices.size());
    for (std::size_t i : indices) {
      auto r = row(i);
      values.insert(values.end(), r.begin(), r.end());
      ids.push_back(row_ids_[i]);
    }
    FeatureMatrix out;
    out.names_ = names_;
    out.rows_ = indices.size();
    out.values_ = std::move(values);
    out.row_ids_ = std::move(ids);
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::size_t rows_ = 0;
  std::vector<double> values_;
  std::vector<std::string> row_ids_;
};

// Per-column affine standardization with population standard deviations.
// Zero-variance columns are flagged and map to 0.
struct Scaler {
  std::vector<std::string> column_names;
  std::vector<double> means;
  std::vector<double> stds;

  bool zero_variance(std::size_t c) const { return !(stds[c] > 0.0); }

  std::vector<std::string> zero_variance_columns() const {
    std::vector<std::string> out;
    for (std::size_t c = 0; c < stds.size(); ++c) {
      if (zero_variance(c)) out.push_back(column_names[c]);
    }
    return out;
  }

  double transform(std::size_t c, double value) const {
    return zero_variance(c) ? 0.0 : (value - means[c]) / stds[c];
  }
  double inverse(std::size_t c, double value) const {
    return zero_variance(c) ? means[c] : value * stds[c] + means[c];
  }

  std::vector<double> transform_row(std::span<const double> raw) const {
    require(raw.size() == means.size(), ErrorCode::kInvalidArgument,
            "covariate vector has wrong dimension",
            {{"expected", std::to_string(means.size())},
             {"got", std::to_string(raw.size())}});
    std::vector<double> out(raw.size());
    for (std::size_t c = 0; c < raw.size(); ++c) out[c] = transform(c, raw[c]);
    return out;
  }

  FeatureMatrix transform(const FeatureMatrix& x) const { return apply(x, false); }
  FeatureMatrix inverse(const FeatureMatrix& x) const { return apply(x, true); }

 private:
  FeatureMatrix apply(const FeatureMatrix& x, bool invert) const {
    require(x.cols() == means.size(), ErrorCode::kInvalidArgument,
            "matrix has wrong column count for scaler");
    std::vector<double> values(x.values().size());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t c = 0; c < x.cols(); ++c) {
        values[r * x.cols() + c] = invert ? inverse(c, x(r, c)) : transform(c, x(r, c));
      }
    }
    return FeatureMatrix(x.column_names(), x.rows(), std::move(values), x.row_ids());
  }
};

struct StandardizeResult {
  FeatureMatrix scaled;
  Scaler scaler;
  std::vector<std::string> zero_variance_columns;
};

inline Scaler fit_scaler(const FeatureMatrix& x) {
  require(!x.empty(), ErrorCode::kInvalidArgument, "cannot standardize an empty matrix");
  Scaler s;
  s.column_names = x.column_names();
  s.means.assign(x.cols(), 0.0);
  s.stds.assign(x.cols(), 0.0);
  const double n = static_cast<double>(x.rows());
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double sum = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) sum += x(r, c);
    const double mean = sum / n;
    double ss = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const double d = x(r, c) - mean;
      ss += d * d;
    }
    s.means[c] = mean;
    s.stds[c] = std::sqrt(ss / n);
  }
  return s;
}

inline StandardizeResult standardize(const FeatureMatrix& x) {
  Scaler scaler = fit_scaler(x);
  FeatureMatrix scaled = scaler.transform(x);
  auto flagged = scaler.zero_variance_columns();
  return {std::move(scaled), std::move(scaler), std::move(flagged)};
}

inline double median(std::span<const double> v) {
  require(!v.empty(), ErrorCode::kInvalidArgument, "median of empty vector");
  std::vector<double> sorted(v.begin(), v.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  return n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
}

struct BinarizeResult {
  std::vector<int> labels;
  double threshold = 0.0;
  std::size_t ties = 0;  // elements equal to the threshold
};

// 1 iff strictly greater than the median; ties go to 0.
inline BinarizeResult median_binarize(std::span<const double> v) {
  require(!v.empty(), ErrorCode::kInvalidArgument, "cannot binarize an empty vector");
  for (std::size_t i = 0; i < v.size(); ++i) {
    require(std::isfinite(v[i]), ErrorCode::kInvalidArgument,
            "non-finite value", {{"index", std::to_string(i)}});
  }
  BinarizeResult out;
  out.threshold = median(v);
  out.labels.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.labels[i] = v[i] > out.threshold ? 1 : 0;
    if (v[i] == out.threshold) ++out.ties;
  }
  return out;
}

template <typename Key>
struct YearlyRecord {
  Key cell;
  int year = 0;
  std::vector<double> values;
};

template <typename Key>
struct AggregatedRecord {
  Key cell;
  std::vector<double> values;
  int years_present = 0;
};

template <typename Key>
struct AggregationResult {
  std::vector<AggregatedRecord<Key>> cells;  // ordered by key
  std::vector<Key> dropped;                  // too many missing years
  std::size_t ignored_rows = 0;              // years outside the study set
};

// Per-cell arithmetic mean over the study years. A cell missing more than
// max_missing_fraction of the years is dropped (default: any missing year).
// Sums run in ascending year order, so the result does not depend on the
// order of the input rows.
template <typename Key>
AggregationResult<Key> temporal_aggregate(std::span<const YearlyRecord<Key>> rows,
                                          std::span<const int> years,
                                          double max_missing_fraction = 0.0) {
  require(!years.empty(), ErrorCode::kInvalidArgument, "year set is empty");
  require(max_missing_fraction >= 0.0 && max_missing_fraction <= 1.0,
          ErrorCode::kInvalidArgument, "max_missing_fraction outside [0,1]");
  const std::set<int> year_set(years.begin(), years.end());
  std::map<Key, std::map<int, const YearlyRecord<Key>*>> by_cell;
  AggregationResult<Key> out;
  std::size_t width = 0;
  bool width_known = false;
  for (const auto& row : rows) {
    if (!width_known) {
      width = row.values.size();
      width_known = true;
    }
    require(row.values.size() == width, ErrorCode::kSchema,
            "records have inconsistent value counts");
    if (!year_set.count(row.year)) {
      ++out.ignored_rows;
      continue;
    }
    auto& slot = by_cell[row.cell][row.year];
    if (slot != nullptr) {
      fail(ErrorCode::kSchema, "duplicate (cell, year) record",
           {{"year", std::to_string(row.year)}});
    }
    slot = &row;
  }
  const double n_years = static_cast<double>(year_set.size());
  for (const auto& [cell, per_year] : by_cell) {
    const double missing = (n_years - static_cast<double>(per_year.size())) / n_years;
    if (missing > max_missing_fraction + 1e-12) {
      out.dropped.push_back(cell);
      continue;
    }
    AggregatedRecord<Key> rec{cell, std::vector<double>(width, 0.0),
                              static_cast<int>(per_year.size())};
    for (const auto& [year, record] : per_year) {
      for (std::size_t c = 0; c < width; ++c) rec.values[c] += record->values[c];
    }
    for (auto& v : rec.values) v /= static_cast<double>(per_year.size());
    out.cells.push_back(std::move(rec));
  }
  return out;
}

// Standardized covariates, outcome, binary treatment and optional propensity.
struct LabeledDataset {
  FeatureMatrix x;
  std::vector<double> y;
  std::vector<int> t;
  std::optional<std::vector<double>> propensity;

  std::size_t size() const { return y.size(); }

  void validate() const {
    require(x.rows() == y.size() && y.size() == t.size(), ErrorCode::kSchema,
            "X, Y and T lengths differ");
    for (std::size_t i = 0; i < t.size(); ++i) {
      require(t[i] == 0 || t[i] == 1, ErrorCode::kSchema, "treatment must be 0 or 1",
              {{"row", std::to_string(i)}});
      require(std::isfinite(y[i]), ErrorCode::kInvalidArgument, "non-finite outcome",
              {{"row", std::to_string(i)}});
    }
    if (propensity) {
      require(propensity->size() == y.size(), ErrorCode::kSchema,
              "propensity length differs from dataset");
    }
  }

  std::size_t treated_count() const {
    return static_cast<std::size_t>(std::count(t.begin(), t.end(), 1));
  }

  LabeledDataset subset(std::span<const std::size_t> indices) const {
    LabeledDataset out;
    out.x = x.select_rows(indices);
    out.y.reserve(indices.size());
    out.t.reserve(indices.size());
    for (std::size_t i : indices) {
      out.y.push_back(y[i]);
      out.t.push_back(t[i]);
    }
    if (propensity) {
      std::vector<double> p;
      p.reserve(indices.size());
      for (std::size_t i : indices) p.push_back((*propensity)[i]);
      out.propensity = std::move(p);
    }
    return out;
  }

  std::vector<double> t_as_double() const { return {t.begin(), t.end()}; }
};

inline double mean(std::span<const double> v) {
  require(!v.empty(), ErrorCode::kInvalidArgument, "mean of empty vector");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace cropdml
