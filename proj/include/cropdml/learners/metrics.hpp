#pragma once

#include <span>

#include "cropdml/error.hpp"

namespace cropdml::learners {

// 1 - SS_res / SS_tot, SS_tot around the population mean of y.
inline double r2_score(std::span<const double> y, std::span<const double> y_hat) {
  require(y.size() == y_hat.size() && !y.empty(), ErrorCode::kInvalidArgument,
          "r2_score needs equal, nonempty inputs");
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double ss_tot = 0.0;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_tot += (y[i] - mean) * (y[i] - mean);
    ss_res += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
  }
  require(ss_tot > 0.0, ErrorCode::kNumerical, "r2_score undefined for constant y");
  return 1.0 - ss_res / ss_tot;
}

// F1 of the positive class; 0 when precision + recall is 0.
inline double f1_score(std::span<const int> t, std::span<const int> t_hat) {
  require(t.size() == t_hat.size() && !t.empty(), ErrorCode::kInvalidArgument,
          "f1_score needs equal, nonempty inputs");
  double tp = 0.0;
  double fp = 0.0;
  double fn = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    require((t[i] == 0 || t[i] == 1) && (t_hat[i] == 0 || t_hat[i] == 1),
            ErrorCode::kInvalidArgument, "f1_score needs binary inputs");
    if (t[i] == 1 && t_hat[i] == 1) tp += 1.0;
    if (t[i] == 0 && t_hat[i] == 1) fp += 1.0;
    if (t[i] == 1 && t_hat[i] == 0) fn += 1.0;
  }
  const double precision = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
  const double recall = tp + fn > 0.0 ? tp / (tp + fn) : 0.0;
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

inline double accuracy(std::span<const int> t, std::span<const int> t_hat) {
  require(t.size() == t_hat.size() && !t.empty(), ErrorCode::kInvalidArgument,
          "accuracy needs equal, nonempty inputs");
  double hits = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) hits += t[i] == t_hat[i] ? 1.0 : 0.0;
  return hits / static_cast<double>(t.size());
}

}  // namespace cropdml::learners
