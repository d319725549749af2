#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cropdml/core.hpp"
#include "cropdml/csv.hpp"
#include "cropdml/learners/cv.hpp"

namespace cropdml::causal {

using learners::Learner;
using learners::LearnerSpec;

// Two-sided 95% normal quantile.
inline constexpr double kZ95 = 1.959963984540054;

struct EffectEstimate {
  double point = 0.0;
  double std_error = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double p_value = 1.0;
};

// Normal-approximation inference for a point estimate with standard error.
inline EffectEstimate make_estimate(double point, double std_error) {
  EffectEstimate e;
  e.point = point;
  e.std_error = std_error;
  e.ci_low = point - kZ95 * std_error;
  e.ci_high = point + kZ95 * std_error;
  if (std_error > 0.0) {
    e.p_value = std::erfc(std::abs(point / std_error) / std::sqrt(2.0));
  } else {
    e.p_value = point == 0.0 ? 1.0 : 0.0;
  }
  return e;
}

// ---------------------------------------------------------------------------
// Propensity scores and overlap trimming.

struct PropensityResult {
  std::vector<double> scores;
  std::vector<int> fold_id;
};

inline void require_both_classes(std::span<const int> t, const std::string& where) {
  const auto treated = std::count(t.begin(), t.end(), 1);
  if (treated == 0 || treated == static_cast<std::ptrdiff_t>(t.size())) {
    fail(ErrorCode::kDegenerateTreatment, "treatment has a single class",
         {{"where", where}, {"rows", std::to_string(t.size())},
          {"treated", std::to_string(treated)}});
  }
}

// Out-of-fold P(T=1|X) from the boosted classifier: each row is scored by a
// model fitted on the other folds (treatment-stratified).
inline PropensityResult estimate_propensity(const FeatureMatrix& x, std::span<const int> t,
                                            const learners::BoostParams& params, int folds,
                                            std::uint64_t seed, int threads = 1) {
  require(t.size() == x.rows(), ErrorCode::kInvalidArgument, "T length differs from X rows");
  require_both_classes(t, "propensity");
  PropensityResult out;
  out.fold_id = learners::assign_folds(x.rows(), folds, derive_seed(seed, 0, 0x9e0),
                                       t, x.row_ids());
  out.scores.assign(x.rows(), 0.0);
  parallel_for(static_cast<std::size_t>(folds), threads, [&](std::size_t f) {
    auto [held, train] = learners::split_by_fold(out.fold_id, static_cast<int>(f));
    learners::canonical_order(train, x);
    std::vector<double> t_train;
    std::vector<int> t_check;
    for (std::size_t i : train) {
      t_train.push_back(static_cast<double>(t[i]));
      t_check.push_back(t[i]);
    }
    require_both_classes(t_check, "propensity fold " + std::to_string(f));
    const auto model = learners::fit_gradient_boosted_classifier(
        x.select_rows(train), t_train, params, derive_seed(seed, f, 0x9e1));
    for (std::size_t i : held) out.scores[i] = model.predict(x.row(i));
  });
  return out;
}

struct TrimReport {
  double lo = 0.2;
  double hi = 0.8;
  std::size_t input_total = 0;
  std::size_t kept_total = 0;
  std::size_t kept_treated = 0;
  std::size_t kept_control = 0;
  std::size_t removed_treated = 0;
  std::size_t removed_control = 0;
  std::vector<std::size_t> kept_indices;

  std::size_t removed_total() const { return removed_treated + removed_control; }
};

struct TrimResult {
  LabeledDataset data;  // retained rows, propensity attached
  TrimReport report;
};

// Keeps rows with lo <= score <= hi.
inline TrimResult trim_overlap(const LabeledDataset& data, std::span<const double> scores,
                               double lo = 0.2, double hi = 0.8) {
  data.validate();
  require(scores.size() == data.size(), ErrorCode::kInvalidArgument,
          "propensity scores not aligned with rows");
  require(0.0 <= lo && lo <= hi && hi <= 1.0, ErrorCode::kInvalidArgument,
          "trim bounds must satisfy 0 <= lo <= hi <= 1");
  TrimResult out;
  auto& r = out.report;
  r.lo = lo;
  r.hi = hi;
  r.input_total = data.size();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const bool keep = lo <= scores[i] && scores[i] <= hi;
    const bool treated = data.t[i] == 1;
    if (keep) {
      r.kept_indices.push_back(i);
      ++(treated ? r.kept_treated : r.kept_control);
    } else {
      ++(treated ? r.removed_treated : r.removed_control);
    }
  }
  r.kept_total = r.kept_indices.size();
  if (r.kept_total == 0) {
    fail(ErrorCode::kNoOverlap, "no overlap region: every row was trimmed",
         {{"lo", csv::format_double(lo)}, {"hi", csv::format_double(hi)}});
  }
  LabeledDataset with_scores = data;
  with_scores.propensity = std::vector<double>(scores.begin(), scores.end());
  out.data = with_scores.subset(r.kept_indices);
  return out;
}

// ---------------------------------------------------------------------------
// Cross-fitted first stage.

struct ResidualSet {
  std::vector<double> y_res;
  std::vector<double> t_res;
  std::vector<double> y_hat;
  std::vector<double> t_hat;
  std::vector<int> fold_id;

  std::size_t size() const { return y_res.size(); }
};

struct CrossFitConfig {
  int folds = 3;
  Learner outcome_learner;    // Y ~ X
  Learner treatment_learner;  // T ~ X, probability output
  int threads = 1;            // across folds
};

inline CrossFitConfig default_cross_fit(int folds = 3, int threads = 1) {
  LearnerSpec y_spec;
  y_spec.kind = LearnerSpec::Kind::kForestRegressor;
  y_spec.threads = threads;
  LearnerSpec t_spec;
  t_spec.kind = LearnerSpec::Kind::kForestClassifier;
  t_spec.threads = threads;
  return {folds, learners::make_learner(y_spec), learners::make_learner(t_spec), 1};
}

// For every fold, fits Y~X and T~X on the remaining folds (rows in canonical
// order) and residualizes the held-out rows.
inline ResidualSet cross_fit_residuals(const LabeledDataset& data, const CrossFitConfig& config,
                                       std::uint64_t seed) {
  data.validate();
  require(config.folds >= 2, ErrorCode::kInvalidArgument, "cross-fitting needs k >= 2");
  require(static_cast<bool>(config.outcome_learner) && static_cast<bool>(config.treatment_learner),
          ErrorCode::kInvalidArgument, "cross-fitting learners not set");
  ResidualSet out;
  const std::size_t n = data.size();
  out.fold_id = learners::assign_folds(n, config.folds, derive_seed(seed, 0, 0xcf0), data.t,
                                       data.x.row_ids());
  out.y_hat.assign(n, 0.0);
  out.t_hat.assign(n, 0.0);
  parallel_for(static_cast<std::size_t>(config.folds), config.threads, [&](std::size_t f) {
    auto [held, train] = learners::split_by_fold(out.fold_id, static_cast<int>(f));
    learners::canonical_order(train, data.x);
    std::vector<double> y_train;
    std::vector<double> t_train;
    std::size_t treated = 0;
    for (std::size_t i : train) {
      y_train.push_back(data.y[i]);
      t_train.push_back(static_cast<double>(data.t[i]));
      treated += static_cast<std::size_t>(data.t[i]);
    }
    if (treated == 0 || treated == train.size()) {
      fail(ErrorCode::kDegenerateTreatment,
           "a cross-fitting training fold has a single treatment class; use fewer folds or more rows",
           {{"fold", std::to_string(f)}});
    }
    const FeatureMatrix x_train = data.x.select_rows(train);
    const FeatureMatrix x_held = data.x.select_rows(held);
    const auto y_model = config.outcome_learner(x_train, y_train, derive_seed(seed, f, 0xcf1));
    const auto t_model = config.treatment_learner(x_train, t_train, derive_seed(seed, f, 0xcf2));
    const auto y_pred = y_model(x_held);
    const auto t_pred = t_model(x_held);
    for (std::size_t k = 0; k < held.size(); ++k) {
      out.y_hat[held[k]] = y_pred[k];
      out.t_hat[held[k]] = t_pred[k];
    }
  });
  out.y_res.resize(n);
  out.t_res.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.y_res[i] = data.y[i] - out.y_hat[i];
    out.t_res[i] = static_cast<double>(data.t[i]) - out.t_hat[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear final stage: theta(x) = intercept + <beta, x> over standardized x.

struct LinearCateModel {
  std::vector<std::string> column_names;
  double intercept = 0.0;
  std::vector<double> beta;
  Eigen::MatrixXd covariance;  // over (intercept, beta)
  Scaler scaler;
  std::size_t n_obs = 0;

  std::size_t dim() const { return beta.size(); }

  // Point and delta-method SE at a standardized covariate vector.
  EffectEstimate effect_at(std::span<const double> z) const {
    require(z.size() == beta.size(), ErrorCode::kInvalidArgument,
            "covariate vector has wrong dimension",
            {{"expected", std::to_string(beta.size())}, {"got", std::to_string(z.size())}});
    Eigen::VectorXd v(static_cast<Eigen::Index>(z.size() + 1));
    v(0) = 1.0;
    double point = intercept;
    for (std::size_t j = 0; j < z.size(); ++j) {
      v(static_cast<Eigen::Index>(j + 1)) = z[j];
      point += beta[j] * z[j];
    }
    const double var = v.dot(covariance * v);
    return make_estimate(point, std::sqrt(std::max(0.0, var)));
  }
};

// theta(x_raw): standardizes with the stored scaler first.
inline EffectEstimate cate(const LinearCateModel& model, std::span<const double> x_raw) {
  return model.effect_at(model.scaler.transform_row(x_raw));
}

// Per-row CATE for a standardized matrix.
inline std::vector<EffectEstimate> cate_standardized(const LinearCateModel& model,
                                                     const FeatureMatrix& z) {
  std::vector<EffectEstimate> out;
  out.reserve(z.rows());
  for (std::size_t r = 0; r < z.rows(); ++r) out.push_back(model.effect_at(z.row(r)));
  return out;
}

// Average effect over a standardized population: theta at the mean covariate
// vector (equal to the mean CATE by linearity).
inline EffectEstimate ate(const LinearCateModel& model, const FeatureMatrix& z) {
  require(z.rows() > 0, ErrorCode::kInvalidArgument, "ATE over an empty population");
  require(z.cols() == model.dim(), ErrorCode::kInvalidArgument,
          "population has wrong column count");
  std::vector<double> mean_z(z.cols(), 0.0);
  for (std::size_t r = 0; r < z.rows(); ++r) {
    for (std::size_t c = 0; c < z.cols(); ++c) mean_z[c] += z(r, c);
  }
  for (auto& v : mean_z) v /= static_cast<double>(z.rows());
  return model.effect_at(mean_z);
}

struct AteSummary {
  EffectEstimate estimate;
  double mean_outcome = 0.0;
  double percent_of_mean_outcome = 0.0;
  std::size_t n = 0;
};

inline AteSummary summarize_ate(const LinearCateModel& model, const FeatureMatrix& z,
                                std::span<const double> y) {
  AteSummary s;
  s.estimate = ate(model, z);
  s.mean_outcome = mean(y);
  s.percent_of_mean_outcome =
      s.mean_outcome != 0.0 ? 100.0 * s.estimate.point / s.mean_outcome : 0.0;
  s.n = z.rows();
  return s;
}

// Least squares of Ytilde on z_i = Ttilde_i * [1, x_i] through a
// column-pivoted QR, with the HC1 sandwich
//   M^-1 (sum u_i^2 z_i z_i^T) M^-1 * n / (n - k),  M = Z^T Z, k = p + 1.
inline LinearCateModel fit_linear_cate(const ResidualSet& residuals, const FeatureMatrix& x,
                                       const Scaler& scaler) {
  const std::size_t n = residuals.size();
  const std::size_t p = x.cols();
  const std::size_t k = p + 1;
  require(residuals.t_res.size() == n && x.rows() == n, ErrorCode::kInvalidArgument,
          "residuals are not aligned with X");
  require(n > k, ErrorCode::kInvalidArgument, "final stage needs n > p + 1",
          {{"n", std::to_string(n)}, {"p", std::to_string(p)}});
  Eigen::MatrixXd design(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  Eigen::VectorXd target(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    design(r, 0) = residuals.t_res[i];
    for (std::size_t j = 0; j < p; ++j) {
      design(r, static_cast<Eigen::Index>(j + 1)) = residuals.t_res[i] * x(i, j);
    }
    target(r) = residuals.y_res[i];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  const auto rank = static_cast<std::size_t>(qr.rank());
  if (rank < k) {
    std::string collinear;
    const auto& perm = qr.colsPermutation().indices();
    for (std::size_t j = rank; j < k; ++j) {
      const int col = perm(static_cast<Eigen::Index>(j));
      if (!collinear.empty()) collinear += ",";
      collinear += col == 0 ? std::string("intercept") : x.column_names()[col - 1];
    }
    fail(ErrorCode::kNumerical, "final-stage design is rank deficient",
         {{"rank", std::to_string(rank)}, {"columns", std::to_string(k)},
          {"collinear_columns", collinear}});
  }
  const Eigen::VectorXd coef = qr.solve(target);
  const Eigen::VectorXd u = target - design * coef;

  // (Z^T Z)^-1 = P R^-1 R^-T P^T for Z P = Q R.
  const auto kk = static_cast<Eigen::Index>(k);
  const Eigen::MatrixXd r_upper =
      qr.matrixR().topLeftCorner(kk, kk).template triangularView<Eigen::Upper>();
  const Eigen::MatrixXd r_inv = r_upper.template triangularView<Eigen::Upper>().solve(
      Eigen::MatrixXd::Identity(kk, kk));
  const Eigen::MatrixXd perm = qr.colsPermutation();
  const Eigen::MatrixXd bread = perm * (r_inv * r_inv.transpose()) * perm.transpose();
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(kk, kk);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::VectorXd zi = design.row(static_cast<Eigen::Index>(i)).transpose();
    const double ui = u(static_cast<Eigen::Index>(i));
    meat.noalias() += (ui * ui) * (zi * zi.transpose());
  }
  Eigen::MatrixXd cov = bread * meat * bread;
  cov *= static_cast<double>(n) / static_cast<double>(n - k);
  cov = 0.5 * (cov + cov.transpose());

  LinearCateModel model;
  model.column_names = x.column_names();
  model.intercept = coef(0);
  model.beta.resize(p);
  for (std::size_t j = 0; j < p; ++j) model.beta[j] = coef(static_cast<Eigen::Index>(j + 1));
  model.covariance = std::move(cov);
  model.scaler = scaler;
  model.n_obs = n;
  return model;
}

inline double euclidean_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// max_j |sum_i z_ij u_i| of the final stage; zero at the exact LS solution.
inline double normal_equation_residual(const LinearCateModel& model, const ResidualSet& residuals,
                                       const FeatureMatrix& x) {
  const std::size_t p = x.cols();
  std::vector<double> grad(p + 1, 0.0);
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    const double theta = model.effect_at(x.row(i)).point;
    const double u = residuals.y_res[i] - theta * residuals.t_res[i];
    grad[0] += residuals.t_res[i] * u;
    for (std::size_t j = 0; j < p; ++j) grad[j + 1] += residuals.t_res[i] * x(i, j) * u;
  }
  double worst = 0.0;
  for (double g : grad) worst = std::max(worst, std::abs(g));
  return worst;
}

// ---------------------------------------------------------------------------
// Full estimator: propensity -> trimming -> cross-fitting -> final stage.

struct DmlConfig {
  int folds = 3;
  double trim_lo = 0.2;
  double trim_hi = 0.8;
  learners::BoostParams propensity;
  LearnerSpec outcome{LearnerSpec::Kind::kForestRegressor, {}, {}, 1};
  LearnerSpec treatment{LearnerSpec::Kind::kForestClassifier, {}, {}, 1};
  int threads = 1;
};

struct DmlResult {
  PropensityResult propensity;
  TrimResult trimmed;
  ResidualSet residuals;
  LinearCateModel model;
  AteSummary ate;
};

inline DmlResult run_dml(const LabeledDataset& data, const Scaler& scaler, const DmlConfig& config,
                         std::uint64_t seed) {
  DmlResult out;
  out.propensity = estimate_propensity(data.x, data.t, config.propensity, config.folds,
                                       derive_seed(seed, 1), config.threads);
  out.trimmed = trim_overlap(data, out.propensity.scores, config.trim_lo, config.trim_hi);
  require_both_classes(out.trimmed.data.t, "trimmed dataset");
  LearnerSpec y_spec = config.outcome;
  LearnerSpec t_spec = config.treatment;
  y_spec.threads = config.threads;
  t_spec.threads = config.threads;
  CrossFitConfig cf{config.folds, learners::make_learner(y_spec), learners::make_learner(t_spec), 1};
  out.residuals = cross_fit_residuals(out.trimmed.data, cf, derive_seed(seed, 2));
  out.model = fit_linear_cate(out.residuals, out.trimmed.data.x, scaler);
  out.ate = summarize_ate(out.model, out.trimmed.data.x, out.trimmed.data.y);
  return out;
}

}  // namespace cropdml::causal
