#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cropdml/causal.hpp"
#include "cropdml/core.hpp"

namespace cropdml::synth {

// Treatment effect theta(x) over raw covariates.
struct ThetaForm {
  enum class Kind { kConstant, kLinear, kNonlinear };
  Kind kind = Kind::kConstant;
  double intercept = 0.0;
  std::vector<double> slopes;  // linear: missing entries are 0
  std::string name;            // nonlinear: "step" or "sine"

  static ThetaForm constant(double c) { return {Kind::kConstant, c, {}, {}}; }
  static ThetaForm linear(double a, std::vector<double> b) {
    return {Kind::kLinear, a, std::move(b), {}};
  }
  static ThetaForm nonlinear(std::string name, double a = 0.0) {
    return {Kind::kNonlinear, a, {}, std::move(name)};
  }

  double operator()(std::span<const double> x) const {
    switch (kind) {
      case Kind::kConstant: return intercept;
      case Kind::kLinear: {
        double v = intercept;
        for (std::size_t j = 0; j < slopes.size() && j < x.size(); ++j) v += slopes[j] * x[j];
        return v;
      }
      case Kind::kNonlinear:
        if (name == "step") return intercept + (x[0] > 0.0 ? 1.0 : 0.0);
        return intercept + std::sin(x[0]);
    }
    return 0.0;
  }
};

// g(x): "default" 5 sin(x1) + 2 x2^2 + x3, "zero", "linear" x1 + x2 + x3.
// f(x): "default" x1 - 0.5 x2, "zero", "x1" x1.
struct DgpSpec {
  std::size_t n = 2000;
  std::size_t p = 5;
  ThetaForm theta = ThetaForm::constant(0.0);
  std::string g_form = "default";
  std::string f_form = "default";
  double f_scale = 1.0;
  double noise_sd = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    require(n >= 2, ErrorCode::kInvalidArgument, "DGP needs n >= 2");
    require(p >= 1, ErrorCode::kInvalidArgument, "DGP needs p >= 1");
    require(noise_sd >= 0.0 && std::isfinite(noise_sd), ErrorCode::kInvalidArgument,
            "noise_sd must be finite and >= 0");
    require(std::isfinite(f_scale), ErrorCode::kInvalidArgument, "f_scale must be finite");
    require(g_form == "default" || g_form == "zero" || g_form == "linear",
            ErrorCode::kInvalidArgument, "unknown g form", {{"g_form", g_form}});
    require(f_form == "default" || f_form == "zero" || f_form == "x1",
            ErrorCode::kInvalidArgument, "unknown f form", {{"f_form", f_form}});
    if (g_form != "zero") {
      require(p >= 3, ErrorCode::kInvalidArgument, "g form needs p >= 3");
    }
    if (f_form == "default") require(p >= 2, ErrorCode::kInvalidArgument, "f form needs p >= 2");
    if (theta.kind == ThetaForm::Kind::kLinear) {
      require(theta.slopes.size() <= p, ErrorCode::kInvalidArgument, "more slopes than covariates");
    }
    if (theta.kind == ThetaForm::Kind::kNonlinear) {
      require(theta.name == "step" || theta.name == "sine", ErrorCode::kInvalidArgument,
              "unknown nonlinear theta", {{"name", theta.name}});
    }
  }

  double g(std::span<const double> x) const {
    if (g_form == "zero") return 0.0;
    if (g_form == "linear") return x[0] + x[1] + x[2];
    return 5.0 * std::sin(x[0]) + 2.0 * x[1] * x[1] + x[2];
  }

  double f(std::span<const double> x) const {
    if (f_form == "zero") return 0.0;
    if (f_form == "x1") return f_scale * x[0];
    return f_scale * (x[0] - 0.5 * x[1]);
  }
};

struct SyntheticSample {
  LabeledDataset data;  // standardized X
  FeatureMatrix raw_x;
  Scaler scaler;
  std::vector<double> theta;       // true theta(X_i)
  std::vector<double> propensity;  // true P(T=1|X_i)
};

inline std::vector<std::string> synthetic_column_names(std::size_t p) {
  if (p == covariate_names().size()) return covariate_names();
  std::vector<std::string> names;
  for (std::size_t j = 0; j < p; ++j) names.push_back("x" + std::to_string(j + 1));
  return names;
}

// X ~ N(0, I_p), T ~ Bernoulli(logistic(f(X))), Y = theta(X) T + g(X) + eps.
inline SyntheticSample generate(const DgpSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> raw(spec.n * spec.p);
  for (auto& v : raw) v = normal(rng);
  std::vector<std::string> ids;
  ids.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) ids.push_back(std::to_string(i));
  SyntheticSample s;
  s.raw_x = FeatureMatrix(synthetic_column_names(spec.p), spec.n, std::move(raw), std::move(ids));
  s.data.y.resize(spec.n);
  s.data.t.resize(spec.n);
  s.theta.resize(spec.n);
  s.propensity.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const auto x = s.raw_x.row(i);
    s.propensity[i] = learners::logistic(spec.f(x));
    s.data.t[i] = uniform01(rng) < s.propensity[i] ? 1 : 0;
    s.theta[i] = spec.theta(x);
    const double eps = spec.noise_sd * normal(rng);
    s.data.y[i] = s.theta[i] * s.data.t[i] + spec.g(x) + eps;
  }
  auto st = standardize(s.raw_x);
  s.data.x = std::move(st.scaled);
  s.scaler = std::move(st.scaler);
  return s;
}

// For a linear theta: the intercept and slopes the final stage should
// recover over standardized covariates.
struct StandardizedTruth {
  double intercept = 0.0;
  std::vector<double> beta;
};

inline std::optional<StandardizedTruth> standardized_truth(const ThetaForm& theta,
                                                           const Scaler& scaler) {
  if (theta.kind == ThetaForm::Kind::kNonlinear) return std::nullopt;
  StandardizedTruth t;
  t.intercept = theta.intercept;
  t.beta.assign(scaler.means.size(), 0.0);
  if (theta.kind == ThetaForm::Kind::kLinear) {
    for (std::size_t j = 0; j < theta.slopes.size(); ++j) {
      t.intercept += theta.slopes[j] * scaler.means[j];
      t.beta[j] = theta.slopes[j] * scaler.stds[j];
    }
  }
  return t;
}

// Difference of mean outcomes between treated and control rows.
inline double naive_difference_in_means(const LabeledDataset& data) {
  double s1 = 0.0;
  double s0 = 0.0;
  double n1 = 0.0;
  double n0 = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.t[i] == 1) {
      s1 += data.y[i];
      n1 += 1.0;
    } else {
      s0 += data.y[i];
      n0 += 1.0;
    }
  }
  require(n1 > 0.0 && n0 > 0.0, ErrorCode::kDegenerateTreatment, "need both treatment groups");
  return s1 / n1 - s0 / n0;
}

struct RepResult {
  std::size_t rep = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  causal::EffectEstimate ate;
  double true_ate = 0.0;
  bool covered = false;
  double naive = 0.0;
  std::size_t kept = 0;
  std::size_t removed = 0;
  double orthogonality = 0.0;  // final-stage normal-equation residual over ||y_res||
  std::vector<double> beta;
  std::vector<double> beta_se;
  std::vector<double> beta_true;
};

struct McReport {
  std::size_t reps = 0;
  std::size_t failures = 0;
  double bias = 0.0;
  double rmse = 0.0;
  double mae = 0.0;
  double coverage = 0.0;
  double mean_ci_width = 0.0;
  double naive_bias = 0.0;
  double naive_mae = 0.0;
  std::vector<double> beta_bias;
  std::vector<RepResult> per_rep;
};

// Runs the full estimator on `reps` independent draws (seeds derived from
// `seed` and the replication index) and compares with the known truth. The
// true ATE of a replication is the mean true theta over its retained rows.
inline McReport monte_carlo(const DgpSpec& spec, const causal::DmlConfig& estimator,
                            std::size_t reps, std::uint64_t seed, int threads = 1) {
  spec.validate();
  require(reps >= 1, ErrorCode::kInvalidArgument, "monte_carlo needs reps >= 1");
  McReport report;
  report.reps = reps;
  report.per_rep.resize(reps);
  causal::DmlConfig inner = estimator;
  inner.threads = 1;
  parallel_for(reps, threads, [&](std::size_t r) {
    RepResult& out = report.per_rep[r];
    out.rep = r;
    out.seed = derive_seed(seed, r, 0x3c);
    DgpSpec rep_spec = spec;
    rep_spec.seed = out.seed;
    try {
      const SyntheticSample sample = generate(rep_spec);
      out.naive = naive_difference_in_means(sample.data);
      const auto dml = causal::run_dml(sample.data, sample.scaler, inner, derive_seed(out.seed, 7));
      out.ate = dml.ate.estimate;
      double truth = 0.0;
      for (std::size_t i : dml.trimmed.report.kept_indices) truth += sample.theta[i];
      out.true_ate = truth / static_cast<double>(dml.trimmed.report.kept_total);
      out.covered = out.ate.ci_low <= out.true_ate && out.true_ate <= out.ate.ci_high;
      out.kept = dml.trimmed.report.kept_total;
      out.removed = dml.trimmed.report.removed_total();
      out.orthogonality =
          causal::normal_equation_residual(dml.model, dml.residuals, dml.trimmed.data.x) /
          causal::euclidean_norm(dml.residuals.y_res);
      out.beta = dml.model.beta;
      for (std::size_t j = 0; j < dml.model.beta.size(); ++j) {
        const auto jj = static_cast<Eigen::Index>(j + 1);
        out.beta_se.push_back(std::sqrt(std::max(0.0, dml.model.covariance(jj, jj))));
      }
      if (auto t = standardized_truth(spec.theta, sample.scaler)) out.beta_true = t->beta;
      out.ok = true;
    } catch (const Error& e) {
      out.error = e.what();
    }
  });

  double sum_err = 0.0;
  double sum_sq = 0.0;
  double sum_abs = 0.0;
  double sum_cov = 0.0;
  double sum_width = 0.0;
  double sum_naive = 0.0;
  double sum_naive_abs = 0.0;
  std::size_t ok = 0;
  std::vector<double> beta_err;
  for (const auto& r : report.per_rep) {
    if (!r.ok) {
      ++report.failures;
      continue;
    }
    ++ok;
    const double err = r.ate.point - r.true_ate;
    sum_err += err;
    sum_sq += err * err;
    sum_abs += std::abs(err);
    sum_cov += r.covered ? 1.0 : 0.0;
    sum_width += r.ate.ci_high - r.ate.ci_low;
    sum_naive += r.naive - r.true_ate;
    sum_naive_abs += std::abs(r.naive - r.true_ate);
    if (!r.beta_true.empty()) {
      beta_err.resize(r.beta.size(), 0.0);
      for (std::size_t j = 0; j < r.beta.size(); ++j) beta_err[j] += r.beta[j] - r.beta_true[j];
    }
  }
  if (ok > 0) {
    const double k = static_cast<double>(ok);
    report.bias = sum_err / k;
    report.rmse = std::sqrt(sum_sq / k);
    report.mae = sum_abs / k;
    report.coverage = sum_cov / k;
    report.mean_ci_width = sum_width / k;
    report.naive_bias = sum_naive / k;
    report.naive_mae = sum_naive_abs / k;
    for (auto& b : beta_err) b /= k;
    report.beta_bias = std::move(beta_err);
  }
  return report;
}

}  // namespace cropdml::synth
