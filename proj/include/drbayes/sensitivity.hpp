#pragma once

// Unmeasured-confounding sensitivity analysis. The outcome model gains an
// additive treated-arm shift xi, m_A(X; beta) + A xi, with xi ~ g. Posterior
// draws of beta are importance-reweighted by the ratio of the xi-integrated
// likelihood to the base likelihood; only treated units contribute.
//
//   per-unit  log w_s = sum_i log mean_m exp{-f_i(xi_m) + f_i(0)}
//   pooled    log w_s = log mean_m exp{sum_i (-f_i(xi_m) + f_i(0))}
//
// One xi grid of size M is drawn per posterior draw and shared across units.
// The reported ATE adds, per particle, the posterior-mean shift that xi puts
// on the treated predictions (the contrast includes +xi on treated units).

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "drbayes/error.hpp"
#include "drbayes/estimators.hpp"
#include "drbayes/numeric.hpp"
#include "drbayes/posteriors.hpp"
#include "drbayes/random.hpp"

namespace drbayes {

enum class SensitivityFamily { point, triangular, uniform };
enum class SensitivityMode { per_unit, pooled };
/// Where xi enters a bernoulli-logistic outcome: log-odds or probability.
enum class SensitivityScale { link, probability };

struct SensitivityPrior {
  SensitivityFamily family = SensitivityFamily::point;
  double value = 0.0;  // point
  double lo = 0.0;
  double hi = 0.0;
  double mode = 0.0;   // triangular

  static SensitivityPrior point(double v) { return {SensitivityFamily::point, v, 0.0, 0.0, 0.0}; }
  static SensitivityPrior triangular(double lo, double hi, double mode) {
    return {SensitivityFamily::triangular, 0.0, lo, hi, mode};
  }
  static SensitivityPrior uniform(double lo, double hi) { return {SensitivityFamily::uniform, 0.0, lo, hi, 0.0}; }
};

struct SensitivitySpec {
  SensitivityPrior g;
  std::size_t M = 200;
  SensitivityMode mode = SensitivityMode::per_unit;
  SensitivityScale scale = SensitivityScale::link;
};

inline void validate(const SensitivitySpec& spec) {
  if (spec.M < 1) throw ConfigError("sensitivity M must be at least 1");
  const auto& g = spec.g;
  if (g.family == SensitivityFamily::point) {
    if (!std::isfinite(g.value)) throw ConfigError("point mass must be finite");
    return;
  }
  if (!(g.lo < g.hi)) throw ConfigError("sensitivity prior needs lo < hi");
  if (g.family == SensitivityFamily::triangular && !(g.mode >= g.lo && g.mode <= g.hi)) {
    throw ConfigError("triangular mode must lie within [lo, hi]");
  }
}

/// Inverse-CDF draw from g at u in [0, 1).
inline double sensitivity_quantile(const SensitivityPrior& g, double u) {
  switch (g.family) {
    case SensitivityFamily::point: return g.value;
    case SensitivityFamily::uniform: return g.lo + u * (g.hi - g.lo);
    case SensitivityFamily::triangular: {
      const double width = g.hi - g.lo;
      const double split = (g.mode - g.lo) / width;
      if (u < split) return g.lo + std::sqrt(u * width * (g.mode - g.lo));
      return g.hi - std::sqrt((1.0 - u) * width * (g.hi - g.mode));
    }
  }
  return g.value;
}

inline Vector sample_sensitivity_param(const SensitivityPrior& g, std::uint64_t seed, std::size_t count) {
  SensitivitySpec spec;
  spec.g = g;
  validate(spec);
  Rng rng = make_rng(seed, 0x78);
  Vector out(static_cast<Eigen::Index>(count));
  for (auto& v : out) v = sensitivity_quantile(g, uniform01(rng));
  return out;
}

namespace detail {

/// Per-unit log-likelihood gain -f_i(xi) + f_i(0) for a treated unit with
/// linear predictor eta and outcome y.
struct ShiftLikelihood {
  OutcomeFamily family;
  SensitivityScale scale;
  double noise_variance = 1.0;

  double operator()(double eta, double y, double xi) const {
    if (family != OutcomeFamily::bernoulli_logistic) {
      const double r = y - eta;
      return -((r - xi) * (r - xi) - r * r) / (2.0 * noise_variance);
    }
    if (scale == SensitivityScale::link) {
      return (y * (eta + xi) - log1pexp(eta + xi)) - (y * eta - log1pexp(eta));
    }
    constexpr double eps = 1e-12;
    const double p0 = std::clamp(expit(eta), eps, 1.0 - eps);
    const double p1 = std::clamp(p0 + xi, eps, 1.0 - eps);
    return y * std::log(p1 / p0) + (1.0 - y) * std::log((1.0 - p1) / (1.0 - p0));
  }
};

}  // namespace detail

/// Returns `beta_draws` with log_weights updated by the sensitivity ratio.
inline DrawSet sensitivity_reweight(const DrawSet& beta_draws, const Dataset& d, const OutcomeModelSpec& outcome,
                                    const SensitivitySpec& spec, std::uint64_t seed) {
  validate(spec);
  if (beta_draws.block != Block::beta) throw DomainError("sensitivity reweighting needs outcome (beta) draws");
  if (outcome.family != OutcomeFamily::bernoulli_logistic && !beta_draws.noise_variance) {
    throw DomainError("gaussian sensitivity reweighting needs per-draw noise variances");
  }
  const Matrix x = outcome_design(d, outcome);
  if (x.cols() != beta_draws.dim()) throw DomainError("beta dimension does not match the outcome design");

  std::vector<Eigen::Index> treated;
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    if (d.a[i] == 1.0) treated.push_back(i);
  }
  const auto nt = static_cast<Eigen::Index>(treated.size());
  Matrix xt(nt, x.cols());
  Vector yt(nt);
  for (Eigen::Index r = 0; r < nt; ++r) {
    xt.row(r) = x.row(treated[static_cast<std::size_t>(r)]);
    yt[r] = d.y[treated[static_cast<std::size_t>(r)]];
  }

  const Eigen::Index S = beta_draws.size();
  const auto M = static_cast<Eigen::Index>(spec.M);
  DrawSet out = beta_draws;
  Vector gain(M);
  Vector unit(M);
  for (Eigen::Index s = 0; s < S; ++s) {
    const Vector eta = xt * beta_draws.draws.row(s).transpose();
    detail::ShiftLikelihood lik{outcome.family, spec.scale,
                                beta_draws.noise_variance ? (*beta_draws.noise_variance)[s] : 1.0};
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(s));
    Vector xi(M);
    for (auto& v : xi) v = sensitivity_quantile(spec.g, uniform01(rng));
    double log_ratio = 0.0;
    if (spec.mode == SensitivityMode::pooled) {
      gain.setZero();
      for (Eigen::Index i = 0; i < nt; ++i) {
        for (Eigen::Index m = 0; m < M; ++m) gain[m] += lik(eta[i], yt[i], xi[m]);
      }
      log_ratio = log_sum_exp(gain) - std::log(static_cast<double>(M));
    } else {
      for (Eigen::Index i = 0; i < nt; ++i) {
        for (Eigen::Index m = 0; m < M; ++m) unit[m] = lik(eta[i], yt[i], xi[m]);
        log_ratio += log_sum_exp(unit) - std::log(static_cast<double>(M));
      }
    }
    out.log_weights[s] = beta_draws.log_weights[s] + log_ratio;
  }
  if (!out.log_weights.allFinite()) {
    throw DegenerateReweightError("sensitivity weights are not finite; use a narrower sensitivity prior");
  }
  out.log_weights.array() -= out.log_weights.maxCoeff();
  const double ess = effective_sample_size(out.weights());
  if (ess < 2.0) {
    throw DegenerateReweightError("sensitivity weights collapsed onto " + std::to_string(ess) +
                                  " effective draws; use a narrower sensitivity prior");
  }
  return out;
}

namespace detail {

inline double shifted_mean(OutcomeFamily family, SensitivityScale scale, double eta, double xi) {
  if (family != OutcomeFamily::bernoulli_logistic) return eta + xi;
  if (scale == SensitivityScale::link) return expit(eta + xi);
  return std::clamp(expit(eta) + xi, 0.0, 1.0);
}

}  // namespace detail

/// Per particle: (1/n) sum_i E[m_1(X_i; beta, xi_i) - m_1(X_i; beta)], with xi_i
/// drawn from its conditional given beta on a fresh grid. Controls carry no
/// information about xi, so their average uses the grid as drawn.
inline Vector sensitivity_ate_shift(const Matrix& betas, const Dataset& d, const OutcomeModelSpec& outcome,
                                    const SensitivitySpec& spec, double noise_variance, std::uint64_t seed) {
  validate(spec);
  const Eigen::Index S = betas.rows();
  if (spec.g.family == SensitivityFamily::point && spec.g.value == 0.0) return Vector::Zero(S);
  const Matrix x = outcome_design(d, outcome);
  const Matrix x1 = outcome_design(d, outcome, 1.0);
  if (x.cols() != betas.cols()) throw DomainError("beta dimension does not match the outcome design");
  const Eigen::Index n = d.n();
  const auto M = static_cast<Eigen::Index>(spec.g.family == SensitivityFamily::point ? 1 : spec.M);
  const detail::ShiftLikelihood lik{outcome.family, spec.scale, noise_variance};
  const bool linear = outcome.family != OutcomeFamily::bernoulli_logistic;

  Vector out(S);
  Vector gain(M);
  Vector post(M);
  for (Eigen::Index s = 0; s < S; ++s) {
    const Vector eta = x * betas.row(s).transpose();
    const Vector eta1 = x1 * betas.row(s).transpose();
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(s));
    Vector xi(M);
    for (auto& v : xi) v = sensitivity_quantile(spec.g, uniform01(rng));
    const Vector prior = Vector::Constant(M, 1.0 / static_cast<double>(M));

    auto unit_shift = [&](Eigen::Index i, const Vector& w) {
      if (linear) return w.dot(xi);
      const double base = detail::shifted_mean(outcome.family, spec.scale, eta1[i], 0.0);
      double acc = 0.0;
      for (Eigen::Index m = 0; m < M; ++m) acc += w[m] * detail::shifted_mean(outcome.family, spec.scale, eta1[i], xi[m]);
      return acc - base;
    };

    double total = 0.0;
    if (spec.mode == SensitivityMode::pooled) {
      gain.setZero();
      for (Eigen::Index i = 0; i < n; ++i) {
        if (d.a[i] != 1.0) continue;
        for (Eigen::Index m = 0; m < M; ++m) gain[m] += lik(eta[i], d.y[i], xi[m]);
      }
      post = normalize_log_weights(gain);
      for (Eigen::Index i = 0; i < n; ++i) total += unit_shift(i, post);
    } else {
      for (Eigen::Index i = 0; i < n; ++i) {
        if (d.a[i] != 1.0) {
          total += unit_shift(i, prior);
          continue;
        }
        for (Eigen::Index m = 0; m < M; ++m) gain[m] = lik(eta[i], d.y[i], xi[m]);
        post = normalize_log_weights(gain);
        total += unit_shift(i, post);
      }
    }
    out[s] = total / static_cast<double>(n);
  }
  return out;
}

struct SensitivityFit {
  CoupledFit fit;
  ATESummary summary;
  double reweight_ess = 0.0;
  /// Per-particle shift added to fit.tilted; fit.original stays unshifted.
  Vector ate_shift;
};

/// Sample posteriors, reweight beta for xi ~ g, tilt with the reweighted
/// draws as initial particle weights, add each particle's xi shift to its
/// G-formula contrast and summarize.
inline SensitivityFit sensitivity_ate(const Dataset& d, const PipelineSpec& pipeline, const SensitivitySpec& sens,
                                      double level = 0.95) {
  validate(sens);
  require_valid(d);
  const DrawSet beta = sample_outcome_posterior(d, pipeline.outcome, pipeline.draws, derive_seed(pipeline.seed, 2),
                                                pipeline.sampler);
  SensitivityFit out;
  const DrawSet reweighted = sensitivity_reweight(beta, d, pipeline.outcome, sens, derive_seed(pipeline.seed, 4));
  out.reweight_ess = effective_sample_size(reweighted.weights());
  out.fit = fit_coupled(d, pipeline, reweighted);
  // particles move under smoothing, so the gaussian shift uses the posterior-mean noise variance
  const double sigma2 = reweighted.noise_variance ? reweighted.weights().dot(*reweighted.noise_variance) : 1.0;
  out.ate_shift = sensitivity_ate_shift(out.fit.particles.beta, d, pipeline.outcome, sens, sigma2,
                                        derive_seed(pipeline.seed, 5));
  out.fit.tilted.draws += out.ate_shift;
  out.summary = summarize(out.fit.tilted, level);
  return out;
}

inline nlohmann::json to_json(const SensitivitySpec& spec) {
  nlohmann::json g;
  switch (spec.g.family) {
    case SensitivityFamily::point: g = {{"family", "point"}, {"value", spec.g.value}}; break;
    case SensitivityFamily::triangular:
      g = {{"family", "triangular"}, {"lo", spec.g.lo}, {"hi", spec.g.hi}, {"mode", spec.g.mode}};
      break;
    case SensitivityFamily::uniform: g = {{"family", "uniform"}, {"lo", spec.g.lo}, {"hi", spec.g.hi}}; break;
  }
  return {{"g", g},
          {"M", spec.M},
          {"mode", spec.mode == SensitivityMode::pooled ? "pooled" : "per-unit"},
          {"scale", spec.scale == SensitivityScale::link ? "link" : "probability"}};
}

/// Parses {"family": "point"|"triangular"|"uniform", "value"|"lo","hi","mode"}.
inline SensitivityPrior sensitivity_prior_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("family")) throw ConfigError("sensitivity prior needs a 'family' field");
  const std::string family = j.at("family").get<std::string>();
  auto num = [&](const char* key) {
    if (!j.contains(key) || !j.at(key).is_number()) {
      throw ConfigError(std::string("sensitivity prior field '") + key + "' missing or not a number");
    }
    return j.at(key).get<double>();
  };
  if (family == "point") return SensitivityPrior::point(num("value"));
  if (family == "triangular") return SensitivityPrior::triangular(num("lo"), num("hi"), num("mode"));
  if (family == "uniform") return SensitivityPrior::uniform(num("lo"), num("hi"));
  throw ConfigError("unknown sensitivity prior family '" + family + "'");
}

}  // namespace drbayes
