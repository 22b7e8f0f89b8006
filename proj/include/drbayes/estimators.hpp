#pragma once

// ATE inference from (tilted) posterior draws, plus the comparison
// estimators: IPW, frequentist AIPW / Bang-Robins, and the Saarela
// Bayesian-bootstrap DR estimator. Also hosts the end-to-end coupled fit.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "drbayes/error.hpp"
#include "drbayes/moments.hpp"
#include "drbayes/numeric.hpp"
#include "drbayes/posteriors.hpp"
#include "drbayes/random.hpp"
#include "drbayes/tilting.hpp"

namespace drbayes {

enum class ATESource { tilted, original, saarela };

inline const char* to_string(ATESource s) {
  switch (s) {
    case ATESource::tilted: return "tilted";
    case ATESource::original: return "original";
    case ATESource::saarela: return "saarela";
  }
  return "?";
}

struct ATEPosterior {
  Vector draws;
  Vector weights;
  ATESource source = ATESource::original;
};

struct ATESummary {
  double mean = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double level = 0.95;
  double ess = 0.0;
  /// Weighted posterior standard deviation.
  double sd = 0.0;
};

/// Per-draw G-formula contrasts (1/n) sum_i {m_1(X_i; beta) - m_0(X_i; beta)}.
inline Vector gformula_contrasts(const Dataset& d, const OutcomeModelSpec& spec, const Matrix& betas) {
  const Matrix x1 = outcome_design(d, spec, 1.0);
  const Matrix x0 = outcome_design(d, spec, 0.0);
  if (betas.cols() != x1.cols()) {
    throw DomainError("beta has dimension " + std::to_string(betas.cols()) + ", expected " +
                      std::to_string(x1.cols()));
  }
  if (spec.family != OutcomeFamily::bernoulli_logistic) {
    const Vector diff = (x1 - x0).colwise().mean().transpose();
    return betas * diff;
  }
  const Eigen::Index S = betas.rows();
  Vector out(S);
  constexpr Eigen::Index kChunk = 256;
  for (Eigen::Index start = 0; start < S; start += kChunk) {
    const Eigen::Index len = std::min(kChunk, S - start);
    Matrix m1 = x1 * betas.middleRows(start, len).transpose();
    Matrix m0 = x0 * betas.middleRows(start, len).transpose();
    apply_outcome_mean(spec.family, m1);
    apply_outcome_mean(spec.family, m0);
    out.segment(start, len) = (m1 - m0).colwise().mean().transpose();
  }
  return out;
}

inline ATEPosterior ate_draws(const ParticleSystem& ps, const Dataset& d, const OutcomeModelSpec& spec) {
  return {gformula_contrasts(d, spec, ps.beta), ps.weights, ATESource::tilted};
}

inline ATEPosterior ate_draws(const DrawSet& beta_draws, const Dataset& d, const OutcomeModelSpec& spec) {
  if (beta_draws.block != Block::beta) throw DomainError("ate_draws needs outcome (beta) draws");
  return {gformula_contrasts(d, spec, beta_draws.draws), beta_draws.weights(), ATESource::original};
}

inline ATESummary summarize(const ATEPosterior& ap, double level = 0.95) {
  if (ap.draws.size() < 2) throw PreconditionError("summarize needs at least 2 draws");
  if (ap.draws.size() != ap.weights.size()) throw DomainError("draw and weight lengths differ");
  if (!is_simplex(ap.weights)) throw DomainError("weights are not a valid simplex");
  if (!(level > 0.0 && level < 1.0)) throw DomainError("level must lie in (0, 1)");
  ATESummary s;
  s.level = level;
  s.mean = ap.weights.dot(ap.draws);
  s.ci_low = weighted_quantile(ap.draws, ap.weights, 0.5 * (1.0 - level));
  s.ci_high = weighted_quantile(ap.draws, ap.weights, 1.0 - 0.5 * (1.0 - level));
  s.ess = effective_sample_size(ap.weights);
  const double var = ap.weights.dot((ap.draws.array() - s.mean).square().matrix());
  s.sd = std::sqrt(std::max(var, 0.0));
  return s;
}

inline nlohmann::json to_json(const ATESummary& s, const std::string& method, Eigen::Index n, std::uint64_t seed) {
  return {{"method", method}, {"mean", s.mean},   {"ci", {s.ci_low, s.ci_high}}, {"level", s.level},
          {"ess", s.ess},     {"sd", s.sd},       {"n", n},                      {"seed", seed}};
}

/// (1/n) sum {A Y / e - (1 - A) Y / (1 - e)} with clipped scores.
inline double ipw_estimate(const Dataset& d, const Vector& ps_values, ClipCounter* clips = nullptr) {
  if (ps_values.size() != d.n()) throw DomainError("propensity vector length does not match the data");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const double e = clip_ps(ps_values[i], clips);
    acc += d.a[i] * d.y[i] / e - (1.0 - d.a[i]) * d.y[i] / (1.0 - e);
  }
  return acc / static_cast<double>(d.n());
}

struct DREstimate {
  double estimate = 0.0;
  double se = 0.0;
};

/// AIPW: mean of m1 - m0 + A (Y - m1) / e - (1 - A)(Y - m0) / (1 - e), se = sd / sqrt(n).
inline DREstimate frequentist_dr(const Dataset& d, const Vector& ps_values, const Vector& m1_values,
                                 const Vector& m0_values, ClipCounter* clips = nullptr) {
  const Eigen::Index n = d.n();
  if (ps_values.size() != n || m1_values.size() != n || m0_values.size() != n) {
    throw DomainError("frequentist_dr inputs must all have length n");
  }
  std::vector<double> terms(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double e = clip_ps(ps_values[i], clips);
    terms[static_cast<std::size_t>(i)] = (d.a[i] * d.y[i] / e - (1.0 - d.a[i]) * d.y[i] / (1.0 - e)) +
                                         (m1_values[i] - m0_values[i]) - d.a[i] * m1_values[i] / e +
                                         (1.0 - d.a[i]) * m0_values[i] / (1.0 - e);
  }
  // Summand written as the IPW term plus augmentation so that zero outcome
  // predictions reproduce ipw_estimate exactly.
  double acc = 0.0;
  for (double t : terms) acc += t;
  DREstimate out;
  out.estimate = acc / static_cast<double>(n);
  out.se = sample_sd(terms) / std::sqrt(static_cast<double>(n));
  return out;
}

namespace detail {

/// Weighted logistic maximum likelihood by Newton iterations with step halving.
inline std::optional<Vector> weighted_logistic_mle(const Matrix& x, const Vector& resp, const Vector& w,
                                                   std::size_t max_iter = 100) {
  const Eigen::Index k = x.cols();
  Vector coef = Vector::Zero(k);
  auto loglik = [&](const Vector& c) {
    const Vector eta = x * c;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) acc += w[i] * (resp[i] * eta[i] - log1pexp(eta[i]));
    return acc;
  };
  double current = loglik(coef);
  for (std::size_t it = 0; it < max_iter; ++it) {
    const Vector eta = x * coef;
    Vector p(eta.size());
    Vector curv(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      p[i] = expit(eta[i]);
      curv[i] = w[i] * p[i] * (1.0 - p[i]);
    }
    const Vector grad = x.transpose() * (w.cwiseProduct(resp - p));
    const Matrix info = x.transpose() * curv.asDiagonal() * x;
    Eigen::LDLT<Matrix> ldlt(info);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 1e-12).all()) return std::nullopt;
    const Vector step = ldlt.solve(grad);
    double scale = 1.0;
    Vector next = coef + step;
    double value = loglik(next);
    while (value < current - 1e-12 && scale > 1e-8) {
      scale *= 0.5;
      next = coef + scale * step;
      value = loglik(next);
    }
    coef = next;
    const double change = value - current;
    current = value;
    if (!coef.allFinite() || coef.cwiseAbs().maxCoeff() > 50.0) return std::nullopt;
    if (step.cwiseAbs().maxCoeff() * scale < 1e-10 || std::abs(change) < 1e-12 * (1.0 + std::abs(current))) {
      return coef;
    }
  }
  return coef;
}

inline std::optional<Vector> weighted_least_squares(const Matrix& x, const Vector& y, const Vector& w) {
  const Vector sw = w.cwiseSqrt();
  const Matrix xw = sw.asDiagonal() * x;
  Eigen::ColPivHouseholderQR<Matrix> qr(xw);
  if (qr.rank() < x.cols()) return std::nullopt;
  return Vector(qr.solve(sw.cwiseProduct(y)));
}

}  // namespace detail

/// Maximum-likelihood propensity scores expit(X alpha_hat).
inline Vector fit_propensity_mle(const Dataset& d, const Design& design) {
  const Matrix x = propensity_design(d, design);
  const auto coef = detail::weighted_logistic_mle(x, d.a, Vector::Ones(d.n()));
  if (!coef) throw NumericalError("propensity maximum-likelihood fit failed (possible separation)");
  return (x * *coef).unaryExpr([](double v) { return expit(v); });
}

struct OutcomePredictions {
  Vector m1;
  Vector m0;
};

/// Least-squares (gaussian / general-bayes) or logistic ML outcome predictions.
inline OutcomePredictions fit_outcome_predictions(const Dataset& d, const OutcomeModelSpec& spec,
                                                  const Vector& obs_weights) {
  const Matrix x = outcome_design(d, spec);
  std::optional<Vector> coef = spec.family == OutcomeFamily::bernoulli_logistic
                                   ? detail::weighted_logistic_mle(x, d.y, obs_weights)
                                   : detail::weighted_least_squares(x, d.y, obs_weights);
  if (!coef) throw NumericalError("outcome regression fit failed");
  OutcomePredictions out{outcome_design(d, spec, 1.0) * *coef, outcome_design(d, spec, 0.0) * *coef};
  if (spec.family == OutcomeFamily::bernoulli_logistic) {
    apply_outcome_mean(spec.family, out.m1);
    apply_outcome_mean(spec.family, out.m0);
  }
  return out;
}

inline OutcomePredictions fit_outcome_predictions(const Dataset& d, const OutcomeModelSpec& spec) {
  return fit_outcome_predictions(d, spec, Vector::Ones(d.n()));
}

/// AIPW with maximum-likelihood nuisance fits.
inline DREstimate frequentist_dr(const Dataset& d, const PropensityModelSpec& ps, const OutcomeModelSpec& outcome,
                                 ClipCounter* clips = nullptr) {
  const Vector e = fit_propensity_mle(d, ps.design);
  const OutcomePredictions m = fit_outcome_predictions(d, outcome);
  return frequentist_dr(d, e, m.m1, m.m0, clips);
}

/// Bang-Robins: add the clever covariate (A - e) / (e (1 - e)) to the outcome
/// design, refit by least squares, and return the G-formula contrast.
inline double bang_robins_dr(const Dataset& d, const Vector& ps_values, const OutcomeModelSpec& outcome,
                             ClipCounter* clips = nullptr) {
  if (ps_values.size() != d.n()) throw DomainError("propensity vector length does not match the data");
  const Eigen::Index n = d.n();
  Vector h(n);
  Vector h1(n);
  Vector h0(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double e = clip_ps(ps_values[i], clips);
    h1[i] = 1.0 / e;
    h0[i] = -1.0 / (1.0 - e);
    h[i] = d.a[i] == 1.0 ? h1[i] : h0[i];
  }
  auto augment = [&](const Matrix& x, const Vector& col) {
    Matrix out(n, x.cols() + 1);
    out << x, col;
    return out;
  };
  const Matrix x = augment(outcome_design(d, outcome), h);
  const auto coef = outcome.family == OutcomeFamily::bernoulli_logistic
                        ? detail::weighted_logistic_mle(x, d.y, Vector::Ones(n))
                        : detail::weighted_least_squares(x, d.y, Vector::Ones(n));
  if (!coef) throw NumericalError("clever-covariate refit failed");
  Vector m1 = augment(outcome_design(d, outcome, 1.0), h1) * *coef;
  Vector m0 = augment(outcome_design(d, outcome, 0.0), h0) * *coef;
  apply_outcome_mean(outcome.family, m1);
  apply_outcome_mean(outcome.family, m0);
  return (m1 - m0).mean();
}

struct SaarelaOptions {
  /// Test hook: every replicate uses weights 1/n instead of a Dirichlet draw.
  bool uniform_weights = false;
  double max_skip_fraction = 0.10;
};

struct SaarelaResult {
  ATEPosterior posterior;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;
};

/// Bayesian-bootstrap DR: per replicate, Dirichlet(1,...,1) weights xi, weighted
/// ML propensity and weighted least-squares outcome fits, then
///   sum_i xi_i {m1 - m0 + (A - e)/(e (1 - e)) (Y - m_A)}.
inline SaarelaResult saarela_bootstrap_dr(const Dataset& d, const PropensityModelSpec& ps,
                                          const OutcomeModelSpec& outcome, std::size_t replicates,
                                          std::uint64_t seed, const SaarelaOptions& opts = {}) {
  if (replicates < 100) throw PreconditionError("the Bayesian bootstrap needs at least 100 replicates");
  require_valid(d);
  const Eigen::Index n = d.n();
  const Matrix xe = propensity_design(d, ps.design);
  const Matrix xo = outcome_design(d, outcome);
  const Matrix xo1 = outcome_design(d, outcome, 1.0);
  const Matrix xo0 = outcome_design(d, outcome, 0.0);
  SaarelaResult res;
  std::vector<double> values;
  values.reserve(replicates);
  for (std::size_t b = 0; b < replicates; ++b) {
    Rng rng = make_rng(seed, b);
    const Vector xi = opts.uniform_weights ? Vector::Constant(n, 1.0 / static_cast<double>(n)) : dirichlet_flat(rng, n);
    // Likelihood fits are invariant to the weight scale; n * xi keeps the
    // Newton curvature on the unweighted scale.
    const Vector fit_w = xi * static_cast<double>(n);
    const auto alpha = detail::weighted_logistic_mle(xe, d.a, fit_w);
    const auto beta = outcome.family == OutcomeFamily::bernoulli_logistic
                          ? detail::weighted_logistic_mle(xo, d.y, fit_w)
                          : detail::weighted_least_squares(xo, d.y, fit_w);
    if (!alpha || !beta) {
      ++res.skipped;
      continue;
    }
    Vector m1 = xo1 * *beta;
    Vector m0 = xo0 * *beta;
    apply_outcome_mean(outcome.family, m1);
    apply_outcome_mean(outcome.family, m0);
    const Vector eta = xe * *alpha;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double e = clip_ps(expit(eta[i]));
      const double ma = d.a[i] == 1.0 ? m1[i] : m0[i];
      acc += xi[i] * (m1[i] - m0[i] + (d.a[i] - e) / (e * (1.0 - e)) * (d.y[i] - ma));
    }
    values.push_back(acc);
  }
  if (res.skipped > 0) {
    res.warnings.push_back(std::to_string(res.skipped) + " bootstrap replicates skipped after failed fits");
  }
  if (static_cast<double>(res.skipped) > opts.max_skip_fraction * static_cast<double>(replicates)) {
    throw NumericalError("too many bootstrap replicates failed (" + std::to_string(res.skipped) + " of " +
                         std::to_string(replicates) + ")");
  }
  res.posterior.draws = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
  res.posterior.weights = Vector::Constant(res.posterior.draws.size(), 1.0 / static_cast<double>(values.size()));
  res.posterior.source = ATESource::saarela;
  return res;
}

/// Everything the coupled pipeline needs besides the data.
struct PipelineSpec {
  OutcomeModelSpec outcome;
  PropensityModelSpec propensity;
  MomentSpec moment;
  TiltConfig tilt;
  SamplerConfig sampler;
  std::size_t draws = 20000;
  std::uint64_t seed = 0;
};

struct CoupledFit {
  DrawSet alpha;
  DrawSet beta;
  ParticleSystem particles;
  ATEPosterior original;
  ATEPosterior tilted;
};

/// Separate posteriors for alpha and beta, then the tilt on the DR moment.
/// `beta_log_weights` (e.g. from a sensitivity reweight) seeds the particle weights.
inline CoupledFit fit_coupled(const Dataset& d, const PipelineSpec& spec,
                              const std::optional<DrawSet>& beta_override = std::nullopt) {
  require_valid(d);
  CoupledFit fit;
  fit.alpha = sample_propensity_posterior(d, spec.propensity, spec.draws, derive_seed(spec.seed, 1), spec.sampler);
  fit.beta = beta_override ? *beta_override
                           : sample_outcome_posterior(d, spec.outcome, spec.draws, derive_seed(spec.seed, 2), spec.sampler);
  const MomentEvaluator moment(d, spec.propensity, spec.outcome, spec.moment);
  TiltConfig tilt_cfg = spec.tilt;
  tilt_cfg.seed = derive_seed(spec.seed, 3);
  fit.particles = tilt(fit.alpha, fit.beta, moment, tilt_cfg);
  fit.original = ate_draws(fit.beta, d, spec.outcome);
  fit.tilted = ate_draws(fit.particles, d, spec.outcome);
  return fit;
}

inline nlohmann::json tilt_diagnostics_json(const ParticleSystem& ps) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& r : ps.history) {
    history.push_back({{"t", r.t}, {"lambda", r.lambda}, {"mean_moment", r.mean_moment}, {"ess", r.ess}, {"event", r.event}});
  }
  return {{"lambda", ps.lambda},
          {"ess", ps.ess},
          {"mean_moment", ps.mean_moment()},
          {"particles", ps.size()},
          {"clipped_ps", ps.clips.clipped},
          {"evaluated_ps", ps.clips.evaluated},
          {"warnings", ps.warnings},
          {"history", history}};
}

}  // namespace drbayes
