#pragma once

// Independent general posteriors for the outcome block (beta) and the
// propensity block (alpha). The two blocks never read each other's data:
// the propensity samplers see only (A, X), the outcome samplers (Y, A, X).

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "drbayes/data.hpp"
#include "drbayes/models.hpp"
#include "drbayes/numeric.hpp"
#include "drbayes/random.hpp"

namespace drbayes {

enum class Block { alpha, beta };

struct SamplerConfig {
  std::size_t burn_in = 5000;
  std::size_t thin = 1;
  double target_acceptance = 0.3;
  /// Metropolis updates of the coefficients per Gibbs sweep (horseshoe logistic).
  std::size_t inner_steps = 10;
  /// Inverse-gamma hyperparameters of the conjugate noise-variance prior.
  double noise_shape = 0.01;
  double noise_scale = 0.01;
};

struct SamplerDiagnostics {
  std::optional<double> acceptance_rate;
  std::vector<std::string> warnings;
};

/// S posterior draws of one parameter block.
struct DrawSet {
  Matrix draws;  // S x k
  Vector log_weights;
  Block block = Block::beta;
  std::vector<std::string> names;
  std::variant<OutcomeModelSpec, PropensityModelSpec> model_spec;
  std::uint64_t rng_seed = 0;
  /// Per-draw noise variance for Gaussian outcome families.
  std::optional<Vector> noise_variance;
  SamplerDiagnostics diagnostics;

  Eigen::Index size() const { return draws.rows(); }
  Eigen::Index dim() const { return draws.cols(); }
  Vector weights() const { return normalize_log_weights(log_weights); }
};

namespace detail {

inline void require_draw_count(std::size_t S) {
  if (S < 2) throw PreconditionError("at least 2 posterior draws are required");
}

inline Matrix lower_cholesky_or_throw(const Matrix& m, const char* what) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) throw LinearAlgebraError(std::string(what) + " is not positive definite");
  return llt.matrixL();
}

inline void require_full_rank(const Matrix& x) {
  Eigen::ColPivHouseholderQR<Matrix> qr(x);
  if (qr.rank() < x.cols()) {
    throw LinearAlgebraError("design matrix is rank deficient (rank " + std::to_string(qr.rank()) + " < " +
                             std::to_string(x.cols()) + ")");
  }
}

/// Log posterior of a Bernoulli-logit model with independent Gaussian priors
/// given as a diagonal precision.
inline double logistic_log_target(const Matrix& x, const Vector& resp, const Vector& prior_precision,
                                  const Vector& theta, const Vector* obs_weights = nullptr) {
  const Vector eta = x * theta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double term = resp[i] * eta[i] - log1pexp(eta[i]);
    ll += obs_weights != nullptr ? (*obs_weights)[i] * term : term;
  }
  return ll - 0.5 * (prior_precision.array() * theta.array().square()).sum();
}

struct LogisticFit {
  Vector coef;
  Matrix hessian;  // negative Hessian of the log target at coef
  bool converged = false;
  std::size_t iterations = 0;
};

/// Newton-Raphson with step halving for the penalized (possibly weighted)
/// logistic log target. A zero precision gives the maximum-likelihood fit.
inline LogisticFit logistic_mode(const Matrix& x, const Vector& resp, const Vector& prior_precision,
                                 const Vector* obs_weights = nullptr, std::size_t max_iter = 100) {
  const Eigen::Index k = x.cols();
  LogisticFit fit;
  fit.coef = Vector::Zero(k);
  double current = logistic_log_target(x, resp, prior_precision, fit.coef, obs_weights);
  for (std::size_t it = 0; it < max_iter; ++it) {
    fit.iterations = it + 1;
    const Vector eta = x * fit.coef;
    Vector mu(eta.size());
    Vector wts(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      mu[i] = expit(eta[i]);
      const double ow = obs_weights != nullptr ? (*obs_weights)[i] : 1.0;
      wts[i] = ow * mu[i] * (1.0 - mu[i]);
      mu[i] = ow * (resp[i] - mu[i]);
    }
    const Vector grad = x.transpose() * mu - (prior_precision.array() * fit.coef.array()).matrix();
    Matrix h = x.transpose() * (x.array().colwise() * wts.array()).matrix();
    h.diagonal() += prior_precision;
    Eigen::LDLT<Matrix> ldlt(h);
    if (ldlt.info() != Eigen::Success) break;
    Vector step = ldlt.solve(grad);
    double t = 1.0;
    Vector next = fit.coef + step;
    double value = logistic_log_target(x, resp, prior_precision, next, obs_weights);
    while (!(value >= current - 1e-12) && t > 1e-8) {
      t *= 0.5;
      next = fit.coef + t * step;
      value = logistic_log_target(x, resp, prior_precision, next, obs_weights);
    }
    fit.coef = next;
    const double change = (t * step).cwiseAbs().maxCoeff();
    current = value;
    if (change < 1e-10 || grad.cwiseAbs().maxCoeff() < 1e-10) {
      fit.converged = true;
      break;
    }
    if (fit.coef.cwiseAbs().maxCoeff() > 1e3) break;
  }
  const Vector eta = x * fit.coef;
  Vector wts(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double mu = expit(eta[i]);
    wts[i] = (obs_weights != nullptr ? (*obs_weights)[i] : 1.0) * mu * (1.0 - mu);
  }
  fit.hessian = x.transpose() * (x.array().colwise() * wts.array()).matrix();
  fit.hessian.diagonal() += prior_precision;
  return fit;
}

/// Adaptive random-walk Metropolis for the logistic log target, preconditioned
/// by the inverse Hessian at the mode. The proposal scale adapts towards the
/// target acceptance during burn-in and is frozen afterwards.
inline DrawSet logistic_metropolis(const Matrix& x, const Vector& resp, const Vector& prior_precision,
                                   std::size_t S, std::uint64_t seed, const SamplerConfig& cfg) {
  const Eigen::Index k = x.cols();
  const LogisticFit mode = logistic_mode(x, resp, prior_precision);
  Eigen::LLT<Matrix> llt(mode.hessian);
  if (llt.info() != Eigen::Success) throw LinearAlgebraError("logistic posterior Hessian is not positive definite");
  // L_inv^T z ~ N(0, H^{-1}) with H = L L^T.
  const Matrix chol_inv_t = llt.matrixU().solve(Matrix::Identity(k, k));

  Rng rng = make_rng(seed);
  Vector theta = mode.coef;
  double log_target = logistic_log_target(x, resp, prior_precision, theta);
  double log_scale = std::log(2.38 / std::sqrt(static_cast<double>(k)));
  const std::size_t thin = std::max<std::size_t>(cfg.thin, 1);
  const std::size_t total = cfg.burn_in + S * thin;

  DrawSet out;
  out.draws.resize(static_cast<Eigen::Index>(S), k);
  std::size_t accepted_after = 0;
  std::size_t proposals_after = 0;
  std::size_t row = 0;
  for (std::size_t it = 0; it < total; ++it) {
    const Vector proposal = theta + std::exp(log_scale) * (chol_inv_t * standard_normal_vector(rng, k));
    const double prop_target = logistic_log_target(x, resp, prior_precision, proposal);
    const double log_ratio = prop_target - log_target;
    const bool accept = std::log(uniform01(rng)) < log_ratio;
    if (accept) {
      theta = proposal;
      log_target = prop_target;
    }
    if (it < cfg.burn_in) {
      const double alpha_acc = std::min(1.0, std::exp(std::min(0.0, log_ratio)));
      log_scale += (alpha_acc - cfg.target_acceptance) / std::pow(static_cast<double>(it) + 1.0, 0.6);
    } else {
      ++proposals_after;
      if (accept) ++accepted_after;
      if ((it - cfg.burn_in + 1) % thin == 0) out.draws.row(static_cast<Eigen::Index>(row++)) = theta.transpose();
    }
  }
  const double rate = static_cast<double>(accepted_after) / static_cast<double>(std::max<std::size_t>(proposals_after, 1));
  out.diagnostics.acceptance_rate = rate;
  if (rate < 0.05 || rate > 0.8) {
    out.diagnostics.warnings.push_back("Metropolis acceptance rate " + std::to_string(rate) +
                                       " outside [0.05, 0.8] after adaptation");
  }
  return out;
}

inline void check_separation(DrawSet& ds) {
  const double max_abs = ds.draws.cwiseAbs().maxCoeff();
  if (max_abs > 50.0) {
    ds.diagnostics.warnings.push_back("possible perfect separation: max |coefficient| = " + std::to_string(max_abs));
  }
}

inline double clamp_scale(double v) { return std::clamp(v, 1e-12, 1e12); }

/// Gibbs sampler for a Gaussian linear model with horseshoe priors on the
/// coefficients flagged in `shrink`, using the inverse-gamma auxiliary
/// representation of the half-Cauchy local and global scales. Coefficients not
/// flagged get N(0, sigma^2 * fixed_variance).
inline DrawSet horseshoe_linear_gibbs(const Matrix& x, const Vector& y, const std::vector<bool>& shrink,
                                      double fixed_variance, std::size_t S, std::uint64_t seed,
                                      const SamplerConfig& cfg) {
  const Eigen::Index n = x.rows();
  const Eigen::Index k = x.cols();
  Rng rng = make_rng(seed);
  const Matrix xtx = x.transpose() * x;
  const Vector xty = x.transpose() * y;

  Vector beta = Vector::Zero(k);
  Vector local2 = Vector::Ones(k);  // lambda_j^2
  Vector nu = Vector::Ones(k);
  double tau2 = 1.0;
  double xi = 1.0;
  double sigma2 = 1.0;
  const auto n_shrunk = static_cast<double>(std::count(shrink.begin(), shrink.end(), true));

  DrawSet out;
  out.draws.resize(static_cast<Eigen::Index>(S), k);
  Vector noise(static_cast<Eigen::Index>(S));
  const std::size_t thin = std::max<std::size_t>(cfg.thin, 1);
  const std::size_t total = cfg.burn_in + S * thin;
  std::size_t row = 0;
  Vector prec(k);
  for (std::size_t it = 0; it < total; ++it) {
    for (Eigen::Index j = 0; j < k; ++j) {
      prec[j] = shrink[static_cast<std::size_t>(j)] ? 1.0 / clamp_scale(local2[j] * tau2) : 1.0 / fixed_variance;
    }
    Matrix a = xtx;
    a.diagonal() += prec;
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() != Eigen::Success) throw LinearAlgebraError("horseshoe precision matrix is not positive definite");
    const Vector mean = llt.solve(xty);
    // beta = mean + sqrt(sigma2) * L^{-T} z
    beta = mean + std::sqrt(sigma2) * llt.matrixU().solve(standard_normal_vector(rng, k));

    const double rss = (y - x * beta).squaredNorm();
    const double penalty = (prec.array() * beta.array().square()).sum();
    sigma2 = inverse_gamma_draw(rng, 0.5 * static_cast<double>(n + k), 0.5 * (rss + penalty));

    double sum_scaled = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      if (!shrink[static_cast<std::size_t>(j)]) continue;
      local2[j] = clamp_scale(
          inverse_gamma_draw(rng, 1.0, 1.0 / nu[j] + beta[j] * beta[j] / (2.0 * tau2 * sigma2)));
      nu[j] = inverse_gamma_draw(rng, 1.0, 1.0 + 1.0 / local2[j]);
      sum_scaled += beta[j] * beta[j] / local2[j];
    }
    if (n_shrunk > 0) {
      tau2 = clamp_scale(inverse_gamma_draw(rng, 0.5 * (n_shrunk + 1.0), 1.0 / xi + sum_scaled / (2.0 * sigma2)));
      xi = inverse_gamma_draw(rng, 1.0, 1.0 + 1.0 / tau2);
    }
    if (it >= cfg.burn_in && (it - cfg.burn_in + 1) % thin == 0) {
      out.draws.row(static_cast<Eigen::Index>(row)) = beta.transpose();
      noise[static_cast<Eigen::Index>(row)] = sigma2;
      ++row;
    }
  }
  out.noise_variance = noise;
  return out;
}

/// Metropolis-within-Gibbs for logistic regression with horseshoe priors on
/// the flagged coefficients. Coefficient updates are preconditioned random
/// walk steps whose covariance follows the current prior precision.
inline DrawSet horseshoe_logistic_gibbs(const Matrix& x, const Vector& resp, const std::vector<bool>& shrink,
                                        double fixed_variance, std::size_t S, std::uint64_t seed,
                                        const SamplerConfig& cfg) {
  const Eigen::Index k = x.cols();
  Rng rng = make_rng(seed);

  Vector init_prec(k);
  for (Eigen::Index j = 0; j < k; ++j) init_prec[j] = shrink[static_cast<std::size_t>(j)] ? 1.0 : 1.0 / fixed_variance;
  const LogisticFit mode = logistic_mode(x, resp, init_prec);
  const Matrix data_info = mode.hessian - Matrix(init_prec.asDiagonal());

  Vector theta = mode.coef;
  Vector local2 = Vector::Ones(k);
  Vector nu = Vector::Ones(k);
  double tau2 = 1.0;
  double xi = 1.0;
  const auto n_shrunk = static_cast<double>(std::count(shrink.begin(), shrink.end(), true));
  double log_scale = std::log(2.38 / std::sqrt(static_cast<double>(k)));

  DrawSet out;
  out.draws.resize(static_cast<Eigen::Index>(S), k);
  const std::size_t thin = std::max<std::size_t>(cfg.thin, 1);
  const std::size_t total = cfg.burn_in + S * thin;
  const std::size_t inner = std::max<std::size_t>(cfg.inner_steps, 1);
  std::size_t row = 0;
  std::size_t accepted_after = 0;
  std::size_t proposals_after = 0;
  Vector prec(k);
  for (std::size_t it = 0; it < total; ++it) {
    for (Eigen::Index j = 0; j < k; ++j) {
      prec[j] = shrink[static_cast<std::size_t>(j)] ? 1.0 / clamp_scale(local2[j] * tau2) : 1.0 / fixed_variance;
    }
    Matrix h = data_info;
    h.diagonal() += prec;
    Eigen::LLT<Matrix> llt(h);
    if (llt.info() != Eigen::Success) throw LinearAlgebraError("horseshoe proposal matrix is not positive definite");
    double log_target = logistic_log_target(x, resp, prec, theta);
    for (std::size_t m = 0; m < inner; ++m) {
      const Vector proposal = theta + std::exp(log_scale) * llt.matrixU().solve(standard_normal_vector(rng, k));
      const double prop_target = logistic_log_target(x, resp, prec, proposal);
      const double log_ratio = prop_target - log_target;
      const bool accept = std::log(uniform01(rng)) < log_ratio;
      if (accept) {
        theta = proposal;
        log_target = prop_target;
      }
      if (it < cfg.burn_in) {
        const double alpha_acc = std::min(1.0, std::exp(std::min(0.0, log_ratio)));
        log_scale += (alpha_acc - cfg.target_acceptance) /
                     std::pow(static_cast<double>(it * inner + m) + 1.0, 0.6);
      } else {
        ++proposals_after;
        if (accept) ++accepted_after;
      }
    }

    double sum_scaled = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      if (!shrink[static_cast<std::size_t>(j)]) continue;
      local2[j] = clamp_scale(inverse_gamma_draw(rng, 1.0, 1.0 / nu[j] + theta[j] * theta[j] / (2.0 * tau2)));
      nu[j] = inverse_gamma_draw(rng, 1.0, 1.0 + 1.0 / local2[j]);
      sum_scaled += theta[j] * theta[j] / local2[j];
    }
    if (n_shrunk > 0) {
      tau2 = clamp_scale(inverse_gamma_draw(rng, 0.5 * (n_shrunk + 1.0), 1.0 / xi + sum_scaled / 2.0));
      xi = inverse_gamma_draw(rng, 1.0, 1.0 + 1.0 / tau2);
    }
    if (it >= cfg.burn_in && (it - cfg.burn_in + 1) % thin == 0) {
      out.draws.row(static_cast<Eigen::Index>(row++)) = theta.transpose();
    }
  }
  const double rate = static_cast<double>(accepted_after) / static_cast<double>(std::max<std::size_t>(proposals_after, 1));
  out.diagnostics.acceptance_rate = rate;
  if (rate < 0.05 || rate > 0.8) {
    out.diagnostics.warnings.push_back("Metropolis acceptance rate " + std::to_string(rate) +
                                       " outside [0.05, 0.8] after adaptation");
  }
  return out;
}

inline void finish_drawset(DrawSet& ds, Block block, std::vector<std::string> names, std::uint64_t seed) {
  ds.block = block;
  ds.names = std::move(names);
  ds.rng_seed = seed;
  ds.log_weights = Vector::Zero(ds.draws.rows());
  if (!ds.draws.allFinite()) throw NumericalError("sampler produced non-finite draws");
}

}  // namespace detail

/// Closed-form moments of the conjugate normal-inverse-gamma posterior for
/// the gaussian-linear family: beta | s2 ~ N(mean, s2 * scale_matrix) and
/// s2 ~ IG(shape, rate).
struct ConjugatePosterior {
  Vector mean;
  Matrix scale_matrix;
  double shape = 0.0;
  double rate = 0.0;

  /// Marginal covariance of beta (multivariate t).
  Matrix covariance() const { return rate / (shape - 1.0) * scale_matrix; }
};

inline ConjugatePosterior conjugate_posterior(const Matrix& x, const Vector& y, double prior_variance,
                                              const SamplerConfig& cfg = {}) {
  detail::require_full_rank(x);
  const Eigen::Index k = x.cols();
  Matrix prec = x.transpose() * x;
  prec.diagonal().array() += 1.0 / prior_variance;
  Eigen::LLT<Matrix> llt(prec);
  if (llt.info() != Eigen::Success) throw LinearAlgebraError("posterior precision is not positive definite");
  ConjugatePosterior post;
  post.mean = llt.solve(x.transpose() * y);
  post.scale_matrix = llt.solve(Matrix::Identity(k, k));
  post.shape = cfg.noise_shape + 0.5 * static_cast<double>(x.rows());
  post.rate = cfg.noise_scale + 0.5 * (y.squaredNorm() - post.mean.dot(prec * post.mean));
  return post;
}

/// Draws beta for the outcome model. gaussian-linear and general-bayes
/// (with Gaussian prior) are sampled exactly; bernoulli-logistic uses
/// adaptive random-walk Metropolis; horseshoe priors dispatch to
/// sample_horseshoe_posterior.
inline DrawSet sample_horseshoe_posterior(const Dataset& d, Block block, const OutcomeModelSpec& outcome,
                                          const PropensityModelSpec& ps, std::size_t S, std::uint64_t seed,
                                          const SamplerConfig& cfg = {});

inline DrawSet sample_outcome_posterior(const Dataset& d, const OutcomeModelSpec& spec, std::size_t S,
                                        std::uint64_t seed, const SamplerConfig& cfg = {}) {
  require_valid(d);
  detail::require_draw_count(S);
  if (spec.prior.kind == PriorKind::horseshoe) {
    return sample_horseshoe_posterior(d, Block::beta, spec, PropensityModelSpec{}, S, seed, cfg);
  }
  if (!(spec.prior.gaussian_variance > 0.0)) throw DomainError("prior variance must be positive");
  const Matrix x = outcome_design(d, spec);
  const Eigen::Index k = x.cols();
  DrawSet out;
  Rng rng = make_rng(seed);

  switch (spec.family) {
    case OutcomeFamily::gaussian_linear: {
      const ConjugatePosterior post = conjugate_posterior(x, d.y, spec.prior.gaussian_variance, cfg);
      const Matrix chol = detail::lower_cholesky_or_throw(post.scale_matrix, "posterior scale matrix");
      out.draws.resize(static_cast<Eigen::Index>(S), k);
      Vector noise(static_cast<Eigen::Index>(S));
      for (Eigen::Index s = 0; s < static_cast<Eigen::Index>(S); ++s) {
        const double s2 = inverse_gamma_draw(rng, post.shape, post.rate);
        noise[s] = s2;
        out.draws.row(s) = (post.mean + std::sqrt(s2) * (chol * standard_normal_vector(rng, k))).transpose();
      }
      out.noise_variance = noise;
      break;
    }
    case OutcomeFamily::general_bayes_squared_loss: {
      if (!(spec.learning_rate > 0.0)) throw DomainError("learning rate must be positive");
      detail::require_full_rank(x);
      Matrix prec = 2.0 * spec.learning_rate * (x.transpose() * x);
      prec.diagonal().array() += 1.0 / spec.prior.gaussian_variance;
      Eigen::LLT<Matrix> llt(prec);
      if (llt.info() != Eigen::Success) throw LinearAlgebraError("posterior precision is not positive definite");
      const Vector mean = llt.solve(2.0 * spec.learning_rate * (x.transpose() * d.y));
      const Matrix upper = llt.matrixU();
      out.draws.resize(static_cast<Eigen::Index>(S), k);
      for (Eigen::Index s = 0; s < static_cast<Eigen::Index>(S); ++s) {
        out.draws.row(s) = (mean + upper.triangularView<Eigen::Upper>().solve(standard_normal_vector(rng, k))).transpose();
      }
      out.noise_variance = Vector::Constant(static_cast<Eigen::Index>(S), 0.5 / spec.learning_rate);
      break;
    }
    case OutcomeFamily::bernoulli_logistic: {
      for (Eigen::Index i = 0; i < d.n(); ++i) {
        if (d.y[i] != 0.0 && d.y[i] != 1.0) throw DomainError("bernoulli-logistic outcome requires y in {0,1}");
      }
      const Vector prec = Vector::Constant(k, 1.0 / spec.prior.gaussian_variance);
      out = detail::logistic_metropolis(x, d.y, prec, S, seed, cfg);
      detail::check_separation(out);
      break;
    }
  }
  out.model_spec = spec;
  detail::finish_drawset(out, Block::beta, outcome_names(d, spec), seed);
  return out;
}

/// Draws alpha for the logistic propensity model. Reads only A and X.
inline DrawSet sample_propensity_posterior(const Dataset& d, const PropensityModelSpec& spec, std::size_t S,
                                           std::uint64_t seed, const SamplerConfig& cfg = {}) {
  require_valid(d);
  detail::require_draw_count(S);
  if (spec.prior.kind == PriorKind::horseshoe) {
    return sample_horseshoe_posterior(d, Block::alpha, OutcomeModelSpec{}, spec, S, seed, cfg);
  }
  if (!(spec.prior.gaussian_variance > 0.0)) throw DomainError("prior variance must be positive");
  const Matrix x = propensity_design(d, spec.design);
  const Vector prec = Vector::Constant(x.cols(), 1.0 / spec.prior.gaussian_variance);
  DrawSet out = detail::logistic_metropolis(x, d.a, prec, S, seed, cfg);
  detail::check_separation(out);
  out.model_spec = spec;
  detail::finish_drawset(out, Block::alpha, propensity_names(d, spec.design), seed);
  return out;
}

inline DrawSet sample_horseshoe_posterior(const Dataset& d, Block block, const OutcomeModelSpec& outcome,
                                          const PropensityModelSpec& ps, std::size_t S, std::uint64_t seed,
                                          const SamplerConfig& cfg) {
  require_valid(d);
  detail::require_draw_count(S);
  DrawSet out;
  if (block == Block::beta) {
    if (outcome.family != OutcomeFamily::gaussian_linear) {
      throw DomainError("horseshoe outcome posterior supports the gaussian-linear family only");
    }
    const Matrix x = outcome_design(d, outcome);
    std::vector<bool> shrink(static_cast<std::size_t>(x.cols()), true);
    if (outcome.design.intercept) shrink[0] = false;
    if (const Eigen::Index t = treatment_coefficient(outcome); t >= 0) shrink[static_cast<std::size_t>(t)] = false;
    out = detail::horseshoe_linear_gibbs(x, d.y, shrink, outcome.prior.gaussian_variance, S, seed, cfg);
    out.model_spec = outcome;
    detail::finish_drawset(out, Block::beta, outcome_names(d, outcome), seed);
  } else {
    const Matrix x = propensity_design(d, ps.design);
    std::vector<bool> shrink(static_cast<std::size_t>(x.cols()), true);
    if (ps.design.intercept) shrink[0] = false;
    out = detail::horseshoe_logistic_gibbs(x, d.a, shrink, ps.prior.gaussian_variance, S, seed, cfg);
    out.model_spec = ps;
    detail::finish_drawset(out, Block::alpha, propensity_names(d, ps.design), seed);
  }
  return out;
}

/// One draw per row: parameter columns followed by log_weight.
inline void write_drawset_csv(const std::string& path, const DrawSet& ds) {
  std::ofstream out(path);
  if (!out) throw SchemaError("cannot write draws file '" + path + "'");
  for (const auto& name : ds.names) out << name << ',';
  out << "log_weight\n" << std::setprecision(17);
  for (Eigen::Index s = 0; s < ds.size(); ++s) {
    for (Eigen::Index j = 0; j < ds.dim(); ++j) out << ds.draws(s, j) << ',';
    out << ds.log_weights[s] << '\n';
  }
}

}  // namespace drbayes
