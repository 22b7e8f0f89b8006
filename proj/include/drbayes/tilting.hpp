#pragma once

// Entropic tilting of the product posterior p(alpha|D) p(beta|D) by
// exp{lambda * B(alpha, beta)}, with lambda chosen so that the tilted mean of
// the moment B is zero. Two solvers:
//
//   importance sampling  Newton iterations on sum_s exp(lambda B_s) B_s = 0
//                        over the original draws;
//   sequential MC        a linear lambda grid; each step reweights by the
//                        lambda increment, resamples multinomially and moves
//                        particles with a shrinkage kernel
//                          a * particle + (1 - a) * mean + N(0, (1 - a^2) Sigma),
//                        stopping once the mean moment is within tolerance.
//
// All exp(lambda * B) evaluations are max-shifted in log space.

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <string>
#include <vector>

#include "drbayes/error.hpp"
#include "drbayes/moments.hpp"
#include "drbayes/numeric.hpp"
#include "drbayes/posteriors.hpp"
#include "drbayes/random.hpp"

namespace drbayes {

enum class TiltMethod { importance, smc };

struct TiltConfig {
  TiltMethod method = TiltMethod::smc;
  /// Stopping rule: |mean moment| <= tol_abs + tol_rel * sd(moment values).
  double tol_abs = 1e-8;
  double tol_rel = 1e-4;
  std::size_t max_iter = 100;
  double smoothing = 0.99;
  double lambda_bar = 50.0;
  std::size_t steps = 200;
  double prune_keep_fraction = 1.0;
  std::uint64_t seed = 0;
  /// Beta coordinates copied unchanged through smoothing (empty = none).
  std::vector<bool> frozen_beta;
};

struct ParticleSystem {
  Matrix alpha;  // S x k_alpha
  Matrix beta;   // S x k_beta
  Vector weights;
  double lambda = 0.0;
  Vector moment_values;
  double ess = 0.0;
  std::vector<TiltRecord> history;
  std::vector<std::string> warnings;
  ClipCounter clips;

  Eigen::Index size() const { return alpha.rows(); }
  double mean_moment() const { return weights.dot(moment_values); }
};

inline double tilt_tolerance(const Vector& moments, const TiltConfig& cfg) {
  const double sd = sample_sd(std::span<const double>(moments.data(), static_cast<std::size_t>(moments.size())));
  return cfg.tol_abs + cfg.tol_rel * (std::isfinite(sd) ? sd : 0.0);
}

/// Linear lambda grid (0, lb/T, ..., lb), negated when the untilted mean
/// moment is positive; just (0) when it is exactly zero.
inline std::vector<double> lambda_schedule(double initial_moment_mean, double lambda_bar, std::size_t steps) {
  if (steps < 1) throw DomainError("lambda schedule needs at least one step");
  if (!(lambda_bar > 0.0)) throw DomainError("lambda_bar must be positive");
  if (initial_moment_mean == 0.0) return {0.0};
  const double sign = initial_moment_mean < 0.0 ? 1.0 : -1.0;
  std::vector<double> out(steps + 1);
  for (std::size_t t = 0; t <= steps; ++t) {
    out[t] = sign * static_cast<double>(t) * lambda_bar / static_cast<double>(steps);
  }
  return out;
}

namespace detail {

inline Vector tilted_weights(const Vector& base_log_weights, const Vector& moments, double lambda) {
  return normalize_log_weights(base_log_weights + lambda * moments);
}

inline bool has_both_signs(const Vector& moments, const Vector& base_log_weights) {
  bool pos = false;
  bool neg = false;
  for (Eigen::Index s = 0; s < moments.size(); ++s) {
    if (!std::isfinite(base_log_weights[s])) continue;
    pos = pos || moments[s] > 0.0;
    neg = neg || moments[s] < 0.0;
  }
  return pos && neg;
}

/// Root of h(lambda) = weighted mean of `moments` under base * exp(lambda B),
/// found by bracketing and safeguarded Newton steps. h is nondecreasing.
inline double bracketed_root(const Vector& moments, const Vector& base_log_weights, double tol, double lo,
                             double hi, std::size_t max_iter = 400) {
  auto h = [&](double lam) { return tilted_weights(base_log_weights, moments, lam).dot(moments); };
  if (lo > hi) std::swap(lo, hi);
  if (hi - lo < 1e-12) hi = lo + 1e-12;
  double hlo = h(lo);
  double hhi = h(hi);
  for (int expand = 0; expand < 200 && hlo > 0.0; ++expand) {
    const double width = hi - lo;
    hi = lo;
    hhi = hlo;
    lo -= 2.0 * width;
    hlo = h(lo);
  }
  for (int expand = 0; expand < 200 && hhi < 0.0; ++expand) {
    const double width = hi - lo;
    lo = hi;
    hlo = hhi;
    hi += 2.0 * width;
    hhi = h(hi);
  }
  if (hlo > 0.0 || hhi < 0.0) throw NonConvergenceError("could not bracket the tilting root", lo, hlo);
  if (std::abs(hlo) <= tol) return lo;
  if (std::abs(hhi) <= tol) return hi;
  double lam = 0.5 * (lo + hi);
  for (std::size_t it = 0; it < max_iter; ++it) {
    const Vector w = tilted_weights(base_log_weights, moments, lam);
    const double m1 = w.dot(moments);
    if (std::abs(m1) <= tol) return lam;
    if (m1 < 0.0) {
      lo = lam;
    } else {
      hi = lam;
    }
    const double var = w.dot(moments.cwiseProduct(moments)) - m1 * m1;
    double next = var > 0.0 ? lam - m1 / var : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    lam = next;
  }
  const double residual = h(lam);
  if (std::abs(residual) <= tol) return lam;
  throw NonConvergenceError("bracketed tilting solve did not converge", lam, residual);
}

}  // namespace detail

struct LambdaSolution {
  double lambda = 0.0;
  Vector weights;
  double residual = 0.0;
  std::size_t iterations = 0;
  bool used_bisection = false;
};

/// Importance-sampling solve on fixed moment values: Newton updates
///   lambda <- lambda - sum_s w_s B_s / sum_s w_s B_s^2,  w_s ~ base_s exp(lambda B_s)
/// from lambda = 0, falling back to bisection over [-lambda_bar, lambda_bar]
/// (expanded if needed) when |lambda| exceeds 10 * lambda_bar.
inline LambdaSolution solve_lambda_weights(const Vector& moments, const Vector& base_log_weights,
                                           const TiltConfig& cfg) {
  if (moments.size() != base_log_weights.size()) throw DomainError("moment and weight lengths differ");
  if (!moments.allFinite()) throw NumericalError("non-finite moment values");
  const double tol = tilt_tolerance(moments, cfg);
  LambdaSolution sol;
  sol.weights = detail::tilted_weights(base_log_weights, moments, 0.0);
  sol.residual = sol.weights.dot(moments);
  if (std::abs(sol.residual) <= tol) return sol;
  if (!detail::has_both_signs(moments, base_log_weights)) {
    throw InfeasibleConstraintError("all moment values share one sign; no tilting parameter zeroes their mean");
  }
  double lambda = 0.0;
  for (std::size_t it = 0; it < cfg.max_iter; ++it) {
    sol.iterations = it + 1;
    const Vector w = detail::tilted_weights(base_log_weights, moments, lambda);
    const double m1 = w.dot(moments);
    const double m2 = w.dot(moments.cwiseProduct(moments));
    const double next = lambda - m1 / m2;
    if (!std::isfinite(next) || std::abs(next) > 10.0 * cfg.lambda_bar) {
      sol.used_bisection = true;
      lambda = detail::bracketed_root(moments, base_log_weights, tol, -cfg.lambda_bar, cfg.lambda_bar);
      break;
    }
    lambda = next;
    const Vector wn = detail::tilted_weights(base_log_weights, moments, lambda);
    if (std::abs(wn.dot(moments)) <= tol) break;
  }
  sol.lambda = lambda;
  sol.weights = detail::tilted_weights(base_log_weights, moments, lambda);
  sol.residual = sol.weights.dot(moments);
  if (std::abs(sol.residual) > tol) {
    throw NonConvergenceError("importance-sampling tilt did not converge in " + std::to_string(cfg.max_iter) +
                                  " iterations",
                              lambda, sol.residual);
  }
  return sol;
}

namespace detail {

inline void check_blocks(const DrawSet& alpha_draws, const DrawSet& beta_draws) {
  if (alpha_draws.size() != beta_draws.size()) {
    throw PreconditionError("alpha and beta draw sets have different sizes");
  }
}

inline Vector initial_log_weights(const DrawSet& alpha_draws, const DrawSet& beta_draws) {
  Vector lw = alpha_draws.log_weights + beta_draws.log_weights;
  if (!lw.allFinite()) throw NumericalError("non-finite initial log weights");
  return lw.array() - lw.maxCoeff();
}

}  // namespace detail

/// Importance-sampling tilt of the paired draws (row s of alpha with row s of beta).
inline ParticleSystem solve_lambda_is(const DrawSet& alpha_draws, const DrawSet& beta_draws,
                                      const MomentEvaluator& moment, const TiltConfig& cfg) {
  detail::check_blocks(alpha_draws, beta_draws);
  ParticleSystem ps;
  ps.alpha = alpha_draws.draws;
  ps.beta = beta_draws.draws;
  ps.moment_values = moment.evaluate(ps.alpha, ps.beta, &ps.clips);
  const Vector base = detail::initial_log_weights(alpha_draws, beta_draws);
  const LambdaSolution sol = solve_lambda_weights(ps.moment_values, base, cfg);
  ps.lambda = sol.lambda;
  ps.weights = sol.weights;
  ps.ess = effective_sample_size(ps.weights);
  ps.history.push_back({0, 0.0, normalize_log_weights(base).dot(ps.moment_values),
                        effective_sample_size(normalize_log_weights(base)), ""});
  ps.history.push_back({sol.iterations, ps.lambda, sol.residual, ps.ess, sol.used_bisection ? "bisection" : "final"});
  if (ps.ess < 0.01 * static_cast<double>(ps.size())) {
    ps.warnings.push_back("degenerate importance weights: ESS " + std::to_string(ps.ess) + " below 1% of S");
  }
  return ps;
}

/// Zeroes all but the ceil(keep * S) largest weights and renormalizes.
inline Vector prune_weights(const Vector& weights, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw DomainError("keep_fraction must lie in (0, 1]");
  const Eigen::Index S = weights.size();
  const auto keep = static_cast<Eigen::Index>(std::ceil(keep_fraction * static_cast<double>(S) - 1e-9));
  if (S >= 50 && keep < 50) {
    throw RefusalError("pruning would retain " + std::to_string(keep) + " particles (< 50)");
  }
  if (keep >= S) return weights;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(S));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index l, Eigen::Index r) { return weights[l] > weights[r]; });
  Vector out = Vector::Zero(S);
  for (Eigen::Index k = 0; k < keep; ++k) out[order[static_cast<std::size_t>(k)]] = weights[order[static_cast<std::size_t>(k)]];
  return out / out.sum();
}

/// Retains the ceil(keep * S) particles with largest weights and renormalizes.
inline ParticleSystem prune_particles(const ParticleSystem& ps, double keep_fraction) {
  const Vector pruned = prune_weights(ps.weights, keep_fraction);
  if (keep_fraction == 1.0) return ps;
  std::vector<Eigen::Index> kept;
  for (Eigen::Index s = 0; s < pruned.size(); ++s) {
    if (pruned[s] > 0.0) kept.push_back(s);
  }
  ParticleSystem out;
  const auto m = static_cast<Eigen::Index>(kept.size());
  out.alpha.resize(m, ps.alpha.cols());
  out.beta.resize(m, ps.beta.cols());
  out.weights.resize(m);
  out.moment_values.resize(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    const Eigen::Index s = kept[static_cast<std::size_t>(r)];
    out.alpha.row(r) = ps.alpha.row(s);
    out.beta.row(r) = ps.beta.row(s);
    out.weights[r] = pruned[s];
    out.moment_values[r] = ps.moment_values[s];
  }
  out.lambda = ps.lambda;
  out.ess = effective_sample_size(out.weights);
  out.history = ps.history;
  out.warnings = ps.warnings;
  out.clips = ps.clips;
  const std::size_t t = ps.history.empty() ? 0 : ps.history.back().t;
  out.history.push_back({t, out.lambda, out.mean_moment(), out.ess, "prune"});
  return out;
}

/// Shrinkage kernel move: a * x + (1 - a) * mean + eps, eps ~ N(0, (1 - a^2) cov).
inline Matrix smooth_particles(const Matrix& resampled, const Vector& mean, const Matrix& cov, double a, Rng& rng) {
  if (!(a > 0.0 && a <= 1.0)) throw DomainError("smoothing coefficient must lie in (0, 1]");
  if (a == 1.0) return resampled;
  const Matrix factor = covariance_factor(cov) * std::sqrt(1.0 - a * a);
  Matrix out = a * resampled;
  out.rowwise() += ((1.0 - a) * mean).transpose();
  const Eigen::Index k = resampled.cols();
  for (Eigen::Index s = 0; s < resampled.rows(); ++s) {
    out.row(s) += (factor * standard_normal_vector(rng, k)).transpose();
  }
  return out;
}

/// Sequential Monte Carlo tilt over the linear lambda grid.
///
/// When an increment would carry the weighted mean moment across zero, the
/// exact crossing point inside that increment is solved on the current
/// particles and the weighted particle set is returned; otherwise the loop
/// resamples, smooths and stops when the equal-weight mean is within tolerance.
inline ParticleSystem solve_lambda_smc(const DrawSet& alpha_draws, const DrawSet& beta_draws,
                                       const MomentEvaluator& moment, const TiltConfig& cfg) {
  detail::check_blocks(alpha_draws, beta_draws);
  const Eigen::Index S = alpha_draws.size();
  if (S < 100) throw PreconditionError("sequential Monte Carlo tilt needs at least 100 particles");
  const Eigen::Index ka = alpha_draws.dim();
  const Eigen::Index kb = beta_draws.dim();
  std::vector<bool> frozen = cfg.frozen_beta;
  if (frozen.empty()) frozen.assign(static_cast<std::size_t>(kb), false);
  if (static_cast<Eigen::Index>(frozen.size()) != kb) throw DomainError("frozen_beta length does not match beta");
  std::vector<Eigen::Index> free_beta;
  for (Eigen::Index j = 0; j < kb; ++j) {
    if (!frozen[static_cast<std::size_t>(j)]) free_beta.push_back(j);
  }
  const Eigen::Index kf = ka + static_cast<Eigen::Index>(free_beta.size());

  ParticleSystem ps;
  ps.alpha = alpha_draws.draws;
  ps.beta = beta_draws.draws;
  ps.moment_values = moment.evaluate(ps.alpha, ps.beta, &ps.clips);
  Vector log_w = detail::initial_log_weights(alpha_draws, beta_draws);
  Vector w = normalize_log_weights(log_w);
  const double mean0 = w.dot(ps.moment_values);
  double tol = tilt_tolerance(ps.moment_values, cfg);
  ps.history.push_back({0, 0.0, mean0, effective_sample_size(w), ""});

  auto finish = [&](double lambda, const Vector& weights) {
    ps.lambda = lambda;
    ps.weights = weights;
    ps.ess = effective_sample_size(weights);
    return ps;
  };
  if (std::abs(mean0) <= tol) return finish(0.0, w);
  if (!detail::has_both_signs(ps.moment_values, log_w)) {
    throw InfeasibleConstraintError("all moment values share one sign; no tilting parameter zeroes their mean");
  }

  const std::vector<double> schedule = lambda_schedule(mean0, cfg.lambda_bar, cfg.steps);
  const double sign0 = mean0 > 0.0 ? 1.0 : -1.0;
  Rng rng = make_rng(cfg.seed, 0x534d43);
  double lambda_prev = 0.0;

  auto joint_free = [&]() {
    Matrix joint(S, kf);
    joint.leftCols(ka) = ps.alpha;
    for (std::size_t j = 0; j < free_beta.size(); ++j) joint.col(ka + static_cast<Eigen::Index>(j)) = ps.beta.col(free_beta[j]);
    return joint;
  };

  for (std::size_t t = 1; t < schedule.size(); ++t) {
    const double delta = schedule[t] - lambda_prev;
    const double current_mean = w.dot(ps.moment_values);
    Vector w_next = normalize_log_weights(log_w + delta * ps.moment_values);
    Vector base = log_w;
    if (cfg.prune_keep_fraction < 1.0) {
      w_next = prune_weights(w_next, cfg.prune_keep_fraction);
      for (Eigen::Index s = 0; s < S; ++s) {
        if (w_next[s] == 0.0) base[s] = -std::numeric_limits<double>::infinity();
      }
      ps.history.push_back({t, schedule[t], w_next.dot(ps.moment_values), effective_sample_size(w_next), "prune"});
    }
    const double next_mean = w_next.dot(ps.moment_values);

    if (current_mean * sign0 <= 0.0 || next_mean * sign0 <= 0.0 || std::abs(next_mean) <= tol) {
      const double step = detail::bracketed_root(ps.moment_values, base, tol, 0.0, delta);
      const Vector wf = normalize_log_weights(base + step * ps.moment_values);
      ps.history.push_back({t, lambda_prev + step, wf.dot(ps.moment_values), effective_sample_size(wf), "final"});
      return finish(lambda_prev + step, wf);
    }

    Vector mean;
    Matrix cov;
    const Matrix joint = joint_free();
    weighted_moments(joint, w_next, mean, cov);

    const std::vector<Eigen::Index> idx = multinomial_resample(rng, w_next, S);
    Matrix resampled(S, kf);
    Matrix beta_next(S, kb);
    for (Eigen::Index s = 0; s < S; ++s) {
      resampled.row(s) = joint.row(idx[static_cast<std::size_t>(s)]);
      beta_next.row(s) = ps.beta.row(idx[static_cast<std::size_t>(s)]);
    }
    const Matrix moved = smooth_particles(resampled, mean, cov, cfg.smoothing, rng);
    ps.alpha = moved.leftCols(ka);
    for (std::size_t j = 0; j < free_beta.size(); ++j) beta_next.col(free_beta[j]) = moved.col(ka + static_cast<Eigen::Index>(j));
    ps.beta = std::move(beta_next);
    if (!ps.alpha.allFinite() || !ps.beta.allFinite()) throw NumericalError("non-finite particles after smoothing");

    ps.moment_values = moment.evaluate(ps.alpha, ps.beta, &ps.clips);
    log_w = Vector::Zero(S);
    w = Vector::Constant(S, 1.0 / static_cast<double>(S));
    lambda_prev = schedule[t];
    tol = tilt_tolerance(ps.moment_values, cfg);
    const double m = ps.moment_values.mean();
    ps.history.push_back({t, lambda_prev, m, effective_sample_size(w_next), ""});
    if (std::abs(m) <= tol) return finish(lambda_prev, w);
  }
  throw NonConvergenceError("lambda schedule exhausted without meeting the tolerance", lambda_prev,
                            w.dot(ps.moment_values), ps.history);
}

inline ParticleSystem tilt(const DrawSet& alpha_draws, const DrawSet& beta_draws, const MomentEvaluator& moment,
                           const TiltConfig& cfg) {
  return cfg.method == TiltMethod::importance ? solve_lambda_is(alpha_draws, beta_draws, moment, cfg)
                                              : solve_lambda_smc(alpha_draws, beta_draws, moment, cfg);
}

/// Columns t, lambda, mean_moment, ess (plus event).
inline void write_history_csv(const std::string& path, const std::vector<TiltRecord>& history) {
  std::ofstream out(path);
  if (!out) throw SchemaError("cannot write history file '" + path + "'");
  out << "t,lambda,mean_moment,ess,event\n" << std::setprecision(17);
  for (const auto& r : history) out << r.t << ',' << r.lambda << ',' << r.mean_moment << ',' << r.ess << ',' << r.event << '\n';
}

}  // namespace drbayes
