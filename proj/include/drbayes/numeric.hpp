#pragma once

// Small numerical helpers shared across modules.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include "drbayes/error.hpp"

namespace drbayes {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

inline double expit(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// log(1 + exp(x)) without overflow.
inline double log1pexp(double x) {
  if (x > 35.0) return x;
  if (x < -35.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

inline double log_sum_exp(std::span<const double> values) {
  if (values.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - m);
  return m + std::log(acc);
}

inline double log_sum_exp(const Vector& values) {
  return log_sum_exp(std::span<const double>(values.data(), static_cast<std::size_t>(values.size())));
}

/// exp-normalize log weights into a simplex vector (max-shifted).
inline Vector normalize_log_weights(const Vector& log_weights) {
  const double m = log_weights.maxCoeff();
  // vectorized exp clamps its argument, so -inf would come back as a denormal
  Vector w = (log_weights.array() == -std::numeric_limits<double>::infinity())
                 .select(0.0, (log_weights.array() - m).exp())
                 .matrix();
  w /= w.sum();
  return w;
}

/// 1 / sum(w^2) for a simplex vector.
inline double effective_sample_size(const Vector& weights) {
  return 1.0 / weights.squaredNorm();
}

inline bool is_simplex(const Vector& w, double tol = 1e-9) {
  if (w.size() == 0) return false;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (!(w[i] >= 0.0) || !std::isfinite(w[i])) return false;
  }
  return std::abs(w.sum() - 1.0) <= tol;
}

inline double sample_mean(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Sample standard deviation with the n-1 denominator.
inline double sample_sd(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  const double m = sample_mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(n - 1));
}

inline double weighted_mean(const Vector& x, const Vector& w) { return w.dot(x) / w.sum(); }

/// Weighted quantile on sorted (value, weight) pairs. Interpolates linearly
/// between mid-points of the cumulative weight steps, which reduces to the
/// usual type-5 sample quantile for uniform weights.
inline double weighted_quantile(const Vector& values, const Vector& weights, double prob) {
  const auto n = static_cast<std::size_t>(values.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return values[static_cast<Eigen::Index>(a)] < values[static_cast<Eigen::Index>(b)];
  });
  const double total = weights.sum();
  std::vector<double> xs;
  std::vector<double> mids;
  xs.reserve(n);
  mids.reserve(n);
  double cum = 0.0;
  for (std::size_t k : order) {
    const double wk = weights[static_cast<Eigen::Index>(k)] / total;
    if (wk <= 0.0) continue;
    mids.push_back(cum + 0.5 * wk);
    xs.push_back(values[static_cast<Eigen::Index>(k)]);
    cum += wk;
  }
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  if (prob <= mids.front()) return xs.front();
  if (prob >= mids.back()) return xs.back();
  const auto it = std::upper_bound(mids.begin(), mids.end(), prob);
  const std::size_t hi = static_cast<std::size_t>(it - mids.begin());
  const std::size_t lo = hi - 1;
  const double t = (prob - mids[lo]) / (mids[hi] - mids[lo]);
  return xs[lo] + t * (xs[hi] - xs[lo]);
}

/// Weighted mean and covariance of the rows of `x`.
inline void weighted_moments(const Matrix& x, const Vector& w, Vector& mean, Matrix& cov) {
  const double total = w.sum();
  mean = (x.transpose() * w) / total;
  const Matrix centered = x.rowwise() - mean.transpose();
  cov = centered.transpose() * (centered.array().colwise() * w.array()).matrix() / total;
}

/// Lower Cholesky factor of a covariance matrix, adding diagonal jitter if
/// the matrix is only positive semidefinite. Throws NumericalError when even
/// the jittered matrix cannot be factored.
inline Matrix covariance_factor(const Matrix& cov) {
  const Eigen::Index k = cov.rows();
  if (k == 0) return Matrix(0, 0);
  const double scale = std::max(cov.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  double jitter = 0.0;
  for (int attempt = 0; attempt < 8; ++attempt) {
    Matrix c = cov;
    c.diagonal().array() += jitter;
    Eigen::LLT<Matrix> llt(c);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    jitter = jitter == 0.0 ? 1e-12 * scale : jitter * 100.0;
  }
  throw NumericalError("covariance matrix is not positive semidefinite after jitter");
}

/// Standard normal quantile.
inline double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

}  // namespace drbayes
