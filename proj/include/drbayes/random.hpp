#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "drbayes/numeric.hpp"

namespace drbayes {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; maps (seed, stream) to a well-separated child seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return Rng(derive_seed(seed, stream));
}

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

inline double uniform01(Rng& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

inline Vector standard_normal_vector(Rng& rng, Eigen::Index k) {
  Vector z(k);
  for (Eigen::Index j = 0; j < k; ++j) z[j] = standard_normal(rng);
  return z;
}

/// Draw from Gamma(shape, rate).
inline double gamma_draw(Rng& rng, double shape, double rate) {
  std::gamma_distribution<double> dist(shape, 1.0 / rate);
  return dist(rng);
}

/// Draw from Inverse-Gamma(shape, scale): 1 / Gamma(shape, rate = scale).
inline double inverse_gamma_draw(Rng& rng, double shape, double scale) {
  return 1.0 / gamma_draw(rng, shape, scale);
}

/// Flat Dirichlet(1, ..., 1) weights of length n.
inline Vector dirichlet_flat(Rng& rng, Eigen::Index n) {
  std::exponential_distribution<double> dist(1.0);
  Vector g(n);
  for (Eigen::Index i = 0; i < n; ++i) g[i] = dist(rng);
  return g / g.sum();
}

/// Multinomial resampling: S indices drawn with probabilities `weights`.
inline std::vector<Eigen::Index> multinomial_resample(Rng& rng, const Vector& weights,
                                                      Eigen::Index count) {
  std::vector<double> cdf(static_cast<std::size_t>(weights.size()));
  double acc = 0.0;
  for (Eigen::Index s = 0; s < weights.size(); ++s) {
    acc += weights[s];
    cdf[static_cast<std::size_t>(s)] = acc;
  }
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(count));
  for (auto& out : idx) {
    const double u = uniform01(rng) * acc;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    if (it == cdf.end()) --it;
    out = static_cast<Eigen::Index>(it - cdf.begin());
  }
  return idx;
}

}  // namespace drbayes
