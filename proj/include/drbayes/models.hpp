#pragma once

// Model specifications for the outcome and propensity-score blocks, and the
// design matrices / mean functions both blocks share.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "drbayes/data.hpp"
#include "drbayes/numeric.hpp"

namespace drbayes {

/// Covariate subset plus intercept flag.
struct Design {
  std::vector<std::size_t> columns;
  bool intercept = true;

  /// All covariate columns of `d`, with intercept.
  static Design all(const Dataset& d) {
    Design out;
    out.columns.resize(static_cast<std::size_t>(d.p()));
    std::iota(out.columns.begin(), out.columns.end(), std::size_t{0});
    return out;
  }
  static Design of(std::vector<std::size_t> cols, bool intercept = true) {
    return Design{std::move(cols), intercept};
  }
  bool operator==(const Design&) const = default;
};

enum class PriorKind { gaussian, horseshoe };

struct PriorSpec {
  PriorKind kind = PriorKind::gaussian;
  double gaussian_variance = 100.0;
};

enum class OutcomeFamily { gaussian_linear, bernoulli_logistic, general_bayes_squared_loss };

struct OutcomeModelSpec {
  OutcomeFamily family = OutcomeFamily::gaussian_linear;
  double learning_rate = 1.0;  // omega, general-bayes family only
  bool include_treatment_main_effect = true;
  Design design;
  PriorSpec prior;
};

struct PropensityModelSpec {
  Design design;
  PriorSpec prior;
};

/// Propensity scores enter ratios only after clipping to [kPsClip, 1 - kPsClip].
inline constexpr double kPsClip = 1e-3;

struct ClipCounter {
  std::size_t evaluated = 0;
  std::size_t clipped = 0;

  ClipCounter& operator+=(const ClipCounter& o) {
    evaluated += o.evaluated;
    clipped += o.clipped;
    return *this;
  }
};

inline double clip_ps(double e, ClipCounter* counter = nullptr) {
  const double c = std::clamp(e, kPsClip, 1.0 - kPsClip);
  if (counter != nullptr) {
    ++counter->evaluated;
    if (c != e) ++counter->clipped;
  }
  return c;
}

inline void check_design(const Dataset& d, const Design& design) {
  for (std::size_t c : design.columns) {
    if (c >= static_cast<std::size_t>(d.p())) {
      throw DomainError("design references covariate column " + std::to_string(c) + " but the dataset has " +
                        std::to_string(d.p()));
    }
  }
  if (design.columns.empty() && !design.intercept) throw DomainError("design has no terms");
}

inline Eigen::Index propensity_dim(const PropensityModelSpec& spec) {
  return static_cast<Eigen::Index>(spec.design.columns.size()) + (spec.design.intercept ? 1 : 0);
}

inline Eigen::Index outcome_dim(const OutcomeModelSpec& spec) {
  return static_cast<Eigen::Index>(spec.design.columns.size()) + (spec.design.intercept ? 1 : 0) +
         (spec.include_treatment_main_effect ? 1 : 0);
}

/// Position of the treatment coefficient in beta, or -1 when absent.
inline Eigen::Index treatment_coefficient(const OutcomeModelSpec& spec) {
  if (!spec.include_treatment_main_effect) return -1;
  return spec.design.intercept ? 1 : 0;
}

/// n x k matrix [1, X_cols].
inline Matrix propensity_design(const Dataset& d, const Design& design) {
  check_design(d, design);
  const Eigen::Index off = design.intercept ? 1 : 0;
  Matrix out(d.n(), off + static_cast<Eigen::Index>(design.columns.size()));
  if (design.intercept) out.col(0).setOnes();
  for (std::size_t k = 0; k < design.columns.size(); ++k) {
    out.col(off + static_cast<Eigen::Index>(k)) = d.x.col(static_cast<Eigen::Index>(design.columns[k]));
  }
  return out;
}

/// n x k matrix [1, A, X_cols]; `treatment_value` overrides A when >= 0.
inline Matrix outcome_design(const Dataset& d, const OutcomeModelSpec& spec, double treatment_value = -1.0) {
  check_design(d, spec.design);
  Matrix out(d.n(), outcome_dim(spec));
  Eigen::Index c = 0;
  if (spec.design.intercept) out.col(c++).setOnes();
  if (spec.include_treatment_main_effect) {
    if (treatment_value >= 0.0) {
      out.col(c++).setConstant(treatment_value);
    } else {
      out.col(c++) = d.a;
    }
  }
  for (std::size_t col : spec.design.columns) out.col(c++) = d.x.col(static_cast<Eigen::Index>(col));
  return out;
}

inline std::vector<std::string> propensity_names(const Dataset& d, const Design& design) {
  std::vector<std::string> names;
  if (design.intercept) names.emplace_back("(Intercept)");
  for (std::size_t c : design.columns) names.push_back(d.column_names.at(c));
  return names;
}

inline std::vector<std::string> outcome_names(const Dataset& d, const OutcomeModelSpec& spec) {
  std::vector<std::string> names;
  if (spec.design.intercept) names.emplace_back("(Intercept)");
  if (spec.include_treatment_main_effect) names.emplace_back("treatment");
  for (std::size_t c : spec.design.columns) names.push_back(d.column_names.at(c));
  return names;
}

/// Mean function for the outcome family applied to a linear predictor.
inline double outcome_mean(OutcomeFamily family, double eta) {
  return family == OutcomeFamily::bernoulli_logistic ? expit(eta) : eta;
}

template <typename Derived>
inline void apply_outcome_mean(OutcomeFamily family, Eigen::MatrixBase<Derived>& eta) {
  if (family == OutcomeFamily::bernoulli_logistic) {
    eta = eta.unaryExpr([](double v) { return expit(v); });
  }
}

/// Design restricted to the covariate positions `keep` (indices into design.columns).
inline Design restrict_design(const Design& design, const std::vector<std::size_t>& keep) {
  Design out;
  out.intercept = design.intercept;
  for (std::size_t k : keep) {
    if (k >= design.columns.size()) throw DomainError("selected index out of range of the design");
    out.columns.push_back(design.columns[k]);
  }
  return out;
}

}  // namespace drbayes
