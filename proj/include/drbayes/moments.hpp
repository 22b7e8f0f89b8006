#pragma once

// Scalar doubly-robust moment functions used as tilting constraints.
//
//   dr:        (1/n) sum_i (A_i - e_i) / (e_i (1 - e_i)) * (Y_i - m_{A_i}(X_i; beta))
//   selected:  same, with the propensity built on a covariate subset only
//   subclass:  stratum treated shares n_k1 / n_k+ replace e_i, strata being
//              equal-frequency groups of the ranked propensity scores

#include <numeric>
#include <vector>

#include "drbayes/data.hpp"
#include "drbayes/models.hpp"

namespace drbayes {

enum class MomentKind { dr, selected, subclass };

struct MomentSpec {
  MomentKind kind = MomentKind::dr;
  /// Positions into the propensity design's covariate list (kind = selected).
  std::vector<std::size_t> selected_indices;
  /// Number of strata (kind = subclass).
  std::size_t n_strata = 0;
};

/// Evaluates one moment for many (alpha, beta) particles at once.
///
/// For kind = selected the alpha particles must already be expressed on the
/// reduced design; the evaluator restricts the propensity design itself.
class MomentEvaluator {
 public:
  MomentEvaluator(const Dataset& d, const PropensityModelSpec& ps, const OutcomeModelSpec& outcome,
                  MomentSpec spec = {})
      : spec_(std::move(spec)), family_(outcome.family), y_(d.y), a_(d.a) {
    Design ps_design = ps.design;
    if (spec_.kind == MomentKind::selected) {
      if (spec_.selected_indices.empty()) throw DomainError("selected moment needs a nonempty index set");
      ps_design = restrict_design(ps.design, spec_.selected_indices);
    }
    if (spec_.kind == MomentKind::subclass) {
      if (spec_.n_strata < 2) throw PreconditionError("subclassification needs at least 2 strata");
      if (spec_.n_strata > static_cast<std::size_t>(d.n())) {
        throw PreconditionError("more strata than units");
      }
    }
    x_ps_ = propensity_design(d, ps_design);
    x_out_ = outcome_design(d, outcome);
  }

  Eigen::Index alpha_dim() const { return x_ps_.cols(); }
  Eigen::Index beta_dim() const { return x_out_.cols(); }
  const MomentSpec& spec() const { return spec_; }

  /// Moment value per particle (rows of `alphas` and `betas`).
  Vector evaluate(const Matrix& alphas, const Matrix& betas, ClipCounter* clips = nullptr) const {
    if (alphas.rows() != betas.rows()) throw DomainError("alpha and beta particle counts differ");
    if (alphas.cols() != alpha_dim()) {
      throw DomainError("alpha has dimension " + std::to_string(alphas.cols()) + ", expected " +
                        std::to_string(alpha_dim()));
    }
    if (betas.cols() != beta_dim()) {
      throw DomainError("beta has dimension " + std::to_string(betas.cols()) + ", expected " +
                        std::to_string(beta_dim()));
    }
    const Eigen::Index S = alphas.rows();
    const Eigen::Index n = y_.size();
    Vector out(S);
    constexpr Eigen::Index kChunk = 256;
    for (Eigen::Index start = 0; start < S; start += kChunk) {
      const Eigen::Index len = std::min(kChunk, S - start);
      Matrix e = x_ps_ * alphas.middleRows(start, len).transpose();  // n x len
      Matrix r = x_out_ * betas.middleRows(start, len).transpose();
      apply_outcome_mean(family_, r);
      r = (-r).colwise() + y_;
      if (spec_.kind == MomentKind::subclass) {
        for (Eigen::Index c = 0; c < len; ++c) out[start + c] = subclass_value(e.col(c), r.col(c), clips);
        continue;
      }
      Eigen::ArrayXXd p = (1.0 + (-e.array()).exp()).inverse();
      if (clips != nullptr) {
        clips->evaluated += static_cast<std::size_t>(p.size());
        clips->clipped += static_cast<std::size_t>(((p < kPsClip) || (p > 1.0 - kPsClip)).count());
      }
      p = p.max(kPsClip).min(1.0 - kPsClip);
      const Eigen::ArrayXXd ratio = (-p).colwise() + a_.array();
      out.segment(start, len) =
          ((ratio / (p * (1.0 - p))) * r.array()).colwise().sum().transpose() / static_cast<double>(n);
    }
    return out;
  }

  double evaluate(const Vector& alpha, const Vector& beta, ClipCounter* clips = nullptr) const {
    return evaluate(Matrix(alpha.transpose()), Matrix(beta.transpose()), clips)[0];
  }

 private:
  double subclass_value(const Eigen::Ref<const Vector>& eta, const Eigen::Ref<const Vector>& resid,
                        ClipCounter* clips) const {
    const Eigen::Index n = eta.size();
    const auto K = static_cast<Eigen::Index>(spec_.n_strata);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    // expit is monotone, so ranking the linear predictor ranks the scores;
    // ties fall back to the original row index.
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index l, Eigen::Index r) { return eta[l] < eta[r]; });
    std::vector<Eigen::Index> stratum(static_cast<std::size_t>(n));
    std::vector<double> treated(static_cast<std::size_t>(K), 0.0);
    std::vector<double> size(static_cast<std::size_t>(K), 0.0);
    for (Eigen::Index rank = 0; rank < n; ++rank) {
      const Eigen::Index unit = order[static_cast<std::size_t>(rank)];
      const Eigen::Index k = rank * K / n;
      stratum[static_cast<std::size_t>(unit)] = k;
      treated[static_cast<std::size_t>(k)] += a_[unit];
      size[static_cast<std::size_t>(k)] += 1.0;
    }
    for (Eigen::Index k = 0; k < K; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      if (treated[kk] == 0.0 || treated[kk] == size[kk]) {
        throw StratumDegeneracyError("stratum " + std::to_string(k + 1) + " has no " +
                                         (treated[kk] == 0.0 ? "treated" : "control") + " units",
                                     kk + 1);
      }
    }
    if (clips != nullptr) clips->evaluated += static_cast<std::size_t>(n);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(stratum[static_cast<std::size_t>(i)]);
      const double share = treated[k] / size[k];
      acc += (a_[i] / share - (1.0 - a_[i]) / (1.0 - share)) * resid[i];
    }
    return acc / static_cast<double>(n);
  }

  MomentSpec spec_;
  OutcomeFamily family_;
  Vector y_;
  Vector a_;
  Matrix x_ps_;
  Matrix x_out_;
};

inline double dr_moment(const Dataset& d, const Vector& alpha, const Vector& beta, const PropensityModelSpec& ps,
                        const OutcomeModelSpec& outcome, ClipCounter* clips = nullptr) {
  return MomentEvaluator(d, ps, outcome).evaluate(alpha, beta, clips);
}

/// `alpha_s` lives on the propensity design restricted to `selected`
/// (positions into ps.design.columns); beta is the full outcome vector.
inline double selected_moment(const Dataset& d, const Vector& alpha_s, const Vector& beta,
                              const std::vector<std::size_t>& selected, const PropensityModelSpec& ps,
                              const OutcomeModelSpec& outcome, ClipCounter* clips = nullptr) {
  if (selected.empty()) throw DomainError("selected moment needs a nonempty index set");
  PropensityModelSpec reduced = ps;
  reduced.design = restrict_design(ps.design, selected);
  return dr_moment(d, alpha_s, beta, reduced, outcome, clips);
}

inline double subclass_moment(const Dataset& d, const Vector& alpha, const Vector& beta, std::size_t n_strata,
                              const PropensityModelSpec& ps, const OutcomeModelSpec& outcome) {
  MomentSpec spec;
  spec.kind = MomentKind::subclass;
  spec.n_strata = n_strata;
  return MomentEvaluator(d, ps, outcome, spec).evaluate(alpha, beta);
}

}  // namespace drbayes
