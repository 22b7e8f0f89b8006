#pragma once

// High-dimensional confounder selection with posterior coupling.
//
//   1. horseshoe posteriors for alpha and beta on standardized covariates;
//      S = {j : |posterior mean alpha_j| >= threshold}, intercept always kept
//   2. propensity posterior re-sampled on the covariates in S, then the SMC
//      tilt on the selected moment, moving only alpha_S and beta_S (plus the
//      intercept and treatment coefficients); beta_{S^c} stays frozen.

#include <algorithm>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "drbayes/error.hpp"
#include "drbayes/estimators.hpp"
#include "drbayes/posteriors.hpp"
#include "drbayes/tilting.hpp"

namespace drbayes {

struct SelectionConfig {
  double threshold = 0.01;
  TiltConfig tilt;
  bool standardize = true;
};

/// Positions (into the propensity design's covariate list) whose posterior
/// mean magnitude reaches `threshold`. The intercept is never thresholded.
inline std::vector<std::size_t> select_confounders(const DrawSet& alpha_draws, double threshold) {
  if (!(threshold > 0.0)) throw DomainError("selection threshold must be positive");
  if (alpha_draws.size() == 0) throw PreconditionError("selection needs at least one alpha draw");
  bool intercept = true;
  if (const auto* ps = std::get_if<PropensityModelSpec>(&alpha_draws.model_spec)) intercept = ps->design.intercept;
  const Vector w = alpha_draws.weights();
  const Vector means = alpha_draws.draws.transpose() * w;
  const Eigen::Index off = intercept ? 1 : 0;
  std::vector<std::size_t> selected;
  for (Eigen::Index j = off; j < means.size(); ++j) {
    if (std::abs(means[j]) >= threshold) selected.push_back(static_cast<std::size_t>(j - off));
  }
  if (selected.empty()) {
    throw SelectionEmptyError("no covariate reaches |posterior mean| >= " + std::to_string(threshold) +
                              "; lower the threshold");
  }
  return selected;
}

/// Frozen flags for beta: covariate coefficients whose dataset column is not
/// among `selected_columns`. Intercept and treatment always move.
inline std::vector<bool> frozen_outcome_mask(const OutcomeModelSpec& outcome,
                                             const std::vector<std::size_t>& selected_columns) {
  std::vector<bool> frozen(static_cast<std::size_t>(outcome_dim(outcome)), false);
  std::size_t off = (outcome.design.intercept ? 1 : 0) + (outcome.include_treatment_main_effect ? 1 : 0);
  for (std::size_t k = 0; k < outcome.design.columns.size(); ++k) {
    const bool keep = std::find(selected_columns.begin(), selected_columns.end(), outcome.design.columns[k]) !=
                      selected_columns.end();
    frozen[off + k] = !keep;
  }
  return frozen;
}

struct SelectionResult {
  double threshold = 0.0;
  std::vector<std::size_t> selected;  // positions into the propensity design
  std::vector<std::string> selected_names;
  std::vector<std::string> dropped_names;
  DrawSet alpha_full;
  DrawSet alpha_selected;
  DrawSet beta;
  ParticleSystem particles;
  ATEPosterior original;
  ATEPosterior tilted;
  ATESummary summary;
};

inline SelectionResult coupled_selection(const Dataset& data, const OutcomeModelSpec& outcome_in,
                                         const PropensityModelSpec& ps_in, const SelectionConfig& cfg,
                                         std::size_t draws, std::uint64_t seed, const SamplerConfig& sampler = {},
                                         double level = 0.95) {
  if (!(cfg.threshold > 0.0)) throw DomainError("selection threshold must be positive");
  require_valid(data);
  OutcomeModelSpec outcome = outcome_in;
  PropensityModelSpec ps = ps_in;
  outcome.prior.kind = PriorKind::horseshoe;
  ps.prior.kind = PriorKind::horseshoe;
  const Dataset d = cfg.standardize ? standardize_covariates(data) : data;

  SelectionResult res;
  res.threshold = cfg.threshold;
  res.alpha_full = sample_horseshoe_posterior(d, Block::alpha, outcome, ps, draws, derive_seed(seed, 1), sampler);
  res.beta = sample_horseshoe_posterior(d, Block::beta, outcome, ps, draws, derive_seed(seed, 2), sampler);
  res.selected = select_confounders(res.alpha_full, cfg.threshold);

  std::vector<std::size_t> selected_columns;
  for (std::size_t k : res.selected) selected_columns.push_back(ps.design.columns[k]);
  for (std::size_t k = 0; k < ps.design.columns.size(); ++k) {
    const std::string& name = d.column_names.at(ps.design.columns[k]);
    if (std::find(res.selected.begin(), res.selected.end(), k) != res.selected.end()) {
      res.selected_names.push_back(name);
    } else {
      res.dropped_names.push_back(name);
    }
  }

  PropensityModelSpec reduced = ps;
  reduced.design = restrict_design(ps.design, res.selected);
  res.alpha_selected = sample_propensity_posterior(d, reduced, draws, derive_seed(seed, 5), sampler);

  MomentSpec moment;
  moment.kind = MomentKind::selected;
  moment.selected_indices = res.selected;
  const MomentEvaluator evaluator(d, ps, outcome, moment);
  TiltConfig tilt_cfg = cfg.tilt;
  tilt_cfg.method = TiltMethod::smc;
  tilt_cfg.seed = derive_seed(seed, 3);
  tilt_cfg.frozen_beta = frozen_outcome_mask(outcome, selected_columns);
  res.particles = solve_lambda_smc(res.alpha_selected, res.beta, evaluator, tilt_cfg);
  res.original = ate_draws(res.beta, d, outcome);
  res.tilted = ate_draws(res.particles, d, outcome);
  res.summary = summarize(res.tilted, level);
  return res;
}

inline nlohmann::json selection_report_json(const SelectionResult& r, Eigen::Index n, std::uint64_t seed) {
  return {{"threshold", r.threshold},
          {"selected", r.selected_names},
          {"dropped", r.dropped_names},
          {"ate", to_json(r.summary, "coupled-selection", n, seed)},
          {"tilt", tilt_diagnostics_json(r.particles)}};
}

}  // namespace drbayes
