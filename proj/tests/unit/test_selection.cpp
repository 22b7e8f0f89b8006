#include "catch_amalgamated.hpp"

#include <random>
#include <set>

#include "fixtures.hpp"

using namespace drbayes;
using Catch::Matchers::WithinAbs;

namespace {

DrawSet alpha_with_means(const std::vector<double>& covariate_means) {
  const auto k = static_cast<Eigen::Index>(covariate_means.size());
  PropensityModelSpec spec;
  spec.design.columns.resize(covariate_means.size());
  std::iota(spec.design.columns.begin(), spec.design.columns.end(), std::size_t{0});
  DrawSet ds;
  ds.block = Block::alpha;
  ds.model_spec = spec;
  ds.draws.resize(4, k + 1);
  Rng rng = make_rng(1);
  for (Eigen::Index s = 0; s < 4; ++s) {
    ds.draws(s, 0) = standard_normal(rng);
    // symmetric jitter around the requested mean
    const double jitter = (s % 2 == 0 ? 1.0 : -1.0) * 1e-4;
    for (Eigen::Index j = 0; j < k; ++j) ds.draws(s, j + 1) = covariate_means[static_cast<std::size_t>(j)] + jitter;
  }
  ds.log_weights = Vector::Zero(4);
  return ds;
}

SamplerConfig quick_sampler() {
  SamplerConfig cfg;
  cfg.burn_in = 1000;
  return cfg;
}

}  // namespace

TEST_CASE("select_confounders thresholds posterior means", "[selection]") {
  CHECK(select_confounders(alpha_with_means({0.5, 0.005, -0.02}), 0.01) == std::vector<std::size_t>{0, 2});
  CHECK_THROWS_AS(select_confounders(alpha_with_means({0.5}), 0.0), DomainError);
  CHECK_THROWS_AS(select_confounders(alpha_with_means({0.001, -0.002}), 0.01), SelectionEmptyError);
}

TEST_CASE("44 of 58 synthetic coefficients pass the 0.01 threshold", "[selection]") {
  std::vector<double> means;
  for (int j = 0; j < 58; ++j) {
    const double sign = j % 2 == 0 ? 1.0 : -1.0;
    means.push_back(j < 44 ? sign * (0.0105 + 0.01 * j) : sign * (0.0095 - 0.0005 * (j - 44)));
  }
  std::shuffle(means.begin(), means.end(), std::mt19937_64(3));
  CHECK(select_confounders(alpha_with_means(means), 0.01).size() == 44);
}

TEST_CASE("selected sets shrink as the threshold grows", "[selection][property]") {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> nd(0.0, 0.05);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> means(30);
    for (auto& m : means) m = nd(gen);
    means[0] = 1.0;
    const DrawSet ds = alpha_with_means(means);
    std::vector<std::size_t> previous = select_confounders(ds, 0.001);
    for (double t : {0.005, 0.01, 0.02, 0.05, 0.1}) {
      const auto current = select_confounders(ds, t);
      CHECK(std::includes(previous.begin(), previous.end(), current.begin(), current.end()));
      previous = current;
    }
  }
}

TEST_CASE("frozen outcome mask keeps intercept and treatment free", "[selection]") {
  OutcomeModelSpec outcome;
  outcome.design = Design::of({0, 1, 2, 3});
  CHECK(frozen_outcome_mask(outcome, {0, 2}) == std::vector<bool>{false, false, false, true, false, true});
}

TEST_CASE("coupled selection on the high-dimensional design", "[selection]") {
  const Dataset d = add_irrelevant_covariates(generate_kang_schafer(200, 2024), 40, 2024);
  const auto outcome = fixtures::linear_outcome(d);
  const auto ps = fixtures::logistic_ps(d);
  SelectionConfig cfg;
  cfg.tilt.seed = 1;
  const SelectionResult res = coupled_selection(d, outcome, ps, cfg, 2000, 7, quick_sampler());
  INFO("selected " << res.selected.size() << ", mean " << res.summary.mean << ", sd " << res.summary.sd);
  // at n=200 the 0.25 and 0.1 propensity effects are not identifiable in this draw; X1, X2 are
  CHECK(res.selected[0] == 0);
  CHECK(res.selected[1] == 1);
  CHECK(std::abs(res.summary.mean - kBenchmarkAte) < 2.0);
  CHECK(res.summary.sd < 5.0);
  CHECK(std::abs(res.particles.mean_moment()) <= tilt_tolerance(res.particles.moment_values, cfg.tilt));
  CHECK(res.selected_names.size() + res.dropped_names.size() == 44);

  // frozen coordinates only ever carry values present in the initial draws
  std::vector<std::size_t> selected_columns;
  for (std::size_t k : res.selected) selected_columns.push_back(ps.design.columns[k]);
  const auto frozen = frozen_outcome_mask(outcome, selected_columns);
  for (std::size_t j = 0; j < frozen.size(); ++j) {
    if (!frozen[j]) continue;
    const auto col = res.beta.draws.col(static_cast<Eigen::Index>(j));
    const std::set<double> initial(col.begin(), col.end());
    for (Eigen::Index s = 0; s < res.particles.size(); ++s) {
      CHECK(initial.count(res.particles.beta(s, static_cast<Eigen::Index>(j))) == 1);
    }
  }

  const auto report = selection_report_json(res, d.n(), 7);
  CHECK(report.at("threshold") == 0.01);
  CHECK(report.at("selected").size() == res.selected.size());
  CHECK(report.at("ate").at("method") == "coupled-selection");
}

TEST_CASE("signal covariates are recovered once n is large enough", "[selection]") {
  const Dataset d = add_irrelevant_covariates(generate_kang_schafer(1000, 2024), 40, 2024);
  const auto outcome = fixtures::linear_outcome(d);
  const auto ps = fixtures::logistic_ps(d);
  const SelectionResult res = coupled_selection(d, outcome, ps, SelectionConfig{}, 2000, 7, quick_sampler());
  for (std::size_t j = 0; j < 4; ++j) CHECK(std::find(res.selected.begin(), res.selected.end(), j) != res.selected.end());
  CHECK(res.selected.size() < 44);
}

TEST_CASE("dropping a strong confounder worsens the bias under a misspecified outcome", "[selection]") {
  double correct_bias = 0.0;
  double missing_bias = 0.0;
  for (std::uint64_t r = 0; r < 3; ++r) {
    const Dataset d = generate_kang_schafer(500, 600 + r);
    auto outcome = fixtures::linear_outcome(d);
    outcome.design = Design::of({0});
    const auto ps = fixtures::logistic_ps(d);
    SelectionConfig cfg;
    cfg.threshold = 0.01;
    const SelectionResult full = coupled_selection(d, outcome, ps, cfg, 2000, r, quick_sampler());
    correct_bias += full.summary.mean - kBenchmarkAte;
    // halfway between |alpha_X2| and |alpha_X1| keeps X1 only
    const Vector m = full.alpha_full.draws.transpose() * full.alpha_full.weights();
    REQUIRE(std::abs(m[1]) > std::abs(m[2]));
    cfg.threshold = 0.5 * (std::abs(m[1]) + std::abs(m[2]));
    const SelectionResult forced = coupled_selection(d, outcome, ps, cfg, 2000, r, quick_sampler());
    CHECK(forced.selected == std::vector<std::size_t>{0});
    missing_bias += forced.summary.mean - kBenchmarkAte;
  }
  INFO("correct-S bias " << correct_bias / 3 << ", reduced-S bias " << missing_bias / 3);
  CHECK(std::abs(missing_bias) > std::abs(correct_bias));
}

TEST_CASE("selecting every confounder reduces to the plain pipeline", "[selection]") {
  const Dataset d = generate_kang_schafer(500, 71);
  const auto outcome = fixtures::linear_outcome(d);
  const auto ps = fixtures::logistic_ps(d);
  SelectionConfig cfg;
  cfg.threshold = 1e-6;
  const SelectionResult sel = coupled_selection(d, outcome, ps, cfg, 4000, 3, quick_sampler());
  REQUIRE(sel.selected.size() == 4);

  PipelineSpec spec;
  spec.outcome = outcome;
  spec.propensity = ps;
  spec.draws = 4000;
  spec.sampler = quick_sampler();
  spec.seed = 3;
  const ATESummary plain = summarize(fit_coupled(d, spec).tilted);
  const double se = std::hypot(plain.sd / std::sqrt(plain.ess), sel.summary.sd / std::sqrt(sel.summary.ess));
  INFO("plain " << plain.mean << ", selection " << sel.summary.mean << ", se " << se);
  CHECK(std::abs(plain.mean - sel.summary.mean) <= 3.0 * se);
}
