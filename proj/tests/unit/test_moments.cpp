#include "catch_amalgamated.hpp"

#include <random>

#include "fixtures.hpp"

using namespace drbayes;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

PropensityModelSpec intercept_ps() {
  PropensityModelSpec spec;
  spec.design = Design::of({});
  return spec;
}

OutcomeModelSpec intercept_outcome() {
  OutcomeModelSpec spec;
  spec.design = Design::of({});
  spec.include_treatment_main_effect = false;
  return spec;
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

const Vector kTrueAlpha = vec({0.0, 1.0, -0.5, 0.25, 0.1});
const Vector kTrueBeta = vec({100.0, 110.0, 27.4, 13.7, 13.7, 13.7});

}  // namespace

TEST_CASE("dr moment hand evaluations", "[moments]") {
  const Dataset one = fixtures::make_dataset({2.0}, {1.0}, {{0.0}});
  // (1 - 0.5) / (0.5 * 0.5) * (2 - 1)
  CHECK(dr_moment(one, vec({0.0}), vec({1.0}), intercept_ps(), intercept_outcome()) == 2.0);

  const Dataset pair = fixtures::make_dataset({2.0, 2.0}, {1.0, 0.0}, {{0.0}, {0.0}});
  CHECK(dr_moment(pair, vec({0.0}), vec({1.0}), intercept_ps(), intercept_outcome()) == 0.0);

  const Dataset exact = fixtures::make_dataset({1.0, 1.0, 1.0}, {1.0, 0.0, 1.0}, {{0.3}, {-1.0}, {2.0}});
  CHECK(dr_moment(exact, vec({0.2}), vec({1.0}), intercept_ps(), intercept_outcome()) == 0.0);

  CHECK_THROWS_AS(dr_moment(one, vec({0.0, 1.0}), vec({1.0}), intercept_ps(), intercept_outcome()), DomainError);
  CHECK_THROWS_AS(dr_moment(one, vec({0.0}), vec({1.0, 2.0}), intercept_ps(), intercept_outcome()), DomainError);
}

TEST_CASE("dr moment clips extreme propensities", "[moments]") {
  const Dataset one = fixtures::make_dataset({2.0}, {1.0}, {{0.0}});
  ClipCounter clips;
  const double value = dr_moment(one, vec({-40.0}), vec({1.0}), intercept_ps(), intercept_outcome(), &clips);
  const double e = kPsClip;
  CHECK_THAT(value, WithinRel((1.0 - e) / (e * (1.0 - e)), 1e-12));
  CHECK(clips.clipped == 1);
  CHECK(clips.evaluated == 1);
}

TEST_CASE("selected moment hand evaluation and reduction", "[moments]") {
  const Dataset one = fixtures::make_dataset({2.0}, {1.0}, {{0.7, -0.2}});
  PropensityModelSpec ps;
  ps.design = Design::of({0, 1});
  // e_S = 0.25 from the intercept alone when S = {x2} and x2 coefficient is 0
  const double v = selected_moment(one, vec({logit(0.25), 0.0}), vec({1.0}), {1}, ps, intercept_outcome());
  CHECK_THAT(v, WithinRel(0.75 / 0.1875, 1e-12));

  const Dataset d = generate_kang_schafer(300, 5);
  const auto full_ps = fixtures::logistic_ps(d);
  const auto outcome = fixtures::linear_outcome(d);
  std::mt19937_64 gen(1);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    Vector alpha(5);
    Vector beta(6);
    for (auto& x : alpha) x = nd(gen);
    for (auto& x : beta) x = 20.0 * nd(gen);
    CHECK(selected_moment(d, alpha, beta, {0, 1, 2, 3}, full_ps, outcome) ==
          dr_moment(d, alpha, beta, full_ps, outcome));
  }
  CHECK_THROWS_AS(selected_moment(d, kTrueAlpha, kTrueBeta, {}, full_ps, outcome), DomainError);
}

TEST_CASE("subclass moment hand evaluation and contract cases", "[moments]") {
  const Dataset d = fixtures::make_dataset({1, 1, 1, 1}, {1, 0, 0, 1}, {{0.0}, {1.0}, {2.0}, {3.0}});
  PropensityModelSpec ps;
  ps.design = Design::of({0});
  OutcomeModelSpec outcome = intercept_outcome();
  // strata {0,1} and {2,3}, treated share 1/2 in each: (2 - 2 + 2 - 2) / 4
  CHECK(subclass_moment(d, vec({0.0, 1.0}), vec({0.0}), 2, ps, outcome) == 0.0);
  CHECK(subclass_moment(d, vec({0.0, 1.0}), vec({1.0}), 2, ps, outcome) == 0.0);
  CHECK_THROWS_AS(subclass_moment(d, vec({0.0, 1.0}), vec({0.0}), 1, ps, outcome), PreconditionError);

  // residual 1 for treated and 0 for controls: each stratum adds 2 * 1 / 4
  const Dataset skew = fixtures::make_dataset({1, 0, 0, 1}, {1, 0, 0, 1}, {{0.0}, {1.0}, {2.0}, {3.0}});
  CHECK(subclass_moment(skew, vec({0.0, 1.0}), vec({0.0}), 2, ps, outcome) == 1.0);

  const Dataset degenerate = fixtures::make_dataset({1, 1, 1, 1}, {1, 1, 0, 0}, {{0.0}, {1.0}, {2.0}, {3.0}});
  try {
    subclass_moment(degenerate, vec({0.0, 1.0}), vec({0.0}), 2, ps, outcome);
    FAIL("expected a stratum degeneracy error");
  } catch (const StratumDegeneracyError& e) {
    CHECK(e.stratum() == 1);
  }
}

TEST_CASE("moments are linear in the residuals", "[moments][property]") {
  const Dataset d = generate_kang_schafer(250, 14);
  const auto ps = fixtures::logistic_ps(d);
  const auto outcome = fixtures::linear_outcome(d);
  const Vector m = outcome_design(d, outcome) * kTrueBeta;
  const Vector zero_beta = Vector::Zero(6);
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> scale(-4.0, 4.0);
  for (int trial = 0; trial < 25; ++trial) {
    // with m = 0 the residual is y itself; a power-of-two factor scales it exactly
    const double c = std::ldexp(trial % 2 == 0 ? 1.0 : -1.0, static_cast<int>(scale(gen)));
    Dataset scaled = d;
    scaled.y = c * d.y;
    CHECK(dr_moment(scaled, kTrueAlpha, zero_beta, ps, outcome) == c * dr_moment(d, kTrueAlpha, zero_beta, ps, outcome));
    CHECK(subclass_moment(scaled, kTrueAlpha, zero_beta, 5, ps, outcome) ==
          c * subclass_moment(d, kTrueAlpha, zero_beta, 5, ps, outcome));

    const double g = scale(gen);
    scaled.y = m + g * (d.y - m);
    const double base_dr = dr_moment(d, kTrueAlpha, kTrueBeta, ps, outcome);
    const double base_sub = subclass_moment(d, kTrueAlpha, kTrueBeta, 5, ps, outcome);
    CHECK_THAT(dr_moment(scaled, kTrueAlpha, kTrueBeta, ps, outcome), WithinAbs(g * base_dr, 1e-9));
    CHECK_THAT(subclass_moment(scaled, kTrueAlpha, kTrueBeta, 5, ps, outcome), WithinAbs(g * base_sub, 1e-9));
  }
}

TEST_CASE("dr moment at the true nuisance parameters has mean zero", "[moments][property]") {
  for (Eigen::Index n : {Eigen::Index{500}, Eigen::Index{5000}}) {
    std::vector<double> values;
    for (std::uint64_t r = 0; r < 100; ++r) {
      const Dataset d = generate_kang_schafer(n, 7000 + r);
      values.push_back(dr_moment(d, kTrueAlpha, kTrueBeta, fixtures::logistic_ps(d), fixtures::linear_outcome(d)));
    }
    const double se = sample_sd(values) / std::sqrt(100.0);
    INFO("n = " << n << ", mean = " << sample_mean(values) << ", se = " << se);
    CHECK(std::abs(sample_mean(values)) < 3.0 * se);
  }
}

TEST_CASE("batched evaluation matches per-particle evaluation", "[moments]") {
  const Dataset d = generate_kang_schafer(120, 2);
  const auto ps = fixtures::logistic_ps(d);
  const auto outcome = fixtures::linear_outcome(d);
  const MomentEvaluator ev(d, ps, outcome);
  std::mt19937_64 gen(5);
  std::normal_distribution<double> nd;
  Matrix alphas(7, 5);
  Matrix betas(7, 6);
  for (auto& x : alphas.reshaped()) x = nd(gen);
  for (auto& x : betas.reshaped()) x = 10.0 * nd(gen);
  const Vector batched = ev.evaluate(alphas, betas);
  for (Eigen::Index s = 0; s < 7; ++s) {
    const double single = dr_moment(d, alphas.row(s).transpose(), betas.row(s).transpose(), ps, outcome);
    CHECK_THAT(batched[s], WithinAbs(single, 1e-9 * (1.0 + std::abs(single))));
  }
}
