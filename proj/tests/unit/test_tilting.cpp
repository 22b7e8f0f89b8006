#include "catch_amalgamated.hpp"

#include <random>

#include "fixtures.hpp"

using namespace drbayes;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

DrawSet draw_set(Matrix draws, Block block) {
  DrawSet ds;
  ds.block = block;
  ds.log_weights = Vector::Zero(draws.rows());
  ds.draws = std::move(draws);
  return ds;
}

// One treated unit with Y = 0 and intercept-only models, so that
// B(alpha, beta) = -beta / expit(alpha); alpha = 0 gives B = -2 beta.
struct ScalarMoment {
  Dataset data = fixtures::make_dataset({0.0}, {1.0}, {{0.0}});
  PropensityModelSpec ps;
  OutcomeModelSpec outcome;
  ScalarMoment() {
    ps.design = Design::of({});
    outcome.design = Design::of({});
    outcome.include_treatment_main_effect = false;
  }
  MomentEvaluator evaluator() const { return MomentEvaluator(data, ps, outcome); }
};

// Root of sum_s exp(lambda B_s) B_s by plain bisection, independent of the library.
double bisection_oracle(const Vector& b, double lo, double hi) {
  auto g = [&](double lam) {
    const double shift = (lam * b.array()).maxCoeff();
    return ((lam * b.array() - shift).exp() * b.array()).sum();
  };
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

TiltConfig importance_cfg() {
  TiltConfig cfg;
  cfg.method = TiltMethod::importance;
  return cfg;
}

void check_particle_invariants(const ParticleSystem& ps) {
  REQUIRE(ps.weights.size() == ps.size());
  CHECK((ps.weights.array() >= 0.0).all());
  CHECK_THAT(ps.weights.sum(), WithinAbs(1.0, 1e-12));
  CHECK(ps.moment_values.allFinite());
  CHECK_THAT(ps.ess, WithinRel(1.0 / ps.weights.squaredNorm(), 1e-9));
}

}  // namespace

TEST_CASE("importance solve on the toy moments matches the bisection oracle", "[tilting]") {
  const Vector b = vec({-1.0, 0.0, 2.0});
  const LambdaSolution sol = solve_lambda_weights(b, Vector::Zero(3), importance_cfg());
  CHECK_THAT(sol.lambda, WithinAbs(-std::log(2.0) / 3.0, 1e-6));
  CHECK_THAT(sol.lambda, WithinAbs(bisection_oracle(b, -5.0, 5.0), 1e-6));
  CHECK(std::abs(sol.weights.dot(b)) <= tilt_tolerance(b, importance_cfg()));

  CHECK(solve_lambda_weights(vec({-1.0, 1.0}), Vector::Zero(2), importance_cfg()).lambda == 0.0);
  CHECK_THROWS_AS(solve_lambda_weights(vec({1.0, 2.0, 3.0}), Vector::Zero(3), importance_cfg()),
                  InfeasibleConstraintError);
}

TEST_CASE("importance solve through draw sets", "[tilting]") {
  const ScalarMoment toy;
  Matrix alpha = Matrix::Zero(3, 1);
  Matrix beta(3, 1);
  beta << 0.5, 0.0, -1.0;
  const ParticleSystem ps =
      solve_lambda_is(draw_set(alpha, Block::alpha), draw_set(beta, Block::beta), toy.evaluator(), importance_cfg());
  CHECK(ps.moment_values == vec({-1.0, 0.0, 2.0}));
  CHECK_THAT(ps.lambda, WithinAbs(-std::log(2.0) / 3.0, 1e-6));
  check_particle_invariants(ps);
  CHECK(std::abs(ps.mean_moment()) <= tilt_tolerance(ps.moment_values, importance_cfg()));
}

TEST_CASE("importance solve falls back to bisection for extreme moments", "[tilting]") {
  // the Newton step from 0 is -mean / second moment, tiny; strongly skewed
  // moments push later steps past the divergence guard
  Vector b(101);
  b.head(100).setConstant(1e-3);
  b[100] = -1e-6;
  TiltConfig cfg = importance_cfg();
  cfg.lambda_bar = 1.0;
  cfg.max_iter = 200;
  const LambdaSolution sol = solve_lambda_weights(b, Vector::Zero(101), cfg);
  CHECK(std::abs(sol.weights.dot(b)) <= tilt_tolerance(b, cfg));
  CHECK(sol.lambda < -1000.0);
  CHECK(sol.used_bisection);
}

TEST_CASE("importance solve reports non-convergence and degenerate weights", "[tilting]") {
  Vector b = Vector::Constant(1000, 1000.0);
  b[0] = -1.0;
  TiltConfig cfg = importance_cfg();
  cfg.max_iter = 1;
  try {
    solve_lambda_weights(b, Vector::Zero(1000), cfg);
    FAIL("expected non-convergence");
  } catch (const NonConvergenceError& e) {
    CHECK(std::isfinite(e.last_lambda()));
    CHECK(std::abs(e.residual()) > 0.0);
  }

  const ScalarMoment toy;
  Matrix beta = Matrix::Constant(1000, 1, -500.0);
  beta(0, 0) = 0.5;
  const ParticleSystem ps = solve_lambda_is(draw_set(Matrix::Zero(1000, 1), Block::alpha),
                                            draw_set(beta, Block::beta), toy.evaluator(), importance_cfg());
  CHECK(ps.ess < 10.0);
  REQUIRE(ps.warnings.size() == 1);
  CHECK(ps.warnings[0].find("degenerate") != std::string::npos);
}

TEST_CASE("lambda schedule follows the sign rule", "[tilting]") {
  CHECK(lambda_schedule(-0.5, 50.0, 5) == std::vector<double>{0, 10, 20, 30, 40, 50});
  CHECK(lambda_schedule(0.5, 50.0, 5) == std::vector<double>{0, -10, -20, -30, -40, -50});
  CHECK(lambda_schedule(0.0, 50.0, 5) == std::vector<double>{0});
}

TEST_CASE("effective sample size", "[tilting]") {
  CHECK_THAT(effective_sample_size(Vector::Constant(100, 0.01)), WithinRel(100.0, 1e-12));
  CHECK(effective_sample_size(vec({1.0, 0.0, 0.0})) == 1.0);
  CHECK(effective_sample_size(vec({0.5, 0.5, 0.0, 0.0})) == 2.0);
}

TEST_CASE("pruning keeps the largest weights", "[tilting]") {
  const Vector w = vec({0.4, 0.3, 0.2, 0.1});
  const Vector pruned = prune_weights(w, 0.5);
  CHECK_THAT(pruned[0], WithinAbs(4.0 / 7.0, 1e-15));
  CHECK_THAT(pruned[1], WithinAbs(3.0 / 7.0, 1e-15));
  CHECK(pruned[2] == 0.0);
  CHECK(pruned[3] == 0.0);
  CHECK(prune_weights(w, 1.0) == w);
  CHECK_THROWS_AS(prune_weights(Vector::Constant(100, 0.01), 0.1), RefusalError);
  CHECK_THROWS_AS(prune_weights(w, 0.0), DomainError);

  ParticleSystem ps;
  ps.alpha = Matrix::Zero(4, 1);
  ps.beta = (Matrix(4, 1) << 1, 2, 3, 4).finished();
  ps.weights = vec({0.1, 0.4, 0.2, 0.3});
  ps.moment_values = vec({-1, 1, -2, 2});
  ps.ess = effective_sample_size(ps.weights);
  const ParticleSystem same = prune_particles(ps, 1.0);
  CHECK(same.weights == ps.weights);
  CHECK(same.history.empty());
  const ParticleSystem half = prune_particles(ps, 0.5);
  REQUIRE(half.size() == 2);
  CHECK(half.beta(0, 0) == 2.0);
  CHECK(half.beta(1, 0) == 4.0);
  CHECK_THAT(half.weights[0], WithinAbs(4.0 / 7.0, 1e-15));
  REQUIRE(half.history.size() == 1);
  CHECK(half.history.back().event == "prune");
  check_particle_invariants(half);
}

TEST_CASE("smoothing with a = 1 leaves the particles unchanged", "[tilting]") {
  Rng rng = make_rng(1);
  Matrix x(50, 2);
  for (auto& v : x.reshaped()) v = standard_normal(rng);
  Vector mean;
  Matrix cov;
  weighted_moments(x, Vector::Constant(50, 1.0 / 50), mean, cov);
  CHECK(smooth_particles(x, mean, cov, 1.0, rng) == x);
}

TEST_CASE("smoothing preserves the particle mean and covariance", "[tilting][property]") {
  Rng rng = make_rng(5);
  constexpr Eigen::Index S = 4000;
  Matrix x(S, 3);
  for (Eigen::Index s = 0; s < S; ++s) {
    const double z0 = standard_normal(rng);
    const double z1 = standard_normal(rng);
    x.row(s) << 1.0 + z0, -2.0 + 0.5 * z0 + z1, 3.0 * standard_normal(rng);
  }
  Vector mean;
  Matrix cov;
  weighted_moments(x, Vector::Constant(S, 1.0 / S), mean, cov);
  for (double a : {0.5, 0.9, 0.99}) {
    constexpr int reps = 20;
    Vector mean_acc = Vector::Zero(3);
    Matrix cov_acc = Matrix::Zero(3, 3);
    for (int r = 0; r < reps; ++r) {
      const Matrix moved = smooth_particles(x, mean, cov, a, rng);
      Vector m;
      Matrix c;
      weighted_moments(moved, Vector::Constant(S, 1.0 / S), m, c);
      mean_acc += m / reps;
      cov_acc += c / reps;
    }
    // the kernel adds N(0, (1 - a^2) cov) independently per particle and repetition
    for (Eigen::Index j = 0; j < 3; ++j) {
      const double se = std::sqrt((1.0 - a * a) * cov(j, j) / (S * reps));
      CHECK(std::abs(mean_acc[j] - mean[j]) < 3.0 * se + 1e-12);
    }
    CHECK((cov_acc - cov).norm() < 0.1 * cov.norm());
  }
}

TEST_CASE("SMC agrees with importance sampling on a two-parameter Gaussian posterior", "[tilting]") {
  const ScalarMoment toy;
  Rng rng = make_rng(77);
  constexpr Eigen::Index S = 20000;
  Matrix alpha(S, 1);
  Matrix beta(S, 1);
  for (Eigen::Index s = 0; s < S; ++s) {
    alpha(s, 0) = 0.3 * standard_normal(rng);
    beta(s, 0) = 0.3 + standard_normal(rng);
  }
  const DrawSet a = draw_set(alpha, Block::alpha);
  const DrawSet b = draw_set(beta, Block::beta);
  const ParticleSystem is = solve_lambda_is(a, b, toy.evaluator(), importance_cfg());
  TiltConfig cfg;
  cfg.seed = 3;
  const ParticleSystem smc = solve_lambda_smc(a, b, toy.evaluator(), cfg);
  CHECK(is.ess >= 0.2 * S);
  CHECK_THAT(smc.lambda, WithinAbs(is.lambda, 0.05));
  check_particle_invariants(smc);
  CHECK(std::abs(smc.mean_moment()) <= tilt_tolerance(smc.moment_values, cfg));
  CHECK(smc.history.front().lambda == 0.0);

  const ParticleSystem again = solve_lambda_smc(a, b, toy.evaluator(), cfg);
  CHECK(again.lambda == smc.lambda);
  CHECK(again.beta == smc.beta);
}

TEST_CASE("SMC exits immediately when the constraint already holds", "[tilting]") {
  // paired units with opposite treatment and equal outcome make B = 0 for every draw
  const Dataset d = fixtures::make_dataset({2.0, 2.0}, {1.0, 0.0}, {{0.0}, {0.0}});
  PropensityModelSpec ps;
  ps.design = Design::of({});
  OutcomeModelSpec outcome;
  outcome.design = Design::of({});
  outcome.include_treatment_main_effect = false;
  Rng rng = make_rng(2);
  Matrix beta(200, 1);
  for (auto& v : beta.reshaped()) v = standard_normal(rng);
  const DrawSet a = draw_set(Matrix::Zero(200, 1), Block::alpha);
  const DrawSet b = draw_set(beta, Block::beta);
  const ParticleSystem out = solve_lambda_smc(a, b, MomentEvaluator(d, ps, outcome), TiltConfig{});
  CHECK(out.lambda == 0.0);
  CHECK(out.beta == beta);
  CHECK(out.weights == Vector::Constant(200, 1.0 / 200));
  CHECK(out.history.size() == 1);
}

TEST_CASE("lambda = 0 reproduces the input draws with uniform weights", "[tilting][property]") {
  Rng rng = make_rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Vector b(50);
    for (auto& v : b) v = 3.0 * standard_normal(rng);
    const Vector w = detail::tilted_weights(Vector::Zero(50), b, 0.0);
    CHECK((w.array() == 1.0 / 50.0).all());
  }
}

TEST_CASE("SMC reports an exhausted schedule with its history", "[tilting]") {
  const ScalarMoment toy;
  Rng rng = make_rng(4);
  Matrix beta(300, 1);
  for (auto& v : beta.reshaped()) v = 2.0 + standard_normal(rng);
  TiltConfig cfg;
  cfg.lambda_bar = 1e-4;
  cfg.steps = 3;
  try {
    solve_lambda_smc(draw_set(Matrix::Zero(300, 1), Block::alpha), draw_set(beta, Block::beta), toy.evaluator(), cfg);
    FAIL("expected non-convergence");
  } catch (const NonConvergenceError& e) {
    CHECK(e.history().size() == 4);
  }
  CHECK_THROWS_AS(solve_lambda_smc(draw_set(Matrix::Zero(50, 1), Block::alpha),
                                   draw_set(beta.topRows(50), Block::beta), toy.evaluator(), cfg),
                  PreconditionError);
}

TEST_CASE("SMC pruning records prune events and still meets the constraint", "[tilting]") {
  const ScalarMoment toy;
  Rng rng = make_rng(12);
  Matrix alpha(2000, 1);
  Matrix beta(2000, 1);
  for (Eigen::Index s = 0; s < 2000; ++s) {
    alpha(s, 0) = 0.2 * standard_normal(rng);
    beta(s, 0) = 0.4 + standard_normal(rng);
  }
  TiltConfig cfg;
  cfg.prune_keep_fraction = 0.8;
  cfg.seed = 8;
  const ParticleSystem ps =
      solve_lambda_smc(draw_set(alpha, Block::alpha), draw_set(beta, Block::beta), toy.evaluator(), cfg);
  const bool pruned = std::any_of(ps.history.begin(), ps.history.end(), [](const TiltRecord& r) { return r.event == "prune"; });
  CHECK(pruned);
  check_particle_invariants(ps);
  CHECK(std::abs(ps.mean_moment()) <= tilt_tolerance(ps.moment_values, cfg));
  // a crossing inside a step returns pruned weights; an exact hit after resampling returns uniform ones
  if (ps.history.back().event == "final") CHECK((ps.weights.array() == 0.0).count() >= 399);
  else CHECK(ps.history.back().event.empty());
}

TEST_CASE("constraint holds on randomized instances for both solvers", "[tilting][property]") {
  for (std::uint64_t k = 0; k < 10; ++k) {
    Dataset d = generate_kang_schafer(200, 500 + k);
    auto outcome = fixtures::linear_outcome(d);
    auto ps = fixtures::logistic_ps(d);
    if (k % 3 == 1) outcome.design = Design::of({0});
    if (k % 3 == 2) ps.design = Design::of({0});
    SamplerConfig sampler;
    sampler.burn_in = 1000;
    const DrawSet alpha = sample_propensity_posterior(d, ps, 2000, derive_seed(k, 1), sampler);
    const DrawSet beta = sample_outcome_posterior(d, outcome, 2000, derive_seed(k, 2), sampler);
    const MomentEvaluator ev(d, ps, outcome);
    TiltConfig cfg;
    cfg.seed = k;
    for (TiltMethod method : {TiltMethod::importance, TiltMethod::smc}) {
      cfg.method = method;
      const ParticleSystem out = tilt(alpha, beta, ev, cfg);
      check_particle_invariants(out);
      CHECK(std::abs(out.weights.dot(out.moment_values)) <= tilt_tolerance(out.moment_values, cfg));
    }
  }
}

TEST_CASE("tilt history exports as CSV", "[tilting]") {
  fixtures::TempFile f("history.csv");
  write_history_csv(f.str(), {{0, 0.0, 0.5, 100.0, ""}, {1, 0.25, 0.0, 90.0, "final"}});
  std::ifstream in(f.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "t,lambda,mean_moment,ess,event");
  std::getline(in, line);
  CHECK(line == "0,0,0.5,100,");
  std::getline(in, line);
  CHECK(line == "1,0.25,0,90,final");
}
