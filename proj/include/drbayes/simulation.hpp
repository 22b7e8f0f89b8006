#pragma once

// Benchmark data, misspecification switches, Table-1 style metrics and the
// replication driver.

#include <atomic>
#include <cmath>
#include <fstream>
#include <exception>
#include <iomanip>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "drbayes/data.hpp"
#include "drbayes/error.hpp"
#include "drbayes/estimators.hpp"
#include "drbayes/random.hpp"
#include "drbayes/tilting.hpp"

namespace drbayes {

inline constexpr double kBenchmarkAte = 110.0;

/// X ~ N(0, I_4); e = expit(X1 - 0.5 X2 + 0.25 X3 + 0.1 X4); A ~ Bernoulli(e);
/// Y_a = 100 + 110 a + 13.7 (2 X1 + X2 + X3 + X4) + eps.
inline Dataset generate_kang_schafer(Eigen::Index n, std::uint64_t seed) {
  if (n < 2) throw PreconditionError("generate_kang_schafer needs n >= 2");
  Rng rng = make_rng(seed, 0x4b53);
  Dataset d;
  d.x.resize(n, 4);
  d.a.resize(n);
  d.y.resize(n);
  d.column_names = {"X1", "X2", "X3", "X4"};
  TruthInfo truth;
  truth.true_ps = Vector(n);
  truth.y1 = Vector(n);
  truth.y0 = Vector(n);
  truth.true_ate = kBenchmarkAte;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < 4; ++j) d.x(i, j) = standard_normal(rng);
    const double x1 = d.x(i, 0), x2 = d.x(i, 1), x3 = d.x(i, 2), x4 = d.x(i, 3);
    const double e = expit(x1 - 0.5 * x2 + 0.25 * x3 + 0.1 * x4);
    d.a[i] = uniform01(rng) < e ? 1.0 : 0.0;
    const double base = 100.0 + 13.7 * (2.0 * x1 + x2 + x3 + x4) + standard_normal(rng);
    (*truth.true_ps)[i] = e;
    (*truth.y1)[i] = base + kBenchmarkAte;
    (*truth.y0)[i] = base;
    d.y[i] = d.a[i] == 1.0 ? base + kBenchmarkAte : base;
  }
  d.truth = std::move(truth);
  return d;
}

/// Appends `count` columns X_j ~ N(u_j, 1), u_j ~ U(-1, 1); `centers` receives u.
inline Dataset add_irrelevant_covariates(const Dataset& d, std::size_t count, std::uint64_t seed,
                                         Vector* centers = nullptr) {
  if (count == 0) {
    if (centers != nullptr) centers->resize(0);
    return d;
  }
  Rng rng = make_rng(seed, 0x4952);
  const auto c = static_cast<Eigen::Index>(count);
  Vector u(c);
  for (auto& v : u) v = -1.0 + 2.0 * uniform01(rng);
  Matrix extra(d.n(), c);
  for (Eigen::Index j = 0; j < c; ++j) {
    for (Eigen::Index i = 0; i < d.n(); ++i) extra(i, j) = u[j] + standard_normal(rng);
  }
  std::vector<std::string> names;
  for (Eigen::Index j = 0; j < c; ++j) names.push_back("X" + std::to_string(d.p() + j + 1));
  if (centers != nullptr) *centers = u;
  return append_covariates(d, extra, names);
}

enum class Misspecify { none, ps, outcome, both };
enum class MisspecStyle { drop_to_x1, kang_schafer };

struct MisspecifiedDesigns {
  Dataset data;  // may carry extra transformed columns
  Design ps;
  Design outcome;
};

/// drop-to-X1 restricts the named model(s) to {intercept, X1}; kang-schafer
/// points the named model(s) at the four standardized transformed columns.
/// Unaffected models use every original covariate.
inline MisspecifiedDesigns apply_misspecification(const Dataset& d, Misspecify which, MisspecStyle style) {
  MisspecifiedDesigns out{d, Design::all(d), Design::all(d)};
  if (which == Misspecify::none) return out;
  const bool ps = which == Misspecify::ps || which == Misspecify::both;
  const bool outcome = which == Misspecify::outcome || which == Misspecify::both;
  Design reduced;
  if (style == MisspecStyle::drop_to_x1) {
    const auto it = std::find(d.column_names.begin(), d.column_names.end(), "X1");
    reduced = Design::of({it == d.column_names.end() ? std::size_t{0} : static_cast<std::size_t>(it - d.column_names.begin())});
  } else {
    const Dataset ks = kang_schafer_transform(d);
    const auto first = static_cast<std::size_t>(d.p());
    out.data = append_covariates(d, ks.x, ks.column_names);
    reduced = Design::of({first, first + 1, first + 2, first + 3});
  }
  if (ps) out.ps = reduced;
  if (outcome) out.outcome = reduced;
  return out;
}

struct MetricsRow {
  std::string method;
  double abias = 0.0;
  double ese = 0.0;
  double rmse = 0.0;
  double cp = 0.0;
  double avl = 0.0;
  std::size_t J = 0;
  std::size_t failures = 0;
};

/// ABias = |mean - truth|, ESE with J - 1, RMSE with J, CP in percent, AvL.
inline MetricsRow compute_metrics(const std::vector<double>& estimates,
                                  const std::vector<std::pair<double, double>>& intervals, double truth) {
  if (estimates.size() != intervals.size()) throw DomainError("estimates and intervals differ in length");
  if (estimates.empty()) throw PreconditionError("compute_metrics needs at least one estimate");
  MetricsRow row;
  row.J = estimates.size();
  const double J = static_cast<double>(row.J);
  const double mean = sample_mean(estimates);
  row.abias = std::abs(mean - truth);
  row.ese = row.J >= 2 ? sample_sd(estimates) : std::numeric_limits<double>::quiet_NaN();
  double sq = 0.0;
  double covered = 0.0;
  double length = 0.0;
  for (std::size_t j = 0; j < estimates.size(); ++j) {
    sq += (estimates[j] - truth) * (estimates[j] - truth);
    if (intervals[j].first <= truth && truth <= intervals[j].second) covered += 1.0;
    length += intervals[j].second - intervals[j].first;
  }
  row.rmse = std::sqrt(sq / J);
  row.cp = 100.0 * covered / J;
  row.avl = length / J;
  return row;
}

enum class SimMethod { proposed, proposed_pruned, g_formula, freq_dr, saarela };

inline const char* to_string(SimMethod m) {
  switch (m) {
    case SimMethod::proposed: return "proposed";
    case SimMethod::proposed_pruned: return "proposed-pruned";
    case SimMethod::g_formula: return "g-formula";
    case SimMethod::freq_dr: return "freq-dr";
    case SimMethod::saarela: return "saarela";
  }
  return "?";
}

inline SimMethod sim_method_from_string(const std::string& s) {
  for (SimMethod m : {SimMethod::proposed, SimMethod::proposed_pruned, SimMethod::g_formula, SimMethod::freq_dr,
                      SimMethod::saarela}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("unknown method '" + s + "'");
}

struct ScenarioSpec {
  Eigen::Index n = 500;
  bool ps_correct = true;
  bool outcome_correct = true;
  MisspecStyle misspec_style = MisspecStyle::drop_to_x1;
  std::size_t add_irrelevant = 0;
  std::size_t J = 200;
  std::uint64_t base_seed = 1;
  std::vector<SimMethod> methods{SimMethod::proposed, SimMethod::g_formula};
  /// Posterior draws per replication.
  std::size_t draws = 5000;
  std::size_t saarela_replicates = 500;
  double prune_keep_fraction = 0.8;
  double level = 0.95;
  TiltConfig tilt;
  SamplerConfig sampler;
  unsigned threads = 1;
};

inline void validate(const ScenarioSpec& s) {
  if (s.n < 50) throw ConfigError("scenario n must be at least 50");
  if (s.J < 1) throw ConfigError("scenario J must be at least 1");
  if (s.methods.empty()) throw ConfigError("scenario needs at least one method");
  if (s.draws < 100) throw ConfigError("scenario draws must be at least 100");
  if (!(s.prune_keep_fraction > 0.0 && s.prune_keep_fraction <= 1.0)) {
    throw ConfigError("prune_keep_fraction must lie in (0, 1]");
  }
}

struct ReplicationRecord {
  std::string method;
  std::size_t replication = 0;
  std::uint64_t seed = 0;
  double estimate = std::numeric_limits<double>::quiet_NaN();
  double ci_lo = std::numeric_limits<double>::quiet_NaN();
  double ci_hi = std::numeric_limits<double>::quiet_NaN();
  bool failed = false;
  std::string error;
};

struct SimulationReport {
  ScenarioSpec scenario;
  std::vector<MetricsRow> rows;
  std::vector<ReplicationRecord> per_replication;
};

/// All requested methods on one generated dataset.
inline std::vector<ReplicationRecord> run_one_replication(const ScenarioSpec& spec, std::size_t j) {
  const std::uint64_t seed = spec.base_seed + j;
  Dataset raw = generate_kang_schafer(spec.n, seed);
  raw = add_irrelevant_covariates(raw, spec.add_irrelevant, derive_seed(seed, 7));
  Misspecify which = Misspecify::none;
  if (!spec.ps_correct && !spec.outcome_correct) which = Misspecify::both;
  else if (!spec.ps_correct) which = Misspecify::ps;
  else if (!spec.outcome_correct) which = Misspecify::outcome;
  const MisspecifiedDesigns designs = apply_misspecification(raw, which, spec.misspec_style);
  const Dataset& d = designs.data;

  OutcomeModelSpec outcome;
  outcome.design = designs.outcome;
  PropensityModelSpec ps;
  ps.design = designs.ps;

  std::vector<ReplicationRecord> out;
  auto record = [&](SimMethod m, auto&& body) {
    ReplicationRecord r;
    r.method = to_string(m);
    r.replication = j;
    r.seed = seed;
    try {
      body(r);
    } catch (const Error& e) {
      r.failed = true;
      r.error = e.what();
    }
    out.push_back(std::move(r));
  };

  std::optional<DrawSet> alpha;
  std::optional<DrawSet> beta;
  auto need_alpha = [&]() -> const DrawSet& {
    if (!alpha) alpha = sample_propensity_posterior(d, ps, spec.draws, derive_seed(seed, 1), spec.sampler);
    return *alpha;
  };
  auto need_beta = [&]() -> const DrawSet& {
    if (!beta) beta = sample_outcome_posterior(d, outcome, spec.draws, derive_seed(seed, 2), spec.sampler);
    return *beta;
  };
  auto take = [&](ReplicationRecord& r, const ATESummary& s) {
    r.estimate = s.mean;
    r.ci_lo = s.ci_low;
    r.ci_hi = s.ci_high;
  };

  for (SimMethod m : spec.methods) {
    record(m, [&](ReplicationRecord& r) {
      switch (m) {
        case SimMethod::g_formula: take(r, summarize(ate_draws(need_beta(), d, outcome), spec.level)); break;
        case SimMethod::proposed:
        case SimMethod::proposed_pruned: {
          TiltConfig cfg = spec.tilt;
          cfg.method = TiltMethod::smc;
          cfg.seed = derive_seed(seed, 3);
          cfg.prune_keep_fraction = m == SimMethod::proposed_pruned ? spec.prune_keep_fraction : 1.0;
          const MomentEvaluator moment(d, ps, outcome);
          const ParticleSystem particles = tilt(need_alpha(), need_beta(), moment, cfg);
          take(r, summarize(ate_draws(particles, d, outcome), spec.level));
          break;
        }
        case SimMethod::freq_dr: {
          const DREstimate est = frequentist_dr(d, ps, outcome);
          const double z = normal_quantile(0.5 + 0.5 * spec.level);
          r.estimate = est.estimate;
          r.ci_lo = est.estimate - z * est.se;
          r.ci_hi = est.estimate + z * est.se;
          break;
        }
        case SimMethod::saarela: {
          const SaarelaResult res =
              saarela_bootstrap_dr(d, ps, outcome, spec.saarela_replicates, derive_seed(seed, 6));
          take(r, summarize(res.posterior, spec.level));
          break;
        }
      }
    });
  }
  return out;
}

/// Replications j = 1..J with data seed base_seed + j. Results are assembled
/// in j order whatever the thread count.
inline SimulationReport run_replications(const ScenarioSpec& spec) {
  validate(spec);
  const std::size_t J = spec.J;
  std::vector<std::vector<ReplicationRecord>> results(J);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&]() {
    for (std::size_t k = next++; k < J; k = next++) {
      try {
        results[k] = run_one_replication(spec, k + 1);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(spec.threads, static_cast<unsigned>(J)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  SimulationReport report;
  report.scenario = spec;
  for (auto& rep : results) {
    for (auto& r : rep) report.per_replication.push_back(std::move(r));
  }
  for (SimMethod m : spec.methods) {
    const std::string name = to_string(m);
    std::vector<double> est;
    std::vector<std::pair<double, double>> ci;
    std::size_t failures = 0;
    for (const auto& r : report.per_replication) {
      if (r.method != name) continue;
      if (r.failed) {
        ++failures;
        continue;
      }
      est.push_back(r.estimate);
      ci.emplace_back(r.ci_lo, r.ci_hi);
    }
    if (static_cast<double>(failures) > 0.2 * static_cast<double>(J) || est.empty()) {
      throw NumericalError("method " + name + " failed in " + std::to_string(failures) + " of " + std::to_string(J) +
                           " replications");
    }
    MetricsRow row = compute_metrics(est, ci, kBenchmarkAte);
    row.method = name;
    row.failures = failures;
    report.rows.push_back(row);
  }
  return report;
}

namespace detail {

inline std::string fmt_number(double v) {
  if (std::isnan(v)) return "NaN";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

inline nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

}  // namespace detail

/// Method,ABias,ESE,RMSE,CP,AvL,J,Failures
inline void write_report_csv(const std::string& path, const SimulationReport& report) {
  std::ofstream out(path);
  if (!out) throw SchemaError("cannot write report '" + path + "'");
  out << "Method,ABias,ESE,RMSE,CP,AvL,J,Failures\n";
  for (const auto& r : report.rows) {
    out << r.method << ',' << detail::fmt_number(r.abias) << ',' << detail::fmt_number(r.ese) << ','
        << detail::fmt_number(r.rmse) << ',' << detail::fmt_number(r.cp) << ',' << detail::fmt_number(r.avl) << ','
        << r.J << ',' << r.failures << '\n';
  }
}

/// One row per (method, replication) for external plotting.
inline void write_long_csv(const std::string& path, const SimulationReport& report) {
  std::ofstream out(path);
  if (!out) throw SchemaError("cannot write report '" + path + "'");
  out << "method,replication,seed,estimate,ci_lo,ci_hi,failed\n";
  for (const auto& r : report.per_replication) {
    out << r.method << ',' << r.replication << ',' << r.seed << ',' << detail::fmt_number(r.estimate) << ','
        << detail::fmt_number(r.ci_lo) << ',' << detail::fmt_number(r.ci_hi) << ',' << (r.failed ? 1 : 0) << '\n';
  }
}

inline nlohmann::json to_json(const ScenarioSpec& s) {
  std::vector<std::string> methods;
  for (SimMethod m : s.methods) methods.emplace_back(to_string(m));
  return {{"n", s.n},
          {"ps_correct", s.ps_correct},
          {"outcome_correct", s.outcome_correct},
          {"misspec_style", s.misspec_style == MisspecStyle::drop_to_x1 ? "drop-to-x1" : "kang-schafer"},
          {"add_irrelevant", s.add_irrelevant},
          {"J", s.J},
          {"base_seed", s.base_seed},
          {"methods", methods},
          {"draws", s.draws},
          {"saarela_replicates", s.saarela_replicates},
          {"prune_keep_fraction", s.prune_keep_fraction},
          {"level", s.level}};
}

inline nlohmann::json to_json(const SimulationReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"method", r.method},
                    {"abias", detail::number_or_null(r.abias)},
                    {"ese", detail::number_or_null(r.ese)},
                    {"rmse", detail::number_or_null(r.rmse)},
                    {"cp", detail::number_or_null(r.cp)},
                    {"avl", detail::number_or_null(r.avl)},
                    {"J", r.J},
                    {"failures", r.failures}});
  }
  nlohmann::json reps = nlohmann::json::array();
  for (const auto& r : report.per_replication) {
    nlohmann::json row = {{"method", r.method},
                          {"replication", r.replication},
                          {"seed", r.seed},
                          {"estimate", detail::number_or_null(r.estimate)},
                          {"ci", {detail::number_or_null(r.ci_lo), detail::number_or_null(r.ci_hi)}},
                          {"failed", r.failed}};
    if (r.failed) row["error"] = r.error;
    reps.push_back(std::move(row));
  }
  return {{"scenario", to_json(report.scenario)}, {"rows", rows}, {"per_replication", reps}};
}

/// Fields mirror to_json(ScenarioSpec); absent fields keep the defaults in `base`.
inline ScenarioSpec scenario_from_json(const nlohmann::json& j, ScenarioSpec base = {}) {
  if (!j.is_object()) throw ConfigError("scenario must be a JSON object");
  try {
    if (j.contains("n")) base.n = j.at("n").get<Eigen::Index>();
    if (j.contains("ps_correct")) base.ps_correct = j.at("ps_correct").get<bool>();
    if (j.contains("outcome_correct")) base.outcome_correct = j.at("outcome_correct").get<bool>();
    if (j.contains("misspec_style")) {
      const auto style = j.at("misspec_style").get<std::string>();
      if (style == "drop-to-x1") base.misspec_style = MisspecStyle::drop_to_x1;
      else if (style == "kang-schafer") base.misspec_style = MisspecStyle::kang_schafer;
      else throw ConfigError("unknown misspec_style '" + style + "'");
    }
    if (j.contains("add_irrelevant")) base.add_irrelevant = j.at("add_irrelevant").get<std::size_t>();
    if (j.contains("J")) {
      const auto J = j.at("J").get<long long>();
      if (J < 1) throw ConfigError("scenario J must be at least 1");
      base.J = static_cast<std::size_t>(J);
    }
    if (j.contains("base_seed")) base.base_seed = j.at("base_seed").get<std::uint64_t>();
    if (j.contains("methods")) {
      base.methods.clear();
      for (const auto& m : j.at("methods")) base.methods.push_back(sim_method_from_string(m.get<std::string>()));
    }
    if (j.contains("draws")) base.draws = j.at("draws").get<std::size_t>();
    if (j.contains("saarela_replicates")) base.saarela_replicates = j.at("saarela_replicates").get<std::size_t>();
    if (j.contains("prune_keep_fraction")) base.prune_keep_fraction = j.at("prune_keep_fraction").get<double>();
    if (j.contains("level")) base.level = j.at("level").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid scenario field: ") + e.what());
  }
  return base;
}

}  // namespace drbayes
