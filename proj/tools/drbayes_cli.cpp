#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <thread>

#include "drbayes/drbayes.hpp"

using namespace drbayes;
using nlohmann::json;

namespace {

struct Settings {
  std::string command;
  std::string config_path;
  json config = json::object();

  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format = "json";
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());

  std::string input;
  std::string outcome_col = "y";
  std::string treatment_col = "a";
  std::vector<std::string> covariates;
  std::string outcome_family = "gaussian";
  double learning_rate = 1.0;
  std::vector<std::string> ps_cols;
  std::vector<std::string> outcome_cols;
  std::string prior = "gaussian";
  std::string tilt = "smc";
  double prune = 1.0;
  std::size_t draws = 5000;
  std::size_t burn_in = 5000;
  std::vector<std::string> methods{"proposed"};
  std::size_t saarela_replicates = 500;
  double level = 0.95;

  json sens_prior;
  std::size_t sens_M = 200;
  std::string sens_mode = "per-unit";

  double threshold = 0.01;
  std::string long_csv;
};

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config: return 1;
    case ErrorCategory::data: return 2;
    case ErrorCategory::numerical: return 3;
  }
  return 3;
}

const char* category_name(int code) {
  return code == 1 ? "config" : code == 2 ? "data" : "numerical";
}

int fail(int code, const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", {{"category", category_name(code)}, {"kind", kind}, {"message", message}}}}.dump()
            << '\n';
  return code;
}

template <class T>
void take(const json& cfg, const char* key, T& target) {
  if (!cfg.contains(key)) return;
  try {
    target = cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

// Config values first; a flag given on the command line overwrites them afterwards.
void apply_config(Settings& s) {
  const json& c = s.config;
  if (!c.is_object()) throw ConfigError("config must be a JSON object");
  if (c.contains("seed")) {
    std::uint64_t seed = 0;
    take(c, "seed", seed);
    s.seed = seed;
  }
  take(c, "out", s.out);
  take(c, "format", s.format);
  take(c, "threads", s.threads);
  take(c, "input", s.input);
  take(c, "outcome", s.outcome_col);
  take(c, "treatment", s.treatment_col);
  take(c, "covariates", s.covariates);
  take(c, "outcome_family", s.outcome_family);
  take(c, "learning_rate", s.learning_rate);
  take(c, "ps_cols", s.ps_cols);
  take(c, "outcome_cols", s.outcome_cols);
  take(c, "prior", s.prior);
  take(c, "tilt", s.tilt);
  take(c, "prune", s.prune);
  take(c, "draws", s.draws);
  take(c, "burn_in", s.burn_in);
  take(c, "methods", s.methods);
  take(c, "saarela_replicates", s.saarela_replicates);
  take(c, "level", s.level);
  take(c, "threshold", s.threshold);
  take(c, "long_csv", s.long_csv);
  if (c.contains("sensitivity")) {
    const json& sens = c.at("sensitivity");
    if (!sens.is_object()) throw ConfigError("config field 'sensitivity' must be an object");
    if (sens.contains("g")) s.sens_prior = sens.at("g");
    take(sens, "M", s.sens_M);
    take(sens, "mode", s.sens_mode);
  }
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
}

OutcomeFamily parse_family(const std::string& f) {
  if (f == "gaussian") return OutcomeFamily::gaussian_linear;
  if (f == "logistic" || f == "bernoulli") return OutcomeFamily::bernoulli_logistic;
  if (f == "general-bayes") return OutcomeFamily::general_bayes_squared_loss;
  throw ConfigError("unknown outcome family '" + f + "'");
}

PriorSpec parse_prior(const std::string& p) {
  PriorSpec spec;
  if (p == "gaussian") spec.kind = PriorKind::gaussian;
  else if (p == "horseshoe") spec.kind = PriorKind::horseshoe;
  else throw ConfigError("unknown prior '" + p + "'");
  return spec;
}

TiltMethod parse_tilt(const std::string& t) {
  if (t == "is") return TiltMethod::importance;
  if (t == "smc") return TiltMethod::smc;
  throw ConfigError("unknown tilt method '" + t + "' (expected is or smc)");
}

void check_common(const Settings& s) {
  if (!s.seed) throw ConfigError("a seed is required (--seed or config 'seed')");
  if (s.out.empty()) throw ConfigError("an output path is required (--out or config 'out')");
  if (s.format != "json" && s.format != "csv") throw ConfigError("format must be json or csv");
  if (s.threads < 1) throw ConfigError("threads must be at least 1");
  if (!(s.prune > 0.0 && s.prune <= 1.0)) throw ConfigError("prune fraction must lie in (0, 1]");
  if (!(s.level > 0.0 && s.level < 1.0)) throw ConfigError("level must lie in (0, 1)");
}

Design design_from(const Dataset& d, const std::vector<std::string>& cols) {
  if (cols.empty()) return Design::all(d);
  Design out;
  for (const auto& c : cols) out.columns.push_back(d.column_index(c));
  return out;
}

struct Problem {
  Dataset data;
  PipelineSpec pipeline;
};

Problem load_problem(const Settings& s) {
  if (s.input.empty()) throw ConfigError("an input dataset is required (--input or config 'input')");
  if (s.draws < 100) throw ConfigError("draws must be at least 100");
  const OutcomeFamily family = parse_family(s.outcome_family);
  const PriorSpec prior = parse_prior(s.prior);
  const TiltMethod method = parse_tilt(s.tilt);
  Problem p;
  p.data = load_dataset(s.input, s.outcome_col, s.treatment_col, s.covariates);
  require_valid(p.data);
  auto& spec = p.pipeline;
  spec.outcome.family = family;
  spec.outcome.learning_rate = s.learning_rate;
  spec.outcome.design = design_from(p.data, s.outcome_cols);
  spec.outcome.prior = prior;
  spec.propensity.design = design_from(p.data, s.ps_cols);
  spec.propensity.prior = prior;
  spec.tilt.method = method;
  spec.tilt.prune_keep_fraction = s.prune;
  spec.sampler.burn_in = s.burn_in;
  spec.draws = s.draws;
  spec.seed = *s.seed;
  return p;
}

std::string stem_of(const std::string& out) {
  const auto dot = out.find_last_of('.');
  const auto slash = out.find_last_of('/');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) return out;
  return out.substr(0, dot);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw SchemaError("cannot write '" + path + "'");
  out << text;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

json summary_json(const ATESummary& s, const std::string& method, const Dataset& d, std::uint64_t seed) {
  return to_json(s, method, d.n(), seed);
}

void write_summaries(const Settings& s, const json& summaries, const json& report) {
  if (s.format == "json") {
    write_text(s.out, report.dump(2) + "\n");
    return;
  }
  std::ostringstream os;
  os << "method,mean,ci_low,ci_high,level,ess,sd\n";
  for (const auto& r : summaries) {
    auto num = [&](const json& v) { return v.is_number() ? fmt(v.get<double>()) : std::string("NaN"); };
    auto field = [&](const char* k) { return r.contains(k) ? num(r.at(k)) : std::string("NaN"); };
    os << r.at("method").get<std::string>() << ',' << field("mean") << ',' << num(r.at("ci")[0]) << ','
       << num(r.at("ci")[1]) << ',' << field("level") << ',' << field("ess") << ',' << field("sd") << '\n';
  }
  write_text(s.out, os.str());
  write_text(stem_of(s.out) + ".report.json", report.dump(2) + "\n");
}

int cmd_fit(const Settings& s) {
  check_common(s);
  const Problem p = load_problem(s);
  const std::uint64_t seed = *s.seed;
  json summaries = json::array();
  json report = {{"command", "fit"}, {"n", p.data.n()}, {"seed", seed}, {"input", s.input}};
  std::string line;

  const bool wants_tilt = std::find(s.methods.begin(), s.methods.end(), "proposed") != s.methods.end();
  const bool wants_g = std::find(s.methods.begin(), s.methods.end(), "g-formula") != s.methods.end();
  for (const auto& m : s.methods) {
    if (m != "proposed" && m != "g-formula" && m != "freq-dr" && m != "saarela") {
      throw ConfigError("unknown fit method '" + m + "'");
    }
  }
  if (wants_tilt || wants_g) {
    const CoupledFit fit = fit_coupled(p.data, p.pipeline);
    if (wants_tilt) {
      const ATESummary sum = summarize(fit.tilted, s.level);
      summaries.push_back(summary_json(sum, "proposed", p.data, seed));
      line = "proposed mean " + fmt(sum.mean) + " [" + fmt(sum.ci_low) + ", " + fmt(sum.ci_high) + "]";
      const std::string history = stem_of(s.out) + ".history.csv";
      write_history_csv(history, fit.particles.history);
      json diag = tilt_diagnostics_json(fit.particles);
      diag.erase("history");
      diag["history_path"] = history;
      diag["history_events"] = json::array();
      for (const auto& r : fit.particles.history) {
        if (!r.event.empty()) diag["history_events"].push_back({{"t", r.t}, {"event", r.event}});
      }
      diag["method"] = s.tilt;
      diag["prune_keep_fraction"] = s.prune;
      diag["sampler_warnings"] = fit.alpha.diagnostics.warnings;
      for (const auto& w : fit.beta.diagnostics.warnings) diag["sampler_warnings"].push_back(w);
      report["tilt"] = diag;
    }
    if (wants_g) {
      const ATESummary sum = summarize(fit.original, s.level);
      summaries.push_back(summary_json(sum, "g-formula", p.data, seed));
      if (line.empty()) line = "g-formula mean " + fmt(sum.mean) + " [" + fmt(sum.ci_low) + ", " + fmt(sum.ci_high) + "]";
    }
  }
  if (std::find(s.methods.begin(), s.methods.end(), "freq-dr") != s.methods.end()) {
    const DREstimate est = frequentist_dr(p.data, p.pipeline.propensity, p.pipeline.outcome);
    const double z = normal_quantile(0.5 + s.level / 2.0);
    summaries.push_back({{"method", "freq-dr"},
                         {"mean", est.estimate},
                         {"ci", {est.estimate - z * est.se, est.estimate + z * est.se}},
                         {"level", s.level},
                         {"se", est.se},
                         {"n", p.data.n()},
                         {"seed", seed}});
    if (line.empty()) line = "freq-dr estimate " + fmt(est.estimate) + " (se " + fmt(est.se) + ")";
  }
  if (std::find(s.methods.begin(), s.methods.end(), "saarela") != s.methods.end()) {
    const SaarelaResult res = saarela_bootstrap_dr(p.data, p.pipeline.propensity, p.pipeline.outcome,
                                                   s.saarela_replicates, derive_seed(seed, 5));
    const ATESummary sum = summarize(res.posterior, s.level);
    json j = summary_json(sum, "saarela", p.data, seed);
    j["skipped"] = res.skipped;
    j["warnings"] = res.warnings;
    summaries.push_back(j);
    if (line.empty()) line = "saarela mean " + fmt(sum.mean);
  }
  report["ate"] = summaries;
  write_summaries(s, summaries, report);
  std::cout << s.out << '\n' << line << '\n';
  return 0;
}

int cmd_simulate(const Settings& s, const CLI::App& app) {
  check_common(s);
  ScenarioSpec scenario;
  if (s.config.contains("scenario")) scenario = scenario_from_json(s.config.at("scenario"), scenario);
  scenario.base_seed = *s.seed;
  scenario.threads = s.threads;
  scenario.level = s.level;
  if (s.config.contains("draws") || app.count("--draws") > 0) scenario.draws = s.draws;
  if (s.config.contains("burn_in") || app.count("--burn-in") > 0) scenario.sampler.burn_in = s.burn_in;
  if (s.config.contains("saarela_replicates") || app.count("--saarela-replicates") > 0) {
    scenario.saarela_replicates = s.saarela_replicates;
  }
  if (app.count("--method") > 0) {
    scenario.methods.clear();
    for (const auto& m : s.methods) scenario.methods.push_back(sim_method_from_string(m));
  }
  if (s.config.contains("prune") || app.count("--prune") > 0) scenario.prune_keep_fraction = s.prune;
  scenario.tilt.method = parse_tilt(s.tilt);
  const SimulationReport report = run_replications(scenario);
  if (s.format == "csv") {
    write_report_csv(s.out, report);
  } else {
    write_text(s.out, to_json(report).dump(2) + "\n");
  }
  if (!s.long_csv.empty()) write_long_csv(s.long_csv, report);
  std::string line = "J=" + std::to_string(scenario.J);
  for (const auto& r : report.rows) line += "; " + r.method + " ABias " + fmt(r.abias) + " CP " + fmt(r.cp);
  std::cout << s.out << '\n' << line << '\n';
  return 0;
}

int cmd_sensitivity(const Settings& s) {
  check_common(s);
  if (s.sens_prior.is_null()) throw ConfigError("a sensitivity prior is required (--g or config 'sensitivity.g')");
  SensitivitySpec sens;
  sens.g = sensitivity_prior_from_json(s.sens_prior);
  sens.M = s.sens_M;
  if (s.sens_mode == "per-unit") sens.mode = SensitivityMode::per_unit;
  else if (s.sens_mode == "pooled") sens.mode = SensitivityMode::pooled;
  else throw ConfigError("sensitivity mode must be per-unit or pooled");
  validate(sens);
  const Problem p = load_problem(s);
  const SensitivityFit fit = sensitivity_ate(p.data, p.pipeline, sens, s.level);
  const json summary = summary_json(fit.summary, "sensitivity", p.data, *s.seed);
  const std::string history = stem_of(s.out) + ".history.csv";
  write_history_csv(history, fit.fit.particles.history);
  json diag = tilt_diagnostics_json(fit.fit.particles);
  diag.erase("history");
  diag["history_path"] = history;
  const json report = {{"command", "sensitivity"},
                       {"n", p.data.n()},
                       {"seed", *s.seed},
                       {"sensitivity", to_json(sens)},
                       {"reweight_ess", fit.reweight_ess},
                       {"ate", json::array({summary})},
                       {"tilt", diag}};
  write_summaries(s, json::array({summary}), report);
  std::cout << s.out << '\n'
            << "sensitivity mean " << fmt(fit.summary.mean) << " [" << fmt(fit.summary.ci_low) << ", "
            << fmt(fit.summary.ci_high) << "], reweight ESS " << fmt(fit.reweight_ess) << '\n';
  return 0;
}

int cmd_select(const Settings& s) {
  check_common(s);
  const Problem p = load_problem(s);
  SelectionConfig cfg;
  cfg.threshold = s.threshold;
  cfg.tilt = p.pipeline.tilt;
  cfg.tilt.seed = derive_seed(*s.seed, 3);
  const SelectionResult res = coupled_selection(p.data, p.pipeline.outcome, p.pipeline.propensity, cfg, s.draws,
                                                *s.seed, p.pipeline.sampler, s.level);
  json report = selection_report_json(res, p.data.n(), *s.seed);
  const std::string history = stem_of(s.out) + ".history.csv";
  write_history_csv(history, res.particles.history);
  json diag = tilt_diagnostics_json(res.particles);
  diag.erase("history");
  diag["history_path"] = history;
  report["tilt"] = diag;
  json summary = report.at("ate");
  if (s.format == "json") {
    write_text(s.out, report.dump(2) + "\n");
  } else {
    write_summaries(s, json::array({summary}), report);
  }
  std::cout << s.out << '\n'
            << "selected " << res.selected.size() << " of " << p.pipeline.propensity.design.columns.size()
            << " covariates; mean " << fmt(res.summary.mean) << " (sd " << fmt(res.summary.sd) << ")\n";
  return 0;
}

void add_common(CLI::App* sub, Settings& s, bool data_flags) {
  sub->add_option("--config", s.config_path, "JSON config file; flags override its fields");
  sub->add_option("--seed", s.seed, "Seed for every random stream");
  sub->add_option("--out", s.out, "Report path");
  sub->add_option("--threads", s.threads, "Thread budget");
  sub->add_option("--format", s.format, "Report format")->check(CLI::IsMember({"json", "csv"}));
  sub->add_option("--draws", s.draws, "Posterior draws S");
  sub->add_option("--burn-in", s.burn_in, "Sampler burn-in");
  sub->add_option("--tilt", s.tilt, "Tilting solver")->check(CLI::IsMember({"is", "smc"}));
  sub->add_option("--prune", s.prune, "Keep fraction for pruning")->expected(0, 1)->default_str("0.8");
  sub->add_option("--level", s.level, "Credible level");
  if (!data_flags) return;
  sub->add_option("--input", s.input, "Dataset CSV");
  sub->add_option("--outcome", s.outcome_col, "Outcome column");
  sub->add_option("--treatment", s.treatment_col, "Treatment column");
  sub->add_option("--covariates", s.covariates, "Covariate columns")->delimiter(',');
  sub->add_option("--outcome-family", s.outcome_family, "gaussian, logistic or general-bayes");
  sub->add_option("--learning-rate", s.learning_rate, "General-Bayes learning rate");
  sub->add_option("--ps-cols", s.ps_cols, "Propensity model columns")->delimiter(',');
  sub->add_option("--outcome-cols", s.outcome_cols, "Outcome model columns")->delimiter(',');
  sub->add_option("--prior", s.prior, "gaussian or horseshoe");
}

}  // namespace

int main(int argc, char** argv) {
  Settings s;
  Settings flags;
  CLI::App app{"Doubly robust Bayesian ATE estimation"};
  app.require_subcommand(1);

  auto* fit = app.add_subcommand("fit", "Estimate the ATE on a dataset");
  add_common(fit, flags, true);
  fit->add_option("--method", flags.methods, "proposed, g-formula, freq-dr, saarela")->delimiter(',');
  fit->add_option("--saarela-replicates", flags.saarela_replicates, "Bootstrap replicates");

  auto* sim = app.add_subcommand("simulate", "Run a benchmark scenario");
  add_common(sim, flags, false);
  sim->add_option("--method", flags.methods, "Methods to compare")->delimiter(',');
  sim->add_option("--saarela-replicates", flags.saarela_replicates, "Bootstrap replicates");
  sim->add_option("--long-csv", flags.long_csv, "Per-replication CSV path");

  auto* sens = app.add_subcommand("sensitivity", "ATE under an unmeasured-confounding prior");
  add_common(sens, flags, true);
  std::string g_fragment;
  sens->add_option("--g", g_fragment, "Sensitivity prior as JSON");
  sens->add_option("--sens-draws", flags.sens_M, "Draws of the sensitivity parameter per unit");
  sens->add_option("--sens-mode", flags.sens_mode, "per-unit or pooled");

  auto* sel = app.add_subcommand("select", "Coupled confounder selection");
  add_common(sel, flags, true);
  sel->add_option("--threshold", flags.threshold, "Posterior-mean magnitude threshold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(1, "usage", e.what());
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    s.command = sub->get_name();
    if (!flags.config_path.empty()) {
      s.config = read_json_file(flags.config_path);
      apply_config(s);
    }
    auto given = [&](const char* name) { return sub->get_option_no_throw(name) && sub->count(name) > 0; };
    if (given("--seed")) s.seed = flags.seed;
    if (given("--out")) s.out = flags.out;
    if (given("--threads")) s.threads = flags.threads;
    if (given("--format")) s.format = flags.format;
    if (given("--draws")) s.draws = flags.draws;
    if (given("--burn-in")) s.burn_in = flags.burn_in;
    if (given("--tilt")) s.tilt = flags.tilt;
    if (given("--prune")) s.prune = flags.prune;
    if (given("--level")) s.level = flags.level;
    if (given("--input")) s.input = flags.input;
    if (given("--outcome")) s.outcome_col = flags.outcome_col;
    if (given("--treatment")) s.treatment_col = flags.treatment_col;
    if (given("--covariates")) s.covariates = flags.covariates;
    if (given("--outcome-family")) s.outcome_family = flags.outcome_family;
    if (given("--learning-rate")) s.learning_rate = flags.learning_rate;
    if (given("--ps-cols")) s.ps_cols = flags.ps_cols;
    if (given("--outcome-cols")) s.outcome_cols = flags.outcome_cols;
    if (given("--prior")) s.prior = flags.prior;
    if (given("--method")) s.methods = flags.methods;
    if (given("--saarela-replicates")) s.saarela_replicates = flags.saarela_replicates;
    if (given("--long-csv")) s.long_csv = flags.long_csv;
    if (given("--sens-draws")) s.sens_M = flags.sens_M;
    if (given("--sens-mode")) s.sens_mode = flags.sens_mode;
    if (given("--threshold")) s.threshold = flags.threshold;
    if (given("--g")) {
      try {
        s.sens_prior = json::parse(g_fragment);
      } catch (const json::exception& e) {
        throw ConfigError(std::string("--g is not valid JSON: ") + e.what());
      }
    }

    if (s.command == "fit") return cmd_fit(s);
    if (s.command == "simulate") return cmd_simulate(s, *sub);
    if (s.command == "sensitivity") return cmd_sensitivity(s);
    return cmd_select(s);
  } catch (const Error& e) {
    return fail(exit_code(e.category()), e.kind(), e.what());
  } catch (const json::exception& e) {
    return fail(1, "config", e.what());
  } catch (const std::exception& e) {
    return fail(3, "internal", e.what());
  }
}
