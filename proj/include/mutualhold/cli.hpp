#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mutualhold/csv.hpp"
#include "mutualhold/equilibrium.hpp"
#include "mutualhold/measure.hpp"
#include "mutualhold/model.hpp"
#include "mutualhold/nplayer.hpp"
#include "mutualhold/simulate.hpp"
#include "mutualhold/threshold.hpp"

namespace mutualhold::cli {

inline constexpr const char* kVersion = "0.1.0";

/// Configuration problems exit with code 2; numerical failures with code 3.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

using nlohmann::json;

inline std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw config_error("cannot parse number '" + item + "'");
    }
  }
  if (out.empty()) throw config_error("empty numeric list");
  return out;
}

inline std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::vector<std::size_t> out;
  for (double v : parse_double_list(text)) {
    if (v < 1 || v != std::floor(v)) throw config_error("expected positive integers in list");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

template <class T>
T require_key(const json& node, const std::string& section, const std::string& key) {
  if (!node.contains(key))
    throw config_error("missing required key: " + section + "." + key);
  try {
    return node.at(key).get<T>();
  } catch (const json::exception&) {
    throw config_error("malformed value for key: " + section + "." + key);
  }
}

template <class T>
std::optional<T> optional_key(const json& node, const std::string& section, const std::string& key) {
  if (!node.contains(key)) return std::nullopt;
  try {
    return node.at(key).get<T>();
  } catch (const json::exception&) {
    throw config_error("malformed value for key: " + section + "." + key);
  }
}

/// Flags collected by every subcommand; unset optionals fall back to the
/// config file, then to defaults.
struct Options {
  std::string config_path;
  std::string out_dir;
  std::string run_id;
  bool out_dir_set = false;
  bool run_id_set = false;

  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> particles;
  std::optional<std::size_t> steps;
  std::optional<double> horizon;
  std::optional<int> threads;
  std::optional<double> threshold_tol;

  std::optional<std::string> model_kind;
  std::optional<double> theta, mbar, sigbar, b0, sigma0, sigma_floor, drift_bound;

  std::optional<std::string> init_kind;
  std::optional<double> init_mean, init_var;

  std::optional<std::string> b_list, weights_list, atoms_list;
  std::optional<std::string> method;
  std::optional<double> t_eval;
  std::optional<std::size_t> fields_samples;

  std::optional<double> delta;
  std::optional<std::size_t> samples;

  std::optional<double> grid_min, grid_max, bandwidth;
  std::optional<std::size_t> grid_points;

  std::optional<std::size_t> replications;
  std::optional<std::string> deviations_csv;
  std::optional<std::string> n_list_csv;
  bool average_players = false;
};

inline json load_config(const Options& opt) {
  if (opt.config_path.empty()) return json::object();
  std::ifstream in(opt.config_path);
  if (!in) throw config_error("cannot open config file: " + opt.config_path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw config_error(std::string("malformed config: ") + e.what());
  }
}

inline json section(const json& cfg, const char* name) {
  return cfg.contains(name) ? cfg.at(name) : json::object();
}

/// Merges file config and flags into the effective config echoed into the
/// run manifest. Flags win.
struct Effective {
  json doc = json::object();

  json& at(const char* name) {
    if (!doc.contains(name)) doc[name] = json::object();
    return doc[name];
  }
};

inline CoefficientModel build_model(const json& cfg, const Options& opt, Effective& eff) {
  const json node = section(cfg, "model");
  std::string kind = opt.model_kind ? *opt.model_kind
                                    : optional_key<std::string>(node, "model", "kind").value_or("ou");
  const double floor = opt.sigma_floor
                           ? *opt.sigma_floor
                           : optional_key<double>(node, "model", "sigma_floor").value_or(kDefaultSigmaFloor);
  CoefficientModel model;
  try {
    if (kind == "ou") {
      const double theta = opt.theta ? *opt.theta : optional_key<double>(node, "model", "theta").value_or(1.0);
      const double mbar = opt.mbar ? *opt.mbar : optional_key<double>(node, "model", "mbar").value_or(0.0);
      const double sigbar =
          opt.sigbar ? *opt.sigbar : optional_key<double>(node, "model", "sigbar").value_or(1.0);
      model = CoefficientModel::ou(theta, mbar, sigbar, floor);
      eff.at("model") = {{"kind", "ou"}, {"theta", theta}, {"mbar", mbar}, {"sigbar", sigbar},
                         {"sigma_floor", floor}};
    } else if (kind == "constant") {
      const double b0 = opt.b0 ? *opt.b0 : optional_key<double>(node, "model", "b0").value_or(0.0);
      const double sig0 =
          opt.sigma0 ? *opt.sigma0 : optional_key<double>(node, "model", "sigma").value_or(1.0);
      model = CoefficientModel::constant_sign(b0, sig0, floor);
      eff.at("model") = {{"kind", "constant"}, {"b0", b0}, {"sigma", sig0}, {"sigma_floor", floor}};
    } else if (kind == "tabulated") {
      TabulatedParams tab;
      tab.grid = require_key<std::vector<double>>(node, "model", "grid");
      tab.b_values = require_key<std::vector<double>>(node, "model", "b_values");
      tab.sigma_values = require_key<std::vector<double>>(node, "model", "sigma_values");
      tab.time_dependent = optional_key<bool>(node, "model", "time_dependent").value_or(false);
      eff.at("model") = {{"kind", "tabulated"}, {"grid", tab.grid}, {"b_values", tab.b_values},
                         {"sigma_values", tab.sigma_values}, {"time_dependent", tab.time_dependent},
                         {"sigma_floor", floor}};
      model = CoefficientModel::tabulated(std::move(tab), floor);
    } else {
      throw config_error("unknown model kind: " + kind);
    }
    const auto bound = opt.drift_bound ? opt.drift_bound
                                       : optional_key<double>(node, "model", "drift_bound");
    if (bound) {
      model.drift_bound = *bound;
      model.validate();
      eff.at("model")["drift_bound"] = *bound;
    }
  } catch (const std::invalid_argument& e) {
    throw config_error(e.what());
  }
  return model;
}

inline InitialLaw build_initial(const json& cfg, const Options& opt, const CoefficientModel& model,
                                Effective& eff) {
  const json node = section(cfg, "initial");
  std::string kind = opt.init_kind ? *opt.init_kind
                                   : optional_key<std::string>(node, "initial", "kind").value_or("invariant");
  try {
    if (kind == "invariant") {
      const auto* ou = std::get_if<OuParams>(&model.variant);
      if (!ou) throw config_error("initial.kind=invariant requires the ou model");
      const double var = ou->sigbar * ou->sigbar / (2.0 * ou->theta);
      eff.at("initial") = {{"kind", "invariant"}, {"mean", ou->mbar}, {"variance", var}};
      return GaussianSpec{ou->mbar, var};
    }
    if (kind == "gaussian") {
      const double m = opt.init_mean ? *opt.init_mean
                                     : require_key<double>(node, "initial", "mean");
      const double v = opt.init_var ? *opt.init_var
                                    : require_key<double>(node, "initial", "variance");
      GaussianSpec spec{m, v};
      spec.validate();
      eff.at("initial") = {{"kind", "gaussian"}, {"mean", m}, {"variance", v}};
      return spec;
    }
    if (kind == "empirical") {
      const auto atoms = opt.atoms_list ? parse_double_list(*opt.atoms_list)
                                        : require_key<std::vector<double>>(node, "initial", "atoms");
      std::vector<double> weights;
      if (opt.weights_list) {
        weights = parse_double_list(*opt.weights_list);
      } else if (auto w = optional_key<std::vector<double>>(node, "initial", "weights")) {
        weights = *w;
      }
      const Measure1D m = empirical_from_samples(atoms, weights);
      eff.at("initial") = {{"kind", "empirical"}, {"atoms", m.atoms}, {"weights", m.weights}};
      return m;
    }
  } catch (const std::invalid_argument& e) {
    throw config_error(e.what());
  }
  throw config_error("unknown initial kind: " + kind);
}

inline SimConfig build_sim(const json& cfg, const Options& opt, Effective& eff) {
  const json node = section(cfg, "sim");
  SimConfig sim;
  sim.model = build_model(cfg, opt, eff);
  sim.initial = build_initial(cfg, opt, sim.model, eff);
  sim.n_particles = opt.particles ? *opt.particles
                                  : optional_key<std::size_t>(node, "sim", "particles").value_or(0);
  sim.n_steps = opt.steps ? *opt.steps : optional_key<std::size_t>(node, "sim", "steps").value_or(0);
  sim.horizon = opt.horizon ? *opt.horizon : optional_key<double>(node, "sim", "horizon").value_or(0.0);
  if (sim.n_particles == 0) throw config_error("missing required key: sim.particles");
  if (sim.n_steps == 0) throw config_error("missing required key: sim.steps");
  if (!(sim.horizon > 0.0)) throw config_error("missing required key: sim.horizon");
  auto seed = opt.seed ? opt.seed : optional_key<std::uint64_t>(node, "sim", "seed");
  if (!seed) throw config_error("missing required key: seed");
  sim.seed = *seed;
  sim.threads = opt.threads ? *opt.threads : optional_key<int>(node, "sim", "threads").value_or(1);
  sim.threshold_tol = opt.threshold_tol
                          ? *opt.threshold_tol
                          : optional_key<double>(node, "sim", "threshold_tol").value_or(1e-12);
  try {
    sim.validate();
  } catch (const std::invalid_argument& e) {
    throw config_error(e.what());
  }
  eff.at("sim") = {{"particles", sim.n_particles}, {"steps", sim.n_steps},
                   {"horizon", sim.horizon},       {"seed", sim.seed},
                   {"threads", sim.threads},       {"threshold_tol", sim.threshold_tol}};
  return sim;
}

struct GridSpec {
  std::vector<double> points;
  double bandwidth = 0.0;
};

inline GridSpec build_grid(const json& cfg, const Options& opt, std::span<const double> data,
                           Effective& eff) {
  const json node = section(cfg, "grid");
  GridSpec spec;
  spec.bandwidth = opt.bandwidth ? *opt.bandwidth
                                 : optional_key<double>(node, "grid", "bandwidth").value_or(0.0);
  const std::size_t points = opt.grid_points
                                 ? *opt.grid_points
                                 : optional_key<std::size_t>(node, "grid", "points").value_or(512);
  double lo, hi;
  if (opt.grid_min || node.contains("min")) {
    lo = opt.grid_min ? *opt.grid_min : require_key<double>(node, "grid", "min");
    hi = opt.grid_max ? *opt.grid_max : require_key<double>(node, "grid", "max");
  } else {
    const auto [mn, mx] = std::minmax_element(data.begin(), data.end());
    const double span = std::max(*mx - *mn, 1e-6);
    lo = *mn - 0.25 * span;
    hi = *mx + 0.25 * span;
  }
  if (!(hi > lo) || points < 2) throw config_error("invalid grid specification");
  spec.points.resize(points);
  const double step = (hi - lo) / static_cast<double>(points - 1);
  for (std::size_t i = 0; i < points; ++i) spec.points[i] = lo + step * static_cast<double>(i);
  eff.at("grid") = {{"min", lo}, {"max", hi}, {"points", points}, {"bandwidth", spec.bandwidth}};
  return spec;
}

inline std::vector<DeviationStrategy> build_deviations(const json& cfg, const Options& opt,
                                                       Effective& eff) {
  const json node = section(cfg, "nash");
  std::vector<std::string> names;
  if (opt.deviations_csv) {
    std::stringstream ss(*opt.deviations_csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) names.push_back(item);
    }
  } else if (auto v = optional_key<std::vector<std::string>>(node, "nash", "deviations")) {
    names = *v;
  } else {
    names = {"never_hold", "always_hold", "anti_bang_bang"};
  }
  std::vector<DeviationStrategy> out;
  for (const auto& name : names) {
    if (name == "never_hold") {
      out.push_back(DeviationStrategy::never_hold());
    } else if (name == "always_hold") {
      out.push_back(DeviationStrategy::always_hold());
    } else if (name == "anti_bang_bang") {
      out.push_back(DeviationStrategy::anti_bang_bang());
    } else if (name == "null") {
      out.push_back(DeviationStrategy::null_deviation());
    } else {
      throw config_error("unknown deviation: " + name);
    }
  }
  eff.at("nash")["deviations"] = names;
  return out;
}

struct RunContext {
  std::filesystem::path out_dir;
  std::string prefix;
  Effective eff;
  std::vector<std::string> outputs;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  std::filesystem::path file(const std::string& quantity) {
    const auto p = out_dir / (prefix + quantity);
    outputs.push_back(p.filename().string());
    return p;
  }
};

inline RunContext make_context(const json& cfg, const Options& opt) {
  const json node = section(cfg, "output");
  RunContext ctx;
  std::string dir;
  if (opt.out_dir_set) {
    dir = opt.out_dir;
  } else if (auto d = optional_key<std::string>(node, "output", "dir")) {
    dir = *d;
  } else if (const char* env = std::getenv("MUTUALHOLD_OUT")) {
    dir = env;
  } else {
    dir = ".";
  }
  std::string run_id;
  if (opt.run_id_set) {
    run_id = opt.run_id;
  } else if (auto r = optional_key<std::string>(node, "output", "run_id")) {
    run_id = *r;
  }
  ctx.out_dir = dir;
  ctx.prefix = run_id.empty() ? "" : run_id + "_";
  std::error_code ec;
  std::filesystem::create_directories(ctx.out_dir, ec);
  ctx.eff.at("output") = {{"dir", dir}, {"run_id", run_id}};
  return ctx;
}

inline void write_manifest(RunContext& ctx, const std::string& subcommand) {
  const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::steady_clock::now() - ctx.started)
                           .count();
  json manifest = {{"tool", "mutualhold"},
                   {"version", kVersion},
                   {"subcommand", subcommand},
                   {"config", ctx.eff.doc},
                   {"outputs", ctx.outputs},
                   {"wall_ms", elapsed}};
  const auto path = ctx.out_dir / (ctx.prefix + "run_manifest.json");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open manifest: " + path.string());
  out << manifest.dump(2) << '\n';
}

inline void write_summary_csv(RunContext& ctx, const SummaryTables& tables) {
  CsvWriter summary(ctx.file("summary.csv"));
  summary.header({"t", "mean", "variance", "q05", "q25", "median", "q75", "q95"});
  for (const auto& row : tables.per_time) {
    summary.field(row.t).field(row.mean).field(row.variance).field(row.q05).field(row.q25);
    summary.field(row.median).field(row.q75).field(row.q95);
    summary.endrow();
  }
  if (!tables.kde_grid.empty()) {
    CsvWriter kde(ctx.file("kde.csv"));
    kde.header({"x", "density"});
    for (std::size_t i = 0; i < tables.kde_grid.size(); ++i) {
      kde.field(tables.kde_grid[i]).field(tables.kde_values[i]);
      kde.endrow();
    }
  }
}

inline void write_thresholds_csv(RunContext& ctx, const ParticleEnsemble& ens) {
  CsvWriter thr(ctx.file("thresholds.csv"));
  thr.header({"step", "t", "c"});
  for (std::size_t k = 0; k < ens.thresholds.size(); ++k) {
    thr.field(k).field(ens.times[k]).field(ens.thresholds[k]);
    thr.endrow();
  }
}

inline int cmd_solve_threshold(const json& cfg, const Options& opt) {
  const json node = section(cfg, "threshold");
  const auto b = opt.b_list ? parse_double_list(*opt.b_list)
                            : require_key<std::vector<double>>(node, "threshold", "b");
  std::vector<double> w;
  if (opt.weights_list) {
    w = parse_double_list(*opt.weights_list);
  } else if (auto jw = optional_key<std::vector<double>>(node, "threshold", "weights")) {
    w = *jw;
  } else {
    w.assign(b.size(), 1.0 / static_cast<double>(b.size()));
  }
  const double tol = opt.threshold_tol
                         ? *opt.threshold_tol
                         : optional_key<double>(node, "threshold", "tol").value_or(1e-12);
  const std::string method = opt.method ? *opt.method
                                        : optional_key<std::string>(node, "threshold", "method")
                                              .value_or("exact");
  ThresholdMethod m;
  if (method == "exact") {
    m = ThresholdMethod::exact_piecewise;
  } else if (method == "bisection") {
    m = ThresholdMethod::bisection;
  } else {
    throw config_error("unknown threshold method: " + method);
  }
  ThresholdResult result;
  try {
    result = solve_c_empirical(b, w, tol, m);
  } catch (const std::invalid_argument& e) {
    throw config_error(e.what());
  }
  std::cout << "c=" << format_double(result.c) << " residual=" << format_double(result.residual)
            << " iterations=" << result.iterations << " method=" << to_string(result.method)
            << "\n";
  return 0;
}

inline int cmd_equilibrium_fields(const json& cfg, const Options& opt) {
  RunContext ctx = make_context(cfg, opt);
  const json node = section(cfg, "fields");
  const double t = opt.t_eval ? *opt.t_eval : optional_key<double>(node, "fields", "t").value_or(0.0);
  const double tol = opt.threshold_tol ? *opt.threshold_tol : 1e-12;
  CoefficientModel model = build_model(cfg, opt, ctx.eff);

  Measure1D measure;
  if (opt.atoms_list || node.contains("atoms")) {
    const auto atoms = opt.atoms_list ? parse_double_list(*opt.atoms_list)
                                      : require_key<std::vector<double>>(node, "fields", "atoms");
    std::vector<double> weights;
    if (opt.weights_list) {
      weights = parse_double_list(*opt.weights_list);
    } else if (auto jw = optional_key<std::vector<double>>(node, "fields", "weights")) {
      weights = *jw;
    }
    try {
      measure = empirical_from_samples(atoms, weights);
    } catch (const std::invalid_argument& e) {
      throw config_error(e.what());
    }
    ctx.eff.at("fields")["atoms"] = measure.atoms;
    ctx.eff.at("fields")["weights"] = measure.weights;
  } else {
    const std::size_t samples = opt.fields_samples
                                    ? *opt.fields_samples
                                    : optional_key<std::size_t>(node, "fields", "samples").value_or(0);
    if (samples == 0)
      throw config_error("equilibrium-fields needs fields.atoms or fields.samples");
    if (!opt.seed) throw config_error("missing required key: seed");
    const InitialLaw initial = build_initial(cfg, opt, model, ctx.eff);
    SimConfig sampler;
    sampler.n_particles = samples;
    sampler.n_steps = 1;
    sampler.horizon = 1.0;
    sampler.seed = *opt.seed;
    sampler.model = model;
    sampler.initial = initial;
    measure = empirical_from_samples(mutualhold::detail::draw_initial_states(sampler));
  }
  ctx.eff.at("fields")["t"] = t;
  ctx.eff.at("fields")["n_atoms"] = measure.atoms.size();

  const auto fields = compute_fields(model, t, measure, tol);
  CsvWriter out(ctx.file("fields.csv"));
  out.header({"atom", "weight", "b", "B", "Sigma", "holding"});
  for (std::size_t j = 0; j < measure.atoms.size(); ++j) {
    out.field(measure.atoms[j]).field(measure.weights[j]).field(fields.b_vals[j]);
    out.field(fields.B_vals[j]).field(fields.Sigma_vals[j]);
    out.field(static_cast<int>(fields.holding[j]));
    out.endrow();
  }
  write_manifest(ctx, "equilibrium-fields");
  std::cout << "c=" << format_double(fields.c) << " atoms=" << measure.atoms.size() << "\n";
  return 0;
}

inline int cmd_simulate(const json& cfg, const Options& opt, const std::string& which) {
  RunContext ctx = make_context(cfg, opt);
  const SimConfig sim = build_sim(cfg, opt, ctx.eff);
  ParticleEnsemble ens;
  NPlayerRecord record;
  if (which == "simulate-mfg") {
    ens = simulate_equilibrium_mckv(sim);
  } else if (which == "simulate-provisions") {
    ens = simulate_provisions(sim);
  } else {
    record = simulate_nplayer(sim);
    ens = std::move(record.ensemble);
  }
  const auto terminal = ens.terminal();
  const GridSpec grid = build_grid(cfg, opt, terminal, ctx.eff);
  const auto tables = summarize_ensemble(ens, grid.points, grid.bandwidth);
  write_summary_csv(ctx, tables);
  if (!ens.thresholds.empty()) write_thresholds_csv(ctx, ens);
  if (which == "simulate-nplayer") {
    CsvWriter strat(ctx.file("strategy.csv"));
    strat.header({"step", "player", "holding"});
    for (std::size_t k = 0; k < ens.n_steps; ++k) {
      for (std::size_t p = 0; p < ens.n_particles; ++p) {
        strat.field(k).field(p).field(static_cast<int>(record.pi_trace[k * ens.n_particles + p]));
        strat.endrow();
      }
    }
  }
  write_manifest(ctx, which);
  std::cout << which << ": particles=" << ens.n_particles << " steps=" << ens.n_steps
            << " terminal_mean=" << format_double(tables.per_time.back().mean) << "\n";
  return 0;
}

inline int cmd_onestep(const json& cfg, const Options& opt) {
  RunContext ctx = make_context(cfg, opt);
  const json node = section(cfg, "onestep");
  const double theta = opt.theta ? *opt.theta
                                 : optional_key<double>(node, "onestep", "theta").value_or(1.0);
  const double mbar = opt.mbar ? *opt.mbar
                               : optional_key<double>(node, "onestep", "mbar").value_or(0.0);
  const double sigbar = opt.sigbar ? *opt.sigbar
                                   : optional_key<double>(node, "onestep", "sigbar").value_or(1.0);
  const double delta = opt.delta ? *opt.delta
                                 : optional_key<double>(node, "onestep", "delta").value_or(1.0);
  const std::size_t n = opt.samples ? *opt.samples
                                    : optional_key<std::size_t>(node, "onestep", "samples").value_or(0);
  if (n == 0) throw config_error("missing required key: onestep.samples");
  auto seed = opt.seed ? opt.seed : optional_key<std::uint64_t>(section(cfg, "sim"), "sim", "seed");
  if (!seed) throw config_error("missing required key: seed");
  const int threads = opt.threads ? *opt.threads : 1;
  ctx.eff.at("onestep") = {{"theta", theta}, {"mbar", mbar},   {"sigbar", sigbar},
                           {"delta", delta}, {"samples", n},   {"seed", *seed},
                           {"threads", threads}};

  OneStepResult result;
  try {
    result = onestep_illustration(theta, mbar, sigbar, delta, n, *seed, threads);
  } catch (const std::invalid_argument& e) {
    throw config_error(e.what());
  }

  std::vector<double> all(result.provisions_terminal);
  all.insert(all.end(), result.equilibrium_terminal.begin(), result.equilibrium_terminal.end());
  const GridSpec grid = build_grid(cfg, opt, all, ctx.eff);
  const Measure1D prov_law = empirical_from_samples(result.provisions_terminal);
  const Measure1D eq_law = empirical_from_samples(result.equilibrium_terminal);
  const double bw = grid.bandwidth > 0.0 ? grid.bandwidth : silverman_bandwidth(prov_law);
  const auto prov_density = kde_density(prov_law, bw, grid.points);
  const auto eq_density = kde_density(eq_law, bw, grid.points);

  CsvWriter densities(ctx.file("densities.csv"));
  densities.header({"x", "provisions_density", "equilibrium_density"});
  for (std::size_t i = 0; i < grid.points.size(); ++i) {
    densities.field(grid.points[i]).field(prov_density[i]).field(eq_density[i]);
    densities.endrow();
  }

  CsvWriter summary(ctx.file("summary.csv"));
  summary.header({"samples", "threshold", "mean_provisions", "mean_equilibrium",
                  "var_provisions", "var_equilibrium", "paired_mean_gap", "paired_gap_se"});
  summary.field(n).field(result.threshold);
  summary.field(result.mean_provisions).field(result.mean_equilibrium);
  summary.field(result.var_provisions).field(result.var_equilibrium);
  summary.field(result.paired_mean_gap).field(result.paired_gap_se);
  summary.endrow();

  write_manifest(ctx, "onestep-figures");
  std::cout << "onestep: c=" << format_double(result.threshold)
            << " var_ratio=" << format_double(result.var_equilibrium / result.var_provisions)
            << "\n";
  return 0;
}

inline int cmd_nash_gap(const json& cfg, Options opt) {
  RunContext ctx = make_context(cfg, opt);
  const json node = section(cfg, "nash");

  std::vector<std::size_t> n_list;
  if (opt.n_list_csv) {
    n_list = parse_size_list(*opt.n_list_csv);
  } else if (auto v = optional_key<std::vector<std::size_t>>(node, "nash", "n_list")) {
    n_list = *v;
  }
  if (!opt.particles && !section(cfg, "sim").contains("particles") && !n_list.empty())
    opt.particles = n_list.front();

  NashGapConfig gap;
  gap.sim = build_sim(cfg, opt, ctx.eff);
  if (n_list.empty()) n_list = {gap.sim.n_particles};
  gap.deviations = build_deviations(cfg, opt, ctx.eff);
  gap.replications = opt.replications
                         ? *opt.replications
                         : optional_key<std::size_t>(node, "nash", "replications").value_or(0);
  if (gap.replications == 0) throw config_error("missing required key: nash.replications");
  gap.average_over_players =
      opt.average_players || optional_key<bool>(node, "nash", "average_over_players").value_or(false);
  ctx.eff.at("nash")["replications"] = gap.replications;
  ctx.eff.at("nash")["average_over_players"] = gap.average_over_players;
  ctx.eff.at("nash")["n_list"] = n_list;

  CsvWriter out(ctx.file("nash_gap.csv"));
  out.header({"N", "deviation_name", "J_base", "J_dev", "gain", "se_gain", "eps_hat",
              "n_replications", "seed"});
  for (std::size_t n_players : n_list) {
    NashGapConfig run = gap;
    run.sim.n_particles = n_players;
    NashGapReport report;
    try {
      report = nash_gap_estimate(run);
    } catch (const std::invalid_argument& e) {
      throw config_error(e.what());
    }
    for (const auto& row : report.rows) {
      out.field(row.n_players).field(row.deviation).field(row.j_base).field(row.j_dev);
      out.field(row.gain).field(row.se_gain).field(report.eps_hat);
      out.field(report.replications).field(report.seed);
      out.endrow();
    }
    std::cout << "nash-gap N=" << n_players << " eps_hat=" << format_double(report.eps_hat)
              << " (se " << format_double(report.eps_hat_se) << ")\n";
  }
  write_manifest(ctx, "nash-gap");
  return 0;
}

inline int cmd_convergence(const json& cfg, const Options& opt) {
  RunContext ctx = make_context(cfg, opt);
  const json node = section(cfg, "convergence");
  const CoefficientModel model = build_model(cfg, opt, ctx.eff);
  const InitialLaw initial = build_initial(cfg, opt, model, ctx.eff);
  const json sim_node = section(cfg, "sim");
  const std::size_t steps = opt.steps ? *opt.steps
                                      : optional_key<std::size_t>(sim_node, "sim", "steps").value_or(0);
  const double horizon = opt.horizon ? *opt.horizon
                                     : optional_key<double>(sim_node, "sim", "horizon").value_or(0.0);
  if (steps == 0) throw config_error("missing required key: sim.steps");
  if (!(horizon > 0.0)) throw config_error("missing required key: sim.horizon");
  auto seed = opt.seed ? opt.seed : optional_key<std::uint64_t>(sim_node, "sim", "seed");
  if (!seed) throw config_error("missing required key: seed");
  std::vector<std::size_t> n_list;
  if (opt.n_list_csv) {
    n_list = parse_size_list(*opt.n_list_csv);
  } else if (auto v = optional_key<std::vector<std::size_t>>(node, "convergence", "n_list")) {
    n_list = *v;
  } else {
    throw config_error("missing required key: convergence.n_list");
  }
  const int threads = opt.threads ? *opt.threads : 1;
  ctx.eff.at("sim") = {{"steps", steps}, {"horizon", horizon}, {"seed", *seed}, {"threads", threads}};
  ctx.eff.at("convergence")["n_list"] = n_list;

  const auto rows = cauchy_convergence_diagnostic(model, initial, horizon, steps, *seed, n_list,
                                                  1e-12, threads);
  CsvWriter out(ctx.file("w2.csv"));
  out.header({"n_lo", "n_hi", "w2"});
  for (const auto& row : rows) {
    out.field(row.n_lo).field(row.n_hi).field(row.w2);
    out.endrow();
  }
  write_manifest(ctx, "convergence-diag");
  for (const auto& row : rows)
    std::cout << "w2(" << row.n_lo << "," << row.n_hi << ") = " << format_double(row.w2) << "\n";
  return 0;
}

inline void add_common_options(CLI::App* sub, Options& opt) {
  sub->add_option("--config", opt.config_path, "JSON config file");
  sub->add_option("--out", opt.out_dir)->each([&](const std::string&) { opt.out_dir_set = true; });
  sub->add_option("--run-id", opt.run_id)->each([&](const std::string&) { opt.run_id_set = true; });
  sub->add_option("--seed", opt.seed);
  sub->add_option("--threads", opt.threads);
  sub->add_option("--tol", opt.threshold_tol);
}

inline void add_model_options(CLI::App* sub, Options& opt) {
  sub->add_option("--model", opt.model_kind);
  sub->add_option("--theta", opt.theta);
  sub->add_option("--mbar", opt.mbar);
  sub->add_option("--sigbar", opt.sigbar);
  sub->add_option("--b0", opt.b0);
  sub->add_option("--sigma0", opt.sigma0);
  sub->add_option("--sigma-floor", opt.sigma_floor);
  sub->add_option("--drift-bound", opt.drift_bound);
  sub->add_option("--init", opt.init_kind);
  sub->add_option("--init-mean", opt.init_mean);
  sub->add_option("--init-var", opt.init_var);
  sub->add_option("--atoms", opt.atoms_list);
  sub->add_option("--weights", opt.weights_list);
}

inline void add_sim_options(CLI::App* sub, Options& opt) {
  sub->add_option("--particles", opt.particles);
  sub->add_option("--steps", opt.steps);
  sub->add_option("--horizon", opt.horizon);
}

inline void add_grid_options(CLI::App* sub, Options& opt) {
  sub->add_option("--grid-min", opt.grid_min);
  sub->add_option("--grid-max", opt.grid_max);
  sub->add_option("--grid-points", opt.grid_points);
  sub->add_option("--bandwidth", opt.bandwidth);
}

}  // namespace detail

/// Entry point shared by the binary and the in-process tests.
inline int run(int argc, const char* const* argv) {
  using namespace detail;
  Options opt;
  CLI::App app{"mutual-holding equilibrium laboratory"};
  app.require_subcommand(1);

  auto* solve = app.add_subcommand("solve-threshold", "solve the holding threshold for an atomic law");
  add_common_options(solve, opt);
  solve->add_option("--b", opt.b_list, "comma-separated drift values");
  solve->add_option("--weights", opt.weights_list, "comma-separated weights");
  solve->add_option("--method", opt.method, "exact or bisection");

  auto* fields = app.add_subcommand("equilibrium-fields", "equilibrium maps on an atomic law");
  add_common_options(fields, opt);
  add_model_options(fields, opt);
  fields->add_option("--samples", opt.fields_samples);
  fields->add_option("--t", opt.t_eval);

  auto* mfg = app.add_subcommand("simulate-mfg", "equilibrium interacting-particle simulation");
  auto* prov = app.add_subcommand("simulate-provisions", "non-interacting baseline simulation");
  auto* nplayer = app.add_subcommand("simulate-nplayer", "N-player cross-holding simulation");
  for (auto* sub : {mfg, prov, nplayer}) {
    add_common_options(sub, opt);
    add_model_options(sub, opt);
    add_sim_options(sub, opt);
    add_grid_options(sub, opt);
  }

  auto* onestep = app.add_subcommand("onestep-figures", "single-step provisions vs equilibrium laws");
  add_common_options(onestep, opt);
  add_grid_options(onestep, opt);
  onestep->add_option("--theta", opt.theta);
  onestep->add_option("--mbar", opt.mbar);
  onestep->add_option("--sigbar", opt.sigbar);
  onestep->add_option("--delta", opt.delta);
  onestep->add_option("--n", opt.samples);

  auto* nash = app.add_subcommand("nash-gap", "deviation-gain estimates for the induced strategy");
  add_common_options(nash, opt);
  add_model_options(nash, opt);
  add_sim_options(nash, opt);
  nash->add_option("--replications", opt.replications);
  nash->add_option("--deviations", opt.deviations_csv);
  nash->add_option("--n-list", opt.n_list_csv);
  nash->add_flag("--average-players", opt.average_players);

  auto* conv = app.add_subcommand("convergence-diag", "terminal-law distances across particle counts");
  add_common_options(conv, opt);
  add_model_options(conv, opt);
  add_sim_options(conv, opt);
  conv->add_option("--n-list", opt.n_list_csv);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const json cfg = load_config(opt);
    if (solve->parsed()) return cmd_solve_threshold(cfg, opt);
    if (fields->parsed()) return cmd_equilibrium_fields(cfg, opt);
    if (mfg->parsed()) return cmd_simulate(cfg, opt, "simulate-mfg");
    if (prov->parsed()) return cmd_simulate(cfg, opt, "simulate-provisions");
    if (nplayer->parsed()) return cmd_simulate(cfg, opt, "simulate-nplayer");
    if (onestep->parsed()) return cmd_onestep(cfg, opt);
    if (nash->parsed()) return cmd_nash_gap(cfg, opt);
    if (conv->parsed()) return cmd_convergence(cfg, opt);
    return 2;
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace mutualhold::cli
