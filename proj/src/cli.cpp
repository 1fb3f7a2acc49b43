#include "qtele/cli.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iostream>
#include <limits>
#include <numbers>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "qtele/feedback.hpp"

namespace qtele::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Stamp {
  std::string hash;
  std::uint64_t seed;
};

Stamp stamp_of(const cfg::ExperimentConfig& c) { return {cfg::config_hash(c), c.seed}; }

void write_stamp(std::ostream& os, const Stamp& s) {
  os << "# config_hash=" << s.hash << '\n' << "# seed=" << s.seed << '\n';
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f.precision(10);
  return f;
}

void write_manifest(const fs::path& dir, const std::string& name, const std::string& command,
                    const Stamp& s, const std::vector<std::string>& files) {
  json m;
  m["command"] = command;
  m["config_hash"] = s.hash;
  m["seed"] = s.seed;
  m["files"] = files;
  auto f = open_out(dir / name);
  f << m.dump(2) << '\n';
}

// Creates `dir`; refuses a directory that already holds a manifest unless
// forced.
bool prepare_dir(const fs::path& dir, const std::string& manifest, bool force, std::ostream& log) {
  if (fs::exists(dir / manifest) && !force) {
    log << "error: " << (dir / manifest).string() << " exists (use --force to overwrite)\n";
    return false;
  }
  fs::create_directories(dir);
  return true;
}

double fidelity_of(const analysis::CountTable& t, SettingLabel state, int level,
                   const analysis::TomographyOptions& opts) {
  return fidelity(analysis::tomography_reconstruct(t, state, level, opts),
                  analysis::teleportation_target(state));
}

bool has_all_settings(const analysis::CountTable& t, SettingLabel state, int level) {
  for (SettingLabel s : kAllSettings) {
    if (!t.has({state, s, level})) return false;
  }
  return true;
}

// Analyzer phase of the equatorial settings relative to |+>.
std::optional<double> equatorial_phase(SettingLabel s) {
  switch (s) {
    case SettingLabel::PLUS: return 0.0;
    case SettingLabel::PLUS_I: return std::numbers::pi / 2.0;
    case SettingLabel::MINUS: return std::numbers::pi;
    case SettingLabel::MINUS_I: return 3.0 * std::numbers::pi / 2.0;
    default: return std::nullopt;
  }
}

analysis::VisibilityFit equatorial_fit(const analysis::CountTable& t, SettingLabel state,
                                       int level) {
  std::vector<double> phases, rates;
  for (SettingLabel s : kAllSettings) {
    const auto ph = equatorial_phase(s);
    if (!ph || !t.has({state, s, level})) continue;
    const analysis::CellCounts& c = t.at({state, s, level});
    phases.push_back(*ph);
    rates.push_back(static_cast<double>(c.triples) / c.elapsed_s);
  }
  return analysis::visibility_fit(phases, rates);
}

// Sigma distance; noiseless data sit infinitely far from the bound.
double distance(double value, double bound, double sigma) {
  if (sigma > 0.0) return analysis::sigma_distance(value, bound, sigma);
  if (value == bound) return 0.0;
  return value > bound ? std::numeric_limits<double>::infinity()
                       : -std::numeric_limits<double>::infinity();
}

}  // namespace

std::uint64_t cell_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

SimulationResult simulate(const cfg::ExperimentConfig& config, int parallel) {
  config.validate();
  if (parallel < 1) throw std::invalid_argument("parallel must be >= 1");
  std::vector<CellResult> cells;
  for (std::size_t lvl = 0; lvl < config.decoy_levels.size(); ++lvl) {
    for (SettingLabel st : config.prepared_states) {
      for (SettingLabel s : config.settings) {
        CellResult c;
        c.key = {st, s, static_cast<int>(lvl)};
        c.mu = config.decoy_levels[lvl];
        cells.push_back(c);
      }
    }
  }

  const std::int64_t n = config.windows_per_cell();
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(parallel));
  auto worker = [&](int id) {
    try {
      for (std::size_t i = next++; i < cells.size(); i = next++) {
        CellResult& c = cells[i];
        const net::SimConfig sim = config.sim_config(c.key.state, c.key.setting, c.mu);
        const fb::LockRun run = fb::run_with_locks(
            sim, cell_seed(config.seed, i), n, config.controllers.hom_lock,
            config.controllers.polarization_lock, config.controllers.hom,
            config.controllers.polarization);
        c.windows = n;
        for (const auto& w : run.windows) {
          c.triples += w.triples;
          c.bsm_flags += w.psi_minus;
          c.hom_coincidences += w.hom_coincidences;
          c.singles_bob += w.singles_bob;
        }
      }
    } catch (...) {
      errors[static_cast<std::size_t>(id)] = std::current_exception();
      next = cells.size();
    }
  };
  std::vector<std::thread> threads;
  for (int t = 1; t < parallel; ++t) threads.emplace_back(worker, t);
  worker(0);
  for (auto& t : threads) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  SimulationResult r{analysis::CountTable(config.decoy_levels, config.topology.clock_rate_hz), {}};
  const double elapsed = static_cast<double>(n) * config.window_s;
  for (const auto& c : cells) r.table.add(c.key, {c.triples, c.bsm_flags, elapsed});
  r.cells = std::move(cells);
  return r;
}

std::vector<HomScanPoint> hom_scan(const cfg::ExperimentConfig& config) {
  config.validate();
  const auto& hs = config.homscan;
  net::SimConfig sim =
      config.sim_config(SettingLabel::PLUS, SettingLabel::MINUS, hs.mu_alice);
  sim.drifts = {{}, {}, {}, {}};
  const double per_10s = model::kWindowSeconds / config.window_s / hs.windows_per_point;
  const model::SystemParams sys = sim.system_params(1.0);
  std::vector<HomScanPoint> out;
  const auto n_points = static_cast<int>(std::floor((hs.to_ps - hs.from_ps) / hs.step_ps + 1e-9)) + 1;
  for (int i = 0; i < n_points; ++i) {
    const double dt = hs.from_ps + i * hs.step_ps;
    net::Actuators act;
    act.timing_shift_ps = -dt;
    std::uint64_t counts = 0;
    for (const auto& w :
         net::run_windows(sim, cell_seed(config.seed, static_cast<std::uint64_t>(i)),
                          hs.windows_per_point, {}, act)) {
      counts += w.hom_coincidences;
    }
    const double c = static_cast<double>(counts);
    out.push_back({dt, c * per_10s, std::sqrt(c) * per_10s,
                   model::hom_coincidence_rate(sys, dt, config.max_overlap, model::kWindowSeconds)});
  }
  return out;
}

int cmd_simulate(const cfg::ExperimentConfig& config, const fs::path& out, int parallel,
                 bool force, std::ostream& log) {
  if (!prepare_dir(out, "manifest.json", force, log)) return kOutputExists;
  const Stamp stamp = stamp_of(config);
  const SimulationResult r = simulate(config, parallel);

  open_out(out / "config.json") << cfg::to_json(config);
  {
    auto f = open_out(out / "count_table.csv");
    analysis::write_count_table(f, r.table,
                                {{"config_hash", stamp.hash}, {"seed", std::to_string(stamp.seed)}});
  }
  {
    auto f = open_out(out / "cells.csv");
    write_stamp(f, stamp);
    f << "state,setting,mu_level,mu,windows,triples,bsm_flags,hom_coincidences,singles_bob\n";
    for (const auto& c : r.cells) {
      f << to_string(c.key.state) << ',' << to_string(c.key.setting) << ',' << c.key.mu_level
        << ',' << c.mu << ',' << c.windows << ',' << c.triples << ',' << c.bsm_flags << ','
        << c.hom_coincidences << ',' << c.singles_bob << '\n';
    }
  }
  write_manifest(out, "manifest.json", "simulate", stamp,
                 {"config.json", "count_table.csv", "cells.csv"});
  log << "simulate: " << r.cells.size() << " cells, " << config.windows_per_cell()
      << " windows each -> " << out.string() << '\n';
  return kOk;
}

int cmd_analyze(const fs::path& run_dir, const AnalysisSelection& which,
                const std::optional<cfg::ExperimentConfig>& expected,
                const std::optional<fs::path>& out_opt, bool force, int n_resamples,
                std::ostream& log) {
  std::map<std::string, std::string> meta;
  analysis::CountTable table;
  {
    std::ifstream in(run_dir / "count_table.csv");
    if (!in) {
      log << "error: no count_table.csv in " << run_dir.string() << '\n';
      return kBadInput;
    }
    try {
      table = analysis::read_count_table(in, &meta);
      table.validate();
    } catch (const std::exception& e) {
      log << "error: count_table.csv: " << e.what() << '\n';
      return kBadInput;
    }
  }

  Stamp stamp{meta.count("config_hash") ? meta["config_hash"] : "unknown", 1};
  if (meta.count("seed")) stamp.seed = std::stoull(meta["seed"]);
  std::vector<std::string> mismatches;
  if (fs::exists(run_dir / "manifest.json")) {
    std::ifstream in(run_dir / "manifest.json");
    json m;
    try {
      m = json::parse(in);
      if (m.at("config_hash").get<std::string>() != stamp.hash) {
        mismatches.push_back("count table config hash differs from the manifest");
      }
      if (m.at("seed").get<std::uint64_t>() != stamp.seed) {
        mismatches.push_back("count table seed differs from the manifest");
      }
    } catch (const std::exception& e) {
      log << "error: manifest.json: " << e.what() << '\n';
      return kBadInput;
    }
  }
  if (expected) {
    const Stamp want = stamp_of(*expected);
    if (want.hash != stamp.hash) {
      mismatches.push_back("config hash " + want.hash + " does not match the run's " + stamp.hash);
    }
  }
  for (const auto& m : mismatches) log << (force ? "warning: " : "error: ") << m << '\n';
  if (!mismatches.empty() && !force) return kMismatch;

  const fs::path out = out_opt.value_or(run_dir);
  if (!prepare_dir(out, "analysis.json", force, log)) return kOutputExists;

  analysis::TomographyOptions opts;
  std::vector<int> levels;
  for (std::size_t i = 0; i < table.mu_levels().size(); ++i) {
    if (table.mu_levels()[i] > 0.0) levels.push_back(static_cast<int>(i));
  }
  const std::uint64_t mc_seed = stamp.seed;
  std::vector<std::string> files;

  // Fidelities and their errors feed both the tomography and threshold files.
  struct StateFidelity {
    SettingLabel state;
    int level;
    double fidelity;
    double error;
  };
  std::vector<StateFidelity> fids;
  if (which.tomo || which.thresholds) {
    for (int lvl : levels) {
      for (SettingLabel st : analysis::kPreparedStates) {
        if (!has_all_settings(table, st, lvl)) continue;
        const double f = fidelity_of(table, st, lvl, opts);
        const double err = analysis::monte_carlo_errors(
            table, [&](const analysis::CountTable& t) { return fidelity_of(t, st, lvl, opts); },
            n_resamples, mc_seed);
        fids.push_back({st, lvl, f, err});
      }
    }
  }

  if (which.tomo) {
    auto f = open_out(out / "tomography.csv");
    write_stamp(f, stamp);
    f << "state,mu_level,mu,re00,im00,re01,im01,re10,im10,re11,im11,fidelity,fidelity_error\n";
    for (const auto& sf : fids) {
      const auto flat =
          analysis::tomography_reconstruct(table, sf.state, sf.level, opts).to_flat();
      f << to_string(sf.state) << ',' << sf.level << ',' << table.mu_levels()[sf.level];
      for (double x : flat) f << ',' << x;
      f << ',' << sf.fidelity << ',' << sf.error << '\n';
    }
    files.push_back("tomography.csv");
  }

  if (which.decoy) {
    auto f = open_out(out / "decoy.csv");
    write_stamp(f, stamp);
    f << "state,nu,mu,y0,q_nu,q_mu,e_nu,e_mu,y1_lower,e1_upper,f1_lower,f1_lower_error\n";
    try {
      const analysis::DecoyReport r = analysis::decoy_report(table);
      const auto& lv = table.mu_levels();
      const double nu = *std::min_element(lv.begin(), lv.end(), [](double a, double b) {
        return (a > 0.0 ? a : 1e9) < (b > 0.0 ? b : 1e9);
      });
      const double mu = *std::max_element(lv.begin(), lv.end());
      for (std::size_t k = 0; k < r.per_state.size(); ++k) {
        const auto& d = r.per_state[k];
        const double err = analysis::monte_carlo_errors(
            table,
            [k](const analysis::CountTable& t) {
              return analysis::decoy_report(t).per_state[k].f1_lower;
            },
            n_resamples, mc_seed);
        f << to_string(analysis::kPreparedStates[k]) << ',' << nu << ',' << mu << ',' << d.y0
          << ',' << d.q_nu << ',' << d.q_mu << ',' << d.e_nu << ',' << d.e_mu << ','
          << d.y1_lower << ',' << d.e1_upper << ',' << d.f1_lower << ',' << err << '\n';
      }
      const double err = analysis::monte_carlo_errors(
          table,
          [](const analysis::CountTable& t) { return analysis::decoy_report(t).f1_lower_average; },
          n_resamples, mc_seed);
      f << "AVERAGE,,,,,,,,,,," << r.f1_lower_average << ',' << err << '\n';
    } catch (const std::exception& e) {
      f << "# infeasible: " << e.what() << '\n';
      log << "decoy: " << e.what() << '\n';
    }
    files.push_back("decoy.csv");
  }

  struct StateVisibility {
    SettingLabel state;
    int level;
    analysis::VisibilityFit fit;
    double error;
  };
  std::vector<StateVisibility> vis;
  if (which.visibility || which.thresholds) {
    for (int lvl : levels) {
      for (SettingLabel st : {SettingLabel::PLUS, SettingLabel::PLUS_I}) {
        try {
          const auto fit = equatorial_fit(table, st, lvl);
          const double err = analysis::monte_carlo_errors(
              table,
              [&](const analysis::CountTable& t) { return equatorial_fit(t, st, lvl).visibility; },
              n_resamples, mc_seed);
          vis.push_back({st, lvl, fit, err});
        } catch (const std::exception&) {
          // Cells missing or empty at this level.
        }
      }
    }
  }
  if (which.visibility) {
    auto f = open_out(out / "visibility.csv");
    write_stamp(f, stamp);
    f << "state,mu_level,mu,visibility,visibility_error,mean_rate,phase_offset\n";
    for (const auto& v : vis) {
      f << to_string(v.state) << ',' << v.level << ',' << table.mu_levels()[v.level] << ','
        << v.fit.visibility << ',' << v.error << ',' << v.fit.mean_rate << ','
        << v.fit.phase_offset << '\n';
    }
    files.push_back("visibility.csv");
  }

  if (which.thresholds) {
    auto f = open_out(out / "thresholds.csv");
    write_stamp(f, stamp);
    f << "quantity,mu_level,mu,value,error,bound,sigma_distance\n";
    for (int lvl : levels) {
      std::array<double, 4> fv{}, fe{};
      int found = 0;
      for (const auto& sf : fids) {
        if (sf.level != lvl) continue;
        for (std::size_t k = 0; k < 4; ++k) {
          if (analysis::kPreparedStates[k] == sf.state) {
            fv[k] = sf.fidelity;
            fe[k] = sf.error;
            ++found;
          }
        }
      }
      const double mu = table.mu_levels()[lvl];
      if (found == 4) {
        double avg = 0.0, var = 0.0;
        for (std::size_t k = 0; k < 4; ++k) {
          avg += analysis::kStateWeights[k] * fv[k] / 6.0;
          var += std::pow(analysis::kStateWeights[k] * fe[k] / 6.0, 2);
          f << "F_" << to_string(analysis::kPreparedStates[k]) << ',' << lvl << ',' << mu << ','
            << fv[k] << ',' << fe[k] << ',' << analysis::kClassicalFidelity << ','
            << distance(fv[k], analysis::kClassicalFidelity, fe[k]) << '\n';
        }
        f << "F_AVERAGE," << lvl << ',' << mu << ',' << avg << ',' << std::sqrt(var) << ','
          << analysis::kClassicalFidelity << ','
          << distance(avg, analysis::kClassicalFidelity, std::sqrt(var)) << '\n';
      }
      for (const auto& v : vis) {
        if (v.level != lvl) continue;
        f << "V_" << to_string(v.state) << ',' << lvl << ',' << mu << ',' << v.fit.visibility
          << ',' << v.error << ',' << analysis::kClassicalVisibility << ','
          << distance(v.fit.visibility, analysis::kClassicalVisibility, v.error)
          << '\n';
      }
    }
    files.push_back("thresholds.csv");
  }

  write_manifest(out, "analysis.json", "analyze", stamp, files);
  log << "analyze: wrote " << files.size() << " report(s) to " << out.string() << '\n';
  return kOk;
}

int cmd_homscan(const cfg::ExperimentConfig& config, const fs::path& out, bool force,
                std::ostream& log) {
  if (!prepare_dir(out, "manifest.json", force, log)) return kOutputExists;
  const Stamp stamp = stamp_of(config);
  const auto points = hom_scan(config);
  open_out(out / "config.json") << cfg::to_json(config);
  {
    auto f = open_out(out / "homscan.csv");
    write_stamp(f, stamp);
    f << "delta_t_ps,coincidences_per_10s,error,expected\n";
    for (const auto& p : points) {
      f << p.delta_t_ps << ',' << p.rate << ',' << p.error << ',' << p.expected << '\n';
    }
  }
  write_manifest(out, "manifest.json", "homscan", stamp, {"config.json", "homscan.csv"});
  log << "homscan: " << points.size() << " points -> " << out.string() << '\n';
  return kOk;
}

int cmd_lockdemo(const cfg::ExperimentConfig& config, const fs::path& out, bool force,
                 std::ostream& log) {
  config.validate();
  if (!prepare_dir(out, "manifest.json", force, log)) return kOutputExists;
  const Stamp stamp = stamp_of(config);
  const net::SimConfig sim =
      config.sim_config(SettingLabel::PLUS, SettingLabel::MINUS, config.lockdemo.mu_alice);
  const auto n = static_cast<std::int64_t>(std::llround(config.lockdemo.duration_s / config.window_s));
  const fb::LockRun locked = fb::run_with_locks(sim, config.seed, n, true, true,
                                                config.controllers.hom, config.controllers.polarization);
  const fb::LockRun free = fb::run_with_locks(sim, config.seed, n, false, false,
                                              config.controllers.hom, config.controllers.polarization);
  open_out(out / "config.json") << cfg::to_json(config);
  for (const auto& [name, run] : {std::pair{"trace_locked.csv", &locked},
                                  std::pair{"trace_unlocked.csv", &free}}) {
    auto f = open_out(out / name);
    write_stamp(f, stamp);
    fb::write_trace(f, run->trace);
  }
  {
    auto f = open_out(out / "lockdemo_summary.csv");
    write_stamp(f, stamp);
    f << "run,transmitted_rate_rms,fraction_within_10ps,mean_abs_residual_ps\n";
    for (const auto& [name, run] : {std::pair{"locked", &locked}, std::pair{"unlocked", &free}}) {
      std::size_t within = 0;
      double abs_sum = 0.0;
      for (const auto& row : run->trace) {
        const double r = std::abs(fb::set_point_residual(row));
        if (r <= 10.0) ++within;
        abs_sum += r;
      }
      const double nrows = static_cast<double>(run->trace.size());
      double rms = 0.0;
      try {
        rms = fb::transmitted_rate_rms(*run);
      } catch (const std::invalid_argument&) {
        rms = 0.0;  // no transmitted counts
      }
      f << name << ',' << rms << ',' << within / nrows << ',' << abs_sum / nrows << '\n';
    }
  }
  write_manifest(out, "manifest.json", "lockdemo", stamp,
                 {"config.json", "trace_locked.csv", "trace_unlocked.csv", "lockdemo_summary.csv"});
  log << "lockdemo: " << n << " windows -> " << out.string() << '\n';
  return kOk;
}

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Teleportation network simulator and analysis"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  int parallel = 1;
  bool force = false;
  auto common = [&](CLI::App* sub, bool config_required) {
    auto* c = sub->add_option("--config", config_path, "Experiment config (JSON)");
    if (config_required) c->required();
    sub->add_option("--seed", seed, "Override the config seed");
    sub->add_option("--out", out_dir, "Output directory");
    sub->add_option("--parallel", parallel, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--force", force, "Overwrite outputs / accept mismatched inputs");
  };
  auto* sim = app.add_subcommand("simulate", "Simulate count tables for every cell");
  common(sim, true);
  auto* ana = app.add_subcommand("analyze", "Tomography, decoy, visibility and threshold reports");
  common(ana, false);
  std::string run_dir;
  std::vector<std::string> only;
  int resamples = 1000;
  ana->add_option("run_dir", run_dir, "Directory holding count_table.csv")->required();
  ana->add_option("--only", only, "Subset of tomo, decoy, visibility, thresholds")
      ->check(CLI::IsMember({"tomo", "decoy", "visibility", "thresholds"}))
      ->delimiter(',');
  ana->add_option("--resamples", resamples, "Monte-Carlo replicas for error bars")
      ->check(CLI::Range(100, 1000000));
  auto* scan = app.add_subcommand("homscan", "Scan the HOM dip");
  common(scan, true);
  auto* demo = app.add_subcommand("lockdemo", "Locked and unlocked controller traces");
  common(demo, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    std::optional<cfg::ExperimentConfig> config;
    if (!config_path.empty()) {
      config = cfg::load_config(config_path);
      if (seed) config->seed = *seed;
    }
    auto out_or = [&](const std::string& sub) {
      if (!out_dir.empty()) return fs::path(out_dir);
      fs::path p(config->output_dir);
      return sub.empty() ? p : p / sub;
    };
    if (sim->parsed()) return cmd_simulate(*config, out_or(""), parallel, force, out);
    if (scan->parsed()) return cmd_homscan(*config, out_or("homscan"), force, out);
    if (demo->parsed()) return cmd_lockdemo(*config, out_or("lockdemo"), force, out);
    AnalysisSelection which;
    if (!only.empty()) {
      which = {false, false, false, false};
      for (const auto& o : only) {
        if (o == "tomo") which.tomo = true;
        if (o == "decoy") which.decoy = true;
        if (o == "visibility") which.visibility = true;
        if (o == "thresholds") which.thresholds = true;
      }
    }
    std::optional<fs::path> dest;
    if (!out_dir.empty()) dest = out_dir;
    return cmd_analyze(run_dir, which, config, dest, force, resamples, out);
  } catch (const cfg::ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kBadConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace qtele::cli
