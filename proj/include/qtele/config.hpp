#pragma once

// Experiment configuration files (JSON). Every key is optional and falls
// back to the defaults below; unknown keys are errors.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "qtele/feedback.hpp"
#include "qtele/network_sim.hpp"

namespace qtele::cfg {

/// Invalid configuration. `field` is a JSON pointer ("/sources/mu_spdc"),
/// `line` the 1-based line in the source text (0 if unknown).
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, int line, const std::string& message);

  const std::string& field() const { return field_; }
  int line() const { return line_; }

 private:
  std::string field_;
  int line_;
};

struct Controllers {
  bool hom_lock = false;
  bool polarization_lock = true;
  fb::HomLockConfig hom{};
  fb::PolLockConfig polarization{};
};

struct HomScan {
  double from_ps = -200.0;
  double to_ps = 200.0;
  double step_ps = 10.0;
  int windows_per_point = 1;
  double mu_alice = 0.014;
};

struct LockDemo {
  double duration_s = 5400.0;
  double mu_alice = 0.014;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "run";
  net::NodeTopology topology{};
  double mu_spdc = 0.06;
  double pulse_sigma_ps = 29.73;
  double max_overlap = 0.8;
  DetectorModel snspd{0.70, 1e-6};
  DetectorModel apd{0.65, 1e-6};
  double monitor_efficiency = 0.7;
  double alice_excess_db = 0.5;
  double bob_excess_db = 9.5;
  double analyzer_excess_db = 21.0;
  net::DriftSet drifts{};
  double phase_noise_rad = 0.0;
  Controllers controllers{};
  /// Mean photon numbers of Alice's pulses, one table level each.
  std::vector<double> decoy_levels{0.0, 0.014, 0.028};
  std::vector<SettingLabel> prepared_states{SettingLabel::E, SettingLabel::L, SettingLabel::PLUS,
                                            SettingLabel::PLUS_I};
  std::vector<SettingLabel> settings{kAllSettings.begin(), kAllSettings.end()};
  /// Simulated time per (state, setting, level) cell.
  double duration_s = 3600.0;
  double window_s = model::kWindowSeconds;
  HomScan homscan{};
  LockDemo lockdemo{};

  /// Throws ConfigError (without line information).
  void validate() const;
  /// Simulation of one cell.
  net::SimConfig sim_config(SettingLabel state, SettingLabel setting, double mu_alice) const;
  std::int64_t windows_per_cell() const;
};

/// Parses and validates; diagnostics carry the field and its line.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Fully resolved configuration, every field present.
std::string to_json(const ExperimentConfig& c);
/// Hex FNV-1a of the canonical resolved JSON, output directory excluded.
std::string config_hash(const ExperimentConfig& c);

}  // namespace qtele::cfg
