#pragma once

// Subcommands of the qtele runner. Each writes into one output directory
// with a manifest.json; every data file starts with '#' lines carrying the
// config hash and seed.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "qtele/analysis.hpp"
#include "qtele/config.hpp"

namespace qtele::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kBadConfig = 3,
  /// Inputs from a different config or seed (override with --force).
  kMismatch = 4,
  /// Output directory already holds a run (override with --force).
  kOutputExists = 5,
  kBadInput = 6,
};

struct CellResult {
  analysis::CellKey key;
  double mu = 0.0;
  std::int64_t windows = 0;
  std::uint64_t triples = 0;
  std::uint64_t bsm_flags = 0;
  std::uint64_t hom_coincidences = 0;
  std::uint64_t singles_bob = 0;
};

struct SimulationResult {
  analysis::CountTable table;
  std::vector<CellResult> cells;
};

/// Seed of cell `index` derived from the run seed.
std::uint64_t cell_seed(std::uint64_t seed, std::uint64_t index);

/// One simulation per (level, prepared state, setting); `parallel` threads.
/// The result does not depend on `parallel`.
SimulationResult simulate(const cfg::ExperimentConfig& config, int parallel = 1);

struct HomScanPoint {
  double delta_t_ps;
  /// Coincidences per 10 s.
  double rate;
  double error;
  /// Photon-model expectation per 10 s.
  double expected;
};
std::vector<HomScanPoint> hom_scan(const cfg::ExperimentConfig& config);

struct AnalysisSelection {
  bool tomo = true;
  bool decoy = true;
  bool visibility = true;
  bool thresholds = true;
};

int cmd_simulate(const cfg::ExperimentConfig& config, const std::filesystem::path& out,
                 int parallel, bool force, std::ostream& log);
/// `expected` (from --config), when given, must match the run's hash.
int cmd_analyze(const std::filesystem::path& run_dir, const AnalysisSelection& which,
                const std::optional<cfg::ExperimentConfig>& expected,
                const std::optional<std::filesystem::path>& out, bool force, int n_resamples,
                std::ostream& log);
int cmd_homscan(const cfg::ExperimentConfig& config, const std::filesystem::path& out, bool force,
                std::ostream& log);
int cmd_lockdemo(const cfg::ExperimentConfig& config, const std::filesystem::path& out, bool force,
                 std::ostream& log);

/// Command-line entry point.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace qtele::cli
