#pragma once

// Reduction of triple-coincidence tallies: tomography, fidelities, decoy
// bounds, visibility fits, Monte-Carlo error bars and classical thresholds.

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "qtele/qubit.hpp"

namespace qtele::analysis {

/// Prepared input states of the experiment, with the 1:1:2:2 weights.
inline constexpr std::array<SettingLabel, 4> kPreparedStates{SettingLabel::E, SettingLabel::L,
                                                              SettingLabel::PLUS,
                                                              SettingLabel::PLUS_I};
inline constexpr std::array<double, 4> kStateWeights{1.0, 1.0, 2.0, 2.0};

struct CellKey {
  SettingLabel state;
  SettingLabel setting;
  /// Index into CountTable::mu_levels.
  int mu_level;

  auto operator<=>(const CellKey&) const = default;
};

struct CellCounts {
  std::uint64_t triples = 0;
  std::uint64_t bsm_flags = 0;
  double elapsed_s = 0.0;
};

class CountTable {
 public:
  CountTable() = default;
  explicit CountTable(std::vector<double> mu_levels, double clock_rate_hz = 80e6);

  const std::vector<double>& mu_levels() const { return mu_levels_; }
  double clock_rate_hz() const { return clock_rate_hz_; }
  /// Index of a mean photon number, exact match.
  int level_of(double mu) const;

  /// Adds counts and time to a cell.
  void add(const CellKey& key, const CellCounts& counts);
  bool has(const CellKey& key) const { return cells_.count(key) != 0; }
  const CellCounts& at(const CellKey& key) const;
  const std::map<CellKey, CellCounts>& cells() const { return cells_; }
  std::map<CellKey, CellCounts>& mutable_cells() { return cells_; }

  /// Triples per clock cycle in a cell.
  double gain(const CellKey& key) const;

  /// Throws std::invalid_argument on negative / zero elapsed times or
  /// unknown levels.
  void validate() const;

 private:
  std::vector<double> mu_levels_;
  double clock_rate_hz_ = 80e6;
  std::map<CellKey, CellCounts> cells_;
};

bool operator==(const CountTable& a, const CountTable& b);

/// Delimited text: '#' metadata lines (key=value), a header row, one row per
/// cell.
extern const char* const kCountTableHeader;
void write_count_table(std::ostream& os, const CountTable& table,
                       const std::map<std::string, std::string>& metadata = {});
/// Throws std::runtime_error naming the line and cell on schema violations.
CountTable read_count_table(std::istream& is, std::map<std::string, std::string>* metadata = nullptr);

// ---- tomography ----

enum class Estimator { LinearInversion, MaximumLikelihood };

/// Six per-setting rates (or counts measured for equal times), ordered as
/// kAllSettings. Linear inversion with eigenvalue clipping, optionally refined
/// by iterative maximum likelihood.
DensityMatrix tomography_reconstruct(const std::array<double, 6>& rates,
                                     Estimator estimator = Estimator::LinearInversion);

struct TomographyOptions {
  Estimator estimator = Estimator::LinearInversion;
  /// Subtract the vacuum-level (mu_A = 0) rates of the same cell as an
  /// accidental background.
  bool subtract_background = false;
};

/// Rates of the six settings for one prepared state at one level.
std::array<double, 6> setting_rates(const CountTable& table, SettingLabel state, int mu_level);
DensityMatrix tomography_reconstruct(const CountTable& table, SettingLabel state, int mu_level,
                                     const TomographyOptions& options = {});

/// sigma_y applied to a prepared cardinal state.
TimeBinState teleportation_target(SettingLabel prepared);

struct FidelityReport {
  std::array<double, 4> fidelity{};
  double average = 0.0;
  std::array<DensityMatrix, 4> rho{DensityMatrix::maximally_mixed(),
                                   DensityMatrix::maximally_mixed(),
                                   DensityMatrix::maximally_mixed(),
                                   DensityMatrix::maximally_mixed()};
};

FidelityReport fidelity_report(const CountTable& table, int mu_level,
                               const TomographyOptions& options = {});

// ---- Monte-Carlo errors ----

using Statistic = std::function<double(const CountTable&)>;

/// Resamples every cell's triples and flags as Poisson(observed) and returns
/// the sample standard deviation of `statistic`. Replicas whose statistic
/// throws are skipped; at least half must succeed.
double monte_carlo_errors(const CountTable& table, const Statistic& statistic,
                          int n_resamples = 1000, std::uint64_t seed = 1);

// ---- decoy states ----

class DecoyInfeasible : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DecoyInputs {
  double mu = 0.028;
  double nu = 0.014;
  double q_mu = 0.0;
  double q_nu = 0.0;
  double y0 = 0.0;
  double e_mu = 0.0;
  double e_nu = 0.0;
};

struct DecoyEstimates {
  double q_mu = 0.0, q_nu = 0.0, y0 = 0.0;
  double e_mu = 0.0, e_nu = 0.0;
  double y1_lower = 0.0;
  double e1_upper = 0.0;
  double f1_lower = 0.0;
};

/// Vacuum + weak decoy bounds with vacuum error 1/2. Throws DecoyInfeasible
/// when the single-photon yield bound is not positive.
DecoyEstimates decoy_bounds(const DecoyInputs& in);

/// Gain and error of one prepared state at one level: the two settings are
/// sigma_y|state> and its orthogonal partner.
struct GainError {
  double gain;
  double error;
};
GainError gain_and_error(const CountTable& table, SettingLabel state, int mu_level);

struct DecoyReport {
  std::array<DecoyEstimates, 4> per_state{};
  /// 1:1:2:2 weighted average of the per-state F1 lower bounds.
  double f1_lower_average = 0.0;
};

/// Uses the levels 0, nu and mu of the table (mu the largest).
DecoyReport decoy_report(const CountTable& table);

// ---- visibility ----

struct VisibilityFit {
  double visibility;
  double amplitude;
  double phase_offset;
  double mean_rate;
};

/// Least-squares fit of R(theta) = R0 (1 + V cos(theta - theta0)).
VisibilityFit visibility_fit(const std::vector<double>& phases, const std::vector<double>& counts);

// ---- classical thresholds ----

inline constexpr double kClassicalFidelity = 2.0 / 3.0;
inline constexpr double kClassicalVisibility = 1.0 / 3.0;

/// (value - bound) / sigma.
double sigma_distance(double value, double bound, double sigma);

struct ThresholdReport {
  double average_fidelity;
  double average_sigma;
  /// Distance of the average from 2/3.
  double average_distance;
  std::array<double, 4> state_distance;
};

/// Individual fidelities with errors; the average uses the 1:1:2:2 weights
/// and independent errors.
ThresholdReport classical_threshold_tests(const std::array<double, 4>& fidelities,
                                          const std::array<double, 4>& sigmas);

}  // namespace qtele::analysis
