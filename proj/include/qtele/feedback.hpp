#pragma once

// Stabilization loops driven once per window by network_sim's callback.
//
// Both controllers are dithered minimizers: they probe on either side of the
// current set point in alternate windows and move one step toward the side
// with fewer counts once the difference exceeds the Poisson significance
// threshold. Pairs that are not significant are pooled (up to `max_pairs`)
// before deciding again.

#include <array>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <utility>
#include <vector>

#include "qtele/network_sim.hpp"

namespace qtele::fb {

/// True when |a - b| exceeds `sigmas` standard deviations of the Poisson
/// difference, sqrt(a + b).
bool significant_difference(double a, double b, double sigmas = 2.0);

struct HomLockConfig {
  double step_ps = 4.0;
  /// Dither amplitude in steps.
  int probe_steps = 10;
  int max_pairs = 4;
  double significance = 2.0;
  double range_ps = 500.0;
  /// Probe windows with fewer total counts than this cannot resolve anything.
  double min_counts = 20.0;
  int lost_after = 10;

  void validate() const;
};

struct HomLockState {
  /// Set point, in steps.
  std::int64_t center_steps = 0;
  /// Shift applied in the window just measured, in steps.
  std::int64_t current_steps = 0;
  /// Window just measured: +1 upper probe, -1 lower probe, 0 hold.
  int search_direction = +1;
  std::int64_t pending_upper = 0;
  /// Recent (upper, lower) probe pairs.
  std::deque<std::pair<std::int64_t, std::int64_t>> window_counts;
  int starved_windows = 0;
  bool lock_lost = false;

  double current_shift_ps(const HomLockConfig& cfg) const {
    return static_cast<double>(current_steps) * cfg.step_ps;
  }
  double center_ps(const HomLockConfig& cfg) const {
    return static_cast<double>(center_steps) * cfg.step_ps;
  }
};

struct HomLockCommand {
  HomLockState state;
  /// Shift of Alice's qubit generation time for the next window.
  double commanded_shift_ps;
};

/// Starts probing around `center_ps` (rounded to the step grid).
HomLockState hom_lock_init(const HomLockConfig& cfg, double center_ps = 0.0);

/// One window of HOM-monitor coincidences, measured at state.current_steps.
HomLockCommand hom_lock_step(const HomLockConfig& cfg, HomLockState state,
                             std::int64_t window_counts);

struct PolLockConfig {
  /// Angular step of each actuator (rad).
  double step_rad = 0.02;
  int max_pairs = 4;
  double significance = 2.0;
  /// Bound on each actuator angle (rad).
  double range_rad = 3.0;
  /// Consecutive rising windows that count as losing the lock.
  int lost_after = 10;

  void validate() const;
};

struct PolLockState {
  std::array<double, 2> actuator_angles{0.0, 0.0};
  /// Axis being dithered.
  int axis = 0;
  int probe_sign = +1;
  std::int64_t pending_upper = 0;
  /// Recent probe pairs per axis.
  std::array<std::deque<std::pair<std::int64_t, std::int64_t>>, 2> pairs;
  /// Last window's monitor counts.
  std::int64_t monitor_rate = 0;
  int rising_windows = 0;
  bool lock_lost = false;
};

struct PolLockCommand {
  PolLockState state;
  /// Actuator angles for the next window, probe included.
  std::array<double, 2> actuators;
};

PolLockState pol_lock_init(const PolLockConfig& cfg);
PolLockCommand pol_lock_step(const PolLockConfig& cfg, PolLockState state,
                             std::int64_t monitor_counts);

/// Actuator angles to apply for a state (set point plus the active probe).
std::array<double, 2> pol_probe_angles(const PolLockConfig& cfg, const PolLockState& state);

struct TraceRow {
  std::int64_t window = 0;
  std::int64_t hom_counts = 0;
  std::int64_t monitor_counts = 0;
  std::int64_t transmitted_counts = 0;
  double timing_drift_ps = 0.0;
  double shift_ps = 0.0;
  double set_point_ps = 0.0;
  double residual_ps = 0.0;
  double polarization_angle_rad = 0.0;
  std::array<double, 2> pol_actuators{0.0, 0.0};
  bool hom_lock_lost = false;
  bool pol_lock_lost = false;
};

struct LockRun {
  std::vector<net::WindowSummary> windows;
  std::vector<TraceRow> trace;
};

/// Runs the simulation with the requested locks enabled. Both runs of a
/// locked/unlocked pair with the same seed share one drift realization.
LockRun run_with_locks(const net::SimConfig& sim, std::uint64_t seed, std::int64_t n_windows,
                       bool hom_lock, bool pol_lock, const HomLockConfig& hom_cfg = {},
                       const PolLockConfig& pol_cfg = {});

/// Residual of the set point from the dip centre (ps); the dither probe is
/// excluded.
double set_point_residual(const TraceRow& row);

/// Standard deviation over mean of the PBS-transmitted counts.
double transmitted_rate_rms(const LockRun& run);

extern const char* const kTraceHeader;
void write_trace(std::ostream& os, const std::vector<TraceRow>& trace);

}  // namespace qtele::fb
