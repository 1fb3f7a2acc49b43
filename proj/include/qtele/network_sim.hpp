#pragma once

// Discrete-event simulation of the Alice / Bob / Charlie link.
//
// Time is counted in 12.5 ns clock slots. A pair emitted at Bob in slot k
// (the originating slot) reaches Charlie in slot k + d_B, Charlie's psi- flag
// reaches Bob in slot k + d_B + d_C, and Bob's idler is detected locally in
// slot k. Alice's emission is scheduled so her photons meet Bob's at Charlie,
// up to the timing drift.
//
// Two engines share the same per-window physics:
//   SlotEngine  - samples individual slots (geometric skipping over empty
//                 ones), applies detector jitter and writes event logs;
//   run_windows - draws each 10 s window's outcome counts from a multinomial
//                 over the exact joint click table, fast enough for hours of
//                 simulated time.

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "qtele/photon_model.hpp"

namespace qtele::net {

enum class Node { Alice, Bob, Charlie };

struct NodeTopology {
  double clock_rate_hz = model::kClockRateHz;
  double bin_separation_ps = 1400.0;
  /// SNSPD timing jitter (Gaussian sigma).
  double jitter_sigma_ps = 150.0;
  /// Half width of Charlie's bin-centred coincidence windows; clicks outside
  /// both windows are discarded.
  double coincidence_half_window_ps = 500.0;
  model::ChannelParams alice_charlie{6.0, 110000.0};
  model::ChannelParams bob_charlie{5.7, 55000.0};
  /// Classical psi- signal back to Bob (loss unused).
  model::ChannelParams charlie_bob{0.0, 55000.0};

  /// Throws std::invalid_argument when inconsistent (jitter FWHM not below
  /// the bin separation, overlapping windows, negative delays...).
  void validate() const;
  double slot_ps() const { return 1e12 / clock_rate_hz; }
  /// Probability that a jittered photon click lands inside its window.
  double window_acceptance() const;
  /// Whole slots of propagation delay.
  std::int64_t delay_slots(const model::ChannelParams& ch) const;
  /// Bob -> Charlie photon travel plus Charlie -> Bob signal, in slots.
  std::int64_t vedl_slots() const;
};

enum class DriftKind { Timing, Polarization, Phase };

struct DriftSpec {
  /// Standard deviation of the per-window random-walk step (ps or rad).
  double step_sigma = 0.0;
  /// Deterministic change per window.
  double ramp_per_window = 0.0;
  /// Reflecting bound on |value|; zero or negative means unbounded.
  double bound = 0.0;
  double initial = 0.0;
};

/// Bounded random walk with optional ramp, advanced once per window.
class DriftProcess {
 public:
  DriftProcess(DriftKind kind, DriftSpec spec);

  DriftKind kind() const { return kind_; }
  const DriftSpec& spec() const { return spec_; }
  double value() const { return value_; }
  void advance(std::mt19937_64& rng);

 private:
  DriftKind kind_;
  DriftSpec spec_;
  double value_;
};

struct DriftSet {
  DriftSpec timing{3.0, 0.0, 300.0, 0.0};
  /// Two Poincare-sphere coordinates of Alice's polarization error.
  DriftSpec polarization_x{0.02, 0.0, 1.5, 0.0};
  DriftSpec polarization_y{0.02, 0.0, 1.5, 0.0};
  /// Slow drift of the analyzer interferometer phase.
  DriftSpec phase{};
};

/// Everything a run needs besides the seed.
struct SimConfig {
  NodeTopology topology{};
  /// Sources, detectors and excess losses. The channel losses are taken from
  /// `topology`.
  model::SystemParams system{};
  /// |<phi_A|phi_B>|^2 at zero arrival-time difference.
  double max_overlap = 0.8;
  TimeBinState alice_state = cardinal_state(SettingLabel::PLUS);
  SettingLabel bob_setting = SettingLabel::MINUS;
  DriftSet drifts{};
  /// RMS residual of the locked interferometer phases (rad).
  double phase_noise_rad = 0.0;
  /// Efficiency of the detector on the PBS reflection port.
  double monitor_efficiency = 0.7;
  double window_s = model::kWindowSeconds;

  void validate() const;
  /// The photon-model parameters for given polarization transmission. With
  /// `window_acceptance` the BSM detector efficiencies include the fraction
  /// of jittered clicks that fall inside Charlie's coincidence windows.
  model::SystemParams system_params(double polarization_transmission,
                                    bool window_acceptance = true) const;
};

/// Knobs the controllers may move between windows.
struct Actuators {
  /// Shift of Alice's qubit generation time (ps).
  double timing_shift_ps = 0.0;
  /// Polarization controller angles (rad) compensating the two drift axes.
  std::array<double, 2> polarization{0.0, 0.0};
};

/// Arrival-time difference at Charlie: drift minus applied shift.
double timing_residual(double timing_drift_ps, const Actuators& act);
/// Misalignment angle of Alice's polarization at the PBS.
double polarization_angle(double drift_x, double drift_y, const Actuators& act);

struct WindowSummary {
  std::int64_t index = 0;
  double start_s = 0.0;
  std::uint64_t singles_d1 = 0;
  std::uint64_t singles_d2 = 0;
  std::uint64_t singles_bob = 0;
  /// Slots where both BSM detectors clicked (any bins).
  std::uint64_t pairwise = 0;
  /// Early-early or late-late coincidences.
  std::uint64_t hom_coincidences = 0;
  std::uint64_t psi_minus = 0;
  std::uint64_t triples = 0;
  /// Alice photons reflected at the PBS and counted by the monitor.
  std::uint64_t monitor = 0;
  /// Alice photons transmitted by the PBS and counted at the BSM detectors.
  std::uint64_t transmitted = 0;
  double timing_drift_ps = 0.0;
  double polarization_x = 0.0;
  double polarization_y = 0.0;
  double phase_drift_rad = 0.0;
  Actuators actuators{};
  double residual_ps = 0.0;
  double overlap = 0.0;
  double polarization_transmission = 1.0;
};

/// Called after every window; may change the actuators for the next one.
using WindowCallback = std::function<void(const WindowSummary&, Actuators&)>;

/// Runs `n_windows` consecutive windows. Deterministic for a given seed.
std::vector<WindowSummary> run_windows(const SimConfig& cfg, std::uint64_t seed,
                                       std::int64_t n_windows,
                                       const WindowCallback& callback = {},
                                       Actuators initial = {});

/// Expected counts per window for fixed drift values, used by tests and by
/// the summary engine.
struct WindowExpectation {
  /// Probabilities per slot of each (pattern, bob click) outcome.
  JointTable table{};
  double monitor_per_slot = 0.0;
  double transmitted_per_slot = 0.0;
  double overlap = 0.0;
  double polarization_transmission = 1.0;
  model::SystemParams system{};
};
WindowExpectation window_expectation(const SimConfig& cfg, double residual_ps,
                                     double polarization_angle_rad, double phase_error_rad,
                                     bool window_acceptance = true);

// ---- slot-level engine ----

/// Which BSM channels fired in a slot, before jitter: bit 0 D1 early, 1 D1
/// late, 2 D2 early, 3 D2 late, 4 Bob's detector.
using ClickContent = std::uint8_t;

struct PulseSlotRecord {
  /// Originating slot.
  std::int64_t slot_index = 0;
  /// Arrival-time difference of Alice's photon relative to Bob's (ps).
  double arrival_offset_ps = 0.0;
  double polarization_misalignment = 0.0;
  ClickContent photon_content = 0;
  /// Charlie's pattern after jitter and re-binning.
  int charlie_pattern = 0;
  bool bob_click = false;
};

struct BobClick {
  SettingLabel setting;
  /// 0 early, 1 late (equatorial settings click in the late slot of the
  /// analyzer interferometer).
  int bin;
};

struct CoincidenceRecord {
  /// Slot in the recording node's local clock.
  std::int64_t slot_index = 0;
  int charlie_pattern = 0;
  std::optional<BobClick> bob_click;
  bool psi_minus_flag = false;
};

struct Click {
  double time_ps;
  /// Nearest bin (0 early, 1 late), or -1 outside both coincidence windows.
  int bin;
};

/// Click time for a detector seeing `photons` in bin `bin` (bin centres at 0
/// and bin_separation). Without a photon click, a dark click lands uniformly
/// over the slot with probability `detector.dark_prob` (per slot here).
std::optional<Click> sample_detection(int photons, int bin, const DetectorModel& detector,
                                      double jitter_sigma_ps, const NodeTopology& topo,
                                      std::mt19937_64& rng);

struct TripleTally {
  std::uint64_t flags = 0;
  std::uint64_t triples = 0;
};

/// Pairs Charlie's psi- flags (as received at Bob, see signals_at_bob) with
/// Bob's clicks delayed by `vedl_delay` slots. Both inputs must be sorted by
/// slot.
TripleTally triple_coincidence(const std::vector<CoincidenceRecord>& charlie,
                               const std::vector<CoincidenceRecord>& bob, std::int64_t vedl_delay);

/// Charlie's psi- flags as they arrive at Bob, `classical_delay` slots later.
std::vector<CoincidenceRecord> signals_at_bob(const std::vector<CoincidenceRecord>& charlie,
                                              std::int64_t classical_delay);

struct SlotRun {
  std::vector<PulseSlotRecord> pulses;
  /// Charlie's records (non-empty patterns), Charlie slot clock.
  std::vector<CoincidenceRecord> charlie;
  /// Bob's clicks, Bob's local clock.
  std::vector<CoincidenceRecord> bob;
};

/// Samples `n_slots` consecutive slots starting at `first_slot` with fixed
/// drift values.
class SlotEngine {
 public:
  SlotEngine(SimConfig cfg, std::uint64_t seed);

  SlotRun run(std::int64_t first_slot, std::int64_t n_slots, const Actuators& act = {},
              double timing_drift_ps = 0.0, double pol_x = 0.0, double pol_y = 0.0);

 private:
  SimConfig cfg_;
  std::mt19937_64 rng_;
};

/// Delimited-text outputs with a header row.
void write_event_log(std::ostream& os, const SlotRun& run);
void write_window_summaries(std::ostream& os, const std::vector<WindowSummary>& windows);
extern const char* const kEventLogHeader;
extern const char* const kWindowSummaryHeader;

}  // namespace qtele::net
