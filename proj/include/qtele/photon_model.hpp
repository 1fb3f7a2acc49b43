#pragma once

// Analytic photon-statistics model of the teleportation link.
//
// Every source used here (phase-randomized coherent pulses, two-mode squeezed
// vacuum) is Gaussian, and linear optics plus loss keep it Gaussian. The
// probability that a set of threshold detectors stays dark is the vacuum
// overlap <:exp(-sum n):>, a Gaussian integral over the normally ordered
// quasi-distribution, so every click pattern follows exactly from
// inclusion-exclusion. Fock-state inputs (a single photon, an ideal pair) are
// recovered as Taylor coefficients of the Gaussian generating function.

#include <array>
#include <vector>

#include "qtele/detector.hpp"
#include "qtele/qubit.hpp"

namespace qtele::model {

inline constexpr double kClockRateHz = 80e6;
inline constexpr double kWindowSeconds = 10.0;

struct ChannelParams {
  double loss_db = 0.0;
  double base_delay_ns = 0.0;
};

double db_to_transmittance(double loss_db);
/// 10^(-loss_db / 10).
double transmittance(const ChannelParams& ch);

struct SourceParams {
  /// Mean photon number per qubit at Alice's channel input.
  double mu_alice = 0.014;
  /// Mean pair number per pulse (both time bins together).
  double mu_spdc = 0.045;
  /// RMS temporal width of the single-photon intensity profile.
  double pulse_sigma_ps = 29.73;

  void validate() const;
};

enum class AliceKind { Coherent, SinglePhoton };
enum class BobKind { Thermal, IdealPair, Coherent };

struct SystemParams {
  SourceParams source{};
  AliceKind alice_kind = AliceKind::Coherent;
  /// Coherent is only meant for two-laser HOM checks; it places a phase
  /// randomized pulse of mean `mu_spdc` on Bob's telecom port, no idler.
  BobKind bob_kind = BobKind::Thermal;
  ChannelParams alice_channel{6.0, 10.0};
  ChannelParams bob_channel{5.7, 55.5};
  /// Unmodeled insertion loss per arm. The defaults bring the HOM dip,
  /// fidelities and triple rate to the scale of the deployed link.
  double alice_excess_db = 0.5;
  double bob_excess_db = 9.5;
  /// Loss between the 795 nm idler and Bob's detector (filters, analyzer
  /// interferometer, coupling).
  double analyzer_excess_db = 21.0;
  /// Transmission of Alice's photons through Charlie's PBS (cos^2 of the
  /// polarization misalignment).
  double polarization_transmission = 1.0;
  DetectorModel d1{0.70, 1e-6};
  DetectorModel d2{0.70, 1e-6};
  /// Bob's 795 nm Si-APD.
  DetectorModel bob{0.65, 1e-6};

  void validate() const;
  /// Alice amplitude transmission to the BSM beamsplitter (power units).
  double alice_arm_transmittance() const;
  double bob_arm_transmittance() const;
  /// Idler detection efficiency including the analyzer loss; triple rates
  /// are linear in it.
  double analyzer_efficiency() const;
};

/// |<phi1|phi2>|^2 for Gaussian wavepackets offset by `delta_t_ps`.
double overlap_from_delay(double delta_t_ps, double pulse_sigma_ps);

/// Charlie's 16 click-pattern probabilities per clock cycle.
PatternTable click_pattern_probabilities(const SystemParams& sys, const TimeBinState& alice_state,
                                         double overlap);

/// Joint Charlie pattern / Bob click probabilities for Bob's analyzer
/// projecting onto `analyzer`.
JointTable joint_probabilities(const SystemParams& sys, const TimeBinState& alice_state,
                               double overlap, const TimeBinState& analyzer);

/// Probability per clock cycle of a psi- flag at Charlie.
double bsm_success_probability(const SystemParams& sys, const TimeBinState& alice_state,
                               double overlap);

/// Probability per clock cycle of a psi- flag together with a Bob click.
double triple_probability(const SystemParams& sys, const TimeBinState& alice_state, double overlap,
                          const TimeBinState& analyzer);

/// Early-early or late-late coincidence probability per clock cycle.
double hom_coincidence_probability(const SystemParams& sys, const TimeBinState& alice_state,
                                   double overlap);

/// Dip shape rate(dt) = baseline (1 - visibility exp(-dt^2 / (2 width^2))).
struct HomDipCurve {
  double baseline_rate = 0.0;
  double visibility = 0.0;
  double center_ps = 0.0;
  double width_sigma_ps = 0.0;

  double rate(double delta_t_ps) const;
};

/// Expected HOM-monitor coincidences per window at arrival-time difference
/// `delta_t_ps`, with `max_overlap` the overlap at zero delay.
double hom_coincidence_rate(const SystemParams& sys, double delta_t_ps, double max_overlap = 1.0,
                            double window_s = kWindowSeconds,
                            const TimeBinState& alice_state = cardinal_state(SettingLabel::PLUS));

HomDipCurve hom_dip_curve(const SystemParams& sys, double max_overlap = 1.0,
                          double window_s = kWindowSeconds,
                          const TimeBinState& alice_state = cardinal_state(SettingLabel::PLUS));

/// Inverts the dip depth: the overlap whose coincidence rate relative to the
/// fully distinguishable rate equals minimum / baseline. Clamped to [0, 1].
double calibrate_overlap(const SystemParams& sys, double dip_minimum, double dip_baseline,
                         const TimeBinState& alice_state = cardinal_state(SettingLabel::PLUS));

struct TeleportedState {
  /// What six-setting tomography of Bob's clicks converges to.
  DensityMatrix rho;
  /// sigma_y |input>.
  TimeBinState target;
  double fidelity;
  /// White-noise-equivalent weight of the ideal state, 2 F - 1.
  double v_tel;
  /// Probability of a triple coincidence per clock cycle, summed over the
  /// six settings and divided by three (one complete basis measurement).
  double triple_probability;
};

TeleportedState teleported_state_model(const SystemParams& sys, const TimeBinState& input,
                                       double overlap);

/// Triple-coincidence yield and error for the n-photon component of Alice's
/// pulse: yield_target/yield_orthogonal are the probabilities of a triple in
/// the expected outcome sigma_y|input> and its orthogonal partner, given
/// exactly n photons were emitted.
struct PhotonNumberYield {
  double yield_target = 0.0;
  double yield_orthogonal = 0.0;
  double error_rate() const { return yield_orthogonal / (yield_target + yield_orthogonal); }
  double fidelity() const { return 1.0 - error_rate(); }
};

/// 0 <= n <= 12. Requires a coherent Alice source in `sys`.
PhotonNumberYield photon_number_yield(const SystemParams& sys, const TimeBinState& input,
                                      double overlap, int n);

}  // namespace qtele::model
