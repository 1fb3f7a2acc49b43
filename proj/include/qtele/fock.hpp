#pragma once

// Brute-force truncated Fock-space model of the Charlie BSM and Bob's
// analyzer. Slow but exact up to truncation; it is the reference the analytic
// photon model is checked against.
//
// Beamsplitter convention (creation operators, transmittance T):
//   a^dag -> sqrt(T) a^dag + sqrt(1-T) b^dag
//   b^dag -> sqrt(1-T) a^dag - sqrt(T) b^dag
// so |1,1> at T = 1/2 maps to (|2,0> - |0,2>)/sqrt(2).

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "qtele/detector.hpp"
#include "qtele/qubit.hpp"

namespace qtele::fock {

enum class Port : std::uint8_t { Alice, BobSignal, AliceLoss, BobLoss, Idler };
enum class Bin : std::uint8_t { Early, Late };
/// Distinguishability slot: the shared temporal/spectral mode, or the part
/// of a wavepacket orthogonal to it.
enum class Slot : std::uint8_t { Shared, Orthogonal };

struct ModeLabel {
  Port port;
  Bin bin;
  Slot slot = Slot::Shared;
  bool operator==(const ModeLabel&) const = default;
};

struct RegisterSpec {
  /// Maximum photons per mode when a source is prepared.
  int n_max = 3;
  /// Maximum total photon number carried by the register.
  int total_cutoff = 6;
  /// Largest tolerated probability mass discarded by truncation.
  double max_leakage = 1e-3;
};

class TruncationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Sparse pure state over occupation tuples. Occupations are packed four
/// bits per mode, so at most 16 modes and 15 photons per mode.
class FockRegister {
 public:
  using Key = std::uint64_t;
  using Amplitudes = std::unordered_map<Key, Complex>;

  FockRegister(std::vector<ModeLabel> modes, RegisterSpec spec);

  /// Standard layout for the teleportation experiment (14 modes).
  static std::vector<ModeLabel> teleportation_layout();

  const std::vector<ModeLabel>& modes() const { return modes_; }
  const RegisterSpec& spec() const { return spec_; }
  const Amplitudes& amplitudes() const { return amps_; }
  /// Probability mass discarded at truncation, accumulated across builds.
  double leakage() const { return leakage_; }

  int mode_index(const ModeLabel& label) const;
  static int occupation(Key key, int mode) { return static_cast<int>((key >> (4 * mode)) & 0xF); }
  static Key with_occupation(Key key, int mode, int n) {
    return (key & ~(Key{0xF} << (4 * mode))) | (Key(n) << (4 * mode));
  }
  static int total_photons(Key key);

  double norm_squared() const;

  /// Tensor product of two registers over the same layout whose occupied
  /// modes are disjoint. Leakage adds.
  static FockRegister product(const FockRegister& a, const FockRegister& b);

  /// Applies U (acting on creation operators, column j = image of mode j)
  /// to a pair of modes. U must be unitary.
  FockRegister apply_two_mode_unitary(int mode_a, int mode_b, const Matrix2& u) const;

  /// Internal: used by builders.
  void set_amplitudes(Amplitudes amps, double extra_leakage);

 private:
  std::vector<ModeLabel> modes_;
  RegisterSpec spec_;
  Amplitudes amps_;
  double leakage_ = 0.0;
};

/// Vacuum on every mode of `layout`.
FockRegister vacuum(const std::vector<ModeLabel>& layout, const RegisterSpec& spec);

/// Coherent pulse of mean photon number `mu` and global phase `phase`, in the
/// time-bin state `qubit`, on the shared slots of `port`. Truncated at the
/// register limits and renormalized; throws TruncationError when the
/// discarded mass exceeds spec.max_leakage.
FockRegister build_coherent(const std::vector<ModeLabel>& layout, const RegisterSpec& spec,
                            Port port, const TimeBinState& qubit, double mu, double phase);

/// One photon in time-bin state `qubit` on the shared slots of `port`.
FockRegister build_single_photon(const std::vector<ModeLabel>& layout, const RegisterSpec& spec,
                                 Port port, const TimeBinState& qubit);

/// Time-bin entangled SPDC output: an independent two-mode squeezed vacuum
/// between (signal, idler) in each time bin, each with thermal pair
/// statistics P(n) = m^n / (1+m)^(n+1), m = mu_pair / 2. At the single-pair
/// level this is |phi+> = (|e,e> + |l,l>)/sqrt(2).
FockRegister build_spdc_pair(const std::vector<ModeLabel>& layout, const RegisterSpec& spec,
                             Port signal, Port idler, double mu_pair);

/// Ideal single |phi+> pair (no vacuum, no multi-pair terms).
FockRegister build_phi_plus_pair(const std::vector<ModeLabel>& layout, const RegisterSpec& spec,
                                 Port signal, Port idler);

/// Beamsplitter between equal (bin, slot) modes of two ports, applied for
/// every bin and slot.
FockRegister apply_beamsplitter(const FockRegister& reg, Port port_a, Port port_b,
                                double transmittance);

/// Splits the shared-slot photons of `port` into sqrt(w) shared +
/// sqrt(1-w) orthogonal, w = |<phi1|phi2>|^2.
FockRegister partial_overlap_embed(const FockRegister& reg, Port port, double overlap);

using qtele::DetectorModel;
using qtele::JointTable;
using qtele::PatternTable;
using qtele::kPsiMinusA;
using qtele::kPsiMinusB;

/// Click-pattern probabilities of the two BSM detectors (threshold, binomial
/// thinning by efficiency, independent dark clicks per bin).
PatternTable bsm_pattern_probabilities(const FockRegister& reg, const DetectorModel& d1,
                                       const DetectorModel& d2);

/// Joint table for a threshold detector of efficiency `bob.efficiency` on
/// the idler projected onto `analyzer`.
JointTable joint_probabilities(const FockRegister& reg, const DetectorModel& d1,
                               const DetectorModel& d2, const TimeBinState& analyzer,
                               const DetectorModel& bob);

/// Full experiment description for the oracle.
struct OracleScenario {
  TimeBinState alice_state = TimeBinState::early();
  /// When set, Alice emits exactly one photon instead of a coherent pulse.
  bool alice_single_photon = false;
  /// Mean photon number at the channel input.
  double mu_alice = 0.0;
  /// When set, Bob's source emits exactly one |phi+> pair.
  bool ideal_pair = false;
  double mu_pair = 0.0;
  double alice_transmittance = 1.0;
  double bob_transmittance = 1.0;
  double overlap = 1.0;
  DetectorModel d1{};
  DetectorModel d2{};
  DetectorModel bob{};
  int phase_points = 16;
  RegisterSpec spec{};
};

PatternTable oracle_patterns(const OracleScenario& s);
JointTable oracle_joint(const OracleScenario& s, const TimeBinState& analyzer);

struct ConditionalState {
  DensityMatrix state;
  /// P(psi- flag) per clock cycle.
  double flag_probability;
  /// Fraction of flagged events where Bob's mode holds exactly one photon.
  double single_photon_fraction;
  double leakage;
};

/// Bob's idler state in its single-photon subspace, conditioned on the psi-
/// flag. Throws PhysicsError when the conditioning probability is < 1e-15.
ConditionalState teleported_conditional_state(const OracleScenario& s);

/// The state a six-setting tomography of Bob's threshold-detector clicks
/// (conditioned on the psi- flag) would reconstruct with infinite counts.
DensityMatrix oracle_analyzer_state(const OracleScenario& s);

}  // namespace qtele::fock
