#pragma once

#include <array>
#include <stdexcept>

namespace qtele {

/// Threshold single-photon detector: clicks for one or more surviving photons.
struct DetectorModel {
  double efficiency = 1.0;
  /// Dark-click probability per time bin.
  double dark_prob = 0.0;

  void validate() const {
    if (!(efficiency >= 0.0 && efficiency <= 1.0) || !(dark_prob >= 0.0 && dark_prob <= 1.0)) {
      throw std::invalid_argument("detector probabilities must lie in [0, 1]");
    }
  }
};

/// Charlie's click patterns. Bits: 0 = D1 early, 1 = D1 late, 2 = D2 early,
/// 3 = D2 late; D1 sits on the output port Alice's photons transmit to.
using PatternTable = std::array<double, 16>;
/// Index [pattern][bob_click].
using JointTable = std::array<std::array<double, 2>, 16>;

inline constexpr int kPsiMinusA = 0b1001;  // D1 early, D2 late
inline constexpr int kPsiMinusB = 0b0110;  // D1 late, D2 early

inline constexpr bool is_psi_minus(int pattern) {
  return pattern == kPsiMinusA || pattern == kPsiMinusB;
}
/// Early-early or late-late coincidence between the two detectors.
inline constexpr bool is_hom_coincidence(int pattern) {
  return ((pattern & 0b0101) == 0b0101) || ((pattern & 0b1010) == 0b1010);
}

}  // namespace qtele
