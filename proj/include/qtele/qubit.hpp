#pragma once

// Single-qubit algebra for time-bin qubits in the {|e>, |l>} basis.

#include <array>
#include <complex>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace qtele {

using Complex = std::complex<double>;
using Ket = Eigen::Vector2cd;
using Matrix2 = Eigen::Matrix2cd;

inline constexpr double kNormTolerance = 1e-12;
inline constexpr double kPhysicalTolerance = 1e-10;

class PhysicsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pure time-bin qubit alpha|e> + beta e^{i phi}|l>.
///
/// Global phase is not represented: alpha and beta are non-negative and phi
/// lies in [0, 2 pi). When either amplitude vanishes phi is fixed to 0.
class TimeBinState {
 public:
  TimeBinState() = default;
  TimeBinState(double alpha, double beta, double phi);

  /// Canonicalizes an arbitrary (possibly unnormalized) ket.
  static TimeBinState from_ket(const Ket& ket);

  static TimeBinState early() { return {1.0, 0.0, 0.0}; }
  static TimeBinState late() { return {0.0, 1.0, 0.0}; }

  double alpha() const { return alpha_; }
  double beta() const { return beta_; }
  double phi() const { return phi_; }

  Ket ket() const;

  /// Same state up to global phase, component-wise within `tol`.
  bool approx_equal(const TimeBinState& other, double tol = 1e-12) const;

 private:
  double alpha_ = 1.0;
  double beta_ = 0.0;
  double phi_ = 0.0;
};

/// 2x2 Hermitian, unit-trace, positive semidefinite matrix.
class DensityMatrix {
 public:
  /// Validates the invariants; throws PhysicsError when violated.
  explicit DensityMatrix(const Matrix2& m, double tol = kPhysicalTolerance);

  static DensityMatrix pure(const TimeBinState& s);
  static DensityMatrix maximally_mixed();

  /// Builds a matrix without the positivity check (Hermiticity and trace are
  /// still enforced). Used for linear-inversion estimates before projection.
  static DensityMatrix unchecked(const Matrix2& m);

  const Matrix2& matrix() const { return m_; }
  Complex operator()(int r, int c) const { return m_(r, c); }

  /// Ascending eigenvalues.
  std::array<double, 2> eigenvalues() const;
  bool is_physical(double tol = kPhysicalTolerance) const;

  /// Bloch vector (<sx>, <sy>, <sz>) with sz = +1 for |e>.
  std::array<double, 3> bloch() const;
  static DensityMatrix from_bloch(const std::array<double, 3>& r);

  /// Row-major, re/im interleaved: [re00, im00, re01, im01, re10, im10, re11, im11].
  std::array<double, 8> to_flat() const;
  static DensityMatrix from_flat(const std::array<double, 8>& flat);

 private:
  struct NoCheck {};
  DensityMatrix(const Matrix2& m, NoCheck) : m_(m) {}
  Matrix2 m_;
};

double trace_distance(const DensityMatrix& a, const DensityMatrix& b);

enum class SettingLabel { E, L, PLUS, MINUS, PLUS_I, MINUS_I };

inline constexpr std::array<SettingLabel, 6> kAllSettings = {
    SettingLabel::E,     SettingLabel::L,      SettingLabel::PLUS,
    SettingLabel::MINUS, SettingLabel::PLUS_I, SettingLabel::MINUS_I};

std::string_view to_string(SettingLabel label);
SettingLabel setting_from_string(std::string_view name);

/// Rank-1 projective measurement on one of the six cardinal states.
class MeasurementSetting {
 public:
  explicit MeasurementSetting(SettingLabel label);

  SettingLabel label() const { return label_; }
  const TimeBinState& state() const { return state_; }
  const DensityMatrix& projector() const { return projector_; }

  /// The orthogonal partner (E<->L, PLUS<->MINUS, PLUS_I<->MINUS_I).
  MeasurementSetting complement() const;

 private:
  SettingLabel label_;
  TimeBinState state_;
  DensityMatrix projector_;
};

/// Cardinal state for a label, e.g. PLUS_I -> (|e> + i|l>)/sqrt(2).
TimeBinState cardinal_state(SettingLabel label);
SettingLabel complement(SettingLabel label);

/// sigma_y applied to the state, global phase removed.
TimeBinState pauli_y_transform(const TimeBinState& state);

/// <target|rho|target>; throws PhysicsError if rho is not physical.
double fidelity(const DensityMatrix& rho, const TimeBinState& target);

/// [F_e + F_l + 2 (F_plus + F_plus_i)] / 6.
double average_fidelity(double f_e, double f_l, double f_plus, double f_plus_i);

/// (1 + V) / 2 for a pure-state-plus-white-noise mixture.
double fidelity_from_visibility(double visibility);
double visibility_from_fidelity(double fidelity);

double born_probability(const TimeBinState& state, const MeasurementSetting& setting);
double born_probability(const DensityMatrix& rho, const MeasurementSetting& setting);
/// Projection onto an arbitrary pure state (used for phase scans).
double born_probability(const DensityMatrix& rho, const TimeBinState& projector);

/// Linear inversion from non-negative rates for the six settings, indexed in
/// kAllSettings order. Each Bloch component is (r_X - r_Xbar)/(r_X + r_Xbar);
/// a vector outside the Bloch ball is scaled back onto it, which for a qubit
/// equals clipping the negative eigenvalue and renormalizing. Throws
/// std::invalid_argument when a basis pair has zero total rate.
DensityMatrix stokes_reconstruct(const std::array<double, 6>& rates);

}  // namespace qtele
