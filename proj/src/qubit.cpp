#include "qtele/qubit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace qtele {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap_phase(double phi) {
  double w = std::fmod(phi, kTwoPi);
  if (w < 0) w += kTwoPi;
  // fmod can land exactly on 2 pi after the shift for tiny negative inputs
  if (w >= kTwoPi) w -= kTwoPi;
  return w;
}

void require_unit_interval(double v, const char* what) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw std::invalid_argument(std::string(what) + " must lie in [0, 1]");
  }
}

}  // namespace

TimeBinState::TimeBinState(double alpha, double beta, double phi)
    : alpha_(alpha), beta_(beta), phi_(wrap_phase(phi)) {
  if (alpha < 0.0 || beta < 0.0) {
    throw std::invalid_argument("TimeBinState amplitudes must be non-negative");
  }
  if (std::abs(alpha * alpha + beta * beta - 1.0) > kNormTolerance) {
    throw std::invalid_argument("TimeBinState is not normalized");
  }
  if (alpha_ == 0.0 || beta_ == 0.0) phi_ = 0.0;
}

TimeBinState TimeBinState::from_ket(const Ket& ket) {
  const double n = ket.norm();
  if (n == 0.0) throw std::invalid_argument("cannot normalize a zero ket");
  const Ket k = ket / n;
  double a = std::abs(k(0));
  double b = std::abs(k(1));
  // Snap amplitudes that are zero up to rounding so the phase convention holds.
  if (a < 1e-15) a = 0.0;
  if (b < 1e-15) b = 0.0;
  const double norm = std::hypot(a, b);
  a /= norm;
  b /= norm;
  const double phi = (a == 0.0 || b == 0.0) ? 0.0 : std::arg(k(1)) - std::arg(k(0));
  TimeBinState s;
  s.alpha_ = a;
  s.beta_ = b;
  s.phi_ = wrap_phase(phi);
  return s;
}

Ket TimeBinState::ket() const {
  Ket k;
  k << Complex(alpha_, 0.0), beta_ * std::polar(1.0, phi_);
  return k;
}

bool TimeBinState::approx_equal(const TimeBinState& other, double tol) const {
  // Compare kets after fixing the global phase; this is insensitive to the
  // phi wrap-around at 0 / 2 pi.
  const Complex overlap = ket().dot(other.ket());
  return std::abs(1.0 - std::abs(overlap)) <= tol &&
         std::abs(alpha_ - other.alpha_) <= tol && std::abs(beta_ - other.beta_) <= tol;
}

DensityMatrix::DensityMatrix(const Matrix2& m, double tol) : m_(m) {
  if ((m - m.adjoint()).cwiseAbs().maxCoeff() > tol) {
    throw PhysicsError("density matrix is not Hermitian");
  }
  if (std::abs(m.trace().real() - 1.0) > tol || std::abs(m.trace().imag()) > tol) {
    throw PhysicsError("density matrix trace differs from 1");
  }
  if (eigenvalues()[0] < -tol) {
    throw PhysicsError("density matrix has a negative eigenvalue");
  }
}

DensityMatrix DensityMatrix::pure(const TimeBinState& s) {
  const Ket k = s.ket();
  return DensityMatrix(Matrix2(k * k.adjoint()), NoCheck{});
}

DensityMatrix DensityMatrix::maximally_mixed() {
  return DensityMatrix(Matrix2(0.5 * Matrix2::Identity()), NoCheck{});
}

DensityMatrix DensityMatrix::unchecked(const Matrix2& m) {
  if ((m - m.adjoint()).cwiseAbs().maxCoeff() > kPhysicalTolerance) {
    throw PhysicsError("density matrix is not Hermitian");
  }
  if (std::abs(m.trace() - Complex(1.0, 0.0)) > kPhysicalTolerance) {
    throw PhysicsError("density matrix trace differs from 1");
  }
  return DensityMatrix(m, NoCheck{});
}

std::array<double, 2> DensityMatrix::eigenvalues() const {
  // Closed form for a 2x2 Hermitian matrix.
  const double a = m_(0, 0).real();
  const double d = m_(1, 1).real();
  const double half_gap = std::sqrt(0.25 * (a - d) * (a - d) + std::norm(m_(0, 1)));
  const double mean = 0.5 * (a + d);
  return {mean - half_gap, mean + half_gap};
}

bool DensityMatrix::is_physical(double tol) const {
  return (m_ - m_.adjoint()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(m_.trace() - Complex(1.0, 0.0)) <= tol && eigenvalues()[0] >= -tol;
}

std::array<double, 3> DensityMatrix::bloch() const {
  return {2.0 * m_(0, 1).real(), -2.0 * m_(0, 1).imag(), (m_(0, 0) - m_(1, 1)).real()};
}

DensityMatrix DensityMatrix::from_bloch(const std::array<double, 3>& r) {
  Matrix2 m;
  m << Complex(0.5 * (1.0 + r[2]), 0.0), Complex(0.5 * r[0], -0.5 * r[1]),
      Complex(0.5 * r[0], 0.5 * r[1]), Complex(0.5 * (1.0 - r[2]), 0.0);
  return DensityMatrix(m, NoCheck{});
}

std::array<double, 8> DensityMatrix::to_flat() const {
  std::array<double, 8> out{};
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) {
      out[4 * r + 2 * c] = m_(r, c).real();
      out[4 * r + 2 * c + 1] = m_(r, c).imag();
    }
  }
  return out;
}

DensityMatrix DensityMatrix::from_flat(const std::array<double, 8>& flat) {
  Matrix2 m;
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) m(r, c) = Complex(flat[4 * r + 2 * c], flat[4 * r + 2 * c + 1]);
  }
  return DensityMatrix(m);
}

double trace_distance(const DensityMatrix& a, const DensityMatrix& b) {
  // Difference of two unit-trace Hermitian matrices is traceless, so its
  // eigenvalues are +/- lambda and the trace distance is lambda.
  const Matrix2 d = a.matrix() - b.matrix();
  const double diag = 0.5 * (d(0, 0) - d(1, 1)).real();
  return std::sqrt(diag * diag + std::norm(d(0, 1)));
}

std::string_view to_string(SettingLabel label) {
  switch (label) {
    case SettingLabel::E: return "E";
    case SettingLabel::L: return "L";
    case SettingLabel::PLUS: return "PLUS";
    case SettingLabel::MINUS: return "MINUS";
    case SettingLabel::PLUS_I: return "PLUS_I";
    case SettingLabel::MINUS_I: return "MINUS_I";
  }
  throw std::logic_error("unknown setting label");
}

SettingLabel setting_from_string(std::string_view name) {
  for (SettingLabel l : kAllSettings) {
    if (to_string(l) == name) return l;
  }
  throw std::invalid_argument("unknown measurement setting '" + std::string(name) + "'");
}

TimeBinState cardinal_state(SettingLabel label) {
  const double h = std::numbers::sqrt2 / 2.0;
  const double pi = std::numbers::pi;
  switch (label) {
    case SettingLabel::E: return TimeBinState::early();
    case SettingLabel::L: return TimeBinState::late();
    case SettingLabel::PLUS: return TimeBinState::from_ket(Ket(h, h));
    case SettingLabel::MINUS: return TimeBinState::from_ket(Ket(h, -h));
    case SettingLabel::PLUS_I: return TimeBinState::from_ket(Ket(h, std::polar(h, pi / 2)));
    case SettingLabel::MINUS_I: return TimeBinState::from_ket(Ket(h, std::polar(h, -pi / 2)));
  }
  throw std::logic_error("unknown setting label");
}

SettingLabel complement(SettingLabel label) {
  switch (label) {
    case SettingLabel::E: return SettingLabel::L;
    case SettingLabel::L: return SettingLabel::E;
    case SettingLabel::PLUS: return SettingLabel::MINUS;
    case SettingLabel::MINUS: return SettingLabel::PLUS;
    case SettingLabel::PLUS_I: return SettingLabel::MINUS_I;
    case SettingLabel::MINUS_I: return SettingLabel::PLUS_I;
  }
  throw std::logic_error("unknown setting label");
}

MeasurementSetting::MeasurementSetting(SettingLabel label)
    : label_(label), state_(cardinal_state(label)), projector_(DensityMatrix::pure(state_)) {}

MeasurementSetting MeasurementSetting::complement() const {
  return MeasurementSetting(qtele::complement(label_));
}

TimeBinState pauli_y_transform(const TimeBinState& state) {
  const Ket k = state.ket();
  const Complex i(0.0, 1.0);
  return TimeBinState::from_ket(Ket(-i * k(1), i * k(0)));
}

double fidelity(const DensityMatrix& rho, const TimeBinState& target) {
  if (!rho.is_physical()) throw PhysicsError("fidelity of a non-physical density matrix");
  const Ket k = target.ket();
  const double f = k.dot(rho.matrix() * k).real();
  return std::clamp(f, 0.0, 1.0);
}

double average_fidelity(double f_e, double f_l, double f_plus, double f_plus_i) {
  require_unit_interval(f_e, "F_e");
  require_unit_interval(f_l, "F_l");
  require_unit_interval(f_plus, "F_plus");
  require_unit_interval(f_plus_i, "F_plus_i");
  return (f_e + f_l + 2.0 * (f_plus + f_plus_i)) / 6.0;
}

double fidelity_from_visibility(double visibility) {
  if (!(visibility >= -1.0 && visibility <= 1.0)) {
    throw std::invalid_argument("visibility must lie in [-1, 1]");
  }
  return 0.5 * (1.0 + visibility);
}

double visibility_from_fidelity(double fidelity) {
  require_unit_interval(fidelity, "fidelity");
  return 2.0 * fidelity - 1.0;
}

double born_probability(const TimeBinState& state, const MeasurementSetting& setting) {
  return std::norm(setting.state().ket().dot(state.ket()));
}

double born_probability(const DensityMatrix& rho, const MeasurementSetting& setting) {
  return born_probability(rho, setting.state());
}

double born_probability(const DensityMatrix& rho, const TimeBinState& projector) {
  const Ket k = projector.ket();
  return std::clamp(k.dot(rho.matrix() * k).real(), 0.0, 1.0);
}

DensityMatrix stokes_reconstruct(const std::array<double, 6>& rates) {
  std::array<double, 3> r{};
  // kAllSettings order: E, L, PLUS, MINUS, PLUS_I, MINUS_I -> (z, x, y)
  const std::array<int, 3> component = {2, 0, 1};
  for (int basis = 0; basis < 3; ++basis) {
    const double plus = rates[2 * basis];
    const double minus = rates[2 * basis + 1];
    if (plus < 0.0 || minus < 0.0) throw std::invalid_argument("negative rate");
    if (plus + minus <= 0.0) throw std::invalid_argument("zero total rate in a basis");
    r[component[basis]] = (plus - minus) / (plus + minus);
  }
  const double len = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
  if (len > 1.0) {
    for (double& x : r) x /= len;
  }
  return DensityMatrix::from_bloch(r);
}

}  // namespace qtele
