#include "qtele/photon_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace qtele::model {

namespace {

// Input modes: Alice e/l, Bob signal e/l, idler e/l.
constexpr int kInputs = 6;
// Output rows: D1e shared/orth, D1l shared/orth, D2e s/o, D2l s/o, Bob analyzer.
constexpr int kRows = 9;
// Channels in click-pattern bit order, Bob's analyzer last.
constexpr int kChannels = 5;
constexpr int kSubsets = 1 << kChannels;
constexpr int kBobBit = 1 << 4;

using Network = Eigen::Matrix<Complex, kRows, kInputs>;
using ModeMatrix = Eigen::Matrix<Complex, kInputs, kInputs>;
using ModeVector = Eigen::Matrix<Complex, kInputs, 1>;

void require_range(double v, double lo, double hi, const std::string& what) {
  if (!(v >= lo && v <= hi)) {
    throw std::invalid_argument(what + " out of range [" + std::to_string(lo) + ", " +
                                std::to_string(hi) + "]");
  }
}

std::vector<int> rows_of(int subset) {
  std::vector<int> rows;
  for (int ch = 0; ch < 4; ++ch) {
    if (subset & (1 << ch)) {
      rows.push_back(2 * ch);
      rows.push_back(2 * ch + 1);
    }
  }
  if (subset & kBobBit) rows.push_back(8);
  return rows;
}

Network build_network(const SystemParams& sys, double overlap, const TimeBinState& analyzer) {
  const double ta = std::sqrt(sys.alice_arm_transmittance());
  const double tb = std::sqrt(sys.bob_arm_transmittance());
  const double sw = std::sqrt(overlap);
  const double so = std::sqrt(1.0 - overlap);
  const double h = std::numbers::sqrt2 / 2.0;
  const double e1 = std::sqrt(sys.d1.efficiency);
  const double e2 = std::sqrt(sys.d2.efficiency);

  Network l = Network::Zero();
  for (int bin = 0; bin < 2; ++bin) {
    const int a = bin;
    const int b = 2 + bin;
    l(2 * bin, a) = e1 * h * ta * sw;
    l(2 * bin, b) = e1 * h * tb;
    l(2 * bin + 1, a) = e1 * h * ta * so;
    l(4 + 2 * bin, a) = e2 * h * ta * sw;
    l(4 + 2 * bin, b) = -e2 * h * tb;
    l(5 + 2 * bin, a) = e2 * h * ta * so;
  }
  const Ket x = analyzer.ket();
  const double eb = std::sqrt(sys.analyzer_efficiency());
  l(8, 4) = eb * std::conj(x(0));
  l(8, 5) = eb * std::conj(x(1));
  return l;
}

// log of the probability that no dark click occurs on any channel in the subset.
double log_no_dark(const SystemParams& sys, int subset) {
  const std::array<double, kChannels> d = {sys.d1.dark_prob, sys.d1.dark_prob, sys.d2.dark_prob,
                                           sys.d2.dark_prob, sys.bob.dark_prob};
  double f = 0.0;
  for (int ch = 0; ch < kChannels; ++ch) {
    if (subset & (1 << ch)) f += std::log1p(-d[ch]);
  }
  return f;
}

// Probability that every channel in a subset stays dark is
//   pref * <exp(-m(theta)^T K m(theta))>_theta
// with K = (I + 2C)^-1 for the real quadrature covariance C of the
// fluctuating part, and m(theta) the real image of the displacement. For a
// single phase-randomized displacement the average is
//   exp(-mu A) I0(mu R).
struct DarkTerm {
  double log_pref = 0.0;
  double a = 0.0;
  double r = 0.0;
  Eigen::MatrixXd k;
  Eigen::VectorXd u;
  Eigen::VectorXd v;
  Eigen::VectorXd w;
};

Eigen::VectorXd quadratures(const Eigen::VectorXcd& z) {
  const auto n = z.size();
  Eigen::VectorXd q(2 * n);
  q.head(n) = z.real();
  q.tail(n) = z.imag();
  return q;
}

DarkTerm dark_term(const Network& l, int subset, const ModeMatrix& n, const ModeMatrix& m,
                   const ModeVector& alice_unit, const ModeVector& bob_fixed) {
  DarkTerm t;
  const std::vector<int> rows = rows_of(subset);
  const auto k = static_cast<Eigen::Index>(rows.size());
  if (k == 0) return t;
  Eigen::MatrixXcd lk(k, kInputs);
  for (Eigen::Index i = 0; i < k; ++i) lk.row(i) = l.row(rows[i]);

  const Eigen::MatrixXcd np = lk.conjugate() * n * lk.transpose();
  const Eigen::MatrixXcd mp = lk * m * lk.transpose();
  Eigen::MatrixXd c(2 * k, 2 * k);
  c.block(0, 0, k, k) = 0.5 * (np.real() + mp.real());
  c.block(k, k, k, k) = 0.5 * (np.real() - mp.real());
  c.block(0, k, k, k) = 0.5 * (mp.imag() + np.imag());
  c.block(k, 0, k, k) = c.block(0, k, k, k).transpose();
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(2 * k, 2 * k);
  const Eigen::MatrixXd a = id + 2.0 * c;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    throw PhysicsError("non-positive quadrature covariance");
  }
  for (Eigen::Index i = 0; i < 2 * k; ++i) t.log_pref -= 0.5 * std::log(ldlt.vectorD()(i));
  t.k = ldlt.solve(id);
  t.k = 0.5 * (t.k + t.k.transpose()).eval();

  const Eigen::VectorXcd da = lk * alice_unit;
  t.u = quadratures(da);
  t.v = quadratures(Complex(0.0, 1.0) * da);
  t.w = quadratures(lk * bob_fixed);
  const double ua = t.u.dot(t.k * t.u);
  const double vb = t.v.dot(t.k * t.v);
  const double uv = t.u.dot(t.k * t.v);
  t.a = 0.5 * (ua + vb);
  t.r = std::hypot(0.5 * (ua - vb), uv);
  return t;
}

// log I0(x), accurate for the tiny arguments that dominate here.
double log_i0(double x) {
  if (x > 0.1) return std::log(std::cyl_bessel_i(0.0, x));
  const double y = 0.25 * x * x;
  double term = 1.0;
  double sum = 0.0;
  for (int k = 1; k < 12; ++k) {
    term *= y / (static_cast<double>(k) * k);
    sum += term;
  }
  return std::log1p(sum);
}

// Probabilities that at least one channel of each subset clicks, i.e.
// 1 - P(all dark). Clicks are rare, so carrying the complement keeps
// inclusion-exclusion free of cancellation against 1.
using ClickTable = std::array<double, kSubsets>;

JointTable assemble(const ClickTable& q) {
  JointTable out{};
  const int all = kSubsets - 1;
  out[0][0] = std::max(1.0 - q[all], 0.0);
  for (int clicks = 1; clicks < kSubsets; ++clicks) {
    const int dark = all & ~clicks;
    double p = 0.0;
    // P = sum_T (-1)^|T| (1 - q[dark | T]) over T within the clicked set; the
    // constant terms cancel.
    for (int t = clicks;; t = (t - 1) & clicks) {
      const double sign = (std::popcount(static_cast<unsigned>(t)) % 2 == 0) ? 1.0 : -1.0;
      p -= sign * q[dark | t];
      if (t == 0) break;
    }
    out[clicks & 0xF][clicks >> 4] = std::max(p, 0.0);
  }
  return out;
}

JointTable combine(const std::vector<std::pair<double, JointTable>>& terms) {
  JointTable out{};
  for (const auto& [c, t] : terms) {
    for (int p = 0; p < 16; ++p) {
      out[p][0] += c * t[p][0];
      out[p][1] += c * t[p][1];
    }
  }
  return out;
}

// Gaussian link for one (overlap, analyzer, Bob source) configuration with the
// Alice displacement left symbolic so any mean photon number or Fock
// component can be read off without recomputing determinants.
class GaussianLink {
 public:
  GaussianLink(const SystemParams& sys, const TimeBinState& alice, double overlap,
               const TimeBinState& analyzer, BobKind bob_kind, double bob_param)
      : coherent_bob_(bob_kind == BobKind::Coherent) {
    const Network l = build_network(sys, overlap, analyzer);
    ModeMatrix n = ModeMatrix::Zero();
    ModeMatrix m = ModeMatrix::Zero();
    ModeVector au = ModeVector::Zero();
    ModeVector bf = ModeVector::Zero();
    const Ket ka = alice.ket();
    au(0) = ka(0);
    au(1) = ka(1);
    if (coherent_bob_) {
      bf(2) = std::sqrt(bob_param) * ka(0);
      bf(3) = std::sqrt(bob_param) * ka(1);
    } else {
      // Two-mode squeezed vacuum with mean pair number bob_param per bin.
      const double s = std::sqrt(bob_param * (1.0 + bob_param));
      for (int bin = 0; bin < 2; ++bin) {
        n(2 + bin, 2 + bin) = bob_param;
        n(4 + bin, 4 + bin) = bob_param;
        m(2 + bin, 4 + bin) = s;
        m(4 + bin, 2 + bin) = s;
      }
    }
    for (int s = 0; s < kSubsets; ++s) {
      terms_[s] = dark_term(l, s, n, m, au, bf);
      log_dark_[s] = log_no_dark(sys, s);
    }
  }

  JointTable coherent(double mu) const {
    ClickTable q{};
    for (int s = 0; s < kSubsets; ++s) q[s] = -std::expm1(log_dark_[s] + coherent_log_dark(terms_[s], mu));
    return assemble(q);
  }

  // Joint table given exactly n photons from Alice (the n-th Poisson yield).
  JointTable fock(int n) const {
    if (coherent_bob_) throw std::logic_error("Fock inputs need a Gaussian Bob source");
    ClickTable q{};
    for (int s = 0; s < kSubsets; ++s) q[s] = -std::expm1(log_dark_[s] + fock_log_dark(terms_[s], n));
    return assemble(q);
  }

 private:
  double coherent_log_dark(const DarkTerm& t, double mu) const {
    if (!coherent_bob_) return t.log_pref - mu * t.a + log_i0(mu * t.r);
    if (t.u.size() == 0) return t.log_pref;
    // Relative phase between two independent lasers, averaged numerically.
    constexpr int kPoints = 96;
    const double sm = std::sqrt(mu);
    double click = 0.0;
    for (int j = 0; j < kPoints; ++j) {
      const double th = 2.0 * std::numbers::pi * j / kPoints;
      const Eigen::VectorXd x = sm * (std::cos(th) * t.u + std::sin(th) * t.v) + t.w;
      click -= std::expm1(-x.dot(t.k * x));
    }
    return t.log_pref + std::log1p(-click / kPoints);
  }

  // log of n! [mu^n] e^mu pref e^{-mu A} I0(mu R). The j = 0 term is
  // (1 - A)^n; the rest is kept as an offset from 1 to preserve precision.
  static double fock_log_dark(const DarkTerm& t, int n) {
    const double a = std::min(t.a, 1.0);
    const double lead = n == 0 ? 0.0 : std::expm1(n * std::log1p(-a));
    double rest = 0.0;
    double j_fact = 1.0;
    for (int j = 1; 2 * j <= n; ++j) {
      j_fact *= j;
      const int k = n - 2 * j;
      rest += std::pow(1.0 - a, k) / std::tgamma(k + 1.0) * std::pow(0.5 * t.r, 2 * j) /
              (j_fact * j_fact);
    }
    return t.log_pref + std::log1p(std::max(lead + rest * std::tgamma(n + 1.0), -1.0));
  }

  bool coherent_bob_;
  std::array<DarkTerm, kSubsets> terms_;
  std::array<double, kSubsets> log_dark_{};
};

// Forward-difference weights for f'(0) from f(0..6 h), sixth order.
constexpr std::array<double, 7> kForward1 = {-49.0 / 20.0, 6.0,        -15.0 / 2.0, 20.0 / 3.0,
                                             -15.0 / 4.0,  6.0 / 5.0, -1.0 / 6.0};
constexpr double kPairStep = 5e-3;

// Joint table for the configured Alice and Bob source kinds.
JointTable evaluate(const SystemParams& sys, const TimeBinState& alice, double overlap,
                    const TimeBinState& analyzer) {
  const auto alice_table = [&](const GaussianLink& g) {
    return sys.alice_kind == AliceKind::SinglePhoton ? g.fock(1) : g.coherent(sys.source.mu_alice);
  };
  switch (sys.bob_kind) {
    case BobKind::Thermal:
      return alice_table(
          GaussianLink(sys, alice, overlap, analyzer, BobKind::Thermal, 0.5 * sys.source.mu_spdc));
    case BobKind::Coherent:
      if (sys.alice_kind != AliceKind::Coherent) {
        throw std::invalid_argument("a coherent Bob source needs a coherent Alice source");
      }
      return GaussianLink(sys, alice, overlap, analyzer, BobKind::Coherent, sys.source.mu_spdc)
          .coherent(sys.source.mu_alice);
    case BobKind::IdealPair: {
      // Per-bin squeezing x = lambda^2 gives P(x) (1-x)^-2 = sum_k x^k c_k
      // with c_1 = 2 P(phi+ pair); cross terms vanish by photon-number
      // conservation.
      std::vector<std::pair<double, JointTable>> terms;
      for (int j = 0; j < 7; ++j) {
        const double x = j * kPairStep;
        const double mean = x / (1.0 - x);
        const double w = kForward1[j] / kPairStep / (1.0 - x) / (1.0 - x) / 2.0;
        terms.emplace_back(w, alice_table(GaussianLink(sys, alice, overlap, analyzer,
                                                       BobKind::Thermal, mean)));
      }
      JointTable t = combine(terms);
      for (auto& row : t) {
        row[0] = std::max(row[0], 0.0);
        row[1] = std::max(row[1], 0.0);
      }
      return t;
    }
  }
  throw std::logic_error("unknown Bob source kind");
}

double psi_minus_with_bob(const JointTable& t) {
  return t[kPsiMinusA][1] + t[kPsiMinusB][1];
}

}  // namespace

double db_to_transmittance(double loss_db) { return std::pow(10.0, -loss_db / 10.0); }

double transmittance(const ChannelParams& ch) { return db_to_transmittance(ch.loss_db); }

void SourceParams::validate() const {
  require_range(mu_alice, 0.0, 0.1, "mu_alice");
  require_range(mu_spdc, 0.0, 0.1, "mu_spdc");
  if (!(pulse_sigma_ps > 0.0)) throw std::invalid_argument("pulse_sigma_ps must be positive");
}

void SystemParams::validate() const {
  source.validate();
  if (!(alice_channel.loss_db >= 0.0) || !(bob_channel.loss_db >= 0.0)) {
    throw std::invalid_argument("channel loss must be non-negative");
  }
  if (!(alice_excess_db >= 0.0) || !(bob_excess_db >= 0.0) || !(analyzer_excess_db >= 0.0)) {
    throw std::invalid_argument("excess loss must be non-negative");
  }
  require_range(polarization_transmission, 0.0, 1.0, "polarization_transmission");
  d1.validate();
  d2.validate();
  bob.validate();
}

double SystemParams::alice_arm_transmittance() const {
  return transmittance(alice_channel) * db_to_transmittance(alice_excess_db) *
         polarization_transmission;
}

double SystemParams::bob_arm_transmittance() const {
  return transmittance(bob_channel) * db_to_transmittance(bob_excess_db);
}

double SystemParams::analyzer_efficiency() const {
  return bob.efficiency * db_to_transmittance(analyzer_excess_db);
}

double overlap_from_delay(double delta_t_ps, double pulse_sigma_ps) {
  if (!(pulse_sigma_ps > 0.0)) throw std::invalid_argument("pulse_sigma_ps must be positive");
  return std::exp(-delta_t_ps * delta_t_ps / (4.0 * pulse_sigma_ps * pulse_sigma_ps));
}

JointTable joint_probabilities(const SystemParams& sys, const TimeBinState& alice_state,
                               double overlap, const TimeBinState& analyzer) {
  sys.validate();
  require_range(overlap, 0.0, 1.0, "overlap");
  return evaluate(sys, alice_state, overlap, analyzer);
}

PatternTable click_pattern_probabilities(const SystemParams& sys, const TimeBinState& alice_state,
                                         double overlap) {
  const JointTable j = joint_probabilities(sys, alice_state, overlap, TimeBinState::early());
  PatternTable out{};
  for (int p = 0; p < 16; ++p) out[p] = j[p][0] + j[p][1];
  return out;
}

double bsm_success_probability(const SystemParams& sys, const TimeBinState& alice_state,
                               double overlap) {
  const PatternTable t = click_pattern_probabilities(sys, alice_state, overlap);
  return t[kPsiMinusA] + t[kPsiMinusB];
}

double triple_probability(const SystemParams& sys, const TimeBinState& alice_state, double overlap,
                          const TimeBinState& analyzer) {
  return psi_minus_with_bob(joint_probabilities(sys, alice_state, overlap, analyzer));
}

double hom_coincidence_probability(const SystemParams& sys, const TimeBinState& alice_state,
                                   double overlap) {
  const PatternTable t = click_pattern_probabilities(sys, alice_state, overlap);
  double p = 0.0;
  for (int pattern = 0; pattern < 16; ++pattern) {
    if (is_hom_coincidence(pattern)) p += t[pattern];
  }
  return p;
}

double HomDipCurve::rate(double delta_t_ps) const {
  const double x = (delta_t_ps - center_ps) / width_sigma_ps;
  return baseline_rate * (1.0 - visibility * std::exp(-0.5 * x * x));
}

double hom_coincidence_rate(const SystemParams& sys, double delta_t_ps, double max_overlap,
                            double window_s, const TimeBinState& alice_state) {
  require_range(max_overlap, 0.0, 1.0, "max_overlap");
  const double w = max_overlap * overlap_from_delay(delta_t_ps, sys.source.pulse_sigma_ps);
  return kClockRateHz * window_s * hom_coincidence_probability(sys, alice_state, w);
}

HomDipCurve hom_dip_curve(const SystemParams& sys, double max_overlap, double window_s,
                          const TimeBinState& alice_state) {
  require_range(max_overlap, 0.0, 1.0, "max_overlap");
  HomDipCurve c;
  c.baseline_rate = kClockRateHz * window_s * hom_coincidence_probability(sys, alice_state, 0.0);
  const double bottom =
      kClockRateHz * window_s * hom_coincidence_probability(sys, alice_state, max_overlap);
  c.visibility = c.baseline_rate > 0.0 ? 1.0 - bottom / c.baseline_rate : 0.0;
  c.center_ps = 0.0;
  // overlap exp(-dt^2 / (4 sigma^2)) has Gaussian width sqrt(2) sigma.
  c.width_sigma_ps = std::numbers::sqrt2 * sys.source.pulse_sigma_ps;
  return c;
}

double calibrate_overlap(const SystemParams& sys, double dip_minimum, double dip_baseline,
                         const TimeBinState& alice_state) {
  if (!(dip_baseline > 0.0) || !(dip_minimum >= 0.0)) {
    throw std::invalid_argument("dip rates must be positive");
  }
  const double target = dip_minimum / dip_baseline;
  const double p0 = hom_coincidence_probability(sys, alice_state, 0.0);
  if (p0 <= 0.0) throw std::invalid_argument("no HOM coincidences to calibrate against");
  const auto ratio = [&](double w) { return hom_coincidence_probability(sys, alice_state, w) / p0; };
  if (target >= 1.0) return 0.0;
  if (target <= ratio(1.0)) return 1.0;
  // The coincidence ratio falls monotonically with overlap.
  double lo = 0.0;
  double hi = 1.0;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (ratio(mid) > target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

TeleportedState teleported_state_model(const SystemParams& sys, const TimeBinState& input,
                                       double overlap) {
  std::array<double, 6> rates{};
  double total = 0.0;
  for (std::size_t i = 0; i < kAllSettings.size(); ++i) {
    rates[i] = triple_probability(sys, input, overlap, cardinal_state(kAllSettings[i]));
    total += rates[i];
  }
  const DensityMatrix rho = stokes_reconstruct(rates);
  const TimeBinState target = pauli_y_transform(input);
  const double f = fidelity(rho, target);
  return TeleportedState{rho, target, f, 2.0 * f - 1.0, total / 3.0};
}

PhotonNumberYield photon_number_yield(const SystemParams& sys, const TimeBinState& input,
                                      double overlap, int n) {
  if (n < 0 || n > 12) throw std::invalid_argument("photon number must lie in [0, 12]");
  if (sys.alice_kind != AliceKind::Coherent) {
    throw std::invalid_argument("photon-number yields need a coherent Alice source");
  }
  sys.validate();
  require_range(overlap, 0.0, 1.0, "overlap");
  const TimeBinState target = pauli_y_transform(input);
  const TimeBinState orth = TimeBinState::from_ket(Ket(-std::conj(target.ket()(1)),
                                                       std::conj(target.ket()(0))));
  SystemParams fock_sys = sys;
  fock_sys.alice_kind = AliceKind::SinglePhoton;
  const auto yield = [&](const TimeBinState& analyzer) {
    if (sys.bob_kind == BobKind::Thermal) {
      return psi_minus_with_bob(GaussianLink(sys, input, overlap, analyzer, BobKind::Thermal,
                                             0.5 * sys.source.mu_spdc)
                                    .fock(n));
    }
    if (n == 1) return psi_minus_with_bob(evaluate(fock_sys, input, overlap, analyzer));
    throw std::invalid_argument("ideal-pair yields are only available for n = 1");
  };
  return PhotonNumberYield{yield(target), yield(orth)};
}

}  // namespace qtele::model
