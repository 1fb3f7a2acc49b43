#include "qtele/fock.hpp"

#include <bit>
#include <cmath>
#include <numbers>

namespace qtele::fock {

namespace {

constexpr int kMaxModes = 16;
constexpr int kMaxPerMode = 15;
// Amplitudes below this magnitude squared are dropped after each unitary.
constexpr double kPruneNorm2 = 1e-30;

double factorial(int n) {
  static const auto table = [] {
    std::array<double, 32> t{};
    t[0] = 1.0;
    for (int i = 1; i < 32; ++i) t[i] = t[i - 1] * i;
    return t;
  }();
  return table.at(static_cast<std::size_t>(n));
}

double binomial(int n, int k) { return factorial(n) / (factorial(k) * factorial(n - k)); }

Complex ipow(Complex z, int n) {
  Complex r(1.0, 0.0);
  for (int i = 0; i < n; ++i) r *= z;
  return r;
}

void add_to(FockRegister::Amplitudes& amps, FockRegister::Key key, Complex value) {
  auto [it, inserted] = amps.try_emplace(key, value);
  if (!inserted) it->second += value;
}

double normalize(FockRegister::Amplitudes& amps) {
  double n2 = 0.0;
  for (const auto& [k, a] : amps) n2 += std::norm(a);
  const double scale = 1.0 / std::sqrt(n2);
  for (auto& [k, a] : amps) a *= scale;
  return n2;
}

double no_click(int photons, const DetectorModel& d) {
  return std::pow(1.0 - d.efficiency, photons) * (1.0 - d.dark_prob);
}

void require_probability(double p, const char* what) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument(std::string(what) + " must lie in [0, 1]");
}

}  // namespace

FockRegister::FockRegister(std::vector<ModeLabel> modes, RegisterSpec spec)
    : modes_(std::move(modes)), spec_(spec) {
  if (modes_.empty() || modes_.size() > kMaxModes) {
    throw std::invalid_argument("FockRegister supports 1 to 16 modes");
  }
  if (spec_.n_max < 1 || spec_.total_cutoff < 1 || spec_.total_cutoff > kMaxPerMode) {
    throw std::invalid_argument("invalid register truncation");
  }
}

std::vector<ModeLabel> FockRegister::teleportation_layout() {
  std::vector<ModeLabel> layout;
  for (Port p : {Port::Alice, Port::BobSignal}) {
    for (Bin b : {Bin::Early, Bin::Late}) {
      for (Slot s : {Slot::Shared, Slot::Orthogonal}) layout.push_back({p, b, s});
    }
  }
  for (Port p : {Port::AliceLoss, Port::BobLoss, Port::Idler}) {
    for (Bin b : {Bin::Early, Bin::Late}) layout.push_back({p, b, Slot::Shared});
  }
  return layout;
}

int FockRegister::mode_index(const ModeLabel& label) const {
  for (std::size_t i = 0; i < modes_.size(); ++i) {
    if (modes_[i] == label) return static_cast<int>(i);
  }
  return -1;
}

int FockRegister::total_photons(Key key) {
  int n = 0;
  while (key != 0) {
    n += static_cast<int>(key & 0xF);
    key >>= 4;
  }
  return n;
}

double FockRegister::norm_squared() const {
  double n2 = 0.0;
  for (const auto& [k, a] : amps_) n2 += std::norm(a);
  return n2;
}

void FockRegister::set_amplitudes(Amplitudes amps, double extra_leakage) {
  amps_ = std::move(amps);
  leakage_ += extra_leakage;
}

FockRegister FockRegister::product(const FockRegister& a, const FockRegister& b) {
  if (a.modes_ != b.modes_) throw std::invalid_argument("product of registers with different layouts");
  Key occupied_a = 0;
  Key occupied_b = 0;
  for (const auto& [k, amp] : a.amps_) occupied_a |= k;
  for (const auto& [k, amp] : b.amps_) occupied_b |= k;
  // Compare whole 4-bit fields, not individual bits.
  for (int m = 0; m < static_cast<int>(a.modes_.size()); ++m) {
    if (occupation(occupied_a, m) != 0 && occupation(occupied_b, m) != 0) {
      throw std::invalid_argument("product of registers sharing an occupied mode");
    }
  }
  FockRegister out(a.modes_, a.spec_);
  Amplitudes amps;
  amps.reserve(a.amps_.size() * b.amps_.size());
  double kept = 0.0;
  double total = 0.0;
  for (const auto& [ka, va] : a.amps_) {
    for (const auto& [kb, vb] : b.amps_) {
      const Complex v = va * vb;
      total += std::norm(v);
      if (total_photons(ka | kb) > a.spec_.total_cutoff) continue;
      kept += std::norm(v);
      amps.emplace(ka | kb, v);
    }
  }
  const double dropped = total > 0.0 ? 1.0 - kept / total : 0.0;
  if (dropped > a.spec_.max_leakage) {
    throw TruncationError("register product exceeds the total photon cutoff");
  }
  normalize(amps);
  out.amps_ = std::move(amps);
  out.leakage_ = a.leakage_ + b.leakage_ + dropped;
  return out;
}

FockRegister FockRegister::apply_two_mode_unitary(int mode_a, int mode_b, const Matrix2& u) const {
  const int n_modes = static_cast<int>(modes_.size());
  if (mode_a < 0 || mode_b < 0 || mode_a >= n_modes || mode_b >= n_modes || mode_a == mode_b) {
    throw std::invalid_argument("two-mode unitary on invalid modes");
  }
  FockRegister out(modes_, spec_);
  out.leakage_ = leakage_;
  Amplitudes& dst = out.amps_;
  dst.reserve(amps_.size() * 2);
  for (const auto& [key, amp] : amps_) {
    const int n = occupation(key, mode_a);
    const int m = occupation(key, mode_b);
    if (n == 0 && m == 0) {
      add_to(dst, key, amp);
      continue;
    }
    const Key base = with_occupation(with_occupation(key, mode_a, 0), mode_b, 0);
    const double inv_norm = 1.0 / std::sqrt(factorial(n) * factorial(m));
    for (int j = 0; j <= n; ++j) {
      const Complex from_a = binomial(n, j) * ipow(u(0, 0), j) * ipow(u(1, 0), n - j);
      for (int k = 0; k <= m; ++k) {
        const Complex from_b = binomial(m, k) * ipow(u(0, 1), k) * ipow(u(1, 1), m - k);
        const int p = j + k;
        const int q = n + m - p;
        const Complex c = from_a * from_b * std::sqrt(factorial(p) * factorial(q)) * inv_norm;
        if (c == Complex(0.0, 0.0)) continue;
        add_to(dst, with_occupation(with_occupation(base, mode_a, p), mode_b, q), amp * c);
      }
    }
  }
  std::erase_if(dst, [](const auto& kv) { return std::norm(kv.second) < kPruneNorm2; });
  return out;
}

FockRegister vacuum(const std::vector<ModeLabel>& layout, const RegisterSpec& spec) {
  FockRegister reg(layout, spec);
  FockRegister::Amplitudes amps;
  amps.emplace(0, Complex(1.0, 0.0));
  reg.set_amplitudes(std::move(amps), 0.0);
  return reg;
}

namespace {

std::pair<int, int> bin_modes(const FockRegister& reg, Port port) {
  const int e = reg.mode_index({port, Bin::Early, Slot::Shared});
  const int l = reg.mode_index({port, Bin::Late, Slot::Shared});
  if (e < 0 || l < 0) throw std::invalid_argument("port has no early/late shared modes");
  return {e, l};
}

}  // namespace

FockRegister build_coherent(const std::vector<ModeLabel>& layout, const RegisterSpec& spec,
                            Port port, const TimeBinState& qubit, double mu, double phase) {
  if (mu < 0.0) throw std::invalid_argument("mean photon number must be non-negative");
  FockRegister reg(layout, spec);
  const auto [e, l] = bin_modes(reg, port);
  const Ket k = qubit.ket() * std::polar(std::sqrt(mu), phase);
  const double envelope = std::exp(-0.5 * mu);
  FockRegister::Amplitudes amps;
  double kept = 0.0;
  for (int ne = 0; ne <= spec.n_max; ++ne) {
    for (int nl = 0; nl <= spec.n_max && ne + nl <= spec.total_cutoff; ++nl) {
      const Complex a = envelope * ipow(k(0), ne) * ipow(k(1), nl) /
                        std::sqrt(factorial(ne) * factorial(nl));
      if (std::norm(a) == 0.0 && (ne + nl) > 0) continue;
      kept += std::norm(a);
      amps.emplace(FockRegister::with_occupation(FockRegister::with_occupation(0, e, ne), l, nl), a);
    }
  }
  const double leakage = 1.0 - kept;
  if (leakage > spec.max_leakage) {
    throw TruncationError("coherent state truncation leakage " + std::to_string(leakage) +
                          " exceeds limit");
  }
  normalize(amps);
  reg.set_amplitudes(std::move(amps), std::max(leakage, 0.0));
  return reg;
}

FockRegister build_single_photon(const std::vector<ModeLabel>& layout, const RegisterSpec& spec,
                                 Port port, const TimeBinState& qubit) {
  FockRegister reg(layout, spec);
  const auto [e, l] = bin_modes(reg, port);
  const Ket k = qubit.ket();
  FockRegister::Amplitudes amps;
  if (k(0) != Complex(0.0, 0.0)) amps.emplace(FockRegister::with_occupation(0, e, 1), k(0));
  if (k(1) != Complex(0.0, 0.0)) amps.emplace(FockRegister::with_occupation(0, l, 1), k(1));
  reg.set_amplitudes(std::move(amps), 0.0);
  return reg;
}

FockRegister build_spdc_pair(const std::vector<ModeLabel>& layout, const RegisterSpec& spec,
                             Port signal, Port idler, double mu_pair) {
  if (mu_pair < 0.0 || mu_pair > 0.2) throw std::invalid_argument("mu_pair must lie in [0, 0.2]");
  FockRegister reg(layout, spec);
  const auto [se, sl] = bin_modes(reg, signal);
  const auto [ie, il] = bin_modes(reg, idler);
  const double m = 0.5 * mu_pair;
  // Thermal pair-number amplitudes for one bin.
  std::vector<double> amp;
  for (int n = 0; n <= spec.n_max; ++n) {
    amp.push_back(std::sqrt(std::pow(m, n) / std::pow(1.0 + m, n + 1)));
  }
  FockRegister::Amplitudes amps;
  double kept = 0.0;
  for (int ne = 0; ne <= spec.n_max; ++ne) {
    for (int nl = 0; nl <= spec.n_max; ++nl) {
      if (2 * (ne + nl) > spec.total_cutoff) continue;
      const double a = amp[ne] * amp[nl];
      if (a == 0.0 && ne + nl > 0) continue;
      kept += a * a;
      FockRegister::Key key = 0;
      key = FockRegister::with_occupation(key, se, ne);
      key = FockRegister::with_occupation(key, ie, ne);
      key = FockRegister::with_occupation(key, sl, nl);
      key = FockRegister::with_occupation(key, il, nl);
      amps.emplace(key, Complex(a, 0.0));
    }
  }
  const double leakage = 1.0 - kept;
  if (leakage > spec.max_leakage) {
    throw TruncationError("SPDC truncation leakage " + std::to_string(leakage) + " exceeds limit");
  }
  normalize(amps);
  reg.set_amplitudes(std::move(amps), std::max(leakage, 0.0));
  return reg;
}

FockRegister build_phi_plus_pair(const std::vector<ModeLabel>& layout, const RegisterSpec& spec,
                                 Port signal, Port idler) {
  FockRegister reg(layout, spec);
  const auto [se, sl] = bin_modes(reg, signal);
  const auto [ie, il] = bin_modes(reg, idler);
  const double h = std::numbers::sqrt2 / 2.0;
  FockRegister::Amplitudes amps;
  amps.emplace(FockRegister::with_occupation(FockRegister::with_occupation(0, se, 1), ie, 1), h);
  amps.emplace(FockRegister::with_occupation(FockRegister::with_occupation(0, sl, 1), il, 1), h);
  reg.set_amplitudes(std::move(amps), 0.0);
  return reg;
}

FockRegister apply_beamsplitter(const FockRegister& reg, Port port_a, Port port_b,
                                double transmittance) {
  require_probability(transmittance, "transmittance");
  const double t = std::sqrt(transmittance);
  const double r = std::sqrt(1.0 - transmittance);
  Matrix2 u;
  u << t, r, r, -t;
  FockRegister out = reg;
  int pairs = 0;
  for (const ModeLabel& label : reg.modes()) {
    if (label.port != port_a) continue;
    const int a = reg.mode_index(label);
    const int b = reg.mode_index({port_b, label.bin, label.slot});
    if (b < 0) continue;
    out = out.apply_two_mode_unitary(a, b, u);
    ++pairs;
  }
  if (pairs == 0) throw std::invalid_argument("beamsplitter ports share no modes");
  return out;
}

FockRegister partial_overlap_embed(const FockRegister& reg, Port port, double overlap) {
  require_probability(overlap, "overlap");
  FockRegister out = reg;
  for (Bin bin : {Bin::Early, Bin::Late}) {
    const int s = reg.mode_index({port, bin, Slot::Shared});
    const int o = reg.mode_index({port, bin, Slot::Orthogonal});
    if (s < 0 || o < 0) throw std::invalid_argument("port lacks distinguishability slots");
    const double t = std::sqrt(overlap);
    const double r = std::sqrt(1.0 - overlap);
    Matrix2 u;
    u << t, r, r, -t;
    out = out.apply_two_mode_unitary(s, o, u);
  }
  return out;
}

namespace {

struct ChannelModes {
  // [detector][bin] -> mode indices (both slots)
  std::array<std::array<std::vector<int>, 2>, 2> modes;
};

ChannelModes bsm_channels(const FockRegister& reg) {
  ChannelModes ch;
  const std::array<Port, 2> ports = {Port::Alice, Port::BobSignal};
  for (int d = 0; d < 2; ++d) {
    for (int b = 0; b < 2; ++b) {
      for (Slot s : {Slot::Shared, Slot::Orthogonal}) {
        const int idx = reg.mode_index({ports[d], b == 0 ? Bin::Early : Bin::Late, s});
        if (idx >= 0) ch.modes[d][b].push_back(idx);
      }
      if (ch.modes[d][b].empty()) throw std::invalid_argument("register is missing BSM modes");
    }
  }
  return ch;
}

/// Probability of each of the 16 patterns for a fixed occupation key.
std::array<double, 16> pattern_given_key(FockRegister::Key key, const ChannelModes& ch,
                                         const DetectorModel& d1, const DetectorModel& d2) {
  std::array<double, 4> click{};
  for (int d = 0; d < 2; ++d) {
    for (int b = 0; b < 2; ++b) {
      int n = 0;
      for (int m : ch.modes[d][b]) n += FockRegister::occupation(key, m);
      click[2 * d + b] = 1.0 - no_click(n, d == 0 ? d1 : d2);
    }
  }
  std::array<double, 16> out{};
  for (int pattern = 0; pattern < 16; ++pattern) {
    double p = 1.0;
    for (int c = 0; c < 4; ++c) p *= (pattern >> c) & 1 ? click[c] : 1.0 - click[c];
    out[pattern] = p;
  }
  return out;
}

}  // namespace

PatternTable bsm_pattern_probabilities(const FockRegister& reg, const DetectorModel& d1,
                                       const DetectorModel& d2) {
  const ChannelModes ch = bsm_channels(reg);
  PatternTable table{};
  for (const auto& [key, amp] : reg.amplitudes()) {
    const double w = std::norm(amp);
    const auto given = pattern_given_key(key, ch, d1, d2);
    for (int p = 0; p < 16; ++p) table[p] += w * given[p];
  }
  return table;
}

namespace {

/// Rotates the idler modes so that the early-idler slot holds the analyzer
/// mode <analyzer| and the late-idler slot its orthogonal complement.
FockRegister rotate_to_analyzer(const FockRegister& reg, const TimeBinState& analyzer) {
  const int ce = reg.mode_index({Port::Idler, Bin::Early, Slot::Shared});
  const int cl = reg.mode_index({Port::Idler, Bin::Late, Slot::Shared});
  if (ce < 0 || cl < 0) throw std::invalid_argument("register has no idler modes");
  const Ket x = analyzer.ket();
  Matrix2 u;
  u << std::conj(x(0)), std::conj(x(1)), -x(1), x(0);
  return reg.apply_two_mode_unitary(ce, cl, u);
}

}  // namespace

JointTable joint_probabilities(const FockRegister& reg, const DetectorModel& d1,
                               const DetectorModel& d2, const TimeBinState& analyzer,
                               const DetectorModel& bob) {
  const FockRegister rotated = rotate_to_analyzer(reg, analyzer);
  const ChannelModes ch = bsm_channels(rotated);
  const int cx = rotated.mode_index({Port::Idler, Bin::Early, Slot::Shared});
  JointTable table{};
  for (const auto& [key, amp] : rotated.amplitudes()) {
    const double w = std::norm(amp);
    const auto given = pattern_given_key(key, ch, d1, d2);
    const double bob_click = 1.0 - no_click(FockRegister::occupation(key, cx), bob);
    for (int p = 0; p < 16; ++p) {
      table[p][0] += w * given[p] * (1.0 - bob_click);
      table[p][1] += w * given[p] * bob_click;
    }
  }
  return table;
}

namespace {

void validate(const OracleScenario& s) {
  require_probability(s.alice_transmittance, "alice_transmittance");
  require_probability(s.bob_transmittance, "bob_transmittance");
  require_probability(s.overlap, "overlap");
  if (s.phase_points < 1) throw std::invalid_argument("phase_points must be positive");
}

/// Evolves one phase realization of the scenario up to (and including) the
/// BSM beamsplitter.
FockRegister evolve(const OracleScenario& s, double phase) {
  const auto layout = FockRegister::teleportation_layout();
  const FockRegister alice =
      s.alice_single_photon
          ? build_single_photon(layout, s.spec, Port::Alice, s.alice_state)
          : build_coherent(layout, s.spec, Port::Alice, s.alice_state, s.mu_alice, phase);
  const FockRegister bob = s.ideal_pair
                               ? build_phi_plus_pair(layout, s.spec, Port::BobSignal, Port::Idler)
                               : build_spdc_pair(layout, s.spec, Port::BobSignal, Port::Idler,
                                                 s.mu_pair);
  FockRegister reg = FockRegister::product(alice, bob);
  reg = apply_beamsplitter(reg, Port::Alice, Port::AliceLoss, s.alice_transmittance);
  reg = apply_beamsplitter(reg, Port::BobSignal, Port::BobLoss, s.bob_transmittance);
  reg = partial_overlap_embed(reg, Port::Alice, s.overlap);
  return apply_beamsplitter(reg, Port::Alice, Port::BobSignal, 0.5);
}

std::vector<double> phases(const OracleScenario& s) {
  // A single-photon input has no phase to randomize.
  const int n = s.alice_single_photon ? 1 : s.phase_points;
  std::vector<double> out;
  for (int k = 0; k < n; ++k) out.push_back(2.0 * std::numbers::pi * k / n);
  return out;
}

}  // namespace

PatternTable oracle_patterns(const OracleScenario& s) {
  validate(s);
  PatternTable total{};
  const auto grid = phases(s);
  for (double phase : grid) {
    const PatternTable t = bsm_pattern_probabilities(evolve(s, phase), s.d1, s.d2);
    for (int p = 0; p < 16; ++p) total[p] += t[p] / static_cast<double>(grid.size());
  }
  return total;
}

JointTable oracle_joint(const OracleScenario& s, const TimeBinState& analyzer) {
  validate(s);
  JointTable total{};
  const auto grid = phases(s);
  for (double phase : grid) {
    const JointTable t = joint_probabilities(evolve(s, phase), s.d1, s.d2, analyzer, s.bob);
    for (int p = 0; p < 16; ++p) {
      for (int b = 0; b < 2; ++b) total[p][b] += t[p][b] / static_cast<double>(grid.size());
    }
  }
  return total;
}

ConditionalState teleported_conditional_state(const OracleScenario& s) {
  validate(s);
  Matrix2 rho = Matrix2::Zero();
  double flag = 0.0;
  double leakage = 0.0;
  const auto grid = phases(s);
  for (double phase : grid) {
    const FockRegister reg = evolve(s, phase);
    leakage = std::max(leakage, reg.leakage());
    const ChannelModes ch = bsm_channels(reg);
    const int ce = reg.mode_index({Port::Idler, Bin::Early, Slot::Shared});
    const int cl = reg.mode_index({Port::Idler, Bin::Late, Slot::Shared});
    // Group single-photon idler amplitudes by the configuration of all other modes.
    std::unordered_map<FockRegister::Key, std::pair<Ket, double>> rest;
    for (const auto& [key, amp] : reg.amplitudes()) {
      const auto given = pattern_given_key(key, ch, s.d1, s.d2);
      const double w = given[kPsiMinusA] + given[kPsiMinusB];
      flag += w * std::norm(amp) / static_cast<double>(grid.size());
      const int ne = FockRegister::occupation(key, ce);
      const int nl = FockRegister::occupation(key, cl);
      if (ne + nl != 1) continue;
      const FockRegister::Key base =
          FockRegister::with_occupation(FockRegister::with_occupation(key, ce, 0), cl, 0);
      auto [it, inserted] = rest.try_emplace(base, Ket::Zero(), w);
      it->second.first(ne == 1 ? 0 : 1) += amp;
    }
    for (const auto& [base, entry] : rest) {
      const Ket& v = entry.first;
      rho += entry.second * (v * v.adjoint()) / static_cast<double>(grid.size());
    }
  }
  const double single = rho.trace().real();
  if (flag < 1e-15 || single < 1e-15) {
    throw PhysicsError("conditioning probability too small for a teleported state");
  }
  Matrix2 normalized = rho / single;
  normalized = 0.5 * (normalized + normalized.adjoint()).eval();
  return ConditionalState{DensityMatrix(normalized), flag, single / flag, leakage};
}

DensityMatrix oracle_analyzer_state(const OracleScenario& s) {
  std::array<double, 6> rates{};
  for (std::size_t i = 0; i < kAllSettings.size(); ++i) {
    const JointTable t = oracle_joint(s, cardinal_state(kAllSettings[i]));
    rates[i] = t[kPsiMinusA][1] + t[kPsiMinusB][1];
  }
  return stokes_reconstruct(rates);
}

}  // namespace qtele::fock
