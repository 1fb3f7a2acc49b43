#include "qtele/network_sim.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace qtele::net {

namespace {

constexpr double kFwhmPerSigma = 2.3548200450309493;

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id)};
  return std::mt19937_64(seq);
}

bool is_pole(SettingLabel s) { return s == SettingLabel::E || s == SettingLabel::L; }

TimeBinState analyzer_state(SettingLabel s, double phase_error) {
  const TimeBinState ideal = cardinal_state(s);
  if (is_pole(s) || phase_error == 0.0) return ideal;
  return TimeBinState(ideal.alpha(), ideal.beta(), ideal.phi() + phase_error);
}

// Threshold-detector click probability for a Poisson mean plus dark clicks.
double click_prob(double mean, double dark) {
  return 1.0 - std::exp(-mean) * (1.0 - dark);
}

std::uint64_t poisson(std::mt19937_64& rng, double mean) {
  if (mean <= 0.0) return 0;
  return std::poisson_distribution<std::uint64_t>(mean)(rng);
}

// Multinomial draw over the 32 joint outcomes by a chain of binomials.
std::array<std::array<std::uint64_t, 2>, 16> sample_outcomes(const JointTable& table,
                                                             std::uint64_t n,
                                                             std::mt19937_64& rng) {
  std::array<std::array<std::uint64_t, 2>, 16> out{};
  double remaining_p = 1.0;
  std::uint64_t remaining_n = n;
  for (int pat = 0; pat < 16; ++pat) {
    for (int b = 0; b < 2; ++b) {
      if (pat == 0 && b == 0) continue;  // the bulk, filled in at the end
      if (remaining_n == 0 || remaining_p <= 0.0) break;
      const double p = std::clamp(table[pat][b] / remaining_p, 0.0, 1.0);
      const std::uint64_t k = std::binomial_distribution<std::uint64_t>(remaining_n, p)(rng);
      out[pat][b] = k;
      remaining_n -= k;
      remaining_p -= table[pat][b];
    }
  }
  out[0][0] = remaining_n;
  return out;
}

// Content bits 0..3: detector = bit / 2, bin = bit % 2.
int bin_of_bit(int bit) { return bit & 1; }

}  // namespace

void NodeTopology::validate() const {
  if (!(clock_rate_hz > 0.0)) throw std::invalid_argument("clock_rate_hz must be positive");
  if (!(bin_separation_ps > 0.0)) throw std::invalid_argument("bin_separation_ps must be positive");
  if (!(jitter_sigma_ps >= 0.0)) throw std::invalid_argument("jitter_sigma_ps must be >= 0");
  if (!(kFwhmPerSigma * jitter_sigma_ps < bin_separation_ps)) {
    throw std::invalid_argument("detector jitter FWHM must be below the time-bin separation");
  }
  if (!(coincidence_half_window_ps > 0.0) ||
      2.0 * coincidence_half_window_ps > bin_separation_ps) {
    throw std::invalid_argument("coincidence windows must be positive and not overlap");
  }
  if (2.0 * bin_separation_ps > slot_ps()) {
    throw std::invalid_argument("both time bins must fit in one clock slot");
  }
  for (const auto* ch : {&alice_charlie, &bob_charlie, &charlie_bob}) {
    if (!(ch->loss_db >= 0.0) || !(ch->base_delay_ns >= 0.0)) {
      throw std::invalid_argument("channel loss and delay must be non-negative");
    }
  }
}

std::int64_t NodeTopology::delay_slots(const model::ChannelParams& ch) const {
  return std::llround(ch.base_delay_ns * 1e3 / slot_ps());
}

double NodeTopology::window_acceptance() const {
  if (jitter_sigma_ps == 0.0) return 1.0;
  return std::erf(coincidence_half_window_ps / (std::sqrt(2.0) * jitter_sigma_ps));
}

std::int64_t NodeTopology::vedl_slots() const {
  return delay_slots(bob_charlie) + delay_slots(charlie_bob);
}

DriftProcess::DriftProcess(DriftKind kind, DriftSpec spec)
    : kind_(kind), spec_(spec), value_(spec.initial) {
  if (!(spec.step_sigma >= 0.0)) throw std::invalid_argument("drift step_sigma must be >= 0");
  if (spec.bound > 0.0 && std::abs(spec.initial) > spec.bound) {
    throw std::invalid_argument("drift initial value outside its bound");
  }
}

void DriftProcess::advance(std::mt19937_64& rng) {
  double step = spec_.ramp_per_window;
  if (spec_.step_sigma > 0.0) step += std::normal_distribution<double>(0.0, spec_.step_sigma)(rng);
  double v = value_ + step;
  const double b = spec_.bound;
  if (b > 0.0) {
    // Reflect until inside; a single step can exceed the full width.
    while (v > b || v < -b) {
      v = v > b ? 2.0 * b - v : -2.0 * b - v;
    }
  }
  value_ = v;
}

void SimConfig::validate() const {
  topology.validate();
  system_params(1.0).validate();
  if (!(max_overlap >= 0.0 && max_overlap <= 1.0)) {
    throw std::invalid_argument("max_overlap must lie in [0, 1]");
  }
  if (!(phase_noise_rad >= 0.0)) throw std::invalid_argument("phase_noise_rad must be >= 0");
  if (!(monitor_efficiency >= 0.0 && monitor_efficiency <= 1.0)) {
    throw std::invalid_argument("monitor_efficiency must lie in [0, 1]");
  }
  if (!(window_s > 0.0)) throw std::invalid_argument("window_s must be positive");
}

model::SystemParams SimConfig::system_params(double polarization_transmission,
                                             bool window_acceptance) const {
  model::SystemParams s = system;
  if (window_acceptance) {
    s.d1.efficiency *= topology.window_acceptance();
    s.d2.efficiency *= topology.window_acceptance();
  }
  s.alice_channel = topology.alice_charlie;
  s.bob_channel = topology.bob_charlie;
  s.polarization_transmission = polarization_transmission;
  return s;
}

double timing_residual(double timing_drift_ps, const Actuators& act) {
  return timing_drift_ps - act.timing_shift_ps;
}

double polarization_angle(double drift_x, double drift_y, const Actuators& act) {
  return std::hypot(drift_x - act.polarization[0], drift_y - act.polarization[1]);
}

WindowExpectation window_expectation(const SimConfig& cfg, double residual_ps,
                                     double polarization_angle_rad, double phase_error_rad,
                                     bool window_acceptance) {
  WindowExpectation w;
  const double c = std::cos(polarization_angle_rad);
  w.polarization_transmission = c * c;
  w.system = cfg.system_params(w.polarization_transmission, window_acceptance);
  w.overlap = cfg.max_overlap * model::overlap_from_delay(residual_ps, w.system.source.pulse_sigma_ps);
  w.table = model::joint_probabilities(w.system, cfg.alice_state, w.overlap,
                                       analyzer_state(cfg.bob_setting, phase_error_rad));

  // Alice's photons at the PBS, before the polarization split.
  const double at_pbs = w.system.source.mu_alice * cfg.system_params(1.0).alice_arm_transmittance();
  const double dark = w.system.d1.dark_prob;
  w.monitor_per_slot =
      click_prob(at_pbs * (1.0 - w.polarization_transmission) * cfg.monitor_efficiency, dark);
  w.transmitted_per_slot =
      click_prob(at_pbs * w.polarization_transmission * w.system.d1.efficiency, dark);
  return w;
}

std::vector<WindowSummary> run_windows(const SimConfig& cfg, std::uint64_t seed,
                                       std::int64_t n_windows, const WindowCallback& callback,
                                       Actuators initial) {
  cfg.validate();
  if (n_windows < 0) throw std::invalid_argument("n_windows must be >= 0");
  // Drifts and counts use separate streams so that runs with and without
  // feedback see the same drift realization.
  std::mt19937_64 drift_rng = stream(seed, 1);
  std::mt19937_64 count_rng = stream(seed, 2);
  DriftProcess timing(DriftKind::Timing, cfg.drifts.timing);
  DriftProcess pol_x(DriftKind::Polarization, cfg.drifts.polarization_x);
  DriftProcess pol_y(DriftKind::Polarization, cfg.drifts.polarization_y);
  DriftProcess phase(DriftKind::Phase, cfg.drifts.phase);

  const auto slots = static_cast<std::uint64_t>(std::llround(cfg.window_s * cfg.topology.clock_rate_hz));
  Actuators act = initial;
  std::vector<WindowSummary> out;
  out.reserve(static_cast<std::size_t>(n_windows));
  for (std::int64_t i = 0; i < n_windows; ++i) {
    WindowSummary s;
    s.index = i;
    s.start_s = static_cast<double>(i) * cfg.window_s;
    s.timing_drift_ps = timing.value();
    s.polarization_x = pol_x.value();
    s.polarization_y = pol_y.value();
    s.phase_drift_rad = phase.value();
    s.actuators = act;
    s.residual_ps = timing_residual(s.timing_drift_ps, act);
    double phase_error = s.phase_drift_rad;
    if (cfg.phase_noise_rad > 0.0) {
      phase_error += std::normal_distribution<double>(0.0, cfg.phase_noise_rad)(drift_rng);
    }
    const WindowExpectation w = window_expectation(
        cfg, s.residual_ps, polarization_angle(s.polarization_x, s.polarization_y, act), phase_error);
    s.overlap = w.overlap;
    s.polarization_transmission = w.polarization_transmission;

    const auto counts = sample_outcomes(w.table, slots, count_rng);
    for (int pat = 0; pat < 16; ++pat) {
      for (int b = 0; b < 2; ++b) {
        const std::uint64_t k = counts[pat][b];
        if (pat & 0b0011) s.singles_d1 += k;
        if (pat & 0b1100) s.singles_d2 += k;
        if (b) s.singles_bob += k;
        if ((pat & 0b0011) && (pat & 0b1100)) s.pairwise += k;
        if (is_hom_coincidence(pat)) s.hom_coincidences += k;
        if (is_psi_minus(pat)) {
          s.psi_minus += k;
          if (b) s.triples += k;
        }
      }
    }
    s.monitor = poisson(count_rng, w.monitor_per_slot * static_cast<double>(slots));
    s.transmitted = poisson(count_rng, w.transmitted_per_slot * static_cast<double>(slots));
    out.push_back(s);

    if (callback) callback(out.back(), act);
    timing.advance(drift_rng);
    pol_x.advance(drift_rng);
    pol_y.advance(drift_rng);
    phase.advance(drift_rng);
  }
  return out;
}

std::optional<Click> sample_detection(int photons, int bin, const DetectorModel& detector,
                                      double jitter_sigma_ps, const NodeTopology& topo,
                                      std::mt19937_64& rng) {
  if (photons < 0) throw std::invalid_argument("photon number must be >= 0");
  if (bin != 0 && bin != 1) throw std::invalid_argument("bin must be 0 or 1");
  detector.validate();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double t;
  const double p_photon = 1.0 - std::pow(1.0 - detector.efficiency, photons);
  if (photons > 0 && u(rng) < p_photon) {
    t = bin * topo.bin_separation_ps;
    if (jitter_sigma_ps > 0.0) t += std::normal_distribution<double>(0.0, jitter_sigma_ps)(rng);
  } else if (u(rng) < detector.dark_prob) {
    // Slot centred on the midpoint between the two bins.
    const double mid = 0.5 * topo.bin_separation_ps;
    t = mid + (u(rng) - 0.5) * topo.slot_ps();
  } else {
    return std::nullopt;
  }
  const int nearest = t < 0.5 * topo.bin_separation_ps ? 0 : 1;
  const bool inside =
      std::abs(t - nearest * topo.bin_separation_ps) <= topo.coincidence_half_window_ps;
  return Click{t, inside ? nearest : -1};
}

std::vector<CoincidenceRecord> signals_at_bob(const std::vector<CoincidenceRecord>& charlie,
                                              std::int64_t classical_delay) {
  std::vector<CoincidenceRecord> out;
  for (const auto& r : charlie) {
    if (!r.psi_minus_flag) continue;
    CoincidenceRecord s = r;
    s.slot_index += classical_delay;
    out.push_back(s);
  }
  return out;
}

TripleTally triple_coincidence(const std::vector<CoincidenceRecord>& charlie,
                               const std::vector<CoincidenceRecord>& bob, std::int64_t vedl_delay) {
  TripleTally t;
  std::size_t j = 0;
  for (const auto& c : charlie) {
    if (!c.psi_minus_flag) continue;
    ++t.flags;
    while (j < bob.size() && bob[j].slot_index + vedl_delay < c.slot_index) ++j;
    if (j < bob.size() && bob[j].slot_index + vedl_delay == c.slot_index && bob[j].bob_click) {
      ++t.triples;
    }
  }
  return t;
}

SlotEngine::SlotEngine(SimConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), rng_(stream(seed, 3)) {
  cfg_.validate();
}

SlotRun SlotEngine::run(std::int64_t first_slot, std::int64_t n_slots, const Actuators& act,
                        double timing_drift_ps, double pol_x, double pol_y) {
  if (n_slots < 0) throw std::invalid_argument("n_slots must be >= 0");
  const NodeTopology& topo = cfg_.topology;
  const double residual = timing_residual(timing_drift_ps, act);
  const double angle = polarization_angle(pol_x, pol_y, act);
  // Window losses come from the sampled jitter here, not from the table.
  const WindowExpectation w = window_expectation(cfg_, residual, angle, 0.0, false);

  std::vector<double> weights;
  weights.reserve(31);
  for (int k = 1; k < 32; ++k) weights.push_back(w.table[k & 15][k >> 4]);
  const double p_event = 1.0 - w.table[0][0];
  SlotRun out;
  if (!(p_event > 0.0)) return out;
  std::discrete_distribution<int> pick(weights.begin(), weights.end());
  std::geometric_distribution<std::int64_t> skip(std::min(p_event, 1.0));

  const std::int64_t d_b = topo.delay_slots(topo.bob_charlie);
  const DetectorModel clicked{1.0, 0.0};
  std::int64_t slot = first_slot + skip(rng_);
  const std::int64_t end = first_slot + n_slots;
  while (slot < end) {
    const int k = pick(rng_) + 1;
    const ClickContent content = static_cast<ClickContent>(k);
    int pattern = 0;
    for (int bit = 0; bit < 4; ++bit) {
      if (!(content & (1 << bit))) continue;
      const auto click = sample_detection(1, bin_of_bit(bit), clicked, topo.jitter_sigma_ps, topo, rng_);
      if (click && click->bin >= 0) pattern |= 1 << ((bit & 2) + click->bin);
    }
    const bool bob_click = (content & 0b10000) != 0;

    PulseSlotRecord p;
    p.slot_index = slot;
    p.arrival_offset_ps = residual;
    p.polarization_misalignment = angle;
    p.photon_content = content;
    p.charlie_pattern = pattern;
    p.bob_click = bob_click;
    out.pulses.push_back(p);
    if (pattern != 0) {
      CoincidenceRecord c;
      c.slot_index = slot + d_b;
      c.charlie_pattern = pattern;
      c.psi_minus_flag = is_psi_minus(pattern);
      out.charlie.push_back(c);
    }
    if (bob_click) {
      CoincidenceRecord b;
      b.slot_index = slot;
      b.bob_click = BobClick{cfg_.bob_setting, cfg_.bob_setting == SettingLabel::E ? 0 : 1};
      out.bob.push_back(b);
    }
    slot += 1 + skip(rng_);
  }
  return out;
}

const char* const kEventLogHeader =
    "slot,arrival_offset_ps,polarization_rad,content,charlie_pattern,psi_minus,bob_click";
const char* const kWindowSummaryHeader =
    "window,start_s,singles_d1,singles_d2,singles_bob,pairwise,hom,psi_minus,triples,monitor,"
    "transmitted,timing_drift_ps,timing_shift_ps,residual_ps,overlap,pol_x,pol_y,pol_act_x,"
    "pol_act_y,pol_transmission,phase_drift_rad";

void write_event_log(std::ostream& os, const SlotRun& run) {
  os << kEventLogHeader << '\n';
  for (const auto& p : run.pulses) {
    os << p.slot_index << ',' << p.arrival_offset_ps << ',' << p.polarization_misalignment << ','
       << static_cast<int>(p.photon_content) << ',' << p.charlie_pattern << ','
       << (is_psi_minus(p.charlie_pattern) ? 1 : 0) << ',' << (p.bob_click ? 1 : 0) << '\n';
  }
}

void write_window_summaries(std::ostream& os, const std::vector<WindowSummary>& windows) {
  os << kWindowSummaryHeader << '\n';
  for (const auto& s : windows) {
    os << s.index << ',' << s.start_s << ',' << s.singles_d1 << ',' << s.singles_d2 << ','
       << s.singles_bob << ',' << s.pairwise << ',' << s.hom_coincidences << ',' << s.psi_minus
       << ',' << s.triples << ',' << s.monitor << ',' << s.transmitted << ','
       << s.timing_drift_ps << ',' << s.actuators.timing_shift_ps << ',' << s.residual_ps << ','
       << s.overlap << ',' << s.polarization_x << ',' << s.polarization_y << ','
       << s.actuators.polarization[0] << ',' << s.actuators.polarization[1] << ','
       << s.polarization_transmission << ',' << s.phase_drift_rad << '\n';
  }
}

}  // namespace qtele::net
