#include "qtele/feedback.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace qtele::fb {

namespace {

using Pairs = std::deque<std::pair<std::int64_t, std::int64_t>>;

// Pools the most recent pairs until the difference becomes significant.
// Returns +1 if the upper probe saw fewer counts, -1 for the lower probe,
// 0 if no pooled difference is significant.
int pooled_decision(const Pairs& pairs, double sigmas) {
  double upper = 0.0, lower = 0.0;
  for (auto it = pairs.rbegin(); it != pairs.rend(); ++it) {
    upper += static_cast<double>(it->first);
    lower += static_cast<double>(it->second);
    if (significant_difference(upper, lower, sigmas)) return upper < lower ? +1 : -1;
  }
  return 0;
}

std::int64_t max_center_steps(const HomLockConfig& cfg) {
  return static_cast<std::int64_t>(std::floor(cfg.range_ps / cfg.step_ps + 1e-9)) - cfg.probe_steps;
}

}  // namespace

bool significant_difference(double a, double b, double sigmas) {
  if (a < 0.0 || b < 0.0) throw std::invalid_argument("counts must be non-negative");
  const double sum = a + b;
  return sum > 0.0 && std::abs(a - b) > sigmas * std::sqrt(sum);
}

void HomLockConfig::validate() const {
  if (!(step_ps > 0.0)) throw std::invalid_argument("step_ps must be positive");
  if (probe_steps < 1) throw std::invalid_argument("probe_steps must be >= 1");
  if (max_pairs < 1) throw std::invalid_argument("max_pairs must be >= 1");
  if (!(significance > 0.0)) throw std::invalid_argument("significance must be positive");
  if (!(range_ps >= step_ps * (probe_steps + 1))) {
    throw std::invalid_argument("range_ps too small for the dither amplitude");
  }
  if (!(min_counts >= 0.0) || lost_after < 1) {
    throw std::invalid_argument("invalid lock-lost settings");
  }
}

HomLockState hom_lock_init(const HomLockConfig& cfg, double center_ps) {
  cfg.validate();
  HomLockState s;
  const std::int64_t limit = max_center_steps(cfg);
  s.center_steps = std::clamp<std::int64_t>(std::llround(center_ps / cfg.step_ps), -limit, limit);
  s.current_steps = s.center_steps + cfg.probe_steps;
  s.search_direction = +1;
  return s;
}

HomLockCommand hom_lock_step(const HomLockConfig& cfg, HomLockState s, std::int64_t window_counts) {
  if (window_counts < 0) throw std::invalid_argument("window counts must be non-negative");
  // Each probe window should hold at least half the floor.
  if (static_cast<double>(window_counts) < 0.5 * cfg.min_counts) {
    ++s.starved_windows;
  } else {
    s.starved_windows = 0;
    s.lock_lost = false;
  }
  if (s.starved_windows > cfg.lost_after) s.lock_lost = true;

  if (s.lock_lost) {
    // Hold the set point without probing until counts return.
    s.window_counts.clear();
    s.search_direction = 0;
    s.current_steps = s.center_steps;
    return {s, s.current_shift_ps(cfg)};
  }

  if (s.search_direction == +1) {
    s.pending_upper = window_counts;
    s.search_direction = -1;
  } else if (s.search_direction == -1) {
    s.window_counts.emplace_back(s.pending_upper, window_counts);
    while (static_cast<int>(s.window_counts.size()) > cfg.max_pairs) s.window_counts.pop_front();
    const int move = pooled_decision(s.window_counts, cfg.significance);
    if (move != 0) {
      const std::int64_t limit = max_center_steps(cfg);
      s.center_steps = std::clamp<std::int64_t>(s.center_steps + move, -limit, limit);
      s.window_counts.clear();
    }
    s.search_direction = +1;
  } else {
    s.search_direction = +1;  // leaving a hold
  }
  s.current_steps = s.center_steps + s.search_direction * cfg.probe_steps;
  return {s, s.current_shift_ps(cfg)};
}

void PolLockConfig::validate() const {
  if (!(step_rad > 0.0)) throw std::invalid_argument("step_rad must be positive");
  if (max_pairs < 1) throw std::invalid_argument("max_pairs must be >= 1");
  if (!(significance > 0.0)) throw std::invalid_argument("significance must be positive");
  if (!(range_rad > step_rad)) throw std::invalid_argument("range_rad must exceed step_rad");
  if (lost_after < 1) throw std::invalid_argument("lost_after must be >= 1");
}

PolLockState pol_lock_init(const PolLockConfig& cfg) {
  cfg.validate();
  return PolLockState{};
}

std::array<double, 2> pol_probe_angles(const PolLockConfig& cfg, const PolLockState& s) {
  std::array<double, 2> a = s.actuator_angles;
  a[s.axis] = std::clamp(a[s.axis] + s.probe_sign * cfg.step_rad, -cfg.range_rad, cfg.range_rad);
  return a;
}

PolLockCommand pol_lock_step(const PolLockConfig& cfg, PolLockState s, std::int64_t monitor_counts) {
  if (monitor_counts < 0) throw std::invalid_argument("monitor counts must be non-negative");
  const auto now = static_cast<double>(monitor_counts);
  const auto before = static_cast<double>(s.monitor_rate);
  if (now > before && significant_difference(now, before, cfg.significance)) {
    ++s.rising_windows;
  } else {
    s.rising_windows = 0;
  }
  s.lock_lost = s.rising_windows >= cfg.lost_after;
  s.monitor_rate = monitor_counts;

  if (s.probe_sign == +1) {
    s.pending_upper = monitor_counts;
    s.probe_sign = -1;
  } else {
    Pairs& pairs = s.pairs[s.axis];
    pairs.emplace_back(s.pending_upper, monitor_counts);
    while (static_cast<int>(pairs.size()) > cfg.max_pairs) pairs.pop_front();
    const int move = pooled_decision(pairs, cfg.significance);
    if (move != 0) {
      double& a = s.actuator_angles[s.axis];
      a = std::clamp(a + move * cfg.step_rad, -cfg.range_rad, cfg.range_rad);
      pairs.clear();
    }
    s.axis = 1 - s.axis;
    s.probe_sign = +1;
  }
  return {s, pol_probe_angles(cfg, s)};
}

LockRun run_with_locks(const net::SimConfig& sim, std::uint64_t seed, std::int64_t n_windows,
                       bool hom_lock, bool pol_lock, const HomLockConfig& hom_cfg,
                       const PolLockConfig& pol_cfg) {
  LockRun out;
  HomLockState hom = hom_lock_init(hom_cfg);
  PolLockState pol = pol_lock_init(pol_cfg);
  net::Actuators initial;
  if (hom_lock) initial.timing_shift_ps = hom.current_shift_ps(hom_cfg);
  if (pol_lock) initial.polarization = pol_probe_angles(pol_cfg, pol);

  auto callback = [&](const net::WindowSummary& w, net::Actuators& act) {
    TraceRow row;
    row.window = w.index;
    row.hom_counts = static_cast<std::int64_t>(w.hom_coincidences);
    row.monitor_counts = static_cast<std::int64_t>(w.monitor);
    row.transmitted_counts = static_cast<std::int64_t>(w.transmitted);
    row.timing_drift_ps = w.timing_drift_ps;
    row.shift_ps = w.actuators.timing_shift_ps;
    row.set_point_ps = hom_lock ? hom.center_ps(hom_cfg) : w.actuators.timing_shift_ps;
    row.residual_ps = w.residual_ps;
    row.polarization_angle_rad =
        net::polarization_angle(w.polarization_x, w.polarization_y, w.actuators);
    row.pol_actuators = w.actuators.polarization;
    row.hom_lock_lost = hom.lock_lost;
    row.pol_lock_lost = pol.lock_lost;
    out.trace.push_back(row);

    if (hom_lock) {
      HomLockCommand c = hom_lock_step(hom_cfg, std::move(hom), row.hom_counts);
      hom = std::move(c.state);
      act.timing_shift_ps = c.commanded_shift_ps;
    }
    if (pol_lock) {
      PolLockCommand c = pol_lock_step(pol_cfg, std::move(pol), row.monitor_counts);
      pol = std::move(c.state);
      act.polarization = c.actuators;
    }
  };
  out.windows = net::run_windows(sim, seed, n_windows, callback, initial);
  return out;
}

double set_point_residual(const TraceRow& row) { return row.timing_drift_ps - row.set_point_ps; }

double transmitted_rate_rms(const LockRun& run) {
  if (run.windows.size() < 2) throw std::invalid_argument("need at least two windows");
  double sum = 0.0, sum_sq = 0.0;
  for (const auto& w : run.windows) {
    const auto x = static_cast<double>(w.transmitted);
    sum += x;
    sum_sq += x * x;
  }
  const double n = static_cast<double>(run.windows.size());
  const double mean = sum / n;
  if (!(mean > 0.0)) throw std::invalid_argument("no transmitted counts");
  const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
  return std::sqrt(var) / mean;
}

const char* const kTraceHeader =
    "window,hom_counts,monitor_counts,transmitted_counts,timing_drift_ps,shift_ps,set_point_ps,"
    "residual_ps,pol_angle_rad,pol_act_x,pol_act_y,hom_lock_lost,pol_lock_lost";

void write_trace(std::ostream& os, const std::vector<TraceRow>& trace) {
  os << kTraceHeader << '\n';
  for (const auto& r : trace) {
    os << r.window << ',' << r.hom_counts << ',' << r.monitor_counts << ',' << r.transmitted_counts
       << ',' << r.timing_drift_ps << ',' << r.shift_ps << ',' << r.set_point_ps << ','
       << r.residual_ps << ',' << r.polarization_angle_rad << ',' << r.pol_actuators[0] << ','
       << r.pol_actuators[1] << ',' << (r.hom_lock_lost ? 1 : 0) << ','
       << (r.pol_lock_lost ? 1 : 0) << '\n';
  }
}

}  // namespace qtele::fb
