#include "qtele/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

#include <Eigen/Dense>

namespace qtele::analysis {

namespace {

int setting_index(SettingLabel s) {
  for (std::size_t i = 0; i < kAllSettings.size(); ++i) {
    if (kAllSettings[i] == s) return static_cast<int>(i);
  }
  throw std::invalid_argument("unknown setting");
}

SettingLabel label_of(const TimeBinState& s) {
  for (SettingLabel l : kAllSettings) {
    if (cardinal_state(l).approx_equal(s, 1e-9)) return l;
  }
  throw std::invalid_argument("state is not one of the six cardinal states");
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != s.size()) throw std::runtime_error("bad number for " + what + ": '" + s + "'");
  return v;
}

std::uint64_t parse_count(const std::string& s, const std::string& what) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw std::runtime_error("bad count for " + what + ": '" + s + "'");
  }
  return std::stoull(s);
}

}  // namespace

CountTable::CountTable(std::vector<double> mu_levels, double clock_rate_hz)
    : mu_levels_(std::move(mu_levels)), clock_rate_hz_(clock_rate_hz) {
  if (mu_levels_.empty()) throw std::invalid_argument("at least one mu level required");
  for (double m : mu_levels_) {
    if (!(m >= 0.0)) throw std::invalid_argument("mu levels must be >= 0");
  }
  if (!(clock_rate_hz_ > 0.0)) throw std::invalid_argument("clock rate must be positive");
}

int CountTable::level_of(double mu) const {
  for (std::size_t i = 0; i < mu_levels_.size(); ++i) {
    if (mu_levels_[i] == mu) return static_cast<int>(i);
  }
  throw std::invalid_argument("mu level not in table");
}

void CountTable::add(const CellKey& key, const CellCounts& counts) {
  if (key.mu_level < 0 || key.mu_level >= static_cast<int>(mu_levels_.size())) {
    throw std::invalid_argument("mu level index out of range");
  }
  if (!(counts.elapsed_s >= 0.0)) throw std::invalid_argument("elapsed time must be >= 0");
  CellCounts& c = cells_[key];
  c.triples += counts.triples;
  c.bsm_flags += counts.bsm_flags;
  c.elapsed_s += counts.elapsed_s;
}

const CellCounts& CountTable::at(const CellKey& key) const {
  const auto it = cells_.find(key);
  if (it == cells_.end()) {
    throw std::out_of_range("missing cell (" + std::string(to_string(key.state)) + ", " +
                            std::string(to_string(key.setting)) + ", level " +
                            std::to_string(key.mu_level) + ")");
  }
  return it->second;
}

double CountTable::gain(const CellKey& key) const {
  const CellCounts& c = at(key);
  return static_cast<double>(c.triples) / (c.elapsed_s * clock_rate_hz_);
}

void CountTable::validate() const {
  for (const auto& [key, c] : cells_) {
    if (key.mu_level < 0 || key.mu_level >= static_cast<int>(mu_levels_.size())) {
      throw std::invalid_argument("cell refers to an unknown mu level");
    }
    if (!(c.elapsed_s > 0.0)) {
      throw std::invalid_argument("cell (" + std::string(to_string(key.state)) + ", " +
                                  std::string(to_string(key.setting)) +
                                  ") has non-positive elapsed time");
    }
    if (c.triples > c.bsm_flags) {
      throw std::invalid_argument("cell (" + std::string(to_string(key.state)) + ", " +
                                  std::string(to_string(key.setting)) +
                                  ") has more triples than psi- flags");
    }
  }
}

bool operator==(const CountTable& a, const CountTable& b) {
  if (a.mu_levels() != b.mu_levels() || a.clock_rate_hz() != b.clock_rate_hz()) return false;
  if (a.cells().size() != b.cells().size()) return false;
  auto ia = a.cells().begin();
  auto ib = b.cells().begin();
  for (; ia != a.cells().end(); ++ia, ++ib) {
    if (ia->first != ib->first || ia->second.triples != ib->second.triples ||
        ia->second.bsm_flags != ib->second.bsm_flags ||
        ia->second.elapsed_s != ib->second.elapsed_s) {
      return false;
    }
  }
  return true;
}

const char* const kCountTableHeader = "state,setting,mu_level,mu,triples,bsm_flags,elapsed_s";

void write_count_table(std::ostream& os, const CountTable& table,
                       const std::map<std::string, std::string>& metadata) {
  for (const auto& [k, v] : metadata) os << "# " << k << '=' << v << '\n';
  std::ostringstream levels;
  levels.precision(17);
  for (std::size_t i = 0; i < table.mu_levels().size(); ++i) {
    levels << (i ? ";" : "") << table.mu_levels()[i];
  }
  os << "# mu_levels=" << levels.str() << '\n';
  std::ostringstream clock;
  clock.precision(17);
  clock << table.clock_rate_hz();
  os << "# clock_rate_hz=" << clock.str() << '\n';
  os << kCountTableHeader << '\n';
  std::ostringstream row;
  row.precision(17);
  for (const auto& [key, c] : table.cells()) {
    row << to_string(key.state) << ',' << to_string(key.setting) << ',' << key.mu_level << ','
        << table.mu_levels()[key.mu_level] << ',' << c.triples << ',' << c.bsm_flags << ','
        << c.elapsed_s << '\n';
  }
  os << row.str();
}

CountTable read_count_table(std::istream& is, std::map<std::string, std::string>* metadata) {
  std::map<std::string, std::string> meta;
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  std::vector<std::array<std::string, 7>> rows;
  std::vector<int> row_lines;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string body = line.substr(line.find_first_not_of("# "));
      const auto eq = body.find('=');
      if (eq == std::string::npos) continue;
      meta[body.substr(0, eq)] = body.substr(eq + 1);
      continue;
    }
    if (!header_seen) {
      if (line != kCountTableHeader) {
        throw std::runtime_error("line " + std::to_string(line_no) + ": expected header '" +
                                 kCountTableHeader + "'");
      }
      header_seen = true;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 7) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": expected 7 fields, got " +
                               std::to_string(f.size()));
    }
    rows.push_back({f[0], f[1], f[2], f[3], f[4], f[5], f[6]});
    row_lines.push_back(line_no);
  }
  if (!header_seen) throw std::runtime_error("count table has no header row");
  if (!meta.count("mu_levels")) throw std::runtime_error("count table lacks '# mu_levels=' line");

  std::vector<double> levels;
  for (const auto& s : split(meta["mu_levels"], ';')) levels.push_back(parse_double(s, "mu_levels"));
  const double clock = meta.count("clock_rate_hz") ? parse_double(meta["clock_rate_hz"], "clock_rate_hz") : 80e6;
  CountTable table(levels, clock);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& f = rows[i];
    const std::string where = "line " + std::to_string(row_lines[i]) + " cell (" + f[0] + ", " +
                              f[1] + ", " + f[2] + ")";
    try {
      CellKey key{setting_from_string(f[0]), setting_from_string(f[1]),
                  static_cast<int>(parse_count(f[2], "mu_level"))};
      if (key.mu_level >= static_cast<int>(levels.size())) {
        throw std::runtime_error("mu_level out of range");
      }
      if (parse_double(f[3], "mu") != levels[key.mu_level]) {
        throw std::runtime_error("mu does not match mu_levels");
      }
      if (table.has(key)) throw std::runtime_error("duplicate cell");
      CellCounts c{parse_count(f[4], "triples"), parse_count(f[5], "bsm_flags"),
                   parse_double(f[6], "elapsed_s")};
      if (!(c.elapsed_s > 0.0)) throw std::runtime_error("elapsed_s must be positive");
      if (c.triples > c.bsm_flags) throw std::runtime_error("triples exceed bsm_flags");
      table.add(key, c);
    } catch (const std::exception& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
  }
  if (metadata) *metadata = std::move(meta);
  return table;
}

DensityMatrix tomography_reconstruct(const std::array<double, 6>& rates, Estimator estimator) {
  const DensityMatrix linear = stokes_reconstruct(rates);
  if (estimator == Estimator::LinearInversion) return linear;

  // R rho R iteration; each basis is normalized separately.
  std::array<double, 6> f{};
  for (int b = 0; b < 3; ++b) {
    const double total = rates[2 * b] + rates[2 * b + 1];
    f[2 * b] = rates[2 * b] / total;
    f[2 * b + 1] = rates[2 * b + 1] / total;
  }
  std::array<Matrix2, 6> proj;
  for (int j = 0; j < 6; ++j) proj[j] = MeasurementSetting(kAllSettings[j]).projector().matrix();
  // Mixing in a little of the identity keeps every projector probability
  // positive during the iteration.
  Matrix2 rho = 0.9 * linear.matrix() + 0.05 * Matrix2::Identity();
  for (int it = 0; it < 5000; ++it) {
    Matrix2 r = Matrix2::Zero();
    for (int j = 0; j < 6; ++j) {
      const double p = (proj[j] * rho).trace().real();
      if (p > 1e-300) r += (f[j] / p) * proj[j];
    }
    r /= 3.0;
    Matrix2 next = r * rho * r;
    next /= next.trace().real();
    next = 0.5 * (next + next.adjoint().eval());
    const double change = (next - rho).norm();
    rho = next;
    if (change < 1e-14) break;
  }
  return DensityMatrix(rho);
}

std::array<double, 6> setting_rates(const CountTable& table, SettingLabel state, int mu_level) {
  std::array<double, 6> rates{};
  for (SettingLabel s : kAllSettings) {
    const CellCounts& c = table.at({state, s, mu_level});
    rates[setting_index(s)] = static_cast<double>(c.triples) / c.elapsed_s;
  }
  return rates;
}

DensityMatrix tomography_reconstruct(const CountTable& table, SettingLabel state, int mu_level,
                                     const TomographyOptions& options) {
  std::array<double, 6> rates = setting_rates(table, state, mu_level);
  if (options.subtract_background) {
    const std::array<double, 6> bg = setting_rates(table, state, table.level_of(0.0));
    for (int i = 0; i < 6; ++i) rates[i] = std::max(0.0, rates[i] - bg[i]);
  }
  return tomography_reconstruct(rates, options.estimator);
}

TimeBinState teleportation_target(SettingLabel prepared) {
  return pauli_y_transform(cardinal_state(prepared));
}

FidelityReport fidelity_report(const CountTable& table, int mu_level,
                               const TomographyOptions& options) {
  FidelityReport r;
  for (std::size_t k = 0; k < kPreparedStates.size(); ++k) {
    r.rho[k] = tomography_reconstruct(table, kPreparedStates[k], mu_level, options);
    r.fidelity[k] = fidelity(r.rho[k], teleportation_target(kPreparedStates[k]));
  }
  r.average = average_fidelity(r.fidelity[0], r.fidelity[1], r.fidelity[2], r.fidelity[3]);
  return r;
}

double monte_carlo_errors(const CountTable& table, const Statistic& statistic, int n_resamples,
                          std::uint64_t seed) {
  if (n_resamples < 100) throw std::invalid_argument("n_resamples must be >= 100");
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(n_resamples));
  for (int r = 0; r < n_resamples; ++r) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(r)};
    std::mt19937_64 rng(seq);
    CountTable replica = table;
    for (auto& [key, c] : replica.mutable_cells()) {
      auto draw = [&](std::uint64_t n) -> std::uint64_t {
        if (n == 0) return 0;
        return std::poisson_distribution<std::uint64_t>(static_cast<double>(n))(rng);
      };
      c.triples = draw(c.triples);
      c.bsm_flags = std::max(c.triples, draw(c.bsm_flags));
    }
    try {
      values.push_back(statistic(replica));
    } catch (const std::exception&) {
      // Replicas where the statistic is undefined do not contribute.
    }
  }
  if (values.size() * 2 < static_cast<std::size_t>(n_resamples)) {
    throw std::runtime_error("statistic undefined in most Monte-Carlo replicas");
  }
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(values.size() - 1));
}

DecoyEstimates decoy_bounds(const DecoyInputs& in) {
  if (!(in.mu > in.nu && in.nu > 0.0)) throw std::invalid_argument("decoy levels need mu > nu > 0");
  for (double q : {in.q_mu, in.q_nu, in.y0}) {
    if (!(q >= 0.0 && q < 1.0)) throw std::invalid_argument("gains must lie in [0, 1)");
  }
  for (double e : {in.e_mu, in.e_nu}) {
    if (!(e >= 0.0 && e <= 1.0)) throw std::invalid_argument("error rates must lie in [0, 1]");
  }
  const double mu = in.mu, nu = in.nu;
  DecoyEstimates d;
  d.q_mu = in.q_mu;
  d.q_nu = in.q_nu;
  d.y0 = in.y0;
  d.e_mu = in.e_mu;
  d.e_nu = in.e_nu;
  d.y1_lower = mu / (mu * nu - nu * nu) *
               (in.q_nu * std::exp(nu) - in.q_mu * std::exp(mu) * nu * nu / (mu * mu) -
                (mu * mu - nu * nu) / (mu * mu) * in.y0);
  if (!(d.y1_lower > 0.0)) {
    throw DecoyInfeasible("single-photon yield bound is not positive (insufficient statistics)");
  }
  const double e1 = (in.e_nu * in.q_nu * std::exp(nu) - 0.5 * in.y0) / (nu * d.y1_lower);
  // The true e1 lies in [0, 1]; beyond that the bound carries no information.
  d.e1_upper = std::clamp(e1, 0.0, 1.0);
  d.f1_lower = 1.0 - d.e1_upper;
  return d;
}

GainError gain_and_error(const CountTable& table, SettingLabel state, int mu_level) {
  const SettingLabel target = label_of(teleportation_target(state));
  const double g_t = table.gain({state, target, mu_level});
  const double g_o = table.gain({state, complement(target), mu_level});
  const double q = g_t + g_o;
  return {q, q > 0.0 ? g_o / q : 0.0};
}

DecoyReport decoy_report(const CountTable& table) {
  const auto& levels = table.mu_levels();
  if (levels.size() != 3) throw std::invalid_argument("decoy analysis needs three mu levels");
  std::vector<int> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int a, int b) { return levels[a] < levels[b]; });
  if (levels[order[0]] != 0.0) throw std::invalid_argument("decoy analysis needs a vacuum level");
  DecoyReport r;
  double sum = 0.0;
  for (std::size_t k = 0; k < kPreparedStates.size(); ++k) {
    const SettingLabel s = kPreparedStates[k];
    const GainError vac = gain_and_error(table, s, order[0]);
    const GainError weak = gain_and_error(table, s, order[1]);
    const GainError strong = gain_and_error(table, s, order[2]);
    DecoyInputs in;
    in.mu = levels[order[2]];
    in.nu = levels[order[1]];
    in.q_mu = strong.gain;
    in.q_nu = weak.gain;
    in.y0 = vac.gain;
    in.e_mu = strong.error;
    in.e_nu = weak.error;
    r.per_state[k] = decoy_bounds(in);
    sum += kStateWeights[k] * r.per_state[k].f1_lower;
  }
  r.f1_lower_average = sum / 6.0;
  return r;
}

VisibilityFit visibility_fit(const std::vector<double>& phases, const std::vector<double>& counts) {
  if (phases.size() != counts.size()) throw std::invalid_argument("phases and counts differ in size");
  const double two_pi = 2.0 * std::numbers::pi;
  std::vector<double> wrapped;
  for (double p : phases) wrapped.push_back(std::fmod(std::fmod(p, two_pi) + two_pi, two_pi));
  std::sort(wrapped.begin(), wrapped.end());
  wrapped.erase(std::unique(wrapped.begin(), wrapped.end(),
                            [](double a, double b) { return std::abs(a - b) < 1e-12; }),
                wrapped.end());
  if (wrapped.size() < 4) throw std::invalid_argument("visibility fit needs >= 4 distinct phases");
  double largest_gap = wrapped.front() + two_pi - wrapped.back();
  for (std::size_t i = 1; i < wrapped.size(); ++i) {
    largest_gap = std::max(largest_gap, wrapped[i] - wrapped[i - 1]);
  }
  if (largest_gap > std::numbers::pi + 1e-12) {
    throw std::invalid_argument("phase scan must span at least pi");
  }

  Eigen::MatrixXd a(phases.size(), 3);
  Eigen::VectorXd y(phases.size());
  for (std::size_t i = 0; i < phases.size(); ++i) {
    a(i, 0) = 1.0;
    a(i, 1) = std::cos(phases[i]);
    a(i, 2) = std::sin(phases[i]);
    y(i) = counts[i];
  }
  const Eigen::Vector3d x = a.colPivHouseholderQr().solve(y);
  if (!(x(0) > 0.0)) throw std::invalid_argument("non-positive mean rate");
  VisibilityFit fit;
  fit.mean_rate = x(0);
  fit.amplitude = std::hypot(x(1), x(2));
  fit.visibility = fit.amplitude / x(0);
  double theta = fit.amplitude > 0.0 ? std::atan2(x(2), x(1)) : 0.0;
  if (theta < 0.0) theta += two_pi;
  fit.phase_offset = theta >= two_pi ? 0.0 : theta;
  return fit;
}

double sigma_distance(double value, double bound, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
  return (value - bound) / sigma;
}

ThresholdReport classical_threshold_tests(const std::array<double, 4>& fidelities,
                                          const std::array<double, 4>& sigmas) {
  ThresholdReport r;
  double var = 0.0;
  for (int k = 0; k < 4; ++k) {
    r.state_distance[k] = sigma_distance(fidelities[k], kClassicalFidelity, sigmas[k]);
    var += kStateWeights[k] * kStateWeights[k] * sigmas[k] * sigmas[k];
  }
  r.average_fidelity = average_fidelity(fidelities[0], fidelities[1], fidelities[2], fidelities[3]);
  r.average_sigma = std::sqrt(var) / 6.0;
  r.average_distance = sigma_distance(r.average_fidelity, kClassicalFidelity, r.average_sigma);
  return r;
}

}  // namespace qtele::analysis
