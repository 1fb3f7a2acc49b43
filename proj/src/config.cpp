#include "qtele/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace qtele::cfg {

using nlohmann::json;

namespace {

// Line of every key and array element, by JSON pointer. Runs on text the
// json parser already accepted.
std::map<std::string, int> key_lines(const std::string& text) {
  struct Frame {
    bool object;
    std::string path;
    int index = 0;
    bool element_seen = false;
  };
  std::map<std::string, int> lines;
  std::vector<Frame> stack;
  std::string last_key;
  int line = 1;
  auto child_path = [&]() {
    if (stack.empty()) return std::string();
    const Frame& f = stack.back();
    return f.path + "/" + (f.object ? last_key : std::to_string(f.index));
  };
  auto mark_element = [&]() {
    if (!stack.empty() && !stack.back().object && !stack.back().element_seen) {
      stack.back().element_seen = true;
      lines.emplace(child_path(), line);
    }
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\n') {
      ++line;
    } else if (c == '"') {
      const int start_line = line;
      std::string s;
      for (++i; i < text.size() && text[i] != '"'; ++i) {
        if (text[i] == '\\') {
          ++i;
        } else {
          s += text[i];
        }
      }
      std::size_t j = i + 1;
      while (j < text.size() && std::isspace(static_cast<unsigned char>(text[j]))) {
        if (text[j] == '\n') ++line;
        ++j;
      }
      i = j - 1;
      if (j < text.size() && text[j] == ':' && !stack.empty() && stack.back().object) {
        last_key = s;
        lines[child_path()] = start_line;
      } else {
        mark_element();
      }
    } else if (c == '{' || c == '[') {
      mark_element();
      const std::string path = child_path();
      stack.push_back({c == '{', path});
    } else if (c == '}' || c == ']') {
      if (!stack.empty()) stack.pop_back();
    } else if (c == ',') {
      if (!stack.empty() && !stack.back().object) {
        ++stack.back().index;
        stack.back().element_seen = false;
      }
    } else if (!std::isspace(static_cast<unsigned char>(c)) && c != ':') {
      mark_element();
    }
  }
  return lines;
}

int line_of(const std::map<std::string, int>& lines, std::string pointer) {
  while (true) {
    const auto it = lines.find(pointer);
    if (it != lines.end()) return it->second;
    const auto slash = pointer.rfind('/');
    if (slash == std::string::npos || pointer.empty()) return 0;
    pointer.erase(slash);
  }
}

// Reads the keys of one object and rejects whatever is left over.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "/" : path_, 0, "expected an object");
  }

  std::string field(const std::string& key) const { return path_ + "/" + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void number(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(field(key), 0, "expected a number");
      out = v->get<double>();
    }
  }

  void integer(const std::string& key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(field(key), 0, "expected an integer");
      out = v->get<int>();
    }
  }

  void boolean(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(field(key), 0, "expected true or false");
      out = v->get<bool>();
    }
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(field(k), 0, "unknown key '" + k + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_channel(Section& parent, const std::string& key, model::ChannelParams& ch) {
  if (const json* v = parent.find(key)) {
    Section s(*v, parent.field(key));
    s.number("loss_db", ch.loss_db);
    s.number("delay_ns", ch.base_delay_ns);
    s.finish();
  }
}

void read_drift(Section& parent, const std::string& key, net::DriftSpec& d) {
  if (const json* v = parent.find(key)) {
    Section s(*v, parent.field(key));
    s.number("step_sigma", d.step_sigma);
    s.number("ramp_per_window", d.ramp_per_window);
    s.number("bound", d.bound);
    s.number("initial", d.initial);
    s.finish();
  }
}

void read_detector(Section& parent, const std::string& key, DetectorModel& d) {
  if (const json* v = parent.find(key)) {
    Section s(*v, parent.field(key));
    s.number("efficiency", d.efficiency);
    s.number("dark_prob", d.dark_prob);
    s.finish();
  }
}

void read_labels(Section& parent, const std::string& key, std::vector<SettingLabel>& out) {
  if (const json* v = parent.find(key)) {
    if (!v->is_array()) throw ConfigError(parent.field(key), 0, "expected an array of labels");
    out.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      const json& e = (*v)[i];
      const std::string where = parent.field(key) + "/" + std::to_string(i);
      if (!e.is_string()) throw ConfigError(where, 0, "expected a setting label");
      try {
        out.push_back(setting_from_string(e.get<std::string>()));
      } catch (const std::exception&) {
        throw ConfigError(where, 0, "unknown label '" + e.get<std::string>() + "'");
      }
    }
  }
}

ExperimentConfig from_json(const json& root) {
  ExperimentConfig c;
  Section top(root, "");
  if (const json* v = top.find("seed")) {
    if (!v->is_number_unsigned()) throw ConfigError("/seed", 0, "expected a non-negative integer");
    c.seed = v->get<std::uint64_t>();
  }
  if (const json* v = top.find("output_dir")) {
    if (!v->is_string()) throw ConfigError("/output_dir", 0, "expected a string");
    c.output_dir = v->get<std::string>();
  }
  if (const json* v = top.find("topology")) {
    Section s(*v, "/topology");
    s.number("clock_rate_hz", c.topology.clock_rate_hz);
    s.number("bin_separation_ps", c.topology.bin_separation_ps);
    s.number("jitter_sigma_ps", c.topology.jitter_sigma_ps);
    s.number("coincidence_half_window_ps", c.topology.coincidence_half_window_ps);
    read_channel(s, "alice_charlie", c.topology.alice_charlie);
    read_channel(s, "bob_charlie", c.topology.bob_charlie);
    read_channel(s, "charlie_bob", c.topology.charlie_bob);
    s.finish();
  }
  if (const json* v = top.find("sources")) {
    Section s(*v, "/sources");
    s.number("mu_spdc", c.mu_spdc);
    s.number("pulse_sigma_ps", c.pulse_sigma_ps);
    s.number("max_overlap", c.max_overlap);
    s.finish();
  }
  if (const json* v = top.find("detectors")) {
    Section s(*v, "/detectors");
    read_detector(s, "snspd", c.snspd);
    read_detector(s, "apd", c.apd);
    s.number("monitor_efficiency", c.monitor_efficiency);
    s.finish();
  }
  if (const json* v = top.find("excess_loss_db")) {
    Section s(*v, "/excess_loss_db");
    s.number("alice", c.alice_excess_db);
    s.number("bob", c.bob_excess_db);
    s.number("analyzer", c.analyzer_excess_db);
    s.finish();
  }
  if (const json* v = top.find("drifts")) {
    Section s(*v, "/drifts");
    read_drift(s, "timing", c.drifts.timing);
    read_drift(s, "polarization_x", c.drifts.polarization_x);
    read_drift(s, "polarization_y", c.drifts.polarization_y);
    read_drift(s, "phase", c.drifts.phase);
    s.number("phase_noise_rad", c.phase_noise_rad);
    s.finish();
  }
  if (const json* v = top.find("controllers")) {
    Section s(*v, "/controllers");
    s.boolean("hom_lock", c.controllers.hom_lock);
    s.boolean("polarization_lock", c.controllers.polarization_lock);
    s.number("hom_step_ps", c.controllers.hom.step_ps);
    s.integer("hom_probe_steps", c.controllers.hom.probe_steps);
    s.integer("hom_max_pairs", c.controllers.hom.max_pairs);
    s.number("hom_range_ps", c.controllers.hom.range_ps);
    s.number("pol_step_rad", c.controllers.polarization.step_rad);
    s.integer("pol_max_pairs", c.controllers.polarization.max_pairs);
    s.number("significance", c.controllers.hom.significance);
    c.controllers.polarization.significance = c.controllers.hom.significance;
    s.finish();
  }
  if (const json* v = top.find("decoy_levels")) {
    if (!v->is_array()) throw ConfigError("/decoy_levels", 0, "expected an array of numbers");
    c.decoy_levels.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      if (!(*v)[i].is_number()) {
        throw ConfigError("/decoy_levels/" + std::to_string(i), 0, "expected a number");
      }
      c.decoy_levels.push_back((*v)[i].get<double>());
    }
  }
  read_labels(top, "prepared_states", c.prepared_states);
  read_labels(top, "settings", c.settings);
  top.number("duration_s", c.duration_s);
  top.number("window_s", c.window_s);
  if (const json* v = top.find("homscan")) {
    Section s(*v, "/homscan");
    s.number("from_ps", c.homscan.from_ps);
    s.number("to_ps", c.homscan.to_ps);
    s.number("step_ps", c.homscan.step_ps);
    s.integer("windows_per_point", c.homscan.windows_per_point);
    s.number("mu_alice", c.homscan.mu_alice);
    s.finish();
  }
  if (const json* v = top.find("lockdemo")) {
    Section s(*v, "/lockdemo");
    s.number("duration_s", c.lockdemo.duration_s);
    s.number("mu_alice", c.lockdemo.mu_alice);
    s.finish();
  }
  top.finish();
  return c;
}

json drift_json(const net::DriftSpec& d) {
  return {{"step_sigma", d.step_sigma},
          {"ramp_per_window", d.ramp_per_window},
          {"bound", d.bound},
          {"initial", d.initial}};
}

json channel_json(const model::ChannelParams& ch) {
  return {{"loss_db", ch.loss_db}, {"delay_ns", ch.base_delay_ns}};
}

json labels_json(const std::vector<SettingLabel>& v) {
  json a = json::array();
  for (SettingLabel l : v) a.push_back(std::string(to_string(l)));
  return a;
}

json resolved(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["topology"] = {{"clock_rate_hz", c.topology.clock_rate_hz},
                   {"bin_separation_ps", c.topology.bin_separation_ps},
                   {"jitter_sigma_ps", c.topology.jitter_sigma_ps},
                   {"coincidence_half_window_ps", c.topology.coincidence_half_window_ps},
                   {"alice_charlie", channel_json(c.topology.alice_charlie)},
                   {"bob_charlie", channel_json(c.topology.bob_charlie)},
                   {"charlie_bob", channel_json(c.topology.charlie_bob)}};
  j["sources"] = {{"mu_spdc", c.mu_spdc},
                  {"pulse_sigma_ps", c.pulse_sigma_ps},
                  {"max_overlap", c.max_overlap}};
  j["detectors"] = {
      {"snspd", {{"efficiency", c.snspd.efficiency}, {"dark_prob", c.snspd.dark_prob}}},
      {"apd", {{"efficiency", c.apd.efficiency}, {"dark_prob", c.apd.dark_prob}}},
      {"monitor_efficiency", c.monitor_efficiency}};
  j["excess_loss_db"] = {
      {"alice", c.alice_excess_db}, {"bob", c.bob_excess_db}, {"analyzer", c.analyzer_excess_db}};
  j["drifts"] = {{"timing", drift_json(c.drifts.timing)},
                 {"polarization_x", drift_json(c.drifts.polarization_x)},
                 {"polarization_y", drift_json(c.drifts.polarization_y)},
                 {"phase", drift_json(c.drifts.phase)},
                 {"phase_noise_rad", c.phase_noise_rad}};
  j["controllers"] = {{"hom_lock", c.controllers.hom_lock},
                      {"polarization_lock", c.controllers.polarization_lock},
                      {"hom_step_ps", c.controllers.hom.step_ps},
                      {"hom_probe_steps", c.controllers.hom.probe_steps},
                      {"hom_max_pairs", c.controllers.hom.max_pairs},
                      {"hom_range_ps", c.controllers.hom.range_ps},
                      {"pol_step_rad", c.controllers.polarization.step_rad},
                      {"pol_max_pairs", c.controllers.polarization.max_pairs},
                      {"significance", c.controllers.hom.significance}};
  j["decoy_levels"] = c.decoy_levels;
  j["prepared_states"] = labels_json(c.prepared_states);
  j["settings"] = labels_json(c.settings);
  j["duration_s"] = c.duration_s;
  j["window_s"] = c.window_s;
  j["homscan"] = {{"from_ps", c.homscan.from_ps},
                  {"to_ps", c.homscan.to_ps},
                  {"step_ps", c.homscan.step_ps},
                  {"windows_per_point", c.homscan.windows_per_point},
                  {"mu_alice", c.homscan.mu_alice}};
  j["lockdemo"] = {{"duration_s", c.lockdemo.duration_s}, {"mu_alice", c.lockdemo.mu_alice}};
  return j;
}

}  // namespace

ConfigError::ConfigError(const std::string& field, int line, const std::string& message)
    : std::runtime_error((line > 0 ? "line " + std::to_string(line) + ": " : std::string()) +
                         (field.empty() ? std::string() : field + ": ") + message),
      field_(field),
      line_(line) {}

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const std::string& field, const std::string& msg) {
    if (!ok) throw ConfigError(field, 0, msg);
  };
  require(mu_spdc >= 0.0 && mu_spdc <= 0.1, "/sources/mu_spdc", "must lie in [0, 0.1]");
  require(max_overlap >= 0.0 && max_overlap <= 1.0, "/sources/max_overlap", "must lie in [0, 1]");
  require(pulse_sigma_ps > 0.0, "/sources/pulse_sigma_ps", "must be positive");
  require(!decoy_levels.empty(), "/decoy_levels", "needs at least one level");
  for (std::size_t i = 0; i < decoy_levels.size(); ++i) {
    const std::string f = "/decoy_levels/" + std::to_string(i);
    require(decoy_levels[i] >= 0.0 && decoy_levels[i] <= 0.1, f, "must lie in [0, 0.1]");
    for (std::size_t k = 0; k < i; ++k) require(decoy_levels[k] != decoy_levels[i], f, "duplicate level");
  }
  auto unique_labels = [&](const std::vector<SettingLabel>& v, const std::string& f) {
    require(!v.empty(), f, "must not be empty");
    for (std::size_t i = 0; i < v.size(); ++i) {
      for (std::size_t k = 0; k < i; ++k) {
        require(v[k] != v[i], f + "/" + std::to_string(i), "duplicate label");
      }
    }
  };
  unique_labels(prepared_states, "/prepared_states");
  unique_labels(settings, "/settings");
  require(window_s > 0.0, "/window_s", "must be positive");
  require(duration_s >= window_s, "/duration_s", "must cover at least one window");
  require(lockdemo.duration_s >= window_s, "/lockdemo/duration_s", "must cover at least one window");
  require(homscan.mu_alice >= 0.0 && homscan.mu_alice <= 0.1, "/homscan/mu_alice",
          "must lie in [0, 0.1]");
  require(lockdemo.mu_alice >= 0.0 && lockdemo.mu_alice <= 0.1, "/lockdemo/mu_alice",
          "must lie in [0, 0.1]");
  require(homscan.step_ps > 0.0, "/homscan/step_ps", "must be positive");
  require(homscan.to_ps >= homscan.from_ps, "/homscan/to_ps", "must not be below from_ps");
  require(homscan.windows_per_point >= 1, "/homscan/windows_per_point", "must be >= 1");
  require(std::floor((homscan.to_ps - homscan.from_ps) / homscan.step_ps) < 1e5, "/homscan/step_ps",
          "too many scan points");
  try {
    controllers.hom.validate();
  } catch (const std::exception& e) {
    throw ConfigError("/controllers", 0, e.what());
  }
  try {
    controllers.polarization.validate();
  } catch (const std::exception& e) {
    throw ConfigError("/controllers", 0, e.what());
  }
  try {
    topology.validate();
  } catch (const std::exception& e) {
    throw ConfigError("/topology", 0, e.what());
  }
  try {
    sim_config(prepared_states.front(), settings.front(), decoy_levels.front()).validate();
  } catch (const std::exception& e) {
    throw ConfigError("", 0, e.what());
  }
}

net::SimConfig ExperimentConfig::sim_config(SettingLabel state, SettingLabel setting,
                                            double mu_alice) const {
  net::SimConfig s;
  s.topology = topology;
  s.system.source.mu_alice = mu_alice;
  s.system.source.mu_spdc = mu_spdc;
  s.system.source.pulse_sigma_ps = pulse_sigma_ps;
  s.system.alice_excess_db = alice_excess_db;
  s.system.bob_excess_db = bob_excess_db;
  s.system.analyzer_excess_db = analyzer_excess_db;
  s.system.d1 = snspd;
  s.system.d2 = snspd;
  s.system.bob = apd;
  s.max_overlap = max_overlap;
  s.alice_state = cardinal_state(state);
  s.bob_setting = setting;
  s.drifts = drifts;
  s.phase_noise_rad = phase_noise_rad;
  s.monitor_efficiency = monitor_efficiency;
  s.window_s = window_s;
  return s;
}

std::int64_t ExperimentConfig::windows_per_cell() const {
  return static_cast<std::int64_t>(std::llround(duration_s / window_s));
}

ExperimentConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + upto, '\n'));
    throw ConfigError("", line, std::string("syntax error: ") + e.what());
  }
  try {
    ExperimentConfig c = from_json(root);
    c.validate();
    return c;
  } catch (const ConfigError& e) {
    const auto lines = key_lines(text);
    throw ConfigError(e.field(), line_of(lines, e.field()),
                      std::string(e.what()).substr(e.field().empty() ? 0 : e.field().size() + 2));
  }
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", 0, "cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_json(const ExperimentConfig& c) { return resolved(c).dump(2) + "\n"; }

std::string config_hash(const ExperimentConfig& c) {
  json j = resolved(c);
  j.erase("output_dir");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace qtele::cfg
