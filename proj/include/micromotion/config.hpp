#pragma once

// Run configuration: a JSON document selecting a preset and overriding any
// of its fields, plus scan plan, stray-field model, seed and optional
// fluorescence / monitor / correlation sections. Frequencies are given in Hz
// and converted to angular frequency here.

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "micromotion/constants.hpp"
#include "micromotion/errors.hpp"
#include "micromotion/presets.hpp"
#include "micromotion/simulator.hpp"

namespace micromotion {

struct MonitorSetup {
  int repeat = 1;
  double cadence = 0.0;  // s; 0 means back-to-back scans
};

struct CorrelationSetup {
  CorrelationConfig config;
  std::vector<double> voltages;
  TrapConfig trap;  // trap with the tuning electrode's field gain
  LaserGeometry laser;
};

struct RunConfig {
  std::string preset;  // base preset, informational once resolved
  Apparatus apparatus;
  ThermalState thermal;
  StrayFieldModel stray;
  ScanPlan plan;
  std::optional<FluorescenceConfig> fluorescence;
  std::optional<std::uint64_t> seed;
  std::optional<MonitorSetup> monitor;
  std::optional<CorrelationSetup> correlation;
  std::string output_dir;
};

namespace detail {

using nlohmann::json;

inline int line_of_offset(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  int line = 1;
  for (std::size_t i = 0; i < offset; ++i)
    if (text[i] == '\n') ++line;
  return line;
}

// Best-effort source line of a key path such as {"plan", "shots_per_point"}.
inline std::optional<int> locate_key(const std::string& text, const std::vector<std::string>& path) {
  std::size_t pos = 0;
  for (const auto& key : path) {
    pos = text.find("\"" + key + "\"", pos);
    if (pos == std::string::npos) return std::nullopt;
  }
  return line_of_offset(text, pos);
}

class ConfigReader {
 public:
  ConfigReader(std::string text, std::string source) : text_(std::move(text)), source_(std::move(source)) {}

  [[noreturn]] void fail(const std::vector<std::string>& path, const std::string& message) const {
    std::string where = source_;
    if (auto line = locate_key(text_, path)) where += ":" + std::to_string(*line);
    std::string dotted;
    for (const auto& p : path) dotted += (dotted.empty() ? "" : ".") + p;
    throw ConfigError(where + ": " + (dotted.empty() ? "" : dotted + ": ") + message);
  }

  void check_keys(const json& object, const std::vector<std::string>& path, const std::set<std::string>& allowed) const {
    if (!object.is_object()) fail(path, "expected an object");
    for (const auto& item : object.items()) {
      if (!allowed.count(item.key())) {
        auto key_path = path;
        key_path.push_back(item.key());
        fail(key_path, "unknown key");
      }
    }
  }

  double number(const json& object, const std::vector<std::string>& path, const std::string& key) const {
    auto key_path = path;
    key_path.push_back(key);
    const auto& v = object.at(key);
    if (!v.is_number()) fail(key_path, "expected a number");
    return v.get<double>();
  }

  std::optional<double> optional_number(const json& object, const std::vector<std::string>& path,
                                        const std::string& key) const {
    if (!object.contains(key)) return std::nullopt;
    return number(object, path, key);
  }

  long long integer(const json& object, const std::vector<std::string>& path, const std::string& key) const {
    auto key_path = path;
    key_path.push_back(key);
    const auto& v = object.at(key);
    if (!v.is_number_integer()) fail(key_path, "expected an integer");
    return v.get<long long>();
  }

  std::string string(const json& object, const std::vector<std::string>& path, const std::string& key) const {
    auto key_path = path;
    key_path.push_back(key);
    const auto& v = object.at(key);
    if (!v.is_string()) fail(key_path, "expected a string");
    return v.get<std::string>();
  }

  std::vector<double> voltages(const json& object, const std::vector<std::string>& path) const {
    if (object.contains("voltages") && object.contains("grid")) fail(path, "give either voltages or grid, not both");
    if (object.contains("voltages")) {
      auto key_path = path;
      key_path.push_back("voltages");
      const auto& arr = object.at("voltages");
      if (!arr.is_array()) fail(key_path, "expected an array of numbers");
      std::vector<double> out;
      for (const auto& v : arr) {
        if (!v.is_number()) fail(key_path, "expected an array of numbers");
        out.push_back(v.get<double>());
      }
      return out;
    }
    if (object.contains("grid")) {
      auto grid_path = path;
      grid_path.push_back("grid");
      const auto& grid = object.at("grid");
      check_keys(grid, grid_path, {"start_v", "stop_v", "points"});
      for (const char* k : {"start_v", "stop_v", "points"})
        if (!grid.contains(k)) fail(grid_path, std::string("missing key '") + k + "'");
      const long long points = integer(grid, grid_path, "points");
      if (points < 2) fail(grid_path, "points must be >= 2");
      return linear_grid(number(grid, grid_path, "start_v"), number(grid, grid_path, "stop_v"),
                         static_cast<int>(points));
    }
    fail(path, "missing voltages (give 'voltages' or 'grid')");
  }

  // Runs a validate() call, anchoring its "<section>: <key> ..." message.
  template <class F>
  void validated(const std::vector<std::string>& section, F&& validate) const {
    try {
      validate();
    } catch (const ConfigError& e) {
      std::string msg = e.what();
      auto path = section;
      const auto colon = msg.find(": ");
      if (colon != std::string::npos) {
        msg = msg.substr(colon + 2);
        const auto space = msg.find(' ');
        const std::string key = msg.substr(0, space);
        if (locate_key(text_, [&] { auto p = section; p.push_back(key); return p; }())) path.push_back(key);
      }
      fail(path, msg);
    }
  }

  const std::string& text() const { return text_; }

 private:
  std::string text_;
  std::string source_;
};

}  // namespace detail

/// Parses and validates a run configuration. `preset_override` (the global
/// --preset flag) replaces the document's base preset.
inline RunConfig parse_run_config(const std::string& text, const std::string& source = "config",
                                  const std::optional<std::string>& preset_override = std::nullopt) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source + ":" + std::to_string(detail::line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1)) +
                      ": parse error: " + e.what());
  }
  const detail::ConfigReader reader(text, source);
  reader.check_keys(doc, {},
                    {"preset", "resolved_from_preset", "seed", "trap", "ion", "laser", "rabi_frequency_hz", "thermal",
                     "stray", "plan", "fluorescence", "monitor", "correlation", "output_dir"});

  RunConfig cfg;
  std::optional<Preset> base;
  if (preset_override) {
    cfg.preset = *preset_override;
  } else if (doc.contains("preset")) {
    cfg.preset = reader.string(doc, {}, "preset");
  }
  if (!cfg.preset.empty()) {
    base = find_preset(cfg.preset);
    if (!base) reader.fail({"preset"}, "unknown preset '" + cfg.preset + "'");
    cfg.apparatus = Apparatus::from_preset(*base);
    cfg.thermal = base->thermal;
  } else {
    cfg.apparatus.ion = ytterbium_171();
    // Echoed configs carry every field; the preset name is kept for reference only.
    if (doc.contains("resolved_from_preset")) cfg.preset = reader.string(doc, {}, "resolved_from_preset");
  }

  if (doc.contains("seed")) {
    const auto& s = doc.at("seed");
    if (!s.is_number_unsigned()) reader.fail({"seed"}, "expected a non-negative integer");
    cfg.seed = s.get<std::uint64_t>();
  }
  if (doc.contains("output_dir")) cfg.output_dir = reader.string(doc, {}, "output_dir");

  if (doc.contains("trap")) {
    const auto& t = doc.at("trap");
    reader.check_keys(t, {"trap"},
                      {"rf_frequency_hz", "secular_frequency_hz", "q_parameter", "axis_angle_rad",
                       "field_gain_v_per_m_per_v"});
    auto& trap = cfg.apparatus.trap;
    if (auto v = reader.optional_number(t, {"trap"}, "rf_frequency_hz")) trap.rf_frequency = constants::two_pi * *v;
    if (auto v = reader.optional_number(t, {"trap"}, "secular_frequency_hz"))
      trap.secular_frequency = constants::two_pi * *v;
    if (auto v = reader.optional_number(t, {"trap"}, "q_parameter")) trap.q_parameter = *v;
    if (auto v = reader.optional_number(t, {"trap"}, "axis_angle_rad")) trap.axis_angle = *v;
    if (auto v = reader.optional_number(t, {"trap"}, "field_gain_v_per_m_per_v")) trap.field_gain = *v;
  } else if (!base) {
    reader.fail({}, "missing 'trap' section (no preset given)");
  }
  if (doc.contains("ion")) {
    const auto& i = doc.at("ion");
    reader.check_keys(i, {"ion"}, {"name", "mass_amu"});
    if (i.contains("name")) cfg.apparatus.ion.name = reader.string(i, {"ion"}, "name");
    if (auto v = reader.optional_number(i, {"ion"}, "mass_amu")) cfg.apparatus.ion.mass_amu = *v;
  }
  if (doc.contains("laser")) {
    const auto& l = doc.at("laser");
    reader.check_keys(l, {"laser"}, {"wavelength_m", "geometry_factor", "projection"});
    auto& laser = cfg.apparatus.laser;
    if (auto v = reader.optional_number(l, {"laser"}, "wavelength_m")) laser.wavelength = *v;
    if (auto v = reader.optional_number(l, {"laser"}, "geometry_factor")) laser.geometry_factor = *v;
    if (auto v = reader.optional_number(l, {"laser"}, "projection")) laser.projection = *v;
  } else if (!base) {
    reader.fail({}, "missing 'laser' section (no preset given)");
  }
  if (auto v = reader.optional_number(doc, {}, "rabi_frequency_hz")) {
    cfg.apparatus.rabi_frequency = constants::two_pi * *v;
  } else if (!base) {
    reader.fail({}, "missing 'rabi_frequency_hz' (no preset given)");
  }
  if (doc.contains("thermal")) {
    const auto& th = doc.at("thermal");
    reader.check_keys(th, {"thermal"}, {"mean_phonons", "lamb_dicke"});
    if (auto v = reader.optional_number(th, {"thermal"}, "mean_phonons")) cfg.thermal.mean_phonons = *v;
    if (auto v = reader.optional_number(th, {"thermal"}, "lamb_dicke")) cfg.thermal.lamb_dicke = *v;
  }

  reader.validated({"trap"}, [&] { cfg.apparatus.trap.validate(); });
  reader.validated({"ion"}, [&] { cfg.apparatus.ion.validate(); });
  reader.validated({"laser"}, [&] { cfg.apparatus.laser.validate(); });
  reader.validated({"rabi_frequency_hz"}, [&] {
    if (!(cfg.apparatus.rabi_frequency > 0.0)) throw ConfigError("rabi_frequency_hz: must be > 0");
  });
  reader.validated({"thermal"}, [&] { cfg.thermal.validate(); });

  if (doc.contains("stray")) {
    const auto& s = doc.at("stray");
    const std::vector<std::string> path{"stray"};
    reader.check_keys(s, path,
                      {"constant_v_per_m", "null_voltage_v", "linear_drift_v_per_m_per_s",
                       "charging_amplitude_v_per_m", "charging_timescale_s"});
    if (s.contains("constant_v_per_m") && s.contains("null_voltage_v"))
      reader.fail(path, "give either constant_v_per_m or null_voltage_v, not both");
    if (auto v = reader.optional_number(s, path, "constant_v_per_m")) cfg.stray.constant = *v;
    if (auto v = reader.optional_number(s, path, "null_voltage_v"))
      cfg.stray.constant = -cfg.apparatus.trap.field_gain * *v;
    if (auto v = reader.optional_number(s, path, "linear_drift_v_per_m_per_s")) cfg.stray.linear_drift = *v;
    if (auto v = reader.optional_number(s, path, "charging_amplitude_v_per_m")) cfg.stray.charging_amplitude = *v;
    if (auto v = reader.optional_number(s, path, "charging_timescale_s")) cfg.stray.charging_timescale = *v;
    reader.validated(path, [&] { cfg.stray.validate(); });
  }

  if (doc.contains("fluorescence")) {
    const auto& f = doc.at("fluorescence");
    const std::vector<std::string> path{"fluorescence"};
    reader.check_keys(f, path, {"collection_efficiency", "cycling_rate_per_s", "detection_time_s"});
    for (const char* k : {"collection_efficiency", "cycling_rate_per_s", "detection_time_s"})
      if (!f.contains(k)) reader.fail(path, std::string("missing key '") + k + "'");
    FluorescenceConfig fluo;
    fluo.collection_efficiency = reader.number(f, path, "collection_efficiency");
    fluo.cycling_rate = reader.number(f, path, "cycling_rate_per_s");
    fluo.detection_time = reader.number(f, path, "detection_time_s");
    reader.validated(path, [&] { fluo.validate(); });
    cfg.fluorescence = fluo;
  }

  if (doc.contains("plan")) {
    const auto& p = doc.at("plan");
    const std::vector<std::string> path{"plan"};
    reader.check_keys(p, path,
                      {"voltages", "grid", "shots_per_point", "order", "pulse_time_s", "mode", "shot_overhead_s",
                       "spam_flip", "dark_counts"});
    auto& plan = cfg.plan;
    plan.voltages = reader.voltages(p, path);
    if (p.contains("shots_per_point")) plan.shots_per_point = static_cast<int>(reader.integer(p, path, "shots_per_point"));
    if (p.contains("order")) plan.order = static_cast<int>(reader.integer(p, path, "order"));
    if (p.contains("mode")) {
      try {
        plan.mode = scan_mode_from_string(reader.string(p, path, "mode"));
      } catch (const ConfigError& e) {
        reader.fail({"plan", "mode"}, e.what());
      }
    }
    plan.pulse_time = reader.optional_number(p, path, "pulse_time_s")
                          .value_or(constants::pi / cfg.apparatus.rabi_frequency);
    if (auto v = reader.optional_number(p, path, "shot_overhead_s")) plan.shot_overhead = *v;
    if (auto v = reader.optional_number(p, path, "spam_flip")) plan.spam_flip = *v;
    if (auto v = reader.optional_number(p, path, "dark_counts")) plan.dark_counts = *v;
    reader.validated(path, [&] { plan.validate(); });
    if (plan.mode == ScanMode::fluorescence && !cfg.fluorescence)
      reader.fail({"plan", "mode"}, "fluorescence mode requires a 'fluorescence' section");
  }

  if (doc.contains("monitor")) {
    const auto& m = doc.at("monitor");
    const std::vector<std::string> path{"monitor"};
    reader.check_keys(m, path, {"repeat", "cadence_s"});
    MonitorSetup setup;
    if (m.contains("repeat")) setup.repeat = static_cast<int>(reader.integer(m, path, "repeat"));
    if (auto v = reader.optional_number(m, path, "cadence_s")) setup.cadence = *v;
    if (setup.repeat < 1) reader.fail({"monitor", "repeat"}, "must be >= 1");
    if (!(setup.cadence >= 0.0)) reader.fail({"monitor", "cadence_s"}, "must be >= 0");
    cfg.monitor = setup;
  }

  if (doc.contains("correlation")) {
    const auto& c = doc.at("correlation");
    const std::vector<std::string> path{"correlation"};
    reader.check_keys(c, path,
                      {"phase_bins", "mean_rate_per_s", "duration_s", "doppler_gain", "voltages", "grid",
                       "field_gain_v_per_m_per_v", "laser"});
    CorrelationSetup setup;
    setup.trap = cfg.apparatus.trap;
    setup.laser = {369.5e-9, 1.0, 1.0};
    if (c.contains("phase_bins")) setup.config.phase_bins = static_cast<int>(reader.integer(c, path, "phase_bins"));
    if (auto v = reader.optional_number(c, path, "mean_rate_per_s")) setup.config.mean_rate = *v;
    if (auto v = reader.optional_number(c, path, "duration_s")) setup.config.duration = *v;
    if (auto v = reader.optional_number(c, path, "doppler_gain")) setup.config.doppler_gain = *v;
    if (auto v = reader.optional_number(c, path, "field_gain_v_per_m_per_v")) setup.trap.field_gain = *v;
    if (c.contains("laser")) {
      const auto& l = c.at("laser");
      const std::vector<std::string> lpath{"correlation", "laser"};
      reader.check_keys(l, lpath, {"wavelength_m", "geometry_factor", "projection"});
      if (auto v = reader.optional_number(l, lpath, "wavelength_m")) setup.laser.wavelength = *v;
      if (auto v = reader.optional_number(l, lpath, "geometry_factor")) setup.laser.geometry_factor = *v;
      if (auto v = reader.optional_number(l, lpath, "projection")) setup.laser.projection = *v;
    }
    if (c.contains("voltages") || c.contains("grid")) setup.voltages = reader.voltages(c, path);
    reader.validated(path, [&] { setup.config.validate(); });
    reader.validated({"correlation", "laser"}, [&] { setup.laser.validate(); });
    cfg.correlation = setup;
  }
  return cfg;
}

/// Fully resolved configuration; parsing it back reproduces `cfg`.
inline nlohmann::json config_to_json(const RunConfig& cfg) {
  using nlohmann::json;
  json doc;
  if (!cfg.preset.empty()) doc["resolved_from_preset"] = cfg.preset;
  if (cfg.seed) doc["seed"] = *cfg.seed;
  if (!cfg.output_dir.empty()) doc["output_dir"] = cfg.output_dir;
  const auto& trap = cfg.apparatus.trap;
  doc["trap"] = {{"rf_frequency_hz", trap.rf_frequency / constants::two_pi},
                 {"secular_frequency_hz", trap.secular_frequency / constants::two_pi},
                 {"q_parameter", trap.q_parameter},
                 {"axis_angle_rad", trap.axis_angle},
                 {"field_gain_v_per_m_per_v", trap.field_gain}};
  doc["ion"] = {{"name", cfg.apparatus.ion.name}, {"mass_amu", cfg.apparatus.ion.mass_amu}};
  const auto& laser = cfg.apparatus.laser;
  doc["laser"] = {{"wavelength_m", laser.wavelength},
                  {"geometry_factor", laser.geometry_factor},
                  {"projection", laser.projection}};
  doc["rabi_frequency_hz"] = cfg.apparatus.rabi_frequency / constants::two_pi;
  doc["thermal"] = {{"mean_phonons", cfg.thermal.mean_phonons}, {"lamb_dicke", cfg.thermal.lamb_dicke}};
  doc["stray"] = {{"constant_v_per_m", cfg.stray.constant},
                  {"linear_drift_v_per_m_per_s", cfg.stray.linear_drift},
                  {"charging_amplitude_v_per_m", cfg.stray.charging_amplitude},
                  {"charging_timescale_s", cfg.stray.charging_timescale}};
  if (!cfg.plan.voltages.empty()) {
    const auto& plan = cfg.plan;
    doc["plan"] = {{"voltages", plan.voltages},
                   {"shots_per_point", plan.shots_per_point},
                   {"order", plan.order},
                   {"pulse_time_s", plan.pulse_time},
                   {"mode", to_string(plan.mode)},
                   {"shot_overhead_s", plan.shot_overhead},
                   {"spam_flip", plan.spam_flip},
                   {"dark_counts", plan.dark_counts}};
  }
  if (cfg.fluorescence) {
    doc["fluorescence"] = {{"collection_efficiency", cfg.fluorescence->collection_efficiency},
                           {"cycling_rate_per_s", cfg.fluorescence->cycling_rate},
                           {"detection_time_s", cfg.fluorescence->detection_time}};
  }
  if (cfg.monitor) doc["monitor"] = {{"repeat", cfg.monitor->repeat}, {"cadence_s", cfg.monitor->cadence}};
  if (cfg.correlation) {
    const auto& c = *cfg.correlation;
    json corr = {{"phase_bins", c.config.phase_bins},
                 {"mean_rate_per_s", c.config.mean_rate},
                 {"duration_s", c.config.duration},
                 {"doppler_gain", c.config.doppler_gain},
                 {"field_gain_v_per_m_per_v", c.trap.field_gain},
                 {"laser",
                  {{"wavelength_m", c.laser.wavelength},
                   {"geometry_factor", c.laser.geometry_factor},
                   {"projection", c.laser.projection}}}};
    if (!c.voltages.empty()) corr["voltages"] = c.voltages;
    doc["correlation"] = corr;
  }
  return doc;
}

}  // namespace micromotion
