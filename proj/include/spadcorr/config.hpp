#pragma once

// Flat key = value run configuration. Lines starting with '#' are comments; unknown keys are
// rejected. The full key table lives in README.md.

#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "spadcorr/correlator.hpp"
#include "spadcorr/epr.hpp"
#include "spadcorr/error.hpp"
#include "spadcorr/optics.hpp"
#include "spadcorr/sensor_sim.hpp"

namespace spadcorr {

enum class AccidentalChoice : std::uint8_t { ShiftedWindow, G1Product, None };

struct TargetWidths {
  double delta_x_um = 37.3;
  double delta_qx_per_mm = 4.0;
  double delta_y_um = 37.3;
  double delta_qy_per_mm = 3.4;
};

struct RunConfig {
  TargetWidths targets;
  std::optional<DoubleGaussianModel> model;  // explicit widths override the targets
  OpticalMapping optics;                     // mode is set per run
  SensorConfig sensor = [] {
    SensorConfig s;
    s.efficiency = 0.5;
    return s;
  }();
  double offset_spread_ps = 400.0;
  CrosstalkSpec crosstalk = CrosstalkSpec::nearest_neighbors(1e-3);
  double pairs_per_frame = 0.2;
  std::uint64_t frames = 20'000'000;
  unsigned workers = 1;
  std::uint64_t seed = 1;

  AccumulatorParams correlate;
  AccidentalChoice accidentals = AccidentalChoice::ShiftedWindow;
  int g1_mask_distance = 10;
  bool estimate_crosstalk = true;
  int crosstalk_inner = 29;
  int crosstalk_radius = 1;
  int mask_radius = 1;  // negative disables neighbor masking

  std::array<bool, 4> methods{true, true, true, true};
  double column_retention = kColumnRetention;
  double mask_threshold = kMaskedFractionThreshold;

  bool write_events = true;

  DoubleGaussianModel source_model() const {
    if (model) return *model;
    return solve_model_for_targets(targets.delta_x_um, targets.delta_qx_per_mm, targets.delta_y_um,
                                   targets.delta_qy_per_mm);
  }

  /// Near field uses `seed`, far field `seed + 1`; pixel offsets are a property of the sensor
  /// and depend on `seed` only.
  SimulationSetup setup(MappingMode mode) const {
    SimulationSetup s;
    s.model = source_model();
    s.mapping = optics;
    s.mapping.mode = mode;
    s.sensor = sensor;
    if (offset_spread_ps > 0.0) s.sensor.pixel_offsets_ps = make_uniform_pixel_offsets(sensor.shape, offset_spread_ps, seed);
    s.crosstalk = crosstalk;
    s.pairs_per_frame_mean = pairs_per_frame;
    s.seed = mode == MappingMode::FarField ? seed + 1 : seed;
    s.validate();
    return s;
  }

  AccumulatorParams accumulator_params() const {
    AccumulatorParams p = correlate;
    p.shape = sensor.shape;
    p.bins_per_frame = sensor.bins_per_frame;
    p.validate();
    return p;
  }

  double pixel_scale(MappingMode mode) const {
    OpticalMapping m = optics;
    m.mode = mode;
    return object_scale_per_pixel(m, sensor.pixel_pitch_um);
  }

  EprOptions epr_options() const {
    EprOptions o;
    o.near_scale_um = pixel_scale(MappingMode::NearField);
    o.far_scale_per_mm = pixel_scale(MappingMode::FarField);
    o.enabled = methods;
    o.column_retention = column_retention;
    o.mask_threshold = mask_threshold;
    return o;
  }
};

namespace cfg_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || !std::isfinite(out))
    throw Error(ErrorCode::ConfigError, key + ": expected a number, got '" + v + "'");
  return out;
}

inline std::int64_t to_int(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw Error(ErrorCode::ConfigError, key + ": expected an integer, got '" + v + "'");
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorCode::ConfigError, key + ": expected true/false, got '" + v + "'");
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

/// "dx,dy:p; dx,dy:p; ..."
inline CrosstalkSpec parse_crosstalk(const std::string& key, const std::string& v) {
  CrosstalkSpec spec;
  for (const auto& entry : split(v, ';')) {
    const auto colon = entry.find(':');
    if (colon == std::string::npos) throw Error(ErrorCode::ConfigError, key + ": expected dx,dy:p entries");
    const auto xy = split(entry.substr(0, colon), ',');
    if (xy.size() != 2) throw Error(ErrorCode::ConfigError, key + ": expected dx,dy:p entries");
    spec.offsets.push_back({static_cast<int>(to_int(key, xy[0])), static_cast<int>(to_int(key, xy[1])),
                            to_double(key, trim(entry.substr(colon + 1)))});
  }
  spec.validate();
  return spec;
}

}  // namespace cfg_detail

/// Applies one key to the config; throws ConfigError for unknown keys or bad values.
inline void apply_setting(RunConfig& c, const std::string& key, const std::string& value) {
  using namespace cfg_detail;
  auto num = [&] { return to_double(key, value); };
  auto integer = [&] { return to_int(key, value); };
  auto model = [&]() -> DoubleGaussianModel& {
    if (!c.model) c.model = DoubleGaussianModel{};
    return *c.model;
  };

  if (key == "target.delta_x_um") c.targets.delta_x_um = num();
  else if (key == "target.delta_qx_per_mm") c.targets.delta_qx_per_mm = num();
  else if (key == "target.delta_y_um") c.targets.delta_y_um = num();
  else if (key == "target.delta_qy_per_mm") c.targets.delta_qy_per_mm = num();
  else if (key == "model.sigma_qplus_x_per_mm") model().x.plus = num();
  else if (key == "model.sigma_qminus_x_per_mm") model().x.minus = num();
  else if (key == "model.sigma_qplus_y_per_mm") model().y.plus = num();
  else if (key == "model.sigma_qminus_y_per_mm") model().y.minus = num();
  else if (key == "optics.magnification") c.optics.magnification = num();
  else if (key == "optics.focal_length_mm") c.optics.focal_length_mm = num();
  else if (key == "optics.wavelength_nm") c.optics.wavelength_nm = num();
  else if (key == "optics.center_offset_x_px") c.optics.center_offset_px.x = num();
  else if (key == "optics.center_offset_y_px") c.optics.center_offset_px.y = num();
  else if (key == "sensor.nx") c.sensor.shape.nx = static_cast<int>(integer());
  else if (key == "sensor.ny") c.sensor.shape.ny = static_cast<int>(integer());
  else if (key == "sensor.pitch_um") c.sensor.pixel_pitch_um = num();
  else if (key == "sensor.tdc_bin_ps") c.sensor.tdc_bin_ps = num();
  else if (key == "sensor.bins_per_frame") c.sensor.bins_per_frame = static_cast<int>(integer());
  else if (key == "sensor.efficiency") c.sensor.efficiency = num();
  else if (key == "sensor.dark_rate_hz") c.sensor.dark_rate_hz = num();
  else if (key == "sensor.jitter_ps") c.sensor.jitter_sigma_ps = num();
  else if (key == "sensor.offset_spread_ps") c.offset_spread_ps = num();
  else if (key == "crosstalk.nearest") c.crosstalk = CrosstalkSpec::nearest_neighbors(num());
  else if (key == "crosstalk.offsets") c.crosstalk = parse_crosstalk(key, value);
  else if (key == "sim.pairs_per_frame") c.pairs_per_frame = num();
  else if (key == "sim.frames") c.frames = static_cast<std::uint64_t>(integer());
  else if (key == "sim.workers") c.workers = static_cast<unsigned>(std::max<std::int64_t>(1, integer()));
  else if (key == "sim.write_events") c.write_events = to_bool(key, value);
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(integer());
  else if (key == "correlate.window") c.correlate.window = static_cast<int>(integer());
  else if (key == "correlate.shift") c.correlate.shift = static_cast<int>(integer());
  else if (key == "correct.accidentals") {
    if (value == "shifted") c.accidentals = AccidentalChoice::ShiftedWindow;
    else if (value == "g1product") c.accidentals = AccidentalChoice::G1Product;
    else if (value == "none") c.accidentals = AccidentalChoice::None;
    else throw Error(ErrorCode::ConfigError, key + ": expected shifted, g1product or none");
  } else if (key == "correct.g1_mask_distance") c.g1_mask_distance = static_cast<int>(integer());
  else if (key == "correct.crosstalk") c.estimate_crosstalk = to_bool(key, value);
  else if (key == "correct.crosstalk_inner") c.crosstalk_inner = static_cast<int>(integer());
  else if (key == "correct.crosstalk_radius") c.crosstalk_radius = static_cast<int>(integer());
  else if (key == "correct.mask_radius") c.mask_radius = static_cast<int>(integer());
  else if (key == "epr.methods") {
    c.methods = {false, false, false, false};
    for (const auto& m : split(value, ',')) {
      bool found = false;
      for (Method candidate : kAllMethods)
        if (m == to_string(candidate)) {
          c.methods[static_cast<std::size_t>(candidate)] = true;
          found = true;
        }
      if (!found) throw Error(ErrorCode::ConfigError, key + ": unknown method '" + m + "'");
    }
  } else if (key == "epr.column_retention") c.column_retention = num();
  else if (key == "epr.mask_threshold") c.mask_threshold = num();
  else throw Error(ErrorCode::ConfigError, "unknown config key '" + key + "'");
}

/// Cross-field checks that the individual structs cannot make alone.
inline void validate(const RunConfig& c) {
  if (c.model) c.model->validate();
  if (!(c.pairs_per_frame >= 0.0)) throw Error(ErrorCode::ConfigError, "sim.pairs_per_frame must be >= 0");
  if (c.frames == 0 || c.frames > 0xFFFFFFFFULL) throw Error(ErrorCode::ConfigError, "sim.frames must be in 1..2^32-1");
  if (c.offset_spread_ps < 0.0) throw Error(ErrorCode::ConfigError, "sensor.offset_spread_ps must be >= 0");
  if (!(c.column_retention >= 0.0 && c.column_retention <= 1.0))
    throw Error(ErrorCode::ConfigError, "epr.column_retention must be in [0, 1]");
  if (!(c.mask_threshold >= 0.0 && c.mask_threshold <= 1.0))
    throw Error(ErrorCode::ConfigError, "epr.mask_threshold must be in [0, 1]");
  if (c.crosstalk_radius < 0) throw Error(ErrorCode::ConfigError, "correct.crosstalk_radius must be >= 0");
  c.sensor.validate();
  c.accumulator_params();
  c.setup(MappingMode::NearField);
  c.setup(MappingMode::FarField);
}

inline RunConfig parse_config(std::istream& is, RunConfig base = {}) {
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = cfg_detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::ConfigError, "line " + std::to_string(lineno) + ": expected key = value");
    apply_setting(base, cfg_detail::trim(t.substr(0, eq)), cfg_detail::trim(t.substr(eq + 1)));
  }
  return base;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::ConfigError, "cannot open config " + path);
  return parse_config(is);
}

}  // namespace spadcorr
