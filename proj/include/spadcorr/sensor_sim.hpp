#pragma once

// Monte Carlo generation of time-tagged frames from a 32x32 SPAD array looking at
// SPDC pairs. Every random draw of frame f comes from substreams keyed by
// (seed, f, purpose), so any frame can be generated independently of the others.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <thread>
#include <utility>
#include <vector>

#include "spadcorr/error.hpp"
#include "spadcorr/frame.hpp"
#include "spadcorr/optics.hpp"
#include "spadcorr/rng.hpp"

namespace spadcorr {

/// Hardware efficiency of the sensor at 810 nm; simulations usually run with a larger value.
inline constexpr double kHardwareEfficiency810nm = 0.008;

struct SensorConfig {
  SensorShape shape{};
  double pixel_pitch_um = 44.67;
  double tdc_bin_ps = 205.0;
  int bins_per_frame = 255;
  double efficiency = kHardwareEfficiency810nm;
  double dark_rate_hz = 1000.0;
  double jitter_sigma_ps = 200.0;
  std::vector<double> pixel_offsets_ps;  // empty: no offsets; else one per pixel, linear-index order

  double frame_duration_ps() const { return tdc_bin_ps * bins_per_frame; }

  double offset_of(int linear) const {
    return pixel_offsets_ps.empty() ? 0.0 : pixel_offsets_ps[static_cast<std::size_t>(linear - 1)];
  }

  void validate() const {
    if (shape.nx < 1 || shape.ny < 1 || shape.pixels() > 65535)
      throw Error(ErrorCode::ConfigError, "sensor dimensions out of range");
    if (!(pixel_pitch_um > 0.0) || !(tdc_bin_ps > 0.0))
      throw Error(ErrorCode::ConfigError, "pixel pitch and TDC bin must be positive");
    if (bins_per_frame < 1 || bins_per_frame > 256)
      throw Error(ErrorCode::ConfigError, "bins_per_frame must be in 1..256");
    if (!(efficiency >= 0.0 && efficiency <= 1.0))
      throw Error(ErrorCode::ConfigError, "efficiency must be in [0, 1]");
    if (!(dark_rate_hz >= 0.0)) throw Error(ErrorCode::ConfigError, "dark rate must be >= 0");
    if (!(jitter_sigma_ps >= 0.0)) throw Error(ErrorCode::ConfigError, "jitter must be >= 0");
    if (!pixel_offsets_ps.empty()) {
      if (pixel_offsets_ps.size() != static_cast<std::size_t>(shape.pixels()))
        throw Error(ErrorCode::ConfigError, "pixel offsets: one entry per pixel required");
      for (double o : pixel_offsets_ps)
        if (!std::isfinite(o)) throw Error(ErrorCode::ConfigError, "pixel offsets must be finite");
    }
  }
};

/// Static per-pixel time shifts drawn uniformly from [-spread, +spread] ps.
inline std::vector<double> make_uniform_pixel_offsets(SensorShape shape, double spread_ps, std::uint64_t seed) {
  CounterRng rng(seed, 0, RngPurpose::PixelOffsets);
  std::vector<double> out(static_cast<std::size_t>(shape.pixels()));
  for (auto& o : out) o = spread_ps * (2.0 * rng.uniform() - 1.0);
  return out;
}

struct CrosstalkOffset {
  int dx = 0;
  int dy = 0;
  double p = 0.0;
};

/// Probability that a detection triggers the pixel at (dx, dy); directional, no symmetry assumed.
struct CrosstalkSpec {
  std::vector<CrosstalkOffset> offsets;

  static CrosstalkSpec nearest_neighbors(double p) {
    return {{{1, 0, p}, {-1, 0, p}, {0, 1, p}, {0, -1, p}}};
  }

  void validate() const {
    for (const auto& o : offsets) {
      if (!(o.p >= 0.0 && o.p <= 1.0)) throw Error(ErrorCode::ConfigError, "cross-talk probability outside [0, 1]");
      if (o.dx == 0 && o.dy == 0 && o.p != 0.0)
        throw Error(ErrorCode::ConfigError, "cross-talk at offset (0,0) must be 0");
    }
  }
};

/// A detection before quantization: pixel and arrival time in ps relative to the frame start.
struct Detection {
  Pixel pixel;
  double time_ps = 0.0;
};

/// floor(t / bin) if inside the frame gate, nullopt otherwise (including t < 0).
inline std::optional<int> quantize_tdc(double t_ps, const SensorConfig& cfg) {
  if (!(t_ps >= 0.0)) return std::nullopt;
  const double bin = std::floor(t_ps / cfg.tdc_bin_ps);
  if (bin >= cfg.bins_per_frame) return std::nullopt;
  return static_cast<int>(bin);
}

/// Pixel containing the sensor-plane position rho (um, relative to the optical axis).
inline std::optional<Pixel> pixel_at(Vec2 rho_um, const SensorConfig& cfg, const OpticalMapping& mapping) {
  const double cx = 0.5 * (cfg.shape.nx + 1) + mapping.center_offset_px.x;
  const double cy = 0.5 * (cfg.shape.ny + 1) + mapping.center_offset_px.y;
  const double fx = std::floor(rho_um.x / cfg.pixel_pitch_um + cx + 0.5);
  const double fy = std::floor(rho_um.y / cfg.pixel_pitch_um + cy + 0.5);
  if (fx < 1 || fx > cfg.shape.nx || fy < 1 || fy > cfg.shape.ny) return std::nullopt;
  return Pixel{static_cast<int>(fx), static_cast<int>(fy)};
}

/// Draws one pair's sensor-plane positions (um). Far field samples momenta and maps them
/// through rho = q f / k; near field samples crystal-plane positions and scales by M.
template <class Rng>
std::pair<Vec2, Vec2> sample_pair(const DoubleGaussianModel& model, const OpticalMapping& mapping, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  AxisWidths wx = model.x;
  AxisWidths wy = model.y;
  if (mapping.mode == MappingMode::NearField) {
    const PositionWidths pos = position_widths(model);
    wx = pos.x;
    wy = pos.y;
  }
  const double xp = wx.plus * normal(rng);
  const double xm = wx.minus * normal(rng);
  const double yp = wy.plus * normal(rng);
  const double ym = wy.minus * normal(rng);
  const Vec2 a1{(xp + xm) / std::numbers::sqrt2, (yp + ym) / std::numbers::sqrt2};
  const Vec2 a2{(xp - xm) / std::numbers::sqrt2, (yp - ym) / std::numbers::sqrt2};
  return {map_object_to_sensor(a1, mapping), map_object_to_sensor(a2, mapping)};
}

/// Rejection sampler for the sinc phase-matched density with a Gaussian pump. The pump
/// factor is sampled exactly in q1 + q2; q- = (q1 - q2)/sqrt(2) is proposed uniformly in
/// [-q_minus_halfwidth, +q_minus_halfwidth]^2 and accepted with probability sinc^2.
/// Returns momenta (1/mm) or nullopt if max_tries proposals were all rejected.
template <class Rng>
std::optional<std::pair<Vec2, Vec2>> sample_sinc_momenta(const SincModel& model, double q_minus_halfwidth, Rng& rng,
                                                         int max_tries = 100000) {
  if (!model.pump.is_gaussian())
    throw Error(ErrorCode::ConfigError, "sinc sampling needs a Gaussian pump profile");
  if (!(q_minus_halfwidth > 0.0)) throw Error(ErrorCode::ConfigError, "q- box must be positive");
  // |E_p(Q)|^2 = exp(-(Qx w0x)^2 / 2): Gaussian in Q with sigma = 1 / w0 (w0 in mm).
  std::normal_distribution<double> qsx(0.0, 1.0 / (model.pump.w0x_um * 1e-3));
  std::normal_distribution<double> qsy(0.0, 1.0 / (model.pump.w0y_um * 1e-3));
  std::uniform_real_distribution<double> box(-q_minus_halfwidth, q_minus_halfwidth);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int i = 0; i < max_tries; ++i) {
    const Vec2 sum{qsx(rng), qsy(rng)};
    const Vec2 qm{box(rng), box(rng)};
    const Vec2 q1 = 0.5 * sum + (1.0 / std::numbers::sqrt2) * qm;
    const Vec2 q2 = 0.5 * sum - (1.0 / std::numbers::sqrt2) * qm;
    const double dkz = evaluate_delta_kz(q1, q2, 0.5 * model.dispersion.pump_center_frequency, model.dispersion);
    const double s = sinc(0.5 * dkz * model.dispersion.crystal_length_mm * 1e3);
    if (u01(rng) < s * s) return std::make_pair(q1, q2);
  }
  return std::nullopt;
}

/// Adds single-generation cross-talk detections: each input detection triggers the pixel at
/// each offset with probability p, delayed by a uniform draw from [0, 1 TDC bin).
template <class Rng>
std::vector<Detection> inject_crosstalk(std::vector<Detection> detections, const CrosstalkSpec& spec,
                                        const SensorConfig& cfg, Rng& rng) {
  const std::size_t primaries = detections.size();
  for (std::size_t i = 0; i < primaries; ++i) {
    for (const auto& o : spec.offsets) {
      if (o.p <= 0.0) continue;
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      if (u >= o.p) continue;
      const Pixel target{detections[i].pixel.x + o.dx, detections[i].pixel.y + o.dy};
      const double delay = cfg.tdc_bin_ps * static_cast<double>(rng() >> 11) * 0x1.0p-53;
      if (!cfg.shape.contains(target)) continue;
      detections.push_back({target, detections[i].time_ps + delay});
    }
  }
  return detections;
}

/// Keeps the earliest in-gate detection per pixel and quantizes it. Output sorted by linear index.
inline std::vector<EventRecord> first_hits(std::vector<Detection> detections, const SensorConfig& cfg) {
  std::vector<std::pair<int, double>> keyed;
  keyed.reserve(detections.size());
  for (const auto& d : detections) {
    if (!quantize_tdc(d.time_ps, cfg)) continue;
    keyed.emplace_back(linear_index(d.pixel, cfg.shape), d.time_ps);
  }
  std::sort(keyed.begin(), keyed.end());
  std::vector<EventRecord> out;
  for (std::size_t i = 0; i < keyed.size(); ++i) {
    if (i > 0 && keyed[i].first == keyed[i - 1].first) continue;
    out.push_back({pixel_from_linear(keyed[i].first, cfg.shape), *quantize_tdc(keyed[i].second, cfg)});
  }
  return out;
}

struct SimulationSetup {
  DoubleGaussianModel model;
  OpticalMapping mapping;
  SensorConfig sensor;
  CrosstalkSpec crosstalk;
  double pairs_per_frame_mean = 0.2;
  std::uint64_t seed = 1;

  void validate() const {
    model.validate();
    mapping.validate();
    sensor.validate();
    crosstalk.validate();
    if (!(pairs_per_frame_mean >= 0.0)) throw Error(ErrorCode::ConfigError, "pairs per frame must be >= 0");
  }
};

/// Generates frame `frame_id`. Depends only on (setup, frame_id).
inline Frame simulate_frame(const SimulationSetup& setup, std::uint32_t frame_id) {
  const SensorConfig& cfg = setup.sensor;
  const double frame_ps = cfg.frame_duration_ps();
  std::vector<Detection> detections;

  CounterRng pair_rng(setup.seed, frame_id, RngPurpose::Pairs);
  if (setup.pairs_per_frame_mean > 0.0) {
    std::poisson_distribution<int> n_pairs(setup.pairs_per_frame_mean);
    std::normal_distribution<double> jitter(0.0, 1.0);
    const int n = n_pairs(pair_rng);
    for (int i = 0; i < n; ++i) {
      const double t0 = frame_ps * pair_rng.uniform();
      const auto [rho1, rho2] = sample_pair(setup.model, setup.mapping, pair_rng);
      for (const Vec2& rho : {rho1, rho2}) {
        if (pair_rng.uniform() >= cfg.efficiency) continue;
        const auto pix = pixel_at(rho, cfg, setup.mapping);
        if (!pix) continue;
        const double t = t0 + cfg.offset_of(linear_index(*pix, cfg.shape)) + cfg.jitter_sigma_ps * jitter(pair_rng);
        detections.push_back({*pix, t});
      }
    }
  }

  if (cfg.dark_rate_hz > 0.0) {
    CounterRng dark_rng(setup.seed, frame_id, RngPurpose::Dark);
    const double mean = cfg.dark_rate_hz * frame_ps * 1e-12 * cfg.shape.pixels();
    std::poisson_distribution<int> n_dark(mean);
    const int n = n_dark(dark_rng);
    for (int i = 0; i < n; ++i) {
      const int lin = 1 + static_cast<int>(dark_rng() % static_cast<std::uint64_t>(cfg.shape.pixels()));
      detections.push_back({pixel_from_linear(lin, cfg.shape), frame_ps * dark_rng.uniform()});
    }
  }

  if (!setup.crosstalk.offsets.empty() && !detections.empty()) {
    CounterRng xt_rng(setup.seed, frame_id, RngPurpose::Crosstalk);
    detections = inject_crosstalk(std::move(detections), setup.crosstalk, cfg, xt_rng);
  }

  return {frame_id, first_hits(std::move(detections), cfg)};
}

/// Splits [begin, begin + count) into `workers` contiguous ranges and calls body(lo, hi, worker).
template <class Body>
void parallel_ranges(std::uint64_t begin, std::uint64_t count, unsigned workers, Body&& body) {
  workers = std::max(1u, workers);
  if (workers == 1 || count < 2) {
    body(begin, begin + count, 0u);
    return;
  }
  std::vector<std::thread> threads;
  const std::uint64_t chunk = (count + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    const std::uint64_t lo = begin + std::min<std::uint64_t>(count, w * chunk);
    const std::uint64_t hi = begin + std::min<std::uint64_t>(count, (w + 1) * chunk);
    threads.emplace_back([&body, lo, hi, w] { body(lo, hi, w); });
  }
  for (auto& t : threads) t.join();
}

/// Frames first_id .. first_id + n_frames - 1 in ascending order, generated by `workers` threads.
inline std::vector<Frame> simulate_frames(const SimulationSetup& setup, std::uint64_t n_frames,
                                          unsigned workers = 1, std::uint32_t first_id = 0) {
  setup.validate();
  if (static_cast<std::uint64_t>(first_id) + n_frames > 0xFFFFFFFFULL)
    throw Error(ErrorCode::ConfigError, "frame ids exhausted (32-bit)");
  std::vector<Frame> frames(n_frames);
  parallel_ranges(0, n_frames, workers, [&](std::uint64_t lo, std::uint64_t hi, unsigned) {
    for (std::uint64_t i = lo; i < hi; ++i)
      frames[i] = simulate_frame(setup, static_cast<std::uint32_t>(first_id + i));
  });
  return frames;
}

}  // namespace spadcorr
