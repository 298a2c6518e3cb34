#pragma once

// First- and second-order correlation accumulation over frame streams, accidental
// subtraction, cross-talk estimation/correction and the 2D projections of the 4D
// pixel-pair tensor.
//
// Tensor layout: entry (p1, p2) lives at (lin(p1) - 1) * N + (lin(p2) - 1), N = n_x n_y.
// Both orderings of every pair are stored, so the tensor is symmetric and its
// diagonal (one pixel with itself) is identically zero.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "spadcorr/error.hpp"
#include "spadcorr/frame.hpp"
#include "spadcorr/optics.hpp"
#include "spadcorr/sensor_sim.hpp"

namespace spadcorr {

inline constexpr int kDefaultWindow = 10;
inline constexpr int kDefaultShift = 30;

struct AccumulatorParams {
  SensorShape shape{};
  int bins_per_frame = 255;
  int window = kDefaultWindow;
  int shift = kDefaultShift;  // 0 disables the shifted-window tally

  void validate() const {
    if (shape.nx < 1 || shape.ny < 1 || shape.pixels() > 65535)
      throw Error(ErrorCode::ConfigError, "sensor dimensions out of range");
    if (bins_per_frame < 1 || bins_per_frame > 256) throw Error(ErrorCode::ConfigError, "bins_per_frame out of range");
    if (window < 0) throw Error(ErrorCode::ConfigError, "coincidence window must be >= 0");
    if (shift != 0) {
      if (shift <= 2 * window)
        throw Error(ErrorCode::DisjointnessViolation,
                    "shifted window [" + std::to_string(shift - window) + "," + std::to_string(shift + window) +
                        "] overlaps the coincidence window [0," + std::to_string(window) + "]");
      if (shift + window > bins_per_frame - 1)
        throw Error(ErrorCode::ConfigError, "shifted window extends beyond the frame");
    }
  }

  friend bool operator==(const AccumulatorParams&, const AccumulatorParams&) = default;
};

class CorrelationAccumulator {
 public:
  CorrelationAccumulator() : CorrelationAccumulator(AccumulatorParams{}) {}

  explicit CorrelationAccumulator(AccumulatorParams params) : params_(params) {
    params_.validate();
    const auto n = static_cast<std::size_t>(params_.shape.pixels());
    g2_.assign(n * n, 0);
    if (params_.shift != 0) g2_shifted_.assign(n * n, 0);
    g1_.assign(n, 0);
    dt_hist_.assign(static_cast<std::size_t>(2 * params_.bins_per_frame - 1), 0);
  }

  const AccumulatorParams& params() const { return params_; }
  const SensorShape& shape() const { return params_.shape; }
  std::size_t pixels() const { return g1_.size(); }

  /// Adds one frame: every unordered pixel pair with |tdc1 - tdc2| <= window increments both
  /// orderings; every event increments g1; all pairwise differences go to dt_hist with both signs.
  void add(const Frame& frame) {
    const auto& ev = frame.events;
    const std::size_t n = ev.size();
    const int bins = params_.bins_per_frame;
    lin_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (!params_.shape.contains(ev[i].pixel) || ev[i].tdc < 0 || ev[i].tdc >= bins)
        throw Error(ErrorCode::MalformedFrame, "frame " + std::to_string(frame.frame_id) + ": event out of range");
      lin_[i] = static_cast<std::size_t>(linear_index(ev[i].pixel, params_.shape) - 1);
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (lin_[i] == lin_[j])
          throw Error(ErrorCode::MalformedFrame, "frame " + std::to_string(frame.frame_id) + ": duplicate pixel");

    const std::size_t npix = pixels();
    const int w = params_.window;
    const int s = params_.shift;
    for (std::size_t i = 0; i < n; ++i) {
      ++g1_[lin_[i]];
      for (std::size_t j = i + 1; j < n; ++j) {
        const int dt = ev[i].tdc - ev[j].tdc;
        ++dt_hist_[static_cast<std::size_t>(dt + bins - 1)];
        ++dt_hist_[static_cast<std::size_t>(-dt + bins - 1)];
        const int adt = dt < 0 ? -dt : dt;
        if (adt <= w) {
          ++g2_[lin_[i] * npix + lin_[j]];
          ++g2_[lin_[j] * npix + lin_[i]];
        } else if (s != 0 && adt >= s - w && adt <= s + w) {
          ++g2_shifted_[lin_[i] * npix + lin_[j]];
          ++g2_shifted_[lin_[j] * npix + lin_[i]];
        }
      }
    }
    ++n_frames_;
  }

  /// Accounts for frames that carried no events (omitted from event files).
  void add_empty_frames(std::uint64_t count) { n_frames_ += count; }

  void merge(const CorrelationAccumulator& other) {
    if (!(other.params_ == params_))
      throw Error(ErrorCode::ShapeMismatch, "cannot merge accumulators with different parameters");
    auto add_into = [](std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
      for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    };
    add_into(g2_, other.g2_);
    add_into(g2_shifted_, other.g2_shifted_);
    add_into(g1_, other.g1_);
    add_into(dt_hist_, other.dt_hist_);
    n_frames_ += other.n_frames_;
  }

  std::size_t index(Pixel p1, Pixel p2) const {
    return static_cast<std::size_t>(linear_index(p1, shape()) - 1) * pixels() +
           static_cast<std::size_t>(linear_index(p2, shape()) - 1);
  }

  std::uint64_t g2(Pixel p1, Pixel p2) const { return g2_[index(p1, p2)]; }
  std::uint64_t g1(Pixel p) const { return g1_[static_cast<std::size_t>(linear_index(p, shape()) - 1)]; }
  std::uint64_t dt_count(int dt) const { return dt_hist_[static_cast<std::size_t>(dt + params_.bins_per_frame - 1)]; }
  std::uint64_t n_frames() const { return n_frames_; }

  const std::vector<std::uint64_t>& g2_counts() const { return g2_; }
  const std::vector<std::uint64_t>& g2_shifted_counts() const { return g2_shifted_; }
  const std::vector<std::uint64_t>& g1_counts() const { return g1_; }
  const std::vector<std::uint64_t>& dt_histogram() const { return dt_hist_; }

  // Raw access for deserialization.
  std::vector<std::uint64_t>& mutable_g2() { return g2_; }
  std::vector<std::uint64_t>& mutable_g2_shifted() { return g2_shifted_; }
  std::vector<std::uint64_t>& mutable_g1() { return g1_; }
  std::vector<std::uint64_t>& mutable_dt_histogram() { return dt_hist_; }
  void set_n_frames(std::uint64_t n) { n_frames_ = n; }

  friend bool operator==(const CorrelationAccumulator& a, const CorrelationAccumulator& b) {
    return a.params_ == b.params_ && a.n_frames_ == b.n_frames_ && a.g1_ == b.g1_ && a.g2_ == b.g2_ &&
           a.g2_shifted_ == b.g2_shifted_ && a.dt_hist_ == b.dt_hist_;
  }

 private:
  AccumulatorParams params_;
  std::vector<std::uint64_t> g2_;
  std::vector<std::uint64_t> g2_shifted_;
  std::vector<std::uint64_t> g1_;
  std::vector<std::uint64_t> dt_hist_;
  std::uint64_t n_frames_ = 0;
  std::vector<std::size_t> lin_;  // scratch
};

/// Accumulates a frame sequence with `workers` private accumulators over contiguous ranges,
/// merged at the end. Integer counters make the result independent of the worker count.
inline CorrelationAccumulator accumulate(std::span<const Frame> frames, const AccumulatorParams& params,
                                         unsigned workers = 1) {
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(1, frames.size()))));
  std::vector<CorrelationAccumulator> partial;
  partial.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) partial.emplace_back(params);
  std::vector<std::exception_ptr> errors(workers);
  parallel_ranges(0, frames.size(), workers, [&](std::uint64_t lo, std::uint64_t hi, unsigned w) {
    try {
      for (std::uint64_t i = lo; i < hi; ++i) partial[w].add(frames[i]);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  });
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (unsigned w = 1; w < workers; ++w) partial[0].merge(partial[w]);
  return std::move(partial[0]);
}

/// Simulates and accumulates frames [0, n_frames) without materializing them.
inline CorrelationAccumulator simulate_and_accumulate(const SimulationSetup& setup, std::uint64_t n_frames,
                                                      const AccumulatorParams& params, unsigned workers = 1) {
  setup.validate();
  if (n_frames > 0xFFFFFFFFULL) throw Error(ErrorCode::ConfigError, "frame ids exhausted (32-bit)");
  workers = std::max(1u, workers);
  std::vector<CorrelationAccumulator> partial;
  partial.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) partial.emplace_back(params);
  parallel_ranges(0, n_frames, workers, [&](std::uint64_t lo, std::uint64_t hi, unsigned w) {
    for (std::uint64_t i = lo; i < hi; ++i) partial[w].add(simulate_frame(setup, static_cast<std::uint32_t>(i)));
  });
  for (unsigned w = 1; w < workers; ++w) partial[0].merge(partial[w]);
  return std::move(partial[0]);
}

// ---------------------------------------------------------------------------
// Corrected tensors

enum Provenance : std::uint8_t {
  kRaw = 1,
  kAccidentalSubtracted = 2,
  kCrosstalkCorrected = 4,
  kNeighborMasked = 8,
};

/// Signed 4D tensor in counts per Mframe with a per-entry variance estimate and mask.
struct CorrectedG2 {
  SensorShape shape{};
  std::uint64_t n_frames = 0;
  std::uint8_t flags = kRaw;
  std::vector<double> values;
  std::vector<double> variance;
  std::vector<std::uint8_t> masked;  // 1 where the entry is unmeasurable or masked; value is 0 there

  std::size_t pixels() const { return static_cast<std::size_t>(shape.pixels()); }
  std::size_t index(Pixel p1, Pixel p2) const {
    return static_cast<std::size_t>(linear_index(p1, shape) - 1) * pixels() +
           static_cast<std::size_t>(linear_index(p2, shape) - 1);
  }
  double at(Pixel p1, Pixel p2) const { return values[index(p1, p2)]; }
  bool has(Provenance p) const { return (flags & p) != 0; }
  double total() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
};

inline double per_mframe_scale(std::uint64_t n_frames) {
  if (n_frames == 0) throw Error(ErrorCode::EmptyAccumulator, "no frames accumulated");
  return 1e6 / static_cast<double>(n_frames);
}

/// counts * 1e6 / n_frames; Poisson variance carried along. The diagonal starts masked.
inline CorrectedG2 normalize(const CorrelationAccumulator& acc) {
  const double scale = per_mframe_scale(acc.n_frames());
  CorrectedG2 out;
  out.shape = acc.shape();
  out.n_frames = acc.n_frames();
  out.flags = kRaw;
  const auto& c = acc.g2_counts();
  const std::size_t n = acc.pixels();
  out.values.resize(c.size());
  out.variance.resize(c.size());
  out.masked.assign(c.size(), 0);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto v = static_cast<double>(c[i]);
    out.values[i] = v * scale;
    out.variance[i] = v * scale * scale;
  }
  for (std::size_t p = 0; p < n; ++p) out.masked[p * n + p] = 1;
  return out;
}

/// Per-pixel intensity in counts per Mframe, linear-index order.
inline std::vector<double> normalized_g1(const CorrelationAccumulator& acc) {
  const double scale = per_mframe_scale(acc.n_frames());
  std::vector<double> out(acc.pixels());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(acc.g1_counts()[i]) * scale;
  return out;
}

struct AccidentalEstimate {
  std::vector<double> values;    // counts per Mframe
  std::vector<double> variance;  // (counts per Mframe)^2
  double coefficient = 0.0;      // fitted c of the g1-product method; the scale of the shifted method
};

/// Ratio of accidental pairs expected inside |dt| <= window to those counted by the
/// shifted tally over both signs of dt.
/// Uniform, independent arrivals within the frame give a triangular dt density (B - |dt|).
inline double shifted_window_scale(int bins, int window, int shift) {
  double main = 0.0;
  double shifted = 0.0;
  for (int d = -(bins - 1); d <= bins - 1; ++d) {
    const int ad = std::abs(d);
    const double weight = bins - ad;
    if (ad <= window) main += weight;
    else if (ad >= shift - window && ad <= shift + window) shifted += weight;
  }
  return main / shifted;
}

struct ShiftedWindow {};

struct G1Product {
  std::vector<std::uint8_t> uncorrelated;  // pair mask, tensor layout; 1 = no correlations expected
};

using AccidentalMethod = std::variant<ShiftedWindow, G1Product>;

/// c * g1(p1) * g1(p2) off the diagonal.
inline std::vector<double> g1_product_estimate(const std::vector<double>& g1, double c) {
  const std::size_t n = g1.size();
  std::vector<double> out(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) out[i * n + j] = c * g1[i] * g1[j];
  return out;
}

/// Pairs at Chebyshev distance >= `distance` from the diagonal and, for far-field data,
/// from the anti-diagonal locus p1 + p2 = 2 c through the optical axis.
inline std::vector<std::uint8_t> default_uncorrelated_mask(SensorShape shape, MappingMode mode, int distance = 10,
                                                           Vec2 center_offset_px = {}) {
  const std::size_t n = static_cast<std::size_t>(shape.pixels());
  std::vector<std::uint8_t> mask(n * n, 0);
  const double sx = shape.nx + 1 + 2.0 * center_offset_px.x;
  const double sy = shape.ny + 1 + 2.0 * center_offset_px.y;
  for (std::size_t i = 0; i < n; ++i) {
    const Pixel a = pixel_from_linear(static_cast<int>(i) + 1, shape);
    for (std::size_t j = 0; j < n; ++j) {
      const Pixel b = pixel_from_linear(static_cast<int>(j) + 1, shape);
      const int cheb_diag = std::max(std::abs(a.x - b.x), std::abs(a.y - b.y));
      bool ok = cheb_diag >= distance;
      if (ok && mode == MappingMode::FarField) {
        const double cheb_anti = std::max(std::abs(a.x + b.x - sx), std::abs(a.y + b.y - sy));
        ok = cheb_anti >= distance;
      }
      mask[i * n + j] = ok ? 1 : 0;
    }
  }
  return mask;
}

inline AccidentalEstimate estimate_accidentals(const CorrelationAccumulator& acc, const AccidentalMethod& method) {
  const double scale = per_mframe_scale(acc.n_frames());
  const std::size_t n = acc.pixels();
  AccidentalEstimate est;
  if (std::holds_alternative<ShiftedWindow>(method)) {
    const auto& p = acc.params();
    if (p.shift == 0 || p.shift <= 2 * p.window)
      throw Error(ErrorCode::DisjointnessViolation, "accumulator has no disjoint shifted-window tally");
    const double k = shifted_window_scale(p.bins_per_frame, p.window, p.shift);
    const auto& c = acc.g2_shifted_counts();
    est.coefficient = k;
    est.values.resize(c.size());
    est.variance.resize(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
      const auto v = static_cast<double>(c[i]);
      est.values[i] = k * v * scale;
      est.variance[i] = k * k * v * scale * scale;
    }
    return est;
  }

  const auto& mask = std::get<G1Product>(method).uncorrelated;
  if (mask.size() != n * n) throw Error(ErrorCode::ShapeMismatch, "uncorrelated mask has wrong size");
  const std::vector<double> g1 = normalized_g1(acc);
  std::size_t selected = 0;
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t k = i * n + j;
      if (i == j || !mask[k]) continue;
      ++selected;
      const double prod = g1[i] * g1[j];
      num += static_cast<double>(acc.g2_counts()[k]) * scale * prod;
      den += prod * prod;
    }
  if (selected < 100)
    throw Error(ErrorCode::InsufficientMask, "uncorrelated mask selects " + std::to_string(selected) + " < 100 pairs");
  est.coefficient = den > 0.0 ? num / den : 0.0;
  est.values = g1_product_estimate(g1, est.coefficient);
  est.variance.assign(n * n, 0.0);
  return est;
}

inline CorrectedG2 subtract_accidentals(CorrectedG2 g2, const AccidentalEstimate& est) {
  if (g2.flags != kRaw) throw Error(ErrorCode::FlagOrderViolation, "accidentals must be subtracted from raw data");
  if (est.values.size() != g2.values.size() || est.variance.size() != g2.values.size())
    throw Error(ErrorCode::ShapeMismatch, "accidental estimate shape mismatch");
  for (std::size_t i = 0; i < g2.values.size(); ++i) {
    if (g2.masked[i]) continue;
    g2.values[i] -= est.values[i];
    g2.variance[i] += est.variance[i];
  }
  g2.flags |= kAccidentalSubtracted;
  return g2;
}

// ---------------------------------------------------------------------------
// Cross-talk

struct CrosstalkMap {
  int max_offset = 0;            // offsets cover [-max_offset, max_offset]^2
  std::vector<double> p;         // row-major over (dy, dx)
  std::uint64_t clamped = 0;     // negative estimates set to 0
  int inner_window = 0;

  static CrosstalkMap zeros(int max_offset) {
    CrosstalkMap m;
    m.max_offset = max_offset;
    const auto side = static_cast<std::size_t>(2 * max_offset + 1);
    m.p.assign(side * side, 0.0);
    return m;
  }

  bool covers(int dx, int dy) const { return std::abs(dx) <= max_offset && std::abs(dy) <= max_offset; }

  double at(int dx, int dy) const {
    if (!covers(dx, dy)) return 0.0;
    const int side = 2 * max_offset + 1;
    return p[static_cast<std::size_t>((dy + max_offset) * side + (dx + max_offset))];
  }

  double& at(int dx, int dy) {
    const int side = 2 * max_offset + 1;
    return p[static_cast<std::size_t>((dy + max_offset) * side + (dx + max_offset))];
  }

  /// Copy with offsets beyond Chebyshev distance `radius` set to 0.
  CrosstalkMap restricted(int radius) const {
    CrosstalkMap out = *this;
    for (int dy = -max_offset; dy <= max_offset; ++dy)
      for (int dx = -max_offset; dx <= max_offset; ++dx)
        if (std::max(std::abs(dx), std::abs(dy)) > radius) out.at(dx, dy) = 0.0;
    return out;
  }
};

/// Inner window of `size` pixels per axis, centered; returns the first 1-based coordinate.
inline int inner_window_start(int n, int size) { return (n - size) / 2 + 1; }

/// P(dx,dy) = 1/2 * sum_{p in inner window} g2[p, p + d] / sum_{p in inner window} g1(p).
/// The tensor holds both orderings, so the estimate at d averages the two directions d and -d.
inline CrosstalkMap estimate_crosstalk(const CorrectedG2& g2, const std::vector<double>& g1, int inner_size = 29) {
  const SensorShape sh = g2.shape;
  if (inner_size < 1 || inner_size > sh.nx || inner_size > sh.ny)
    throw Error(ErrorCode::WindowTooLarge, "inner window " + std::to_string(inner_size) + " exceeds sensor");
  if (!g2.has(kAccidentalSubtracted))
    throw Error(ErrorCode::FlagOrderViolation, "cross-talk estimation expects accidental-subtracted data");
  if (g1.size() != g2.pixels()) throw Error(ErrorCode::ShapeMismatch, "g1 size mismatch");

  const int x0 = inner_window_start(sh.nx, inner_size);
  const int y0 = inner_window_start(sh.ny, inner_size);
  double norm = 0.0;
  for (int y = y0; y < y0 + inner_size; ++y)
    for (int x = x0; x < x0 + inner_size; ++x) norm += g1[static_cast<std::size_t>(linear_index({x, y}, sh) - 1)];

  CrosstalkMap map = CrosstalkMap::zeros(inner_size - 1);
  map.inner_window = inner_size;
  if (norm <= 0.0) return map;
  const int m = map.max_offset;
  for (int dy = -m; dy <= m; ++dy)
    for (int dx = -m; dx <= m; ++dx) {
      if (dx == 0 && dy == 0) continue;
      double sum = 0.0;
      for (int y = y0; y < y0 + inner_size; ++y)
        for (int x = x0; x < x0 + inner_size; ++x) {
          const Pixel q{x + dx, y + dy};
          if (!sh.contains(q)) continue;
          sum += g2.values[g2.index({x, y}, q)];
        }
      double p = 0.5 * sum / norm;
      if (p < 0.0) {
        p = 0.0;
        ++map.clamped;
      }
      map.at(dx, dy) = p;
    }
  return map;
}

/// g2(p1,p2) -= P(p2 - p1) g1(p1) + P(p1 - p2) g1(p2), for every offset the map covers.
inline CorrectedG2 correct_crosstalk(CorrectedG2 g2, const std::vector<double>& g1, const CrosstalkMap& map) {
  if (!g2.has(kAccidentalSubtracted) || g2.has(kCrosstalkCorrected) || g2.has(kNeighborMasked))
    throw Error(ErrorCode::FlagOrderViolation, "cross-talk correction expects accidental-subtracted, unmasked data");
  if (g1.size() != g2.pixels()) throw Error(ErrorCode::ShapeMismatch, "g1 size mismatch");
  const SensorShape sh = g2.shape;
  std::vector<std::pair<int, int>> support;
  for (int dy = -map.max_offset; dy <= map.max_offset; ++dy)
    for (int dx = -map.max_offset; dx <= map.max_offset; ++dx)
      if (map.at(dx, dy) != 0.0 || map.at(-dx, -dy) != 0.0) support.emplace_back(dx, dy);

  for (int i = 1; i <= sh.pixels(); ++i) {
    const Pixel p1 = pixel_from_linear(i, sh);
    const double g1a = g1[static_cast<std::size_t>(i - 1)];
    for (auto [dx, dy] : support) {
      const Pixel p2{p1.x + dx, p1.y + dy};
      if (!sh.contains(p2)) continue;
      const std::size_t k = g2.index(p1, p2);
      if (g2.masked[k]) continue;
      const double g1b = g1[static_cast<std::size_t>(linear_index(p2, sh) - 1)];
      g2.values[k] -= map.at(dx, dy) * g1a + map.at(-dx, -dy) * g1b;
    }
  }
  g2.flags |= kCrosstalkCorrected;
  return g2;
}

/// Zeroes and flags every entry with max(|dx|, |dy|) <= radius (the diagonal included).
inline CorrectedG2 mask_neighbors(CorrectedG2 g2, int radius = 1) {
  if (radius < 0) throw Error(ErrorCode::ConfigError, "mask radius must be >= 0");
  const SensorShape sh = g2.shape;
  for (int i = 1; i <= sh.pixels(); ++i) {
    const Pixel p1 = pixel_from_linear(i, sh);
    for (int dy = -radius; dy <= radius; ++dy)
      for (int dx = -radius; dx <= radius; ++dx) {
        const Pixel p2{p1.x + dx, p1.y + dy};
        if (!sh.contains(p2)) continue;
        const std::size_t k = g2.index(p1, p2);
        g2.values[k] = 0.0;
        g2.variance[k] = 0.0;
        g2.masked[k] = 1;
      }
  }
  g2.flags |= kNeighborMasked;
  return g2;
}

// ---------------------------------------------------------------------------
// Projections

/// Dense 2D table indexed (i, j) with integer axis coordinates origin_a + i, origin_b + j.
/// `constituents` counts the 4D entries summed into each cell, `masked_constituents` those masked.
struct Table2D {
  int n_a = 0;
  int n_b = 0;
  int origin_a = 0;
  int origin_b = 0;
  std::vector<double> values;
  std::vector<double> variance;
  std::vector<double> constituents;
  std::vector<double> masked_constituents;

  Table2D() = default;
  Table2D(int na, int nb, int oa, int ob)
      : n_a(na), n_b(nb), origin_a(oa), origin_b(ob),
        values(static_cast<std::size_t>(na * nb), 0.0), variance(values.size(), 0.0),
        constituents(values.size(), 0.0), masked_constituents(values.size(), 0.0) {}

  std::size_t idx(int i, int j) const { return static_cast<std::size_t>(i * n_b + j); }
  double at(int i, int j) const { return values[idx(i, j)]; }
  /// Value at integer coordinates (a, b); 0 outside the table.
  double at_coord(int a, int b) const {
    const int i = a - origin_a;
    const int j = b - origin_b;
    if (i < 0 || i >= n_a || j < 0 || j >= n_b) return 0.0;
    return values[idx(i, j)];
  }
  double masked_fraction(int i, int j) const {
    const double c = constituents[idx(i, j)];
    return c > 0 ? masked_constituents[idx(i, j)] / c : 1.0;
  }
  double total() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }

  void deposit(int i, int j, double value, double var, bool masked) {
    const std::size_t k = idx(i, j);
    values[k] += value;
    variance[k] += var;
    constituents[k] += 1.0;
    if (masked) masked_constituents[k] += 1.0;
  }
};

inline Table2D transposed(const Table2D& t) {
  Table2D o(t.n_b, t.n_a, t.origin_b, t.origin_a);
  for (int i = 0; i < t.n_a; ++i)
    for (int j = 0; j < t.n_b; ++j) {
      const std::size_t s = t.idx(i, j);
      const std::size_t d = o.idx(j, i);
      o.values[d] = t.values[s];
      o.variance[d] = t.variance[s];
      o.constituents[d] = t.constituents[s];
      o.masked_constituents[d] = t.masked_constituents[s];
    }
  return o;
}

struct AxisProjections {
  Table2D x;  // (x1, x2)
  Table2D y;  // (y1, y2)
};

/// G2(x1, x2) = sum over y1, y2; G2(y1, y2) = sum over x1, x2.
inline AxisProjections project_axes(const CorrectedG2& g2) {
  const SensorShape sh = g2.shape;
  AxisProjections out{Table2D(sh.nx, sh.nx, 1, 1), Table2D(sh.ny, sh.ny, 1, 1)};
  const std::size_t n = g2.pixels();
  for (std::size_t i = 0; i < n; ++i) {
    const Pixel a = pixel_from_linear(static_cast<int>(i) + 1, sh);
    for (std::size_t j = 0; j < n; ++j) {
      const Pixel b = pixel_from_linear(static_cast<int>(j) + 1, sh);
      const std::size_t k = i * n + j;
      const bool m = g2.masked[k] != 0;
      out.x.deposit(a.x - 1, b.x - 1, g2.values[k], g2.variance[k], m);
      out.y.deposit(a.y - 1, b.y - 1, g2.values[k], g2.variance[k], m);
    }
  }
  return out;
}

struct SumDiffProjections {
  Table2D plus;   // indexed by integer sums (p1x + p2x, p1y + p2y); rho+ = sum / sqrt(2) pixels
  Table2D minus;  // indexed by integer differences (p1x - p2x, p1y - p2y); rho- = diff / sqrt(2) pixels
};

inline SumDiffProjections project_sum_diff(const CorrectedG2& g2) {
  const SensorShape sh = g2.shape;
  SumDiffProjections out{Table2D(2 * sh.nx - 1, 2 * sh.ny - 1, 2, 2),
                         Table2D(2 * sh.nx - 1, 2 * sh.ny - 1, -(sh.nx - 1), -(sh.ny - 1))};
  const std::size_t n = g2.pixels();
  for (std::size_t i = 0; i < n; ++i) {
    const Pixel a = pixel_from_linear(static_cast<int>(i) + 1, sh);
    for (std::size_t j = 0; j < n; ++j) {
      const Pixel b = pixel_from_linear(static_cast<int>(j) + 1, sh);
      const std::size_t k = i * n + j;
      const bool m = g2.masked[k] != 0;
      out.plus.deposit(a.x + b.x - 2, a.y + b.y - 2, g2.values[k], g2.variance[k], m);
      out.minus.deposit(a.x - b.x + sh.nx - 1, a.y - b.y + sh.ny - 1, g2.values[k], g2.variance[k], m);
    }
  }
  return out;
}

/// Physical coordinate of an integer sum/difference bin on the rotated axes.
inline double rotated_coordinate(int integer_bin) { return integer_bin / std::numbers::sqrt2; }

struct Profile1D {
  int origin = 0;
  std::vector<double> values;
  std::vector<double> variance;
  std::vector<double> constituents;
  std::vector<double> masked_constituents;

  double masked_fraction(std::size_t i) const {
    return constituents[i] > 0 ? masked_constituents[i] / constituents[i] : 1.0;
  }
};

/// Collapses a table along its second index (`along_first` = true) or first index.
inline Profile1D collapse(const Table2D& t, bool along_first) {
  Profile1D p;
  const int n = along_first ? t.n_a : t.n_b;
  p.origin = along_first ? t.origin_a : t.origin_b;
  p.values.assign(static_cast<std::size_t>(n), 0.0);
  p.variance = p.constituents = p.masked_constituents = p.values;
  for (int i = 0; i < t.n_a; ++i)
    for (int j = 0; j < t.n_b; ++j) {
      const auto k = static_cast<std::size_t>(along_first ? i : j);
      const std::size_t s = t.idx(i, j);
      p.values[k] += t.values[s];
      p.variance[k] += t.variance[s];
      p.constituents[k] += t.constituents[s];
      p.masked_constituents[k] += t.masked_constituents[s];
    }
  return p;
}

}  // namespace spadcorr
