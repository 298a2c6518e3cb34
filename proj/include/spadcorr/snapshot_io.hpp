#pragma once

// Binary snapshots of accumulators ("SPADACC1") and corrected tensors ("SPADG2C1"), little-endian.

#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "spadcorr/correlator.hpp"
#include "spadcorr/event_io.hpp"

namespace spadcorr {

inline constexpr char kAccumulatorMagic[9] = "SPADACC1";
inline constexpr char kCorrectedMagic[9] = "SPADG2C1";

namespace detail {

inline void put_counts(std::ostream& os, const std::vector<std::uint64_t>& v) {
  for (auto c : v) bin::put(os, c, 8);
}
inline void get_counts(std::istream& is, std::vector<std::uint64_t>& v, const char* what) {
  for (auto& c : v) c = bin::get(is, 8, what);
}

}  // namespace detail

/// Layout: magic | nx u16 | ny u16 | bins u16 | window u16 | shift u16 | n_frames u64 |
/// g2 | g2_shifted | g1 | dt_hist, all u64.
inline void write_accumulator(std::ostream& os, const CorrelationAccumulator& acc) {
  const auto& p = acc.params();
  os.write(kAccumulatorMagic, 8);
  bin::put(os, static_cast<std::uint64_t>(p.shape.nx), 2);
  bin::put(os, static_cast<std::uint64_t>(p.shape.ny), 2);
  bin::put(os, static_cast<std::uint64_t>(p.bins_per_frame), 2);
  bin::put(os, static_cast<std::uint64_t>(p.window), 2);
  bin::put(os, static_cast<std::uint64_t>(p.shift), 2);
  bin::put(os, acc.n_frames(), 8);
  detail::put_counts(os, acc.g2_counts());
  detail::put_counts(os, acc.g2_shifted_counts());
  detail::put_counts(os, acc.g1_counts());
  detail::put_counts(os, acc.dt_histogram());
}

inline CorrelationAccumulator read_accumulator(std::istream& is) {
  bin::expect_magic(is, kAccumulatorMagic);
  AccumulatorParams p;
  p.shape.nx = static_cast<int>(bin::get(is, 2, "nx"));
  p.shape.ny = static_cast<int>(bin::get(is, 2, "ny"));
  p.bins_per_frame = static_cast<int>(bin::get(is, 2, "bins"));
  p.window = static_cast<int>(bin::get(is, 2, "window"));
  p.shift = static_cast<int>(bin::get(is, 2, "shift"));
  try {
    p.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::InvariantViolation, std::string("accumulator snapshot: ") + e.what());
  }
  CorrelationAccumulator acc(p);
  acc.set_n_frames(bin::get(is, 8, "n_frames"));
  detail::get_counts(is, acc.mutable_g2(), "g2");
  detail::get_counts(is, acc.mutable_g2_shifted(), "g2_shifted");
  detail::get_counts(is, acc.mutable_g1(), "g1");
  detail::get_counts(is, acc.mutable_dt_histogram(), "dt histogram");
  bin::expect_end(is);
  return acc;
}

/// A corrected tensor together with the per-pixel intensity it was corrected with.
struct CorrectedSnapshot {
  CorrectedG2 g2;
  std::vector<double> g1;  // counts per Mframe
  MappingMode mapping = MappingMode::Unspecified;
};

/// Layout: magic | nx u16 | ny u16 | n_frames u64 | flags u8 | mapping u8 |
/// values f64[n^2] | variance f64[n^2] | masked u8[n^2] | g1 f64[n].
inline void write_corrected(std::ostream& os, const CorrectedSnapshot& s) {
  const auto& g = s.g2;
  os.write(kCorrectedMagic, 8);
  bin::put(os, static_cast<std::uint64_t>(g.shape.nx), 2);
  bin::put(os, static_cast<std::uint64_t>(g.shape.ny), 2);
  bin::put(os, g.n_frames, 8);
  bin::put(os, g.flags, 1);
  bin::put(os, static_cast<std::uint64_t>(s.mapping), 1);
  for (double v : g.values) bin::put_f64(os, v);
  for (double v : g.variance) bin::put_f64(os, v);
  for (auto m : g.masked) bin::put(os, m, 1);
  for (double v : s.g1) bin::put_f64(os, v);
}

inline CorrectedSnapshot read_corrected(std::istream& is) {
  bin::expect_magic(is, kCorrectedMagic);
  CorrectedSnapshot s;
  auto& g = s.g2;
  g.shape.nx = static_cast<int>(bin::get(is, 2, "nx"));
  g.shape.ny = static_cast<int>(bin::get(is, 2, "ny"));
  if (g.shape.pixels() <= 0) throw Error(ErrorCode::InvariantViolation, "corrected snapshot: empty sensor");
  g.n_frames = bin::get(is, 8, "n_frames");
  g.flags = static_cast<std::uint8_t>(bin::get(is, 1, "flags"));
  const auto mode = bin::get(is, 1, "mapping");
  if (mode > 2) throw Error(ErrorCode::InvariantViolation, "corrected snapshot: unknown mapping mode");
  s.mapping = static_cast<MappingMode>(mode);
  const std::size_t n = g.pixels();
  g.values.resize(n * n);
  g.variance.resize(n * n);
  g.masked.resize(n * n);
  s.g1.resize(n);
  for (auto& v : g.values) v = bin::get_f64(is, "values");
  for (auto& v : g.variance) v = bin::get_f64(is, "variance");
  for (auto& m : g.masked) m = static_cast<std::uint8_t>(bin::get(is, 1, "mask"));
  for (auto& v : s.g1) v = bin::get_f64(is, "g1");
  bin::expect_end(is);
  return s;
}

template <class T, class Writer>
void save_file(const std::string& path, const T& value, Writer&& writer) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::ConfigError, "cannot open " + path + " for writing");
  writer(os, value);
  if (!os) throw Error(ErrorCode::ConfigError, "write to " + path + " failed");
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::ConfigError, "cannot open " + path);
  return is;
}

}  // namespace spadcorr
