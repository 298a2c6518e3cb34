#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spadcorr/error.hpp"

namespace spadcorr {

/// 1-based pixel coordinates, matching the sensor's numbering.
struct Pixel {
  int x = 1;
  int y = 1;
  friend bool operator==(Pixel, Pixel) = default;
};

struct SensorShape {
  int nx = 32;
  int ny = 32;
  int pixels() const { return nx * ny; }
  bool contains(Pixel p) const { return p.x >= 1 && p.x <= nx && p.y >= 1 && p.y <= ny; }
  friend bool operator==(const SensorShape&, const SensorShape&) = default;
};

/// p~ = p_x + n_x (p_y - 1), ranging over 1 .. n_x n_y.
inline int linear_index(Pixel p, SensorShape shape = {}) {
  if (!shape.contains(p))
    throw Error(ErrorCode::OutOfRange,
                "pixel (" + std::to_string(p.x) + "," + std::to_string(p.y) + ") outside sensor");
  return p.x + shape.nx * (p.y - 1);
}

inline Pixel pixel_from_linear(int index, SensorShape shape = {}) {
  if (index < 1 || index > shape.pixels())
    throw Error(ErrorCode::OutOfRange, "linear pixel index " + std::to_string(index) + " outside sensor");
  return {(index - 1) % shape.nx + 1, (index - 1) / shape.nx + 1};
}

struct EventRecord {
  Pixel pixel;
  int tdc = 0;
  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

struct Frame {
  std::uint32_t frame_id = 0;
  std::vector<EventRecord> events;
  friend bool operator==(const Frame&, const Frame&) = default;
};

/// Throws MalformedFrame on out-of-range coordinates/tdc or a pixel appearing twice.
inline void validate_frame(const Frame& frame, SensorShape shape, int bins_per_frame) {
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(shape.pixels()), 0);
  for (const auto& ev : frame.events) {
    if (!shape.contains(ev.pixel) || ev.tdc < 0 || ev.tdc >= bins_per_frame)
      throw Error(ErrorCode::MalformedFrame, "frame " + std::to_string(frame.frame_id) + ": event out of range");
    auto& flag = seen[static_cast<std::size_t>(linear_index(ev.pixel, shape) - 1)];
    if (flag)
      throw Error(ErrorCode::MalformedFrame, "frame " + std::to_string(frame.frame_id) + ": duplicate pixel");
    flag = 1;
  }
}

}  // namespace spadcorr
