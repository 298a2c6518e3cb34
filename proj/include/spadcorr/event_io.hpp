#pragma once

// Binary event files, little-endian throughout.
//
//   header (22 bytes)  "SPADEVT1" | nx u16 | ny u16 | tdc_bin_ps u32 | bins_per_frame u16 | mapping u8 | crc24 (3 bytes)
//   frame record       frame_id u32 | n_events u16 | n_events x (pixel u16, tdc u8)
//   footer (14 bytes)  0xFFFFFFFF | 0 u16 | total frame count u64
//
// The three trailing header bytes hold a CRC-24 (OpenPGP polynomial) of the preceding 19 bytes.
// Frames carry ids 0 .. total-1; empty frames are not stored and are restored by the reader.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "spadcorr/error.hpp"
#include "spadcorr/frame.hpp"
#include "spadcorr/optics.hpp"

namespace spadcorr {

namespace bin {

inline void put(std::ostream& os, std::uint64_t v, int bytes) {
  char buf[8];
  for (int i = 0; i < bytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(buf, bytes);
  if (!os) throw Error(ErrorCode::RangeViolation, "write failed");
}
inline void put_f64(std::ostream& os, double v) { put(os, std::bit_cast<std::uint64_t>(v), 8); }

inline std::uint64_t decode(const unsigned char* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

/// Reads exactly `bytes` bytes or throws TruncatedFile.
inline std::uint64_t get(std::istream& is, int bytes, const char* what) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), bytes);
  if (is.gcount() != bytes) throw Error(ErrorCode::TruncatedFile, std::string("truncated while reading ") + what);
  return decode(buf, bytes);
}
inline double get_f64(std::istream& is, const char* what) { return std::bit_cast<double>(get(is, 8, what)); }

inline void expect_magic(std::istream& is, const char (&magic)[9]) {
  char buf[8];
  is.read(buf, 8);
  if (is.gcount() != 8) throw Error(ErrorCode::TruncatedFile, "truncated magic");
  if (std::memcmp(buf, magic, 8) != 0) throw Error(ErrorCode::BadMagic, std::string("expected magic ") + magic);
}

inline void expect_end(std::istream& is) {
  if (is.peek() != std::char_traits<char>::eof()) throw Error(ErrorCode::InvariantViolation, "trailing bytes after end");
}

}  // namespace bin

inline std::uint32_t crc24(std::span<const unsigned char> data) {
  std::uint32_t crc = 0xB704CEu;
  for (unsigned char byte : data) {
    crc ^= static_cast<std::uint32_t>(byte) << 16;
    for (int i = 0; i < 8; ++i) {
      crc <<= 1;
      if (crc & 0x1000000u) crc ^= 0x864CFBu;
    }
  }
  return crc & 0xFFFFFFu;
}

inline constexpr char kEventMagic[9] = "SPADEVT1";
inline constexpr std::size_t kEventHeaderBytes = 22;
inline constexpr std::size_t kEventFooterBytes = 14;
inline constexpr std::uint32_t kFooterSentinel = 0xFFFFFFFFu;

struct EventFileHeader {
  std::uint16_t nx = 32;
  std::uint16_t ny = 32;
  std::uint32_t tdc_bin_ps = 205;
  std::uint16_t bins_per_frame = 255;
  MappingMode mapping = MappingMode::Unspecified;

  SensorShape shape() const { return {nx, ny}; }
  friend bool operator==(const EventFileHeader&, const EventFileHeader&) = default;

  void validate() const {
    if (nx == 0 || ny == 0 || bins_per_frame == 0 || tdc_bin_ps == 0)
      throw Error(ErrorCode::InvariantViolation, "header dimensions must be nonzero");
    if (static_cast<int>(nx) * ny > 0xFFFF) throw Error(ErrorCode::InvariantViolation, "too many pixels for 16-bit index");
    if (bins_per_frame > 256) throw Error(ErrorCode::InvariantViolation, "bins_per_frame exceeds 8-bit tdc range");
    if (static_cast<int>(mapping) > 2) throw Error(ErrorCode::InvariantViolation, "unknown mapping mode");
  }

  std::array<unsigned char, kEventHeaderBytes> encode() const {
    std::array<unsigned char, kEventHeaderBytes> b{};
    std::memcpy(b.data(), kEventMagic, 8);
    auto put = [&](std::size_t at, std::uint64_t v, int n) {
      for (int i = 0; i < n; ++i) b[at + static_cast<std::size_t>(i)] = static_cast<unsigned char>(v >> (8 * i));
    };
    put(8, nx, 2);
    put(10, ny, 2);
    put(12, tdc_bin_ps, 4);
    put(16, bins_per_frame, 2);
    put(18, static_cast<std::uint8_t>(mapping), 1);
    put(19, crc24(std::span(b.data(), 19)), 3);
    return b;
  }

  static EventFileHeader decode(const std::array<unsigned char, kEventHeaderBytes>& b) {
    if (std::memcmp(b.data(), kEventMagic, 8) != 0) throw Error(ErrorCode::BadMagic, "not an event file");
    if (bin::decode(b.data() + 19, 3) != crc24(std::span(b.data(), 19)))
      throw Error(ErrorCode::InvariantViolation, "header checksum mismatch");
    EventFileHeader h;
    h.nx = static_cast<std::uint16_t>(bin::decode(b.data() + 8, 2));
    h.ny = static_cast<std::uint16_t>(bin::decode(b.data() + 10, 2));
    h.tdc_bin_ps = static_cast<std::uint32_t>(bin::decode(b.data() + 12, 4));
    h.bins_per_frame = static_cast<std::uint16_t>(bin::decode(b.data() + 16, 2));
    h.mapping = static_cast<MappingMode>(b[18]);
    h.validate();
    return h;
  }
};

/// Streams frames to a sink; frames must arrive in strictly increasing id order.
class EventWriter {
 public:
  EventWriter(std::ostream& os, EventFileHeader header) : os_(os), header_(header) {
    header_.validate();
    const auto bytes = header_.encode();
    os_.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    bytes_ = bytes.size();
  }

  void write(const Frame& f) {
    if (finished_) throw Error(ErrorCode::OrderViolation, "write after finish");
    if (f.frame_id == kFooterSentinel) throw Error(ErrorCode::RangeViolation, "frame id collides with footer sentinel");
    if (last_id_ && f.frame_id <= *last_id_)
      throw Error(ErrorCode::OrderViolation, "frame " + std::to_string(f.frame_id) + " not after " +
                                                  std::to_string(*last_id_));
    try {
      validate_frame(f, header_.shape(), header_.bins_per_frame);
    } catch (const Error& e) {
      throw Error(ErrorCode::RangeViolation, e.what());
    }
    last_id_ = f.frame_id;
    if (f.events.empty()) return;
    bin::put(os_, f.frame_id, 4);
    bin::put(os_, f.events.size(), 2);
    for (const auto& ev : f.events) {
      bin::put(os_, static_cast<std::uint64_t>(linear_index(ev.pixel, header_.shape())), 2);
      bin::put(os_, static_cast<std::uint64_t>(ev.tdc), 1);
    }
    bytes_ += 6 + 3 * f.events.size();
  }

  /// Writes the footer. `total_frames` must exceed every written id.
  std::size_t finish(std::uint64_t total_frames) {
    if (finished_) throw Error(ErrorCode::OrderViolation, "finish called twice");
    if (last_id_ && total_frames <= *last_id_)
      throw Error(ErrorCode::RangeViolation, "total frame count does not cover frame " + std::to_string(*last_id_));
    bin::put(os_, kFooterSentinel, 4);
    bin::put(os_, 0, 2);
    bin::put(os_, total_frames, 8);
    os_.flush();
    bytes_ += kEventFooterBytes;
    finished_ = true;
    return bytes_;
  }

  std::size_t bytes_written() const { return bytes_; }

 private:
  std::ostream& os_;
  EventFileHeader header_;
  std::optional<std::uint32_t> last_id_;
  std::size_t bytes_ = 0;
  bool finished_ = false;
};

/// Writes `frames` (ids 0 .. total-1, any empties included or not) and returns the byte count.
inline std::size_t write_events(std::span<const Frame> frames, const EventFileHeader& header, std::ostream& os,
                                std::optional<std::uint64_t> total_frames = std::nullopt) {
  EventWriter w(os, header);
  for (const auto& f : frames) w.write(f);
  std::uint64_t total = frames.empty() ? 0 : static_cast<std::uint64_t>(frames.back().frame_id) + 1;
  return w.finish(total_frames.value_or(total));
}

/// Lazy reader. `next` yields every frame 0 .. total-1 (restoring omitted empty frames);
/// `next_stored` yields only stored frames. Mixing the two is not supported.
class EventReader {
 public:
  explicit EventReader(std::istream& is) : is_(is) {
    std::array<unsigned char, kEventHeaderBytes> b{};
    is_.read(reinterpret_cast<char*>(b.data()), static_cast<std::streamsize>(b.size()));
    if (is_.gcount() >= 8 && std::memcmp(b.data(), kEventMagic, 8) != 0)
      throw Error(ErrorCode::BadMagic, "not an event file");
    if (is_.gcount() != static_cast<std::streamsize>(b.size())) throw Error(ErrorCode::TruncatedFile, "truncated header");
    header_ = EventFileHeader::decode(b);
    seen_.assign(static_cast<std::size_t>(header_.shape().pixels()), 0);
  }

  const EventFileHeader& header() const { return header_; }

  std::optional<Frame> next_stored() {
    if (done_) return std::nullopt;
    const auto id = static_cast<std::uint32_t>(bin::get(is_, 4, "frame id"));
    const auto n = static_cast<std::size_t>(bin::get(is_, 2, "event count"));
    if (id == kFooterSentinel) {
      if (n != 0) throw Error(ErrorCode::InvariantViolation, "malformed footer");
      total_ = bin::get(is_, 8, "footer");
      if (last_id_ && *total_ <= *last_id_)
        throw Error(ErrorCode::InvariantViolation, "footer count " + std::to_string(*total_) +
                                                       " does not cover frame " + std::to_string(*last_id_));
      bin::expect_end(is_);
      done_ = true;
      return std::nullopt;
    }
    const std::string ctx = "frame " + std::to_string(id) + ": ";
    if (last_id_ && id <= *last_id_) throw Error(ErrorCode::InvariantViolation, ctx + "frame ids not increasing");
    last_id_ = id;
    Frame f{id, {}};
    f.events.reserve(n);
    std::fill(seen_.begin(), seen_.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto pix = static_cast<int>(bin::get(is_, 2, "pixel"));
      const auto tdc = static_cast<int>(bin::get(is_, 1, "tdc"));
      if (pix < 1 || pix > header_.shape().pixels())
        throw Error(ErrorCode::InvariantViolation, ctx + "pixel index " + std::to_string(pix) + " out of range");
      if (tdc >= header_.bins_per_frame)
        throw Error(ErrorCode::InvariantViolation, ctx + "tdc " + std::to_string(tdc) + " out of range");
      if (seen_[static_cast<std::size_t>(pix - 1)]++)
        throw Error(ErrorCode::InvariantViolation, ctx + "duplicate pixel " + std::to_string(pix));
      f.events.push_back({pixel_from_linear(pix, header_.shape()), tdc});
    }
    ++stored_;
    return f;
  }

  std::optional<Frame> next() {
    if (!pending_ && !done_) pending_ = next_stored();
    if (pending_ && pending_->frame_id == cursor_) {
      ++cursor_;
      return std::exchange(pending_, std::nullopt);
    }
    if (pending_ || (total_ && cursor_ < *total_)) return Frame{static_cast<std::uint32_t>(cursor_++), {}};
    return std::nullopt;
  }

  /// Total frame count from the footer; available once the stream is exhausted.
  std::optional<std::uint64_t> total_frames() const { return total_; }
  std::uint64_t stored_frames() const { return stored_; }

 private:
  std::istream& is_;
  EventFileHeader header_;
  std::vector<std::uint8_t> seen_;
  std::optional<std::uint32_t> last_id_;
  std::optional<Frame> pending_;
  std::optional<std::uint64_t> total_;
  std::uint64_t cursor_ = 0;
  std::uint64_t stored_ = 0;
  bool done_ = false;
};

struct EventStream {
  EventFileHeader header;
  std::vector<Frame> frames;  // including restored empty frames
};

inline EventStream read_events(std::istream& is) {
  EventReader r(is);
  EventStream out{r.header(), {}};
  while (auto f = r.next()) out.frames.push_back(std::move(*f));
  return out;
}

}  // namespace spadcorr
