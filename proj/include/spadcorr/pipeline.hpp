#pragma once

// Stage orchestration: simulate -> event file -> accumulator -> corrected tensor -> EPR report.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spadcorr/config.hpp"
#include "spadcorr/correlator.hpp"
#include "spadcorr/epr.hpp"
#include "spadcorr/event_io.hpp"
#include "spadcorr/sensor_sim.hpp"
#include "spadcorr/snapshot_io.hpp"

namespace spadcorr {

inline constexpr std::uint64_t kChunkFrames = 1u << 18;

/// Adds frames to an existing accumulator; multi-worker runs merge private partials.
inline void accumulate_into(CorrelationAccumulator& acc, std::span<const Frame> frames, unsigned workers) {
  if (workers <= 1) {
    for (const auto& f : frames) acc.add(f);
    return;
  }
  acc.merge(accumulate(frames, acc.params(), workers));
}

inline EventFileHeader header_for(const SensorConfig& sensor, MappingMode mode) {
  EventFileHeader h;
  h.nx = static_cast<std::uint16_t>(sensor.shape.nx);
  h.ny = static_cast<std::uint16_t>(sensor.shape.ny);
  h.tdc_bin_ps = static_cast<std::uint32_t>(std::lround(sensor.tdc_bin_ps));
  h.bins_per_frame = static_cast<std::uint16_t>(sensor.bins_per_frame);
  h.mapping = mode;
  return h;
}

/// Simulates frames [0, n) in chunks; each chunk is generated by `workers` threads, then written
/// and/or accumulated in frame order. Either sink may be null.
inline void simulate_stream(const SimulationSetup& setup, std::uint64_t n_frames, unsigned workers,
                            EventWriter* writer, CorrelationAccumulator* acc) {
  for (std::uint64_t first = 0; first < n_frames; first += kChunkFrames) {
    const std::uint64_t count = std::min(kChunkFrames, n_frames - first);
    const std::vector<Frame> frames = simulate_frames(setup, count, workers, static_cast<std::uint32_t>(first));
    if (writer)
      for (const auto& f : frames) writer->write(f);
    if (acc) accumulate_into(*acc, frames, workers);
  }
  if (writer) writer->finish(n_frames);
}

/// Returns the byte count of the written event file.
inline std::size_t simulate_to_file(const SimulationSetup& setup, std::uint64_t n_frames, unsigned workers,
                                    const std::string& path, CorrelationAccumulator* acc = nullptr) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::ConfigError, "cannot open " + path + " for writing");
  EventWriter w(os, header_for(setup.sensor, setup.mapping.mode));
  simulate_stream(setup, n_frames, workers, &w, acc);
  return w.bytes_written();
}

struct CorrelatedFile {
  EventFileHeader header;
  CorrelationAccumulator acc;
};

/// Reads stored frames lazily and accumulates them in chunks; omitted empty frames are counted
/// from the footer.
inline CorrelatedFile correlate_stream(std::istream& is, AccumulatorParams params, unsigned workers) {
  EventReader reader(is);
  params.shape = reader.header().shape();
  params.bins_per_frame = reader.header().bins_per_frame;
  CorrelationAccumulator acc(params);
  std::vector<Frame> chunk;
  chunk.reserve(kChunkFrames);
  auto flush = [&] {
    accumulate_into(acc, chunk, workers);
    chunk.clear();
  };
  while (auto f = reader.next_stored()) {
    chunk.push_back(std::move(*f));
    if (chunk.size() == kChunkFrames) flush();
  }
  flush();
  acc.add_empty_frames(*reader.total_frames() - reader.stored_frames());
  return {reader.header(), std::move(acc)};
}

inline CorrelatedFile correlate_file(const std::string& path, const AccumulatorParams& params, unsigned workers) {
  auto is = open_input(path);
  return correlate_stream(is, params, workers);
}

/// Accidental subtraction, cross-talk correction and neighbor masking per the run config.
/// Far-field data estimate the cross-talk map when `map` is null; the estimate is stored there.
inline CorrectedSnapshot correct(const CorrelationAccumulator& acc, MappingMode mode, const RunConfig& cfg,
                                 std::optional<CrosstalkMap>& map) {
  CorrectedSnapshot out;
  out.mapping = mode;
  out.g1 = normalized_g1(acc);
  out.g2 = normalize(acc);
  switch (cfg.accidentals) {
    case AccidentalChoice::ShiftedWindow:
      out.g2 = subtract_accidentals(std::move(out.g2), estimate_accidentals(acc, ShiftedWindow{}));
      break;
    case AccidentalChoice::G1Product: {
      G1Product method{default_uncorrelated_mask(acc.shape(), mode, cfg.g1_mask_distance, cfg.optics.center_offset_px)};
      out.g2 = subtract_accidentals(std::move(out.g2), estimate_accidentals(acc, method));
      break;
    }
    case AccidentalChoice::None:
      break;
  }
  if (cfg.estimate_crosstalk) {
    if (!map) {
      if (mode != MappingMode::FarField)
        throw Error(ErrorCode::ConfigError, "cross-talk must be estimated from far-field data");
      map = estimate_crosstalk(out.g2, out.g1, cfg.crosstalk_inner);
    }
    out.g2 = correct_crosstalk(std::move(out.g2), out.g1, map->restricted(cfg.crosstalk_radius));
  }
  if (cfg.mask_radius >= 0) out.g2 = mask_neighbors(std::move(out.g2), cfg.mask_radius);
  return out;
}

struct PipelineResult {
  CorrelationAccumulator near_acc;
  CorrelationAccumulator far_acc;
  CorrectedSnapshot near;
  CorrectedSnapshot far;
  std::optional<CrosstalkMap> crosstalk;
  EprReport report;
};

/// Full chain for one near-field and one far-field run. With an output directory, event files
/// (if enabled) and snapshots are written there.
inline PipelineResult run_pipeline(const RunConfig& cfg, const std::optional<std::string>& out_dir = std::nullopt) {
  validate(cfg);
  const AccumulatorParams params = cfg.accumulator_params();
  auto run = [&](MappingMode mode, const char* stem) {
    const SimulationSetup setup = cfg.setup(mode);
    CorrelationAccumulator acc(params);
    if (out_dir && cfg.write_events)
      simulate_to_file(setup, cfg.frames, cfg.workers, *out_dir + "/" + stem + ".evt", &acc);
    else
      simulate_stream(setup, cfg.frames, cfg.workers, nullptr, &acc);
    if (out_dir) save_file(*out_dir + "/" + stem + ".acc", acc, write_accumulator);
    return acc;
  };
  PipelineResult r{run(MappingMode::NearField, "near"), run(MappingMode::FarField, "far"), {}, {}, {}, {}};
  r.far = correct(r.far_acc, MappingMode::FarField, cfg, r.crosstalk);
  r.near = correct(r.near_acc, MappingMode::NearField, cfg, r.crosstalk);
  if (out_dir) {
    save_file(*out_dir + "/near.g2c", r.near, write_corrected);
    save_file(*out_dir + "/far.g2c", r.far, write_corrected);
  }
  r.report = evaluate_epr(r.near.g2, r.far.g2, cfg.epr_options());
  return r;
}

}  // namespace spadcorr
