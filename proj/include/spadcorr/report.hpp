#pragma once

// Report rendering (JSON and aligned text) and CSV plot-data exports.

#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spadcorr/correlator.hpp"
#include "spadcorr/epr.hpp"
#include "spadcorr/optics.hpp"

namespace spadcorr {

inline std::vector<std::string> provenance_names(std::uint8_t flags) {
  std::vector<std::string> out;
  if (flags & kRaw) out.emplace_back("raw");
  if (flags & kAccidentalSubtracted) out.emplace_back("accidental_subtracted");
  if (flags & kCrosstalkCorrected) out.emplace_back("crosstalk_corrected");
  if (flags & kNeighborMasked) out.emplace_back("neighbor_masked");
  return out;
}

/// "violated" when every present method has V < 1/4, "not_violated" when none does, else "mixed".
inline std::string axis_verdict(const AxisReport& a) {
  int present = 0, violated = 0;
  for (const auto& m : a.methods) {
    if (!m) continue;
    ++present;
    if (m->violated) ++violated;
  }
  if (violated == present) return "violated";
  return violated == 0 ? "not_violated" : "mixed";
}

inline nlohmann::ordered_json to_json(const EprReport& r, const std::optional<EprPrediction>& expected = {}) {
  using nlohmann::ordered_json;
  auto axis = [](const AxisReport& a) {
    ordered_json methods = ordered_json::object();
    for (Method m : kAllMethods) {
      const auto& e = a[m];
      if (e) {
        methods[to_string(m)] = {{"delta_pos_um", e->delta_pos_um},
                                 {"delta_mom_per_mm", e->delta_mom_per_mm},
                                 {"v_min", e->v_min},
                                 {"violated", e->violated}};
      } else {
        methods[to_string(m)] = {{"absent", a.notes[static_cast<std::size_t>(m)]}};
      }
    }
    return ordered_json{{"verdict", axis_verdict(a)}, {"methods", methods}};
  };
  ordered_json j;
  j["axes"] = {{"x", axis(r.x)}, {"y", axis(r.y)}};
  j["provenance"] = {{"near_field", provenance_names(r.near_flags)}, {"far_field", provenance_names(r.far_flags)}};
  j["diagnostics"] = {{"dropped_columns", r.diagnostics.dropped_columns},
                      {"floored_cells", r.diagnostics.floored_cells},
                      {"failed_column_fits", r.diagnostics.failed_column_fits}};
  if (expected) {
    auto ax = [](const AxisPrediction& p) {
      return ordered_json{{"delta_pos_um", p.delta_pos_um}, {"delta_mom_per_mm", p.delta_mom_per_mm}, {"v_min", p.v_min}};
    };
    j["expected"] = {{"x", ax(expected->x)}, {"y", ax(expected->y)}};
  }
  return j;
}

/// Aligned table: one row per method, position/momentum widths and V per axis.
inline std::string render_table(const EprReport& r, const std::optional<EprPrediction>& expected = {}) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-22s %10s %10s %10s   %10s %10s %10s\n", "method", "dx[um]", "dqx[1/mm]", "Vx",
                "dy[um]", "dqy[1/mm]", "Vy");
  out += line;
  auto row = [&](const char* name, const std::optional<MethodEstimate>& x, const std::optional<MethodEstimate>& y) {
    auto cells = [](const std::optional<MethodEstimate>& e) {
      char buf[64];
      if (e)
        std::snprintf(buf, sizeof buf, "%10.2f %10.2f %10.2e", e->delta_pos_um, e->delta_mom_per_mm, e->v_min);
      else
        std::snprintf(buf, sizeof buf, "%10s %10s %10s", "-", "-", "-");
      return std::string(buf);
    };
    std::snprintf(line, sizeof line, "%-22s %s   %s\n", name, cells(x).c_str(), cells(y).c_str());
    out += line;
  };
  if (expected) {
    auto as_estimate = [](const AxisPrediction& p) {
      return std::optional<MethodEstimate>(MethodEstimate{p.delta_pos_um, p.delta_mom_per_mm, p.v_min, p.v_min < 0.25});
    };
    row("expected (source)", as_estimate(expected->x), as_estimate(expected->y));
  }
  for (Method m : kAllMethods) row(to_string(m), r.x[m], r.y[m]);
  out += "verdict: x " + axis_verdict(r.x) + ", y " + axis_verdict(r.y) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// CSV exports

namespace csv_detail {
inline void num(std::ostream& os, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  os << buf;
}
}  // namespace csv_detail

/// Two columns: tdc difference (bins) and coincidences per Mframe.
inline void write_dt_hist_csv(std::ostream& os, const CorrelationAccumulator& acc) {
  const double scale = per_mframe_scale(acc.n_frames());
  const int bins = acc.params().bins_per_frame;
  os << "dt_bins,counts_per_mframe\n";
  for (int dt = -(bins - 1); dt <= bins - 1; ++dt) {
    os << dt << ',';
    csv_detail::num(os, static_cast<double>(acc.dt_count(dt)) * scale);
    os << '\n';
  }
}

/// Full linear-index matrix: row p1, column p2 (both 1-based linear indices).
inline void write_matrix_csv(std::ostream& os, const CorrectedG2& g) {
  const std::size_t n = g.pixels();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j) os << ',';
      csv_detail::num(os, g.values[i * n + j]);
    }
    os << '\n';
  }
}

/// Long format: a, b, value, variance, masked_fraction.
inline void write_table_csv(std::ostream& os, const Table2D& t) {
  os << "a,b,value,variance,masked_fraction\n";
  for (int i = 0; i < t.n_a; ++i)
    for (int j = 0; j < t.n_b; ++j) {
      os << t.origin_a + i << ',' << t.origin_b + j << ',';
      csv_detail::num(os, t.at(i, j));
      os << ',';
      csv_detail::num(os, t.variance[t.idx(i, j)]);
      os << ',';
      csv_detail::num(os, t.masked_fraction(i, j));
      os << '\n';
    }
}

/// Peak profile with its fitted Gaussian evaluated at each bin.
inline void write_peak_csv(std::ostream& os, const PeakProfile& p, const std::optional<GaussianFit>& fit) {
  os << "bin,rotated_coordinate,value,weight,fit\n";
  for (std::size_t i = 0; i < p.coordinate.size(); ++i) {
    os << p.coordinate[i] << ',';
    csv_detail::num(os, p.coordinate[i] / std::numbers::sqrt2);
    os << ',';
    csv_detail::num(os, p.value[i]);
    os << ',';
    csv_detail::num(os, p.weight[i]);
    os << ',';
    if (fit) {
      const double d = p.coordinate[i] - fit->center;
      csv_detail::num(os, fit->amplitude * std::exp(-0.5 * d * d / (fit->sigma * fit->sigma)) + fit->offset);
    }
    os << '\n';
  }
}

inline void write_crosstalk_csv(std::ostream& os, const CrosstalkMap& m) {
  os << "dx,dy,p\n";
  for (int dy = -m.max_offset; dy <= m.max_offset; ++dy)
    for (int dx = -m.max_offset; dx <= m.max_offset; ++dx) {
      os << dx << ',' << dy << ',';
      csv_detail::num(os, m.at(dx, dy));
      os << '\n';
    }
}

}  // namespace spadcorr
