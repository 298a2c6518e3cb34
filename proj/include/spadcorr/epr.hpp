#pragma once

// EPR evaluation of projected correlation tables: minimum inferred variances by direct
// numerical conditioning, per-column 1D fits, a rotated 2D fit, and correlation-peak widths.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "spadcorr/correlator.hpp"
#include "spadcorr/error.hpp"
#include "spadcorr/lm_fit.hpp"
#include "spadcorr/optics.hpp"

namespace spadcorr {

inline constexpr double kMaskedFractionThreshold = 0.01;
inline constexpr double kColumnRetention = 0.01;

enum class AxisKind : std::uint8_t { Position, Momentum };  // scale in um / pixel or (1/mm) / pixel

/// Square table G(a, b), row a = inferred coordinate, column b = conditioning coordinate.
struct JointTable {
  int n = 0;
  std::vector<double> values;
  std::vector<double> variance;
  std::vector<std::uint8_t> masked;
  double scale = 1.0;
  AxisKind kind = AxisKind::Position;
  double unit_variance = 0.0;  // variance of a single count in table units; 0 for unweighted data

  JointTable() = default;
  JointTable(int size, double pixel_scale, AxisKind k)
      : n(size), values(static_cast<std::size_t>(size * size), 0.0), variance(values.size(), 0.0),
        masked(values.size(), 0), scale(pixel_scale), kind(k) {}

  std::size_t idx(int a, int b) const { return static_cast<std::size_t>(a * n + b); }
  double at(int a, int b) const { return values[idx(a, b)]; }
  double& at(int a, int b) { return values[idx(a, b)]; }

  void validate() const {
    if (n <= 0 || values.size() != static_cast<std::size_t>(n * n) || variance.size() != values.size() ||
        masked.size() != values.size())
      throw Error(ErrorCode::ShapeMismatch, "joint table storage does not match its size");
    if (!(scale > 0.0) || !std::isfinite(scale)) throw Error(ErrorCode::DegenerateInput, "axis scale must be > 0");
  }
};

/// Builds a joint table from a square projection; a cell counts as masked when more than
/// `mask_threshold` of its constituent 4D entries are masked.
inline JointTable joint_table(const Table2D& t, double scale, AxisKind kind, double unit_variance,
                              double mask_threshold = kMaskedFractionThreshold) {
  if (t.n_a != t.n_b) throw Error(ErrorCode::ShapeMismatch, "joint table must be square");
  JointTable out(t.n_a, scale, kind);
  out.unit_variance = unit_variance;
  for (int a = 0; a < t.n_a; ++a)
    for (int b = 0; b < t.n_b; ++b) {
      const std::size_t k = t.idx(a, b);
      const bool m = t.masked_fraction(a, b) > mask_threshold;
      out.masked[k] = m ? 1 : 0;
      out.values[k] = m ? 0.0 : t.values[k];
      out.variance[k] = m ? 0.0 : t.variance[k];
    }
  out.validate();
  return out;
}

struct Conditionals {
  int n = 0;
  std::vector<double> conditional;  // P(a | b) at [a * n + b]
  std::vector<double> marginal;     // P(b)
  std::vector<std::uint8_t> retained;
  int dropped_columns = 0;
  int floored_cells = 0;
};

/// Negative and masked cells contribute 0. Columns below `retention` x the largest column total are
/// dropped from the weighting set; their conditionals stay 0.
inline Conditionals conditionals_and_marginal(const JointTable& t, double retention = kColumnRetention) {
  t.validate();
  Conditionals c;
  c.n = t.n;
  c.conditional.assign(t.values.size(), 0.0);
  c.marginal.assign(static_cast<std::size_t>(t.n), 0.0);
  c.retained.assign(static_cast<std::size_t>(t.n), 0);

  std::vector<double> column(static_cast<std::size_t>(t.n), 0.0);
  for (int a = 0; a < t.n; ++a)
    for (int b = 0; b < t.n; ++b) {
      const std::size_t k = t.idx(a, b);
      if (t.masked[k]) continue;
      if (t.values[k] < 0.0) {
        ++c.floored_cells;
        continue;
      }
      column[static_cast<std::size_t>(b)] += t.values[k];
    }
  double largest = 0.0;
  double total = 0.0;
  for (double v : column) {
    largest = std::max(largest, v);
    total += v;
  }
  if (!(largest > 0.0)) throw Error(ErrorCode::AllColumnsEmpty, "no column has positive unmasked weight");

  for (int b = 0; b < t.n; ++b) {
    const auto bb = static_cast<std::size_t>(b);
    c.marginal[bb] = column[bb] / total;
    if (column[bb] <= 0.0 || column[bb] < retention * largest) {
      if (column[bb] > 0.0) ++c.dropped_columns;
      continue;
    }
    c.retained[bb] = 1;
    for (int a = 0; a < t.n; ++a) {
      const std::size_t k = t.idx(a, b);
      if (!t.masked[k] && t.values[k] > 0.0) c.conditional[k] = t.values[k] / column[bb];
    }
  }
  return c;
}

/// Marginal-weighted mean of the per-column conditional variances, in physical units squared.
inline double min_inferred_variance(const Conditionals& c, double scale) {
  double weighted = 0.0;
  double weight = 0.0;
  for (int b = 0; b < c.n; ++b) {
    const auto bb = static_cast<std::size_t>(b);
    if (!c.retained[bb]) continue;
    double mean = 0.0;
    for (int a = 0; a < c.n; ++a) mean += a * c.conditional[static_cast<std::size_t>(a * c.n + b)];
    double var = 0.0;
    for (int a = 0; a < c.n; ++a) {
      const double d = a - mean;
      var += d * d * c.conditional[static_cast<std::size_t>(a * c.n + b)];
    }
    weighted += c.marginal[bb] * var;
    weight += c.marginal[bb];
  }
  return weight > 0.0 ? weighted / weight * scale * scale : 0.0;
}

struct VminResult {
  double value = 0.0;
  bool violated = false;
};

/// Dimensionless product of a position variance (um^2) and a momentum variance ((1/mm)^2).
/// Violation is strict: V < 1/4.
inline VminResult v_min(double var_pos_um2, double var_mom_per_mm2) {
  if (var_pos_um2 < 0.0 || var_mom_per_mm2 < 0.0) throw Error(ErrorCode::DegenerateInput, "negative variance");
  const double v = var_pos_um2 * var_mom_per_mm2 / 1e6;  // um^2 -> mm^2
  return {v, v < 0.25};
}

inline double schneeloch_conditional(double sigma_plus, double sigma_minus) {
  return conditional_variance(sigma_plus, sigma_minus);
}

/// Conditional width from a peak fitted on the rotated (1/sqrt 2 scaled) axis.
inline double peak_conditional_width(double sigma_rotated) { return std::numbers::sqrt2 * sigma_rotated; }

namespace detail {

inline double fit_weight(double var, double unit_variance) {
  if (unit_variance <= 0.0) return 1.0;
  return 1.0 / std::max(var, unit_variance);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Methods. Each returns a variance in physical units squared plus diagnostics.

struct MethodOutcome {
  double variance = 0.0;
  int dropped_columns = 0;
  int floored_cells = 0;
  int failed_fits = 0;
  int iterations = 0;
  std::vector<GaussianFit> fits;
};

inline MethodOutcome numerical_method(const JointTable& t, double retention = kColumnRetention) {
  const Conditionals c = conditionals_and_marginal(t, retention);
  MethodOutcome out;
  out.variance = min_inferred_variance(c, t.scale);
  out.dropped_columns = c.dropped_columns;
  out.floored_cells = c.floored_cells;
  return out;
}

/// One 1D Gaussian per retained column; column variances weighted by the marginal.
inline MethodOutcome gauss1d_method(const JointTable& t, double retention = kColumnRetention) {
  const Conditionals c = conditionals_and_marginal(t, retention);
  MethodOutcome out;
  out.dropped_columns = c.dropped_columns;
  out.floored_cells = c.floored_cells;
  double weighted = 0.0;
  double weight = 0.0;
  std::vector<double> xs, ys, ws;
  for (int b = 0; b < t.n; ++b) {
    const auto bb = static_cast<std::size_t>(b);
    if (!c.retained[bb]) continue;
    xs.clear();
    ys.clear();
    ws.clear();
    for (int a = 0; a < t.n; ++a) {
      const std::size_t k = t.idx(a, b);
      if (t.masked[k]) continue;
      xs.push_back(a);
      ys.push_back(t.values[k]);
      ws.push_back(detail::fit_weight(t.variance[k], t.unit_variance));
    }
    try {
      GaussianFit f = fit_gaussian_1d(xs, ys, ws);
      out.iterations += f.iterations;
      if (!f.converged || !(f.amplitude > 0.0) || !(f.sigma < t.n)) {
        ++out.failed_fits;
        continue;
      }
      weighted += c.marginal[bb] * f.sigma * f.sigma;
      weight += c.marginal[bb];
      out.fits.push_back(std::move(f));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateInput) throw;
      ++out.failed_fits;
    }
  }
  if (!(weight > 0.0)) throw Error(ErrorCode::NotConverged, "no column fit converged");
  out.variance = weighted / weight * t.scale * t.scale;
  return out;
}

inline GaussianFit fit_gaussian_2d(const JointTable& t) {
  t.validate();
  std::vector<double> as, bs, ys, ws;
  for (int a = 0; a < t.n; ++a)
    for (int b = 0; b < t.n; ++b) {
      const std::size_t k = t.idx(a, b);
      if (t.masked[k]) continue;
      as.push_back(a);
      bs.push_back(b);
      ys.push_back(t.values[k]);
      ws.push_back(detail::fit_weight(t.variance[k], t.unit_variance));
    }
  return fit_gaussian_2d(as, bs, ys, ws);
}

inline MethodOutcome gauss2d_method(const JointTable& t) {
  GaussianFit f = fit_gaussian_2d(t);
  if (!f.converged || !(f.amplitude > 0.0)) throw Error(ErrorCode::NotConverged, "2D Gaussian fit did not converge");
  MethodOutcome out;
  out.iterations = f.iterations;
  out.variance = schneeloch_conditional(f.sigma_plus, f.sigma_minus) * t.scale * t.scale;
  out.fits.push_back(std::move(f));
  return out;
}

struct PeakProfile {
  std::vector<double> coordinate;  // integer sum or difference bins
  std::vector<double> value;       // mean per unmasked constituent
  std::vector<double> weight;
};

/// Collapses a sum/difference table onto one axis and divides each bin by its unmasked
/// constituent count, so the finite-sensor overlap does not shape the peak. Bins whose masked
/// fraction exceeds the threshold are left out.
inline PeakProfile peak_profile(const Table2D& t, bool along_first, double unit_variance,
                                double mask_threshold = kMaskedFractionThreshold) {
  const Profile1D p = collapse(t, along_first);
  PeakProfile out;
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    const double live = p.constituents[i] - p.masked_constituents[i];
    if (live <= 0.0 || p.masked_fraction(i) > mask_threshold) continue;
    out.coordinate.push_back(p.origin + static_cast<double>(i));
    out.value.push_back(p.values[i] / live);
    const double var = p.variance[i] / (live * live);
    out.weight.push_back(unit_variance > 0.0 ? 1.0 / std::max(var, unit_variance / (live * live)) : 1.0);
  }
  return out;
}

/// Fits the peak of a sum (far field) or difference (near field) projection. The fitted width in
/// integer bins is sqrt(2) x the width on the rotated axis, so the conditional width is
/// sqrt(2) * (sigma_bins / sqrt(2)) * scale.
inline MethodOutcome peaks_method(const Table2D& t, double scale, double unit_variance,
                                  double mask_threshold = kMaskedFractionThreshold) {
  const PeakProfile prof = peak_profile(t, true, unit_variance, mask_threshold);
  GaussianFit f = fit_gaussian_1d(prof.coordinate, prof.value, prof.weight);
  if (!f.converged || !(f.amplitude > 0.0)) throw Error(ErrorCode::NotConverged, "peak fit did not converge");
  MethodOutcome out;
  out.iterations = f.iterations;
  const double width = peak_conditional_width(f.sigma / std::numbers::sqrt2) * scale;
  out.variance = width * width;
  out.fits.push_back(std::move(f));
  return out;
}

// ---------------------------------------------------------------------------
// Report

enum class Method : std::uint8_t { Numerical = 0, Gauss1D = 1, Gauss2D = 2, Peaks = 3 };
inline constexpr std::array<Method, 4> kAllMethods{Method::Numerical, Method::Gauss1D, Method::Gauss2D, Method::Peaks};

inline const char* to_string(Method m) {
  switch (m) {
    case Method::Numerical: return "numerical";
    case Method::Gauss1D: return "gauss1d";
    case Method::Gauss2D: return "gauss2d";
    case Method::Peaks: return "peaks";
  }
  return "?";
}

struct MethodEstimate {
  double delta_pos_um = 0.0;
  double delta_mom_per_mm = 0.0;
  double v_min = 0.0;
  bool violated = false;
};

struct AxisReport {
  std::array<std::optional<MethodEstimate>, 4> methods;
  std::array<std::string, 4> notes;  // reason a method is absent, if any

  const std::optional<MethodEstimate>& operator[](Method m) const { return methods[static_cast<std::size_t>(m)]; }
};

struct EprDiagnostics {
  int dropped_columns = 0;
  int floored_cells = 0;
  int failed_column_fits = 0;
};

struct EprReport {
  AxisReport x;
  AxisReport y;
  std::uint8_t near_flags = 0;
  std::uint8_t far_flags = 0;
  EprDiagnostics diagnostics;
};

/// Per-method (position, momentum) conditional standard deviations for one axis; absent entries
/// carry a note instead.
struct AxisInputs {
  std::array<std::optional<std::pair<double, double>>, 4> deltas;
  std::array<std::string, 4> notes;
};

inline AxisReport compile_axis(const AxisInputs& in) {
  AxisReport r;
  bool any = false;
  for (std::size_t m = 0; m < 4; ++m) {
    r.notes[m] = in.notes[m];
    if (!in.deltas[m]) continue;
    const auto [dp, dq] = *in.deltas[m];
    const VminResult v = v_min(dp * dp, dq * dq);
    r.methods[m] = MethodEstimate{dp, dq, v.value, v.violated};
    any = true;
  }
  if (!any) throw Error(ErrorCode::DegenerateInput, "no method produced a result for this axis");
  return r;
}

inline EprReport compile_report(const AxisInputs& x, const AxisInputs& y, std::uint8_t near_flags,
                                std::uint8_t far_flags, EprDiagnostics diag = {}) {
  return EprReport{compile_axis(x), compile_axis(y), near_flags, far_flags, diag};
}

struct EprOptions {
  double near_scale_um = 4.963;        // object-plane um per pixel
  double far_scale_per_mm = 2.31;      // (1/mm) per pixel
  std::array<bool, 4> enabled{true, true, true, true};
  double column_retention = kColumnRetention;
  double mask_threshold = kMaskedFractionThreshold;
};

/// Runs the enabled methods on one near-field and one far-field corrected tensor.
/// Numeric failures of individual methods leave that method absent with a note.
inline EprReport evaluate_epr(const CorrectedG2& near, const CorrectedG2& far, const EprOptions& opt) {
  if (!(near.shape == far.shape)) throw Error(ErrorCode::ShapeMismatch, "near and far tensors differ in shape");
  const double unit_near = std::pow(per_mframe_scale(near.n_frames), 2);
  const double unit_far = std::pow(per_mframe_scale(far.n_frames), 2);
  const AxisProjections near_axes = project_axes(near);
  const AxisProjections far_axes = project_axes(far);
  const SumDiffProjections near_rot = project_sum_diff(near);
  const SumDiffProjections far_rot = project_sum_diff(far);

  EprDiagnostics diag;
  auto axis = [&](const Table2D& near_tab, const Table2D& far_tab, const Table2D& near_diff,
                  const Table2D& far_sum) {
    const JointTable pos = joint_table(near_tab, opt.near_scale_um, AxisKind::Position, unit_near, opt.mask_threshold);
    const JointTable mom =
        joint_table(far_tab, opt.far_scale_per_mm, AxisKind::Momentum, unit_far, opt.mask_threshold);
    AxisInputs in;
    for (Method m : kAllMethods) {
      const auto mi = static_cast<std::size_t>(m);
      if (!opt.enabled[mi]) {
        in.notes[mi] = "disabled";
        continue;
      }
      try {
        MethodOutcome p, q;
        switch (m) {
          case Method::Numerical:
            p = numerical_method(pos, opt.column_retention);
            q = numerical_method(mom, opt.column_retention);
            break;
          case Method::Gauss1D:
            p = gauss1d_method(pos, opt.column_retention);
            q = gauss1d_method(mom, opt.column_retention);
            break;
          case Method::Gauss2D:
            p = gauss2d_method(pos);
            q = gauss2d_method(mom);
            break;
          case Method::Peaks:
            p = peaks_method(near_diff, opt.near_scale_um, unit_near, opt.mask_threshold);
            q = peaks_method(far_sum, opt.far_scale_per_mm, unit_far, opt.mask_threshold);
            break;
        }
        if (m == Method::Numerical) {
          diag.dropped_columns += p.dropped_columns + q.dropped_columns;
          diag.floored_cells += p.floored_cells + q.floored_cells;
        }
        diag.failed_column_fits += p.failed_fits + q.failed_fits;
        in.deltas[mi] = std::pair{std::sqrt(p.variance), std::sqrt(q.variance)};
      } catch (const Error& e) {
        if (classify(e.code()) != ErrorClass::Numeric) throw;
        in.notes[mi] = e.what();
      }
    }
    return in;
  };

  const AxisInputs x = axis(near_axes.x, far_axes.x, near_rot.minus, far_rot.plus);
  // The y profiles come from the transposed sum/difference tables.
  const AxisInputs y = axis(near_axes.y, far_axes.y, transposed(near_rot.minus), transposed(far_rot.plus));
  return compile_report(x, y, near.flags, far.flags, diag);
}

}  // namespace spadcorr
