#pragma once

// Two-photon joint densities of SPDC pairs and the optical mappings between the
// crystal and the sensor plane.
//
// Units used throughout: transverse momenta q in 1/mm, positions in um,
// Delta k_z in 1/um, angular frequencies in rad/s.
//
// Fourier-duality convention of the double-Gaussian model: the quoted widths
// sigma_q+- are widths of the *density* |psi|^2 along q+- = (q1 +- q2)/sqrt(2).
// For a pure state the amplitude is exp(-q+^2/4 sigma_q+^2) exp(-q-^2/4 sigma_q-^2);
// its Fourier transform over (x+, x-) gives densities with sigma_x+- = 1/(2 sigma_q+-).
// A narrow sum-momentum peak (far-field anti-correlation) thus goes with a broad
// centroid in position, and a broad momentum difference with a narrow position
// difference (near-field correlation).

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <numbers>
#include <utility>
#include <vector>

#include "spadcorr/error.hpp"

namespace spadcorr {

inline constexpr double kSpeedOfLight = 299792458.0;  // m/s

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  double norm2() const { return x * x + y * y; }
};

/// Angular frequency (rad/s) of light with vacuum wavelength given in nm.
inline double angular_frequency_from_wavelength_nm(double wavelength_nm) {
  return 2.0 * std::numbers::pi * kSpeedOfLight / (wavelength_nm * 1e-9);
}

struct DispersionModel {
  std::function<double(double omega)> refractive_index;
  double pump_center_frequency = 0.0;  // rad/s
  double poling_period_um = 0.0;
  double crystal_length_mm = 0.0;

  void validate() const {
    if (!refractive_index) throw Error(ErrorCode::ConfigError, "dispersion: no refractive index");
    if (!(pump_center_frequency > 0.0)) throw Error(ErrorCode::ConfigError, "dispersion: pump frequency <= 0");
    if (!(poling_period_um > 0.0)) throw Error(ErrorCode::ConfigError, "dispersion: poling period <= 0");
    if (!(crystal_length_mm > 0.0)) throw Error(ErrorCode::ConfigError, "dispersion: crystal length <= 0");
  }

  double index_at(double omega) const {
    const double n = refractive_index(omega);
    if (!(n > 1.0)) throw Error(ErrorCode::ConfigError, "dispersion: refractive index must exceed 1");
    return n;
  }
};

inline std::function<double(double)> constant_index(double n0) {
  return [n0](double) { return n0; };
}

/// Linear interpolation in wavelength over a table of (wavelength_nm, n) pairs; clamped at the ends.
inline std::function<double(double)> tabulated_index(std::vector<std::pair<double, double>> table) {
  if (table.size() < 2) throw Error(ErrorCode::ConfigError, "tabulated index needs >= 2 entries");
  std::sort(table.begin(), table.end());
  return [table = std::move(table)](double omega) {
    const double lambda_nm = 2.0 * std::numbers::pi * kSpeedOfLight / omega * 1e9;
    if (lambda_nm <= table.front().first) return table.front().second;
    if (lambda_nm >= table.back().first) return table.back().second;
    auto hi = std::upper_bound(table.begin(), table.end(), lambda_nm,
                               [](double l, const auto& e) { return l < e.first; });
    auto lo = hi - 1;
    const double t = (lambda_nm - lo->first) / (hi->first - lo->first);
    return lo->second + t * (hi->second - lo->second);
  };
}

/// Transverse pump amplitude. Empty `custom` means a Gaussian beam with waists w0x, w0y,
/// whose angular spectrum is exp(-(qx w0x)^2/4 - (qy w0y)^2/4), peaking at q = 0.
struct PumpProfile {
  double w0x_um = 250.0;
  double w0y_um = 300.0;
  std::function<std::complex<double>(Vec2)> custom;

  bool is_gaussian() const { return !custom; }

  std::complex<double> amplitude(Vec2 q) const {
    if (custom) return custom(q);
    const double ax = q.x * w0x_um * 1e-3;
    const double ay = q.y * w0y_um * 1e-3;
    return {std::exp(-0.25 * (ax * ax + ay * ay)), 0.0};
  }
};

struct AxisWidths {
  double plus = 0.0;   // along (a1 + a2)/sqrt(2)
  double minus = 0.0;  // along (a1 - a2)/sqrt(2)
};

/// Double-Gaussian joint momentum density; widths in 1/mm.
struct DoubleGaussianModel {
  AxisWidths x;
  AxisWidths y;

  void validate() const {
    if (!(x.plus > 0 && x.minus > 0 && y.plus > 0 && y.minus > 0))
      throw Error(ErrorCode::ConfigError, "double-Gaussian widths must be positive");
  }
};

struct SincModel {
  DispersionModel dispersion;
  PumpProfile pump;
};

/// Phase mismatch along z for transverse momenta q1, q2 (1/mm) with photon 2 at omega2.
/// Result in 1/um, including the quasi-phase-matching term 2 pi / G.
inline double evaluate_delta_kz(Vec2 q1, Vec2 q2, double omega2, const DispersionModel& disp) {
  disp.validate();
  const double omega_p = disp.pump_center_frequency;
  const double omega1 = omega_p - omega2;
  // k = omega n / c in 1/um; q converted from 1/mm to 1/um.
  auto k_of = [&](double omega) { return omega * disp.index_at(omega) / kSpeedOfLight * 1e-6; };
  const double k1 = k_of(omega1);
  const double k2 = k_of(omega2);
  const double kp = k_of(omega_p);
  const Vec2 q1u = 1e-3 * q1;
  const Vec2 q2u = 1e-3 * q2;
  const Vec2 qpu = q1u + q2u;
  const double a1 = k1 * k1 - q1u.norm2();
  const double a2 = k2 * k2 - q2u.norm2();
  const double ap = kp * kp - qpu.norm2();
  if (a1 < 0.0 || a2 < 0.0 || ap < 0.0)
    throw Error(ErrorCode::EvanescentInput, "transverse momentum beyond evanescent cutoff");
  return std::sqrt(a1) + std::sqrt(a2) - std::sqrt(ap) + 2.0 * std::numbers::pi / disp.poling_period_um;
}

inline double sinc(double x) { return std::abs(x) < 1e-8 ? 1.0 - x * x / 6.0 : std::sin(x) / x; }

/// |E_p(q1 + q2)|^2 sinc^2(Delta k_z L / 2) at the degenerate frequency omega_cp / 2.
/// Unnormalized; the constant prefactor of the amplitude is dropped.
inline double evaluate_joint_density(Vec2 q1, Vec2 q2, const SincModel& model) {
  const double dkz = evaluate_delta_kz(q1, q2, 0.5 * model.dispersion.pump_center_frequency, model.dispersion);
  const double s = sinc(0.5 * dkz * model.dispersion.crystal_length_mm * 1e3);
  return std::norm(model.pump.amplitude(q1 + q2)) * s * s;
}

/// exp(-q+^2/2 sigma_q+^2) exp(-q-^2/2 sigma_q-^2) per axis; maximum 1 at the origin.
inline double evaluate_joint_density(Vec2 q1, Vec2 q2, const DoubleGaussianModel& model) {
  model.validate();
  auto axis = [](double a1, double a2, const AxisWidths& w) {
    const double p = (a1 + a2) / std::numbers::sqrt2;
    const double m = (a1 - a2) / std::numbers::sqrt2;
    return std::exp(-0.5 * p * p / (w.plus * w.plus) - 0.5 * m * m / (w.minus * w.minus));
  };
  return axis(q1.x, q2.x, model.x) * axis(q1.y, q2.y, model.y);
}

struct PositionWidths {
  AxisWidths x;  // um
  AxisWidths y;  // um
};

/// sigma_x+- = 1 / (2 sigma_q+-), converted from mm to um.
inline PositionWidths position_widths(const DoubleGaussianModel& model) {
  model.validate();
  auto conv = [](const AxisWidths& q) { return AxisWidths{1e3 / (2.0 * q.plus), 1e3 / (2.0 * q.minus)}; };
  return {conv(model.x), conv(model.y)};
}

/// Inverse of position_widths.
inline DoubleGaussianModel momentum_widths(const PositionWidths& pos) {
  auto conv = [](const AxisWidths& x) { return AxisWidths{1e3 / (2.0 * x.plus), 1e3 / (2.0 * x.minus)}; };
  return {conv(pos.x), conv(pos.y)};
}

/// Conditional variance of a1 given a2 for a Gaussian with widths sigma+ and sigma-
/// along the rotated axes: 2 s+^2 s-^2 / (s+^2 + s-^2).
inline double conditional_variance(double sigma_plus, double sigma_minus) {
  const double p2 = sigma_plus * sigma_plus;
  const double m2 = sigma_minus * sigma_minus;
  return 2.0 * p2 * m2 / (p2 + m2);
}

struct AxisPrediction {
  double delta_pos_um = 0.0;
  double delta_mom_per_mm = 0.0;
  double v_min = 0.0;
};

struct EprPrediction {
  AxisPrediction x;
  AxisPrediction y;
};

inline EprPrediction predict_epr(const DoubleGaussianModel& model) {
  const PositionWidths pos = position_widths(model);
  auto axis = [](const AxisWidths& q, const AxisWidths& x) {
    AxisPrediction out;
    const double var_q = conditional_variance(q.plus, q.minus);
    const double var_x = conditional_variance(x.plus, x.minus);
    out.delta_mom_per_mm = std::sqrt(var_q);
    out.delta_pos_um = std::sqrt(var_x);
    out.v_min = var_x * 1e-6 * var_q;
    return out;
  };
  return {axis(model.x, pos.x), axis(model.y, pos.y)};
}

/// Momentum widths (sigma_q+ <= sigma_q-) reproducing the requested minimum inferred
/// standard deviations on one axis. Requires delta_pos * delta_mom <= 1/2.
inline AxisWidths solve_axis_for_targets(double delta_pos_um, double delta_mom_per_mm) {
  if (!(delta_pos_um > 0 && delta_mom_per_mm > 0))
    throw Error(ErrorCode::ConfigError, "EPR targets must be positive");
  const double dx = delta_pos_um * 1e-3;
  // With s = a^2 + b^2 and p = a^2 b^2 (a, b the momentum widths):
  //   Delta^2(x) = 1 / (2 s),   Delta^2(q) = 2 p / s.
  const double s = 1.0 / (2.0 * dx * dx);
  const double p = 0.5 * delta_mom_per_mm * delta_mom_per_mm * s;
  const double disc = s * s - 4.0 * p;
  if (disc < 0.0)
    throw Error(ErrorCode::ConfigError, "EPR targets exceed the pure-state bound V <= 1/4");
  const double a2 = 0.5 * (s - std::sqrt(disc));
  const double b2 = 0.5 * (s + std::sqrt(disc));
  return {std::sqrt(a2), std::sqrt(b2)};
}

inline DoubleGaussianModel solve_model_for_targets(double delta_x_um, double delta_qx_per_mm,
                                                   double delta_y_um, double delta_qy_per_mm) {
  return {solve_axis_for_targets(delta_x_um, delta_qx_per_mm),
          solve_axis_for_targets(delta_y_um, delta_qy_per_mm)};
}

enum class MappingMode : std::uint8_t { FarField = 0, NearField = 1, Unspecified = 2 };

struct OpticalMapping {
  MappingMode mode = MappingMode::FarField;
  double magnification = 9.0;      // near field
  double focal_length_mm = 150.0;  // far field
  double wavelength_nm = 810.0;    // far field
  Vec2 center_offset_px{};         // optical axis relative to the sensor center

  void validate() const {
    if (mode == MappingMode::NearField && magnification == 0.0)
      throw Error(ErrorCode::ConfigError, "near-field magnification must be nonzero");
    if (mode == MappingMode::FarField && !(focal_length_mm > 0.0 && wavelength_nm > 0.0))
      throw Error(ErrorCode::ConfigError, "far-field focal length and wavelength must be positive");
    if (mode == MappingMode::Unspecified)
      throw Error(ErrorCode::ConfigError, "mapping mode unspecified");
  }

  /// k / f in (1/mm) per um of sensor position.
  double momentum_per_um() const {
    const double k_per_mm = 2.0 * std::numbers::pi / (wavelength_nm * 1e-6);
    return k_per_mm / focal_length_mm * 1e-3;
  }
};

/// Sensor-plane position (um) to object position (um, near field) or transverse momentum (1/mm, far field).
inline Vec2 map_sensor_to_object(Vec2 rho_um, const OpticalMapping& mapping) {
  mapping.validate();
  if (mapping.mode == MappingMode::NearField) return (1.0 / mapping.magnification) * rho_um;
  return mapping.momentum_per_um() * rho_um;
}

inline Vec2 map_object_to_sensor(Vec2 object, const OpticalMapping& mapping) {
  mapping.validate();
  if (mapping.mode == MappingMode::NearField) return mapping.magnification * object;
  return (1.0 / mapping.momentum_per_um()) * object;
}

/// Physical size of one pixel pitch at the object: um (near field) or 1/mm (far field).
inline double object_scale_per_pixel(const OpticalMapping& mapping, double pixel_pitch_um) {
  mapping.validate();
  if (mapping.mode == MappingMode::NearField) return pixel_pitch_um / std::abs(mapping.magnification);
  return mapping.momentum_per_um() * pixel_pitch_um;
}

}  // namespace spadcorr
