#pragma once

// Damped nonlinear least squares (Levenberg-Marquardt) with analytic Jacobians, and the
// 1D / rotated 2D Gaussian models used to extract correlation widths.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "spadcorr/error.hpp"

namespace spadcorr {

template <class M>
concept FitModel = requires(const M& m, const Eigen::VectorXd& p, Eigen::VectorXd& f, Eigen::MatrixXd& J) {
  { m.points() } -> std::convertible_to<Eigen::Index>;
  { m.parameters() } -> std::convertible_to<Eigen::Index>;
  m.evaluate(p, f);
  m.jacobian(p, J);
};

struct LmOptions {
  int max_iterations = 200;
  double step_tolerance = 1e-10;  // relative parameter step
  double initial_lambda = 1e-3;
  bool scale_covariance = true;   // multiply by reduced chi^2
};

struct LmResult {
  Eigen::VectorXd params;
  Eigen::MatrixXd covariance;
  bool converged = false;
  int iterations = 0;
  double chi2 = 0.0;           // weighted sum of squared residuals
  double residual_norm = 0.0;  // sqrt(chi2)
  std::vector<double> cost_history;  // chi2 after each accepted step, starting with the initial guess
};

/// Minimizes sum_i w_i (y_i - f_i(p))^2. Steps that would increase the cost are rejected
/// (damping raised) so the cost sequence over accepted steps is non-increasing.
template <FitModel M>
LmResult levenberg_marquardt(const M& model, std::span<const double> y, std::span<const double> w,
                             Eigen::VectorXd p0, const LmOptions& opt = {}) {
  const Eigen::Index n = model.points();
  const Eigen::Index np = model.parameters();
  const Eigen::Map<const Eigen::VectorXd> Y(y.data(), n);
  const Eigen::Map<const Eigen::VectorXd> W(w.data(), n);

  Eigen::VectorXd f(n);
  Eigen::MatrixXd J(n, np);
  auto cost_at = [&](const Eigen::VectorXd& p) {
    model.evaluate(p, f);
    const double c = (W.array() * (Y - f).array().square()).sum();
    return std::isfinite(c) ? c : std::numeric_limits<double>::infinity();
  };

  LmResult res;
  Eigen::VectorXd p = std::move(p0);
  double cost = cost_at(p);
  res.cost_history.push_back(cost);
  double lambda = opt.initial_lambda;

  for (int it = 0; it < opt.max_iterations; ++it) {
    res.iterations = it + 1;
    model.evaluate(p, f);
    model.jacobian(p, J);
    const Eigen::VectorXd r = Y - f;
    const Eigen::MatrixXd A = J.transpose() * W.asDiagonal() * J;
    const Eigen::VectorXd g = J.transpose() * (W.array() * r.array()).matrix();
    const double diag_floor = std::max(1e-300, 1e-12 * A.diagonal().cwiseAbs().maxCoeff());

    bool accepted = false;
    bool tiny_step = false;
    for (int attempt = 0; attempt < 60; ++attempt) {
      Eigen::MatrixXd D = A;
      for (Eigen::Index k = 0; k < np; ++k) D(k, k) += lambda * std::max(A(k, k), diag_floor);
      const Eigen::VectorXd delta = D.ldlt().solve(g);
      if (!delta.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      const Eigen::VectorXd trial = p + delta;
      const double trial_cost = cost_at(trial);
      tiny_step = delta.norm() <= opt.step_tolerance * (p.norm() + opt.step_tolerance);
      if (trial_cost <= cost) {
        p = trial;
        cost = trial_cost;
        lambda = std::max(lambda / 10.0, 1e-15);
        accepted = true;
        res.cost_history.push_back(cost);
        break;
      }
      if (tiny_step) break;
      lambda *= 10.0;
    }
    if (tiny_step) {
      res.converged = true;
      break;
    }
    if (!accepted) break;  // damping exhausted without progress
  }

  res.params = p;
  res.chi2 = cost;
  res.residual_norm = std::sqrt(cost);
  model.jacobian(p, J);
  const Eigen::MatrixXd A = J.transpose() * W.asDiagonal() * J;
  Eigen::MatrixXd cov = A.completeOrthogonalDecomposition().pseudoInverse();
  if (opt.scale_covariance && n > np) cov *= cost / static_cast<double>(n - np);
  res.covariance = 0.5 * (cov + cov.transpose());
  return res;
}

/// A exp(-(x - mu)^2 / (2 sigma^2)) + offset; parameters (A, mu, sigma, offset).
struct Gaussian1DModel {
  std::span<const double> x;

  Eigen::Index points() const { return static_cast<Eigen::Index>(x.size()); }
  Eigen::Index parameters() const { return 4; }

  void evaluate(const Eigen::VectorXd& p, Eigen::VectorXd& f) const {
    f.resize(points());
    for (Eigen::Index i = 0; i < points(); ++i) {
      const double d = x[static_cast<std::size_t>(i)] - p[1];
      f[i] = p[0] * std::exp(-0.5 * d * d / (p[2] * p[2])) + p[3];
    }
  }

  void jacobian(const Eigen::VectorXd& p, Eigen::MatrixXd& J) const {
    J.resize(points(), 4);
    const double s2 = p[2] * p[2];
    for (Eigen::Index i = 0; i < points(); ++i) {
      const double d = x[static_cast<std::size_t>(i)] - p[1];
      const double e = std::exp(-0.5 * d * d / s2);
      J(i, 0) = e;
      J(i, 1) = p[0] * e * d / s2;
      J(i, 2) = p[0] * e * d * d / (s2 * p[2]);
      J(i, 3) = 1.0;
    }
  }
};

/// A exp(-u+^2/(2 s+^2) - u-^2/(2 s-^2)) + offset with u+- = ((a - ca) +- (b - cb)) / sqrt(2);
/// parameters (A, ca, cb, s+, s-, offset).
struct Gaussian2DModel {
  std::span<const double> a;
  std::span<const double> b;

  Eigen::Index points() const { return static_cast<Eigen::Index>(a.size()); }
  Eigen::Index parameters() const { return 6; }

  void evaluate(const Eigen::VectorXd& p, Eigen::VectorXd& f) const {
    f.resize(points());
    for (Eigen::Index i = 0; i < points(); ++i) {
      const auto k = static_cast<std::size_t>(i);
      const double da = a[k] - p[1];
      const double db = b[k] - p[2];
      const double up = (da + db) / std::numbers::sqrt2;
      const double um = (da - db) / std::numbers::sqrt2;
      f[i] = p[0] * std::exp(-0.5 * up * up / (p[3] * p[3]) - 0.5 * um * um / (p[4] * p[4])) + p[5];
    }
  }

  void jacobian(const Eigen::VectorXd& p, Eigen::MatrixXd& J) const {
    J.resize(points(), 6);
    const double sp2 = p[3] * p[3];
    const double sm2 = p[4] * p[4];
    for (Eigen::Index i = 0; i < points(); ++i) {
      const auto k = static_cast<std::size_t>(i);
      const double da = a[k] - p[1];
      const double db = b[k] - p[2];
      const double up = (da + db) / std::numbers::sqrt2;
      const double um = (da - db) / std::numbers::sqrt2;
      const double e = std::exp(-0.5 * up * up / sp2 - 0.5 * um * um / sm2);
      const double ae = p[0] * e;
      J(i, 0) = e;
      J(i, 1) = ae * (up / sp2 + um / sm2) / std::numbers::sqrt2;
      J(i, 2) = ae * (up / sp2 - um / sm2) / std::numbers::sqrt2;
      J(i, 3) = ae * up * up / (sp2 * p[3]);
      J(i, 4) = ae * um * um / (sm2 * p[4]);
      J(i, 5) = 1.0;
    }
  }
};

struct GaussianFit {
  double amplitude = 0.0;
  double center = 0.0;        // 1D: mu; 2D: center along the first axis
  double center_b = 0.0;      // 2D only
  double sigma = 0.0;         // 1D
  double sigma_plus = 0.0;    // 2D
  double sigma_minus = 0.0;   // 2D
  double offset = 0.0;
  Eigen::VectorXd params;
  Eigen::MatrixXd covariance;
  bool converged = false;
  int iterations = 0;
  double residual_norm = 0.0;

  double stderr_of(Eigen::Index k) const { return std::sqrt(std::max(0.0, covariance(k, k))); }
};

namespace detail {

inline void check_inputs(std::span<const double> y, std::span<const double> w, std::size_t min_points) {
  std::size_t active = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!std::isfinite(y[i]) || !std::isfinite(w[i]) || w[i] < 0.0)
      throw Error(ErrorCode::DegenerateInput, "non-finite value or negative weight");
    if (w[i] > 0.0) ++active;
  }
  if (active < min_points)
    throw Error(ErrorCode::DegenerateInput,
                "need >= " + std::to_string(min_points) + " weighted points, got " + std::to_string(active));
  const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
  if (!(*hi > *lo)) throw Error(ErrorCode::DegenerateInput, "constant data");
}

}  // namespace detail

/// Moment-initialized 1D Gaussian fit; converged when the relative step drops below 1e-10.
inline GaussianFit fit_gaussian_1d(std::span<const double> xs, std::span<const double> ys,
                                   std::span<const double> weights, const LmOptions& opt = {}) {
  if (xs.size() != ys.size() || ys.size() != weights.size())
    throw Error(ErrorCode::DegenerateInput, "size mismatch");
  detail::check_inputs(ys, weights, 5);

  const auto [lo_it, hi_it] = std::minmax_element(ys.begin(), ys.end());
  const double offset0 = *lo_it;
  const double amp0 = *hi_it - *lo_it;
  const double xmin = *std::min_element(xs.begin(), xs.end());
  const double xmax = *std::max_element(xs.begin(), xs.end());
  // Centroid of the points above half maximum; width from area / height.
  double sw = 0.0, sx = 0.0, area = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double h = ys[i] - offset0;
    if (h >= 0.5 * amp0) {
      sw += h;
      sx += h * xs[i];
    }
  }
  std::vector<double> sorted(xs.begin(), xs.end());
  std::sort(sorted.begin(), sorted.end());
  double spacing = xmax - xmin;
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i] > sorted[i - 1]) spacing = std::min(spacing, sorted[i] - sorted[i - 1]);
  for (std::size_t i = 0; i < xs.size(); ++i) area += std::max(0.0, ys[i] - offset0) * spacing;
  const double mu0 = sx / sw;
  const double sigma0 = std::clamp(area / (amp0 * std::sqrt(2.0 * std::numbers::pi)), 0.5 * spacing,
                                   std::max(xmax - xmin, spacing));

  Eigen::VectorXd p0(4);
  p0 << amp0, mu0, sigma0, offset0;
  const Gaussian1DModel model{xs};
  const LmResult r = levenberg_marquardt(model, ys, weights, p0, opt);

  GaussianFit fit;
  fit.params = r.params;
  fit.covariance = r.covariance;
  fit.amplitude = r.params[0];
  fit.center = r.params[1];
  fit.sigma = std::abs(r.params[2]);
  fit.offset = r.params[3];
  fit.converged = r.converged && fit.sigma > 0.0;
  fit.iterations = r.iterations;
  fit.residual_norm = r.residual_norm;
  return fit;
}

/// Rotated 2D Gaussian fit over scattered (a, b) cells.
inline GaussianFit fit_gaussian_2d(std::span<const double> as, std::span<const double> bs,
                                   std::span<const double> ys, std::span<const double> weights,
                                   const LmOptions& opt = {}) {
  if (as.size() != ys.size() || bs.size() != ys.size() || weights.size() != ys.size())
    throw Error(ErrorCode::DegenerateInput, "size mismatch");
  detail::check_inputs(ys, weights, 12);

  const auto [lo_it, hi_it] = std::minmax_element(ys.begin(), ys.end());
  const double offset0 = *lo_it;
  const double amp0 = *hi_it - *lo_it;
  double sw = 0.0, sa = 0.0, sb = 0.0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const double h = ys[i] - offset0;
    if (h < 0.5 * amp0) continue;
    sw += h;
    sa += h * as[i];
    sb += h * bs[i];
  }
  const double ca0 = sa / sw;
  const double cb0 = sb / sw;
  double spp = 0.0, smm = 0.0, sw2 = 0.0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const double h = ys[i] - offset0;
    if (h < 0.2 * amp0) continue;
    const double up = ((as[i] - ca0) + (bs[i] - cb0)) / std::numbers::sqrt2;
    const double um = ((as[i] - ca0) - (bs[i] - cb0)) / std::numbers::sqrt2;
    sw2 += h;
    spp += h * up * up;
    smm += h * um * um;
  }
  Eigen::VectorXd p0(6);
  p0 << amp0, ca0, cb0, std::max(0.5, std::sqrt(spp / sw2)), std::max(0.5, std::sqrt(smm / sw2)), offset0;
  const Gaussian2DModel model{as, bs};
  const LmResult r = levenberg_marquardt(model, ys, weights, p0, opt);

  GaussianFit fit;
  fit.params = r.params;
  fit.covariance = r.covariance;
  fit.amplitude = r.params[0];
  fit.center = r.params[1];
  fit.center_b = r.params[2];
  fit.sigma_plus = std::abs(r.params[3]);
  fit.sigma_minus = std::abs(r.params[4]);
  fit.offset = r.params[5];
  fit.converged = r.converged && fit.sigma_plus > 0.0 && fit.sigma_minus > 0.0;
  fit.iterations = r.iterations;
  fit.residual_norm = r.residual_norm;
  return fit;
}

}  // namespace spadcorr
