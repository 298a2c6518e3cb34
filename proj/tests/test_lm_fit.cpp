#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <array>
#include <numbers>
#include <random>

#include "spadcorr/lm_fit.hpp"

using namespace spadcorr;

namespace {

double gauss(double x, double a, double mu, double s, double off) {
  return a * std::exp(-0.5 * (x - mu) * (x - mu) / (s * s)) + off;
}

std::vector<double> grid(double lo, double hi, double step) {
  std::vector<double> x;
  for (double v = lo; v <= hi + 1e-12; v += step) x.push_back(v);
  return x;
}

struct Grid2D {
  std::vector<double> a, b;
};

Grid2D square_grid(int n) {
  Grid2D g;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      g.a.push_back(i);
      g.b.push_back(j);
    }
  return g;
}

double gauss2(double a, double b, const std::array<double, 6>& p) {
  const double up = ((a - p[1]) + (b - p[2])) / std::numbers::sqrt2;
  const double um = ((a - p[1]) - (b - p[2])) / std::numbers::sqrt2;
  return p[0] * std::exp(-0.5 * up * up / (p[3] * p[3]) - 0.5 * um * um / (p[4] * p[4])) + p[5];
}

template <class M>
void expect_jacobian_matches_differences(const M& model, const Eigen::VectorXd& p) {
  Eigen::MatrixXd j;
  model.jacobian(p, j);
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    const double h = 1e-6 * std::max(1.0, std::abs(p[k]));
    Eigen::VectorXd lo = p, hi = p;
    lo[k] -= h;
    hi[k] += h;
    Eigen::VectorXd flo, fhi;
    model.evaluate(lo, flo);
    model.evaluate(hi, fhi);
    const Eigen::VectorXd fd = (fhi - flo) / (2 * h);
    const double scale = std::max(1e-3, fd.cwiseAbs().maxCoeff());
    EXPECT_LT((j.col(k) - fd).cwiseAbs().maxCoeff() / scale, 1e-6) << "parameter " << k;
  }
}

}  // namespace

TEST(Gaussian1D, NoiselessRecovery) {
  const auto x = grid(-10.0, 16.0, 0.5);
  std::vector<double> y, w(x.size(), 1.0);
  for (double v : x) y.push_back(gauss(v, 2.0, 3.0, 2.0, 0.0));
  const auto fit = fit_gaussian_1d(x, y, w);
  EXPECT_TRUE(fit.converged);
  EXPECT_NEAR(fit.amplitude, 2.0, 1e-6);
  EXPECT_NEAR(fit.center, 3.0, 1e-6);
  EXPECT_NEAR(fit.sigma, 2.0, 1e-6);
  EXPECT_NEAR(fit.offset, 0.0, 1e-6);
  EXPECT_LE(fit.iterations, 200);
}

TEST(Gaussian1D, JacobianMatchesFiniteDifferences) {
  const auto x = grid(-8.0, 8.0, 0.7);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.5, 3.0), c(-2.0, 2.0);
  for (int t = 0; t < 20; ++t) {
    Eigen::VectorXd p(4);
    p << u(rng), c(rng), u(rng), c(rng);
    expect_jacobian_matches_differences(Gaussian1DModel{x}, p);
  }
}

TEST(Gaussian2D, JacobianMatchesFiniteDifferences) {
  const auto g = square_grid(12);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(1.0, 4.0), c(3.0, 8.0);
  for (int t = 0; t < 20; ++t) {
    Eigen::VectorXd p(6);
    p << u(rng), c(rng), c(rng), u(rng), u(rng), u(rng) - 2.0;
    expect_jacobian_matches_differences(Gaussian2DModel{g.a, g.b}, p);
  }
}

TEST(Gaussian1D, PoissonErrorCalibration) {
  const auto x = grid(-20.0, 20.0, 1.0);
  const double sigma = 4.0;
  int within = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::mt19937_64 rng(1000 + trial);
    std::vector<double> y, w;
    for (double v : x) {
      std::poisson_distribution<long> pois(gauss(v, 1e4, 0.3, sigma, 5.0));
      const auto k = static_cast<double>(pois(rng));
      y.push_back(k);
      w.push_back(1.0 / std::max(k, 1.0));
    }
    const auto fit = fit_gaussian_1d(x, y, w);
    ASSERT_TRUE(fit.converged);
    if (std::abs(fit.sigma - sigma) <= 3.0 * fit.stderr_of(2)) ++within;
  }
  EXPECT_GE(within, 99);
}

TEST(LevenbergMarquardt, CostNeverIncreases) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> noise(0.0, 0.05);
  const auto x = grid(-6.0, 6.0, 0.25);
  std::vector<double> y, w(x.size(), 1.0);
  for (double v : x) y.push_back(gauss(v, 1.0, 0.5, 1.2, 0.1) + noise(rng));
  Eigen::VectorXd p0(4);
  p0 << 0.3, -2.0, 4.0, 0.0;  // deliberately poor start
  const auto r = levenberg_marquardt(Gaussian1DModel{x}, y, w, p0);
  ASSERT_GE(r.cost_history.size(), 2u);
  for (std::size_t i = 1; i < r.cost_history.size(); ++i) EXPECT_LE(r.cost_history[i], r.cost_history[i - 1]);

  const auto g = square_grid(16);
  std::vector<double> z, wz(g.a.size(), 1.0);
  for (std::size_t i = 0; i < g.a.size(); ++i) z.push_back(gauss2(g.a[i], g.b[i], {5, 8, 7, 3, 1.5, 0.2}) + noise(rng));
  Eigen::VectorXd q0(6);
  q0 << 1.0, 5.0, 10.0, 1.0, 4.0, 0.0;
  const auto r2 = levenberg_marquardt(Gaussian2DModel{g.a, g.b}, z, wz, q0);
  for (std::size_t i = 1; i < r2.cost_history.size(); ++i) EXPECT_LE(r2.cost_history[i], r2.cost_history[i - 1]);
}

TEST(Gaussian2D, NoiselessRecovery) {
  const auto g = square_grid(32);
  const std::array<double, 6> truth{100.0, 15.5, 16.2, 2.0, 6.0, 0.0};
  std::vector<double> y, w(g.a.size(), 1.0);
  for (std::size_t i = 0; i < g.a.size(); ++i) y.push_back(gauss2(g.a[i], g.b[i], truth));
  const auto fit = fit_gaussian_2d(g.a, g.b, y, w);
  EXPECT_TRUE(fit.converged);
  EXPECT_NEAR(fit.amplitude, 100.0, 1e-6);
  EXPECT_NEAR(fit.center, 15.5, 1e-6);
  EXPECT_NEAR(fit.center_b, 16.2, 1e-6);
  EXPECT_NEAR(fit.sigma_plus, 2.0, 1e-6);
  EXPECT_NEAR(fit.sigma_minus, 6.0, 1e-6);
  EXPECT_NEAR(fit.offset, 0.0, 1e-6);
}

TEST(Gaussian2D, IsotropicAndTransposeSymmetry) {
  const auto g = square_grid(20);
  const std::array<double, 6> truth{10.0, 9.0, 11.0, 3.0, 3.0, 0.5};
  std::mt19937_64 rng(4);
  std::normal_distribution<double> noise(0.0, 0.05);
  std::vector<double> y, w(g.a.size(), 1.0);
  for (std::size_t i = 0; i < g.a.size(); ++i) y.push_back(gauss2(g.a[i], g.b[i], truth) + noise(rng));
  const auto fit = fit_gaussian_2d(g.a, g.b, y, w);
  const auto swapped = fit_gaussian_2d(g.b, g.a, y, w);
  ASSERT_TRUE(fit.converged && swapped.converged);
  EXPECT_NEAR(fit.sigma_plus, fit.sigma_minus, 0.05);
  EXPECT_NEAR(fit.residual_norm, swapped.residual_norm, 1e-6 * fit.residual_norm);
  EXPECT_NEAR(fit.center, swapped.center_b, 1e-6);
  EXPECT_NEAR(fit.sigma_plus, swapped.sigma_plus, 1e-6);
  EXPECT_NEAR(fit.sigma_minus, swapped.sigma_minus, 1e-6);
}

TEST(GaussianFit, CovarianceSymmetricPositiveSemidefinite) {
  const auto x = grid(-10.0, 10.0, 1.0);
  std::mt19937_64 rng(5);
  std::vector<double> y, w;
  for (double v : x) {
    std::poisson_distribution<long> pois(gauss(v, 500, 0.0, 3.0, 2.0));
    y.push_back(static_cast<double>(pois(rng)));
    w.push_back(1.0 / std::max(y.back(), 1.0));
  }
  const auto fit = fit_gaussian_1d(x, y, w);
  EXPECT_LT((fit.covariance - fit.covariance.transpose()).cwiseAbs().maxCoeff(), 1e-15);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(fit.covariance);
  EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12 * es.eigenvalues().cwiseAbs().maxCoeff());
}

TEST(GaussianFit, DegenerateInputs) {
  auto code_of = [](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::ConfigError;
  };
  const std::vector<double> x4{0, 1, 2, 3}, y4{1, 2, 1, 0}, w4(4, 1.0);
  EXPECT_EQ(code_of([&] { fit_gaussian_1d(x4, y4, w4); }), ErrorCode::DegenerateInput);
  const std::vector<double> x{0, 1, 2, 3, 4, 5}, flat(6, 3.0), w(6, 1.0);
  EXPECT_EQ(code_of([&] { fit_gaussian_1d(x, flat, w); }), ErrorCode::DegenerateInput);
  std::vector<double> y{0, 1, 3, 1, 0, NAN};
  EXPECT_EQ(code_of([&] { fit_gaussian_1d(x, y, w); }), ErrorCode::DegenerateInput);
  y.back() = 0.0;
  std::vector<double> wneg(6, 1.0);
  wneg[2] = -1.0;
  EXPECT_EQ(code_of([&] { fit_gaussian_1d(x, y, wneg); }), ErrorCode::DegenerateInput);
  std::vector<double> wzero(6, 0.0);
  EXPECT_EQ(code_of([&] { fit_gaussian_1d(x, y, wzero); }), ErrorCode::DegenerateInput);
  const auto g = square_grid(3);
  std::vector<double> z(9, 0.0), wz(9, 1.0);
  z[4] = 1.0;
  EXPECT_EQ(code_of([&] { fit_gaussian_2d(g.a, g.b, z, wz); }), ErrorCode::DegenerateInput);
}
