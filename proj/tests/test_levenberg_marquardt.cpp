#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "micromotion/levenberg_marquardt.hpp"
#include "oracles.hpp"

using namespace micromotion;
using Catch::Approx;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

}  // namespace

TEST_CASE("t quantile", "[lm]") {
  CHECK(t_quantile(1) == Approx(12.706204736).epsilon(1e-8));
  CHECK(t_quantile(10) == Approx(2.228138852).epsilon(1e-8));
  // Large dof: z + (z^3 + z) / (4 nu) with the normal quantile z.
  const double z = 1.959963984540054;
  CHECK(t_quantile(100000) == Approx(z + (z * z * z + z) / 4e5).epsilon(1e-9));
  CHECK_THROWS_AS(t_quantile(0), InsufficientDataError);
}

TEST_CASE("slope through the origin from noiseless data", "[lm]") {
  const std::vector<double> x{0.5, 1.0, 1.7, 2.2, 3.1, 4.0};
  const double p = -2.75;
  auto residual = [&](const Eigen::VectorXd& q) {
    Eigen::VectorXd r(static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) r[static_cast<Eigen::Index>(i)] = p * x[i] - q[0] * x[i];
    return r;
  };
  LmOptions options;
  options.gradient_tolerance = 1e-13;
  const auto res = levenberg_marquardt(residual, vec({1.0}), options);
  CHECK(res.params[0] == Approx(p).epsilon(1e-12));
  CHECK(res.chi2 < 1e-20);
}

TEST_CASE("weighted straight line matches the normal equations", "[lm]") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> x, y, w;
  for (int i = 0; i < 25; ++i) {
    x.push_back(-1.0 + 0.1 * i);
    const double sigma = 0.05 + 0.01 * (i % 4);
    w.push_back(1.0 / (sigma * sigma));
    y.push_back(0.3 + 1.9 * x.back() + sigma * noise(rng));
  }
  // Closed-form weighted regression.
  double s = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    s += w[i];
    sx += w[i] * x[i];
    sy += w[i] * y[i];
    sxx += w[i] * x[i] * x[i];
    sxy += w[i] * x[i] * y[i];
  }
  const double det = s * sxx - sx * sx;
  const double intercept = (sxx * sy - sx * sxy) / det;
  const double slope = (s * sxy - sx * sy) / det;
  double chi2 = 0;
  for (std::size_t i = 0; i < x.size(); ++i) chi2 += w[i] * std::pow(y[i] - intercept - slope * x[i], 2);
  const double red = chi2 / (x.size() - 2.0);

  auto model = [&](const Eigen::VectorXd& q) {
    Eigen::VectorXd f(static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) f[static_cast<Eigen::Index>(i)] = q[0] + q[1] * x[i];
    return f;
  };
  const auto res = weighted_curve_fit(model, y, w, vec({0.0, 0.0}));
  REQUIRE(res.converged);
  const double se_slope = std::sqrt(red * s / det);
  const double se_int = std::sqrt(red * sxx / det);
  // The solver stops at a gradient cosine of 1e-6, i.e. far inside one standard error.
  CHECK(std::abs(res.params[0] - intercept) < 1e-5 * se_int);
  CHECK(std::abs(res.params[1] - slope) < 1e-5 * se_slope);
  CHECK(res.chi2 == Approx(chi2).epsilon(1e-10));
  CHECK(res.dof == 23);
  CHECK(res.covariance(1, 1) == Approx(se_slope * se_slope).epsilon(1e-6));
  CHECK(res.covariance(0, 0) == Approx(se_int * se_int).epsilon(1e-6));
  CHECK(res.covariance(0, 1) == Approx(-red * sx / det).epsilon(1e-6));
  CHECK(res.ci95[1] == Approx(t_quantile(23) * se_slope).epsilon(1e-6));
}

TEST_CASE("quadratic least squares matches the normal equations", "[lm]") {
  oracle::Generator gen(5);
  const int m = 30;
  Eigen::MatrixXd design(m, 3);
  Eigen::VectorXd y(m);
  for (int i = 0; i < m; ++i) {
    const double x = -2.0 + 4.0 * i / (m - 1);
    design.row(i) << 1.0, x, x * x;
    y[i] = 1.0 - 0.5 * x + 0.25 * x * x + gen.uniform(-0.1, 0.1);
  }
  const Eigen::VectorXd exact = (design.transpose() * design).ldlt().solve(design.transpose() * y);
  auto residual = [&](const Eigen::VectorXd& q) -> Eigen::VectorXd { return y - design * q; };
  LmOptions options;
  options.gradient_tolerance = 1e-10;
  const auto res = levenberg_marquardt(residual, vec({5.0, 5.0, -5.0}), options);
  for (int j = 0; j < 3; ++j) CHECK(res.params[j] == Approx(exact[j]).margin(1e-8));
}

TEST_CASE("exact data started at the truth converges at once", "[lm]") {
  std::vector<double> t, y;
  for (int i = 0; i < 20; ++i) {
    t.push_back(0.1 * i);
    y.push_back(2.0 * std::exp(-1.3 * t.back()) + 0.4);
  }
  auto residual = [&](const Eigen::VectorXd& q) {
    Eigen::VectorXd r(20);
    for (int i = 0; i < 20; ++i) r[i] = y[i] - (q[0] * std::exp(-q[1] * t[i]) + q[2]);
    return r;
  };
  const auto res = levenberg_marquardt(residual, vec({2.0, 1.3, 0.4}));
  CHECK(res.converged);
  CHECK(res.iterations <= 2);
  CHECK(res.residuals.norm() < 1e-12);
  // A cold start reaches the same point.
  const auto cold = levenberg_marquardt(residual, vec({1.0, 0.5, 0.0}));
  CHECK(cold.converged);
  CHECK(cold.params[1] == Approx(1.3).epsilon(1e-6));
}

TEST_CASE("numeric jacobian is stable under the step size", "[lm]") {
  auto f = [](const Eigen::VectorXd& q) {
    Eigen::VectorXd r(3);
    r << std::sin(q[0]) * q[1], std::exp(0.3 * q[0]) - q[1] * q[1], q[0] * q[1] * q[1];
    return r;
  };
  const Eigen::VectorXd at = vec({0.7, -1.4});
  const auto a = numeric_jacobian(f, at, 1e-6);
  const auto b = numeric_jacobian(f, at, 1e-4);
  Eigen::MatrixXd exact(3, 2);
  exact << std::cos(0.7) * -1.4, std::sin(0.7), 0.3 * std::exp(0.21), 2.8, 1.96, 2 * 0.7 * -1.4;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 2; ++j) {
      CHECK(a(i, j) == Approx(b(i, j)).epsilon(1e-4));
      CHECK(a(i, j) == Approx(exact(i, j)).epsilon(1e-8));
    }
  }
}

TEST_CASE("redundant parameters are a degenerate fit", "[lm]") {
  std::vector<double> x{0, 1, 2, 3, 4, 5};
  auto residual = [&](const Eigen::VectorXd& q) {
    Eigen::VectorXd r(6);
    for (int i = 0; i < 6; ++i) r[i] = (1.0 + 2.0 * x[i]) - ((q[0] + q[1]) + q[2] * x[i]);
    return r;
  };
  CHECK_THROWS_AS(levenberg_marquardt(residual, vec({0.0, 0.0, 0.0})), DegenerateFitError);
}

TEST_CASE("too few observations", "[lm]") {
  auto residual = [](const Eigen::VectorXd& q) {
    Eigen::VectorXd r(2);
    r << q[0] - 1.0, q[1] - 2.0;
    return r;
  };
  CHECK_THROWS_AS(levenberg_marquardt(residual, vec({0.0, 0.0})), InsufficientDataError);
  CHECK_THROWS_AS(levenberg_marquardt(residual, vec({std::nan(""), 0.0})), InitializationError);
}

TEST_CASE("iteration cap reports non-convergence with a partial result", "[lm]") {
  std::vector<double> t, y;
  for (int i = 0; i < 20; ++i) {
    t.push_back(0.1 * i);
    y.push_back(2.0 * std::exp(-1.3 * t.back()));
  }
  auto residual = [&](const Eigen::VectorXd& q) {
    Eigen::VectorXd r(20);
    for (int i = 0; i < 20; ++i) r[i] = y[i] - q[0] * std::exp(-q[1] * t[i]);
    return r;
  };
  LmOptions options;
  options.max_iterations = 1;
  const auto res = levenberg_marquardt(residual, vec({0.2, 5.0}), options);
  CHECK_FALSE(res.converged);
  CHECK(res.iterations == 1);
  CHECK(res.params.allFinite());
}

TEST_CASE("weighted curve fit validates its inputs", "[lm]") {
  auto model = [](const Eigen::VectorXd& q) {
    Eigen::VectorXd f(3);
    f.setConstant(q[0]);
    return f;
  };
  const std::vector<double> y{1, 2, 3};
  CHECK_THROWS_AS(weighted_curve_fit(model, y, std::vector<double>{1, 1}, vec({0.0})), DataError);
  CHECK_THROWS_AS(weighted_curve_fit(model, y, std::vector<double>{1, -1, 1}, vec({0.0})), DataError);
  const auto res = weighted_curve_fit(model, y, std::vector<double>{1, 1, 1}, vec({0.0}));
  // Standard error of the mean here is sqrt(1/3); the stop criterion holds it far inside that.
  CHECK(res.params[0] == Approx(2.0).margin(1e-5));
}
