#include <doctest.h>

#include <cmath>

#include "nvcharge/error.hpp"
#include "nvcharge/optimize.hpp"

using namespace nvcharge;
using namespace nvcharge::optimize;

TEST_CASE("central-difference Jacobian of a smooth map") {
  const ResidualFunction f = [](const Vector& x) {
    Vector r(2);
    r << x(0) * x(0) * x(1), std::sin(x(1));
    return r;
  };
  Vector x(2);
  x << 1.5, 0.3;
  const Matrix J = numerical_jacobian(f, x);
  CHECK(J(0, 0) == doctest::Approx(2 * 1.5 * 0.3).epsilon(1e-8));
  CHECK(J(0, 1) == doctest::Approx(2.25).epsilon(1e-8));
  CHECK(J(1, 0) == doctest::Approx(0.0));
  CHECK(J(1, 1) == doctest::Approx(std::cos(0.3)).epsilon(1e-8));
}

TEST_CASE("Levenberg-Marquardt fits a decaying exponential with monotone SSE") {
  Vector t(20), y(20);
  for (int i = 0; i < 20; ++i) {
    t(i) = 0.25 * i;
    y(i) = 3.0 * std::exp(-0.7 * t(i)) + 0.1;
  }
  const ResidualFunction r = [&](const Vector& x) {
    return Vector(y.array() - (x(0) * (-x(1) * t.array()).exp() + x(2)));
  };
  Vector x0(3);
  x0 << 1.0, 0.2, 0.0;
  const auto res = levenberg_marquardt(r, x0);
  CHECK(res.converged);
  CHECK(res.x(0) == doctest::Approx(3.0).epsilon(1e-6));
  CHECK(res.x(1) == doctest::Approx(0.7).epsilon(1e-6));
  CHECK(res.x(2) == doctest::Approx(0.1).epsilon(1e-5));
  for (std::size_t k = 1; k < res.sse_history.size(); ++k) CHECK(res.sse_history[k] < res.sse_history[k - 1]);
}

TEST_CASE("Levenberg-Marquardt reports non-convergence") {
  const ResidualFunction rosen = [](const Vector& x) {
    Vector r(2);
    r << 10.0 * (x(1) - x(0) * x(0)), 1.0 - x(0);
    return r;
  };
  Vector x0(2);
  x0 << -1.2, 1.0;
  LevenbergMarquardtOptions opts;
  opts.max_iterations = 2;
  CHECK_THROWS_AS(levenberg_marquardt(rosen, x0, opts), Error);
  const auto ok = levenberg_marquardt(rosen, x0);
  CHECK(ok.x(0) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("Nelder-Mead minimizes a quadratic bowl") {
  const ScalarFunction f = [](const Vector& x) { return (x(0) - 1.0) * (x(0) - 1.0) + 4.0 * (x(1) + 2.0) * (x(1) + 2.0); };
  const auto res = nelder_mead(f, Vector::Zero(2), Vector::Constant(2, 0.5));
  CHECK(res.x(0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(res.x(1) == doctest::Approx(-2.0).epsilon(1e-6));
  CHECK(res.value < 1e-10);
}

TEST_CASE("one-dimensional maximization") {
  const auto f = [](double x) { return -std::pow(x - 2.345678, 2); };
  const auto g = golden_section_maximize(f, 0.0, 1.0, 5.0, 1e-9);
  CHECK(g.x == doctest::Approx(2.345678).epsilon(1e-8));
  std::vector<double> grid;
  for (int i = 0; i <= 50; ++i) grid.push_back(0.2 * i);
  const auto s = scan_and_refine_maximum(f, grid, 1e-9);
  CHECK(s.x == doctest::Approx(2.345678).epsilon(1e-8));
  const auto edge = scan_and_refine_maximum([](double x) { return x; }, grid, 1e-9);
  CHECK(edge.x == doctest::Approx(10.0));
  CHECK_THROWS_AS(golden_section_maximize(f, 3.0, 4.0, 5.0), Error);
}
