#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace nvcharge::optimize {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Damped least squares (Eigen's MINPACK-derived Levenberg-Marquardt).

using ResidualFunction = std::function<Vector(const Vector&)>;

struct LevenbergMarquardtOptions {
  int max_iterations = 500;
  double relative_tolerance = 1e-10;  // relative SSE reduction, actual and predicted
  double gradient_tolerance = 1e-8;   // scaled cosine between r and the columns of J
  double fd_step = 1e-6;              // relative central-difference step
};

struct LevenbergMarquardtResult {
  Vector x;
  Vector residuals;
  Matrix jacobian;
  double sse = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> sse_history;  // SSE after every accepted step, starting point first
};

/// Central-difference Jacobian of `f` at `x`; the step is relative_step * max(1, |x_k|).
Matrix numerical_jacobian(const ResidualFunction& f, const Vector& x, double relative_step = 1e-6);

/// Minimizes |r(x)|^2. Throws Error(convergence) when max_iterations is hit.
LevenbergMarquardtResult levenberg_marquardt(const ResidualFunction& residuals, const Vector& x0,
                                             const LevenbergMarquardtOptions& options = {});

// ---------------------------------------------------------------------------
// Derivative-free simplex search (GSL nmsimplex2).

using ScalarFunction = std::function<double(const Vector&)>;

struct NelderMeadOptions {
  int max_evaluations = 20000;
  double f_tolerance = 1e-10;  // improvement below which restarts stop
  double x_tolerance = 1e-9;   // characteristic simplex size
  int restarts = 3;            // restart from the best vertex to escape collapse
};

struct NelderMeadResult {
  Vector x;
  double value = 0.0;
  int evaluations = 0;
};

NelderMeadResult nelder_mead(const ScalarFunction& f, const Vector& x0, const Vector& step,
                             const NelderMeadOptions& options = {});

// ---------------------------------------------------------------------------
// One-dimensional maximization.

struct ScalarOptimum {
  double x = 0.0;
  double value = 0.0;
};

/// Golden-section search for a maximum bracketed by lo < mid < hi with
/// f(mid) above f(lo) and f(hi).
ScalarOptimum golden_section_maximize(const std::function<double(double)>& f, double lo, double mid, double hi,
                                      double tolerance = 1e-6);

/// Grid scan followed by golden-section refinement on the bracket around the
/// best grid point.
ScalarOptimum scan_and_refine_maximum(const std::function<double(double)>& f,
                                      const std::vector<double>& grid, double tolerance = 1e-6);

}  // namespace nvcharge::optimize
