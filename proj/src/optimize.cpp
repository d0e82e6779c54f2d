#include "nvcharge/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_min.h>
#include <gsl/gsl_multimin.h>
#include <unsupported/Eigen/LevenbergMarquardt>

#include "nvcharge/error.hpp"

namespace nvcharge::optimize {

namespace {

// Stand-in for a non-finite residual or objective. Large enough to lose every
// comparison, small enough that squares and sums stay finite.
constexpr double kPenalty = 1e100;

// Central differences with step relative_step * max(1, |x_k|). Eigen's
// NumericalDiff scales by |x_k| alone, which degenerates for coordinates that
// converge to zero (a logit at 1/2, a log at 1).
Matrix central_jacobian(const ResidualFunction& f, const Vector& x, Eigen::Index m, double relative_step) {
  Matrix J(m, x.size());
  Vector xp = x;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double h = relative_step * std::max(1.0, std::abs(x(k)));
    xp(k) = x(k) + h;
    const Vector rp = f(xp);
    xp(k) = x(k) - h;
    const Vector rm = f(xp);
    xp(k) = x(k);
    J.col(k) = (rp - rm) / (2.0 * h);
  }
  return J;
}

struct ResidualFunctor : Eigen::DenseFunctor<double> {
  ResidualFunctor(const ResidualFunction& f, int inputs, int values, double step)
      : Eigen::DenseFunctor<double>(inputs, values), f(&f), step(step) {}

  int operator()(const InputType& x, ValueType& fvec) const {
    fvec = (*f)(x);
    if (!fvec.allFinite()) fvec.setConstant(kPenalty);
    return 0;
  }

  int df(const InputType& x, JacobianType& fjac) const {
    const ResidualFunction guarded = [this](const Vector& u) {
      ValueType r;
      (*this)(u, r);
      return r;
    };
    fjac = central_jacobian(guarded, x, values(), step);
    return 0;
  }

  const ResidualFunction* f;
  double step;
};

void disable_gsl_abort() {
  static const bool once = [] {
    gsl_set_error_handler_off();
    return true;
  }();
  (void)once;
}

bool converged_status(Eigen::LevenbergMarquardtSpace::Status s) {
  using namespace Eigen::LevenbergMarquardtSpace;
  switch (s) {
    case RelativeReductionTooSmall:
    case RelativeErrorTooSmall:
    case RelativeErrorAndReductionTooSmall:
    case CosinusTooSmall:
    // The remaining three mean no further progress is possible at machine
    // precision, i.e. a stationary point.
    case FtolTooSmall:
    case XtolTooSmall:
    case GtolTooSmall:
      return true;
    default:
      return false;
  }
}

}  // namespace

Matrix numerical_jacobian(const ResidualFunction& f, const Vector& x, double relative_step) {
  return central_jacobian(f, x, f(x).size(), relative_step);
}

LevenbergMarquardtResult levenberg_marquardt(const ResidualFunction& residuals, const Vector& x0,
                                             const LevenbergMarquardtOptions& options) {
  LevenbergMarquardtResult out;
  out.x = x0;
  out.residuals = residuals(x0);
  if (!out.residuals.allFinite()) {
    throw Error(ErrorKind::numeric, "residuals are not finite at the starting point");
  }
  const int n = static_cast<int>(x0.size());
  const int m = static_cast<int>(out.residuals.size());

  ResidualFunctor functor(residuals, n, m, options.fd_step);
  Eigen::LevenbergMarquardt<ResidualFunctor> lm(functor);
  lm.setFtol(options.relative_tolerance);
  lm.setGtol(options.gradient_tolerance);
  lm.setXtol(std::numeric_limits<double>::epsilon());
  lm.setMaxfev(std::numeric_limits<int>::max() / 4);

  auto status = lm.minimizeInit(out.x);
  if (status == Eigen::LevenbergMarquardtSpace::ImproperInputParameters) {
    throw Error(ErrorKind::invalid_argument, "damped least squares: fewer residuals than parameters");
  }
  out.sse_history.push_back(lm.fnorm() * lm.fnorm());

  do {
    if (out.iterations == options.max_iterations) {
      throw Error(ErrorKind::convergence, "damped least squares did not converge within " +
                                              std::to_string(options.max_iterations) + " iterations");
    }
    status = lm.minimizeOneStep(out.x);
    ++out.iterations;
    const double sse = lm.fnorm() * lm.fnorm();
    if (sse < out.sse_history.back()) out.sse_history.push_back(sse);
  } while (status == Eigen::LevenbergMarquardtSpace::Running);

  if (!converged_status(status)) {
    throw Error(ErrorKind::convergence, "damped least squares stopped without converging (status " +
                                            std::to_string(static_cast<int>(status)) + ")");
  }
  out.converged = true;
  out.residuals = residuals(out.x);
  out.sse = out.residuals.squaredNorm();
  out.jacobian = numerical_jacobian(residuals, out.x, options.fd_step);
  return out;
}

NelderMeadResult nelder_mead(const ScalarFunction& f, const Vector& x0, const Vector& step,
                             const NelderMeadOptions& options) {
  disable_gsl_abort();
  const auto n = static_cast<std::size_t>(x0.size());
  NelderMeadResult best{x0, f(x0), 1};
  if (!std::isfinite(best.value)) throw Error(ErrorKind::numeric, "objective is not finite at the starting point");

  struct Context {
    const ScalarFunction* f;
    int* evaluations;
  } context{&f, &best.evaluations};

  gsl_multimin_function fn;
  fn.n = n;
  fn.params = &context;
  fn.f = [](const gsl_vector* v, void* p) {
    auto* c = static_cast<Context*>(p);
    ++*c->evaluations;
    const Eigen::Map<const Vector, 0, Eigen::InnerStride<>> x(v->data, static_cast<Eigen::Index>(v->size),
                                                              Eigen::InnerStride<>(static_cast<Eigen::Index>(v->stride)));
    const double value = (*c->f)(x);
    return std::isfinite(value) ? value : kPenalty;
  };

  using VectorPtr = std::unique_ptr<gsl_vector, decltype(&gsl_vector_free)>;
  VectorPtr x(gsl_vector_alloc(n), &gsl_vector_free);
  VectorPtr steps(gsl_vector_alloc(n), &gsl_vector_free);
  for (std::size_t k = 0; k < n; ++k) gsl_vector_set(steps.get(), k, step(static_cast<Eigen::Index>(k)));
  std::unique_ptr<gsl_multimin_fminimizer, decltype(&gsl_multimin_fminimizer_free)> solver(
      gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n), &gsl_multimin_fminimizer_free);

  // Restart from the best vertex until a fresh simplex stops improving; a
  // single run can collapse onto a face before reaching the minimum.
  for (int restart = 0; restart <= options.restarts; ++restart) {
    for (std::size_t k = 0; k < n; ++k) gsl_vector_set(x.get(), k, best.x(static_cast<Eigen::Index>(k)));
    if (gsl_multimin_fminimizer_set(solver.get(), &fn, x.get(), steps.get()) != GSL_SUCCESS) {
      throw Error(ErrorKind::numeric, "simplex initialization failed");
    }
    while (best.evaluations < options.max_evaluations) {
      if (gsl_multimin_fminimizer_iterate(solver.get()) != GSL_SUCCESS) break;
      const double size = gsl_multimin_fminimizer_size(solver.get());
      if (gsl_multimin_test_size(size, options.x_tolerance) == GSL_SUCCESS) break;
    }
    const double value = gsl_multimin_fminimizer_minimum(solver.get());
    const double improvement = best.value - value;
    if (value <= best.value) {
      const gsl_vector* xm = gsl_multimin_fminimizer_x(solver.get());
      for (std::size_t k = 0; k < n; ++k) best.x(static_cast<Eigen::Index>(k)) = gsl_vector_get(xm, k);
      best.value = value;
    }
    if (restart > 0 && improvement <= options.f_tolerance * (1.0 + std::abs(best.value))) break;
  }
  return best;
}

ScalarOptimum golden_section_maximize(const std::function<double(double)>& f, double lo, double mid, double hi,
                                      double tolerance) {
  disable_gsl_abort();
  gsl_function fn;
  fn.params = const_cast<std::function<double(double)>*>(&f);
  fn.function = [](double x, void* p) { return -(*static_cast<std::function<double(double)>*>(p))(x); };

  std::unique_ptr<gsl_min_fminimizer, decltype(&gsl_min_fminimizer_free)> solver(
      gsl_min_fminimizer_alloc(gsl_min_fminimizer_goldensection), &gsl_min_fminimizer_free);
  if (gsl_min_fminimizer_set(solver.get(), &fn, mid, lo, hi) != GSL_SUCCESS) {
    throw Error(ErrorKind::invalid_argument, "golden-section search needs f(mid) above both ends of the bracket");
  }
  for (int iter = 0; iter < 500; ++iter) {
    if (gsl_min_fminimizer_iterate(solver.get()) != GSL_SUCCESS) break;
    const double a = gsl_min_fminimizer_x_lower(solver.get());
    const double b = gsl_min_fminimizer_x_upper(solver.get());
    if (gsl_min_test_interval(a, b, tolerance, 0.0) == GSL_SUCCESS) break;
  }
  return {gsl_min_fminimizer_x_minimum(solver.get()), -gsl_min_fminimizer_f_minimum(solver.get())};
}

ScalarOptimum scan_and_refine_maximum(const std::function<double(double)>& f,
                                      const std::vector<double>& grid, double tolerance) {
  if (grid.empty()) throw Error(ErrorKind::invalid_argument, "empty search grid");
  std::vector<double> values(grid.size());
  std::transform(grid.begin(), grid.end(), values.begin(), f);
  const std::size_t k = std::max_element(values.begin(), values.end()) - values.begin();
  ScalarOptimum best{grid[k], values[k]};
  // Refinement needs a strict interior bracket; an edge or flat maximum is
  // reported at grid resolution.
  if (k == 0 || k + 1 >= grid.size() || !(values[k] > values[k - 1] && values[k] > values[k + 1])) return best;
  const ScalarOptimum refined = golden_section_maximize(f, grid[k - 1], grid[k], grid[k + 1], tolerance);
  return refined.value >= best.value ? refined : best;
}

}  // namespace nvcharge::optimize
