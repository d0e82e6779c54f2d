// Independent reference computations used only by the tests.
#pragma once

#include <array>
#include <cmath>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "nvcharge/parameters.hpp"
#include "nvcharge/photon_stats.hpp"
#include "nvcharge/sequence.hpp"

namespace oracle {

using Mat7 = Eigen::Matrix<double, 7, 7>;
using Vec7 = Eigen::Matrix<double, 7, 1>;

// Level order: g-(0), g-(+-1), e-(0), e-(+-1), singlet, g0, e0.
struct Transition {
  int from;
  int to;
  double rate;
};

/// Transition list written out from the level diagram, one line per arrow.
inline std::vector<Transition> transitions(const nvcharge::RateParameters& p, nvcharge::SegmentKind kind,
                                           double power_uW, bool absorbing = false) {
  const int ion = p.ionization_target == nvcharge::IonizationTarget::ground ? 5 : 6;
  const double t0 = p.gamma0_inv, t1 = p.gamma1_inv;
  std::vector<Transition> out;
  auto arrow = [&out](int from, int to, double rate) { out.push_back({from, to, rate}); };
  arrow(2, 0, (1.0 - p.beta0) / t0);
  arrow(2, 4, p.beta0 / t0);
  arrow(3, 1, (1.0 - p.beta1) / t1);
  arrow(3, 4, p.beta1 / t1);
  arrow(4, 0, 1.0 / p.D_inv);
  arrow(6, 5, 1.0 / p.eta_inv);
  if (kind == nvcharge::SegmentKind::green) {
    const double G = p.g_cal * power_uW;
    arrow(0, 2, G);
    arrow(1, 3, G);
    arrow(2, ion, p.a * G);
    arrow(3, ion, p.a * G);
    arrow(5, 6, p.c * G);
    if (!absorbing) {
      arrow(6, 0, p.b * G / 2);
      arrow(6, 1, p.b * G / 2);
    }
  }
  if (kind == nvcharge::SegmentKind::red) {
    const double R = p.r_cal * power_uW;
    double Is = p.Is_rate * R / p.R0;
    if (p.is_scaling == nvcharge::SingletScaling::quadratic) Is *= R / p.R0;
    arrow(2, 0, R);
    arrow(3, 1, R);
    arrow(2, ion, p.d * R);
    arrow(3, ion, p.d * R);
    arrow(6, 5, p.f * R);
    arrow(4, ion, Is);
    if (!absorbing) {
      arrow(6, 0, p.e * R / 2);
      arrow(6, 1, p.e * R / 2);
    }
  }
  return out;
}

inline Mat7 generator(const nvcharge::RateParameters& p, nvcharge::SegmentKind kind, double power_uW,
                      bool absorbing = false) {
  Mat7 L = Mat7::Zero();
  for (const auto& t : transitions(p, kind, power_uW, absorbing)) {
    L(t.to, t.from) += t.rate;
    L(t.from, t.from) -= t.rate;
  }
  return L;
}

/// Classical fourth-order Runge-Kutta with a fixed step.
template <typename Matrix, typename Vector>
Vector rk4(const Matrix& L, Vector p, double t, double h) {
  const long steps = std::lround(t / h);
  h = t / static_cast<double>(steps);
  for (long i = 0; i < steps; ++i) {
    const Vector k1 = L * p;
    const Vector k2 = L * (p + 0.5 * h * k1);
    const Vector k3 = L * (p + 0.5 * h * k2);
    const Vector k4 = L * (p + h * k3);
    p += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return p;
}

/// Joint (count, charge) evolution of the modulated Poisson process:
/// d/dt x_n = (Q - M) x_n + M x_{n-1}, solved with one exponential of the
/// block-bidiagonal generator. Returns P(n, final charge | initial) as
/// [n][0 = NV-, 1 = NV0].
inline std::vector<std::array<double, 2>> modulated_poisson(const nvcharge::YellowRates& r, double t,
                                                            bool start_minus, int n_max) {
  const int dim = 2 * (n_max + 1);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(dim, dim);
  const double mu[2] = {r.mu_minus, r.mu_zero};
  for (int n = 0; n <= n_max; ++n) {
    const int i = 2 * n;
    A(i + 1, i) += r.gamma_minus;
    A(i, i) -= r.gamma_minus;
    A(i, i + 1) += r.gamma_zero;
    A(i + 1, i + 1) -= r.gamma_zero;
    for (int s = 0; s < 2; ++s) {
      A(i + s, i + s) -= mu[s];
      if (n < n_max) A(i + 2 + s, i + s) += mu[s];
    }
  }
  Eigen::VectorXd x = Eigen::VectorXd::Zero(dim);
  x(start_minus ? 0 : 1) = 1.0;
  const Eigen::MatrixXd E = (A * t).exp();
  const Eigen::VectorXd y = E * x;
  std::vector<std::array<double, 2>> out(n_max + 1);
  for (int n = 0; n <= n_max; ++n) out[n] = {y(2 * n), y(2 * n + 1)};
  return out;
}

/// Enumerates the four-stage probability tree: first readout result, charge
/// after it, experiment outcome, second readout result.
inline void repeat_tree(double P_I, double P_R, double I0, double Im, double R0, double Rm, double& Q0, double& Qm) {
  // charge index 0 = NV0, 1 = NV-
  const double switch_from[2] = {P_R, P_I};
  const double read_zero[2] = {R0, 1.0 - Rm};  // P(result m0 | charge)
  auto second_same = [&](int first_result) {
    const double init_correct = first_result == 0 ? I0 : Im;
    double q = 0.0;
    for (int charge = 0; charge < 2; ++charge) {
      const double pc = charge == first_result ? init_correct : 1.0 - init_correct;
      for (int flip = 0; flip < 2; ++flip) {
        const double pf = flip ? switch_from[charge] : 1.0 - switch_from[charge];
        const int after = flip ? 1 - charge : charge;
        const double p_result = first_result == 0 ? read_zero[after] : 1.0 - read_zero[after];
        q += pc * pf * p_result;
      }
    }
    return q;
  };
  Q0 = second_same(0);
  Qm = second_same(1);
}

inline double total_variation(const std::vector<double>& p, const std::vector<double>& q) {
  const std::size_t n = std::max(p.size(), q.size());
  double tv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    tv += std::abs((i < p.size() ? p[i] : 0.0) - (i < q.size() ? q[i] : 0.0));
  }
  return 0.5 * tv;
}

}  // namespace oracle
