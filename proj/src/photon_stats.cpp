#include "nvcharge/photon_stats.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "nvcharge/error.hpp"
#include "nvcharge/optimize.hpp"

namespace nvcharge {

namespace {

constexpr int kGaussPoints = 20;

struct GaussLegendre {
  std::array<double, kGaussPoints> nodes{};
  std::array<double, kGaussPoints> weights{};

  GaussLegendre() {
    constexpr int n = kGaussPoints;
    for (int i = 0; i < n; ++i) {
      double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
      double dp = 0.0;
      for (int it = 0; it < 100; ++it) {
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= n; ++k) {
          const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
          p0 = p1;
          p1 = p2;
        }
        dp = n * (x * p1 - p0) / (x * x - 1.0);
        const double dx = p1 / dp;
        x -= dx;
        if (std::abs(dx) < 1e-16) break;
      }
      nodes[i] = x;
      weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
  }
};

const GaussLegendre& gauss_legendre() {
  static const GaussLegendre rule;
  return rule;
}

template <class F>
Eigen::VectorXd gauss_panel(const F& f, double a, double b, Eigen::Index size) {
  const auto& rule = gauss_legendre();
  const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(size);
  for (int i = 0; i < kGaussPoints; ++i) acc += rule.weights[i] * f(mid + half * rule.nodes[i]);
  return half * acc;
}

template <class F>
void adaptive_panel(const F& f, double a, double b, const Eigen::VectorXd& whole, double tol,
                    int depth, Eigen::VectorXd& acc) {
  const double m = 0.5 * (a + b);
  const Eigen::VectorXd left = gauss_panel(f, a, m, whole.size());
  const Eigen::VectorXd right = gauss_panel(f, m, b, whole.size());
  const double err = (left + right - whole).cwiseAbs().maxCoeff();
  if (err <= tol || depth >= 30) {
    acc += left + right;
    return;
  }
  adaptive_panel(f, a, m, left, 0.5 * tol, depth + 1, acc);
  adaptive_panel(f, m, b, right, 0.5 * tol, depth + 1, acc);
}

template <class F>
Eigen::VectorXd integrate_adaptive(const F& f, double a, double b, Eigen::Index size, double tol) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(size);
  if (b <= a) return acc;
  adaptive_panel(f, a, b, gauss_panel(f, a, b, size), tol, 0, acc);
  return acc;
}

// sum_k u^k / (k! (k+1)!)  and  sum_k u^k / k!^2
double series_even(double u) {
  double term = 1.0, sum = 1.0;
  for (int k = 0; k < 100000; ++k) {
    term *= u / ((k + 1.0) * (k + 2.0));
    sum += term;
    if (term <= 1e-17 * sum) break;
  }
  return sum;
}

double series_odd(double u) {
  double term = 1.0, sum = 1.0;
  for (int k = 0; k < 100000; ++k) {
    term *= u / ((k + 1.0) * (k + 1.0));
    sum += term;
    if (term <= 1e-17 * sum) break;
  }
  return sum;
}

double bessel_even(double u) {
  if (u <= 0.0) return 1.0;
  const double s = std::sqrt(u);
  return std::cyl_bessel_i(1.0, 2.0 * s) / s;
}

double bessel_odd(double u) {
  if (u <= 0.0) return 1.0;
  return std::cyl_bessel_i(0.0, 2.0 * std::sqrt(u));
}

void add_poisson(Eigen::Ref<Eigen::VectorXd> out, double weight, double mean,
                 const std::vector<double>& log_factorial) {
  if (weight == 0.0) return;
  if (mean <= 0.0) {
    out(0) += weight;
    return;
  }
  const double log_mean = std::log(mean);
  for (Eigen::Index n = 0; n < out.size(); ++n) {
    out(n) += weight * std::exp(n * log_mean - mean - log_factorial[n]);
  }
}

std::vector<double> log_factorials(int n_max) {
  std::vector<double> lf(n_max + 1);
  for (int n = 0; n <= n_max; ++n) lf[n] = std::lgamma(n + 1.0);
  return lf;
}

void check_readout(double readout_s) {
  if (!(readout_s > 0.0) || !std::isfinite(readout_s)) {
    throw Error(ErrorKind::invalid_argument, "readout duration must be > 0");
  }
}

}  // namespace

void YellowRates::validate() const {
  for (double v : {gamma_minus, gamma_zero, mu_minus, mu_zero}) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw Error(ErrorKind::invalid_argument, "yellow rates must be finite and >= 0");
    }
  }
}

double YellowRates::steady_state_nv_minus() const {
  const double total = gamma_zero + gamma_minus;
  if (!(total > 0.0)) throw Error(ErrorKind::invalid_argument, "steady state needs a nonzero switching rate");
  return gamma_zero / total;
}

std::vector<double> ConditionalCounts::total() const {
  std::vector<double> out(same.size());
  for (std::size_t n = 0; n < same.size(); ++n) out[n] = same[n] + switched[n];
  return out;
}

int default_n_max(const YellowRates& rates, double readout_s) {
  const double mean = std::max(rates.mu_minus, rates.mu_zero) * readout_s;
  return static_cast<int>(std::ceil(mean + 10.0 * std::sqrt(mean))) + 10;
}

ConditionalCounts conditional_counts(const YellowRates& rates, double readout_s, Charge initial,
                                     int n_max, SeriesForm form, double abs_tolerance) {
  rates.validate();
  check_readout(readout_s);
  if (n_max < 0) throw Error(ErrorKind::invalid_argument, "n_max must be >= 0");

  const YellowRates r = initial == Charge::minus ? rates : rates.swapped();
  // After the swap, "minus" labels the initial charge and "zero" the other one.
  const double gi = r.gamma_minus, go = r.gamma_zero, mi = r.mu_minus, mo = r.mu_zero;
  const double T = readout_s;
  const Eigen::Index size = n_max + 1;
  const auto lf = log_factorials(n_max);

  auto integrand = [&](double tau) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(2 * size);
    const double rest = T - tau;
    const double decay = std::exp(-gi * tau - go * rest);
    const double u = gi * go * tau * rest;
    const double even = form == SeriesForm::direct ? series_even(u) : bessel_even(u);
    const double odd = form == SeriesForm::direct ? series_odd(u) : bessel_odd(u);
    const double mean = mi * tau + mo * rest;
    add_poisson(v.head(size), decay * gi * go * tau * even, mean, lf);
    add_poisson(v.tail(size), decay * gi * odd, mean, lf);
    return v;
  };

  Eigen::VectorXd integral = Eigen::VectorXd::Zero(2 * size);
  if (gi > 0.0) integral = integrate_adaptive(integrand, 0.0, T, 2 * size, abs_tolerance);

  ConditionalCounts out;
  out.same.assign(integral.data(), integral.data() + size);
  out.switched.assign(integral.data() + size, integral.data() + 2 * size);
  Eigen::VectorXd no_switch = Eigen::VectorXd::Zero(size);
  add_poisson(no_switch, std::exp(-gi * T), mi * T, lf);
  for (Eigen::Index n = 0; n < size; ++n) out.same[n] += no_switch(n);
  return out;
}

CountDistribution count_distribution(const YellowRates& rates, double readout_s, double nv_minus,
                                     int n_max, SeriesForm form) {
  if (!(nv_minus >= 0.0 && nv_minus <= 1.0)) {
    throw Error(ErrorKind::invalid_argument, "initial NV- probability must lie in [0, 1]");
  }
  const auto pm = conditional_counts(rates, readout_s, Charge::minus, n_max, form).total();
  const auto p0 = conditional_counts(rates, readout_s, Charge::zero, n_max, form).total();
  CountDistribution out;
  out.readout_s = readout_s;
  out.nv_minus = nv_minus;
  out.probabilities.resize(pm.size());
  double mass = 0.0;
  for (std::size_t n = 0; n < pm.size(); ++n) {
    out.probabilities[n] = nv_minus * pm[n] + (1.0 - nv_minus) * p0[n];
    mass += out.probabilities[n];
  }
  if (1.0 - mass > 1e-10) {
    throw Error(ErrorKind::numeric, "count distribution truncated at n_max=" + std::to_string(n_max) +
                                        " leaves tail mass " + std::to_string(1.0 - mass));
  }
  return out;
}

CountDistribution count_distribution(const YellowRates& rates, double readout_s, double nv_minus) {
  return count_distribution(rates, readout_s, nv_minus, default_n_max(rates, readout_s));
}

ThresholdChoice choose_threshold(std::span<const double> dist_minus, std::span<const double> dist_zero,
                                 double nv_minus) {
  if (dist_minus.size() != dist_zero.size() || dist_minus.empty()) {
    throw Error(ErrorKind::invalid_argument, "threshold search needs distributions on a common support");
  }
  const double total_zero = std::accumulate(dist_zero.begin(), dist_zero.end(), 0.0);
  ThresholdChoice best;
  best.weighted_fidelity = -1.0;
  double below_minus = 0.0, below_zero = 0.0;
  for (std::size_t t = 0; t < dist_minus.size(); ++t) {
    below_minus += dist_minus[t];
    below_zero += dist_zero[t];
    const double eps_zero = std::max(0.0, total_zero - below_zero);
    const double eps_minus = below_minus;
    const double fidelity = 1.0 - ((1.0 - nv_minus) * eps_zero + nv_minus * eps_minus) / 2.0;
    if (fidelity > best.weighted_fidelity + 1e-15) {
      best = {static_cast<int>(t), 1.0 - eps_zero, 1.0 - eps_minus, fidelity};
    }
  }
  return best;
}

void ReadoutCalibration::validate() const {
  if (threshold < 0) throw Error(ErrorKind::invalid_argument, "threshold must be >= 0");
  for (double v : {R0, Rm, I0, Im}) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorKind::invalid_argument, "fidelities must lie in [0, 1]");
  }
  if (!(R0 + Rm - 1.0 > 0.0)) throw Error(ErrorKind::invalid_argument, "uninformative readout: R0 + R- <= 1");
  if (!(I0 + Im - 1.0 > 0.0)) {
    throw Error(ErrorKind::invalid_argument, "uninformative initialization: I0 + I- <= 1");
  }
}

InitializationFidelities initialization_fidelities(double QZ0, double QZm, double R0, double Rm) {
  const double denom = R0 + Rm - 1.0;
  if (!(denom > 0.0)) throw Error(ErrorKind::invalid_argument, "uninformative readout: R0 + R- <= 1");
  InitializationFidelities out;
  auto settle = [&](double value, const char* name) {
    if (value < -0.05 || value > 1.05) {
      throw Error(ErrorKind::numeric, std::string(name) + " = " + std::to_string(value) +
                                          " is outside [-0.05, 1.05]");
    }
    if (value < 0.0 || value > 1.0) {
      out.warnings.push_back(std::string(name) + " = " + std::to_string(value) + " clamped to [0, 1]");
      value = std::clamp(value, 0.0, 1.0);
    }
    return value;
  };
  out.I0 = settle((QZ0 + Rm - 1.0) / denom, "I0");
  out.Im = settle((QZm + R0 - 1.0) / denom, "I-");
  return out;
}

ReadoutCalibration model_calibration(const YellowRates& rates, double readout_s,
                                     double nv_minus_prior, int threshold) {
  const int n_max = default_n_max(rates, readout_s);
  const auto cm = conditional_counts(rates, readout_s, Charge::minus, n_max);
  const auto c0 = conditional_counts(rates, readout_s, Charge::zero, n_max);
  const auto pm = cm.total();
  const auto p0 = c0.total();

  ReadoutCalibration cal;
  if (threshold < 0) {
    cal.threshold = choose_threshold(pm, p0, nv_minus_prior).threshold;
  } else {
    cal.threshold = threshold;
  }
  const double N = nv_minus_prior;
  double below_m = 0.0, below_0 = 0.0;
  double same0_below = 0.0, switchm_below = 0.0, samem_above = 0.0, switch0_above = 0.0;
  for (int n = 0; n <= n_max; ++n) {
    if (n <= cal.threshold) {
      below_m += pm[n];
      below_0 += p0[n];
      same0_below += c0.same[n];
      switchm_below += cm.switched[n];
    } else {
      samem_above += cm.same[n];
      switch0_above += c0.switched[n];
    }
  }
  cal.R0 = below_0;
  cal.Rm = 1.0 - below_m;
  const double p_m0 = (1.0 - N) * cal.R0 + N * (1.0 - cal.Rm);
  const double p_mm = N * cal.Rm + (1.0 - N) * (1.0 - cal.R0);
  cal.I0 = p_m0 > 0.0 ? ((1.0 - N) * same0_below + N * switchm_below) / p_m0 : 1.0;
  cal.Im = p_mm > 0.0 ? (N * samem_above + (1.0 - N) * switch0_above) / p_mm : 1.0;
  return cal;
}

RepeatProbabilities repeat_probabilities_from_counts(std::uint64_t n00, std::uint64_t n0m,
                                                     std::uint64_t nm0, std::uint64_t nmm) {
  const double first0 = static_cast<double>(n00 + n0m);
  const double firstm = static_cast<double>(nm0 + nmm);
  if (first0 == 0.0 || firstm == 0.0) {
    throw Error(ErrorKind::invalid_argument, "repeat probabilities need shots with each first result");
  }
  RepeatProbabilities q;
  q.Q0 = static_cast<double>(n00) / first0;
  q.Qm = static_cast<double>(nmm) / firstm;
  const double p0 = (n00 + 1.0) / (first0 + 2.0);
  const double pm = (nmm + 1.0) / (firstm + 2.0);
  q.sigma_Q0 = std::sqrt(p0 * (1.0 - p0) / first0);
  q.sigma_Qm = std::sqrt(pm * (1.0 - pm) / firstm);
  return q;
}

RepeatProbabilities forward_repeat_probabilities(double P_I, double P_R, const ReadoutCalibration& c) {
  RepeatProbabilities q;
  q.Q0 = c.I0 * (1.0 - P_R) * c.R0 + c.I0 * P_R * (1.0 - c.Rm) + (1.0 - c.I0) * P_I * c.R0 +
         (1.0 - c.I0) * (1.0 - P_I) * (1.0 - c.Rm);
  q.Qm = c.Im * (1.0 - P_I) * c.Rm + c.Im * P_I * (1.0 - c.R0) + (1.0 - c.Im) * P_R * c.Rm +
         (1.0 - c.Im) * (1.0 - P_R) * (1.0 - c.R0);
  return q;
}

namespace {

// Inputs ordered Q0, Q-, R0, R-, I0, I-.
Eigen::Vector2d solve_switching(const Eigen::Matrix<double, 6, 1>& v) {
  const double Q0 = v(0), Qm = v(1), R0 = v(2), Rm = v(3), I0 = v(4), Im = v(5);
  const double kappa = R0 + Rm - 1.0;
  // Q is affine in (P_I, P_R): Q = offset + A [P_I, P_R]^T.
  Eigen::Matrix2d A;
  A << (1.0 - I0) * kappa, -I0 * kappa,
       -Im * kappa, (1.0 - Im) * kappa;
  const double det = A.determinant();
  if (!(std::abs(det) >= 1e-9)) {
    throw Error(ErrorKind::numeric, "switching extraction is singular (|det| = " +
                                        std::to_string(std::abs(det)) + ")");
  }
  const Eigen::Vector2d offset(I0 * R0 + (1.0 - I0) * (1.0 - Rm), Im * Rm + (1.0 - Im) * (1.0 - R0));
  return A.inverse() * (Eigen::Vector2d(Q0, Qm) - offset);
}

}  // namespace

SwitchingEstimate extract_switching(const RepeatProbabilities& q, const ReadoutCalibration& cal) {
  Eigen::Matrix<double, 6, 1> v;
  v << q.Q0, q.Qm, cal.R0, cal.Rm, cal.I0, cal.Im;
  Eigen::Matrix<double, 6, 1> sigma;
  sigma << q.sigma_Q0, q.sigma_Qm, cal.sigma_R0, cal.sigma_Rm, cal.sigma_I0, cal.sigma_Im;
  const Eigen::Vector2d p = solve_switching(v);

  Eigen::Vector2d variance = Eigen::Vector2d::Zero();
  for (int k = 0; k < 6; ++k) {
    if (sigma(k) == 0.0) continue;
    const double h = 1e-6;
    auto vp = v, vm = v;
    vp(k) += h;
    vm(k) -= h;
    const Eigen::Vector2d grad = (solve_switching(vp) - solve_switching(vm)) / (2.0 * h);
    variance += (grad * sigma(k)).cwiseAbs2();
  }
  return {p(0), p(1), std::sqrt(variance(0)), std::sqrt(variance(1))};
}

// ---------------------------------------------------------------------------

namespace {

struct YellowModel {
  double readout_s;
  bool steady_state;

  // Natural parameters: gamma_minus, gamma_zero, mu_minus, mu_zero[, nv_minus].
  int size() const { return steady_state ? 4 : 5; }

  std::pair<YellowRates, double> unpack(const Eigen::VectorXd& theta) const {
    YellowRates r{theta(0), theta(1), theta(2), theta(3)};
    double N = 0.0;
    if (steady_state) {
      const double total = r.gamma_minus + r.gamma_zero;
      N = total > 0.0 ? r.gamma_zero / total : 0.5;
    } else {
      N = theta(4);
    }
    return {r, N};
  }

  std::vector<double> probabilities(const Eigen::VectorXd& theta, int n_max) const {
    const auto [r, N] = unpack(theta);
    const auto pm = conditional_counts(r, readout_s, Charge::minus, n_max, SeriesForm::direct, 1e-12).total();
    const auto p0 = conditional_counts(r, readout_s, Charge::zero, n_max, SeriesForm::direct, 1e-12).total();
    std::vector<double> p(n_max + 1);
    for (int n = 0; n <= n_max; ++n) p[n] = N * pm[n] + (1.0 - N) * p0[n];
    return p;
  }
};

// Split point maximizing between-class variance of the count histogram.
std::pair<double, double> otsu_means(std::span<const std::uint64_t> h, double& upper_fraction) {
  const double total = std::accumulate(h.begin(), h.end(), 0.0);
  double best = -1.0, lo_mean = 0.0, hi_mean = 0.0;
  upper_fraction = 0.5;
  double w0 = 0.0, s0 = 0.0;
  double s_total = 0.0;
  for (std::size_t n = 0; n < h.size(); ++n) s_total += n * static_cast<double>(h[n]);
  for (std::size_t t = 0; t + 1 < h.size(); ++t) {
    w0 += h[t];
    s0 += t * static_cast<double>(h[t]);
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = s0 / w0, m1 = (s_total - s0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      lo_mean = m0;
      hi_mean = m1;
      upper_fraction = w1 / total;
    }
  }
  if (best < 0.0) {
    lo_mean = hi_mean = s_total / total;
  }
  return {lo_mean, hi_mean};
}

}  // namespace

YellowFit fit_yellow_rates(std::span<const std::uint64_t> occurrences, double readout_s,
                           const YellowFitOptions& options) {
  check_readout(readout_s);
  const double total = std::accumulate(occurrences.begin(), occurrences.end(), 0.0);
  if (occurrences.empty() || total <= 0.0) {
    throw Error(ErrorKind::invalid_argument, "count histogram is empty");
  }
  YellowFit out;
  if (total < 1e4) {
    out.warnings.push_back("histogram has fewer than 1e4 bins; rate estimates may be unreliable");
  }

  const YellowModel model{readout_s, options.steady_state};
  const int n_obs = static_cast<int>(occurrences.size()) - 1;

  double upper = 0.5;
  const auto [lo_mean, hi_mean] = otsu_means(occurrences, upper);
  if (hi_mean - lo_mean < 1e-6) {
    throw Error(ErrorKind::non_identifiable, "histogram shows no readout contrast (mu- ~ mu0)");
  }
  upper = std::clamp(upper, 0.02, 0.98);

  // Search in log rates (and logit N-); rates are floored to keep the flat
  // no-switching direction bounded.
  const double log_floor = std::log(1e-6 / readout_s);
  auto to_theta = [&](const Eigen::VectorXd& x) {
    Eigen::VectorXd theta(model.size());
    for (int k = 0; k < 4; ++k) theta(k) = std::exp(std::max(x(k), log_floor));
    if (!model.steady_state) theta(4) = 1.0 / (1.0 + std::exp(-x(4)));
    return theta;
  };
  auto nll_theta = [&](const Eigen::VectorXd& theta) {
    const auto p = model.probabilities(theta, n_obs);
    double value = 0.0;
    for (int n = 0; n <= n_obs; ++n) {
      if (occurrences[n] == 0) continue;
      value -= static_cast<double>(occurrences[n]) * std::log(std::max(p[n], 1e-300));
    }
    return value;
  };
  auto nll = [&](const Eigen::VectorXd& x) { return nll_theta(to_theta(x)); };

  const double switch_guess = 1.0 / readout_s;
  Eigen::VectorXd x0(model.size());
  x0(0) = std::log((1.0 - upper) * switch_guess);
  x0(1) = std::log(upper * switch_guess);
  x0(2) = std::log(std::max(hi_mean, 0.5) / readout_s);
  x0(3) = std::log(std::max(lo_mean, 1e-3) / readout_s);
  if (!model.steady_state) x0(4) = std::log(upper / (1.0 - upper));
  const Eigen::VectorXd step = Eigen::VectorXd::Constant(model.size(), 0.4);

  optimize::NelderMeadOptions nm;
  nm.f_tolerance = 1e-12;
  nm.x_tolerance = 1e-8;
  nm.restarts = 4;
  const auto best = optimize::nelder_mead(nll, x0, step, nm);
  Eigen::VectorXd theta = to_theta(best.x);
  out.negative_log_likelihood = best.value;

  auto [rates, N] = model.unpack(theta);
  if (!(std::abs(rates.mu_minus - rates.mu_zero) > 1e-3 * std::max(rates.mu_minus, rates.mu_zero))) {
    throw Error(ErrorKind::non_identifiable, "fitted emission rates coincide (mu- ~ mu0); charge states are indistinguishable");
  }
  if (rates.mu_minus < rates.mu_zero) {
    // Labels came out exchanged; NV- is the bright state by definition.
    rates = rates.swapped();
    N = 1.0 - N;
    std::swap(theta(0), theta(1));
    std::swap(theta(2), theta(3));
    if (!model.steady_state) theta(4) = N;
  }
  out.rates = rates;
  out.nv_minus = N;
  if (rates.gamma_minus > 1.0001 * std::exp(log_floor) && readout_s * rates.gamma_minus < 1.0) {
    out.warnings.push_back("bin time is shorter than 1/gamma_minus; gamma_minus is weakly constrained");
  }

  // Rates pinned at the floor sit on the boundary, where the Fisher
  // information diverges like 1/gamma. They get a one-sided limit instead.
  const double floor_rate = std::exp(log_floor);
  std::vector<int> interior, boundary;
  for (int k = 0; k < model.size(); ++k) {
    (k < 4 && theta(k) <= 1.0001 * floor_rate ? boundary : interior).push_back(k);
  }

  // Expected Fisher information from finite-difference derivatives of P(n).
  const int n_full = std::max(n_obs, default_n_max(rates, readout_s));
  const int p = model.size();
  const auto base = model.probabilities(theta, n_full);
  const int m = static_cast<int>(interior.size());
  Eigen::MatrixXd dP(n_full + 1, m);
  for (int j = 0; j < m; ++j) {
    const int k = interior[j];
    const double scale = k < 4 ? std::max(theta(k), 1e-3 / readout_s) : 1e-2;
    const double h = 1e-5 * scale;
    Eigen::VectorXd up = theta, down = theta;
    up(k) += h;
    double width = 2.0 * h;
    if (theta(k) - h < 0.0) {
      width = h;
    } else {
      down(k) -= h;
    }
    if (k == 4 && theta(k) + h > 1.0) {
      up(k) = theta(k);
      width = h;
    }
    const auto pu = model.probabilities(up, n_full);
    const auto pd = model.probabilities(down, n_full);
    for (int n = 0; n <= n_full; ++n) dP(n, j) = (pu[n] - pd[n]) / width;
  }
  Eigen::MatrixXd fisher = Eigen::MatrixXd::Zero(m, m);
  for (int n = 0; n <= n_full; ++n) {
    if (base[n] <= 1e-300) continue;
    fisher += dP.row(n).transpose() * dP.row(n) / base[n];
  }
  fisher *= total;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(fisher);
  if (eig.eigenvalues().minCoeff() <= 1e-12 * eig.eigenvalues().maxCoeff()) {
    throw Error(ErrorKind::non_identifiable, "Fisher information is singular; rates are not identifiable");
  }
  const Eigen::MatrixXd inverse = fisher.inverse();
  out.covariance = Eigen::MatrixXd::Zero(p, p);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) out.covariance(interior[i], interior[j]) = inverse(i, j);
  }

  const double contrast_sigma = std::sqrt(std::max(
      out.covariance(2, 2) + out.covariance(3, 3) - 2.0 * out.covariance(2, 3), 0.0));
  if (std::abs(rates.mu_minus - rates.mu_zero) < 3.0 * contrast_sigma) {
    throw Error(ErrorKind::non_identifiable, "emission rates are not resolved; charge states are indistinguishable");
  }

  // Rate at which the likelihood, other parameters held at their estimates,
  // has dropped by 1/2 from the boundary value.
  static constexpr const char* kRateNames[] = {"gamma_minus", "gamma_zero", "mu_minus", "mu_zero"};
  for (int k : boundary) {
    auto excess = [&](double rate) {
      Eigen::VectorXd t = theta;
      t(k) = rate;
      return nll_theta(t) - out.negative_log_likelihood - 0.5;
    };
    double lo = floor_rate, hi = 1.0 / readout_s;
    while (excess(hi) < 0.0 && hi < 1e6 / readout_s) hi *= 4.0;
    for (int it = 0; it < 60 && hi - lo > 1e-6 * hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      (excess(mid) < 0.0 ? lo : hi) = mid;
    }
    out.covariance(k, k) = hi * hi;
    out.warnings.push_back(std::string(kRateNames[k]) +
                           " is consistent with zero; its sigma is a one-sided likelihood limit");
  }
  out.sigmas.resize(p);
  for (int k = 0; k < p; ++k) out.sigmas[k] = std::sqrt(out.covariance(k, k));
  return out;
}

}  // namespace nvcharge
