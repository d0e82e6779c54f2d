#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "nvcharge/error.hpp"
#include "nvcharge/photon_stats.hpp"
#include "nvcharge/stochastic.hpp"
#include "oracles.hpp"

using namespace nvcharge;

namespace {

const YellowRates kReference{27.0, 3.89, 1870.0, 48.87};

double poisson(int n, double mean) { return std::exp(n * std::log(mean) - mean - std::lgamma(n + 1.0)); }

double mean_of(const std::vector<double>& p) {
  double m = 0.0;
  for (std::size_t n = 0; n < p.size(); ++n) m += n * p[n];
  return m;
}

}  // namespace

TEST_CASE("without switching the counts are Poisson") {
  const YellowRates r{0.0, 0.0, 1870.0, 48.87};
  const auto d = count_distribution(r, 0.004, 1.0);
  for (int n = 0; n <= d.n_max(); ++n) CHECK(d.probabilities[n] == doctest::Approx(poisson(n, 7.48)).epsilon(1e-12));
  const auto z = count_distribution(r, 0.004, 0.0);
  for (int n = 0; n <= 10; ++n) CHECK(z.probabilities[n] == doctest::Approx(poisson(n, 48.87 * 0.004)).epsilon(1e-12));
}

TEST_CASE("steady-state NV- fraction of the yellow rates") {
  CHECK(kReference.steady_state_nv_minus() == doctest::Approx(3.89 / 30.89).epsilon(1e-15));
  CHECK(kReference.steady_state_nv_minus() == doctest::Approx(0.126).epsilon(0.002));
}

TEST_CASE("series and Bessel forms agree") {
  for (double t : {0.004, 0.05}) {
    const int n_max = default_n_max(kReference, t);
    for (Charge c : {Charge::minus, Charge::zero}) {
      const auto direct = conditional_counts(kReference, t, c, n_max, SeriesForm::direct);
      const auto bessel = conditional_counts(kReference, t, c, n_max, SeriesForm::bessel);
      for (int n = 0; n <= n_max; ++n) {
        CHECK(std::abs(direct.same[n] - bessel.same[n]) < 1e-10);
        CHECK(std::abs(direct.switched[n] - bessel.switched[n]) < 1e-10);
      }
    }
  }
}

TEST_CASE("conditional counts match the joint count-charge master equation") {
  const YellowRates fast{270.0, 38.9, 1870.0, 48.87};  // more switching stresses the series
  for (const auto& r : {kReference, fast}) {
    const double t = 0.02;
    const int n_max = default_n_max(r, t);
    for (Charge c : {Charge::minus, Charge::zero}) {
      const auto cc = conditional_counts(r, t, c, n_max);
      const auto ref = oracle::modulated_poisson(r, t, c == Charge::minus, n_max);
      const int same = c == Charge::minus ? 0 : 1;
      for (int n = 0; n <= n_max; ++n) {
        CHECK(std::abs(cc.same[n] - ref[n][same]) < 1e-11);
        CHECK(std::abs(cc.switched[n] - ref[n][1 - same]) < 1e-11);
      }
    }
  }
}

TEST_CASE("distributions are normalized and positive across parameters") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 25; ++i) {
    const YellowRates r{100.0 * u(rng), 100.0 * u(rng), 500.0 + 2000.0 * u(rng), 100.0 * u(rng)};
    const double t = 0.001 + 0.05 * u(rng);
    const auto d = count_distribution(r, t, u(rng));
    double sum = 0.0;
    for (double p : d.probabilities) {
      CHECK(p >= 0.0);
      sum += p;
    }
    CHECK(std::abs(sum - 1.0) < 1e-10);
  }
}

TEST_CASE("swapping charge labels swaps the conditional distributions") {
  const double t = 0.05;
  const int n_max = default_n_max(kReference, t);
  const auto minus = conditional_counts(kReference, t, Charge::minus, n_max);
  const auto swapped = conditional_counts(kReference.swapped(), t, Charge::zero, n_max);
  for (int n = 0; n <= n_max; ++n) {
    CHECK(minus.same[n] == doctest::Approx(swapped.same[n]).epsilon(1e-13));
    CHECK(minus.switched[n] == doctest::Approx(swapped.switched[n]).epsilon(1e-13));
  }
}

TEST_CASE("faster ionization lowers the NV- mean count") {
  double previous = 1e300;
  for (double g : {0.0, 10.0, 27.0, 100.0, 300.0}) {
    YellowRates r = kReference;
    r.gamma_minus = g;
    const double m = mean_of(count_distribution(r, 0.05, 1.0).probabilities);
    CHECK(m < previous);
    previous = m;
  }
}

TEST_CASE("widening the count support leaves existing entries unchanged") {
  const int n_max = default_n_max(kReference, 0.05);
  const auto a = count_distribution(kReference, 0.05, 0.3, n_max);
  const auto b = count_distribution(kReference, 0.05, 0.3, n_max + 5);
  for (int n = 0; n <= n_max; ++n) CHECK(std::abs(a.probabilities[n] - b.probabilities[n]) < 1e-12);
}

TEST_CASE("truncation beyond the tolerance is reported") {
  CHECK_THROWS_AS(count_distribution(kReference, 0.05, 1.0, 20), Error);
  CHECK_THROWS_AS(count_distribution(kReference, 0.0, 1.0), Error);
}

TEST_CASE("threshold choice") {
  SUBCASE("separated distributions read perfectly") {
    const std::vector<double> zero{0.5, 0.5, 0.0, 0.0}, minus{0.0, 0.0, 0.3, 0.7};
    const auto t = choose_threshold(minus, zero, 0.5);
    CHECK(t.threshold == 1);
    CHECK(t.R0 == 1.0);
    CHECK(t.Rm == 1.0);
  }
  SUBCASE("identical distributions carry no information") {
    const std::vector<double> d{0.2, 0.3, 0.5};
    for (double w : {0.3, 0.5, 0.8}) {
      const auto t = choose_threshold(d, d, w);
      CHECK(t.R0 + t.Rm == doctest::Approx(1.0));
      CHECK(t.weighted_fidelity <= 0.75 + std::abs(w - 0.5) / 2.0 + 1e-12);
    }
  }
  SUBCASE("brute force over all thresholds") {
    const auto minus = conditional_counts(kReference, 0.004, Charge::minus, 40).total();
    const auto zero = conditional_counts(kReference, 0.004, Charge::zero, 40).total();
    const auto t = choose_threshold(minus, zero, 0.638);
    double best = -1.0;
    int arg = -1;
    for (int k = 0; k <= 40; ++k) {
      const double e0 = std::accumulate(zero.begin() + k + 1, zero.end(), 0.0);
      const double em = std::accumulate(minus.begin(), minus.begin() + k + 1, 0.0);
      const double f = 1.0 - ((1.0 - 0.638) * e0 + 0.638 * em) / 2.0;
      if (f > best + 1e-15) best = f, arg = k;
    }
    CHECK(t.threshold == arg);
    CHECK(t.weighted_fidelity == doctest::Approx(best));
  }
}

TEST_CASE("reference-regime readout fidelities") {
  const auto cal = model_calibration(kReference, 0.004, 0.638);
  CHECK(cal.threshold == 1);
  // The quoted range is given to the nearest percent.
  for (double f : {cal.R0, cal.Rm, cal.Im}) {
    CHECK(f >= 0.905);
    CHECK(f < 0.975);
  }
  CHECK(cal.Im == doctest::Approx(0.9125).epsilon(0.002 / 0.9125));
  CHECK_NOTHROW(cal.validate());
}

TEST_CASE("initialization fidelities invert the repeat tree") {
  const auto perfect = initialization_fidelities(1.0, 1.0, 1.0, 1.0);
  CHECK(perfect.I0 == 1.0);
  CHECK(perfect.Im == 1.0);

  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.6, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double I0 = u(rng), Im = u(rng), R0 = u(rng), Rm = u(rng);
    double Q0, Qm;
    oracle::repeat_tree(0.0, 0.0, I0, Im, R0, Rm, Q0, Qm);
    const auto f = initialization_fidelities(Q0, Qm, R0, Rm);
    CHECK(std::abs(f.I0 - I0) < 1e-12);
    CHECK(std::abs(f.Im - Im) < 1e-12);
  }
  const auto clamped = initialization_fidelities(1.0, 1.0, 0.99, 0.98);
  CHECK(clamped.I0 == 1.0);
  CHECK_FALSE(clamped.warnings.empty());
  CHECK_THROWS_AS(initialization_fidelities(1.0, 0.2, 0.6, 0.6), Error);
}

TEST_CASE("switching extraction inverts the forward tree") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0), fid(0.75, 1.0);
  for (int i = 0; i < 500; ++i) {
    ReadoutCalibration cal;
    cal.R0 = fid(rng), cal.Rm = fid(rng), cal.I0 = fid(rng), cal.Im = fid(rng);
    const double P_I = u(rng), P_R = u(rng);
    const auto q = forward_repeat_probabilities(P_I, P_R, cal);
    double Q0, Qm;
    oracle::repeat_tree(P_I, P_R, cal.I0, cal.Im, cal.R0, cal.Rm, Q0, Qm);
    CHECK(std::abs(q.Q0 - Q0) < 1e-14);
    CHECK(std::abs(q.Qm - Qm) < 1e-14);
    const auto est = extract_switching(q, cal);
    CHECK(std::abs(est.P_I - P_I) < 1e-12);
    CHECK(std::abs(est.P_R - P_R) < 1e-12);
  }
}

TEST_CASE("perfect fidelity and certain repeats mean no switching") {
  const ReadoutCalibration perfect;
  const auto q = forward_repeat_probabilities(0.0, 0.0, perfect);
  CHECK(q.Q0 == 1.0);
  CHECK(q.Qm == 1.0);
  const auto est = extract_switching(q, perfect);
  CHECK(est.P_I == 0.0);
  CHECK(est.P_R == 0.0);
  // Sign convention: a certain flip of NV- reads as P_I = 1 - Q-.
  const auto flipped = extract_switching({1.0, 0.0}, perfect);
  CHECK(flipped.P_I == doctest::Approx(1.0));
}

TEST_CASE("singular calibrations are rejected") {
  ReadoutCalibration useless;
  useless.R0 = 0.5;
  useless.Rm = 0.5;
  CHECK_THROWS_AS(extract_switching({0.9, 0.9}, useless), Error);
}

TEST_CASE("extraction errors propagate from repeat statistics") {
  const auto q = repeat_probabilities_from_counts(9000, 1000, 500, 9500);
  CHECK(q.Q0 == doctest::Approx(0.9));
  CHECK(q.Qm == doctest::Approx(0.95));
  CHECK(q.sigma_Q0 > 0.0);
  const auto cal = model_calibration(kReference, 0.004, 0.638);
  const auto est = extract_switching(q, cal);
  CHECK(est.sigma_P_I > q.sigma_Qm);
  CHECK(est.sigma_P_R > q.sigma_Q0);
  const auto none = repeat_probabilities_from_counts(10, 0, 0, 10);
  CHECK(none.sigma_Q0 > 0.0);
}

TEST_CASE("yellow-rate fit recovers the one-hour reference regime") {
  // One hour of 50 ms bins in steady state.
  const std::uint64_t bins = 72000;
  const auto hist = simulate_yellow_readout(kReference, 0.05, kReference.steady_state_nv_minus(), bins, 4242);
  YellowFitOptions opts;
  opts.steady_state = true;
  const auto fit = fit_yellow_rates(hist, 0.05, opts);
  const YellowRates& r = fit.rates;
  CHECK(std::abs(r.gamma_minus - 27.0) < 4.0 * fit.sigmas[0]);
  CHECK(std::abs(r.gamma_zero - 3.89) < 4.0 * fit.sigmas[1]);
  CHECK(std::abs(r.mu_minus - 1870.0) < 4.0 * fit.sigmas[2]);
  CHECK(std::abs(r.mu_zero - 48.87) < 4.0 * fit.sigmas[3]);
  // Uncertainties of the same order as those quoted for one hour of data.
  CHECK(fit.sigmas[0] < 3.0);
  CHECK(fit.sigmas[1] < 0.3);
  CHECK(fit.warnings.empty());
}

TEST_CASE("yellow-rate fit of a non-switching emitter") {
  const YellowRates still{0.0, 0.0, 1870.0, 48.87};
  const auto hist = simulate_yellow_readout(still, 0.05, 0.4, 40000, 99);
  const auto fit = fit_yellow_rates(hist, 0.05);
  CHECK(fit.rates.gamma_minus < 2.0 * fit.sigmas[0] + 1e-9);
  CHECK(fit.rates.gamma_zero < 2.0 * fit.sigmas[1] + 1e-9);
  CHECK(fit.nv_minus == doctest::Approx(0.4).epsilon(0.05));
  CHECK(fit.sigmas[0] > 0.0);
  CHECK(std::isfinite(fit.sigmas[0]));
}

TEST_CASE("yellow-rate fit without contrast is non-identifiable") {
  const YellowRates flat{27.0, 3.89, 500.0, 500.0};
  const auto hist = simulate_yellow_readout(flat, 0.05, 0.5, 20000, 5);
  try {
    fit_yellow_rates(hist, 0.05);
    FAIL("expected a non-identifiable error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::non_identifiable);
  }
}

TEST_CASE("yellow-rate fit warns on short bins and small histograms") {
  const auto hist = simulate_yellow_readout(kReference, 0.01, 0.5, 5000, 17);
  const auto fit = fit_yellow_rates(hist, 0.01);
  CHECK(fit.warnings.size() >= 2);
}
