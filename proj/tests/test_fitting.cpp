#include <doctest.h>

#include <sstream>

#include "nvcharge/error.hpp"
#include "nvcharge/fitting.hpp"
#include "nvcharge/observables.hpp"
#include "nvcharge/stochastic.hpp"

using namespace nvcharge;

namespace {

std::vector<DatasetRow> green_rows(const std::vector<double>& inits) {
  std::vector<DatasetRow> rows;
  for (double g : {10.0, 30.0, 60.0, 100.0, 160.0, 250.0}) {
    for (double n : inits) {
      DatasetRow r;
      r.green_uW = g;
      r.charge_init = n;
      rows.push_back(r);
    }
  }
  return rows;
}

std::vector<DatasetRow> red_rows() {
  std::vector<DatasetRow> rows;
  for (double r : {10.0, 40.0, 100.0, 250.0}) {
    for (double n : {1.0, 0.0}) {
      DatasetRow row;
      row.green_uW = 95.0;
      row.red_uW = r;
      row.charge_init = n;
      rows.push_back(row);
    }
  }
  return rows;
}

/// Noise-free observations at `truth`, each with a 1% (floor 1e-4) error bar.
std::vector<Dataset> exact_datasets(const RateParameters& truth, bool with_red) {
  std::vector<Dataset> out;
  auto add = [&](ObservableKind kind, std::vector<DatasetRow> rows) {
    Dataset d;
    d.kind = kind;
    for (auto& r : rows) {
      r.value = predict_observable(kind, r, truth);
      r.sigma = std::max(0.01 * std::abs(r.value), 1e-4);
    }
    d.rows = rows;
    out.push_back(d);
  };
  add(ObservableKind::fluorescence_vs_green, green_rows({kInitNvMinusHigh, kInitNvMinusLow}));
  add(ObservableKind::switching_vs_green, green_rows({1.0, 0.0}));
  if (with_red) {
    add(ObservableKind::red_switching_vs_red, red_rows());
    std::vector<DatasetRow> dep;
    for (auto r : red_rows()) {
      r.charge_init = kInitNvMinusUnconditioned;
      dep.push_back(r);
    }
    add(ObservableKind::depletion_vs_red, dep);
  }
  return out;
}

RateParameters perturbed() {
  RateParameters p;
  p.g_cal *= 1.2;
  p.a *= 0.8;
  p.b *= 1.25;
  p.c *= 0.85;
  p.r_cal *= 0.9;
  p.d *= 1.3;
  p.e *= 0.8;
  p.f *= 1.15;
  p.alpha_minus *= 1.1;
  p.alpha_zero *= 0.9;
  return p;
}

}  // namespace

TEST_CASE("noise-free data are recovered from a perturbed start") {
  const RateParameters truth;
  const auto data = exact_datasets(truth, true);
  const FitResult r = fit(data, perturbed());
  CHECK(r.sse < 1e-8);
  for (const auto& name : r.free) CHECK(r.params[name] == doctest::Approx(truth[name]).epsilon(1e-4));
  CHECK(r.non_identifiable.empty());
  for (std::size_t k = 1; k < r.sse_history.size(); ++k) CHECK(r.sse_history[k] < r.sse_history[k - 1]);
  CHECK((r.covariance - r.covariance.transpose()).cwiseAbs().maxCoeff() == 0.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(r.covariance);
  CHECK(eig.eigenvalues().minCoeff() >= -1e-15);
  CHECK(r.dof == r.n_points - static_cast<int>(r.free.size()));
}

TEST_CASE("green-only data leave the red rates unidentified") {
  const auto data = exact_datasets(RateParameters{}, false);
  const FitResult r = fit(data, perturbed());
  for (const char* name : {"r_cal", "d", "e", "f"}) {
    CHECK(std::find(r.non_identifiable.begin(), r.non_identifiable.end(), name) != r.non_identifiable.end());
  }
  CHECK(std::find(r.non_identifiable.begin(), r.non_identifiable.end(), "a") == r.non_identifiable.end());
  CHECK(r.null_direction.size() == static_cast<Eigen::Index>(r.free.size()));
  CHECK(std::isinf(r.sigma_of("d")));

  FitConfig strict;
  strict.strict_identifiability = true;
  try {
    fit(data, perturbed(), strict);
    FAIL("expected non-identifiable error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::non_identifiable);
    CHECK(std::string(e.what()).find("d") != std::string::npos);
  }
}

TEST_CASE("fit configuration is checked") {
  const auto data = exact_datasets(RateParameters{}, false);
  FitConfig conflict;
  conflict.fixed = {"a"};
  try {
    fit(data, RateParameters{}, conflict);
    FAIL("expected config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::config);
  }
  FitConfig unknown;
  unknown.free = {"a", "omega"};
  CHECK_THROWS_AS(fit(data, RateParameters{}, unknown), Error);
  CHECK_THROWS_AS(fit(std::vector<Dataset>{}, RateParameters{}), Error);
}

TEST_CASE("per-power and per-area rate bases give the same optimum") {
  const auto data = exact_datasets(RateParameters{}, true);
  // Perturb the data so the optimum has nonzero residuals.
  auto noisy = data;
  int k = 0;
  for (auto& d : noisy) {
    for (auto& row : d.rows) row.value += ((k++ % 3) - 1) * row.sigma;
  }
  FitConfig power, area;
  area.basis = RateBasis::per_area;
  const FitResult a = fit(noisy, perturbed(), power);
  const FitResult b = fit(noisy, perturbed(), area);
  CHECK((a.predictions - b.predictions).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(a.sse == doctest::Approx(b.sse).epsilon(1e-8));
}

TEST_CASE("fixed-parameter uncertainties widen the error bars") {
  const auto data = exact_datasets(RateParameters{}, true);
  FitConfig cfg;
  cfg.propagate_fixed = true;
  cfg.fixed_sigmas = {{"gamma0_inv", 0.1}, {"eta_inv", 3.0}};
  const FitResult r = fit(data, RateParameters{}, cfg);
  CHECK(r.systematic_sigmas.maxCoeff() > 0.0);
  for (Eigen::Index i = 0; i < r.sigmas.size(); ++i) CHECK(r.sigmas(i) >= r.statistical_sigmas(i));
}

TEST_CASE("multi-start keeps the best optimum") {
  const auto data = exact_datasets(RateParameters{}, true);
  FitConfig cfg;
  cfg.multi_start = 3;
  const FitResult r = fit(data, perturbed(), cfg);
  CHECK(r.sse < 1e-8);
}

TEST_CASE("stochastic round trip is chi-square consistent and prefers the generating variant") {
  const RateParameters truth;
  std::vector<Dataset> data;
  std::uint64_t seed = 100;
  auto generate = [&](ObservableKind kind, std::vector<DatasetRow> points) {
    ExperimentDescriptor d;
    d.kind = kind;
    d.points = std::move(points);
    data.push_back(generate_dataset(d, truth, 100000, seed++).dataset);
  };
  generate(ObservableKind::fluorescence_vs_green, green_rows({kInitNvMinusHigh, kInitNvMinusLow}));
  generate(ObservableKind::switching_vs_green, green_rows({1.0}));
  std::vector<DatasetRow> red;
  for (auto r : red_rows()) {
    if (r.charge_init == 1.0) red.push_back(r);
  }
  generate(ObservableKind::red_switching_vs_red, red);
  for (auto& r : red) r.charge_init = kInitNvMinusUnconditioned;
  generate(ObservableKind::depletion_vs_red, red);

  const FitResult ground = fit(data, truth);
  CHECK(ground.reduced_chi2() > 0.6);
  CHECK(ground.reduced_chi2() < 1.4);
  for (const char* name : {"a", "b", "c", "d", "e", "f"}) {
    CHECK(std::abs(ground.params[name] - truth[name]) < 3.0 * ground.sigma_of(name));
  }
  FitConfig excited;
  excited.variant = IonizationTarget::excited;
  CHECK(fit(data, truth, excited).sse > ground.sse);
}

TEST_CASE("fit results serialize with covariance and residuals") {
  const auto data = exact_datasets(RateParameters{}, true);
  const FitResult r = fit(data, RateParameters{});
  const auto j = fit_result_json(r);
  CHECK(j["covariance"].size() == r.free.size());
  CHECK(j["params"]["a"].get<double>() == r.params.a);
  CHECK(j["variant"] == "ground");
  std::ostringstream csv;
  write_residuals_csv(csv, data, r);
  std::string header;
  std::istringstream in(csv.str());
  std::getline(in, header);
  CHECK(header == std::string(kDatasetHeader) + ",predicted,residual");
}

TEST_CASE("green power cross-calibration") {
  const RateParameters p;
  auto probe_at = [&](double power, std::uint64_t shots) {
    ExperimentDescriptor d;
    d.kind = ObservableKind::switching_vs_green;
    DatasetRow r;
    r.green_uW = power;
    d.points.push_back(r);
    return generate_dataset(d, p, shots, 55).dataset;
  };
  SUBCASE("known power") {
    const auto cal = cross_calibrate_green(p, 200.0, probe_at(70.0, 1000000));
    CHECK(cal.power_uW == doctest::Approx(70.0).epsilon(0.05));
  }
  SUBCASE("reference regime") {
    const auto cal = cross_calibrate_green(p, 300.0, probe_at(95.0, 1000000));
    CHECK(cal.power_uW == doctest::Approx(95.0).epsilon(0.05));
  }
  SUBCASE("no switching") {
    Dataset zero;
    zero.rows = {{0.0, 0.0, 0.0, 0, 1.0, 0.0, 0.001}, {0.0, 0.0, 0.0, 0, 0.0, 0.0, 0.001}};
    CHECK(cross_calibrate_green(p, 200.0, zero).power_uW == doctest::Approx(0.0).epsilon(1e-6));
  }
  SUBCASE("out of range") {
    Dataset far;
    far.rows = {{0.0, 0.0, 0.0, 0, 1.0, predict_observable(ObservableKind::switching_vs_green, {800.0}, p), 1e-4}};
    CHECK_THROWS_AS(cross_calibrate_green(p, 100.0, far), Error);
  }
}
