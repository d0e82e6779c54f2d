#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <fstream>

#include "nvcharge/error.hpp"
#include "nvcharge/parameters.hpp"

using namespace nvcharge;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an nvcharge::Error");
  return ErrorKind::numeric;
}

}  // namespace

TEST_CASE("reference parameters are valid and carry the tabulated relative rates") {
  const RateParameters p = reference_parameters();
  CHECK_NOTHROW(p.validate());
  CHECK(p.a == 0.037);
  CHECK(p.b == 0.08);
  CHECK(p.c == 1.30);
  CHECK(p.d == 0.071);
  CHECK(p.e == 0.22);
  CHECK(p.f == 0.74);
  CHECK(p.Is_rate == doctest::Approx(0.0215 * 66.9));
  CHECK(p.pulse_width_ns() == doctest::Approx(0.1));
  CHECK(p.ionization_target == IonizationTarget::ground);
}

TEST_CASE("shelving branching reproduces beta exactly") {
  RateParameters p;
  for (double beta : {0.0, 0.15, 0.55, 1.0}) {
    p.beta0 = beta;
    p.beta1 = beta;
    for (int spin : {0, 1}) {
      const double s = p.shelving_rate(spin), r = p.radiative_rate(spin);
      CHECK(s / (s + r) == doctest::Approx(beta).epsilon(1e-15));
    }
  }
  CHECK(p.radiative_rate(0) + p.shelving_rate(0) == doctest::Approx(1.0 / p.gamma0_inv));
  CHECK(p.radiative_rate(1) + p.shelving_rate(1) == doctest::Approx(1.0 / p.gamma1_inv));
}

TEST_CASE("singlet ionization scales linearly or quadratically with the red rate") {
  RateParameters p;
  CHECK(p.singlet_ionization_rate(p.R0) == doctest::Approx(p.Is_rate));
  CHECK(p.singlet_ionization_rate(2 * p.R0) == doctest::Approx(2 * p.Is_rate));
  p.is_scaling = SingletScaling::quadratic;
  CHECK(p.singlet_ionization_rate(2 * p.R0) == doctest::Approx(4 * p.Is_rate));
  CHECK(p.singlet_ionization_rate(0.0) == 0.0);
}

TEST_CASE("validation rejects out-of-domain values") {
  auto broken = [](auto mutate) {
    RateParameters p;
    mutate(p);
    return kind_of([&] { p.validate(); });
  };
  CHECK(broken([](RateParameters& p) { p.g_cal = 0.0; }) == ErrorKind::invalid_argument);
  CHECK(broken([](RateParameters& p) { p.a = -1e-9; }) == ErrorKind::invalid_argument);
  CHECK(broken([](RateParameters& p) { p.beta1 = 1.2; }) == ErrorKind::invalid_argument);
  CHECK(broken([](RateParameters& p) { p.spin_polarization = -0.1; }) == ErrorKind::invalid_argument);
  CHECK(broken([](RateParameters& p) { p.eta_inv = std::nan(""); }) == ErrorKind::invalid_argument);
  RateParameters zero_rates;
  zero_rates.a = zero_rates.b = zero_rates.c = zero_rates.d = zero_rates.e = zero_rates.f = 0.0;
  CHECK_NOTHROW(zero_rates.validate());
}

TEST_CASE("name lookup covers every parameter") {
  RateParameters p;
  CHECK(parameter_table().size() == 20);
  for (const auto& info : parameter_table()) {
    CHECK(is_parameter_name(info.name));
    CHECK(&p[info.name] == &(p.*(info.member)));
  }
  p["d"] = 0.5;
  CHECK(p.d == 0.5);
  CHECK_FALSE(is_parameter_name("zeta"));
  CHECK(kind_of([&] { (void)p["zeta"]; }) == ErrorKind::config);
}

TEST_CASE("JSON round trip is exact and strict") {
  RateParameters p;
  p.a = 0.1234567890123456789;
  p.ionization_target = IonizationTarget::excited;
  p.is_scaling = SingletScaling::quadratic;
  const nlohmann::json j = p;
  const auto back = j.get<RateParameters>();
  for (const auto& info : parameter_table()) CHECK(back.*(info.member) == p.*(info.member));
  CHECK(back.ionization_target == IonizationTarget::excited);
  CHECK(back.is_scaling == SingletScaling::quadratic);

  nlohmann::json unknown = j;
  unknown["zeta"] = 1.0;
  CHECK(kind_of([&] { (void)unknown.get<RateParameters>(); }) == ErrorKind::parse);

  nlohmann::json missing = j;
  missing.erase("D_inv");
  CHECK(kind_of([&] { (void)missing.get<RateParameters>(); }) == ErrorKind::parse);

  nlohmann::json bad_target = j;
  bad_target["ionization_target"] = "sideways";
  CHECK(kind_of([&] { (void)bad_target.get<RateParameters>(); }) != ErrorKind::numeric);
}

TEST_CASE("parameter files carry sigmas and report missing files as config errors") {
  const auto sigmas = reference_sigmas();
  CHECK(sigmas.at("a") == 0.006);
  CHECK(sigmas.at("spin_polarization") == 0.10);
  const auto j = parameter_file_json(reference_parameters(), sigmas);
  const auto file = parse_parameter_file(j);
  CHECK(file.sigmas == sigmas);
  CHECK(file.params.c == 1.30);

  const auto path = std::filesystem::temp_directory_path() / "nvcharge_params_test.json";
  std::ofstream(path) << j.dump(2);
  CHECK(load_parameter_file(path.string()).params.f == 0.74);
  std::filesystem::remove(path);
  CHECK(kind_of([&] { load_parameter_file("/nonexistent/params.json"); }) == ErrorKind::config);
}
