#include "nvcharge/parameters.hpp"

#include <array>
#include <cmath>
#include <fstream>

#include "nvcharge/error.hpp"

namespace nvcharge {

namespace {

constexpr std::array<ParameterInfo, 20> kTable{{
    {"g_cal", &RateParameters::g_cal, Domain::positive},
    {"a", &RateParameters::a, Domain::nonnegative},
    {"b", &RateParameters::b, Domain::nonnegative},
    {"c", &RateParameters::c, Domain::nonnegative},
    {"r_cal", &RateParameters::r_cal, Domain::positive},
    {"d", &RateParameters::d, Domain::nonnegative},
    {"e", &RateParameters::e, Domain::nonnegative},
    {"f", &RateParameters::f, Domain::nonnegative},
    {"gamma0_inv", &RateParameters::gamma0_inv, Domain::positive},
    {"gamma1_inv", &RateParameters::gamma1_inv, Domain::positive},
    {"eta_inv", &RateParameters::eta_inv, Domain::positive},
    {"D_inv", &RateParameters::D_inv, Domain::positive},
    {"beta0", &RateParameters::beta0, Domain::unit_interval},
    {"beta1", &RateParameters::beta1, Domain::unit_interval},
    {"Is_rate", &RateParameters::Is_rate, Domain::nonnegative},
    {"R0", &RateParameters::R0, Domain::positive},
    {"alpha_minus", &RateParameters::alpha_minus, Domain::positive},
    {"alpha_zero", &RateParameters::alpha_zero, Domain::positive},
    {"spin_polarization", &RateParameters::spin_polarization, Domain::unit_interval},
    {"pulse_width", &RateParameters::pulse_width, Domain::positive},
}};

[[noreturn]] void invalid(const std::string& what) {
  throw Error(ErrorKind::invalid_argument, "invalid rate parameters: " + what);
}

}  // namespace

std::string_view to_string(IonizationTarget target) {
  return target == IonizationTarget::ground ? "ground" : "excited";
}

IonizationTarget ionization_target_from_string(std::string_view name) {
  if (name == "ground") return IonizationTarget::ground;
  if (name == "excited") return IonizationTarget::excited;
  throw Error(ErrorKind::config, "unknown ionization target '" + std::string(name) +
                                     "' (expected ground|excited)");
}

std::string_view to_string(SingletScaling scaling) {
  return scaling == SingletScaling::linear ? "linear" : "quadratic";
}

SingletScaling singlet_scaling_from_string(std::string_view name) {
  if (name == "linear") return SingletScaling::linear;
  if (name == "quadratic") return SingletScaling::quadratic;
  throw Error(ErrorKind::config, "unknown singlet scaling '" + std::string(name) +
                                     "' (expected linear|quadratic)");
}

std::span<const ParameterInfo> parameter_table() { return kTable; }

const ParameterInfo& parameter_info(std::string_view name) {
  for (const auto& info : kTable) {
    if (info.name == name) return info;
  }
  throw Error(ErrorKind::config, "unknown parameter '" + std::string(name) + "'");
}

bool is_parameter_name(std::string_view name) {
  for (const auto& info : kTable) {
    if (info.name == name) return true;
  }
  return false;
}

double& RateParameters::operator[](std::string_view name) {
  return this->*(parameter_info(name).member);
}

double RateParameters::operator[](std::string_view name) const {
  return this->*(parameter_info(name).member);
}

void RateParameters::validate() const {
  for (const auto& info : kTable) {
    const double v = this->*(info.member);
    const std::string name(info.name);
    if (!std::isfinite(v)) invalid(name + " is not finite");
    switch (info.domain) {
      case Domain::positive:
        if (v <= 0.0) invalid(name + " must be > 0");
        break;
      case Domain::nonnegative:
        if (v < 0.0) invalid(name + " must be >= 0");
        break;
      case Domain::unit_interval:
        if (v < 0.0 || v > 1.0) invalid(name + " must lie in [0, 1]");
        break;
    }
  }
}

double RateParameters::radiative_rate(int spin) const {
  return spin == 0 ? (1.0 - beta0) / gamma0_inv : (1.0 - beta1) / gamma1_inv;
}

double RateParameters::shelving_rate(int spin) const {
  return spin == 0 ? beta0 / gamma0_inv : beta1 / gamma1_inv;
}

double RateParameters::singlet_ionization_rate(double red_rate) const {
  const double ratio = red_rate / R0;
  return is_scaling == SingletScaling::linear ? Is_rate * ratio : Is_rate * ratio * ratio;
}

RateParameters reference_parameters() { return RateParameters{}; }

ParameterSigmas reference_sigmas() {
  return {
      {"a", 0.006},          {"b", 0.01},           {"c", 0.20},
      {"d", 0.003},          {"e", 0.02},           {"f", 0.06},
      {"gamma0_inv", 0.1},   {"gamma1_inv", 0.1},   {"eta_inv", 1.5},
      {"D_inv", 20.0},       {"beta0", 0.05},       {"beta1", 0.03},
      {"Is_rate", 0.005 * 66.9}, {"R0", 0.3},       {"spin_polarization", 0.10},
  };
}

void to_json(nlohmann::json& j, const RateParameters& p) {
  j = nlohmann::json::object();
  for (const auto& info : kTable) j[std::string(info.name)] = p.*(info.member);
  j["ionization_target"] = std::string(to_string(p.ionization_target));
  j["is_scaling"] = std::string(to_string(p.is_scaling));
}

void from_json(const nlohmann::json& j, RateParameters& p) {
  if (!j.is_object()) throw Error(ErrorKind::parse, "parameter set must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "ionization_target" || key == "is_scaling" || key == "sigma") continue;
    if (!is_parameter_name(key)) {
      throw Error(ErrorKind::parse, "unknown parameter field '" + key + "'");
    }
  }
  RateParameters out;
  for (const auto& info : kTable) {
    const std::string name(info.name);
    if (!j.contains(name)) throw Error(ErrorKind::parse, "missing parameter field '" + name + "'");
    if (!j.at(name).is_number()) {
      throw Error(ErrorKind::parse, "parameter field '" + name + "' must be a number");
    }
    out.*(info.member) = j.at(name).get<double>();
  }
  if (!j.contains("ionization_target")) {
    throw Error(ErrorKind::parse, "missing parameter field 'ionization_target'");
  }
  out.ionization_target = ionization_target_from_string(j.at("ionization_target").get<std::string>());
  if (j.contains("is_scaling")) {
    out.is_scaling = singlet_scaling_from_string(j.at("is_scaling").get<std::string>());
  }
  out.validate();
  p = out;
}

nlohmann::json parameter_file_json(const RateParameters& params, const ParameterSigmas& sigmas) {
  nlohmann::json j = params;
  if (!sigmas.empty()) j["sigma"] = sigmas;
  return j;
}

ParameterFile parse_parameter_file(const nlohmann::json& j) {
  ParameterFile file;
  file.params = j.get<RateParameters>();
  if (j.contains("sigma")) {
    for (const auto& [key, value] : j.at("sigma").items()) {
      if (!is_parameter_name(key)) throw Error(ErrorKind::parse, "unknown sigma field '" + key + "'");
      const double s = value.get<double>();
      if (!(s >= 0.0)) throw Error(ErrorKind::parse, "sigma for '" + key + "' must be >= 0");
      file.sigmas[key] = s;
    }
  }
  return file;
}

ParameterFile load_parameter_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::config, "cannot open parameter file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::parse, "malformed JSON in '" + path + "': " + ex.what());
  }
  return parse_parameter_file(j);
}

}  // namespace nvcharge
