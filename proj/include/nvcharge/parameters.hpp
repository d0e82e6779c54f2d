#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>

#include <json.hpp>

namespace nvcharge {

/// Where optically induced ionization of NV- deposits the system.
enum class IonizationTarget { ground, excited };

/// Power dependence of the red-induced singlet ionization rate relative to R0.
enum class SingletScaling { linear, quadratic };

std::string_view to_string(IonizationTarget target);
IonizationTarget ionization_target_from_string(std::string_view name);
std::string_view to_string(SingletScaling scaling);
SingletScaling singlet_scaling_from_string(std::string_view name);

/// Every rate, lifetime, branching fraction and scale factor of the level model.
///
/// Units: rates in GHz, lifetimes in ns, optical powers in uW average power at
/// 1 MHz repetition rate, pulse_width in ps. Green and red rates are linear in
/// power: G = g_cal * P_green and R = r_cal * P_red. Only the products G * t and
/// R * t enter single-pulse observables, so g_cal and r_cal are degenerate with
/// pulse_width; the relative rates a..f are not.
struct RateParameters {
  double g_cal = 0.2174;  // GHz / uW
  double a = 0.037;       // green ionization, fraction of G
  double b = 0.08;        // green recombination, fraction of G
  double c = 1.30;        // green NV0 excitation, fraction of G
  double r_cal = 0.8159;  // GHz / uW
  double d = 0.071;       // red ionization, fraction of R
  double e = 0.22;        // red recombination, fraction of R
  double f = 0.74;        // red NV0 stimulated emission, fraction of R
  double gamma0_inv = 12.2;  // ns
  double gamma1_inv = 6.0;   // ns
  double eta_inv = 15.9;     // ns
  double D_inv = 141.0;      // ns
  double beta0 = 0.15;
  double beta1 = 0.55;
  double Is_rate = 0.0215 * 66.9;  // GHz, at R = R0
  double R0 = 66.9;                // GHz
  double alpha_minus = 1.0;
  double alpha_zero = 0.35;
  double spin_polarization = 0.90;
  double pulse_width = 100.0;  // ps
  IonizationTarget ionization_target = IonizationTarget::ground;
  SingletScaling is_scaling = SingletScaling::linear;

  /// Throws Error(invalid_argument) naming the first violated constraint.
  void validate() const;

  double pulse_width_ns() const { return pulse_width * 1e-3; }

  // Radiative and shelving rates out of the NV- excited state, per spin.
  double radiative_rate(int spin) const;
  double shelving_rate(int spin) const;

  /// Singlet ionization rate at stimulated-emission rate `red_rate` (GHz).
  double singlet_ionization_rate(double red_rate) const;

  double& operator[](std::string_view name);
  double operator[](std::string_view name) const;
};

/// Constraint class of a scalar parameter; also selects the fit transform.
enum class Domain {
  positive,      // > 0, log transform
  nonnegative,   // >= 0, log transform when free
  unit_interval  // [0, 1], logit transform
};

struct ParameterInfo {
  std::string_view name;
  double RateParameters::*member;
  Domain domain;
};

std::span<const ParameterInfo> parameter_table();
const ParameterInfo& parameter_info(std::string_view name);
bool is_parameter_name(std::string_view name);

/// 1-sigma uncertainties keyed by parameter name.
using ParameterSigmas = std::map<std::string, double>;

/// Values shipped as the reference configuration: fitted relative rates with
/// their quoted uncertainties, fixed literature lifetimes and branching ratios.
RateParameters reference_parameters();
ParameterSigmas reference_sigmas();

void to_json(nlohmann::json& j, const RateParameters& p);
void from_json(const nlohmann::json& j, RateParameters& p);

struct ParameterFile {
  RateParameters params;
  ParameterSigmas sigmas;
};

nlohmann::json parameter_file_json(const RateParameters& params, const ParameterSigmas& sigmas);
ParameterFile parse_parameter_file(const nlohmann::json& j);
ParameterFile load_parameter_file(const std::string& path);

}  // namespace nvcharge
