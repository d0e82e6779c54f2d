#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "nvcharge/model.hpp"
#include "nvcharge/parameters.hpp"

namespace nvcharge {

/// Joint uncertainty of a subset of parameters.
struct ParameterCovariance {
  std::vector<std::string> names;
  Eigen::MatrixXd matrix;

  static ParameterCovariance diagonal(const ParameterSigmas& sigmas);
};

struct SweepOptimum {
  Eigen::VectorXd location;  // in grid-axis units
  double value = 0.0;
  std::string channel;
  bool interior = false;  // false when the best point sits on the edge of the grid
};

/// Rows are grid points. `grid` holds the independent variables (one column
/// per axis), `values` and `std_errors` one column per outcome channel.
struct SweepResult {
  std::vector<std::string> axes;
  Eigen::MatrixXd grid;
  std::vector<std::string> channels;
  Eigen::MatrixXd values;
  Eigen::MatrixXd std_errors;
  std::optional<SweepOptimum> optimum;
  nlohmann::json summary = nlohmann::json::object();  // extra scalars (saturation limits, calibrations)

  Eigen::Index channel_index(std::string_view name) const;
};

void write_sweep_csv(std::ostream& out, const SweepResult& sweep);
nlohmann::json sweep_summary_json(const SweepResult& sweep);

/// Standard errors of f(params) by first-order propagation of `cov`.
Eigen::VectorXd linearized_std_errors(const std::function<Eigen::VectorXd(const RateParameters&)>& f,
                                      const RateParameters& params, const ParameterCovariance& cov);

/// Sample standard deviation of f over draws from N(params, cov); draws
/// outside the parameter domains are clamped to it.
Eigen::VectorXd bootstrap_std_errors(const std::function<Eigen::VectorXd(const RateParameters&)>& f,
                                     const RateParameters& params, const ParameterCovariance& cov,
                                     int samples = 200, std::uint64_t seed = 20180411);

struct SweepOptions {
  ModelKind model = ModelKind::four_level;
  /// Exclude NV0 -> NV- return flow so the NV0 channel is the cumulative
  /// ionization probability.
  bool absorbing = true;
  double separation_ns = 0.592;
  const ParameterCovariance* covariance = nullptr;
  double tolerance = 1e-6;  // in pulse area
};

/// Green power (uW) giving pulse area G * t_pulse, and the inverse.
double green_power_for_area(const RateParameters& params, double area);
double red_power_for_area(const RateParameters& params, double area);

/// Start in g-, one green pulse per grid area. Channels: e_minus, ionized, g_minus.
/// The optimum maximizes e_minus.
SweepResult green_excitation_sweep(const RateParameters& params, const std::vector<double>& areas,
                                   const SweepOptions& options = {});

/// Start in e-, one red pulse per grid area. Channels: stimulated (g-) and
/// ionized. summary holds the saturation values and the 1/(1+d) limit.
SweepResult red_branching_sweep(const RateParameters& params, const std::vector<double>& areas,
                                const SweepOptions& options = {});

/// P(excite on the green pulse) x P(return to g- after the delay and red pulse),
/// both factors without NV0 -> NV- return flow. Grid is green area x red area.
SweepResult cycling_probability(const RateParameters& params, const std::vector<double>& green_areas,
                                const std::vector<double>& red_areas, const SweepOptions& options = {});

struct PolarizationOutcome {
  double nv_minus = 0.0;
  double polarization = 0.0;
  double green_area = 0.0;
  double red_area = 0.0;
};

/// Green pulse, delay, red pulse on the 7-level model starting from the given
/// NV- fraction and ms=0 polarization. Areas default to the cycling optimum
/// green area and a saturating red area.
PolarizationOutcome polarization_pipeline(const RateParameters& params, double nv_minus, double polarization,
                                          std::optional<double> green_area = std::nullopt,
                                          std::optional<double> red_area = std::nullopt,
                                          double separation_ns = 0.592);

/// P_switch(green, delay, red) - P_switch(green) per grid point in uW, with
/// channels ionization (start NV-) and recombination (start NV0).
SweepResult red_induced_switching_grid(const RateParameters& params, const std::vector<double>& green_uW,
                                       const std::vector<double>& red_uW, const SweepOptions& options = {});

struct PulseTrain {
  double green_uW = 0.0;
  double red_uW = 0.0;
  double separation_ns = 0.592;
  double period_ns = 1000.0;
};

struct SteadyStateTrace {
  std::vector<double> time_us;   // end of each period, t=0 first
  std::vector<double> nv_minus;
  StateVector fixed_point;       // invariant state of the period map
  double fixed_point_nv_minus = 0.0;
};

SteadyStateTrace steady_state_train(const RateParameters& params, const PulseTrain& train, double duration_us,
                                    double initial_nv_minus = 0.638);

}  // namespace nvcharge
