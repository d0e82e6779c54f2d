#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "nvcharge/dataset.hpp"
#include "nvcharge/model.hpp"
#include "nvcharge/optimize.hpp"
#include "nvcharge/parameters.hpp"

namespace nvcharge {

/// Variable in which the optical calibrations are fitted. per_area fits the
/// pulse area per uW (g_cal * pulse width) instead of the rate per uW; the two
/// give identical predictions at the optimum.
enum class RateBasis { per_power, per_area };

struct FitConfig {
  std::vector<std::string> free{"g_cal", "a", "b", "c", "r_cal", "d", "e", "f", "alpha_minus", "alpha_zero"};
  /// Parameters declared fixed. Everything not free is held anyway; naming a
  /// parameter in both lists is a config error.
  std::vector<std::string> fixed;
  IonizationTarget variant = IonizationTarget::ground;
  ModelKind model = ModelKind::seven_level;
  RateBasis basis = RateBasis::per_power;
  optimize::LevenbergMarquardtOptions lm;

  int multi_start = 0;  // extra starts from log-uniform perturbations of the initial guess
  std::uint64_t seed = 20180411;

  /// Refit at +-1 sigma of each fixed parameter listed here and add the
  /// resulting shifts of the free parameters in quadrature.
  ParameterSigmas fixed_sigmas;
  bool propagate_fixed = false;

  /// Throw Error(non_identifiable) instead of flagging in the result.
  bool strict_identifiability = false;

  void validate() const;
};

struct FitResult {
  RateParameters params;
  std::vector<std::string> free;
  std::vector<std::string> fixed;
  IonizationTarget variant = IonizationTarget::ground;
  Eigen::VectorXd sigmas;             // total: statistical and fixed-parameter shifts in quadrature
  Eigen::VectorXd statistical_sigmas;
  Eigen::VectorXd systematic_sigmas;
  Eigen::MatrixXd covariance;         // statistical, in natural parameter units
  double sse = 0.0;
  int n_points = 0;
  int dof = 0;
  int iterations = 0;
  std::vector<double> sse_history;
  std::vector<std::string> non_identifiable;
  Eigen::VectorXd null_direction;  // unit vector over `free`, empty when identifiable
  Eigen::VectorXd predictions;
  Eigen::VectorXd residuals;       // (observed - predicted) / sigma, datasets concatenated

  double reduced_chi2() const { return dof > 0 ? sse / dof : 0.0; }
  double sigma_of(std::string_view name) const;
};

/// Weighted residuals of every row against the model.
Eigen::VectorXd weighted_residuals(std::span<const Dataset> datasets, const RateParameters& params,
                                   ModelKind model = ModelKind::seven_level);

/// Simultaneous weighted least-squares fit across datasets.
FitResult fit(std::span<const Dataset> datasets, const RateParameters& initial, const FitConfig& config = {});

nlohmann::json fit_result_json(const FitResult& result);

/// Residual table: dataset columns followed by predicted value and weighted residual.
void write_residuals_csv(std::ostream& out, std::span<const Dataset> datasets, const FitResult& result);

struct GreenCalibration {
  double power_uW = 0.0;
  double sse = 0.0;
};

/// Green power at which the model's green-only switching probabilities best
/// match `probe` (switching_vs_green rows; green_uW is ignored). Searches
/// [0, 2 * max_reference_uW] and throws Error(numeric) when the best match sits
/// on the upper edge.
GreenCalibration cross_calibrate_green(const RateParameters& reference, double max_reference_uW,
                                       const Dataset& probe, ModelKind model = ModelKind::seven_level);

}  // namespace nvcharge
