#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace nvcharge {

enum class Charge { minus, zero };

inline Charge other(Charge c) { return c == Charge::minus ? Charge::zero : Charge::minus; }

/// Charge switching and photon emission rates under continuous yellow
/// illumination, all in Hz.
struct YellowRates {
  double gamma_minus = 0.0;  // ionization NV- -> NV0
  double gamma_zero = 0.0;   // recombination NV0 -> NV-
  double mu_minus = 0.0;     // NV- photon detection rate
  double mu_zero = 0.0;      // NV0 photon detection rate

  /// Rates non-negative and finite.
  void validate() const;
  /// Readout contrast mu_minus > mu_zero.
  bool has_contrast() const { return mu_minus > mu_zero; }
  /// Steady-state NV- occupation gamma_zero / (gamma_zero + gamma_minus).
  double steady_state_nv_minus() const;
  /// Exchanges the roles of the two charge states.
  YellowRates swapped() const { return {gamma_zero, gamma_minus, mu_zero, mu_minus}; }
};

/// Counts distribution of a readout window conditioned on the starting charge,
/// split by whether the window ends in the starting charge (even number of
/// switches) or the other one (odd number).
struct ConditionalCounts {
  std::vector<double> same;
  std::vector<double> switched;

  std::vector<double> total() const;
};

struct CountDistribution {
  std::vector<double> probabilities;  // P(n), n = 0..n_max
  double readout_s = 0.0;
  double nv_minus = 0.0;

  int n_max() const { return static_cast<int>(probabilities.size()) - 1; }
};

/// Which representation of the switching series to sum.
enum class SeriesForm {
  direct,  // term-by-term power series
  bessel   // closed form in modified Bessel functions I0, I1
};

/// ceil(mu t + 10 sqrt(mu t)) + 10 with mu the larger emission rate.
int default_n_max(const YellowRates& rates, double readout_s);

/// P(n, final charge | initial charge) for n = 0..n_max. The residence-time
/// integral is evaluated by adaptive 20-point Gauss-Legendre quadrature.
ConditionalCounts conditional_counts(const YellowRates& rates, double readout_s, Charge initial,
                                     int n_max, SeriesForm form = SeriesForm::direct,
                                     double abs_tolerance = 1e-13);

/// Mixture P(n) = N- P(n | NV-) + (1 - N-) P(n | NV0). Throws Error(numeric)
/// if more than 1e-10 of probability lies beyond n_max.
CountDistribution count_distribution(const YellowRates& rates, double readout_s, double nv_minus,
                                     int n_max, SeriesForm form = SeriesForm::direct);
CountDistribution count_distribution(const YellowRates& rates, double readout_s, double nv_minus);

// ---------------------------------------------------------------------------
// Threshold readout.

struct ThresholdChoice {
  int threshold = 0;   // counts <= threshold read as NV0
  double R0 = 0.0;     // P(m0 | NV0)
  double Rm = 0.0;     // P(m- | NV-)
  double weighted_fidelity = 0.0;
};

/// Maximizes 1 - [(1 - N-) eps0 + N- eps-] / 2 over integer thresholds; ties go
/// to the smaller threshold.
ThresholdChoice choose_threshold(std::span<const double> dist_minus, std::span<const double> dist_zero,
                                 double nv_minus);

struct ReadoutCalibration {
  int threshold = 0;
  double R0 = 1.0, Rm = 1.0;  // readout fidelities
  double I0 = 1.0, Im = 1.0;  // initialization fidelities
  double sigma_R0 = 0.0, sigma_Rm = 0.0, sigma_I0 = 0.0, sigma_Im = 0.0;

  /// Fidelities in [0, 1], threshold >= 0, R0 + Rm - 1 > 0 and I0 + Im - 1 > 0.
  void validate() const;
};

struct InitializationFidelities {
  double I0 = 0.0;
  double Im = 0.0;
  std::vector<std::string> warnings;
};

/// Inverts Q_Z = I R + (1 - I)(1 - R_other) for both charge labels. Values in
/// [-0.05, 0) or (1, 1.05] are clamped with a warning; beyond that is an error.
InitializationFidelities initialization_fidelities(double QZ0, double QZm, double R0, double Rm);

/// Calibration implied by the yellow readout model: readout fidelities from
/// the conditional count distributions and initialization fidelities from the
/// joint distribution of (counts, final charge). `nv_minus_prior` is the
/// charge distribution entering the first readout. A negative threshold asks
/// for choose_threshold.
ReadoutCalibration model_calibration(const YellowRates& rates, double readout_s,
                                     double nv_minus_prior, int threshold = -1);

// ---------------------------------------------------------------------------
// Switching probabilities from repeated readouts.

struct RepeatProbabilities {
  double Q0 = 1.0;  // P(m0 second | m0 first)
  double Qm = 1.0;  // P(m- second | m- first)
  double sigma_Q0 = 0.0;
  double sigma_Qm = 0.0;
};

/// Q0, Q- from outcome-pair counts n[first][second]; standard errors use the
/// Agresti-Coull estimate (k + 1) / (n + 2) so that they stay positive at 0 or 1.
RepeatProbabilities repeat_probabilities_from_counts(std::uint64_t n00, std::uint64_t n0m,
                                                     std::uint64_t nm0, std::uint64_t nmm);

/// Forward probability tree: Q0, Q- given the switching probabilities of the
/// applied experiment and the readout calibration.
RepeatProbabilities forward_repeat_probabilities(double P_I, double P_R, const ReadoutCalibration& cal);

struct SwitchingEstimate {
  double P_I = 0.0;
  double P_R = 0.0;
  double sigma_P_I = 0.0;
  double sigma_P_R = 0.0;
};

/// Solves the forward tree for (P_I, P_R) as a 2x2 linear system and
/// propagates the standard errors of Q and of the calibration to first order.
/// Throws Error(numeric) when |det| < 1e-9.
SwitchingEstimate extract_switching(const RepeatProbabilities& q, const ReadoutCalibration& cal);

// ---------------------------------------------------------------------------
// Maximum-likelihood estimation of yellow rates from a count histogram.

struct YellowFitOptions {
  bool steady_state = false;  // tie N- to gamma_zero / (gamma_zero + gamma_minus)
  int n_max = -1;             // <0: max(default_n_max, histogram size - 1)
};

struct YellowFit {
  YellowRates rates;
  double nv_minus = 0.0;
  /// Order: gamma_minus, gamma_zero, mu_minus, mu_zero[, nv_minus].
  Eigen::MatrixXd covariance;
  std::vector<double> sigmas;
  double negative_log_likelihood = 0.0;
  std::vector<std::string> warnings;
};

/// Multinomial maximum-likelihood fit; `occurrences[n]` is the number of bins
/// with n counts. Covariance is the inverse expected Fisher information.
YellowFit fit_yellow_rates(std::span<const std::uint64_t> occurrences, double readout_s,
                           const YellowFitOptions& options = {});

}  // namespace nvcharge
