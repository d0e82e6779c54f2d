#pragma once

#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "nvcharge/error.hpp"
#include "nvcharge/parameters.hpp"
#include "nvcharge/sequence.hpp"

namespace nvcharge {

template <int N>
using Populations = Eigen::Matrix<double, N, 1>;
template <int N>
using RateMatrix = Eigen::Matrix<double, N, N>;

inline constexpr int kLevels = 7;
using StateVector = Populations<kLevels>;
using Generator = RateMatrix<kLevels>;

inline constexpr int kFourLevels = 4;
using FourStateVector = Populations<kFourLevels>;
using FourGenerator = RateMatrix<kFourLevels>;

/// Kinetic levels of the full model: NV- ground and excited triplet split by
/// spin projection (0 and +-1), the NV- singlet, and NV0 ground and excited.
namespace level {
enum : int { g_minus_0 = 0, g_minus_1, e_minus_0, e_minus_1, singlet, g_zero, e_zero };
}

/// Reduced model without singlet or spin structure.
namespace four_level {
enum : int { g_minus = 0, e_minus, g_zero, e_zero };
}

enum class ModelKind { four_level, seven_level };

struct GeneratorOptions {
  /// Drop every NV0 -> NV- transition so NV0 becomes absorbing; used for
  /// quantities that must exclude ionize-then-recombine pathways.
  bool absorbing_nv_zero = false;
};

/// Generator L of dp/dt = L p (columns sum to zero) for one segment kind.
/// Relaxation (spontaneous emission, shelving, deshelving) is present for all
/// kinds. mw_pi is not a generator; passing it throws.
Generator build_rate_matrix(const RateParameters& params, SegmentKind kind, double power_uW,
                            const GeneratorOptions& options = {});

FourGenerator build_four_level_matrix(const RateParameters& params, SegmentKind kind,
                                      double power_uW, const GeneratorOptions& options = {});

template <int N>
RateMatrix<N> build_generator(const RateParameters& params, SegmentKind kind, double power_uW,
                              const GeneratorOptions& options = {}) {
  if constexpr (N == kLevels) {
    return build_rate_matrix(params, kind, power_uW, options);
  } else {
    static_assert(N == kFourLevels, "only the 4- and 7-level models exist");
    return build_four_level_matrix(params, kind, power_uW, options);
  }
}

/// Throws unless every component is in [-tol, 1 + tol] and the sum is 1 within tol.
template <int N>
void validate_state(const Populations<N>& p, double tol = 1e-9) {
  if (!p.allFinite()) throw Error(ErrorKind::invalid_argument, "state has non-finite populations");
  if ((p.array() < -tol).any() || (p.array() > 1.0 + tol).any()) {
    throw Error(ErrorKind::invalid_argument, "state populations must lie in [0, 1]");
  }
  if (std::abs(p.sum() - 1.0) > tol) {
    throw Error(ErrorKind::invalid_argument, "state populations must sum to 1");
  }
}

/// exp(L t) for t in ns, via scaling-and-squaring Pade. Columns are
/// renormalized because squaring accumulates roundoff in their sums over
/// long dark intervals.
template <int N>
RateMatrix<N> transfer_matrix(const RateMatrix<N>& generator, double t_ns) {
  RateMatrix<N> transfer = (generator * t_ns).exp();
  for (int j = 0; j < N; ++j) transfer.col(j) /= transfer.col(j).sum();
  return transfer;
}

/// exp(L t) p; exact for a piecewise-constant schedule.
template <int N>
Populations<N> propagate(const Populations<N>& state, const RateMatrix<N>& generator, double t_ns) {
  if (!(t_ns >= 0.0)) throw Error(ErrorKind::invalid_argument, "propagation time must be >= 0");
  validate_state(state);
  if (t_ns == 0.0) return state;
  return transfer_matrix<N>(generator, t_ns) * state;
}

template <int N>
struct TimedState {
  double time_ns;
  Populations<N> state;
};

template <int N>
using Trajectory = std::vector<TimedState<N>>;

/// Swaps ms=0 and ms=+-1 within the NV- ground and excited triplets.
StateVector apply_mw_pi(const StateVector& state);
inline FourStateVector apply_mw_pi(const FourStateVector& state) { return state; }

/// Applies each segment in order; returns the input state at t=0 followed by
/// the state at every segment boundary.
Trajectory<kLevels> run_sequence(const StateVector& state, const PulseSequence& seq,
                                 const RateParameters& params, const GeneratorOptions& options = {});
Trajectory<kFourLevels> run_sequence(const FourStateVector& state, const PulseSequence& seq,
                                     const RateParameters& params,
                                     const GeneratorOptions& options = {});

/// Final state of run_sequence without recording boundaries.
template <int N>
Populations<N> apply_sequence(const Populations<N>& state, const PulseSequence& seq,
                              const RateParameters& params, const GeneratorOptions& options = {}) {
  seq.validate();
  Populations<N> p = state;
  for (const auto& s : seq.segments) {
    if (s.kind == SegmentKind::mw_pi) {
      p = apply_mw_pi(p);
    } else {
      p = propagate<N>(p, build_generator<N>(params, s.kind, s.power_uW, options), s.duration_ns);
    }
  }
  return p;
}

/// alpha_- (e-(0) + e-(+-1)) + alpha_0 e0.
double fluorescence(const StateVector& state, const RateParameters& params);
double fluorescence(const FourStateVector& state, const RateParameters& params);

/// Charge and level marginals, common to both model sizes.
struct Marginals {
  double g_minus = 0.0;
  double e_minus = 0.0;
  double singlet = 0.0;
  double g_zero = 0.0;
  double e_zero = 0.0;
  double ms0 = 0.0;      // ms=0 population in the NV- triplet (g and e)
  double triplet = 0.0;  // total NV- triplet population

  double nv_minus() const { return g_minus + e_minus + singlet; }
  double nv_zero() const { return g_zero + e_zero; }
  /// ms=0 fraction of the NV- triplet; 1 when the triplet is empty.
  double spin_polarization() const { return triplet > 0.0 ? ms0 / triplet : 1.0; }
};

Marginals marginals(const StateVector& state);
Marginals marginals(const FourStateVector& state);

/// Ground-state mixture with NV- fraction `nv_minus` and ms=0 fraction `ms0`.
StateVector ground_state(double nv_minus, double ms0);
FourStateVector four_level_ground_state(double nv_minus);

template <int N>
Populations<N> make_ground_state(double nv_minus, double ms0) {
  if constexpr (N == kLevels) {
    return ground_state(nv_minus, ms0);
  } else {
    return four_level_ground_state(nv_minus);
  }
}

/// Merges spin components and folds the singlet into the NV- ground state.
FourStateVector reduce_to_four_level(const StateVector& state);

}  // namespace nvcharge
