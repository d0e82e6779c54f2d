#pragma once

#include <optional>

#include "nvcharge/dataset.hpp"
#include "nvcharge/model.hpp"

namespace nvcharge {

/// Charge-conditioned initial NV- fractions of the green fluorescence data.
inline constexpr double kInitNvMinusHigh = 0.9125;
inline constexpr double kInitNvMinusLow = 0.05;
inline constexpr double kInitNvMinusUnconditioned = 0.638;

struct ObservableOptions {
  ModelKind model = ModelKind::seven_level;
  double separation_ns = 0.592;
};

/// How one observation is produced: the optical sequence(s), the initial
/// state, and how the final states combine into the observed value.
struct ExperimentPlan {
  enum class Readout {
    fluorescence,  // alpha-weighted excited population after `primary`
    switching,     // P(other charge) after `primary`, minus after `reference` if present
    depletion      // 1 - F(primary) / F(reference)
  };
  Readout readout = Readout::switching;
  PulseSequence primary;
  std::optional<PulseSequence> reference;
  double nv_minus = 1.0;  // initial NV- fraction, NV- starts in the ground triplet
  bool force_seven_level = false;
};

ExperimentPlan plan_experiment(ObservableKind kind, const DatasetRow& row, const RateParameters& params,
                               double separation_ns);

/// Model value of one observation.
double predict_observable(ObservableKind kind, const DatasetRow& row, const RateParameters& params,
                          const ObservableOptions& options = {});

/// Probability of ending in the charge opposite to the (pure) starting charge.
double switching_probability(const PulseSequence& seq, bool start_nv_minus, const RateParameters& params,
                             ModelKind model = ModelKind::seven_level);

}  // namespace nvcharge
