#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "nvcharge/dataset.hpp"
#include "nvcharge/io.hpp"
#include "nvcharge/model.hpp"
#include "nvcharge/photon_stats.hpp"
#include "nvcharge/rng.hpp"

namespace nvcharge {

struct JumpRecord {
  double time_ns = 0.0;
  int level = 0;
};

/// Occupancy history of one realization; records[0] is the initial level at t=0
/// and every later record is a jump.
struct JumpTrajectory {
  std::vector<JumpRecord> records;

  int final_level() const { return records.back().level; }
};

/// Continuous-time Markov jump realization of the piecewise-constant 7-level
/// generator (Gillespie direct method). Waiting times that overrun a segment
/// boundary are discarded and redrawn under the next generator, which is
/// exact by memorylessness.
class JumpSimulator {
 public:
  JumpSimulator(const PulseSequence& seq, const RateParameters& params, const GeneratorOptions& options = {});

  /// Returns the final level; appends the history to `records` when given.
  int run(int initial_level, rng::Engine& engine, std::vector<JumpRecord>* records = nullptr) const;

 private:
  struct Step {
    bool mw_pi = false;
    double duration_ns = 0.0;
    Generator generator;
  };
  std::vector<Step> steps_;
};

JumpTrajectory simulate_jump(const PulseSequence& seq, const RateParameters& params, int initial_level,
                             std::uint64_t seed, const GeneratorOptions& options = {});

/// Histogram of final levels over n independent realizations.
std::array<std::uint64_t, kLevels> final_level_counts(const PulseSequence& seq, const RateParameters& params,
                                                      int initial_level, std::uint64_t n, std::uint64_t seed,
                                                      unsigned threads = 1);

// ---------------------------------------------------------------------------
// Yellow readout: telegraph charge switching with state-dependent Poisson counts.

struct ReadoutOutcome {
  int counts = 0;
  Charge final_charge = Charge::minus;
};

ReadoutOutcome simulate_readout(const YellowRates& rates, double readout_s, Charge initial, rng::Engine& engine);

/// Count histogram (occurrences indexed by count) of n_trajectories readouts
/// whose initial charge is NV- with probability nv_minus.
std::vector<std::uint64_t> simulate_yellow_readout(const YellowRates& rates, double readout_s, double nv_minus,
                                                   std::uint64_t n_trajectories, std::uint64_t seed,
                                                   unsigned threads = 1);

// ---------------------------------------------------------------------------
// Synthetic datasets.

struct ReadoutSetup {
  YellowRates rates{27.0, 3.89, 1870.0, 48.87};
  double duration_s = 0.004;
  double prior_nv_minus = 0.638;  // NV- fraction after CW green initialization
  int threshold = -1;            // <0: choose_threshold on the model distributions
};

/// Which observable to synthesize and at which settings. value/sigma of the
/// points are ignored; for switching kinds each point yields a P_I row and a
/// P_R row, so charge_init is ignored too.
struct ExperimentDescriptor {
  ObservableKind kind = ObservableKind::switching_vs_green;
  std::vector<DatasetRow> points;
  ReadoutSetup readout;
  double separation_ns = 0.592;
};

void from_json(const nlohmann::json& j, ExperimentDescriptor& d);
void to_json(nlohmann::json& j, const ExperimentDescriptor& d);

struct GeneratedDataset {
  Dataset dataset;
  std::vector<io::OutcomePairs> pairs;  // readout outcome pairs of every switching pipeline
  ReadoutCalibration calibration;
};

/// Simulates `shots` shots per setting. Switching kinds run the full
/// readout-experiment-readout pipeline, classify both readouts by threshold and
/// extract (P_I, P_R) with the model calibration; fluorescence and depletion
/// tally excited-state occupation at the end of the optical sequence.
GeneratedDataset generate_dataset(const ExperimentDescriptor& descriptor, const RateParameters& params,
                                  std::uint64_t shots, std::uint64_t seed, unsigned threads = 1);

}  // namespace nvcharge
