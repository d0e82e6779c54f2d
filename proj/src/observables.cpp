#include "nvcharge/observables.hpp"

namespace nvcharge {

ExperimentPlan plan_experiment(ObservableKind kind, const DatasetRow& row, const RateParameters& params,
                               double separation_ns) {
  const double w = params.pulse_width_ns();
  const Segment green = Segment::green(row.green_uW, w);
  const Segment red = Segment::red(row.red_uW, w);

  ExperimentPlan plan;
  plan.nv_minus = row.charge_init;
  switch (kind) {
    case ObservableKind::fluorescence_vs_green:
      plan.readout = ExperimentPlan::Readout::fluorescence;
      plan.primary.then(green);
      break;
    case ObservableKind::switching_vs_green:
      plan.readout = ExperimentPlan::Readout::switching;
      plan.primary.then(green);
      break;
    case ObservableKind::depletion_vs_red:
      // Both traces are compared at the same instant, the end of the red pulse.
      plan.readout = ExperimentPlan::Readout::depletion;
      plan.primary.then(green).then(Segment::dark(separation_ns)).then(red);
      plan.reference = PulseSequence{};
      plan.reference->then(green).then(Segment::dark(separation_ns)).then(Segment::dark(w));
      break;
    case ObservableKind::red_switching_vs_red:
      plan.readout = ExperimentPlan::Readout::switching;
      plan.primary.then(green).then(Segment::dark(separation_ns)).then(red);
      plan.reference = PulseSequence{};
      plan.reference->then(green);
      break;
    case ObservableKind::switching_vs_tau: {
      plan.readout = ExperimentPlan::Readout::switching;
      plan.force_seven_level = true;
      PulseSequence base;
      if (row.spin == 1) base.then(Segment::mw_pi());
      base.then(green).then(Segment::dark(row.tau_ns));
      plan.reference = base;
      plan.primary = base;
      plan.primary.then(red);
      break;
    }
  }
  return plan;
}

namespace {

template <int N>
double evaluate_plan(const ExperimentPlan& plan, const RateParameters& params) {
  const Populations<N> start = make_ground_state<N>(plan.nv_minus, params.spin_polarization);
  const bool from_minus = plan.nv_minus >= 0.5;
  auto switched = [&](const PulseSequence& seq) {
    const Marginals m = marginals(apply_sequence<N>(start, seq, params));
    return from_minus ? m.nv_zero() : m.nv_minus();
  };
  auto emitted = [&](const PulseSequence& seq) { return fluorescence(apply_sequence<N>(start, seq, params), params); };

  switch (plan.readout) {
    case ExperimentPlan::Readout::fluorescence:
      return emitted(plan.primary);
    case ExperimentPlan::Readout::switching: {
      const double with = switched(plan.primary);
      return plan.reference ? with - switched(*plan.reference) : with;
    }
    case ExperimentPlan::Readout::depletion: {
      const double A = emitted(*plan.reference);
      if (A <= 0.0) return 0.0;
      return 1.0 - emitted(plan.primary) / A;
    }
  }
  return 0.0;
}

}  // namespace

double predict_observable(ObservableKind kind, const DatasetRow& row, const RateParameters& params,
                          const ObservableOptions& options) {
  const ExperimentPlan plan = plan_experiment(kind, row, params, options.separation_ns);
  if (plan.force_seven_level || options.model == ModelKind::seven_level) {
    return evaluate_plan<kLevels>(plan, params);
  }
  return evaluate_plan<kFourLevels>(plan, params);
}

double switching_probability(const PulseSequence& seq, bool start_nv_minus, const RateParameters& params,
                             ModelKind model) {
  ExperimentPlan plan;
  plan.primary = seq;
  plan.nv_minus = start_nv_minus ? 1.0 : 0.0;
  return model == ModelKind::seven_level ? evaluate_plan<kLevels>(plan, params)
                                         : evaluate_plan<kFourLevels>(plan, params);
}

}  // namespace nvcharge
