#include "nvcharge/model.hpp"

namespace nvcharge {

namespace {

template <int N>
struct GeneratorBuilder {
  RateMatrix<N> L = RateMatrix<N>::Zero();

  void add(int from, int to, double rate) {
    if (rate == 0.0) return;
    L(to, from) += rate;
    L(from, from) -= rate;
  }
};

void check_kind_and_power(SegmentKind kind, double power_uW) {
  if (kind == SegmentKind::mw_pi) {
    throw Error(ErrorKind::invalid_argument, "mw_pi is instantaneous and has no rate matrix");
  }
  if (!(power_uW >= 0.0)) throw Error(ErrorKind::invalid_argument, "optical power must be >= 0");
}

}  // namespace

Generator build_rate_matrix(const RateParameters& params, SegmentKind kind, double power_uW,
                            const GeneratorOptions& options) {
  check_kind_and_power(kind, power_uW);
  using namespace level;
  GeneratorBuilder<kLevels> b;
  const int target = params.ionization_target == IonizationTarget::ground ? g_zero : e_zero;
  const bool recombine = !options.absorbing_nv_zero;

  for (int spin = 0; spin < 2; ++spin) {
    b.add(e_minus_0 + spin, g_minus_0 + spin, params.radiative_rate(spin));
    b.add(e_minus_0 + spin, singlet, params.shelving_rate(spin));
  }
  b.add(singlet, g_minus_0, 1.0 / params.D_inv);
  b.add(e_zero, g_zero, 1.0 / params.eta_inv);

  if (kind == SegmentKind::green) {
    const double G = params.g_cal * power_uW;
    for (int spin = 0; spin < 2; ++spin) {
      b.add(g_minus_0 + spin, e_minus_0 + spin, G);
      b.add(e_minus_0 + spin, target, params.a * G);
    }
    if (recombine) {
      b.add(e_zero, g_minus_0, 0.5 * params.b * G);
      b.add(e_zero, g_minus_1, 0.5 * params.b * G);
    }
    b.add(g_zero, e_zero, params.c * G);
  } else if (kind == SegmentKind::red) {
    const double R = params.r_cal * power_uW;
    for (int spin = 0; spin < 2; ++spin) {
      b.add(e_minus_0 + spin, g_minus_0 + spin, R);
      b.add(e_minus_0 + spin, target, params.d * R);
    }
    if (recombine) {
      b.add(e_zero, g_minus_0, 0.5 * params.e * R);
      b.add(e_zero, g_minus_1, 0.5 * params.e * R);
    }
    b.add(e_zero, g_zero, params.f * R);
    b.add(singlet, target, params.singlet_ionization_rate(R));
  }
  return b.L;
}

FourGenerator build_four_level_matrix(const RateParameters& params, SegmentKind kind,
                                      double power_uW, const GeneratorOptions& options) {
  check_kind_and_power(kind, power_uW);
  using namespace four_level;
  GeneratorBuilder<kFourLevels> b;
  const int target = params.ionization_target == IonizationTarget::ground ? g_zero : e_zero;
  const bool recombine = !options.absorbing_nv_zero;

  b.add(e_minus, g_minus, 1.0 / params.gamma0_inv);
  b.add(e_zero, g_zero, 1.0 / params.eta_inv);

  if (kind == SegmentKind::green) {
    const double G = params.g_cal * power_uW;
    b.add(g_minus, e_minus, G);
    b.add(e_minus, target, params.a * G);
    if (recombine) b.add(e_zero, g_minus, params.b * G);
    b.add(g_zero, e_zero, params.c * G);
  } else if (kind == SegmentKind::red) {
    const double R = params.r_cal * power_uW;
    b.add(e_minus, g_minus, R);
    b.add(e_minus, target, params.d * R);
    if (recombine) b.add(e_zero, g_minus, params.e * R);
    b.add(e_zero, g_zero, params.f * R);
  }
  return b.L;
}

StateVector apply_mw_pi(const StateVector& state) {
  StateVector out = state;
  std::swap(out(level::g_minus_0), out(level::g_minus_1));
  std::swap(out(level::e_minus_0), out(level::e_minus_1));
  return out;
}

namespace {

template <int N>
Trajectory<N> run_sequence_impl(const Populations<N>& state, const PulseSequence& seq,
                                const RateParameters& params, const GeneratorOptions& options) {
  params.validate();
  seq.validate();
  validate_state(state);
  Trajectory<N> out;
  out.reserve(seq.segments.size() + 1);
  double t = 0.0;
  Populations<N> p = state;
  out.push_back({t, p});
  for (const auto& s : seq.segments) {
    if (s.kind == SegmentKind::mw_pi) {
      p = apply_mw_pi(p);
    } else {
      p = propagate<N>(p, build_generator<N>(params, s.kind, s.power_uW, options), s.duration_ns);
      t += s.duration_ns;
    }
    out.push_back({t, p});
  }
  return out;
}

}  // namespace

Trajectory<kLevels> run_sequence(const StateVector& state, const PulseSequence& seq,
                                 const RateParameters& params, const GeneratorOptions& options) {
  return run_sequence_impl<kLevels>(state, seq, params, options);
}

Trajectory<kFourLevels> run_sequence(const FourStateVector& state, const PulseSequence& seq,
                                     const RateParameters& params,
                                     const GeneratorOptions& options) {
  return run_sequence_impl<kFourLevels>(state, seq, params, options);
}

double fluorescence(const StateVector& state, const RateParameters& params) {
  return params.alpha_minus * (state(level::e_minus_0) + state(level::e_minus_1)) +
         params.alpha_zero * state(level::e_zero);
}

double fluorescence(const FourStateVector& state, const RateParameters& params) {
  return params.alpha_minus * state(four_level::e_minus) +
         params.alpha_zero * state(four_level::e_zero);
}

Marginals marginals(const StateVector& p) {
  using namespace level;
  Marginals m;
  m.g_minus = p(g_minus_0) + p(g_minus_1);
  m.e_minus = p(e_minus_0) + p(e_minus_1);
  m.singlet = p(singlet);
  m.g_zero = p(g_zero);
  m.e_zero = p(e_zero);
  m.ms0 = p(g_minus_0) + p(e_minus_0);
  m.triplet = m.g_minus + m.e_minus;
  return m;
}

Marginals marginals(const FourStateVector& p) {
  using namespace four_level;
  Marginals m;
  m.g_minus = p(g_minus);
  m.e_minus = p(e_minus);
  m.g_zero = p(g_zero);
  m.e_zero = p(e_zero);
  m.triplet = m.g_minus + m.e_minus;
  m.ms0 = m.triplet;
  return m;
}

StateVector ground_state(double nv_minus, double ms0) {
  if (!(nv_minus >= 0.0 && nv_minus <= 1.0) || !(ms0 >= 0.0 && ms0 <= 1.0)) {
    throw Error(ErrorKind::invalid_argument, "charge and spin fractions must lie in [0, 1]");
  }
  StateVector p = StateVector::Zero();
  p(level::g_minus_0) = nv_minus * ms0;
  p(level::g_minus_1) = nv_minus * (1.0 - ms0);
  p(level::g_zero) = 1.0 - nv_minus;
  return p;
}

FourStateVector four_level_ground_state(double nv_minus) {
  if (!(nv_minus >= 0.0 && nv_minus <= 1.0)) {
    throw Error(ErrorKind::invalid_argument, "charge fraction must lie in [0, 1]");
  }
  FourStateVector p = FourStateVector::Zero();
  p(four_level::g_minus) = nv_minus;
  p(four_level::g_zero) = 1.0 - nv_minus;
  return p;
}

FourStateVector reduce_to_four_level(const StateVector& s) {
  FourStateVector p;
  p(four_level::g_minus) = s(level::g_minus_0) + s(level::g_minus_1) + s(level::singlet);
  p(four_level::e_minus) = s(level::e_minus_0) + s(level::e_minus_1);
  p(four_level::g_zero) = s(level::g_zero);
  p(four_level::e_zero) = s(level::e_zero);
  return p;
}

}  // namespace nvcharge
