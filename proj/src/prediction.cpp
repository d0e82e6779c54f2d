#include "nvcharge/prediction.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "nvcharge/error.hpp"
#include "nvcharge/io.hpp"
#include "nvcharge/observables.hpp"
#include "nvcharge/optimize.hpp"
#include "nvcharge/rng.hpp"

namespace nvcharge {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kSaturatingArea = 1000.0;

void require_grid(const std::vector<double>& grid, std::string_view what) {
  if (grid.empty()) throw Error(ErrorKind::invalid_argument, std::string(what) + " grid is empty");
  for (double x : grid) {
    if (!(x >= 0.0) || !std::isfinite(x)) {
      throw Error(ErrorKind::invalid_argument, std::string(what) + " grid values must be finite and >= 0");
    }
  }
}

/// Start state with all population in the NV- ground (4-level) or split by the
/// spin polarization (7-level).
template <int N>
Populations<N> nv_minus_ground(const RateParameters& params) {
  return make_ground_state<N>(1.0, params.spin_polarization);
}

template <int N>
Populations<N> nv_minus_excited(const RateParameters& params) {
  Populations<N> p = Populations<N>::Zero();
  if constexpr (N == kLevels) {
    p(level::e_minus_0) = params.spin_polarization;
    p(level::e_minus_1) = 1.0 - params.spin_polarization;
  } else {
    p(four_level::e_minus) = 1.0;
  }
  return p;
}

GeneratorOptions generator_options(const SweepOptions& o) { return {o.absorbing}; }

template <int N>
Marginals after_green(const RateParameters& params, double area, const SweepOptions& o) {
  PulseSequence seq;
  seq.then(Segment::green(green_power_for_area(params, area), params.pulse_width_ns()));
  return marginals(apply_sequence<N>(nv_minus_ground<N>(params), seq, params, generator_options(o)));
}

template <int N>
Marginals after_red(const RateParameters& params, double area, double delay_ns, const SweepOptions& o) {
  PulseSequence seq;
  if (delay_ns > 0.0) seq.then(Segment::dark(delay_ns));
  seq.then(Segment::red(red_power_for_area(params, area), params.pulse_width_ns()));
  return marginals(apply_sequence<N>(nv_minus_excited<N>(params), seq, params, generator_options(o)));
}

Marginals green_marginals(const RateParameters& params, double area, const SweepOptions& o) {
  return o.model == ModelKind::seven_level ? after_green<kLevels>(params, area, o)
                                           : after_green<kFourLevels>(params, area, o);
}

Marginals red_marginals(const RateParameters& params, double area, double delay_ns, const SweepOptions& o) {
  return o.model == ModelKind::seven_level ? after_red<kLevels>(params, area, delay_ns, o)
                                           : after_red<kFourLevels>(params, area, delay_ns, o);
}

double excitation(const RateParameters& p, double area, const SweepOptions& o) {
  return green_marginals(p, area, o).e_minus;
}

double ret(const RateParameters& p, double area, const SweepOptions& o) {
  return red_marginals(p, area, o.separation_ns, o).g_minus;
}

/// Fills std_errors by linearized propagation of options.covariance.
void attach_errors(SweepResult& sweep, const RateParameters& params, const SweepOptions& o,
                   const std::function<MatrixXd(const RateParameters&)>& evaluate) {
  sweep.std_errors = MatrixXd::Zero(sweep.values.rows(), sweep.values.cols());
  if (!o.covariance) return;
  const Eigen::Index rows = sweep.values.rows(), cols = sweep.values.cols();
  const auto flat = [&](const RateParameters& p) -> VectorXd {
    const MatrixXd m = evaluate(p);
    return Eigen::Map<const VectorXd>(m.data(), m.size());
  };
  const VectorXd se = linearized_std_errors(flat, params, *o.covariance);
  sweep.std_errors = Eigen::Map<const MatrixXd>(se.data(), rows, cols);
}

double clamp_to_domain(const ParameterInfo& info, double v) {
  switch (info.domain) {
    case Domain::positive: return std::max(v, 1e-12);
    case Domain::nonnegative: return std::max(v, 0.0);
    case Domain::unit_interval: return std::clamp(v, 0.0, 1.0);
  }
  return v;
}

SweepOptimum locate_maximum(const std::function<double(double)>& f, const std::vector<double>& grid,
                            double tolerance) {
  const auto best = optimize::scan_and_refine_maximum(f, grid, tolerance);
  const auto [lo, hi] = std::minmax_element(grid.begin(), grid.end());
  SweepOptimum opt;
  opt.location = VectorXd::Constant(1, best.x);
  opt.value = best.value;
  opt.interior = grid.size() > 2 && best.x > *lo + tolerance && best.x < *hi - tolerance;
  return opt;
}

}  // namespace

ParameterCovariance ParameterCovariance::diagonal(const ParameterSigmas& sigmas) {
  ParameterCovariance cov;
  for (const auto& [name, s] : sigmas) {
    parameter_info(name);
    cov.names.push_back(name);
  }
  cov.matrix = MatrixXd::Zero(cov.names.size(), cov.names.size());
  for (std::size_t i = 0; i < cov.names.size(); ++i) {
    const double s = sigmas.at(cov.names[i]);
    cov.matrix(i, i) = s * s;
  }
  return cov;
}

Eigen::Index SweepResult::channel_index(std::string_view name) const {
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] == name) return static_cast<Eigen::Index>(i);
  }
  throw Error(ErrorKind::invalid_argument, "sweep has no channel '" + std::string(name) + "'");
}

void write_sweep_csv(std::ostream& out, const SweepResult& s) {
  bool first = true;
  auto sep = [&] {
    if (!first) out << ',';
    first = false;
  };
  for (const auto& a : s.axes) sep(), out << a;
  for (const auto& c : s.channels) sep(), out << c;
  for (const auto& c : s.channels) sep(), out << c << "_se";
  out << '\n';
  for (Eigen::Index i = 0; i < s.grid.rows(); ++i) {
    first = true;
    for (Eigen::Index j = 0; j < s.grid.cols(); ++j) sep(), out << io::format_number(s.grid(i, j));
    for (Eigen::Index j = 0; j < s.values.cols(); ++j) sep(), out << io::format_number(s.values(i, j));
    for (Eigen::Index j = 0; j < s.std_errors.cols(); ++j) sep(), out << io::format_number(s.std_errors(i, j));
    out << '\n';
  }
}

nlohmann::json sweep_summary_json(const SweepResult& s) {
  nlohmann::json j = s.summary;
  if (s.optimum) {
    nlohmann::json loc = nlohmann::json::object();
    for (Eigen::Index k = 0; k < s.optimum->location.size(); ++k) {
      loc[s.axes[static_cast<std::size_t>(k)]] = s.optimum->location(k);
    }
    j["optimum"] = {{"channel", s.optimum->channel},
                    {"value", s.optimum->value},
                    {"location", loc},
                    {"interior", s.optimum->interior}};
  }
  j["points"] = s.grid.rows();
  return j;
}

VectorXd linearized_std_errors(const std::function<VectorXd(const RateParameters&)>& f,
                               const RateParameters& params, const ParameterCovariance& cov) {
  const VectorXd center = f(params);
  const auto k = static_cast<Eigen::Index>(cov.names.size());
  MatrixXd grad(center.size(), k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const std::string& name = cov.names[static_cast<std::size_t>(i)];
    const ParameterInfo& info = parameter_info(name);
    const double v = params[name];
    double h = 1e-5 * std::max(std::abs(v), 1e-3);
    RateParameters up = params, down = params;
    up[name] = v + h;
    double lo = v - h;
    if (clamp_to_domain(info, lo) != lo) lo = v;  // one-sided at a domain edge
    down[name] = lo;
    grad.col(i) = (f(up) - f(down)) / (v + h - lo);
  }
  const VectorXd var = (grad * cov.matrix).cwiseProduct(grad).rowwise().sum();
  return var.cwiseMax(0.0).cwiseSqrt();
}

VectorXd bootstrap_std_errors(const std::function<VectorXd(const RateParameters&)>& f,
                              const RateParameters& params, const ParameterCovariance& cov, int samples,
                              std::uint64_t seed) {
  if (samples < 2) throw Error(ErrorKind::invalid_argument, "bootstrap needs at least two samples");
  const auto k = static_cast<Eigen::Index>(cov.names.size());
  const Eigen::LDLT<MatrixXd> ldlt(cov.matrix);
  // L D^1/2 with the pivoting undone, so that x = A z has covariance cov.
  const MatrixXd A = ldlt.transpositionsP().transpose() * MatrixXd(ldlt.matrixL()) *
                     ldlt.vectorD().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  rng::Engine engine = rng::make_engine(seed, 0);
  std::normal_distribution<double> normal;
  const VectorXd center = f(params);
  VectorXd mean = VectorXd::Zero(center.size()), m2 = VectorXd::Zero(center.size());
  for (int s = 0; s < samples; ++s) {
    VectorXd z(k);
    for (Eigen::Index i = 0; i < k; ++i) z(i) = normal(engine);
    const VectorXd x = A * z;
    RateParameters draw = params;
    for (Eigen::Index i = 0; i < k; ++i) {
      const std::string& name = cov.names[static_cast<std::size_t>(i)];
      draw[name] = clamp_to_domain(parameter_info(name), params[name] + x(i));
    }
    const VectorXd y = f(draw);
    const VectorXd delta = y - mean;
    mean += delta / (s + 1.0);
    m2 += delta.cwiseProduct(y - mean);
  }
  return (m2 / (samples - 1.0)).cwiseSqrt();
}

double green_power_for_area(const RateParameters& params, double area) {
  return area / (params.g_cal * params.pulse_width_ns());
}

double red_power_for_area(const RateParameters& params, double area) {
  return area / (params.r_cal * params.pulse_width_ns());
}

SweepResult green_excitation_sweep(const RateParameters& params, const std::vector<double>& areas,
                                   const SweepOptions& o) {
  params.validate();
  require_grid(areas, "green area");
  SweepResult s;
  s.axes = {"green_area", "green_uW"};
  s.channels = {"e_minus", "ionized", "g_minus"};
  const auto n = static_cast<Eigen::Index>(areas.size());
  s.grid.resize(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    s.grid(i, 0) = areas[i];
    s.grid(i, 1) = green_power_for_area(params, areas[i]);
  }
  auto evaluate = [&](const RateParameters& p) {
    MatrixXd v(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Marginals m = green_marginals(p, areas[i], o);
      v.row(i) << m.e_minus, m.nv_zero(), m.g_minus;
    }
    return v;
  };
  s.values = evaluate(params);
  attach_errors(s, params, o, evaluate);

  SweepOptimum opt = locate_maximum([&](double x) { return excitation(params, x, o); }, areas, o.tolerance);
  opt.channel = "e_minus";
  const double area = opt.location(0);
  opt.location.conservativeResize(2);
  opt.location(1) = green_power_for_area(params, area);
  s.optimum = opt;
  s.summary["ionized_at_optimum"] = green_marginals(params, area, o).nv_zero();
  return s;
}

SweepResult red_branching_sweep(const RateParameters& params, const std::vector<double>& areas,
                                const SweepOptions& o) {
  params.validate();
  require_grid(areas, "red area");
  SweepResult s;
  s.axes = {"red_area", "red_uW"};
  s.channels = {"stimulated", "ionized"};
  const auto n = static_cast<Eigen::Index>(areas.size());
  s.grid.resize(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    s.grid(i, 0) = areas[i];
    s.grid(i, 1) = red_power_for_area(params, areas[i]);
  }
  auto evaluate = [&](const RateParameters& p) {
    MatrixXd v(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Marginals m = red_marginals(p, areas[i], 0.0, o);
      v.row(i) << m.g_minus, m.nv_zero();
    }
    return v;
  };
  s.values = evaluate(params);
  attach_errors(s, params, o, evaluate);

  const Marginals sat = red_marginals(params, kSaturatingArea, 0.0, o);
  s.summary["saturating_area"] = kSaturatingArea;
  s.summary["stimulated_saturation"] = sat.g_minus;
  s.summary["ionized_saturation"] = sat.nv_zero();
  s.summary["stimulated_limit"] = 1.0 / (1.0 + params.d);
  s.summary["ionized_limit"] = params.d / (1.0 + params.d);
  // Area at which stimulated emission reaches half of its saturation value.
  const double half = 0.5 * sat.g_minus;
  double lo = 0.0, hi = kSaturatingArea;
  for (int i = 0; i < 200 && hi - lo > 1e-12; ++i) {
    const double mid = 0.5 * (lo + hi);
    (red_marginals(params, mid, 0.0, o).g_minus < half ? lo : hi) = mid;
  }
  s.summary["half_saturation_area"] = 0.5 * (lo + hi);
  return s;
}

SweepResult cycling_probability(const RateParameters& params, const std::vector<double>& green_areas,
                                const std::vector<double>& red_areas, const SweepOptions& o) {
  params.validate();
  require_grid(green_areas, "green area");
  require_grid(red_areas, "red area");
  SweepOptions absorbing = o;
  absorbing.absorbing = true;

  SweepResult s;
  s.axes = {"green_area", "red_area"};
  s.channels = {"cycling", "excitation", "return"};
  const auto ng = static_cast<Eigen::Index>(green_areas.size()), nr = static_cast<Eigen::Index>(red_areas.size());
  s.grid.resize(ng * nr, 2);
  for (Eigen::Index i = 0; i < ng; ++i) {
    for (Eigen::Index j = 0; j < nr; ++j) s.grid.row(i * nr + j) << green_areas[i], red_areas[j];
  }
  auto evaluate = [&](const RateParameters& p) {
    VectorXd ex(ng), rt(nr);
    for (Eigen::Index i = 0; i < ng; ++i) ex(i) = excitation(p, green_areas[i], absorbing);
    for (Eigen::Index j = 0; j < nr; ++j) rt(j) = ret(p, red_areas[j], absorbing);
    MatrixXd v(ng * nr, 3);
    for (Eigen::Index i = 0; i < ng; ++i) {
      for (Eigen::Index j = 0; j < nr; ++j) v.row(i * nr + j) << ex(i) * rt(j), ex(i), rt(j);
    }
    return v;
  };
  s.values = evaluate(params);
  attach_errors(s, params, absorbing, evaluate);

  // The two factors depend on disjoint axes, so the joint maximum is the
  // product of the per-axis maxima.
  const SweepOptimum g = locate_maximum([&](double x) { return excitation(params, x, absorbing); }, green_areas,
                                        o.tolerance);
  const SweepOptimum r = locate_maximum([&](double x) { return ret(params, x, absorbing); }, red_areas,
                                        o.tolerance);
  SweepOptimum opt;
  opt.channel = "cycling";
  opt.location = VectorXd(2);
  opt.location << g.location(0), r.location(0);
  opt.value = g.value * r.value;
  opt.interior = g.interior;
  s.optimum = opt;
  s.summary["excitation_at_optimum"] = g.value;
  s.summary["return_at_optimum"] = r.value;
  s.summary["return_saturation"] = ret(params, kSaturatingArea, absorbing);
  s.summary["optimum_green_uW"] = green_power_for_area(params, g.location(0));
  return s;
}

PolarizationOutcome polarization_pipeline(const RateParameters& params, double nv_minus, double polarization,
                                          std::optional<double> green_area, std::optional<double> red_area,
                                          double separation_ns) {
  params.validate();
  if (!(nv_minus >= 0.0 && nv_minus <= 1.0) || !(polarization >= 0.0 && polarization <= 1.0)) {
    throw Error(ErrorKind::invalid_argument, "initial NV- fraction and polarization must lie in [0, 1]");
  }
  PolarizationOutcome out;
  if (green_area) {
    out.green_area = *green_area;
  } else {
    SweepOptions o;
    std::vector<double> grid;
    for (int i = 1; i <= 100; ++i) grid.push_back(0.1 * i);
    out.green_area = locate_maximum([&](double x) { return excitation(params, x, o); }, grid, o.tolerance)
                         .location(0);
  }
  out.red_area = red_area.value_or(kSaturatingArea);
  const double w = params.pulse_width_ns();
  PulseSequence seq;
  seq.then(Segment::green(green_power_for_area(params, out.green_area), w))
      .then(Segment::dark(separation_ns))
      .then(Segment::red(red_power_for_area(params, out.red_area), w));
  const Marginals m = marginals(apply_sequence<kLevels>(ground_state(nv_minus, polarization), seq, params));
  out.nv_minus = m.nv_minus();
  out.polarization = m.spin_polarization();
  return out;
}

SweepResult red_induced_switching_grid(const RateParameters& params, const std::vector<double>& green_uW,
                                       const std::vector<double>& red_uW, const SweepOptions& o) {
  params.validate();
  require_grid(green_uW, "green power");
  require_grid(red_uW, "red power");
  SweepResult s;
  s.axes = {"green_uW", "red_uW"};
  s.channels = {"ionization", "recombination"};
  const auto ng = static_cast<Eigen::Index>(green_uW.size()), nr = static_cast<Eigen::Index>(red_uW.size());
  s.grid.resize(ng * nr, 2);
  for (Eigen::Index i = 0; i < ng; ++i) {
    for (Eigen::Index j = 0; j < nr; ++j) s.grid.row(i * nr + j) << green_uW[i], red_uW[j];
  }
  const ObservableOptions obs{o.model, o.separation_ns};
  auto evaluate = [&](const RateParameters& p) {
    MatrixXd v(ng * nr, 2);
    for (Eigen::Index i = 0; i < ng * nr; ++i) {
      DatasetRow row;
      row.green_uW = s.grid(i, 0);
      row.red_uW = s.grid(i, 1);
      row.charge_init = 1.0;
      v(i, 0) = predict_observable(ObservableKind::red_switching_vs_red, row, p, obs);
      row.charge_init = 0.0;
      v(i, 1) = predict_observable(ObservableKind::red_switching_vs_red, row, p, obs);
    }
    return v;
  };
  s.values = evaluate(params);
  attach_errors(s, params, o, evaluate);

  // Green power maximizing the red-induced ionization at the highest red power.
  const double red_max = *std::max_element(red_uW.begin(), red_uW.end());
  auto induced = [&](double g) {
    DatasetRow row;
    row.green_uW = g;
    row.red_uW = red_max;
    return predict_observable(ObservableKind::red_switching_vs_red, row, params, obs);
  };
  SweepOptimum opt = locate_maximum(induced, green_uW, o.tolerance);
  opt.channel = "ionization";
  opt.location.conservativeResize(2);
  opt.location(1) = red_max;
  s.optimum = opt;
  return s;
}

SteadyStateTrace steady_state_train(const RateParameters& params, const PulseTrain& train, double duration_us,
                                    double initial_nv_minus) {
  params.validate();
  const double w = params.pulse_width_ns();
  const double busy = 2.0 * w + train.separation_ns;
  if (!(train.period_ns >= busy)) {
    throw Error(ErrorKind::invalid_argument, "repetition period is shorter than the pulse pair");
  }
  if (!(duration_us >= 0.0)) throw Error(ErrorKind::invalid_argument, "train duration must be >= 0");
  if (!(initial_nv_minus >= 0.0 && initial_nv_minus <= 1.0)) {
    throw Error(ErrorKind::invalid_argument, "initial NV- fraction must lie in [0, 1]");
  }

  auto transfer = [&](SegmentKind kind, double power, double t) -> Generator {
    return transfer_matrix<kLevels>(build_rate_matrix(params, kind, power), t);
  };
  const Generator period = transfer(SegmentKind::dark, 0.0, train.period_ns - busy) *
                           transfer(SegmentKind::red, train.red_uW, w) *
                           transfer(SegmentKind::dark, 0.0, train.separation_ns) *
                           transfer(SegmentKind::green, train.green_uW, w);

  SteadyStateTrace out;
  StateVector p = ground_state(initial_nv_minus, params.spin_polarization);
  const auto periods = static_cast<long>(std::floor(duration_us * 1e3 / train.period_ns + 1e-9));
  out.time_us.push_back(0.0);
  out.nv_minus.push_back(marginals(p).nv_minus());
  for (long k = 1; k <= periods; ++k) {
    p = period * p;
    p /= p.sum();
    out.time_us.push_back(k * train.period_ns * 1e-3);
    out.nv_minus.push_back(marginals(p).nv_minus());
  }

  // Invariant state: (M - I) x = 0 with one row replaced by normalization.
  // Without charge switching every charge mixture is invariant; the limit then
  // depends on the initial state and is taken from M^(2^k) p0.
  Generator A = period - Generator::Identity();
  Eigen::FullPivLU<Generator> lu(A);
  lu.setThreshold(1e-12);
  if (lu.rank() < kLevels - 1) {
    Generator power = period;
    for (int k = 0; k < 48; ++k) {
      power = (power * power).eval();
      power.array().rowwise() /= power.colwise().sum().array();  // keep columns stochastic
    }
    out.fixed_point = power * ground_state(initial_nv_minus, params.spin_polarization);
  } else {
    A.row(0).setOnes();
    StateVector rhs = StateVector::Zero();
    rhs(0) = 1.0;
    out.fixed_point = A.fullPivLu().solve(rhs);
  }
  out.fixed_point /= out.fixed_point.sum();
  out.fixed_point_nv_minus = marginals(out.fixed_point).nv_minus();
  return out;
}

}  // namespace nvcharge
