#include "nvcharge/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <set>

#include "nvcharge/error.hpp"
#include "nvcharge/io.hpp"
#include "nvcharge/observables.hpp"
#include "nvcharge/rng.hpp"

namespace nvcharge {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kLogFloor = 1e-12;
constexpr double kNullTolerance = 1e-7;  // relative singular value of the column-scaled Jacobian

double logit(double p) { return std::log(p / (1.0 - p)); }
double expit(double u) { return 1.0 / (1.0 + std::exp(-u)); }

/// Maps free parameters to unconstrained fit variables and back.
class Transform {
 public:
  Transform(const std::vector<std::string>& names, const RateParameters& base, RateBasis basis)
      : base_(base), basis_(basis) {
    for (const auto& n : names) infos_.push_back(&parameter_info(n));
  }

  Eigen::Index size() const { return static_cast<Eigen::Index>(infos_.size()); }

  VectorXd to_unconstrained(const RateParameters& p) const {
    VectorXd u(size());
    for (Eigen::Index k = 0; k < size(); ++k) {
      const ParameterInfo& info = *infos_[k];
      double v = p.*(info.member);
      if (info.domain == Domain::unit_interval) {
        v = std::clamp(v, 1e-9, 1.0 - 1e-9);
        u(k) = logit(v);
      } else {
        u(k) = std::log(std::max(v * area_factor(info, p), kLogFloor));
      }
    }
    return u;
  }

  RateParameters to_parameters(const VectorXd& u) const {
    RateParameters p = base_;
    for (Eigen::Index k = 0; k < size(); ++k) {
      const ParameterInfo& info = *infos_[k];
      p.*(info.member) = info.domain == Domain::unit_interval ? expit(u(k)) : std::exp(u(k)) / area_factor(info, p);
    }
    return p;
  }

  /// d(parameter)/d(fit variable) at u.
  VectorXd derivative(const VectorXd& u) const {
    const RateParameters p = to_parameters(u);
    VectorXd d(size());
    for (Eigen::Index k = 0; k < size(); ++k) {
      const ParameterInfo& info = *infos_[k];
      const double v = p.*(info.member);
      d(k) = info.domain == Domain::unit_interval ? v * (1.0 - v) : v;
    }
    return d;
  }

  bool is_logit(Eigen::Index k) const { return infos_[k]->domain == Domain::unit_interval; }

 private:
  double area_factor(const ParameterInfo& info, const RateParameters& p) const {
    if (basis_ == RateBasis::per_area && (info.name == "g_cal" || info.name == "r_cal")) return p.pulse_width_ns();
    return 1.0;
  }

  RateParameters base_;
  RateBasis basis_;
  std::vector<const ParameterInfo*> infos_;
};

int total_rows(std::span<const Dataset> datasets) {
  int n = 0;
  for (const auto& d : datasets) n += static_cast<int>(d.rows.size());
  return n;
}

VectorXd predictions_of(std::span<const Dataset> datasets, const RateParameters& params, ModelKind model) {
  VectorXd out(total_rows(datasets));
  Eigen::Index i = 0;
  for (const auto& d : datasets) {
    const ObservableOptions options{model, d.separation_ns};
    for (const auto& row : d.rows) out(i++) = predict_observable(d.kind, row, params, options);
  }
  return out;
}

VectorXd observed_of(std::span<const Dataset> datasets, VectorXd* sigma) {
  VectorXd y(total_rows(datasets));
  sigma->resize(y.size());
  Eigen::Index i = 0;
  for (const auto& d : datasets) {
    for (const auto& row : d.rows) {
      y(i) = row.value;
      (*sigma)(i++) = row.sigma;
    }
  }
  return y;
}

struct Identifiability {
  std::vector<Eigen::Index> flagged;
  VectorXd null_direction;
};

Identifiability check_identifiability(const MatrixXd& J) {
  Identifiability out;
  const Eigen::Index p = J.cols();
  VectorXd norms = J.colwise().norm().transpose();
  const double largest = norms.maxCoeff();
  std::vector<Eigen::Index> live;
  for (Eigen::Index k = 0; k < p; ++k) {
    if (!(norms(k) > 1e-10 * std::max(largest, 1e-300))) {
      out.flagged.push_back(k);
    } else {
      live.push_back(k);
    }
  }
  if (!out.flagged.empty()) {
    out.null_direction = VectorXd::Zero(p);
    for (auto k : out.flagged) out.null_direction(k) = 1.0;
    out.null_direction.normalize();
    return out;
  }
  MatrixXd scaled(J.rows(), p);
  for (Eigen::Index k = 0; k < p; ++k) scaled.col(k) = J.col(k) / norms(k);
  Eigen::JacobiSVD<MatrixXd> svd(scaled, Eigen::ComputeThinV);
  const VectorXd s = svd.singularValues();
  if (s.size() < p || s(p - 1) < kNullTolerance * s(0)) {
    VectorXd v = svd.matrixV().col(p - 1);
    for (Eigen::Index k = 0; k < p; ++k) {
      if (std::abs(v(k)) > 0.1) out.flagged.push_back(k);
    }
    out.null_direction = v;
  }
  return out;
}

struct CoreFit {
  VectorXd u;
  optimize::LevenbergMarquardtResult lm;
};

CoreFit run_lm(const optimize::ResidualFunction& residuals, const VectorXd& u0,
               const optimize::LevenbergMarquardtOptions& options) {
  CoreFit out;
  out.lm = optimize::levenberg_marquardt(residuals, u0, options);
  out.u = out.lm.x;
  return out;
}

}  // namespace

void FitConfig::validate() const {
  if (free.empty()) throw Error(ErrorKind::config, "fit needs at least one free parameter");
  std::set<std::string> seen;
  for (const auto& n : free) {
    if (!is_parameter_name(n)) throw Error(ErrorKind::config, "unknown free parameter '" + n + "'");
    if (!seen.insert(n).second) throw Error(ErrorKind::config, "parameter '" + n + "' listed twice as free");
  }
  for (const auto& n : fixed) {
    if (!is_parameter_name(n)) throw Error(ErrorKind::config, "unknown fixed parameter '" + n + "'");
    if (seen.count(n)) throw Error(ErrorKind::config, "parameter '" + n + "' declared both free and fixed");
  }
  for (const auto& [n, s] : fixed_sigmas) {
    if (!is_parameter_name(n)) throw Error(ErrorKind::config, "unknown parameter '" + n + "' in fixed sigmas");
    if (!(s >= 0.0)) throw Error(ErrorKind::config, "sigma of '" + n + "' must be >= 0");
  }
  if (multi_start < 0) throw Error(ErrorKind::config, "multi_start must be >= 0");
  if (lm.max_iterations < 1) throw Error(ErrorKind::config, "max_iterations must be >= 1");
}

double FitResult::sigma_of(std::string_view name) const {
  for (std::size_t k = 0; k < free.size(); ++k) {
    if (free[k] == name) return sigmas(static_cast<Eigen::Index>(k));
  }
  throw Error(ErrorKind::invalid_argument, "'" + std::string(name) + "' is not a free parameter of this fit");
}

VectorXd weighted_residuals(std::span<const Dataset> datasets, const RateParameters& params, ModelKind model) {
  VectorXd sigma;
  const VectorXd y = observed_of(datasets, &sigma);
  return (y - predictions_of(datasets, params, model)).cwiseQuotient(sigma);
}

FitResult fit(std::span<const Dataset> datasets, const RateParameters& initial, const FitConfig& config) {
  config.validate();
  if (datasets.empty()) throw Error(ErrorKind::invalid_argument, "fit needs at least one dataset");
  for (const auto& d : datasets) d.validate();
  RateParameters start = initial;
  start.ionization_target = config.variant;
  start.validate();

  VectorXd sigma;
  const VectorXd y = observed_of(datasets, &sigma);
  const int n = static_cast<int>(y.size());

  auto solve = [&](const RateParameters& base, const VectorXd* warm) {
    const Transform transform(config.free, base, config.basis);
    const optimize::ResidualFunction residuals = [&](const VectorXd& u) -> VectorXd {
      try {
        const RateParameters p = transform.to_parameters(u);
        p.validate();
        return (y - predictions_of(datasets, p, config.model)).cwiseQuotient(sigma);
      } catch (const Error&) {
        return VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
      }
    };
    const VectorXd u0 = warm ? *warm : transform.to_unconstrained(base);
    CoreFit best = run_lm(residuals, u0, config.lm);
    if (!warm) {
      for (int s = 0; s < config.multi_start; ++s) {
        rng::Engine engine = rng::make_engine(config.seed, static_cast<std::uint64_t>(s));
        std::uniform_real_distribution<double> jitter(-1.0, 1.0);
        VectorXd u = u0;
        for (Eigen::Index k = 0; k < u.size(); ++k) {
          u(k) += transform.is_logit(k) ? jitter(engine) : std::log(2.0) * jitter(engine);
        }
        try {
          CoreFit trial = run_lm(residuals, u, config.lm);
          if (trial.lm.sse < best.lm.sse) best = std::move(trial);
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::convergence && e.kind() != ErrorKind::numeric) throw;
        }
      }
    }
    return std::pair{best, transform};
  };

  auto [core, transform] = solve(start, nullptr);

  FitResult out;
  out.free = config.free;
  out.fixed = config.fixed;
  out.variant = config.variant;
  out.params = transform.to_parameters(core.u);
  out.sse = core.lm.sse;
  out.sse_history = core.lm.sse_history;
  out.iterations = core.lm.iterations;
  out.n_points = n;
  out.dof = n - static_cast<int>(config.free.size());
  out.residuals = core.lm.residuals;
  out.predictions = predictions_of(datasets, out.params, config.model);

  const Eigen::Index p = transform.size();
  const MatrixXd& J = core.lm.jacobian;
  const Identifiability id = check_identifiability(J);
  for (auto k : id.flagged) out.non_identifiable.push_back(config.free[k]);
  out.null_direction = id.null_direction;
  if (!id.flagged.empty() && config.strict_identifiability) {
    std::string names;
    for (const auto& s : out.non_identifiable) names += (names.empty() ? "" : ", ") + s;
    throw Error(ErrorKind::non_identifiable, "singular Jacobian; non-identifiable parameters: " + names);
  }

  // Statistical covariance on the identifiable subspace.
  std::vector<Eigen::Index> keep;
  for (Eigen::Index k = 0; k < p; ++k) {
    if (std::find(id.flagged.begin(), id.flagged.end(), k) == id.flagged.end()) keep.push_back(k);
  }
  const VectorXd dtheta = transform.derivative(core.u);
  out.covariance = MatrixXd::Constant(p, p, std::numeric_limits<double>::quiet_NaN());
  if (!keep.empty()) {
    MatrixXd Jk(J.rows(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t i = 0; i < keep.size(); ++i) Jk.col(i) = J.col(keep[i]);
    const MatrixXd cov_u = (Jk.transpose() * Jk).ldlt().solve(MatrixXd::Identity(Jk.cols(), Jk.cols()));
    for (std::size_t i = 0; i < keep.size(); ++i) {
      for (std::size_t j = 0; j < keep.size(); ++j) {
        out.covariance(keep[i], keep[j]) = dtheta(keep[i]) * cov_u(i, j) * dtheta(keep[j]);
      }
    }
    out.covariance = (0.5 * (out.covariance + out.covariance.transpose())).eval();
  }
  out.statistical_sigmas = out.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  for (auto k : id.flagged) out.statistical_sigmas(k) = std::numeric_limits<double>::infinity();

  out.systematic_sigmas = VectorXd::Zero(p);
  if (config.propagate_fixed) {
    for (const auto& [name, s] : config.fixed_sigmas) {
      if (s <= 0.0 || std::find(config.free.begin(), config.free.end(), name) != config.free.end()) continue;
      VectorXd shifted[2];
      for (int side = 0; side < 2; ++side) {
        RateParameters base = out.params;
        const ParameterInfo& info = parameter_info(name);
        double v = base[name] + (side == 0 ? s : -s);
        if (info.domain == Domain::unit_interval) v = std::clamp(v, 0.0, 1.0);
        if (info.domain == Domain::positive) v = std::max(v, 1e-9 * std::abs(base[name]));
        if (info.domain == Domain::nonnegative) v = std::max(v, 0.0);
        base[name] = v;
        const VectorXd warm = transform.to_unconstrained(out.params);
        auto [refit, t2] = solve(base, &warm);
        const RateParameters q = t2.to_parameters(refit.u);
        shifted[side].resize(p);
        for (Eigen::Index k = 0; k < p; ++k) shifted[side](k) = q[config.free[k]];
      }
      out.systematic_sigmas += (0.5 * (shifted[0] - shifted[1])).cwiseAbs2();
    }
    out.systematic_sigmas = out.systematic_sigmas.cwiseSqrt().eval();
  }
  out.sigmas = (out.statistical_sigmas.cwiseAbs2() + out.systematic_sigmas.cwiseAbs2()).cwiseSqrt();
  return out;
}

nlohmann::json fit_result_json(const FitResult& r) {
  auto number = [](double v) -> nlohmann::json {
    if (std::isfinite(v)) return v;
    return nullptr;
  };
  nlohmann::json sig = nlohmann::json::object(), stat = nlohmann::json::object(), sys = nlohmann::json::object();
  for (std::size_t k = 0; k < r.free.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    sig[r.free[k]] = number(r.sigmas(i));
    stat[r.free[k]] = number(r.statistical_sigmas(i));
    sys[r.free[k]] = number(r.systematic_sigmas(i));
  }
  nlohmann::json cov = nlohmann::json::array();
  for (Eigen::Index i = 0; i < r.covariance.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < r.covariance.cols(); ++j) row.push_back(number(r.covariance(i, j)));
    cov.push_back(row);
  }
  nlohmann::json null_dir = nlohmann::json::array();
  for (Eigen::Index i = 0; i < r.null_direction.size(); ++i) null_dir.push_back(r.null_direction(i));
  return {{"params", r.params},
          {"variant", std::string(to_string(r.variant))},
          {"free", r.free},
          {"fixed", r.fixed},
          {"sigma", sig},
          {"statistical_sigma", stat},
          {"systematic_sigma", sys},
          {"covariance", cov},
          {"sse", r.sse},
          {"n_points", r.n_points},
          {"dof", r.dof},
          {"reduced_chi2", r.reduced_chi2()},
          {"iterations", r.iterations},
          {"sse_history", r.sse_history},
          {"non_identifiable", r.non_identifiable},
          {"null_direction", null_dir}};
}

void write_residuals_csv(std::ostream& out, std::span<const Dataset> datasets, const FitResult& result) {
  out << kDatasetHeader << ",predicted,residual\n";
  Eigen::Index i = 0;
  for (const auto& d : datasets) {
    for (const auto& row : d.rows) {
      out << to_string(d.kind) << ',' << io::format_number(row.green_uW) << ',' << io::format_number(row.red_uW)
          << ',' << io::format_number(row.tau_ns) << ',' << row.spin << ',' << io::format_number(row.charge_init)
          << ',' << io::format_number(row.value) << ',' << io::format_number(row.sigma) << ','
          << io::format_number(result.predictions(i)) << ',' << io::format_number(result.residuals(i)) << '\n';
      ++i;
    }
  }
}

GreenCalibration cross_calibrate_green(const RateParameters& reference, double max_reference_uW,
                                       const Dataset& probe, ModelKind model) {
  reference.validate();
  probe.validate();
  if (probe.kind != ObservableKind::switching_vs_green) {
    throw Error(ErrorKind::invalid_argument, "green cross-calibration needs a switching_vs_green probe");
  }
  if (probe.rows.empty()) throw Error(ErrorKind::invalid_argument, "green cross-calibration probe is empty");
  if (!(max_reference_uW > 0.0)) throw Error(ErrorKind::invalid_argument, "reference power range must be > 0");

  const ObservableOptions options{model, probe.separation_ns};
  auto sse = [&](double power) {
    double total = 0.0;
    for (DatasetRow row : probe.rows) {
      const double observed = row.value;
      row.green_uW = power;
      const double r = (observed - predict_observable(probe.kind, row, reference, options)) / row.sigma;
      total += r * r;
    }
    return total;
  };
  const double hi = 2.0 * max_reference_uW;
  std::vector<double> grid(201);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = hi * static_cast<double>(i) / (grid.size() - 1);
  const auto best = optimize::scan_and_refine_maximum([&](double x) { return -sse(x); }, grid,
                                                      1e-6 * max_reference_uW);
  if (best.x >= hi * (1.0 - 1e-6)) {
    throw Error(ErrorKind::numeric, "no green power in [0, " + io::format_number(hi) +
                                        "] uW matches the probe; best match is on the upper edge");
  }
  return {best.x, -best.value};
}

}  // namespace nvcharge
