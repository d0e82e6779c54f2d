// nvcharge: simulate, fit, predict, generate and extract from the command line.
//
// Every subcommand reads and validates all of its inputs before it creates the
// output directory. Failures print {"error": {"kind", "message"}} on stderr and
// exit nonzero.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nvcharge/dataset.hpp"
#include "nvcharge/error.hpp"
#include "nvcharge/fitting.hpp"
#include "nvcharge/io.hpp"
#include "nvcharge/model.hpp"
#include "nvcharge/parameters.hpp"
#include "nvcharge/photon_stats.hpp"
#include "nvcharge/prediction.hpp"
#include "nvcharge/sequence.hpp"
#include "nvcharge/stochastic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nvcharge;

namespace {

constexpr std::uint64_t kDefaultSeed = 20180411;

struct Common {
  std::string params_path;
  std::vector<std::string> data;
  std::string out = "nvcharge_out";
  std::uint64_t seed = kDefaultSeed;
  std::string variant;
  unsigned threads = 1;
};

/// Files produced by a subcommand, written only after all work succeeded.
class Output {
 public:
  void add(std::string name, std::string content) { files_.emplace_back(std::move(name), std::move(content)); }
  void add_json(std::string name, const json& j) { add(std::move(name), j.dump(2) + "\n"); }

  void write(const std::string& dir) const {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::config, "cannot create output directory '" + dir + "': " + ec.message());
    for (const auto& [name, content] : files_) {
      const fs::path path = fs::path(dir) / name;
      std::ofstream out(path, std::ios::binary);
      out << content;
      if (!out) throw Error(ErrorKind::config, "cannot write '" + path.string() + "'");
    }
  }

 private:
  std::vector<std::pair<std::string, std::string>> files_;
};

ParameterFile load_params(const Common& c) {
  ParameterFile file;
  if (c.params_path.empty()) {
    file.params = reference_parameters();
    file.sigmas = reference_sigmas();
  } else {
    file = load_parameter_file(c.params_path);
  }
  if (!c.variant.empty()) file.params.ionization_target = ionization_target_from_string(c.variant);
  return file;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::config, "cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& ex) {
    throw Error(ErrorKind::parse, "malformed JSON in '" + path + "': " + ex.what());
  }
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::config, "cannot open '" + path + "'");
  return in;
}

/// "lo:hi:n" for n evenly spaced points, or a comma-separated list.
std::vector<double> parse_axis(const std::string& text, const std::string& name) {
  std::vector<double> out;
  if (text.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string part; std::getline(ss, part, ':');) parts.push_back(part);
    if (parts.size() != 3) throw Error(ErrorKind::config, "--" + name + " range must be lo:hi:n");
    const double lo = io::parse_double(parts[0], name, 0);
    const double hi = io::parse_double(parts[1], name, 0);
    const auto n = io::parse_integer(parts[2], name, 0);
    if (n < 1) throw Error(ErrorKind::config, "--" + name + " needs at least one point");
    if (n == 1) return {lo};
    for (std::int64_t i = 0; i < n; ++i) out.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1));
    return out;
  }
  for (const auto& part : io::split_csv_line(text)) out.push_back(io::parse_double(part, name, 0));
  if (out.empty()) throw Error(ErrorKind::config, "--" + name + " is empty");
  return out;
}

ModelKind model_from_string(const std::string& s) {
  if (s == "seven") return ModelKind::seven_level;
  if (s == "four") return ModelKind::four_level;
  throw Error(ErrorKind::config, "unknown model '" + s + "' (expected seven or four)");
}

std::vector<std::string> split_names(const std::string& list) {
  std::vector<std::string> out;
  if (list.empty()) return out;
  for (auto& name : io::split_csv_line(list)) {
    if (!is_parameter_name(name)) throw Error(ErrorKind::config, "unknown parameter '" + name + "'");
    out.push_back(name);
  }
  return out;
}

std::string csv_number(double v) { return io::format_number(v); }

json calibration_json(const ReadoutCalibration& c) {
  return {{"threshold", c.threshold}, {"R0", c.R0},           {"Rm", c.Rm},
          {"I0", c.I0},               {"Im", c.Im},           {"sigma_R0", c.sigma_R0},
          {"sigma_Rm", c.sigma_Rm},   {"sigma_I0", c.sigma_I0}, {"sigma_Im", c.sigma_Im}};
}

ReadoutCalibration calibration_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::parse, "calibration must be a JSON object");
  ReadoutCalibration c;
  try {
    c.threshold = j.at("threshold").get<int>();
    c.R0 = j.at("R0").get<double>();
    c.Rm = j.at("Rm").get<double>();
    c.I0 = j.at("I0").get<double>();
    c.Im = j.at("Im").get<double>();
    c.sigma_R0 = j.value("sigma_R0", 0.0);
    c.sigma_Rm = j.value("sigma_Rm", 0.0);
    c.sigma_I0 = j.value("sigma_I0", 0.0);
    c.sigma_Im = j.value("sigma_Im", 0.0);
  } catch (const json::exception& ex) {
    throw Error(ErrorKind::parse, std::string("calibration: ") + ex.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::string seq;
  std::string model = "seven";
  double nv_minus = 1.0;
  double ms0 = -1.0;  // <0: the parameter file's spin polarization
  bool absorbing = false;
  std::uint64_t shots = 0;
};

template <int N>
std::string trajectory_csv(const Trajectory<N>& traj, const PulseSequence& seq, const RateParameters& params,
                           std::span<const char* const> names) {
  std::ostringstream out;
  out << "time_ns,segment";
  for (const char* n : names) out << ',' << n;
  out << ",nv_minus,fluorescence\n";
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const auto& s = traj[i];
    out << csv_number(s.time_ns) << ',' << (i == 0 ? std::string("start") : std::string(to_string(seq.segments[i - 1].kind)));
    for (int k = 0; k < N; ++k) out << ',' << csv_number(s.state(k));
    out << ',' << csv_number(marginals(s.state).nv_minus()) << ',' << csv_number(fluorescence(s.state, params)) << '\n';
  }
  return out.str();
}

constexpr const char* kSevenNames[] = {"g_minus_0", "g_minus_1", "e_minus_0", "e_minus_1", "singlet", "g_zero", "e_zero"};
constexpr const char* kFourNames[] = {"g_minus", "e_minus", "g_zero", "e_zero"};

template <int N>
json state_json(const Populations<N>& p, std::span<const char* const> names) {
  json j = json::object();
  for (int k = 0; k < N; ++k) j[names[k]] = p(k);
  return j;
}

json marginals_json(const Marginals& m) {
  return {{"g_minus", m.g_minus}, {"e_minus", m.e_minus}, {"singlet", m.singlet}, {"g_zero", m.g_zero},
          {"e_zero", m.e_zero},   {"nv_minus", m.nv_minus()}, {"ms0", m.ms0}};
}

void cmd_simulate(const Common& c, const SimulateArgs& a, Output& out, json& summary) {
  const auto file = load_params(c);
  const RateParameters& params = file.params;
  PulseSequence seq;
  try {
    seq = read_json(a.seq).get<PulseSequence>();
  } catch (const json::exception& ex) {
    throw Error(ErrorKind::parse, "pulse sequence '" + a.seq + "': " + ex.what());
  }
  const ModelKind model = model_from_string(a.model);
  const double ms0 = a.ms0 < 0.0 ? params.spin_polarization : a.ms0;
  const GeneratorOptions options{a.absorbing};

  if (model == ModelKind::seven_level) {
    const auto traj = run_sequence(ground_state(a.nv_minus, ms0), seq, params, options);
    out.add("trajectory.csv", trajectory_csv<kLevels>(traj, seq, params, kSevenNames));
    summary["final_state"] = state_json<kLevels>(traj.back().state, kSevenNames);
    summary["marginals"] = marginals_json(marginals(traj.back().state));
    summary["fluorescence"] = fluorescence(traj.back().state, params);
    if (a.shots > 0) {
      // Each level of the initial ground state is simulated in proportion to its weight.
      const StateVector start = ground_state(a.nv_minus, ms0);
      StateVector freq = StateVector::Zero();
      for (int level = 0; level < kLevels; ++level) {
        if (start(level) == 0.0) continue;
        const auto counts = final_level_counts(seq, params, level, a.shots, c.seed + level, c.threads);
        for (int k = 0; k < kLevels; ++k) freq(k) += start(level) * static_cast<double>(counts[k]) / static_cast<double>(a.shots);
      }
      summary["stochastic"] = {{"shots_per_level", a.shots}, {"final_state", state_json<kLevels>(freq, kSevenNames)}};
    }
  } else {
    if (a.shots > 0) throw Error(ErrorKind::config, "--shots needs the seven-level model");
    const auto traj = run_sequence(four_level_ground_state(a.nv_minus), seq, params, options);
    out.add("trajectory.csv", trajectory_csv<kFourLevels>(traj, seq, params, kFourNames));
    summary["final_state"] = state_json<kFourLevels>(traj.back().state, kFourNames);
    summary["marginals"] = marginals_json(marginals(traj.back().state));
    summary["fluorescence"] = fluorescence(traj.back().state, params);
  }
  summary["duration_ns"] = seq.total_duration_ns();
  summary["segments"] = seq.segments.size();
  out.add_json("summary.json", summary);
}

// ---------------------------------------------------------------------------
// fit

struct FitArgs {
  std::string free;
  std::string fixed;
  std::string model = "seven";
  std::string basis = "per_power";
  int multi_start = 0;
  bool propagate_fixed = false;
  bool strict = false;
  int max_iterations = 500;
  double tolerance = 1e-10;
};

void cmd_fit(const Common& c, const FitArgs& a, Output& out) {
  if (c.data.empty()) throw Error(ErrorKind::config, "fit needs at least one --data file");
  const auto file = load_params(c);
  std::vector<Dataset> data;
  for (const auto& path : c.data) {
    auto in = open_input(path);
    auto sets = read_datasets_csv(in);
    data.insert(data.end(), sets.begin(), sets.end());
  }

  FitConfig config;
  if (!a.free.empty()) config.free = split_names(a.free);
  config.fixed = split_names(a.fixed);
  config.variant = file.params.ionization_target;
  config.model = model_from_string(a.model);
  if (a.basis == "per_power") {
    config.basis = RateBasis::per_power;
  } else if (a.basis == "per_area") {
    config.basis = RateBasis::per_area;
  } else {
    throw Error(ErrorKind::config, "unknown basis '" + a.basis + "' (expected per_power or per_area)");
  }
  config.multi_start = a.multi_start;
  config.seed = c.seed;
  config.strict_identifiability = a.strict;
  config.lm.max_iterations = a.max_iterations;
  config.lm.relative_tolerance = a.tolerance;
  if (a.propagate_fixed) {
    config.propagate_fixed = true;
    for (const auto& [name, sigma] : file.sigmas) {
      if (std::find(config.free.begin(), config.free.end(), name) == config.free.end() && sigma > 0.0) {
        config.fixed_sigmas[name] = sigma;
      }
    }
  }
  config.validate();

  const FitResult result = fit(data, file.params, config);
  json report = fit_result_json(result);
  report["data"] = c.data;
  out.add_json("fit.json", report);
  std::ostringstream residuals;
  write_residuals_csv(residuals, data, result);
  out.add("residuals.csv", residuals.str());
  ParameterSigmas sigmas = file.sigmas;
  for (std::size_t k = 0; k < result.free.size(); ++k) sigmas[result.free[k]] = result.sigmas(static_cast<Eigen::Index>(k));
  // Parameters without a finite error cannot be carried into a parameter file.
  for (auto it = sigmas.begin(); it != sigmas.end();) {
    it = std::isfinite(it->second) ? std::next(it) : sigmas.erase(it);
  }
  out.add_json("params.json", parameter_file_json(result.params, sigmas));
}

// ---------------------------------------------------------------------------
// predict

struct PredictArgs {
  std::string green_areas = "0.1:10:100";
  std::string red_areas = "1:200:200";
  std::string branching_areas = "0.5:100:200";
  std::string green_uW = "10:400:40";
  std::string red_uW = "0,25,50,100,200,350";
  std::string model;  // empty: the sweep's own default
  bool recombining = false;
  std::string bands = "linearized";
  int samples = 200;
  double separation_ps = 592.0;
  double tolerance = 1e-6;
  // steady
  double steady_green = 100.0;
  double steady_red = 0.0;
  double period_ns = 1000.0;
  double duration_us = 100.0;
  double initial = 0.638;
  // polarization
  double nv_minus = 0.80;
  double polarization = 0.90;
  double green_area = -1.0;
  double red_area = -1.0;
};

using Sweep = std::function<SweepResult(const RateParameters&, const SweepOptions&)>;

SweepResult run_sweep(const Sweep& sweep, const ParameterFile& file, const PredictArgs& a, ModelKind default_model,
                      std::uint64_t seed) {
  SweepOptions o;
  o.model = a.model.empty() ? default_model : model_from_string(a.model);
  o.absorbing = !a.recombining;
  o.separation_ns = a.separation_ps * 1e-3;
  o.tolerance = a.tolerance;
  if (a.bands != "none" && a.bands != "linearized" && a.bands != "bootstrap") {
    throw Error(ErrorKind::config, "unknown --bands '" + a.bands + "' (expected none, linearized or bootstrap)");
  }
  const auto cov = ParameterCovariance::diagonal(file.sigmas);
  const bool bands = a.bands != "none" && !cov.names.empty();
  if (bands && a.bands == "linearized") o.covariance = &cov;
  SweepResult result = sweep(file.params, o);
  if (bands && a.bands == "bootstrap") {
    SweepOptions plain = o;
    plain.covariance = nullptr;
    const auto rows = result.values.rows();
    const auto cols = result.values.cols();
    auto f = [&](const RateParameters& p) {
      const Eigen::MatrixXd v = sweep(p, plain).values;
      return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()));
    };
    const Eigen::VectorXd se = bootstrap_std_errors(f, file.params, cov, a.samples, seed);
    result.std_errors = Eigen::Map<const Eigen::MatrixXd>(se.data(), rows, cols);
  }
  return result;
}

void add_sweep(Output& out, const std::string& name, const SweepResult& s, json& summary) {
  std::ostringstream csv;
  write_sweep_csv(csv, s);
  out.add(name + ".csv", csv.str());
  summary.update(sweep_summary_json(s));
  out.add_json(name + ".json", summary);
}

void cmd_predict(const std::string& kind, const Common& c, const PredictArgs& a, Output& out, json& summary) {
  const auto file = load_params(c);
  if (kind == "excitation") {
    const auto areas = parse_axis(a.green_areas, "green-areas");
    const auto s = run_sweep([&](const RateParameters& p, const SweepOptions& o) { return green_excitation_sweep(p, areas, o); },
                             file, a, ModelKind::four_level, c.seed);
    add_sweep(out, kind, s, summary);
  } else if (kind == "branching") {
    const auto areas = parse_axis(a.branching_areas, "red-areas");
    const auto s = run_sweep([&](const RateParameters& p, const SweepOptions& o) { return red_branching_sweep(p, areas, o); },
                             file, a, ModelKind::four_level, c.seed);
    add_sweep(out, kind, s, summary);
  } else if (kind == "cycling") {
    const auto greens = parse_axis(a.green_areas, "green-areas");
    const auto reds = parse_axis(a.red_areas, "red-areas");
    const auto s = run_sweep(
        [&](const RateParameters& p, const SweepOptions& o) { return cycling_probability(p, greens, reds, o); }, file, a,
        ModelKind::four_level, c.seed);
    add_sweep(out, kind, s, summary);
  } else if (kind == "grid") {
    const auto greens = parse_axis(a.green_uW, "green-uW");
    const auto reds = parse_axis(a.red_uW, "red-uW");
    const auto s = run_sweep(
        [&](const RateParameters& p, const SweepOptions& o) { return red_induced_switching_grid(p, greens, reds, o); },
        file, a, ModelKind::seven_level, c.seed);
    add_sweep(out, kind, s, summary);
  } else if (kind == "steady") {
    const PulseTrain train{a.steady_green, a.steady_red, a.separation_ps * 1e-3, a.period_ns};
    const auto t = steady_state_train(file.params, train, a.duration_us, a.initial);
    std::ostringstream csv;
    csv << "time_us,nv_minus\n";
    for (std::size_t i = 0; i < t.time_us.size(); ++i) csv << csv_number(t.time_us[i]) << ',' << csv_number(t.nv_minus[i]) << '\n';
    out.add("steady.csv", csv.str());
    summary["final_nv_minus"] = t.nv_minus.back();
    summary["fixed_point_nv_minus"] = t.fixed_point_nv_minus;
    summary["fixed_point"] = state_json<kLevels>(t.fixed_point, kSevenNames);
    out.add_json("steady.json", summary);
  } else if (kind == "polarization") {
    const auto r = polarization_pipeline(file.params, a.nv_minus, a.polarization,
                                         a.green_area > 0.0 ? std::optional<double>(a.green_area) : std::nullopt,
                                         a.red_area > 0.0 ? std::optional<double>(a.red_area) : std::nullopt,
                                         a.separation_ps * 1e-3);
    summary["input"] = {{"nv_minus", a.nv_minus}, {"polarization", a.polarization}};
    summary["nv_minus"] = r.nv_minus;
    summary["polarization"] = r.polarization;
    summary["green_area"] = r.green_area;
    summary["red_area"] = r.red_area;
    out.add_json("polarization.json", summary);
  }
}

// ---------------------------------------------------------------------------
// generate / extract

struct GenerateArgs {
  std::vector<std::string> experiments;
  std::uint64_t shots = 100000;
};

void cmd_generate(const Common& c, const GenerateArgs& a, Output& out) {
  if (a.experiments.empty()) throw Error(ErrorKind::config, "generate needs at least one --experiment file");
  if (a.shots == 0) throw Error(ErrorKind::config, "--shots must be positive");
  const auto file = load_params(c);
  std::vector<ExperimentDescriptor> descriptors;
  for (const auto& path : a.experiments) {
    try {
      descriptors.push_back(read_json(path).get<ExperimentDescriptor>());
    } catch (const json::exception& ex) {
      throw Error(ErrorKind::parse, "experiment '" + path + "': " + ex.what());
    }
  }

  std::vector<Dataset> datasets;
  std::vector<io::OutcomePairs> pairs;
  json calibrations = json::array();
  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    const auto g = generate_dataset(descriptors[i], file.params, a.shots, c.seed + i, c.threads);
    datasets.push_back(g.dataset);
    for (auto p : g.pairs) {
      p.label = "exp" + std::to_string(i) + "_" + p.label;
      pairs.push_back(p);
    }
    json entry = {{"experiment", a.experiments[i]}, {"kind", std::string(to_string(descriptors[i].kind))}};
    if (is_switching_kind(descriptors[i].kind)) entry["calibration"] = calibration_json(g.calibration);
    calibrations.push_back(entry);
  }
  std::ostringstream data_csv, pairs_csv;
  write_datasets_csv(data_csv, datasets);
  io::write_pairs_csv(pairs_csv, pairs);
  out.add("dataset.csv", data_csv.str());
  if (!pairs.empty()) out.add("pairs.csv", pairs_csv.str());
  out.add_json("generate.json", {{"shots", a.shots}, {"experiments", calibrations}});
  for (const auto& entry : calibrations) {
    if (entry.contains("calibration")) {
      out.add_json("calibration.json", entry["calibration"]);
      break;
    }
  }
}

struct ExtractArgs {
  std::string calibration;
  std::string readout;
};

void cmd_extract(const Common& c, const ExtractArgs& a, Output& out) {
  if (c.data.size() != 1) throw Error(ErrorKind::config, "extract needs exactly one --data pairs file");
  auto in = open_input(c.data.front());
  const auto pairs = io::read_pairs_csv(in);
  ReadoutCalibration cal;
  if (!a.calibration.empty()) {
    cal = calibration_from_json(read_json(a.calibration));
  } else {
    ExperimentDescriptor d;
    if (!a.readout.empty()) d = read_json(a.readout).get<ExperimentDescriptor>();
    cal = model_calibration(d.readout.rates, d.readout.duration_s, d.readout.prior_nv_minus, d.readout.threshold);
  }
  json rows = json::array();
  for (const auto& p : pairs) {
    const auto q = repeat_probabilities_from_counts(p.n00, p.n0m, p.nm0, p.nmm);
    const auto est = extract_switching(q, cal);
    rows.push_back({{"label", p.label},
                    {"Q0", q.Q0},
                    {"Qm", q.Qm},
                    {"sigma_Q0", q.sigma_Q0},
                    {"sigma_Qm", q.sigma_Qm},
                    {"P_I", est.P_I},
                    {"P_R", est.P_R},
                    {"sigma_P_I", est.sigma_P_I},
                    {"sigma_P_R", est.sigma_P_R}});
  }
  out.add_json("extract.json", {{"calibration", calibration_json(cal)}, {"results", rows}});
}

int error_exit(ErrorKind kind, const std::string& message) {
  json j = {{"error", {{"kind", std::string(to_string(kind))}, {"message", message}}}};
  std::cerr << j.dump() << '\n';
  return 2 + static_cast<int>(kind);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Charge-state dynamics of NV centers under pulsed green and red illumination"};
  app.set_config("--config", "", "TOML configuration file; command-line flags take precedence");
  app.require_subcommand(1);
  app.fallthrough();

  Common common;
  app.add_option("--params", common.params_path, "Parameter file (JSON); defaults to the reference set");
  app.add_option("--data", common.data, "Input data file(s)");
  app.add_option("--out", common.out, "Output directory")->capture_default_str();
  app.add_option("--seed", common.seed, "Random seed")->capture_default_str();
  app.add_option("--variant", common.variant, "Ionization target: ground or excited");
  app.add_option("--threads", common.threads, "Worker threads; results do not depend on it")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Propagate a pulse sequence through the level model");
  simulate->add_option("--seq", sim.seq, "Pulse sequence (JSON)")->required();
  simulate->add_option("--model", sim.model, "seven or four")->capture_default_str();
  simulate->add_option("--nv-minus", sim.nv_minus, "Initial NV- fraction")->capture_default_str();
  simulate->add_option("--ms0", sim.ms0, "Initial ms=0 fraction (default: spin_polarization)");
  simulate->add_flag("--absorbing", sim.absorbing, "Make NV0 absorbing");
  simulate->add_option("--shots", sim.shots, "Also run this many jump trajectories per initial level");

  FitArgs fa;
  auto* fit_cmd = app.add_subcommand("fit", "Global least-squares fit of the rate parameters");
  fit_cmd->add_option("--free", fa.free, "Comma-separated free parameters");
  fit_cmd->add_option("--fixed", fa.fixed, "Comma-separated parameters held fixed");
  fit_cmd->add_option("--model", fa.model, "seven or four")->capture_default_str();
  fit_cmd->add_option("--basis", fa.basis, "per_power or per_area")->capture_default_str();
  fit_cmd->add_option("--multi-start", fa.multi_start, "Additional perturbed starts")->capture_default_str();
  fit_cmd->add_flag("--propagate-fixed", fa.propagate_fixed, "Add shifts from fixed-parameter sigmas");
  fit_cmd->add_flag("--strict", fa.strict, "Fail on non-identifiable parameters");
  fit_cmd->add_option("--max-iterations", fa.max_iterations)->capture_default_str();
  fit_cmd->add_option("--tolerance", fa.tolerance, "Relative SSE change for convergence")->capture_default_str();

  PredictArgs pa;
  auto* predict = app.add_subcommand("predict", "Model predictions");
  predict->require_subcommand(1);
  predict->fallthrough();
  predict->add_option("--model", pa.model, "seven or four");
  predict->add_flag("--recombining", pa.recombining, "Keep the NV0 -> NV- return flow");
  predict->add_option("--bands", pa.bands, "none, linearized or bootstrap")->capture_default_str();
  predict->add_option("--samples", pa.samples, "Bootstrap samples")->capture_default_str();
  predict->add_option("--separation-ps", pa.separation_ps, "Green-to-red delay")->capture_default_str();
  predict->add_option("--tolerance", pa.tolerance, "Optimum location tolerance (pulse area)")->capture_default_str();
  std::vector<std::pair<std::string, CLI::App*>> predictions;
  for (const char* name : {"excitation", "branching", "cycling", "grid", "steady", "polarization"}) {
    predictions.emplace_back(name, predict->add_subcommand(name));
  }
  auto sub = [&](const std::string& name) {
    for (auto& [n, app_ptr] : predictions) {
      if (n == name) return app_ptr;
    }
    return static_cast<CLI::App*>(nullptr);
  };
  sub("excitation")->description("Excited-state and ionization probability vs green pulse area");
  sub("excitation")->add_option("--green-areas", pa.green_areas, "lo:hi:n or list")->capture_default_str();
  sub("branching")->description("Stimulated emission vs ionization vs red pulse area");
  sub("branching")->add_option("--red-areas", pa.branching_areas, "lo:hi:n or list")->capture_default_str();
  sub("cycling")->description("Probability to excite and return within NV-");
  sub("cycling")->add_option("--green-areas", pa.green_areas, "lo:hi:n or list")->capture_default_str();
  sub("cycling")->add_option("--red-areas", pa.red_areas, "lo:hi:n or list")->capture_default_str();
  sub("grid")->description("Red-induced switching over green and red power");
  sub("grid")->add_option("--green-uW", pa.green_uW, "lo:hi:n or list")->capture_default_str();
  sub("grid")->add_option("--red-uW", pa.red_uW, "lo:hi:n or list")->capture_default_str();
  sub("steady")->description("NV- population under a repeated green-red pulse train");
  sub("steady")->add_option("--green-uW", pa.steady_green)->capture_default_str();
  sub("steady")->add_option("--red-uW", pa.steady_red)->capture_default_str();
  sub("steady")->add_option("--period-ns", pa.period_ns)->capture_default_str();
  sub("steady")->add_option("--duration-us", pa.duration_us)->capture_default_str();
  sub("steady")->add_option("--initial", pa.initial, "Initial NV- fraction")->capture_default_str();
  sub("polarization")->description("Charge and spin after one green-red cycle");
  sub("polarization")->add_option("--nv-minus", pa.nv_minus)->capture_default_str();
  sub("polarization")->add_option("--polarization", pa.polarization)->capture_default_str();
  sub("polarization")->add_option("--green-area", pa.green_area, "Default: excitation optimum");
  sub("polarization")->add_option("--red-area", pa.red_area, "Default: saturating");

  GenerateArgs ga;
  auto* generate = app.add_subcommand("generate", "Synthesize datasets with the stochastic simulator");
  generate->add_option("--experiment", ga.experiments, "Experiment descriptor(s) (JSON)")->required();
  generate->add_option("--shots", ga.shots, "Shots per setting")->capture_default_str();

  ExtractArgs ea;
  auto* extract = app.add_subcommand("extract", "Ionization and recombination probabilities from readout pairs");
  extract->add_option("--calibration", ea.calibration, "Readout calibration (JSON)");
  extract->add_option("--readout", ea.readout, "Experiment descriptor whose readout block sets the model calibration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return error_exit(ErrorKind::config, e.what());
  }

  try {
    Output out;
    json summary = {{"seed", common.seed}};
    std::string command;
    if (simulate->parsed()) {
      command = "simulate";
      cmd_simulate(common, sim, out, summary);
    } else if (fit_cmd->parsed()) {
      command = "fit";
      cmd_fit(common, fa, out);
    } else if (predict->parsed()) {
      for (auto& [name, cmd] : predictions) {
        if (cmd->parsed()) command = name;
      }
      cmd_predict(command, common, pa, out, summary);
      command = "predict " + command;
    } else if (generate->parsed()) {
      command = "generate";
      cmd_generate(common, ga, out);
    } else if (extract->parsed()) {
      command = "extract";
      cmd_extract(common, ea, out);
    }
    out.add("config.toml", "# nvcharge " + command + "\n" + app.config_to_str(true, false));
    out.write(common.out);
    std::cout << json{{"command", command}, {"out", common.out}}.dump() << '\n';
  } catch (const Error& e) {
    return error_exit(e.kind(), e.what());
  } catch (const json::exception& e) {
    return error_exit(ErrorKind::parse, e.what());
  } catch (const std::exception& e) {
    return error_exit(ErrorKind::numeric, e.what());
  }
  return 0;
}
