#include "nvcharge/stochastic.hpp"

#include <cmath>
#include <limits>

#include "nvcharge/error.hpp"
#include "nvcharge/observables.hpp"

namespace nvcharge {

namespace {

constexpr std::uint64_t kBatchSize = 4096;

std::size_t batch_count(std::uint64_t n) { return static_cast<std::size_t>((n + kBatchSize - 1) / kBatchSize); }

std::uint64_t batch_size(std::uint64_t n, std::size_t batch) {
  return std::min<std::uint64_t>(kBatchSize, n - batch * kBatchSize);
}

int flip_spin(int lvl) {
  switch (lvl) {
    case level::g_minus_0: return level::g_minus_1;
    case level::g_minus_1: return level::g_minus_0;
    case level::e_minus_0: return level::e_minus_1;
    case level::e_minus_1: return level::e_minus_0;
    default: return lvl;
  }
}

bool is_nv_minus(int lvl) { return lvl <= level::singlet; }

void record(std::vector<JumpRecord>* records, double t, int lvl) {
  if (!records) return;
  if (!records->empty() && records->back().time_ns >= t) {
    records->back().level = lvl;
  } else {
    records->push_back({t, lvl});
  }
}

}  // namespace

JumpSimulator::JumpSimulator(const PulseSequence& seq, const RateParameters& params,
                             const GeneratorOptions& options) {
  params.validate();
  seq.validate();
  for (const auto& s : seq.segments) {
    Step step;
    if (s.kind == SegmentKind::mw_pi) {
      step.mw_pi = true;
    } else {
      step.duration_ns = s.duration_ns;
      step.generator = build_rate_matrix(params, s.kind, s.power_uW, options);
    }
    steps_.push_back(step);
  }
}

int JumpSimulator::run(int lvl, rng::Engine& engine, std::vector<JumpRecord>* records) const {
  if (lvl < 0 || lvl >= kLevels) throw Error(ErrorKind::invalid_argument, "initial level out of range");
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  double t = 0.0;
  if (records) records->push_back({0.0, lvl});
  for (const auto& step : steps_) {
    if (step.mw_pi) {
      const int flipped = flip_spin(lvl);
      if (flipped != lvl) {
        lvl = flipped;
        record(records, t, lvl);
      }
      continue;
    }
    const double end = t + step.duration_ns;
    const Generator& L = step.generator;
    while (true) {
      const double exit_rate = -L(lvl, lvl);
      if (!(exit_rate > 0.0)) break;
      const double dwell = std::exponential_distribution<double>(exit_rate)(engine);
      if (t + dwell >= end) break;
      t += dwell;
      double target = uniform(engine) * exit_rate;
      int next = lvl;
      for (int j = 0; j < kLevels; ++j) {
        if (j == lvl || L(j, lvl) <= 0.0) continue;
        next = j;
        target -= L(j, lvl);
        if (target < 0.0) break;
      }
      lvl = next;
      record(records, t, lvl);
    }
    t = end;
  }
  return lvl;
}

JumpTrajectory simulate_jump(const PulseSequence& seq, const RateParameters& params, int initial_level,
                             std::uint64_t seed, const GeneratorOptions& options) {
  const JumpSimulator sim(seq, params, options);
  rng::Engine engine = rng::make_engine(seed, 0);
  JumpTrajectory out;
  sim.run(initial_level, engine, &out.records);
  return out;
}

std::array<std::uint64_t, kLevels> final_level_counts(const PulseSequence& seq, const RateParameters& params,
                                                      int initial_level, std::uint64_t n, std::uint64_t seed,
                                                      unsigned threads) {
  const JumpSimulator sim(seq, params);
  const std::size_t batches = batch_count(n);
  std::vector<std::array<std::uint64_t, kLevels>> partial(batches);
  rng::parallel_batches(batches, threads, [&](std::size_t b) {
    rng::Engine engine = rng::make_engine(seed, b);
    auto& counts = partial[b];
    counts.fill(0);
    for (std::uint64_t k = 0; k < batch_size(n, b); ++k) ++counts[sim.run(initial_level, engine)];
  });
  std::array<std::uint64_t, kLevels> total{};
  for (const auto& p : partial) {
    for (int j = 0; j < kLevels; ++j) total[j] += p[j];
  }
  return total;
}

ReadoutOutcome simulate_readout(const YellowRates& rates, double readout_s, Charge initial, rng::Engine& engine) {
  Charge c = initial;
  double left = readout_s, t_minus = 0.0, t_zero = 0.0;
  while (left > 0.0) {
    const double rate = c == Charge::minus ? rates.gamma_minus : rates.gamma_zero;
    const double dwell = rate > 0.0 ? std::exponential_distribution<double>(rate)(engine)
                                    : std::numeric_limits<double>::infinity();
    const double spent = std::min(dwell, left);
    (c == Charge::minus ? t_minus : t_zero) += spent;
    left -= spent;
    if (dwell < readout_s && spent == dwell && left > 0.0) c = other(c);
  }
  const double mean = rates.mu_minus * t_minus + rates.mu_zero * t_zero;
  const int counts = mean > 0.0 ? std::poisson_distribution<int>(mean)(engine) : 0;
  return {counts, c};
}

std::vector<std::uint64_t> simulate_yellow_readout(const YellowRates& rates, double readout_s, double nv_minus,
                                                   std::uint64_t n_trajectories, std::uint64_t seed,
                                                   unsigned threads) {
  rates.validate();
  if (!(readout_s > 0.0)) throw Error(ErrorKind::invalid_argument, "readout duration must be > 0");
  if (!(nv_minus >= 0.0 && nv_minus <= 1.0)) {
    throw Error(ErrorKind::invalid_argument, "initial NV- probability must lie in [0, 1]");
  }
  if (n_trajectories < 1) throw Error(ErrorKind::invalid_argument, "need at least one trajectory");
  const std::size_t batches = batch_count(n_trajectories);
  std::vector<std::vector<std::uint64_t>> partial(batches);
  rng::parallel_batches(batches, threads, [&](std::size_t b) {
    rng::Engine engine = rng::make_engine(seed, b);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    auto& hist = partial[b];
    for (std::uint64_t k = 0; k < batch_size(n_trajectories, b); ++k) {
      const Charge start = uniform(engine) < nv_minus ? Charge::minus : Charge::zero;
      const int n = simulate_readout(rates, readout_s, start, engine).counts;
      if (static_cast<std::size_t>(n) >= hist.size()) hist.resize(n + 1, 0);
      ++hist[n];
    }
  });
  std::vector<std::uint64_t> total;
  for (const auto& h : partial) {
    if (h.size() > total.size()) total.resize(h.size(), 0);
    for (std::size_t n = 0; n < h.size(); ++n) total[n] += h[n];
  }
  return total;
}

// ---------------------------------------------------------------------------

void from_json(const nlohmann::json& j, ExperimentDescriptor& d) {
  if (!j.is_object()) throw Error(ErrorKind::parse, "experiment descriptor must be a JSON object");
  if (!j.contains("kind")) throw Error(ErrorKind::parse, "experiment descriptor needs a 'kind'");
  d.kind = observable_kind_from_string(j.at("kind").get<std::string>());
  d.separation_ns = j.value("separation_ps", 592.0) * 1e-3;
  d.points.clear();
  if (!j.contains("points") || !j.at("points").is_array()) {
    throw Error(ErrorKind::parse, "experiment descriptor needs a 'points' array");
  }
  for (const auto& p : j.at("points")) {
    DatasetRow r;
    r.green_uW = p.value("green_uW", 0.0);
    r.red_uW = p.value("red_uW", 0.0);
    r.tau_ns = p.value("tau_ns", 0.0);
    r.spin = p.value("spin", 0);
    r.charge_init = p.value("charge_init", 1.0);
    d.points.push_back(r);
  }
  if (j.contains("readout")) {
    const auto& r = j.at("readout");
    d.readout.rates.gamma_minus = r.value("gamma_minus", d.readout.rates.gamma_minus);
    d.readout.rates.gamma_zero = r.value("gamma_zero", d.readout.rates.gamma_zero);
    d.readout.rates.mu_minus = r.value("mu_minus", d.readout.rates.mu_minus);
    d.readout.rates.mu_zero = r.value("mu_zero", d.readout.rates.mu_zero);
    d.readout.duration_s = r.value("duration_s", d.readout.duration_s);
    d.readout.prior_nv_minus = r.value("prior_nv_minus", d.readout.prior_nv_minus);
    d.readout.threshold = r.value("threshold", d.readout.threshold);
  }
}

void to_json(nlohmann::json& j, const ExperimentDescriptor& d) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& r : d.points) {
    points.push_back({{"green_uW", r.green_uW}, {"red_uW", r.red_uW}, {"tau_ns", r.tau_ns},
                      {"spin", r.spin}, {"charge_init", r.charge_init}});
  }
  j = {{"kind", std::string(to_string(d.kind))},
       {"separation_ps", d.separation_ns * 1e3},
       {"readout",
        {{"gamma_minus", d.readout.rates.gamma_minus},
         {"gamma_zero", d.readout.rates.gamma_zero},
         {"mu_minus", d.readout.rates.mu_minus},
         {"mu_zero", d.readout.rates.mu_zero},
         {"duration_s", d.readout.duration_s},
         {"prior_nv_minus", d.readout.prior_nv_minus},
         {"threshold", d.readout.threshold}}},
       {"points", points}};
}

namespace {

struct PairTally {
  std::uint64_t n[2][2] = {{0, 0}, {0, 0}};  // [first is NV-][second is NV-]

  void add(const PairTally& o) {
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) n[a][b] += o.n[a][b];
  }
};

struct ExcitedTally {
  std::uint64_t e_minus = 0;
  std::uint64_t e_zero = 0;
};

class ShotRunner {
 public:
  ShotRunner(const ExperimentDescriptor& d, const RateParameters& params, const ReadoutCalibration& cal,
             std::uint64_t shots, std::uint64_t seed, unsigned threads)
      : d_(d), params_(params), cal_(cal), shots_(shots), seed_(seed), threads_(threads) {}

  int initial_level(Charge c, rng::Engine& engine) const {
    if (c == Charge::zero) return level::g_zero;
    return std::uniform_real_distribution<double>(0.0, 1.0)(engine) < params_.spin_polarization ? level::g_minus_0
                                                                                                : level::g_minus_1;
  }

  PairTally pipeline(const PulseSequence& seq, std::uint64_t stream) const {
    const JumpSimulator sim(seq, params_);
    const auto& ro = d_.readout;
    const std::size_t batches = batch_count(shots_);
    std::vector<PairTally> partial(batches);
    rng::parallel_batches(batches, threads_, [&](std::size_t b) {
      rng::Engine engine = rng::make_engine(seed_, (stream << 24) + b);
      std::uniform_real_distribution<double> uniform(0.0, 1.0);
      for (std::uint64_t k = 0; k < batch_size(shots_, b); ++k) {
        const Charge start = uniform(engine) < ro.prior_nv_minus ? Charge::minus : Charge::zero;
        const auto first = simulate_readout(ro.rates, ro.duration_s, start, engine);
        const int end = sim.run(initial_level(first.final_charge, engine), engine);
        const Charge after = is_nv_minus(end) ? Charge::minus : Charge::zero;
        const auto second = simulate_readout(ro.rates, ro.duration_s, after, engine);
        ++partial[b].n[first.counts > cal_.threshold][second.counts > cal_.threshold];
      }
    });
    PairTally total;
    for (const auto& p : partial) total.add(p);
    return total;
  }

  ExcitedTally excited(const PulseSequence& seq, double nv_minus, std::uint64_t stream) const {
    const JumpSimulator sim(seq, params_);
    const std::size_t batches = batch_count(shots_);
    std::vector<ExcitedTally> partial(batches);
    rng::parallel_batches(batches, threads_, [&](std::size_t b) {
      rng::Engine engine = rng::make_engine(seed_, (stream << 24) + b);
      std::uniform_real_distribution<double> uniform(0.0, 1.0);
      for (std::uint64_t k = 0; k < batch_size(shots_, b); ++k) {
        const Charge start = uniform(engine) < nv_minus ? Charge::minus : Charge::zero;
        const int end = sim.run(initial_level(start, engine), engine);
        if (end == level::e_minus_0 || end == level::e_minus_1) ++partial[b].e_minus;
        if (end == level::e_zero) ++partial[b].e_zero;
      }
    });
    ExcitedTally total;
    for (const auto& p : partial) {
      total.e_minus += p.e_minus;
      total.e_zero += p.e_zero;
    }
    return total;
  }

  // Fluorescence estimate and its standard error; category variances use
  // (k + 1) / (n + 2) so the error stays positive at zero occupation.
  std::pair<double, double> fluorescence_estimate(const ExcitedTally& t) const {
    const double n = static_cast<double>(shots_);
    const double am = params_.alpha_minus, a0 = params_.alpha_zero;
    const double value = (am * t.e_minus + a0 * t.e_zero) / n;
    const double pm = (t.e_minus + 1.0) / (n + 2.0), p0 = (t.e_zero + 1.0) / (n + 2.0);
    const double variance = (am * am * pm * (1.0 - pm) + a0 * a0 * p0 * (1.0 - p0) - 2.0 * am * a0 * pm * p0) / n;
    return {value, std::sqrt(std::max(variance, 0.0))};
  }

 private:
  const ExperimentDescriptor& d_;
  const RateParameters& params_;
  const ReadoutCalibration& cal_;
  std::uint64_t shots_;
  std::uint64_t seed_;
  unsigned threads_;
};

io::OutcomePairs to_pairs(const PairTally& t, std::string label) {
  return {std::move(label), t.n[0][0], t.n[0][1], t.n[1][0], t.n[1][1]};
}

}  // namespace

GeneratedDataset generate_dataset(const ExperimentDescriptor& d, const RateParameters& params, std::uint64_t shots,
                                  std::uint64_t seed, unsigned threads) {
  params.validate();
  d.readout.rates.validate();
  if (!d.readout.rates.has_contrast()) {
    throw Error(ErrorKind::invalid_argument, "yellow readout needs mu_minus > mu_zero");
  }
  if (shots < 1) throw Error(ErrorKind::invalid_argument, "need at least one shot per setting");

  GeneratedDataset out;
  out.dataset.kind = d.kind;
  out.dataset.separation_ns = d.separation_ns;
  out.calibration = model_calibration(d.readout.rates, d.readout.duration_s, d.readout.prior_nv_minus,
                                      d.readout.threshold);
  const ShotRunner runner(d, params, out.calibration, shots, seed, threads);

  for (std::size_t r = 0; r < d.points.size(); ++r) {
    DatasetRow point = d.points[r];
    if (is_switching_kind(d.kind)) point.charge_init = 1.0;
    const ExperimentPlan plan = plan_experiment(d.kind, point, params, d.separation_ns);
    const std::uint64_t stream = 4 * r;
    const std::string label = "row" + std::to_string(r);

    switch (plan.readout) {
      case ExperimentPlan::Readout::fluorescence: {
        const auto [value, sigma] = runner.fluorescence_estimate(runner.excited(plan.primary, plan.nv_minus, stream));
        DatasetRow row = point;
        row.value = value;
        row.sigma = sigma;
        out.dataset.rows.push_back(row);
        break;
      }
      case ExperimentPlan::Readout::depletion: {
        const auto [fb, sb] = runner.fluorescence_estimate(runner.excited(plan.primary, plan.nv_minus, stream));
        const auto [fa, sa] = runner.fluorescence_estimate(runner.excited(*plan.reference, plan.nv_minus, stream + 1));
        if (!(fa > 0.0)) {
          throw Error(ErrorKind::invalid_argument, "depletion point " + std::to_string(r) + " has no fluorescence");
        }
        DatasetRow row = point;
        const double ratio = fb / fa;
        row.value = 1.0 - ratio;
        row.sigma = std::abs(ratio) * std::sqrt(sa * sa / (fa * fa) + sb * sb / std::max(fb * fb, 1e-300));
        if (fb == 0.0) row.sigma = sb / fa;
        out.dataset.rows.push_back(row);
        break;
      }
      case ExperimentPlan::Readout::switching: {
        const PairTally primary = runner.pipeline(plan.primary, stream);
        out.pairs.push_back(to_pairs(primary, label + "_primary"));
        SwitchingEstimate est = extract_switching(
            repeat_probabilities_from_counts(primary.n[0][0], primary.n[0][1], primary.n[1][0], primary.n[1][1]),
            out.calibration);
        if (plan.reference) {
          const PairTally ref = runner.pipeline(*plan.reference, stream + 1);
          out.pairs.push_back(to_pairs(ref, label + "_reference"));
          const SwitchingEstimate base = extract_switching(
              repeat_probabilities_from_counts(ref.n[0][0], ref.n[0][1], ref.n[1][0], ref.n[1][1]), out.calibration);
          est.P_I -= base.P_I;
          est.P_R -= base.P_R;
          est.sigma_P_I = std::hypot(est.sigma_P_I, base.sigma_P_I);
          est.sigma_P_R = std::hypot(est.sigma_P_R, base.sigma_P_R);
        }
        DatasetRow ionization = point, recombination = point;
        ionization.charge_init = 1.0;
        ionization.value = est.P_I;
        ionization.sigma = est.sigma_P_I;
        recombination.charge_init = 0.0;
        recombination.value = est.P_R;
        recombination.sigma = est.sigma_P_R;
        out.dataset.rows.push_back(ionization);
        out.dataset.rows.push_back(recombination);
        break;
      }
    }
  }
  out.dataset.validate();
  return out;
}

}  // namespace nvcharge
