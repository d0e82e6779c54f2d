#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "nvcharge/io.hpp"
#include "nvcharge/model.hpp"
#include "nvcharge/observables.hpp"
#include "nvcharge/parameters.hpp"
#include "nvcharge/sequence.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nvcharge;

namespace {

const std::string kCli = NVCHARGE_CLI;
const std::string kData = NVCHARGE_DATA_DIR;

struct Run {
  int status = -1;
  std::string err;
};

class Workspace {
 public:
  Workspace() : root_(fs::temp_directory_path() / ("nvcharge_cli_" + std::to_string(::getpid()))) {
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  ~Workspace() { fs::remove_all(root_); }

  std::string path(const std::string& name) const { return (root_ / name).string(); }

  Run run(const std::string& args) const {
    const std::string err = path("stderr.txt");
    const std::string cmd = kCli + " " + args + " > " + path("stdout.txt") + " 2> " + err;
    Run r;
    const int raw = std::system(cmd.c_str());
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.err = slurp(err);
    return r;
  }

  void write(const std::string& name, const std::string& content) const { std::ofstream(path(name)) << content; }

  static std::string slurp(const std::string& file) {
    std::ifstream in(file, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  json read_json(const std::string& name) const { return json::parse(slurp(path(name))); }

 private:
  fs::path root_;
};

std::string error_kind(const Run& r) { return json::parse(r.err).at("error").at("kind").get<std::string>(); }

std::string params_flag() { return "--params " + kData + "/table1.json"; }

}  // namespace

TEST_CASE("missing parameter file is a config error and creates no output") {
  Workspace w;
  const Run r = w.run("simulate --params " + w.path("absent.json") + " --seq " + kData + "/pair592.json --out " +
                      w.path("out"));
  CHECK(r.status != 0);
  CHECK(error_kind(r) == "config");
  CHECK_FALSE(fs::exists(w.path("out")));
}

TEST_CASE("unknown flags and missing subcommands are config errors") {
  Workspace w;
  CHECK(error_kind(w.run("")) == "config");
  CHECK(error_kind(w.run("predict cycling --bogus 1")) == "config");
}

TEST_CASE("simulate reproduces the library trajectory exactly") {
  Workspace w;
  REQUIRE(w.run("simulate " + params_flag() + " --seq " + kData + "/pair592.json --out " + w.path("sim")).status == 0);
  const auto params = load_parameter_file(kData + "/table1.json").params;
  const auto seq = io::read_json_file(kData + "/pair592.json").get<PulseSequence>();
  const auto traj = run_sequence(ground_state(1.0, params.spin_polarization), seq, params);

  std::ifstream in(w.path("sim/trajectory.csv"));
  std::string line;
  std::getline(in, line);
  CHECK(line == "time_ns,segment,g_minus_0,g_minus_1,e_minus_0,e_minus_1,singlet,g_zero,e_zero,nv_minus,fluorescence");
  for (const auto& boundary : traj) {
    REQUIRE(std::getline(in, line));
    const auto cells = io::split_csv_line(line);
    CHECK(std::stod(cells[0]) == boundary.time_ns);
    for (int k = 0; k < kLevels; ++k) CHECK(std::stod(cells[2 + k]) == boundary.state(k));
  }
  CHECK_FALSE(std::getline(in, line));
}

TEST_CASE("an empty sequence echoes the initial state") {
  Workspace w;
  w.write("empty.json", R"({"segments": []})");
  REQUIRE(w.run("simulate --seq " + w.path("empty.json") + " --nv-minus 0.7 --ms0 0.8 --out " + w.path("sim")).status ==
          0);
  const auto s = w.read_json("sim/summary.json").at("final_state");
  CHECK(s.at("g_minus_0").get<double>() == doctest::Approx(0.56).epsilon(1e-15));
  CHECK(s.at("g_minus_1").get<double>() == doctest::Approx(0.14).epsilon(1e-15));
  CHECK(s.at("g_zero").get<double>() == doctest::Approx(0.3).epsilon(1e-15));
}

TEST_CASE("predict cycling reports the optimum") {
  Workspace w;
  REQUIRE(w.run("predict cycling " + params_flag() + " --out " + w.path("p")).status == 0);
  const auto j = w.read_json("p/cycling.json");
  CHECK(j.at("optimum").at("value").get<double>() == doctest::Approx(0.825).epsilon(0.003 / 0.825));
  CHECK(fs::exists(w.path("p/cycling.csv")));
  CHECK(fs::exists(w.path("p/config.toml")));
}

TEST_CASE("identical configuration and seed give byte-identical output") {
  Workspace w;
  for (const char* dir : {"a", "b"}) {
    REQUIRE(w.run("predict excitation " + params_flag() + " --bands bootstrap --samples 20 --seed 3 --out " +
                  w.path(dir))
                .status == 0);
  }
  CHECK(Workspace::slurp(w.path("a/excitation.csv")) == Workspace::slurp(w.path("b/excitation.csv")));
  CHECK(Workspace::slurp(w.path("a/excitation.json")) == Workspace::slurp(w.path("b/excitation.json")));
}

TEST_CASE("thread count does not change generated data") {
  Workspace w;
  const std::string base = "generate " + params_flag() + " --experiment " + kData +
                           "/experiments/switching_vs_green.json --shots 3000 --seed 11";
  REQUIRE(w.run(base + " --threads 1 --out " + w.path("t1")).status == 0);
  REQUIRE(w.run(base + " --threads 3 --out " + w.path("t3")).status == 0);
  CHECK(Workspace::slurp(w.path("t1/dataset.csv")) == Workspace::slurp(w.path("t3/dataset.csv")));
  CHECK(Workspace::slurp(w.path("t1/pairs.csv")) == Workspace::slurp(w.path("t3/pairs.csv")));
}

TEST_CASE("malformed dataset header names the offending column") {
  Workspace w;
  w.write("bad.csv", "kind,green_uW,red_power,tau_ns,spin,charge_init,value,sigma\n");
  const Run r = w.run("fit --data " + w.path("bad.csv") + " --out " + w.path("f"));
  CHECK(r.status != 0);
  CHECK(error_kind(r) == "parse");
  CHECK(r.err.find("red_power") != std::string::npos);
  CHECK_FALSE(fs::exists(w.path("f")));
}

TEST_CASE("a parameter both free and fixed is a config error") {
  Workspace w;
  const Run r = w.run("fit --data " + kData + "/synthetic_table1.csv --free a,b --fixed b --out " + w.path("f"));
  CHECK(r.status != 0);
  CHECK(error_kind(r) == "config");
}

TEST_CASE("fit of the bundled synthetic dataset") {
  Workspace w;
  const auto truth = load_parameter_file(kData + "/table1.json").params;
  REQUIRE(w.run("fit " + params_flag() + " --data " + kData + "/synthetic_table1.csv --out " + w.path("g")).status == 0);
  REQUIRE(w.run("fit " + params_flag() + " --data " + kData + "/synthetic_table1.csv --variant excited --out " +
                w.path("x"))
              .status == 0);
  const auto ground = w.read_json("g/fit.json");
  for (const char* name : {"a", "b", "c", "d", "e", "f"}) {
    const double v = ground.at("params").at(name).get<double>();
    const double s = ground.at("sigma").at(name).get<double>();
    CHECK(std::abs(v - truth[name]) < 3.0 * s);
  }
  CHECK(ground.at("sse").get<double>() < w.read_json("x/fit.json").at("sse").get<double>());
  // The fitted parameter file is itself a valid --params input.
  CHECK_NOTHROW(load_parameter_file(w.path("g/params.json")));
  CHECK(fs::exists(w.path("g/residuals.csv")));
}

TEST_CASE("extract with a perfect calibration and no switching returns zero") {
  Workspace w;
  w.write("pairs.csv", "label,n00,n0m,nm0,nmm\nnone,500,0,0,700\n");
  w.write("cal.json", R"({"threshold": 1, "R0": 1, "Rm": 1, "I0": 1, "Im": 1})");
  REQUIRE(w.run("extract --data " + w.path("pairs.csv") + " --calibration " + w.path("cal.json") + " --out " +
                w.path("e"))
              .status == 0);
  const auto r = w.read_json("e/extract.json").at("results").at(0);
  CHECK(r.at("P_I").get<double>() == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(r.at("P_R").get<double>() == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("generate then extract recovers the simulated ionization probability") {
  Workspace w;
  REQUIRE(w.run("generate " + params_flag() + " --experiment " + kData +
                "/experiments/switching_vs_green.json --shots 20000 --seed 5 --out " + w.path("gen"))
              .status == 0);
  REQUIRE(w.run("extract --data " + w.path("gen/pairs.csv") + " --calibration " + w.path("gen/calibration.json") +
                " --out " + w.path("ext"))
              .status == 0);
  const auto params = load_parameter_file(kData + "/table1.json").params;
  const auto results = w.read_json("ext/extract.json").at("results");
  int checked = 0;
  for (const auto& r : results) {
    const std::string label = r.at("label");
    if (label.find("primary") == std::string::npos) continue;
    // Labels are exp<i>_row<r>_primary with r the point index.
    const auto row = std::stoi(label.substr(label.find("row") + 3));
    const auto descriptor = io::read_json_file(kData + "/experiments/switching_vs_green.json");
    DatasetRow point;
    point.green_uW = descriptor.at("points").at(row).at("green_uW").get<double>();
    point.charge_init = 1.0;
    const double truth = predict_observable(ObservableKind::switching_vs_green, point, params);
    CHECK(std::abs(r.at("P_I").get<double>() - truth) < 4.0 * r.at("sigma_P_I").get<double>());
    ++checked;
  }
  CHECK(checked > 0);
}

TEST_CASE("zero switching rates give all-zero red-induced switching") {
  Workspace w;
  auto file = io::read_json_file(kData + "/table1.json");
  for (const char* name : {"a", "b", "c", "d", "e", "f", "Is_rate"}) file[name] = 0.0;
  w.write("zero.json", file.dump());
  REQUIRE(w.run("predict grid --params " + w.path("zero.json") + " --bands none --out " + w.path("z")).status == 0);
  std::ifstream in(w.path("z/grid.csv"));
  std::string line;
  std::getline(in, line);
  int rows = 0;
  while (std::getline(in, line)) {
    const auto cells = io::split_csv_line(line);
    CHECK(std::stod(cells[2]) == 0.0);
    CHECK(std::stod(cells[3]) == 0.0);
    ++rows;
  }
  CHECK(rows > 0);
}

TEST_CASE("command-line flags override the configuration file") {
  Workspace w;
  w.write("run.toml", "seed=5\n[predict]\nbands=\"none\"\n");
  REQUIRE(w.run("predict excitation --config " + w.path("run.toml") + " --out " + w.path("c1")).status == 0);
  REQUIRE(w.run("predict excitation --config " + w.path("run.toml") + " --seed 9 --out " + w.path("c2")).status == 0);
  CHECK(w.read_json("c1/excitation.json").at("seed") == 5);
  CHECK(w.read_json("c2/excitation.json").at("seed") == 9);
  const std::string echoed = Workspace::slurp(w.path("c1/config.toml"));
  CHECK(echoed.find("seed=5") != std::string::npos);
  CHECK(echoed.find("predict.bands=\"none\"") != std::string::npos);
}
