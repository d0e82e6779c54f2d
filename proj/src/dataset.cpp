#include "nvcharge/dataset.hpp"

#include <algorithm>
#include <array>
#include <iterator>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "nvcharge/error.hpp"
#include "nvcharge/io.hpp"

namespace nvcharge {

std::string_view to_string(ObservableKind kind) {
  switch (kind) {
    case ObservableKind::fluorescence_vs_green: return "fluorescence_vs_green";
    case ObservableKind::switching_vs_green: return "switching_vs_green";
    case ObservableKind::depletion_vs_red: return "depletion_vs_red";
    case ObservableKind::red_switching_vs_red: return "red_switching_vs_red";
    case ObservableKind::switching_vs_tau: return "switching_vs_tau";
  }
  return "unknown";
}

ObservableKind observable_kind_from_string(std::string_view name) {
  for (auto kind : {ObservableKind::fluorescence_vs_green, ObservableKind::switching_vs_green,
                    ObservableKind::depletion_vs_red, ObservableKind::red_switching_vs_red,
                    ObservableKind::switching_vs_tau}) {
    if (to_string(kind) == name) return kind;
  }
  throw Error(ErrorKind::invalid_argument, "unknown observable kind '" + std::string(name) + "'");
}

bool is_switching_kind(ObservableKind kind) {
  return kind == ObservableKind::switching_vs_green || kind == ObservableKind::red_switching_vs_red ||
         kind == ObservableKind::switching_vs_tau;
}

void Dataset::validate() const {
  if (!(separation_ns >= 0.0)) throw Error(ErrorKind::invalid_argument, "pulse separation must be >= 0");
  for (const auto& r : rows) {
    if (!(r.sigma > 0.0) || !std::isfinite(r.sigma)) {
      throw Error(ErrorKind::invalid_argument, "dataset standard errors must be > 0");
    }
    if (!std::isfinite(r.value)) throw Error(ErrorKind::invalid_argument, "dataset value is not finite");
    if (!(r.green_uW >= 0.0) || !(r.red_uW >= 0.0)) {
      throw Error(ErrorKind::invalid_argument, "dataset powers must be >= 0");
    }
    if (!(r.tau_ns >= 0.0)) throw Error(ErrorKind::invalid_argument, "dataset tau values must be >= 0");
    if (r.spin != 0 && r.spin != 1) throw Error(ErrorKind::invalid_argument, "spin flag must be 0 or 1");
    if (!(r.charge_init >= 0.0 && r.charge_init <= 1.0)) {
      throw Error(ErrorKind::invalid_argument, "charge_init must lie in [0, 1]");
    }
    if (is_switching_kind(kind) && r.charge_init != 0.0 && r.charge_init != 1.0) {
      throw Error(ErrorKind::invalid_argument, "switching rows need charge_init 0 (P_R) or 1 (P_I)");
    }
  }
}

std::vector<Dataset> read_datasets_csv(std::istream& in) {
  static constexpr std::array<std::string_view, 8> kColumns = {
      "kind", "green_uW", "red_uW", "tau_ns", "spin", "charge_init", "value", "sigma"};
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::parse, "dataset CSV is empty");
  io::check_header(line, kColumns, "dataset");

  std::vector<Dataset> out;
  std::size_t line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = io::split_csv_line(line);
    if (f.size() != kColumns.size()) {
      throw Error(ErrorKind::parse, "line " + std::to_string(line_number) + ": expected " +
                                        std::to_string(kColumns.size()) + " fields, got " + std::to_string(f.size()));
    }
    ObservableKind kind;
    try {
      kind = observable_kind_from_string(f[0]);
    } catch (const Error&) {
      throw Error(ErrorKind::parse, "line " + std::to_string(line_number) + ": column 'kind' has unknown value '" +
                                        f[0] + "'");
    }
    DatasetRow r;
    r.green_uW = io::parse_double(f[1], kColumns[1], line_number);
    r.red_uW = io::parse_double(f[2], kColumns[2], line_number);
    r.tau_ns = io::parse_double(f[3], kColumns[3], line_number);
    r.spin = static_cast<int>(io::parse_integer(f[4], kColumns[4], line_number));
    r.charge_init = io::parse_double(f[5], kColumns[5], line_number);
    r.value = io::parse_double(f[6], kColumns[6], line_number);
    r.sigma = io::parse_double(f[7], kColumns[7], line_number);

    auto it = std::find_if(out.begin(), out.end(), [&](const Dataset& d) { return d.kind == kind; });
    if (it == out.end()) {
      out.push_back(Dataset{kind, {}, 0.592});
      it = std::prev(out.end());
    }
    it->rows.push_back(r);
  }
  for (const auto& d : out) d.validate();
  return out;
}

std::vector<Dataset> read_datasets_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::config, "cannot open dataset file '" + path + "'");
  return read_datasets_csv(in);
}

void write_datasets_csv(std::ostream& out, std::span<const Dataset> datasets) {
  out << kDatasetHeader << '\n';
  for (const auto& d : datasets) {
    for (const auto& r : d.rows) {
      out << to_string(d.kind) << ',' << io::format_number(r.green_uW) << ',' << io::format_number(r.red_uW) << ','
          << io::format_number(r.tau_ns) << ',' << r.spin << ',' << io::format_number(r.charge_init) << ','
          << io::format_number(r.value) << ',' << io::format_number(r.sigma) << '\n';
    }
  }
}

}  // namespace nvcharge
