#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nvcharge {

/// Observable families entering the global fit.
enum class ObservableKind {
  fluorescence_vs_green,  // alpha-weighted excited population after one green pulse
  switching_vs_green,     // single green pulse P_I (charge_init 1) or P_R (charge_init 0)
  depletion_vs_red,       // 1 - B/A for a green-red pair
  red_switching_vs_red,   // P_switch(green + red) - P_switch(green)
  switching_vs_tau,       // red-induced switching vs pulse separation, spin-resolved
};

std::string_view to_string(ObservableKind kind);
ObservableKind observable_kind_from_string(std::string_view name);
/// True for the kinds whose rows are charge-switching probabilities.
bool is_switching_kind(ObservableKind kind);

/// One observation. For switching kinds charge_init selects the channel
/// (1: start in NV-, value is P_I; 0: start in NV0, value is P_R). For
/// fluorescence and depletion it is the NV- fraction of the initial state.
/// spin = 1 means a microwave pi pulse precedes the optical sequence.
struct DatasetRow {
  double green_uW = 0.0;
  double red_uW = 0.0;
  double tau_ns = 0.0;
  int spin = 0;
  double charge_init = 1.0;
  double value = 0.0;
  double sigma = 1.0;
};

struct Dataset {
  ObservableKind kind = ObservableKind::switching_vs_green;
  std::vector<DatasetRow> rows;
  double separation_ns = 0.592;  // green-to-red delay for the fixed-delay kinds

  void validate() const;
};

inline constexpr std::string_view kDatasetHeader = "kind,green_uW,red_uW,tau_ns,spin,charge_init,value,sigma";

/// Rows grouped by kind in order of first appearance.
std::vector<Dataset> read_datasets_csv(std::istream& in);
std::vector<Dataset> read_datasets_csv(const std::string& path);
void write_datasets_csv(std::ostream& out, std::span<const Dataset> datasets);

}  // namespace nvcharge
