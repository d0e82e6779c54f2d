#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace nvcharge {

enum class SegmentKind { green, red, dark, mw_pi };

std::string_view to_string(SegmentKind kind);
SegmentKind segment_kind_from_string(std::string_view name);

/// One piece of a piecewise-constant illumination schedule. Durations are kept
/// in ns internally; the JSON form uses "duration_ps". mw_pi is instantaneous.
struct Segment {
  SegmentKind kind = SegmentKind::dark;
  double duration_ns = 0.0;
  double power_uW = 0.0;

  static Segment green(double power_uW, double duration_ns) { return {SegmentKind::green, duration_ns, power_uW}; }
  static Segment red(double power_uW, double duration_ns) { return {SegmentKind::red, duration_ns, power_uW}; }
  static Segment dark(double duration_ns) { return {SegmentKind::dark, duration_ns, 0.0}; }
  static Segment mw_pi() { return {SegmentKind::mw_pi, 0.0, 0.0}; }
};

struct PulseSequence {
  std::vector<Segment> segments;

  void validate() const;
  double total_duration_ns() const;
  bool empty() const { return segments.empty(); }

  PulseSequence& then(const Segment& s) {
    segments.push_back(s);
    return *this;
  }
};

void to_json(nlohmann::json& j, const Segment& s);
void from_json(const nlohmann::json& j, Segment& s);
void to_json(nlohmann::json& j, const PulseSequence& seq);
void from_json(const nlohmann::json& j, PulseSequence& seq);

}  // namespace nvcharge
