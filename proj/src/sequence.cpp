#include "nvcharge/sequence.hpp"

#include <cmath>

#include "nvcharge/error.hpp"

namespace nvcharge {

std::string_view to_string(SegmentKind kind) {
  switch (kind) {
    case SegmentKind::green: return "green";
    case SegmentKind::red: return "red";
    case SegmentKind::dark: return "dark";
    case SegmentKind::mw_pi: return "mw_pi";
  }
  return "unknown";
}

SegmentKind segment_kind_from_string(std::string_view name) {
  if (name == "green") return SegmentKind::green;
  if (name == "red") return SegmentKind::red;
  if (name == "dark") return SegmentKind::dark;
  if (name == "mw_pi") return SegmentKind::mw_pi;
  throw Error(ErrorKind::invalid_argument, "unknown segment kind '" + std::string(name) + "'");
}

void PulseSequence::validate() const {
  for (const auto& s : segments) {
    if (!(s.duration_ns >= 0.0) || !std::isfinite(s.duration_ns)) {
      throw Error(ErrorKind::invalid_argument, "segment duration must be finite and >= 0");
    }
    if (!(s.power_uW >= 0.0) || !std::isfinite(s.power_uW)) {
      throw Error(ErrorKind::invalid_argument, "segment power must be finite and >= 0");
    }
  }
}

double PulseSequence::total_duration_ns() const {
  double total = 0.0;
  for (const auto& s : segments) {
    if (s.kind != SegmentKind::mw_pi) total += s.duration_ns;
  }
  return total;
}

void to_json(nlohmann::json& j, const Segment& s) {
  j = {{"kind", std::string(to_string(s.kind))}};
  if (s.kind != SegmentKind::mw_pi) j["duration_ps"] = s.duration_ns * 1e3;
  if (s.kind == SegmentKind::green || s.kind == SegmentKind::red) j["power_uW"] = s.power_uW;
}

void from_json(const nlohmann::json& j, Segment& s) {
  if (!j.is_object() || !j.contains("kind")) {
    throw Error(ErrorKind::parse, "segment must be an object with a 'kind' field");
  }
  s.kind = segment_kind_from_string(j.at("kind").get<std::string>());
  s.duration_ns = j.value("duration_ps", 0.0) * 1e-3;
  s.power_uW = j.value("power_uW", 0.0);
  if (s.kind == SegmentKind::mw_pi) s.duration_ns = 0.0;
  if ((s.kind == SegmentKind::dark || s.kind == SegmentKind::mw_pi) && s.power_uW != 0.0) {
    throw Error(ErrorKind::invalid_argument, "dark and mw_pi segments carry no power");
  }
}

void to_json(nlohmann::json& j, const PulseSequence& seq) {
  j = {{"segments", seq.segments}};
}

void from_json(const nlohmann::json& j, PulseSequence& seq) {
  if (!j.is_object() || !j.contains("segments") || !j.at("segments").is_array()) {
    throw Error(ErrorKind::parse, "pulse sequence must be an object with a 'segments' array");
  }
  seq.segments = j.at("segments").get<std::vector<Segment>>();
  seq.validate();
}

}  // namespace nvcharge
