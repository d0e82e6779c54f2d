#include "nvcharge/error.hpp"

namespace nvcharge {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::parse: return "parse";
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::convergence: return "convergence";
    case ErrorKind::non_identifiable: return "non_identifiable";
  }
  return "unknown";
}

}  // namespace nvcharge
