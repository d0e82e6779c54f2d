#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nvcharge {

/// Category of a failure; the CLI reports it as the "kind" field of its error JSON.
enum class ErrorKind {
  config,
  parse,
  invalid_argument,
  numeric,
  convergence,
  non_identifiable,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace nvcharge
