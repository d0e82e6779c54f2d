#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace nvcharge::io {

/// %.17g: round-trips every double, so golden-file comparisons are exact.
std::string format_number(double value);

std::vector<std::string> split_csv_line(std::string_view line);

/// Throws Error(parse) naming the first column that differs from `expected`.
void check_header(std::string_view line, std::span<const std::string_view> expected,
                  std::string_view what);

double parse_double(std::string_view text, std::string_view column, std::size_t line_number);
std::int64_t parse_integer(std::string_view text, std::string_view column, std::size_t line_number);

nlohmann::json read_json_file(const std::string& path);

/// Histogram CSV with header `counts,occurrences`; returns occurrences indexed by count.
std::vector<std::uint64_t> read_histogram_csv(std::istream& in);
void write_histogram_csv(std::ostream& out, std::span<const std::uint64_t> occurrences);

/// Readout outcome-pair counts for one experiment setting.
struct OutcomePairs {
  std::string label;
  std::uint64_t n00 = 0, n0m = 0, nm0 = 0, nmm = 0;  // [first][second] result counts
};

/// CSV with header `label,n00,n0m,nm0,nmm`.
std::vector<OutcomePairs> read_pairs_csv(std::istream& in);
void write_pairs_csv(std::ostream& out, std::span<const OutcomePairs> pairs);

}  // namespace nvcharge::io
