#include "nvcharge/io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>

#include "nvcharge/error.hpp"

namespace nvcharge::io {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

[[noreturn]] void bad_value(std::string_view text, std::string_view column, std::size_t line_number) {
  throw Error(ErrorKind::parse, "line " + std::to_string(line_number) + ": column '" + std::string(column) +
                                    "' has invalid value '" + std::string(text) + "'");
}

}  // namespace

std::string format_number(double value) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.17g", value);
  return buffer;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.emplace_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

void check_header(std::string_view line, std::span<const std::string_view> expected, std::string_view what) {
  const auto fields = split_csv_line(line);
  for (std::size_t k = 0; k < std::max(fields.size(), expected.size()); ++k) {
    if (k >= fields.size()) {
      throw Error(ErrorKind::parse, std::string(what) + " header is missing column '" +
                                        std::string(expected[k]) + "'");
    }
    if (k >= expected.size()) {
      throw Error(ErrorKind::parse, std::string(what) + " header has unexpected column '" + fields[k] + "'");
    }
    if (fields[k] != expected[k]) {
      throw Error(ErrorKind::parse, std::string(what) + " header column " + std::to_string(k + 1) + " is '" +
                                        fields[k] + "', expected '" + std::string(expected[k]) + "'");
    }
  }
}

double parse_double(std::string_view text, std::string_view column, std::size_t line_number) {
  text = trim(text);
  if (text.empty()) bad_value(text, column, line_number);
  try {
    std::size_t used = 0;
    const double v = std::stod(std::string(text), &used);
    if (used != text.size()) bad_value(text, column, line_number);
    return v;
  } catch (const std::logic_error&) {
    bad_value(text, column, line_number);
  }
}

std::int64_t parse_integer(std::string_view text, std::string_view column, std::size_t line_number) {
  text = trim(text);
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) bad_value(text, column, line_number);
  return v;
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::config, "cannot open '" + path + "'");
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::parse, "malformed JSON in '" + path + "': " + ex.what());
  }
}

std::vector<std::uint64_t> read_histogram_csv(std::istream& in) {
  static constexpr std::string_view kHeader[] = {"counts", "occurrences"};
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::parse, "histogram CSV is empty");
  check_header(line, kHeader, "histogram");
  std::vector<std::uint64_t> out;
  std::size_t line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 2) throw Error(ErrorKind::parse, "line " + std::to_string(line_number) + ": expected 2 fields");
    const auto n = parse_integer(fields[0], "counts", line_number);
    const auto k = parse_integer(fields[1], "occurrences", line_number);
    if (n < 0 || k < 0) throw Error(ErrorKind::parse, "line " + std::to_string(line_number) + ": negative entry");
    if (static_cast<std::size_t>(n) >= out.size()) out.resize(n + 1, 0);
    out[n] += static_cast<std::uint64_t>(k);
  }
  return out;
}

void write_histogram_csv(std::ostream& out, std::span<const std::uint64_t> occurrences) {
  out << "counts,occurrences\n";
  for (std::size_t n = 0; n < occurrences.size(); ++n) out << n << ',' << occurrences[n] << '\n';
}

std::vector<OutcomePairs> read_pairs_csv(std::istream& in) {
  static constexpr std::string_view kHeader[] = {"label", "n00", "n0m", "nm0", "nmm"};
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::parse, "pairs CSV is empty");
  check_header(line, kHeader, "pairs");
  std::vector<OutcomePairs> out;
  std::size_t line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 5) throw Error(ErrorKind::parse, "line " + std::to_string(line_number) + ": expected 5 fields");
    OutcomePairs p;
    p.label = fields[0];
    std::uint64_t* slots[] = {&p.n00, &p.n0m, &p.nm0, &p.nmm};
    for (int k = 0; k < 4; ++k) {
      const auto v = parse_integer(fields[k + 1], kHeader[k + 1], line_number);
      if (v < 0) throw Error(ErrorKind::parse, "line " + std::to_string(line_number) + ": negative count");
      *slots[k] = static_cast<std::uint64_t>(v);
    }
    out.push_back(std::move(p));
  }
  return out;
}

void write_pairs_csv(std::ostream& out, std::span<const OutcomePairs> pairs) {
  out << "label,n00,n0m,nm0,nmm\n";
  for (const auto& p : pairs) {
    out << p.label << ',' << p.n00 << ',' << p.n0m << ',' << p.nm0 << ',' << p.nmm << '\n';
  }
}

}  // namespace nvcharge::io
