#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "rpo_lab/error.hpp"

// Minimal CSV for the tables this project emits: plain fields without
// quoting, a header row, LF line endings. Doubles are written in shortest
// round-trip form so re-reading is lossless.

namespace rpo::csv {

inline std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view text) {
  if (text == "nan") return std::nan("");
  if (text == "inf") return INFINITY;
  if (text == "-inf") return -INFINITY;
  double value = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  require(res.ec == std::errc() && res.ptr == text.data() + text.size(), ErrorKind::Parse, "csv",
          "not a number: '" + std::string(text) + "'");
  return value;
}

inline std::uint64_t parse_uint(std::string_view text) {
  std::uint64_t value = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  require(res.ec == std::errc() && res.ptr == text.data() + text.size(), ErrorKind::Parse, "csv",
          "not an unsigned integer: '" + std::string(text) + "'");
  return value;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw LabError(ErrorKind::Parse, std::string(name), "no such column");
  }
};

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string join(const std::vector<std::string>& fields) {
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) line += ',';
    line += fields[i];
  }
  return line;
}

inline std::string to_string(const Table& table) {
  std::string out = join(table.header) + "\n";
  for (const auto& row : table.rows) out += join(row) + "\n";
  return out;
}

inline Table parse(const std::string& text) {
  Table table;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split(line);
    if (first) {
      table.header = std::move(fields);
      first = false;
    } else {
      require(fields.size() == table.header.size(), ErrorKind::Parse, "csv",
              "row has " + std::to_string(fields.size()) + " fields, header has " +
                  std::to_string(table.header.size()));
      table.rows.push_back(std::move(fields));
    }
  }
  require(!first, ErrorKind::Parse, "csv", "missing header row");
  return table;
}

inline void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::Io, path, "cannot open for writing");
  out << contents;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, path, "cannot open for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace rpo::csv
