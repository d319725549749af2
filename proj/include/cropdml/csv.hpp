#pragma once

#include <charconv>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "cropdml/error.hpp"

namespace cropdml::csv {

// RFC 4180 field splitting: double-quoted fields may contain commas and "".
inline std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

struct Row {
  std::size_t line = 0;  // 1-based line number in the source file
  std::vector<std::string> fields;
};

class Table {
 public:
  std::string source;
  std::vector<std::string> header;
  std::vector<Row> rows;

  // Index of a required column; kSchema naming file and column otherwise.
  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    fail(ErrorCode::kSchema, "missing required column",
         {{"file", source}, {"column", std::string(name)}});
  }

  bool has_column(std::string_view name) const {
    for (const auto& h : header) {
      if (h == name) return true;
    }
    return false;
  }

  const std::string& field(const Row& row, std::size_t col) const {
    if (col >= row.fields.size()) {
      fail(ErrorCode::kSchema, "row has too few fields",
           {{"file", source}, {"line", std::to_string(row.line)},
            {"column", header[col]}});
    }
    return row.fields[col];
  }

  double number(const Row& row, std::size_t col) const {
    const std::string& text = field(row, col);
    double value = 0.0;
    const char* begin = text.data();
    const char* end = text.data() + text.size();
    while (begin < end && *begin == ' ') ++begin;
    while (end > begin && (end[-1] == ' ' || end[-1] == '\r')) --end;
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end || begin == end) {
      fail(ErrorCode::kSchema, "malformed number",
           {{"file", source}, {"line", std::to_string(row.line)},
            {"column", header[col]}, {"value", text}});
    }
    return value;
  }

  long long integer(const Row& row, std::size_t col) const {
    const std::string& text = field(row, col);
    long long value = 0;
    const char* begin = text.data();
    const char* end = text.data() + text.size();
    while (end > begin && (end[-1] == ' ' || end[-1] == '\r')) --end;
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end || begin == end) {
      fail(ErrorCode::kSchema, "malformed integer",
           {{"file", source}, {"line", std::to_string(row.line)},
            {"column", header[col]}, {"value", text}});
    }
    return value;
  }
};

inline Table parse(std::istream& in, std::string source) {
  Table table;
  table.source = std::move(source);
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_line(line);
    if (!have_header) {
      for (auto& f : fields) {
        while (!f.empty() && f.front() == ' ') f.erase(f.begin());
        while (!f.empty() && f.back() == ' ') f.pop_back();
      }
      table.header = std::move(fields);
      have_header = true;
      continue;
    }
    table.rows.push_back({line_no, std::move(fields)});
  }
  require(have_header, ErrorCode::kSchema, "file has no header", {{"file", table.source}});
  return table;
}

inline Table read(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open file", {{"file", path}});
  return parse(in, path);
}

// Shortest decimal text that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline std::string quote(std::string_view field) {
  if (field.find_first_of(",\"\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace cropdml::csv
