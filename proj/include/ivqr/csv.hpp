#pragma once

// Minimal RFC 4180 reader/writer. Leading lines that start with '#' are
// treated as a comment block (used for provenance headers) and skipped.

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "errors.hpp"

namespace ivqr::csv {

struct Table
{
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> comments;
};

namespace detail {

// Reads one record; returns false at end of input. `line` counts physical lines.
inline bool read_record(std::istream& in, std::vector<std::string>& fields, std::size_t& line)
{
  fields.clear();
  if (in.peek() == std::char_traits<char>::eof())
    return false;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  for (;;) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) {
      if (quoted)
        throw ParseError("unterminated quoted field", line);
      fields.push_back(field);
      return true;
    }
    const char ch = static_cast<char>(c);
    if (quoted) {
      if (ch == '"') {
        if (in.peek() == '"') {
          in.get();
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        if (ch == '\n')
          ++line;
        field.push_back(ch);
      }
      continue;
    }
    if (ch == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (ch == ',') {
      fields.push_back(field);
      field.clear();
      field_started = false;
    } else if (ch == '\r') {
      if (in.peek() == '\n')
        in.get();
      fields.push_back(field);
      ++line;
      return true;
    } else if (ch == '\n') {
      fields.push_back(field);
      ++line;
      return true;
    } else {
      field.push_back(ch);
      field_started = true;
    }
  }
}

} // namespace detail

inline Table read(std::istream& in)
{
  Table t;
  std::size_t line = 1;
  while (in.peek() == '#') {
    std::string c;
    std::getline(in, c);
    if (!c.empty() && c.back() == '\r')
      c.pop_back();
    t.comments.push_back(c);
    ++line;
  }
  std::vector<std::string> fields;
  if (!detail::read_record(in, t.header, line))
    throw ParseError("missing header row", 0);
  std::size_t row = 0;
  while (detail::read_record(in, fields, line)) {
    ++row;
    if (fields.size() == 1 && fields[0].empty())
      continue; // blank line (e.g. trailing newline)
    if (fields.size() != t.header.size())
      throw ParseError("row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                         " fields, header has " + std::to_string(t.header.size()),
                       row);
    t.rows.push_back(fields);
  }
  return t;
}

inline Table read_file(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ConfigError("cannot open file: " + path);
  return read(in);
}

/// Parses a decimal floating-point cell. Throws ParseError naming the row.
inline double parse_number(const std::string& cell, std::size_t row, const std::string& column)
{
  std::size_t b = 0;
  std::size_t e = cell.size();
  while (b < e && (cell[b] == ' ' || cell[b] == '\t'))
    ++b;
  while (e > b && (cell[e - 1] == ' ' || cell[e - 1] == '\t'))
    --e;
  if (b == e)
    throw ParseError("row " + std::to_string(row) + ", column '" + column + "': missing value", row);
  if (cell[b] == '+')
    ++b;
  double v = 0.0;
  const auto res = std::from_chars(cell.data() + b, cell.data() + e, v);
  if (res.ec != std::errc() || res.ptr != cell.data() + e)
    throw ParseError("row " + std::to_string(row) + ", column '" + column + "': not a number '" +
                       cell + "'",
                     row);
  if (!std::isfinite(v))
    throw ParseError("row " + std::to_string(row) + ", column '" + column + "': non-finite value",
                     row);
  return v;
}

/// Shortest decimal representation that round-trips to the same double.
inline std::string format_number(double v)
{
  if (std::isnan(v))
    return "nan";
  if (std::isinf(v))
    return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string quote(const std::string& field)
{
  if (field.find_first_of(",\"\r\n") == std::string::npos)
    return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"')
      out += "\"\"";
    else
      out.push_back(c);
  }
  out.push_back('"');
  return out;
}

/// Streaming writer producing CRLF-free, comma-separated records.
class Writer
{
public:
  explicit Writer(std::ostream& out)
    : out_(out)
  {}

  void comment(const std::string& text) { out_ << "# " << text << '\n'; }

  void row(const std::vector<std::string>& fields)
  {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i)
        out_ << ',';
      out_ << quote(fields[i]);
    }
    out_ << '\n';
  }

private:
  std::ostream& out_;
};

} // namespace ivqr::csv
