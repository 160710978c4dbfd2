#include "stclip/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "stclip/error.hpp"

namespace stclip::csv {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

// Splits one logical record starting at `pos`; advances `pos` and `line`.
std::vector<std::string> next_record(std::string_view text, std::size_t& pos, std::size_t& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  bool was_quoted = false;
  while (pos < text.size()) {
    const char c = text[pos++];
    if (quoted) {
      if (c == '"') {
        if (pos < text.size() && text[pos] == '"') {
          cur.push_back('"');
          ++pos;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        cur.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      was_quoted = true;
    } else if (c == ',') {
      fields.push_back(was_quoted ? cur : trim(cur));
      cur.clear();
      was_quoted = false;
    } else if (c == '\n') {
      ++line;
      break;
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(was_quoted ? cur : trim(cur));
  return fields;
}

}  // namespace

Table Table::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

Table Table::parse(std::string_view text, std::string source) {
  Table t;
  t.source_ = std::move(source);
  // UTF-8 byte order mark
  if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
  std::size_t pos = 0, line = 1;
  if (text.empty()) throw SchemaError(t.source_ + ": missing header row");
  t.header_ = next_record(text, pos, line);
  for (std::size_t i = 0; i < t.header_.size(); ++i) t.index_.emplace(t.header_[i], i);
  while (pos < text.size()) {
    const std::size_t start_line = line;
    auto rec = next_record(text, pos, line);
    if (rec.size() == 1 && rec[0].empty()) continue;
    if (rec.size() != t.header_.size()) {
      throw ParseError(t.source_ + " line " + std::to_string(start_line) + ": expected " +
                       std::to_string(t.header_.size()) + " fields, got " +
                       std::to_string(rec.size()));
    }
    t.rows_.push_back(std::move(rec));
    t.lines_.push_back(start_line);
  }
  return t;
}

std::size_t Table::column(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) {
    throw SchemaError(source_ + ": missing column '" + std::string(name) + "'");
  }
  return it->second;
}

bool Table::has_column(std::string_view name) const {
  return index_.count(std::string(name)) != 0;
}

std::int64_t Table::get_int(std::size_t row, std::size_t col) const {
  return parse_int(cell(row, col),
                   source_ + " line " + std::to_string(line_of(row)) + " column " + header_[col]);
}

double Table::get_double(std::size_t row, std::size_t col) const {
  return parse_double(cell(row, col),
                      source_ + " line " + std::to_string(line_of(row)) + " column " + header_[col]);
}

std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

void write_row(std::ostream& os, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) os << ',';
    os << escape(fields[i]);
  }
  os << '\n';
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto p = s.find(sep, start);
    out.push_back(trim(s.substr(start, p == std::string_view::npos ? s.npos : p - start)));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return out;
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.push_back(sep);
    out += parts[i];
  }
  return out;
}

std::int64_t parse_int(std::string_view s, const std::string& where) {
  std::int64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ParseError(where + ": '" + std::string(s) + "' is not an integer");
  }
  return v;
}

double parse_double(std::string_view s, const std::string& where) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ParseError(where + ": '" + std::string(s) + "' is not a number");
  }
  return v;
}

}  // namespace stclip::csv
