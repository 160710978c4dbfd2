#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace stclip::csv {

/// Comma-delimited table with a header row. Double-quoted fields may contain
/// commas and doubled quotes.
class Table {
 public:
  static Table read(const std::filesystem::path& path);
  static Table parse(std::string_view text, std::string source = "<memory>");

  const std::vector<std::string>& header() const { return header_; }
  std::size_t rows() const { return rows_.size(); }
  /// Index of a required column; SchemaError names the missing column.
  std::size_t column(std::string_view name) const;
  bool has_column(std::string_view name) const;
  const std::string& cell(std::size_t row, std::size_t col) const { return rows_[row][col]; }
  /// 1-based line number of a data row in the source file.
  std::size_t line_of(std::size_t row) const { return lines_[row]; }
  const std::string& source() const { return source_; }

  std::int64_t get_int(std::size_t row, std::size_t col) const;
  double get_double(std::size_t row, std::size_t col) const;

 private:
  std::string source_;
  std::vector<std::string> header_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::vector<std::string>> rows_;
  std::vector<std::size_t> lines_;
};

/// Quotes a field when it contains a comma, quote or newline.
std::string escape(std::string_view field);
void write_row(std::ostream& os, const std::vector<std::string>& fields);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, char sep);

std::int64_t parse_int(std::string_view s, const std::string& where);
double parse_double(std::string_view s, const std::string& where);

}  // namespace stclip::csv
