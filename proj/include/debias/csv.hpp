#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace debias::csv {

// A header-indexed view of a comma-separated file. Cells are kept as text;
// typed access goes through the numeric helpers below so that every parse
// failure can name its row and column. Quoting is not supported: survey
// exports in this domain are plain numeric tables.
class Table {
 public:
  static Table read(const std::filesystem::path& path);
  static Table parse(std::string_view text, std::string source_name = "<memory>");

  const std::vector<std::string>& header() const { return header_; }
  std::size_t rows() const { return cells_.size(); }

  std::optional<std::size_t> find_column(std::string_view name) const;
  // Throws ParseError if the column is absent.
  std::size_t require_column(std::string_view name) const;

  const std::string& cell(std::size_t row, std::size_t col) const {
    return cells_[row][col];
  }

  // Finite double or ParseError naming the 1-based data row and column.
  double number(std::size_t row, std::size_t col) const;

  const std::string& source() const { return source_; }

 private:
  std::string source_;
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> cells_;
};

// Shortest text that reads back to the same double.
std::string format_double(double value);

// Finite double parsed from the whole of `text`, or nullopt.
std::optional<double> parse_finite(std::string_view text);

}  // namespace debias::csv
