#pragma once

#include "inlamh/marginal.hpp"
#include "inlamh/spmat.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace inlamh {

// Comma-separated table with a header row. Fields may be double-quoted.
class CsvTable {
 public:
  static CsvTable read(const std::filesystem::path& path);  // throws ParseError
  static CsvTable parse(std::istream& in, const std::string& source = "<stream>");

  const std::vector<std::string>& header() const { return header_; }
  std::size_t rows() const { return rows_.size(); }
  bool has_column(std::string_view name) const;
  std::vector<std::string> column(std::string_view name) const;  // throws DimensionMismatch
  // Empty, "NA" and "NaN" fields become NaN.
  Vector numeric(std::string_view name) const;

 private:
  std::size_t index(std::string_view name) const;
  std::string source_;
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

// Shortest text with 17 significant digits.
std::string format_double(double x);
void write_csv_row(std::ostream& out, const std::vector<std::string>& fields);

// {"name", "values", "densities"}.
void write_marginal_json(const std::filesystem::path& path, const std::string& name, const MarginalGrid& grid);
std::pair<std::string, MarginalGrid> read_marginal_json(const std::filesystem::path& path);

}  // namespace inlamh
