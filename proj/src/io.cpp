#include "inlamh/io.hpp"

#include "inlamh/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace inlamh {

namespace {

std::vector<std::string> split_csv_line(const std::string& line, const std::string& where) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted) throw ParseError(where + ": unterminated quoted field");
  out.push_back(field);
  for (auto& f : out) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return out;
}

}  // namespace

CsvTable CsvTable::parse(std::istream& in, const std::string& source) {
  CsvTable t;
  t.source_ = source;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + " line " + std::to_string(line_no);
    auto fields = split_csv_line(line, where);
    if (t.header_.empty()) {
      t.header_ = std::move(fields);
      continue;
    }
    if (fields.size() != t.header_.size()) {
      throw ParseError(where + ": expected " + std::to_string(t.header_.size()) + " fields, found " +
                       std::to_string(fields.size()));
    }
    t.rows_.push_back(std::move(fields));
  }
  if (t.header_.empty()) throw ParseError(source + ": missing header row");
  return t;
}

CsvTable CsvTable::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open CSV file " + path.string());
  return parse(in, path.string());
}

bool CsvTable::has_column(std::string_view name) const {
  return std::find(header_.begin(), header_.end(), name) != header_.end();
}

std::size_t CsvTable::index(std::string_view name) const {
  auto it = std::find(header_.begin(), header_.end(), name);
  if (it == header_.end()) throw DimensionMismatch(source_ + ": no column named '" + std::string(name) + "'");
  return static_cast<std::size_t>(it - header_.begin());
}

std::vector<std::string> CsvTable::column(std::string_view name) const {
  const std::size_t j = index(name);
  std::vector<std::string> out;
  out.reserve(rows_.size());
  for (const auto& r : rows_) out.push_back(r[j]);
  return out;
}

Vector CsvTable::numeric(std::string_view name) const {
  const std::size_t j = index(name);
  Vector out(static_cast<int>(rows_.size()));
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    const std::string& f = rows_[i][j];
    if (f.empty() || f == "NA" || f == "NaN" || f == "nan") {
      out[static_cast<int>(i)] = std::nan("");
      continue;
    }
    try {
      std::size_t pos = 0;
      out[static_cast<int>(i)] = std::stod(f, &pos);
      if (pos != f.size()) throw std::invalid_argument(f);
    } catch (const std::logic_error&) {
      throw ParseError(source_ + ": non-numeric value '" + f + "' in column " + std::string(name) + ", data row " +
                       std::to_string(i + 1));
    }
  }
  return out;
}

std::string format_double(double x) {
  if (std::isnan(x)) return "NaN";
  if (std::isinf(x)) return x > 0 ? "Infinity" : "-Infinity";
  std::ostringstream out;
  out.precision(17);
  out << x;
  return out.str();
}

void write_csv_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    const std::string& f = fields[i];
    if (f.find_first_of(",\"\n") != std::string::npos) {
      out << '"';
      for (char c : f) out << (c == '"' ? "\"\"" : std::string(1, c));
      out << '"';
    } else {
      out << f;
    }
  }
  out << '\n';
}

void write_marginal_json(const std::filesystem::path& path, const std::string& name, const MarginalGrid& grid) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path.string());
  out << "{\"name\": " << nlohmann::json(name).dump() << ", \"values\": [";
  for (std::size_t i = 0; i < grid.size(); ++i) out << (i ? ", " : "") << format_double(grid.values()[i]);
  out << "], \"densities\": [";
  for (std::size_t i = 0; i < grid.size(); ++i) out << (i ? ", " : "") << format_double(grid.densities()[i]);
  out << "]}\n";
}

std::pair<std::string, MarginalGrid> read_marginal_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    return {j.at("name").get<std::string>(),
            MarginalGrid(j.at("values").get<std::vector<double>>(), j.at("densities").get<std::vector<double>>())};
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace inlamh
