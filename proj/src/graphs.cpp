#include "inlamh/graphs.hpp"

#include "inlamh/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace inlamh {

Adjacency::Adjacency(std::vector<std::vector<int>> neighbors, std::vector<std::string> ids)
    : neighbors_(std::move(neighbors)), ids_(std::move(ids)) {
  const int n = size();
  if (ids_.empty()) {
    ids_.reserve(neighbors_.size());
    for (int i = 0; i < n; ++i) ids_.push_back(std::to_string(i + 1));
  }
  if (static_cast<int>(ids_.size()) != n) throw DimensionMismatch("region id count differs from region count");
  for (int i = 0; i < n; ++i) {
    auto& nb = neighbors_[static_cast<std::size_t>(i)];
    for (int j : nb) {
      if (j < 0 || j >= n) throw DimensionMismatch("neighbour index out of range for region " + ids_[static_cast<std::size_t>(i)]);
      if (j == i) throw DimensionMismatch("self-loop at region " + ids_[static_cast<std::size_t>(i)]);
    }
    std::sort(nb.begin(), nb.end());
    if (std::adjacent_find(nb.begin(), nb.end()) != nb.end()) {
      throw DimensionMismatch("duplicate neighbour listed for region " + ids_[static_cast<std::size_t>(i)]);
    }
  }
  for (int i = 0; i < n; ++i) {
    for (int j : neighbors_[static_cast<std::size_t>(i)]) {
      const auto& back = neighbors_[static_cast<std::size_t>(j)];
      if (!std::binary_search(back.begin(), back.end(), i)) {
        throw AsymmetryError("region " + ids_[static_cast<std::size_t>(i)] + " lists " +
                             ids_[static_cast<std::size_t>(j)] + " as a neighbour but not vice versa");
      }
    }
  }
}

Adjacency Adjacency::from_edges(int n, const std::vector<std::pair<int, int>>& edges) {
  std::vector<std::vector<int>> nb(static_cast<std::size_t>(n));
  for (auto [a, b] : edges) {
    if (a < 0 || b < 0 || a >= n || b >= n) throw DimensionMismatch("edge endpoint out of range");
    nb[static_cast<std::size_t>(a)].push_back(b);
    nb[static_cast<std::size_t>(b)].push_back(a);
  }
  return Adjacency(std::move(nb));
}

Adjacency Adjacency::lattice(int rows, int cols) {
  std::vector<std::pair<int, int>> edges;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int i = r * cols + c;
      if (c + 1 < cols) edges.emplace_back(i, i + 1);
      if (r + 1 < rows) edges.emplace_back(i, i + cols);
    }
  }
  return from_edges(rows * cols, edges);
}

int Adjacency::index_of(const std::string& id) const {
  auto it = std::find(ids_.begin(), ids_.end(), id);
  return it == ids_.end() ? -1 : static_cast<int>(it - ids_.begin());
}

std::vector<int> Adjacency::components() const {
  std::vector<int> label(neighbors_.size(), -1);
  int next = 0;
  std::vector<int> stack;
  for (int s = 0; s < size(); ++s) {
    if (label[static_cast<std::size_t>(s)] >= 0) continue;
    label[static_cast<std::size_t>(s)] = next;
    stack.push_back(s);
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      for (int u : neighbors(v)) {
        if (label[static_cast<std::size_t>(u)] < 0) {
          label[static_cast<std::size_t>(u)] = next;
          stack.push_back(u);
        }
      }
    }
    ++next;
  }
  return label;
}

int Adjacency::component_count() const {
  const auto label = components();
  return label.empty() ? 0 : *std::max_element(label.begin(), label.end()) + 1;
}

std::vector<int> Adjacency::islands() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i) {
    if (neighbors(i).empty()) out.push_back(i);
  }
  return out;
}

DenseMatrix Adjacency::binary_matrix() const {
  DenseMatrix a = DenseMatrix::Zero(size(), size());
  for (int i = 0; i < size(); ++i) {
    for (int j : neighbors(i)) a(i, j) = 1.0;
  }
  return a;
}

// ---------------------------------------------------------------------------

namespace {

struct LineReader {
  std::istream& in;
  int line_no = 0;

  // Next line that is neither blank nor a comment; false at end of input.
  bool next(std::vector<std::string>& tokens) {
    std::string line;
    while (std::getline(in, line)) {
      ++line_no;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '%') continue;
      tokens.clear();
      std::istringstream ss(line);
      for (std::string tok; ss >> tok;) tokens.push_back(tok);
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("GAL line " + std::to_string(line_no) + ": " + what);
  }
};

int parse_count(const LineReader& reader, const std::string& tok) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(tok, &pos);
    if (pos != tok.size() || v < 0) reader.fail("expected a non-negative integer, got '" + tok + "'");
    return v;
  } catch (const std::logic_error&) {
    reader.fail("expected a non-negative integer, got '" + tok + "'");
  }
}

}  // namespace

Adjacency parse_gal(std::istream& in) {
  LineReader reader{in};
  std::vector<std::string> tokens;
  if (!reader.next(tokens)) reader.fail("missing header");
  int n = 0;
  if (tokens.size() == 1) {
    n = parse_count(reader, tokens[0]);
  } else if (tokens.size() >= 2 && tokens[0] == "0") {
    n = parse_count(reader, tokens[1]);
  } else {
    reader.fail("unrecognised header");
  }

  std::vector<std::string> ids;
  std::vector<std::vector<std::string>> raw;
  std::vector<int> decl_line;
  ids.reserve(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    if (!reader.next(tokens)) reader.fail("expected " + std::to_string(n) + " regions, found " + std::to_string(r));
    if (tokens.size() != 2) reader.fail("region header must be 'id count'");
    const int k = parse_count(reader, tokens[1]);
    ids.push_back(tokens[0]);
    decl_line.push_back(reader.line_no);
    std::vector<std::string> nb;
    if (k > 0) {
      if (!reader.next(tokens)) reader.fail("missing neighbour list for region " + ids.back());
      if (static_cast<int>(tokens.size()) != k) {
        reader.fail("region " + ids.back() + " declares " + std::to_string(k) + " neighbours but lists " +
                    std::to_string(tokens.size()));
      }
      nb = tokens;
    } else {
      // An island may carry an empty neighbour line; skip it if present.
      const auto pos = in.tellg();
      std::string peek;
      if (std::getline(in, peek)) {
        if (peek.find_first_not_of(" \t\r") == std::string::npos) {
          ++reader.line_no;
        } else {
          in.seekg(pos);
        }
      } else {
        in.clear();
      }
    }
    raw.push_back(std::move(nb));
  }
  if (reader.next(tokens)) reader.fail("unexpected content after the last region");

  std::unordered_map<std::string, int> index;
  for (int i = 0; i < n; ++i) {
    if (!index.emplace(ids[static_cast<std::size_t>(i)], i).second) {
      throw ParseError("GAL line " + std::to_string(decl_line[static_cast<std::size_t>(i)]) +
                       ": duplicate region id " + ids[static_cast<std::size_t>(i)]);
    }
  }
  std::vector<std::vector<int>> neighbors(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    for (const auto& id : raw[static_cast<std::size_t>(i)]) {
      auto it = index.find(id);
      if (it == index.end()) {
        throw ParseError("GAL line " + std::to_string(decl_line[static_cast<std::size_t>(i)] + 1) +
                         ": unknown neighbour id " + id);
      }
      neighbors[static_cast<std::size_t>(i)].push_back(it->second);
    }
  }
  return Adjacency(std::move(neighbors), std::move(ids));
}

Adjacency read_gal(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open GAL file " + path.string());
  return parse_gal(in);
}

void check_region_ids(const std::vector<std::string>& table_ids, const std::vector<std::string>& gal_ids,
                      const std::string& source) {
  if (table_ids.size() != gal_ids.size()) throw DimensionMismatch(source + ": region count differs from the adjacency");
  auto as_number = [](const std::string& s, double& v) {
    try {
      std::size_t pos = 0;
      v = std::stod(s, &pos);
      return pos == s.size();
    } catch (const std::logic_error&) {
      return false;
    }
  };
  for (std::size_t i = 0; i < table_ids.size(); ++i) {
    if (table_ids[i] == gal_ids[i]) continue;
    double a = 0.0, b = 0.0;
    if (as_number(table_ids[i], a) && as_number(gal_ids[i], b) && a == b) continue;
    throw DimensionMismatch(source + ": row " + std::to_string(i + 1) + " has id " + table_ids[i] +
                            " but the adjacency lists " + gal_ids[i] + " at that position");
  }
}

void write_gal(const Adjacency& adjacency, std::ostream& out) {
  out << adjacency.size() << '\n';
  const auto& ids = adjacency.ids();
  for (int i = 0; i < adjacency.size(); ++i) {
    out << ids[static_cast<std::size_t>(i)] << ' ' << adjacency.degree(i) << '\n';
    const auto& nb = adjacency.neighbors(i);
    for (std::size_t k = 0; k < nb.size(); ++k) {
      if (k) out << ' ';
      out << ids[static_cast<std::size_t>(nb[k])];
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------

namespace {

void set_support(WeightsMatrix& wm) {
  const double lmin = wm.eigenvalues.size() ? wm.eigenvalues.min() : -1.0;
  wm.support_lower = lmin < 0.0 ? 1.0 / lmin : -1.0;
  wm.support_upper = 1.0;
}

}  // namespace

WeightsMatrix row_standardize(const Adjacency& adjacency) {
  const int n = adjacency.size();
  WeightsMatrix wm;
  wm.style = WeightsStyle::row_standardized;
  std::vector<Eigen::Triplet<double>> triplets;
  DenseMatrix sym = DenseMatrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    const int di = adjacency.degree(i);
    for (int j : adjacency.neighbors(i)) {
      triplets.emplace_back(i, j, 1.0 / di);
      sym(i, j) = 1.0 / std::sqrt(static_cast<double>(di) * adjacency.degree(j));
    }
  }
  wm.w.resize(n, n);
  wm.w.setFromTriplets(triplets.begin(), triplets.end());
  wm.w.makeCompressed();
  wm.eigenvalues = eigenvalues_dense(sym);
  set_support(wm);
  return wm;
}

WeightsMatrix binary_weights(const Adjacency& adjacency) {
  WeightsMatrix wm;
  wm.style = WeightsStyle::binary;
  const DenseMatrix a = adjacency.binary_matrix();
  wm.w = a.sparseView();
  wm.w.makeCompressed();
  wm.eigenvalues = eigenvalues_dense(a);
  set_support(wm);
  const double lmax = wm.eigenvalues.size() ? wm.eigenvalues.max() : 1.0;
  if (lmax > 0.0) wm.support_upper = 1.0 / lmax;
  return wm;
}

}  // namespace inlamh
