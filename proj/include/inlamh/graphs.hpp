#pragma once

#include "inlamh/spmat.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace inlamh {

// Undirected neighbourhood structure of n regions. Indices are 0-based and
// follow the order regions were declared in; ids are the external labels.
class Adjacency {
 public:
  Adjacency() = default;
  // Throws AsymmetryError or DimensionMismatch when the lists are not a valid
  // symmetric, loop-free graph.
  Adjacency(std::vector<std::vector<int>> neighbors, std::vector<std::string> ids = {});

  static Adjacency from_edges(int n, const std::vector<std::pair<int, int>>& edges);
  static Adjacency lattice(int rows, int cols);  // rook contiguity

  int size() const { return static_cast<int>(neighbors_.size()); }
  const std::vector<int>& neighbors(int i) const { return neighbors_[static_cast<std::size_t>(i)]; }
  int degree(int i) const { return static_cast<int>(neighbors(i).size()); }
  const std::vector<std::string>& ids() const { return ids_; }
  int index_of(const std::string& id) const;  // -1 when absent

  // Component label per region, labels numbered by first appearance.
  std::vector<int> components() const;
  int component_count() const;
  std::vector<int> islands() const;

  DenseMatrix binary_matrix() const;

  friend bool operator==(const Adjacency&, const Adjacency&) = default;

 private:
  std::vector<std::vector<int>> neighbors_;
  std::vector<std::string> ids_;
};

// GAL neighbour format: optional '%' comment lines, a header whose first
// field is the region count (the four-field "0 n name key" form is also
// accepted), then for each region a line "id k" followed by a line of k
// neighbour ids.
Adjacency parse_gal(std::istream& in);
Adjacency read_gal(const std::filesystem::path& path);

// Table rows must list the regions in adjacency order; ids compare as
// strings or, failing that, as numbers. Throws DimensionMismatch.
void check_region_ids(const std::vector<std::string>& table_ids, const std::vector<std::string>& gal_ids,
                      const std::string& source);
void write_gal(const Adjacency& adjacency, std::ostream& out);

enum class WeightsStyle { binary, row_standardized };

struct WeightsMatrix {
  WeightsStyle style = WeightsStyle::binary;
  SparseMatrix w;  // n x n, general (not symmetric for row-standardized)
  EigenSet eigenvalues;
  // Open interval (1/lambda_min, 1) of admissible autocorrelation values.
  double support_lower = -1.0;
  double support_upper = 1.0;

  int size() const { return static_cast<int>(w.rows()); }
  DenseMatrix dense() const { return DenseMatrix(w); }
  bool in_support(double rho) const { return rho > support_lower && rho < support_upper; }
};

// W[i][j] = 1 / n_i for neighbours; island rows stay zero. The spectrum is
// computed on the similar symmetric matrix D^{-1/2} A D^{-1/2}.
WeightsMatrix row_standardize(const Adjacency& adjacency);
WeightsMatrix binary_weights(const Adjacency& adjacency);

}  // namespace inlamh
