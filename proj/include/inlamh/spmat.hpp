#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

namespace inlamh {

using Vector = Eigen::VectorXd;
using DenseMatrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

struct Entry {
  int row;
  int col;
  double value;
};

// Symmetric sparse matrix. Only the lower triangle (diagonal included) is
// stored; every operation treats the matrix as symmetric.
class SparseSym {
 public:
  SparseSym() = default;

  // (i, j) and (j, i) address the same element; repeated entries are summed.
  static SparseSym from_entries(int n, std::span<const Entry> entries);
  static SparseSym from_lower(SparseMatrix lower);
  static SparseSym from_dense(const DenseMatrix& m, double drop_tol = 0.0);
  static SparseSym identity(int n);
  static SparseSym diagonal(std::span<const double> values);

  int size() const { return static_cast<int>(lower_.rows()); }
  const SparseMatrix& lower() const { return lower_; }
  SparseMatrix full() const;
  DenseMatrix to_dense() const;

  // Stored elements with row <= col.
  std::vector<Entry> entries() const;
  double coeff(int i, int j) const;
  Vector diagonal_values() const;
  Vector multiply(const Vector& x) const;

  SparseSym scaled(double a) const;
  SparseSym plus_diagonal(double d) const;
  // a * this + b * other.
  SparseSym combined(double a, const SparseSym& other, double b) const;

 private:
  explicit SparseSym(SparseMatrix lower) : lower_(std::move(lower)) {}
  SparseMatrix lower_;
};

namespace detail {
class FactorImpl;
}

// Immutable Cholesky factor P A P^T = L L^T of a symmetric positive definite
// matrix. Small matrices are factored densely with the identity permutation;
// larger ones use a simplicial sparse factorization with AMD ordering.
class CholFactor {
 public:
  CholFactor() = default;
  explicit CholFactor(std::shared_ptr<const detail::FactorImpl> impl);

  int size() const;
  double log_determinant() const;
  Vector solve(const Vector& b) const;
  DenseMatrix solve(const DenseMatrix& b) const;
  // Row i of the permuted system corresponds to row permutation()[i] of A.
  std::vector<int> permutation() const;
  DenseMatrix lower_factor() const;
  // P^T L L^T P, for verification at small sizes.
  DenseMatrix reconstruct() const;
  bool empty() const { return impl_ == nullptr; }

 private:
  std::shared_ptr<const detail::FactorImpl> impl_;
};

// Pivots at or below this fraction of the largest diagonal are treated as a
// failed factorization.
inline constexpr double kPivotTolerance = 1e-12;
// Matrices at or below this dimension are factored densely.
inline constexpr int kDenseCholeskyMax = 64;

CholFactor cholesky(const SparseSym& m);

// Factorization engine for repeated factorizations of matrices sharing one
// sparsity pattern. Not thread-safe; give each worker its own instance.
class CholeskySolver {
 public:
  CholeskySolver();
  ~CholeskySolver();
  CholeskySolver(CholeskySolver&&) noexcept;
  CholeskySolver& operator=(CholeskySolver&&) noexcept;

  // `lower` holds the lower triangle; its pattern is analysed on first use
  // and whenever the pattern size changes.
  void factorize(const SparseMatrix& lower);
  double log_determinant() const;
  Vector solve(const Vector& b) const;
  DenseMatrix solve(const DenseMatrix& b) const;
  // Hands the current factor out as an immutable value. The solver must be
  // factorized again before further use.
  CholFactor release();

 private:
  std::unique_ptr<detail::FactorImpl> impl_;
};

struct EigenSet {
  std::vector<double> values;  // ascending

  std::size_t size() const { return values.size(); }
  double min() const { return values.front(); }
  double max() const { return values.back(); }
};

inline constexpr std::size_t kDenseEigenMax = 2000;

// Real spectrum of a square matrix. Symmetric input goes through a
// self-adjoint solver; anything else must have a numerically real spectrum.
EigenSet eigenvalues_dense(const DenseMatrix& m, std::size_t max_dim = kDenseEigenMax);

// sum_i log(1 - rho * e_i), i.e. log|I - rho W| from the spectrum of W.
double logdet_shifted(const EigenSet& eigs, double rho);

}  // namespace inlamh
