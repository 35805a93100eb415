#include "inlamh/spmat.hpp"

#include "inlamh/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/OrderingMethods>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace inlamh {

namespace {

void check_index(int n, int i, int j) {
  if (i < 0 || j < 0 || i >= n || j >= n) {
    std::ostringstream msg;
    msg << "entry (" << i << ", " << j << ") outside a " << n << "x" << n << " matrix";
    throw DimensionMismatch(msg.str());
  }
}

}  // namespace

SparseSym SparseSym::from_entries(int n, std::span<const Entry> entries) {
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(entries.size());
  for (const auto& e : entries) {
    check_index(n, e.row, e.col);
    triplets.emplace_back(std::max(e.row, e.col), std::min(e.row, e.col), e.value);
  }
  SparseMatrix lower(n, n);
  lower.setFromTriplets(triplets.begin(), triplets.end());
  lower.makeCompressed();
  return SparseSym(std::move(lower));
}

SparseSym SparseSym::from_lower(SparseMatrix lower) {
  if (lower.rows() != lower.cols()) throw DimensionMismatch("symmetric matrix must be square");
  SparseMatrix tri = lower.triangularView<Eigen::Lower>();
  tri.makeCompressed();
  return SparseSym(std::move(tri));
}

SparseSym SparseSym::from_dense(const DenseMatrix& m, double drop_tol) {
  if (m.rows() != m.cols()) throw DimensionMismatch("symmetric matrix must be square");
  std::vector<Entry> entries;
  for (int j = 0; j < m.cols(); ++j) {
    for (int i = j; i < m.rows(); ++i) {
      if (i == j || std::abs(m(i, j)) > drop_tol) entries.push_back({i, j, m(i, j)});
    }
  }
  return from_entries(static_cast<int>(m.rows()), entries);
}

SparseSym SparseSym::identity(int n) {
  std::vector<double> ones(static_cast<std::size_t>(n), 1.0);
  return diagonal(ones);
}

SparseSym SparseSym::diagonal(std::span<const double> values) {
  std::vector<Entry> entries;
  entries.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    entries.push_back({static_cast<int>(i), static_cast<int>(i), values[i]});
  }
  return from_entries(static_cast<int>(values.size()), entries);
}

SparseMatrix SparseSym::full() const {
  SparseMatrix out = lower_.selfadjointView<Eigen::Lower>();
  out.makeCompressed();
  return out;
}

DenseMatrix SparseSym::to_dense() const { return DenseMatrix(full()); }

std::vector<Entry> SparseSym::entries() const {
  std::vector<Entry> out;
  out.reserve(static_cast<std::size_t>(lower_.nonZeros()));
  for (int j = 0; j < lower_.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(lower_, j); it; ++it) {
      out.push_back({static_cast<int>(it.col()), static_cast<int>(it.row()), it.value()});
    }
  }
  std::sort(out.begin(), out.end(), [](const Entry& a, const Entry& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  return out;
}

double SparseSym::coeff(int i, int j) const {
  check_index(size(), i, j);
  return lower_.coeff(std::max(i, j), std::min(i, j));
}

Vector SparseSym::diagonal_values() const { return lower_.diagonal(); }

Vector SparseSym::multiply(const Vector& x) const {
  if (x.size() != size()) throw DimensionMismatch("vector length does not match matrix");
  return lower_.selfadjointView<Eigen::Lower>() * x;
}

SparseSym SparseSym::scaled(double a) const { return SparseSym(SparseMatrix(a * lower_)); }

SparseSym SparseSym::plus_diagonal(double d) const {
  SparseMatrix id(size(), size());
  id.setIdentity();
  SparseMatrix out = lower_ + d * id;
  out.makeCompressed();
  return SparseSym(std::move(out));
}

SparseSym SparseSym::combined(double a, const SparseSym& other, double b) const {
  if (other.size() != size()) throw DimensionMismatch("matrix sizes differ");
  SparseMatrix out = a * lower_ + b * other.lower_;
  out.makeCompressed();
  return SparseSym(std::move(out));
}

// ---------------------------------------------------------------------------

namespace detail {

using SparseLLT = Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>>;

// Symbolic structure of P A P^T = L L^T for one sparsity pattern of A. The
// ordering and the pattern of L come from Eigen's simplicial analysis.
struct Symbolic {
  int n = 0;
  std::vector<int> outer;  // pattern of the analysed A, for comparison
  std::vector<int> inner;
  std::vector<int> perm;  // old index -> new index
  std::vector<int> lp;    // column pointers of L (diagonal first in each column)
  std::vector<int> li;    // row indices of L
  std::vector<int> amap;  // slot of A's lower value -> slot of L
  std::vector<int> row_ptr;  // per row j: entries (k, slot of L(j, k)) with k < j
  std::vector<std::pair<int, int>> row_entries;

  explicit Symbolic(const SparseMatrix& lower) {
    n = static_cast<int>(lower.rows());
    outer.assign(lower.outerIndexPtr(), lower.outerIndexPtr() + lower.outerSize() + 1);
    inner.assign(lower.innerIndexPtr(), lower.innerIndexPtr() + lower.nonZeros());

    // Diagonally dominant matrix on the same pattern; its factor carries the
    // full structural pattern of L.
    SparseMatrix probe = lower;
    std::vector<double> deg(static_cast<std::size_t>(n), 1.0);
    for (int j = 0; j < n; ++j) {
      for (SparseMatrix::InnerIterator it(probe, j); it; ++it) {
        if (it.row() != it.col()) {
          it.valueRef() = -1.0;
          deg[static_cast<std::size_t>(it.row())] += 1.0;
          deg[static_cast<std::size_t>(it.col())] += 1.0;
        }
      }
    }
    for (int j = 0; j < n; ++j) {
      for (SparseMatrix::InnerIterator it(probe, j); it; ++it) {
        if (it.row() == it.col()) it.valueRef() = deg[static_cast<std::size_t>(j)];
      }
    }
    SparseLLT llt;
    llt.compute(probe);
    if (llt.info() != Eigen::Success) throw NotPositiveDefinite("symbolic Cholesky analysis failed");
    const auto& idx = llt.permutationP().indices();
    perm.assign(idx.data(), idx.data() + n);
    SparseMatrix l(llt.matrixL());
    l.makeCompressed();
    lp.assign(l.outerIndexPtr(), l.outerIndexPtr() + n + 1);
    li.assign(l.innerIndexPtr(), l.innerIndexPtr() + l.nonZeros());

    amap.resize(inner.size());
    for (int c = 0; c < n; ++c) {
      for (int q = outer[static_cast<std::size_t>(c)]; q < outer[static_cast<std::size_t>(c) + 1]; ++q) {
        const int r = inner[static_cast<std::size_t>(q)];
        const int pr = perm[static_cast<std::size_t>(r)];
        const int pc = perm[static_cast<std::size_t>(c)];
        const int col = std::min(pr, pc);
        const int row = std::max(pr, pc);
        const auto b = li.begin() + lp[static_cast<std::size_t>(col)];
        const auto e = li.begin() + lp[static_cast<std::size_t>(col) + 1];
        const auto it = std::lower_bound(b, e, row);
        if (it == e || *it != row) throw NotPositiveDefinite("Cholesky pattern does not cover the matrix");
        amap[static_cast<std::size_t>(q)] = static_cast<int>(it - li.begin());
      }
    }

    std::vector<int> count(static_cast<std::size_t>(n), 0);
    for (int k = 0; k < n; ++k) {
      for (int q = lp[static_cast<std::size_t>(k)] + 1; q < lp[static_cast<std::size_t>(k) + 1]; ++q) {
        ++count[static_cast<std::size_t>(li[static_cast<std::size_t>(q)])];
      }
    }
    row_ptr.assign(static_cast<std::size_t>(n) + 1, 0);
    for (int j = 0; j < n; ++j) row_ptr[static_cast<std::size_t>(j) + 1] = row_ptr[static_cast<std::size_t>(j)] + count[static_cast<std::size_t>(j)];
    row_entries.resize(static_cast<std::size_t>(row_ptr.back()));
    std::vector<int> fill(row_ptr.begin(), row_ptr.end() - 1);
    for (int k = 0; k < n; ++k) {
      for (int q = lp[static_cast<std::size_t>(k)] + 1; q < lp[static_cast<std::size_t>(k) + 1]; ++q) {
        const int j = li[static_cast<std::size_t>(q)];
        row_entries[static_cast<std::size_t>(fill[static_cast<std::size_t>(j)]++)] = {k, q};
      }
    }
  }

  bool matches(const SparseMatrix& m) const {
    if (static_cast<std::size_t>(m.outerSize() + 1) != outer.size() ||
        static_cast<std::size_t>(m.nonZeros()) != inner.size()) {
      return false;
    }
    return std::equal(outer.begin(), outer.end(), m.outerIndexPtr()) &&
           std::equal(inner.begin(), inner.end(), m.innerIndexPtr());
  }
};

class FactorImpl {
 public:
  void factorize(const SparseMatrix& lower) {
    const int n = static_cast<int>(lower.rows());
    n_ = n;
    double max_diag = 0.0;
    for (int j = 0; j < n; ++j) max_diag = std::max(max_diag, lower.coeff(j, j));
    Vector diag_l;
    if (n <= kDenseCholeskyMax) {
      dense_ = true;
      DenseMatrix dense = DenseMatrix(lower);
      llt_.compute(dense);
      if (llt_.info() != Eigen::Success) throw NotPositiveDefinite("non-positive pivot in Cholesky factorization");
      diag_l = llt_.matrixLLT().diagonal();
    } else {
      dense_ = false;
      if (!sym_ || !sym_->matches(lower)) sym_ = std::make_shared<const Symbolic>(lower);
      numeric(lower, max_diag);
      diag_l.resize(n);
      for (int j = 0; j < n; ++j) diag_l[j] = lv_[static_cast<std::size_t>(sym_->lp[static_cast<std::size_t>(j)])];
    }
    const double min_pivot = diag_l.cwiseAbs2().minCoeff();
    if (!(min_pivot > kPivotTolerance * max_diag)) {
      std::ostringstream msg;
      msg << "pivot " << min_pivot << " below tolerance relative to max diagonal " << max_diag;
      throw NotPositiveDefinite(msg.str());
    }
    logdet_ = 2.0 * diag_l.array().log().sum();
  }

  int size() const { return n_; }
  double log_determinant() const { return logdet_; }

  Vector solve(const Vector& b) const {
    if (b.size() != n_) throw DimensionMismatch("right-hand side length does not match factor");
    if (dense_) return llt_.solve(b);
    Vector y(n_);
    for (int i = 0; i < n_; ++i) y[sym_->perm[static_cast<std::size_t>(i)]] = b[i];
    solve_in_place(y.data(), 1);
    Vector x(n_);
    for (int i = 0; i < n_; ++i) x[i] = y[sym_->perm[static_cast<std::size_t>(i)]];
    return x;
  }

  DenseMatrix solve(const DenseMatrix& b) const {
    if (b.rows() != n_) throw DimensionMismatch("right-hand side rows do not match factor");
    if (dense_) return llt_.solve(b);
    const int m = static_cast<int>(b.cols());
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> y(n_, m);
    for (int i = 0; i < n_; ++i) y.row(sym_->perm[static_cast<std::size_t>(i)]) = b.row(i);
    solve_in_place(y.data(), m);
    DenseMatrix out(n_, m);
    for (int i = 0; i < n_; ++i) out.row(i) = y.row(sym_->perm[static_cast<std::size_t>(i)]);
    return out;
  }

  std::vector<int> permutation() const {
    std::vector<int> perm(static_cast<std::size_t>(n_));
    if (dense_) {
      for (int i = 0; i < n_; ++i) perm[static_cast<std::size_t>(i)] = i;
      return perm;
    }
    for (int i = 0; i < n_; ++i) perm[static_cast<std::size_t>(sym_->perm[static_cast<std::size_t>(i)])] = i;
    return perm;
  }

  DenseMatrix lower_factor() const {
    if (dense_) return DenseMatrix(llt_.matrixL());
    DenseMatrix l = DenseMatrix::Zero(n_, n_);
    for (int j = 0; j < n_; ++j) {
      for (int q = sym_->lp[static_cast<std::size_t>(j)]; q < sym_->lp[static_cast<std::size_t>(j) + 1]; ++q) {
        l(sym_->li[static_cast<std::size_t>(q)], j) = lv_[static_cast<std::size_t>(q)];
      }
    }
    return l;
  }

  DenseMatrix reconstruct() const {
    DenseMatrix l = lower_factor();
    DenseMatrix permuted = l * l.transpose();
    const auto perm = permutation();
    DenseMatrix out(n_, n_);
    for (int i = 0; i < n_; ++i) {
      for (int j = 0; j < n_; ++j) {
        out(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]) = permuted(i, j);
      }
    }
    return out;
  }

 private:
  // Left-looking column factorization on the precomputed pattern, with a
  // dense accumulator for the active column.
  void numeric(const SparseMatrix& lower, double max_diag) {
    const Symbolic& s = *sym_;
    lv_.assign(s.li.size(), 0.0);
    const double* av = lower.valuePtr();
    for (std::size_t q = 0; q < s.amap.size(); ++q) lv_[static_cast<std::size_t>(s.amap[q])] += av[q];
    work_.assign(static_cast<std::size_t>(n_), 0.0);
    const int* li = s.li.data();
    const int* lp = s.lp.data();
    double* lv = lv_.data();
    double* x = work_.data();
    for (int j = 0; j < n_; ++j) {
      const int b = lp[j];
      const int e = lp[j + 1];
      for (int q = b; q < e; ++q) x[li[q]] = lv[q];
      for (int r = s.row_ptr[static_cast<std::size_t>(j)]; r < s.row_ptr[static_cast<std::size_t>(j) + 1]; ++r) {
        const auto [k, qjk] = s.row_entries[static_cast<std::size_t>(r)];
        const double ljk = lv[qjk];
        const int ke = lp[k + 1];
        for (int q = qjk; q < ke; ++q) x[li[q]] -= lv[q] * ljk;
      }
      const double d = x[j];
      if (!(d > kPivotTolerance * max_diag)) {
        std::ostringstream msg;
        msg << "pivot " << d << " below tolerance relative to max diagonal " << max_diag;
        throw NotPositiveDefinite(msg.str());
      }
      const double ljj = std::sqrt(d);
      const double inv = 1.0 / ljj;
      lv[b] = ljj;
      x[j] = 0.0;
      for (int q = b + 1; q < e; ++q) {
        lv[q] = x[li[q]] * inv;
        x[li[q]] = 0.0;
      }
    }
  }

  // Solves L L^T Y = Y for m permuted right-hand sides stored row-major.
  void solve_in_place(double* y, int m) const {
    const Symbolic& s = *sym_;
    const int* lp = s.lp.data();
    const int* li = s.li.data();
    const double* lv = lv_.data();
    for (int j = 0; j < n_; ++j) {
      double* yj = y + static_cast<std::ptrdiff_t>(j) * m;
      const double inv = 1.0 / lv[lp[j]];
      for (int c = 0; c < m; ++c) yj[c] *= inv;
      for (int q = lp[j] + 1; q < lp[j + 1]; ++q) {
        double* yi = y + static_cast<std::ptrdiff_t>(li[q]) * m;
        const double l = lv[q];
        for (int c = 0; c < m; ++c) yi[c] -= l * yj[c];
      }
    }
    for (int j = n_ - 1; j >= 0; --j) {
      double* yj = y + static_cast<std::ptrdiff_t>(j) * m;
      for (int q = lp[j] + 1; q < lp[j + 1]; ++q) {
        const double* yi = y + static_cast<std::ptrdiff_t>(li[q]) * m;
        const double l = lv[q];
        for (int c = 0; c < m; ++c) yj[c] -= l * yi[c];
      }
      const double inv = 1.0 / lv[lp[j]];
      for (int c = 0; c < m; ++c) yj[c] *= inv;
    }
  }

  int n_ = 0;
  bool dense_ = true;
  double logdet_ = 0.0;
  Eigen::LLT<DenseMatrix, Eigen::Lower> llt_;
  std::shared_ptr<const Symbolic> sym_;
  std::vector<double> lv_;
  std::vector<double> work_;
};

}  // namespace detail

CholFactor::CholFactor(std::shared_ptr<const detail::FactorImpl> impl) : impl_(std::move(impl)) {}

int CholFactor::size() const { return impl_->size(); }
double CholFactor::log_determinant() const { return impl_->log_determinant(); }
Vector CholFactor::solve(const Vector& b) const { return impl_->solve(b); }
DenseMatrix CholFactor::solve(const DenseMatrix& b) const { return impl_->solve(b); }
std::vector<int> CholFactor::permutation() const { return impl_->permutation(); }
DenseMatrix CholFactor::lower_factor() const { return impl_->lower_factor(); }
DenseMatrix CholFactor::reconstruct() const { return impl_->reconstruct(); }

CholFactor cholesky(const SparseSym& m) {
  auto impl = std::make_shared<detail::FactorImpl>();
  impl->factorize(m.lower());
  return CholFactor(std::move(impl));
}

CholeskySolver::CholeskySolver() : impl_(std::make_unique<detail::FactorImpl>()) {}
CholeskySolver::~CholeskySolver() = default;
CholeskySolver::CholeskySolver(CholeskySolver&&) noexcept = default;
CholeskySolver& CholeskySolver::operator=(CholeskySolver&&) noexcept = default;

void CholeskySolver::factorize(const SparseMatrix& lower) {
  if (!impl_) impl_ = std::make_unique<detail::FactorImpl>();
  impl_->factorize(lower);
}

double CholeskySolver::log_determinant() const { return impl_->log_determinant(); }
Vector CholeskySolver::solve(const Vector& b) const { return impl_->solve(b); }
DenseMatrix CholeskySolver::solve(const DenseMatrix& b) const { return impl_->solve(b); }

CholFactor CholeskySolver::release() {
  std::shared_ptr<const detail::FactorImpl> shared(std::move(impl_));
  impl_ = std::make_unique<detail::FactorImpl>();
  return CholFactor(std::move(shared));
}

// ---------------------------------------------------------------------------

EigenSet eigenvalues_dense(const DenseMatrix& m, std::size_t max_dim) {
  if (m.rows() != m.cols()) throw DimensionMismatch("eigenvalues need a square matrix");
  if (static_cast<std::size_t>(m.rows()) > max_dim) {
    throw DimensionMismatch("matrix exceeds the dense eigenvalue threshold");
  }
  EigenSet out;
  if (m.rows() == 0) return out;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-14 * scale) {
    Eigen::SelfAdjointEigenSolver<DenseMatrix> solver(m, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) throw NonConvergence("symmetric eigensolver did not converge");
    const Vector& ev = solver.eigenvalues();
    out.values.assign(ev.data(), ev.data() + ev.size());
  } else {
    Eigen::EigenSolver<DenseMatrix> solver(m, false);
    if (solver.info() != Eigen::Success) throw NonConvergence("eigensolver did not converge");
    const auto ev = solver.eigenvalues();
    for (int i = 0; i < ev.size(); ++i) {
      if (std::abs(ev[i].imag()) > 1e-8 * scale) throw NonConvergence("matrix has a complex spectrum");
      out.values.push_back(ev[i].real());
    }
  }
  std::sort(out.values.begin(), out.values.end());
  return out;
}

double logdet_shifted(const EigenSet& eigs, double rho) {
  double total = 0.0;
  for (double e : eigs.values) {
    const double f = 1.0 - rho * e;
    if (!(f > 0.0)) {
      std::ostringstream msg;
      msg << "1 - rho * eigenvalue <= 0 at rho = " << rho;
      throw OutOfSupport(msg.str());
    }
    total += std::log(f);
  }
  return total;
}

}  // namespace inlamh
