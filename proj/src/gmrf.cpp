#include "inlamh/gmrf.hpp"

#include "inlamh/errors.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace inlamh {

namespace {

struct Spectrum {
  int zero_count = 0;
  double log_pseudo_det = 0.0;
};

Spectrum analyse_spectrum(const SparseSym& t) {
  const EigenSet eigs = eigenvalues_dense(t.to_dense());
  Spectrum out;
  if (eigs.size() == 0) return out;
  const double tol = kNullEigenTolerance * std::max(1.0, eigs.max());
  for (double e : eigs.values) {
    if (e < -tol) {
      std::ostringstream msg;
      msg << "structure matrix has negative eigenvalue " << e;
      throw IndefiniteStructure(msg.str());
    }
    if (std::abs(e) <= tol) {
      ++out.zero_count;
    } else {
      out.log_pseudo_det += std::log(e);
    }
  }
  return out;
}

void require_no_islands(const Adjacency& adjacency) {
  const auto isl = adjacency.islands();
  if (!isl.empty()) {
    throw IslandError("region " + adjacency.ids()[static_cast<std::size_t>(isl.front())] +
                      " has no neighbours; intrinsic CAR needs every region connected");
  }
}

GmrfBlock full_rank_block(SparseSym structure, std::string label, std::string precision_name) {
  GmrfBlock b;
  b.label = std::move(label);
  b.precision_name = std::move(precision_name);
  b.log_pseudo_determinant = cholesky(structure).log_determinant();
  b.structure = std::move(structure);
  return b;
}

}  // namespace

GmrfBlock generic0(SparseSym structure, std::string label, std::string precision_name) {
  const Vector diag = structure.diagonal_values();
  for (int i = 0; i < diag.size(); ++i) {
    if (diag[i] < 0.0) throw IndefiniteStructure("structure matrix has a negative diagonal entry");
  }
  try {
    return full_rank_block(std::move(structure), std::move(label), std::move(precision_name));
  } catch (const NotPositiveDefinite&) {
    // fall through to the spectral check for semidefinite input
  }
  const Spectrum spec = analyse_spectrum(structure);
  GmrfBlock b;
  b.label = std::move(label);
  b.precision_name = std::move(precision_name);
  b.rank_deficiency = spec.zero_count;
  b.log_pseudo_determinant = spec.log_pseudo_det;
  b.structure = std::move(structure);
  return b;
}

GmrfBlock iid(int n, std::string label, std::string precision_name) {
  GmrfBlock b;
  b.label = std::move(label);
  b.precision_name = std::move(precision_name);
  b.structure = SparseSym::identity(n);
  return b;
}

SparseSym besag_structure(const Adjacency& adjacency) {
  std::vector<Entry> entries;
  for (int i = 0; i < adjacency.size(); ++i) {
    entries.push_back({i, i, static_cast<double>(adjacency.degree(i))});
    for (int j : adjacency.neighbors(i)) {
      if (j < i) entries.push_back({i, j, -1.0});
    }
  }
  return SparseSym::from_entries(adjacency.size(), entries);
}

GmrfBlock besag(const Adjacency& adjacency, std::string label, std::string precision_name) {
  require_no_islands(adjacency);
  GmrfBlock b;
  b.label = std::move(label);
  b.precision_name = std::move(precision_name);
  b.structure = besag_structure(adjacency);
  const Spectrum spec = analyse_spectrum(b.structure);
  b.rank_deficiency = spec.zero_count;
  b.log_pseudo_determinant = spec.log_pseudo_det;

  const auto comp = adjacency.components();
  const int ncomp = adjacency.component_count();
  b.constraints.resize(static_cast<std::size_t>(ncomp));
  for (int i = 0; i < adjacency.size(); ++i) {
    b.constraints[static_cast<std::size_t>(comp[static_cast<std::size_t>(i)])].coefficients.emplace_back(i, 1.0);
  }
  if (b.rank_deficiency != ncomp) {
    std::ostringstream msg;
    msg << "besag structure has " << b.rank_deficiency << " null directions for " << ncomp << " components";
    throw IndefiniteStructure(msg.str());
  }
  return b;
}

GmrfBlock proper_besag(const Adjacency& adjacency, double d, std::string label, std::string precision_name) {
  if (!(d > 0.0)) throw NonPositiveD("proper besag needs d > 0");
  return full_rank_block(besag_structure(adjacency).plus_diagonal(d), std::move(label), std::move(precision_name));
}

GmrfBlock leroux(const Adjacency& adjacency, double beta, std::string label, std::string precision_name) {
  if (!(beta > 0.0 && beta < 1.0)) throw OutOfRange("leroux mixing parameter must lie in (0, 1)");
  const SparseSym t = besag_structure(adjacency).combined(beta, SparseSym::identity(adjacency.size()), 1.0 - beta);
  return full_rank_block(t, std::move(label), std::move(precision_name));
}

std::pair<GmrfBlock, GmrfBlock> bym(const Adjacency& adjacency, std::string label) {
  GmrfBlock spatial = besag(adjacency, label + ".spatial", label + ".tau_spatial");
  GmrfBlock unstructured = iid(adjacency.size(), label + ".iid", label + ".tau_iid");
  return {std::move(spatial), std::move(unstructured)};
}

double gmrf_log_density(const GmrfBlock& block, double tau, const Vector& x) {
  if (x.size() != block.size()) throw DimensionMismatch("vector length does not match block " + block.label);
  const double r = block.rank();
  const double quad = x.dot(block.structure.multiply(x));
  return 0.5 * r * std::log(tau) + 0.5 * block.log_pseudo_determinant -
         0.5 * r * std::log(2.0 * std::numbers::pi) - 0.5 * tau * quad;
}

}  // namespace inlamh
