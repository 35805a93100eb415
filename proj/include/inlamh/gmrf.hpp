#pragma once

#include "inlamh/graphs.hpp"
#include "inlamh/spmat.hpp"

#include <string>
#include <utility>
#include <vector>

namespace inlamh {

// sum_k coefficients[k].second * x[coefficients[k].first] == value, with
// indices local to the owning block.
struct LinearConstraint {
  std::vector<std::pair<int, double>> coefficients;
  double value = 0.0;
};

// Zero-mean Gaussian block with precision tau * structure, where tau is the
// hyperparameter named by precision_name.
//
// Rank-deficient blocks use the log-density
//   (n - k)/2 log tau + 1/2 log det*(T) - (n - k)/2 log(2 pi) - tau/2 x'Tx,
// with det* the product of the non-zero eigenvalues; it is a proper density
// on the subspace cut out by the attached constraints.
struct GmrfBlock {
  std::string label;
  SparseSym structure;
  int rank_deficiency = 0;
  std::string precision_name = "tau";
  std::vector<LinearConstraint> constraints;
  double log_pseudo_determinant = 0.0;  // log det*(T)

  int size() const { return structure.size(); }
  int rank() const { return size() - rank_deficiency; }
  bool intrinsic() const { return rank_deficiency > 0; }
};

// Eigenvalues with |lambda| below this fraction of max(1, lambda_max) count
// as zero when measuring rank deficiency.
inline constexpr double kNullEigenTolerance = 1e-10;

// Fixed structure matrix. Positive semidefinite input is accepted and flagged
// through rank_deficiency; attaching constraints is then up to the caller.
GmrfBlock generic0(SparseSym structure, std::string label = "generic0", std::string precision_name = "tau");
GmrfBlock iid(int n, std::string label = "iid", std::string precision_name = "tau");

// Intrinsic CAR: diagonal n_i, -1 between neighbours, one sum-to-zero
// constraint per connected component. Throws IslandError for isolated regions.
GmrfBlock besag(const Adjacency& adjacency, std::string label = "besag", std::string precision_name = "tau");
SparseSym besag_structure(const Adjacency& adjacency);

// besag structure + d I.
GmrfBlock proper_besag(const Adjacency& adjacency, double d, std::string label = "properbesag",
                       std::string precision_name = "tau");

// (1 - beta) I + beta Q with Q the besag structure, beta in (0, 1).
GmrfBlock leroux(const Adjacency& adjacency, double beta, std::string label = "leroux",
                 std::string precision_name = "tau");

// Intrinsic CAR plus iid effects on the same regions, each with its own
// precision. The pair contributes 2n latent entries.
std::pair<GmrfBlock, GmrfBlock> bym(const Adjacency& adjacency, std::string label = "bym");

// Log-density of x under block b with precision tau, using the convention
// documented on GmrfBlock.
double gmrf_log_density(const GmrfBlock& block, double tau, const Vector& x);

}  // namespace inlamh
