#pragma once

#include "inlamh/bma.hpp"
#include "inlamh/graphs.hpp"
#include "inlamh/mh.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace inlamh {

// O[i][d] ~ Poisson(E[i][d] exp(alpha_d + delta_d v_i + s^d_i)), v and each
// s^d intrinsic CAR with sum-to-zero constraints; v has precision tau_v, the
// s^d share tau_s.
struct DismapSpec {
  Adjacency adjacency;
  DenseMatrix observed;  // n x D
  DenseMatrix expected;  // n x D
  std::vector<std::string> diseases;
  HyperPrior delta_prior = HyperPrior::log_normal(0.0, 0.1);  // mean and precision of log delta
  HyperPrior tau_v_prior = HyperPrior::gamma(1.0, 0.01);
  HyperPrior tau_s_prior = HyperPrior::gamma(1.0, 0.01);
  double alpha_precision = kFixedEffectPrecision;

  int n() const { return adjacency.size(); }
  int disease_count() const { return static_cast<int>(observed.cols()); }
  void validate() const;  // throws DimensionMismatch
  // Latent layout [alpha (D), v (n), s^1 (n), ..., s^D (n)].
  int alpha_index(int d) const { return d; }
  int v_index(int i) const { return disease_count() + i; }
  int s_index(int d, int i) const { return disease_count() + n() * (1 + d) + i; }
  int latent_dim() const { return disease_count() + n() * (1 + disease_count()); }
};

// Expected counts scaled per disease so their total equals the observed total.
DenseMatrix rescale_expected(const DenseMatrix& observed, const DenseMatrix& expected);

// Long table with columns id, disease, observed, expected. Regions must
// match the adjacency ids; diseases keep first-appearance order.
DismapSpec load_dismap(const std::filesystem::path& gal, const std::filesystem::path& csv, bool rescale = true);

class DismapFamily : public ConditionedFamily {
 public:
  explicit DismapFamily(DismapSpec spec);

  std::vector<std::string> names() const override;
  bool in_support(std::span<const double> theta) const override;
  double log_prior(std::span<const double> theta) const override;
  LatentModel build(std::span<const double> theta) const override;
  // Fits the equivalent model with loadings delta / c and tau_v / c^2, c the
  // root mean square of delta, and reports v and tau_v on the original scale.
  Evaluation evaluate(std::span<const double> theta, const LaplaceOptions& options, bool track) const override;

  const DismapSpec& spec() const { return spec_; }

 private:
  LatentModel build(std::span<const double> theta, const HyperPrior& tau_v_prior) const;

  DismapSpec spec_;
};

ChainConfig default_dismap_chain(int diseases);

struct DismapFit {
  Chain chain;
  std::vector<MarginalGrid> alpha;  // per disease
  MarginalGrid tau_v;
  MarginalGrid tau_s;
  Vector shared_mean;  // per area
  Vector shared_sd;
  DenseMatrix delta_correlation;
};

// Tracks alpha and v plus any latent indices already in config.laplace.track.
DismapFit fit_dismap(const DismapSpec& spec, ChainConfig config, const ChainProgress& progress = {});

struct DismapTruth {
  std::vector<double> delta{1.0, 1.3, 0.7};
  std::vector<double> alpha{0.0, 0.0, 0.0};
  double tau_v = 1.0;
  double tau_s = 4.0;
  double expected = 50.0;  // per area and disease
};

struct SyntheticDismap {
  DismapSpec spec;
  Vector v;
  DenseMatrix s;  // n x D
};

// Fields are drawn from the constrained intrinsic CAR (pseudo-inverse
// covariance, then projected onto the sum-to-zero set). The returned expected
// counts are rescaled to the observed totals.
SyntheticDismap generate_synthetic(const Adjacency& adjacency, const DismapTruth& truth, std::uint64_t seed);

// Draw from N(0, (tau T)^+) restricted to sum-to-zero per connected component.
Vector sample_icar(const Adjacency& adjacency, double tau, std::uint64_t seed);

}  // namespace inlamh
