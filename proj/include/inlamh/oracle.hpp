#pragma once

#include "inlamh/dismap.hpp"
#include "inlamh/econ.hpp"
#include "inlamh/lgm.hpp"
#include "inlamh/marginal.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace inlamh {

// Raw draws, one row per stored iteration.
struct SampleTable {
  std::vector<std::string> names;
  DenseMatrix samples;

  int rows() const { return static_cast<int>(samples.rows()); }
  int index(const std::string& name) const;  // throws NameMismatch
  std::vector<double> column(const std::string& name, int skip = 0) const;
  void write_csv(const std::filesystem::path& path) const;
};

struct OracleOptions {
  int thin = 1;
  // Random-walk scale for rho and lambda; latent and dismap scales are set
  // from the data.
  double autoregressive_sd = 0.15;
  double log_scale_sd = 0.1;  // delta, tau_v, tau_s and the scaling move
  bool store_fields = true;   // dismap: include v and s columns
};

// Gibbs for beta and the precision, random-walk Metropolis for rho and
// lambda using the exact likelihood with both Jacobian terms. Columns: rho,
// lambda, the latent names, precision.
SampleTable oracle_manski(const ManskiSpec& spec, int iterations, std::uint64_t seed, const OracleOptions& options = {});

// Single-site random-walk Metropolis on alpha, v and s, log-scale Metropolis
// on delta and the precisions, plus a move along the scaling direction
// (delta c, v / c, tau_v c^2). Fields are re-centred after every sweep with
// alpha absorbing the shift. Columns: alpha.<d>, delta<d>, tau_v, tau_s, then
// v[i] and s.<d>[i] when stored.
SampleTable oracle_dismap(const DismapSpec& spec, int iterations, std::uint64_t seed, const OracleOptions& options = {});

struct QuadratureResult {
  double log_marginal_likelihood = 0.0;
  std::vector<double> latent_means;
  std::vector<MarginalGrid> latent_marginals;
  std::vector<MarginalGrid> hyper_marginals;  // natural scale
  std::vector<double> hyper_means;            // natural scale
};

inline constexpr int kQuadraturePoints = 401;
inline constexpr double kQuadratureAgreement = 1e-4;

// Tensor trapezoid integration of the exact unnormalized posterior over the
// latent vector (at most 2 entries) and internal free hypers (at most 1),
// with a Richardson step from the half-resolution grid. Throws
// GridTooCoarse when the two resolutions disagree by more than 1e-4 in log
// evidence.
QuadratureResult quadrature_oracle(const LatentModel& model, int points = kQuadraturePoints);

// Histogram density on equal bins as a grid through the bin centres. bins = 0
// picks the Freedman-Diaconis count, clamped to [10, 200].
MarginalGrid histogram_grid(std::span<const double> samples, int bins = 0);

// Total variation between a grid density and a sample histogram.
double total_variation(const MarginalGrid& grid, std::span<const double> samples, int bins = 0);

}  // namespace inlamh
