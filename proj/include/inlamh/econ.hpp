#pragma once

#include "inlamh/bma.hpp"
#include "inlamh/graphs.hpp"
#include "inlamh/mh.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace inlamh {

// y = rho W y + X beta + W X gamma + u,  u = lambda W u + e,  e ~ N(0, sigma^2 I).
struct ManskiSpec {
  Vector y;
  DenseMatrix x;  // first column is the intercept when present
  std::vector<std::string> covariates;  // one name per column of x
  WeightsMatrix w;
  bool lagged = false;
  double beta_precision = kFixedEffectPrecision;
  HyperPrior precision_prior = default_precision_prior();

  void validate() const;  // throws DimensionMismatch
  int n() const { return static_cast<int>(y.size()); }
  // Latent entries: one per covariate, then lag.<name> for each
  // non-intercept covariate when lagged.
  std::vector<std::string> latent_names() const;
};

inline constexpr std::string_view kIntercept = "(Intercept)";

// Reads the adjacency and a table with one row per region in GAL order; the
// id column, when present, must match the GAL ids. W is row-standardized.
ManskiSpec load_manski(const std::filesystem::path& gal, const std::filesystem::path& csv, const std::string& response,
                       const std::vector<std::string>& covariates, bool intercept = true,
                       const std::string& id_column = "id");

// Conditional model over theta_c = (rho, lambda) with uniform prior on the
// support square.
class ManskiFamily : public ConditionedFamily {
 public:
  explicit ManskiFamily(ManskiSpec spec);

  std::vector<std::string> names() const override { return {"rho", "lambda"}; }
  bool in_support(std::span<const double> theta) const override;
  double log_prior(std::span<const double> theta) const override;
  LatentModel build(std::span<const double> theta) const override;
  // log|I - lambda W| + log|I - rho W|.
  double log_correction(std::span<const double> theta) const override;

  const ManskiSpec& spec() const { return spec_; }
  // Transformed response and design.
  Vector transformed_response(double rho, double lambda) const;
  DenseMatrix transformed_design(double lambda) const;

 private:
  ManskiSpec spec_;
};

ChainConfig default_manski_chain();

struct ManskiFit {
  Chain chain;
  std::vector<std::string> coefficients;   // latent names
  std::vector<MarginalGrid> coefficient_marginals;
  MarginalGrid precision;
  MarginalGrid variance;  // sigma^2
};

ManskiFit fit_manski(const ManskiSpec& spec, ChainConfig config, const ChainProgress& progress = {});

struct ImpactMultipliers {
  double total = 0.0;
  double direct = 0.0;
  double indirect = 0.0;
  double lag_direct = 0.0;  // n^{-1} tr((I - rho W)^{-1} W)
  double lag_total = 0.0;
};

// Dense LU at n <= 500; beyond that interpolated from a 200-point rho grid.
class ImpactCalculator {
 public:
  explicit ImpactCalculator(const WeightsMatrix& w);
  ImpactMultipliers operator()(double rho) const;

 private:
  ImpactMultipliers exact(double rho) const;
  DenseMatrix w_;
  double lower_;
  double upper_;
  std::vector<double> grid_;
  std::vector<ImpactMultipliers> cached_;
};

inline constexpr int kImpactDenseMax = 500;

struct ImpactSet {
  std::string covariate;
  MarginalGrid direct;
  MarginalGrid indirect;
  MarginalGrid total;
};

ImpactSet impacts(const ManskiFit& fit, const ManskiSpec& spec, const std::string& covariate);

}  // namespace inlamh
