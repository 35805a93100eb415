#pragma once

#include "inlamh/lgm.hpp"
#include "inlamh/marginal.hpp"
#include "inlamh/spmat.hpp"

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace inlamh {

struct LaplaceOptions {
  int workers = 1;
  // Hyperparameter grid, in units of the posterior sd in internal coordinates.
  double grid_step = 0.75;
  double grid_drop = 6.0;  // log-density units below the mode
  int grid_max_steps = 10;
  double mode_tolerance = 1e-6;
  double hessian_step = 0.02;
  int newton_max_iterations = 50;
  double newton_tolerance = 1e-8;
  int marginal_points = kMarginalPoints;
  // Latent indices whose marginals are built; covariance among them per grid
  // point is kept when track_covariance is set.
  std::vector<int> track;
  bool track_covariance = false;
  // Mode-search start in internal coordinates (prior medians when empty).
  std::vector<double> start;
};

// Jitter added, scaled by the block precision, to the diagonal of intrinsic
// blocks inside factorizations.
inline constexpr double kIntrinsicJitter = 1e-8;
inline constexpr int kMaxFreeHypers = 3;
// Initial Nelder-Mead simplex size when a mode-search start is supplied.
inline constexpr double kWarmSimplexStep = 0.25;

// Gaussian approximation to pi(x | theta, y) at its mode, restricted to the
// constraint set C x = e.
struct GaussianApprox {
  std::vector<double> hypers;  // natural scale, all hypers
  Vector mode;
  SparseSym precision;  // Q(theta) - A' diag(curvature) A at the mode
  CholFactor factor;    // of precision (plus intrinsic jitter)
  DenseMatrix constraint_matrix;
  Vector constraint_values;
  DenseMatrix kriging;  // factor^{-1} C'
  double objective = 0.0;  // -x'Qx/2 + log-likelihood at the mode
  int iterations = 0;

  // Variances under the constrained approximation.
  Vector marginal_variances(std::span<const int> indices) const;
  DenseMatrix covariance(std::span<const int> indices) const;
};

GaussianApprox gaussian_approx(const LatentModel& model, std::span<const double> hypers,
                               const LaplaceOptions& options = {}, const Vector* start = nullptr);

// log pi(theta) + log pi(x* | theta) + log pi(y | x*, theta) - log pi_G(x* | theta, y).
double log_joint_at_mode(const LatentModel& model, const GaussianApprox& approx);
double log_joint_at_mode(const LatentModel& model, std::span<const double> hypers, const LaplaceOptions& options = {});

struct GridPoint {
  std::vector<int> index;       // lattice position
  std::vector<double> z;        // internal coordinates of the free hypers
  std::vector<double> hypers;   // natural scale, all hypers
  double log_joint = 0.0;       // at the natural-scale hypers
  double log_density = 0.0;     // log_joint + log Jacobian of the transform
  double weight = 0.0;
  Vector means;                 // tracked latent entries
  Vector variances;
  DenseMatrix covariance;       // empty unless tracked
};

class FitResult {
 public:
  double log_marginal_likelihood = 0.0;
  std::vector<int> free_hypers;          // model hyper indices
  std::vector<std::string> hyper_names;  // of the free hypers
  std::vector<double> mode_z;
  std::vector<double> grid_scale;        // lattice spacing per free hyper
  std::vector<GridPoint> grid;
  std::vector<int> tracked;
  std::vector<MarginalGrid> hyper_marginals;   // per free hyper, natural scale
  std::vector<MarginalGrid> latent_marginals;  // per tracked index
  Vector central_mode;
  bool has_covariance = false;

  bool is_tracked(int index) const;
  int tracked_position(int index) const;  // throws IndexNotTracked
  const MarginalGrid& hyper_marginal(const std::string& name) const;
  // Exact moments of the Gaussian mixture.
  double latent_mean(int index) const;
  double latent_sd(int index) const;
};

FitResult explore_hypers(const LatentModel& model, const LaplaceOptions& options = {});

MarginalGrid latent_marginal(const FitResult& fit, int index);

// Marginal of shift + sum_k coef_k x_{index_k}; needs covariance for more than
// one term.
MarginalGrid linear_combination_marginal(const FitResult& fit, std::span<const std::pair<int, double>> terms,
                                         double shift = 0.0, int points = kMarginalPoints);

// Weighted Gaussian mixture on `points` points spanning mean +/- 5 sd.
MarginalGrid gaussian_mixture_grid(std::span<const double> weights, std::span<const double> means,
                                   std::span<const double> sds, int points = kMarginalPoints);

}  // namespace inlamh
