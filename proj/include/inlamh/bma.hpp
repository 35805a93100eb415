#pragma once

#include "inlamh/marginal.hpp"

#include <span>

namespace inlamh {

inline constexpr int kMixturePoints = 150;

// Weighted average of densities on a common grid spanning the union of the
// inputs. Equal weights when `weights` is empty.
MarginalGrid mix_marginals(std::span<const MarginalGrid> grids, std::span<const double> weights = {},
                           int points = kMixturePoints);

struct MarginalSummary {
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q50 = 0.0;
  double q975 = 0.0;
};

// Throws Unnormalized when the grid does not integrate to 1 within 1e-6.
MarginalSummary summarize(const MarginalGrid& grid);
// Inverse of the piecewise-quadratic CDF of the interpolated density.
double grid_quantile(const MarginalGrid& grid, double p);

// Density of a X + b.
MarginalGrid transform_grid(const MarginalGrid& grid, double a, double b = 0.0);
// Density of 1 / X for X supported on the positive axis.
MarginalGrid reciprocal_grid(const MarginalGrid& grid);
// Symmetric triangular density centred at `location`.
MarginalGrid spike_grid(double location, double half_width, int points = kMinMarginalPoints);

// 0.5 * integral |f - g| on a common grid over the union span.
double total_variation(const MarginalGrid& f, const MarginalGrid& g, int points = 2000);

}  // namespace inlamh
