#include "inlamh/bma.hpp"

#include "inlamh/errors.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace inlamh {

namespace {

std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = a + (b - a) * i / (n - 1);
  return out;
}

}  // namespace

MarginalGrid mix_marginals(std::span<const MarginalGrid> grids, std::span<const double> weights, int points) {
  if (grids.empty()) throw EmptyList("nothing to mix");
  if (!weights.empty() && weights.size() != grids.size()) throw DimensionMismatch("one weight per grid is required");
  double wsum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw OutOfRange("mixture weights must be non-negative");
    wsum += w;
  }
  if (!weights.empty() && !(wsum > 0.0)) throw OutOfRange("mixture weights sum to zero");
  double lo = grids.front().lower();
  double hi = grids.front().upper();
  for (const auto& g : grids) {
    lo = std::min(lo, g.lower());
    hi = std::max(hi, g.upper());
  }
  const auto xs = linspace(lo, hi, points);
  std::vector<double> ds(xs.size(), 0.0);
  for (std::size_t k = 0; k < grids.size(); ++k) {
    const double w = weights.empty() ? 1.0 / static_cast<double>(grids.size()) : weights[k] / wsum;
    if (w == 0.0) continue;
    for (std::size_t i = 0; i < xs.size(); ++i) ds[i] += w * grids[k].density_at(xs[i]);
  }
  return MarginalGrid(xs, std::move(ds));
}

double grid_quantile(const MarginalGrid& grid, double p) {
  const auto& x = grid.values();
  const auto& d = grid.densities();
  const double total = grid.integral();
  const double target = p * total;
  double cum = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    const double h = x[i] - x[i - 1];
    const double piece = 0.5 * h * (d[i] + d[i - 1]);
    if (cum + piece >= target && piece > 0.0) {
      // Solve cum + h (d0 t + (d1 - d0) t^2 / 2) = target for t in [0, 1].
      const double r = (target - cum) / h;
      const double a = 0.5 * (d[i] - d[i - 1]);
      const double b = d[i - 1];
      double t;
      if (std::abs(a) < 1e-14 * std::max(1.0, b)) {
        t = b > 0.0 ? r / b : 0.5;
      } else {
        const double disc = std::max(0.0, b * b + 4.0 * a * r);
        t = 2.0 * r / (b + std::sqrt(disc));
      }
      return x[i - 1] + std::clamp(t, 0.0, 1.0) * h;
    }
    cum += piece;
  }
  return x.back();
}

MarginalSummary summarize(const MarginalGrid& grid) {
  if (grid.empty()) throw EmptyList("empty marginal grid");
  const double mass = grid.integral();
  if (std::abs(mass - 1.0) > 1e-6) throw Unnormalized("marginal grid integrates to " + std::to_string(mass));
  const auto& x = grid.values();
  const auto& d = grid.densities();
  std::vector<double> xd(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) xd[i] = x[i] * d[i];
  MarginalSummary s;
  s.mean = trapezoid(x, xd) / mass;
  for (std::size_t i = 0; i < x.size(); ++i) xd[i] = (x[i] - s.mean) * (x[i] - s.mean) * d[i];
  s.sd = std::sqrt(std::max(0.0, trapezoid(x, xd) / mass));
  s.q025 = grid_quantile(grid, 0.025);
  s.q50 = grid_quantile(grid, 0.5);
  s.q975 = grid_quantile(grid, 0.975);
  return s;
}

MarginalGrid transform_grid(const MarginalGrid& grid, double a, double b) {
  if (a == 0.0 || !std::isfinite(a)) throw ZeroScale("affine transform needs a non-zero finite scale");
  std::vector<double> xs(grid.size());
  std::vector<double> ds(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    xs[i] = a * grid.values()[i] + b;
    ds[i] = grid.densities()[i] / std::abs(a);
  }
  if (a < 0.0) {
    std::reverse(xs.begin(), xs.end());
    std::reverse(ds.begin(), ds.end());
  }
  return MarginalGrid(std::move(xs), std::move(ds));
}

MarginalGrid reciprocal_grid(const MarginalGrid& grid) {
  std::vector<double> xs;
  std::vector<double> ds;
  for (std::size_t i = grid.size(); i-- > 0;) {
    const double v = grid.values()[i];
    if (!(v > 0.0)) continue;
    xs.push_back(1.0 / v);
    ds.push_back(grid.densities()[i] * v * v);
  }
  if (xs.size() < 2) throw OutOfRange("reciprocal transform needs a positive support");
  return MarginalGrid(std::move(xs), std::move(ds));
}

MarginalGrid spike_grid(double location, double half_width, int points) {
  if (!(half_width > 0.0)) throw ZeroScale("spike needs a positive half-width");
  auto xs = linspace(location - half_width, location + half_width, points);
  std::vector<double> ds(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) ds[i] = std::max(0.0, 1.0 - std::abs(xs[i] - location) / half_width);
  return MarginalGrid(std::move(xs), std::move(ds));
}

double total_variation(const MarginalGrid& f, const MarginalGrid& g, int points) {
  const auto xs = linspace(std::min(f.lower(), g.lower()), std::max(f.upper(), g.upper()), points);
  std::vector<double> diff(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) diff[i] = std::abs(f.density_at(xs[i]) - g.density_at(xs[i]));
  return 0.5 * trapezoid(xs, diff);
}

}  // namespace inlamh
