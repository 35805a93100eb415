#pragma once

#include <string>
#include <vector>

namespace inlamh {

// Univariate density on ordered points. Values are strictly increasing,
// densities non-negative, and the trapezoid integral is 1.
class MarginalGrid {
 public:
  MarginalGrid() = default;
  // Validates and normalizes. Throws DimensionMismatch for fewer than two
  // points or mismatched lengths, OutOfRange for non-increasing values or
  // negative densities, Unnormalized for zero or non-finite mass.
  MarginalGrid(std::vector<double> values, std::vector<double> densities);

  const std::vector<double>& values() const { return values_; }
  const std::vector<double>& densities() const { return densities_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  double lower() const { return values_.front(); }
  double upper() const { return values_.back(); }

  // Linear interpolation, 0 outside [lower, upper].
  double density_at(double x) const;
  double integral() const;

 private:
  std::vector<double> values_;
  std::vector<double> densities_;
};

inline constexpr int kMarginalPoints = 75;
inline constexpr int kMinMarginalPoints = 33;

double trapezoid(const std::vector<double>& x, const std::vector<double>& y);

// Normal density evaluated on `points` points spanning mean +/- span * sd.
MarginalGrid gaussian_grid(double mean, double sd, int points = kMarginalPoints, double span = 5.0);

}  // namespace inlamh
