#include "inlamh/marginal.hpp"

#include "inlamh/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace inlamh {

double trapezoid(const std::vector<double>& x, const std::vector<double>& y) {
  double s = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) s += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
  return s;
}

MarginalGrid::MarginalGrid(std::vector<double> values, std::vector<double> densities)
    : values_(std::move(values)), densities_(std::move(densities)) {
  if (values_.size() != densities_.size()) throw DimensionMismatch("marginal grid values and densities differ in length");
  if (values_.size() < 2) throw DimensionMismatch("marginal grid needs at least two points");
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) throw OutOfRange("marginal grid value is not finite");
    if (i > 0 && !(values_[i] > values_[i - 1])) throw OutOfRange("marginal grid values must be strictly increasing");
    if (!(densities_[i] >= 0.0) || !std::isfinite(densities_[i])) {
      std::ostringstream msg;
      msg << "invalid density " << densities_[i] << " at value " << values_[i];
      throw OutOfRange(msg.str());
    }
  }
  const double mass = trapezoid(values_, densities_);
  if (!(mass > 0.0) || !std::isfinite(mass)) throw Unnormalized("marginal grid has no mass");
  for (double& d : densities_) d /= mass;
}

double MarginalGrid::density_at(double x) const {
  if (values_.empty() || x < values_.front() || x > values_.back()) return 0.0;
  auto it = std::upper_bound(values_.begin(), values_.end(), x);
  if (it == values_.end()) return densities_.back();
  const std::size_t k = static_cast<std::size_t>(it - values_.begin());
  const double t = (x - values_[k - 1]) / (values_[k] - values_[k - 1]);
  return (1.0 - t) * densities_[k - 1] + t * densities_[k];
}

double MarginalGrid::integral() const { return trapezoid(values_, densities_); }

MarginalGrid gaussian_grid(double mean, double sd, int points, double span) {
  if (!(sd > 0.0)) throw ZeroScale("gaussian grid needs a positive standard deviation");
  std::vector<double> v(static_cast<std::size_t>(points));
  std::vector<double> d(v.size());
  for (int i = 0; i < points; ++i) {
    const double z = -span + 2.0 * span * i / (points - 1);
    v[static_cast<std::size_t>(i)] = mean + z * sd;
    d[static_cast<std::size_t>(i)] = std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
  }
  return MarginalGrid(std::move(v), std::move(d));
}

}  // namespace inlamh
