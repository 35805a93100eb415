#pragma once

#include "inlamh/gmrf.hpp"
#include "inlamh/spmat.hpp"

#include <Eigen/SparseCore>

#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace inlamh {

using RowSparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

enum class Family { gaussian, poisson };

Family parse_family(std::string_view name);  // throws UnsupportedFamily
std::string_view family_name(Family family);

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
inline bool is_missing(double y) { return y != y; }

// Prior of one hyperparameter, together with the unconstrained internal
// coordinate the hyperparameter search works in: log for positive supports,
// scaled logit for intervals, identity on the real line.
class HyperPrior {
 public:
  enum class Kind { gamma, log_normal, uniform, normal };
  enum class Support { positive, interval, real };

  static HyperPrior gamma(double shape, double rate);
  static HyperPrior log_normal(double mean, double precision);
  static HyperPrior uniform(double lower, double upper);
  static HyperPrior normal(double mean, double precision);

  Kind kind() const { return kind_; }
  Support support() const;
  double first() const { return a_; }
  double second() const { return b_; }

  bool in_support(double value) const;
  double log_density(double value) const;  // -inf outside the support
  double median() const;
  std::pair<double, double> support_bounds() const;
  // Prior of value / factor, factor > 0.
  HyperPrior scaled(double factor) const;

  double to_internal(double value) const;
  double from_internal(double z) const;
  double log_jacobian(double z) const;  // log |d value / d z|

 private:
  HyperPrior(Kind kind, double a, double b) : kind_(kind), a_(a), b_(b) {}
  Kind kind_;
  double a_;
  double b_;
};

struct Hyper {
  std::string name;
  HyperPrior prior = HyperPrior::gamma(1.0, 5e-5);
  std::optional<double> fixed;  // engaged: held at this value
};

// Gamma(1, 5e-5) on a precision.
HyperPrior default_precision_prior();
inline constexpr double kFixedEffectPrecision = 0.001;
inline constexpr std::string_view kObservationPrecision = "precision";

struct LatentComponent {
  GmrfBlock block;
  int offset = 0;  // first latent index of the block
  int hyper = -1;  // index into LatentModel::hypers()
};

// Per-observation log-likelihood with derivatives in the linear predictor.
struct LikelihoodEval {
  double value = 0.0;
  Vector eta;
  Vector gradient;   // d/d eta_i
  Vector curvature;  // d^2/d eta_i^2
};

// Latent Gaussian model: y_i | eta_i independent, eta = A x (+ offset),
// x ~ GMRF(blocks), hyperparameters with independent priors.
class LatentModel {
 public:
  Family family() const { return family_; }
  const Vector& y() const { return y_; }
  const Vector& offset() const { return offset_; }
  const RowSparseMatrix& design() const { return design_; }
  const std::vector<LatentComponent>& components() const { return components_; }
  const std::vector<Hyper>& hypers() const { return hypers_; }
  const std::vector<std::string>& latent_names() const { return latent_names_; }
  int observation_precision_hyper() const { return obs_hyper_; }

  int latent_dim() const { return static_cast<int>(design_.cols()); }
  int observation_count() const { return static_cast<int>(design_.rows()); }
  int observed_count() const;
  int hyper_count() const { return static_cast<int>(hypers_.size()); }
  std::vector<int> free_hypers() const;
  int free_hyper_count() const { return static_cast<int>(free_hypers().size()); }
  int latent_index(std::string_view name) const;  // -1 when absent
  int hyper_index(std::string_view name) const;   // -1 when absent

  // Global equality constraints C x = e gathered from the blocks.
  const DenseMatrix& constraint_matrix() const { return constraint_matrix_; }
  const Vector& constraint_values() const { return constraint_values_; }
  int constraint_count() const { return static_cast<int>(constraint_matrix_.rows()); }

  // Full hyper vector (natural scale) from values of the free ones, in
  // free_hypers() order.
  std::vector<double> expand_hypers(std::span<const double> free_values) const;
  double log_hyper_prior(std::span<const double> hyper_values) const;  // free hypers only
  double block_precision(const LatentComponent& c, std::span<const double> hyper_values) const;

  // Q(theta) without jitter.
  SparseSym precision_matrix(std::span<const double> hyper_values) const;
  double log_latent_prior(const Vector& x, std::span<const double> hyper_values) const;

 private:
  friend class ModelBuilder;
  Family family_ = Family::gaussian;
  Vector y_;
  Vector offset_;
  RowSparseMatrix design_;
  std::vector<LatentComponent> components_;
  std::vector<Hyper> hypers_;
  std::vector<std::string> latent_names_;
  int obs_hyper_ = -1;
  DenseMatrix constraint_matrix_;
  Vector constraint_values_;
};

// Assembles and validates a LatentModel. Blocks that share a precision name
// share one hyperparameter (replicated effects). A Gaussian model without an
// explicit observation precision gets default_precision_prior().
class ModelBuilder {
 public:
  ModelBuilder(Family family, Vector y);

  ModelBuilder& offset(Vector offset);
  // Independent Normal(0, 1/precision) fixed effects; returns first index.
  int add_fixed_effects(const std::vector<std::string>& names, double precision = kFixedEffectPrecision);
  // Returns the first latent index of the block. Entry names default to
  // "label[i]".
  int add_block(GmrfBlock block, std::vector<std::string> names = {});
  ModelBuilder& hyper(const std::string& name, HyperPrior prior);
  ModelBuilder& fixed_hyper(const std::string& name, double value);
  ModelBuilder& design_entry(int observation, int latent, double value);
  ModelBuilder& design(const RowSparseMatrix& a);

  int latent_dim() const { return next_offset_; }
  LatentModel build() const;

 private:
  Family family_;
  Vector y_;
  Vector offset_;
  std::vector<GmrfBlock> blocks_;
  std::vector<int> block_offsets_;
  std::vector<std::string> names_;
  std::map<std::string, Hyper> hyper_specs_;
  std::vector<Eigen::Triplet<double>> design_;
  int next_offset_ = 0;
  int fixed_groups_ = 0;
};

// Sum over observed i of log pi(y_i | eta_i, theta) with eta = A x.
LikelihoodEval log_likelihood(const LatentModel& model, const Vector& x, std::span<const double> hyper_values);
// Same from a precomputed linear predictor (offset not included in eta).
LikelihoodEval log_likelihood_eta(const LatentModel& model, Vector eta, std::span<const double> hyper_values);

}  // namespace inlamh
