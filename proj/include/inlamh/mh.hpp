#pragma once

#include "inlamh/errors.hpp"
#include "inlamh/laplace.hpp"
#include "inlamh/lgm.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace inlamh {

// Conditional fit at one value of the conditioning parameters.
struct Evaluation {
  double log_ml = 0.0;  // conditional log marginal likelihood incl. correction
  std::shared_ptr<const FitResult> fit;  // may be null for analytic families
};

// Map from conditioning parameters theta_c to a conditional latent model.
class ConditionedFamily {
 public:
  virtual ~ConditionedFamily() = default;

  virtual std::vector<std::string> names() const = 0;
  int dimension() const { return static_cast<int>(names().size()); }
  virtual bool in_support(std::span<const double> theta) const = 0;
  virtual double log_prior(std::span<const double> theta) const = 0;

  virtual LatentModel build(std::span<const double> theta) const;
  // Additive correction to the conditional log marginal likelihood.
  virtual double log_correction(std::span<const double> /*theta*/) const { return 0.0; }

  // Builds and fits the conditional model. `track` selects whether the
  // latent indices in options.track are carried.
  virtual Evaluation evaluate(std::span<const double> theta, const LaplaceOptions& options, bool track) const;
};

// Raised when the inner fit fails inside a chain; carries the state.
class FitFailure : public NumericalError {
 public:
  FitFailure(const std::string& what, std::vector<double> theta) : NumericalError(what), theta_(std::move(theta)) {}
  const std::vector<double>& theta() const { return theta_; }

 private:
  std::vector<double> theta_;
};

enum class ProposalScale { identity, log };

struct ProposalSpec {
  std::vector<ProposalScale> scales;
  std::vector<double> sd;
};

// Log density of moving from `from` to `to` under the random walk.
double proposal_log_density(const ProposalSpec& spec, std::span<const double> from, std::span<const double> to);

struct MhState {
  double log_ml = 0.0;
  double log_prior = 0.0;
};

// min(0, [prop.log_ml + prop.log_prior + log q(curr | prop)]
//        - [curr.log_ml + curr.log_prior + log q(prop | curr)]).
double acceptance_log_prob(const MhState& curr, const MhState& prop, double log_q_curr_given_prop,
                           double log_q_prop_given_curr);

struct ChainConfig {
  int burnin = 500;
  int iterations = 5500;  // total, burn-in included
  int thin = 5;
  std::uint64_t seed = 1;
  std::vector<double> initial;
  ProposalSpec proposal;
  LaplaceOptions laplace;

  void validate(int dimension) const;  // throws ConfigError
  int kept_count() const;
  bool kept(int iteration) const;
};

struct ChainStep {
  int iteration = 0;
  std::vector<double> theta;  // state after the step
  double log_ml = 0.0;
  bool accepted = false;
};

struct Chain {
  std::vector<std::string> names;
  std::vector<ChainStep> trace;  // every iteration
  std::vector<std::vector<double>> draws;  // kept
  std::vector<double> log_ml;             // kept
  std::vector<std::shared_ptr<const FitResult>> fits;  // kept; shared between repeats
  int accepted = 0;
  int burnin = 0;
  int iterations = 0;
  int thin = 1;
  std::uint64_t seed = 0;

  double acceptance_rate() const;
  std::vector<double> coordinate(int j) const;  // kept draws of coordinate j
};

using ChainProgress = std::function<void(int iteration, const Chain&)>;

Chain run_chain(const ConditionedFamily& family, const ChainConfig& config, const ChainProgress& progress = {});

struct CoordinateSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q50 = 0.0;
  double q975 = 0.0;
  std::vector<double> autocorrelation;  // lags 0..50
  double ess = 0.0;
  bool degenerate = false;
};

struct ChainDiagnostics {
  double acceptance_rate = 0.0;
  int kept = 0;
  std::vector<CoordinateSummary> coordinates;
};

inline constexpr int kMaxReportedLag = 50;

ChainDiagnostics diagnostics(const Chain& chain);
CoordinateSummary summarize_series(std::span<const double> x, const std::string& name = {});
std::vector<double> autocorrelation(std::span<const double> x, int max_lag);
// Initial positive sequence estimator; 1 with *degenerate set for constant
// series.
double effective_sample_size(std::span<const double> x, bool* degenerate = nullptr);
double sample_quantile(std::vector<double> x, double p);

}  // namespace inlamh
