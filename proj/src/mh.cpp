#include "inlamh/mh.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace inlamh {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

std::string format_theta(std::span<const double> theta) {
  std::ostringstream out;
  out.precision(17);
  out << "(";
  for (std::size_t j = 0; j < theta.size(); ++j) out << (j ? ", " : "") << theta[j];
  out << ")";
  return out.str();
}

}  // namespace

LatentModel ConditionedFamily::build(std::span<const double> /*theta*/) const {
  throw ConfigError("this conditioned family does not build latent models");
}

Evaluation ConditionedFamily::evaluate(std::span<const double> theta, const LaplaceOptions& options, bool track) const {
  const LatentModel model = build(theta);
  LaplaceOptions opt = options;
  if (!track) {
    opt.track.clear();
    opt.track_covariance = false;
  }
  auto fit = std::make_shared<FitResult>(explore_hypers(model, opt));
  Evaluation ev;
  ev.log_ml = fit->log_marginal_likelihood + log_correction(theta);
  ev.fit = std::move(fit);
  return ev;
}

double proposal_log_density(const ProposalSpec& spec, std::span<const double> from, std::span<const double> to) {
  double lq = 0.0;
  for (std::size_t j = 0; j < from.size(); ++j) {
    const double sd = spec.sd[j];
    double d;
    if (spec.scales[j] == ProposalScale::log) {
      if (!(from[j] > 0.0) || !(to[j] > 0.0)) return -std::numeric_limits<double>::infinity();
      d = std::log(to[j]) - std::log(from[j]);
      lq -= std::log(to[j]);
    } else {
      d = to[j] - from[j];
    }
    lq += -0.5 * kLog2Pi - std::log(sd) - 0.5 * d * d / (sd * sd);
  }
  return lq;
}

double acceptance_log_prob(const MhState& curr, const MhState& prop, double log_q_curr_given_prop,
                           double log_q_prop_given_curr) {
  const double num = prop.log_ml + prop.log_prior + log_q_curr_given_prop;
  const double den = curr.log_ml + curr.log_prior + log_q_prop_given_curr;
  if (std::isnan(num) || !std::isfinite(den)) throw NonFinite("non-finite term in the acceptance ratio");
  if (num == -std::numeric_limits<double>::infinity()) return num;
  if (!std::isfinite(num)) throw NonFinite("non-finite term in the acceptance ratio");
  return std::min(0.0, num - den);
}

// --- configuration ----------------------------------------------------------------

void ChainConfig::validate(int dimension) const {
  if (burnin < 0) throw ConfigError("burnin must be non-negative");
  if (iterations <= burnin) throw ConfigError("iterations must exceed burnin");
  if (thin < 1) throw ConfigError("thin must be at least 1");
  if (static_cast<int>(initial.size()) != dimension) throw ConfigError("initial state has the wrong dimension");
  if (static_cast<int>(proposal.sd.size()) != dimension || static_cast<int>(proposal.scales.size()) != dimension) {
    throw ConfigError("proposal specification has the wrong dimension");
  }
  for (double s : proposal.sd) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("proposal standard deviations must be positive");
  }
  if (kept_count() < 1) throw ConfigError("chain settings keep no draws");
}

int ChainConfig::kept_count() const { return (iterations - burnin) / thin; }

bool ChainConfig::kept(int iteration) const {
  return iteration >= burnin && (iteration - burnin) % thin == thin - 1;
}

double Chain::acceptance_rate() const {
  return trace.empty() ? 0.0 : static_cast<double>(accepted) / static_cast<double>(trace.size());
}

std::vector<double> Chain::coordinate(int j) const {
  std::vector<double> out;
  out.reserve(draws.size());
  for (const auto& d : draws) out.push_back(d[static_cast<std::size_t>(j)]);
  return out;
}

// --- chain --------------------------------------------------------------------------

Chain run_chain(const ConditionedFamily& family, const ChainConfig& config, const ChainProgress& progress) {
  const int dim = family.dimension();
  config.validate(dim);
  if (!family.in_support(config.initial)) throw ConfigError("initial state " + format_theta(config.initial) + " is outside the support");

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  auto evaluate = [&](const std::vector<double>& theta, const std::vector<double>& start, bool track) {
    LaplaceOptions opt = config.laplace;
    opt.start = start;
    try {
      return family.evaluate(theta, opt, track);
    } catch (const NumericalError& e) {
      throw FitFailure(std::string(e.what()) + " at theta = " + format_theta(theta), theta);
    }
  };

  Chain chain;
  chain.names = family.names();
  chain.burnin = config.burnin;
  chain.iterations = config.iterations;
  chain.thin = config.thin;
  chain.seed = config.seed;
  chain.trace.reserve(static_cast<std::size_t>(config.iterations));

  std::vector<double> curr = config.initial;
  Evaluation curr_eval = evaluate(curr, {}, false);
  bool curr_tracked = false;
  double curr_prior = family.log_prior(curr);

  std::vector<double> prop(static_cast<std::size_t>(dim));
  for (int it = 0; it < config.iterations; ++it) {
    for (int j = 0; j < dim; ++j) {
      const double step = config.proposal.sd[static_cast<std::size_t>(j)] * normal(rng);
      prop[static_cast<std::size_t>(j)] = config.proposal.scales[static_cast<std::size_t>(j)] == ProposalScale::log
                                              ? curr[static_cast<std::size_t>(j)] * std::exp(step)
                                              : curr[static_cast<std::size_t>(j)] + step;
    }
    const double u = uniform(rng);
    bool accepted = false;
    if (family.in_support(prop)) {
      const std::vector<double> start = curr_eval.fit ? curr_eval.fit->mode_z : std::vector<double>{};
      Evaluation prop_eval = evaluate(prop, start, false);
      const double prop_prior = family.log_prior(prop);
      const double la = acceptance_log_prob({curr_eval.log_ml, curr_prior}, {prop_eval.log_ml, prop_prior},
                                            proposal_log_density(config.proposal, prop, curr),
                                            proposal_log_density(config.proposal, curr, prop));
      if (std::log(u) < la) {
        curr = prop;
        curr_eval = std::move(prop_eval);
        curr_prior = prop_prior;
        curr_tracked = false;
        accepted = true;
        ++chain.accepted;
      }
    }
    chain.trace.push_back({it, curr, curr_eval.log_ml, accepted});
    if (config.kept(it)) {
      if (!curr_tracked && curr_eval.fit && !config.laplace.track.empty()) {
        const Evaluation tracked = evaluate(curr, curr_eval.fit->mode_z, true);
        curr_eval.fit = tracked.fit;
      }
      curr_tracked = true;
      chain.draws.push_back(curr);
      chain.log_ml.push_back(curr_eval.log_ml);
      chain.fits.push_back(curr_eval.fit);
    }
    if (progress) progress(it, chain);
  }
  return chain;
}

// --- diagnostics -----------------------------------------------------------------------

double sample_quantile(std::vector<double> x, double p) {
  if (x.empty()) throw EmptyChain("quantile of an empty sample");
  std::sort(x.begin(), x.end());
  const double h = (static_cast<double>(x.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (h - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

std::vector<double> autocorrelation(std::span<const double> x, int max_lag) {
  const std::size_t n = x.size();
  if (n == 0) throw EmptyChain("autocorrelation of an empty series");
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  double c0 = 0.0;
  for (double v : x) c0 += (v - mean) * (v - mean);
  const int lags = std::min<int>(max_lag, static_cast<int>(n) - 1);
  std::vector<double> out(static_cast<std::size_t>(std::max(lags, 0)) + 1, 0.0);
  out[0] = 1.0;
  if (c0 <= 0.0) return out;
  for (int k = 1; k <= lags; ++k) {
    double c = 0.0;
    for (std::size_t i = 0; i + static_cast<std::size_t>(k) < n; ++i) c += (x[i] - mean) * (x[i + static_cast<std::size_t>(k)] - mean);
    out[static_cast<std::size_t>(k)] = c / c0;
  }
  return out;
}

double effective_sample_size(std::span<const double> x, bool* degenerate) {
  const std::size_t n = x.size();
  if (n == 0) throw EmptyChain("effective sample size of an empty series");
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  double c0 = 0.0;
  for (double v : x) c0 += (v - mean) * (v - mean);
  if (degenerate) *degenerate = false;
  if (n < 4 || !(c0 > 1e-300 * static_cast<double>(n))) {
    if (degenerate) *degenerate = c0 <= 0.0 || n < 4;
    return c0 <= 0.0 ? 1.0 : static_cast<double>(n);
  }
  auto rho = [&](std::size_t k) {
    double c = 0.0;
    for (std::size_t i = 0; i + k < n; ++i) c += (x[i] - mean) * (x[i + k] - mean);
    return c / c0;
  };
  double tau = -1.0;
  for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
    const double gamma = rho(2 * k) + rho(2 * k + 1);
    if (!(gamma > 0.0)) break;
    tau += 2.0 * gamma;
  }
  tau = std::max(tau, 1.0 / static_cast<double>(n));
  return static_cast<double>(n) / tau;
}

CoordinateSummary summarize_series(std::span<const double> x, const std::string& name) {
  if (x.empty()) throw EmptyChain("cannot summarize an empty chain");
  CoordinateSummary s;
  s.name = name;
  const double n = static_cast<double>(x.size());
  s.mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double v = 0.0;
  for (double d : x) v += (d - s.mean) * (d - s.mean);
  s.sd = x.size() > 1 ? std::sqrt(v / (n - 1.0)) : 0.0;
  std::vector<double> copy(x.begin(), x.end());
  s.q025 = sample_quantile(copy, 0.025);
  s.q50 = sample_quantile(copy, 0.5);
  s.q975 = sample_quantile(copy, 0.975);
  s.autocorrelation = autocorrelation(x, kMaxReportedLag);
  s.ess = effective_sample_size(x, &s.degenerate);
  return s;
}

ChainDiagnostics diagnostics(const Chain& chain) {
  if (chain.draws.empty()) throw EmptyChain("chain has no kept draws");
  ChainDiagnostics d;
  d.acceptance_rate = chain.acceptance_rate();
  d.kept = static_cast<int>(chain.draws.size());
  for (std::size_t j = 0; j < chain.names.size(); ++j) {
    const auto xs = chain.coordinate(static_cast<int>(j));
    d.coordinates.push_back(summarize_series(xs, chain.names[j]));
  }
  return d;
}

}  // namespace inlamh
