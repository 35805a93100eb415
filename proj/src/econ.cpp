#include "inlamh/econ.hpp"

#include "inlamh/errors.hpp"
#include "inlamh/io.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <optional>

namespace inlamh {

void ManskiSpec::validate() const {
  const int n = static_cast<int>(y.size());
  if (x.rows() != n) throw DimensionMismatch("covariate rows differ from the response length");
  if (w.size() != n) throw DimensionMismatch("weights matrix dimension differs from the response length");
  if (static_cast<int>(covariates.size()) != x.cols()) throw DimensionMismatch("one name per covariate column is required");
  if (x.cols() == 0) throw DimensionMismatch("at least one covariate column is required");
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(y[i])) throw DimensionMismatch("response must be finite (row " + std::to_string(i) + ")");
  }
  if (!x.allFinite()) throw DimensionMismatch("covariates must be finite");
}

std::vector<std::string> ManskiSpec::latent_names() const {
  std::vector<std::string> out = covariates;
  if (lagged) {
    for (const auto& c : covariates) {
      if (c != kIntercept) out.push_back("lag." + c);
    }
  }
  return out;
}

ManskiSpec load_manski(const std::filesystem::path& gal, const std::filesystem::path& csv, const std::string& response,
                       const std::vector<std::string>& covariates, bool intercept, const std::string& id_column) {
  const Adjacency adj = read_gal(gal);
  const CsvTable table = CsvTable::read(csv);
  const int n = adj.size();
  if (static_cast<int>(table.rows()) != n) {
    throw DimensionMismatch(csv.string() + " has " + std::to_string(table.rows()) + " rows but the adjacency has " +
                            std::to_string(n) + " regions");
  }
  if (table.has_column(id_column)) {
    check_region_ids(table.column(id_column), adj.ids(), csv.string());
  }
  ManskiSpec spec;
  spec.y = table.numeric(response);
  const int p = static_cast<int>(covariates.size()) + (intercept ? 1 : 0);
  spec.x.resize(n, p);
  int col = 0;
  if (intercept) {
    spec.x.col(col++).setOnes();
    spec.covariates.emplace_back(kIntercept);
  }
  for (const auto& c : covariates) {
    spec.x.col(col++) = table.numeric(c);
    spec.covariates.push_back(c);
  }
  spec.w = row_standardize(adj);
  spec.validate();
  return spec;
}

ManskiFamily::ManskiFamily(ManskiSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

bool ManskiFamily::in_support(std::span<const double> theta) const {
  return theta.size() == 2 && spec_.w.in_support(theta[0]) && spec_.w.in_support(theta[1]);
}

double ManskiFamily::log_prior(std::span<const double> theta) const {
  if (!in_support(theta)) return -std::numeric_limits<double>::infinity();
  return -2.0 * std::log(spec_.w.support_upper - spec_.w.support_lower);
}

Vector ManskiFamily::transformed_response(double rho, double lambda) const {
  const Vector v = spec_.y - rho * (spec_.w.w * spec_.y);
  return v - lambda * (spec_.w.w * v);
}

DenseMatrix ManskiFamily::transformed_design(double lambda) const {
  DenseMatrix cols = spec_.x;
  if (spec_.lagged) {
    const DenseMatrix wx = spec_.w.w * spec_.x;
    std::vector<int> keep;
    for (int j = 0; j < spec_.x.cols(); ++j) {
      if (spec_.covariates[static_cast<std::size_t>(j)] != kIntercept) keep.push_back(j);
    }
    DenseMatrix all(spec_.x.rows(), spec_.x.cols() + static_cast<int>(keep.size()));
    all.leftCols(spec_.x.cols()) = spec_.x;
    for (std::size_t k = 0; k < keep.size(); ++k) all.col(spec_.x.cols() + static_cast<int>(k)) = wx.col(keep[k]);
    cols = std::move(all);
  }
  return cols - lambda * (spec_.w.w * cols);
}

LatentModel ManskiFamily::build(std::span<const double> theta) const {
  if (!in_support(theta)) throw OutOfSupport("(rho, lambda) outside the admissible square");
  const double rho = theta[0];
  const double lambda = theta[1];
  const DenseMatrix xt = transformed_design(lambda);
  ModelBuilder b(Family::gaussian, transformed_response(rho, lambda));
  b.add_fixed_effects(spec_.latent_names(), spec_.beta_precision);
  b.hyper(std::string(kObservationPrecision), spec_.precision_prior);
  for (int i = 0; i < xt.rows(); ++i) {
    for (int j = 0; j < xt.cols(); ++j) {
      if (xt(i, j) != 0.0) b.design_entry(i, j, xt(i, j));
    }
  }
  return b.build();
}

double ManskiFamily::log_correction(std::span<const double> theta) const {
  return logdet_shifted(spec_.w.eigenvalues, theta[1]) + logdet_shifted(spec_.w.eigenvalues, theta[0]);
}

ChainConfig default_manski_chain() {
  ChainConfig c;
  c.burnin = 500;
  c.iterations = 5500;
  c.thin = 5;
  c.initial = {0.0, 0.0};
  c.proposal.scales = {ProposalScale::identity, ProposalScale::identity};
  c.proposal.sd = {0.25, 0.25};
  return c;
}

ManskiFit fit_manski(const ManskiSpec& spec, ChainConfig config, const ChainProgress& progress) {
  ManskiFamily family(spec);
  ManskiFit out;
  out.coefficients = spec.latent_names();
  config.laplace.track.clear();
  for (std::size_t j = 0; j < out.coefficients.size(); ++j) config.laplace.track.push_back(static_cast<int>(j));
  config.laplace.track_covariance = spec.lagged;
  out.chain = run_chain(family, config, progress);

  for (std::size_t j = 0; j < out.coefficients.size(); ++j) {
    std::vector<MarginalGrid> grids;
    grids.reserve(out.chain.fits.size());
    for (const auto& f : out.chain.fits) grids.push_back(f->latent_marginals[j]);
    out.coefficient_marginals.push_back(mix_marginals(grids));
  }
  std::vector<MarginalGrid> prec;
  for (const auto& f : out.chain.fits) prec.push_back(f->hyper_marginal(std::string(kObservationPrecision)));
  out.precision = mix_marginals(prec);
  out.variance = reciprocal_grid(out.precision);
  return out;
}

// --- impacts ------------------------------------------------------------------------

ImpactCalculator::ImpactCalculator(const WeightsMatrix& w)
    : w_(w.dense()), lower_(w.support_lower), upper_(w.support_upper) {
  if (w_.rows() > kImpactDenseMax) {
    constexpr int kGrid = 200;
    for (int i = 0; i < kGrid; ++i) {
      const double t = (i + 0.5) / kGrid;
      grid_.push_back(lower_ + t * (upper_ - lower_));
      cached_.push_back(exact(grid_.back()));
    }
  }
}

ImpactMultipliers ImpactCalculator::exact(double rho) const {
  const int n = static_cast<int>(w_.rows());
  if (!(rho > lower_ && rho < upper_)) throw OutOfSupport("rho outside the admissible interval");
  const DenseMatrix a = DenseMatrix::Identity(n, n) - rho * w_;
  Eigen::PartialPivLU<DenseMatrix> lu(a);
  const DenseMatrix inv = lu.inverse();
  ImpactMultipliers m;
  m.total = 1.0 / (1.0 - rho);
  m.direct = inv.trace() / n;
  m.indirect = m.total - m.direct;
  m.lag_direct = (inv * w_).trace() / n;
  m.lag_total = m.total;
  return m;
}

ImpactMultipliers ImpactCalculator::operator()(double rho) const {
  if (grid_.empty()) return exact(rho);
  if (!(rho > lower_ && rho < upper_)) throw OutOfSupport("rho outside the admissible interval");
  auto it = std::upper_bound(grid_.begin(), grid_.end(), rho);
  std::size_t hi = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(it - grid_.begin(), 1, static_cast<std::ptrdiff_t>(grid_.size()) - 1));
  const std::size_t lo = hi - 1;
  const double t = (rho - grid_[lo]) / (grid_[hi] - grid_[lo]);
  auto lerp = [t](double a, double b) { return a + t * (b - a); };
  ImpactMultipliers m;
  m.total = 1.0 / (1.0 - rho);
  m.direct = lerp(cached_[lo].direct, cached_[hi].direct);
  m.indirect = m.total - m.direct;
  m.lag_direct = lerp(cached_[lo].lag_direct, cached_[hi].lag_direct);
  m.lag_total = m.total;
  return m;
}

namespace {

struct Term {
  double beta = 0.0;
  double gamma = 0.0;
};

// Draw-wise conditional marginals of beta * c_beta + gamma * c_gamma mixed
// across draws; zero-scale draws become narrow spikes at 0.
MarginalGrid mix_impact(const ManskiFit& fit, int beta_idx, int gamma_idx, const std::vector<Term>& terms) {
  std::vector<std::optional<MarginalGrid>> grids(terms.size());
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t j = 0; j < terms.size(); ++j) {
    const FitResult& f = *fit.chain.fits[j];
    const Term& t = terms[j];
    if (gamma_idx < 0 || t.gamma == 0.0) {
      if (t.beta == 0.0) continue;
      grids[j] = transform_grid(f.latent_marginals[static_cast<std::size_t>(f.tracked_position(beta_idx))], t.beta);
    } else {
      const std::vector<std::pair<int, double>> lc{{beta_idx, t.beta}, {gamma_idx, t.gamma}};
      grids[j] = linear_combination_marginal(f, lc);
    }
    lo = std::min(lo, grids[j]->lower());
    hi = std::max(hi, grids[j]->upper());
  }
  double half_width;
  if (std::isfinite(lo)) {
    half_width = 2.0 * (hi - lo) / (kMixturePoints - 1);
  } else {
    const auto& g = fit.chain.fits.front()->latent_marginals[static_cast<std::size_t>(fit.chain.fits.front()->tracked_position(beta_idx))];
    half_width = 2.0 * (g.upper() - g.lower()) / (kMixturePoints - 1);
  }
  std::vector<MarginalGrid> all;
  all.reserve(grids.size());
  for (auto& g : grids) all.push_back(g ? std::move(*g) : spike_grid(0.0, half_width));
  return mix_marginals(all);
}

}  // namespace

ImpactSet impacts(const ManskiFit& fit, const ManskiSpec& spec, const std::string& covariate) {
  if (fit.chain.fits.empty()) throw EmptyChain("fit has no kept draws");
  const auto names = spec.latent_names();
  auto it = std::find(names.begin(), names.end(), covariate);
  if (covariate == kIntercept || it == names.end() || covariate.rfind("lag.", 0) == 0) {
    throw CovariateNotFound("no covariate named '" + covariate + "'");
  }
  const int beta_idx = static_cast<int>(it - names.begin());
  int gamma_idx = -1;
  if (spec.lagged) {
    auto g = std::find(names.begin(), names.end(), "lag." + covariate);
    if (g != names.end()) gamma_idx = static_cast<int>(g - names.begin());
  }

  ImpactCalculator calc(spec.w);
  std::map<double, ImpactMultipliers> cache;
  std::vector<Term> dir, ind, tot;
  for (const auto& d : fit.chain.draws) {
    auto c = cache.find(d[0]);
    if (c == cache.end()) c = cache.emplace(d[0], calc(d[0])).first;
    const ImpactMultipliers& m = c->second;
    dir.push_back({m.direct, m.lag_direct});
    tot.push_back({m.total, m.lag_total});
    ind.push_back({m.total - m.direct, m.lag_total - m.lag_direct});
  }
  ImpactSet out;
  out.covariate = covariate;
  out.direct = mix_impact(fit, beta_idx, gamma_idx, dir);
  out.indirect = mix_impact(fit, beta_idx, gamma_idx, ind);
  out.total = mix_impact(fit, beta_idx, gamma_idx, tot);
  return out;
}

}  // namespace inlamh
