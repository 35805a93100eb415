#include "inlamh/dismap.hpp"

#include "inlamh/errors.hpp"
#include "inlamh/gmrf.hpp"
#include "inlamh/io.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

namespace inlamh {

void DismapSpec::validate() const {
  const int nn = n();
  const int d = disease_count();
  if (nn == 0 || d == 0) throw DimensionMismatch("disease mapping data is empty");
  if (observed.rows() != nn || expected.rows() != nn) {
    throw DimensionMismatch("count tables must have one row per region");
  }
  if (expected.cols() != d) throw DimensionMismatch("observed and expected tables differ in disease count");
  if (!diseases.empty() && static_cast<int>(diseases.size()) != d) {
    throw DimensionMismatch("one name per disease is required");
  }
  for (int i = 0; i < nn; ++i) {
    for (int j = 0; j < d; ++j) {
      const double o = observed(i, j);
      if (!(o >= 0.0) || o != std::floor(o)) {
        throw DimensionMismatch("observed counts must be non-negative integers (region " + std::to_string(i) + ")");
      }
      if (!(expected(i, j) > 0.0) || !std::isfinite(expected(i, j))) {
        throw DimensionMismatch("expected counts must be positive (region " + std::to_string(i) + ")");
      }
    }
  }
}

DenseMatrix rescale_expected(const DenseMatrix& observed, const DenseMatrix& expected) {
  if (observed.rows() != expected.rows() || observed.cols() != expected.cols()) {
    throw DimensionMismatch("observed and expected tables differ in shape");
  }
  DenseMatrix out = expected;
  for (int d = 0; d < expected.cols(); ++d) {
    const double e = expected.col(d).sum();
    if (!(e > 0.0)) throw DimensionMismatch("expected counts of a disease sum to zero");
    out.col(d) *= observed.col(d).sum() / e;
  }
  return out;
}

namespace {

int region_index(const Adjacency& adj, const std::string& id, const std::string& where) {
  int idx = adj.index_of(id);
  if (idx >= 0) return idx;
  char* end = nullptr;
  const double v = std::strtod(id.c_str(), &end);
  if (end != id.c_str() && *end == '\0') {
    for (int i = 0; i < adj.size(); ++i) {
      const std::string& g = adj.ids()[static_cast<std::size_t>(i)];
      char* ge = nullptr;
      const double gv = std::strtod(g.c_str(), &ge);
      if (ge != g.c_str() && *ge == '\0' && gv == v) return i;
    }
  }
  throw DimensionMismatch(where + ": region '" + id + "' is not in the adjacency");
}

}  // namespace

DismapSpec load_dismap(const std::filesystem::path& gal, const std::filesystem::path& csv, bool rescale) {
  DismapSpec spec;
  spec.adjacency = read_gal(gal);
  const CsvTable table = CsvTable::read(csv);
  const auto ids = table.column("id");
  const auto disease = table.column("disease");
  const Vector obs = table.numeric("observed");
  const Vector exp = table.numeric("expected");

  std::map<std::string, int> disease_index;
  for (const auto& d : disease) {
    if (disease_index.emplace(d, static_cast<int>(spec.diseases.size())).second) spec.diseases.push_back(d);
  }
  const int n = spec.adjacency.size();
  const int nd = static_cast<int>(spec.diseases.size());
  spec.observed = DenseMatrix::Constant(n, nd, std::nan(""));
  spec.expected = DenseMatrix::Constant(n, nd, std::nan(""));
  for (std::size_t r = 0; r < table.rows(); ++r) {
    const std::string where = csv.string() + " data row " + std::to_string(r + 1);
    const int i = region_index(spec.adjacency, ids[r], where);
    const int d = disease_index.at(disease[r]);
    if (!std::isnan(spec.observed(i, d))) throw DimensionMismatch(where + ": duplicate region and disease");
    spec.observed(i, d) = obs[static_cast<int>(r)];
    spec.expected(i, d) = exp[static_cast<int>(r)];
  }
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < nd; ++d) {
      if (std::isnan(spec.observed(i, d)) || std::isnan(spec.expected(i, d))) {
        throw DimensionMismatch(csv.string() + ": missing counts for region '" + spec.adjacency.ids()[static_cast<std::size_t>(i)] +
                                "', disease '" + spec.diseases[static_cast<std::size_t>(d)] + "'");
      }
    }
  }
  spec.validate();
  if (rescale) spec.expected = rescale_expected(spec.observed, spec.expected);
  return spec;
}

DismapFamily::DismapFamily(DismapSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  if (spec_.diseases.empty()) {
    for (int d = 0; d < spec_.disease_count(); ++d) spec_.diseases.push_back(std::to_string(d + 1));
  }
}

std::vector<std::string> DismapFamily::names() const {
  std::vector<std::string> out;
  for (int d = 0; d < spec_.disease_count(); ++d) out.push_back("delta" + std::to_string(d + 1));
  return out;
}

bool DismapFamily::in_support(std::span<const double> theta) const {
  if (static_cast<int>(theta.size()) != spec_.disease_count()) return false;
  for (double t : theta) {
    if (!(t > 0.0) || !std::isfinite(t)) return false;
  }
  return true;
}

double DismapFamily::log_prior(std::span<const double> theta) const {
  if (!in_support(theta)) return -std::numeric_limits<double>::infinity();
  double s = 0.0;
  for (double t : theta) s += spec_.delta_prior.log_density(t);
  return s;
}

LatentModel DismapFamily::build(std::span<const double> theta) const { return build(theta, spec_.tau_v_prior); }

LatentModel DismapFamily::build(std::span<const double> theta, const HyperPrior& tau_v_prior) const {
  const int n = spec_.n();
  const int nd = spec_.disease_count();
  if (static_cast<int>(theta.size()) != nd) throw DimensionMismatch("one delta per disease is required");
  for (double t : theta) {
    if (!(t > 0.0)) throw NonPositiveDelta("delta entries must be positive");
  }
  Vector y(n * nd);
  Vector offset(n * nd);
  for (int d = 0; d < nd; ++d) {
    for (int i = 0; i < n; ++i) {
      y[d * n + i] = spec_.observed(i, d);
      offset[d * n + i] = std::log(spec_.expected(i, d));
    }
  }
  ModelBuilder b(Family::poisson, y);
  b.offset(offset);
  std::vector<std::string> alpha_names;
  for (const auto& name : spec_.diseases) alpha_names.push_back("alpha." + name);
  b.add_fixed_effects(alpha_names, spec_.alpha_precision);

  std::vector<std::string> v_names;
  for (int i = 0; i < n; ++i) v_names.push_back("v[" + std::to_string(i) + "]");
  b.add_block(besag(spec_.adjacency, "v", "tau_v"), v_names);
  for (int d = 0; d < nd; ++d) {
    const std::string label = "s." + spec_.diseases[static_cast<std::size_t>(d)];
    std::vector<std::string> s_names;
    for (int i = 0; i < n; ++i) s_names.push_back(label + "[" + std::to_string(i) + "]");
    b.add_block(besag(spec_.adjacency, label, "tau_s"), s_names);
  }
  b.hyper("tau_v", tau_v_prior);
  b.hyper("tau_s", spec_.tau_s_prior);

  for (int d = 0; d < nd; ++d) {
    for (int i = 0; i < n; ++i) {
      const int row = d * n + i;
      b.design_entry(row, spec_.alpha_index(d), 1.0);
      b.design_entry(row, spec_.v_index(i), theta[static_cast<std::size_t>(d)]);
      b.design_entry(row, spec_.s_index(d, i), 1.0);
    }
  }
  return b.build();
}

namespace {

MarginalGrid stretch(const MarginalGrid& g, double factor) {
  std::vector<double> values = g.values();
  std::vector<double> densities = g.densities();
  for (auto& v : values) v *= factor;
  for (auto& d : densities) d /= factor;
  return {std::move(values), std::move(densities)};
}

}  // namespace

Evaluation DismapFamily::evaluate(std::span<const double> theta, const LaplaceOptions& options, bool track) const {
  if (!in_support(theta)) {
    if (static_cast<int>(theta.size()) != spec_.disease_count()) throw DimensionMismatch("one delta per disease is required");
    throw NonPositiveDelta("delta entries must be positive");
  }
  double c = 0.0;
  for (double t : theta) c += t * t;
  c = std::sqrt(c / static_cast<double>(theta.size()));
  const double c2 = c * c;
  std::vector<double> unit(theta.begin(), theta.end());
  for (auto& t : unit) t /= c;
  const HyperPrior& prior = spec_.tau_v_prior;
  const HyperPrior scaled = prior.scaled(c2);
  const LatentModel model = build(unit, scaled);

  int hyper = -1;
  int free = -1;
  for (int k = 0, f = 0; k < static_cast<int>(model.hypers().size()); ++k) {
    const auto& h = model.hypers()[static_cast<std::size_t>(k)];
    if (h.name == "tau_v" && !h.fixed) {
      hyper = k;
      free = f;
    }
    if (!h.fixed) ++f;
  }

  LaplaceOptions opt = options;
  if (!track) {
    opt.track.clear();
    opt.track_covariance = false;
  }
  if (free >= 0 && static_cast<int>(opt.start.size()) > free) {
    auto& z = opt.start[static_cast<std::size_t>(free)];
    z = scaled.to_internal(prior.from_internal(z) / c2);
  }
  auto fit = std::make_shared<FitResult>(explore_hypers(model, opt));

  const int v0 = spec_.v_index(0);
  const int n = spec_.n();
  auto is_v = [&](int index) { return index >= v0 && index < v0 + n; };
  for (int i = 0; i < n; ++i) fit->central_mode[v0 + i] /= c;
  for (std::size_t t = 0; t < fit->tracked.size(); ++t) {
    if (is_v(fit->tracked[t])) fit->latent_marginals[t] = stretch(fit->latent_marginals[t], 1.0 / c);
  }
  auto to_original = [&](double z) { return prior.to_internal(scaled.from_internal(z) * c2); };
  for (auto& g : fit->grid) {
    for (std::size_t t = 0; t < fit->tracked.size(); ++t) {
      if (!is_v(fit->tracked[t])) continue;
      const int ti = static_cast<int>(t);
      if (ti < g.means.size()) g.means[ti] /= c;
      if (ti < g.variances.size()) g.variances[ti] /= c2;
      if (g.covariance.size()) {
        g.covariance.row(ti) /= c;
        g.covariance.col(ti) /= c;
      }
    }
    if (free >= 0) {
      g.z[static_cast<std::size_t>(free)] = to_original(g.z[static_cast<std::size_t>(free)]);
      g.hypers[static_cast<std::size_t>(hyper)] *= c2;
      g.log_joint -= std::log(c2);
    }
  }
  if (free >= 0) {
    const auto f = static_cast<std::size_t>(free);
    fit->mode_z[f] = to_original(fit->mode_z[f]);
    if (prior.support() == HyperPrior::Support::real) fit->grid_scale[f] *= c2;
    fit->hyper_marginals[f] = stretch(fit->hyper_marginals[f], c2);
  }

  Evaluation ev;
  ev.log_ml = fit->log_marginal_likelihood + log_correction(theta);
  ev.fit = std::move(fit);
  return ev;
}

ChainConfig default_dismap_chain(int diseases) {
  ChainConfig c;
  c.burnin = 500;
  c.iterations = 5500;
  c.thin = 5;
  c.initial.assign(static_cast<std::size_t>(diseases), 1.0);
  c.proposal.scales.assign(static_cast<std::size_t>(diseases), ProposalScale::log);
  c.proposal.sd.assign(static_cast<std::size_t>(diseases), 0.25);
  return c;
}

DismapFit fit_dismap(const DismapSpec& spec, ChainConfig config, const ChainProgress& progress) {
  DismapFamily family(spec);
  const int n = spec.n();
  const int nd = spec.disease_count();
  std::vector<int> track;
  for (int d = 0; d < nd; ++d) track.push_back(spec.alpha_index(d));
  for (int i = 0; i < n; ++i) track.push_back(spec.v_index(i));
  for (int idx : config.laplace.track) {
    if (std::find(track.begin(), track.end(), idx) == track.end()) track.push_back(idx);
  }
  config.laplace.track = std::move(track);

  DismapFit out;
  out.chain = run_chain(family, config, progress);
  const auto& fits = out.chain.fits;
  const double m = static_cast<double>(fits.size());

  for (int d = 0; d < nd; ++d) {
    std::vector<MarginalGrid> grids;
    for (const auto& f : fits) grids.push_back(f->latent_marginals[static_cast<std::size_t>(f->tracked_position(spec.alpha_index(d)))]);
    out.alpha.push_back(mix_marginals(grids));
  }
  std::vector<MarginalGrid> tv, ts;
  for (const auto& f : fits) {
    tv.push_back(f->hyper_marginal("tau_v"));
    ts.push_back(f->hyper_marginal("tau_s"));
  }
  out.tau_v = mix_marginals(tv);
  out.tau_s = mix_marginals(ts);

  out.shared_mean = Vector::Zero(n);
  Vector second = Vector::Zero(n);
  for (const auto& f : fits) {
    for (int i = 0; i < n; ++i) {
      const double mu = f->latent_mean(spec.v_index(i));
      const double sd = f->latent_sd(spec.v_index(i));
      out.shared_mean[i] += mu / m;
      second[i] += (sd * sd + mu * mu) / m;
    }
  }
  out.shared_sd = (second - out.shared_mean.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt();

  DenseMatrix draws(static_cast<int>(out.chain.draws.size()), nd);
  for (std::size_t k = 0; k < out.chain.draws.size(); ++k) {
    for (int d = 0; d < nd; ++d) draws(static_cast<int>(k), d) = out.chain.draws[k][static_cast<std::size_t>(d)];
  }
  const DenseMatrix centered = draws.rowwise() - draws.colwise().mean();
  const DenseMatrix cov = centered.transpose() * centered;
  out.delta_correlation = DenseMatrix::Identity(nd, nd);
  for (int a = 0; a < nd; ++a) {
    for (int c = 0; c < nd; ++c) {
      if (a == c) continue;
      const double den = std::sqrt(cov(a, a) * cov(c, c));
      out.delta_correlation(a, c) = den > 0.0 ? cov(a, c) / den : std::nan("");
    }
  }
  return out;
}

namespace {

Vector sample_icar(const Adjacency& adjacency, double tau, std::mt19937_64& rng) {
  const int n = adjacency.size();
  DenseMatrix t = DenseMatrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    t(i, i) = adjacency.degree(i);
    for (int j : adjacency.neighbors(i)) t(i, j) = -1.0;
  }
  Eigen::SelfAdjointEigenSolver<DenseMatrix> eig(t);
  const double cut = kNullEigenTolerance * std::max(1.0, eig.eigenvalues().maxCoeff());
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector x = Vector::Zero(n);
  for (int k = 0; k < n; ++k) {
    const double z = normal(rng);
    const double lambda = eig.eigenvalues()[k];
    if (lambda > cut) x += eig.eigenvectors().col(k) * (z / std::sqrt(tau * lambda));
  }
  const auto comp = adjacency.components();
  const int nc = adjacency.component_count();
  Vector sum = Vector::Zero(nc);
  Vector count = Vector::Zero(nc);
  for (int i = 0; i < n; ++i) {
    sum[comp[static_cast<std::size_t>(i)]] += x[i];
    count[comp[static_cast<std::size_t>(i)]] += 1.0;
  }
  for (int i = 0; i < n; ++i) x[i] -= sum[comp[static_cast<std::size_t>(i)]] / count[comp[static_cast<std::size_t>(i)]];
  return x;
}

}  // namespace

Vector sample_icar(const Adjacency& adjacency, double tau, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_icar(adjacency, tau, rng);
}

SyntheticDismap generate_synthetic(const Adjacency& adjacency, const DismapTruth& truth, std::uint64_t seed) {
  const int nd = static_cast<int>(truth.delta.size());
  if (nd == 0 || truth.alpha.size() != truth.delta.size()) {
    throw DimensionMismatch("delta and alpha must have one entry per disease");
  }
  if (!(truth.tau_v > 0.0) || !(truth.tau_s > 0.0) || !(truth.expected > 0.0)) {
    throw OutOfRange("precisions and expected counts must be positive");
  }
  const int n = adjacency.size();
  std::mt19937_64 rng(seed);
  SyntheticDismap out;
  out.v = sample_icar(adjacency, truth.tau_v, rng);
  out.s.resize(n, nd);
  for (int d = 0; d < nd; ++d) out.s.col(d) = sample_icar(adjacency, truth.tau_s, rng);

  DismapSpec& spec = out.spec;
  spec.adjacency = adjacency;
  spec.observed.resize(n, nd);
  spec.expected = DenseMatrix::Constant(n, nd, truth.expected);
  for (int d = 0; d < nd; ++d) {
    spec.diseases.push_back(std::to_string(d + 1));
    for (int i = 0; i < n; ++i) {
      const double eta = truth.alpha[static_cast<std::size_t>(d)] + truth.delta[static_cast<std::size_t>(d)] * out.v[i] + out.s(i, d);
      std::poisson_distribution<long long> pois(truth.expected * std::exp(eta));
      spec.observed(i, d) = static_cast<double>(pois(rng));
    }
  }
  spec.expected = rescale_expected(spec.observed, spec.expected);
  return out;
}

}  // namespace inlamh
