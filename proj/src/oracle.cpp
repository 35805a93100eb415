#include "inlamh/oracle.hpp"

#include "inlamh/errors.hpp"
#include "inlamh/io.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

namespace inlamh {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

}  // namespace

int SampleTable::index(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw NameMismatch("no sample column named '" + name + "'");
  return static_cast<int>(it - names.begin());
}

std::vector<double> SampleTable::column(const std::string& name, int skip) const {
  const int j = index(name);
  std::vector<double> out;
  for (int r = std::max(skip, 0); r < rows(); ++r) out.push_back(samples(r, j));
  return out;
}

void SampleTable::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path.string());
  std::vector<std::string> header{"iteration"};
  header.insert(header.end(), names.begin(), names.end());
  write_csv_row(out, header);
  for (int r = 0; r < rows(); ++r) {
    std::vector<std::string> f{std::to_string(r)};
    for (int j = 0; j < samples.cols(); ++j) f.push_back(format_double(samples(r, j)));
    write_csv_row(out, f);
  }
}

// --- Manski ---------------------------------------------------------------------------

SampleTable oracle_manski(const ManskiSpec& spec, int iterations, std::uint64_t seed, const OracleOptions& options) {
  spec.validate();
  if (iterations <= 0 || options.thin <= 0) throw ConfigError("iterations and thin must be positive");
  if (spec.precision_prior.kind() != HyperPrior::Kind::gamma) {
    throw ConfigError("the Manski oracle needs a gamma prior on the error precision");
  }
  const int n = spec.n();
  const SparseMatrix& w = spec.w.w;
  const auto& eig = spec.w.eigenvalues.values;
  auto logdet = [&](double r) {
    double s = 0.0;
    for (double e : eig) s += std::log(std::abs(1.0 - r * e));
    return s;
  };

  std::vector<int> lag_cols;
  for (int j = 0; j < spec.x.cols(); ++j) {
    if (spec.lagged && spec.covariates[static_cast<std::size_t>(j)] != kIntercept) lag_cols.push_back(j);
  }
  const int p = static_cast<int>(spec.x.cols() + lag_cols.size());
  DenseMatrix z(n, p);
  z.leftCols(spec.x.cols()) = spec.x;
  if (!lag_cols.empty()) {
    const DenseMatrix wx = w * spec.x;
    for (std::size_t k = 0; k < lag_cols.size(); ++k) z.col(spec.x.cols() + static_cast<int>(k)) = wx.col(lag_cols[k]);
  }
  const DenseMatrix wz = w * z;
  const Vector& y = spec.y;
  const Vector wy = w * y;
  const Vector wwy = w * wy;
  auto response = [&](double rho, double lambda) -> Vector {
    return y - (rho + lambda) * wy + rho * lambda * wwy;
  };
  auto design = [&](double lambda) -> DenseMatrix { return z - lambda * wz; };

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  double rho = 0.0;
  double lambda = 0.0;
  DenseMatrix zt = design(lambda);
  Vector yt = response(rho, lambda);
  Vector beta = (zt.transpose() * zt).ldlt().solve(zt.transpose() * yt);
  double tau = 1.0 / std::max((yt - zt * beta).squaredNorm() / n, 1e-12);
  const double a0 = spec.precision_prior.first();
  const double b0 = spec.precision_prior.second();

  auto log_target = [&](double r, double l, const Vector& ytil, const DenseMatrix& ztil) {
    return logdet(r) + logdet(l) - 0.5 * tau * (ytil - ztil * beta).squaredNorm();
  };

  SampleTable table;
  table.names = {"rho", "lambda"};
  for (const auto& nm : spec.latent_names()) table.names.push_back(nm);
  table.names.emplace_back(kObservationPrecision);
  table.samples.resize(iterations / options.thin, static_cast<int>(table.names.size()));

  for (int it = 0; it < iterations; ++it) {
    // beta | rest
    const DenseMatrix prec = tau * zt.transpose() * zt + spec.beta_precision * DenseMatrix::Identity(p, p);
    Eigen::LLT<DenseMatrix> llt(prec);
    const Vector mean = llt.solve(tau * zt.transpose() * yt);
    Vector e(p);
    for (int j = 0; j < p; ++j) e[j] = normal(rng);
    beta = mean + llt.matrixU().solve(e);

    // tau | rest
    const double rss = (yt - zt * beta).squaredNorm();
    std::gamma_distribution<double> gam(a0 + 0.5 * n, 1.0 / (b0 + 0.5 * rss));
    tau = gam(rng);

    // rho | rest
    {
      const double prop = rho + options.autoregressive_sd * normal(rng);
      const double u = unif(rng);
      if (spec.w.in_support(prop)) {
        const Vector yp = response(prop, lambda);
        const double diff = log_target(prop, lambda, yp, zt) - log_target(rho, lambda, yt, zt);
        if (std::log(u) < diff) {
          rho = prop;
          yt = yp;
        }
      }
    }
    // lambda | rest
    {
      const double prop = lambda + options.autoregressive_sd * normal(rng);
      const double u = unif(rng);
      if (spec.w.in_support(prop)) {
        const Vector yp = response(rho, prop);
        const DenseMatrix zp = design(prop);
        const double diff = log_target(rho, prop, yp, zp) - log_target(rho, lambda, yt, zt);
        if (std::log(u) < diff) {
          lambda = prop;
          yt = yp;
          zt = zp;
        }
      }
    }

    if ((it + 1) % options.thin == 0) {
      const int r = (it + 1) / options.thin - 1;
      table.samples(r, 0) = rho;
      table.samples(r, 1) = lambda;
      for (int j = 0; j < p; ++j) table.samples(r, 2 + j) = beta[j];
      table.samples(r, 2 + p) = tau;
    }
  }
  return table;
}

// --- disease mapping ------------------------------------------------------------------

SampleTable oracle_dismap(const DismapSpec& spec, int iterations, std::uint64_t seed, const OracleOptions& options) {
  spec.validate();
  if (iterations <= 0 || options.thin <= 0) throw ConfigError("iterations and thin must be positive");
  const int n = spec.n();
  const int nd = spec.disease_count();
  const Adjacency& adj = spec.adjacency;
  if (!adj.islands().empty()) throw IslandError("the disease mapping oracle needs a graph without islands");
  const int rank = n - adj.component_count();
  const DenseMatrix& o = spec.observed;
  const DenseMatrix log_e = spec.expected.array().log().matrix();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto accept = [&](double log_ratio) { return std::log(unif(rng)) < log_ratio; };

  std::vector<double> alpha(static_cast<std::size_t>(nd));
  std::vector<double> delta(static_cast<std::size_t>(nd), 1.0);
  for (int d = 0; d < nd; ++d) alpha[static_cast<std::size_t>(d)] = std::log(o.col(d).sum() / spec.expected.col(d).sum());
  Vector v = Vector::Zero(n);
  DenseMatrix s = DenseMatrix::Zero(n, nd);
  double tau_v = 1.0;
  double tau_s = 1.0;
  DenseMatrix eta(n, nd);
  auto refresh_eta = [&] {
    for (int d = 0; d < nd; ++d) {
      for (int i = 0; i < n; ++i) eta(i, d) = log_e(i, d) + alpha[static_cast<std::size_t>(d)] + delta[static_cast<std::size_t>(d)] * v[i] + s(i, d);
    }
  };
  refresh_eta();

  // Sums used by the intercept prior, which is evaluated at the re-centred
  // intercept alpha_d + delta_d mean(v) + mean(s_d).
  double sum_v = 0.0;
  Vector sum_s = Vector::Zero(nd);
  auto alpha_prior = [&](double a) { return -0.5 * spec.alpha_precision * a * a; };
  auto centred_alpha = [&](int d) {
    return alpha[static_cast<std::size_t>(d)] + delta[static_cast<std::size_t>(d)] * sum_v / n + sum_s[d] / n;
  };
  auto neighbour_sum = [&](const auto& x, int i) {
    double t = 0.0;
    for (int j : adj.neighbors(i)) t += x[j];
    return t;
  };
  auto quad = [&](const auto& x) {
    double q = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int j : adj.neighbors(i)) {
        if (j > i) q += (x[i] - x[j]) * (x[i] - x[j]);
      }
    }
    return q;
  };

  std::vector<double> alpha_scale(static_cast<std::size_t>(nd));
  for (int d = 0; d < nd; ++d) alpha_scale[static_cast<std::size_t>(d)] = 2.4 / std::sqrt(spec.alpha_precision + o.col(d).sum() + n);

  std::vector<std::string> labels = spec.diseases;
  if (labels.empty()) {
    for (int d = 0; d < nd; ++d) labels.push_back(std::to_string(d + 1));
  }
  SampleTable table;
  for (const auto& nm : labels) table.names.push_back("alpha." + nm);
  for (int d = 0; d < nd; ++d) table.names.push_back("delta" + std::to_string(d + 1));
  table.names.emplace_back("tau_v");
  table.names.emplace_back("tau_s");
  if (options.store_fields) {
    for (int i = 0; i < n; ++i) table.names.push_back("v[" + std::to_string(i) + "]");
    for (const auto& nm : labels) {
      for (int i = 0; i < n; ++i) table.names.push_back("s." + nm + "[" + std::to_string(i) + "]");
    }
  }
  table.samples.resize(iterations / options.thin, static_cast<int>(table.names.size()));

  for (int it = 0; it < iterations; ++it) {
    // Shared field, one site at a time.
    for (int i = 0; i < n; ++i) {
      double curv = tau_v * adj.degree(i);
      for (int d = 0; d < nd; ++d) curv += delta[static_cast<std::size_t>(d)] * delta[static_cast<std::size_t>(d)] * (o(i, d) + 1.0);
      const double e = 2.4 / std::sqrt(curv) * normal(rng);
      double lr = -0.5 * tau_v * (2.0 * e * (adj.degree(i) * v[i] - neighbour_sum(v, i)) + adj.degree(i) * e * e);
      for (int d = 0; d < nd; ++d) {
        const double de = delta[static_cast<std::size_t>(d)] * e;
        lr += o(i, d) * de - std::exp(eta(i, d)) * std::expm1(de);
        const double a0 = centred_alpha(d);
        lr += alpha_prior(a0 + delta[static_cast<std::size_t>(d)] * e / n) - alpha_prior(a0);
      }
      if (accept(lr)) {
        v[i] += e;
        sum_v += e;
        for (int d = 0; d < nd; ++d) eta(i, d) += delta[static_cast<std::size_t>(d)] * e;
      }
    }
    // Disease-specific fields.
    for (int d = 0; d < nd; ++d) {
      for (int i = 0; i < n; ++i) {
        const double e = 2.4 / std::sqrt(tau_s * adj.degree(i) + o(i, d) + 1.0) * normal(rng);
        double lr = -0.5 * tau_s * (2.0 * e * (adj.degree(i) * s(i, d) - neighbour_sum(s.col(d), i)) + adj.degree(i) * e * e);
        lr += o(i, d) * e - std::exp(eta(i, d)) * std::expm1(e);
        const double a0 = centred_alpha(d);
        lr += alpha_prior(a0 + e / n) - alpha_prior(a0);
        if (accept(lr)) {
          s(i, d) += e;
          sum_s[d] += e;
          eta(i, d) += e;
        }
      }
    }
    // Intercepts.
    for (int d = 0; d < nd; ++d) {
      const double e = alpha_scale[static_cast<std::size_t>(d)] * normal(rng);
      double lr = 0.0;
      for (int i = 0; i < n; ++i) lr += o(i, d) * e - std::exp(eta(i, d)) * std::expm1(e);
      const double a0 = centred_alpha(d);
      lr += alpha_prior(a0 + e) - alpha_prior(a0);
      if (accept(lr)) {
        alpha[static_cast<std::size_t>(d)] += e;
        eta.col(d).array() += e;
      }
    }

    // Re-centre the fields; the intercepts absorb the shift.
    {
      const double mv = v.mean();
      v.array() -= mv;
      for (int d = 0; d < nd; ++d) {
        const double ms = s.col(d).mean();
        s.col(d).array() -= ms;
        alpha[static_cast<std::size_t>(d)] += delta[static_cast<std::size_t>(d)] * mv + ms;
      }
      sum_v = 0.0;
      sum_s.setZero();
      refresh_eta();
    }

    // Weights, log scale.
    for (int d = 0; d < nd; ++d) {
      const double eps = options.log_scale_sd * normal(rng);
      const double dn = delta[static_cast<std::size_t>(d)] * std::exp(eps);
      const double dd = dn - delta[static_cast<std::size_t>(d)];
      double lr = eps + spec.delta_prior.log_density(dn) - spec.delta_prior.log_density(delta[static_cast<std::size_t>(d)]);
      for (int i = 0; i < n; ++i) lr += o(i, d) * dd * v[i] - std::exp(eta(i, d)) * std::expm1(dd * v[i]);
      if (accept(lr)) {
        delta[static_cast<std::size_t>(d)] = dn;
        for (int i = 0; i < n; ++i) eta(i, d) += dd * v[i];
      }
    }
    // Precisions, log scale.
    {
      const double eps = options.log_scale_sd * normal(rng);
      const double tn = tau_v * std::exp(eps);
      const double lr = eps + 0.5 * rank * eps - 0.5 * (tn - tau_v) * quad(v) + spec.tau_v_prior.log_density(tn) -
                        spec.tau_v_prior.log_density(tau_v);
      if (accept(lr)) tau_v = tn;
    }
    {
      const double eps = options.log_scale_sd * normal(rng);
      const double tn = tau_s * std::exp(eps);
      double q = 0.0;
      for (int d = 0; d < nd; ++d) q += quad(s.col(d));
      const double lr = eps + 0.5 * rank * nd * eps - 0.5 * (tn - tau_s) * q + spec.tau_s_prior.log_density(tn) -
                        spec.tau_s_prior.log_density(tau_s);
      if (accept(lr)) tau_s = tn;
    }
    // Scaling move (delta c, v / c, tau_v c^2); the predictor is unchanged.
    {
      const double eps = options.log_scale_sd * normal(rng);
      const double c = std::exp(eps);
      double lr = (nd + 2) * eps + spec.tau_v_prior.log_density(tau_v * c * c) - spec.tau_v_prior.log_density(tau_v);
      for (int d = 0; d < nd; ++d) {
        lr += spec.delta_prior.log_density(delta[static_cast<std::size_t>(d)] * c) -
              spec.delta_prior.log_density(delta[static_cast<std::size_t>(d)]);
      }
      if (accept(lr)) {
        for (auto& dl : delta) dl *= c;
        v /= c;
        tau_v *= c * c;
      }
    }

    if ((it + 1) % options.thin == 0) {
      const int r = (it + 1) / options.thin - 1;
      int col = 0;
      for (int d = 0; d < nd; ++d) table.samples(r, col++) = alpha[static_cast<std::size_t>(d)];
      for (int d = 0; d < nd; ++d) table.samples(r, col++) = delta[static_cast<std::size_t>(d)];
      table.samples(r, col++) = tau_v;
      table.samples(r, col++) = tau_s;
      if (options.store_fields) {
        for (int i = 0; i < n; ++i) table.samples(r, col++) = v[i];
        for (int d = 0; d < nd; ++d) {
          for (int i = 0; i < n; ++i) table.samples(r, col++) = s(i, d);
        }
      }
    }
  }
  return table;
}

// --- quadrature -----------------------------------------------------------------------

namespace {

struct QuadModel {
  const LatentModel& model;
  int latent = 0;
  int free = 0;
  HyperPrior prior;
  std::vector<std::vector<std::pair<int, double>>> rows;

  explicit QuadModel(const LatentModel& m) : model(m), prior(HyperPrior::gamma(1.0, 1.0)) {
    latent = m.latent_dim();
    free = m.free_hyper_count();
    if (latent < 1 || latent > 2 || free > 1) {
      throw DimensionMismatch("quadrature needs 1 or 2 latent entries and at most one free hyperparameter");
    }
    if (m.constraint_count() > 0) throw DimensionMismatch("quadrature does not handle linear constraints");
    if (free == 1) prior = m.hypers()[static_cast<std::size_t>(m.free_hypers()[0])].prior;
    const auto& a = m.design();
    rows.resize(static_cast<std::size_t>(a.rows()));
    for (int r = 0; r < a.outerSize(); ++r) {
      for (RowSparseMatrix::InnerIterator it(a, r); it; ++it) rows[static_cast<std::size_t>(r)].emplace_back(static_cast<int>(it.col()), it.value());
    }
  }

  // Hyper-dependent pieces at internal coordinate z.
  struct Context {
    bool valid = false;
    double base = 0.0;  // log hyper prior + Jacobian + latent normalizer
    DenseMatrix q;
    double obs_prec = 1.0;
  };

  Context context(double z) const {
    Context c;
    std::vector<double> hv;
    if (free == 1) {
      const double t = prior.from_internal(z);
      if (!prior.in_support(t) || !std::isfinite(t)) return c;
      const std::vector<double> f{t};
      hv = model.expand_hypers(f);
      c.base = model.log_hyper_prior(hv) + prior.log_jacobian(z);
    } else {
      hv = model.expand_hypers(std::vector<double>{});
    }
    c.q = model.precision_matrix(hv).to_dense();
    c.base += model.log_latent_prior(Vector::Zero(latent), hv);
    if (model.family() == Family::gaussian) c.obs_prec = hv[static_cast<std::size_t>(model.observation_precision_hyper())];
    c.valid = std::isfinite(c.base);
    return c;
  }

  double log_lik(const double* x, const Context& c) const {
    const Vector& y = model.y();
    const Vector& off = model.offset();
    double s = 0.0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const double yr = y[static_cast<int>(r)];
      if (std::isnan(yr)) continue;
      double eta = off.size() ? off[static_cast<int>(r)] : 0.0;
      for (const auto& [j, a] : rows[r]) eta += a * x[j];
      if (model.family() == Family::poisson) {
        s += yr * eta - std::exp(eta) - std::lgamma(yr + 1.0);
      } else {
        const double d = yr - eta;
        s += 0.5 * (std::log(c.obs_prec) - kLog2Pi) - 0.5 * c.obs_prec * d * d;
      }
    }
    return s;
  }

  double log_f(const double* x, const Context& c) const {
    double qf = 0.0;
    for (int i = 0; i < latent; ++i) {
      for (int j = 0; j < latent; ++j) qf += x[i] * c.q(i, j) * x[j];
    }
    return c.base - 0.5 * qf + log_lik(x, c);
  }
};

struct Box {
  std::vector<double> lo;
  std::vector<double> hi;
};

// Visits the P^d tensor grid on `box` with the hyper axis (if any) outermost.
template <class Fn>
void for_grid(const QuadModel& qm, const Box& box, int points, Fn&& fn) {
  const int d = qm.latent + qm.free;
  std::vector<double> step(static_cast<std::size_t>(d));
  for (int k = 0; k < d; ++k) step[static_cast<std::size_t>(k)] = (box.hi[static_cast<std::size_t>(k)] - box.lo[static_cast<std::size_t>(k)]) / (points - 1);
  const int hyper_points = qm.free ? points : 1;
  const int second = qm.latent == 2 ? points : 1;
  double x[2] = {0.0, 0.0};
  for (int h = 0; h < hyper_points; ++h) {
    const double z = qm.free ? box.lo[static_cast<std::size_t>(qm.latent)] + h * step[static_cast<std::size_t>(qm.latent)] : 0.0;
    const auto ctx = qm.context(z);
    for (int a = 0; a < points; ++a) {
      x[0] = box.lo[0] + a * step[0];
      for (int b = 0; b < second; ++b) {
        if (qm.latent == 2) x[1] = box.lo[1] + b * step[1];
        const double lf = ctx.valid ? qm.log_f(x, ctx) : -std::numeric_limits<double>::infinity();
        fn(a, b, h, x, z, std::isfinite(lf) ? lf : -std::numeric_limits<double>::infinity());
      }
    }
  }
}

}  // namespace

QuadratureResult quadrature_oracle(const LatentModel& model, int points) {
  if (points < 5 || points % 2 == 0) throw ConfigError("quadrature needs an odd number of points, at least 5");
  const QuadModel qm(model);
  const int d = qm.latent + qm.free;

  Box box;
  for (int k = 0; k < qm.latent; ++k) {
    box.lo.push_back(-25.0);
    box.hi.push_back(25.0);
  }
  if (qm.free) {
    box.lo.push_back(-20.0);
    box.hi.push_back(20.0);
  }
  const Box outer = box;

  // Zoom onto the region within 40 log units of the maximum.
  constexpr int kScan = 61;
  double lmax = -std::numeric_limits<double>::infinity();
  for (int pass = 0; pass < 4; ++pass) {
    double m = -std::numeric_limits<double>::infinity();
    for_grid(qm, box, kScan, [&](int, int, int, const double*, double, double lf) { m = std::max(m, lf); });
    if (!std::isfinite(m)) throw GridTooCoarse("posterior is not finite anywhere on the search box");
    std::vector<int> kmin(static_cast<std::size_t>(d), kScan);
    std::vector<int> kmax(static_cast<std::size_t>(d), -1);
    for_grid(qm, box, kScan, [&](int a, int b, int h, const double*, double, double lf) {
      if (lf < m - 40.0) return;
      const int idx[3] = {a, qm.latent == 2 ? b : h, h};
      for (int k = 0; k < d; ++k) {
        kmin[static_cast<std::size_t>(k)] = std::min(kmin[static_cast<std::size_t>(k)], idx[k]);
        kmax[static_cast<std::size_t>(k)] = std::max(kmax[static_cast<std::size_t>(k)], idx[k]);
      }
    });
    Box next;
    for (int k = 0; k < d; ++k) {
      const double step = (box.hi[static_cast<std::size_t>(k)] - box.lo[static_cast<std::size_t>(k)]) / (kScan - 1);
      next.lo.push_back(std::max(outer.lo[static_cast<std::size_t>(k)], box.lo[static_cast<std::size_t>(k)] + (kmin[static_cast<std::size_t>(k)] - 2) * step));
      next.hi.push_back(std::min(outer.hi[static_cast<std::size_t>(k)], box.lo[static_cast<std::size_t>(k)] + (kmax[static_cast<std::size_t>(k)] + 2) * step));
    }
    box = std::move(next);
    lmax = m;
  }

  std::vector<double> step(static_cast<std::size_t>(d));
  for (int k = 0; k < d; ++k) step[static_cast<std::size_t>(k)] = (box.hi[static_cast<std::size_t>(k)] - box.lo[static_cast<std::size_t>(k)]) / (points - 1);
  auto fine_w = [&](int i) { return (i == 0 || i == points - 1) ? 0.5 : 1.0; };
  auto coarse_w = [&](int i) { return i % 2 ? 0.0 : ((i == 0 || i == points - 1) ? 1.0 : 2.0); };

  double fine = 0.0;
  double coarse = 0.0;
  std::vector<std::vector<double>> marg(static_cast<std::size_t>(d), std::vector<double>(static_cast<std::size_t>(points), 0.0));
  std::vector<double> first(static_cast<std::size_t>(d), 0.0);
  double peak = -std::numeric_limits<double>::infinity();
  for_grid(qm, box, points, [&](int a, int b, int h, const double* x, double z, double lf) {
    peak = std::max(peak, lf);
    if (!std::isfinite(lf)) return;
    const double f = std::exp(lf - lmax);
    const int idx[3] = {a, qm.latent == 2 ? b : h, h};
    double wf = 1.0;
    double wc = 1.0;
    for (int k = 0; k < d; ++k) {
      wf *= fine_w(idx[k]);
      wc *= coarse_w(idx[k]);
    }
    fine += f * wf;
    coarse += f * wc;
    for (int k = 0; k < d; ++k) {
      marg[static_cast<std::size_t>(k)][static_cast<std::size_t>(idx[k])] += f * wf / fine_w(idx[k]);
      const double coord = k < qm.latent ? x[k] : qm.prior.from_internal(z);
      first[static_cast<std::size_t>(k)] += coord * f * wf;
    }
  });
  if (peak > lmax + 30.0) throw GridTooCoarse("posterior maximum was missed by the search scan");
  double cell = 1.0;
  for (double s : step) cell *= s;
  const double t_fine = fine * cell;
  const double t_coarse = coarse * cell;
  const double romberg = (4.0 * t_fine - t_coarse) / 3.0;
  if (!(romberg > 0.0) || std::abs(std::log(romberg) - std::log(t_fine)) > kQuadratureAgreement) {
    throw GridTooCoarse("quadrature refinement disagrees beyond tolerance");
  }

  QuadratureResult out;
  out.log_marginal_likelihood = lmax + std::log(romberg);
  for (int k = 0; k < d; ++k) {
    std::vector<double> values(static_cast<std::size_t>(points));
    std::vector<double> dens(static_cast<std::size_t>(points));
    for (int i = 0; i < points; ++i) {
      const double c = box.lo[static_cast<std::size_t>(k)] + i * step[static_cast<std::size_t>(k)];
      if (k < qm.latent) {
        values[static_cast<std::size_t>(i)] = c;
        dens[static_cast<std::size_t>(i)] = marg[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)];
      } else {
        values[static_cast<std::size_t>(i)] = qm.prior.from_internal(c);
        dens[static_cast<std::size_t>(i)] = marg[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)] * std::exp(-qm.prior.log_jacobian(c));
      }
    }
    const double mean = first[static_cast<std::size_t>(k)] / fine;
    if (k < qm.latent) {
      out.latent_means.push_back(mean);
      out.latent_marginals.emplace_back(std::move(values), std::move(dens));
    } else {
      out.hyper_means.push_back(mean);
      out.hyper_marginals.emplace_back(std::move(values), std::move(dens));
    }
  }
  return out;
}

// --- sample comparison ----------------------------------------------------------------

MarginalGrid histogram_grid(std::span<const double> samples, int bins) {
  if (samples.size() < 2) throw EmptyList("a histogram needs at least two samples");
  std::vector<double> x(samples.begin(), samples.end());
  std::sort(x.begin(), x.end());
  const double lo = x.front();
  const double hi = x.back();
  if (!(hi > lo)) return spike_grid(lo, std::max(1e-8, 1e-6 * std::abs(lo)));
  const std::size_t m = x.size();
  if (bins <= 0) {
    const double iqr = x[3 * m / 4] - x[m / 4];
    const double h = 2.0 * iqr * std::pow(static_cast<double>(m), -1.0 / 3.0);
    bins = h > 0.0 ? static_cast<int>(std::ceil((hi - lo) / h)) : 10;
    bins = std::clamp(bins, 10, 200);
  }
  const double width = (hi - lo) / bins;
  std::vector<double> count(static_cast<std::size_t>(bins), 0.0);
  for (double v : x) {
    const int b = std::min(bins - 1, static_cast<int>((v - lo) / width));
    count[static_cast<std::size_t>(b)] += 1.0;
  }
  std::vector<double> values{lo};
  std::vector<double> dens{count.front() / (m * width)};
  for (int b = 0; b < bins; ++b) {
    values.push_back(lo + (b + 0.5) * width);
    dens.push_back(count[static_cast<std::size_t>(b)] / (m * width));
  }
  values.push_back(hi);
  dens.push_back(count.back() / (m * width));
  return MarginalGrid(std::move(values), std::move(dens));
}

double total_variation(const MarginalGrid& grid, std::span<const double> samples, int bins) {
  return total_variation(grid, histogram_grid(samples, bins));
}

}  // namespace inlamh
