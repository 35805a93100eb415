#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "inlamh/errors.hpp"
#include "inlamh/gmrf.hpp"
#include "inlamh/laplace.hpp"
#include "inlamh/oracle.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

using namespace inlamh;

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

LatentModel scalar_toy(Family family, double y, bool free_precision = false) {
  Vector obs(1);
  obs << y;
  ModelBuilder b(family, obs);
  b.add_block(iid(1, "x", "tau"));
  if (free_precision) {
    b.hyper("tau", HyperPrior::gamma(2.0, 1.0));
  } else {
    b.fixed_hyper("tau", 1.0);
  }
  if (family == Family::gaussian) b.fixed_hyper("precision", 1.0);
  b.design_entry(0, 0, 1.0);
  return b.build();
}

double grid_moment(const MarginalGrid& g, double center, int power) {
  std::vector<double> f(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) f[i] = std::pow(g.values()[i] - center, power) * g.densities()[i];
  return trapezoid(g.values(), f);
}

ManskiSpec small_regression() {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> z;
  ManskiSpec s;
  const auto adj = Adjacency::lattice(4, 5);
  s.w = row_standardize(adj);
  const int n = adj.size();
  s.x = DenseMatrix(n, 2);
  s.y = Vector(n);
  for (int i = 0; i < n; ++i) {
    s.x(i, 0) = 1.0;
    s.x(i, 1) = z(rng);
    s.y[i] = 1.0 - s.x(i, 1) + 0.7 * z(rng);
  }
  s.covariates = {std::string(kIntercept), "x"};
  s.precision_prior = HyperPrior::gamma(2.0, 1.0);
  return s;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// Sample autocorrelation sum with the initial positive sequence cut.
double ess(const std::vector<double>& v) {
  const std::size_t n = v.size();
  const double m = mean_of(v);
  double c0 = 0.0;
  for (double x : v) c0 += (x - m) * (x - m);
  double tau = 1.0;
  for (std::size_t lag = 1; lag < n / 2; ++lag) {
    double c = 0.0;
    for (std::size_t i = lag; i < n; ++i) c += (v[i] - m) * (v[i - lag] - m);
    if (c <= 0.0) break;
    tau += 2.0 * c / c0;
  }
  return static_cast<double>(n) / tau;
}

}  // namespace

TEST_CASE("gaussian conjugate toy has the closed-form evidence") {
  const auto q = quadrature_oracle(scalar_toy(Family::gaussian, 1.0));
  const double ref = -0.5 * kLog2Pi - 0.5 * std::log(2.0) - 0.25;
  CHECK(ref == doctest::Approx(-1.5155).epsilon(1e-4));
  CHECK(q.log_marginal_likelihood == doctest::Approx(ref).epsilon(1e-6));
  REQUIRE(q.latent_means.size() == 1);
  CHECK(q.latent_means[0] == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(summarize(q.latent_marginals[0]).sd == doctest::Approx(std::sqrt(0.5)).epsilon(1e-4));
}

TEST_CASE("poisson single-site toy") {
  const auto q = quadrature_oracle(scalar_toy(Family::poisson, 3.0));
  // bisection on 3 - exp(x) - x = 0
  double lo = 0.0, hi = 2.0;
  for (int k = 0; k < 100; ++k) {
    const double mid = 0.5 * (lo + hi);
    (3.0 - std::exp(mid) - mid > 0.0 ? lo : hi) = mid;
  }
  CHECK(lo == doctest::Approx(0.7922).epsilon(1e-4));
  const auto& g = q.latent_marginals[0];
  std::size_t arg = 0;
  for (std::size_t i = 1; i < g.size(); ++i) {
    if (g.densities()[i] > g.densities()[arg]) arg = i;
  }
  const double step = g.values()[1] - g.values()[0];
  CHECK(std::abs(g.values()[arg] - lo) <= step);

  // brute-force evidence on a fine grid
  double s = 0.0;
  const double h = 1e-4;
  for (double x = -12.0; x <= 8.0; x += h) s += std::exp(3.0 * x - std::exp(x) - std::lgamma(4.0) - 0.5 * kLog2Pi - 0.5 * x * x);
  CHECK(q.log_marginal_likelihood == doctest::Approx(std::log(s * h)).epsilon(1e-6));
}

TEST_CASE("symmetric model gives symmetric marginals") {
  const auto q = quadrature_oracle(scalar_toy(Family::gaussian, 0.0));
  const auto& g = q.latent_marginals[0];
  const double sd = std::sqrt(grid_moment(g, 0.0, 2));
  CHECK(std::abs(q.latent_means[0]) < 1e-8);
  CHECK(std::abs(grid_moment(g, 0.0, 3) / (sd * sd * sd)) < 1e-6);
}

TEST_CASE("two latent entries and one hyper") {
  Vector y(2);
  y << 2, 5;
  ModelBuilder b(Family::poisson, y);
  b.add_block(iid(2, "x", "tau"));
  b.hyper("tau", HyperPrior::gamma(2.0, 1.0));
  b.design_entry(0, 0, 1.0).design_entry(1, 1, 1.0);
  const auto model = b.build();
  const auto q = quadrature_oracle(model);
  REQUIRE(q.latent_means.size() == 2);
  REQUIRE(q.hyper_marginals.size() == 1);
  CHECK(q.latent_means[1] > q.latent_means[0]);
  CHECK(q.hyper_marginals[0].integral() == doctest::Approx(1.0).epsilon(1e-6));

  // evidence by brute force on (x1, x2, log tau)
  const int m = 161;
  const double xlo = -6.0, xhi = 4.0, zlo = -6.0, zhi = 4.0;
  const double hx = (xhi - xlo) / (m - 1), hz = (zhi - zlo) / (m - 1);
  double s = 0.0;
  for (int k = 0; k < m; ++k) {
    const double z = zlo + k * hz, tau = std::exp(z);
    const double lp = std::log(tau) - tau + z;  // gamma(2, 1) density times Jacobian
    for (int i = 0; i < m; ++i) {
      const double a = xlo + i * hx;
      for (int j = 0; j < m; ++j) {
        const double c = xlo + j * hx;
        const double l = 2 * a - std::exp(a) - std::lgamma(3.0) + 5 * c - std::exp(c) - std::lgamma(6.0) +
                         std::log(tau) - kLog2Pi - 0.5 * tau * (a * a + c * c) + lp;
        s += std::exp(l);
      }
    }
  }
  CHECK(q.log_marginal_likelihood == doctest::Approx(std::log(s * hx * hx * hz)).epsilon(2e-3));
}

TEST_CASE("quadrature refuses large models and coarse grids") {
  CHECK_THROWS_AS(quadrature_oracle(scalar_toy(Family::gaussian, 1.0), 4), ConfigError);
  Vector y(3);
  y << 1, 2, 3;
  ModelBuilder b(Family::poisson, y);
  b.add_block(iid(3, "x", "tau"));
  b.fixed_hyper("tau", 1.0);
  for (int i = 0; i < 3; ++i) b.design_entry(i, i, 1.0);
  CHECK_THROWS(quadrature_oracle(b.build()));

  // five points cannot resolve a posterior this sharp
  Vector big(1);
  big << 400;
  ModelBuilder c(Family::poisson, big);
  c.add_block(iid(1, "x", "tau"));
  c.hyper("tau", HyperPrior::gamma(2.0, 1.0));
  c.design_entry(0, 0, 1.0);
  CHECK_THROWS_AS(quadrature_oracle(c.build(), 5), GridTooCoarse);
}

TEST_CASE("manski sampler at fixed autoregressive parameters") {
  const auto spec = small_regression();
  OracleOptions opt;
  opt.autoregressive_sd = 1e-12;
  const auto t = oracle_manski(spec, 40000, 3, opt);
  REQUIRE(t.names == std::vector<std::string>{"rho", "lambda", "(Intercept)", "x", "precision"});
  CHECK(std::abs(t.column("rho").back()) < 1e-6);

  // conjugate posterior by quadrature over the precision
  const int n = spec.n();
  const DenseMatrix& x = spec.x;
  const int m = 4000;
  const double lo = std::log(1e-2), hi = std::log(100.0), h = (hi - lo) / m;
  std::vector<double> lw(m + 1);
  std::vector<Vector> means(m + 1);
  std::vector<DenseMatrix> covs(m + 1);
  double peak = -INFINITY;
  for (int k = 0; k <= m; ++k) {
    const double tau = std::exp(lo + k * h);
    const DenseMatrix cov = x * x.transpose() / spec.beta_precision + DenseMatrix::Identity(n, n) / tau;
    Eigen::LLT<DenseMatrix> llt(cov);
    const Vector a = llt.matrixL().solve(spec.y);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    lw[static_cast<std::size_t>(k)] = -0.5 * logdet - 0.5 * a.squaredNorm() + spec.precision_prior.log_density(tau) + std::log(tau);
    peak = std::max(peak, lw[static_cast<std::size_t>(k)]);
    const DenseMatrix prec = tau * x.transpose() * x + spec.beta_precision * DenseMatrix::Identity(2, 2);
    covs[static_cast<std::size_t>(k)] = prec.inverse();
    means[static_cast<std::size_t>(k)] = covs[static_cast<std::size_t>(k)] * (tau * x.transpose() * spec.y);
  }
  double wsum = 0.0;
  Vector mean = Vector::Zero(2);
  Vector second = Vector::Zero(2);
  for (int k = 0; k <= m; ++k) {
    const double w = std::exp(lw[static_cast<std::size_t>(k)] - peak);
    wsum += w;
    mean += w * means[static_cast<std::size_t>(k)];
    second += w * (covs[static_cast<std::size_t>(k)].diagonal() + means[static_cast<std::size_t>(k)].cwiseAbs2());
  }
  mean /= wsum;
  second /= wsum;
  for (int j = 0; j < 2; ++j) {
    const auto draws = t.column(spec.covariates[static_cast<std::size_t>(j)], 1000);
    const double sd = std::sqrt(second[j] - mean[j] * mean[j]);
    const double se = sd_of(draws) / std::sqrt(ess(draws));
    CHECK(std::abs(mean_of(draws) - mean[j]) < 3.0 * se);
    CHECK(sd_of(draws) == doctest::Approx(sd).epsilon(0.05));
  }
}

TEST_CASE("manski sampler determinism and thinning") {
  const auto spec = small_regression();
  OracleOptions opt;
  opt.thin = 4;
  const auto a = oracle_manski(spec, 400, 9, opt);
  const auto b = oracle_manski(spec, 400, 9, opt);
  const auto c = oracle_manski(spec, 400, 10, opt);
  CHECK(a.rows() == 100);
  CHECK(a.samples == b.samples);
  CHECK(a.samples != c.samples);
  CHECK_THROWS_AS(a.index("missing"), NameMismatch);
  CHECK_THROWS_AS(oracle_manski(spec, 0, 1), ConfigError);
  auto wrong = spec;
  wrong.precision_prior = HyperPrior::log_normal(0.0, 1.0);
  CHECK_THROWS_AS(oracle_manski(wrong, 10, 1), ConfigError);

  const auto path = std::filesystem::temp_directory_path() / "oracle_samples.csv";
  a.write_csv(path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "iteration,rho,lambda,(Intercept),x,precision");
}

TEST_CASE("dismap sampler on flat data") {
  DismapSpec s;
  s.adjacency = Adjacency::lattice(3, 3);
  s.observed = DenseMatrix::Constant(9, 2, 50.0);
  s.expected = DenseMatrix::Constant(9, 2, 40.0);
  s.observed(4, 1) = 60.0;
  const auto t = oracle_dismap(s, 30000, 2);
  const auto t2 = oracle_dismap(s, 200, 2);
  const auto t3 = oracle_dismap(s, 200, 2);
  CHECK(t2.samples == t3.samples);

  double worst = 0.0;
  for (int r = 0; r < t.rows(); ++r) {
    double sv = 0.0;
    for (int i = 0; i < 9; ++i) sv += t.samples(r, t.index("v[" + std::to_string(i) + "]"));
    worst = std::max(worst, std::abs(sv));
  }
  CHECK(worst < 1e-10);

  // with flat fields the intercept centres on log(sum O / sum E)
  const auto a1 = t.column("alpha.1", 3000);
  const double target = std::log(450.0 / 360.0);
  CHECK(std::abs(mean_of(a1) - target) < std::max(0.02, 3.0 * sd_of(a1) / std::sqrt(ess(a1))));

  OracleOptions no_fields;
  no_fields.store_fields = false;
  const auto lean = oracle_dismap(s, 100, 2, no_fields);
  CHECK(lean.names == std::vector<std::string>{"alpha.1", "alpha.2", "delta1", "delta2", "tau_v", "tau_s"});

  DismapSpec island = s;
  island.adjacency = Adjacency::from_edges(9, {{0, 1}, {1, 2}, {3, 4}, {4, 5}, {5, 6}, {6, 7}});
  CHECK_THROWS_AS(oracle_dismap(island, 10, 1), IslandError);
}

TEST_CASE("histograms and total variation") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x(100000);
  for (double& v : x) v = u(rng);
  const auto h = histogram_grid(x, 20);
  CHECK(h.size() == 22);
  for (std::size_t i = 1; i + 1 < h.size(); ++i) CHECK(h.densities()[i] == doctest::Approx(1.0).epsilon(0.05));

  std::normal_distribution<double> z;
  for (double& v : x) v = z(rng);
  CHECK(total_variation(gaussian_grid(0.0, 1.0, 401, 6.0), x) < 0.03);
  CHECK(total_variation(gaussian_grid(1.0, 1.0, 401, 6.0), x) == doctest::Approx(0.3829).epsilon(0.1));

  const std::vector<double> flat(10, 2.5);
  CHECK(summarize(histogram_grid(flat)).mean == doctest::Approx(2.5));
  CHECK_THROWS_AS(histogram_grid(std::vector<double>{1.0}), EmptyList);
}
