#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "inlamh/econ.hpp"
#include "inlamh/errors.hpp"
#include "inlamh/laplace.hpp"
#include "inlamh/oracle.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numeric>
#include <random>

using namespace inlamh;

namespace {

using Lists = std::vector<std::vector<int>>;
constexpr double kLog2Pi = 1.8378770664093454835606594728112;

ManskiSpec two_cycle() {
  ManskiSpec s;
  s.y = Vector(2);
  s.y << 1.0, 3.0;
  s.x = DenseMatrix(2, 1);
  s.x << 0.5, -1.0;
  s.covariates = {"x"};
  s.w = row_standardize(Adjacency(Lists{{1}, {0}}));
  return s;
}

ManskiSpec columbus() {
  return load_manski("data/columbus/columbus.gal", "data/columbus/columbus.csv", "CRIME", {"INC", "HOVAL"});
}

double log_mvn_zero(const Vector& y, const DenseMatrix& cov) {
  Eigen::LLT<DenseMatrix> llt(cov);
  const Vector a = llt.matrixL().solve(y);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * y.size() * kLog2Pi - 0.5 * logdet - 0.5 * a.squaredNorm();
}

// log N(y~; 0, X~ X~' / b + I / tau) + log prior(tau)
double closed_form_joint(const ManskiFamily& f, double rho, double lambda, double tau) {
  const auto& s = f.spec();
  const DenseMatrix xt = f.transformed_design(lambda);
  const DenseMatrix cov = xt * xt.transpose() / s.beta_precision + DenseMatrix::Identity(s.n(), s.n()) / tau;
  return log_mvn_zero(f.transformed_response(rho, lambda), cov) + s.precision_prior.log_density(tau);
}

ManskiSpec simulated(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  ManskiSpec s;
  const auto adj = Adjacency::lattice(5, 6);
  s.w = row_standardize(adj);
  const int n = adj.size();
  s.x = DenseMatrix(n, 2);
  s.y = Vector(n);
  for (int i = 0; i < n; ++i) {
    s.x(i, 0) = 1.0;
    s.x(i, 1) = z(rng);
    s.y[i] = 1.0 + 2.0 * s.x(i, 1) + z(rng);
  }
  s.covariates = {std::string(kIntercept), "x"};
  return s;
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

}  // namespace

TEST_CASE("transformed response and design") {
  const ManskiFamily f(two_cycle());
  CHECK((f.transformed_response(0.0, 0.0) - f.spec().y).norm() == 0.0);
  CHECK((f.transformed_design(0.0) - f.spec().x).norm() == 0.0);
  const std::vector<double> origin{0.0, 0.0};
  CHECK(f.log_correction(origin) == doctest::Approx(0.0).epsilon(1e-15));

  // y - 0.5 W y with W the swap
  const Vector r = f.transformed_response(0.5, 0.0);
  CHECK(r[0] == doctest::Approx(1.0 - 1.5));
  CHECK(r[1] == doctest::Approx(3.0 - 0.5));
  const std::vector<double> half{0.5, 0.0};
  CHECK(f.log_correction(half) == doctest::Approx(std::log(0.75)).epsilon(1e-14));

  // lambda filter on the response and design
  const Vector rl = f.transformed_response(0.0, -0.5);
  CHECK(rl[0] == doctest::Approx(1.0 + 1.5));
  const DenseMatrix xl = f.transformed_design(-0.5);
  CHECK(xl(1, 0) == doctest::Approx(-1.0 + 0.25));
}

TEST_CASE("lagged design columns") {
  auto s = columbus();
  s.lagged = true;
  CHECK(s.latent_names() == std::vector<std::string>{"(Intercept)", "INC", "HOVAL", "lag.INC", "lag.HOVAL"});
  const ManskiFamily f(s);
  const DenseMatrix x0 = f.transformed_design(0.0);
  REQUIRE(x0.cols() == 5);
  const DenseMatrix wx = s.w.w * s.x;
  CHECK((x0.col(3) - wx.col(1)).norm() < 1e-12);
  CHECK((x0.col(4) - wx.col(2)).norm() < 1e-12);
  const std::vector<double> t{0.1, 0.2};
  CHECK(f.build(t).latent_dim() == 5);
}

TEST_CASE("support boundary") {
  const ManskiFamily f(two_cycle());
  const std::vector<double> edge{1.0, 0.0}, inside{0.99, -0.99}, outside{0.0, -1.001};
  CHECK_FALSE(f.in_support(edge));
  CHECK(f.in_support(inside));
  CHECK_FALSE(f.in_support(outside));
  CHECK_THROWS_AS(f.build(edge), OutOfSupport);
  CHECK(f.log_prior(edge) == -INFINITY);
  CHECK(f.log_prior(inside) == doctest::Approx(-2.0 * std::log(2.0)));
}

TEST_CASE("conditional fit is exact for the gaussian model") {
  const ManskiFamily f(columbus());
  for (const auto& [rho, lambda] : {std::pair{0.0, 0.0}, std::pair{0.4, -0.2}, std::pair{-0.3, 0.6}}) {
    const std::vector<double> theta{rho, lambda};
    const auto model = f.build(theta);
    for (double tau : {0.005, 0.01, 0.02}) {
      const auto h = model.expand_hypers(std::vector<double>{tau});
      CHECK(log_joint_at_mode(model, h) == doctest::Approx(closed_form_joint(f, rho, lambda, tau)).epsilon(1e-10));

      // conditional posterior of beta against generalized least squares
      const DenseMatrix xt = f.transformed_design(lambda);
      const DenseMatrix prec = tau * xt.transpose() * xt + f.spec().beta_precision * DenseMatrix::Identity(3, 3);
      const Vector mean = prec.ldlt().solve(tau * xt.transpose() * f.transformed_response(rho, lambda));
      const auto ga = gaussian_approx(model, h);
      CHECK((ga.mode - mean).norm() < 1e-8 * (1.0 + mean.norm()));
      const std::vector<int> all{0, 1, 2};
      const DenseMatrix cov = prec.inverse();
      CHECK((ga.covariance(all) - cov).norm() < 1e-8 * cov.norm());
    }
  }
}

TEST_CASE("conditional evidence against quadrature over the precision") {
  const ManskiFamily f(columbus());
  for (const auto& [rho, lambda] : {std::pair{0.0, 0.0}, std::pair{0.35, 0.2}}) {
    const std::vector<double> theta{rho, lambda};
    // integrate over log tau
    const int m = 40000;
    const double lo = std::log(1e-4), hi = std::log(1.0), h = (hi - lo) / m;
    std::vector<double> lj(m + 1);
    double peak = -INFINITY;
    for (int k = 0; k <= m; ++k) {
      const double z = lo + k * h;
      lj[static_cast<std::size_t>(k)] = closed_form_joint(f, rho, lambda, std::exp(z)) + z;
      peak = std::max(peak, lj[static_cast<std::size_t>(k)]);
    }
    double s = 0.0;
    for (int k = 0; k <= m; ++k) s += ((k == 0 || k == m) ? 0.5 : 1.0) * std::exp(lj[static_cast<std::size_t>(k)] - peak);
    const double ref = peak + std::log(s * h) + f.log_correction(theta);
    const auto ev = f.evaluate(theta, LaplaceOptions{}, false);
    CHECK(ev.log_ml == doctest::Approx(ref).epsilon(1e-4));
    CHECK(std::abs(ev.log_ml - ref) < 0.02);
  }
}

TEST_CASE("impact multipliers") {
  const auto two = row_standardize(Adjacency(Lists{{1}, {0}}));
  const ImpactCalculator c2(two);
  const auto m = c2(0.5);
  // (I - 0.5 W)^{-1} = [[4/3, 2/3], [2/3, 4/3]]
  CHECK(m.direct == doctest::Approx(4.0 / 3.0).epsilon(1e-14));
  CHECK(m.total == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(m.indirect == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(m.lag_direct == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK_THROWS_AS(c2(1.0), OutOfSupport);

  const auto w = columbus().w;
  const ImpactCalculator cc(w);
  const DenseMatrix d = w.dense();
  for (double rho : {-0.8, -0.2, 0.0, 0.3, 0.7, 0.95}) {
    const auto mm = cc(rho);
    const DenseMatrix inv = (DenseMatrix::Identity(49, 49) - rho * d).inverse();
    CHECK(inv.sum() / 49.0 == doctest::Approx(1.0 / (1.0 - rho)).epsilon(1e-8));
    CHECK(mm.total == doctest::Approx(inv.sum() / 49.0).epsilon(1e-8));
    CHECK(mm.direct == doctest::Approx(inv.trace() / 49.0).epsilon(1e-10));
    CHECK(mm.total == doctest::Approx(mm.direct + mm.indirect).epsilon(1e-15));
    CHECK(mm.lag_direct == doctest::Approx((inv * d).trace() / 49.0).epsilon(1e-10));
  }
  CHECK(cc(0.0).direct == doctest::Approx(1.0));
}

TEST_CASE("impact marginals on fixed draws") {
  const auto spec = columbus();
  const ManskiFamily f(spec);
  LaplaceOptions opt;
  opt.track = {0, 1, 2};
  ManskiFit fit;
  fit.coefficients = spec.latent_names();
  const std::vector<double> origin{0.0, 0.0};
  fit.chain.draws = {origin};
  fit.chain.fits = {f.evaluate(origin, opt, true).fit};
  const double beta = fit.chain.fits[0]->latent_mean(1);

  const auto at_zero = impacts(fit, spec, "INC");
  CHECK(summarize(at_zero.direct).mean == doctest::Approx(beta).epsilon(1e-3));
  CHECK(summarize(at_zero.total).mean == doctest::Approx(beta).epsilon(1e-3));
  const auto ind = summarize(at_zero.indirect);
  CHECK(std::abs(ind.mean) < 1e-9);
  CHECK(ind.q975 - ind.q025 < 0.25 * fit.chain.fits[0]->latent_sd(1));

  const std::vector<double> half{0.5, 0.0};
  fit.chain.draws = {half};
  fit.chain.fits = {f.evaluate(half, opt, true).fit};
  const double b2 = fit.chain.fits[0]->latent_mean(1);
  const auto mult = ImpactCalculator(spec.w)(0.5);
  const auto at_half = impacts(fit, spec, "INC");
  CHECK(summarize(at_half.direct).mean == doctest::Approx(mult.direct * b2).epsilon(1e-3));
  CHECK(summarize(at_half.total).mean == doctest::Approx(2.0 * b2).epsilon(1e-3));
  CHECK(summarize(at_half.indirect).mean == doctest::Approx(mult.indirect * b2).epsilon(1e-3));

  CHECK_THROWS_AS(impacts(fit, spec, "NOPE"), CovariateNotFound);
  CHECK_THROWS_AS(impacts(fit, spec, std::string(kIntercept)), CovariateNotFound);
  ManskiFit empty;
  CHECK_THROWS_AS(impacts(empty, spec, "INC"), EmptyChain);
}

TEST_CASE("loading columbus") {
  const auto s = columbus();
  CHECK(s.n() == 49);
  CHECK(s.x.cols() == 3);
  CHECK(s.covariates == std::vector<std::string>{"(Intercept)", "INC", "HOVAL"});
  CHECK(s.y[0] == doctest::Approx(15.72598));
  CHECK(s.x(1, 2) == doctest::Approx(44.567001));
  CHECK_THROWS_AS(load_manski("data/columbus/columbus.gal", "data/columbus/columbus.csv", "CRIME", {"MISSING"}),
                  DimensionMismatch);
  const auto no_int = load_manski("data/columbus/columbus.gal", "data/columbus/columbus.csv", "CRIME", {"INC"}, false);
  CHECK(no_int.x.cols() == 1);

  auto bad = two_cycle();
  bad.covariates = {"a", "b"};
  CHECK_THROWS_AS(ManskiFamily{bad}, DimensionMismatch);
}

TEST_CASE("engine chain agrees with the exact sampler on simulated data") {
  const auto spec = simulated(21);
  auto cfg = default_manski_chain();
  cfg.burnin = 200;
  cfg.iterations = 2200;
  cfg.thin = 2;
  cfg.seed = 4;
  const auto fit = fit_manski(spec, cfg);
  CHECK(fit.chain.draws.size() == 1000);

  OracleOptions oo;
  oo.thin = 5;
  const auto table = oracle_manski(spec, 60000, 4, oo);
  const int skip = table.rows() / 10;
  for (const std::string name : {"rho", "lambda"}) {
    const int j = name == "rho" ? 0 : 1;
    const double engine = mean_of(fit.chain.coordinate(j));
    const double exact = mean_of(table.column(name, skip));
    CHECK(std::abs(engine - exact) < 0.1);
    CHECK(std::abs(engine) < 0.5);
  }
  CHECK(summarize(fit.coefficient_marginals[1]).mean == doctest::Approx(mean_of(table.column("x", skip))).epsilon(0.05));
}
