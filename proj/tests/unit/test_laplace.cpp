#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "inlamh/errors.hpp"
#include "inlamh/laplace.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <random>

using namespace inlamh;

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double log_mvn_zero_mean(const Vector& y, const DenseMatrix& cov) {
  Eigen::PartialPivLU<DenseMatrix> lu(cov);
  double logdet = 0.0;
  const DenseMatrix u = lu.matrixLU();
  for (int i = 0; i < u.rows(); ++i) logdet += std::log(std::abs(u(i, i)));
  return -0.5 * y.size() * kLog2Pi - 0.5 * logdet - 0.5 * y.dot(lu.solve(y));
}

DenseMatrix pseudo_inverse(const DenseMatrix& m) {
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(m);
  const Vector ev = es.eigenvalues();
  Vector inv(ev.size());
  for (int i = 0; i < ev.size(); ++i) inv[i] = ev[i] > 1e-9 * ev.maxCoeff() ? 1.0 / ev[i] : 0.0;
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

LatentModel conjugate_toy() {
  Vector y(1);
  y << 1.0;
  ModelBuilder b(Family::gaussian, y);
  b.add_block(iid(1, "x", "tau_x"));
  b.fixed_hyper("tau_x", 1.0);
  b.fixed_hyper("precision", 1.0);
  b.design_entry(0, 0, 1.0);
  return b.build();
}

LatentModel poisson_scalar(double tau) {
  Vector y(1);
  y << 3.0;
  ModelBuilder b(Family::poisson, y);
  b.add_block(iid(1, "x", "tau_x"));
  b.fixed_hyper("tau_x", tau);
  b.design_entry(0, 0, 1.0);
  return b.build();
}

}  // namespace

TEST_CASE("gaussian likelihood converges in one Newton step") {
  const auto m = conjugate_toy();
  const std::vector<double> h{1.0, 1.0};
  const auto g = gaussian_approx(m, h);
  CHECK(g.iterations == 1);
  CHECK(g.mode[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("conjugate toy log joint equals the closed-form evidence") {
  const auto m = conjugate_toy();
  const std::vector<double> h{1.0, 1.0};
  const double expected = -0.5 * std::log(2.0 * std::numbers::pi * 2.0) - 0.25;
  CHECK(log_joint_at_mode(m, h) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(-1.5155).epsilon(1e-4));
  const auto fit = explore_hypers(m);
  CHECK(fit.grid.size() == 1);
  CHECK(fit.grid[0].weight == 1.0);
  CHECK(fit.log_marginal_likelihood == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("poisson scalar mode matches bisection") {
  double lo = 0.0, hi = 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (3.0 - std::exp(mid) - mid > 0.0 ? lo : hi) = mid;
  }
  const auto m = poisson_scalar(1.0);
  const std::vector<double> h{1.0};
  const auto g = gaussian_approx(m, h);
  CHECK(std::abs(g.mode[0] - lo) < 1e-7);
  CHECK(g.mode[0] == doctest::Approx(0.7922).epsilon(1e-4));
}

TEST_CASE("poisson scalar log joint close to quadrature") {
  const auto m = poisson_scalar(1.0);
  const std::vector<double> h{1.0};
  // Midpoint quadrature of the exact joint over x.
  double s = 0.0;
  const double dx = 1e-4;
  for (double x = -10.0; x < 10.0; x += dx) {
    const double lp = -0.5 * kLog2Pi - 0.5 * x * x + 3.0 * x - std::exp(x) - std::log(6.0);
    s += std::exp(lp) * dx;
  }
  CHECK(std::abs(log_joint_at_mode(m, h) - std::log(s)) < 0.02);
}

TEST_CASE("zero precision is rejected") {
  const auto m = poisson_scalar(1.0);
  const std::vector<double> h{0.0};
  CHECK_THROWS_AS(gaussian_approx(m, h), NotPositiveDefinite);
}

TEST_CASE("shifting the hyper prior shifts the log joint") {
  Vector y(3);
  y << 0.3, -0.2, 1.1;
  auto make = [&](double mean) {
    ModelBuilder b(Family::gaussian, y);
    b.add_fixed_effects({"a"});
    b.hyper("precision", HyperPrior::normal(mean, 1.0));
    for (int i = 0; i < 3; ++i) b.design_entry(i, 0, 1.0);
    return b.build();
  };
  const auto m1 = make(2.0);
  const auto m2 = make(2.5);
  const std::vector<double> h{2.0, 0.001};
  const double shift = HyperPrior::normal(2.5, 1.0).log_density(2.0) - HyperPrior::normal(2.0, 1.0).log_density(2.0);
  CHECK(log_joint_at_mode(m2, h) - log_joint_at_mode(m1, h) == doctest::Approx(shift).epsilon(1e-12));
}

TEST_CASE("random gaussian models match dense conditioning") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.3, 3.0);
  for (int rep = 0; rep < 10; ++rep) {
    const int nobs = 6 + rep;
    const auto adj = Adjacency::lattice(2, 3);
    Vector y(nobs);
    for (int i = 0; i < nobs; ++i) y[i] = normal(rng);
    ModelBuilder b(Family::gaussian, y);
    b.add_fixed_effects({"a", "b"});
    b.add_block(besag(adj, "s", "tau_s"));
    b.add_block(iid(3, "u", "tau_u"));
    const double ts = unif(rng), tu = unif(rng), prec = unif(rng);
    b.fixed_hyper("tau_s", ts).fixed_hyper("tau_u", tu).fixed_hyper("precision", prec);
    DenseMatrix a = DenseMatrix::Zero(nobs, 11);
    for (int i = 0; i < nobs; ++i) {
      a(i, 0) = 1.0;
      a(i, 1) = normal(rng);
      a(i, 2 + i % 6) = 1.0;
      a(i, 8 + i % 3) = 0.5 + unif(rng);
    }
    for (int i = 0; i < nobs; ++i)
      for (int j = 0; j < 11; ++j)
        if (a(i, j) != 0.0) b.design_entry(i, j, a(i, j));
    const auto m = b.build();

    DenseMatrix sigma = DenseMatrix::Zero(11, 11);
    sigma(0, 0) = sigma(1, 1) = 1.0 / kFixedEffectPrecision;
    sigma.block(2, 2, 6, 6) = pseudo_inverse(ts * besag_structure(adj).to_dense());
    sigma.block(8, 8, 3, 3) = DenseMatrix::Identity(3, 3) / tu;
    const DenseMatrix cy = a * sigma * a.transpose() + DenseMatrix::Identity(nobs, nobs) / prec;
    const double expected = log_mvn_zero_mean(y, cy);
    const DenseMatrix gain = sigma * a.transpose() * cy.inverse();
    const Vector mean = gain * y;
    const DenseMatrix cov = sigma - gain * a * sigma;

    LaplaceOptions opt;
    for (int i = 0; i < 11; ++i) opt.track.push_back(i);
    const auto fit = explore_hypers(m, opt);
    CHECK(fit.log_marginal_likelihood == doctest::Approx(expected).epsilon(1e-8));
    for (int i = 0; i < 11; ++i) {
      CHECK(std::abs(fit.latent_mean(i) - mean[i]) < 1e-6 * std::max(1.0, std::abs(mean[i])));
      CHECK(std::abs(fit.latent_sd(i) - std::sqrt(cov(i, i))) < 1e-6 * std::max(1.0, std::sqrt(cov(i, i))));
    }
  }
}

TEST_CASE("one-hyper gaussian model evidence matches quadrature") {
  Vector y(5);
  y << 0.4, -0.3, 1.2, 0.8, 0.1;
  const auto prior = HyperPrior::gamma(2.0, 1.0);
  ModelBuilder b(Family::gaussian, y);
  b.add_block(iid(1, "mu", "tau_mu"));
  b.fixed_hyper("tau_mu", 0.5);
  b.hyper("precision", prior);
  for (int i = 0; i < 5; ++i) b.design_entry(i, 0, 1.0);
  const auto m = b.build();
  const auto fit = explore_hypers(m);

  // Exact evidence: integrate over tau the closed-form marginal of y.
  double s = 0.0;
  const double du = 1e-4;
  for (double u = -8.0; u < 5.0; u += du) {
    const double tau = std::exp(u);
    const DenseMatrix cov = DenseMatrix::Constant(5, 5, 2.0) + DenseMatrix::Identity(5, 5) / tau;
    s += std::exp(log_mvn_zero_mean(y, cov) + prior.log_density(tau) + u) * du;
  }
  CHECK(std::abs(fit.log_marginal_likelihood - std::log(s)) < 0.05);
  CHECK(fit.hyper_marginals.size() == 1);
  CHECK(fit.hyper_marginals[0].integral() == doctest::Approx(1.0).epsilon(1e-9));
  double wsum = 0.0;
  for (const auto& g : fit.grid) wsum += g.weight;
  CHECK(wsum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("latent marginal mixtures") {
  FitResult fit;
  fit.tracked = {0};
  GridPoint a, b;
  a.weight = b.weight = 0.5;
  a.means = Vector::Constant(1, -1.0);
  b.means = Vector::Constant(1, 1.0);
  a.variances = b.variances = Vector::Constant(1, 1.0);
  fit.grid = {a, b};
  CHECK(fit.latent_mean(0) == doctest::Approx(0.0));
  CHECK(fit.latent_sd(0) * fit.latent_sd(0) == doctest::Approx(2.0));
  CHECK_THROWS_AS(fit.latent_sd(3), IndexNotTracked);

  const std::vector<double> w{0.5, 0.5}, mu{0.0, 0.0}, sd{1.0, 1.0};
  const auto g = gaussian_mixture_grid(w, mu, sd);
  const auto ref = gaussian_grid(0.0, 1.0);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g.densities()[i] == doctest::Approx(ref.densities()[i]).epsilon(1e-12));
}

TEST_CASE("grid evaluation does not depend on the worker count") {
  Vector y(6);
  y << 2, 0, 5, 1, 3, 4;
  ModelBuilder b(Family::poisson, y);
  b.add_fixed_effects({"a"});
  b.add_block(besag(Adjacency::lattice(2, 3), "s", "tau_s"));
  b.hyper("tau_s", HyperPrior::gamma(1.0, 0.1));
  for (int i = 0; i < 6; ++i) {
    b.design_entry(i, 0, 1.0);
    b.design_entry(i, 1 + i, 1.0);
  }
  const auto m = b.build();
  LaplaceOptions o1;
  o1.track = {0, 1, 2, 3, 4, 5, 6};
  auto o3 = o1;
  o3.workers = 3;
  const auto f1 = explore_hypers(m, o1);
  const auto f3 = explore_hypers(m, o3);
  REQUIRE(f1.grid.size() == f3.grid.size());
  CHECK(f1.log_marginal_likelihood == f3.log_marginal_likelihood);
  for (std::size_t k = 0; k < f1.grid.size(); ++k) {
    CHECK(f1.grid[k].weight == f3.grid[k].weight);
    CHECK(f1.grid[k].means == f3.grid[k].means);
  }
  double s = 0.0;
  for (int i = 0; i < 6; ++i) s += f1.latent_mean(1 + i);
  CHECK(std::abs(s) < 1e-8);
}
