#include "inlamh/laplace.hpp"

#include "inlamh/errors.hpp"
#include "inlamh/parallel.hpp"

#include <Eigen/Cholesky>
#include <boost/math/interpolators/cardinal_cubic_b_spline.hpp>
#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

namespace inlamh {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Fixed sparsity pattern of Q(theta) + A'DA and the recipe for filling it.
struct Assembly {
  struct QTerm {
    int slot;
    int component;
    double value;
  };
  int n = 0;
  SparseMatrix pattern;  // lower triangle
  std::vector<QTerm> q_terms;
  std::vector<int> obs_ptr;
  std::vector<std::pair<int, double>> obs_terms;
  std::vector<std::pair<int, int>> jitter;  // slot, component
  SparseMatrix design_t;
  DenseMatrix c;
  Vector e;
  DenseMatrix cct_inv;
  double logdet_cct = 0.0;

  explicit Assembly(const LatentModel& m) {
    n = m.latent_dim();
    std::vector<Eigen::Triplet<double>> trip;
    for (const auto& comp : m.components()) {
      for (const auto& en : comp.block.structure.entries()) {
        trip.emplace_back(comp.offset + en.col, comp.offset + en.row, 1.0);
      }
      for (int i = 0; i < comp.block.size(); ++i) trip.emplace_back(comp.offset + i, comp.offset + i, 1.0);
    }
    const auto& a = m.design();
    for (int r = 0; r < a.outerSize(); ++r) {
      for (RowSparseMatrix::InnerIterator i1(a, r); i1; ++i1) {
        for (RowSparseMatrix::InnerIterator i2(a, r); i2; ++i2) {
          if (i2.col() <= i1.col()) trip.emplace_back(static_cast<int>(i1.col()), static_cast<int>(i2.col()), 1.0);
        }
      }
    }
    pattern.resize(n, n);
    pattern.setFromTriplets(trip.begin(), trip.end());
    pattern.makeCompressed();
    std::fill(pattern.valuePtr(), pattern.valuePtr() + pattern.nonZeros(), 0.0);

    const auto& comps = m.components();
    for (std::size_t k = 0; k < comps.size(); ++k) {
      const auto& comp = comps[k];
      for (const auto& en : comp.block.structure.entries()) {
        q_terms.push_back({slot(comp.offset + en.col, comp.offset + en.row), static_cast<int>(k), en.value});
      }
      if (comp.block.intrinsic()) {
        for (int i = 0; i < comp.block.size(); ++i) {
          jitter.emplace_back(slot(comp.offset + i, comp.offset + i), static_cast<int>(k));
        }
      }
    }
    obs_ptr.push_back(0);
    for (int r = 0; r < a.outerSize(); ++r) {
      for (RowSparseMatrix::InnerIterator i1(a, r); i1; ++i1) {
        for (RowSparseMatrix::InnerIterator i2(a, r); i2; ++i2) {
          if (i2.col() <= i1.col()) {
            obs_terms.emplace_back(slot(static_cast<int>(i1.col()), static_cast<int>(i2.col())), i1.value() * i2.value());
          }
        }
      }
      obs_ptr.push_back(static_cast<int>(obs_terms.size()));
    }
    design_t = SparseMatrix(a.transpose());
    c = m.constraint_matrix();
    e = m.constraint_values();
    if (c.rows() > 0) {
      const DenseMatrix cct = c * c.transpose();
      Eigen::LLT<DenseMatrix> llt(cct);
      if (llt.info() != Eigen::Success) throw DimensionMismatch("linear constraints are linearly dependent");
      cct_inv = llt.solve(DenseMatrix::Identity(cct.rows(), cct.cols()));
      logdet_cct = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    }
  }

  int slot(int row, int col) const {
    const int* begin = pattern.innerIndexPtr() + pattern.outerIndexPtr()[col];
    const int* end = pattern.innerIndexPtr() + pattern.outerIndexPtr()[col + 1];
    const int* it = std::lower_bound(begin, end, row);
    return static_cast<int>(it - pattern.innerIndexPtr());
  }

  int k() const { return static_cast<int>(c.rows()); }
};

// One worker's Newton solver. Not thread-safe; each worker owns one.
class Engine {
 public:
  Engine(const LatentModel& model, std::shared_ptr<const Assembly> assembly, const LaplaceOptions& options)
      : model_(model), asm_(std::move(assembly)), opt_(options), h_(asm_->pattern), q_(asm_->pattern) {}

  void fit(std::span<const double> hypers, const Vector* start) {
    const int n = asm_->n;
    const int k = asm_->k();
    hypers_.assign(hypers.begin(), hypers.end());
    set_precisions();

    x_ = (start && start->size() == n) ? *start : Vector::Zero(n);
    if (k > 0) x_ -= asm_->c.transpose() * (asm_->cct_inv * (asm_->c * x_ - asm_->e));

    double obj = objective(x_, &lik_);
    for (iterations_ = 0;; ++iterations_) {
      const Vector g = -qx_ + asm_->design_t * lik_.gradient;
      factorize(lik_.curvature);
      Vector pg = g;
      if (k > 0) pg -= asm_->c.transpose() * (asm_->cct_inv * (asm_->c * g));
      const double gnorm = pg.norm();
      if (gnorm < opt_.newton_tolerance * (1.0 + std::abs(obj))) break;
      if (iterations_ >= opt_.newton_max_iterations) {
        std::ostringstream msg;
        msg << "Newton iteration did not converge in " << opt_.newton_max_iterations << " steps (gradient norm "
            << gnorm << ")";
        throw NewtonDivergence(msg.str());
      }
      Vector d = solver_.solve(g);
      if (k > 0) {
        const DenseMatrix w = solver_.solve(DenseMatrix(asm_->c.transpose()));
        const DenseMatrix s = asm_->c * w;
        d -= w * Eigen::LLT<DenseMatrix>(s).solve(asm_->c * d);
      }
      double t = 1.0;
      bool accepted = false;
      LikelihoodEval trial;
      for (int halving = 0; halving < 40; ++halving, t *= 0.5) {
        const Vector xn = x_ + t * d;
        double on = kNegInf;
        try {
          on = objective(xn, &trial);
        } catch (const NonFinite&) {
          on = kNegInf;
        }
        if (std::isfinite(on) && on >= obj - 1e-12 * (1.0 + std::abs(obj))) {
          x_ = xn;
          obj = on;
          lik_ = std::move(trial);
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        if (gnorm < 1e-5 * (1.0 + std::abs(obj))) break;
        throw NewtonDivergence("step halving exhausted in Newton iteration");
      }
    }
    // Refresh derivative-dependent state at the final point.
    qx_ = q_multiply(x_);
    objective_ = obj;
    if (k > 0) {
      kriging_ = solver_.solve(DenseMatrix(asm_->c.transpose()));
      s_ = asm_->c * kriging_;
      s_llt_.compute(s_);
      if (s_llt_.info() != Eigen::Success) throw NotPositiveDefinite("constraint Schur complement is not positive definite");
    } else {
      kriging_.resize(n, 0);
    }
  }

  double log_joint() const {
    const int n = asm_->n;
    const int k = asm_->k();
    double logdet = solver_.log_determinant();
    if (k > 0) logdet += 2.0 * s_llt_.matrixLLT().diagonal().array().log().sum() - asm_->logdet_cct;
    const double log_gauss = 0.5 * logdet - 0.5 * (n - k) * kLog2Pi;
    return model_.log_hyper_prior(hypers_) + model_.log_latent_prior(x_, hypers_) + lik_.value - log_gauss;
  }

  // Constrained covariance among `idx`.
  DenseMatrix covariance(std::span<const int> idx) const {
    const int m = static_cast<int>(idx.size());
    DenseMatrix rhs = DenseMatrix::Zero(asm_->n, m);
    for (int j = 0; j < m; ++j) rhs(idx[static_cast<std::size_t>(j)], j) = 1.0;
    const DenseMatrix sol = solver_.solve(rhs);
    DenseMatrix out(m, m);
    for (int i = 0; i < m; ++i) out.row(i) = sol.row(idx[static_cast<std::size_t>(i)]);
    if (asm_->k() > 0) {
      DenseMatrix wi(m, asm_->k());
      for (int i = 0; i < m; ++i) wi.row(i) = kriging_.row(idx[static_cast<std::size_t>(i)]);
      out -= wi * s_llt_.solve(DenseMatrix(wi.transpose()));
    }
    return 0.5 * (out + out.transpose());
  }

  Vector variances(std::span<const int> idx) const {
    const int m = static_cast<int>(idx.size());
    Vector out(m);
    for (int j = 0; j < m; ++j) {
      Vector rhs = Vector::Zero(asm_->n);
      const int i = idx[static_cast<std::size_t>(j)];
      rhs[i] = 1.0;
      double v = solver_.solve(rhs)[i];
      if (asm_->k() > 0) {
        const Vector wi = kriging_.row(i).transpose();
        v -= wi.dot(s_llt_.solve(wi));
      }
      out[j] = v;
    }
    return out;
  }

  GaussianApprox release() {
    GaussianApprox g;
    g.hypers = hypers_;
    g.mode = x_;
    SparseMatrix unjittered = h_;
    for (auto [slot, comp] : asm_->jitter) unjittered.valuePtr()[slot] -= kIntrinsicJitter * tau_[static_cast<std::size_t>(comp)];
    g.precision = SparseSym::from_lower(std::move(unjittered));
    g.constraint_matrix = asm_->c;
    g.constraint_values = asm_->e;
    g.kriging = kriging_;
    g.objective = objective_;
    g.iterations = iterations_;
    g.factor = solver_.release();
    return g;
  }

  const Vector& mode() const { return x_; }

 private:
  void set_precisions() {
    const auto& comps = model_.components();
    tau_.resize(comps.size());
    for (std::size_t c = 0; c < comps.size(); ++c) {
      const double tau = model_.block_precision(comps[c], hypers_);
      if (!(tau > 0.0) || !std::isfinite(tau)) {
        std::ostringstream msg;
        msg << "precision of block " << comps[c].block.label << " is " << tau;
        throw NotPositiveDefinite(msg.str());
      }
      tau_[c] = tau;
    }
    if (model_.family() == Family::gaussian) {
      const double prec = hypers_[static_cast<std::size_t>(model_.observation_precision_hyper())];
      if (!(prec > 0.0) || !std::isfinite(prec)) throw NotPositiveDefinite("observation precision must be positive");
    }
    double* qv = q_.valuePtr();
    std::fill(qv, qv + q_.nonZeros(), 0.0);
    for (const auto& t : asm_->q_terms) qv[t.slot] += tau_[static_cast<std::size_t>(t.component)] * t.value;
    for (auto [slot, comp] : asm_->jitter) qv[slot] += kIntrinsicJitter * tau_[static_cast<std::size_t>(comp)];
  }

  Vector q_multiply(const Vector& x) const {
    Vector out(x.size());
    const auto& comps = model_.components();
    for (std::size_t c = 0; c < comps.size(); ++c) {
      const auto& b = comps[c].block;
      out.segment(comps[c].offset, b.size()) = tau_[c] * b.structure.multiply(x.segment(comps[c].offset, b.size()));
    }
    return out;
  }

  double objective(const Vector& x, LikelihoodEval* lik) {
    Vector qx = q_multiply(x);
    *lik = log_likelihood_eta(model_, model_.design() * x, hypers_);
    const double obj = -0.5 * x.dot(qx) + lik->value;
    qx_ = std::move(qx);
    return obj;
  }

  void factorize(const Vector& curvature) {
    double* hv = h_.valuePtr();
    const double* qv = q_.valuePtr();
    std::copy(qv, qv + q_.nonZeros(), hv);
    const int nobs = static_cast<int>(curvature.size());
    for (int i = 0; i < nobs; ++i) {
      const double d = -curvature[i];
      if (d == 0.0) continue;
      for (int p = asm_->obs_ptr[static_cast<std::size_t>(i)]; p < asm_->obs_ptr[static_cast<std::size_t>(i) + 1]; ++p) {
        const auto& [slot, coef] = asm_->obs_terms[static_cast<std::size_t>(p)];
        hv[slot] += d * coef;
      }
    }
    solver_.factorize(h_);
  }

  const LatentModel& model_;
  std::shared_ptr<const Assembly> asm_;
  LaplaceOptions opt_;
  SparseMatrix h_;
  SparseMatrix q_;
  CholeskySolver solver_;
  std::vector<double> hypers_;
  std::vector<double> tau_;
  Vector x_;
  Vector qx_;
  LikelihoodEval lik_;
  double objective_ = 0.0;
  int iterations_ = 0;
  DenseMatrix kriging_;
  DenseMatrix s_;
  Eigen::LLT<DenseMatrix> s_llt_;
};

}  // namespace

// --- GaussianApprox -------------------------------------------------------------

DenseMatrix GaussianApprox::covariance(std::span<const int> indices) const {
  const int m = static_cast<int>(indices.size());
  const int n = static_cast<int>(mode.size());
  DenseMatrix rhs = DenseMatrix::Zero(n, m);
  for (int j = 0; j < m; ++j) {
    const int i = indices[static_cast<std::size_t>(j)];
    if (i < 0 || i >= n) throw DimensionMismatch("latent index out of range");
    rhs(i, j) = 1.0;
  }
  const DenseMatrix sol = factor.solve(rhs);
  DenseMatrix out(m, m);
  for (int i = 0; i < m; ++i) out.row(i) = sol.row(indices[static_cast<std::size_t>(i)]);
  if (constraint_matrix.rows() > 0) {
    const DenseMatrix s = constraint_matrix * kriging;
    DenseMatrix wi(m, kriging.cols());
    for (int i = 0; i < m; ++i) wi.row(i) = kriging.row(indices[static_cast<std::size_t>(i)]);
    out -= wi * Eigen::LLT<DenseMatrix>(s).solve(DenseMatrix(wi.transpose()));
  }
  return 0.5 * (out + out.transpose());
}

Vector GaussianApprox::marginal_variances(std::span<const int> indices) const {
  return covariance(indices).diagonal();
}

GaussianApprox gaussian_approx(const LatentModel& model, std::span<const double> hypers, const LaplaceOptions& options,
                               const Vector* start) {
  if (static_cast<int>(hypers.size()) != model.hyper_count()) throw DimensionMismatch("wrong number of hyperparameters");
  Engine engine(model, std::make_shared<Assembly>(model), options);
  engine.fit(hypers, start);
  return engine.release();
}

double log_joint_at_mode(const LatentModel& model, const GaussianApprox& approx) {
  const int n = static_cast<int>(approx.mode.size());
  const int k = static_cast<int>(approx.constraint_matrix.rows());
  const auto lik = log_likelihood(model, approx.mode, approx.hypers);
  double logdet = approx.factor.log_determinant();
  if (k > 0) {
    const DenseMatrix s = approx.constraint_matrix * approx.kriging;
    Eigen::LLT<DenseMatrix> ls(s);
    Eigen::LLT<DenseMatrix> lc(approx.constraint_matrix * approx.constraint_matrix.transpose());
    logdet += 2.0 * ls.matrixLLT().diagonal().array().log().sum() - 2.0 * lc.matrixLLT().diagonal().array().log().sum();
  }
  return model.log_hyper_prior(approx.hypers) + model.log_latent_prior(approx.mode, approx.hypers) + lik.value -
         (0.5 * logdet - 0.5 * (n - k) * kLog2Pi);
}

double log_joint_at_mode(const LatentModel& model, std::span<const double> hypers, const LaplaceOptions& options) {
  if (static_cast<int>(hypers.size()) != model.hyper_count()) throw DimensionMismatch("wrong number of hyperparameters");
  Engine engine(model, std::make_shared<Assembly>(model), options);
  engine.fit(hypers, nullptr);
  return engine.log_joint();
}

// --- FitResult --------------------------------------------------------------------

bool FitResult::is_tracked(int index) const {
  return std::find(tracked.begin(), tracked.end(), index) != tracked.end();
}

int FitResult::tracked_position(int index) const {
  auto it = std::find(tracked.begin(), tracked.end(), index);
  if (it == tracked.end()) throw IndexNotTracked("latent index " + std::to_string(index) + " was not tracked in this fit");
  return static_cast<int>(it - tracked.begin());
}

const MarginalGrid& FitResult::hyper_marginal(const std::string& name) const {
  for (std::size_t j = 0; j < hyper_names.size(); ++j) {
    if (hyper_names[j] == name) return hyper_marginals[j];
  }
  throw IndexNotTracked("no free hyperparameter named " + name);
}

double FitResult::latent_mean(int index) const {
  const int p = tracked_position(index);
  double m = 0.0;
  for (const auto& g : grid) m += g.weight * g.means[p];
  return m;
}

double FitResult::latent_sd(int index) const {
  const int p = tracked_position(index);
  const double m = latent_mean(index);
  double v = 0.0;
  for (const auto& g : grid) {
    const double d = g.means[p] - m;
    v += g.weight * (g.variances[p] + d * d);
  }
  return std::sqrt(std::max(v, 0.0));
}

MarginalGrid gaussian_mixture_grid(std::span<const double> weights, std::span<const double> means,
                                   std::span<const double> sds, int points) {
  if (weights.empty()) throw EmptyList("mixture needs at least one component");
  double wsum = 0.0;
  double m = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    wsum += weights[k];
    m += weights[k] * means[k];
  }
  m /= wsum;
  double v = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const double d = means[k] - m;
    v += weights[k] * (sds[k] * sds[k] + d * d);
  }
  v /= wsum;
  const double sd = std::sqrt(v);
  if (!(sd > 0.0)) throw ZeroScale("mixture has zero spread");
  std::vector<double> xs(static_cast<std::size_t>(points));
  std::vector<double> ds(xs.size(), 0.0);
  for (int i = 0; i < points; ++i) {
    const double x = m - 5.0 * sd + 10.0 * sd * i / (points - 1);
    xs[static_cast<std::size_t>(i)] = x;
    double d = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
      if (weights[k] == 0.0) continue;
      const double z = (x - means[k]) / sds[k];
      d += weights[k] * std::exp(-0.5 * z * z) / (sds[k] * std::sqrt(2.0 * std::numbers::pi));
    }
    ds[static_cast<std::size_t>(i)] = d / wsum;
  }
  return MarginalGrid(std::move(xs), std::move(ds));
}

MarginalGrid latent_marginal(const FitResult& fit, int index) {
  return fit.latent_marginals[static_cast<std::size_t>(fit.tracked_position(index))];
}

MarginalGrid linear_combination_marginal(const FitResult& fit, std::span<const std::pair<int, double>> terms,
                                         double shift, int points) {
  if (terms.empty()) throw EmptyList("linear combination needs at least one term");
  std::vector<int> pos;
  for (auto [idx, coef] : terms) pos.push_back(fit.tracked_position(idx));
  if (terms.size() > 1 && !fit.has_covariance) {
    throw IndexNotTracked("linear combination of several latent entries needs tracked covariance");
  }
  std::vector<double> w;
  std::vector<double> mu;
  std::vector<double> sd;
  for (const auto& g : fit.grid) {
    double m = shift;
    double v = 0.0;
    for (std::size_t a = 0; a < terms.size(); ++a) {
      m += terms[a].second * g.means[pos[a]];
      if (terms.size() == 1) {
        v = terms[a].second * terms[a].second * g.variances[pos[a]];
      } else {
        for (std::size_t b = 0; b < terms.size(); ++b) {
          v += terms[a].second * terms[b].second * g.covariance(pos[a], pos[b]);
        }
      }
    }
    w.push_back(g.weight);
    mu.push_back(m);
    sd.push_back(std::sqrt(std::max(v, 0.0)));
  }
  return gaussian_mixture_grid(w, mu, sd, points);
}

// --- hyperparameter exploration ------------------------------------------------------

namespace {

struct Explorer {
  const LatentModel& model;
  const LaplaceOptions& opt;
  std::vector<int> free;
  std::vector<HyperPrior> priors;
  std::vector<Engine> engines;

  std::vector<double> natural(std::span<const double> z) const {
    std::vector<double> v(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) v[j] = priors[j].from_internal(z[j]);
    return model.expand_hypers(v);
  }

  double log_jacobian(std::span<const double> z) const {
    double s = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) s += priors[j].log_jacobian(z[j]);
    return s;
  }

  // Log posterior density in internal coordinates; -inf where the inner fit
  // fails numerically.
  double h(int worker, std::span<const double> z, const Vector* start, double* log_joint = nullptr) {
    const auto hv = natural(z);
    for (std::size_t j = 0; j < z.size(); ++j) {
      if (!priors[j].in_support(hv[static_cast<std::size_t>(free[j])]) || !std::isfinite(z[j])) return kNegInf;
    }
    try {
      engines[static_cast<std::size_t>(worker)].fit(hv, start);
      const double lj = engines[static_cast<std::size_t>(worker)].log_joint();
      if (log_joint) *log_joint = lj;
      const double out = lj + log_jacobian(z);
      return std::isfinite(out) ? out : kNegInf;
    } catch (const NumericalError&) {
      return kNegInf;
    }
  }
};

struct NmContext {
  Explorer* ex;
  Vector warm;
  bool have_warm = false;
};

double nm_objective(const gsl_vector* v, void* params) {
  auto* ctx = static_cast<NmContext*>(params);
  std::vector<double> z(v->size);
  for (std::size_t j = 0; j < v->size; ++j) z[j] = gsl_vector_get(v, j);
  const double h = ctx->ex->h(0, z, ctx->have_warm ? &ctx->warm : nullptr);
  if (!std::isfinite(h)) return 1e300;
  ctx->warm = ctx->ex->engines[0].mode();
  ctx->have_warm = true;
  return -h;
}

std::vector<double> nelder_mead(Explorer& ex, std::vector<double> z0, double initial_step, double tol, Vector* warm) {
  static const bool handler_off = [] {
    gsl_set_error_handler_off();
    return true;
  }();
  (void)handler_off;
  const std::size_t p = z0.size();
  NmContext ctx{&ex, Vector(), false};
  gsl_multimin_function f{&nm_objective, p, &ctx};
  gsl_vector* x = gsl_vector_alloc(p);
  gsl_vector* step = gsl_vector_alloc(p);
  for (std::size_t j = 0; j < p; ++j) {
    gsl_vector_set(x, j, z0[j]);
    gsl_vector_set(step, j, initial_step);
  }
  gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, p);
  int status = gsl_multimin_fminimizer_set(s, &f, x, step);
  if (status == GSL_SUCCESS && gsl_multimin_fminimizer_minimum(s) >= 1e300) status = GSL_EBADFUNC;
  bool converged = false;
  for (int it = 0; status == GSL_SUCCESS && it < 5000; ++it) {
    status = gsl_multimin_fminimizer_iterate(s);
    if (status != GSL_SUCCESS) break;
    if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), tol) == GSL_SUCCESS) {
      converged = true;
      break;
    }
  }
  std::vector<double> best(p);
  for (std::size_t j = 0; j < p; ++j) best[j] = gsl_vector_get(s->x, j);
  const double fmin = gsl_multimin_fminimizer_minimum(s);
  gsl_multimin_fminimizer_free(s);
  gsl_vector_free(step);
  gsl_vector_free(x);
  if (!converged || !(fmin < 1e300)) {
    std::ostringstream msg;
    msg << "hyperparameter mode search failed (" << (converged ? "non-finite objective" : gsl_strerror(status))
        << ")";
    throw ModeSearchFailure(msg.str());
  }
  if (ctx.have_warm) *warm = ctx.warm;
  return best;
}

DenseMatrix numeric_hessian(Explorer& ex, const std::vector<double>& z, double h0, double step, const Vector& warm) {
  const std::size_t p = z.size();
  DenseMatrix hess(p, p);
  auto at = [&](std::vector<double> zz) { return ex.h(0, zz, &warm); };
  for (std::size_t i = 0; i < p; ++i) {
    auto zp = z;
    auto zm = z;
    zp[i] += step;
    zm[i] -= step;
    hess(i, i) = (at(zp) - 2.0 * h0 + at(zm)) / (step * step);
    for (std::size_t j = 0; j < i; ++j) {
      auto a = z, b = z, c = z, d = z;
      a[i] += step, a[j] += step;
      b[i] += step, b[j] -= step;
      c[i] -= step, c[j] += step;
      d[i] -= step, d[j] -= step;
      hess(i, j) = hess(j, i) = (at(a) - at(b) - at(c) + at(d)) / (4.0 * step * step);
    }
  }
  return hess;
}

std::vector<double> axis_scales(const DenseMatrix& hess) {
  const int p = static_cast<int>(hess.rows());
  std::vector<double> sd(static_cast<std::size_t>(p), 1.0);
  const DenseMatrix neg = -hess;
  bool finite = neg.allFinite();
  Eigen::LLT<DenseMatrix> llt(neg);
  if (finite && llt.info() == Eigen::Success) {
    const DenseMatrix cov = llt.solve(DenseMatrix::Identity(p, p));
    for (int j = 0; j < p; ++j) sd[static_cast<std::size_t>(j)] = std::sqrt(cov(j, j));
    return sd;
  }
  for (int j = 0; j < p; ++j) {
    if (std::isfinite(neg(j, j)) && neg(j, j) > 0.0) sd[static_cast<std::size_t>(j)] = 1.0 / std::sqrt(neg(j, j));
  }
  return sd;
}

MarginalGrid hyper_marginal_from_lattice(const std::vector<GridPoint>& grid, std::size_t axis, double center,
                                         double spacing, double hmax, const HyperPrior& prior, int points) {
  std::map<int, double> mass;
  for (const auto& g : grid) mass[g.index[axis]] += std::exp(g.log_density - hmax);
  const int kmin = mass.begin()->first;
  const int kmax = mass.rbegin()->first;
  std::vector<double> logm;
  for (int k = kmin; k <= kmax; ++k) {
    auto it = mass.find(k);
    logm.push_back(it == mass.end() || it->second <= 0.0 ? std::log(std::numeric_limits<double>::min())
                                                         : std::log(it->second));
  }
  std::vector<double> zs(static_cast<std::size_t>(points));
  std::vector<double> dens(zs.size());
  if (logm.size() == 1) {
    for (int i = 0; i < points; ++i) {
      const double u = -3.0 + 6.0 * i / (points - 1);
      zs[static_cast<std::size_t>(i)] = center + u * spacing;
      dens[static_cast<std::size_t>(i)] = std::exp(-0.5 * u * u);
    }
  } else {
    const double z0 = center + kmin * spacing;
    const double z1 = center + kmax * spacing;
    std::optional<boost::math::interpolators::cardinal_cubic_b_spline<double>> spline;
    if (logm.size() >= 5) spline.emplace(logm.begin(), logm.end(), z0, spacing);
    for (int i = 0; i < points; ++i) {
      const double z = z0 + (z1 - z0) * i / (points - 1);
      double lm;
      if (spline) {
        lm = (*spline)(z);
      } else {
        const double u = std::clamp((z - z0) / spacing, 0.0, static_cast<double>(logm.size() - 1));
        const std::size_t a = std::min(static_cast<std::size_t>(u), logm.size() - 2);
        const double t = u - static_cast<double>(a);
        lm = (1.0 - t) * logm[a] + t * logm[a + 1];
      }
      zs[static_cast<std::size_t>(i)] = z;
      dens[static_cast<std::size_t>(i)] = std::exp(lm);
    }
  }
  std::vector<double> values(zs.size());
  std::vector<double> nat(zs.size());
  for (std::size_t i = 0; i < zs.size(); ++i) {
    values[i] = prior.from_internal(zs[i]);
    nat[i] = dens[i] * std::exp(-prior.log_jacobian(zs[i]));
    if (!std::isfinite(nat[i])) nat[i] = 0.0;
  }
  // Transforms near their saturation can collapse neighbouring values.
  std::vector<double> v2;
  std::vector<double> d2;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!v2.empty() && !(values[i] > v2.back())) continue;
    v2.push_back(values[i]);
    d2.push_back(nat[i]);
  }
  return MarginalGrid(std::move(v2), std::move(d2));
}

}  // namespace

FitResult explore_hypers(const LatentModel& model, const LaplaceOptions& options) {
  const auto free = model.free_hypers();
  if (static_cast<int>(free.size()) > kMaxFreeHypers) {
    throw GridOverflow("at most " + std::to_string(kMaxFreeHypers) + " free hyperparameters are supported, got " +
                       std::to_string(free.size()));
  }
  for (int idx : options.track) {
    if (idx < 0 || idx >= model.latent_dim()) throw DimensionMismatch("tracked latent index out of range");
  }
  const int workers = std::max(1, options.workers);
  auto assembly = std::make_shared<const Assembly>(model);
  Explorer ex{model, options, free, {}, {}};
  for (int f : free) ex.priors.push_back(model.hypers()[static_cast<std::size_t>(f)].prior);
  for (int w = 0; w < workers; ++w) ex.engines.emplace_back(model, assembly, options);

  FitResult fit;
  fit.free_hypers = free;
  for (int f : free) fit.hyper_names.push_back(model.hypers()[static_cast<std::size_t>(f)].name);
  fit.tracked = options.track;
  fit.has_covariance = options.track_covariance;
  const std::size_t p = free.size();

  auto fill_moments = [&](Engine& eng, GridPoint& g) {
    g.means.resize(static_cast<int>(options.track.size()));
    for (std::size_t t = 0; t < options.track.size(); ++t) g.means[static_cast<int>(t)] = eng.mode()[options.track[t]];
    if (options.track_covariance) {
      g.covariance = eng.covariance(options.track);
      g.variances = g.covariance.diagonal();
    } else {
      g.variances = eng.variances(options.track);
    }
  };

  // Mode search.
  std::vector<double> zmode(p);
  Vector warm;
  if (p > 0) {
    std::vector<double> cold(p);
    for (std::size_t j = 0; j < p; ++j) cold[j] = ex.priors[j].to_internal(ex.priors[j].median());
    if (options.start.empty()) {
      zmode = nelder_mead(ex, cold, 1.0, options.mode_tolerance, &warm);
    } else {
      if (options.start.size() != p) throw DimensionMismatch("mode-search start has the wrong dimension");
      try {
        zmode = nelder_mead(ex, options.start, kWarmSimplexStep, options.mode_tolerance, &warm);
      } catch (const ModeSearchFailure&) {
        // a warm simplex can stall on a flat surface; start over from the priors
        warm.resize(0);
        zmode = nelder_mead(ex, cold, 1.0, options.mode_tolerance, &warm);
      }
    }
  }

  // Central point, with the warm start every grid point reuses.
  GridPoint center;
  center.index.assign(p, 0);
  center.z = zmode;
  center.hypers = ex.natural(zmode);
  {
    Engine& eng = ex.engines[0];
    eng.fit(center.hypers, warm.size() ? &warm : nullptr);
    center.log_joint = eng.log_joint();
    center.log_density = center.log_joint + ex.log_jacobian(zmode);
    fill_moments(eng, center);
    fit.central_mode = eng.mode();
  }
  if (!std::isfinite(center.log_density)) throw ModeSearchFailure("log posterior is not finite at the mode");
  fit.mode_z = zmode;

  std::vector<GridPoint> points;
  if (p == 0) {
    center.weight = 1.0;
    points.push_back(center);
    fit.log_marginal_likelihood = center.log_joint;
  } else {
    const DenseMatrix hess = numeric_hessian(ex, zmode, center.log_density, options.hessian_step, fit.central_mode);
    const auto sd = axis_scales(hess);
    fit.grid_scale.resize(p);
    for (std::size_t j = 0; j < p; ++j) fit.grid_scale[j] = options.grid_step * sd[j];
    const double threshold = center.log_density - options.grid_drop;

    // Each new lattice point starts Newton from the mode of the neighbour
    // that reached it first.
    std::map<std::vector<int>, std::shared_ptr<const Vector>> seen;
    seen[center.index] = nullptr;
    points.push_back(center);
    using Frontier = std::vector<std::pair<std::vector<int>, std::shared_ptr<const Vector>>>;
    auto push_neighbours = [&](const std::vector<int>& idx, const std::shared_ptr<const Vector>& mode, Frontier& next) {
      for (std::size_t j = 0; j < p; ++j) {
        for (int dir : {-1, 1}) {
          auto nb = idx;
          nb[j] += dir;
          if (std::abs(nb[j]) > options.grid_max_steps) continue;
          if (seen.emplace(nb, nullptr).second) next.emplace_back(nb, mode);
        }
      }
    };
    Frontier frontier;
    push_neighbours(center.index, std::make_shared<const Vector>(fit.central_mode), frontier);
    while (!frontier.empty()) {
      std::sort(frontier.begin(), frontier.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      std::vector<GridPoint> evaluated(frontier.size());
      std::vector<std::shared_ptr<const Vector>> modes(frontier.size());
      std::vector<char> keep(frontier.size(), 0);
      parallel_for(frontier.size(), workers, [&](int worker, std::size_t i) {
        GridPoint& g = evaluated[i];
        g.index = frontier[i].first;
        g.z.resize(p);
        for (std::size_t j = 0; j < p; ++j) g.z[j] = zmode[j] + g.index[j] * fit.grid_scale[j];
        g.hypers = ex.natural(g.z);
        double lj = kNegInf;
        g.log_density = ex.h(worker, g.z, frontier[i].second.get(), &lj);
        g.log_joint = lj;
        if (g.log_density >= threshold) {
          Engine& eng = ex.engines[static_cast<std::size_t>(worker)];
          fill_moments(eng, g);
          modes[i] = std::make_shared<const Vector>(eng.mode());
          keep[i] = 1;
        }
      });
      Frontier next;
      for (std::size_t i = 0; i < frontier.size(); ++i) {
        if (!keep[i]) continue;
        push_neighbours(evaluated[i].index, modes[i], next);
        points.push_back(std::move(evaluated[i]));
      }
      frontier = std::move(next);
    }
    std::sort(points.begin(), points.end(), [](const GridPoint& a, const GridPoint& b) { return a.index < b.index; });
    double hmax = kNegInf;
    for (const auto& g : points) hmax = std::max(hmax, g.log_density);
    double total = 0.0;
    for (const auto& g : points) total += std::exp(g.log_density - hmax);
    for (auto& g : points) g.weight = std::exp(g.log_density - hmax) / total;
    double log_cell = 0.0;
    for (double s : fit.grid_scale) log_cell += std::log(s);
    fit.log_marginal_likelihood = hmax + std::log(total) + log_cell;
    for (std::size_t j = 0; j < p; ++j) {
      fit.hyper_marginals.push_back(hyper_marginal_from_lattice(points, j, zmode[j], fit.grid_scale[j], hmax,
                                                                ex.priors[j], options.marginal_points));
    }
  }
  if (!std::isfinite(fit.log_marginal_likelihood)) throw NonFinite("log marginal likelihood is not finite");
  fit.grid = std::move(points);

  std::vector<double> w;
  for (const auto& g : fit.grid) w.push_back(g.weight);
  for (std::size_t t = 0; t < options.track.size(); ++t) {
    std::vector<double> mu;
    std::vector<double> s;
    for (const auto& g : fit.grid) {
      mu.push_back(g.means[static_cast<int>(t)]);
      s.push_back(std::sqrt(std::max(g.variances[static_cast<int>(t)], 0.0)));
    }
    fit.latent_marginals.push_back(gaussian_mixture_grid(w, mu, s, options.marginal_points));
  }
  return fit;
}

}  // namespace inlamh
