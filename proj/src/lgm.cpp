#include "inlamh/lgm.hpp"

#include "inlamh/errors.hpp"

#include <boost/math/distributions/gamma.hpp>

#include <cmath>
#include <numbers>
#include <sstream>

namespace inlamh {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
}

Family parse_family(std::string_view name) {
  if (name == "gaussian") return Family::gaussian;
  if (name == "poisson") return Family::poisson;
  throw UnsupportedFamily("unsupported likelihood family '" + std::string(name) + "'");
}

std::string_view family_name(Family family) {
  return family == Family::gaussian ? "gaussian" : "poisson";
}

// --- HyperPrior -------------------------------------------------------------

HyperPrior HyperPrior::gamma(double shape, double rate) {
  if (!(shape > 0.0 && rate > 0.0)) throw OutOfRange("gamma prior needs shape > 0 and rate > 0");
  return {Kind::gamma, shape, rate};
}

HyperPrior HyperPrior::log_normal(double mean, double precision) {
  if (!(precision > 0.0)) throw OutOfRange("log-normal prior needs precision > 0");
  return {Kind::log_normal, mean, precision};
}

HyperPrior HyperPrior::uniform(double lower, double upper) {
  if (!(upper > lower)) throw OutOfRange("uniform prior needs lower < upper");
  return {Kind::uniform, lower, upper};
}

HyperPrior HyperPrior::normal(double mean, double precision) {
  if (!(precision > 0.0)) throw OutOfRange("normal prior needs precision > 0");
  return {Kind::normal, mean, precision};
}

HyperPrior::Support HyperPrior::support() const {
  switch (kind_) {
    case Kind::gamma:
    case Kind::log_normal:
      return Support::positive;
    case Kind::uniform:
      return Support::interval;
    case Kind::normal:
      return Support::real;
  }
  return Support::real;
}

std::pair<double, double> HyperPrior::support_bounds() const {
  constexpr double inf = std::numeric_limits<double>::infinity();
  switch (support()) {
    case Support::positive:
      return {0.0, inf};
    case Support::interval:
      return {a_, b_};
    case Support::real:
      return {-inf, inf};
  }
  return {-inf, inf};
}

bool HyperPrior::in_support(double value) const {
  const auto [lo, hi] = support_bounds();
  return value > lo && value < hi;
}

double HyperPrior::log_density(double v) const {
  if (!in_support(v)) return -std::numeric_limits<double>::infinity();
  switch (kind_) {
    case Kind::gamma:
      return a_ * std::log(b_) - std::lgamma(a_) + (a_ - 1.0) * std::log(v) - b_ * v;
    case Kind::log_normal: {
      const double d = std::log(v) - a_;
      return 0.5 * std::log(b_) - 0.5 * kLog2Pi - std::log(v) - 0.5 * b_ * d * d;
    }
    case Kind::uniform:
      return -std::log(b_ - a_);
    case Kind::normal: {
      const double d = v - a_;
      return 0.5 * std::log(b_) - 0.5 * kLog2Pi - 0.5 * b_ * d * d;
    }
  }
  return 0.0;
}

double HyperPrior::median() const {
  switch (kind_) {
    case Kind::gamma:
      return boost::math::median(boost::math::gamma_distribution<double>(a_, 1.0 / b_));
    case Kind::log_normal:
      return std::exp(a_);
    case Kind::uniform:
      return 0.5 * (a_ + b_);
    case Kind::normal:
      return a_;
  }
  return 0.0;
}

HyperPrior HyperPrior::scaled(double factor) const {
  if (!(factor > 0.0) || !std::isfinite(factor)) throw OutOfRange("prior scale factor must be positive");
  switch (kind_) {
    case Kind::gamma:
      return gamma(a_, b_ * factor);
    case Kind::log_normal:
      return log_normal(a_ - std::log(factor), b_);
    case Kind::uniform:
      return uniform(a_ / factor, b_ / factor);
    case Kind::normal:
      return normal(a_ / factor, b_ * factor * factor);
  }
  return *this;
}

double HyperPrior::to_internal(double value) const {
  switch (support()) {
    case Support::positive:
      return std::log(value);
    case Support::interval: {
      const double u = (value - a_) / (b_ - a_);
      return std::log(u / (1.0 - u));
    }
    case Support::real:
      return value;
  }
  return value;
}

double HyperPrior::from_internal(double z) const {
  switch (support()) {
    case Support::positive:
      return std::exp(z);
    case Support::interval:
      return a_ + (b_ - a_) / (1.0 + std::exp(-z));
    case Support::real:
      return z;
  }
  return z;
}

double HyperPrior::log_jacobian(double z) const {
  switch (support()) {
    case Support::positive:
      return z;
    case Support::interval: {
      // log((b - a) s (1 - s)) with s the logistic of z, written stably.
      const double az = std::abs(z);
      return std::log(b_ - a_) - az - 2.0 * std::log1p(std::exp(-az));
    }
    case Support::real:
      return 0.0;
  }
  return 0.0;
}

HyperPrior default_precision_prior() { return HyperPrior::gamma(1.0, 5e-5); }

// --- LatentModel --------------------------------------------------------------

int LatentModel::observed_count() const {
  int c = 0;
  for (int i = 0; i < y_.size(); ++i) c += is_missing(y_[i]) ? 0 : 1;
  return c;
}

std::vector<int> LatentModel::free_hypers() const {
  std::vector<int> out;
  for (int i = 0; i < hyper_count(); ++i) {
    if (!hypers_[static_cast<std::size_t>(i)].fixed) out.push_back(i);
  }
  return out;
}

int LatentModel::latent_index(std::string_view name) const {
  for (std::size_t i = 0; i < latent_names_.size(); ++i) {
    if (latent_names_[i] == name) return static_cast<int>(i);
  }
  return -1;
}

int LatentModel::hyper_index(std::string_view name) const {
  for (std::size_t i = 0; i < hypers_.size(); ++i) {
    if (hypers_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

std::vector<double> LatentModel::expand_hypers(std::span<const double> free_values) const {
  const auto free = free_hypers();
  if (free_values.size() != free.size()) throw DimensionMismatch("wrong number of free hyperparameter values");
  std::vector<double> out(hypers_.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < hypers_.size(); ++i) {
    out[i] = hypers_[i].fixed ? *hypers_[i].fixed : free_values[k++];
  }
  return out;
}

double LatentModel::log_hyper_prior(std::span<const double> hyper_values) const {
  double lp = 0.0;
  for (std::size_t i = 0; i < hypers_.size(); ++i) {
    if (!hypers_[i].fixed) lp += hypers_[i].prior.log_density(hyper_values[i]);
  }
  return lp;
}

double LatentModel::block_precision(const LatentComponent& c, std::span<const double> hyper_values) const {
  return hyper_values[static_cast<std::size_t>(c.hyper)];
}

SparseSym LatentModel::precision_matrix(std::span<const double> hyper_values) const {
  std::vector<Entry> entries;
  for (const auto& c : components_) {
    const double tau = block_precision(c, hyper_values);
    for (const auto& e : c.block.structure.entries()) {
      entries.push_back({c.offset + e.row, c.offset + e.col, tau * e.value});
    }
  }
  return SparseSym::from_entries(latent_dim(), entries);
}

double LatentModel::log_latent_prior(const Vector& x, std::span<const double> hyper_values) const {
  double lp = 0.0;
  for (const auto& c : components_) {
    lp += gmrf_log_density(c.block, block_precision(c, hyper_values), x.segment(c.offset, c.block.size()));
  }
  return lp;
}

// --- ModelBuilder -------------------------------------------------------------

ModelBuilder::ModelBuilder(Family family, Vector y) : family_(family), y_(std::move(y)) {
  offset_ = Vector::Zero(y_.size());
}

ModelBuilder& ModelBuilder::offset(Vector offset) {
  offset_ = std::move(offset);
  return *this;
}

int ModelBuilder::add_fixed_effects(const std::vector<std::string>& names, double precision) {
  const std::string hyper_name = "fixed." + std::to_string(fixed_groups_++);
  GmrfBlock block = iid(static_cast<int>(names.size()), "fixed", hyper_name);
  fixed_hyper(hyper_name, precision);
  return add_block(std::move(block), names);
}

int ModelBuilder::add_block(GmrfBlock block, std::vector<std::string> names) {
  const int n = block.size();
  if (names.empty()) {
    for (int i = 0; i < n; ++i) names.push_back(block.label + "[" + std::to_string(i) + "]");
  }
  if (static_cast<int>(names.size()) != n) throw DimensionMismatch("name count differs from block size for " + block.label);
  const int start = next_offset_;
  blocks_.push_back(std::move(block));
  block_offsets_.push_back(start);
  names_.insert(names_.end(), names.begin(), names.end());
  next_offset_ += n;
  return start;
}

ModelBuilder& ModelBuilder::hyper(const std::string& name, HyperPrior prior) {
  hyper_specs_[name] = Hyper{name, prior, std::nullopt};
  return *this;
}

ModelBuilder& ModelBuilder::fixed_hyper(const std::string& name, double value) {
  if (!(value >= 0.0) || !std::isfinite(value)) throw OutOfRange("fixed hyperparameter " + name + " must be finite");
  hyper_specs_[name] = Hyper{name, default_precision_prior(), value};
  return *this;
}

ModelBuilder& ModelBuilder::design_entry(int observation, int latent, double value) {
  design_.emplace_back(observation, latent, value);
  return *this;
}

ModelBuilder& ModelBuilder::design(const RowSparseMatrix& a) {
  for (int r = 0; r < a.outerSize(); ++r) {
    for (RowSparseMatrix::InnerIterator it(a, r); it; ++it) design_.emplace_back(r, static_cast<int>(it.col()), it.value());
  }
  return *this;
}

LatentModel ModelBuilder::build() const {
  LatentModel m;
  m.family_ = family_;
  m.y_ = y_;
  m.offset_ = offset_;
  const int nobs = static_cast<int>(y_.size());
  const int nlat = next_offset_;
  if (offset_.size() != nobs) throw DimensionMismatch("offset length differs from observation count");
  for (int i = 0; i < nobs; ++i) {
    if (!std::isfinite(offset_[i])) throw DimensionMismatch("non-finite offset at observation " + std::to_string(i));
    if (family_ == Family::poisson && !is_missing(y_[i]) && (y_[i] < 0.0 || y_[i] != std::floor(y_[i]))) {
      throw DimensionMismatch("Poisson observation " + std::to_string(i) + " is not a non-negative integer");
    }
  }
  for (const auto& t : design_) {
    if (t.row() < 0 || t.row() >= nobs || t.col() < 0 || t.col() >= nlat) {
      std::ostringstream msg;
      msg << "design entry (" << t.row() << ", " << t.col() << ") outside " << nobs << "x" << nlat;
      throw DimensionMismatch(msg.str());
    }
  }
  m.design_.resize(nobs, nlat);
  m.design_.setFromTriplets(design_.begin(), design_.end());
  m.design_.prune(0.0);
  m.design_.makeCompressed();
  for (int r = 0; r < nobs; ++r) {
    if (m.design_.outerIndexPtr()[r + 1] == m.design_.outerIndexPtr()[r]) {
      throw DimensionMismatch("observation " + std::to_string(r) + " does not touch any latent entry");
    }
  }
  m.latent_names_ = names_;

  std::map<std::string, int> hyper_ids;
  auto intern = [&](const std::string& name) {
    auto it = hyper_ids.find(name);
    if (it != hyper_ids.end()) return it->second;
    auto spec = hyper_specs_.find(name);
    if (spec == hyper_specs_.end()) throw DimensionMismatch("no prior or value given for hyperparameter " + name);
    const int id = static_cast<int>(m.hypers_.size());
    m.hypers_.push_back(spec->second);
    hyper_ids.emplace(name, id);
    return id;
  };

  if (family_ == Family::gaussian) {
    const std::string name(kObservationPrecision);
    if (!hyper_specs_.count(name)) {
      hyper_ids.emplace(name, static_cast<int>(m.hypers_.size()));
      m.hypers_.push_back(Hyper{name, default_precision_prior(), std::nullopt});
    }
    m.obs_hyper_ = intern(name);
  }

  int ncons = 0;
  for (const auto& b : blocks_) ncons += static_cast<int>(b.constraints.size());
  m.constraint_matrix_ = DenseMatrix::Zero(ncons, nlat);
  m.constraint_values_ = Vector::Zero(ncons);
  int row = 0;
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    LatentComponent c;
    c.block = blocks_[k];
    c.offset = block_offsets_[k];
    c.hyper = intern(c.block.precision_name);
    for (const auto& con : c.block.constraints) {
      for (auto [idx, coef] : con.coefficients) m.constraint_matrix_(row, c.offset + idx) += coef;
      m.constraint_values_[row] = con.value;
      ++row;
    }
    m.components_.push_back(std::move(c));
  }
  return m;
}

// --- likelihood -----------------------------------------------------------------

LikelihoodEval log_likelihood_eta(const LatentModel& model, Vector eta, std::span<const double> hyper_values) {
  const int n = model.observation_count();
  if (eta.size() != n) throw DimensionMismatch("linear predictor length differs from observation count");
  LikelihoodEval out;
  out.gradient = Vector::Zero(n);
  out.curvature = Vector::Zero(n);
  const Vector& y = model.y();
  const Vector& off = model.offset();
  if (model.family() == Family::gaussian) {
    const double prec = hyper_values[static_cast<std::size_t>(model.observation_precision_hyper())];
    const double norm = 0.5 * (std::log(prec) - kLog2Pi);
    for (int i = 0; i < n; ++i) {
      if (!std::isfinite(eta[i])) throw NonFiniteEta("non-finite linear predictor at observation " + std::to_string(i));
      if (is_missing(y[i])) continue;
      const double r = y[i] - eta[i] - off[i];
      out.value += norm - 0.5 * prec * r * r;
      out.gradient[i] = prec * r;
      out.curvature[i] = -prec;
    }
  } else {
    for (int i = 0; i < n; ++i) {
      if (!std::isfinite(eta[i])) throw NonFiniteEta("non-finite linear predictor at observation " + std::to_string(i));
      if (is_missing(y[i])) continue;
      const double lin = eta[i] + off[i];
      const double mu = std::exp(lin);
      out.value += y[i] * lin - mu - std::lgamma(y[i] + 1.0);
      out.gradient[i] = y[i] - mu;
      out.curvature[i] = -mu;
    }
  }
  if (!std::isfinite(out.value)) throw NonFinite("log-likelihood is not finite");
  out.eta = std::move(eta);
  return out;
}

LikelihoodEval log_likelihood(const LatentModel& model, const Vector& x, std::span<const double> hyper_values) {
  if (x.size() != model.latent_dim()) throw DimensionMismatch("latent vector length differs from model dimension");
  for (int i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) throw NonFinite("non-finite latent value at index " + std::to_string(i));
  }
  return log_likelihood_eta(model, model.design() * x, hyper_values);
}

}  // namespace inlamh
