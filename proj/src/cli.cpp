#include "inlamh/cli.hpp"

#include "inlamh/bma.hpp"
#include "inlamh/dismap.hpp"
#include "inlamh/econ.hpp"
#include "inlamh/errors.hpp"
#include "inlamh/io.hpp"
#include "inlamh/oracle.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace inlamh {

namespace fs = std::filesystem;
using nlohmann::json;

RunModel parse_run_model(const std::string& name) {
  if (name == "manski") return RunModel::manski;
  if (name == "dismap") return RunModel::dismap;
  if (name == "oracle-manski") return RunModel::oracle_manski;
  if (name == "oracle-dismap") return RunModel::oracle_dismap;
  throw ConfigError("unknown model '" + name + "' (expected manski, dismap, oracle-manski or oracle-dismap)");
}

std::string run_model_name(RunModel model) {
  switch (model) {
    case RunModel::manski: return "manski";
    case RunModel::dismap: return "dismap";
    case RunModel::oracle_manski: return "oracle-manski";
    case RunModel::oracle_dismap: return "oracle-dismap";
  }
  return "";
}

namespace {

bool is_manski(RunModel m) { return m == RunModel::manski || m == RunModel::oracle_manski; }
bool is_oracle(RunModel m) { return m == RunModel::oracle_manski || m == RunModel::oracle_dismap; }

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

std::vector<double> number_list(const json& j, const std::string& where) {
  if (j.is_number()) return {j.get<double>()};
  if (!j.is_array() || j.empty()) throw ConfigError(where + " must be a number or a non-empty array of numbers");
  std::vector<double> out;
  for (const auto& v : j) {
    if (!v.is_number()) throw ConfigError(where + " must contain numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

std::vector<double> broadcast(const std::vector<double>& v, std::size_t dim, const std::string& where) {
  if (v.size() == 1) return std::vector<double>(dim, v.front());
  if (v.size() != dim) {
    throw ConfigError(where + " has " + std::to_string(v.size()) + " entries, expected 1 or " + std::to_string(dim));
  }
  return v;
}

HyperPrior parse_prior(const json& j, const std::string& where) {
  check_keys(j, where, {"kind", "params"});
  if (!j.contains("kind") || !j.contains("params")) throw ConfigError(where + " needs 'kind' and 'params'");
  const auto kind = j.at("kind").get<std::string>();
  const auto p = number_list(j.at("params"), where + ".params");
  if (p.size() != 2) throw ConfigError(where + ".params must have two entries");
  try {
    if (kind == "gamma") return HyperPrior::gamma(p[0], p[1]);
    if (kind == "log_normal") return HyperPrior::log_normal(p[0], p[1]);
    if (kind == "uniform") return HyperPrior::uniform(p[0], p[1]);
    if (kind == "normal") return HyperPrior::normal(p[0], p[1]);
  } catch (const InputError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  throw ConfigError(where + ": unknown prior kind '" + kind + "'");
}

double positive_number(const json& j, const std::string& where) {
  if (!j.is_number() || !(j.get<double>() > 0.0)) throw ConfigError(where + " must be a positive number");
  return j.get<double>();
}

void apply_priors(ManskiSpec& spec, const json& priors) {
  check_keys(priors, "priors", {"precision", "beta_precision"});
  if (priors.contains("precision")) spec.precision_prior = parse_prior(priors.at("precision"), "priors.precision");
  if (priors.contains("beta_precision")) spec.beta_precision = positive_number(priors.at("beta_precision"), "priors.beta_precision");
}

void apply_priors(DismapSpec& spec, const json& priors) {
  check_keys(priors, "priors", {"delta", "tau_v", "tau_s", "alpha_precision"});
  if (priors.contains("delta")) spec.delta_prior = parse_prior(priors.at("delta"), "priors.delta");
  if (priors.contains("tau_v")) spec.tau_v_prior = parse_prior(priors.at("tau_v"), "priors.tau_v");
  if (priors.contains("tau_s")) spec.tau_s_prior = parse_prior(priors.at("tau_s"), "priors.tau_s");
  if (priors.contains("alpha_precision")) spec.alpha_precision = positive_number(priors.at("alpha_precision"), "priors.alpha_precision");
}

ManskiSpec load_manski_run(const RunConfig& rc) {
  auto spec = load_manski(rc.gal, rc.csv, rc.response, rc.covariates, rc.intercept, rc.id_column);
  spec.lagged = rc.lagged;
  apply_priors(spec, rc.priors);
  return spec;
}

DismapSpec load_dismap_run(const RunConfig& rc) {
  auto spec = load_dismap(rc.gal, rc.csv, rc.rescale);
  apply_priors(spec, rc.priors);
  return spec;
}

ChainConfig engine_chain(const RunConfig& rc, ChainConfig base) {
  const std::size_t dim = base.initial.size();
  base.burnin = rc.burnin;
  base.iterations = rc.iterations;
  base.thin = rc.thin;
  base.seed = rc.seed;
  if (!rc.proposal_sd.empty()) base.proposal.sd = broadcast(rc.proposal_sd, dim, "chain.proposal_sd");
  if (!rc.initial.empty()) base.initial = broadcast(rc.initial, dim, "chain.initial");
  base.laplace = rc.laplace;
  base.laplace.track.clear();
  base.validate(static_cast<int>(dim));
  return base;
}

std::vector<int> latent_indices(const std::vector<std::string>& names, const std::vector<std::string>& available) {
  std::vector<int> out;
  for (const auto& name : names) {
    auto it = std::find(available.begin(), available.end(), name);
    if (it == available.end()) throw NameMismatch("track_latent entry '" + name + "' is not a latent name");
    out.push_back(static_cast<int>(it - available.begin()));
  }
  return out;
}

// --- output ---------------------------------------------------------------------

struct SummaryRow {
  std::string name;
  double mean, sd, q025, q50, q975;
  std::optional<double> ess;
};

SummaryRow grid_row(const std::string& name, const MarginalGrid& grid) {
  const auto s = summarize(grid);
  return {name, s.mean, s.sd, s.q025, s.q50, s.q975, std::nullopt};
}

SummaryRow series_row(const std::string& name, std::span<const double> x) {
  const auto s = summarize_series(x, name);
  return {name, s.mean, s.sd, s.q025, s.q50, s.q975, s.ess};
}

class Writer {
 public:
  explicit Writer(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_ / "marginals", ec);
    if (ec) throw ParseError("cannot create " + (dir_ / "marginals").string() + ": " + ec.message());
  }

  const fs::path& dir() const { return dir_; }

  void marginal(const std::string& name, const MarginalGrid& grid) {
    std::string file = name;
    std::replace(file.begin(), file.end(), '/', '_');
    write_marginal_json(dir_ / "marginals" / (file + ".json"), name, grid);
  }

  void summary(const std::vector<SummaryRow>& rows) {
    auto out = open("summary.csv");
    write_csv_row(out, {"name", "mean", "sd", "q025", "q50", "q975", "ess"});
    for (const auto& r : rows) {
      write_csv_row(out, {r.name, format_double(r.mean), format_double(r.sd), format_double(r.q025), format_double(r.q50),
                          format_double(r.q975), r.ess ? format_double(*r.ess) : ""});
    }
  }

  std::ofstream open(const std::string& file) const {
    std::ofstream out(dir_ / file);
    if (!out) throw ParseError("cannot write " + (dir_ / file).string());
    return out;
  }

 private:
  fs::path dir_;
};

void write_chain_csv(const Writer& w, const Chain& chain) {
  auto out = w.open("chain.csv");
  std::vector<std::string> header{"iteration"};
  header.insert(header.end(), chain.names.begin(), chain.names.end());
  header.emplace_back("log_ml");
  header.emplace_back("accepted");
  write_csv_row(out, header);
  for (const auto& step : chain.trace) {
    std::vector<std::string> row{std::to_string(step.iteration)};
    for (double t : step.theta) row.push_back(format_double(t));
    row.push_back(format_double(step.log_ml));
    row.emplace_back(step.accepted ? "1" : "0");
    write_csv_row(out, row);
  }
}

struct ImpactRow {
  std::string covariate;
  std::string kind;
  SummaryRow summary;
};

void write_impacts_csv(const Writer& w, const std::vector<ImpactRow>& rows) {
  auto out = w.open("impacts.csv");
  write_csv_row(out, {"covariate", "kind", "mean", "sd", "q025", "q50", "q975"});
  for (const auto& r : rows) {
    const auto& s = r.summary;
    write_csv_row(out, {r.covariate, r.kind, format_double(s.mean), format_double(s.sd), format_double(s.q025),
                        format_double(s.q50), format_double(s.q975)});
  }
}

void write_shared_field(const Writer& w, const std::vector<std::string>& ids, const Vector& mean, const Vector& sd) {
  auto out = w.open("shared_field.csv");
  write_csv_row(out, {"id", "mean", "sd"});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    write_csv_row(out, {ids[i], format_double(mean[k]), format_double(sd[k])});
  }
}

std::vector<double> ratio_series(const std::vector<double>& num, const std::vector<double>& den) {
  std::vector<double> out(num.size());
  for (std::size_t k = 0; k < num.size(); ++k) out[k] = num[k] / den[k];
  return out;
}

std::string ratio_name(int d) { return "delta" + std::to_string(d + 1) + "_over_delta1"; }

ChainProgress progress_logger(std::ostream* log, int iterations) {
  if (!log) return {};
  const int every = std::max(1, iterations / 10);
  return [log, every, iterations](int it, const Chain& chain) {
    if ((it + 1) % every == 0 || it + 1 == iterations) {
      const double rate = static_cast<double>(chain.accepted) / std::max<std::size_t>(1, chain.trace.size());
      *log << "iteration " << it + 1 << "/" << iterations << "  acceptance " << std::fixed << std::setprecision(3) << rate
           << std::defaultfloat << std::endl;
    }
  };
}

// --- runs -------------------------------------------------------------------------

RunReport run_manski(const RunConfig& rc, Writer& w, std::ostream* log) {
  const auto spec = load_manski_run(rc);
  const auto names = spec.latent_names();
  latent_indices(rc.track_latent, names);
  const auto config = engine_chain(rc, default_manski_chain());
  const auto fit = fit_manski(spec, config, progress_logger(log, config.iterations));
  write_chain_csv(w, fit.chain);

  std::vector<SummaryRow> rows;
  for (int j = 0; j < static_cast<int>(fit.chain.names.size()); ++j) {
    const auto x = fit.chain.coordinate(j);
    w.marginal(fit.chain.names[static_cast<std::size_t>(j)], histogram_grid(x));
    rows.push_back(series_row(fit.chain.names[static_cast<std::size_t>(j)], x));
  }
  for (std::size_t j = 0; j < names.size(); ++j) {
    w.marginal(names[j], fit.coefficient_marginals[j]);
    rows.push_back(grid_row(names[j], fit.coefficient_marginals[j]));
  }
  w.marginal("precision", fit.precision);
  rows.push_back(grid_row("precision", fit.precision));
  w.marginal("sigma2", fit.variance);
  rows.push_back(grid_row("sigma2", fit.variance));

  std::vector<ImpactRow> impact_rows;
  for (const auto& cov : spec.covariates) {
    if (cov == kIntercept) continue;
    const auto set = impacts(fit, spec, cov);
    for (const auto& [kind, grid] : {std::pair{"direct", &set.direct}, {"indirect", &set.indirect}, {"total", &set.total}}) {
      const std::string name = "impact." + cov + "." + kind;
      w.marginal(name, *grid);
      impact_rows.push_back({cov, kind, grid_row(name, *grid)});
    }
  }
  w.summary(rows);
  write_impacts_csv(w, impact_rows);
  return {w.dir(), 0.0, fit.chain.acceptance_rate(), static_cast<int>(fit.chain.draws.size())};
}

RunReport run_dismap(const RunConfig& rc, Writer& w, std::ostream* log) {
  const auto spec = load_dismap_run(rc);
  const int nd = spec.disease_count();
  DismapFamily family(spec);
  const auto base = default_dismap_chain(nd);
  auto config = engine_chain(rc, base);
  const auto extra = latent_indices(rc.track_latent, family.build(config.initial).latent_names());
  config.laplace.track = extra;
  const auto fit = fit_dismap(spec, config, progress_logger(log, config.iterations));
  write_chain_csv(w, fit.chain);

  std::vector<SummaryRow> rows;
  const auto first = fit.chain.coordinate(0);
  for (int d = 0; d < nd; ++d) {
    const auto x = fit.chain.coordinate(d);
    w.marginal(fit.chain.names[static_cast<std::size_t>(d)], histogram_grid(x));
    rows.push_back(series_row(fit.chain.names[static_cast<std::size_t>(d)], x));
  }
  for (int d = 1; d < nd; ++d) {
    const auto r = ratio_series(fit.chain.coordinate(d), first);
    w.marginal(ratio_name(d), histogram_grid(r));
    rows.push_back(series_row(ratio_name(d), r));
  }
  for (int d = 0; d < nd; ++d) {
    const std::string name = "alpha." + spec.diseases[static_cast<std::size_t>(d)];
    w.marginal(name, fit.alpha[static_cast<std::size_t>(d)]);
    rows.push_back(grid_row(name, fit.alpha[static_cast<std::size_t>(d)]));
  }
  w.marginal("tau_v", fit.tau_v);
  rows.push_back(grid_row("tau_v", fit.tau_v));
  w.marginal("tau_s", fit.tau_s);
  rows.push_back(grid_row("tau_s", fit.tau_s));
  for (std::size_t k = 0; k < extra.size(); ++k) {
    std::vector<MarginalGrid> grids;
    for (const auto& f : fit.chain.fits) grids.push_back(f->latent_marginals[static_cast<std::size_t>(f->tracked_position(extra[k]))]);
    const auto grid = mix_marginals(grids);
    w.marginal(rc.track_latent[k], grid);
    rows.push_back(grid_row(rc.track_latent[k], grid));
  }
  w.summary(rows);
  write_shared_field(w, spec.adjacency.ids(), fit.shared_mean, fit.shared_sd);
  return {w.dir(), 0.0, fit.chain.acceptance_rate(), static_cast<int>(fit.chain.draws.size())};
}

// Histogram marginal and summary row for every listed column of an oracle
// table, burn-in rows dropped.
void emit_columns(const SampleTable& table, const std::vector<std::string>& names, int skip, Writer& w,
                  std::vector<SummaryRow>& rows) {
  for (const auto& name : names) {
    const auto x = table.column(name, skip);
    w.marginal(name, histogram_grid(x));
    rows.push_back(series_row(name, x));
  }
}

RunReport run_oracle_manski(const RunConfig& rc, Writer& w, std::ostream* log) {
  const auto spec = load_manski_run(rc);
  const auto names = spec.latent_names();
  OracleOptions options;
  options.thin = rc.thin;
  if (!rc.proposal_sd.empty()) options.autoregressive_sd = rc.proposal_sd.front();
  if (log) *log << "oracle-manski: " << rc.iterations << " iterations" << std::endl;
  const auto table = oracle_manski(spec, rc.iterations, rc.seed, options);
  table.write_csv(w.dir() / "samples.csv");
  const int skip = rc.burnin / rc.thin;

  std::vector<SummaryRow> rows;
  std::vector<std::string> columns{"rho", "lambda"};
  columns.insert(columns.end(), names.begin(), names.end());
  columns.emplace_back(kObservationPrecision);
  emit_columns(table, columns, skip, w, rows);
  auto sigma2 = table.column(std::string(kObservationPrecision), skip);
  for (double& s : sigma2) s = 1.0 / s;
  w.marginal("sigma2", histogram_grid(sigma2));
  rows.push_back(series_row("sigma2", sigma2));

  const auto rho = table.column("rho", skip);
  ImpactCalculator calc(spec.w);
  std::vector<ImpactMultipliers> mult;
  mult.reserve(rho.size());
  for (double r : rho) mult.push_back(calc(r));
  std::vector<ImpactRow> impact_rows;
  for (const auto& cov : spec.covariates) {
    if (cov == kIntercept) continue;
    const auto beta = table.column(cov, skip);
    std::vector<double> gamma(beta.size(), 0.0);
    if (spec.lagged) gamma = table.column("lag." + cov, skip);
    std::vector<double> direct(beta.size()), indirect(beta.size()), total(beta.size());
    for (std::size_t k = 0; k < beta.size(); ++k) {
      direct[k] = beta[k] * mult[k].direct + gamma[k] * mult[k].lag_direct;
      total[k] = (beta[k] + gamma[k]) * mult[k].total;
      indirect[k] = total[k] - direct[k];
    }
    for (const auto& [kind, x] : {std::pair{"direct", &direct}, {"indirect", &indirect}, {"total", &total}}) {
      const std::string name = "impact." + cov + "." + kind;
      w.marginal(name, histogram_grid(*x));
      impact_rows.push_back({cov, kind, series_row(name, *x)});
    }
  }
  w.summary(rows);
  write_impacts_csv(w, impact_rows);
  return {w.dir(), 0.0, std::nullopt, table.rows() - skip};
}

RunReport run_oracle_dismap(const RunConfig& rc, Writer& w, std::ostream* log) {
  const auto spec = load_dismap_run(rc);
  const int nd = spec.disease_count();
  const int n = spec.n();
  OracleOptions options;
  options.thin = rc.thin;
  if (!rc.proposal_sd.empty()) options.log_scale_sd = rc.proposal_sd.front();
  if (log) *log << "oracle-dismap: " << rc.iterations << " sweeps" << std::endl;
  const auto table = oracle_dismap(spec, rc.iterations, rc.seed, options);
  for (const auto& name : rc.track_latent) table.index(name);
  table.write_csv(w.dir() / "samples.csv");
  const int skip = rc.burnin / rc.thin;

  std::vector<SummaryRow> rows;
  std::vector<std::string> deltas;
  for (int d = 0; d < nd; ++d) deltas.push_back("delta" + std::to_string(d + 1));
  emit_columns(table, deltas, skip, w, rows);
  const auto first = table.column(deltas.front(), skip);
  for (int d = 1; d < nd; ++d) {
    const auto r = ratio_series(table.column(deltas[static_cast<std::size_t>(d)], skip), first);
    w.marginal(ratio_name(d), histogram_grid(r));
    rows.push_back(series_row(ratio_name(d), r));
  }
  std::vector<std::string> rest;
  for (const auto& nm : spec.diseases) rest.push_back("alpha." + nm);
  rest.emplace_back("tau_v");
  rest.emplace_back("tau_s");
  rest.insert(rest.end(), rc.track_latent.begin(), rc.track_latent.end());
  emit_columns(table, rest, skip, w, rows);
  w.summary(rows);

  Vector mean(n), sd(n);
  for (int i = 0; i < n; ++i) {
    const auto s = summarize_series(table.column("v[" + std::to_string(i) + "]", skip));
    mean[i] = s.mean;
    sd[i] = s.sd;
  }
  write_shared_field(w, spec.adjacency.ids(), mean, sd);
  return {w.dir(), 0.0, std::nullopt, table.rows() - skip};
}

}  // namespace

// --- config -------------------------------------------------------------------------

json RunConfig::to_json() const {
  json j;
  j["model"] = run_model_name(model);
  j["data"] = {{"gal", gal.string()}, {"csv", csv.string()}};
  json chain{{"burnin", burnin}, {"iterations", iterations}, {"thin", thin}, {"seed", seed}};
  if (!proposal_sd.empty()) chain["proposal_sd"] = proposal_sd;
  if (!initial.empty()) chain["initial"] = initial;
  j["chain"] = chain;
  j["priors"] = priors;
  j["track_latent"] = track_latent;
  j["output"] = output.string();
  j["laplace"] = {{"workers", laplace.workers},           {"grid_step", laplace.grid_step},
                  {"grid_drop", laplace.grid_drop},       {"grid_max_steps", laplace.grid_max_steps},
                  {"mode_tolerance", laplace.mode_tolerance}, {"marginal_points", laplace.marginal_points}};
  if (is_manski(model)) {
    j["manski"] = {{"response", response}, {"covariates", covariates}, {"lagged", lagged},
                   {"intercept", intercept}, {"id_column", id_column}};
  } else {
    j["dismap"] = {{"rescale", rescale}};
  }
  return j;
}

RunConfig parse_run_config(const json& j, const fs::path& base_dir) {
  check_keys(j, "config", {"model", "data", "chain", "priors", "track_latent", "output", "laplace", "manski", "dismap"});
  RunConfig rc;
  try {
    if (!j.contains("model")) throw ConfigError("config needs 'model'");
    rc.model = parse_run_model(j.at("model").get<std::string>());
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : (base_dir / p).lexically_normal(); };

    if (!j.contains("data")) throw ConfigError("config needs 'data'");
    const auto& data = j.at("data");
    check_keys(data, "data", {"gal", "csv"});
    if (!data.contains("gal") || !data.contains("csv")) throw ConfigError("data needs 'gal' and 'csv'");
    rc.gal = resolve(data.at("gal").get<std::string>());
    rc.csv = resolve(data.at("csv").get<std::string>());

    if (rc.model == RunModel::oracle_manski) {
      rc.burnin = 10000;
      rc.iterations = 100000;
      rc.thin = 10;
    } else if (rc.model == RunModel::oracle_dismap) {
      rc.burnin = 20000;
      rc.iterations = 200000;
      rc.thin = 10;
    }
    if (j.contains("chain")) {
      const auto& c = j.at("chain");
      check_keys(c, "chain", {"burnin", "iterations", "thin", "seed", "proposal_sd", "initial"});
      if (c.contains("burnin")) rc.burnin = c.at("burnin").get<int>();
      if (c.contains("iterations")) rc.iterations = c.at("iterations").get<int>();
      if (c.contains("thin")) rc.thin = c.at("thin").get<int>();
      if (c.contains("seed")) rc.seed = c.at("seed").get<std::uint64_t>();
      if (c.contains("proposal_sd")) rc.proposal_sd = number_list(c.at("proposal_sd"), "chain.proposal_sd");
      if (c.contains("initial")) rc.initial = number_list(c.at("initial"), "chain.initial");
    }
    if (rc.iterations <= 0) throw ConfigError("chain.iterations must be positive");
    if (rc.thin <= 0) throw ConfigError("chain.thin must be positive");
    if (rc.burnin < 0 || rc.burnin >= rc.iterations) throw ConfigError("chain.burnin must lie in [0, iterations)");
    for (double s : rc.proposal_sd) {
      if (!(s > 0.0)) throw ConfigError("chain.proposal_sd entries must be positive");
    }
    if (is_oracle(rc.model) && rc.proposal_sd.size() > 1) throw ConfigError("oracle runs take a single proposal_sd");

    if (j.contains("priors")) rc.priors = j.at("priors");
    if (!rc.priors.is_object()) throw ConfigError("priors must be an object");
    if (j.contains("track_latent")) rc.track_latent = j.at("track_latent").get<std::vector<std::string>>();

    if (j.contains("laplace")) {
      const auto& l = j.at("laplace");
      check_keys(l, "laplace", {"workers", "grid_step", "grid_drop", "grid_max_steps", "mode_tolerance", "marginal_points"});
      if (l.contains("workers")) rc.laplace.workers = l.at("workers").get<int>();
      if (l.contains("grid_step")) rc.laplace.grid_step = positive_number(l.at("grid_step"), "laplace.grid_step");
      if (l.contains("grid_drop")) rc.laplace.grid_drop = positive_number(l.at("grid_drop"), "laplace.grid_drop");
      if (l.contains("grid_max_steps")) rc.laplace.grid_max_steps = l.at("grid_max_steps").get<int>();
      if (l.contains("mode_tolerance")) rc.laplace.mode_tolerance = positive_number(l.at("mode_tolerance"), "laplace.mode_tolerance");
      if (l.contains("marginal_points")) rc.laplace.marginal_points = l.at("marginal_points").get<int>();
      if (rc.laplace.workers < 1 || rc.laplace.grid_max_steps < 0 || rc.laplace.marginal_points < kMinMarginalPoints) {
        throw ConfigError("laplace: workers >= 1, grid_max_steps >= 0 and marginal_points >= " +
                          std::to_string(kMinMarginalPoints) + " required");
      }
    }

    if (j.contains("manski")) {
      if (!is_manski(rc.model)) throw ConfigError("'manski' section given for model " + run_model_name(rc.model));
      const auto& m = j.at("manski");
      check_keys(m, "manski", {"response", "covariates", "lagged", "intercept", "id_column"});
      if (m.contains("response")) rc.response = m.at("response").get<std::string>();
      if (m.contains("covariates")) rc.covariates = m.at("covariates").get<std::vector<std::string>>();
      if (m.contains("lagged")) rc.lagged = m.at("lagged").get<bool>();
      if (m.contains("intercept")) rc.intercept = m.at("intercept").get<bool>();
      if (m.contains("id_column")) rc.id_column = m.at("id_column").get<std::string>();
    }
    if (j.contains("dismap")) {
      if (is_manski(rc.model)) throw ConfigError("'dismap' section given for model " + run_model_name(rc.model));
      const auto& d = j.at("dismap");
      check_keys(d, "dismap", {"rescale"});
      if (d.contains("rescale")) rc.rescale = d.at("rescale").get<bool>();
    }

    rc.output = j.contains("output") ? resolve(j.at("output").get<std::string>()) : (base_dir / "results").lexically_normal();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  if (const char* env = std::getenv(kSeedEnvironment)) {
    try {
      std::size_t used = 0;
      const std::string s(env);
      rc.seed = std::stoull(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw ConfigError(std::string(kSeedEnvironment) + " is not an unsigned integer: '" + env + "'");
    }
  }
  return rc;
}

RunConfig parse_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  auto rc = parse_run_config(j, path.parent_path());
  rc.source = path;
  return rc;
}

void validate_run(const RunConfig& config) {
  if (is_manski(config.model)) {
    const auto spec = load_manski_run(config);
    latent_indices(config.track_latent, spec.latent_names());
    if (config.model == RunModel::manski) engine_chain(config, default_manski_chain());
  } else {
    const auto spec = load_dismap_run(config);
    if (config.model == RunModel::dismap) {
      const auto chain = engine_chain(config, default_dismap_chain(spec.disease_count()));
      latent_indices(config.track_latent, DismapFamily(spec).build(chain.initial).latent_names());
    }
  }
}

RunReport execute_run(const RunConfig& config, std::ostream* log) {
  const auto start = std::chrono::steady_clock::now();
  validate_run(config);
  Writer w(config.output);
  RunReport report;
  switch (config.model) {
    case RunModel::manski: report = run_manski(config, w, log); break;
    case RunModel::dismap: report = run_dismap(config, w, log); break;
    case RunModel::oracle_manski: report = run_oracle_manski(config, w, log); break;
    case RunModel::oracle_dismap: report = run_oracle_dismap(config, w, log); break;
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  json manifest;
  manifest["model"] = run_model_name(config.model);
  manifest["seed"] = config.seed;
  manifest["config"] = config.to_json();
  if (!config.source.empty()) manifest["config_file"] = fs::absolute(config.source).string();
  manifest["wall_time_seconds"] = report.wall_seconds;
  manifest["acceptance_rate"] = report.acceptance_rate ? json(*report.acceptance_rate) : json(nullptr);
  manifest["kept"] = report.kept;
  auto out = w.open("manifest.json");
  out << manifest.dump(2) << '\n';
  return report;
}

// --- compare ------------------------------------------------------------------------

namespace {

std::map<std::string, MarginalGrid> read_marginals(const fs::path& dir) {
  const auto sub = dir / "marginals";
  if (!fs::is_directory(sub)) throw ParseError("no marginals directory in " + dir.string());
  std::map<std::string, MarginalGrid> out;
  for (const auto& entry : fs::directory_iterator(sub)) {
    if (entry.path().extension() != ".json") continue;
    auto [name, grid] = read_marginal_json(entry.path());
    out.emplace(std::move(name), std::move(grid));
  }
  return out;
}

}  // namespace

std::vector<ComparisonRow> compare_runs(const fs::path& a, const fs::path& b) {
  const auto ma = read_marginals(a);
  const auto mb = read_marginals(b);
  std::vector<ComparisonRow> rows;
  for (const auto& [name, ga] : ma) {
    auto it = mb.find(name);
    if (it == mb.end()) continue;
    const auto sa = summarize(ga);
    const auto sb = summarize(it->second);
    rows.push_back({name, sa.mean, sb.mean, sa.sd, sb.sd, total_variation(ga, it->second)});
  }
  if (rows.empty()) throw NameMismatch(a.string() + " and " + b.string() + " share no parameter names");
  return rows;
}

json comparison_json(const std::vector<ComparisonRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    out.push_back({{"name", r.name},
                   {"mean_a", r.mean_a},
                   {"mean_b", r.mean_b},
                   {"mean_delta", r.mean_b - r.mean_a},
                   {"sd_a", r.sd_a},
                   {"sd_b", r.sd_b},
                   {"sd_delta", r.sd_b - r.sd_a},
                   {"total_variation", r.total_variation}});
  }
  return out;
}

void print_comparison(const std::vector<ComparisonRow>& rows, std::ostream& out) {
  std::size_t width = 4;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  const auto flags = out.flags();
  out << std::left << std::setw(static_cast<int>(width)) << "name" << std::right;
  for (const char* h : {"mean_a", "mean_b", "d_mean", "sd_a", "sd_b", "d_sd", "tv"}) out << std::setw(11) << h;
  out << '\n' << std::fixed << std::setprecision(4);
  for (const auto& r : rows) {
    out << std::left << std::setw(static_cast<int>(width)) << r.name << std::right;
    for (double v : {r.mean_a, r.mean_b, r.mean_b - r.mean_a, r.sd_a, r.sd_b, r.sd_b - r.sd_a, r.total_variation}) {
      out << std::setw(11) << v;
    }
    out << '\n';
  }
  out.flags(flags);
}

// --- entry point --------------------------------------------------------------------

namespace {

void simulate_dismap(int rows, int cols, std::uint64_t seed, const std::vector<double>& delta, double expected,
                     const fs::path& dir) {
  if (rows < 1 || cols < 1 || rows * cols < 2) throw ConfigError("lattice needs at least two regions");
  DismapTruth truth;
  if (!delta.empty()) {
    truth.delta = delta;
    truth.alpha.assign(delta.size(), 0.0);
  }
  truth.expected = expected;
  const auto adj = Adjacency::lattice(rows, cols);
  const auto synth = generate_synthetic(adj, truth, seed);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ParseError("cannot create " + dir.string() + ": " + ec.message());
  {
    std::ofstream gal(dir / "dismap.gal");
    if (!gal) throw ParseError("cannot write " + (dir / "dismap.gal").string());
    write_gal(adj, gal);
  }
  std::ofstream csv(dir / "dismap.csv");
  if (!csv) throw ParseError("cannot write " + (dir / "dismap.csv").string());
  const auto& spec = synth.spec;
  write_csv_row(csv, {"id", "disease", "observed", "expected"});
  for (int d = 0; d < spec.disease_count(); ++d) {
    for (int i = 0; i < spec.n(); ++i) {
      write_csv_row(csv, {adj.ids()[static_cast<std::size_t>(i)], spec.diseases[static_cast<std::size_t>(d)],
                          format_double(spec.observed(i, d)), format_double(spec.expected(i, d))});
    }
  }
  json t{{"rows", rows},           {"cols", cols},         {"seed", seed},
         {"delta", truth.delta},   {"alpha", truth.alpha}, {"tau_v", truth.tau_v},
         {"tau_s", truth.tau_s},   {"expected", truth.expected}};
  t["v"] = std::vector<double>(synth.v.data(), synth.v.data() + synth.v.size());
  std::ofstream(dir / "truth.json") << t.dump(2) << '\n';
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Laplace approximations for latent Gaussian models inside Metropolis-Hastings"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Fit a model described by a JSON config");
  std::string config_path;
  bool dry_run = false;
  int workers = 0;
  std::string output;
  run->add_option("config", config_path, "Config file")->required();
  run->add_flag("--dry-run", dry_run, "Validate and print the resolved config without writing");
  run->add_option("--workers", workers, "Threads for the hyperparameter grid")->check(CLI::PositiveNumber);
  run->add_option("--output", output, "Output directory (overrides the config)");

  auto* cmp = app.add_subcommand("compare", "Compare the marginals of two result directories");
  std::string dir_a, dir_b, json_path, format = "table";
  cmp->add_option("dirA", dir_a)->required();
  cmp->add_option("dirB", dir_b)->required();
  cmp->add_option("--json", json_path, "Also write the report as JSON");
  cmp->add_option("--format", format, "Report on stdout")->check(CLI::IsMember({"table", "json"}));

  auto* sim = app.add_subcommand("simulate-dismap", "Write a synthetic three-disease data set on a lattice");
  int rows = 7, cols = 7;
  std::uint64_t sim_seed = 1;
  std::vector<double> delta;
  double expected = DismapTruth{}.expected;
  std::string sim_dir;
  sim->add_option("--rows", rows)->capture_default_str();
  sim->add_option("--cols", cols)->capture_default_str();
  sim->add_option("--seed", sim_seed)->capture_default_str();
  sim->add_option("--delta", delta, "Loadings of the shared field")->delimiter(',');
  sim->add_option("--expected", expected, "Expected count per area and disease")->capture_default_str();
  sim->add_option("--output", sim_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) {
      auto rc = parse_run_config(fs::path(config_path));
      if (workers > 0) rc.laplace.workers = workers;
      if (!output.empty()) rc.output = output;
      if (dry_run) {
        validate_run(rc);
        std::cout << rc.to_json().dump(2) << '\n';
        return 0;
      }
      const auto report = execute_run(rc, &std::cerr);
      std::cout << "wrote " << report.output.string() << " (" << report.kept << " kept draws, "
                << std::fixed << std::setprecision(1) << report.wall_seconds << " s)\n";
    } else if (*cmp) {
      const auto result = compare_runs(dir_a, dir_b);
      if (format == "json") {
        std::cout << comparison_json(result).dump(2) << '\n';
      } else {
        print_comparison(result, std::cout);
      }
      if (!json_path.empty()) {
        std::ofstream out(json_path);
        if (!out) throw ParseError("cannot write " + json_path);
        out << comparison_json(result).dump(2) << '\n';
      }
    } else if (*sim) {
      simulate_dismap(rows, cols, sim_seed, delta, expected, sim_dir);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const InputError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const FitFailure& e) {
    std::cerr << "numerical failure: " << e.what() << "\n  theta_c =";
    for (double t : e.theta()) std::cerr << ' ' << format_double(t);
    std::cerr << '\n';
    return kExitNumerical;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  }
  return 0;
}

}  // namespace inlamh
