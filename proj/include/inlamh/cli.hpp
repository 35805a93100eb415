#pragma once

#include "inlamh/laplace.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace inlamh {

enum class RunModel { manski, dismap, oracle_manski, oracle_dismap };

RunModel parse_run_model(const std::string& name);  // throws ConfigError
std::string run_model_name(RunModel model);

// One run, fully resolved. Paths are absolute or relative to the working
// directory; those in the file are taken relative to the file's directory.
struct RunConfig {
  std::filesystem::path source;
  RunModel model = RunModel::manski;
  std::filesystem::path gal;
  std::filesystem::path csv;
  std::filesystem::path output;

  int burnin = 500;
  int iterations = 5500;
  int thin = 5;
  std::uint64_t seed = 1;
  std::vector<double> proposal_sd;  // empty: model default
  std::vector<double> initial;      // empty: model default

  nlohmann::json priors = nlohmann::json::object();
  std::vector<std::string> track_latent;
  LaplaceOptions laplace;

  // manski
  std::string response = "CRIME";
  std::vector<std::string> covariates{"INC", "HOVAL"};
  bool lagged = false;
  bool intercept = true;
  std::string id_column = "id";
  // dismap
  bool rescale = true;

  nlohmann::json to_json() const;
};

inline constexpr const char* kSeedEnvironment = "LAPLACE_MH_SEED";

// Throws ConfigError for malformed JSON, unknown models, missing keys and
// inconsistent chain settings. The environment seed, when set, replaces the
// file's.
RunConfig parse_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir);

struct RunReport {
  std::filesystem::path output;
  double wall_seconds = 0.0;
  std::optional<double> acceptance_rate;
  int kept = 0;
};

// Loads the data and validates the model without fitting or writing.
void validate_run(const RunConfig& config);

// Writes chain.csv (or samples.csv for oracle runs), marginals/<name>.json,
// summary.csv, impacts.csv or shared_field.csv, and manifest.json.
RunReport execute_run(const RunConfig& config, std::ostream* log = nullptr);

struct ComparisonRow {
  std::string name;
  double mean_a = 0.0;
  double mean_b = 0.0;
  double sd_a = 0.0;
  double sd_b = 0.0;
  double total_variation = 0.0;
};

// Marginals present in both result directories, ordered by name. Throws
// NameMismatch when they share none.
std::vector<ComparisonRow> compare_runs(const std::filesystem::path& a, const std::filesystem::path& b);
nlohmann::json comparison_json(const std::vector<ComparisonRow>& rows);
void print_comparison(const std::vector<ComparisonRow>& rows, std::ostream& out);

// Exit codes of cli_main.
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

int cli_main(int argc, char** argv);

}  // namespace inlamh
