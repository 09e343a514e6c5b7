#pragma once

#include "priorforge/analysis.hpp"
#include "priorforge/metrics.hpp"
#include "priorforge/priors.hpp"
#include "priorforge/tfm.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace priorforge {

struct DatasetSpec {
  std::string name;
  std::filesystem::path path;
  std::optional<std::string> target;
};

// suite.json: {"tables": [{"name", "file", "target", ...}]}; files resolve
// relative to the suite file.
std::vector<DatasetSpec> load_suite(const std::filesystem::path& suite_json);
std::vector<RealTable> load_real_tables(const std::vector<DatasetSpec>& specs);

struct RunConfig {
  std::uint64_t seed = 0;
  std::vector<PriorKind> priors{kAllPriors.begin(), kAllPriors.end()};
  Mixture mixture = Mixture::balanced();
  TfmConfig tfm;
  TrainHp train;
  GenProtocol gmatrix;   // seed is overwritten from the global seed
  PerfProtocol perfvec;  // likewise
  std::vector<DatasetSpec> datasets;
  int select_k = 0;  // 0 selects every prior
  int jobs = 1;
  std::filesystem::path out;

  void validate() const;
};

// Relative paths inside the config resolve against `base_dir`. The
// PRIORFORGE_SEED environment variable, when set, replaces "seed".
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
nlohmann::json to_json(const RunConfig& config);

nlohmann::json to_json(const GenProtocol& p);
nlohmann::json to_json(const PerfProtocol& p);
nlohmann::json to_json(const GenMatrix& g);
GenMatrix gen_matrix_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PerfVector& p);
PerfVector perf_vector_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Leaderboard& lb);

// Ranks the models of `p` on the tables where every model has a score.
// Scores are turned into errors as 1 - score when higher is better.
Leaderboard perf_leaderboard(const PerfVector& p, std::uint64_t seed);

// Per-purpose child seeds of the global seed.
std::uint64_t derive_seed(std::uint64_t global, std::string_view purpose, std::string_view name = "");

struct ExperimentResult {
  std::vector<std::string> model_names;  // priors, then "mixture"
  std::vector<TrainState> states;
  GenMatrix g;
  PerfVector p;
  std::vector<PriorKind> selection;
  Leaderboard leaderboard;
};

// Pretrains one model per prior plus the mixture model, then computes G, P,
// the selection order and a leaderboard. Writes the report directory when
// config.out is non-empty; refuses an existing directory unless `force`.
// The report holds no timestamps so reruns are byte-identical.
ExperimentResult run_experiment(const RunConfig& config, bool force, std::ostream* log = nullptr);

// Markdown table: one row per prior with its G row and P entry.
std::string summary_markdown(const ExperimentResult& result);

// Creates `dir`, or throws IoError if it exists and `force` is false.
void prepare_output_dir(const std::filesystem::path& dir, bool force);

}  // namespace priorforge
