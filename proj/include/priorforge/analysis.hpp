#pragma once

#include "priorforge/metrics.hpp"
#include "priorforge/priors.hpp"
#include "priorforge/tfm.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace priorforge {

// Runs fn(0..n-1) on up to `jobs` threads; the first exception is rethrown.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

// Scores one ICL prediction on an episode's query rows.
double score_episode(MetricKind metric, const Prediction& pred, const Episode& episode);

struct NamedModel {
  std::string name;
  const TfmModel* model = nullptr;
};

// ---------------------------------------------------------------------------
// Generalizability matrix

struct GenProtocol {
  int tables = 100;
  int rows = 1000;
  int support = 800;
  int query = 200;
  std::uint64_t seed = 0;
  MetricKind metric = MetricKind::AUC;
  // Feature count, class count and p_cat of the test tables are drawn from
  // these ranges; the row count is fixed at `rows`.
  ConfigRanges ranges;

  void validate() const;
};

struct GenMatrix {
  std::vector<PriorKind> priors;  // rows: trained-on, columns: tested-on
  Matrix values;                  // M x M mean metric
  Matrix stderrs;                 // standard error of each mean
  Eigen::MatrixXi counts;         // tables that contributed to each cell
  MetricKind metric = MetricKind::AUC;
  GenProtocol protocol;
  std::vector<std::vector<std::vector<double>>> scores;  // [i][j] per-table scores

  double at(PriorKind trained, PriorKind tested) const;
};

// The test table for (prior, index) depends only on protocol.seed, the prior
// and the index, so every model is scored on identical data down a column.
// Single-class query sets are redrawn once, then skipped.
Episode gen_test_episode(PriorKind prior, int index, const GenProtocol& protocol, bool* usable);

// `models[i]` is the model trained on `priors[i]`. Columns are independent
// jobs; `jobs` > 1 runs them on worker threads without changing the result.
GenMatrix gen_matrix(const std::vector<PriorKind>& priors, const std::vector<const TfmModel*>& models,
                     const GenProtocol& protocol, int jobs = 1);

// ---------------------------------------------------------------------------
// Performance vector

struct RealTable {
  std::string name;
  Table table;
};

struct PerfProtocol {
  int splits = 10;
  double support_frac = 0.8;
  int max_rows = 512;
  std::uint64_t seed = 0;
  MetricKind metric = MetricKind::AUC;

  void validate() const;
};

struct PerfVector {
  std::vector<std::string> models;
  std::vector<std::string> tables;
  Vector values;    // per model, mean over tables
  Matrix per_table;  // models x tables, mean over splits (NaN when no split was usable)
  MetricKind metric = MetricKind::AUC;
  PerfProtocol protocol;
};

// Tables must already satisfy the feature ceiling; rows above max_rows are
// subsampled with a seed derived from the table name.
PerfVector perf_vector(const std::vector<NamedModel>& models, const std::vector<RealTable>& tables,
                       const PerfProtocol& protocol, int jobs = 1);

// ---------------------------------------------------------------------------
// Selection

// Greedy forward selection over indices into the shared prior list: seed with
// argmax P, then repeatedly add argmin_j max_{i selected} G(i, j). Ties go to
// the higher P, then to the lower index.
std::vector<int> select_priors(const Matrix& g, const Vector& p, int k);

// ---------------------------------------------------------------------------
// Decision boundary export

struct DecisionGrid {
  int resolution = 0;
  int num_classes = 0;
  Matrix rows;  // resolution^2 x (2 + num_classes + 1): x, y, p_0.., argmax
};

// 10% of the table (at least one row) is the support set. The lattice spans
// [min - 0.5, max + 0.5] on each raw axis.
DecisionGrid decision_grid(const TfmModel& model, const Table& table, int resolution, Rng& rng);
void write_decision_grid_csv(const std::filesystem::path& path, const DecisionGrid& grid);

}  // namespace priorforge
