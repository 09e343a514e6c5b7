#pragma once

#include "priorforge/rng.hpp"
#include "priorforge/table.hpp"
#include "priorforge/trees.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace priorforge {

// Row ceiling accepted by explicitly constructed configs (evaluation
// protocols use N = 1000); sampled configs stay within kMaxRows.
inline constexpr int kMaxEvalRows = 1024;

struct DatasetConfig {
  int d = 2;
  int n_rows = 64;
  TaskKind task;
  double p_cat = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Inclusive sampling ranges for dataset hyperparameters.
struct ConfigRanges {
  int min_features = 2;
  int max_features = kMaxFeatures;
  int min_rows = 64;
  int max_rows = kMaxRows;
  int min_classes = 2;
  int max_classes = kMaxClasses;
  double max_p_cat = 0.4;

  void validate() const;
};

DatasetConfig sample_dataset_config(TaskFamily task, Rng& rng, const ConfigRanges& ranges = {});

struct FeatureDraw {
  Matrix features;
  std::vector<ColumnKind> col_kinds;
};

// Column layout of a generated feature matrix: which columns are
// categorical, their cardinalities and their multinomial probabilities.
struct FeatureSchema {
  std::vector<ColumnKind> col_kinds;
  std::vector<std::vector<double>> category_probs;  // empty for continuous columns
};

int categorical_count(int d, double p_cat);
FeatureSchema sample_feature_schema(const DatasetConfig& cfg, Rng& rng);
Matrix sample_feature_cells(const FeatureSchema& schema, int n_rows, Rng& rng);
FeatureDraw gen_features(const DatasetConfig& cfg, Rng& rng);
// Multinomial labels with Dirichlet(1) class probabilities.
Vector gen_multinomial(int n, int num_classes, Rng& rng);

// ---------------------------------------------------------------------------
// Directly sampled random trees

struct Interval {
  double lb = 0.0;
  double ub = 0.0;
  bool operator==(const Interval&) const = default;
};

struct RandTreeNode {
  int feature = -1;  // split index; -1 on leaves
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int depth = 0;
  std::optional<double> target;  // leaves only
  std::map<int, Interval> rs;    // path-implied interval per feature seen so far
  bool is_leaf() const { return target.has_value(); }
};

struct RandTree {
  std::vector<RandTreeNode> nodes;  // nodes[0] is the root
  int num_features = 0;
  int leaf_count() const;
};

struct DsrfParams {
  int num_estimators = 1;
  int min_depth = 1;
  int max_depth = 3;
  Interval thres_int{-3.0, 3.0};
  double p_nc = 0.3;
  double leaf_mu = 0.0;
  double leaf_sigma = 1.0;

  void validate() const;
};

DsrfParams sample_dsrf_params(Rng& rng);

RandTree rand_dt(const DatasetConfig& cfg, const DsrfParams& params, const TaskKind& task, Rng& rng);
// Recursive descent; x[feature] <= threshold goes left.
double dt_traverse(std::span<const double> x, const RandTree& tree);
// Majority vote with lowest-class tie-break.
int majority_vote(std::span<const double> labels, int num_classes);

struct DsrfDraw {
  Table table;
  std::vector<RandTree> forest;
};

DsrfDraw dsrf_sample_forest(const DatasetConfig& cfg, const DsrfParams& params, Rng& rng);
Table dsrf_sample(const DatasetConfig& cfg, const DsrfParams& params, Rng& rng);

// ---------------------------------------------------------------------------
// Indirectly sampled tree priors

struct LearnerHp {
  int max_depth = 6;
  int n_estimators = 10;
  double learning_rate = 0.1;
};

LearnerHp sample_learner_hp(Rng& rng);

struct IndirectOptions {
  std::optional<LearnerHp> hp;  // default: sampled per table
};

Table indirect_sample(PriorKind kind, const DatasetConfig& cfg, Rng& rng, const IndirectOptions& options = {});

// ---------------------------------------------------------------------------
// Structural causal model

enum class Activation { Identity, Tanh, Relu, Sin };

struct ScmOptions {
  std::optional<double> noise_std;
  std::optional<Activation> activation;
};

struct ScmGraph {
  struct Node {
    std::vector<int> parents;
    std::vector<double> weights;
    double bias = 0.0;
    double noise_std = 0.0;
    Activation activation = Activation::Identity;
  };
  std::vector<Node> nodes;  // topological order
  Matrix values;            // N x K raw node values
  std::vector<int> feature_nodes;
  int target_node = -1;
};

struct ScmDraw {
  Table table;
  ScmGraph graph;
};

double apply_activation(Activation act, double x);
// Rank-bins `values` into `bins` nonempty groups with random widths (each at
// least 1/(2*bins) of the rows) and randomly permuted bin labels.
Vector rank_bin(const Vector& values, int bins, Rng& rng);
ScmDraw scm_sample_graph(const DatasetConfig& cfg, Rng& rng, const ScmOptions& options = {});
Table scm_sample(const DatasetConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// Mixture

class Mixture {
 public:
  // Throws ConfigError unless weights are >= 0 and sum to 1 within 1e-9.
  explicit Mixture(std::map<PriorKind, double> weights);

  static Mixture single(PriorKind kind) { return Mixture({{kind, 1.0}}); }
  // 50% SCM, the remaining mass split evenly across the five tree priors.
  static Mixture balanced();

  const std::map<PriorKind, double>& weights() const { return weights_; }
  PriorKind draw(Rng& rng) const;

 private:
  std::map<PriorKind, double> weights_;
};

// Dispatches one sampler; prior_tag is set on the result.
Table sample_prior(PriorKind kind, const DatasetConfig& cfg, Rng& rng);
Table mixture_sample(const Mixture& mix, TaskFamily task, Rng& rng, const ConfigRanges& ranges = {});

}  // namespace priorforge
