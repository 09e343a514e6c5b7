#pragma once

#include "priorforge/rng.hpp"
#include "priorforge/table.hpp"

#include <vector>

namespace priorforge {

enum class Splitter { Best, Random };

struct CartParams {
  int max_depth = -1;  // < 0: unlimited
  int min_samples_split = 2;
  int max_features = 0;  // <= 0: all features
  Splitter splitter = Splitter::Best;
};

struct CartNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int depth = 0;
  std::vector<double> probs;  // classification leaves
  double value = 0.0;         // regression leaves
  bool is_leaf() const { return feature < 0; }
};

struct CartTree {
  std::vector<CartNode> nodes;  // nodes[0] is the root
  TaskKind task;
  int num_features = 0;
  CartParams params;

  int depth() const;
  const CartNode& leaf_for(const double* row) const;
};

// Result of a single node split search, exposed for testing.
struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double impurity = 0.0;  // row-weighted child Gini, or child SSE divided by the row count
  bool found() const { return feature >= 0; }
};

// Best split over `features` for the rows in `idx`. Candidates are midpoints
// of consecutive sorted unique values; ties keep the lowest (feature,
// threshold) pair. Weighted Gini for classification, child SSE for regression.
SplitChoice best_split(const Matrix& X, const Vector& y, const TaskKind& task, const std::vector<int>& idx,
                       const std::vector<int>& features);

// Throws DegenerateFitError when a classification target has a single class.
CartTree cart_fit(const Matrix& X, const Vector& y, const TaskKind& task, const CartParams& params, Rng& rng);
// Weighted variant used by bootstrap resampling: `rows` may repeat indices.
CartTree cart_fit_rows(const Matrix& X, const Vector& y, const TaskKind& task, const CartParams& params,
                       std::vector<int> rows, Rng& rng);
Vector cart_predict(const CartTree& tree, const Matrix& X);

enum class ForestKind { RF, ET };

struct ForestParams {
  int n_estimators = 10;
  int max_depth = -1;
  int max_features = 0;  // <= 0: floor(sqrt(d)), at least 1
  bool bootstrap = true;  // RF only; ET always uses the full sample
};

struct ForestModel {
  ForestKind kind = ForestKind::RF;
  TaskKind task;
  std::vector<CartTree> trees;
};

// Tree t draws from rng.child("tree", t); RF bootstraps from rng.child("bootstrap", t).
ForestModel forest_fit(const Matrix& X, const Vector& y, const TaskKind& task, ForestKind kind,
                       const ForestParams& params, Rng& rng);
// Majority vote (lowest class wins ties) or mean.
Vector forest_predict(const ForestModel& model, const Matrix& X);

struct GbmParams {
  int n_stages = 50;
  int max_depth = 3;
  double learning_rate = 0.1;
};

struct GbmModel {
  TaskKind task;
  std::vector<double> init_score;           // 1 entry (regression) or one log-prior per class
  std::vector<std::vector<CartTree>> stages;  // per stage: 1 tree or one per class
  double learning_rate = 0.1;
};

GbmModel gbm_fit(const Matrix& X, const Vector& y, const TaskKind& task, const GbmParams& params, Rng& rng);
// Raw additive scores: N x 1 (regression) or N x num_classes.
Matrix gbm_scores(const GbmModel& model, const Matrix& X, int max_stages = -1);
Vector gbm_predict(const GbmModel& model, const Matrix& X);

}  // namespace priorforge
