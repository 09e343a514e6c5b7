#pragma once

#include <Eigen/Core>

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace priorforge {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

inline constexpr int kMaxFeatures = 16;
inline constexpr int kMaxClasses = 10;
inline constexpr int kMaxRows = 640;

enum class TaskFamily { Classification, Regression };

struct TaskKind {
  TaskFamily family = TaskFamily::Classification;
  int num_classes = 2;  // meaningful for classification only

  static TaskKind classification(int num_classes);
  static TaskKind regression() { return {TaskFamily::Regression, 0}; }

  bool is_classification() const { return family == TaskFamily::Classification; }
  bool operator==(const TaskKind&) const = default;
};

struct ColumnKind {
  int cardinality = 0;  // 0 = continuous

  static ColumnKind continuous() { return {0}; }
  static ColumnKind categorical(int cardinality);

  bool is_categorical() const { return cardinality > 0; }
  bool operator==(const ColumnKind&) const = default;
};

enum class PriorKind { SCM, DT, ET, GB, RF, DSRF };

inline constexpr std::array<PriorKind, 6> kAllPriors = {PriorKind::SCM, PriorKind::DT, PriorKind::ET,
                                                        PriorKind::GB,  PriorKind::RF, PriorKind::DSRF};

std::string_view to_string(PriorKind kind);
// Case-insensitive; throws ConfigError on unknown names.
PriorKind parse_prior_kind(std::string_view name);
std::string_view to_string(TaskFamily family);
TaskFamily parse_task_family(std::string_view name);

struct Table {
  Matrix features;  // N x d; categorical cells hold integer codes
  std::vector<ColumnKind> col_kinds;
  Vector target;  // class indices for classification
  TaskKind task;
  std::optional<PriorKind> prior_tag;
  // Free-form generator hyperparameters, recorded in archive manifests.
  std::vector<std::pair<std::string, double>> gen_info;

  int rows() const { return static_cast<int>(features.rows()); }
  int cols() const { return static_cast<int>(features.cols()); }

  // Throws SchemaError describing the first violated invariant.
  // `max_features` is relaxed for freshly ingested tables.
  void validate(int max_features = kMaxFeatures) const;
};

}  // namespace priorforge
