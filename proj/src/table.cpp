#include "priorforge/table.hpp"

#include "priorforge/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace priorforge {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

TaskKind TaskKind::classification(int num_classes) {
  if (num_classes < 2 || num_classes > kMaxClasses)
    throw SchemaError("num_classes must be in [2, " + std::to_string(kMaxClasses) + "], got " +
                      std::to_string(num_classes));
  return {TaskFamily::Classification, num_classes};
}

ColumnKind ColumnKind::categorical(int cardinality) {
  if (cardinality < 2) throw SchemaError("categorical cardinality must be >= 2");
  return {cardinality};
}

std::string_view to_string(PriorKind kind) {
  switch (kind) {
    case PriorKind::SCM: return "scm";
    case PriorKind::DT: return "dt";
    case PriorKind::ET: return "et";
    case PriorKind::GB: return "gb";
    case PriorKind::RF: return "rf";
    case PriorKind::DSRF: return "dsrf";
  }
  return "?";
}

PriorKind parse_prior_kind(std::string_view name) {
  const auto key = lower(name);
  for (auto kind : kAllPriors)
    if (key == to_string(kind)) return kind;
  throw ConfigError("unknown prior '" + std::string(name) + "'");
}

std::string_view to_string(TaskFamily family) {
  return family == TaskFamily::Classification ? "classification" : "regression";
}

TaskFamily parse_task_family(std::string_view name) {
  const auto key = lower(name);
  if (key == "cls" || key == "classification") return TaskFamily::Classification;
  if (key == "reg" || key == "regression") return TaskFamily::Regression;
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

void Table::validate(int max_features) const {
  const int n = rows();
  const int d = cols();
  if (n < 2) throw SchemaError("table needs at least 2 rows, got " + std::to_string(n));
  if (d < 1 || d > max_features)
    throw SchemaError("feature count " + std::to_string(d) + " outside [1, " +
                      std::to_string(max_features) + "]");
  if (static_cast<int>(col_kinds.size()) != d) throw SchemaError("col_kinds length != feature count");
  if (target.size() != n) throw SchemaError("target length != row count");
  if (!features.allFinite() || !target.allFinite()) throw SchemaError("non-finite value in table");
  for (int j = 0; j < d; ++j) {
    const auto& kind = col_kinds[j];
    if (!kind.is_categorical()) continue;
    if (kind.cardinality < 2) throw SchemaError("categorical cardinality < 2");
    for (int i = 0; i < n; ++i) {
      const double v = features(i, j);
      if (v != std::floor(v) || v < 0 || v >= kind.cardinality)
        throw SchemaError("categorical cell out of range in column " + std::to_string(j));
    }
  }
  if (task.is_classification()) {
    if (task.num_classes < 2 || task.num_classes > kMaxClasses)
      throw SchemaError("num_classes outside [2, 10]");
    for (int i = 0; i < n; ++i) {
      const double y = target(i);
      if (y != std::floor(y) || y < 0 || y >= task.num_classes)
        throw SchemaError("class label out of range at row " + std::to_string(i));
    }
  }
}

}  // namespace priorforge
