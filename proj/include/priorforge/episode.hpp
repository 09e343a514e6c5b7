#pragma once

#include "priorforge/rng.hpp"
#include "priorforge/table.hpp"

#include <memory>
#include <span>
#include <vector>

namespace priorforge {

inline constexpr double kStdFloor = 1e-12;

// Per-column state of the support-fitted feature transform: an interpolated
// empirical CDF over the sorted unique support values, followed by a z-score
// computed from the mapped support values.
struct ColumnTransform {
  std::vector<double> knots;
  double mean = 0.0;
  double stddev = 1.0;
  bool categorical = false;

  // Position in [0, 1]; values outside the knot range clip.
  double quantile(double value) const;
  double operator()(double value) const { return (quantile(value) - mean) / stddev; }

  bool operator==(const ColumnTransform&) const = default;
};

struct Normalizer {
  std::vector<ColumnTransform> columns;
  bool has_target_range = false;  // regression only
  double target_min = 0.0;
  double target_max = 0.0;

  int cols() const { return static_cast<int>(columns.size()); }

  // Maps continuous columns; categorical codes pass through unless
  // `include_categorical` is set, in which case they take the same
  // quantile + z-score path (this is what the model consumes).
  Matrix apply(const Matrix& rows, bool include_categorical = false) const;
  double normalize_target(double y) const;
  double denormalize_target(double v) const;

  bool operator==(const Normalizer&) const = default;
};

Normalizer fit_normalizer(const Table& table, std::span<const int> support_idx);

struct Episode {
  std::shared_ptr<const Table> table;
  std::vector<int> support_idx;  // ascending
  std::vector<int> query_idx;    // ascending
  Normalizer normalizer;

  int support_size() const { return static_cast<int>(support_idx.size()); }
  int query_size() const { return static_cast<int>(query_idx.size()); }

  Matrix raw_rows(std::span<const int> idx) const;
  // Normalized model inputs, categorical columns included.
  Matrix support_inputs() const { return normalizer.apply(raw_rows(support_idx), true); }
  Matrix query_inputs() const { return normalizer.apply(raw_rows(query_idx), true); }
  // Class indices, or min-max normalized regression targets.
  Vector support_targets() const;
  Vector query_targets() const;
  Vector raw_query_targets() const;
};

// Uniform random support/query partition; throws SizeError when the sizes do
// not fit the table.
Episode make_episode(std::shared_ptr<const Table> table, int support, int query, Rng& rng);
Episode make_episode(const Table& table, int support, int query, Rng& rng);
// Fixed partition, used by callers that pick indices themselves.
Episode episode_from_indices(std::shared_ptr<const Table> table, std::vector<int> support_idx,
                             std::vector<int> query_idx);

}  // namespace priorforge
