#include "priorforge/episode.hpp"

#include "priorforge/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace priorforge {

double ColumnTransform::quantile(double value) const {
  if (knots.empty()) return 0.0;
  if (value <= knots.front()) return 0.0;
  if (value >= knots.back()) return 1.0;
  // knots.size() >= 2 here since front < value < back.
  const auto upper = std::upper_bound(knots.begin(), knots.end(), value);
  const auto hi = static_cast<double>(upper - knots.begin());
  const double x0 = *(upper - 1);
  const double x1 = *upper;
  const double pos = (hi - 1.0) + (value - x0) / (x1 - x0);
  return pos / static_cast<double>(knots.size() - 1);
}

Matrix Normalizer::apply(const Matrix& rows, bool include_categorical) const {
  if (rows.cols() != cols())
    throw SchemaError("normalizer expects " + std::to_string(cols()) + " columns, got " +
                      std::to_string(rows.cols()));
  Matrix out = rows;
  for (int j = 0; j < cols(); ++j) {
    const auto& col = columns[j];
    if (col.categorical && !include_categorical) continue;
    for (Eigen::Index i = 0; i < rows.rows(); ++i) out(i, j) = col(rows(i, j));
  }
  return out;
}

double Normalizer::normalize_target(double y) const {
  if (!has_target_range) return y;
  const double span = target_max - target_min;
  if (span <= 0.0) return 0.0;
  return (y - target_min) / span;
}

double Normalizer::denormalize_target(double v) const {
  if (!has_target_range) return v;
  return target_min + v * (target_max - target_min);
}

Normalizer fit_normalizer(const Table& table, std::span<const int> support_idx) {
  if (support_idx.empty()) throw SizeError("normalizer needs a nonempty support set");
  Normalizer norm;
  const int d = table.cols();
  const auto s = static_cast<double>(support_idx.size());
  norm.columns.resize(d);
  for (int j = 0; j < d; ++j) {
    auto& col = norm.columns[j];
    col.categorical = table.col_kinds[j].is_categorical();
    col.knots.reserve(support_idx.size());
    for (int i : support_idx) col.knots.push_back(table.features(i, j));
    std::sort(col.knots.begin(), col.knots.end());
    col.knots.erase(std::unique(col.knots.begin(), col.knots.end()), col.knots.end());

    double sum = 0.0;
    for (int i : support_idx) sum += col.quantile(table.features(i, j));
    const double mean = sum / s;
    double sq = 0.0;
    for (int i : support_idx) {
      const double dev = col.quantile(table.features(i, j)) - mean;
      sq += dev * dev;
    }
    const double stddev = std::sqrt(sq / s);
    col.mean = mean;
    col.stddev = stddev < kStdFloor ? 1.0 : stddev;
  }
  if (!table.task.is_classification()) {
    norm.has_target_range = true;
    norm.target_min = norm.target_max = table.target(support_idx.front());
    for (int i : support_idx) {
      norm.target_min = std::min(norm.target_min, table.target(i));
      norm.target_max = std::max(norm.target_max, table.target(i));
    }
  }
  return norm;
}

Matrix Episode::raw_rows(std::span<const int> idx) const {
  Matrix out(static_cast<Eigen::Index>(idx.size()), table->cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = table->features.row(idx[r]);
  return out;
}

namespace {

Vector gather_targets(const Episode& ep, const std::vector<int>& idx, bool normalize) {
  Vector out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const double y = ep.table->target(idx[r]);
    out(static_cast<Eigen::Index>(r)) = normalize ? ep.normalizer.normalize_target(y) : y;
  }
  return out;
}

}  // namespace

Vector Episode::support_targets() const { return gather_targets(*this, support_idx, true); }
Vector Episode::query_targets() const { return gather_targets(*this, query_idx, true); }
Vector Episode::raw_query_targets() const { return gather_targets(*this, query_idx, false); }

Episode episode_from_indices(std::shared_ptr<const Table> table, std::vector<int> support_idx,
                             std::vector<int> query_idx) {
  if (support_idx.empty() || query_idx.empty()) throw SizeError("support and query must be nonempty");
  Episode ep;
  ep.normalizer = fit_normalizer(*table, support_idx);
  ep.table = std::move(table);
  ep.support_idx = std::move(support_idx);
  ep.query_idx = std::move(query_idx);
  return ep;
}

Episode make_episode(std::shared_ptr<const Table> table, int support, int query, Rng& rng) {
  const int n = table->rows();
  if (support < 1 || query < 1)
    throw SizeError("support and query sizes must be >= 1 (got s=" + std::to_string(support) +
                    ", q=" + std::to_string(query) + ")");
  if (support + query > n)
    throw SizeError("s + q = " + std::to_string(support + query) + " exceeds table rows " +
                    std::to_string(n));
  auto picked = rng.sample_without_replacement(n, support + query);
  std::vector<int> sup(picked.begin(), picked.begin() + support);
  std::vector<int> qry(picked.begin() + support, picked.end());
  std::sort(sup.begin(), sup.end());
  std::sort(qry.begin(), qry.end());
  return episode_from_indices(std::move(table), std::move(sup), std::move(qry));
}

Episode make_episode(const Table& table, int support, int query, Rng& rng) {
  return make_episode(std::make_shared<const Table>(table), support, query, rng);
}

}  // namespace priorforge
