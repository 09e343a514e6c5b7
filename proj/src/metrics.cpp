#include "priorforge/metrics.hpp"

#include "priorforge/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>

namespace priorforge {

std::string_view to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::AUC: return "auc";
    case MetricKind::ACC: return "acc";
    case MetricKind::CE: return "ce";
    case MetricKind::R2: return "r2";
    case MetricKind::RMSE: return "rmse";
    case MetricKind::MAE: return "mae";
  }
  return "?";
}

MetricKind parse_metric(std::string_view name) {
  std::string key(name);
  std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
  for (auto k : {MetricKind::AUC, MetricKind::ACC, MetricKind::CE, MetricKind::R2, MetricKind::RMSE, MetricKind::MAE})
    if (to_string(k) == key) return k;
  throw ConfigError("unknown metric '" + std::string(name) + "' (auc, acc, ce, r2, rmse, mae)");
}

bool higher_is_better(MetricKind kind) {
  return kind == MetricKind::AUC || kind == MetricKind::ACC || kind == MetricKind::R2;
}

bool is_classification_metric(MetricKind kind) {
  return kind == MetricKind::AUC || kind == MetricKind::ACC || kind == MetricKind::CE;
}

namespace {

// Midranks (1-based) of `values`.
std::vector<double> midranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double auc_binary(std::span<const double> scores, std::span<const double> positive) {
  if (scores.size() != positive.size()) throw DimError("auc_binary: length mismatch");
  const auto ranks = midranks(scores);
  double n_pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (positive[i] != 0.0) {
      n_pos += 1.0;
      rank_sum += ranks[i];
    }
  }
  const double n_neg = static_cast<double>(scores.size()) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) throw SingleClassError("auc_binary needs both classes");
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

double auc_ovo(const Matrix& probs, std::span<const double> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != probs.rows()) throw DimError("auc_ovo: row count mismatch");
  std::set<int> present;
  for (double y : labels) {
    const int c = static_cast<int>(y);
    if (c < 0 || c >= probs.cols()) throw DimError("auc_ovo: label outside probability columns");
    present.insert(c);
  }
  if (present.size() < 2) throw SingleClassError("auc_ovo: only one class present in labels");
  const std::vector<int> classes(present.begin(), present.end());
  double total = 0.0;
  int pairs = 0;
  std::vector<double> scores;
  std::vector<double> pos;
  for (std::size_t a = 0; a < classes.size(); ++a) {
    for (std::size_t b = a + 1; b < classes.size(); ++b) {
      scores.clear();
      pos.clear();
      for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = static_cast<int>(labels[i]);
        if (y != classes[a] && y != classes[b]) continue;
        const double pa = probs(static_cast<Eigen::Index>(i), classes[a]);
        const double pb = probs(static_cast<Eigen::Index>(i), classes[b]);
        scores.push_back(pa + pb > 0.0 ? pa / (pa + pb) : 0.5);
        pos.push_back(y == classes[a] ? 1.0 : 0.0);
      }
      total += auc_binary(scores, pos);
      ++pairs;
    }
  }
  return total / pairs;
}

ClassificationMetrics classification_metrics(const Matrix& probs, std::span<const double> labels) {
  const auto n = static_cast<Eigen::Index>(labels.size());
  if (n != probs.rows() || n == 0) throw DimError("classification_metrics: row count mismatch");
  ClassificationMetrics m;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = static_cast<int>(labels[i]);
    Eigen::Index arg = 0;
    probs.row(i).maxCoeff(&arg);
    if (arg == y) m.acc += 1.0;
    m.ce -= std::log(std::clamp(probs(i, y), 1e-12, 1.0));
  }
  m.acc /= static_cast<double>(n);
  m.ce /= static_cast<double>(n);
  return m;
}

RegressionMetrics regression_metrics(std::span<const double> pred, std::span<const double> y) {
  if (pred.size() != y.size() || y.empty()) throw DimError("regression_metrics: length mismatch");
  const double n = static_cast<double>(y.size());
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double ss_res = 0.0, ss_tot = 0.0, abs_sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = y[i] - pred[i];
    ss_res += e * e;
    ss_tot += (y[i] - mean) * (y[i] - mean);
    abs_sum += std::abs(e);
  }
  RegressionMetrics m;
  // A constant target has no variance to explain; a perfect fit still scores 1.
  m.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
  m.rmse = std::sqrt(ss_res / n);
  m.mae = abs_sum / n;
  return m;
}

// ---------------------------------------------------------------------------
// Ranking

std::vector<double> elo_ratings(const Matrix& errors) {
  const auto m = errors.rows();
  const auto d = errors.cols();
  std::vector<double> elo(static_cast<std::size_t>(m), 1000.0);
  if (m < 2) return elo;
  // wins(a, b): score of a against b, games(a, b) symmetric.
  Matrix wins = Matrix::Constant(m, m, 0.5);
  Matrix games = Matrix::Constant(m, m, 1.0);
  for (Eigen::Index k = 0; k < d; ++k)
    for (Eigen::Index a = 0; a < m; ++a)
      for (Eigen::Index b = 0; b < m; ++b) {
        if (a == b) continue;
        games(a, b) += 1.0;
        if (errors(a, k) < errors(b, k)) wins(a, b) += 1.0;
        else if (errors(a, k) == errors(b, k)) wins(a, b) += 0.5;
      }
  // Minorize-maximize iterations for the strength parameters.
  Vector gamma = Vector::Ones(m);
  for (int it = 0; it < 10000; ++it) {
    Vector next(m);
    for (Eigen::Index a = 0; a < m; ++a) {
      double w = 0.0, denom = 0.0;
      for (Eigen::Index b = 0; b < m; ++b) {
        if (a == b) continue;
        w += wins(a, b);
        denom += games(a, b) / (gamma(a) + gamma(b));
      }
      next(a) = w / denom;
    }
    const double geo = std::exp(next.array().log().mean());
    next /= geo;
    const double change = (next.array().log() - gamma.array().log()).abs().maxCoeff();
    gamma = next;
    if (change < 1e-12) break;
  }
  const double scale = 400.0 / std::log(10.0);
  Vector r = scale * gamma.array().log();
  r.array() += 1000.0 - r.mean();
  for (Eigen::Index a = 0; a < m; ++a) elo[static_cast<std::size_t>(a)] = r(a);
  return elo;
}

namespace {

double quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

Leaderboard ranking_metrics(std::vector<std::string> models, std::vector<std::string> datasets, const Matrix& errors,
                            const RankingOptions& options) {
  const auto m = static_cast<Eigen::Index>(models.size());
  const auto d = static_cast<Eigen::Index>(datasets.size());
  if (errors.rows() != m || errors.cols() != d)
    throw IncompleteGridError("error grid is " + std::to_string(errors.rows()) + "x" + std::to_string(errors.cols()) +
                              ", expected " + std::to_string(m) + "x" + std::to_string(d));
  if (m == 0 || d == 0) throw IncompleteGridError("leaderboard needs at least one model and one dataset");
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index k = 0; k < d; ++k)
      if (!std::isfinite(errors(i, k)))
        throw IncompleteGridError("missing error for model '" + models[i] + "' on dataset '" + datasets[k] + "'");

  Leaderboard lb;
  lb.models = std::move(models);
  lb.datasets = std::move(datasets);
  lb.errors = errors;
  lb.entries.resize(static_cast<std::size_t>(m));

  for (Eigen::Index k = 0; k < d; ++k) {
    std::vector<double> col(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) col[i] = errors(i, k);
    const auto ranks = midranks(col);
    const double best = errors.col(k).minCoeff();
    const double worst = errors.col(k).maxCoeff();
    for (Eigen::Index i = 0; i < m; ++i) {
      auto& e = lb.entries[i];
      e.avg_rank += ranks[i];
      e.racc += worst > best ? 1.0 - (errors(i, k) - best) / (worst - best) : 1.0;
      for (Eigen::Index j = 0; j < m; ++j) {
        if (j == i) continue;
        if (errors(i, k) < errors(j, k)) e.winrate += 1.0;
        else if (errors(i, k) == errors(j, k)) e.winrate += 0.5;
      }
    }
  }
  const Vector mean_err = errors.rowwise().mean();
  const double champ = mean_err.minCoeff();
  const auto elo = elo_ratings(errors);

  std::vector<std::vector<double>> boot(static_cast<std::size_t>(m));
  if (options.bootstrap > 0) {
    const Rng root = Rng(options.seed).child("elo-bootstrap");
    Matrix sample(m, d);
    for (int b = 0; b < options.bootstrap; ++b) {
      Rng r = root.child(static_cast<std::uint64_t>(b));
      for (Eigen::Index k = 0; k < d; ++k) sample.col(k) = errors.col(r.uniform_int(0, d - 1));
      const auto e = elo_ratings(sample);
      for (Eigen::Index i = 0; i < m; ++i) boot[i].push_back(e[i]);
    }
  }

  for (Eigen::Index i = 0; i < m; ++i) {
    auto& e = lb.entries[i];
    e.model = lb.models[i];
    e.avg_rank /= static_cast<double>(d);
    e.racc /= static_cast<double>(d);
    e.winrate = m > 1 ? e.winrate / static_cast<double>(d * (m - 1)) : 0.5;
    e.mean_error = mean_err(i);
    e.champion_delta = mean_err(i) > 0.0 ? (1.0 - champ / mean_err(i)) * 100.0 : 0.0;
    e.elo = elo[i];
    e.elo_lo = boot[i].empty() ? e.elo : quantile(boot[i], 0.025);
    e.elo_hi = boot[i].empty() ? e.elo : quantile(boot[i], 0.975);
  }
  return lb;
}

}  // namespace priorforge
