#pragma once

#include "priorforge/rng.hpp"
#include "priorforge/table.hpp"

#include <span>
#include <string>
#include <vector>

namespace priorforge {

enum class MetricKind { AUC, ACC, CE, R2, RMSE, MAE };

std::string_view to_string(MetricKind kind);
MetricKind parse_metric(std::string_view name);
// AUC, ACC and R2 are scores; CE, RMSE and MAE are losses.
bool higher_is_better(MetricKind kind);
bool is_classification_metric(MetricKind kind);

// Binary AUC from the Mann-Whitney statistic with midranks; ties count 0.5.
// Nonzero entries of `positive` mark the positive class.
double auc_binary(std::span<const double> scores, std::span<const double> positive);

// Average of pairwise AUCs over every unordered pair of classes present in
// `labels`. Pair (a, b) scores rows of those classes by p_a / (p_a + p_b).
// Throws SingleClassError when fewer than two classes occur.
double auc_ovo(const Matrix& probs, std::span<const double> labels);

struct ClassificationMetrics {
  double acc = 0.0;
  double ce = 0.0;  // probabilities clipped to [1e-12, 1]
};

struct RegressionMetrics {
  double r2 = 0.0;
  double rmse = 0.0;
  double mae = 0.0;
};

ClassificationMetrics classification_metrics(const Matrix& probs, std::span<const double> labels);
RegressionMetrics regression_metrics(std::span<const double> predictions, std::span<const double> targets);

struct LeaderboardEntry {
  std::string model;
  double avg_rank = 0.0;
  double elo = 1000.0;
  double elo_lo = 1000.0;  // 2.5% bootstrap quantile
  double elo_hi = 1000.0;  // 97.5% bootstrap quantile
  double winrate = 0.0;
  double racc = 0.0;
  double champion_delta = 0.0;  // percent
  double mean_error = 0.0;
};

struct Leaderboard {
  std::vector<std::string> models;
  std::vector<std::string> datasets;
  Matrix errors;  // models x datasets
  std::vector<LeaderboardEntry> entries;  // aligned with `models`
};

struct RankingOptions {
  int bootstrap = 1000;
  std::uint64_t seed = 0;
};

// Ratings on the Elo scale from a logistic pairwise-strength fit, anchored to
// mean 1000. Each dataset contributes one game per model pair (tie = half a
// win), and every pair also gets one virtual tie so ratings stay finite when
// a model wins every game.
std::vector<double> elo_ratings(const Matrix& errors);

// `errors` is models x datasets; NaN marks a missing cell.
// Throws IncompleteGridError if any cell is missing.
Leaderboard ranking_metrics(std::vector<std::string> models, std::vector<std::string> datasets, const Matrix& errors,
                            const RankingOptions& options = {});

}  // namespace priorforge
