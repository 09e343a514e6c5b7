#include "doctest.h"
#include "oracles.hpp"

#include "priorforge/errors.hpp"
#include "priorforge/metrics.hpp"

#include <cmath>

using namespace priorforge;

namespace {

// Bradley-Terry log-likelihood maximized by plain gradient ascent on the
// log-strengths, with the same one-virtual-tie smoothing per pair.
std::vector<double> oracle_elo(const Matrix& errors) {
  const auto m = errors.rows();
  Matrix w = Matrix::Constant(m, m, 0.5);
  for (Eigen::Index k = 0; k < errors.cols(); ++k)
    for (Eigen::Index a = 0; a < m; ++a)
      for (Eigen::Index b = 0; b < m; ++b)
        if (a != b) w(a, b) += errors(a, k) < errors(b, k) ? 1.0 : (errors(a, k) == errors(b, k) ? 0.5 : 0.0);
  Vector r = Vector::Zero(m);
  for (int it = 0; it < 200000; ++it) {
    Vector g = Vector::Zero(m);
    for (Eigen::Index a = 0; a < m; ++a)
      for (Eigen::Index b = 0; b < m; ++b) {
        if (a == b) continue;
        const double p = 1.0 / (1.0 + std::exp(r(b) - r(a)));
        g(a) += w(a, b) - (w(a, b) + w(b, a)) * p;
      }
    r += 0.05 * g;
    if (g.cwiseAbs().maxCoeff() < 1e-13) break;
  }
  std::vector<double> out(static_cast<std::size_t>(m));
  const double scale = 400.0 / std::log(10.0);
  const double mean = r.mean();
  for (Eigen::Index a = 0; a < m; ++a) out[static_cast<std::size_t>(a)] = 1000.0 + scale * (r(a) - mean);
  return out;
}

Matrix grid(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

}  // namespace

TEST_CASE("metric names") {
  for (auto k : {MetricKind::AUC, MetricKind::ACC, MetricKind::CE, MetricKind::R2, MetricKind::RMSE, MetricKind::MAE})
    CHECK(parse_metric(to_string(k)) == k);
  CHECK(parse_metric("AUC") == MetricKind::AUC);
  CHECK_THROWS_AS(parse_metric("f1"), ConfigError);
  CHECK(higher_is_better(MetricKind::AUC));
  CHECK(!higher_is_better(MetricKind::RMSE));
}

TEST_CASE("binary auc endpoints") {
  const std::vector<double> scores = {0.1, 0.2, 0.8, 0.9};
  const std::vector<double> pos = {0, 0, 1, 1};
  CHECK(auc_binary(scores, pos) == 1.0);
  const std::vector<double> flipped = {1, 1, 0, 0};
  CHECK(auc_binary(scores, flipped) == 0.0);
  const std::vector<double> flat = {0.5, 0.5, 0.5, 0.5};
  CHECK(auc_binary(flat, pos) == 0.5);

  Rng rng(1);
  std::vector<double> s(20000), l(20000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = rng.uniform();
    l[i] = static_cast<double>(i % 2);
  }
  CHECK(std::abs(auc_binary(s, l) - 0.5) < 0.02);
}

TEST_CASE("ovo auc matches pair counting") {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(2, 50));
    const int k = static_cast<int>(rng.uniform_int(2, 4));
    Matrix probs(n, k);
    std::vector<double> labels(n);
    for (int i = 0; i < n; ++i) {
      const auto p = rng.dirichlet_ones(k);
      // Coarse values make score ties frequent.
      for (int c = 0; c < k; ++c) probs(i, c) = trial % 2 ? std::round(p[c] * 4) / 4 : p[c];
      labels[i] = static_cast<double>(rng.uniform_int(0, k - 1));
    }
    labels[0] = 0;
    labels[1] = 1;
    REQUIRE(auc_ovo(probs, labels) == doctest::Approx(oracle::brute_auc(probs, labels)).epsilon(1e-12));
  }
}

TEST_CASE("ovo auc needs two classes") {
  const Matrix probs = grid({{0.6, 0.4}, {0.3, 0.7}});
  const std::vector<double> labels = {1, 1};
  CHECK_THROWS_AS(auc_ovo(probs, labels), SingleClassError);
}

TEST_CASE("classification metrics on four rows") {
  const Matrix probs = grid({{0.7, 0.3}, {0.4, 0.6}, {0.5, 0.5}, {0.1, 0.9}});
  const std::vector<double> labels = {0, 1, 0, 0};
  const auto m = classification_metrics(probs, labels);
  CHECK(m.acc == 0.75);
  const double ce = -(std::log(0.7) + std::log(0.6) + std::log(0.5) + std::log(0.1)) / 4;
  CHECK(m.ce == doctest::Approx(ce).epsilon(1e-14));

  const Matrix perfect = grid({{1.0, 0.0}, {0.0, 1.0}});
  const std::vector<double> pl = {0, 1};
  const auto p = classification_metrics(perfect, pl);
  CHECK(p.acc == 1.0);
  CHECK(p.ce <= 12 * std::log(10.0) * 1e-12);
  // A zero on the true class is clipped, not infinite.
  const std::vector<double> wrong = {1, 0};
  CHECK(classification_metrics(perfect, wrong).ce == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("regression metrics on four rows") {
  const std::vector<double> pred = {1, 2, 3, 4};
  const std::vector<double> target = {1, 3, 2, 6};
  const auto m = regression_metrics(pred, target);
  CHECK(m.r2 == doctest::Approx(4.0 / 7.0).epsilon(1e-14));
  CHECK(m.rmse == doctest::Approx(std::sqrt(1.5)).epsilon(1e-14));
  CHECK(m.mae == 1.0);

  const std::vector<double> mean_pred = {3, 3, 3, 3};
  CHECK(regression_metrics(mean_pred, target).r2 == doctest::Approx(0.0));
}

TEST_CASE("three-model leaderboard fixture") {
  // Dataset 1 is the {0.1, 0.3, 0.5} example; dataset 2 ties A and B.
  const Matrix errors = grid({{0.1, 0.2}, {0.3, 0.2}, {0.5, 0.4}});
  const auto lb = ranking_metrics({"A", "B", "C"}, {"d1", "d2"}, errors, {100, 1});
  const auto& a = lb.entries[0];
  const auto& b = lb.entries[1];
  const auto& c = lb.entries[2];
  CHECK(a.avg_rank == 1.25);
  CHECK(b.avg_rank == 1.75);
  CHECK(c.avg_rank == 3.0);
  CHECK(a.winrate == 0.875);
  CHECK(b.winrate == 0.625);
  CHECK(c.winrate == 0.0);
  CHECK(a.racc == 1.0);
  CHECK(b.racc == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(c.racc == 0.0);
  CHECK(a.champion_delta == 0.0);
  CHECK(b.champion_delta == doctest::Approx(40.0).epsilon(1e-12));
  CHECK(c.champion_delta == doctest::Approx(200.0 / 3.0).epsilon(1e-12));
  CHECK(a.mean_error == doctest::Approx(0.15));

  const auto single = ranking_metrics({"A", "B", "C"}, {"d1"}, grid({{0.1}, {0.3}, {0.5}}), {100, 1});
  CHECK(single.entries[1].racc == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(single.entries[0].racc == 1.0);
  CHECK(single.entries[2].racc == 0.0);
  CHECK(single.entries[0].champion_delta == 0.0);
}

TEST_CASE("tied models split the winrate") {
  const Matrix errors = grid({{0.2, 0.4, 0.1}, {0.2, 0.4, 0.1}});
  const auto lb = ranking_metrics({"x", "y"}, {"a", "b", "c"}, errors, {50, 3});
  CHECK(lb.entries[0].winrate == 0.5);
  CHECK(lb.entries[1].winrate == 0.5);
  CHECK(lb.entries[0].elo == doctest::Approx(1000.0));
  CHECK(lb.entries[0].racc == 1.0);
}

TEST_CASE("incomplete grid is rejected") {
  Matrix errors = grid({{0.1, 0.2}, {0.3, 0.4}});
  errors(1, 0) = std::nan("");
  CHECK_THROWS_AS(ranking_metrics({"a", "b"}, {"x", "y"}, errors), IncompleteGridError);
  CHECK_THROWS_AS(ranking_metrics({"a"}, {"x", "y"}, grid({{0.1, 0.2}, {0.3, 0.4}})), IncompleteGridError);
}

TEST_CASE("elo matches a gradient-ascent fit") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = static_cast<int>(rng.uniform_int(2, 6));
    const int d = static_cast<int>(rng.uniform_int(1, 12));
    Matrix errors(m, d);
    for (int i = 0; i < m; ++i)
      for (int k = 0; k < d; ++k) errors(i, k) = std::round(rng.uniform() * 5) / 5;
    const auto got = elo_ratings(errors);
    const auto want = oracle_elo(errors);
    double mean = 0.0;
    for (int i = 0; i < m; ++i) {
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-8));
      mean += got[i] / m;
    }
    CHECK(mean == doctest::Approx(1000.0));
  }
}

TEST_CASE("elo orders a dominant model first and its interval brackets it") {
  const Matrix errors = grid({{0.1, 0.1, 0.2, 0.1}, {0.2, 0.3, 0.3, 0.2}, {0.4, 0.4, 0.5, 0.3}});
  const auto lb = ranking_metrics({"a", "b", "c"}, {"1", "2", "3", "4"}, errors, {200, 9});
  CHECK(lb.entries[0].elo > lb.entries[1].elo);
  CHECK(lb.entries[1].elo > lb.entries[2].elo);
  for (const auto& e : lb.entries) {
    CHECK(e.elo_lo <= e.elo + 1e-9);
    CHECK(e.elo_hi >= e.elo - 1e-9);
  }
}

TEST_CASE("racc is invariant to scaling one dataset") {
  Rng rng(5);
  Matrix errors(4, 6);
  for (auto& v : errors.reshaped()) v = rng.uniform();
  Matrix scaled = errors;
  scaled.col(2) *= 3.7;
  scaled.col(4) *= 0.01;
  const auto a = ranking_metrics({"a", "b", "c", "d"}, {"1", "2", "3", "4", "5", "6"}, errors, {10, 1});
  const auto b = ranking_metrics({"a", "b", "c", "d"}, {"1", "2", "3", "4", "5", "6"}, scaled, {10, 1});
  for (int i = 0; i < 4; ++i) {
    CHECK(a.entries[i].racc == doctest::Approx(b.entries[i].racc).epsilon(1e-12));
    CHECK(a.entries[i].avg_rank == b.entries[i].avg_rank);
    CHECK(a.entries[i].winrate == b.entries[i].winrate);
  }
}

TEST_CASE("leaderboard is equivariant under model relabeling") {
  Rng rng(6);
  Matrix errors(4, 5);
  for (auto& v : errors.reshaped()) v = std::round(rng.uniform() * 8) / 8;
  const std::vector<int> perm = {2, 0, 3, 1};
  Matrix permuted(4, 5);
  std::vector<std::string> names = {"a", "b", "c", "d"}, pnames;
  for (int i = 0; i < 4; ++i) {
    permuted.row(i) = errors.row(perm[i]);
    pnames.push_back(names[perm[i]]);
  }
  const std::vector<std::string> ds = {"1", "2", "3", "4", "5"};
  const auto a = ranking_metrics(names, ds, errors, {0, 1});
  const auto b = ranking_metrics(pnames, ds, permuted, {0, 1});
  for (int i = 0; i < 4; ++i) {
    const auto& x = a.entries[perm[i]];
    const auto& y = b.entries[i];
    CHECK(x.model == y.model);
    CHECK(x.avg_rank == y.avg_rank);
    CHECK(x.winrate == y.winrate);
    CHECK(x.racc == y.racc);
    CHECK(x.champion_delta == doctest::Approx(y.champion_delta).epsilon(1e-12));
    CHECK(x.elo == doctest::Approx(y.elo).epsilon(1e-9));
  }
}
