#include "doctest.h"
#include "oracles.hpp"

#include "priorforge/errors.hpp"
#include "priorforge/trees.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

using namespace priorforge;

namespace {

Matrix rows(std::initializer_list<std::initializer_list<double>> values) {
  Matrix m(static_cast<Eigen::Index>(values.size()), static_cast<Eigen::Index>(values.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : values) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

Vector vec(std::initializer_list<double> values) {
  Vector v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v(i++) = x;
  return v;
}

double accuracy(const Vector& pred, const Vector& y) { return (pred.array() == y.array()).cast<double>().mean(); }

double log_loss(const Matrix& scores, const Vector& y) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const double m = scores.row(i).maxCoeff();
    const double lse = m + std::log((scores.row(i).array() - m).exp().sum());
    total += lse - scores(i, static_cast<int>(y(i)));
  }
  return total / scores.rows();
}

struct Blobs {
  Matrix X;
  Vector y;
};

Blobs separable_blobs(int n, Rng& rng) {
  Blobs b{Matrix(n, 2), Vector(n)};
  for (int i = 0; i < n; ++i) {
    const int c = i % 2;
    b.y(i) = c;
    b.X(i, 0) = rng.normal(c ? 2.0 : -2.0, 0.5);
    b.X(i, 1) = rng.normal(c ? -1.0 : 1.0, 0.5);
  }
  return b;
}

double majority_rate(const Vector& y, int k) {
  std::vector<int> c(k, 0);
  for (double v : y) ++c[static_cast<int>(v)];
  return static_cast<double>(*std::max_element(c.begin(), c.end())) / y.size();
}

}  // namespace

TEST_CASE("cart separates a pair and XOR") {
  Rng rng(1);
  const auto cls2 = TaskKind::classification(2);
  const Matrix pair = rows({{0.0}, {1.0}});
  const Vector py = vec({0, 1});
  CHECK(accuracy(cart_predict(cart_fit(pair, py, cls2, {}, rng), pair), py) == 1.0);

  const Matrix xor_x = rows({{0, 0}, {0, 1}, {1, 0}, {1, 1}});
  const Vector xor_y = vec({0, 1, 1, 0});
  CartParams p;
  p.max_depth = 2;
  const auto tree = cart_fit(xor_x, xor_y, cls2, p, rng);
  CHECK(tree.depth() <= 2);
  CHECK(accuracy(cart_predict(tree, xor_x), xor_y) == 1.0);
}

TEST_CASE("cart depth 0 is the majority class or mean") {
  Rng rng(2);
  const Matrix X = rows({{0}, {1}, {2}, {3}, {4}});
  CartParams p;
  p.max_depth = 0;
  const auto cls = cart_fit(X, vec({2, 0, 2, 1, 2}), TaskKind::classification(3), p, rng);
  CHECK(cls.nodes.size() == 1);
  CHECK(cart_predict(cls, X) == Vector::Constant(5, 2.0));

  const auto reg = cart_fit(X, vec({1, 2, 3, 4, 10}), TaskKind::regression(), p, rng);
  CHECK(cart_predict(reg, X) == Vector::Constant(5, 4.0));
}

TEST_CASE("cart memorizes training rows and handles empty input") {
  Rng rng(3);
  Matrix X(60, 3);
  Vector y(60);
  for (int i = 0; i < 60; ++i) {
    for (int j = 0; j < 3; ++j) X(i, j) = rng.normal();
    y(i) = static_cast<double>(rng.uniform_int(0, 3));
  }
  const auto tree = cart_fit(X, y, TaskKind::classification(4), {}, rng);
  CHECK(cart_predict(tree, X) == y);
  for (const auto& node : tree.nodes) {
    if (!node.is_leaf()) continue;
    double s = 0.0;
    for (double p : node.probs) s += p;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK(cart_predict(tree, Matrix(0, 3)).size() == 0);
  CHECK_THROWS_AS(cart_predict(tree, Matrix(2, 4)), SchemaError);
}

TEST_CASE("threshold value routes left") {
  Rng rng(4);
  const Matrix X = rows({{1.0}, {3.0}});
  const auto tree = cart_fit(X, vec({0, 1}), TaskKind::classification(2), {}, rng);
  REQUIRE(!tree.nodes[0].is_leaf());
  CHECK(tree.nodes[0].threshold == 2.0);
  CHECK(cart_predict(tree, rows({{2.0}}))(0) == 0.0);
  CHECK(cart_predict(tree, rows({{2.0000001}}))(0) == 1.0);
}

TEST_CASE("single-class target is a degenerate fit") {
  Rng rng(5);
  const Matrix X = rows({{0}, {1}, {2}});
  const Vector y = vec({1, 1, 1});
  CHECK_THROWS_AS(cart_fit(X, y, TaskKind::classification(2), {}, rng), DegenerateFitError);
  CHECK_THROWS_AS(forest_fit(X, y, TaskKind::classification(2), ForestKind::RF, {}, rng), DegenerateFitError);
  CHECK_THROWS_AS(gbm_fit(X, y, TaskKind::classification(2), {}, rng), DegenerateFitError);
}

TEST_CASE("best_split matches exhaustive Gini and variance search") {
  Rng rng(6);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(2, 8));
    const int d = static_cast<int>(rng.uniform_int(1, 3));
    const int k = static_cast<int>(rng.uniform_int(2, 3));
    const auto task = trial % 2 ? TaskKind::classification(k) : TaskKind::regression();
    Matrix X(n, d);
    Vector y(n);
    for (int i = 0; i < n; ++i) {
      // Small integer grid so ties are common.
      for (int j = 0; j < d; ++j) X(i, j) = static_cast<double>(rng.uniform_int(0, 3));
      y(i) = task.is_classification() ? static_cast<double>(rng.uniform_int(0, k - 1)) : std::round(rng.normal() * 2);
    }
    std::vector<int> idx(n), feats(d);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int j = 0; j < d; ++j) feats[j] = j;
    const auto got = best_split(X, y, task, idx, feats);
    const auto want = oracle::exhaustive_split(X, y, task);
    REQUIRE(got.found() == want.found());
    if (!want.found()) continue;
    INFO("trial " << trial);
    REQUIRE(got.impurity == doctest::Approx(want.impurity).epsilon(1e-9));
    REQUIRE(got.feature == want.feature);
    REQUIRE(got.threshold == want.threshold);
  }
}

TEST_CASE("forest of one equals its tree") {
  Rng data(7);
  auto b = separable_blobs(50, data);
  ForestParams p;
  p.n_estimators = 1;
  for (auto kind : {ForestKind::RF, ForestKind::ET}) {
    Rng rng(8);
    const auto forest = forest_fit(b.X, b.y, TaskKind::classification(2), kind, p, rng);
    REQUIRE(forest.trees.size() == 1);
    CHECK(forest_predict(forest, b.X) == cart_predict(forest.trees[0], b.X));
  }
}

TEST_CASE("random forest fits separable blobs") {
  Rng data(9);
  auto b = separable_blobs(200, data);
  Rng rng(10);
  const auto forest = forest_fit(b.X, b.y, TaskKind::classification(2), ForestKind::RF, {}, rng);
  CHECK(accuracy(forest_predict(forest, b.X), b.y) >= 0.95);
}

TEST_CASE("ensembles beat the majority baseline and are deterministic") {
  Rng data(11);
  Matrix X(150, 3);
  Vector y(150);
  for (int i = 0; i < 150; ++i) {
    for (int j = 0; j < 3; ++j) X(i, j) = data.normal();
    y(i) = X(i, 0) + 0.5 * X(i, 1) > 0.3 ? (X(i, 2) > 0 ? 2 : 1) : 0;
  }
  const auto task = TaskKind::classification(3);
  const double base = majority_rate(y, 3);
  for (auto kind : {ForestKind::RF, ForestKind::ET}) {
    Rng a(12), b(12);
    const auto fa = forest_fit(X, y, task, kind, {}, a);
    const auto fb = forest_fit(X, y, task, kind, {}, b);
    CHECK(accuracy(forest_predict(fa, X), y) >= base);
    CHECK(forest_predict(fa, X) == forest_predict(fb, X));
  }
  Rng a(13), b(13);
  const auto ga = gbm_fit(X, y, task, {}, a);
  const auto gb = gbm_fit(X, y, task, {}, b);
  CHECK(accuracy(gbm_predict(ga, X), y) >= base);
  CHECK(gbm_predict(ga, X) == gbm_predict(gb, X));
}

TEST_CASE("extra-trees thresholds are uniform over the node range") {
  // One feature, one split: the only randomness is the threshold draw.
  const Matrix X = rows({{-1.0}, {0.0}, {0.5}, {2.0}, {3.0}});
  const Vector y = vec({0, 1, 0, 1, 0});
  CartParams p;
  p.max_depth = 1;
  p.splitter = Splitter::Random;
  std::vector<double> u;
  for (int s = 0; s < 2000; ++s) {
    Rng rng = Rng(14).child(s);
    const auto tree = cart_fit(X, y, TaskKind::classification(2), p, rng);
    REQUIRE(!tree.nodes[0].is_leaf());
    u.push_back((tree.nodes[0].threshold + 1.0) / 4.0);
  }
  std::sort(u.begin(), u.end());
  double ks = 0.0;
  const double n = static_cast<double>(u.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    ks = std::max({ks, std::abs((i + 1) / n - u[i]), std::abs(u[i] - i / n)});
  // 1% critical value of the one-sample KS statistic.
  CHECK(ks < 1.63 / std::sqrt(n));
}

TEST_CASE("gbm regression") {
  Rng rng(15);
  Matrix X(100, 1);
  Vector y(100);
  for (int i = 0; i < 100; ++i) {
    X(i, 0) = rng.uniform(-2.0, 2.0);
    y(i) = X(i, 0);
  }
  GbmParams none;
  none.n_stages = 0;
  const auto init = gbm_fit(X, y, TaskKind::regression(), none, rng);
  CHECK((gbm_predict(init, X).array() == y.mean()).all());

  GbmParams p;
  p.n_stages = 50;
  p.max_depth = 2;
  p.learning_rate = 0.1;
  const auto model = gbm_fit(X, y, TaskKind::regression(), p, rng);
  const double rmse = std::sqrt((gbm_predict(model, X) - y).squaredNorm() / 100);
  const double sd = std::sqrt((y.array() - y.mean()).square().mean());
  CHECK(rmse < 0.1 * sd);
}

TEST_CASE("gbm classification log-loss does not increase") {
  Rng rng(16);
  Matrix X(120, 2);
  Vector y(120);
  for (int i = 0; i < 120; ++i) {
    X(i, 0) = rng.normal();
    X(i, 1) = rng.normal();
    y(i) = X(i, 0) > 0.5 ? 2 : (X(i, 1) > 0 ? 1 : 0);
    if (rng.uniform() < 0.1) y(i) = static_cast<double>(rng.uniform_int(0, 2));
  }
  GbmParams p;
  p.n_stages = 30;
  p.max_depth = 2;
  const auto model = gbm_fit(X, y, TaskKind::classification(3), p, rng);
  REQUIRE(model.stages.size() == 30);
  REQUIRE(model.stages[0].size() == 3);
  double prev = log_loss(gbm_scores(model, X, 0), y);
  for (int m = 1; m <= 30; ++m) {
    const double cur = log_loss(gbm_scores(model, X, m), y);
    CHECK(cur <= prev + 1e-12);
    prev = cur;
  }
  CHECK_THROWS_AS(gbm_fit(X, y, TaskKind::classification(3), GbmParams{5, 2, 0.0}, rng), ConfigError);
}
