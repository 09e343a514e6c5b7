#include "doctest.h"

#include "priorforge/analysis.hpp"
#include "priorforge/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <tuple>

using namespace priorforge;
namespace fs = std::filesystem;

namespace {

// The selection rule written out directly: rank remaining priors by
// (worst-case coverage, -P, index) and take the smallest.
std::vector<int> literal_select(const Matrix& g, const Vector& p, int k) {
  const int m = static_cast<int>(p.size());
  std::vector<int> chosen = {static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin())};
  while (static_cast<int>(chosen.size()) < k) {
    std::vector<std::tuple<double, double, int>> ranked;
    for (int j = 0; j < m; ++j) {
      if (std::find(chosen.begin(), chosen.end(), j) != chosen.end()) continue;
      std::vector<double> col;
      for (int i : chosen) col.push_back(g(i, j));
      ranked.emplace_back(*std::max_element(col.begin(), col.end()), -p(j), j);
    }
    std::sort(ranked.begin(), ranked.end());
    chosen.push_back(std::get<2>(ranked.front()));
  }
  return chosen;
}

TfmModel tiny_model(std::uint64_t seed, Arch arch = Arch::OneD) {
  TfmConfig cfg;
  cfg.arch = arch;
  cfg.layers = 1;
  cfg.model_dim = 16;
  cfg.heads = 2;
  Rng rng(seed);
  return TfmModel::init(cfg, rng);
}

GenProtocol small_protocol(int tables) {
  GenProtocol p;
  p.tables = tables;
  p.rows = 64;
  p.support = 48;
  p.query = 16;
  p.seed = 77;
  p.ranges.max_features = 4;
  p.ranges.max_classes = 3;
  return p;
}

Table line_table(int n, Rng& rng) {
  Table t;
  t.features.resize(n, 2);
  t.target.resize(n);
  for (int i = 0; i < n; ++i) {
    t.features(i, 0) = rng.normal();
    t.features(i, 1) = rng.normal();
    t.target(i) = t.features(i, 0) + t.features(i, 1) > 0 ? 1 : 0;
  }
  t.col_kinds = {ColumnKind::continuous(), ColumnKind::continuous()};
  t.task = TaskKind::classification(2);
  return t;
}

}  // namespace

TEST_CASE("parallel_for visits every index and rethrows") {
  for (int jobs : {1, 3}) {
    std::vector<std::atomic<int>> hits(50);
    parallel_for(50, jobs, [&](int i) { ++hits[i]; });
    for (auto& h : hits) CHECK(h.load() == 1);
    CHECK_THROWS_AS(parallel_for(10, jobs,
                                 [](int i) {
                                   if (i == 7) throw SizeError("boom");
                                 }),
                    SizeError);
  }
}

TEST_CASE("select_priors hand cases") {
  Vector p(3);
  p << 0.9, 0.8, 0.85;
  Matrix g(3, 3);
  g << 0.99, 0.95, 0.70,  //
      0.60, 0.99, 0.80,   //
      0.50, 0.90, 0.99;
  CHECK(select_priors(g, p, 1) == std::vector<int>{0});
  CHECK(select_priors(g, p, 2) == std::vector<int>{0, 2});
  // With {0, 2} chosen, prior 1 is the only one left.
  CHECK(select_priors(g, p, 3) == std::vector<int>{0, 2, 1});

  // Equal coverage goes to the higher P.
  Matrix tie = Matrix::Constant(3, 3, 0.5);
  CHECK(select_priors(tie, p, 3) == std::vector<int>{0, 2, 1});

  CHECK_THROWS_AS(select_priors(g, p, 0), ConfigError);
  CHECK_THROWS_AS(select_priors(g, p, 4), ConfigError);
  CHECK_THROWS_AS(select_priors(Matrix(2, 3), p, 1), DimError);
}

TEST_CASE("select_priors agrees with the literal rule") {
  Rng rng(1);
  for (int trial = 0; trial < 2000; ++trial) {
    const int m = static_cast<int>(rng.uniform_int(2, 7));
    Matrix g(m, m);
    Vector p(m);
    const bool coarse = trial % 2 == 0;
    for (auto& v : g.reshaped()) v = coarse ? std::round(rng.uniform() * 4) / 4 : rng.uniform();
    for (auto& v : p) v = coarse ? std::round(rng.uniform() * 3) / 3 : rng.uniform();
    const int k = static_cast<int>(rng.uniform_int(1, m));
    REQUIRE(select_priors(g, p, k) == literal_select(g, p, k));
  }
}

TEST_CASE("a dominated column is picked last") {
  Rng rng(2);
  for (int trial = 0; trial < 500; ++trial) {
    Matrix g(4, 4);
    Vector p(4);
    const int dom = static_cast<int>(rng.uniform_int(0, 3));
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) g(i, j) = j == dom ? rng.uniform(0.6, 1.0) : rng.uniform(0.0, 0.5);
    for (auto& v : p) v = rng.uniform(0.0, 0.5);
    p((dom + 1) % 4) = 0.9;  // keep the dominated prior out of the seed slot
    const auto order = select_priors(g, p, 4);
    REQUIRE(order.back() == dom);
  }
}

TEST_CASE("test episodes depend only on seed, prior and index") {
  const auto proto = small_protocol(3);
  bool ua = false, ub = false;
  const Episode a = gen_test_episode(PriorKind::SCM, 2, proto, &ua);
  const Episode b = gen_test_episode(PriorKind::SCM, 2, proto, &ub);
  CHECK(ua == ub);
  CHECK(a.support_size() == 48);
  CHECK(a.query_size() == 16);
  CHECK(a.table->features == b.table->features);
  CHECK(a.table->target == b.table->target);
  CHECK(a.support_idx == b.support_idx);
  bool uc = false;
  const Episode c = gen_test_episode(PriorKind::SCM, 3, proto, &uc);
  CHECK(c.table->features != a.table->features);
}

TEST_CASE("gen_matrix columns are independent of model order and threads") {
  const auto proto = small_protocol(4);
  const TfmModel m_dsrf = tiny_model(1), m_scm = tiny_model(2);
  const auto g1 = gen_matrix({PriorKind::DSRF, PriorKind::SCM}, {&m_dsrf, &m_scm}, proto, 1);
  const auto g2 = gen_matrix({PriorKind::SCM, PriorKind::DSRF}, {&m_scm, &m_dsrf}, proto, 2);
  REQUIRE(g1.values.rows() == 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      CHECK(g1.values(i, j) == g2.values(1 - i, 1 - j));
      CHECK(g1.counts(i, j) == g2.counts(1 - i, 1 - j));
      CHECK(std::isfinite(g1.values(i, j)));
      CHECK(g1.values(i, j) >= 0.0);
      CHECK(g1.values(i, j) <= 1.0);
      CHECK(g1.counts(i, j) <= 4);
      CHECK(g1.scores[i][j].size() == static_cast<std::size_t>(g1.counts(i, j)));
    }
  CHECK(g1.at(PriorKind::SCM, PriorKind::DSRF) == g1.values(1, 0));
}

TEST_CASE("doubling tables per cell stays within three standard errors") {
  const TfmModel m = tiny_model(3);
  const auto g8 = gen_matrix({PriorKind::DSRF}, {&m}, small_protocol(8));
  const auto g16 = gen_matrix({PriorKind::DSRF}, {&m}, small_protocol(16));
  CHECK(std::abs(g8.values(0, 0) - g16.values(0, 0)) < 3.0 * g16.stderrs(0, 0) + 1e-12);
}

TEST_CASE("gen protocol validation") {
  auto p = small_protocol(2);
  p.support = 60;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = small_protocol(0);
  CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("identical models get identical performance entries") {
  Rng rng(4);
  std::vector<RealTable> tables;
  for (int t = 0; t < 3; ++t) tables.push_back({"line" + std::to_string(t), line_table(80 + 20 * t, rng)});
  const TfmModel a = tiny_model(5), b = tiny_model(5), c = tiny_model(6);
  PerfProtocol proto;
  proto.splits = 3;
  proto.seed = 9;
  const auto pv = perf_vector({{"a", &a}, {"b", &b}, {"c", &c}}, tables, proto);
  REQUIRE(pv.values.size() == 3);
  REQUIRE(pv.per_table.rows() == 3);
  REQUIRE(pv.per_table.cols() == 3);
  CHECK(pv.values(0) == pv.values(1));
  CHECK(pv.per_table.row(0) == pv.per_table.row(1));
  CHECK(pv.tables == std::vector<std::string>{"line0", "line1", "line2"});
  const auto again = perf_vector({{"c", &c}}, tables, proto, 2);
  CHECK(again.values(0) == pv.values(2));
}

TEST_CASE("decision grid shape and probabilities") {
  Rng rng(7);
  const Table table = line_table(100, rng);
  const TfmModel model = tiny_model(8);
  Rng grid_rng(1);
  const auto grid = decision_grid(model, table, 12, grid_rng);
  REQUIRE(grid.rows.rows() == 144);
  REQUIRE(grid.rows.cols() == 2 + 2 + 1);
  for (int r = 0; r < 144; ++r) {
    CHECK(grid.rows(r, 2) + grid.rows(r, 3) == doctest::Approx(1.0).epsilon(1e-6));
    const double arg = grid.rows(r, 2) >= grid.rows(r, 3) ? 0.0 : 1.0;
    CHECK(grid.rows(r, 4) == arg);
  }
  const double xmin = table.features.col(0).minCoeff() - 0.5;
  const double xmax = table.features.col(0).maxCoeff() + 0.5;
  CHECK(grid.rows.col(0).minCoeff() == doctest::Approx(xmin));
  CHECK(grid.rows.col(0).maxCoeff() == doctest::Approx(xmax));

  const auto dir = fs::temp_directory_path() / "priorforge_grid_test";
  fs::create_directories(dir);
  write_decision_grid_csv(dir / "grid.csv", grid);
  std::ifstream in(dir / "grid.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "x,y,p_class0,p_class1,argmax");
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 144);
  fs::remove_all(dir);

  Table wide = table;
  wide.features.conservativeResize(Eigen::NoChange, 3);
  wide.features.col(2).setZero();
  wide.col_kinds.push_back(ColumnKind::continuous());
  CHECK_THROWS_AS(decision_grid(model, wide, 12, grid_rng), DimError);
}
