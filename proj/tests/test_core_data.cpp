#include "doctest.h"

#include "priorforge/archive.hpp"
#include "priorforge/episode.hpp"
#include "priorforge/errors.hpp"
#include "priorforge/priors.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

using namespace priorforge;
namespace fs = std::filesystem;

namespace {

Table column_table(std::vector<double> values, TaskKind task = TaskKind::classification(2)) {
  Table t;
  const auto n = static_cast<Eigen::Index>(values.size());
  t.features.resize(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) t.features(i, 0) = values[i];
  t.col_kinds = {ColumnKind::continuous()};
  t.target = Vector::Zero(n);
  t.task = task;
  return t;
}

Table random_table(Rng& rng, int n, int d) {
  Table t;
  t.features.resize(n, d);
  for (Eigen::Index i = 0; i < t.features.size(); ++i) t.features.data()[i] = rng.normal();
  t.col_kinds.assign(d, ColumnKind::continuous());
  t.target.resize(n);
  for (int i = 0; i < n; ++i) t.target(i) = static_cast<double>(rng.uniform_int(0, 2));
  t.task = TaskKind::classification(3);
  return t;
}

fs::path temp_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("priorforge_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("episode sizes for the evaluation protocol") {
  Rng rng(1);
  const Table t = random_table(rng, 1000, 3);
  Rng split(2);
  const Episode ep = make_episode(t, 800, 200, split);
  CHECK(ep.support_size() == 800);
  CHECK(ep.query_size() == 200);
  std::set<int> all(ep.support_idx.begin(), ep.support_idx.end());
  all.insert(ep.query_idx.begin(), ep.query_idx.end());
  CHECK(all.size() == 1000);
}

TEST_CASE("two-row table splits one and one") {
  const Table t = column_table({1.0, 2.0});
  Rng rng(3);
  const Episode ep = make_episode(t, 1, 1, rng);
  CHECK(ep.support_idx.size() == 1);
  CHECK(ep.query_idx.size() == 1);
  CHECK(ep.support_idx[0] != ep.query_idx[0]);
}

TEST_CASE("fixed seed gives identical index lists") {
  Rng data(4);
  const Table t = random_table(data, 10, 2);
  Rng a(42), b(42);
  const Episode e1 = make_episode(t, 6, 3, a);
  const Episode e2 = make_episode(t, 6, 3, b);
  CHECK(e1.support_idx == e2.support_idx);
  CHECK(e1.query_idx == e2.query_idx);
  CHECK(e1.normalizer == e2.normalizer);
}

TEST_CASE("bad sizes raise SizeError") {
  const Table t = column_table({1, 2, 3});
  Rng rng(5);
  CHECK_THROWS_AS(make_episode(t, 3, 1, rng), SizeError);
  CHECK_THROWS_AS(make_episode(t, 0, 2, rng), SizeError);
  CHECK_THROWS_AS(make_episode(t, 2, 0, rng), SizeError);
}

TEST_CASE("partition property under random sizes") {
  Rng rng(6);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(2, 60));
    const int s = static_cast<int>(rng.uniform_int(1, n - 1));
    const int q = static_cast<int>(rng.uniform_int(1, n - s));
    const Table t = random_table(rng, n, 2);
    Rng split = rng.child(static_cast<std::uint64_t>(trial));
    const Episode ep = make_episode(t, s, q, split);
    std::set<int> all(ep.support_idx.begin(), ep.support_idx.end());
    all.insert(ep.query_idx.begin(), ep.query_idx.end());
    CHECK(static_cast<int>(all.size()) == s + q);
    CHECK(std::is_sorted(ep.support_idx.begin(), ep.support_idx.end()));
    CHECK(std::is_sorted(ep.query_idx.begin(), ep.query_idx.end()));
  }
}

TEST_CASE("quantile map and z-score on [1, 2, 3]") {
  const Table t = column_table({1.0, 2.0, 3.0, 2.0, 1.5, -4.0});
  const std::vector<int> support{0, 1, 2};
  const Normalizer n = fit_normalizer(t, support);
  // Mapped support = {0, 0.5, 1}: mean 0.5, population std sqrt(1/6).
  const double sd = std::sqrt(1.0 / 6.0);
  CHECK(n.columns[0].quantile(2.0) == doctest::Approx(0.5));
  CHECK(n.columns[0].mean == doctest::Approx(0.5));
  CHECK(n.columns[0].stddev == doctest::Approx(sd));
  CHECK(n.columns[0](2.0) == doctest::Approx(0.0));
  CHECK(n.columns[0](1.5) == doctest::Approx((0.25 - 0.5) / sd));
  // Below the support minimum clips to quantile 0.
  CHECK(n.columns[0].quantile(-4.0) == 0.0);
  CHECK(n.columns[0](-4.0) == doctest::Approx(-0.5 / sd));
  CHECK(n.columns[0].quantile(99.0) == 1.0);
}

TEST_CASE("constant support column maps to zero") {
  const Table t = column_table({5, 5, 5, 7});
  const std::vector<int> support{0, 1, 2};
  const Normalizer n = fit_normalizer(t, support);
  CHECK(n.columns[0].stddev == 1.0);
  for (double v : {5.0, 3.0}) CHECK(n.columns[0](v) == 0.0);
}

TEST_CASE("regression target min-max") {
  Table t = column_table({0, 1, 2}, TaskKind::regression());
  t.target << 0.0, 10.0, 5.0;
  const std::vector<int> support{0, 1};
  const Normalizer n = fit_normalizer(t, support);
  CHECK(n.normalize_target(5.0) == doctest::Approx(0.5));
  CHECK(n.normalize_target(0.0) == 0.0);
  CHECK(n.denormalize_target(0.5) == doctest::Approx(5.0));

  Table flat = column_table({0, 1}, TaskKind::regression());
  flat.target << 3.0, 3.0;
  const std::vector<int> one{0, 1};
  const Normalizer fn = fit_normalizer(flat, one);
  CHECK(fn.normalize_target(3.0) == 0.0);
  CHECK(fn.normalize_target(8.0) == 0.0);
}

TEST_CASE("query value equal to a support value takes its ECDF position") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> vals(12);
    for (auto& v : vals) v = std::round(rng.normal() * 3.0);  // ties on purpose
    const Table t = column_table(vals);
    std::vector<int> support{0, 1, 2, 3, 4, 5, 6, 7};
    const Normalizer n = fit_normalizer(t, support);
    std::vector<double> uniq(vals.begin(), vals.begin() + 8);
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    for (std::size_t r = 0; r < uniq.size(); ++r) {
      const double expect = uniq.size() > 1 ? static_cast<double>(r) / static_cast<double>(uniq.size() - 1) : 0.0;
      CHECK(n.columns[0].quantile(uniq[r]) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("apply on support rows reproduces the fitted statistics") {
  Rng rng(8);
  const Table t = random_table(rng, 30, 4);
  Rng split(9);
  const Episode ep = make_episode(t, 20, 10, split);
  const Matrix z = ep.support_inputs();
  for (int j = 0; j < 4; ++j) {
    CHECK(std::abs(z.col(j).mean()) < 1e-12);
    const double var = (z.col(j).array() - z.col(j).mean()).square().mean();
    CHECK(var == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("normalizer never reads query rows") {
  Rng rng(10);
  Table t = random_table(rng, 40, 3);
  Rng s1(11);
  const Episode ep = make_episode(t, 25, 15, s1);
  for (int trial = 0; trial < 20; ++trial) {
    Table perturbed = t;
    for (int i : ep.query_idx)
      for (int j = 0; j < 3; ++j) perturbed.features(i, j) += rng.normal(0.0, 10.0);
    const Normalizer n = fit_normalizer(perturbed, ep.support_idx);
    CHECK(n == ep.normalizer);
  }
}

TEST_CASE("quantile map is monotone") {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> vals(15);
    for (auto& v : vals) v = rng.normal();
    const Table t = column_table(vals);
    std::vector<int> support(10);
    std::iota(support.begin(), support.end(), 0);
    const Normalizer n = fit_normalizer(t, support);
    std::vector<double> probe(50);
    for (auto& p : probe) p = rng.normal(0.0, 2.0);
    std::sort(probe.begin(), probe.end());
    for (std::size_t i = 1; i < probe.size(); ++i) CHECK(n.columns[0](probe[i - 1]) <= n.columns[0](probe[i]));
  }
}

TEST_CASE("categorical columns pass through unless the model path asks") {
  Table t = column_table({0, 1, 2, 1});
  t.col_kinds[0] = ColumnKind::categorical(3);
  const std::vector<int> support{0, 1, 2};
  const Normalizer n = fit_normalizer(t, support);
  Matrix rows(1, 1);
  rows << 2.0;
  CHECK(n.apply(rows)(0, 0) == 2.0);
  CHECK(n.apply(rows, true)(0, 0) == doctest::Approx(n.columns[0](2.0)));
  Matrix wrong(1, 2);
  CHECK_THROWS_AS(n.apply(wrong), SchemaError);
}

TEST_CASE("table validation") {
  Table t = column_table({0, 1, 2});
  CHECK_NOTHROW(t.validate());
  t.target(1) = 2.0;
  CHECK_THROWS_AS(t.validate(), SchemaError);
  t.target(1) = 0.0;
  t.features(0, 0) = std::nan("");
  CHECK_THROWS_AS(t.validate(), SchemaError);
}

TEST_CASE("archive round trip and byte layout") {
  Rng rng(13);
  DatasetConfig cfg;
  cfg.d = 4;
  cfg.n_rows = 70;
  cfg.task = TaskKind::classification(3);
  cfg.p_cat = 0.4;
  cfg.seed = 13;
  std::vector<ArchiveEntry> entries;
  for (int i = 0; i < 2; ++i) {
    Rng r = rng.child(static_cast<std::uint64_t>(i));
    entries.push_back({sample_prior(PriorKind::DSRF, cfg, r), r.seed()});
  }
  const auto dir = temp_dir("archive");
  write_archive(dir, entries);
  CHECK(fs::exists(dir / "manifest.json"));
  std::ifstream csv(dir / "table_00000.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "f0,f1,f2,f3,target");

  const auto back = read_archive(dir);
  REQUIRE(back.size() == 2);
  for (int i = 0; i < 2; ++i) {
    CHECK(back[i].table.features == entries[i].table.features);
    CHECK(back[i].table.target == entries[i].table.target);
    CHECK(back[i].table.col_kinds == entries[i].table.col_kinds);
    CHECK(back[i].table.task == entries[i].table.task);
    CHECK(back[i].table.prior_tag == PriorKind::DSRF);
    CHECK(back[i].seed == entries[i].seed);
  }
  CHECK(format_real(3.0) == "3");
  CHECK(format_real(0.1) == "0.10000000000000001");
  fs::remove_all(dir);
}

TEST_CASE("ingest label-encodes text and drops missing rows") {
  const auto dir = temp_dir("ingest");
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "t.csv");
    f << "size,color,label\n1.5,red,yes\n2.0,blue,no\n,red,yes\n3.5,green,no\n4.0,red,maybe\n";
  }
  IngestOptions opt;
  opt.target_column = "label";
  const Table t = ingest_csv(dir / "t.csv", opt);
  CHECK(t.rows() == 4);
  CHECK(t.cols() == 2);
  CHECK(t.task == TaskKind::classification(3));
  CHECK(t.col_kinds[1] == ColumnKind::categorical(3));
  CHECK(t.features(0, 1) == 0.0);  // red
  CHECK(t.features(1, 1) == 1.0);  // blue
  CHECK(t.features(2, 1) == 2.0);  // green
  CHECK(t.target(0) == 0.0);
  CHECK(t.target(1) == 1.0);
  CHECK(t.target(3) == 2.0);
  CHECK_THROWS_AS(ingest_csv(dir / "missing.csv"), IngestError);
  fs::remove_all(dir);
}

TEST_CASE("cap_table enforces the ceilings") {
  Rng rng(14);
  Table wide = random_table(rng, 50, 20);
  CapOptions opt;
  Rng r1(1);
  CHECK_THROWS_AS(cap_table(wide, opt, r1), CapError);
  opt.subsample_columns = true;
  opt.max_rows = 30;
  const Table capped = cap_table(wide, opt, r1);
  CHECK(capped.cols() == 16);
  CHECK(capped.rows() == 30);
  CHECK_NOTHROW(capped.validate());
}
