#include "doctest.h"

#include "priorforge/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

using priorforge::Rng;

TEST_CASE("same seed and path give the same stream") {
  Rng a = Rng(42).child("data").child(3);
  Rng b = Rng(42).child("data", 3);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("children do not depend on how far the parent has advanced") {
  Rng parent(7);
  const Rng early = parent.child("x");
  for (int i = 0; i < 50; ++i) parent.next_u64();
  Rng late = parent.child("x");
  Rng e = early;
  for (int i = 0; i < 10; ++i) CHECK(e.next_u64() == late.next_u64());
}

TEST_CASE("different labels give different streams") {
  Rng a = Rng(1).child("a");
  Rng b = Rng(1).child("b");
  Rng c = Rng(1).child(0);
  Rng d = Rng(1).child(1);
  CHECK(a.next_u64() != b.next_u64());
  CHECK(c.next_u64() != d.next_u64());
}

TEST_CASE("frozen reference values") {
  // splitmix64 from state 0: the widely published first output.
  std::uint64_t state = 0;
  CHECK(priorforge::splitmix64(state) == 0xe220a8397b1dcdafULL);
  // FNV-1a 64 of "a".
  CHECK(priorforge::fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(priorforge::fnv1a64("") == 0xcbf29ce484222325ULL);
}

TEST_CASE("uniform_int is inclusive and roughly flat") {
  Rng r(3);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 50000; ++i) {
    const auto v = r.uniform_int(2, 6);
    REQUIRE(v >= 2);
    REQUIRE(v <= 6);
    ++counts[v - 2];
  }
  for (int c : counts) CHECK(std::abs(c - 10000) < 400);
}

TEST_CASE("normal moments") {
  Rng r(5);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(s2 / n - 1.0) < 0.02);
}

TEST_CASE("geometric counts failures before the first success") {
  Rng r(9);
  double s = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const int g = r.geometric(0.5);
    REQUIRE(g >= 0);
    s += g;
  }
  CHECK(std::abs(s / n - 1.0) < 0.03);  // (1-p)/p
}

TEST_CASE("dirichlet and categorical") {
  Rng r(11);
  const auto p = r.dirichlet_ones(4);
  CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) < 1e-12);
  for (double v : p) CHECK(v >= 0.0);
  const std::vector<double> w{0.0, 1.0, 0.0};
  for (int i = 0; i < 100; ++i) CHECK(r.categorical(w) == 1);
}

TEST_CASE("sampling without replacement") {
  Rng r(13);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = static_cast<int>(r.uniform_int(1, 40));
    const int k = static_cast<int>(r.uniform_int(0, n));
    const auto s = r.sample_without_replacement(n, k);
    REQUIRE(static_cast<int>(s.size()) == k);
    const std::set<int> uniq(s.begin(), s.end());
    CHECK(static_cast<int>(uniq.size()) == k);
    for (int v : s) CHECK((v >= 0 && v < n));
  }
}
