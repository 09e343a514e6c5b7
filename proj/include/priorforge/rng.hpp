#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace priorforge {

// Counter-free splittable generator. Children are derived from the parent's
// seed and a label, never from the parent's stream position, so the same
// (seed, label path) yields the same sequence regardless of how much the
// parent has been consumed. All distributions are implemented here so the
// value sequence does not depend on the standard library vendor.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  Rng child(std::string_view label) const;
  Rng child(std::uint64_t index) const;
  Rng child(std::string_view label, std::uint64_t index) const {
    return child(label).child(index);
  }

  std::uint64_t next_u64();

  // [0, 1) with 53 bits of precision.
  double uniform();
  double uniform(double lo, double hi);
  // Inclusive on both ends.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double log_uniform(double lo, double hi);
  double normal(double mean = 0.0, double stddev = 1.0);
  // Number of failures before the first success.
  int geometric(double p);
  double exponential();
  std::vector<double> dirichlet_ones(int k);
  int categorical(std::span<const double> probs);
  bool bernoulli(double p) { return uniform() < p; }

  // k distinct indices from [0, n) in draw order.
  std::vector<int> sample_without_replacement(int n, int k);
  std::vector<int> permutation(int n) { return sample_without_replacement(n, n); }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
};

std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t fnv1a64(std::string_view text);

}  // namespace priorforge
