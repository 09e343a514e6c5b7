#pragma once

// Slow, independently written reference implementations shared by the unit
// tests and the acceptance runner.

#include "priorforge/priors.hpp"
#include "priorforge/trees.hpp"

#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <vector>

namespace oracle {

using namespace priorforge;

// Iterative descent, written separately from the recursive library version.
inline double walk(const RandTree& tree, const std::vector<double>& x) {
  int id = 0;
  while (!tree.nodes[id].is_leaf()) {
    const auto& n = tree.nodes[id];
    id = x[n.feature] <= n.threshold ? n.left : n.right;
  }
  return *tree.nodes[id].target;
}

// Counts votes directly; lowest class wins ties.
inline int count_majority(const std::vector<double>& votes, int k) {
  std::vector<int> c(k, 0);
  for (double v : votes) ++c[static_cast<int>(v)];
  int best = 0;
  for (int i = 1; i < k; ++i)
    if (c[i] > c[best]) best = i;
  return best;
}

// Empty when the tree is well formed; otherwise what went wrong first.
inline std::string tree_violation(const RandTree& tree, const DsrfParams& params) {
  if (tree.nodes.empty()) return "empty tree";
  if (tree.nodes[0].depth != 0) return "root depth is not 0";
  for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
    const auto& n = tree.nodes[id];
    const std::string at = "node " + std::to_string(id) + ": ";
    if ((n.left >= 0) != (n.right >= 0)) return at + "one child only";
    if ((n.left >= 0) == n.is_leaf()) return at + "both leaf and internal, or neither";
    if (n.is_leaf()) {
      if (n.depth < params.min_depth || n.depth > params.max_depth) return at + "leaf depth out of bounds";
      continue;
    }
    if (n.depth >= params.max_depth) return at + "internal node at max depth";
    const auto it = n.rs.find(n.feature);
    const Interval range = it != n.rs.end() ? it->second : params.thres_int;
    if (n.threshold < range.lb || n.threshold > range.ub) return at + "threshold outside its interval";
    const auto& l = tree.nodes[n.left];
    const auto& r = tree.nodes[n.right];
    if (l.depth != n.depth + 1 || r.depth != n.depth + 1) return at + "child depth";
    if (!l.rs.count(n.feature) || !(l.rs.at(n.feature) == Interval{range.lb, n.threshold}))
      return at + "left interval";
    if (!r.rs.count(n.feature) || !(r.rs.at(n.feature) == Interval{n.threshold, range.ub}))
      return at + "right interval";
  }
  return {};
}

// Leaf-label counts per class differ by at most one.
inline bool labels_balanced(const RandTree& tree, int k) {
  std::vector<int> counts(k, 0);
  for (const auto& n : tree.nodes)
    if (n.is_leaf()) ++counts[static_cast<int>(*n.target)];
  int lo = counts[0], hi = counts[0];
  for (int c : counts) lo = std::min(lo, c), hi = std::max(hi, c);
  return hi - lo <= 1;
}

inline double gini(const std::vector<double>& labels, int k) {
  if (labels.empty()) return 0.0;
  std::vector<double> c(k, 0.0);
  for (double l : labels) c[static_cast<int>(l)] += 1;
  double s = 0.0;
  for (double x : c) s += (x / labels.size()) * (x / labels.size());
  return 1.0 - s;
}

inline double variance(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= v.size();
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / v.size();
}

// Brute force over every feature and every midpoint of sorted unique values;
// impurity is the row-weighted mean of the child Gini or variance.
inline SplitChoice exhaustive_split(const Matrix& X, const Vector& y, const TaskKind& task) {
  SplitChoice best;
  best.impurity = std::numeric_limits<double>::infinity();
  const auto n = X.rows();
  for (int f = 0; f < X.cols(); ++f) {
    std::set<double> uniq(X.col(f).begin(), X.col(f).end());
    std::vector<double> u(uniq.begin(), uniq.end());
    for (std::size_t a = 0; a + 1 < u.size(); ++a) {
      const double t = (u[a] + u[a + 1]) / 2.0;
      std::vector<double> l, r;
      for (Eigen::Index i = 0; i < n; ++i) (X(i, f) <= t ? l : r).push_back(y(i));
      const double il = task.is_classification() ? gini(l, task.num_classes) : variance(l);
      const double ir = task.is_classification() ? gini(r, task.num_classes) : variance(r);
      const double imp = (l.size() * il + r.size() * ir) / n;
      if (imp < best.impurity - 1e-12) best = {f, t, imp};
    }
  }
  return best;
}

// O(n^2) pair counting over every unordered class pair.
inline double brute_auc(const Matrix& probs, const std::vector<double>& labels) {
  std::set<int> present;
  for (double l : labels) present.insert(static_cast<int>(l));
  const std::vector<int> cls(present.begin(), present.end());
  double total = 0.0;
  int pairs = 0;
  for (std::size_t x = 0; x < cls.size(); ++x)
    for (std::size_t y = x + 1; y < cls.size(); ++y) {
      const int a = cls[x], b = cls[y];
      auto score = [&](std::size_t i) {
        const auto r = static_cast<Eigen::Index>(i);
        const double s = probs(r, a) + probs(r, b);
        return s > 0 ? probs(r, a) / s : 0.5;
      };
      double wins = 0.0, count = 0.0;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != a) continue;
        for (std::size_t j = 0; j < labels.size(); ++j) {
          if (labels[j] != b) continue;
          const double si = score(i), sj = score(j);
          wins += si > sj ? 1.0 : (si == sj ? 0.5 : 0.0);
          count += 1.0;
        }
      }
      total += wins / count;
      ++pairs;
    }
  return total / pairs;
}

}  // namespace oracle
