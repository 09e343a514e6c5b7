#include "priorforge/trees.hpp"

#include "priorforge/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace priorforge {

namespace {

bool improves(double candidate, double best) {
  if (!std::isfinite(best)) return std::isfinite(candidate);
  return candidate < best - 1e-12 * std::max(1.0, std::abs(best));
}

double gini_from_counts(const std::vector<double>& counts, double n) {
  if (n <= 0) return 0.0;
  double sq = 0.0;
  for (double c : counts) sq += c * c;
  return 1.0 - sq / (n * n);
}

double sse(double sum, double sum_sq, double n) { return n > 0 ? std::max(0.0, sum_sq - sum * sum / n) : 0.0; }

double midpoint(double a, double b) {
  const double t = a + (b - a) / 2.0;
  return t < b ? t : a;
}

// Per-feature row orders stored flat: feature f's rows live in
// data[f*n, (f+1)*n). A node owns the same [begin, end) window of every
// feature and children are carved out by stable in-place partitioning, so
// ties keep the order of the original row list.
struct SortedRows {
  int n = 0;
  int d = 0;
  std::vector<int> data;
  std::vector<double> values;  // X(row, f) alongside each entry of data

  int* feature(int f) { return data.data() + static_cast<std::size_t>(f) * n; }
  const int* feature(int f) const { return data.data() + static_cast<std::size_t>(f) * n; }
  double* value(int f) { return values.data() + static_cast<std::size_t>(f) * n; }
  const double* value(int f) const { return values.data() + static_cast<std::size_t>(f) * n; }
};

SortedRows sort_rows(const Matrix& X, const std::vector<int>& idx) {
  SortedRows sorted;
  sorted.n = static_cast<int>(idx.size());
  sorted.d = static_cast<int>(X.cols());
  sorted.data.resize(static_cast<std::size_t>(sorted.n) * sorted.d);
  for (int f = 0; f < sorted.d; ++f) {
    int* rows = sorted.feature(f);
    std::copy(idx.begin(), idx.end(), rows);
    std::stable_sort(rows, rows + sorted.n, [&](int a, int b) { return X(a, f) < X(b, f); });
  }
  sorted.values.resize(sorted.data.size());
  for (int f = 0; f < sorted.d; ++f)
    for (int p = 0; p < sorted.n; ++p) sorted.value(f)[p] = X(sorted.feature(f)[p], f);
  return sorted;
}

// Child impurities are updated incrementally while sweeping each feature:
// weighted Gini is (nl - Sl/nl + nr - Sr/nr)/n with S the sum of squared
// class counts, and child SSE is total_sq - ls^2/nl - rs^2/nr.
std::vector<double> reciprocals(int n) {
  std::vector<double> inv(static_cast<std::size_t>(n) + 1, 0.0);
  for (int k = 1; k <= n; ++k) inv[k] = 1.0 / k;
  return inv;
}

// inv[k] = 1/k for every row count k a node can hold.
SplitChoice best_split_sorted(const Vector& y, const TaskKind& task, const SortedRows& sorted, int begin, int end,
                              const std::vector<int>& features, const std::vector<double>& inv) {
  SplitChoice best;
  best.impurity = std::numeric_limits<double>::infinity();
  const int* any = sorted.feature(0);
  const auto n = static_cast<double>(end - begin);
  const bool cls = task.is_classification();
  std::vector<double> total_counts, left_counts, right_counts;
  double total_sum = 0.0, total_sq = 0.0, total_count_sq = 0.0;
  if (cls) {
    total_counts.assign(task.num_classes, 0.0);
    for (int p = begin; p < end; ++p) total_counts[static_cast<int>(y(any[p]))] += 1.0;
    for (double c : total_counts) total_count_sq += c * c;
  } else {
    for (int p = begin; p < end; ++p) {
      total_sum += y(any[p]);
      total_sq += y(any[p]) * y(any[p]);
    }
  }

  for (int f : features) {
    const int* order = sorted.feature(f);
    const double* xs = sorted.value(f);
    double left_sum = 0.0, left_sq = 0.0, right_sq = total_count_sq;
    if (cls) {
      left_counts.assign(task.num_classes, 0.0);
      right_counts = total_counts;
    }
    for (int p = begin; p + 1 < end; ++p) {
      const double v = y(order[p]);
      if (cls) {
        const int c = static_cast<int>(v);
        left_sq += 2.0 * left_counts[c] + 1.0;
        right_sq -= 2.0 * right_counts[c] - 1.0;
        left_counts[c] += 1.0;
        right_counts[c] -= 1.0;
      } else {
        left_sum += v;
      }
      const double a = xs[p];
      const double b = xs[p + 1];
      if (!(a < b)) continue;
      const int nl = p + 1 - begin;
      const int nr = end - begin - nl;
      double imp;
      if (cls) {
        imp = (n - left_sq * inv[nl] - right_sq * inv[nr]) / n;
      } else {
        const double right_sum = total_sum - left_sum;
        imp = (total_sq - left_sum * left_sum * inv[nl] - right_sum * right_sum * inv[nr]) / n;
      }
      if (improves(imp, best.impurity)) best = {f, midpoint(a, b), imp};
    }
  }
  return best;
}

// Weighted child impurity of a fixed split. `order`/`xs` hold the node's
// rows sorted on the split feature; `counts` is scratch space.
double split_impurity(const Vector& y, const TaskKind& task, const int* order, const double* xs, int count,
                      double threshold, std::vector<double>& counts) {
  const auto n = static_cast<double>(count);
  const int nl = static_cast<int>(std::upper_bound(xs, xs + count, threshold) - xs);
  if (task.is_classification()) {
    const int k = task.num_classes;
    counts.assign(2 * static_cast<std::size_t>(k), 0.0);
    for (int p = 0; p < count; ++p) counts[(p < nl ? 0 : k) + static_cast<int>(y(order[p]))] += 1.0;
    const std::vector<double> left(counts.begin(), counts.begin() + k), right(counts.begin() + k, counts.end());
    const auto l = static_cast<double>(nl);
    return (l * gini_from_counts(left, l) + (n - l) * gini_from_counts(right, n - l)) / n;
  }
  double ls = 0.0, lq = 0.0, rs = 0.0, rq = 0.0;
  for (int p = 0; p < count; ++p) {
    const double v = y(order[p]);
    (p < nl ? ls : rs) += v;
    (p < nl ? lq : rq) += v * v;
  }
  return (sse(ls, lq, static_cast<double>(nl)) + sse(rs, rq, n - static_cast<double>(nl))) / n;
}

class CartBuilder {
 public:
  CartBuilder(const Matrix& X, const Vector& y, const TaskKind& task, const CartParams& params, Rng& rng,
              SortedRows sorted)
      : X_(X),
        y_(y),
        task_(task),
        params_(params),
        rng_(rng),
        sorted_(std::move(sorted)),
        goes_left_(static_cast<std::size_t>(X.rows()), 0),
        scratch_(static_cast<std::size_t>(sorted_.n)),
        scratch_values_(static_cast<std::size_t>(sorted_.n)),
        inv_(reciprocals(sorted_.n)) {}

  void build(CartTree& tree) { build(0, sorted_.n, 0, tree); }

 private:
  int build(int begin, int end, int depth, CartTree& tree) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes[id].depth = depth;
    const int* idx = sorted_.feature(0);
    set_leaf_payload(tree.nodes[id], idx + begin, end - begin);

    const bool depth_capped = params_.max_depth >= 0 && depth >= params_.max_depth;
    if (depth_capped || end - begin < params_.min_samples_split || is_pure(idx + begin, end - begin)) return id;

    const auto features = candidate_features(begin, end);
    if (features.empty()) return id;
    const SplitChoice choice = params_.splitter == Splitter::Best
                                   ? best_split_sorted(y_, task_, sorted_, begin, end, features, inv_)
                                   : random_split(begin, end, features);
    if (!choice.found()) return id;

    int n_left = 0;
    for (int p = begin; p < end; ++p) {
      const int i = idx[p];
      goes_left_[i] = X_(i, choice.feature) <= choice.threshold;
      n_left += goes_left_[i];
    }
    if (n_left == 0 || n_left == end - begin) return id;

    for (int f = 0; f < sorted_.d; ++f) {
      int* rows = sorted_.feature(f);
      double* xs = sorted_.value(f);
      int l = begin, r = 0;
      for (int p = begin; p < end; ++p) {
        const int i = rows[p];
        const double v = xs[p];
        if (goes_left_[i]) {
          rows[l] = i;
          xs[l++] = v;
        } else {
          scratch_[r] = i;
          scratch_values_[r++] = v;
        }
      }
      std::copy(scratch_.begin(), scratch_.begin() + r, rows + l);
      std::copy(scratch_values_.begin(), scratch_values_.begin() + r, xs + l);
    }

    tree.nodes[id].feature = choice.feature;
    tree.nodes[id].threshold = choice.threshold;
    const int left = build(begin, begin + n_left, depth + 1, tree);
    const int right = build(begin + n_left, end, depth + 1, tree);
    tree.nodes[id].left = left;
    tree.nodes[id].right = right;
    return id;
  }

  void set_leaf_payload(CartNode& node, const int* idx, int count) const {
    const auto n = static_cast<double>(count);
    if (task_.is_classification()) {
      node.probs.assign(task_.num_classes, 0.0);
      for (int p = 0; p < count; ++p) node.probs[static_cast<int>(y_(idx[p]))] += 1.0;
      for (auto& v : node.probs) v /= n;
    } else {
      double s = 0.0;
      for (int p = 0; p < count; ++p) s += y_(idx[p]);
      node.value = s / n;
    }
  }

  bool is_pure(const int* idx, int count) const {
    const double first = y_(idx[0]);
    return std::all_of(idx, idx + count, [&](int i) { return y_(i) == first; });
  }

  std::vector<int> candidate_features(int begin, int end) {
    std::vector<int> usable;
    for (int j = 0; j < sorted_.d; ++j) {
      const double* xs = sorted_.value(j);
      if (xs[begin] < xs[end - 1]) usable.push_back(j);
    }
    const int k = params_.max_features <= 0 ? sorted_.d : params_.max_features;
    if (k >= static_cast<int>(usable.size())) return usable;
    auto pick = rng_.sample_without_replacement(static_cast<int>(usable.size()), k);
    std::vector<int> out;
    out.reserve(k);
    for (int p : pick) out.push_back(usable[p]);
    std::sort(out.begin(), out.end());
    return out;
  }

  SplitChoice random_split(int begin, int end, const std::vector<int>& features) {
    SplitChoice best;
    best.impurity = std::numeric_limits<double>::infinity();
    for (int f : features) {
      const int* rows = sorted_.feature(f);
      const double lo = X_(rows[begin], f);
      const double hi = X_(rows[end - 1], f);
      const double t = rng_.uniform(lo, hi);
      const double imp = split_impurity(y_, task_, rows + begin, sorted_.value(f) + begin, end - begin, t, counts_);
      if (improves(imp, best.impurity)) best = {f, t, imp};
    }
    return best;
  }

  const Matrix& X_;
  const Vector& y_;
  const TaskKind& task_;
  const CartParams& params_;
  Rng& rng_;
  SortedRows sorted_;
  std::vector<char> goes_left_;
  std::vector<int> scratch_;
  std::vector<double> scratch_values_;
  std::vector<double> inv_;
  std::vector<double> counts_;
};

void check_fit_inputs(const Matrix& X, const Vector& y, const TaskKind& task) {
  if (X.rows() != y.size()) throw SchemaError("X and y row counts differ");
  if (X.rows() == 0) throw SizeError("cannot fit on an empty dataset");
  if (task.is_classification()) {
    for (Eigen::Index i = 0; i < y.size(); ++i)
      if (y(i) < 0 || y(i) >= task.num_classes || y(i) != std::floor(y(i)))
        throw SchemaError("class label out of range");
    const double first = y(0);
    if ((y.array() == first).all()) throw DegenerateFitError("classification target has a single class");
  }
}

int argmax_lowest(const double* v, int n) {
  int best = 0;
  for (int k = 1; k < n; ++k)
    if (v[k] > v[best]) best = k;
  return best;
}

}  // namespace

SplitChoice best_split(const Matrix& X, const Vector& y, const TaskKind& task, const std::vector<int>& idx,
                       const std::vector<int>& features) {
  if (idx.empty()) return {-1, 0.0, std::numeric_limits<double>::infinity()};
  const auto sorted = sort_rows(X, idx);
  return best_split_sorted(y, task, sorted, 0, sorted.n, features, reciprocals(sorted.n));
}

int CartTree::depth() const {
  int d = 0;
  for (const auto& node : nodes) d = std::max(d, node.depth);
  return d;
}

const CartNode& CartTree::leaf_for(const double* row) const {
  const CartNode* node = &nodes.front();
  while (!node->is_leaf()) node = &nodes[row[node->feature] <= node->threshold ? node->left : node->right];
  return *node;
}

namespace {

CartTree cart_fit_sorted(const Matrix& X, const Vector& y, const TaskKind& task, const CartParams& params,
                         SortedRows sorted, Rng& rng) {
  CartTree tree;
  tree.task = task;
  tree.num_features = static_cast<int>(X.cols());
  tree.params = params;
  CartBuilder builder(X, y, task, params, rng, std::move(sorted));
  builder.build(tree);
  return tree;
}

}  // namespace

CartTree cart_fit_rows(const Matrix& X, const Vector& y, const TaskKind& task, const CartParams& params,
                       std::vector<int> rows, Rng& rng) {
  check_fit_inputs(X, y, task);
  return cart_fit_sorted(X, y, task, params, sort_rows(X, rows), rng);
}

CartTree cart_fit(const Matrix& X, const Vector& y, const TaskKind& task, const CartParams& params, Rng& rng) {
  std::vector<int> rows(static_cast<std::size_t>(X.rows()));
  std::iota(rows.begin(), rows.end(), 0);
  return cart_fit_rows(X, y, task, params, std::move(rows), rng);
}

Vector cart_predict(const CartTree& tree, const Matrix& X) {
  if (X.rows() > 0 && X.cols() != tree.num_features)
    throw SchemaError("tree expects " + std::to_string(tree.num_features) + " features, got " +
                      std::to_string(X.cols()));
  Vector out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const auto& leaf = tree.leaf_for(X.row(i).data());
    out(i) = tree.task.is_classification()
                 ? argmax_lowest(leaf.probs.data(), static_cast<int>(leaf.probs.size()))
                 : leaf.value;
  }
  return out;
}

ForestModel forest_fit(const Matrix& X, const Vector& y, const TaskKind& task, ForestKind kind,
                       const ForestParams& params, Rng& rng) {
  check_fit_inputs(X, y, task);
  if (params.n_estimators < 1) throw ConfigError("forest needs at least one estimator");
  const int d = static_cast<int>(X.cols());
  const int n = static_cast<int>(X.rows());
  CartParams cart;
  cart.max_depth = params.max_depth;
  cart.max_features =
      params.max_features > 0 ? params.max_features : std::max(1, static_cast<int>(std::sqrt(static_cast<double>(d))));
  cart.splitter = kind == ForestKind::RF ? Splitter::Best : Splitter::Random;

  ForestModel model;
  model.kind = kind;
  model.task = task;
  for (int t = 0; t < params.n_estimators; ++t) {
    std::vector<int> rows(n);
    if (kind == ForestKind::RF && params.bootstrap) {
      Rng boot = rng.child("bootstrap", static_cast<std::uint64_t>(t));
      for (auto& r : rows) r = static_cast<int>(boot.uniform_int(0, n - 1));
      std::sort(rows.begin(), rows.end());
    } else {
      std::iota(rows.begin(), rows.end(), 0);
    }
    Rng tree_rng = rng.child("tree", static_cast<std::uint64_t>(t));
    model.trees.push_back(cart_fit_rows(X, y, task, cart, std::move(rows), tree_rng));
  }
  return model;
}

Vector forest_predict(const ForestModel& model, const Matrix& X) {
  Vector out(X.rows());
  if (model.task.is_classification()) {
    std::vector<Vector> per_tree;
    for (const auto& tree : model.trees) per_tree.push_back(cart_predict(tree, X));
    std::vector<double> votes(model.task.num_classes);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      std::fill(votes.begin(), votes.end(), 0.0);
      for (const auto& p : per_tree) votes[static_cast<int>(p(i))] += 1.0;
      out(i) = argmax_lowest(votes.data(), model.task.num_classes);
    }
  } else {
    out.setZero();
    for (const auto& tree : model.trees) out += cart_predict(tree, X);
    out /= static_cast<double>(model.trees.size());
  }
  return out;
}

namespace {

void softmax_rows(Matrix& scores) {
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const double m = scores.row(i).maxCoeff();
    scores.row(i) = (scores.row(i).array() - m).exp();
    scores.row(i) /= scores.row(i).sum();
  }
}

}  // namespace

GbmModel gbm_fit(const Matrix& X, const Vector& y, const TaskKind& task, const GbmParams& params, Rng& rng) {
  check_fit_inputs(X, y, task);
  if (!(params.learning_rate > 0.0 && params.learning_rate <= 1.0))
    throw ConfigError("learning_rate must be in (0, 1]");
  GbmModel model;
  model.task = task;
  model.learning_rate = params.learning_rate;
  const auto n = X.rows();
  CartParams cart;
  cart.max_depth = params.max_depth;
  cart.splitter = Splitter::Best;
  const TaskKind reg = TaskKind::regression();
  std::vector<int> all_rows(static_cast<std::size_t>(n));
  std::iota(all_rows.begin(), all_rows.end(), 0);
  // Stage trees all see the same X, so the per-feature order is shared.
  const SortedRows presorted = sort_rows(X, all_rows);

  if (!task.is_classification()) {
    model.init_score = {y.mean()};
    Vector f = Vector::Constant(n, model.init_score[0]);
    for (int m = 0; m < params.n_stages; ++m) {
      const Vector residual = y - f;
      Rng stage_rng = rng.child("stage", static_cast<std::uint64_t>(m));
      auto tree = cart_fit_sorted(X, residual, reg, cart, presorted, stage_rng);
      f += params.learning_rate * cart_predict(tree, X);
      model.stages.push_back({std::move(tree)});
    }
    return model;
  }

  const int k = task.num_classes;
  std::vector<double> counts(k, 0.0);
  for (Eigen::Index i = 0; i < n; ++i) counts[static_cast<int>(y(i))] += 1.0;
  for (int c = 0; c < k; ++c)
    model.init_score.push_back(std::log(std::max(counts[c], 1e-12) / static_cast<double>(n)));
  Matrix scores(n, k);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int c = 0; c < k; ++c) scores(i, c) = model.init_score[c];

  for (int m = 0; m < params.n_stages; ++m) {
    Matrix probs = scores;
    softmax_rows(probs);
    std::vector<CartTree> stage;
    Rng stage_rng = rng.child("stage", static_cast<std::uint64_t>(m));
    for (int c = 0; c < k; ++c) {
      Vector residual(n);
      for (Eigen::Index i = 0; i < n; ++i) residual(i) = (static_cast<int>(y(i)) == c ? 1.0 : 0.0) - probs(i, c);
      Rng class_rng = stage_rng.child(static_cast<std::uint64_t>(c));
      auto tree = cart_fit_sorted(X, residual, reg, cart, presorted, class_rng);
      scores.col(c) += params.learning_rate * cart_predict(tree, X);
      stage.push_back(std::move(tree));
    }
    model.stages.push_back(std::move(stage));
  }
  return model;
}

Matrix gbm_scores(const GbmModel& model, const Matrix& X, int max_stages) {
  const auto n = X.rows();
  const int k = static_cast<int>(model.init_score.size());
  Matrix scores(n, k);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int c = 0; c < k; ++c) scores(i, c) = model.init_score[c];
  const int stages = max_stages < 0 ? static_cast<int>(model.stages.size())
                                    : std::min(max_stages, static_cast<int>(model.stages.size()));
  for (int m = 0; m < stages; ++m)
    for (int c = 0; c < k; ++c) scores.col(c) += model.learning_rate * cart_predict(model.stages[m][c], X);
  return scores;
}

Vector gbm_predict(const GbmModel& model, const Matrix& X) {
  const Matrix scores = gbm_scores(model, X);
  if (!model.task.is_classification()) return scores.col(0);
  Vector out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    out(i) = argmax_lowest(scores.row(i).data(), static_cast<int>(scores.cols()));
  return out;
}

}  // namespace priorforge
