#include "priorforge/priors.hpp"

#include "priorforge/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace priorforge {

void DatasetConfig::validate() const {
  if (d < 2 || d > kMaxFeatures) throw ConfigError("d must be in [2, 16], got " + std::to_string(d));
  if (n_rows < 2 || n_rows > kMaxEvalRows)
    throw ConfigError("N must be in [2, " + std::to_string(kMaxEvalRows) + "], got " + std::to_string(n_rows));
  if (task.is_classification() && (task.num_classes < 2 || task.num_classes > kMaxClasses))
    throw ConfigError("num_classes must be in [2, 10]");
  if (!(p_cat >= 0.0 && p_cat <= 1.0)) throw ConfigError("p_cat must be in [0, 1]");
}

void ConfigRanges::validate() const {
  if (min_features < 2 || max_features > kMaxFeatures || min_features > max_features)
    throw ConfigError("feature range must satisfy 2 <= min <= max <= 16");
  if (min_rows < 2 || max_rows > kMaxEvalRows || min_rows > max_rows) throw ConfigError("invalid row range");
  if (min_classes < 2 || max_classes > kMaxClasses || min_classes > max_classes)
    throw ConfigError("class range must satisfy 2 <= min <= max <= 10");
  if (!(max_p_cat >= 0.0 && max_p_cat <= 1.0)) throw ConfigError("max_p_cat must be in [0, 1]");
}

DatasetConfig sample_dataset_config(TaskFamily task, Rng& rng, const ConfigRanges& ranges) {
  ranges.validate();
  DatasetConfig cfg;
  cfg.seed = rng.seed();
  cfg.d = static_cast<int>(rng.uniform_int(ranges.min_features, ranges.max_features));
  cfg.n_rows = static_cast<int>(rng.uniform_int(ranges.min_rows, ranges.max_rows));
  cfg.p_cat = rng.uniform(0.0, ranges.max_p_cat);
  cfg.task = task == TaskFamily::Classification
                 ? TaskKind::classification(static_cast<int>(rng.uniform_int(ranges.min_classes, ranges.max_classes)))
                 : TaskKind::regression();
  return cfg;
}

int categorical_count(int d, double p_cat) {
  const int n_cat = static_cast<int>(std::floor(p_cat * (d + 1) + 1e-9));
  return std::clamp(n_cat, 0, d);
}

namespace {

int categorical_cardinality(Rng& rng) { return std::min(2 + rng.geometric(0.5), kMaxClasses); }

}  // namespace

FeatureSchema sample_feature_schema(const DatasetConfig& cfg, Rng& rng) {
  FeatureSchema schema;
  schema.col_kinds.assign(cfg.d, ColumnKind::continuous());
  schema.category_probs.assign(cfg.d, {});
  const int n_cat = categorical_count(cfg.d, cfg.p_cat);
  for (int j : rng.sample_without_replacement(cfg.d, n_cat)) {
    const int card = categorical_cardinality(rng);
    schema.col_kinds[j] = ColumnKind::categorical(card);
    schema.category_probs[j] = rng.dirichlet_ones(card);
  }
  return schema;
}

Matrix sample_feature_cells(const FeatureSchema& schema, int n_rows, Rng& rng) {
  const int d = static_cast<int>(schema.col_kinds.size());
  Matrix x(n_rows, d);
  for (int i = 0; i < n_rows; ++i)
    for (int j = 0; j < d; ++j)
      x(i, j) = schema.col_kinds[j].is_categorical() ? rng.categorical(schema.category_probs[j]) : rng.normal();
  return x;
}

FeatureDraw gen_features(const DatasetConfig& cfg, Rng& rng) {
  Rng schema_rng = rng.child("schema");
  Rng cell_rng = rng.child("cells");
  auto schema = sample_feature_schema(cfg, schema_rng);
  return {sample_feature_cells(schema, cfg.n_rows, cell_rng), std::move(schema.col_kinds)};
}

Vector gen_multinomial(int n, int num_classes, Rng& rng) {
  const auto probs = rng.dirichlet_ones(num_classes);
  Vector y(n);
  for (int i = 0; i < n; ++i) y(i) = rng.categorical(probs);
  return y;
}

// ---------------------------------------------------------------------------
// Directly sampled random trees

int RandTree::leaf_count() const {
  return static_cast<int>(std::count_if(nodes.begin(), nodes.end(), [](const auto& n) { return n.is_leaf(); }));
}

void DsrfParams::validate() const {
  if (num_estimators < 1) throw ConfigError("DSRF needs at least one estimator");
  if (min_depth < 1 || min_depth > max_depth) throw ConfigError("DSRF depths must satisfy 1 <= d_min <= d_max");
  if (!(thres_int.lb < thres_int.ub)) throw ConfigError("thres_int must have lb < ub");
  if (!(p_nc >= 0.0 && p_nc <= 1.0)) throw ConfigError("p_nc must be in [0, 1]");
  if (!(leaf_sigma >= 0.0)) throw ConfigError("leaf_sigma must be >= 0");
}

DsrfParams sample_dsrf_params(Rng& rng) {
  DsrfParams p;
  p.num_estimators = static_cast<int>(rng.uniform_int(1, 8));
  p.min_depth = static_cast<int>(rng.uniform_int(1, 3));
  p.max_depth = static_cast<int>(rng.uniform_int(p.min_depth, 8));
  return p;
}

namespace {

class RandTreeBuilder {
 public:
  RandTreeBuilder(int d, const DsrfParams& params, const TaskKind& task, Rng& rng)
      : d_(d), params_(params), task_(task), rng_(rng) {
    if (task_.is_classification()) start_ = static_cast<int>(rng_.uniform_int(0, task_.num_classes - 1));
  }

  int build(RandTree& tree, int depth, const std::map<int, Interval>& parent_rs, int parent_ind,
            Interval parent_interval) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    {
      auto& node = tree.nodes[id];
      node.depth = depth;
      if (depth > 0) {
        node.rs = parent_rs;
        node.rs[parent_ind] = parent_interval;
      }
    }
    const int ind = static_cast<int>(rng_.uniform_int(0, d_ - 1));
    const auto& rs = tree.nodes[id].rs;
    const auto it = rs.find(ind);
    const Interval range = it != rs.end() ? it->second : params_.thres_int;
    const double thres = rng_.uniform(range.lb, range.ub);

    bool add_children = false;
    if (depth < params_.max_depth) add_children = rng_.uniform() >= params_.p_nc;
    if (depth < params_.min_depth) add_children = true;

    if (add_children) {
      tree.nodes[id].feature = ind;
      tree.nodes[id].threshold = thres;
      // Copy: recursion may reallocate the node vector.
      const auto rs_copy = tree.nodes[id].rs;
      const int left = build(tree, depth + 1, rs_copy, ind, {range.lb, thres});
      const int right = build(tree, depth + 1, rs_copy, ind, {thres, range.ub});
      tree.nodes[id].left = left;
      tree.nodes[id].right = right;
    } else if (task_.is_classification()) {
      tree.nodes[id].target = static_cast<double>((start_ + leaf_counter_) % task_.num_classes);
      ++leaf_counter_;
    } else {
      tree.nodes[id].target = rng_.normal(params_.leaf_mu, params_.leaf_sigma);
    }
    return id;
  }

 private:
  int d_;
  const DsrfParams& params_;
  const TaskKind& task_;
  Rng& rng_;
  int start_ = 0;
  int leaf_counter_ = 0;
};

double traverse_from(std::span<const double> x, const RandTree& tree, int node_id) {
  const auto& node = tree.nodes[node_id];
  if (node.is_leaf()) return *node.target;
  if (x[node.feature] <= node.threshold) return traverse_from(x, tree, node.left);
  return traverse_from(x, tree, node.right);
}

}  // namespace

RandTree rand_dt(const DatasetConfig& cfg, const DsrfParams& params, const TaskKind& task, Rng& rng) {
  params.validate();
  RandTree tree;
  tree.num_features = cfg.d;
  RandTreeBuilder builder(cfg.d, params, task, rng);
  builder.build(tree, 0, {}, -1, params.thres_int);
  return tree;
}

double dt_traverse(std::span<const double> x, const RandTree& tree) { return traverse_from(x, tree, 0); }

int majority_vote(std::span<const double> labels, int num_classes) {
  std::vector<int> counts(num_classes, 0);
  for (double v : labels) ++counts[static_cast<int>(v)];
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

DsrfDraw dsrf_sample_forest(const DatasetConfig& cfg, const DsrfParams& params, Rng& rng) {
  cfg.validate();
  params.validate();
  DsrfDraw draw;
  Rng feature_rng = rng.child("features");
  auto features = gen_features(cfg, feature_rng);
  for (int e = 0; e < params.num_estimators; ++e) {
    Rng tree_rng = rng.child("tree", static_cast<std::uint64_t>(e));
    draw.forest.push_back(rand_dt(cfg, params, cfg.task, tree_rng));
  }
  auto& table = draw.table;
  table.features = std::move(features.features);
  table.col_kinds = std::move(features.col_kinds);
  table.task = cfg.task;
  table.prior_tag = PriorKind::DSRF;
  table.target.resize(cfg.n_rows);
  std::vector<double> votes(params.num_estimators);
  for (int n = 0; n < cfg.n_rows; ++n) {
    const std::span<const double> row(table.features.row(n).data(), static_cast<std::size_t>(cfg.d));
    for (int e = 0; e < params.num_estimators; ++e) votes[e] = dt_traverse(row, draw.forest[e]);
    table.target(n) = cfg.task.is_classification()
                          ? majority_vote(votes, cfg.task.num_classes)
                          : std::accumulate(votes.begin(), votes.end(), 0.0) / params.num_estimators;
  }
  table.gen_info = {{"num_estimators", params.num_estimators},
                    {"min_depth", params.min_depth},
                    {"max_depth", params.max_depth},
                    {"p_nc", params.p_nc}};
  return draw;
}

Table dsrf_sample(const DatasetConfig& cfg, const DsrfParams& params, Rng& rng) {
  return dsrf_sample_forest(cfg, params, rng).table;
}

// ---------------------------------------------------------------------------
// Indirectly sampled tree priors

LearnerHp sample_learner_hp(Rng& rng) {
  LearnerHp hp;
  hp.max_depth = static_cast<int>(rng.uniform_int(2, 12));
  hp.n_estimators = static_cast<int>(rng.uniform_int(5, 50));
  hp.learning_rate = rng.log_uniform(0.03, 0.3);
  return hp;
}

Table indirect_sample(PriorKind kind, const DatasetConfig& cfg, Rng& rng, const IndirectOptions& options) {
  if (kind == PriorKind::SCM || kind == PriorKind::DSRF)
    throw ConfigError("indirect_sample needs a fitted-tree prior (dt, et, gb, rf)");
  cfg.validate();
  Rng hp_rng = rng.child("hp");
  const LearnerHp hp = options.hp ? *options.hp : sample_learner_hp(hp_rng);

  // Base size B = N. Both X and X2 share one column schema so the learner
  // sees the same feature semantics at fit and predict time.
  Rng schema_rng = rng.child("schema");
  const auto schema = sample_feature_schema(cfg, schema_rng);
  Matrix x_base;
  Vector y_base;
  constexpr int kMaxAttempts = 10;
  bool ok = false;
  for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
    Rng base_rng = rng.child("base", static_cast<std::uint64_t>(attempt));
    Rng x_rng = base_rng.child("x");
    Rng y_rng = base_rng.child("y");
    x_base = sample_feature_cells(schema, cfg.n_rows, x_rng);
    if (cfg.task.is_classification()) {
      y_base = gen_multinomial(cfg.n_rows, cfg.task.num_classes, y_rng);
      ok = !(y_base.array() == y_base(0)).all();
    } else {
      y_base.resize(cfg.n_rows);
      for (auto& v : y_base) v = y_rng.normal();
      ok = true;
    }
  }
  if (!ok) throw DegenerateFitError("base labels had a single class in all " + std::to_string(kMaxAttempts) + " attempts");

  Rng x2_rng = rng.child("x2");
  Matrix x2 = sample_feature_cells(schema, cfg.n_rows, x2_rng);
  Rng fit_rng = rng.child("fit");
  Vector y2;
  switch (kind) {
    case PriorKind::DT: {
      CartParams p;
      p.max_depth = hp.max_depth;
      y2 = cart_predict(cart_fit(x_base, y_base, cfg.task, p, fit_rng), x2);
      break;
    }
    case PriorKind::RF:
    case PriorKind::ET: {
      ForestParams p;
      p.n_estimators = hp.n_estimators;
      p.max_depth = hp.max_depth;
      const auto forest_kind = kind == PriorKind::RF ? ForestKind::RF : ForestKind::ET;
      y2 = forest_predict(forest_fit(x_base, y_base, cfg.task, forest_kind, p, fit_rng), x2);
      break;
    }
    case PriorKind::GB: {
      GbmParams p;
      p.n_stages = hp.n_estimators;
      p.max_depth = hp.max_depth;
      p.learning_rate = hp.learning_rate;
      y2 = gbm_predict(gbm_fit(x_base, y_base, cfg.task, p, fit_rng), x2);
      break;
    }
    default: break;
  }

  Table table;
  table.features = std::move(x2);
  table.col_kinds = schema.col_kinds;
  table.target = std::move(y2);
  table.task = cfg.task;
  table.prior_tag = kind;
  table.gen_info = {{"max_depth", hp.max_depth}, {"n_estimators", hp.n_estimators}};
  if (kind == PriorKind::GB) table.gen_info.emplace_back("learning_rate", hp.learning_rate);
  return table;
}

// ---------------------------------------------------------------------------
// Structural causal model

double apply_activation(Activation act, double x) {
  switch (act) {
    case Activation::Identity: return x;
    case Activation::Tanh: return std::tanh(x);
    case Activation::Relu: return x > 0.0 ? x : 0.0;
    case Activation::Sin: return std::sin(x);
  }
  return x;
}

Vector rank_bin(const Vector& values, int bins, Rng& rng) {
  const auto n = static_cast<int>(values.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return values(a) < values(b); });
  const auto widths = rng.dirichlet_ones(bins);
  const auto labels = rng.permutation(bins);
  Vector out(n);
  double cum = 0.0;
  int start = 0;
  for (int b = 0; b < bins; ++b) {
    cum += 0.5 / bins + 0.5 * widths[b];
    const int end = b + 1 == bins ? n : std::min(n, static_cast<int>(std::lround(cum * n)));
    for (int r = start; r < end; ++r) out(order[r]) = labels[b];
    start = std::max(start, end);
  }
  return out;
}

ScmDraw scm_sample_graph(const DatasetConfig& cfg, Rng& rng, const ScmOptions& options) {
  cfg.validate();
  const int d = cfg.d;
  const int n = cfg.n_rows;
  Rng graph_rng = rng.child("graph");
  const int k = static_cast<int>(graph_rng.uniform_int(d + 1, 3 * (d + 1)));
  const int n_roots = static_cast<int>(graph_rng.uniform_int(1, std::max(1, k / 4)));
  const double table_noise = options.noise_std ? *options.noise_std : graph_rng.log_uniform(0.01, 0.5);

  ScmDraw draw;
  auto& graph = draw.graph;
  graph.nodes.resize(k);
  for (int i = 0; i < k; ++i) {
    auto& node = graph.nodes[i];
    node.noise_std = table_noise;
    node.activation = options.activation ? *options.activation
                                         : static_cast<Activation>(graph_rng.uniform_int(0, 3));
    if (i < n_roots) continue;
    const int n_parents = static_cast<int>(graph_rng.uniform_int(1, std::min(i, 4)));
    node.parents = graph_rng.sample_without_replacement(i, n_parents);
    std::sort(node.parents.begin(), node.parents.end());
    const double scale = 1.0 / std::sqrt(static_cast<double>(n_parents));
    for (int p = 0; p < n_parents; ++p) node.weights.push_back(graph_rng.normal(0.0, scale));
    node.bias = graph_rng.normal(0.0, 0.3);
  }

  Rng value_rng = rng.child("values");
  graph.values.resize(n, k);
  for (int r = 0; r < n; ++r) {
    for (int i = 0; i < k; ++i) {
      const auto& node = graph.nodes[i];
      if (node.parents.empty()) {
        graph.values(r, i) = value_rng.normal();
        continue;
      }
      double pre = node.bias;
      for (std::size_t p = 0; p < node.parents.size(); ++p) pre += node.weights[p] * graph.values(r, node.parents[p]);
      if (node.noise_std > 0.0) pre += value_rng.normal(0.0, node.noise_std);
      graph.values(r, i) = apply_activation(node.activation, pre);
    }
  }

  Rng pick_rng = rng.child("pick");
  auto picked = pick_rng.sample_without_replacement(k, d + 1);
  graph.feature_nodes.assign(picked.begin(), picked.begin() + d);
  graph.target_node = picked.back();

  auto& table = draw.table;
  table.task = cfg.task;
  table.prior_tag = PriorKind::SCM;
  table.features.resize(n, d);
  for (int j = 0; j < d; ++j) table.features.col(j) = graph.values.col(graph.feature_nodes[j]);
  table.col_kinds.assign(d, ColumnKind::continuous());

  Rng cat_rng = rng.child("categorical");
  const int n_cat = categorical_count(d, cfg.p_cat);
  for (int j : cat_rng.sample_without_replacement(d, n_cat)) {
    const int card = std::min(2 + cat_rng.geometric(0.5), kMaxClasses);
    table.features.col(j) = rank_bin(table.features.col(j), card, cat_rng);
    table.col_kinds[j] = ColumnKind::categorical(card);
  }

  const Vector raw_target = graph.values.col(graph.target_node);
  if (cfg.task.is_classification()) {
    Rng bin_rng = rng.child("target_bins");
    table.target = rank_bin(raw_target, cfg.task.num_classes, bin_rng);
  } else {
    table.target = raw_target;
  }
  table.gen_info = {{"nodes", k}, {"roots", n_roots}, {"noise_std", table_noise}};
  return draw;
}

Table scm_sample(const DatasetConfig& cfg, Rng& rng) { return scm_sample_graph(cfg, rng).table; }

// ---------------------------------------------------------------------------
// Mixture

Mixture::Mixture(std::map<PriorKind, double> weights) : weights_(std::move(weights)) {
  if (weights_.empty()) throw ConfigError("mixture has no priors");
  double total = 0.0;
  for (const auto& [kind, w] : weights_) {
    if (!(w >= 0.0) || !std::isfinite(w))
      throw ConfigError("mixture weight for " + std::string(to_string(kind)) + " must be >= 0");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("mixture weights sum to " + std::to_string(total) + ", not 1");
}

Mixture Mixture::balanced() {
  return Mixture({{PriorKind::SCM, 0.5},
                  {PriorKind::DT, 0.1},
                  {PriorKind::ET, 0.1},
                  {PriorKind::GB, 0.1},
                  {PriorKind::RF, 0.1},
                  {PriorKind::DSRF, 0.1}});
}

PriorKind Mixture::draw(Rng& rng) const {
  std::vector<double> w;
  std::vector<PriorKind> kinds;
  for (const auto& [kind, weight] : weights_) {
    kinds.push_back(kind);
    w.push_back(weight);
  }
  return kinds[rng.categorical(w)];
}

Table sample_prior(PriorKind kind, const DatasetConfig& cfg, Rng& rng) {
  Table table;
  switch (kind) {
    case PriorKind::SCM: table = scm_sample(cfg, rng); break;
    case PriorKind::DSRF: {
      Rng param_rng = rng.child("dsrf_params");
      table = dsrf_sample(cfg, sample_dsrf_params(param_rng), rng);
      break;
    }
    default: table = indirect_sample(kind, cfg, rng); break;
  }
  table.prior_tag = kind;
  return table;
}

Table mixture_sample(const Mixture& mix, TaskFamily task, Rng& rng, const ConfigRanges& ranges) {
  Rng kind_rng = rng.child("kind");
  Rng cfg_rng = rng.child("config");
  const PriorKind kind = mix.draw(kind_rng);
  const DatasetConfig cfg = sample_dataset_config(task, cfg_rng, ranges);
  Rng sample_rng = rng.child("sample");
  return sample_prior(kind, cfg, sample_rng);
}

}  // namespace priorforge
