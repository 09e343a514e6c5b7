#include "priorforge/tfm.hpp"

#include "priorforge/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace priorforge {

std::string_view to_string(Arch arch) { return arch == Arch::OneD ? "1d" : "2d"; }

Arch parse_arch(std::string_view name) {
  if (name == "1d" || name == "1D" || name == "oned") return Arch::OneD;
  if (name == "2d" || name == "2D" || name == "twod") return Arch::TwoD;
  throw ConfigError("unknown architecture '" + std::string(name) + "' (expected 1d or 2d)");
}

int TfmConfig::hidden_dim() const {
  return std::max(1, static_cast<int>(std::lround(mlp_ratio * model_dim)));
}

void TfmConfig::validate() const {
  if (layers < 1) throw ConfigError("layers must be >= 1");
  if (model_dim < 1 || heads < 1 || model_dim % heads != 0)
    throw ConfigError("model_dim must be a positive multiple of heads");
  if (!(mlp_ratio > 0.0)) throw ConfigError("mlp_ratio must be > 0");
  if (max_features != kMaxFeatures || max_classes != kMaxClasses)
    throw ConfigError("max_features and max_classes are fixed at 16 and 10");
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

std::vector<std::string> attention_blocks(Arch arch) {
  if (arch == Arch::OneD) return {"row"};
  return {"col", "row"};
}

std::string layer_prefix(int l) { return "L" + std::to_string(l) + "."; }

}  // namespace

TfmModel TfmModel::init(const TfmConfig& config, Rng& rng) {
  config.validate();
  TfmModel m;
  m.config = config;
  const int d_model = config.model_dim;
  const int hidden = config.hidden_dim();
  const int f = config.max_features;
  const int c = config.max_classes;
  const double resid_scale = 1.0 / std::sqrt(2.0 * config.layers);

  auto add = [&](const std::string& name, int rows, int cols, double stddev, double fill = 0.0) {
    Matrix w(rows, cols);
    if (stddev > 0.0) {
      Rng r = rng.child(name);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = r.normal(0.0, stddev);
    } else {
      w.setConstant(fill);
    }
    m.names.push_back(name);
    m.params.push_back(std::move(w));
  };

  if (config.arch == Arch::OneD) {
    add("embed.x.w", f, d_model, 1.0 / std::sqrt(static_cast<double>(f)));
    add("embed.x.b", 1, d_model, 0.0);
  } else {
    add("embed.val.w", 1, d_model, 1.0);
    add("embed.val.b", 1, d_model, 0.0);
    add("embed.feat", f, d_model, 0.5);
    add("embed.label_col", 1, d_model, 0.5);
  }
  add("embed.y_cls", c, d_model, 1.0);
  add("embed.y_reg.w", 1, d_model, 1.0);
  add("embed.y_reg.b", 1, d_model, 0.0);
  add("embed.mask", 1, d_model, 0.5);

  const double proj = 1.0 / std::sqrt(static_cast<double>(d_model));
  for (int l = 0; l < config.layers; ++l) {
    const auto p = layer_prefix(l);
    for (const auto& a : attention_blocks(config.arch)) {
      add(p + a + ".ln.g", 1, d_model, 0.0, 1.0);
      add(p + a + ".ln.b", 1, d_model, 0.0);
      for (const char* w : {"wq", "wk", "wv"}) add(p + a + "." + w, d_model, d_model, proj);
      for (const char* b : {"bq", "bk", "bv"}) add(p + a + "." + b, 1, d_model, 0.0);
      add(p + a + ".wo", d_model, d_model, proj * resid_scale);
      add(p + a + ".bo", 1, d_model, 0.0);
    }
    add(p + "mlp.ln.g", 1, d_model, 0.0, 1.0);
    add(p + "mlp.ln.b", 1, d_model, 0.0);
    add(p + "mlp.w1", d_model, hidden, proj);
    add(p + "mlp.b1", 1, hidden, 0.0);
    add(p + "mlp.w2", hidden, d_model, resid_scale / std::sqrt(static_cast<double>(hidden)));
    add(p + "mlp.b2", 1, d_model, 0.0);
  }
  add("out.ln.g", 1, d_model, 0.0, 1.0);
  add("out.ln.b", 1, d_model, 0.0);
  add("head.cls.w", d_model, c, proj);
  add("head.cls.b", 1, c, 0.0);
  add("head.reg.w", d_model, 1, proj);
  add("head.reg.b", 1, 1, 0.0);
  return m;
}

int TfmModel::index(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  throw ConfigError("model has no parameter '" + std::string(name) + "'");
}

std::size_t TfmModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += static_cast<std::size_t>(p.size());
  return n;
}

bool TfmModel::all_finite() const {
  return std::all_of(params.begin(), params.end(), [](const Matrix& p) { return p.allFinite(); });
}

EpisodeInputs episode_inputs(const Episode& episode) {
  EpisodeInputs in;
  in.x_support = episode.support_inputs();
  in.x_query = episode.query_inputs();
  in.y_support = episode.support_targets();
  in.y_query = episode.query_targets();
  in.task = episode.table->task;
  return in;
}

// ---------------------------------------------------------------------------
// Layers

namespace {

using RowArray = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kLnEps = 1e-5;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct LnCache {
  Matrix xhat;
  Vector inv_std;
};

Matrix ln_forward(const Matrix& x, const Matrix& g, const Matrix& b, LnCache* cache) {
  const Vector mean = x.rowwise().mean();
  RowArray xc = x.array().colwise() - mean.array();
  const Eigen::ArrayXd inv = ((xc.square().rowwise().mean()) + kLnEps).rsqrt();
  xc.colwise() *= inv;
  Matrix y = ((xc.rowwise() * g.row(0).array()).rowwise() + b.row(0).array()).matrix();
  if (cache) {
    cache->xhat = xc.matrix();
    cache->inv_std = inv.matrix();
  }
  return y;
}

Matrix ln_backward(const Matrix& dy, const LnCache& cache, const Matrix& g, Matrix& dg, Matrix& db) {
  dg += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  db += dy.colwise().sum();
  const RowArray dxh = dy.array().rowwise() * g.row(0).array();
  const Eigen::ArrayXd m1 = dxh.rowwise().mean();
  const Eigen::ArrayXd m2 = (dxh * cache.xhat.array()).rowwise().mean();
  RowArray dx = (dxh.colwise() - m1) - cache.xhat.array().colwise() * m2;
  dx.colwise() *= cache.inv_std.array();
  return dx.matrix();
}

Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

void linear_backward_params(const Matrix& x, const Matrix& dy, Matrix& dw, Matrix& db) {
  dw.noalias() += x.transpose() * dy;
  db += dy.colwise().sum();
}

constexpr double kGeluA = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluB = 0.044715;

// tanh through exp: Eigen vectorizes exp for doubles but not tanh.
RowArray fast_tanh(const RowArray& u) { return 1.0 - 2.0 / ((2.0 * u).exp() + 1.0); }

RowArray gelu_tanh_term(const Matrix& x) {
  const RowArray a = x.array();
  return fast_tanh(kGeluA * (a + kGeluB * a.cube()));
}

struct LnIdx {
  int g, b;
};

struct AttnIdx {
  LnIdx ln;
  int wq, wk, wv, wo, bq, bk, bv, bo;
};

struct MlpIdx {
  LnIdx ln;
  int w1, b1, w2, b2;
};

struct LayerIdx {
  AttnIdx col{};  // TwoD only
  AttnIdx row{};
  MlpIdx mlp{};
};

struct ModelIdx {
  int x_w = -1, x_b = -1;                        // OneD
  int val_w = -1, val_b = -1, feat = -1, label_col = -1;  // TwoD
  int y_cls, y_reg_w, y_reg_b, mask;
  std::vector<LayerIdx> layers;
  LnIdx out_ln;
  int cls_w, cls_b, reg_w, reg_b;
};

ModelIdx resolve(const TfmModel& m) {
  ModelIdx ix{};
  if (m.config.arch == Arch::OneD) {
    ix.x_w = m.index("embed.x.w");
    ix.x_b = m.index("embed.x.b");
  } else {
    ix.val_w = m.index("embed.val.w");
    ix.val_b = m.index("embed.val.b");
    ix.feat = m.index("embed.feat");
    ix.label_col = m.index("embed.label_col");
  }
  ix.y_cls = m.index("embed.y_cls");
  ix.y_reg_w = m.index("embed.y_reg.w");
  ix.y_reg_b = m.index("embed.y_reg.b");
  ix.mask = m.index("embed.mask");
  auto attn = [&](const std::string& p) {
    return AttnIdx{{m.index(p + ".ln.g"), m.index(p + ".ln.b")},
                   m.index(p + ".wq"), m.index(p + ".wk"), m.index(p + ".wv"), m.index(p + ".wo"),
                   m.index(p + ".bq"), m.index(p + ".bk"), m.index(p + ".bv"), m.index(p + ".bo")};
  };
  for (int l = 0; l < m.config.layers; ++l) {
    const auto p = layer_prefix(l);
    LayerIdx li;
    if (m.config.arch == Arch::TwoD) li.col = attn(p + "col");
    li.row = attn(p + "row");
    li.mlp = {{m.index(p + "mlp.ln.g"), m.index(p + "mlp.ln.b")},
              m.index(p + "mlp.w1"), m.index(p + "mlp.b1"), m.index(p + "mlp.w2"), m.index(p + "mlp.b2")};
    ix.layers.push_back(li);
  }
  ix.out_ln = {m.index("out.ln.g"), m.index("out.ln.b")};
  ix.cls_w = m.index("head.cls.w");
  ix.cls_b = m.index("head.cls.b");
  ix.reg_w = m.index("head.reg.w");
  ix.reg_b = m.index("head.reg.b");
  return ix;
}

// Tokens are laid out as `groups` contiguous runs of `len` tokens. Within a
// run the first `context` tokens attend to each other; later tokens attend
// to the context plus themselves only.
struct AttnLayout {
  int groups;
  int len;
  int context;
};

struct AttnCache {
  LnCache ln;
  Matrix xn, q, k, v, o;
  std::vector<Matrix> probs;       // per (group, head): len x context
  std::vector<Vector> self_probs;  // per (group, head): len - context
};

void check_inputs(const TfmModel& m, const EpisodeInputs& in) {
  const int d = in.features();
  if (d < 1 || d > m.config.max_features)
    throw DimError("model accepts 1.." + std::to_string(m.config.max_features) + " features, got " +
                   std::to_string(d));
  if (in.x_query.cols() != d) throw DimError("support and query feature counts differ");
  if (in.support_size() < 1 || in.query_size() < 1)
    throw SizeError("episode needs at least one support and one query row");
  if (in.y_support.size() != in.support_size()) throw DimError("support label count mismatch");
  if (in.task.is_classification()) {
    if (in.task.num_classes > m.config.max_classes)
      throw DimError("model supports at most " + std::to_string(m.config.max_classes) + " classes");
    for (Eigen::Index i = 0; i < in.y_support.size(); ++i)
      if (in.y_support(i) < 0 || in.y_support(i) >= in.task.num_classes)
        throw DimError("support label outside [0, num_classes)");
  }
}

Matrix embed_tokens(const TfmModel& m, const ModelIdx& ix, const EpisodeInputs& in) {
  const int s = in.support_size();
  const int q = in.query_size();
  const int d = in.features();
  const int n = s + q;
  const auto& P = m.params;
  auto label_row = [&](int r) -> RowVector {
    if (r >= s) return P[ix.mask].row(0);
    const double y = in.y_support(r);
    if (in.task.is_classification()) return P[ix.y_cls].row(static_cast<int>(y));
    return y * P[ix.y_reg_w].row(0) + P[ix.y_reg_b].row(0);
  };

  if (m.config.arch == Arch::OneD) {
    Matrix x = Matrix::Zero(n, m.config.max_features);
    x.topLeftCorner(s, d) = in.x_support;
    x.bottomLeftCorner(q, d) = in.x_query;
    Matrix tokens = linear(x, P[ix.x_w], P[ix.x_b]);
    for (int r = 0; r < n; ++r) tokens.row(r) += label_row(r);
    return tokens;
  }
  const int width = d + 1;
  Matrix tokens(static_cast<Eigen::Index>(n) * width, m.config.model_dim);
  const RowVector val_w = P[ix.val_w].row(0);
  const RowVector val_b = P[ix.val_b].row(0);
  for (int r = 0; r < n; ++r) {
    for (int j = 0; j < d; ++j) {
      const double v = r < s ? in.x_support(r, j) : in.x_query(r - s, j);
      tokens.row(r * width + j) = v * val_w + val_b + P[ix.feat].row(j);
    }
    tokens.row(r * width + d) = label_row(r) + P[ix.label_col].row(0);
  }
  return tokens;
}

class Engine {
 public:
  Engine(const TfmModel& model, bool keep_cache)
      : m_(model), ix_(resolve(model)), keep_(keep_cache) {}

  Matrix run(const EpisodeInputs& in);
  Gradients backward(const Matrix& d_outputs);

 private:
  const Matrix& P(int i) const { return m_.params[i]; }

  void embed_backward(const Matrix& d_tokens, Gradients& g);

  Matrix attention(const Matrix& x, const AttnIdx& ix, const AttnLayout& lay, AttnCache* cache);
  Matrix attention_backward(const Matrix& dy, const AttnIdx& ix, const AttnLayout& lay, const AttnCache& cache,
                            Gradients& g);

  struct MlpCache {
    LnCache ln;
    Matrix xn, pre, act;
    RowArray t;  // tanh term of the GELU
  };
  Matrix mlp(const Matrix& x, const MlpIdx& ix, MlpCache* cache);
  Matrix mlp_backward(const Matrix& dy, const MlpIdx& ix, const MlpCache& cache, Gradients& g);

  std::vector<int> query_token_rows() const;
  Matrix to_column_order(const Matrix& grid) const;
  Matrix from_column_order(const Matrix& cols) const;

  const TfmModel& m_;
  ModelIdx ix_;
  bool keep_;

  // Shapes of the current episode.
  int s_ = 0, q_ = 0, d_ = 0, width_ = 0;
  TaskKind task_;
  EpisodeInputs const* in_ = nullptr;

  struct LayerCache {
    AttnCache col, row;
    MlpCache mlp;
  };
  std::vector<LayerCache> layers_;
  LnCache out_ln_;
  Matrix readout_;  // q x D after the final layer norm
};

void Engine::embed_backward(const Matrix& dt, Gradients& g) {
  const int n = s_ + q_;
  const EpisodeInputs& in = *in_;
  auto label_backward = [&](int r, const RowVector& d) {
    if (r >= s_) {
      g[ix_.mask].row(0) += d;
    } else if (task_.is_classification()) {
      g[ix_.y_cls].row(static_cast<int>(in.y_support(r))) += d;
    } else {
      g[ix_.y_reg_w].row(0) += in.y_support(r) * d;
      g[ix_.y_reg_b].row(0) += d;
    }
  };
  if (m_.config.arch == Arch::OneD) {
    Matrix x = Matrix::Zero(n, m_.config.max_features);
    x.topLeftCorner(s_, d_) = in.x_support;
    x.bottomLeftCorner(q_, d_) = in.x_query;
    linear_backward_params(x, dt, g[ix_.x_w], g[ix_.x_b]);
    for (int r = 0; r < n; ++r) label_backward(r, dt.row(r));
    return;
  }
  for (int r = 0; r < n; ++r) {
    for (int j = 0; j < d_; ++j) {
      const RowVector d = dt.row(r * width_ + j);
      const double v = r < s_ ? in.x_support(r, j) : in.x_query(r - s_, j);
      g[ix_.val_w].row(0) += v * d;
      g[ix_.val_b].row(0) += d;
      g[ix_.feat].row(j) += d;
    }
    const RowVector d = dt.row(r * width_ + d_);
    label_backward(r, d);
    g[ix_.label_col].row(0) += d;
  }
}

Matrix Engine::attention(const Matrix& x, const AttnIdx& ix, const AttnLayout& lay, AttnCache* cache) {
  LnCache* ln_cache = cache ? &cache->ln : nullptr;
  Matrix xn = ln_forward(x, P(ix.ln.g), P(ix.ln.b), ln_cache);
  Matrix q = linear(xn, P(ix.wq), P(ix.bq));
  Matrix k = linear(xn, P(ix.wk), P(ix.bk));
  Matrix v = linear(xn, P(ix.wv), P(ix.bv));
  const int heads = m_.config.heads;
  const int dh = m_.config.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const int L = lay.len;
  const int c = lay.context;
  Matrix o(x.rows(), x.cols());
  if (cache) {
    cache->probs.clear();
    cache->self_probs.clear();
  }
  for (int grp = 0; grp < lay.groups; ++grp) {
    const Eigen::Index base = static_cast<Eigen::Index>(grp) * L;
    for (int h = 0; h < heads; ++h) {
      const auto qg = q.block(base, h * dh, L, dh);
      const auto kc = k.block(base, h * dh, c, dh);
      const auto vc = v.block(base, h * dh, c, dh);
      Matrix probs = (qg * kc.transpose()) * scale;
      Vector self(L - c);
      for (int i = c; i < L; ++i) self(i - c) = qg.row(i).dot(k.block(base + i, h * dh, 1, dh).row(0)) * scale;
      for (int i = 0; i < L; ++i) {
        double mx = probs.row(i).maxCoeff();
        if (i >= c) mx = std::max(mx, self(i - c));
        probs.row(i) = (probs.row(i).array() - mx).exp();
        double total = probs.row(i).sum();
        if (i >= c) {
          self(i - c) = std::exp(self(i - c) - mx);
          total += self(i - c);
          self(i - c) /= total;
        }
        probs.row(i) /= total;
      }
      auto og = o.block(base, h * dh, L, dh);
      og.noalias() = probs * vc;
      for (int i = c; i < L; ++i) og.row(i) += self(i - c) * v.block(base + i, h * dh, 1, dh).row(0);
      if (cache) {
        cache->probs.push_back(std::move(probs));
        cache->self_probs.push_back(std::move(self));
      }
    }
  }
  Matrix y = linear(o, P(ix.wo), P(ix.bo));
  if (cache) {
    cache->xn = std::move(xn);
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->o = std::move(o);
  }
  return y;
}

Matrix Engine::attention_backward(const Matrix& dy, const AttnIdx& ix, const AttnLayout& lay,
                                  const AttnCache& cache, Gradients& g) {
  linear_backward_params(cache.o, dy, g[ix.wo], g[ix.bo]);
  const Matrix d_o = dy * P(ix.wo).transpose();
  const int heads = m_.config.heads;
  const int dh = m_.config.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const int L = lay.len;
  const int c = lay.context;
  Matrix dq = Matrix::Zero(dy.rows(), dy.cols());
  Matrix dk = Matrix::Zero(dy.rows(), dy.cols());
  Matrix dv = Matrix::Zero(dy.rows(), dy.cols());
  std::size_t slot = 0;
  for (int grp = 0; grp < lay.groups; ++grp) {
    const Eigen::Index base = static_cast<Eigen::Index>(grp) * L;
    for (int h = 0; h < heads; ++h, ++slot) {
      const Matrix& probs = cache.probs[slot];
      const Vector& self = cache.self_probs[slot];
      const auto qg = cache.q.block(base, h * dh, L, dh);
      const auto kc = cache.k.block(base, h * dh, c, dh);
      const auto vc = cache.v.block(base, h * dh, c, dh);
      const auto dog = d_o.block(base, h * dh, L, dh);

      Matrix dprobs = dog * vc.transpose();  // L x c
      dv.block(base, h * dh, c, dh).noalias() += probs.transpose() * dog;
      Matrix dscores(L, c);
      Vector dself(L - c);
      for (int i = 0; i < L; ++i) {
        double dot = probs.row(i).dot(dprobs.row(i));
        double dps = 0.0;
        if (i >= c) {
          const auto vi = cache.v.block(base + i, h * dh, 1, dh).row(0);
          dps = dog.row(i).dot(vi);
          dv.block(base + i, h * dh, 1, dh).row(0) += self(i - c) * dog.row(i);
          dot += self(i - c) * dps;
          dself(i - c) = self(i - c) * (dps - dot) * scale;
        }
        dscores.row(i) = probs.row(i).array() * (dprobs.row(i).array() - dot) * scale;
      }
      dq.block(base, h * dh, L, dh).noalias() += dscores * kc;
      dk.block(base, h * dh, c, dh).noalias() += dscores.transpose() * qg;
      for (int i = c; i < L; ++i) {
        dq.block(base + i, h * dh, 1, dh).row(0) += dself(i - c) * cache.k.block(base + i, h * dh, 1, dh).row(0);
        dk.block(base + i, h * dh, 1, dh).row(0) += dself(i - c) * cache.q.block(base + i, h * dh, 1, dh).row(0);
      }
    }
  }
  linear_backward_params(cache.xn, dq, g[ix.wq], g[ix.bq]);
  linear_backward_params(cache.xn, dk, g[ix.wk], g[ix.bk]);
  linear_backward_params(cache.xn, dv, g[ix.wv], g[ix.bv]);
  Matrix dxn = dq * P(ix.wq).transpose();
  dxn.noalias() += dk * P(ix.wk).transpose();
  dxn.noalias() += dv * P(ix.wv).transpose();
  return ln_backward(dxn, cache.ln, P(ix.ln.g), g[ix.ln.g], g[ix.ln.b]);
}

Matrix Engine::mlp(const Matrix& x, const MlpIdx& ix, MlpCache* cache) {
  Matrix xn = ln_forward(x, P(ix.ln.g), P(ix.ln.b), cache ? &cache->ln : nullptr);
  Matrix pre = linear(xn, P(ix.w1), P(ix.b1));
  RowArray t = gelu_tanh_term(pre);
  Matrix act = (0.5 * pre.array() * (1.0 + t)).matrix();
  Matrix y = linear(act, P(ix.w2), P(ix.b2));
  if (cache) {
    cache->xn = std::move(xn);
    cache->pre = std::move(pre);
    cache->act = std::move(act);
    cache->t = std::move(t);
  }
  return y;
}

Matrix Engine::mlp_backward(const Matrix& dy, const MlpIdx& ix, const MlpCache& cache, Gradients& g) {
  linear_backward_params(cache.act, dy, g[ix.w2], g[ix.b2]);
  Matrix dact = dy * P(ix.w2).transpose();
  const RowArray x = cache.pre.array();
  const RowArray& t = cache.t;
  const RowArray grad = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t.square()) * kGeluA * (1.0 + 3.0 * kGeluB * x.square());
  const Matrix dpre = (dact.array() * grad).matrix();
  linear_backward_params(cache.xn, dpre, g[ix.w1], g[ix.b1]);
  const Matrix dxn = dpre * P(ix.w1).transpose();
  return ln_backward(dxn, cache.ln, P(ix.ln.g), g[ix.ln.g], g[ix.ln.b]);
}

std::vector<int> Engine::query_token_rows() const {
  std::vector<int> rows(q_);
  for (int i = 0; i < q_; ++i)
    rows[i] = m_.config.arch == Arch::OneD ? s_ + i : (s_ + i) * width_ + d_;
  return rows;
}

Matrix Engine::to_column_order(const Matrix& grid) const {
  const int n = s_ + q_;
  Matrix out(grid.rows(), grid.cols());
  for (int c = 0; c < width_; ++c)
    for (int r = 0; r < n; ++r) out.row(c * n + r) = grid.row(r * width_ + c);
  return out;
}

Matrix Engine::from_column_order(const Matrix& cols) const {
  const int n = s_ + q_;
  Matrix out(cols.rows(), cols.cols());
  for (int c = 0; c < width_; ++c)
    for (int r = 0; r < n; ++r) out.row(r * width_ + c) = cols.row(c * n + r);
  return out;
}

Matrix Engine::run(const EpisodeInputs& in) {
  s_ = in.support_size();
  q_ = in.query_size();
  d_ = in.features();
  task_ = in.task;
  in_ = &in;
  check_inputs(m_, in);
  width_ = d_ + 1;
  const int n = s_ + q_;

  Matrix h = embed_tokens(m_, ix_, in);
  layers_.assign(keep_ ? m_.config.layers : 0, {});
  for (int l = 0; l < m_.config.layers; ++l) {
    const auto& li = ix_.layers[l];
    LayerCache* lc = keep_ ? &layers_[l] : nullptr;
    if (m_.config.arch == Arch::OneD) {
      h += attention(h, li.row, {1, n, s_}, lc ? &lc->row : nullptr);
    } else {
      h += attention(h, li.col, {n, width_, width_}, lc ? &lc->col : nullptr);
      h += from_column_order(attention(to_column_order(h), li.row, {width_, n, s_}, lc ? &lc->row : nullptr));
    }
    h += mlp(h, li.mlp, lc ? &lc->mlp : nullptr);
  }

  const auto rows = query_token_rows();
  Matrix z(q_, m_.config.model_dim);
  for (int i = 0; i < q_; ++i) z.row(i) = h.row(rows[i]);
  readout_ = ln_forward(z, P(ix_.out_ln.g), P(ix_.out_ln.b), keep_ ? &out_ln_ : nullptr);

  if (!task_.is_classification()) return linear(readout_, P(ix_.reg_w), P(ix_.reg_b));
  Matrix logits = linear(readout_, P(ix_.cls_w), P(ix_.cls_b));
  logits.rightCols(m_.config.max_classes - task_.num_classes).setConstant(kNegInf);
  return logits;
}

Gradients Engine::backward(const Matrix& d_out) {
  Gradients g;
  g.reserve(m_.params.size());
  for (const auto& p : m_.params) g.push_back(Matrix::Zero(p.rows(), p.cols()));

  Matrix dz;
  if (task_.is_classification()) {
    const int k = task_.num_classes;
    const Matrix d_active = d_out.leftCols(k);
    Matrix d_full = Matrix::Zero(q_, m_.config.max_classes);
    d_full.leftCols(k) = d_active;
    linear_backward_params(readout_, d_full, g[ix_.cls_w], g[ix_.cls_b]);
    dz = d_full * P(ix_.cls_w).transpose();
  } else {
    linear_backward_params(readout_, d_out, g[ix_.reg_w], g[ix_.reg_b]);
    dz = d_out * P(ix_.reg_w).transpose();
  }
  dz = ln_backward(dz, out_ln_, P(ix_.out_ln.g), g[ix_.out_ln.g], g[ix_.out_ln.b]);

  const int n = s_ + q_;
  const Eigen::Index tokens = m_.config.arch == Arch::OneD ? n : static_cast<Eigen::Index>(n) * width_;
  Matrix dh = Matrix::Zero(tokens, m_.config.model_dim);
  const auto rows = query_token_rows();
  for (int i = 0; i < q_; ++i) dh.row(rows[i]) = dz.row(i);

  for (int l = m_.config.layers - 1; l >= 0; --l) {
    const auto& li = ix_.layers[l];
    const auto& lc = layers_[l];
    dh += mlp_backward(dh, li.mlp, lc.mlp, g);
    if (m_.config.arch == Arch::OneD) {
      dh += attention_backward(dh, li.row, {1, n, s_}, lc.row, g);
    } else {
      dh += from_column_order(attention_backward(to_column_order(dh), li.row, {width_, n, s_}, lc.row, g));
      dh += attention_backward(dh, li.col, {n, width_, width_}, lc.col, g);
    }
  }
  embed_backward(dh, g);
  return g;
}

// Returns per-query loss contributions' gradient w.r.t. outputs (already
// divided by q) and the mean loss.
double loss_and_output_grad(const Matrix& out, const EpisodeInputs& in, Matrix* d_out) {
  const auto q = out.rows();
  if (in.y_query.size() != q) throw DimError("query label count mismatch");
  double total = 0.0;
  if (d_out) d_out->setZero(out.rows(), out.cols());
  if (in.task.is_classification()) {
    const int k = in.task.num_classes;
    for (Eigen::Index i = 0; i < q; ++i) {
      const auto row = out.row(i).head(k);
      const double mx = row.maxCoeff();
      const RowVector e = (row.array() - mx).exp();
      const double z = e.sum();
      const int y = static_cast<int>(in.y_query(i));
      total += std::log(z) + mx - row(y);
      if (d_out) {
        d_out->row(i).head(k) = e / z / static_cast<double>(q);
        (*d_out)(i, y) -= 1.0 / static_cast<double>(q);
      }
    }
  } else {
    for (Eigen::Index i = 0; i < q; ++i) {
      const double diff = out(i, 0) - in.y_query(i);
      total += diff * diff;
      if (d_out) (*d_out)(i, 0) = 2.0 * diff / static_cast<double>(q);
    }
  }
  return total / static_cast<double>(q);
}

}  // namespace

Matrix embed_episode(const TfmModel& model, const EpisodeInputs& inputs) {
  check_inputs(model, inputs);
  return embed_tokens(model, resolve(model), inputs);
}

Matrix forward(const TfmModel& model, const EpisodeInputs& inputs) {
  Engine engine(model, false);
  return engine.run(inputs);
}

double loss(const Matrix& outputs, const EpisodeInputs& inputs) {
  return loss_and_output_grad(outputs, inputs, nullptr);
}

LossAndGrad backward(const TfmModel& model, const EpisodeInputs& inputs) {
  Engine engine(model, true);
  LossAndGrad out;
  out.outputs = engine.run(inputs);
  Matrix d_out;
  out.loss = loss_and_output_grad(out.outputs, inputs, &d_out);
  out.grads = engine.backward(d_out);
  return out;
}

// ---------------------------------------------------------------------------
// Training

void TrainHp::validate() const {
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(min_support_frac > 0.0 && min_support_frac <= max_support_frac && max_support_frac < 1.0))
    throw ConfigError("support fractions must satisfy 0 < min <= max < 1");
  ranges.validate();
}

TrainState init_train_state(const TfmConfig& config, std::uint64_t seed) {
  TrainState state;
  state.seed = seed;
  Rng init_rng = Rng(seed).child("init");
  state.model = TfmModel::init(config, init_rng);
  for (const auto& p : state.model.params) {
    state.adam_m.push_back(Matrix::Zero(p.rows(), p.cols()));
    state.adam_v.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
  return state;
}

Episode sample_training_episode(const Mixture& mix, const TrainHp& hp, Rng& rng) {
  Rng table_rng = rng.child("table");
  auto table = std::make_shared<const Table>(mixture_sample(mix, hp.task, table_rng, hp.ranges));
  const int n = table->rows();
  const int lo = std::max(1, static_cast<int>(std::ceil(hp.min_support_frac * n)));
  const int hi = std::min(n - 1, std::max(lo, static_cast<int>(std::floor(hp.max_support_frac * n))));
  Rng split_rng = rng.child("split");
  const int s = static_cast<int>(split_rng.uniform_int(lo, hi));
  return make_episode(std::move(table), s, n - s, split_rng);
}

void train_steps(TrainState& state, const Mixture& mix, const TrainHp& hp, int steps, const StepCallback& on_step) {
  hp.validate();
  auto& model = state.model;
  const Rng data_root = Rng(state.seed).child("data");
  Gradients accum;
  for (const auto& p : model.params) accum.push_back(Matrix::Zero(p.rows(), p.cols()));

  for (int t = 0; t < steps; ++t) {
    for (auto& a : accum) a.setZero();
    double batch_loss = 0.0;
    const Rng step_rng = data_root.child(static_cast<std::uint64_t>(state.step));
    for (int b = 0; b < hp.batch; ++b) {
      Rng ep_rng = step_rng.child(static_cast<std::uint64_t>(b));
      const Episode ep = sample_training_episode(mix, hp, ep_rng);
      const auto result = backward(model, episode_inputs(ep));
      batch_loss += result.loss;
      for (std::size_t i = 0; i < accum.size(); ++i) accum[i] += result.grads[i];
    }
    const double inv_batch = 1.0 / hp.batch;
    double norm_sq = 0.0;
    for (auto& a : accum) {
      a *= inv_batch;
      norm_sq += a.squaredNorm();
    }
    const double norm = std::sqrt(norm_sq);
    const double clip = (hp.clip_norm > 0.0 && norm > hp.clip_norm) ? hp.clip_norm / norm : 1.0;

    ++state.step;
    const double warm = hp.warmup_steps > 0 ? std::min(1.0, static_cast<double>(state.step) / hp.warmup_steps) : 1.0;
    const double lr = hp.lr * warm;
    const double bc1 = 1.0 - std::pow(hp.beta1, state.step);
    const double bc2 = 1.0 - std::pow(hp.beta2, state.step);
    for (std::size_t i = 0; i < accum.size(); ++i) {
      const Matrix grad = accum[i] * clip;
      state.adam_m[i] = hp.beta1 * state.adam_m[i] + (1.0 - hp.beta1) * grad;
      state.adam_v[i] = hp.beta2 * state.adam_v[i] + (1.0 - hp.beta2) * grad.cwiseProduct(grad);
      model.params[i].array() -=
          lr * (state.adam_m[i].array() / bc1) / ((state.adam_v[i].array() / bc2).sqrt() + hp.adam_eps);
    }
    state.loss_history.push_back(batch_loss * inv_batch);
    if (on_step) on_step(state);
  }
}

TrainState pretrain(const Mixture& mix, const TfmConfig& config, const TrainHp& hp, std::uint64_t seed) {
  hp.validate();
  TrainState state = init_train_state(config, seed);
  train_steps(state, mix, hp, hp.steps);
  return state;
}

// ---------------------------------------------------------------------------
// Inference

Prediction icl_predict(const TfmModel& model, const EpisodeInputs& inputs, const Normalizer& normalizer, int chunk) {
  const int q = inputs.query_size();
  if (chunk < 1) chunk = q;
  const bool cls = inputs.task.is_classification();
  Prediction pred;
  if (cls) {
    pred.probs.resize(q, inputs.task.num_classes);
    pred.labels.resize(q);
  } else {
    pred.values.resize(q);
  }
  EpisodeInputs part;
  part.x_support = inputs.x_support;
  part.y_support = inputs.y_support;
  part.task = inputs.task;
  for (int start = 0; start < q; start += chunk) {
    const int len = std::min(chunk, q - start);
    part.x_query = inputs.x_query.middleRows(start, len);
    const Matrix out = forward(model, part);
    for (int i = 0; i < len; ++i) {
      if (cls) {
        const int k = inputs.task.num_classes;
        const auto row = out.row(i).head(k);
        const RowVector e = (row.array() - row.maxCoeff()).exp();
        pred.probs.row(start + i) = e / e.sum();
        Eigen::Index arg;
        pred.probs.row(start + i).maxCoeff(&arg);
        pred.labels(start + i) = static_cast<double>(arg);
      } else {
        pred.values(start + i) = normalizer.denormalize_target(out(i, 0));
      }
    }
  }
  return pred;
}

Prediction icl_predict(const TfmModel& model, const Episode& episode, int chunk) {
  return icl_predict(model, episode_inputs(episode), episode.normalizer, chunk);
}

}  // namespace priorforge
