#pragma once

#include "priorforge/episode.hpp"
#include "priorforge/priors.hpp"
#include "priorforge/rng.hpp"
#include "priorforge/table.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace priorforge {

enum class Arch { OneD, TwoD };

std::string_view to_string(Arch arch);
Arch parse_arch(std::string_view name);

struct TfmConfig {
  Arch arch = Arch::OneD;
  int layers = 3;
  int model_dim = 64;
  int heads = 4;
  double mlp_ratio = 4.0;
  int max_features = kMaxFeatures;
  int max_classes = kMaxClasses;

  int head_dim() const { return model_dim / heads; }
  int hidden_dim() const;
  void validate() const;
  bool operator==(const TfmConfig&) const = default;
};

// Named parameter tensors. Gradients are plain vectors aligned with `params`.
struct TfmModel {
  TfmConfig config;
  std::vector<std::string> names;
  std::vector<Matrix> params;

  static TfmModel init(const TfmConfig& config, Rng& rng);

  int index(std::string_view name) const;  // throws ConfigError when missing
  const Matrix& param(std::string_view name) const { return params[index(name)]; }
  Matrix& param(std::string_view name) { return params[index(name)]; }
  std::size_t parameter_count() const;
  bool all_finite() const;
  bool operator==(const TfmModel&) const = default;
};

using Gradients = std::vector<Matrix>;

// Normalized model inputs for one episode: support rows first, then queries.
struct EpisodeInputs {
  Matrix x_support;
  Matrix x_query;
  Vector y_support;  // class indices or min-max normalized targets
  Vector y_query;    // only read by the loss
  TaskKind task;

  int support_size() const { return static_cast<int>(x_support.rows()); }
  int query_size() const { return static_cast<int>(x_query.rows()); }
  int features() const { return static_cast<int>(x_support.cols()); }
};

EpisodeInputs episode_inputs(const Episode& episode);

// OneD: (s+q) x D, one token per row. TwoD: (s+q)*(d+1) x D, row-major over
// the (row, column) grid with the label token last in each row.
Matrix embed_episode(const TfmModel& model, const EpisodeInputs& inputs);

// q x max_classes logits (inactive classes are -inf) or q x 1 scalars.
Matrix forward(const TfmModel& model, const EpisodeInputs& inputs);

// Mean cross-entropy over queries, or mean squared error on normalized targets.
double loss(const Matrix& outputs, const EpisodeInputs& inputs);

struct LossAndGrad {
  double loss = 0.0;
  Matrix outputs;
  Gradients grads;
};

// Forward pass with caches followed by exact reverse-mode gradients.
LossAndGrad backward(const TfmModel& model, const EpisodeInputs& inputs);

struct TrainHp {
  int steps = 2000;
  int batch = 16;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;
  int warmup_steps = 0;
  TaskFamily task = TaskFamily::Classification;
  ConfigRanges ranges;
  double min_support_frac = 0.5;
  double max_support_frac = 0.9;

  void validate() const;
};

struct TrainState {
  TfmModel model;
  Gradients adam_m;
  Gradients adam_v;
  int step = 0;
  std::uint64_t seed = 0;
  std::vector<double> loss_history;
};

TrainState init_train_state(const TfmConfig& config, std::uint64_t seed);

// Support size drawn from [ceil(min_frac*N), floor(max_frac*N)], q = N - s.
Episode sample_training_episode(const Mixture& mix, const TrainHp& hp, Rng& rng);

using StepCallback = std::function<void(const TrainState&)>;

// Runs `steps` Adam updates. Batch b of step t draws its table from
// Rng(seed).child("data", t).child(b), so the data stream depends only on
// the seed and the global step index.
void train_steps(TrainState& state, const Mixture& mix, const TrainHp& hp, int steps,
                 const StepCallback& on_step = {});
TrainState pretrain(const Mixture& mix, const TfmConfig& config, const TrainHp& hp, std::uint64_t seed);

struct Prediction {
  Matrix probs;   // q x num_classes, rows sum to 1 (classification)
  Vector labels;  // argmax class (classification)
  Vector values;  // de-normalized predictions (regression)
};

// Single forward pass; queries are processed in chunks of `chunk` rows,
// which leaves results unchanged because queries never attend to each other.
Prediction icl_predict(const TfmModel& model, const Episode& episode, int chunk = 512);
Prediction icl_predict(const TfmModel& model, const EpisodeInputs& inputs, const Normalizer& normalizer,
                       int chunk = 512);

}  // namespace priorforge
