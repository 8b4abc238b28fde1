#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "numex/dataset.hpp"
#include "numex/errors.hpp"
#include "numex/metrics.hpp"
#include "numex/rng.hpp"

namespace numex {

template <class S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

struct ModelConfig {
  int seq_len = 50;
  int embed_dim = 128;
  int hidden_dim = 128;  // per direction
  int num_classes = kNumClasses;
  double dropout_rate = 0.5;
  int vocab_size = 0;
  bool mask_padding_loss = false;  // ablation: drop [pad] positions from the loss

  bool operator==(const ModelConfig&) const = default;
};

/// Closed-form trainable-parameter count for a config.
std::int64_t parameter_count(const ModelConfig& c);

template <class S>
struct GruDirParams {
  MatX<S> W_z, W_r, W_h;  // input_dim x hidden
  MatX<S> U_z, U_r, U_h;  // hidden x hidden
  MatX<S> b_z, b_r, b_h;  // 1 x hidden
};

template <class S>
struct GruLayerParams {
  GruDirParams<S> fwd, bwd;
};

/// Every trainable tensor. Reused for gradients and Adam moments.
template <class S>
struct ParamSet {
  MatX<S> embedding;  // vocab_size x embed_dim
  GruLayerParams<S> layer1;  // input embed_dim
  GruLayerParams<S> layer2;  // input 2*hidden_dim
  MatX<S> dense_w;    // 2*hidden_dim x num_classes
  MatX<S> dense_b;    // 1 x num_classes
};

template <class S>
struct ParamRef {
  std::string name;
  MatX<S>* mat;
};

/// Fixed enumeration order; checkpoints and Adam state follow it.
template <class S>
std::vector<ParamRef<S>> param_refs(ParamSet<S>& p);

template <class S>
struct TaggerModel {
  ModelConfig config;
  ParamSet<S> params;
  std::uint64_t revision = 0;  // bumped on every update; guards stale caches
};

/// Glorot-uniform weights, zero biases, uniform(-0.05, 0.05) embeddings.
template <class S>
TaggerModel<S> init_model(const ModelConfig& config, std::uint64_t seed);

/// Zero tensors shaped like the given config.
template <class S>
ParamSet<S> zero_params(const ModelConfig& config);

/// One GRU step over a batch of rows:
///   z = sigmoid(x W_z + h U_z + b_z)
///   r = sigmoid(x W_r + h U_r + b_r)
///   c = tanh(x W_h + (r .* h) U_h + b_h)
///   h' = (1 - z) .* h + z .* c
template <class S>
struct GruStep {
  MatX<S> z, r, c, h;
};

template <class S>
GruStep<S> gru_cell(const GruDirParams<S>& p, const MatX<S>& x, const MatX<S>& h_prev);

/// Concatenated [forward ; backward] states per time step for one
/// bidirectional layer in isolation.
template <class S>
std::vector<MatX<S>> bidirectional_outputs(const GruLayerParams<S>& layer,
                                           const std::vector<MatX<S>>& xs);

/// Encoded minibatch; both matrices are batch x seq_len.
struct Batch {
  Eigen::MatrixXi indices;
  Eigen::MatrixXi labels;
};

Batch make_batch(const std::vector<TrainingInstance>& instances,
                 const std::vector<std::size_t>& order, std::size_t begin, std::size_t end,
                 int seq_len);

template <class S>
struct GruDirCache {
  std::vector<MatX<S>> h;  // T+1 states in processing order; h[0] = 0
  std::vector<MatX<S>> z, r, c;
};

template <class S>
struct LayerCache {
  GruDirCache<S> fwd, bwd;
  std::vector<MatX<S>> out;  // per time t: batch x 2*hidden
};

/// Activations recorded by a forward pass; backward() consumes it.
template <class S>
struct ForwardCache {
  Eigen::MatrixXi indices;
  bool train_mode = false;
  std::uint64_t model_revision = 0;
  std::vector<MatX<S>> embedded;      // per t: batch x embed_dim
  LayerCache<S> l1, l2;
  std::vector<MatX<S>> dropout_mask;  // per t, only when dropout was applied
  std::vector<MatX<S>> dropped;       // dense input per t
  std::vector<MatX<S>> probs;         // per t: batch x num_classes
};

/// Batched forward pass. In train mode an inverted-scaling dropout mask is
/// drawn from `rng` (or replayed from `fixed_mask`); in inference mode
/// dropout is a no-op. Throws IndexOutOfVocab for out-of-range indices.
template <class S>
ForwardCache<S> forward(const TaggerModel<S>& model, const Batch& batch, bool train_mode,
                        Rng* rng, const std::vector<MatX<S>>* fixed_mask = nullptr);

/// Mean over counted positions (all, or non-pad under mask_padding_loss) of
/// -log p[label], averaged over the batch. log is clamped at 1e-12.
template <class S>
double batch_loss(const TaggerModel<S>& model, const ForwardCache<S>& cache,
                  const Eigen::MatrixXi& labels);

/// Single-sequence convenience: mean over positions of -log p[i, label_i].
double sequence_loss(const Eigen::MatrixXd& probs, const std::vector<int>& labels);

/// Exact gradients of batch_loss for the realized dropout mask, via
/// backpropagation through time. Throws StaleCache when the model changed
/// after the forward pass.
template <class S>
ParamSet<S> backward(const TaggerModel<S>& model, const ForwardCache<S>& cache,
                     const Eigen::MatrixXi& labels);

/// Inference probabilities for one encoded sequence, as doubles (T x C).
template <class S>
Eigen::MatrixXd infer(const TaggerModel<S>& model, const std::vector<int>& indices);

template <class S>
struct AdamState {
  double lr = 0.003;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t t = 0;
  ParamSet<S> m, v;

  static AdamState<S> for_config(const ModelConfig& config, double lr = 0.003);
};

/// One bias-corrected Adam update, elementwise over every parameter.
/// Throws ShapeMismatch when gradient shapes differ from the parameters.
template <class S>
void adam_step(ParamSet<S>& params, const ParamSet<S>& grads, AdamState<S>& state);

/// Same update through the model, bumping its revision so forward caches
/// taken before the step are rejected by backward().
template <class S>
void adam_step(TaggerModel<S>& model, const ParamSet<S>& grads, AdamState<S>& state);

struct TrainOptions {
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 0.003;
  std::uint64_t seed = 0;
  bool eval_val = true;  // per-epoch loss/dice on the test split
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double train_dice = 0.0;
  std::optional<double> val_loss;
  std::optional<double> val_dice;
};

/// Minibatch training over split.train with per-epoch stats, optionally
/// evaluated on split.test. Deterministic for a fixed seed: shuffle order,
/// dropout draws and reduction order are all pinned. The last partial
/// batch is used; gradients are means over the actual batch size.
template <class S>
std::vector<EpochStats> train(TaggerModel<S>& model, const DatasetSplit& split,
                              const TrainOptions& options);

void write_history_jsonl(const std::vector<EpochStats>& history,
                         const std::filesystem::path& path);

// --- checkpoints ---

using LoadedTagger = std::variant<TaggerModel<float>, TaggerModel<double>>;

/// Binary checkpoint: magic, JSON manifest (format version, precision,
/// config, vocabulary hash, parameter names/shapes), then raw little-endian
/// arrays in manifest order. Round-trips bit-exactly.
template <class S>
void save_checkpoint(const TaggerModel<S>& model, const std::filesystem::path& path,
                     std::uint64_t vocab_hash);

/// Loads either precision. Throws CorruptCheckpoint on damage and
/// ConfigMismatch when `expected_vocab_hash` is given and differs.
LoadedTagger load_checkpoint(const std::filesystem::path& path,
                             std::optional<std::uint64_t> expected_vocab_hash = std::nullopt);

/// Typed load; additionally requires the stored precision to match S.
template <class S>
TaggerModel<S> load_checkpoint_as(const std::filesystem::path& path,
                                  std::optional<std::uint64_t> expected_vocab_hash = std::nullopt);

}  // namespace numex
