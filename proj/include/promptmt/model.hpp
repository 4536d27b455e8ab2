// SPDX-FileCopyrightText: Copyright (c) 2026 The promptmt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "promptmt/common.hpp"
#include "promptmt/pipeline.hpp"

/// Small pre-LayerNorm encoder-decoder transformer with a shared embedding
/// table, written against Eigen with explicit backward passes. Templated on
/// the scalar so training runs in float and gradient checks in double.
namespace promptmt::model {

class ModelError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public ModelError {
 public:
  using ModelError::ModelError;
};

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

struct ModelConfig {
  int encoder_layers = 2;
  int decoder_layers = 2;
  int model_dim = 128;
  int feedforward_dim = 512;
  int heads = 4;
  double dropout = 0.1;
  int vocab_size = 0;
  int max_positions = 256;

  void validate() const;
  std::string fingerprint() const;
};

struct TensorSlot {
  std::size_t offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
};

struct LayerNormSlots {
  TensorSlot gain, bias;
};
struct LinearSlots {
  TensorSlot weight, bias;  ///< weight is in x out
};
struct AttentionSlots {
  LinearSlots query, key, value, output;
};
struct FeedForwardSlots {
  LinearSlots in, out;
};
struct EncoderLayerSlots {
  LayerNormSlots attn_norm, ff_norm;
  AttentionSlots attn;
  FeedForwardSlots ff;
};
struct DecoderLayerSlots {
  LayerNormSlots self_norm, cross_norm, ff_norm;
  AttentionSlots self_attn, cross_attn;
  FeedForwardSlots ff;
};

/// Where every tensor lives inside the flat parameter vector.
struct ParameterLayout {
  TensorSlot embedding;  ///< vocab x model_dim; also the output projection
  std::vector<EncoderLayerSlots> encoder;
  LayerNormSlots encoder_norm;
  std::vector<DecoderLayerSlots> decoder;
  LayerNormSlots decoder_norm;
  std::size_t total = 0;

  static ParameterLayout build(const ModelConfig& config);
};

/// Contiguous rows of one sequence inside a packed token matrix.
struct Segment {
  Eigen::Index offset = 0;
  Eigen::Index length = 0;
};

template <typename Scalar>
struct LossResult {
  Scalar loss = 0;
  std::size_t positions = 0;
  Matrix<Scalar> grad;  ///< d loss / d logits; empty unless requested
};

/// Mean label-smoothed cross-entropy over positions with mask != 0. The true
/// class gets weight 1 - smoothing and `smoothing` spreads uniformly over the
/// vocabulary (true class included).
template <typename Scalar>
LossResult<Scalar> label_smoothed_loss(const Matrix<Scalar>& logits, std::span<const int> targets,
                                       std::span<const int> mask, Scalar smoothing,
                                       bool want_grad = false);

inline constexpr double kDefaultLabelSmoothing = 0.1;
inline constexpr double kDefaultDropout = 0.1;

/// Source side of a decode: encoder memory plus per-layer cross-attention
/// keys and values.
template <typename Scalar>
struct EncodedSource {
  Matrix<Scalar> memory;
  std::vector<Matrix<Scalar>> cross_keys;
  std::vector<Matrix<Scalar>> cross_values;
};

/// Self-attention keys/values for each live hypothesis, per decoder layer.
template <typename Scalar>
struct DecoderCache {
  std::vector<std::vector<Matrix<Scalar>>> keys;    ///< [layer][beam] steps x model_dim
  std::vector<std::vector<Matrix<Scalar>>> values;  ///< [layer][beam]
  int steps = 0;
};

template <typename Scalar>
class Transformer {
 public:
  using Mat = Matrix<Scalar>;
  using Vec = Vector<Scalar>;

  Transformer(const ModelConfig& config, std::uint64_t seed);
  Transformer(const ModelConfig& config, Vec parameters);

  const ModelConfig& config() const { return config_; }
  const ParameterLayout& layout() const { return layout_; }
  Vec& parameters() { return params_; }
  const Vec& parameters() const { return params_; }
  std::size_t parameter_count() const { return layout_.total; }

  /// Same architecture and parameters in another precision.
  template <typename Other>
  Transformer<Other> cast() const {
    return Transformer<Other>(config_, params_.template cast<Other>());
  }

  struct Output {
    double loss = 0.0;
    std::size_t positions = 0;
  };

  /// Loss of `batch`; accumulates d loss / d parameters into `grad` when
  /// given. Dropout is active iff `train` is set, with masks drawn from
  /// `dropout_seed`.
  Output forward_backward(const pipeline::Batch& batch, double smoothing, bool train,
                          std::uint64_t dropout_seed, Vec* grad) const;

  /// Teacher-forced logits for each row: decoder_length(row) x vocab.
  std::vector<Mat> logits(const pipeline::Batch& batch) const;

  EncodedSource<Scalar> encode(std::span<const int> source) const;
  DecoderCache<Scalar> start_cache(int beams) const;
  /// Reorders cache rows so that beam i continues former beam parents[i].
  void reorder(DecoderCache<Scalar>& cache, std::span<const int> parents) const;
  /// Feeds one token per beam; returns next-token log-probabilities (beams x vocab).
  Mat decode_step(const EncodedSource<Scalar>& source, DecoderCache<Scalar>& cache,
                  std::span<const int> tokens) const;

 private:
  struct Forward;

  ModelConfig config_;
  ParameterLayout layout_;
  Vec params_;
  Mat positions_;
};

extern template class Transformer<float>;
extern template class Transformer<double>;

/// Adam with linear warmup followed by inverse square-root decay.
struct OptimizerConfig {
  double learning_rate = 1e-3;
  int warmup_steps = 200;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
  double clip_norm = 1.0;  ///< global gradient-norm clip; <= 0 disables
  /// Embedding rows of tokens absent from a batch keep their values and
  /// moments for that step (lazy Adam). Without it the tied output softmax
  /// moves every unused row on every step.
  bool lazy_embeddings = false;
};

double learning_rate_at(const OptimizerConfig& config, long long step);

template <typename Scalar>
struct AdamState {
  Vector<Scalar> first;
  Vector<Scalar> second;
  long long step = 0;
};

template <typename Scalar>
class Adam {
 public:
  Adam(OptimizerConfig config, std::size_t parameter_count);

  const OptimizerConfig& config() const { return config_; }
  AdamState<Scalar>& state() { return state_; }
  const AdamState<Scalar>& state() const { return state_; }

  /// One update; returns the gradient norm before clipping. Coordinates
  /// where `active` is zero are left untouched, moments included.
  double apply(Vector<Scalar>& params, Vector<Scalar>& grad, const Vector<Scalar>* active = nullptr);

 private:
  OptimizerConfig config_;
  AdamState<Scalar> state_;
};

struct StepMetrics {
  double loss = 0.0;
  double grad_norm = 0.0;
  double learning_rate = 0.0;
};

template <typename Scalar>
StepMetrics train_step(Transformer<Scalar>& model, const pipeline::Batch& batch, Adam<Scalar>& optimizer,
                       double smoothing, std::uint64_t dropout_seed);

struct TrainConfig {
  int steps = 0;
  int eval_every = 0;  ///< 0 disables evaluation
  int batch_size = 64;
  double label_smoothing = kDefaultLabelSmoothing;
  std::uint64_t seed = 0;

  void validate() const;
};

/// One evaluation record: step, suite id and named metric values.
struct CurvePoint {
  int step = 0;
  std::string suite;
  std::vector<std::pair<std::string, double>> metrics;
};

using BatchSource = std::function<pipeline::Batch()>;
using Evaluator = std::function<std::vector<CurvePoint>(const Transformer<float>&, int step)>;
using CheckpointHook = std::function<void(const Transformer<float>&, const Adam<float>&, int step)>;
using StepHook = std::function<void(int step, const StepMetrics&)>;

struct StageResult {
  std::vector<CurvePoint> curve;
  std::vector<StepMetrics> steps;
};

/// Runs `config.steps` updates, evaluating and checkpointing every
/// `config.eval_every` steps.
StageResult run_stage(Transformer<float>& model, Adam<float>& optimizer, const BatchSource& batches,
                      const TrainConfig& config, const Evaluator& evaluate = {},
                      const CheckpointHook& checkpoint = {}, const StepHook& on_step = {});

/// Checkpoint directory: params.bin, optimizer.bin, meta.json, vocab.txt.
struct Checkpoint {
  ModelConfig config;
  OptimizerConfig optimizer;
  Vector<float> parameters;
  AdamState<float> adam;
  long long step = 0;
  std::string config_fingerprint;
  std::uint64_t vocab_fingerprint = 0;
};

void save_checkpoint(const std::string& dir, const Transformer<float>& model, const Adam<float>& optimizer,
                     long long step, const pipeline::Vocabulary& vocab);
Checkpoint load_checkpoint(const std::string& dir);

}  // namespace promptmt::model
