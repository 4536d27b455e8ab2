// SPDX-FileCopyrightText: Copyright (c) 2026 The promptmt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <functional>
#include <span>
#include <vector>

#include "promptmt/model.hpp"
#include "promptmt/pipeline.hpp"

/// Beam search and greedy decoding over any next-token scorer.
namespace promptmt::decode {

class DecodeError : public Error {
 public:
  using Error::Error;
};

/// lp(n) = ((5 + n) / 6)^alpha, n counting generated tokens including eos.
double length_penalty(std::size_t length, double alpha);

struct Hypothesis {
  std::vector<int> tokens;  ///< ends in eos when finished
  double logprob = 0.0;
  double score = 0.0;
  bool finished = true;  ///< false: cut at max_decode_len without eos
};

/// Result order: score descending, then shorter, then lexicographic tokens.
bool ranks_before(const Hypothesis& a, const Hypothesis& b);

/// Incremental next-token scorer for a fixed input. A session tracks a set of
/// live prefixes; `step` replaces it with `parents[i] + tokens[i]`.
class ScoringSession {
 public:
  virtual ~ScoringSession() = default;
  virtual int vocab_size() const = 0;
  virtual int eos() const { return pipeline::kEosId; }
  /// Log-probabilities after the empty prefix (1 x vocab).
  virtual Eigen::MatrixXd start() = 0;
  /// Log-probabilities after each extended prefix (parents.size() x vocab).
  virtual Eigen::MatrixXd step(std::span<const int> parents, std::span<const int> tokens) = 0;
};

/// Session over a callback that scores a whole prefix; for toy models.
class PrefixSession : public ScoringSession {
 public:
  using Scorer = std::function<Eigen::VectorXd(std::span<const int> prefix)>;
  PrefixSession(int vocab_size, Scorer scorer, int eos = pipeline::kEosId);

  int vocab_size() const override { return vocab_; }
  int eos() const override { return eos_; }
  Eigen::MatrixXd start() override;
  Eigen::MatrixXd step(std::span<const int> parents, std::span<const int> tokens) override;

 private:
  Eigen::MatrixXd score_all();

  int vocab_;
  Scorer scorer_;
  int eos_;
  std::vector<std::vector<int>> prefixes_;
};

/// Session over a transformer with key/value caching. The pad id is never
/// proposed since it doubles as the decoder start token.
template <typename Scalar>
class TransformerSession : public ScoringSession {
 public:
  TransformerSession(const model::Transformer<Scalar>& model, std::span<const int> input);

  int vocab_size() const override { return model_.config().vocab_size; }
  Eigen::MatrixXd start() override;
  Eigen::MatrixXd step(std::span<const int> parents, std::span<const int> tokens) override;

 private:
  Eigen::MatrixXd finish(const model::Matrix<Scalar>& logprobs) const;

  const model::Transformer<Scalar>& model_;
  model::EncodedSource<Scalar> source_;
  model::DecoderCache<Scalar> cache_;
};

extern template class TransformerSession<float>;
extern template class TransformerSession<double>;

/// Returns up to beam_size finished hypotheses in result order, or the best
/// unfinished prefix (finished = false) when nothing ends in time.
std::vector<Hypothesis> beam_search(ScoringSession& session, const pipeline::DecodeConfig& config);

/// Argmax token per step (ties to the lower id) until eos or max_len tokens.
Hypothesis greedy(ScoringSession& session, int max_len, double alpha = 0.6);

template <typename Scalar>
std::vector<Hypothesis> beam_search(const model::Transformer<Scalar>& model, std::span<const int> input,
                                    const pipeline::DecodeConfig& config) {
  TransformerSession<Scalar> session(model, input);
  return beam_search(session, config);
}

template <typename Scalar>
Hypothesis greedy(const model::Transformer<Scalar>& model, std::span<const int> input, int max_len,
                  double alpha = 0.6) {
  TransformerSession<Scalar> session(model, input);
  return greedy(session, max_len, alpha);
}

}  // namespace promptmt::decode
