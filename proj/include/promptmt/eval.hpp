// SPDX-FileCopyrightText: Copyright (c) 2026 The promptmt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "promptmt/common.hpp"

/// Corpus BLEU (13a tokenization, exponential smoothing), paired bootstrap
/// resampling and the formal/informal address score.
namespace promptmt::eval {

class EvalError : public Error {
 public:
  using Error::Error;
};

enum class TokenizerMode { t13a, character };
enum class Smoothing { exp, none };

inline constexpr int kMaxOrder = 4;

std::string_view to_string(TokenizerMode mode);
std::string_view to_string(Smoothing smoothing);
TokenizerMode tokenizer_mode_from_string(std::string_view name);

std::vector<std::string> tokenize_13a(std::string_view text,
                                      TokenizerMode mode = TokenizerMode::t13a);

/// Sufficient statistics for BLEU; they add across sentences.
struct NgramStats {
  std::array<long long, kMaxOrder> correct{};
  std::array<long long, kMaxOrder> total{};
  long long hyp_len = 0;
  long long ref_len = 0;

  NgramStats& operator+=(const NgramStats& other);
};

NgramStats sentence_stats(std::span<const std::string> hyp, std::span<const std::string> ref);

struct BleuScore {
  double score = 0.0;  ///< in [0, 100]
  std::array<double, kMaxOrder> precisions{};  ///< smoothed, in [0, 1]
  double brevity_penalty = 0.0;
  long long hyp_len = 0;
  long long ref_len = 0;
  NgramStats stats;
};

BleuScore bleu_from_stats(const NgramStats& stats, Smoothing smoothing);

BleuScore corpus_bleu(std::span<const std::string> hypotheses, std::span<const std::string> references,
                      TokenizerMode mode = TokenizerMode::t13a, Smoothing smoothing = Smoothing::exp);

/// "BLEU+case.mixed+numrefs.1+smooth.exp+tok.13a" style description.
std::string bleu_signature(TokenizerMode mode, Smoothing smoothing);

struct SignificanceReport {
  double bleu_a = 0.0;
  double bleu_b = 0.0;
  std::vector<double> deltas;  ///< BLEU(A) - BLEU(B), one per resample
  double p_value = 1.0;        ///< fraction of resamples where A fails to beat B
  double level = 0.01;
  int n_resamples = 0;
  bool significant = false;
};

inline constexpr int kDefaultResamples = 100;
inline constexpr double kDefaultSignificanceLevel = 0.01;

/// Sentence indices drawn for resample `r`: derived from (seed, r) alone, so
/// resamples may be evaluated in any order or in parallel.
std::vector<std::size_t> bootstrap_indices(std::size_t corpus_size, std::uint64_t seed, int r);

SignificanceReport paired_bootstrap(std::span<const std::string> hyp_a,
                                    std::span<const std::string> hyp_b,
                                    std::span<const std::string> references,
                                    int n_resamples = kDefaultResamples,
                                    double level = kDefaultSignificanceLevel, std::uint64_t seed = 0,
                                    TokenizerMode mode = TokenizerMode::t13a,
                                    Smoothing smoothing = Smoothing::exp);

enum class Formality : int { informal = -1, none = 0, formal = 1 };

int formality_score(std::span<const Formality> annotations);

/// Lexicon-based stand-in for human T-V annotation.
class RegisterDetector {
 public:
  RegisterDetector(std::vector<std::string> formal, std::vector<std::string> informal);

  Formality detect(std::string_view text) const;

 private:
  std::vector<std::string> formal_;
  std::vector<std::string> informal_;
};

Formality detect_register(std::string_view text, std::span<const std::string> formal,
                          std::span<const std::string> informal);

/// Reads one label per line: "formal"/"informal"/"none" or 1/-1/0.
std::vector<Formality> read_annotations(const std::string& path);

}  // namespace promptmt::eval
