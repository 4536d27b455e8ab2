// SPDX-FileCopyrightText: Copyright (c) 2026 The promptmt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "promptmt/common.hpp"
#include "promptmt/example.hpp"
#include "promptmt/ingest.hpp"
#include "promptmt/prompting.hpp"
#include "promptmt/vocabulary.hpp"

/// Shared-vocabulary tokenization, infill example construction, two-level
/// mixture sampling and padded batch assembly.
namespace promptmt::pipeline {

class PipelineError : public Error {
 public:
  using Error::Error;
};

/// Token ids for every word of `text`; unknown words map to unk. No eos.
std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab);

/// Text for `ids`, stopping at the first eos and skipping pad.
std::string detokenize(std::span<const int> ids, const Vocabulary& vocab);

/// Vocabulary covering the languages' surface words, their names, tags, prompt
/// words, punctuation, and `extra_words`.
Vocabulary build_vocabulary(const prompting::LanguageMap& languages,
                            std::span<const std::string> extra_words = {});

inline constexpr double kDefaultMaskRatio = 0.5;

struct InfillSpan {
  std::size_t start = 0;
  std::size_t length = 0;
};

/// Span of max(1, round(ratio * length)) tokens with a uniform start.
InfillSpan choose_infill_span(std::size_t length, double mask_ratio, Rng& rng);

/// Masks one contiguous span: the source keeps the text with the span
/// replaced by a single mask token, the target is the span.
ingest::Example make_infill_example(std::string_view text, double mask_ratio, std::uint64_t seed,
                                    const std::string& language = {},
                                    const std::string& provenance = {});

struct Dataset {
  std::string id;
  std::vector<ingest::Example> examples;
};

struct MixtureSpec {
  std::vector<Dataset> parallel;
  std::vector<Dataset> monolingual;
  /// Probability of drawing from (parallel, monolingual).
  double parallel_probability = 0.5;
  double monolingual_probability = 0.5;
  /// Within a source, weight datasets by size instead of uniformly.
  bool size_weighted = false;
  double mask_ratio = kDefaultMaskRatio;
};

/// Draws examples: a source by its probability, a dataset within the source,
/// then the dataset's next example. Each dataset cycles through a fresh
/// seeded permutation per epoch.
class Sampler {
 public:
  Sampler(MixtureSpec mix, std::uint64_t seed);

  struct Draw {
    ingest::Example example;  ///< infill examples are already masked
    bool monolingual = false;
    std::size_t dataset = 0;  ///< index within its source list
  };

  Draw draw();
  ingest::Example next() { return draw().example; }

  const MixtureSpec& mixture() const { return mix_; }

 private:
  struct Cursor {
    std::vector<std::size_t> order;
    std::size_t pos = 0;
    std::uint64_t epoch = 0;
  };

  std::size_t pick_dataset(const std::vector<Dataset>& sets);
  const ingest::Example& advance(std::vector<Cursor>& cursors, const std::vector<Dataset>& sets,
                                 std::size_t idx, bool mono);

  MixtureSpec mix_;
  std::uint64_t seed_;
  Rng rng_;
  std::vector<Cursor> parallel_cursors_;
  std::vector<Cursor> mono_cursors_;
};

Sampler build_sampler(MixtureSpec mix, std::uint64_t seed);

struct RowMeta {
  ingest::Task task = ingest::Task::translate;
  std::string source_lang;
  std::string target_lang;
  std::string provenance;
};

/// Rows padded to the batch maximum. Masks are 1 on valid positions; every
/// row's valid part ends with eos; padding holds the pad id.
struct Batch {
  Eigen::MatrixXi encoder_ids;
  Eigen::MatrixXi encoder_mask;
  Eigen::MatrixXi decoder_ids;
  Eigen::MatrixXi decoder_mask;
  std::vector<RowMeta> meta;

  int rows() const { return static_cast<int>(encoder_ids.rows()); }
  int encoder_length(int row) const { return encoder_mask.row(row).sum(); }
  int decoder_length(int row) const { return decoder_mask.row(row).sum(); }
};

struct EncodeOptions {
  prompting::ConditioningMode mode;
  bool use_dialect_name = false;
  int max_tokens = ingest::kMaxSequenceTokens;
  ingest::Phase phase = ingest::Phase::training;
};

struct EncodedExample {
  std::vector<int> source;  ///< conditioned input followed by eos
  std::vector<int> target;  ///< target followed by eos; empty when none
};

/// Conditions, tokenizes and applies the length rule. Returns nullopt when a
/// training example exceeds max_tokens (eos is not counted).
std::optional<EncodedExample> encode_example(const ingest::Example& example,
                                             const EncodeOptions& options,
                                             const prompting::LanguageMap& languages,
                                             const Vocabulary& vocab);

Batch make_batch(std::span<const EncodedExample> rows, std::span<const RowMeta> meta);

Batch next_batch(Sampler& sampler, int batch_size, const EncodeOptions& options,
                 const prompting::LanguageMap& languages, const Vocabulary& vocab);

/// Decoding settings shared with the decoder.
struct DecodeConfig {
  int beam_size = 4;
  double length_penalty_alpha = 0.6;
  int max_decode_len = 64;
};

}  // namespace promptmt::pipeline
