// SPDX-FileCopyrightText: Copyright (c) 2026 The promptmt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "promptmt/common.hpp"
#include "promptmt/example.hpp"

/// Corpus reading, language identification filtering and length rules.
namespace promptmt::ingest {

class IngestError : public Error {
 public:
  using Error::Error;
};

enum class CorpusKind { parallel, monolingual };

/// Streams a UTF-8, newline-delimited corpus. Parallel lines hold exactly one
/// tab between source and target; anything else is skipped and counted.
class CorpusReader {
 public:
  CorpusReader(const std::string& path, CorpusKind kind, std::string source_lang,
               std::string target_lang, std::string provenance);

  std::optional<Example> next();

  std::size_t skipped() const { return skipped_; }
  const std::vector<std::string>& diagnostics() const { return diagnostics_; }

 private:
  std::ifstream in_;
  std::string path_;
  CorpusKind kind_;
  std::string source_lang_;
  std::string target_lang_;
  std::string provenance_;
  std::size_t line_no_ = 0;
  std::size_t skipped_ = 0;
  std::vector<std::string> diagnostics_;
};

struct CorpusReadResult {
  std::vector<Example> examples;
  std::size_t skipped = 0;
};

/// Reads a whole corpus. Monolingual examples are infill items whose source
/// and target language are both `source_lang`.
CorpusReadResult read_corpus(const std::string& path, CorpusKind kind, const std::string& source_lang,
                             const std::string& target_lang = {}, const std::string& provenance = {});

void write_corpus(const std::string& path, const std::vector<Example>& examples, CorpusKind kind);

/// Character n-gram Naive Bayes language identifier with additive smoothing.
class LangIdModel {
 public:
  LangIdModel(int order, double smoothing, std::vector<std::string> languages,
              std::vector<std::unordered_map<std::string, double>> counts);

  const std::vector<std::string>& languages() const { return languages_; }
  int order() const { return order_; }

  /// Posterior over languages() under a uniform prior.
  Eigen::VectorXd posterior(std::string_view text) const;
  double posterior_of(std::string_view text, std::string_view language) const;
  const std::string& classify(std::string_view text) const;

 private:
  int order_;
  double smoothing_;
  std::vector<std::string> languages_;
  std::vector<std::unordered_map<std::string, double>> log_prob_;
  std::vector<double> log_unseen_;
};

inline constexpr int kLangIdOrder = 3;
inline constexpr double kLangIdSmoothing = 1.0;
inline constexpr double kLangIdThreshold = 0.95;
inline constexpr int kMaxSequenceTokens = 200;

std::vector<std::string> char_ngrams(std::string_view text, int order);

LangIdModel train_langid(const std::map<std::string, std::vector<std::string>>& corpora,
                         int order = kLangIdOrder, double smoothing = kLangIdSmoothing);

enum class Side { source, target };

struct FilterStats {
  std::size_t kept = 0;
  std::size_t discarded = 0;
};

/// Keeps examples whose posterior for `expected` on the chosen side reaches
/// `threshold`.
std::vector<Example> filter_by_langid(const std::vector<Example>& examples, const LangIdModel& model,
                                      std::string_view expected, double threshold = kLangIdThreshold,
                                      Side side = Side::source, FilterStats* stats = nullptr);

enum class Phase { training, inference };

/// Training drops examples with any side over `max_tokens`; inference
/// truncates the source. `prompt_tokens` counts conditioning tokens that will
/// be prepended to the source.
std::vector<Example> length_filter(const std::vector<Example>& examples, int max_tokens, Phase phase,
                                   int prompt_tokens = 0, FilterStats* stats = nullptr);

}  // namespace promptmt::ingest
