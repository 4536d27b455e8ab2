// SPDX-FileCopyrightText: Copyright (c) 2026 The promptmt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "promptmt/common.hpp"

namespace promptmt::pipeline {

class VocabularyError : public Error {
 public:
  using Error::Error;
};

inline constexpr int kPadId = 0;
inline constexpr int kEosId = 1;
inline constexpr int kMaskId = 2;
inline constexpr int kUnkId = 3;

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kEosToken = "<eos>";
inline constexpr std::string_view kMaskToken = "<mask>";
inline constexpr std::string_view kUnkToken = "<unk>";

/// Token <-> id bijection. Specials occupy ids 0..3 in the order pad, eos,
/// mask, unk.
class Vocabulary {
 public:
  Vocabulary();

  /// Adds `token` unless present; returns its id.
  int add(std::string_view token);

  std::optional<int> find(std::string_view token) const;
  int id_or_unk(std::string_view token) const;
  bool contains(std::string_view token) const { return find(token).has_value(); }
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  std::span<const std::string> tokens() const { return tokens_; }

  /// One token per line, id = line number (0-based).
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  /// Order-sensitive FNV-1a hash of the token list.
  std::uint64_t fingerprint() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

/// Word-level split: whitespace, then each of . , : ? ! becomes its own token.
std::vector<std::string> split_tokens(std::string_view text);

/// Inverse of split_tokens up to whitespace normalization: punctuation tokens
/// attach to the preceding word.
std::string detokenize_words(std::span<const std::string> words);

}  // namespace promptmt::pipeline
