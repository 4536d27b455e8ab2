// SPDX-FileCopyrightText: Copyright (c) 2026 The promptmt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "promptmt/common.hpp"

/// Synthetic language families with exact ground-truth translations.
///
/// Every language is a bijective lexicon over a shared base vocabulary plus an
/// optional word-order permutation. Relatedness between two languages is the
/// fraction of base tokens they spell identically.
namespace promptmt::synth {

class SynthError : public Error {
 public:
  using Error::Error;
};

enum class Register { formal, informal };

/// Word-order permutations. All of them are involutions, so the same rule
/// undoes itself.
enum class OrderRule { identity, reverse, swap_pairs };

std::string_view to_string(OrderRule rule);
OrderRule order_rule_from_string(std::string_view name);

/// Base token id of the second-person pronoun slot.
inline constexpr int kSecondPersonToken = 0;

struct FormalityForms {
  std::string formal;
  std::string informal;
};

class Language {
 public:
  Language() = default;
  Language(std::string code, std::string name, std::optional<std::string> parent,
           std::vector<std::string> lexicon, OrderRule order_rule,
           std::optional<FormalityForms> formality_forms, std::string final_punct);

  const std::string& code() const { return code_; }
  const std::string& name() const { return name_; }
  const std::optional<std::string>& parent() const { return parent_; }
  const std::vector<std::string>& lexicon() const { return lexicon_; }
  OrderRule order_rule() const { return order_rule_; }
  const std::optional<FormalityForms>& formality_forms() const { return formality_forms_; }
  const std::string& final_punct() const { return final_punct_; }
  bool is_dialect() const { return parent_.has_value(); }

  /// Base token id spelled `surface`, if any. The formal form maps to the
  /// second-person token as well.
  std::optional<int> base_of(std::string_view surface) const;

  /// Every surface word this language can produce (lexicon plus formal form).
  std::vector<std::string> surface_words() const;

 private:
  std::string code_;
  std::string name_;
  std::optional<std::string> parent_;
  std::vector<std::string> lexicon_;
  OrderRule order_rule_ = OrderRule::identity;
  std::optional<FormalityForms> formality_forms_;
  std::string final_punct_;
  std::unordered_map<std::string, int> inverse_;
};

struct GrammarSpec {
  int min_len = 4;
  int max_len = 10;
  double second_person_prob = 0.3;
  double formal_prob = 0.5;
  std::string final_punct = ".";
  /// Each content token gets this many preferred successors (0: tokens are
  /// i.i.d. uniform). The table is a function of the family seed.
  int successors = 0;
  /// Probability that a token after the first is drawn from its
  /// predecessor's successor list instead of uniformly.
  double successor_prob = 0.0;
};

struct FamilySpec {
  int n_languages = 0;
  int base_vocab_size = 200;
  Eigen::MatrixXd relatedness;
  GrammarSpec grammar;
  std::uint64_t seed = 0;
  /// Optional per-language overrides; empty means generated defaults.
  std::vector<std::string> codes;
  std::vector<std::string> names;
  std::vector<OrderRule> order_rules;
  /// Whether each language distinguishes formal and informal address.
  std::vector<bool> tv_distinction;
};

struct BaseSentence {
  std::vector<int> tokens;
  std::optional<Register> register_;

  bool operator==(const BaseSentence&) const = default;
};

/// Invented, colon-free, single-word language names used when a FamilySpec does
/// not name its languages.
std::span<const std::string_view> default_language_names();

/// Overlap tolerance the construction guarantees for every pair.
inline constexpr double kRelatednessTolerance = 0.02;

std::vector<Language> make_family(const FamilySpec& spec);

std::vector<BaseSentence> sample_base(const FamilySpec& spec, std::size_t count,
                                      std::uint64_t seed);

std::string render(const BaseSentence& sentence, const Language& language);

/// Inverse of render. Languages without a formal/informal contrast cannot
/// recover the register; the second-person slot comes back as informal.
BaseSentence oracle_back(std::string_view text, const Language& language);

std::string oracle_translate(std::string_view text, const Language& src, const Language& tgt);

/// Derives a lexical dialect of `base`. Replacement words avoid every surface
/// form of the languages in `avoid`.
Language make_dialect(const Language& base, double divergence, std::uint64_t seed,
                      std::span<const Language> avoid = {},
                      std::optional<std::string> dialect_word = std::nullopt);

/// Fraction of base tokens with identical surface forms.
double lexicon_overlap(const Language& a, const Language& b);

}  // namespace promptmt::synth
