// SPDX-FileCopyrightText: Copyright (c) 2026 The promptmt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <string_view>

#include "promptmt/common.hpp"
#include "promptmt/example.hpp"
#include "promptmt/synthlang.hpp"
#include "promptmt/vocabulary.hpp"

/// Conditioning inputs: language tags, natural-language prompts, and the
/// formality prompt with its colon-split removal.
namespace promptmt::prompting {

class PromptError : public Error {
 public:
  using Error::Error;
};

using LanguageMap = std::map<std::string, synth::Language, std::less<>>;

enum class Variant { tag, prompt };

std::string_view to_string(Variant variant);
Variant variant_from_string(std::string_view name);

/// Tag mode conditions translate examples only; infill examples always use
/// their prompt.
struct ConditioningMode {
  Variant variant = Variant::prompt;
};

/// Fixed template with a single language-name slot, ending in a colon.
struct PromptTemplate {
  ingest::Task task;
  std::string_view prefix;  ///< text before the slot

  std::string render(std::string_view language_name) const;
};

inline constexpr PromptTemplate kTranslateTemplate{ingest::Task::translate, "Translate to "};
inline constexpr PromptTemplate kInfillTemplate{ingest::Task::infill, "Infill in "};

/// Words every prompt may contain, apart from language names.
inline constexpr std::string_view kPromptWords[] = {"Translate", "to", "Infill", "in", ":"};

std::string tag_token(std::string_view code);

/// Name used in the prompt for `code`: a dialect's own name when requested,
/// otherwise its parent's name. Non-dialects always use their own name.
std::string prompt_name(const LanguageMap& languages, std::string_view code, bool use_dialect_name);

/// "Translate to {Name}: {source}", "Infill in {Name}: {masked}" or
/// "<2{code}> {source}". When `vocab` is given, tag mode checks the tag exists.
std::string render_conditioning(const ingest::Example& example, ConditioningMode mode,
                                const LanguageMap& languages, bool use_dialect_name = false,
                                const pipeline::Vocabulary* vocab = nullptr);

/// Drops everything up to and including the first colon. Text without a colon
/// is returned unchanged.
std::string strip_leading_prompt(std::string_view translation);

std::string inject_formality_prompt(std::string_view text, std::string_view prompt_text);

}  // namespace promptmt::prompting
