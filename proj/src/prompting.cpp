// SPDX-FileCopyrightText: Copyright (c) 2026 The promptmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptmt/prompting.hpp"

namespace promptmt::prompting {

std::string_view to_string(Variant variant) { return variant == Variant::tag ? "tag" : "prompt"; }

Variant variant_from_string(std::string_view name) {
  if (name == "tag") return Variant::tag;
  if (name == "prompt") return Variant::prompt;
  throw PromptError("unknown conditioning mode '" + std::string(name) + "'");
}

std::string PromptTemplate::render(std::string_view language_name) const {
  std::string out(prefix);
  out += language_name;
  out += ':';
  return out;
}

std::string tag_token(std::string_view code) { return "<2" + std::string(code) + ">"; }

std::string prompt_name(const LanguageMap& languages, std::string_view code, bool use_dialect_name) {
  auto it = languages.find(code);
  if (it == languages.end()) throw PromptError("unknown language '" + std::string(code) + "'");
  const auto& lang = it->second;
  if (!lang.parent() || use_dialect_name) return lang.name();
  auto parent = languages.find(*lang.parent());
  if (parent == languages.end()) return lang.name();
  return parent->second.name();
}

std::string render_conditioning(const ingest::Example& example, ConditioningMode mode,
                                const LanguageMap& languages, bool use_dialect_name,
                                const pipeline::Vocabulary* vocab) {
  if (example.task == ingest::Task::translate && mode.variant == Variant::tag) {
    const std::string tag = tag_token(example.target_lang);
    if (vocab && !vocab->contains(tag)) {
      throw PromptError("tag token " + tag + " is missing from the vocabulary");
    }
    return tag + " " + example.source_text;
  }
  const auto& tmpl =
      example.task == ingest::Task::translate ? kTranslateTemplate : kInfillTemplate;
  return tmpl.render(prompt_name(languages, example.target_lang, use_dialect_name)) + " " +
         example.source_text;
}

std::string strip_leading_prompt(std::string_view translation) {
  const auto pos = translation.find(':');
  if (pos == std::string_view::npos) return std::string(translation);
  return std::string(translation.substr(pos + 1));
}

std::string inject_formality_prompt(std::string_view text, std::string_view prompt_text) {
  if (prompt_text.empty()) throw PromptError("formality prompt must be nonempty");
  std::string out(prompt_text);
  out += ' ';
  out += text;
  return out;
}

}  // namespace promptmt::prompting
