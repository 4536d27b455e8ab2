// SPDX-FileCopyrightText: Copyright (c) 2026 The promptmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptmt/vocabulary.hpp"

#include <cctype>
#include <fstream>

namespace promptmt::pipeline {

namespace {

bool is_split_punct(char c) { return c == '.' || c == ',' || c == ':' || c == '?' || c == '!'; }

}  // namespace

Vocabulary::Vocabulary() {
  add(kPadToken);
  add(kEosToken);
  add(kMaskToken);
  add(kUnkToken);
}

int Vocabulary::add(std::string_view token) {
  if (token.empty()) throw VocabularyError("cannot add an empty token");
  for (char c : token) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      throw VocabularyError("token '" + std::string(token) + "' contains whitespace");
    }
  }
  auto [it, inserted] = ids_.try_emplace(std::string(token), size());
  if (inserted) tokens_.emplace_back(token);
  return it->second;
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::id_or_unk(std::string_view token) const {
  auto id = find(token);
  return id ? *id : kUnkId;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw VocabularyError("token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw VocabularyError("cannot write vocabulary '" + path + "'");
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw VocabularyError("cannot read vocabulary '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  if (lines.size() < 4 || lines[kPadId] != kPadToken || lines[kEosId] != kEosToken ||
      lines[kMaskId] != kMaskToken || lines[kUnkId] != kUnkToken) {
    throw VocabularyError("vocabulary '" + path + "' does not start with the reserved specials");
  }
  Vocabulary v;
  for (std::size_t i = 4; i < lines.size(); ++i) {
    if (v.add(lines[i]) != static_cast<int>(i)) {
      throw VocabularyError("duplicate token '" + lines[i] + "' in '" + path + "'");
    }
  }
  return v;
}

std::uint64_t Vocabulary::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& t : tokens_) {
    for (char c : t) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    h ^= 0xff;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  for (const auto& word : split_whitespace(text)) {
    std::string cur;
    for (char c : word) {
      if (is_split_punct(c)) {
        if (!cur.empty()) out.push_back(std::move(cur));
        cur.clear();
        out.emplace_back(1, c);
      } else {
        cur += c;
      }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
  }
  return out;
}

std::string detokenize_words(std::span<const std::string> words) {
  std::string out;
  for (const auto& w : words) {
    const bool attach = w.size() == 1 && is_split_punct(w[0]);
    if (!out.empty() && !attach) out += ' ';
    out += w;
  }
  return out;
}

}  // namespace promptmt::pipeline
