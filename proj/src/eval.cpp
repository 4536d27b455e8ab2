// SPDX-FileCopyrightText: Copyright (c) 2026 The promptmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptmt/eval.hpp"

#include <cctype>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <regex>

namespace promptmt::eval {

namespace {

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

// Symbols isolated by 13a: {|}~ [\]^_` space!"#$%& ()*+ :;<=>?@ /
bool is_13a_symbol(char c) {
  const auto u = static_cast<unsigned char>(c);
  return (u >= '{' && u <= '~') || (u >= '[' && u <= '`') || (u >= ' ' && u <= '&') ||
         (u >= '(' && u <= '+') || (u >= ':' && u <= '@') || u == '/';
}

std::vector<std::string> split_codepoints(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (c >= 0xF0) len = 4;
    else if (c >= 0xE0) len = 3;
    else if (c >= 0xC0) len = 2;
    len = std::min(len, text.size() - i);
    if (!std::isspace(c)) out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

using NgramCounts = std::map<std::vector<std::string>, long long>;

NgramCounts count_ngrams(std::span<const std::string> toks, int n) {
  NgramCounts counts;
  if (static_cast<int>(toks.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    counts[std::vector<std::string>(toks.begin() + i, toks.begin() + i + n)]++;
  }
  return counts;
}

}  // namespace

std::string_view to_string(TokenizerMode mode) {
  return mode == TokenizerMode::t13a ? "13a" : "char";
}

std::string_view to_string(Smoothing smoothing) {
  return smoothing == Smoothing::exp ? "exp" : "none";
}

TokenizerMode tokenizer_mode_from_string(std::string_view name) {
  if (name == "13a") return TokenizerMode::t13a;
  if (name == "char" || name == "zh") return TokenizerMode::character;
  throw EvalError("unknown tokenizer '" + std::string(name) + "'");
}

std::vector<std::string> tokenize_13a(std::string_view text, TokenizerMode mode) {
  if (mode == TokenizerMode::character) return split_codepoints(text);

  std::string line(text);
  replace_all(line, "<skipped>", "");
  replace_all(line, "-\n", "");
  replace_all(line, "\n", " ");
  if (line.find('&') != std::string::npos) {
    replace_all(line, "&quot;", "\"");
    replace_all(line, "&amp;", "&");
    replace_all(line, "&lt;", "<");
    replace_all(line, "&gt;", ">");
  }
  std::string spaced;
  spaced.reserve(line.size() * 2 + 2);
  spaced += ' ';
  for (char c : line) {
    if (is_13a_symbol(c)) {
      spaced += ' ';
      spaced += c;
      spaced += ' ';
    } else {
      spaced += c;
    }
  }
  spaced += ' ';
  // period and comma split unless adjacent to a digit; dash after a digit
  static const std::regex kPunctAfterNonDigit(R"(([^0-9])([\.,]))");
  static const std::regex kPunctBeforeNonDigit(R"(([\.,])([^0-9]))");
  static const std::regex kDashAfterDigit(R"(([0-9])(-))");
  spaced = std::regex_replace(spaced, kPunctAfterNonDigit, "$1 $2 ");
  spaced = std::regex_replace(spaced, kPunctBeforeNonDigit, " $1 $2");
  spaced = std::regex_replace(spaced, kDashAfterDigit, "$1 $2 ");
  return split_whitespace(spaced);
}

NgramStats& NgramStats::operator+=(const NgramStats& other) {
  for (int n = 0; n < kMaxOrder; ++n) {
    correct[n] += other.correct[n];
    total[n] += other.total[n];
  }
  hyp_len += other.hyp_len;
  ref_len += other.ref_len;
  return *this;
}

NgramStats sentence_stats(std::span<const std::string> hyp, std::span<const std::string> ref) {
  NgramStats s;
  s.hyp_len = static_cast<long long>(hyp.size());
  s.ref_len = static_cast<long long>(ref.size());
  for (int n = 1; n <= kMaxOrder; ++n) {
    const auto h = count_ngrams(hyp, n);
    const auto r = count_ngrams(ref, n);
    long long total = 0, correct = 0;
    for (const auto& [gram, count] : h) {
      total += count;
      auto it = r.find(gram);
      if (it != r.end()) correct += std::min(count, it->second);
    }
    s.correct[n - 1] = correct;
    s.total[n - 1] = total;
  }
  return s;
}

BleuScore bleu_from_stats(const NgramStats& stats, Smoothing smoothing) {
  BleuScore b;
  b.stats = stats;
  b.hyp_len = stats.hyp_len;
  b.ref_len = stats.ref_len;
  if (stats.hyp_len < stats.ref_len) {
    b.brevity_penalty =
        stats.hyp_len > 0 ? std::exp(1.0 - static_cast<double>(stats.ref_len) / stats.hyp_len) : 0.0;
  } else {
    b.brevity_penalty = 1.0;
  }
  double smooth = 1.0;
  for (int n = 0; n < kMaxOrder; ++n) {
    if (stats.total[n] == 0) break;
    if (stats.correct[n] == 0) {
      if (smoothing == Smoothing::exp) {
        smooth *= 2.0;
        b.precisions[n] = 1.0 / (smooth * static_cast<double>(stats.total[n]));
      }
    } else {
      b.precisions[n] = static_cast<double>(stats.correct[n]) / static_cast<double>(stats.total[n]);
    }
  }
  double log_sum = 0.0;
  for (double p : b.precisions) {
    if (p <= 0.0) {
      b.score = 0.0;
      return b;
    }
    log_sum += std::log(p);
  }
  b.score = 100.0 * b.brevity_penalty * std::exp(log_sum / kMaxOrder);
  return b;
}

BleuScore corpus_bleu(std::span<const std::string> hypotheses, std::span<const std::string> references,
                      TokenizerMode mode, Smoothing smoothing) {
  if (hypotheses.empty()) throw EvalError("corpus_bleu: empty corpus");
  if (hypotheses.size() != references.size()) {
    throw EvalError("corpus_bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                    std::to_string(references.size()) + " references");
  }
  NgramStats total;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto h = tokenize_13a(hypotheses[i], mode);
    const auto r = tokenize_13a(references[i], mode);
    total += sentence_stats(h, r);
  }
  return bleu_from_stats(total, smoothing);
}

std::string bleu_signature(TokenizerMode mode, Smoothing smoothing) {
  return "BLEU+case.mixed+numrefs.1+smooth." + std::string(to_string(smoothing)) + "+tok." +
         std::string(to_string(mode));
}

std::vector<std::size_t> bootstrap_indices(std::size_t corpus_size, std::uint64_t seed, int r) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
  std::vector<std::size_t> idx(corpus_size);
  for (auto& i : idx) i = static_cast<std::size_t>(rng.below(corpus_size));
  return idx;
}

SignificanceReport paired_bootstrap(std::span<const std::string> hyp_a,
                                    std::span<const std::string> hyp_b,
                                    std::span<const std::string> references, int n_resamples,
                                    double level, std::uint64_t seed, TokenizerMode mode,
                                    Smoothing smoothing) {
  if (references.empty()) throw EvalError("paired_bootstrap: empty corpus");
  if (hyp_a.size() != references.size() || hyp_b.size() != references.size()) {
    throw EvalError("paired_bootstrap: systems and references are not aligned");
  }
  if (n_resamples < 1) throw EvalError("paired_bootstrap: need at least one resample");

  const std::size_t n = references.size();
  std::vector<NgramStats> stats_a(n), stats_b(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = tokenize_13a(references[i], mode);
    stats_a[i] = sentence_stats(tokenize_13a(hyp_a[i], mode), r);
    stats_b[i] = sentence_stats(tokenize_13a(hyp_b[i], mode), r);
  }

  SignificanceReport rep;
  rep.level = level;
  rep.n_resamples = n_resamples;
  NgramStats all_a, all_b;
  for (std::size_t i = 0; i < n; ++i) {
    all_a += stats_a[i];
    all_b += stats_b[i];
  }
  rep.bleu_a = bleu_from_stats(all_a, smoothing).score;
  rep.bleu_b = bleu_from_stats(all_b, smoothing).score;

  int failures = 0;
  rep.deltas.reserve(n_resamples);
  for (int r = 0; r < n_resamples; ++r) {
    NgramStats sa, sb;
    for (std::size_t i : bootstrap_indices(n, seed, r)) {
      sa += stats_a[i];
      sb += stats_b[i];
    }
    const double a = bleu_from_stats(sa, smoothing).score;
    const double b = bleu_from_stats(sb, smoothing).score;
    rep.deltas.push_back(a - b);
    if (!(a > b)) ++failures;
  }
  rep.p_value = static_cast<double>(failures) / n_resamples;
  rep.significant = rep.p_value <= level;
  return rep;
}

int formality_score(std::span<const Formality> annotations) {
  int s = 0;
  for (Formality f : annotations) s += static_cast<int>(f);
  return s;
}

RegisterDetector::RegisterDetector(std::vector<std::string> formal, std::vector<std::string> informal)
    : formal_(std::move(formal)), informal_(std::move(informal)) {
  for (const auto& f : formal_) {
    if (std::find(informal_.begin(), informal_.end(), f) != informal_.end()) {
      throw EvalError("register lexicons overlap on '" + f + "'");
    }
  }
}

Formality RegisterDetector::detect(std::string_view text) const {
  bool has_formal = false, has_informal = false;
  for (auto& tok : tokenize_13a(text)) {
    if (std::find(formal_.begin(), formal_.end(), tok) != formal_.end()) has_formal = true;
    if (std::find(informal_.begin(), informal_.end(), tok) != informal_.end()) has_informal = true;
  }
  if (has_formal && !has_informal) return Formality::formal;
  if (has_informal && !has_formal) return Formality::informal;
  return Formality::none;
}

Formality detect_register(std::string_view text, std::span<const std::string> formal,
                          std::span<const std::string> informal) {
  return RegisterDetector({formal.begin(), formal.end()}, {informal.begin(), informal.end()})
      .detect(text);
}

std::vector<Formality> read_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw EvalError("cannot read annotation file '" + path + "'");
  std::vector<Formality> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto words = split_whitespace(line);
    if (words.empty()) continue;
    const auto& w = words.front();
    if (w == "formal" || w == "1" || w == "+1") out.push_back(Formality::formal);
    else if (w == "informal" || w == "-1") out.push_back(Formality::informal);
    else if (w == "none" || w == "0") out.push_back(Formality::none);
    else throw EvalError(path + ":" + std::to_string(lineno) + ": unknown label '" + w + "'");
  }
  return out;
}

}  // namespace promptmt::eval
