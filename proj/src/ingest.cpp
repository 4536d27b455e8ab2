// SPDX-FileCopyrightText: Copyright (c) 2026 The promptmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptmt/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "promptmt/vocabulary.hpp"

namespace promptmt::ingest {

std::string_view to_string(Task task) { return task == Task::translate ? "translate" : "infill"; }

CorpusReader::CorpusReader(const std::string& path, CorpusKind kind, std::string source_lang,
                           std::string target_lang, std::string provenance)
    : in_(path),
      path_(path),
      kind_(kind),
      source_lang_(std::move(source_lang)),
      target_lang_(std::move(target_lang)),
      provenance_(std::move(provenance)) {
  if (!in_) throw IngestError("cannot read corpus '" + path + "'");
  if (provenance_.empty()) provenance_ = path;
}

std::optional<Example> CorpusReader::next() {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_no_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto skip = [&](std::string why) {
      ++skipped_;
      diagnostics_.push_back(path_ + ":" + std::to_string(line_no_) + ": " + why);
    };
    if (kind_ == CorpusKind::parallel) {
      const auto tabs = std::count(line.begin(), line.end(), '\t');
      if (tabs != 1) {
        skip("expected exactly one tab, found " + std::to_string(tabs));
        continue;
      }
      const auto pos = line.find('\t');
      Example ex;
      ex.source_text = line.substr(0, pos);
      ex.target_text = line.substr(pos + 1);
      if (split_whitespace(ex.source_text).empty() || split_whitespace(*ex.target_text).empty()) {
        skip("empty side");
        continue;
      }
      ex.task = Task::translate;
      ex.source_lang = source_lang_;
      ex.target_lang = target_lang_;
      ex.provenance = provenance_;
      return ex;
    }
    if (split_whitespace(line).empty()) {
      skip("empty line");
      continue;
    }
    Example ex;
    ex.source_text = line;
    ex.task = Task::infill;
    ex.source_lang = source_lang_;
    ex.target_lang = source_lang_;
    ex.provenance = provenance_;
    return ex;
  }
  return std::nullopt;
}

CorpusReadResult read_corpus(const std::string& path, CorpusKind kind, const std::string& source_lang,
                             const std::string& target_lang, const std::string& provenance) {
  CorpusReader reader(path, kind, source_lang, target_lang, provenance);
  CorpusReadResult out;
  while (auto ex = reader.next()) out.examples.push_back(std::move(*ex));
  out.skipped = reader.skipped();
  return out;
}

void write_corpus(const std::string& path, const std::vector<Example>& examples, CorpusKind kind) {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write corpus '" + path + "'");
  for (const auto& ex : examples) {
    out << ex.source_text;
    if (kind == CorpusKind::parallel) out << '\t' << ex.target_text.value_or("");
    out << '\n';
  }
}

std::vector<std::string> char_ngrams(std::string_view text, int order) {
  std::string padded = " " + join(split_whitespace(text), " ") + " ";
  std::vector<std::string> out;
  if (static_cast<int>(padded.size()) < order) return out;
  for (std::size_t i = 0; i + order <= padded.size(); ++i) out.push_back(padded.substr(i, order));
  return out;
}

LangIdModel::LangIdModel(int order, double smoothing, std::vector<std::string> languages,
                         std::vector<std::unordered_map<std::string, double>> counts)
    : order_(order), smoothing_(smoothing), languages_(std::move(languages)) {
  std::set<std::string> feature_space;
  for (const auto& c : counts)
    for (const auto& [g, _] : c) feature_space.insert(g);
  const double types = static_cast<double>(feature_space.size()) + 1.0;  // +1 for unseen
  for (const auto& c : counts) {
    double total = 0.0;
    for (const auto& [_, n] : c) total += n;
    const double denom = std::log(total + smoothing_ * types);
    std::unordered_map<std::string, double> lp;
    for (const auto& [g, n] : c) lp[g] = std::log(n + smoothing_) - denom;
    log_prob_.push_back(std::move(lp));
    log_unseen_.push_back(std::log(smoothing_) - denom);
  }
}

Eigen::VectorXd LangIdModel::posterior(std::string_view text) const {
  const auto k = static_cast<Eigen::Index>(languages_.size());
  Eigen::VectorXd loglik = Eigen::VectorXd::Zero(k);
  for (const auto& g : char_ngrams(text, order_)) {
    for (Eigen::Index l = 0; l < k; ++l) {
      auto it = log_prob_[l].find(g);
      loglik(l) += it == log_prob_[l].end() ? log_unseen_[l] : it->second;
    }
  }
  const double m = loglik.maxCoeff();
  Eigen::VectorXd p = (loglik.array() - m).exp();
  return p / p.sum();
}

double LangIdModel::posterior_of(std::string_view text, std::string_view language) const {
  auto it = std::find(languages_.begin(), languages_.end(), language);
  if (it == languages_.end()) return 0.0;
  return posterior(text)(it - languages_.begin());
}

const std::string& LangIdModel::classify(std::string_view text) const {
  Eigen::Index best;
  posterior(text).maxCoeff(&best);
  return languages_[best];
}

LangIdModel train_langid(const std::map<std::string, std::vector<std::string>>& corpora, int order,
                         double smoothing) {
  if (corpora.size() < 2) throw IngestError("language identification needs at least two languages");
  std::vector<std::string> langs;
  std::vector<std::unordered_map<std::string, double>> counts;
  for (const auto& [lang, texts] : corpora) {
    std::unordered_map<std::string, double> c;
    bool any = false;
    for (const auto& t : texts) {
      if (split_whitespace(t).empty()) continue;
      any = true;
      for (auto& g : char_ngrams(t, order)) c[g] += 1.0;
    }
    if (!any) throw IngestError("language '" + lang + "' has no nonempty training text");
    langs.push_back(lang);
    counts.push_back(std::move(c));
  }
  return LangIdModel(order, smoothing, std::move(langs), std::move(counts));
}

std::vector<Example> filter_by_langid(const std::vector<Example>& examples, const LangIdModel& model,
                                      std::string_view expected, double threshold, Side side,
                                      FilterStats* stats) {
  std::vector<Example> out;
  FilterStats local;
  for (const auto& ex : examples) {
    const std::string_view text =
        side == Side::source ? std::string_view(ex.source_text)
                             : std::string_view(ex.target_text ? *ex.target_text : std::string());
    if (model.posterior_of(text, expected) >= threshold) {
      out.push_back(ex);
      ++local.kept;
    } else {
      ++local.discarded;
    }
  }
  if (stats) *stats = local;
  return out;
}

std::vector<Example> length_filter(const std::vector<Example>& examples, int max_tokens, Phase phase,
                                   int prompt_tokens, FilterStats* stats) {
  if (max_tokens < 1) throw IngestError("max_tokens must be at least 1");
  std::vector<Example> out;
  FilterStats local;
  for (const auto& ex : examples) {
    auto src = pipeline::split_tokens(ex.source_text);
    const int src_len = static_cast<int>(src.size()) + prompt_tokens;
    if (phase == Phase::training) {
      const int tgt_len =
          ex.target_text ? static_cast<int>(pipeline::split_tokens(*ex.target_text).size()) : 0;
      if (src_len > max_tokens || tgt_len > max_tokens) {
        ++local.discarded;
        continue;
      }
      out.push_back(ex);
    } else {
      Example e = ex;
      if (src_len > max_tokens) {
        src.resize(static_cast<std::size_t>(std::max(0, max_tokens - prompt_tokens)));
        e.source_text = pipeline::detokenize_words(src);
      }
      out.push_back(std::move(e));
    }
    ++local.kept;
  }
  if (stats) *stats = local;
  return out;
}

}  // namespace promptmt::ingest
