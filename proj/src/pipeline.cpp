// SPDX-FileCopyrightText: Copyright (c) 2026 The promptmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptmt/pipeline.hpp"

#include <algorithm>
#include <cmath>

namespace promptmt::pipeline {

std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab) {
  std::vector<int> ids;
  for (const auto& w : split_tokens(text)) ids.push_back(vocab.id_or_unk(w));
  return ids;
}

std::string detokenize(std::span<const int> ids, const Vocabulary& vocab) {
  std::vector<std::string> words;
  for (int id : ids) {
    if (id == kEosId) break;
    if (id == kPadId) continue;
    words.push_back(vocab.token(id));
  }
  return detokenize_words(words);
}

Vocabulary build_vocabulary(const prompting::LanguageMap& languages,
                            std::span<const std::string> extra_words) {
  Vocabulary v;
  for (auto w : prompting::kPromptWords) v.add(w);
  for (const char* p : {".", ",", "?", "!"}) v.add(p);
  for (const auto& [code, lang] : languages) {
    for (const auto& w : split_whitespace(lang.name())) v.add(w);
    v.add(prompting::tag_token(code));
  }
  for (const auto& [code, lang] : languages) {
    for (const auto& w : lang.surface_words()) v.add(w);
  }
  for (const auto& w : extra_words)
    for (const auto& piece : split_tokens(w)) v.add(piece);
  return v;
}

InfillSpan choose_infill_span(std::size_t length, double mask_ratio, Rng& rng) {
  if (length < 2) throw PipelineError("infill needs at least two tokens");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw PipelineError("mask_ratio must be in (0,1)");
  InfillSpan span;
  span.length = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(mask_ratio * static_cast<double>(length))));
  span.length = std::min(span.length, length);
  span.start = static_cast<std::size_t>(rng.below(length - span.length + 1));
  return span;
}

ingest::Example make_infill_example(std::string_view text, double mask_ratio, std::uint64_t seed,
                                    const std::string& language, const std::string& provenance) {
  const auto words = split_tokens(text);
  Rng rng(seed);
  const auto span = choose_infill_span(words.size(), mask_ratio, rng);
  std::vector<std::string> masked(words.begin(), words.begin() + span.start);
  masked.emplace_back(kMaskToken);
  masked.insert(masked.end(), words.begin() + span.start + span.length, words.end());
  std::vector<std::string> fragment(words.begin() + span.start,
                                    words.begin() + span.start + span.length);
  ingest::Example ex;
  ex.source_text = detokenize_words(masked);
  ex.target_text = detokenize_words(fragment);
  ex.task = ingest::Task::infill;
  ex.source_lang = language;
  ex.target_lang = language;
  ex.provenance = provenance;
  return ex;
}

Sampler::Sampler(MixtureSpec mix, std::uint64_t seed)
    : mix_(std::move(mix)), seed_(seed), rng_(derive_seed(seed, 0x1f83d9ab)) {
  if (mix_.parallel.empty() && mix_.monolingual.empty()) {
    throw PipelineError("mixture declares no datasets");
  }
  if (mix_.parallel_probability < 0.0 || mix_.monolingual_probability < 0.0 ||
      std::abs(mix_.parallel_probability + mix_.monolingual_probability - 1.0) > 1e-9) {
    throw PipelineError("source probabilities must be nonnegative and sum to 1");
  }
  if (mix_.parallel_probability > 0.0 && mix_.parallel.empty()) {
    throw PipelineError("parallel source has positive probability but no datasets");
  }
  if (mix_.monolingual_probability > 0.0 && mix_.monolingual.empty()) {
    throw PipelineError("monolingual source has positive probability but no datasets");
  }
  for (const auto* sets : {&mix_.parallel, &mix_.monolingual}) {
    for (const auto& d : *sets) {
      if (d.examples.empty()) throw PipelineError("dataset '" + d.id + "' is empty");
    }
  }
  parallel_cursors_.resize(mix_.parallel.size());
  mono_cursors_.resize(mix_.monolingual.size());
}

std::size_t Sampler::pick_dataset(const std::vector<Dataset>& sets) {
  if (!mix_.size_weighted) return static_cast<std::size_t>(rng_.below(sets.size()));
  std::size_t total = 0;
  for (const auto& d : sets) total += d.examples.size();
  auto r = static_cast<std::size_t>(rng_.below(total));
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (r < sets[i].examples.size()) return i;
    r -= sets[i].examples.size();
  }
  return sets.size() - 1;
}

const ingest::Example& Sampler::advance(std::vector<Cursor>& cursors,
                                        const std::vector<Dataset>& sets, std::size_t idx,
                                        bool mono) {
  auto& c = cursors[idx];
  const auto n = sets[idx].examples.size();
  if (c.order.empty() || c.pos >= n) {
    if (!c.order.empty()) ++c.epoch;
    c.order.resize(n);
    for (std::size_t i = 0; i < n; ++i) c.order[i] = i;
    Rng shuffle(derive_seed(seed_, (mono ? 1ULL << 40 : 0) + (idx << 20) + c.epoch));
    shuffle.shuffle(c.order);
    c.pos = 0;
  }
  return sets[idx].examples[c.order[c.pos++]];
}

Sampler::Draw Sampler::draw() {
  Draw d;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    d.monolingual = rng_.uniform() >= mix_.parallel_probability;
    if (d.monolingual && mix_.monolingual.empty()) d.monolingual = false;
    if (!d.monolingual && mix_.parallel.empty()) d.monolingual = true;
    const auto& sets = d.monolingual ? mix_.monolingual : mix_.parallel;
    d.dataset = pick_dataset(sets);
    const auto& ex = advance(d.monolingual ? mono_cursors_ : parallel_cursors_, sets, d.dataset,
                             d.monolingual);
    if (!d.monolingual) {
      d.example = ex;
      return d;
    }
    const auto mask_seed = rng_.next();
    if (split_tokens(ex.source_text).size() < 2) continue;
    d.example = make_infill_example(ex.source_text, mix_.mask_ratio, mask_seed, ex.source_lang,
                                    ex.provenance);
    return d;
  }
  throw PipelineError("monolingual datasets hold no text long enough to mask");
}

Sampler build_sampler(MixtureSpec mix, std::uint64_t seed) { return Sampler(std::move(mix), seed); }

std::optional<EncodedExample> encode_example(const ingest::Example& example,
                                             const EncodeOptions& options,
                                             const prompting::LanguageMap& languages,
                                             const Vocabulary& vocab) {
  EncodedExample enc;
  const auto conditioned = prompting::render_conditioning(example, options.mode, languages,
                                                          options.use_dialect_name, &vocab);
  enc.source = tokenize(conditioned, vocab);
  if (example.target_text) enc.target = tokenize(*example.target_text, vocab);
  const auto limit = static_cast<std::size_t>(options.max_tokens);
  if (options.phase == ingest::Phase::training) {
    if (enc.source.size() > limit || enc.target.size() > limit) return std::nullopt;
  } else if (enc.source.size() > limit) {
    enc.source.resize(limit);
  }
  enc.source.push_back(kEosId);
  if (example.target_text) enc.target.push_back(kEosId);
  return enc;
}

Batch make_batch(std::span<const EncodedExample> rows, std::span<const RowMeta> meta) {
  Batch b;
  const auto n = static_cast<Eigen::Index>(rows.size());
  std::size_t max_src = 0, max_tgt = 0;
  for (const auto& r : rows) {
    max_src = std::max(max_src, r.source.size());
    max_tgt = std::max(max_tgt, r.target.size());
  }
  b.encoder_ids = Eigen::MatrixXi::Constant(n, static_cast<Eigen::Index>(max_src), kPadId);
  b.encoder_mask = Eigen::MatrixXi::Zero(n, static_cast<Eigen::Index>(max_src));
  b.decoder_ids = Eigen::MatrixXi::Constant(n, static_cast<Eigen::Index>(max_tgt), kPadId);
  b.decoder_mask = Eigen::MatrixXi::Zero(n, static_cast<Eigen::Index>(max_tgt));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[i];
    for (std::size_t j = 0; j < r.source.size(); ++j) {
      b.encoder_ids(i, j) = r.source[j];
      b.encoder_mask(i, j) = 1;
    }
    for (std::size_t j = 0; j < r.target.size(); ++j) {
      b.decoder_ids(i, j) = r.target[j];
      b.decoder_mask(i, j) = 1;
    }
  }
  b.meta.assign(meta.begin(), meta.end());
  return b;
}

Batch next_batch(Sampler& sampler, int batch_size, const EncodeOptions& options,
                 const prompting::LanguageMap& languages, const Vocabulary& vocab) {
  if (batch_size < 1) throw PipelineError("batch_size must be positive");
  std::vector<EncodedExample> rows;
  std::vector<RowMeta> meta;
  long long rejected = 0;
  while (static_cast<int>(rows.size()) < batch_size) {
    const auto ex = sampler.next();
    auto enc = encode_example(ex, options, languages, vocab);
    if (!enc) {
      if (++rejected > 1000LL * batch_size) {
        throw PipelineError("every sampled example exceeds the length limit");
      }
      continue;
    }
    rows.push_back(std::move(*enc));
    meta.push_back({ex.task, ex.source_lang, ex.target_lang, ex.provenance});
  }
  return make_batch(rows, meta);
}

}  // namespace promptmt::pipeline
