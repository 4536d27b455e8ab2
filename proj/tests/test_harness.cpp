// SPDX-FileCopyrightText: Copyright (c) 2026 The promptmt Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "promptmt/harness.hpp"

using namespace promptmt;
using namespace promptmt::harness;
namespace fs = std::filesystem;

namespace {

const char* kTiny = R"(
name: tiny
seed: 5
family:
  base_vocab_size: 30
  relatedness: 0.5
  grammar: {min_len: 3, max_len: 6}
  languages:
    - {code: en, name: Anglic, tv: false}
    - {code: ve, name: Velar}
    - {code: me, name: Merren, order: reverse}
  dialects:
    - {code: nve, parent: ve, divergence: 0.3, word: Northern}
data: {parallel_sentences: 60, monolingual_sentences: 60, test_sentences: 6, langid_sentences: 40}
model: {encoder_layers: 1, decoder_layers: 1, model_dim: 16, feedforward_dim: 32, heads: 2, dropout: 0.1}
optimizer: {learning_rate: 0.003, warmup_steps: 5}
decode: {beam_size: 2, max_decode_len: 10}
mixtures:
  infill: {monolingual: [en, ve, me, nve]}
  ft:
    parallel:
      - en<>ve
      - {pair: en>me, formality: {source_prompt: "Sire:", target_prompt: "Sire:", rate: 0.5}}
    monolingual: [en]
pretrain: {mixture: infill, mode: prompt, steps: 6, batch_size: 8}
arms:
  - {name: p, mixture: ft, mode: prompt, steps: 6, eval_every: 3, batch_size: 8}
  - {name: t, mixture: ft, mode: tag, steps: 4, eval_every: 0, batch_size: 8}
  - {name: z, init: p, mixture: ft, mode: prompt, steps: 0}
suites:
  - {id: en-ve, source: en, target: ve}
  - {id: ve-me, source: ve, target: me, arms: [p, z]}
  - {id: d1, source: en, target: nve, dialect_name: true, test_set: dia, arms: [p]}
  - {id: d0, source: en, target: nve, dialect_name: false, test_set: dia, arms: [p]}
  - {id: f1, source: en, target: me, source_prompt: "Sire:", strip_prompt: true, second_person_only: true, formality: true, arms: [p]}
  - {id: f0, source: en, target: me, second_person_only: true, formality: true, arms: [p]}
comparisons:
  - {id: dia, a: {suite: d1, arm: p}, b: {suite: d0, arm: p}, resamples: 20, level: 0.05}
  - {id: form, kind: formality_delta, a: {suite: f1, arm: p}, b: {suite: f0, arm: p}}
)";

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string replace(std::string text, const std::string& from, const std::string& to) {
  const auto pos = text.find(from);
  REQUIRE(pos != std::string::npos);
  return text.replace(pos, from.size(), to);
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("config parsing") {
  const auto c = parse_config(kTiny);
  CHECK(c.name == "tiny");
  CHECK(c.family.languages.size() == 3);
  CHECK(c.family.languages[2].order == synth::OrderRule::reverse);
  CHECK_FALSE(c.family.languages[0].tv);
  CHECK(c.language_codes() == std::vector<std::string>{"en", "ve", "me", "nve"});
  const auto& ft = c.mixture("ft");
  CHECK(ft.parallel.size() == 3);
  CHECK(ft.parallel[2].formality.has_value());
  CHECK(ft.parallel_probability == 0.5);
  CHECK(c.mixture("infill").parallel_probability == 0.0);
  CHECK(c.arm("z").init == "p");
  CHECK(c.suite("en-ve").size == 6);
  CHECK(c.suite("d1").test_set == c.suite("d0").test_set);
  CHECK(c.suite_runs_on(c.suite("en-ve"), "t"));
  CHECK_FALSE(c.suite_runs_on(c.suite("d1"), "t"));
  CHECK(c.comparisons[1].kind == ComparisonDecl::Kind::formality_delta);
  CHECK(c.comparisons[0].resamples == 20);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(parse_config("name: [unclosed"), ConfigError);
  CHECK_THROWS_AS(parse_config(replace(kTiny, "seed: 5", "seed: 5\nbogus: 1")), ConfigError);
  CHECK_THROWS_AS(parse_config(replace(kTiny, "en<>ve", "en<>xx")), ConfigError);
  CHECK_THROWS_AS(parse_config(replace(kTiny, "en<>ve", "en-ve")), ConfigError);
  CHECK_THROWS_AS(parse_config(replace(kTiny, "init: p", "init: q")), ConfigError);
  CHECK_THROWS_AS(parse_config(replace(kTiny, "mixture: infill,", "mixture: nope,")), ConfigError);
  CHECK_THROWS_AS(parse_config(replace(kTiny, "test_set: dia, arms: [p]}\n  - {id: f1",
                                       "test_set: other, arms: [p]}\n  - {id: f1")),
                  ConfigError);
  CHECK_THROWS_AS(parse_config(replace(kTiny, "kind: formality_delta", "kind: vibes")), ConfigError);
  CHECK_THROWS_AS(parse_config(replace(kTiny, "{code: me, name: Merren", "{code: ve, name: Merren")), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.yaml"), ConfigError);
  try {
    parse_config(replace(kTiny, "heads: 2", "heads: 2, colour: red"));
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("colour") != std::string::npos);
  }
}

TEST_CASE("supervision levels") {
  const std::vector<PairDecl> par = {{"en", "fr", {}}, {"es", "en", {}}};
  CHECK(classify_pair(par, "en", "fr") == SupervisionLevel::supervised);
  CHECK(classify_pair(par, "fr", "en") == SupervisionLevel::supervised);
  CHECK(classify_pair(par, "fr", "es") == SupervisionLevel::zero_shot);
  CHECK(classify_pair(par, "en", "xx") == SupervisionLevel::one_side_unsupervised);
  CHECK(classify_pair(par, "xx", "fr") == SupervisionLevel::one_side_unsupervised);
  CHECK(classify_pair(par, "xx", "yy") == SupervisionLevel::both_sides_unsupervised);
  const auto c = parse_config(kTiny);
  CHECK(classify_pair(c, "ve", "me") == SupervisionLevel::zero_shot);
  CHECK(classify_pair(c, "en", "nve") == SupervisionLevel::one_side_unsupervised);
  // the pretrain mixture is monolingual only
  CHECK(classify_pair(c, "z", "en", "ve") == SupervisionLevel::supervised);
  CHECK_THROWS_AS(classify_pair(c, "en", "zz"), ConfigError);
  CHECK(to_string(SupervisionLevel::both_sides_unsupervised) == "both_sides_unsupervised");
}

TEST_CASE("world and test sets") {
  const auto c = parse_config(kTiny);
  const auto w = build_world(c);
  CHECK(w.languages.size() == 4);
  CHECK(w.by_code.at("nve").name() == "Northern Velar");
  CHECK(w.vocab.contains("<2nve>"));
  CHECK(w.vocab.contains("Sire"));
  const auto a = make_test_set(c, w, c.suite("d1"));
  const auto b = make_test_set(c, w, c.suite("d0"));
  CHECK(a.references == b.references);
  CHECK(a.sources.size() == 6);
  const auto f = make_test_set(c, w, c.suite("f1"));
  for (const auto& s : f.sources) CHECK(s.rfind("Sire: ", 0) == 0);
  const auto again = make_test_set(c, build_world(c), c.suite("f1"));
  CHECK(again.sources == f.sources);
}

TEST_CASE("tiny experiment is deterministic and complete") {
  const auto c = parse_config(kTiny);
  const auto d1 = fresh_dir("promptmt_run1"), d2 = fresh_dir("promptmt_run2"), cache = fresh_dir("promptmt_cache");
  const auto r1 = run_experiment(c, {d1.string(), cache.string(), false, {}});
  const auto r2 = run_experiment(c, {d2.string(), "", false, {}});
  CHECK(read_file(d1 / "metrics.jsonl") == read_file(d2 / "metrics.jsonl"));
  CHECK(read_file(d1 / "comparisons.jsonl") == read_file(d2 / "comparisons.jsonl"));
  CHECK_FALSE(read_file(d1 / "metrics.jsonl").empty());
  // a cached pretrain gives the same records
  const auto d3 = fresh_dir("promptmt_run3");
  run_experiment(c, {d3.string(), cache.string(), false, {}});
  CHECK(read_file(d1 / "metrics.jsonl") == read_file(d3 / "metrics.jsonl"));

  for (const auto* f : {"config.yaml", "metrics.jsonl", "comparisons.jsonl", "train.jsonl", "corpora.json",
                        "vocab.txt", "status.json"})
    CHECK(fs::exists(d1 / f));
  CHECK(read_file(d1 / "config.yaml") == std::string(kTiny));
  CHECK(fs::exists(d1 / "hypotheses" / "p" / "step-3" / "en-ve.txt"));
  CHECK(fs::exists(d1 / "hypotheses" / "p" / "step-6" / "f1.txt"));
  // only the final checkpoint of an arm is kept
  CHECK_FALSE(fs::exists(d1 / "checkpoints" / "p" / "step-3"));
  CHECK(fs::exists(d1 / "checkpoints" / "p" / "step-6" / "params.bin"));

  // evaluation points: p at 3 and 6, t only at its end, z (zero steps) once
  const auto& m = r1.final_metrics("p", "en-ve");
  CHECK(m.at("step") == 6);
  CHECK(m.at("supervision") == "supervised");
  CHECK(r1.final_metrics("t", "en-ve").at("step") == 4);
  CHECK(r1.final_metrics("z", "ve-me").at("supervision") == "zero_shot");
  CHECK(r1.final_metrics("z", "en-ve").at("metrics").at("bleu") ==
        r1.final_metrics("p", "en-ve").at("metrics").at("bleu"));
  CHECK(r1.final_metrics("p", "f1").at("metrics").contains("formality_score"));
  CHECK_THROWS_AS(r1.final_metrics("t", "d1"), RunError);

  REQUIRE(r1.comparisons.size() == 2);
  CHECK(r1.comparisons[0].at("id") == "dia");
  CHECK(r1.comparisons[1].at("id") == "form");

  const auto loaded = load_run(d1.string());
  CHECK(loaded.metrics == r1.metrics);
  CHECK(loaded.comparisons == r1.comparisons);
  const auto report = render_report(loaded);
  for (const auto* s : {"en-ve", "ve-me", "dia", "form", "zero_shot"}) CHECK(report.find(s) != std::string::npos);
  (void)r2;
}

TEST_CASE("evaluation signature names the decode settings") {
  const auto s = evaluation_signature(pipeline::DecodeConfig{4, 0.6, 32});
  CHECK(s.find("beam.4") != std::string::npos);
  CHECK(s.find("tok.13a") != std::string::npos);
}

TEST_CASE("an arm started from another arm continues its optimizer") {
  const auto c = parse_config(replace(kTiny, "mode: prompt, steps: 0}", "mode: prompt, steps: 2}"));
  const auto dir = fresh_dir("promptmt_run_continue");
  const auto r = run_experiment(c, {dir.string(), "", false, {}});
  const auto p = model::load_checkpoint(r.checkpoints.at("p"));
  const auto z = model::load_checkpoint(r.checkpoints.at("z"));
  CHECK(p.adam.step == 6);
  CHECK(z.adam.step == 8);
  CHECK(z.step == 2);
}
