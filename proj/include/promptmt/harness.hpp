// SPDX-FileCopyrightText: Copyright (c) 2026 The promptmt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "promptmt/decode.hpp"
#include "promptmt/eval.hpp"
#include "promptmt/model.hpp"
#include "promptmt/pipeline.hpp"
#include "promptmt/synthlang.hpp"

/// Declarative experiments: a synthetic family, generated corpora, a shared
/// infill pretrain, a list of fine-tuning arms and the suites they are
/// evaluated on.
namespace promptmt::harness {

class ConfigError : public Error {
 public:
  using Error::Error;
};

class RunError : public Error {
 public:
  using Error::Error;
};

enum class SupervisionLevel { supervised, zero_shot, one_side_unsupervised, both_sides_unsupervised };
std::string_view to_string(SupervisionLevel level);

struct LanguageDecl {
  std::string code;
  std::string name;
  synth::OrderRule order = synth::OrderRule::identity;
  bool tv = true;
};

struct DialectDecl {
  std::string code;
  std::string parent;
  double divergence = 0.3;
  std::string word;  ///< prefix of the dialect's display name
};

struct FamilyDecl {
  int base_vocab_size = 200;
  synth::GrammarSpec grammar;
  std::vector<LanguageDecl> languages;
  double relatedness = 0.8;  ///< default off-diagonal overlap
  struct Pair {
    std::string a, b;
    double overlap = 0.0;
  };
  std::vector<Pair> pairs;  ///< overrides of the default
  std::vector<DialectDecl> dialects;
};

/// Register-marked parallel data: a `rate` share of second-person sentences
/// get `source_prompt` on the source and `target_prompt` plus the formal form
/// on the target; all other second-person targets are informal.
struct FormalityData {
  std::string source_prompt;
  std::string target_prompt;
  double rate = 0.5;
};

struct PairDecl {
  std::string source;
  std::string target;
  std::optional<FormalityData> formality;
};

struct MixtureDecl {
  std::string name;
  std::vector<PairDecl> parallel;
  std::vector<std::string> monolingual;
  double parallel_probability = 0.5;
  bool size_weighted = false;
};

struct DataDecl {
  int parallel_sentences = 4000;
  int monolingual_sentences = 4000;
  int test_sentences = 100;
  int max_tokens = ingest::kMaxSequenceTokens;
  bool langid_filter = true;
  double langid_threshold = ingest::kLangIdThreshold;
  int langid_sentences = 400;
  double mask_ratio = pipeline::kDefaultMaskRatio;
};

struct StageDecl {
  std::string mixture;
  prompting::ConditioningMode mode;
  int steps = 0;
  int eval_every = 0;
  int batch_size = 64;
  double label_smoothing = model::kDefaultLabelSmoothing;
  model::OptimizerConfig optimizer;
  bool use_dialect_name = true;
};

/// One fine-tuning branch. `init` is "pretrain", "scratch" or the name of an
/// earlier arm whose final parameters are continued.
struct ArmDecl {
  std::string name;
  std::string init = "pretrain";
  StageDecl stage;
  bool eval_at_start = false;
};

struct SuiteDecl {
  std::string id;
  std::string source;
  std::string target;
  std::vector<std::string> arms;  ///< empty means every arm
  std::optional<std::string> tag_override;
  bool dialect_name = true;
  std::optional<std::string> source_prompt;  ///< formality prompt injected into sources
  bool strip_prompt = false;
  bool second_person_only = false;
  bool formality = false;
  int size = 0;          ///< 0: data.test_sentences
  std::string test_set;  ///< suites sharing a key share test sentences
};

struct ComparisonDecl {
  enum class Kind { bleu_bootstrap, formality_delta };
  std::string id;
  Kind kind = Kind::bleu_bootstrap;
  std::string suite_a, arm_a, suite_b, arm_b;
  int resamples = eval::kDefaultResamples;
  double level = eval::kDefaultSignificanceLevel;
};

struct ExperimentConfig {
  std::string name;
  std::uint64_t seed = 0;
  FamilyDecl family;
  DataDecl data;
  model::ModelConfig model;  ///< vocab_size filled from the built vocabulary
  pipeline::DecodeConfig decode;
  std::vector<MixtureDecl> mixtures;
  StageDecl pretrain;
  std::vector<ArmDecl> arms;
  std::vector<SuiteDecl> suites;
  std::vector<ComparisonDecl> comparisons;
  std::string source_text;  ///< verbatim YAML, kept for the run snapshot

  const MixtureDecl& mixture(std::string_view name) const;
  const ArmDecl& arm(std::string_view name) const;
  const SuiteDecl& suite(std::string_view id) const;
  std::vector<std::string> language_codes() const;  ///< base languages then dialects
  bool suite_runs_on(const SuiteDecl& suite, std::string_view arm) const;
  void validate() const;
};

ExperimentConfig parse_config(const std::string& yaml_text);
ExperimentConfig load_config(const std::string& path);

/// Parallel-data supervision of (source, target) given directed pairs with
/// parallel data. Pairs are treated as unordered.
SupervisionLevel classify_pair(std::span<const PairDecl> parallel, std::string_view source,
                               std::string_view target);
/// Over the union of all mixtures in `config`.
SupervisionLevel classify_pair(const ExperimentConfig& config, std::string_view source,
                               std::string_view target);
/// Over the mixtures seen along `arm`'s lineage.
SupervisionLevel classify_pair(const ExperimentConfig& config, std::string_view arm,
                               std::string_view source, std::string_view target);

/// Languages, prompt lookup table and shared vocabulary of an experiment.
struct World {
  synth::FamilySpec spec;
  std::vector<synth::Language> languages;
  prompting::LanguageMap by_code;
  pipeline::Vocabulary vocab;
};

World build_world(const ExperimentConfig& config);

struct Corpora {
  std::map<std::string, pipeline::Dataset> parallel;     ///< key "src>tgt"
  std::map<std::string, pipeline::Dataset> monolingual;  ///< key language code
  std::map<std::string, ingest::FilterStats> langid;     ///< per monolingual language
};

/// Generates every corpus referenced by a mixture. With a language model
/// given, monolingual text is filtered by its posterior.
Corpora generate_corpora(const ExperimentConfig& config, const World& world,
                         const ingest::LangIdModel* langid);

ingest::LangIdModel train_world_langid(const ExperimentConfig& config, const World& world);

struct TestSet {
  std::vector<std::string> sources;     ///< raw source text, formality prompt included
  std::vector<std::string> references;  ///< oracle translations
};

TestSet make_test_set(const ExperimentConfig& config, const World& world, const SuiteDecl& suite);

pipeline::MixtureSpec mixture_spec(const ExperimentConfig& config, const Corpora& corpora,
                                   std::string_view mixture);

/// Conditions, encodes and beam-decodes each source; returns best outputs.
std::vector<std::string> translate_all(const model::Transformer<float>& model, const World& world,
                                       std::span<const std::string> sources, std::string_view source_lang,
                                       std::string_view target_lang, prompting::ConditioningMode mode,
                                       bool use_dialect_name, const std::optional<std::string>& tag_override,
                                       const pipeline::DecodeConfig& decode, int max_tokens, bool strip_prompt);

struct RunOptions {
  std::string run_dir;
  std::string cache_dir;  ///< empty disables pretrain caching
  bool keep_all_checkpoints = false;
  std::function<void(const std::string&)> log;
};

/// Everything written to the run directory, in memory.
struct RunRecord {
  std::string run_dir;
  std::vector<nlohmann::json> metrics;
  std::vector<nlohmann::json> comparisons;
  std::map<std::string, std::string> checkpoints;  ///< arm -> final checkpoint dir

  /// Final metric record of (arm, suite).
  const nlohmann::json& final_metrics(std::string_view arm, std::string_view suite) const;
};

/// Runs pretrain, every arm and every comparison. Layout under run_dir:
/// config.yaml, metrics.jsonl, comparisons.jsonl, train.jsonl, corpora.json,
/// hypotheses/<arm>/step-<n>/<suite>.txt, checkpoints/<arm>/step-<n>/.
RunRecord run_experiment(const ExperimentConfig& config, const RunOptions& options);

/// Reads back metrics.jsonl and comparisons.jsonl.
RunRecord load_run(const std::string& run_dir);

/// Plain-text tables: final scores per suite and arm, curves, comparisons.
std::string render_report(const RunRecord& record);

/// Seed of a named random stream of an experiment, e.g. "family" or
/// "bootstrap:<comparison id>".
std::uint64_t stream_seed(std::uint64_t seed, std::string_view name);

/// Signature string stored with each metric record.
std::string evaluation_signature(const pipeline::DecodeConfig& decode);

}  // namespace promptmt::harness
