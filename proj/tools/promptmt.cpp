// SPDX-FileCopyrightText: Copyright (c) 2026 The promptmt Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "json.hpp"
#include "promptmt/harness.hpp"

namespace fs = std::filesystem;
using namespace promptmt;
using nlohmann::json;

namespace {

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read '" + path + "'");
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(line);
  }
  return out;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  for (const auto& l : lines) out << l << '\n';
}

json bleu_json(const eval::BleuScore& b, eval::TokenizerMode mode, eval::Smoothing smoothing) {
  return {{"bleu", b.score},
          {"precisions", b.precisions},
          {"brevity_penalty", b.brevity_penalty},
          {"hyp_len", b.hyp_len},
          {"ref_len", b.ref_len},
          {"signature", eval::bleu_signature(mode, smoothing)}};
}

harness::StageDecl pick_stage(const harness::ExperimentConfig& c, const std::string& name) {
  if (name == "pretrain") return c.pretrain;
  return c.arm(name).stage;
}

/// Trains one configured stage and writes a checkpoint.
void train_stage(const harness::ExperimentConfig& c, harness::StageDecl stage, const std::string& init,
                 const std::string& out, const std::string& label, bool continue_optimizer = false) {
  if (stage.steps <= 0) throw Error("stage '" + label + "' has no steps");
  const auto world = harness::build_world(c);
  auto mc = c.model;
  mc.vocab_size = world.vocab.size();
  std::optional<model::Transformer<float>> m;
  std::optional<model::AdamState<float>> moments;
  if (init.empty()) {
    m.emplace(mc, derive_seed(c.seed, stable_hash("init")));
  } else {
    auto ck = model::load_checkpoint(init);
    if (ck.vocab_fingerprint != world.vocab.fingerprint()) {
      throw Error("checkpoint '" + init + "' was trained with a different vocabulary");
    }
    m.emplace(ck.config, std::move(ck.parameters));
    if (continue_optimizer) moments = std::move(ck.adam);
  }
  const auto langid = harness::train_world_langid(c, world);
  // Only the chosen stage's mixture matters here.
  harness::ExperimentConfig only = c;
  only.pretrain = stage;
  only.arms.clear();
  const auto corpora = harness::generate_corpora(only, world, c.data.langid_filter ? &langid : nullptr);
  pipeline::Sampler sampler(harness::mixture_spec(c, corpora, stage.mixture),
                            derive_seed(c.seed, stable_hash("sampler:" + label)));
  model::Adam<float> adam(stage.optimizer, m->parameter_count());
  if (moments) adam.state() = std::move(*moments);
  pipeline::EncodeOptions opts{stage.mode, stage.use_dialect_name, c.data.max_tokens, ingest::Phase::training};
  model::TrainConfig tc;
  tc.steps = stage.steps;
  tc.batch_size = stage.batch_size;
  tc.label_smoothing = stage.label_smoothing;
  tc.seed = derive_seed(c.seed, stable_hash("dropout:" + label));
  model::run_stage(
      *m, adam, [&] { return pipeline::next_batch(sampler, stage.batch_size, opts, world.by_code, world.vocab); }, tc,
      {}, {}, [&](int step, const model::StepMetrics& s) {
        if (step % 100 == 0 || step == stage.steps) std::cerr << label << " step " << step << " loss " << s.loss << '\n';
      });
  model::save_checkpoint(out, *m, adam, stage.steps, world.vocab);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-conditioned multilingual translation on synthetic languages"};
  app.require_subcommand(1);

  std::string config_path, out_dir, run_dir, cache_dir, init, stage_name, checkpoint;
  std::string source, target, mode = "prompt", tag_override, input, output;
  std::string hyp, ref, hyp_a, hyp_b, tokenize = "13a", smoothing = "exp", annotations, language;
  std::vector<std::string> formal_words, informal_words;
  int steps = -1, resamples = eval::kDefaultResamples;
  double level = eval::kDefaultSignificanceLevel;
  std::uint64_t seed = 0;
  bool parent_name = false, strip = false, quiet = false, keep_all = false;
  pipeline::DecodeConfig decode;

  auto* gen_family = app.add_subcommand("gen-family", "Generate a language family and write its lexicons");
  gen_family->add_option("--config", config_path, "Experiment config")->required()->check(CLI::ExistingFile);
  gen_family->add_option("--out", out_dir, "Output directory")->required();

  auto* gen_data = app.add_subcommand("gen-data", "Write the corpora and test sets of an experiment");
  gen_data->add_option("--config", config_path, "Experiment config")->required()->check(CLI::ExistingFile);
  gen_data->add_option("--out", out_dir, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train one configured stage (pretrain or an arm)");
  train->add_option("--config", config_path, "Experiment config")->required()->check(CLI::ExistingFile);
  train->add_option("--stage", stage_name, "'pretrain' or an arm name")->required();
  train->add_option("--init", init, "Checkpoint to start from");
  train->add_option("--steps", steps, "Override the stage's step count");
  train->add_option("--out", out_dir, "Checkpoint directory")->required();

  auto* adapt = app.add_subcommand("adapt", "Continue a checkpoint with prompt conditioning");
  adapt->add_option("--config", config_path, "Experiment config")->required()->check(CLI::ExistingFile);
  adapt->add_option("--init", init, "Checkpoint to adapt")->required();
  adapt->add_option("--stage", stage_name, "Arm whose mixture and optimizer to use")->required();
  adapt->add_option("--steps", steps, "Adaptation steps (default 100)");
  adapt->add_option("--out", out_dir, "Checkpoint directory")->required();

  auto* translate = app.add_subcommand("translate", "Beam-decode a file of source sentences");
  translate->add_option("--config", config_path, "Experiment config")->required()->check(CLI::ExistingFile);
  translate->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  translate->add_option("--source", source, "Source language code")->required();
  translate->add_option("--target", target, "Target language code")->required();
  translate->add_option("--mode", mode, "prompt or tag");
  translate->add_option("--tag-override", tag_override, "Language whose tag to use in tag mode");
  translate->add_flag("--parent-name", parent_name, "Prompt dialects with their parent's name");
  translate->add_flag("--strip-prompt", strip, "Drop everything up to the first colon of each output");
  translate->add_option("--input", input, "Source sentences, one per line")->required();
  translate->add_option("--output", output, "Output file (default stdout)");
  translate->add_option("--beam", decode.beam_size, "Beam size");
  translate->add_option("--alpha", decode.length_penalty_alpha, "Length penalty exponent");
  translate->add_option("--max-len", decode.max_decode_len, "Maximum output tokens");

  auto* score = app.add_subcommand("score", "Corpus BLEU of hypotheses against references");
  score->add_option("--hyp", hyp, "Hypotheses")->required()->check(CLI::ExistingFile);
  score->add_option("--ref", ref, "References")->required()->check(CLI::ExistingFile);
  score->add_option("--tokenize", tokenize, "13a or char");
  score->add_option("--smoothing", smoothing, "exp or none");

  auto* bootstrap = app.add_subcommand("bootstrap", "Paired bootstrap significance of system A over B");
  bootstrap->add_option("--hyp-a", hyp_a, "System A")->required()->check(CLI::ExistingFile);
  bootstrap->add_option("--hyp-b", hyp_b, "System B")->required()->check(CLI::ExistingFile);
  bootstrap->add_option("--ref", ref, "References")->required()->check(CLI::ExistingFile);
  bootstrap->add_option("--resamples", resamples, "Number of resamples");
  bootstrap->add_option("--level", level, "Significance level");
  bootstrap->add_option("--seed", seed, "Resampling seed");

  auto* formality = app.add_subcommand("formality", "Formality score of outputs or annotations");
  formality->add_option("--hyp", hyp, "Outputs to label by lexicon");
  formality->add_option("--annotations", annotations, "One label per line instead of --hyp");
  formality->add_option("--formal", formal_words, "Formal second-person words");
  formality->add_option("--informal", informal_words, "Informal second-person words");
  formality->add_option("--config", config_path, "Take the words from this experiment's language");
  formality->add_option("--language", language, "Language code used with --config");
  formality->add_flag("--strip-prompt", strip, "Drop everything up to the first colon first");

  auto* run = app.add_subcommand("run", "Execute a full experiment config");
  run->add_option("--config", config_path, "Experiment config")->required()->check(CLI::ExistingFile);
  run->add_option("--run-dir", run_dir, "Run directory")->required();
  run->add_option("--cache-dir", cache_dir, "Reuse pretrained checkpoints from here");
  run->add_flag("--keep-checkpoints", keep_all, "Keep the checkpoint of every evaluation point");
  run->add_flag("--quiet", quiet, "No progress output");

  auto* report = app.add_subcommand("report", "Render a run directory as tables");
  report->add_option("--run-dir", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_family) {
      const auto c = harness::load_config(config_path);
      const auto world = harness::build_world(c);
      fs::create_directories(out_dir);
      json j;
      for (const auto& l : world.languages) {
        json e = {{"code", l.code()},
                  {"name", l.name()},
                  {"order", synth::to_string(l.order_rule())},
                  {"lexicon", l.lexicon()}};
        if (l.parent()) e["parent"] = *l.parent();
        if (l.formality_forms()) e["formality"] = {{"formal", l.formality_forms()->formal}, {"informal", l.formality_forms()->informal}};
        j["languages"].push_back(e);
      }
      for (const auto& a : world.languages)
        for (const auto& b : world.languages) j["overlap"][a.code()][b.code()] = synth::lexicon_overlap(a, b);
      std::ofstream(fs::path(out_dir) / "family.json") << j.dump(2) << '\n';
      world.vocab.save((fs::path(out_dir) / "vocab.txt").string());
      std::cout << "wrote " << world.languages.size() << " languages to " << out_dir << '\n';
    } else if (*gen_data) {
      const auto c = harness::load_config(config_path);
      const auto world = harness::build_world(c);
      const auto langid = harness::train_world_langid(c, world);
      const auto corpora = harness::generate_corpora(c, world, c.data.langid_filter ? &langid : nullptr);
      const fs::path root(out_dir);
      fs::create_directories(root / "parallel");
      fs::create_directories(root / "mono");
      fs::create_directories(root / "test");
      for (const auto& [key, d] : corpora.parallel) {
        auto name = key;
        std::replace(name.begin(), name.end(), '>', '-');
        ingest::write_corpus((root / "parallel" / (name + ".tsv")).string(), d.examples, ingest::CorpusKind::parallel);
      }
      for (const auto& [code, d] : corpora.monolingual)
        ingest::write_corpus((root / "mono" / (code + ".txt")).string(), d.examples, ingest::CorpusKind::monolingual);
      for (const auto& s : c.suites) {
        const auto t = harness::make_test_set(c, world, s);
        write_lines((root / "test" / (s.id + ".src")).string(), t.sources);
        write_lines((root / "test" / (s.id + ".ref")).string(), t.references);
      }
      world.vocab.save((root / "vocab.txt").string());
      std::cout << "wrote " << corpora.parallel.size() << " parallel and " << corpora.monolingual.size()
                << " monolingual corpora to " << out_dir << '\n';
    } else if (*train) {
      const auto c = harness::load_config(config_path);
      auto stage = pick_stage(c, stage_name);
      if (steps >= 0) stage.steps = steps;
      train_stage(c, stage, init, out_dir, stage_name);
    } else if (*adapt) {
      const auto c = harness::load_config(config_path);
      auto stage = pick_stage(c, stage_name);
      stage.mode.variant = prompting::Variant::prompt;
      stage.steps = steps >= 0 ? steps : 100;
      train_stage(c, stage, init, out_dir, "adapt:" + stage_name, true);
    } else if (*translate) {
      const auto c = harness::load_config(config_path);
      const auto world = harness::build_world(c);
      auto ck = model::load_checkpoint(checkpoint);
      if (ck.vocab_fingerprint != world.vocab.fingerprint()) {
        throw Error("checkpoint vocabulary does not match the config's languages");
      }
      model::Transformer<float> m(ck.config, std::move(ck.parameters));
      prompting::ConditioningMode cm;
      cm.variant = prompting::variant_from_string(mode);
      std::optional<std::string> override;
      if (!tag_override.empty()) override = tag_override;
      const auto out = harness::translate_all(m, world, read_lines(input), source, target, cm, !parent_name, override,
                                              decode, c.data.max_tokens, strip);
      if (output.empty()) {
        for (const auto& l : out) std::cout << l << '\n';
      } else {
        write_lines(output, out);
      }
    } else if (*score) {
      const auto tm = eval::tokenizer_mode_from_string(tokenize);
      const auto sm = smoothing == "none" ? eval::Smoothing::none : eval::Smoothing::exp;
      if (smoothing != "exp" && smoothing != "none") throw Error("smoothing must be exp or none");
      const auto b = eval::corpus_bleu(read_lines(hyp), read_lines(ref), tm, sm);
      std::cout << bleu_json(b, tm, sm).dump() << '\n';
    } else if (*bootstrap) {
      const auto r = eval::paired_bootstrap(read_lines(hyp_a), read_lines(hyp_b), read_lines(ref), resamples, level, seed);
      json j = {{"bleu_a", r.bleu_a},    {"bleu_b", r.bleu_b},   {"delta", r.bleu_a - r.bleu_b},
                {"p_value", r.p_value},  {"level", r.level},     {"resamples", r.n_resamples},
                {"significant", r.significant}, {"seed", seed}};
      std::cout << j.dump() << '\n';
    } else if (*formality) {
      std::vector<eval::Formality> labels;
      if (!annotations.empty()) {
        labels = eval::read_annotations(annotations);
      } else {
        if (hyp.empty()) throw Error("give --hyp or --annotations");
        if (!config_path.empty()) {
          const auto world = harness::build_world(harness::load_config(config_path));
          const auto it = world.by_code.find(language);
          if (it == world.by_code.end() || !it->second.formality_forms()) {
            throw Error("language '" + language + "' has no formal register");
          }
          formal_words = {it->second.formality_forms()->formal};
          informal_words = {it->second.formality_forms()->informal};
        }
        eval::RegisterDetector det(formal_words, informal_words);
        for (auto line : read_lines(hyp)) {
          if (strip) line = prompting::strip_leading_prompt(line);
          labels.push_back(det.detect(line));
        }
      }
      const auto count = [&](eval::Formality f) { return std::count(labels.begin(), labels.end(), f); };
      json j = {{"formal", count(eval::Formality::formal)},
                {"informal", count(eval::Formality::informal)},
                {"none", count(eval::Formality::none)},
                {"score", eval::formality_score(labels)}};
      std::cout << j.dump() << '\n';
    } else if (*run) {
      const auto c = harness::load_config(config_path);
      harness::RunOptions o;
      o.run_dir = run_dir;
      o.cache_dir = cache_dir;
      o.keep_all_checkpoints = keep_all;
      if (!quiet) o.log = [](const std::string& s) { std::cerr << s << '\n'; };
      const auto record = harness::run_experiment(c, o);
      std::cout << harness::render_report(record);
    } else if (*report) {
      std::cout << harness::render_report(harness::load_run(run_dir));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
