// SPDX-FileCopyrightText: Copyright (c) 2026 The promptmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptmt/harness.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace promptmt::harness {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t stream_seed(std::uint64_t seed, std::string_view name) {
  return derive_seed(seed, stable_hash(name));
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(' ');
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(' ');
  return std::string(s.substr(b, e - b + 1));
}

const synth::Language& language(const World& world, std::string_view code) {
  auto it = world.by_code.find(code);
  if (it == world.by_code.end()) throw RunError("unknown language '" + std::string(code) + "'");
  return it->second;
}

}  // namespace

World build_world(const ExperimentConfig& config) {
  World w;
  const auto& fam = config.family;
  const int n = static_cast<int>(fam.languages.size());
  w.spec.n_languages = n;
  w.spec.base_vocab_size = fam.base_vocab_size;
  w.spec.grammar = fam.grammar;
  w.spec.seed = stream_seed(config.seed, "family");
  w.spec.relatedness = Eigen::MatrixXd::Constant(n, n, fam.relatedness);
  w.spec.relatedness.diagonal().setOnes();
  std::map<std::string, int> index;
  for (int i = 0; i < n; ++i) {
    const auto& l = fam.languages[i];
    index[l.code] = i;
    w.spec.codes.push_back(l.code);
    w.spec.names.push_back(l.name);
    w.spec.order_rules.push_back(l.order);
    w.spec.tv_distinction.push_back(l.tv);
  }
  for (const auto& p : fam.pairs) {
    const int a = index.at(p.a), b = index.at(p.b);
    w.spec.relatedness(a, b) = w.spec.relatedness(b, a) = p.overlap;
  }
  w.languages = synth::make_family(w.spec);
  for (const auto& d : fam.dialects) {
    const auto& parent = w.languages.at(index.at(d.parent));
    auto made = synth::make_dialect(parent, d.divergence, stream_seed(config.seed, "dialect:" + d.code),
                                    w.languages, d.word);
    w.languages.emplace_back(d.code, made.name(), made.parent(), made.lexicon(), made.order_rule(),
                             made.formality_forms(), made.final_punct());
  }
  for (const auto& l : w.languages) w.by_code.emplace(l.code(), l);

  std::vector<std::string> extra;
  for (const auto& m : config.mixtures) {
    for (const auto& p : m.parallel) {
      if (!p.formality) continue;
      extra.push_back(p.formality->source_prompt);
      extra.push_back(p.formality->target_prompt);
    }
  }
  for (const auto& s : config.suites)
    if (s.source_prompt) extra.push_back(*s.source_prompt);
  w.vocab = pipeline::build_vocabulary(w.by_code, extra);
  return w;
}

ingest::LangIdModel train_world_langid(const ExperimentConfig& config, const World& world) {
  std::map<std::string, std::vector<std::string>> corpora;
  for (const auto& l : world.languages) {
    const auto base = synth::sample_base(world.spec, static_cast<std::size_t>(config.data.langid_sentences),
                                         stream_seed(config.seed, "langid:" + l.code()));
    auto& texts = corpora[l.code()];
    for (const auto& s : base) texts.push_back(synth::render(s, l));
  }
  return ingest::train_langid(corpora);
}

Corpora generate_corpora(const ExperimentConfig& config, const World& world, const ingest::LangIdModel* langid) {
  Corpora out;
  std::set<std::string> mono;
  std::map<std::string, const PairDecl*> pairs;
  auto note = [&](const StageDecl& s) {
    if (s.steps == 0) return;
    const auto& m = config.mixture(s.mixture);
    for (const auto& p : m.parallel) pairs.emplace(p.source + ">" + p.target, &p);
    mono.insert(m.monolingual.begin(), m.monolingual.end());
  };
  note(config.pretrain);
  for (const auto& a : config.arms) note(a.stage);

  const auto n_par = static_cast<std::size_t>(config.data.parallel_sentences);
  for (const auto& [key, p] : pairs) {
    const auto& src = language(world, p->source);
    const auto& tgt = language(world, p->target);
    auto base = synth::sample_base(world.spec, n_par, stream_seed(config.seed, "parallel:" + key));
    Rng coin(stream_seed(config.seed, "formality:" + key));
    pipeline::Dataset ds;
    ds.id = key;
    for (auto& s : base) {
      ingest::Example ex;
      ex.task = ingest::Task::translate;
      ex.source_lang = p->source;
      ex.target_lang = p->target;
      ex.provenance = "synthetic:" + key;
      bool prompted = false;
      if (p->formality && s.register_) {
        prompted = coin.bernoulli(p->formality->rate);
        s.register_ = prompted ? synth::Register::formal : synth::Register::informal;
      }
      ex.source_text = synth::render(s, src);
      std::string target = synth::render(s, tgt);
      if (prompted) {
        ex.source_text = prompting::inject_formality_prompt(ex.source_text, p->formality->source_prompt);
        target = prompting::inject_formality_prompt(target, p->formality->target_prompt);
      }
      ex.target_text = std::move(target);
      ds.examples.push_back(std::move(ex));
    }
    out.parallel.emplace(key, std::move(ds));
  }

  const auto n_mono = static_cast<std::size_t>(config.data.monolingual_sentences);
  for (const auto& code : mono) {
    const auto& lang = language(world, code);
    const auto base = synth::sample_base(world.spec, n_mono, stream_seed(config.seed, "mono:" + code));
    std::vector<ingest::Example> examples;
    for (const auto& s : base) {
      ingest::Example ex;
      ex.task = ingest::Task::infill;
      ex.source_text = synth::render(s, lang);
      ex.source_lang = code;
      ex.target_lang = code;
      ex.provenance = "synthetic:mono:" + code;
      examples.push_back(std::move(ex));
    }
    if (langid) {
      ingest::FilterStats stats;
      examples = ingest::filter_by_langid(examples, *langid, code, config.data.langid_threshold,
                                          ingest::Side::source, &stats);
      out.langid[code] = stats;
      if (examples.empty()) {
        throw RunError("language identification discarded all monolingual text for '" + code + "'");
      }
    }
    out.monolingual.emplace(code, pipeline::Dataset{code, std::move(examples)});
  }
  return out;
}

TestSet make_test_set(const ExperimentConfig& config, const World& world, const SuiteDecl& suite) {
  const auto& src = language(world, suite.source);
  const auto& tgt = language(world, suite.target);
  const auto want = static_cast<std::size_t>(suite.size);
  const auto seed = stream_seed(config.seed, "test:" + suite.test_set);
  std::vector<synth::BaseSentence> picked;
  for (std::uint64_t round = 0; picked.size() < want; ++round) {
    if (round > 1000) throw RunError("suite " + suite.id + ": could not sample enough second-person sentences");
    for (auto& s : synth::sample_base(world.spec, want, derive_seed(seed, round))) {
      if (suite.second_person_only && !s.register_) continue;
      if (picked.size() < want) picked.push_back(std::move(s));
    }
  }
  TestSet t;
  for (const auto& s : picked) {
    auto text = synth::render(s, src);
    if (suite.source_prompt) text = prompting::inject_formality_prompt(text, *suite.source_prompt);
    t.sources.push_back(std::move(text));
    t.references.push_back(synth::render(s, tgt));
  }
  return t;
}

pipeline::MixtureSpec mixture_spec(const ExperimentConfig& config, const Corpora& corpora, std::string_view name) {
  const auto& m = config.mixture(name);
  pipeline::MixtureSpec spec;
  for (const auto& p : m.parallel) spec.parallel.push_back(corpora.parallel.at(p.source + ">" + p.target));
  for (const auto& l : m.monolingual) spec.monolingual.push_back(corpora.monolingual.at(l));
  spec.parallel_probability = m.parallel_probability;
  spec.monolingual_probability = 1.0 - m.parallel_probability;
  spec.size_weighted = m.size_weighted;
  spec.mask_ratio = config.data.mask_ratio;
  return spec;
}

std::vector<std::string> translate_all(const model::Transformer<float>& model, const World& world,
                                       std::span<const std::string> sources, std::string_view source_lang,
                                       std::string_view target_lang, prompting::ConditioningMode mode,
                                       bool use_dialect_name, const std::optional<std::string>& tag_override,
                                       const pipeline::DecodeConfig& decode, int max_tokens, bool strip_prompt) {
  pipeline::EncodeOptions opts{mode, use_dialect_name, max_tokens, ingest::Phase::inference};
  std::vector<std::string> out;
  out.reserve(sources.size());
  for (const auto& text : sources) {
    ingest::Example ex;
    ex.task = ingest::Task::translate;
    ex.source_text = text;
    ex.source_lang = std::string(source_lang);
    ex.target_lang = std::string(target_lang);
    if (mode.variant == prompting::Variant::tag && tag_override) ex.target_lang = *tag_override;
    const auto enc = pipeline::encode_example(ex, opts, world.by_code, world.vocab);
    const auto hyps = decode::beam_search(model, enc->source, decode);
    auto hyp = pipeline::detokenize(hyps.front().tokens, world.vocab);
    if (strip_prompt) hyp = trim(prompting::strip_leading_prompt(hyp));
    out.push_back(std::move(hyp));
  }
  return out;
}

std::string evaluation_signature(const pipeline::DecodeConfig& decode) {
  std::ostringstream os;
  os << eval::bleu_signature(eval::TokenizerMode::t13a, eval::Smoothing::exp) << "|beam." << decode.beam_size
     << "+alpha." << decode.length_penalty_alpha << "+maxlen." << decode.max_decode_len;
  return os.str();
}

const json& RunRecord::final_metrics(std::string_view arm, std::string_view suite) const {
  const json* found = nullptr;
  for (const auto& m : metrics) {
    if (m.at("arm") == arm && m.at("suite") == suite) {
      if (!found || m.at("step").get<int>() >= found->at("step").get<int>()) found = &m;
    }
  }
  if (!found) throw RunError("no metrics for arm '" + std::string(arm) + "' on suite '" + std::string(suite) + "'");
  return *found;
}

namespace {

/// Identifies a pretrain: anything that changes its parameters changes this.
std::string pretrain_key(const ExperimentConfig& c, const World& w, const model::ModelConfig& mc) {
  std::ostringstream os;
  os << mc.fingerprint() << '|' << w.vocab.fingerprint() << '|' << c.seed << '|';
  for (const auto& l : w.languages) os << l.code() << ':' << join(l.lexicon(), ",") << ';';
  const auto& p = c.pretrain;
  os << '|' << p.steps << ',' << p.batch_size << ',' << p.label_smoothing << ','
     << prompting::to_string(p.mode.variant) << ',' << p.use_dialect_name << ',' << p.optimizer.learning_rate << ','
     << p.optimizer.warmup_steps << ',' << p.optimizer.beta1 << ',' << p.optimizer.beta2 << ','
     << p.optimizer.epsilon << ',' << p.optimizer.clip_norm << ',' << p.optimizer.lazy_embeddings;
  const auto& m = c.mixture(p.mixture);
  for (const auto& l : m.monolingual) os << ",m:" << l;
  for (const auto& x : m.parallel) os << ",p:" << x.source << '>' << x.target << (x.formality ? "+f" : "");
  os << ',' << m.parallel_probability << ',' << m.size_weighted;
  const auto& g = c.family.grammar;
  os << '|' << g.min_len << ',' << g.max_len << ',' << g.second_person_prob << ',' << g.formal_prob << ','
     << g.final_punct << ',' << g.successors << ',' << g.successor_prob;
  const auto& d = c.data;
  os << '|' << d.parallel_sentences << ',' << d.monolingual_sentences << ',' << d.max_tokens << ','
     << d.langid_filter << ',' << d.langid_threshold << ',' << d.langid_sentences << ',' << d.mask_ratio;
  std::ostringstream hex;
  hex << std::hex << std::setw(16) << std::setfill('0') << stable_hash(os.str());
  return hex.str();
}

class Runner {
 public:
  Runner(const ExperimentConfig& config, const RunOptions& options)
      : c_(config), opt_(options), root_(options.run_dir) {}

  RunRecord run() {
    if (opt_.run_dir.empty()) throw RunError("run_dir is required");
    fs::create_directories(root_);
    std::ofstream(root_ / "config.yaml") << c_.source_text;
    metrics_out_.open(root_ / "metrics.jsonl", std::ios::trunc);
    train_out_.open(root_ / "train.jsonl", std::ios::trunc);
    if (!metrics_out_ || !train_out_) throw RunError("cannot write into run directory '" + opt_.run_dir + "'");
    record_.run_dir = opt_.run_dir;
    set_status("running", "");
    try {
      execute();
    } catch (const std::exception& e) {
      set_status("failed", e.what());
      throw;
    }
    set_status("complete", "");
    return record_;
  }

 private:
  void log(const std::string& msg) {
    if (opt_.log) opt_.log(msg);
  }

  void set_status(const std::string& status, const std::string& error) {
    json s = {{"status", status}};
    if (!error.empty()) s["error"] = error;
    std::ofstream(root_ / "status.json") << s.dump(2) << '\n';
  }

  void execute() {
    world_ = build_world(c_);
    model_cfg_ = c_.model;
    model_cfg_.vocab_size = world_.vocab.size();
    langid_.emplace(train_world_langid(c_, world_));
    corpora_ = generate_corpora(c_, world_, c_.data.langid_filter ? &*langid_ : nullptr);
    write_corpus_summary();
    for (const auto& s : c_.suites) tests_.emplace(s.id, make_test_set(c_, world_, s));
    log("vocabulary " + std::to_string(model_cfg_.vocab_size) + " words, " +
        std::to_string(model::ParameterLayout::build(model_cfg_).total) + " parameters");

    auto pretrained = pretrain();
    for (const auto& arm : c_.arms) run_arm(arm, pretrained);
    run_comparisons();
  }

  void write_corpus_summary() {
    json j;
    for (const auto& [k, d] : corpora_.parallel) j["parallel"][k] = d.examples.size();
    for (const auto& [k, d] : corpora_.monolingual) j["monolingual"][k] = d.examples.size();
    for (const auto& [k, s] : corpora_.langid) j["langid"][k] = {{"kept", s.kept}, {"discarded", s.discarded}};
    j["vocab_size"] = world_.vocab.size();
    std::ofstream(root_ / "corpora.json") << j.dump(2) << '\n';
    world_.vocab.save((root_ / "vocab.txt").string());
  }

  pipeline::EncodeOptions train_options(const StageDecl& s) const {
    return {s.mode, s.use_dialect_name, c_.data.max_tokens, ingest::Phase::training};
  }

  model::TrainConfig train_config(const StageDecl& s, std::string_view stream) const {
    model::TrainConfig t;
    t.steps = s.steps;
    t.eval_every = s.eval_every;
    t.batch_size = s.batch_size;
    t.label_smoothing = s.label_smoothing;
    t.seed = stream_seed(c_.seed, std::string("dropout:") + std::string(stream));
    return t;
  }

  model::BatchSource batches(const StageDecl& s, std::shared_ptr<pipeline::Sampler> sampler) const {
    auto opts = train_options(s);
    const int batch = s.batch_size;
    return [this, sampler, opts, batch] {
      return pipeline::next_batch(*sampler, batch, opts, world_.by_code, world_.vocab);
    };
  }

  model::StepHook train_logger(const std::string& stage) {
    return [this, stage](int step, const model::StepMetrics& m) {
      if (step % 50 != 0) return;
      json j = {{"stage", stage}, {"step", step}, {"loss", m.loss}, {"grad_norm", m.grad_norm},
                {"learning_rate", m.learning_rate}};
      train_out_ << j.dump() << '\n';
      train_out_.flush();
      if (step % 500 == 0) log(stage + " step " + std::to_string(step) + " loss " + std::to_string(m.loss));
    };
  }

  model::Vector<float> pretrain() {
    model::Transformer<float> m(model_cfg_, stream_seed(c_.seed, "init"));
    const auto& p = c_.pretrain;
    if (p.steps == 0) return m.parameters();
    const auto key = pretrain_key(c_, world_, model_cfg_);
    const fs::path cached = opt_.cache_dir.empty() ? fs::path() : fs::path(opt_.cache_dir) / ("pretrain-" + key);
    if (!cached.empty() && fs::exists(cached / "meta.json")) {
      auto ck = model::load_checkpoint(cached.string());
      if (ck.vocab_fingerprint == world_.vocab.fingerprint() && ck.config_fingerprint == model_cfg_.fingerprint()) {
        log("pretrain: reusing " + cached.string());
        record_.checkpoints["pretrain"] = cached.string();
        return ck.parameters;
      }
    }
    log("pretrain: " + std::to_string(p.steps) + " steps");
    model::Adam<float> adam(p.optimizer, m.parameter_count());
    auto sampler = std::make_shared<pipeline::Sampler>(mixture_spec(c_, corpora_, p.mixture),
                                                       stream_seed(c_.seed, "sampler:pretrain"));
    auto tc = train_config(p, "pretrain");
    tc.eval_every = 0;
    model::run_stage(m, adam, batches(p, sampler), tc, {}, {}, train_logger("pretrain"));
    const auto dir = root_ / "checkpoints" / "pretrain";
    model::save_checkpoint(dir.string(), m, adam, p.steps, world_.vocab);
    record_.checkpoints["pretrain"] = dir.string();
    if (!cached.empty()) model::save_checkpoint(cached.string(), m, adam, p.steps, world_.vocab);
    return m.parameters();
  }

  std::vector<model::CurvePoint> evaluate(const ArmDecl& arm, const model::Transformer<float>& m, int step) {
    std::vector<model::CurvePoint> pts;
    for (const auto& s : c_.suites) {
      if (!c_.suite_runs_on(s, arm.name)) continue;
      const auto& t = tests_.at(s.id);
      const auto hyps = translate_all(m, world_, t.sources, s.source, s.target, arm.stage.mode, s.dialect_name,
                                      s.tag_override, c_.decode, c_.data.max_tokens, s.strip_prompt);
      const auto rel = fs::path("hypotheses") / arm.name / ("step-" + std::to_string(step)) / (s.id + ".txt");
      fs::create_directories((root_ / rel).parent_path());
      {
        std::ofstream h(root_ / rel);
        for (const auto& x : hyps) h << x << '\n';
      }
      finals_[arm.name + "/" + s.id] = hyps;

      const auto bleu = eval::corpus_bleu(hyps, t.references);
      json metrics = {{"bleu", bleu.score},
                      {"precisions", bleu.precisions},
                      {"brevity_penalty", bleu.brevity_penalty},
                      {"hyp_len", bleu.hyp_len},
                      {"ref_len", bleu.ref_len}};
      std::size_t on_target = 0;
      for (const auto& h : hyps) on_target += !split_whitespace(h).empty() && langid_->classify(h) == s.target;
      metrics["on_target"] = static_cast<double>(on_target) / static_cast<double>(hyps.size());
      if (s.formality) {
        const auto& forms = language(world_, s.target).formality_forms();
        if (!forms) throw RunError("suite " + s.id + ": target language has no formal register");
        eval::RegisterDetector det({forms->formal}, {forms->informal});
        std::vector<eval::Formality> labels;
        for (const auto& h : hyps) labels.push_back(det.detect(h));
        const auto count = [&](eval::Formality f) { return std::count(labels.begin(), labels.end(), f); };
        metrics["formal"] = count(eval::Formality::formal);
        metrics["informal"] = count(eval::Formality::informal);
        metrics["none"] = count(eval::Formality::none);
        metrics["formality_score"] = eval::formality_score(labels);
      }
      json rec = {{"experiment", c_.name},
                  {"arm", arm.name},
                  {"step", step},
                  {"suite", s.id},
                  {"source", s.source},
                  {"target", s.target},
                  {"mode", prompting::to_string(arm.stage.mode.variant)},
                  {"supervision", to_string(classify_pair(c_, arm.name, s.source, s.target))},
                  {"metrics", metrics},
                  {"signature", evaluation_signature(c_.decode)},
                  {"hypotheses", rel.generic_string()}};
      metrics_out_ << rec.dump() << '\n';
      metrics_out_.flush();
      record_.metrics.push_back(rec);

      model::CurvePoint pt;
      pt.step = step;
      pt.suite = s.id;
      pt.metrics = {{"bleu", bleu.score}};
      pts.push_back(std::move(pt));
      log(arm.name + " step " + std::to_string(step) + " " + s.id + " BLEU " + std::to_string(bleu.score));
    }
    return pts;
  }

  void run_arm(const ArmDecl& arm, const model::Vector<float>& pretrained) {
    model::Vector<float> init;
    if (arm.init == "pretrain") {
      init = pretrained;
    } else if (arm.init == "scratch") {
      init = model::Transformer<float>(model_cfg_, stream_seed(c_.seed, "init:" + arm.name)).parameters();
    } else {
      init = arm_params_.at(arm.init);
    }
    model::Transformer<float> m(model_cfg_, std::move(init));
    model::Adam<float> adam(arm.stage.optimizer, m.parameter_count());
    // continuing an arm also continues its optimizer moments and schedule
    if (const auto it = arm_adam_.find(arm.init); it != arm_adam_.end()) adam.state() = it->second;
    const auto& s = arm.stage;
    log("arm " + arm.name + ": " + std::to_string(s.steps) + " steps, " +
        std::string(prompting::to_string(s.mode.variant)) + " conditioning");
    if (arm.eval_at_start || s.steps == 0) evaluate(arm, m, 0);
    if (s.steps > 0) {
      auto sampler = std::make_shared<pipeline::Sampler>(mixture_spec(c_, corpora_, s.mixture),
                                                         stream_seed(c_.seed, "sampler:" + arm.name));
      const auto ckroot = root_ / "checkpoints" / arm.name;
      auto evaluator = [&](const model::Transformer<float>& mm, int step) { return evaluate(arm, mm, step); };
      std::optional<fs::path> previous;
      auto checkpoint = [&](const model::Transformer<float>& mm, const model::Adam<float>& a, int step) {
        const auto dir = ckroot / ("step-" + std::to_string(step));
        model::save_checkpoint(dir.string(), mm, a, step, world_.vocab);
        if (previous && !opt_.keep_all_checkpoints) fs::remove_all(*previous);
        previous = dir;
        record_.checkpoints[arm.name] = dir.string();
      };
      model::run_stage(m, adam, batches(s, sampler), train_config(s, arm.name), evaluator, checkpoint,
                       train_logger(arm.name));
      if (s.eval_every == 0) {
        evaluate(arm, m, s.steps);
        checkpoint(m, adam, s.steps);
      }
    }
    arm_params_[arm.name] = m.parameters();
    arm_adam_[arm.name] = adam.state();
  }

  void run_comparisons() {
    std::ofstream out(root_ / "comparisons.jsonl", std::ios::trunc);
    for (const auto& k : c_.comparisons) {
      const auto& ha = finals_.at(k.arm_a + "/" + k.suite_a);
      const auto& hb = finals_.at(k.arm_b + "/" + k.suite_b);
      json rec = {{"id", k.id},
                  {"a", {{"suite", k.suite_a}, {"arm", k.arm_a}}},
                  {"b", {{"suite", k.suite_b}, {"arm", k.arm_b}}}};
      if (k.kind == ComparisonDecl::Kind::bleu_bootstrap) {
        const auto& refs = tests_.at(k.suite_a).references;
        const auto rep = eval::paired_bootstrap(ha, hb, refs, k.resamples, k.level,
                                                stream_seed(c_.seed, "bootstrap:" + k.id));
        rec["kind"] = "bleu_bootstrap";
        rec["bleu_a"] = rep.bleu_a;
        rec["bleu_b"] = rep.bleu_b;
        rec["delta"] = rep.bleu_a - rep.bleu_b;
        rec["p_value"] = rep.p_value;
        rec["level"] = rep.level;
        rec["resamples"] = rep.n_resamples;
        rec["significant"] = rep.significant;
      } else {
        const auto score_of = [&](const std::string& arm, const std::string& suite) {
          return record_.final_metrics(arm, suite).at("metrics").at("formality_score").get<int>();
        };
        const int a = score_of(k.arm_a, k.suite_a), b = score_of(k.arm_b, k.suite_b);
        rec["kind"] = "formality_delta";
        rec["score_a"] = a;
        rec["score_b"] = b;
        rec["delta"] = a - b;
      }
      out << rec.dump() << '\n';
      record_.comparisons.push_back(rec);
    }
  }

  const ExperimentConfig& c_;
  RunOptions opt_;
  fs::path root_;
  World world_;
  model::ModelConfig model_cfg_;
  std::optional<ingest::LangIdModel> langid_;
  Corpora corpora_;
  std::map<std::string, TestSet> tests_;
  std::map<std::string, model::Vector<float>> arm_params_;
  std::map<std::string, model::AdamState<float>> arm_adam_;
  std::map<std::string, std::vector<std::string>> finals_;
  std::ofstream metrics_out_, train_out_;
  RunRecord record_;
};

std::vector<json> read_jsonl(const fs::path& path) {
  std::vector<json> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw RunError("malformed record in " + path.string() + ": " + e.what());
    }
  }
  return out;
}

std::string fixed(double v, int prec = 1) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

/// Left-aligned first column, right-aligned rest.
std::string table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    if (width.size() < r.size()) width.resize(r.size(), 0);
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  }
  std::ostringstream os;
  for (std::size_t ri = 0; ri < rows.size(); ++ri) {
    const auto& r = rows[ri];
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i) os << "  ";
      os << (i == 0 ? std::left : std::right) << std::setw(static_cast<int>(width[i])) << r[i];
    }
    os << '\n';
    if (ri == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      os << std::string(total - 2, '-') << '\n';
    }
  }
  return os.str();
}

}  // namespace

RunRecord run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  Runner runner(config, options);
  return runner.run();
}

RunRecord load_run(const std::string& run_dir) {
  const fs::path root(run_dir);
  if (!fs::exists(root / "metrics.jsonl")) throw RunError("no metrics.jsonl in '" + run_dir + "'");
  RunRecord r;
  r.run_dir = run_dir;
  r.metrics = read_jsonl(root / "metrics.jsonl");
  r.comparisons = read_jsonl(root / "comparisons.jsonl");
  return r;
}

std::string render_report(const RunRecord& record) {
  std::vector<std::string> arms, suites;
  auto add_unique = [](std::vector<std::string>& v, const std::string& x) {
    if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
  };
  for (const auto& m : record.metrics) {
    add_unique(arms, m.at("arm"));
    add_unique(suites, m.at("suite"));
  }
  std::ostringstream os;
  if (!record.metrics.empty()) os << "Experiment " << record.metrics.front().value("experiment", "") << "\n\n";

  os << "Final BLEU (on-target rate in brackets)\n";
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header = {"suite", "pair", "supervision"};
  header.insert(header.end(), arms.begin(), arms.end());
  rows.push_back(header);
  for (const auto& s : suites) {
    std::vector<std::string> row = {s, "", ""};
    for (const auto& a : arms) {
      try {
        const auto& m = record.final_metrics(a, s);
        row[1] = m.at("source").get<std::string>() + ">" + m.at("target").get<std::string>();
        if (row[2].empty()) row[2] = m.at("supervision");
        row.push_back(fixed(m.at("metrics").at("bleu")) + " [" +
                      fixed(m.at("metrics").at("on_target").get<double>() * 100.0, 0) + "%]");
      } catch (const RunError&) {
        row.push_back("-");
      }
    }
    rows.push_back(row);
  }
  os << table(rows) << '\n';

  for (const auto& s : suites) {
    std::map<int, std::map<std::string, double>> curve;
    for (const auto& m : record.metrics)
      if (m.at("suite") == s) curve[m.at("step").get<int>()][m.at("arm")] = m.at("metrics").at("bleu");
    if (curve.size() < 2) continue;
    os << "BLEU curve: " << s << '\n';
    std::vector<std::vector<std::string>> crows;
    std::vector<std::string> h = {"step"};
    h.insert(h.end(), arms.begin(), arms.end());
    crows.push_back(h);
    for (const auto& [step, by_arm] : curve) {
      std::vector<std::string> row = {std::to_string(step)};
      for (const auto& a : arms) row.push_back(by_arm.count(a) ? fixed(by_arm.at(a)) : "-");
      crows.push_back(row);
    }
    os << table(crows) << '\n';
  }

  std::vector<std::vector<std::string>> frows = {{"suite", "arm", "formal", "informal", "none", "score"}};
  for (const auto& s : suites) {
    for (const auto& a : arms) {
      try {
        const auto& m = record.final_metrics(a, s).at("metrics");
        if (!m.contains("formality_score")) continue;
        frows.push_back({s, a, std::to_string(m.at("formal").get<int>()), std::to_string(m.at("informal").get<int>()),
                         std::to_string(m.at("none").get<int>()), std::to_string(m.at("formality_score").get<int>())});
      } catch (const RunError&) {
      }
    }
  }
  if (frows.size() > 1) os << "Formality\n" << table(frows) << '\n';

  if (!record.comparisons.empty()) {
    std::vector<std::vector<std::string>> krows = {{"comparison", "a", "b", "value a", "value b", "delta", "verdict"}};
    for (const auto& k : record.comparisons) {
      const auto side = [](const json& j) {
        return j.at("arm").get<std::string>() + "/" + j.at("suite").get<std::string>();
      };
      if (k.at("kind") == "bleu_bootstrap") {
        krows.push_back({k.at("id"), side(k.at("a")), side(k.at("b")), fixed(k.at("bleu_a")), fixed(k.at("bleu_b")),
                         fixed(k.at("delta")),
                         std::string(k.at("significant").get<bool>() ? "significant" : "not significant") +
                             " (p=" + fixed(k.at("p_value"), 2) + ")"});
      } else {
        krows.push_back({k.at("id"), side(k.at("a")), side(k.at("b")), std::to_string(k.at("score_a").get<int>()),
                         std::to_string(k.at("score_b").get<int>()), std::to_string(k.at("delta").get<int>()), ""});
      }
    }
    os << "Comparisons\n" << table(krows);
  }
  return os.str();
}

}  // namespace promptmt::harness
