// SPDX-FileCopyrightText: Copyright (c) 2026 The promptmt Authors
// SPDX-License-Identifier: Apache-2.0

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "promptmt/harness.hpp"

namespace promptmt::harness {

std::string_view to_string(SupervisionLevel level) {
  switch (level) {
    case SupervisionLevel::supervised: return "supervised";
    case SupervisionLevel::zero_shot: return "zero_shot";
    case SupervisionLevel::one_side_unsupervised: return "one_side_unsupervised";
    case SupervisionLevel::both_sides_unsupervised: return "both_sides_unsupervised";
  }
  return "unknown";
}

namespace {

void check_keys(const YAML::Node& node, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!node.IsMap()) throw ConfigError(where + " must be a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
void read(const YAML::Node& node, const char* key, T& out, const std::string& where) {
  if (!node[key]) return;
  try {
    out = node[key].as<T>();
  } catch (const YAML::Exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

std::vector<std::string> read_list(const YAML::Node& node, const char* key, const std::string& where) {
  std::vector<std::string> out;
  read(node, key, out, where);
  return out;
}

/// "a>b" is one direction, "a<>b" both.
std::vector<PairDecl> parse_pair(const std::string& text, const std::string& where) {
  const auto both = text.find("<>");
  if (both != std::string::npos) {
    const auto a = text.substr(0, both), b = text.substr(both + 2);
    if (a.empty() || b.empty()) throw ConfigError(where + ": malformed pair '" + text + "'");
    return {PairDecl{a, b, {}}, PairDecl{b, a, {}}};
  }
  const auto one = text.find('>');
  if (one == std::string::npos || one == 0 || one + 1 == text.size()) {
    throw ConfigError(where + ": pair '" + text + "' must look like a>b or a<>b");
  }
  return {PairDecl{text.substr(0, one), text.substr(one + 1), {}}};
}

void parse_optimizer(const YAML::Node& n, model::OptimizerConfig& o, const std::string& where) {
  if (!n) return;
  check_keys(n, where, {"learning_rate", "warmup_steps", "beta1", "beta2", "epsilon", "clip_norm",
                    "lazy_embeddings"});
  read(n, "learning_rate", o.learning_rate, where);
  read(n, "warmup_steps", o.warmup_steps, where);
  read(n, "beta1", o.beta1, where);
  read(n, "beta2", o.beta2, where);
  read(n, "epsilon", o.epsilon, where);
  read(n, "clip_norm", o.clip_norm, where);
  read(n, "lazy_embeddings", o.lazy_embeddings, where);
}

/// Stage fields; `base` supplies defaults.
StageDecl parse_stage(const YAML::Node& n, const StageDecl& base, const std::string& where) {
  StageDecl s = base;
  read(n, "mixture", s.mixture, where);
  if (n["mode"]) s.mode.variant = prompting::variant_from_string(n["mode"].as<std::string>());
  read(n, "steps", s.steps, where);
  read(n, "eval_every", s.eval_every, where);
  read(n, "batch_size", s.batch_size, where);
  read(n, "label_smoothing", s.label_smoothing, where);
  read(n, "use_dialect_name", s.use_dialect_name, where);
  parse_optimizer(n["optimizer"], s.optimizer, where + ".optimizer");
  return s;
}

}  // namespace

ExperimentConfig parse_config(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("malformed YAML: ") + e.what());
  }
  check_keys(root, "config",
             {"name", "seed", "family", "data", "model", "optimizer", "decode", "mixtures", "pretrain", "arms",
              "suites", "comparisons"});
  ExperimentConfig c;
  c.source_text = yaml_text;
  read(root, "name", c.name, "config");
  read(root, "seed", c.seed, "config");

  const auto fam = root["family"];
  if (!fam) throw ConfigError("config.family is required");
  check_keys(fam, "family", {"base_vocab_size", "grammar", "languages", "relatedness", "pairs", "dialects"});
  read(fam, "base_vocab_size", c.family.base_vocab_size, "family");
  read(fam, "relatedness", c.family.relatedness, "family");
  if (const auto g = fam["grammar"]) {
    check_keys(g, "family.grammar", {"min_len", "max_len", "second_person_prob", "formal_prob", "final_punct",
                                        "successors", "successor_prob"});
    auto& gs = c.family.grammar;
    read(g, "min_len", gs.min_len, "family.grammar");
    read(g, "max_len", gs.max_len, "family.grammar");
    read(g, "second_person_prob", gs.second_person_prob, "family.grammar");
    read(g, "formal_prob", gs.formal_prob, "family.grammar");
    read(g, "final_punct", gs.final_punct, "family.grammar");
    read(g, "successors", gs.successors, "family.grammar");
    read(g, "successor_prob", gs.successor_prob, "family.grammar");
  }
  for (const auto& l : fam["languages"]) {
    check_keys(l, "family.languages[]", {"code", "name", "order", "tv"});
    LanguageDecl d;
    read(l, "code", d.code, "family.languages[]");
    read(l, "name", d.name, "family.languages[]");
    if (l["order"]) d.order = synth::order_rule_from_string(l["order"].as<std::string>());
    read(l, "tv", d.tv, "family.languages[]");
    c.family.languages.push_back(std::move(d));
  }
  for (const auto& p : fam["pairs"]) {
    if (!p.IsSequence() || p.size() != 3) throw ConfigError("family.pairs entries are [a, b, overlap]");
    c.family.pairs.push_back({p[0].as<std::string>(), p[1].as<std::string>(), p[2].as<double>()});
  }
  for (const auto& d : fam["dialects"]) {
    check_keys(d, "family.dialects[]", {"code", "parent", "divergence", "word"});
    DialectDecl dd;
    read(d, "code", dd.code, "family.dialects[]");
    read(d, "parent", dd.parent, "family.dialects[]");
    read(d, "divergence", dd.divergence, "family.dialects[]");
    read(d, "word", dd.word, "family.dialects[]");
    c.family.dialects.push_back(std::move(dd));
  }

  if (const auto d = root["data"]) {
    check_keys(d, "data",
               {"parallel_sentences", "monolingual_sentences", "test_sentences", "max_tokens", "langid_filter",
                "langid_threshold", "langid_sentences", "mask_ratio"});
    read(d, "parallel_sentences", c.data.parallel_sentences, "data");
    read(d, "monolingual_sentences", c.data.monolingual_sentences, "data");
    read(d, "test_sentences", c.data.test_sentences, "data");
    read(d, "max_tokens", c.data.max_tokens, "data");
    read(d, "langid_filter", c.data.langid_filter, "data");
    read(d, "langid_threshold", c.data.langid_threshold, "data");
    read(d, "langid_sentences", c.data.langid_sentences, "data");
    read(d, "mask_ratio", c.data.mask_ratio, "data");
  }
  if (const auto m = root["model"]) {
    check_keys(m, "model",
               {"encoder_layers", "decoder_layers", "model_dim", "feedforward_dim", "heads", "dropout",
                "max_positions"});
    read(m, "encoder_layers", c.model.encoder_layers, "model");
    read(m, "decoder_layers", c.model.decoder_layers, "model");
    read(m, "model_dim", c.model.model_dim, "model");
    read(m, "feedforward_dim", c.model.feedforward_dim, "model");
    read(m, "heads", c.model.heads, "model");
    read(m, "dropout", c.model.dropout, "model");
    read(m, "max_positions", c.model.max_positions, "model");
  }
  if (const auto d = root["decode"]) {
    check_keys(d, "decode", {"beam_size", "length_penalty_alpha", "max_decode_len"});
    read(d, "beam_size", c.decode.beam_size, "decode");
    read(d, "length_penalty_alpha", c.decode.length_penalty_alpha, "decode");
    read(d, "max_decode_len", c.decode.max_decode_len, "decode");
  }

  StageDecl defaults;
  parse_optimizer(root["optimizer"], defaults.optimizer, "optimizer");

  for (const auto& kv : root["mixtures"]) {
    MixtureDecl m;
    m.name = kv.first.as<std::string>();
    const std::string where = "mixtures." + m.name;
    const auto& n = kv.second;
    check_keys(n, where, {"parallel", "monolingual", "parallel_probability", "size_weighted"});
    for (const auto& p : n["parallel"]) {
      if (p.IsScalar()) {
        for (auto& pd : parse_pair(p.as<std::string>(), where)) m.parallel.push_back(std::move(pd));
        continue;
      }
      check_keys(p, where + ".parallel[]", {"pair", "formality"});
      auto pairs = parse_pair(p["pair"].as<std::string>(), where);
      if (const auto f = p["formality"]) {
        check_keys(f, where + ".formality", {"source_prompt", "target_prompt", "rate"});
        FormalityData fd;
        read(f, "source_prompt", fd.source_prompt, where + ".formality");
        read(f, "target_prompt", fd.target_prompt, where + ".formality");
        read(f, "rate", fd.rate, where + ".formality");
        for (auto& pd : pairs) pd.formality = fd;
      }
      for (auto& pd : pairs) m.parallel.push_back(std::move(pd));
    }
    m.monolingual = read_list(n, "monolingual", where);
    m.parallel_probability = m.parallel.empty() ? 0.0 : (m.monolingual.empty() ? 1.0 : 0.5);
    read(n, "parallel_probability", m.parallel_probability, where);
    read(n, "size_weighted", m.size_weighted, where);
    c.mixtures.push_back(std::move(m));
  }

  if (const auto p = root["pretrain"]) {
    check_keys(p, "pretrain",
               {"mixture", "mode", "steps", "eval_every", "batch_size", "label_smoothing", "optimizer",
                "use_dialect_name"});
    c.pretrain = parse_stage(p, defaults, "pretrain");
  }
  for (const auto& a : root["arms"]) {
    check_keys(a, "arms[]",
               {"name", "init", "mixture", "mode", "steps", "eval_every", "batch_size", "label_smoothing",
                "optimizer", "use_dialect_name", "eval_at_start"});
    ArmDecl arm;
    read(a, "name", arm.name, "arms[]");
    read(a, "init", arm.init, "arms[]");
    read(a, "eval_at_start", arm.eval_at_start, "arms[]");
    arm.stage = parse_stage(a, defaults, "arms." + arm.name);
    c.arms.push_back(std::move(arm));
  }
  for (const auto& s : root["suites"]) {
    check_keys(s, "suites[]",
               {"id", "source", "target", "arms", "tag_override", "dialect_name", "source_prompt",
                "strip_prompt", "second_person_only", "formality", "size", "test_set"});
    SuiteDecl d;
    read(s, "id", d.id, "suites[]");
    read(s, "source", d.source, "suites[]");
    read(s, "target", d.target, "suites[]");
    d.arms = read_list(s, "arms", "suites." + d.id);
    if (s["tag_override"]) d.tag_override = s["tag_override"].as<std::string>();
    if (s["source_prompt"]) d.source_prompt = s["source_prompt"].as<std::string>();
    read(s, "dialect_name", d.dialect_name, "suites." + d.id);
    read(s, "strip_prompt", d.strip_prompt, "suites." + d.id);
    read(s, "second_person_only", d.second_person_only, "suites." + d.id);
    read(s, "formality", d.formality, "suites." + d.id);
    read(s, "size", d.size, "suites." + d.id);
    read(s, "test_set", d.test_set, "suites." + d.id);
    if (d.size == 0) d.size = c.data.test_sentences;
    if (d.test_set.empty()) {
      d.test_set = d.source + ">" + d.target + (d.second_person_only ? "/2p" : "");
    }
    c.suites.push_back(std::move(d));
  }
  for (const auto& k : root["comparisons"]) {
    check_keys(k, "comparisons[]", {"id", "kind", "a", "b", "resamples", "level"});
    ComparisonDecl d;
    read(k, "id", d.id, "comparisons[]");
    std::string kind = "bleu_bootstrap";
    read(k, "kind", kind, "comparisons." + d.id);
    if (kind == "bleu_bootstrap") {
      d.kind = ComparisonDecl::Kind::bleu_bootstrap;
    } else if (kind == "formality_delta") {
      d.kind = ComparisonDecl::Kind::formality_delta;
    } else {
      throw ConfigError("comparisons." + d.id + ": unknown kind '" + kind + "'");
    }
    for (const auto* side : {"a", "b"}) {
      const auto n = k[side];
      if (!n) throw ConfigError("comparisons." + d.id + " needs '" + side + "'");
      check_keys(n, "comparisons." + d.id + "." + side, {"suite", "arm"});
      auto& suite = std::string(side) == "a" ? d.suite_a : d.suite_b;
      auto& arm = std::string(side) == "a" ? d.arm_a : d.arm_b;
      suite = n["suite"].as<std::string>();
      arm = n["arm"].as<std::string>();
    }
    read(k, "resamples", d.resamples, "comparisons." + d.id);
    read(k, "level", d.level, "comparisons." + d.id);
    c.comparisons.push_back(std::move(d));
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

const MixtureDecl& ExperimentConfig::mixture(std::string_view n) const {
  for (const auto& m : mixtures)
    if (m.name == n) return m;
  throw ConfigError("unknown mixture '" + std::string(n) + "'");
}

const ArmDecl& ExperimentConfig::arm(std::string_view n) const {
  for (const auto& a : arms)
    if (a.name == n) return a;
  throw ConfigError("unknown arm '" + std::string(n) + "'");
}

const SuiteDecl& ExperimentConfig::suite(std::string_view id) const {
  for (const auto& s : suites)
    if (s.id == id) return s;
  throw ConfigError("unknown suite '" + std::string(id) + "'");
}

std::vector<std::string> ExperimentConfig::language_codes() const {
  std::vector<std::string> out;
  for (const auto& l : family.languages) out.push_back(l.code);
  for (const auto& d : family.dialects) out.push_back(d.code);
  return out;
}

bool ExperimentConfig::suite_runs_on(const SuiteDecl& s, std::string_view arm_name) const {
  return s.arms.empty() || std::find(s.arms.begin(), s.arms.end(), arm_name) != s.arms.end();
}

void ExperimentConfig::validate() const {
  if (name.empty()) throw ConfigError("config.name is required");
  if (family.languages.size() < 2) throw ConfigError("family needs at least two languages");
  std::set<std::string> codes;
  for (const auto& l : family.languages) {
    if (l.code.empty() || l.name.empty()) throw ConfigError("every language needs a code and a name");
    if (!codes.insert(l.code).second) throw ConfigError("duplicate language code '" + l.code + "'");
  }
  for (const auto& p : family.pairs) {
    if (!codes.count(p.a) || !codes.count(p.b)) {
      throw ConfigError("relatedness pair (" + p.a + ", " + p.b + ") names an undeclared language");
    }
  }
  for (const auto& d : family.dialects) {
    if (!codes.count(d.parent)) throw ConfigError("dialect parent '" + d.parent + "' is not declared");
    if (d.code.empty() || d.word.empty()) throw ConfigError("every dialect needs a code and a word");
    if (!codes.insert(d.code).second) throw ConfigError("duplicate language code '" + d.code + "'");
  }
  auto known = [&](const std::string& code, const std::string& where) {
    if (!codes.count(code)) throw ConfigError(where + " refers to undeclared language '" + code + "'");
  };
  std::set<std::string> mixture_names;
  for (const auto& m : mixtures) {
    if (!mixture_names.insert(m.name).second) throw ConfigError("duplicate mixture '" + m.name + "'");
    for (const auto& p : m.parallel) {
      known(p.source, "mixture " + m.name);
      known(p.target, "mixture " + m.name);
      if (p.source == p.target) throw ConfigError("mixture " + m.name + " pairs a language with itself");
    }
    for (const auto& l : m.monolingual) known(l, "mixture " + m.name);
    if (m.parallel.empty() && m.monolingual.empty()) throw ConfigError("mixture " + m.name + " is empty");
  }
  auto check_stage = [&](const StageDecl& s, const std::string& where) {
    if (s.steps < 0 || s.eval_every < 0 || s.batch_size < 1) throw ConfigError(where + ": bad step counts");
    if (s.steps > 0) mixture(s.mixture);
  };
  check_stage(pretrain, "pretrain");
  std::set<std::string> arm_names;
  for (const auto& a : arms) {
    if (a.name.empty() || a.name == "pretrain" || a.name == "scratch") {
      throw ConfigError("arm names must be nonempty and not 'pretrain' or 'scratch'");
    }
    if (a.init != "pretrain" && a.init != "scratch" && !arm_names.count(a.init)) {
      throw ConfigError("arm " + a.name + " initializes from '" + a.init + "', which is not an earlier arm");
    }
    if (!arm_names.insert(a.name).second) throw ConfigError("duplicate arm '" + a.name + "'");
    check_stage(a.stage, "arm " + a.name);
  }
  std::set<std::string> suite_ids;
  for (const auto& s : suites) {
    if (!suite_ids.insert(s.id).second) throw ConfigError("duplicate suite '" + s.id + "'");
    known(s.source, "suite " + s.id);
    known(s.target, "suite " + s.id);
    if (s.tag_override) known(*s.tag_override, "suite " + s.id);
    for (const auto& a : s.arms)
      if (!arm_names.count(a)) throw ConfigError("suite " + s.id + " names unknown arm '" + a + "'");
    if (s.size < 1) throw ConfigError("suite " + s.id + " needs a positive size");
  }
  for (const auto& k : comparisons) {
    for (const auto& [s, a] : {std::pair{k.suite_a, k.arm_a}, std::pair{k.suite_b, k.arm_b}}) {
      const auto& sd = suite(s);
      arm(a);
      if (!suite_runs_on(sd, a)) throw ConfigError("comparison " + k.id + ": suite " + s + " does not run on " + a);
    }
    if (k.kind == ComparisonDecl::Kind::bleu_bootstrap &&
        suite(k.suite_a).test_set != suite(k.suite_b).test_set) {
      throw ConfigError("comparison " + k.id + " pairs suites with different test sets");
    }
    if (k.resamples < 1 || !(k.level > 0.0 && k.level < 1.0)) {
      throw ConfigError("comparison " + k.id + ": resamples must be positive and level in (0,1)");
    }
  }
}

SupervisionLevel classify_pair(std::span<const PairDecl> parallel, std::string_view source,
                               std::string_view target) {
  bool direct = false, src_any = false, tgt_any = false;
  for (const auto& p : parallel) {
    const bool has_src = p.source == source || p.target == source;
    const bool has_tgt = p.source == target || p.target == target;
    src_any |= has_src;
    tgt_any |= has_tgt;
    direct |= has_src && has_tgt;
  }
  if (direct) return SupervisionLevel::supervised;
  if (src_any && tgt_any) return SupervisionLevel::zero_shot;
  if (src_any != tgt_any) return SupervisionLevel::one_side_unsupervised;
  return SupervisionLevel::both_sides_unsupervised;
}

namespace {

void require_language(const ExperimentConfig& config, std::string_view code) {
  const auto codes = config.language_codes();
  if (std::find(codes.begin(), codes.end(), code) == codes.end()) {
    throw ConfigError("undeclared language '" + std::string(code) + "'");
  }
}

}  // namespace

SupervisionLevel classify_pair(const ExperimentConfig& config, std::string_view source, std::string_view target) {
  require_language(config, source);
  require_language(config, target);
  std::vector<PairDecl> all;
  for (const auto& m : config.mixtures) all.insert(all.end(), m.parallel.begin(), m.parallel.end());
  return classify_pair(all, source, target);
}

SupervisionLevel classify_pair(const ExperimentConfig& config, std::string_view arm, std::string_view source,
                               std::string_view target) {
  require_language(config, source);
  require_language(config, target);
  std::vector<PairDecl> seen;
  auto add_stage = [&](const StageDecl& s) {
    if (s.steps == 0) return;
    const auto& m = config.mixture(s.mixture);
    seen.insert(seen.end(), m.parallel.begin(), m.parallel.end());
  };
  std::string cur(arm);
  while (cur != "pretrain" && cur != "scratch") {
    const auto& a = config.arm(cur);
    add_stage(a.stage);
    cur = a.init;
  }
  if (cur == "pretrain") add_stage(config.pretrain);
  return classify_pair(seen, source, target);
}

}  // namespace promptmt::harness
