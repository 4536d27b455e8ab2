// SPDX-FileCopyrightText: Copyright (c) 2026 The promptmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptmt/synthlang.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cctype>
#include <sstream>
#include <unordered_set>

namespace promptmt::synth {

namespace {

constexpr std::array<std::string_view, 24> kNames = {
    "Velar",  "Ostic",   "Merren", "Tavish", "Quorine", "Saldic", "Ambrel",  "Kethic",
    "Lorvan", "Duvane",  "Pellish", "Zorvic", "Harnic", "Ilvese", "Norrow",  "Brenic",
    "Castrel", "Fennic", "Gorlish", "Jasque", "Wendic", "Yarrow", "Orvathi", "Ulmish"};

constexpr std::array<std::string_view, 6> kDialectWords = {"Northern", "Southern", "Coastal",
                                                          "Highland", "Eastern",  "Western"};

constexpr std::string_view kConsonants = "ptkbdgmnlrsvzfhjw";
constexpr std::string_view kVowels = "aeiouy";

/// Per-language spelling habits so that private words carry a character-level
/// signature the language identifier can pick up.
struct Orthography {
  std::string consonants;
  std::string vowels;
  std::string codas;
};

Orthography make_orthography(std::uint64_t seed) {
  Rng rng(seed);
  std::string cons(kConsonants);
  std::string vows(kVowels);
  std::vector<char> c(cons.begin(), cons.end());
  std::vector<char> v(vows.begin(), vows.end());
  rng.shuffle(c);
  rng.shuffle(v);
  Orthography o;
  o.consonants.assign(c.begin(), c.begin() + 7);
  o.vowels.assign(v.begin(), v.begin() + 3);
  o.codas.assign(c.begin() + 7, c.begin() + 9);
  return o;
}

class WordFactory {
 public:
  explicit WordFactory(std::uint64_t seed) : rng_(seed) {}

  void reserve(const std::string& word) { used_.insert(word); }

  std::string fresh(const Orthography& o) {
    for (int attempt = 0; attempt < 10000; ++attempt) {
      const int syllables = 2 + static_cast<int>(rng_.below(2));
      std::string w;
      for (int s = 0; s < syllables; ++s) {
        w += o.consonants[rng_.below(o.consonants.size())];
        w += o.vowels[rng_.below(o.vowels.size())];
      }
      if (rng_.bernoulli(0.4)) w += o.codas[rng_.below(o.codas.size())];
      if (used_.insert(w).second) return w;
    }
    throw SynthError("word generator exhausted its spelling space");
  }

 private:
  Rng rng_;
  std::unordered_set<std::string> used_;
};

void validate_relatedness(const FamilySpec& spec) {
  const auto& r = spec.relatedness;
  if (spec.n_languages < 1) throw SynthError("family needs at least one language");
  if (r.rows() != spec.n_languages || r.cols() != spec.n_languages) {
    throw SynthError("relatedness matrix must be n_languages x n_languages");
  }
  for (int i = 0; i < spec.n_languages; ++i) {
    if (r(i, i) != 1.0) throw SynthError("relatedness diagonal must be 1");
    for (int j = 0; j < spec.n_languages; ++j) {
      if (r(i, j) < 0.0 || r(i, j) > 1.0) throw SynthError("relatedness entries must be in [0,1]");
      if (r(i, j) != r(j, i)) throw SynthError("relatedness matrix must be symmetric");
    }
  }
  if (spec.base_vocab_size < spec.grammar.max_len || spec.base_vocab_size < 2) {
    throw SynthError("base_vocab_size must cover the maximum sentence length");
  }
  if (spec.grammar.min_len < 1 || spec.grammar.min_len > spec.grammar.max_len) {
    throw SynthError("grammar length range is empty");
  }
  if (spec.grammar.successors < 0 || spec.grammar.successor_prob < 0.0 || spec.grammar.successor_prob > 1.0) {
    throw SynthError("grammar successor settings are out of range");
  }
}

/// Assigns, per base token, a spelling-group label to every language so that
/// pairwise shared-label counts match the target overlaps. Local search over
/// single (token, language) relabelings in three passes: reach the targets,
/// trade small errors for fewer words owned by a single language, then settle
/// the errors again. The middle pass makes a word that differs from one
/// relative usually shared with another.
std::vector<std::vector<int>> assign_groups(const FamilySpec& spec) {
  const int n = spec.n_languages;
  const int v = spec.base_vocab_size;
  Eigen::MatrixXi target(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      target(i, j) = static_cast<int>(std::lround(spec.relatedness(i, j) * v));

  std::vector<std::vector<int>> label(n, std::vector<int>(v));
  for (int l = 0; l < n; ++l)
    for (int t = 0; t < v; ++t) label[l][t] = l;
  if (n == 1) return label;

  Eigen::MatrixXi shared = Eigen::MatrixXi::Zero(n, n);
  for (int l = 0; l < n; ++l) shared(l, l) = v;
  long long err = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) err += static_cast<long long>(target(i, j)) * target(i, j);
  long long singletons = static_cast<long long>(n) * v;

  struct Move {
    int t = 0, l = 0, proposal = 0;
    long long change = 0;  ///< squared-error change
    int single_change = 0;
  };
  Rng rng(derive_seed(spec.seed, 0x6a09e667));
  auto propose = [&](Move& m) {
    m.t = static_cast<int>(rng.below(v));
    m.l = static_cast<int>(rng.below(n));
    const int old = label[m.l][m.t];
    if (rng.bernoulli(0.5)) {
      int j = static_cast<int>(rng.below(n - 1));
      if (j >= m.l) ++j;
      m.proposal = label[j][m.t];
    } else {
      // fresh label: distinct from every label present at t
      m.proposal = n + static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
      bool taken = true;
      while (taken) {
        taken = false;
        for (int j = 0; j < n; ++j)
          if (label[j][m.t] == m.proposal) {
            taken = true;
            ++m.proposal;
          }
      }
    }
    if (m.proposal == old) return false;
    m.change = 0;
    int holders_old = 0, holders_new = 0;
    for (int j = 0; j < n; ++j) {
      if (j == m.l) continue;
      const int d = (label[j][m.t] == m.proposal) - (label[j][m.t] == old);
      holders_old += label[j][m.t] == old;
      holders_new += label[j][m.t] == m.proposal;
      if (d != 0) {
        const long long before = shared(std::min(m.l, j), std::max(m.l, j)) - target(m.l, j);
        m.change += (before + d) * (before + d) - before * before;
      }
    }
    m.single_change = (holders_old == 1) + (holders_new == 0) - (holders_old == 0) - (holders_new == 1);
    return true;
  };
  auto apply = [&](const Move& m) {
    const int old = label[m.l][m.t];
    for (int j = 0; j < n; ++j) {
      if (j == m.l) continue;
      const int d = (label[j][m.t] == m.proposal) - (label[j][m.t] == old);
      shared(m.l, j) += d;
      shared(j, m.l) += d;
    }
    label[m.l][m.t] = m.proposal;
    err += m.change;
    singletons += m.single_change;
  };

  const long long iters = 400LL * n * v;
  Move m;
  for (long long it = 0; it < iters && err > 0; ++it) {
    if (!propose(m)) continue;
    if (m.change < 0 || (m.change == 0 && rng.bernoulli(0.3))) apply(m);
  }
  // Annealed; each single-owner word is worth half a unit of squared error.
  const long long anneal = 60 * iters;
  for (long long it = 0; it < anneal && singletons > 0; ++it) {
    if (!propose(m)) continue;
    const double cost = static_cast<double>(2 * m.change + m.single_change);
    const double temperature = 1.0 * std::pow(0.01, static_cast<double>(it) / static_cast<double>(anneal));
    if (cost <= 0.0 || rng.uniform() < std::exp(-cost / temperature)) apply(m);
  }
  for (long long it = 0; it < iters && err > 0; ++it) {
    if (!propose(m)) continue;
    if (m.change < 0 || (m.change == 0 && m.single_change <= 0)) apply(m);
  }
  return label;
}

std::string default_code(std::string_view name, const std::unordered_set<std::string>& taken) {
  std::string base;
  for (char c : name) base += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (std::size_t len = 2; len <= base.size(); ++len) {
    std::string code = base.substr(0, len);
    if (!taken.count(code)) return code;
  }
  for (int k = 0;; ++k) {
    std::string code = base.substr(0, 2) + std::to_string(k);
    if (!taken.count(code)) return code;
  }
}

void apply_order(std::vector<std::string>& words, OrderRule rule) {
  switch (rule) {
    case OrderRule::identity:
      break;
    case OrderRule::reverse:
      std::reverse(words.begin(), words.end());
      break;
    case OrderRule::swap_pairs:
      for (std::size_t i = 0; i + 1 < words.size(); i += 2) std::swap(words[i], words[i + 1]);
      break;
  }
}

}  // namespace

std::string_view to_string(OrderRule rule) {
  switch (rule) {
    case OrderRule::identity:
      return "identity";
    case OrderRule::reverse:
      return "reverse";
    case OrderRule::swap_pairs:
      return "swap_pairs";
  }
  return "identity";
}

OrderRule order_rule_from_string(std::string_view name) {
  if (name == "identity") return OrderRule::identity;
  if (name == "reverse") return OrderRule::reverse;
  if (name == "swap_pairs") return OrderRule::swap_pairs;
  throw SynthError("unknown order rule '" + std::string(name) + "'");
}

Language::Language(std::string code, std::string name, std::optional<std::string> parent,
                   std::vector<std::string> lexicon, OrderRule order_rule,
                   std::optional<FormalityForms> formality_forms, std::string final_punct)
    : code_(std::move(code)),
      name_(std::move(name)),
      parent_(std::move(parent)),
      lexicon_(std::move(lexicon)),
      order_rule_(order_rule),
      formality_forms_(std::move(formality_forms)),
      final_punct_(std::move(final_punct)) {
  if (name_.find(':') != std::string::npos) {
    throw SynthError("language name '" + name_ + "' contains a colon");
  }
  for (std::size_t i = 0; i < lexicon_.size(); ++i) {
    if (!inverse_.emplace(lexicon_[i], static_cast<int>(i)).second) {
      throw SynthError("lexicon of '" + code_ + "' is not bijective at '" + lexicon_[i] + "'");
    }
  }
  if (formality_forms_) {
    if (lexicon_.empty() || formality_forms_->informal != lexicon_[kSecondPersonToken]) {
      throw SynthError("informal form of '" + code_ + "' must be its second-person lexicon entry");
    }
    if (!inverse_.emplace(formality_forms_->formal, kSecondPersonToken).second) {
      throw SynthError("formal form of '" + code_ + "' collides with a lexicon entry");
    }
  }
}

std::optional<int> Language::base_of(std::string_view surface) const {
  auto it = inverse_.find(std::string(surface));
  if (it == inverse_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> Language::surface_words() const {
  std::vector<std::string> out = lexicon_;
  if (formality_forms_) out.push_back(formality_forms_->formal);
  return out;
}

std::span<const std::string_view> default_language_names() { return kNames; }

std::vector<Language> make_family(const FamilySpec& spec) {
  validate_relatedness(spec);
  const int n = spec.n_languages;
  const int v = spec.base_vocab_size;

  std::vector<std::string> names = spec.names;
  if (names.empty()) {
    if (n > static_cast<int>(kNames.size())) throw SynthError("too many languages for default names");
    for (int i = 0; i < n; ++i) names.emplace_back(kNames[i]);
  }
  if (static_cast<int>(names.size()) != n) throw SynthError("names must list every language");
  std::unordered_set<std::string> name_set(names.begin(), names.end());
  if (static_cast<int>(name_set.size()) != n) throw SynthError("language names must be unique");

  std::vector<std::string> codes = spec.codes;
  if (codes.empty()) {
    std::unordered_set<std::string> taken;
    for (const auto& nm : names) {
      codes.push_back(default_code(nm, taken));
      taken.insert(codes.back());
    }
  }
  if (static_cast<int>(codes.size()) != n) throw SynthError("codes must list every language");

  const auto label = assign_groups(spec);

  Eigen::MatrixXd measured = Eigen::MatrixXd::Identity(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      int same = 0;
      for (int t = 0; t < v; ++t) same += label[i][t] == label[j][t];
      measured(i, j) = measured(j, i) = static_cast<double>(same) / v;
    }
  double worst = 0.0;
  int wi = -1, wj = -1;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double gap = std::abs(measured(i, j) - spec.relatedness(i, j));
      if (gap > worst) {
        worst = gap;
        wi = i;
        wj = j;
      }
    }
  if (worst > kRelatednessTolerance) {
    std::ostringstream msg;
    msg << "infeasible relatedness: pair (" << codes[wi] << ", " << codes[wj] << ") reached "
        << measured(wi, wj) << " for target " << spec.relatedness(wi, wj);
    throw SynthError(msg.str());
  }

  std::vector<Orthography> ortho;
  for (int l = 0; l < n; ++l) ortho.push_back(make_orthography(derive_seed(spec.seed, 1000 + l)));
  WordFactory words(derive_seed(spec.seed, 0xbb67ae85));

  std::vector<std::vector<std::string>> lexicon(n, std::vector<std::string>(v));
  std::vector<std::string> formal(n);
  for (int t = 0; t < v; ++t) {
    std::unordered_map<int, std::string> form_of_label;
    std::unordered_map<int, std::string> formal_of_label;
    for (int l = 0; l < n; ++l) {
      auto [it, inserted] = form_of_label.try_emplace(label[l][t]);
      if (inserted) {
        it->second = words.fresh(ortho[l]);
        if (t == kSecondPersonToken) formal_of_label[label[l][t]] = words.fresh(ortho[l]);
      }
      lexicon[l][t] = it->second;
      if (t == kSecondPersonToken) formal[l] = formal_of_label[label[l][t]];
    }
  }

  std::vector<Language> out;
  out.reserve(n);
  for (int l = 0; l < n; ++l) {
    const OrderRule rule = spec.order_rules.empty() ? OrderRule::identity : spec.order_rules.at(l);
    const bool tv = spec.tv_distinction.empty() ? true : spec.tv_distinction.at(l);
    std::optional<FormalityForms> forms;
    if (tv) forms = FormalityForms{formal[l], lexicon[l][kSecondPersonToken]};
    out.emplace_back(codes[l], names[l], std::nullopt, std::move(lexicon[l]), rule, std::move(forms),
                     spec.grammar.final_punct);
  }
  return out;
}

std::vector<BaseSentence> sample_base(const FamilySpec& spec, std::size_t count,
                                      std::uint64_t seed) {
  const auto& g = spec.grammar;
  const int content_vocab = spec.base_vocab_size - 1;
  std::vector<std::vector<int>> next;
  if (g.successors > 0 && g.successor_prob > 0.0) {
    Rng table(derive_seed(spec.seed, 0x510e527f));
    next.resize(content_vocab);
    for (auto& row : next)
      for (int k = 0; k < g.successors; ++k) row.push_back(1 + static_cast<int>(table.below(content_vocab)));
  }
  Rng rng(derive_seed(seed, 0x3c6ef372));
  std::vector<BaseSentence> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    BaseSentence s;
    const int len = static_cast<int>(rng.between(g.min_len, g.max_len));
    const bool second_person = rng.bernoulli(g.second_person_prob);
    const int content = second_person ? len - 1 : len;
    for (int i = 0; i < content; ++i) {
      if (i > 0 && !next.empty() && rng.bernoulli(g.successor_prob)) {
        const auto& row = next[s.tokens.back() - 1];
        s.tokens.push_back(row[rng.below(row.size())]);
      } else {
        s.tokens.push_back(1 + static_cast<int>(rng.below(content_vocab)));
      }
    }
    if (second_person) {
      const auto pos = static_cast<std::ptrdiff_t>(rng.below(s.tokens.size() + 1));
      s.tokens.insert(s.tokens.begin() + pos, kSecondPersonToken);
      s.register_ = rng.bernoulli(g.formal_prob) ? Register::formal : Register::informal;
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string render(const BaseSentence& sentence, const Language& language) {
  std::vector<std::string> words;
  words.reserve(sentence.tokens.size());
  const auto& lex = language.lexicon();
  for (int t : sentence.tokens) {
    if (t < 0 || t >= static_cast<int>(lex.size())) {
      throw SynthError("token " + std::to_string(t) + " is outside the lexicon of '" +
                       language.code() + "'");
    }
    if (t == kSecondPersonToken && language.formality_forms() &&
        sentence.register_ == Register::formal) {
      words.push_back(language.formality_forms()->formal);
    } else {
      words.push_back(lex[t]);
    }
  }
  apply_order(words, language.order_rule());
  std::string out = join(words, " ");
  if (!out.empty()) out += language.final_punct();
  return out;
}

BaseSentence oracle_back(std::string_view text, const Language& language) {
  auto words = split_whitespace(text);
  const auto& punct = language.final_punct();
  if (!words.empty() && !punct.empty() && words.back().size() > punct.size() &&
      words.back().ends_with(punct)) {
    words.back().resize(words.back().size() - punct.size());
  }
  BaseSentence s;
  for (std::size_t i = 0; i < words.size(); ++i) {
    auto id = language.base_of(words[i]);
    if (!id) {
      throw SynthError("unparseable token '" + words[i] + "' at position " + std::to_string(i) +
                       " for language '" + language.code() + "'");
    }
    if (*id == kSecondPersonToken) {
      const bool is_formal =
          language.formality_forms() && words[i] == language.formality_forms()->formal;
      s.register_ = is_formal ? Register::formal : Register::informal;
    }
    s.tokens.push_back(*id);
  }
  std::vector<int> ordered = s.tokens;
  // Order rules are involutions; apply the same permutation to the ids.
  switch (language.order_rule()) {
    case OrderRule::identity:
      break;
    case OrderRule::reverse:
      std::reverse(ordered.begin(), ordered.end());
      break;
    case OrderRule::swap_pairs:
      for (std::size_t i = 0; i + 1 < ordered.size(); i += 2) std::swap(ordered[i], ordered[i + 1]);
      break;
  }
  s.tokens = std::move(ordered);
  return s;
}

std::string oracle_translate(std::string_view text, const Language& src, const Language& tgt) {
  return render(oracle_back(text, src), tgt);
}

Language make_dialect(const Language& base, double divergence, std::uint64_t seed,
                      std::span<const Language> avoid, std::optional<std::string> dialect_word) {
  if (!(divergence > 0.0 && divergence < 1.0)) {
    throw SynthError("dialect divergence must lie strictly between 0 and 1");
  }
  const auto size = base.lexicon().size();
  const auto changed = static_cast<std::size_t>(std::ceil(divergence * size - 1e-9));

  Rng rng(derive_seed(seed, 0xa54ff53a));
  std::vector<std::size_t> ids(size);
  for (std::size_t i = 0; i < size; ++i) ids[i] = i;
  rng.shuffle(ids);
  ids.resize(changed);

  WordFactory words(derive_seed(seed, 0x510e527f));
  for (const auto& w : base.surface_words()) words.reserve(w);
  for (const auto& lang : avoid)
    for (const auto& w : lang.surface_words()) words.reserve(w);
  const Orthography ortho = make_orthography(derive_seed(seed, 0x9b05688c));

  std::vector<std::string> lexicon = base.lexicon();
  for (std::size_t id : ids) lexicon[id] = words.fresh(ortho);

  std::optional<FormalityForms> forms;
  if (base.formality_forms()) {
    forms = FormalityForms{base.formality_forms()->formal, lexicon[kSecondPersonToken]};
  }
  const std::string word =
      dialect_word ? *dialect_word : std::string(kDialectWords[rng.below(kDialectWords.size())]);
  std::string lowered;
  for (char c : word) lowered += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return Language(base.code() + "-" + lowered.substr(0, 1), word + " " + base.name(), base.code(),
                  std::move(lexicon), base.order_rule(), std::move(forms), base.final_punct());
}

double lexicon_overlap(const Language& a, const Language& b) {
  const auto& la = a.lexicon();
  const auto& lb = b.lexicon();
  if (la.size() != lb.size()) throw SynthError("lexicons cover different base vocabularies");
  if (la.empty()) return 1.0;
  std::size_t same = 0;
  for (std::size_t i = 0; i < la.size(); ++i) same += la[i] == lb[i];
  return static_cast<double>(same) / static_cast<double>(la.size());
}

}  // namespace promptmt::synth
