// SPDX-FileCopyrightText: Copyright (c) 2026 The promptmt Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "oracles.hpp"
#include "promptmt/ingest.hpp"
#include "promptmt/synthlang.hpp"

using namespace promptmt;
using namespace promptmt::ingest;

namespace {

std::string temp_file(const std::string& name, const std::string& content) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream(path, std::ios::binary) << content;
  return path.string();
}

struct Family {
  std::vector<synth::Language> langs;
  std::map<std::string, std::vector<std::string>> train, test;
};

Family make_texts(double overlap, int train_n, int test_n) {
  synth::FamilySpec spec;
  spec.n_languages = 4;
  spec.base_vocab_size = 120;
  spec.relatedness = Eigen::MatrixXd::Constant(4, 4, overlap);
  spec.relatedness.diagonal().setOnes();
  spec.seed = 31;
  Family f;
  f.langs = synth::make_family(spec);
  for (std::size_t l = 0; l < f.langs.size(); ++l) {
    for (const auto& s : synth::sample_base(spec, train_n, 100 + l))
      f.train[f.langs[l].code()].push_back(synth::render(s, f.langs[l]));
    for (const auto& s : synth::sample_base(spec, test_n, 200 + l))
      f.test[f.langs[l].code()].push_back(synth::render(s, f.langs[l]));
  }
  return f;
}

}  // namespace

TEST_CASE("default constants") {
  CHECK(kLangIdThreshold == 0.95);
  CHECK(kMaxSequenceTokens == 200);
}

TEST_CASE("parallel reader skips malformed lines") {
  const auto path = temp_file("promptmt_par.tsv", "a b\tc d\nno tab here\nx\ty\tz\n\tempty source\ne f\tg\n");
  CorpusReader reader(path, CorpusKind::parallel, "en", "fr", "unit");
  std::vector<Example> got;
  while (auto ex = reader.next()) got.push_back(*ex);
  REQUIRE(got.size() == 2);
  CHECK(got[0].source_text == "a b");
  CHECK(got[0].target_text == "c d");
  CHECK(got[0].source_lang == "en");
  CHECK(got[0].target_lang == "fr");
  CHECK(got[0].provenance == "unit");
  CHECK(got[0].task == Task::translate);
  CHECK(got[1].source_text == "e f");
  CHECK(reader.skipped() == 3);
  CHECK(reader.diagnostics().size() == 3);
}

TEST_CASE("monolingual reader builds infill items") {
  const auto path = temp_file("promptmt_mono.txt", "one two\r\n\nthree\n");
  const auto res = read_corpus(path, CorpusKind::monolingual, "de");
  REQUIRE(res.examples.size() == 2);
  CHECK(res.examples[0].source_text == "one two");
  CHECK(res.examples[0].task == Task::infill);
  CHECK(res.examples[0].source_lang == "de");
  CHECK(res.examples[0].target_lang == "de");
  CHECK_FALSE(res.examples[0].target_text.has_value());
  CHECK(res.skipped == 1);
}

TEST_CASE("corpus write and read round trip") {
  std::vector<Example> ex = {{"a b", std::string("c"), Task::translate, "x", "y", "p"},
                             {"d", std::string("e f"), Task::translate, "x", "y", "p"}};
  const auto path = (std::filesystem::temp_directory_path() / "promptmt_rt.tsv").string();
  write_corpus(path, ex, CorpusKind::parallel);
  const auto back = read_corpus(path, CorpusKind::parallel, "x", "y", "p");
  CHECK(back.examples == ex);
  CHECK_THROWS_AS(read_corpus("/nonexistent/file", CorpusKind::parallel, "x", "y"), IngestError);
}

TEST_CASE("character n-grams") {
  CHECK(char_ngrams("ab", 3) == std::vector<std::string>{" ab", "ab "});
  CHECK(char_ngrams("a  b", 2) == std::vector<std::string>{" a", "a ", " b", "b "});
}

TEST_CASE("langid accuracy on synthetic languages") {
  const auto f = make_texts(0.3, 400, 200);
  const auto model = train_langid(f.train);
  int right = 0, total = 0;
  for (const auto& [lang, texts] : f.test)
    for (const auto& t : texts) {
      right += model.classify(t) == lang;
      ++total;
    }
  CHECK(static_cast<double>(right) / total >= 0.99);
  const auto p = model.posterior(f.test.begin()->second.front());
  CHECK(p.sum() == doctest::Approx(1.0));
}

TEST_CASE("langid posterior matches a brute-force recomputation") {
  const auto f = make_texts(0.8, 100, 30);
  const auto model = train_langid(f.train);
  const oracle::NaiveBayes nb(f.train, kLangIdOrder, kLangIdSmoothing);
  for (const auto& [lang, texts] : f.test)
    for (const auto& t : texts)
      for (const auto& l : model.languages())
        CHECK(std::abs(model.posterior_of(t, l) - nb.posterior(t, l)) <= 1e-9);
}

TEST_CASE("langid filter equals classify-and-compare") {
  const auto f = make_texts(0.8, 100, 60);
  const auto model = train_langid(f.train);
  const oracle::NaiveBayes nb(f.train, kLangIdOrder, kLangIdSmoothing);
  // Mixed-language pool claimed to be the first language.
  const std::string expected = f.langs[0].code();
  std::vector<Example> pool;
  for (const auto& [lang, texts] : f.test)
    for (const auto& t : texts) pool.push_back({t, std::nullopt, Task::infill, expected, expected, lang});
  for (double threshold : {0.5, kLangIdThreshold, 0.999}) {
    FilterStats stats;
    const auto kept = filter_by_langid(pool, model, expected, threshold, Side::source, &stats);
    std::vector<Example> want;
    for (const auto& ex : pool)
      if (nb.posterior(ex.source_text, expected) >= threshold) want.push_back(ex);
    CHECK(kept == want);
    CHECK(stats.kept == want.size());
    CHECK(stats.kept + stats.discarded == pool.size());
  }
}

TEST_CASE("langid filter on the target side") {
  const auto f = make_texts(0.3, 200, 10);
  const auto model = train_langid(f.train);
  const auto& a = f.langs[0].code();
  const auto& b = f.langs[1].code();
  std::vector<Example> pool;
  for (std::size_t i = 0; i < 10; ++i) {
    pool.push_back({f.test.at(a)[i], f.test.at(b)[i], Task::translate, a, b, ""});
    pool.push_back({f.test.at(a)[i], f.test.at(a)[i], Task::translate, a, b, ""});
  }
  const auto kept = filter_by_langid(pool, model, b, kLangIdThreshold, Side::target);
  CHECK(kept.size() >= 5);
  for (const auto& ex : kept) {
    CHECK(model.posterior_of(*ex.target_text, b) >= kLangIdThreshold);
    CHECK(ex.target_text != ex.source_text);
  }
}

TEST_CASE("length rule drops in training and truncates at inference") {
  auto words = [](int n) {
    std::string s;
    for (int i = 0; i < n; ++i) s += (i ? " w" : "w") + std::to_string(i);
    return s;
  };
  const std::vector<Example> ex = {{words(200), words(3), Task::translate, "a", "b", ""},
                                   {words(201), words(3), Task::translate, "a", "b", ""},
                                   {words(3), words(201), Task::translate, "a", "b", ""},
                                   {words(198), words(3), Task::translate, "a", "b", ""}};
  FilterStats st;
  const auto train = length_filter(ex, kMaxSequenceTokens, Phase::training, 0, &st);
  CHECK(train.size() == 2);
  CHECK(st.discarded == 2);
  const auto prompted = length_filter(ex, kMaxSequenceTokens, Phase::training, 3);
  CHECK(prompted.size() == 0);
  const auto inf = length_filter(ex, kMaxSequenceTokens, Phase::inference, 3);
  REQUIRE(inf.size() == 4);
  CHECK(split_whitespace(inf[1].source_text).size() == 197);
  CHECK(inf[2].target_text == ex[2].target_text);
  CHECK_THROWS_AS(length_filter(ex, 0, Phase::training), IngestError);
}
