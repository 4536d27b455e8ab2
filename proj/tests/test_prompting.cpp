// SPDX-FileCopyrightText: Copyright (c) 2026 The promptmt Authors
// SPDX-License-Identifier: Apache-2.0

#include <set>

#include "doctest.h"
#include "promptmt/pipeline.hpp"
#include "promptmt/prompting.hpp"

using namespace promptmt;
using namespace promptmt::prompting;

namespace {

LanguageMap toy_languages() {
  LanguageMap m;
  auto add = [&](const std::string& code, const std::string& name, std::optional<std::string> parent) {
    m.emplace(code, synth::Language(code, name, parent, {"a" + code, "b" + code}, synth::OrderRule::identity,
                                    std::nullopt, "."));
  };
  add("ve", "Velar", std::nullopt);
  add("nv", "Northern Velar", std::string("ve"));
  add("me", "Merren", std::nullopt);
  return m;
}

ingest::Example translate_to(const std::string& target) {
  return {"hello there", std::string("x"), ingest::Task::translate, "me", target, ""};
}

}  // namespace

TEST_CASE("templates end in a colon and have one slot") {
  for (const auto* t : {&kTranslateTemplate, &kInfillTemplate}) {
    const auto s = t->render("Velar");
    CHECK(s.back() == ':');
    CHECK(s.find("Velar") != std::string::npos);
    CHECK(s.find("Velar") == s.rfind("Velar"));
  }
}

TEST_CASE("prompt, infill and tag renderings") {
  const auto langs = toy_languages();
  const ConditioningMode prompt{Variant::prompt}, tag{Variant::tag};
  CHECK(render_conditioning(translate_to("ve"), prompt, langs) == "Translate to Velar: hello there");
  ingest::Example infill{"a <mask> c", std::nullopt, ingest::Task::infill, "ve", "ve", ""};
  CHECK(render_conditioning(infill, prompt, langs) == "Infill in Velar: a <mask> c");
  CHECK(render_conditioning(infill, tag, langs) == "Infill in Velar: a <mask> c");
  CHECK(render_conditioning(translate_to("ve"), tag, langs) == "<2ve> hello there");
  CHECK(tag_token("ve") == "<2ve>");
}

TEST_CASE("dialect names") {
  const auto langs = toy_languages();
  const ConditioningMode prompt{Variant::prompt};
  CHECK(render_conditioning(translate_to("nv"), prompt, langs, true) == "Translate to Northern Velar: hello there");
  CHECK(render_conditioning(translate_to("nv"), prompt, langs, false) == "Translate to Velar: hello there");
  // no parent: own name either way
  CHECK(render_conditioning(translate_to("me"), prompt, langs, true) == "Translate to Merren: hello there");
  CHECK(prompt_name(langs, "nv", false) == "Velar");
  CHECK_THROWS_AS(prompt_name(langs, "zz", false), PromptError);
}

TEST_CASE("missing tag token is an error") {
  const auto langs = toy_languages();
  pipeline::Vocabulary vocab;
  vocab.add("<2ve>");
  const ConditioningMode tag{Variant::tag};
  CHECK_NOTHROW(render_conditioning(translate_to("ve"), tag, langs, false, &vocab));
  CHECK_THROWS_AS(render_conditioning(translate_to("me"), tag, langs, false, &vocab), PromptError);
}

TEST_CASE("conditioning is injective and modes do not mix") {
  const auto langs = toy_languages();
  for (auto variant : {Variant::prompt, Variant::tag}) {
    std::set<std::string> seen;
    for (const auto& [code, lang] : langs) {
      const auto s = render_conditioning(translate_to(code), {variant}, langs, true);
      CHECK(seen.insert(s).second);
      if (variant == Variant::prompt) {
        CHECK(s.find("<2") == std::string::npos);
      } else {
        for (const auto& [c2, l2] : langs) CHECK(s.find(l2.name()) == std::string::npos);
      }
    }
  }
}

TEST_CASE("colon split") {
  CHECK(strip_leading_prompt("Su majestad: hola") == " hola");
  CHECK(strip_leading_prompt("no colon here") == "no colon here");
  CHECK(strip_leading_prompt("a: b: c") == " b: c");
  CHECK(strip_leading_prompt("") == "");
}

TEST_CASE("formality prompt injection") {
  CHECK(inject_formality_prompt("How are you?", "Your majesty:") == "Your majesty: How are you?");
  CHECK(inject_formality_prompt("", "Your majesty:") == "Your majesty: ");
  CHECK_THROWS_AS(inject_formality_prompt("x", ""), PromptError);
  for (const std::string text : {"a b c", "", "well then."})
    CHECK(strip_leading_prompt(inject_formality_prompt(text, "Majesty:")) == " " + text);
}

TEST_CASE("variant names") {
  CHECK(variant_from_string("tag") == Variant::tag);
  CHECK(variant_from_string("prompt") == Variant::prompt);
  CHECK(to_string(Variant::tag) == "tag");
  CHECK_THROWS_AS(variant_from_string("tags!"), PromptError);
}
