// Copyright 2026 The refgame Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "refgame/corpus.hpp"

using namespace refgame;
namespace fs = std::filesystem;

namespace {

// Every terminal string the grammar derives, by breadth-first expansion of
// the leftmost nonterminal. Only usable for finite languages.
std::set<std::vector<std::string>> enumerate_language(const Grammar& g, std::size_t max_len) {
  std::set<std::vector<std::string>> out;
  std::vector<std::vector<std::string>> frontier{{g.start()}};
  while (!frontier.empty()) {
    std::vector<std::vector<std::string>> next;
    for (const auto& form : frontier) {
      auto it = std::find_if(form.begin(), form.end(),
                             [&](const std::string& s) { return g.is_nonterminal(s); });
      if (it == form.end()) {
        out.insert(form);
        continue;
      }
      const auto at = static_cast<std::size_t>(it - form.begin());
      for (const auto& rule : g.rules()) {
        if (rule.lhs != *it) continue;
        std::vector<std::string> f(form.begin(), form.begin() + static_cast<long>(at));
        f.insert(f.end(), rule.rhs.begin(), rule.rhs.end());
        f.insert(f.end(), form.begin() + static_cast<long>(at) + 1, form.end());
        if (f.size() <= max_len) next.push_back(std::move(f));
      }
    }
    frontier = std::move(next);
  }
  return out;
}

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "refgame_unit";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("generate_dataset: gold answer appears in the passage") {
  WorldSpec spec;
  spec.n_entities = 2;
  spec.n_attributes = 2;
  spec.facts_per_passage = 2;
  spec.distractor_sentences = 1;
  spec.seed = 7;
  World world(spec);
  const auto data = generate_dataset(world, 1);
  REQUIRE(data.size() == 1);
  const auto& ex = data[0];
  REQUIRE(ex.gold_answer.size() == 1);
  CHECK(std::find(ex.passage.begin(), ex.passage.end(), ex.gold_answer[0]) != ex.passage.end());
}

TEST_CASE("generate_dataset is deterministic for a seed") {
  World world(WorldSpec{});
  CHECK(generate_dataset(world, 50) == generate_dataset(world, 50));
  CHECK(generate_dataset(world, 50, 3) == generate_dataset(world, 50, 3));
  CHECK_FALSE(generate_dataset(world, 50, 3) == generate_dataset(world, 50, 4));
}

TEST_CASE("WorldSpec rejects impossible passages") {
  WorldSpec spec;
  spec.n_entities = 2;
  spec.n_attributes = 2;
  spec.facts_per_passage = 5;
  CHECK_THROWS_AS(spec.validate(), UsageError);
  CHECK_THROWS_AS(World{spec}, UsageError);
}

TEST_CASE("every fact in the table is recoverable by (entity, attribute) lookup") {
  World world(WorldSpec{});
  for (const auto& ex : generate_dataset(world, 300)) {
    const TokenId ent = ex.question[5], attr = ex.question[3];
    int hits = 0;
    for (const auto& f : ex.fact_table) {
      if (f.entity == ent && f.attribute == attr) {
        ++hits;
        CHECK(ex.gold_answer == TokenSequence{f.value});
        const auto s = world.render_fact(f);
        CHECK(std::search(ex.passage.begin(), ex.passage.end(), s.begin(), s.end()) !=
              ex.passage.end());
      }
    }
    CHECK(hits == 1);
  }
}

TEST_CASE("grammar: generated sentences accepted, function-word deletions rejected") {
  World world(WorldSpec{});
  const auto& g = world.grammar();
  const auto& v = world.vocab();
  int n = 0;
  for (const auto& ex : generate_dataset(world, 250)) {
    for (const auto& s : split_sentences(ex.passage, v)) {
      ++n;
      REQUIRE(is_grammatical(s, g, v));
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (!g.function_words().count(v.token(s[i]))) continue;
        TokenSequence cut = s;
        cut.erase(cut.begin() + static_cast<long>(i));
        REQUIRE_FALSE(is_grammatical(cut, g, v));
      }
    }
    REQUIRE(is_grammatical(ex.question, g, v));
  }
  CHECK(n >= 1000);
  CHECK_FALSE(is_grammatical(TokenSequence{}, g, v));
}

TEST_CASE("grammar: recognizer agrees with exhaustive derivation on a small world") {
  WorldSpec spec;
  spec.n_entities = 2;
  spec.n_attributes = 2;
  spec.n_values_per_attribute = 2;
  spec.facts_per_passage = 1;
  spec.distractor_sentences = 1;
  World world(spec);
  const auto& g = world.grammar();
  const auto language = enumerate_language(g, 10);
  REQUIRE_FALSE(language.empty());
  for (const auto& s : language) CHECK(g.recognizes(s));

  // Stripped sentences are never in the language.
  for (const auto& s : language) {
    std::vector<std::string> stripped;
    for (const auto& w : s) {
      if (!g.function_words().count(w)) stripped.push_back(w);
    }
    CHECK_FALSE(language.count(stripped));
    CHECK_FALSE(g.recognizes(stripped));
  }

  // Random strings over the terminals: recognizer == membership.
  const auto terms = g.terminals();
  oracle::Gen gen(77);
  for (int trial = 0; trial < 3000; ++trial) {
    std::vector<std::string> s(static_cast<std::size_t>(gen.uniform_int(0, 8)));
    for (auto& w : s) w = terms[static_cast<std::size_t>(gen.uniform_int(0, int(terms.size()) - 1))];
    REQUIRE(g.recognizes(s) == (language.count(s) > 0));
  }
}

TEST_CASE("grammatical_error_rate") {
  World world(WorldSpec{});
  const auto& g = world.grammar();
  const auto& v = world.vocab();
  const auto data = generate_dataset(world, 20);
  for (const auto& ex : data) CHECK(grammatical_error_rate(ex.passage, g, v) == 0.0);

  // Reverse every sentence body: a swap-everything scramble.
  for (const auto& ex : data) {
    TokenSequence scrambled;
    for (auto s : split_sentences(ex.passage, v)) {
      std::reverse(s.begin(), s.end() - 1);
      scrambled.insert(scrambled.end(), s.begin(), s.end());
    }
    CHECK(grammatical_error_rate(scrambled, g, v) > 0.0);
  }

  // Corrupt exactly half the sentences.
  const auto sentences = split_sentences(data[0].passage, v);
  TokenSequence text;
  for (std::size_t i = 0; i < 4; ++i) {
    auto s = sentences[i % sentences.size()];
    if (i % 2 == 1) s.erase(s.begin());
    text.insert(text.end(), s.begin(), s.end());
  }
  CHECK(grammatical_error_rate(text, g, v) == 0.5);
  CHECK(grammatical_error_rate(TokenSequence{}, g, v) == 0.0);
}

TEST_CASE("grammar text round trip") {
  World world(WorldSpec{});
  const auto text = world.grammar().to_text();
  const auto g2 = Grammar::parse(text);
  CHECK(g2.to_text() == text);
  CHECK(g2.version() == world.grammar().version());
}

TEST_CASE("jsonl round trip and errors") {
  World world(WorldSpec{});
  const auto data = generate_dataset(world, 100);
  const auto path = temp_path("roundtrip.jsonl");
  save_jsonl(data, world.vocab(), path);
  CHECK(load_jsonl(path, world.vocab()) == data);

  const auto empty = temp_path("empty.jsonl");
  std::ofstream(empty).close();
  CHECK(load_jsonl(empty, world.vocab()).empty());

  const auto bad = temp_path("bad.jsonl");
  {
    std::ifstream in(path);
    std::string first, second;
    std::getline(in, first);
    std::getline(in, second);
    const auto at = second.find("\"question\"");
    REQUIRE(at != std::string::npos);
    second.replace(at, 10, "\"querstion\"");
    std::ofstream out(bad);
    out << first << "\n" << second << "\n";
  }
  try {
    load_jsonl(bad, world.vocab());
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
}

TEST_CASE("bootstrap summaries keep passage order and never invent tokens") {
  World world(WorldSpec{});
  Rng rng(5);
  SummaryBootstrap cfg;
  for (const auto& ex : generate_dataset(world, 200)) {
    const auto s = bootstrap_summary(world, ex.passage, cfg, rng);
    CHECK_FALSE(s.empty());
    // Subsequence of the passage.
    std::size_t j = 0;
    for (TokenId t : s) {
      while (j < ex.passage.size() && ex.passage[j] != t) ++j;
      REQUIRE(j < ex.passage.size());
      ++j;
    }
  }
}
