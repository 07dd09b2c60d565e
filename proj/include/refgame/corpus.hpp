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

#pragma once

// The synthetic QA world: a fact-table world rendered through a small
// context-free grammar, so grammaticality of any token string is decidable
// exactly, plus dataset generation and JSONL storage.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "refgame/common.hpp"
#include "refgame/grammar.hpp"
#include "refgame/textmetrics.hpp"
#include "refgame/vocab.hpp"

namespace refgame {

struct WorldSpec {
  int n_entities = 6;
  int n_attributes = 3;
  int n_values_per_attribute = 4;
  int facts_per_passage = 2;
  int distractor_sentences = 3;
  std::uint64_t seed = 7;

  // Throws UsageError when a field is out of range or an entity pool is
  // smaller than the number of sentences drawn from it.
  void validate() const;
};

struct Fact {
  TokenId entity = -1;
  TokenId attribute = -1;
  TokenId value = -1;
  friend bool operator==(const Fact&, const Fact&) = default;
};

struct QAExample {
  TokenSequence passage;
  TokenSequence question;
  TokenSequence gold_answer;
  std::vector<Fact> fact_table;
  friend bool operator==(const QAExample&, const QAExample&) = default;
};

// Versioned stopword inventory shipped with the project.
textmetrics::StopwordList default_stopwords();

// Vocabulary, grammar and lookup tables for one WorldSpec.
//
// Entities come in two disjoint pools of n_entities names each: the
// questioned pool, whose facts make up a passage's fact table, and the
// distractor pool, used only by distractor sentences.
class World {
 public:
  explicit World(WorldSpec spec);
  World(WorldSpec spec, textmetrics::StopwordList stopwords);

  const WorldSpec& spec() const { return spec_; }
  const Vocabulary& vocab() const { return vocab_; }
  const Grammar& grammar() const { return grammar_; }
  const textmetrics::StopwordList& stopwords() const { return stopwords_; }

  const std::vector<TokenId>& entities() const { return entities_; }
  const std::vector<TokenId>& distractor_entities() const { return distractor_entities_; }
  const std::vector<TokenId>& attributes() const { return attributes_; }
  const std::vector<TokenId>& values(std::size_t attribute_index) const {
    return values_.at(attribute_index);
  }
  std::vector<TokenId> all_values() const;

  bool is_entity(TokenId t) const;  // either pool
  std::optional<std::size_t> attribute_index(TokenId t) const;
  // Index of the attribute whose closed vocabulary contains `t`.
  std::optional<std::size_t> value_attribute(TokenId t) const;

  TokenId period() const { return period_; }
  TokenId question_mark() const { return question_mark_; }
  bool is_terminator(TokenId t) const { return t == period_ || t == question_mark_; }

  // "the <attribute> of <entity> is <value> ."
  TokenSequence render_fact(const Fact& f) const;
  // "what is the <attribute> of <entity> ?"
  TokenSequence render_question(TokenId entity, TokenId attribute) const;

 private:
  WorldSpec spec_;
  Vocabulary vocab_;
  Grammar grammar_;
  textmetrics::StopwordList stopwords_;
  std::vector<TokenId> entities_, distractor_entities_, attributes_;
  std::vector<std::vector<TokenId>> values_;
  TokenId the_ = -1, of_ = -1, is_ = -1, what_ = -1, period_ = -1, question_mark_ = -1;
};

// Deterministic in world.spec().seed. Each passage renders its fact table
// plus distractor sentences in shuffled order; the question targets a
// uniformly chosen fact.
std::vector<QAExample> generate_dataset(const World& world, std::size_t n_examples);
// Same, with an explicit seed overriding the spec's.
std::vector<QAExample> generate_dataset(const World& world, std::size_t n_examples,
                                        std::uint64_t seed);

bool is_grammatical(std::span<const TokenId> sentence, const Grammar& grammar,
                    const Vocabulary& vocab);

// Splits at terminal punctuation (a trailing unterminated fragment counts
// as a sentence) and returns the fraction of sentences the grammar rejects.
double grammatical_error_rate(std::span<const TokenId> text, const Grammar& grammar,
                              const Vocabulary& vocab);

std::vector<TokenSequence> split_sentences(std::span<const TokenId> text,
                                           const Vocabulary& vocab);

// JSONL records: {"passage", "question", "answer", "facts": [[e, a, v], ...]}.
void save_jsonl(std::span<const QAExample> examples, const Vocabulary& vocab,
                const std::filesystem::path& path);
std::vector<QAExample> load_jsonl(const std::filesystem::path& path, const Vocabulary& vocab);

// Warm-start targets for the speaker: each passage sentence is kept with
// `keep_probability` (at least one survives, order preserved); a
// `noisy_fraction` of summaries additionally lose each token with a
// probability drawn from [min_deletion, max_deletion].
struct SummaryBootstrap {
  double keep_probability = 0.5;
  double noisy_fraction = 0.4;
  double min_deletion = 0.1;
  double max_deletion = 0.5;
};

TokenSequence bootstrap_summary(const World& world, std::span<const TokenId> passage,
                                const SummaryBootstrap& cfg, Rng& rng);

}  // namespace refgame
