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

#include "refgame/corpus.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace refgame {
namespace {

constexpr std::array<std::string_view, 24> kEntityNames = {
    "alice", "bob",    "carol",  "dave",   "erin",   "frank", "grace",  "heidi",
    "ivan",  "judy",   "karl",   "laura",  "mallory", "niaj", "olivia", "peggy",
    "quinn", "rupert", "sybil",  "trent",  "ursula", "victor", "walter", "yvonne"};

struct AttributeNames {
  std::string_view name;
  std::array<std::string_view, 8> values;
};

constexpr std::array<AttributeNames, 8> kAttributes = {{
    {"color", {"red", "blue", "green", "yellow", "purple", "orange", "black", "white"}},
    {"size", {"small", "large", "tiny", "huge", "medium", "short", "tall", "wide"}},
    {"city", {"paris", "rome", "oslo", "cairo", "lima", "tokyo", "delhi", "quito"}},
    {"pet", {"cat", "dog", "fish", "bird", "horse", "rabbit", "snake", "mouse"}},
    {"job", {"baker", "doctor", "pilot", "farmer", "teacher", "nurse", "painter", "judge"}},
    {"fruit", {"apple", "pear", "plum", "mango", "lemon", "cherry", "grape", "melon"}},
    {"sport", {"tennis", "golf", "rugby", "hockey", "chess", "boxing", "rowing", "skiing"}},
    {"shape", {"circle", "square", "star", "cube", "cone", "ring", "oval", "arrow"}},
}};

std::string entity_name(std::size_t i) {
  if (i < kEntityNames.size()) return std::string(kEntityNames[i]);
  return "entity" + std::to_string(i);
}

std::string attribute_name(std::size_t a) {
  if (a < kAttributes.size()) return std::string(kAttributes[a].name);
  return "attr" + std::to_string(a);
}

std::string value_name(std::size_t a, std::size_t v) {
  if (a < kAttributes.size() && v < kAttributes[a].values.size()) {
    return std::string(kAttributes[a].values[v]);
  }
  return "val" + std::to_string(a) + "x" + std::to_string(v);
}

const char kStopwordsText[] =
#include "stopwords.inc"
    ;

}  // namespace

textmetrics::StopwordList default_stopwords() {
  std::vector<std::string> words;
  std::istringstream in(kStopwordsText);
  std::string line;
  while (std::getline(in, line)) {
    auto parts = split_words(line);
    if (parts.empty() || parts.front().starts_with('#')) continue;
    words.push_back(parts.front());
  }
  return textmetrics::StopwordList(std::move(words));
}

void WorldSpec::validate() const {
  if (n_entities < 1) throw UsageError("WorldSpec.n_entities must be >= 1");
  if (n_attributes < 1) throw UsageError("WorldSpec.n_attributes must be >= 1");
  if (n_values_per_attribute < 2) throw UsageError("WorldSpec.n_values_per_attribute must be >= 2");
  if (facts_per_passage < 1) throw UsageError("WorldSpec.facts_per_passage must be >= 1");
  if (distractor_sentences < 0) throw UsageError("WorldSpec.distractor_sentences must be >= 0");
  if (facts_per_passage > n_entities) {
    throw UsageError("WorldSpec: facts_per_passage (" + std::to_string(facts_per_passage) +
                     ") exceeds n_entities (" + std::to_string(n_entities) + ")");
  }
  if (distractor_sentences > n_entities) {
    throw UsageError("WorldSpec: distractor_sentences (" + std::to_string(distractor_sentences) +
                     ") exceeds the distractor pool (" + std::to_string(n_entities) + ")");
  }
}

World::World(WorldSpec spec) : World(spec, default_stopwords()) {}

World::World(WorldSpec spec, textmetrics::StopwordList stopwords)
    : spec_(spec), stopwords_(std::move(stopwords)) {
  spec_.validate();
  const auto n_ent = static_cast<std::size_t>(spec_.n_entities);
  const auto n_attr = static_cast<std::size_t>(spec_.n_attributes);
  const auto n_val = static_cast<std::size_t>(spec_.n_values_per_attribute);

  std::vector<std::string> words = {"the", "of", "is", "what", ".", "?"};
  for (std::size_t i = 0; i < 2 * n_ent; ++i) words.push_back(entity_name(i));
  for (std::size_t a = 0; a < n_attr; ++a) words.push_back(attribute_name(a));
  for (std::size_t a = 0; a < n_attr; ++a) {
    for (std::size_t v = 0; v < n_val; ++v) words.push_back(value_name(a, v));
  }
  vocab_ = Vocabulary(words);
  if (vocab_.size() != words.size() + 4) throw Error("world vocabulary has colliding names");

  the_ = vocab_.id("the");
  of_ = vocab_.id("of");
  is_ = vocab_.id("is");
  what_ = vocab_.id("what");
  period_ = vocab_.id(".");
  question_mark_ = vocab_.id("?");
  for (std::size_t i = 0; i < n_ent; ++i) entities_.push_back(vocab_.id(entity_name(i)));
  for (std::size_t i = n_ent; i < 2 * n_ent; ++i) {
    distractor_entities_.push_back(vocab_.id(entity_name(i)));
  }
  values_.resize(n_attr);
  for (std::size_t a = 0; a < n_attr; ++a) {
    attributes_.push_back(vocab_.id(attribute_name(a)));
    for (std::size_t v = 0; v < n_val; ++v) values_[a].push_back(vocab_.id(value_name(a, v)));
  }

  grammar_.set_version("refgame-world-v1");
  grammar_.set_start("S");
  for (const char* w : {"the", "of", "is", "what"}) grammar_.add_function_word(w);
  grammar_.add_rule("S", {"DECL", "."});
  grammar_.add_rule("S", {"QUES", "?"});
  for (std::size_t a = 0; a < n_attr; ++a) {
    const auto k = std::to_string(a);
    grammar_.add_rule("DECL", {"the", "A" + k, "of", "ENT", "is", "V" + k});
  }
  grammar_.add_rule("QUES", {"what", "is", "the", "ATTR", "of", "ENT"});
  for (std::size_t a = 0; a < n_attr; ++a) {
    grammar_.add_rule("A" + std::to_string(a), {attribute_name(a)});
  }
  for (std::size_t a = 0; a < n_attr; ++a) grammar_.add_rule("ATTR", {attribute_name(a)});
  for (std::size_t i = 0; i < 2 * n_ent; ++i) grammar_.add_rule("ENT", {entity_name(i)});
  for (std::size_t a = 0; a < n_attr; ++a) {
    for (std::size_t v = 0; v < n_val; ++v) {
      grammar_.add_rule("V" + std::to_string(a), {value_name(a, v)});
    }
  }
  stopwords_.bind(vocab_);
}

std::vector<TokenId> World::all_values() const {
  std::vector<TokenId> out;
  for (const auto& vs : values_) out.insert(out.end(), vs.begin(), vs.end());
  return out;
}

bool World::is_entity(TokenId t) const {
  return std::find(entities_.begin(), entities_.end(), t) != entities_.end() ||
         std::find(distractor_entities_.begin(), distractor_entities_.end(), t) !=
             distractor_entities_.end();
}

std::optional<std::size_t> World::attribute_index(TokenId t) const {
  auto it = std::find(attributes_.begin(), attributes_.end(), t);
  if (it == attributes_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - attributes_.begin());
}

std::optional<std::size_t> World::value_attribute(TokenId t) const {
  for (std::size_t a = 0; a < values_.size(); ++a) {
    if (std::find(values_[a].begin(), values_[a].end(), t) != values_[a].end()) return a;
  }
  return std::nullopt;
}

TokenSequence World::render_fact(const Fact& f) const {
  return {the_, f.attribute, of_, f.entity, is_, f.value, period_};
}

TokenSequence World::render_question(TokenId entity, TokenId attribute) const {
  return {what_, is_, the_, attribute, of_, entity, question_mark_};
}

std::vector<QAExample> generate_dataset(const World& world, std::size_t n_examples) {
  return generate_dataset(world, n_examples, world.spec().seed);
}

std::vector<QAExample> generate_dataset(const World& world, std::size_t n_examples,
                                        std::uint64_t seed) {
  if (n_examples < 1) throw UsageError("generate_dataset: n_examples must be >= 1");
  const WorldSpec& spec = world.spec();
  spec.validate();
  Rng rng(seed);
  const auto n_ent = static_cast<std::size_t>(spec.n_entities);
  const auto n_attr = static_cast<std::size_t>(spec.n_attributes);
  const auto n_val = static_cast<std::size_t>(spec.n_values_per_attribute);

  // Distinct entities within a pool, so an entity names at most one fact.
  auto draw_facts = [&](const std::vector<TokenId>& pool, std::size_t count) {
    std::vector<std::size_t> ents(n_ent);
    for (std::size_t i = 0; i < ents.size(); ++i) ents[i] = i;
    rng.shuffle(ents);
    std::vector<Fact> facts;
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t a = rng.below(n_attr);
      facts.push_back({pool[ents[i]], world.attributes()[a], world.values(a)[rng.below(n_val)]});
    }
    return facts;
  };

  std::vector<QAExample> out;
  out.reserve(n_examples);
  for (std::size_t n = 0; n < n_examples; ++n) {
    QAExample ex;
    ex.fact_table = draw_facts(world.entities(), static_cast<std::size_t>(spec.facts_per_passage));
    auto distractors = draw_facts(world.distractor_entities(),
                                  static_cast<std::size_t>(spec.distractor_sentences));
    std::vector<TokenSequence> sentences;
    for (const auto& f : ex.fact_table) sentences.push_back(world.render_fact(f));
    for (const auto& f : distractors) sentences.push_back(world.render_fact(f));
    rng.shuffle(sentences);
    for (const auto& s : sentences) ex.passage.insert(ex.passage.end(), s.begin(), s.end());
    const Fact& target = ex.fact_table[rng.below(ex.fact_table.size())];
    ex.question = world.render_question(target.entity, target.attribute);
    ex.gold_answer = {target.value};
    out.push_back(std::move(ex));
  }
  return out;
}

bool is_grammatical(std::span<const TokenId> sentence, const Grammar& grammar,
                    const Vocabulary& vocab) {
  std::vector<std::string> words;
  words.reserve(sentence.size());
  for (TokenId t : sentence) words.push_back(vocab.token(t));
  return grammar.recognizes(words);
}

std::vector<TokenSequence> split_sentences(std::span<const TokenId> text, const Vocabulary& vocab) {
  std::vector<TokenSequence> out;
  TokenSequence cur;
  for (TokenId t : text) {
    cur.push_back(t);
    if (textmetrics::is_terminal_punctuation(vocab.token(t))) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

double grammatical_error_rate(std::span<const TokenId> text, const Grammar& grammar,
                              const Vocabulary& vocab) {
  const auto sentences = split_sentences(text, vocab);
  if (sentences.empty()) return 0.0;
  std::size_t bad = 0;
  for (const auto& s : sentences) bad += is_grammatical(s, grammar, vocab) ? 0 : 1;
  return static_cast<double>(bad) / static_cast<double>(sentences.size());
}

void save_jsonl(std::span<const QAExample> examples, const Vocabulary& vocab,
                const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write dataset: " + path.string());
  for (const auto& ex : examples) {
    nlohmann::json j;
    j["passage"] = vocab.decode(ex.passage);
    j["question"] = vocab.decode(ex.question);
    j["answer"] = vocab.decode(ex.gold_answer);
    auto facts = nlohmann::json::array();
    for (const auto& f : ex.fact_table) {
      facts.push_back({vocab.token(f.entity), vocab.token(f.attribute), vocab.token(f.value)});
    }
    j["facts"] = std::move(facts);
    out << j.dump() << '\n';
  }
  if (!out) throw Error("failed writing dataset: " + path.string());
}

std::vector<QAExample> load_jsonl(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open dataset: " + path.string());
  std::vector<QAExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(where + "malformed record (" + e.what() + ")");
    }
    if (!j.is_object()) throw Error(where + "record is not a JSON object");
    auto text_field = [&](const char* name) {
      if (!j.contains(name)) throw Error(where + "missing field \"" + name + "\"");
      if (!j[name].is_string()) throw Error(where + "field \"" + name + "\" is not a string");
      try {
        return vocab.encode(j[name].get<std::string>());
      } catch (const Error& e) {
        throw Error(where + "field \"" + name + "\": " + e.what());
      }
    };
    QAExample ex;
    ex.passage = text_field("passage");
    ex.question = text_field("question");
    ex.gold_answer = text_field("answer");
    if (j.contains("facts")) {
      if (!j["facts"].is_array()) throw Error(where + "field \"facts\" is not an array");
      for (const auto& f : j["facts"]) {
        if (!f.is_array() || f.size() != 3 || !f[0].is_string() || !f[1].is_string() ||
            !f[2].is_string()) {
          throw Error(where + "each fact must be [entity, attribute, value]");
        }
        try {
          ex.fact_table.push_back({vocab.id(f[0].get<std::string>()),
                                   vocab.id(f[1].get<std::string>()),
                                   vocab.id(f[2].get<std::string>())});
        } catch (const Error& e) {
          throw Error(where + "field \"facts\": " + e.what());
        }
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

TokenSequence bootstrap_summary(const World& world, std::span<const TokenId> passage,
                                const SummaryBootstrap& cfg, Rng& rng) {
  const auto sentences = split_sentences(passage, world.vocab());
  if (sentences.empty()) return {};
  std::vector<bool> keep(sentences.size());
  bool any = false;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    keep[i] = rng.bernoulli(cfg.keep_probability);
    any = any || keep[i];
  }
  if (!any) keep[rng.below(sentences.size())] = true;
  TokenSequence out;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (keep[i]) out.insert(out.end(), sentences[i].begin(), sentences[i].end());
  }
  if (rng.bernoulli(cfg.noisy_fraction)) {
    const double d = cfg.min_deletion + (cfg.max_deletion - cfg.min_deletion) * rng.uniform();
    TokenSequence kept;
    for (TokenId t : out) {
      if (!rng.bernoulli(d)) kept.push_back(t);
    }
    if (kept.size() >= 2) out = std::move(kept);
  }
  return out;
}

}  // namespace refgame
