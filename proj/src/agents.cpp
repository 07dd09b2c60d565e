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

#include "refgame/agents.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "refgame/checkpoint.hpp"

namespace refgame {
namespace {

constexpr std::size_t kMaxAnswerTokens = 3;

std::uint64_t hash_tokens(std::uint64_t h, std::span<const TokenId> tokens) {
  for (TokenId t : tokens) h = mix_seed(h ^ static_cast<std::uint64_t>(t));
  return mix_seed(h ^ tokens.size());
}

// The asked fact plus as many sentences as the passage has, each stating the
// asked attribute for another entity, in random order.
TokenSequence contrast_context(const World& world, const QAExample& ex, Rng& rng) {
  const TokenId entity = ex.question[5];
  const TokenId attr = ex.question[3];
  const std::size_t a = *world.attribute_index(attr);
  std::vector<TokenId> others;
  for (const auto* pool : {&world.entities(), &world.distractor_entities()}) {
    for (TokenId e : *pool) {
      if (e != entity) others.push_back(e);
    }
  }
  rng.shuffle(others);
  const std::size_t n_sentences = split_sentences(ex.passage, world.vocab()).size();
  std::vector<TokenSequence> sentences{world.render_fact({entity, attr, ex.gold_answer[0]})};
  for (std::size_t i = 0; i + 1 < n_sentences && i < others.size(); ++i) {
    const auto& vals = world.values(a);
    sentences.push_back(world.render_fact({others[i], attr, vals[rng.below(vals.size())]}));
  }
  rng.shuffle(sentences);
  TokenSequence ctx;
  for (const auto& s : sentences) ctx.insert(ctx.end(), s.begin(), s.end());
  return ctx;
}

}  // namespace

TokenSequence speaker_prompt(std::span<const TokenId> passage, const Vocabulary& vocab) {
  TokenSequence p(passage.begin(), passage.end());
  p.push_back(vocab.sep());
  return p;
}

Generation speak(const Speaker& speaker, std::span<const TokenId> passage, std::uint64_t seed) {
  if (passage.empty()) throw UsageError("speak: empty passage");
  DecodeConfig cfg = speaker.decode;
  cfg.seed = seed;
  return generate(speaker.policy, speaker_prompt(passage, speaker.policy.vocab()), cfg);
}

Listener Listener::oracle(const World& world, PolicyModel lm, OracleRules rules) {
  if (rules.window < 1) throw UsageError("OracleRules.window must be >= 1");
  if (!(rules.noise >= 0.0 && rules.noise <= 1.0)) {
    throw UsageError("OracleRules.noise must lie in [0, 1]");
  }
  if (!(lm.vocab() == world.vocab())) throw UsageError("listener LM vocabulary does not match the world");
  return Listener(ListenerKind::kOracle, std::make_shared<const World>(world), nullptr,
                  std::make_shared<const PolicyModel>(std::move(lm)), rules);
}

Listener Listener::learned(const World& world, PolicyModel qa, PolicyModel lm) {
  if (!(qa.vocab() == world.vocab()) || !(lm.vocab() == world.vocab())) {
    throw UsageError("listener vocabulary does not match the world");
  }
  return Listener(ListenerKind::kLearned, std::make_shared<const World>(world),
                  std::make_shared<const PolicyModel>(std::move(qa)),
                  std::make_shared<const PolicyModel>(std::move(lm)), OracleRules{});
}

TokenSequence Listener::listen(std::span<const TokenId> summary,
                               std::span<const TokenId> question) const {
  return kind_ == ListenerKind::kOracle ? listen_oracle(summary, question)
                                        : listen_learned(summary, question);
}

TokenSequence Listener::listen_oracle(std::span<const TokenId> summary,
                                      std::span<const TokenId> question) const {
  const World& w = *world_;
  const TokenId unknown = w.vocab().unknown();
  std::optional<TokenId> entity;
  std::optional<std::size_t> attribute;
  for (TokenId t : question) {
    if (!entity && w.is_entity(t)) entity = t;
    if (!attribute) attribute = w.attribute_index(t);
  }
  if (!entity || !attribute) return {unknown};
  const TokenId attr_token = w.attributes()[*attribute];
  const auto n = static_cast<std::ptrdiff_t>(summary.size());
  const auto win = static_cast<std::ptrdiff_t>(rules_.window);

  std::optional<TokenId> answer;
  std::ptrdiff_t best_dist = 0;
  bool best_after = false;
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    if (summary[static_cast<std::size_t>(i)] != *entity) continue;
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, i - win);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n - 1, i + win);
    bool has_attr = false;
    for (std::ptrdiff_t j = lo; j <= hi && !has_attr; ++j) {
      has_attr = summary[static_cast<std::size_t>(j)] == attr_token;
    }
    if (!has_attr) continue;
    for (std::ptrdiff_t j = lo; j <= hi; ++j) {
      const TokenId t = summary[static_cast<std::size_t>(j)];
      if (w.value_attribute(t) != attribute) continue;
      const std::ptrdiff_t dist = std::abs(j - i);
      const bool after = j > i;
      if (!answer || dist < best_dist || (dist == best_dist && after && !best_after)) {
        answer = t;
        best_dist = dist;
        best_after = after;
      }
    }
  }
  if (!answer) return {unknown};
  if (rules_.noise > 0.0) {
    Rng rng(hash_tokens(hash_tokens(rules_.noise_seed, summary), question));
    if (rng.bernoulli(rules_.noise)) {
      const auto values = w.all_values();
      return {values[rng.below(values.size())]};
    }
  }
  return {*answer};
}

TokenSequence listener_prompt(std::span<const TokenId> summary, std::span<const TokenId> question,
                              const Vocabulary& vocab, std::size_t context_window) {
  const std::size_t overhead = question.size() + 2 + kMaxAnswerTokens;
  if (overhead > context_window) throw Error("listener_prompt: question does not fit the window");
  const std::size_t keep = std::min(summary.size(), context_window - overhead);
  TokenSequence p(summary.begin(), summary.begin() + static_cast<std::ptrdiff_t>(keep));
  p.push_back(vocab.sep());
  p.insert(p.end(), question.begin(), question.end());
  p.push_back(vocab.sep());
  return p;
}

TokenSequence Listener::listen_learned(std::span<const TokenId> summary,
                                       std::span<const TokenId> question) const {
  const Vocabulary& vocab = qa_->vocab();
  const auto prompt = listener_prompt(summary, question, vocab,
                                      static_cast<std::size_t>(qa_->dims().context_window));
  DecodeConfig greedy;
  greedy.max_new_tokens = static_cast<int>(kMaxAnswerTokens);
  greedy.min_length = 1;
  greedy.top_k = 1;
  greedy.top_p = 1.0;
  greedy.epsilon_cutoff = 0.0;
  greedy.num_beams = 1;
  auto g = generate(*qa_, prompt, greedy);
  if (g.tokens.empty()) return {vocab.unknown()};
  return g.tokens;
}

double Listener::surprisal(std::span<const TokenId> text) const {
  const auto window = static_cast<std::size_t>(lm_->dims().context_window);
  double s = 0.0;
  for (std::size_t begin = 0; begin < text.size(); begin += window) {
    s += refgame::surprisal(*lm_, text.subspan(begin, std::min(window, text.size() - begin)));
  }
  return s;
}

std::string Listener::state_bytes() const {
  std::string out;
  out.push_back(kind_ == ListenerKind::kOracle ? 'O' : 'L');
  out += std::to_string(rules_.window) + ";" + std::to_string(rules_.noise) + ";" +
         std::to_string(rules_.noise_seed) + ";";
  if (qa_) out += serialize_checkpoint(*qa_);
  out += serialize_checkpoint(*lm_);
  return out;
}

void ListenerConfig::validate() const {
  training.validate();
  if (n_train_examples < 1) throw UsageError("ListenerConfig.n_train_examples must be >= 1");
  if (n_eval_examples < 1) throw UsageError("ListenerConfig.n_eval_examples must be >= 1");
  const double fractions[] = {partial_fraction, missing_fraction, empty_fraction,
                              target_fraction, contrast_fraction, telegraphic_fraction,
                              deletion_fraction};
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw UsageError("ListenerConfig: mix fractions must lie in [0, 1]");
    total += f;
  }
  if (total > 1.0) throw UsageError("ListenerConfig: mix fractions sum to more than 1");
  if (!(max_deletion >= 0.0 && max_deletion <= 1.0)) {
    throw UsageError("ListenerConfig.max_deletion must lie in [0, 1]");
  }
}

std::vector<LmExample> listener_training_examples(const World& world,
                                                  std::span<const QAExample> corpus,
                                                  const ListenerConfig& cfg,
                                                  std::size_t context_window) {
  const Vocabulary& vocab = world.vocab();
  Rng rng(derive_seed(cfg.training.seed, 0x6c6973));
  std::vector<LmExample> out;
  out.reserve(corpus.size());
  for (const auto& ex : corpus) {
    const auto sentences = split_sentences(ex.passage, vocab);
    const TokenId entity = ex.question.size() > 5 ? ex.question[5] : -1;
    const TokenId attr = ex.question.size() > 3 ? ex.question[3] : -1;
    auto states_fact = [&](const TokenSequence& s) {
      return std::find(s.begin(), s.end(), entity) != s.end() &&
             std::find(s.begin(), s.end(), attr) != s.end();
    };
    auto subset = [&](bool keep_fact) {
      TokenSequence ctx;
      for (const auto& s : sentences) {
        const bool fact = states_fact(s);
        if (fact ? keep_fact : rng.bernoulli(0.5)) ctx.insert(ctx.end(), s.begin(), s.end());
      }
      return ctx;
    };
    const TokenSequence unknown = {vocab.unknown()};
    auto qa = [&](const TokenSequence& ctx, const TokenSequence& answer) {
      const auto prompt = listener_prompt(ctx, ex.question, vocab, context_window);
      LmExample e;
      e.tokens = prompt;
      e.loss_begin = e.tokens.size();
      e.tokens.insert(e.tokens.end(), answer.begin(), answer.end());
      e.tokens.push_back(vocab.eos());
      return e;
    };

    double u = rng.uniform();
    if ((u -= cfg.partial_fraction) < 0.0) {
      out.push_back(qa(subset(true), ex.gold_answer));
    } else if ((u -= cfg.missing_fraction) < 0.0) {
      out.push_back(qa(subset(false), unknown));
    } else if ((u -= cfg.empty_fraction) < 0.0) {
      out.push_back(qa({}, unknown));
    } else if ((u -= cfg.target_fraction) < 0.0) {
      out.push_back(qa(ex.gold_answer, ex.gold_answer));
    } else if ((u -= cfg.contrast_fraction) < 0.0) {
      out.push_back(qa(contrast_context(world, ex, rng), ex.gold_answer));
    } else if ((u -= cfg.telegraphic_fraction) < 0.0) {
      TokenSequence ctx;
      for (TokenId t : ex.passage) {
        if (!world.stopwords().contains(t)) ctx.push_back(t);
      }
      out.push_back(qa(ctx, ex.gold_answer));
    } else if ((u -= cfg.deletion_fraction) < 0.0) {
      const double rate = rng.uniform() * cfg.max_deletion;
      TokenSequence ctx;
      bool answerable = false;
      for (const auto& sentence : sentences) {
        TokenSequence kept;
        for (TokenId t : sentence) {
          if (!rng.bernoulli(rate)) kept.push_back(t);
        }
        answerable = answerable || (states_fact(sentence) && states_fact(kept) &&
                                    std::find(kept.begin(), kept.end(), ex.gold_answer[0]) != kept.end());
        ctx.insert(ctx.end(), kept.begin(), kept.end());
      }
      out.push_back(qa(ctx, answerable ? ex.gold_answer : unknown));
    } else {
      out.push_back(qa(ex.passage, ex.gold_answer));
    }
  }
  return out;
}

double listener_accuracy(const Listener& listener, std::span<const QAExample> examples) {
  if (examples.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& ex : examples) {
    hits += listener.listen(ex.passage, ex.question) == ex.gold_answer ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(examples.size());
}

ListenerTraining train_listener(const World& world, std::span<const QAExample> corpus,
                                std::span<const QAExample> held_out, const ModelDims& dims,
                                const ListenerConfig& cfg, std::uint64_t init_seed,
                                PolicyModel lm, const std::function<void(const PretrainLogRow&)>& on_step) {
  cfg.validate();
  if (corpus.empty()) throw UsageError("train_listener: empty corpus");
  PolicyModel model(world.vocab(), dims, init_seed);
  const auto examples = listener_training_examples(
      world, corpus, cfg, static_cast<std::size_t>(dims.context_window));
  auto log = pretrain_lm(model, examples, cfg.training, nullptr, 0, on_step);
  Listener listener = Listener::learned(world, std::move(model), std::move(lm));
  const double acc = listener_accuracy(listener, held_out);
  return ListenerTraining{std::move(listener), acc, acc < cfg.accuracy_threshold, std::move(log)};
}

}  // namespace refgame
