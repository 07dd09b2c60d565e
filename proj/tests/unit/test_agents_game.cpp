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

#include <cmath>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "refgame/checkpoint.hpp"
#include "refgame/game.hpp"

using namespace refgame;

namespace {

const World& W() { return fixture::world(); }

PolicyModel uniform_lm() { return PolicyModel(W().vocab(), fixture::tiny_dims(), 1); }

Listener oracle_listener() { return Listener::oracle(W(), uniform_lm()); }

// A listener LM trained briefly on grammatical passages.
const PolicyModel& pretrained_lm() {
  static const PolicyModel lm = [] {
    PolicyModel m(W().vocab(), fixture::tiny_dims(), 31);
    std::vector<LmExample> corpus;
    for (const auto& ex : generate_dataset(W(), 600, 32)) {
      corpus.push_back(plain_text_example(ex.passage, W().vocab().eos()));
    }
    PretrainConfig cfg;
    cfg.steps = 400;
    cfg.batch_size = 8;
    cfg.eval_interval = 400;
    pretrain_lm(m, corpus, cfg);
    return m;
  }();
  return lm;
}

TokenSequence strip_stopwords(std::span<const TokenId> text) {
  TokenSequence out;
  for (TokenId t : text) {
    if (!W().stopwords().contains(t)) out.push_back(t);
  }
  return out;
}

Generation copy_generation(std::span<const TokenId> passage) {
  Generation g;
  g.tokens.assign(passage.begin(), passage.end());
  g.logprobs.assign(passage.size(), 0.0);
  g.supports.assign(passage.size(), {});
  return g;
}

}  // namespace

TEST_CASE("speak: greedy determinism, exact length, empty passage") {
  const auto ex = generate_dataset(W(), 1)[0];
  DecodeConfig greedy = fixture::sampling_decode(10);
  greedy.top_k = 1;
  Speaker sp{fixture::random_model(33), greedy};
  CHECK(speak(sp, ex.passage, 1).tokens == speak(sp, ex.passage, 2).tokens);

  sp.decode = fixture::sampling_decode(2);
  sp.decode.min_length = 2;
  for (std::uint64_t s = 0; s < 20; ++s) CHECK(speak(sp, ex.passage, s).tokens.size() == 2);

  CHECK_THROWS_AS(speak(sp, TokenSequence{}, 0), UsageError);
}

TEST_CASE("oracle listener: full passage, empty summary, stopword removal") {
  const auto listener = oracle_listener();
  const auto data = generate_dataset(W(), 500, 34);
  int stripped_ok = 0;
  for (const auto& ex : data) {
    REQUIRE(listener.listen(ex.passage, ex.question) == ex.gold_answer);
    CHECK(listener.listen(TokenSequence{}, ex.question) == TokenSequence{W().vocab().unknown()});
    if (listener.listen(strip_stopwords(ex.passage), ex.question) == ex.gold_answer) ++stripped_ok;
  }
  CHECK(stripped_ok >= 475);
}

TEST_CASE("oracle listener output stays in the value vocabulary and is pure") {
  const auto listener = oracle_listener();
  const auto values = W().all_values();
  std::set<TokenId> allowed(values.begin(), values.end());
  allowed.insert(W().vocab().unknown());
  const auto data = generate_dataset(W(), 200, 35);
  Rng rng(36);
  for (const auto& ex : data) {
    TokenSequence junk;
    const auto n = rng.below(30);
    for (std::size_t i = 0; i < n; ++i) junk.push_back(static_cast<TokenId>(rng.below(W().vocab().size())));
    for (const auto& summary : {junk, ex.passage, strip_stopwords(ex.passage)}) {
      const auto a = listener.listen(summary, ex.question);
      REQUIRE(a.size() == 1);
      CHECK(allowed.count(a[0]));
      CHECK(listener.listen(summary, ex.question) == a);
    }
  }
}

TEST_CASE("listener surprisal: empty, repeatable, stripped text is less predictable") {
  const auto listener = Listener::oracle(W(), pretrained_lm());
  CHECK(listener.surprisal(TokenSequence{}) == 0.0);
  const auto data = generate_dataset(W(), 100, 37);
  int higher = 0, n = 0;
  for (const auto& ex : data) {
    CHECK(listener.surprisal(ex.passage) == listener.surprisal(ex.passage));
    for (const auto& s : split_sentences(ex.passage, W().vocab())) {
      const auto stripped = strip_stopwords(s);
      const double full = listener.surprisal(s) / double(s.size());
      const double cut = listener.surprisal(stripped) / double(stripped.size());
      ++n;
      if (cut > full) ++higher;
    }
  }
  CHECK(higher == n);
}

TEST_CASE("listener surprisal scores long texts in window-sized chunks") {
  const auto lm = fixture::random_model(38);
  const auto listener = Listener::oracle(W(), lm);
  TokenSequence text;
  Rng rng(39);
  while (text.size() < 150) text.push_back(static_cast<TokenId>(4 + rng.below(W().vocab().size() - 4)));
  const std::span<const TokenId> t(text);
  const double expected = surprisal(lm, t.subspan(0, 64)) + surprisal(lm, t.subspan(64, 64)) +
                          surprisal(lm, t.subspan(128));
  CHECK(listener.surprisal(text) == expected);
}

TEST_CASE("learned listener: empty contexts are no better than chance") {
  const auto data = generate_dataset(W(), 400, 40);
  ListenerConfig cfg;
  cfg.training.steps = 150;
  cfg.training.batch_size = 16;
  cfg.training.eval_interval = 150;
  cfg.training.warmup_steps = 10;
  cfg.n_train_examples = 400;
  cfg.n_eval_examples = 50;
  const auto t = train_listener(W(), std::span(data).subspan(0, 350), std::span(data).subspan(350),
                                fixture::tiny_dims(), cfg, 41, uniform_lm());
  CHECK(t.listener.kind() == ListenerKind::kLearned);
  int correct = 0;
  for (const auto& ex : data) {
    if (t.listener.listen(TokenSequence{}, ex.question) == ex.gold_answer) ++correct;
  }
  const double chance = 1.0 / W().spec().n_values_per_attribute;
  CHECK(double(correct) / double(data.size()) <= chance);
  // The threshold flag is a warning, not an error.
  CHECK(t.below_threshold == (t.held_out_accuracy < cfg.accuracy_threshold));
}

TEST_CASE("penalties and score") {
  const auto listener = Listener::oracle(W(), fixture::random_model(42));
  const auto ex = generate_dataset(W(), 1, 43)[0];
  CHECK(penalty_length(ex.passage, ex.passage) == 1.0);
  CHECK(penalty_length(TokenSequence{}, ex.passage) == 0.0);
  CHECK(penalty_length(TokenSequence(5, 4), TokenSequence(20, 4)) == 0.25);
  CHECK_THROWS_AS(penalty_length(ex.passage, TokenSequence{}), Error);
  CHECK(penalty_surprisal(ex.passage, ex.passage, listener) == 1.0);
  CHECK(penalty_surprisal(TokenSequence{}, ex.passage, listener) == 0.0);

  CHECK(score(0.7, 0.3, 0.0) == 0.7);
  CHECK(score(0.7, 0.3, 1.0) == -0.3);
  CHECK(score(0.6, 0.5, 0.5) == doctest::Approx(0.05).epsilon(1e-15));
  oracle::Gen gen(44);
  for (int i = 0; i < 1000; ++i) {
    const double r = gen.uniform(0, 1), p = gen.uniform(0, 3);
    REQUIRE(score(r, p, 0.0) == r);
    REQUIRE(score(r, p, 1.0) == -p);
  }
}

TEST_CASE("surprisal penalty equals the length penalty under a uniform listener LM") {
  const auto listener = oracle_listener();
  const auto data = generate_dataset(W(), 1000, 45);
  Rng rng(46);
  for (const auto& ex : data) {
    TokenSequence summary;
    for (TokenId t : ex.passage) {
      if (rng.bernoulli(0.5)) summary.push_back(t);
    }
    const double pl = penalty_length(summary, ex.passage);
    const double ps = penalty_surprisal(summary, ex.passage, listener);
    REQUIRE(std::abs(ps - pl) <= 1e-14);
  }
}

TEST_CASE("penalty ranges") {
  const auto listener = Listener::oracle(W(), fixture::random_model(47));
  DecodeConfig d = fixture::sampling_decode(24);
  Speaker sp{fixture::random_model(48), d};
  for (const auto& ex : generate_dataset(W(), 50, 49)) {
    for (auto kind : {BottleneckKind::kLength, BottleneckKind::kSurprisal}) {
      BottleneckSpec b{.kind = kind, .lambda = 0.5};
      const auto rec = play_episode(sp, listener, W(), ex, b, 50);
      CHECK(rec.penalty >= 0.0);
      if (kind == BottleneckKind::kLength) {
        CHECK(rec.penalty <= double(d.max_new_tokens) / double(ex.passage.size()));
      }
    }
  }
}

TEST_CASE("play_episode: copy speaker is perfect, kind none scores the reward, seeds repeat") {
  const auto listener = oracle_listener();
  const auto data = generate_dataset(W(), 100, 51);
  for (const auto& ex : data) {
    const auto rec = score_generation(listener, W(), ex, BottleneckSpec{}, copy_generation(ex.passage));
    REQUIRE(rec.reward == 1.0);
    REQUIRE(rec.score == rec.reward);
  }
  Speaker sp{fixture::random_model(52), fixture::sampling_decode(20)};
  BottleneckSpec b{.kind = BottleneckKind::kSurprisal, .lambda = 0.3};
  const auto a = play_episode(sp, listener, W(), data[0], b, 53);
  const auto c = play_episode(sp, listener, W(), data[0], b, 53);
  CHECK(a.summary == c.summary);
  CHECK(a.generation.logprobs == c.generation.logprobs);
  CHECK(a.predicted_answer == c.predicted_answer);
  CHECK(a.reward == c.reward);
  CHECK(a.penalty == c.penalty);
  CHECK(a.score == c.score);
  CHECK(episode_to_jsonl(a, W().vocab(), 0) == episode_to_jsonl(c, W().vocab(), 0));
}

TEST_CASE("apply_cutoff") {
  const auto listener = Listener::oracle(W(), fixture::random_model(54));
  const auto ex = generate_dataset(W(), 1, 55)[0];
  const TokenSequence ten(ex.passage.begin(), ex.passage.begin() + 10);
  BottleneckSpec len{.kind = BottleneckKind::kLength, .mode = BottleneckMode::kCutoff};
  len.cutoff_budget = 100;
  CHECK(apply_cutoff(ten, len, listener) == ten);
  len.cutoff_budget = 0;
  CHECK(apply_cutoff(ten, len, listener).empty());
  len.cutoff_budget = 3;
  CHECK(apply_cutoff(ten, len, listener) == TokenSequence(ten.begin(), ten.begin() + 3));

  BottleneckSpec sur{.kind = BottleneckKind::kSurprisal, .mode = BottleneckMode::kCutoff};
  sur.cutoff_budget = listener.surprisal(ten) + 1.0;
  CHECK(apply_cutoff(ten, sur, listener) == ten);
  sur.cutoff_budget = listener.surprisal(std::span<const TokenId>(ten).first(4));
  const auto cut = apply_cutoff(ten, sur, listener);
  CHECK(cut.size() >= 4);
  CHECK(listener.surprisal(cut) <= sur.cutoff_budget);
  if (cut.size() < ten.size()) {
    CHECK(listener.surprisal(std::span<const TokenId>(ten).first(cut.size() + 1)) > sur.cutoff_budget);
  }
}

TEST_CASE("information barrier: empty summaries match the empty-context baseline") {
  const auto listener = oracle_listener();
  const auto data = generate_dataset(W(), 200, 56);
  double empty_summary = 0.0;
  for (const auto& ex : data) {
    const auto rec = score_generation(listener, W(), ex, BottleneckSpec{}, Generation{});
    empty_summary += rec.reward;
  }
  double baseline = 0.0;
  for (const auto& ex : data) {
    baseline += textmetrics::rouge_l_f1(listener.listen(TokenSequence{}, ex.question), ex.gold_answer);
  }
  CHECK(empty_summary == baseline);
}

TEST_CASE("frozen listener bytes survive episodes") {
  const auto listener = Listener::oracle(W(), fixture::random_model(57));
  const auto before = listener.state_bytes();
  Speaker sp{fixture::random_model(58), fixture::sampling_decode(20)};
  for (const auto& ex : generate_dataset(W(), 30, 59)) {
    play_episode(sp, listener, W(), ex, BottleneckSpec{.kind = BottleneckKind::kSurprisal}, 60);
  }
  CHECK(listener.state_bytes() == before);
}
