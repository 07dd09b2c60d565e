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
#include <numeric>

#include "doctest.h"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "refgame/checkpoint.hpp"
#include "refgame/kernels.hpp"

using namespace refgame;

namespace {

TokenSequence random_text(Rng& rng, const Vocabulary& v, std::size_t n) {
  TokenSequence t;
  while (t.size() < n) {
    const auto id = static_cast<TokenId>(rng.below(v.size()));
    if (id != v.bos()) t.push_back(id);
  }
  return t;
}

std::vector<LmExample> passage_corpus(std::size_t n, std::uint64_t seed) {
  std::vector<LmExample> out;
  const auto& w = fixture::world();
  for (const auto& ex : generate_dataset(w, n, seed)) {
    out.push_back(plain_text_example(ex.passage, w.vocab().eos()));
  }
  return out;
}

// Loss gradient of a fixed minibatch against central differences.
void check_nll_gradient(PolicyModel& model, std::span<const LmExample> batch, std::uint64_t seed) {
  std::vector<double> grad(model.param_count(), 0.0);
  double total = 0.0;
  for (const auto& ex : batch) total += example_nll(model, ex, grad, 1.0);
  CHECK(std::isfinite(total));
  auto loss = [&] {
    double s = 0.0;
    for (const auto& ex : batch) s += example_nll(model, ex, {}, 1.0);
    return s;
  };
  Rng rng(seed);
  int checked = 0, nonzero = 0;
  for (int trial = 0; trial < 400 && (checked < 30 || nonzero < 20); ++trial) {
    const auto i = static_cast<std::size_t>(rng.below(model.param_count()));
    const bool big = std::abs(grad[i]) > 1e-6;
    if (checked >= 30 && !big) continue;
    const double h = 1e-5, saved = model.params()[i];
    model.params()[i] = saved + h;
    const double up = loss();
    model.params()[i] = saved - h;
    const double down = loss();
    model.params()[i] = saved;
    const double numeric = (up - down) / (2 * h);
    INFO("param " << i << " analytic " << grad[i] << " numeric " << numeric);
    CHECK(fixture::grad_close(grad[i], numeric));
    ++checked;
    if (big) ++nonzero;
  }
  CHECK(nonzero >= 20);
}

}  // namespace

TEST_CASE("uniform initial model") {
  const auto& w = fixture::world();
  PolicyModel m(w.vocab(), fixture::tiny_dims(), 1);
  Rng rng(2);
  const double log_v = std::log(static_cast<double>(w.vocab().size()));
  for (int trial = 0; trial < 20; ++trial) {
    const auto prefix = random_text(rng, w.vocab(), rng.below(40));
    const auto lp = next_token_logprobs(m, prefix);
    for (double x : lp) CHECK(x == doctest::Approx(-log_v).epsilon(1e-10));
    const auto text = random_text(rng, w.vocab(), 1 + rng.below(20));
    CHECK(surprisal(m, text) == doctest::Approx(double(text.size()) * log_v).epsilon(1e-10));
  }
}

TEST_CASE("next_token_logprobs normalizes and enforces the window") {
  const auto m = fixture::random_model(3);
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto lp = next_token_logprobs(m, random_text(rng, m.vocab(), rng.below(30)));
    double s = 0.0;
    for (double x : lp) s += std::exp(x);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(next_token_logprobs(m, random_text(rng, m.vocab(), 65)), Error);
}

TEST_CASE("surprisal: empty text and chain rule") {
  const auto m = fixture::random_model(5);
  CHECK(surprisal(m, TokenSequence{}) == 0.0);
  Rng rng(6);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto c = random_text(rng, m.vocab(), rng.below(5));
    const auto a = random_text(rng, m.vocab(), rng.below(6));
    const auto b = random_text(rng, m.vocab(), rng.below(6));
    // Token-by-token oracle.
    TokenSequence prefix = c;
    double oracle_sum = 0.0;
    for (TokenId t : a) {
      oracle_sum -= next_token_logprobs(m, prefix)[static_cast<std::size_t>(t)];
      prefix.push_back(t);
    }
    const double sa = surprisal(m, a, c);
    REQUIRE(sa == doctest::Approx(oracle_sum).epsilon(1e-9));
    TokenSequence ab = a, ca = c;
    ab.insert(ab.end(), b.begin(), b.end());
    ca.insert(ca.end(), a.begin(), a.end());
    REQUIRE(std::abs(surprisal(m, ab, c) - (sa + surprisal(m, b, ca))) < 1e-6);
  }
}

TEST_CASE("decoding: greedy, min_length and determinism") {
  const auto m = fixture::random_model(7);
  const auto& v = m.vocab();
  Rng rng(8);
  const auto prompt = random_text(rng, v, 10);

  DecodeConfig greedy = fixture::sampling_decode(12);
  greedy.top_k = 1;
  const auto g1 = generate(m, prompt, {greedy});
  greedy.seed = 999;
  const auto g2 = generate(m, prompt, greedy);
  CHECK(g1.tokens == g2.tokens);

  auto cfg = fixture::sampling_decode(12);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    cfg.seed = seed;
    const auto a = generate(m, prompt, cfg);
    const auto b = generate(m, prompt, cfg);
    CHECK(a.tokens == b.tokens);
    CHECK(a.logprobs == b.logprobs);
    CHECK(a.tokens.size() >= 2);
  }
}

TEST_CASE("decoding filters only renormalize within the unfiltered support") {
  const auto m = fixture::random_model(9, 1.0);
  const auto& v = m.vocab();
  Rng rng(10);
  DecodeConfig cfg;
  cfg.top_k = 5;
  cfg.top_p = 0.7;
  cfg.epsilon_cutoff = 0.02;
  cfg.max_new_tokens = 10;
  cfg.num_beams = 1;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    cfg.seed = seed;
    const auto prompt = random_text(rng, v, 6);
    const auto gen = generate(m, prompt, cfg);
    TokenSequence prefix = prompt;
    const auto actions = gen.actions(v.eos());
    for (std::size_t i = 0; i < actions.size(); ++i) {
      const auto lp = next_token_logprobs(m, prefix);
      const auto& sup = gen.supports[i];
      CHECK(std::find(sup.begin(), sup.end(), actions[i]) != sup.end());
      CHECK(sup.size() <= 5);
      double mass = 0.0;
      for (TokenId t : sup) {
        CHECK(t != v.bos());
        CHECK(t != v.sep());
        mass += std::exp(lp[static_cast<std::size_t>(t)]);
      }
      CHECK(gen.logprobs[i] ==
            doctest::Approx(lp[static_cast<std::size_t>(actions[i])] - std::log(mass)).epsilon(1e-9));
      if (i < actions.size()) prefix.push_back(actions[i]);
    }
  }
}

TEST_CASE("pretrain_lm memorizes a single sentence and beats the uniform baseline") {
  const auto& w = fixture::world();
  const auto ex = generate_dataset(w, 1)[0];
  std::vector<LmExample> one{plain_text_example(ex.passage, w.vocab().eos())};
  PolicyModel m(w.vocab(), fixture::tiny_dims(), 11);
  PretrainConfig cfg;
  cfg.steps = 300;
  cfg.batch_size = 1;
  cfg.learning_rate = 1e-2;
  cfg.held_out_fraction = 0.0;
  cfg.eval_interval = 300;
  const auto r = pretrain_lm(m, one, cfg);
  CHECK(r.initial_held_out_loss == doctest::Approx(std::log(double(w.vocab().size()))));
  CHECK(r.final_held_out_loss < 0.05);

  const auto corpus = passage_corpus(400, 12);
  PolicyModel m2(w.vocab(), fixture::tiny_dims(), 13);
  cfg.steps = 150;
  cfg.batch_size = 8;
  cfg.learning_rate = 3e-3;
  cfg.held_out_fraction = 0.1;
  cfg.eval_interval = 50;
  const auto r2 = pretrain_lm(m2, corpus, cfg);
  CHECK(std::exp(r2.final_held_out_loss) < double(w.vocab().size()));
  CHECK(r2.final_held_out_loss < r2.initial_held_out_loss);
}

TEST_CASE("pretrain_lm resumes exactly") {
  const auto& w = fixture::world();
  const auto corpus = passage_corpus(64, 14);
  PretrainConfig cfg;
  cfg.steps = 12;
  cfg.batch_size = 4;
  cfg.eval_interval = 6;
  cfg.warmup_steps = 3;
  cfg.cosine_decay = true;
  PolicyModel full(w.vocab(), fixture::tiny_dims(), 15);
  AdamState fa;
  pretrain_lm(full, corpus, cfg, &fa);

  PolicyModel part(w.vocab(), fixture::tiny_dims(), 15);
  AdamState pa;
  // Same schedule: only the step range differs.
  LmTrainer trainer(corpus, cfg, &pa);
  for (int s = 0; s < 6; ++s) trainer.step(part, s);
  pretrain_lm(part, corpus, cfg, &pa, 6);
  CHECK(part == full);
  CHECK(pa == fa);
}

TEST_CASE("learning-rate schedule") {
  PretrainConfig cfg;
  cfg.steps = 100;
  cfg.learning_rate = 1.0;
  cfg.warmup_steps = 10;
  cfg.cosine_decay = true;
  cfg.min_lr_fraction = 0.1;
  CHECK(cfg.learning_rate_at(0) == doctest::Approx(0.1));
  CHECK(cfg.learning_rate_at(9) == doctest::Approx(1.0));
  CHECK(cfg.learning_rate_at(99) == doctest::Approx(0.1));
  for (int s = 10; s < 99; ++s) CHECK(cfg.learning_rate_at(s + 1) <= cfg.learning_rate_at(s));
}

TEST_CASE("LM loss gradient matches finite differences at two training stages") {
  const auto corpus = passage_corpus(40, 16);
  std::vector<LmExample> batch(corpus.begin(), corpus.begin() + 3);
  // Stage 1: random parameters (the zero-initialized output layer would
  // make most trunk gradients vanish).
  auto m = fixture::random_model(17, 0.2);
  check_nll_gradient(m, batch, 18);
  // Stage 2: after some pretraining.
  PretrainConfig cfg;
  cfg.steps = 60;
  cfg.batch_size = 8;
  cfg.eval_interval = 60;
  pretrain_lm(m, corpus, cfg);
  check_nll_gradient(m, batch, 19);

  // Conditional examples score only the target.
  const auto& w = fixture::world();
  const auto ex = generate_dataset(w, 1, 20)[0];
  std::vector<LmExample> cond{
      conditional_example(ex.passage, ex.gold_answer, w.vocab().sep(), w.vocab().eos())};
  check_nll_gradient(m, cond, 21);
}

TEST_CASE("kernel variants agree with the scalar reference") {
  const auto& ref = kernels::scalar_table();
  std::vector<const kernels::KernelTable*> variants;
  if (auto* t = kernels::avx2_table()) variants.push_back(t);
  if (auto* t = kernels::neon_table()) variants.push_back(t);
  MESSAGE("vectorized variants available: " << variants.size());
  oracle::Gen gen(22);
  auto vec = [&](std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = gen.uniform(-2, 2);
    return v;
  };
  for (const auto* t : variants) {
    for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 15u, 33u, 128u}) {
      const auto a = vec(n), b = vec(n);
      CHECK(t->dot(a.data(), b.data(), n) == doctest::Approx(ref.dot(a.data(), b.data(), n)).epsilon(1e-12));
      auto y1 = vec(n), y2 = y1;
      t->axpy(0.7, a.data(), y1.data(), n);
      ref.axpy(0.7, a.data(), y2.data(), n);
      for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-12));
      for (std::size_t rows : {1u, 5u, 9u}) {
        const auto w = vec(rows * n), x = vec(n), yg = vec(rows);
        std::vector<double> o1(rows), o2(rows);
        t->matvec(w.data(), x.data(), o1.data(), rows, n);
        ref.matvec(w.data(), x.data(), o2.data(), rows, n);
        for (std::size_t i = 0; i < rows; ++i) CHECK(o1[i] == doctest::Approx(o2[i]).epsilon(1e-12));
        std::vector<double> g1(n, 0.5), g2(n, 0.5);
        t->matvec_t_acc(w.data(), yg.data(), g1.data(), rows, n);
        ref.matvec_t_acc(w.data(), yg.data(), g2.data(), rows, n);
        for (std::size_t i = 0; i < n; ++i) CHECK(g1[i] == doctest::Approx(g2[i]).epsilon(1e-12));
        std::vector<double> wg1(rows * n, 0.1), wg2(rows * n, 0.1);
        t->outer_acc(yg.data(), x.data(), wg1.data(), rows, n);
        ref.outer_acc(yg.data(), x.data(), wg2.data(), rows, n);
        for (std::size_t i = 0; i < rows * n; ++i) CHECK(wg1[i] == doctest::Approx(wg2[i]).epsilon(1e-12));
      }
      auto p1 = vec(n), p2 = p1, m1 = vec(n), m2 = m1;
      std::vector<double> v1(n, 0.3), v2(n, 0.3);
      const auto g = vec(n);
      t->adam(p1.data(), g.data(), m1.data(), v1.data(), n, 1e-3, 0.9, 0.999, 1e-8, 0.5);
      ref.adam(p2.data(), g.data(), m2.data(), v2.data(), n, 1e-3, 0.9, 0.999, 1e-8, 0.5);
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(p1[i] == doctest::Approx(p2[i]).epsilon(1e-12));
        CHECK(m1[i] == doctest::Approx(m2[i]).epsilon(1e-12));
        CHECK(v1[i] == doctest::Approx(v2[i]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("model outputs agree across kernel variants") {
  const auto m = fixture::random_model(23);
  Rng rng(24);
  const auto text = random_text(rng, m.vocab(), 30);
  const auto active = kernels::active().isa;
  REQUIRE(kernels::select(kernels::Isa::kScalar));
  const double s_ref = surprisal(m, text);
  for (auto isa : {kernels::Isa::kAvx2, kernels::Isa::kNeon}) {
    if (!kernels::select(isa)) continue;
    CHECK(surprisal(m, text) == doctest::Approx(s_ref).epsilon(1e-10));
  }
  kernels::select(active);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  auto m = fixture::random_model(25);
  TrainingState st;
  st.step = 17;
  AdamState adam;
  adam.m.assign(m.param_count(), 1.5);
  adam.v.assign(m.param_count(), 1e-300);
  adam.m[1] = -2.0;
  adam.v[0] = 0.25;
  adam.t = 9;
  st.adam = adam;
  st.score_stats = RunningMoments::from_state(4, 0.1, 0.7);
  st.kl_coefficient = 0.123456789;
  const auto bytes = serialize_checkpoint(m, st);
  const auto ck = deserialize_checkpoint(bytes);
  CHECK(ck.model == m);
  CHECK(ck.state.step == 17);
  CHECK(*ck.state.adam == *st.adam);
  CHECK(*ck.state.score_stats == *st.score_stats);
  CHECK(*ck.state.kl_coefficient == *st.kl_coefficient);
  CHECK(serialize_checkpoint(ck.model, ck.state) == bytes);

  const auto dir = fixture::temp_dir("ckpt");
  save_checkpoint(dir / "m.ckpt", m, st);
  CHECK(load_checkpoint(dir / "m.ckpt").model == m);

  std::string corrupt = bytes;
  corrupt.resize(corrupt.size() / 2);
  CHECK_THROWS_AS(deserialize_checkpoint(corrupt), Error);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), Error);
  TrainingState wrong;
  wrong.adam = AdamState{{1.5, -2.0}, {0.25, 1.0}, 9};
  CHECK_THROWS_AS(deserialize_checkpoint(serialize_checkpoint(m, wrong)), Error);
}
