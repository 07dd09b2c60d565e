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

#include "refgame/lm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <limits>
#include <numeric>

#include "refgame/kernels.hpp"

namespace refgame {
namespace {

std::vector<double> log_softmax(std::span<const double> logits, double temperature = 1.0) {
  std::vector<double> out(logits.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = logits[i] / temperature;
    mx = std::max(mx, out[i]);
  }
  double z = 0.0;
  for (double x : out) z += std::exp(x - mx);
  const double lse = mx + std::log(z);
  for (double& x : out) x -= lse;
  return out;
}

double logsumexp_over(std::span<const double> lp, std::span<const TokenId> support) {
  double mx = -std::numeric_limits<double>::infinity();
  for (TokenId t : support) mx = std::max(mx, lp[static_cast<std::size_t>(t)]);
  double z = 0.0;
  for (TokenId t : support) z += std::exp(lp[static_cast<std::size_t>(t)] - mx);
  return mx + std::log(z);
}

}  // namespace

std::vector<double> next_token_logprobs(const PolicyModel& model, std::span<const TokenId> prefix) {
  ForwardPass fp(model);
  fp.append(prefix);
  return log_softmax(fp.logits(fp.length() - 1));
}

double surprisal(const PolicyModel& model, std::span<const TokenId> text,
                 std::span<const TokenId> conditioning) {
  if (text.empty()) return 0.0;
  ForwardPass fp(model);
  fp.append(conditioning);
  fp.append(text.first(text.size() - 1));
  const std::size_t base = conditioning.size();
  double s = 0.0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto lp = log_softmax(fp.logits(base + i));
    s -= lp[static_cast<std::size_t>(text[i])];
  }
  return s;
}

void DecodeConfig::validate() const {
  if (max_new_tokens < 1) throw UsageError("DecodeConfig.max_new_tokens must be >= 1");
  if (min_length < 0 || min_length > max_new_tokens) {
    throw UsageError("DecodeConfig.min_length must lie in [0, max_new_tokens]");
  }
  if (top_k < 1) throw UsageError("DecodeConfig.top_k must be >= 1");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw UsageError("DecodeConfig.top_p must lie in (0, 1]");
  if (!(epsilon_cutoff >= 0.0 && epsilon_cutoff < 1.0)) {
    throw UsageError("DecodeConfig.epsilon_cutoff must lie in [0, 1)");
  }
  if (!(temperature > 0.0)) throw UsageError("DecodeConfig.temperature must be > 0");
  if (num_beams < 1) throw UsageError("DecodeConfig.num_beams must be >= 1");
}

TokenSequence Generation::actions(TokenId eos) const {
  TokenSequence a = tokens;
  if (ended_with_eos) a.push_back(eos);
  return a;
}

double Generation::total_logprob() const {
  return std::accumulate(logprobs.begin(), logprobs.end(), 0.0);
}

std::vector<TokenId> decoding_support(std::span<const double> logprobs, const DecodeConfig& cfg,
                                      TokenId eos, bool allow_eos, TokenId bos, TokenId sep) {
  std::vector<TokenId> allowed;
  allowed.reserve(logprobs.size());
  for (std::size_t i = 0; i < logprobs.size(); ++i) {
    const auto t = static_cast<TokenId>(i);
    if (t == bos || t == sep || (t == eos && !allow_eos)) continue;
    allowed.push_back(t);
  }
  if (allowed.empty()) throw Error("decoding_support: every token is masked");
  const double lse = logsumexp_over(logprobs, allowed);
  std::stable_sort(allowed.begin(), allowed.end(), [&](TokenId a, TokenId b) {
    return logprobs[static_cast<std::size_t>(a)] > logprobs[static_cast<std::size_t>(b)];
  });

  std::vector<TokenId> support;
  double cumulative = 0.0;
  const std::size_t k = std::min(allowed.size(), static_cast<std::size_t>(cfg.top_k));
  for (std::size_t i = 0; i < k; ++i) {
    if (i > 0 && cumulative >= cfg.top_p) break;
    const double p = std::exp(logprobs[static_cast<std::size_t>(allowed[i])] - lse);
    cumulative += p;
    if (i == 0 || p >= cfg.epsilon_cutoff) support.push_back(allowed[i]);
  }
  std::sort(support.begin(), support.end());
  return support;
}

Generation generate(const PolicyModel& model, std::span<const TokenId> prompt,
                    const DecodeConfig& cfg) {
  cfg.validate();
  const Vocabulary& vocab = model.vocab();
  const auto window = static_cast<std::size_t>(model.dims().context_window);
  if (prompt.size() > window) throw Error("generate: prompt exceeds the context window");
  const int room = static_cast<int>(window - prompt.size());
  const int max_new = std::min(cfg.max_new_tokens, room);
  if (max_new < cfg.min_length) throw Error("generate: no room left for min_length tokens");

  ForwardPass base(model);
  base.append(prompt);

  Generation best;
  bool have_best = false;
  for (int beam = 0; beam < cfg.num_beams; ++beam) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(beam)));
    ForwardPass fp = base;
    Generation g;
    while (true) {
      const auto lp = log_softmax(fp.logits(fp.length() - 1), cfg.temperature);
      const bool allow_eos = static_cast<int>(g.tokens.size()) >= cfg.min_length;
      auto support =
          decoding_support(lp, cfg, vocab.eos(), allow_eos, vocab.bos(), vocab.sep());
      const double lse = logsumexp_over(lp, support);
      double u = rng.uniform();
      TokenId choice = support.back();
      for (TokenId t : support) {
        u -= std::exp(lp[static_cast<std::size_t>(t)] - lse);
        if (u < 0.0) {
          choice = t;
          break;
        }
      }
      g.logprobs.push_back(lp[static_cast<std::size_t>(choice)] - lse);
      g.supports.push_back(std::move(support));
      if (choice == vocab.eos()) {
        g.ended_with_eos = true;
        break;
      }
      g.tokens.push_back(choice);
      if (static_cast<int>(g.tokens.size()) >= max_new) break;
      fp.append(choice);
    }
    if (!have_best || g.total_logprob() > best.total_logprob()) {
      best = std::move(g);
      have_best = true;
    }
  }
  return best;
}

void adam_step(std::span<double> params, std::span<double> grad, AdamState& state,
               const AdamConfig& cfg) {
  if (grad.size() != params.size()) throw Error("adam_step: size mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size()) throw Error("adam_step: optimizer state size mismatch");
  const auto& K = kernels::active();
  if (cfg.max_grad_norm > 0.0) {
    const double norm = std::sqrt(K.dot(grad.data(), grad.data(), grad.size()));
    if (norm > cfg.max_grad_norm) {
      const double s = cfg.max_grad_norm / norm;
      for (double& g : grad) g *= s;
    }
  }
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double step_size = cfg.learning_rate / (1.0 - std::pow(cfg.beta1, t));
  const double bias2_sqrt = std::sqrt(1.0 - std::pow(cfg.beta2, t));
  K.adam(params.data(), grad.data(), state.m.data(), state.v.data(), params.size(), step_size,
         cfg.beta1, cfg.beta2, cfg.eps, bias2_sqrt);
}

LmExample plain_text_example(std::span<const TokenId> text, TokenId eos) {
  LmExample ex;
  ex.tokens.assign(text.begin(), text.end());
  ex.tokens.push_back(eos);
  return ex;
}

LmExample conditional_example(std::span<const TokenId> prompt, std::span<const TokenId> target,
                              TokenId sep, TokenId eos) {
  LmExample ex;
  ex.tokens.assign(prompt.begin(), prompt.end());
  ex.tokens.push_back(sep);
  ex.loss_begin = ex.tokens.size();
  ex.tokens.insert(ex.tokens.end(), target.begin(), target.end());
  ex.tokens.push_back(eos);
  return ex;
}

double example_nll(const PolicyModel& model, const LmExample& ex, std::span<double> grad,
                   double grad_scale, std::size_t* n_tokens) {
  const std::size_t n = ex.tokens.size();
  if (n_tokens) *n_tokens = n > ex.loss_begin ? n - ex.loss_begin : 0;
  if (n <= ex.loss_begin) return 0.0;
  ForwardPass fp(model);
  fp.append(std::span<const TokenId>(ex.tokens).first(n - 1));
  const std::size_t v = model.vocab_size();
  const bool want_grad = !grad.empty();
  std::vector<double> dlogits(want_grad ? fp.length() * v : 0, 0.0);
  double nll = 0.0;
  for (std::size_t i = ex.loss_begin; i < n; ++i) {
    const auto lp = log_softmax(fp.logits(i));
    const auto target = static_cast<std::size_t>(ex.tokens[i]);
    nll -= lp[target];
    if (want_grad) {
      double* row = dlogits.data() + i * v;
      for (std::size_t j = 0; j < v; ++j) row[j] = grad_scale * std::exp(lp[j]);
      row[target] -= grad_scale;
    }
  }
  if (want_grad) {
    std::vector<double> dvalue(fp.length(), 0.0);
    fp.backward(dlogits, dvalue, grad);
  }
  return nll;
}

double mean_nll(const PolicyModel& model, std::span<const LmExample> examples) {
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& ex : examples) {
    std::size_t n = 0;
    total += example_nll(model, ex, {}, 0.0, &n);
    tokens += n;
  }
  return tokens == 0 ? 0.0 : total / static_cast<double>(tokens);
}

void PretrainConfig::validate() const {
  if (steps < 0) throw UsageError("PretrainConfig.steps must be >= 0");
  if (batch_size < 1) throw UsageError("PretrainConfig.batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw UsageError("PretrainConfig.learning_rate must be > 0");
  if (!(held_out_fraction >= 0.0 && held_out_fraction < 1.0)) {
    throw UsageError("PretrainConfig.held_out_fraction must lie in [0, 1)");
  }
  if (eval_interval < 1) throw UsageError("PretrainConfig.eval_interval must be >= 1");
  if (warmup_steps < 0) throw UsageError("PretrainConfig.warmup_steps must be >= 0");
  if (!(min_lr_fraction >= 0.0 && min_lr_fraction <= 1.0)) {
    throw UsageError("PretrainConfig.min_lr_fraction must lie in [0, 1]");
  }
}

double PretrainConfig::learning_rate_at(int step) const {
  if (step < warmup_steps) return learning_rate * (step + 1) / warmup_steps;
  if (!cosine_decay || steps <= warmup_steps + 1) return learning_rate;
  const double progress = std::clamp(
      static_cast<double>(step - warmup_steps) / (steps - warmup_steps - 1), 0.0, 1.0);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return learning_rate * (min_lr_fraction + (1.0 - min_lr_fraction) * cosine);
}

void split_held_out(std::span<const LmExample> corpus, double fraction, std::uint64_t seed,
                    std::vector<LmExample>& train, std::vector<LmExample>& held_out) {
  train.clear();
  held_out.clear();
  if (fraction <= 0.0 || corpus.size() < 2) {
    train.assign(corpus.begin(), corpus.end());
    held_out = train;
    return;
  }
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0x68656c64));
  rng.shuffle(order);
  auto n_held = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(corpus.size())));
  n_held = std::clamp<std::size_t>(n_held, 1, corpus.size() - 1);
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_held ? held_out : train).push_back(corpus[order[i]]);
  }
}

LmTrainer::LmTrainer(std::span<const LmExample> corpus, const PretrainConfig& cfg,
                     AdamState* state)
    : cfg_(cfg), adam_(state ? state : &own_) {
  cfg_.validate();
  if (corpus.empty()) throw UsageError("pretrain_lm: empty corpus");
  split_held_out(corpus, cfg_.held_out_fraction, cfg_.seed, train_, held_out_);
}

PretrainLogRow LmTrainer::step(PolicyModel& model, int step) {
  AdamConfig acfg;
  acfg.learning_rate = cfg_.learning_rate_at(step);
  acfg.max_grad_norm = cfg_.max_grad_norm;
  grad_.assign(model.param_count(), 0.0);

  Rng rng(derive_seed(cfg_.seed, static_cast<std::uint64_t>(step)));
  std::vector<std::size_t> batch(static_cast<std::size_t>(cfg_.batch_size));
  std::size_t tokens = 0;
  for (auto& b : batch) {
    b = rng.below(train_.size());
    const auto& ex = train_[b];
    tokens += ex.tokens.size() > ex.loss_begin ? ex.tokens.size() - ex.loss_begin : 0;
  }
  if (tokens == 0) throw Error("pretrain_lm: batch has no scored tokens");
  const double scale = 1.0 / static_cast<double>(tokens);
  double nll = 0.0;
  for (std::size_t b : batch) nll += example_nll(model, train_[b], grad_, scale);
  const double loss = nll * scale;
  if (!std::isfinite(loss)) {
    throw Error("pretrain_lm: non-finite loss at step " + std::to_string(step + 1));
  }
  adam_step(model.params(), grad_, *adam_, acfg);

  PretrainLogRow row;
  row.step = step + 1;
  row.train_loss = loss;
  row.held_out_loss = std::numeric_limits<double>::quiet_NaN();
  if ((step + 1) % cfg_.eval_interval == 0 || step + 1 == cfg_.steps) {
    row.held_out_loss = held_out_loss(model);
    if (!std::isfinite(row.held_out_loss)) {
      throw Error("pretrain_lm: non-finite held-out loss at step " + std::to_string(step + 1));
    }
  }
  return row;
}

PretrainResult pretrain_lm(PolicyModel& model, std::span<const LmExample> corpus,
                           const PretrainConfig& cfg, AdamState* state, int start_step,
                           const std::function<void(const PretrainLogRow&)>& on_step) {
  LmTrainer trainer(corpus, cfg, state);
  PretrainResult result;
  result.initial_held_out_loss = trainer.held_out_loss(model);
  result.final_held_out_loss = result.initial_held_out_loss;
  for (int step = start_step; step < cfg.steps; ++step) {
    const auto row = trainer.step(model, step);
    if (!std::isnan(row.held_out_loss)) result.final_held_out_loss = row.held_out_loss;
    result.log.push_back(row);
    if (on_step) on_step(row);
  }
  return result;
}

PretrainResult pretrain_lm(PolicyModel& model, std::span<const TokenSequence> corpus,
                           const PretrainConfig& cfg) {
  std::vector<LmExample> examples;
  examples.reserve(corpus.size());
  for (const auto& text : corpus) examples.push_back(plain_text_example(text, model.vocab().eos()));
  return pretrain_lm(model, examples, cfg);
}

}  // namespace refgame
