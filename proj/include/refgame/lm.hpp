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

// Language-model operations on a PolicyModel: next-token distributions,
// surprisal, constrained sampling and teacher-forced training.
//
// Sequence formats (the model always sees an implicit leading <bos>):
//   plain text          text <eos>
//   conditional         prompt <sep> target <eos>

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "refgame/common.hpp"
#include "refgame/model.hpp"

namespace refgame {

// Log-probabilities of the token following `prefix`. Throws Error if the
// prefix does not fit in the context window.
std::vector<double> next_token_logprobs(const PolicyModel& model, std::span<const TokenId> prefix);

// -sum_t log P(text_t | conditioning, text_<t), in nats.
double surprisal(const PolicyModel& model, std::span<const TokenId> text,
                 std::span<const TokenId> conditioning = {});

struct DecodeConfig {
  int max_new_tokens = 200;
  int min_length = 2;
  int top_k = 50;
  double top_p = 0.1;
  double epsilon_cutoff = 3e-3;
  double temperature = 1.0;
  int num_beams = 3;  // best-of-n sampling
  std::uint64_t seed = 0;

  void validate() const;
};

// One sampled continuation. `logprobs[i]` is the log-probability of action
// i under the filtered, renormalized distribution it was drawn from;
// `supports[i]` lists the tokens that distribution allowed. When the
// sequence was ended by <eos>, that action is the last entry of `logprobs`
// but is not part of `tokens`.
struct Generation {
  TokenSequence tokens;
  std::vector<double> logprobs;
  std::vector<std::vector<TokenId>> supports;
  bool ended_with_eos = false;

  TokenSequence actions(TokenId eos) const;
  double total_logprob() const;
};

// Samples a continuation of `prompt`. With num_beams > 1, draws that many
// candidates and keeps the one with the highest total log-probability.
Generation generate(const PolicyModel& model, std::span<const TokenId> prompt,
                    const DecodeConfig& cfg);

// Tokens the decoding filters allow given next-token `logprobs` (already
// temperature-scaled), sorted by token id. `allow_eos` is false while the
// output is shorter than min_length.
std::vector<TokenId> decoding_support(std::span<const double> logprobs, const DecodeConfig& cfg,
                                      TokenId eos, bool allow_eos, TokenId bos, TokenId sep);

// ---- Optimization ----

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double max_grad_norm = 1.0;  // <= 0 disables clipping
};

struct AdamState {
  std::vector<double> m, v;
  std::int64_t t = 0;
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// Clips `grad` to max_grad_norm, then applies one Adam step.
void adam_step(std::span<double> params, std::span<double> grad, AdamState& state,
               const AdamConfig& cfg);

// ---- Teacher-forced training ----

// `tokens` excludes the implicit <bos>. Loss covers tokens[i] for
// i >= loss_begin.
struct LmExample {
  TokenSequence tokens;
  std::size_t loss_begin = 0;
};

LmExample plain_text_example(std::span<const TokenId> text, TokenId eos);
LmExample conditional_example(std::span<const TokenId> prompt, std::span<const TokenId> target,
                              TokenId sep, TokenId eos);

// Summed negative log-likelihood over the loss positions of `ex`; adds
// d(sum)/d(params) * grad_scale into `grad` when it is non-empty. Returns
// the number of scored tokens through `n_tokens`.
double example_nll(const PolicyModel& model, const LmExample& ex, std::span<double> grad,
                   double grad_scale, std::size_t* n_tokens = nullptr);

// Mean per-token NLL over `examples`.
double mean_nll(const PolicyModel& model, std::span<const LmExample> examples);

struct PretrainConfig {
  int steps = 2000;
  int batch_size = 16;
  double learning_rate = 3e-3;
  double max_grad_norm = 1.0;
  double held_out_fraction = 0.1;  // 0: evaluate on the training set
  int eval_interval = 100;
  std::uint64_t seed = 1;
  // Linear warmup over the first warmup_steps, then (optionally) cosine
  // decay to learning_rate * min_lr_fraction at the last step.
  int warmup_steps = 0;
  bool cosine_decay = false;
  double min_lr_fraction = 0.1;

  void validate() const;
  double learning_rate_at(int step) const;
};

struct PretrainLogRow {
  int step = 0;
  double train_loss = 0.0;
  double held_out_loss = 0.0;  // NaN when not evaluated at this step
};

struct PretrainResult {
  std::vector<PretrainLogRow> log;
  double initial_held_out_loss = 0.0;
  double final_held_out_loss = 0.0;
};

// Stepwise form of pretrain_lm, for schedules that interleave other
// objectives. step(model, k) performs optimizer step k (0-based).
class LmTrainer {
 public:
  LmTrainer(std::span<const LmExample> corpus, const PretrainConfig& cfg,
            AdamState* state = nullptr);
  LmTrainer(const LmTrainer&) = delete;
  LmTrainer& operator=(const LmTrainer&) = delete;

  PretrainLogRow step(PolicyModel& model, int step);
  double held_out_loss(const PolicyModel& model) const { return mean_nll(model, held_out_); }
  AdamState& adam() { return *adam_; }

 private:
  PretrainConfig cfg_;
  std::vector<LmExample> train_, held_out_;
  AdamState own_;
  AdamState* adam_;
  std::vector<double> grad_;
};

// Minibatch Adam on mean token cross-entropy. Batches are drawn with
// replacement from a seed derived from (cfg.seed, step), so a run resumed
// from `start_step` with its Adam state continues exactly. Aborts with
// Error on a non-finite loss. `on_step` (optional) sees each log row.
PretrainResult pretrain_lm(PolicyModel& model, std::span<const LmExample> corpus,
                           const PretrainConfig& cfg, AdamState* state = nullptr,
                           int start_step = 0,
                           const std::function<void(const PretrainLogRow&)>& on_step = {});

// Plain-text convenience form.
PretrainResult pretrain_lm(PolicyModel& model, std::span<const TokenSequence> corpus,
                           const PretrainConfig& cfg);

// Deterministic train / held-out split used by pretrain_lm.
void split_held_out(std::span<const LmExample> corpus, double fraction, std::uint64_t seed,
                    std::vector<LmExample>& train, std::vector<LmExample>& held_out);

}  // namespace refgame
