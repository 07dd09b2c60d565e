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

// PPO training of the speaker against a frozen listener.
//
// Per-token rewards follow the usual RLHF shaping: every action pays
// -beta * (log pi_old - log pi_ref), and the final action also receives the
// normalized episode score. Returns are undiscounted sums of future
// rewards; advantages subtract the value estimate recorded at sampling
// time. The KL coefficient beta adapts toward a target sequence KL.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "refgame/agents.hpp"
#include "refgame/checkpoint.hpp"
#include "refgame/corpus.hpp"
#include "refgame/game.hpp"
#include "refgame/lm.hpp"
#include "refgame/stats.hpp"

namespace refgame {

struct PPOConfig {
  double learning_rate = 1.41e-5;
  int ppo_epochs = 4;
  int minibatch_size = 64;
  int batch_size = 512;
  double clip_range = 0.2;
  double ratio_threshold = 10.0;
  double kl_coefficient = 0.2;  // initial value
  bool adaptive_kl = true;
  double kl_target = 6.0;
  double kl_horizon = 10000.0;
  double vf_coef = 0.1;
  double max_grad_norm = 0.0;  // <= 0 disables clipping
  bool use_score_normalization = true;
  bool use_score_scaling = true;
  int total_steps = 240;
  std::uint64_t seed = 7;

  void validate() const;
};

// One sampled episode with everything the update needs.
struct Rollout {
  EpisodeRecord episode;
  TokenSequence prompt;                      // passage <sep>
  TokenSequence actions;                     // summary tokens, then <eos> if emitted
  std::vector<std::vector<TokenId>> supports;
  std::vector<double> old_logprobs;          // behaviour policy, per action
  std::vector<double> ref_logprobs;          // reference policy, same supports
  std::vector<double> values;                // value head at sampling time
  double shaped_score = 0.0;                 // after normalization / scaling
  std::vector<double> rewards, returns, advantages;
};

struct RolloutBatch {
  std::vector<Rollout> items;
  double score_mean = 0.0;
  double score_std = 0.0;
};

// Samples batch_size episodes (dataset items drawn with replacement) and
// records behaviour log-probabilities and values. Seeds derive from
// (seed, step, episode index).
RolloutBatch collect_rollouts(const Speaker& speaker, const Listener& listener, const World& world,
                              std::span<const QAExample> dataset, const BottleneckSpec& bottleneck,
                              int batch_size, std::uint64_t seed, int step = 0);

// Scaling divides by the running standard deviation; normalization also
// subtracts the running mean. The running statistics absorb the raw batch
// before they are applied. A std below 1e-8 counts as 1.
std::vector<double> normalize_scores(std::span<const double> scores, RunningMoments& running,
                                     const PPOConfig& cfg);

// Log-probabilities of `actions` after `prompt` under `model`, each
// renormalized over the matching support at `temperature`. Optionally
// returns value-head outputs at the same positions.
std::vector<double> action_logprobs(const PolicyModel& model, std::span<const TokenId> prompt,
                                    std::span<const TokenId> actions,
                                    std::span<const std::vector<TokenId>> supports,
                                    double temperature, std::vector<double>* values = nullptr);

// Fills ref_logprobs, shaped_score, rewards, returns and advantages.
void finalize_rollouts(RolloutBatch& batch, const PolicyModel& reference,
                       std::span<const double> shaped_scores, double kl_coefficient,
                       double temperature);

struct MinibatchLoss {
  double loss = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double max_ratio = 1.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  std::size_t tokens = 0;
};

// Clipped surrogate plus value loss averaged over the minibatch's action
// tokens; adds its gradient into `grad` when non-empty.
MinibatchLoss ppo_minibatch_loss(const PolicyModel& model, std::span<const Rollout* const> items,
                                 const PPOConfig& cfg, double temperature, std::span<double> grad);

struct PPOStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  int minibatches = 0;
  int skipped_minibatches = 0;
};

// ppo_epochs passes over shuffled minibatches. A minibatch whose largest
// ratio exceeds ratio_threshold is skipped. A non-finite loss throws Error
// after dumping the minibatch to `dump_path` (when non-empty).
PPOStats ppo_update(Speaker& speaker, const RolloutBatch& batch, const PPOConfig& cfg,
                    AdamState& adam, std::uint64_t shuffle_seed,
                    const std::filesystem::path& dump_path = {});

// Adaptive KL controller update after a batch with mean sequence KL `kl`.
double update_kl_coefficient(double coefficient, double kl, int n_steps, const PPOConfig& cfg);

struct RunLogRow {
  int step = 0;
  double mean_reward = 0.0;
  double mean_penalty = 0.0;
  double mean_score = 0.0;
  double bleu = 0.0;
  double edit_distance_norm = 0.0;
  double function_word_fraction = 0.0;
  double mean_sentence_length = 0.0;
  double mean_word_length = 0.0;
  double grammatical_error_rate = 0.0;
  double kl = 0.0;
  double clip_fraction = 0.0;
  int skipped_minibatches = 0;
  double summary_tokens = 0.0;
  double listener_surprisal = 0.0;
};

const std::vector<std::string>& run_log_columns();
std::string run_log_header();
std::string format_run_log_row(const RunLogRow& row);
std::vector<RunLogRow> read_run_log(const std::filesystem::path& path);

struct TrainBundle {
  const World* world = nullptr;
  std::span<const QAExample> dataset;
  const Listener* listener = nullptr;
  const PolicyModel* reference = nullptr;  // frozen KL anchor
  BottleneckSpec bottleneck;
  PPOConfig ppo;
};

// Mutable optimizer-side state of a run; persisted in checkpoints.
struct RlState {
  int step = 0;
  AdamState adam;
  RunningMoments score_stats;
  double kl_coefficient = 0.0;
};

RlState initial_rl_state(const PPOConfig& cfg);

// Conversions to and from the checkpoint container. Fields missing from a
// checkpoint fall back to initial_rl_state(cfg).
TrainingState to_training_state(const RlState& state);
RlState rl_state_from(const TrainingState& ts, const PPOConfig& cfg);

struct TrainOutput {
  std::filesystem::path dir;       // empty: no files written
  int checkpoint_interval = 0;     // 0: only the final checkpoint
  bool write_episodes = true;
  std::function<void(const RunLogRow&)> on_step;
};

// One collect -> normalize -> update cycle.
RunLogRow train_step(Speaker& speaker, const TrainBundle& bundle, RlState& state,
                     const TrainOutput& out);

// Runs steps state.step .. ppo.total_steps - 1. With out.dir set, writes
// run_log.csv, episodes.jsonl and checkpoints under it; the log is flushed
// after every step, so an aborted run keeps its completed rows.
std::vector<RunLogRow> train(Speaker& speaker, const TrainBundle& bundle, RlState& state,
                             const TrainOutput& out);

struct MixedSchedule {
  int lm_steps = 1;    // next-word prediction steps per cycle
  int game_steps = 1;  // PPO steps per cycle
  int cycles = 100;

  void validate() const;
};

struct MixedLogRow {
  int cycle = 0;
  std::string phase;  // "lm" or "game"
  int phase_step = 0;
  double lm_loss = 0.0;
  double held_out_loss = 0.0;
  double mean_reward = 0.0;
  double mean_score = 0.0;
};

// Alternates LM and game objectives on the same speaker. The LM phase uses
// `lm_cfg` with steps = cycles * lm_steps and its own Adam state.
std::vector<MixedLogRow> train_mixed(Speaker& speaker, std::span<const LmExample> text_corpus,
                                     const TrainBundle& bundle, const PretrainConfig& lm_cfg,
                                     const MixedSchedule& schedule,
                                     const std::function<void(const MixedLogRow&)>& on_row = {});

}  // namespace refgame
