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

// Experiment configuration and the orchestration behind each CLI command.
//
// The configuration is one JSON document whose top-level sections are named
// after the types they fill. Unknown keys anywhere are usage errors. Every
// command writes the fully resolved configuration and an environment stamp
// into its output directory before doing any work.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "refgame/agents.hpp"
#include "refgame/corpus.hpp"
#include "refgame/game.hpp"
#include "refgame/lm.hpp"
#include "refgame/model.hpp"
#include "refgame/perturb.hpp"
#include "refgame/rl.hpp"

namespace refgame {

struct DataConfig {
  int n_train = 20000;
  int n_eval = 500;
  std::uint64_t train_seed = 1;
  std::uint64_t eval_seed = 2;
};

// Prepared assets. Empty paths are filled in by prepare_assets().
struct PathsConfig {
  std::string train_dataset;
  std::string eval_dataset;
  std::string speaker_checkpoint;
  std::string listener_lm_checkpoint;
  std::string listener_qa_checkpoint;
};

struct ListenerSetup {
  ListenerKind kind = ListenerKind::kOracle;
  ModelDims dims;
  // Plain-text LM that scores surprisal, shared by both listener kinds.
  PretrainConfig lm_training{.steps = 1500,
                             .batch_size = 64,
                             .learning_rate = 1e-3,
                             .max_grad_norm = 1.0,
                             .held_out_fraction = 0.05,
                             .eval_interval = 250,
                             .seed = 13,
                             .warmup_steps = 100,
                             .cosine_decay = true};
  ListenerConfig qa;
  OracleRules oracle;
  std::uint64_t init_seed = 5;
};

struct SpeakerSetup {
  // Room for a passage plus the full generation budget.
  ModelDims dims{.context_window = 256};
  DecodeConfig decode;
  PretrainConfig warm_start{.steps = 3000,
                            .batch_size = 64,
                            .learning_rate = 1e-3,
                            .max_grad_norm = 1.0,
                            .held_out_fraction = 0.05,
                            .eval_interval = 250,
                            .seed = 17,
                            .warmup_steps = 100,
                            .cosine_decay = true};
  SummaryBootstrap bootstrap;
  std::uint64_t init_seed = 3;
};

struct FeasibilityConfig {
  int episodes = 500;
  ListenerKind listener = ListenerKind::kLearned;
  std::uint64_t seed = 21;
};

struct SweepConfig {
  std::vector<BottleneckKind> kinds = {BottleneckKind::kLength, BottleneckKind::kSurprisal};
  std::vector<double> lambdas = {0.0, 0.1, 0.5, 0.9, 1.0};
  BottleneckMode mode = BottleneckMode::kPenalty;
  double cutoff_budget = 0.0;
};

struct MixedConfig {
  MixedSchedule schedule;
  PretrainConfig lm;  // steps are derived from the schedule
  bool from_scratch = false;  // start from a fresh model instead of the warm start
};

struct ExperimentConfig {
  WorldSpec world;
  DataConfig data;
  PathsConfig paths;
  SpeakerSetup speaker;
  ListenerSetup listener;
  BottleneckSpec bottleneck;
  PPOConfig ppo;
  PerturbationGrid perturbation;
  FeasibilityConfig feasibility;
  SweepConfig sweep;
  MixedConfig mixed;
  std::vector<std::uint64_t> seeds = {7, 42, 99};
  std::string output_dir = "runs";
  int checkpoint_interval = 50;

  void validate() const;
};

// Strict JSON (de)serialization. Missing keys keep their defaults.
ExperimentConfig parse_config(const std::string& json_text, const std::string& origin = "config");
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& cfg);

// Writes config.resolved.json and env.json into `dir` (created if needed).
void write_run_header(const ExperimentConfig& cfg, const std::filesystem::path& dir,
                      const std::string& command);

// Log verbosity from REFGAME_LOG: "quiet", "info" (default) or "debug".
enum class LogLevel { kQuiet, kInfo, kDebug };
LogLevel log_level();
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

// ---- Commands ----
// Each returns normally on success and throws UsageError / Error otherwise.

// train.jsonl and eval.jsonl under `out`.
void cmd_generate_data(const ExperimentConfig& cfg, const std::filesystem::path& out);

// Speaker warm start on "passage <sep> bootstrap summary <eos>". Writes
// speaker.ckpt and pretrain_log.csv; with `resume`, continues from
// pretrain_latest.ckpt in `out`.
void cmd_pretrain(const ExperimentConfig& cfg, const std::filesystem::path& out, bool resume);

// Listener LM (listener_lm.ckpt) and, for the learned kind, the QA model
// (listener_qa.ckpt), plus listener_report.json.
void cmd_train_listener(const ExperimentConfig& cfg, const std::filesystem::path& out);

// One PPO run with cfg.bottleneck and cfg.ppo.seed.
void cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& out, bool resume);

void cmd_train_mixed(const ExperimentConfig& cfg, const std::filesystem::path& out);

void cmd_feasibility(const ExperimentConfig& cfg, const std::filesystem::path& out);

// kind x lambda x seed runs under out/<kind>_lambda<l>_seed<s>, then report.
void cmd_sweep(const ExperimentConfig& cfg, const std::filesystem::path& out);

// Aggregates run directories below `runs_root` into `out`.
void cmd_report(const std::filesystem::path& runs_root, const std::filesystem::path& out);

// ---- Report ----

struct RunRecord {
  std::filesystem::path dir;
  BottleneckKind kind = BottleneckKind::kNone;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  std::vector<RunLogRow> rows;
};

// Every directory below `root` holding run_log.csv and config.resolved.json,
// in path order. Throws Error on a log whose columns differ from the
// current schema.
std::vector<RunRecord> collect_runs(const std::filesystem::path& root);

// Metric columns of the run log, i.e. everything except "step".
std::vector<std::string> metric_names();
std::vector<double> metric_values(const RunLogRow& row);

// Rows averaged over the first / last `window` steps.
RunLogRow window_mean(std::span<const RunLogRow> rows, bool final_window, int window);
// min(20, steps / 5), at least 1.
int summary_window(std::size_t steps);

struct LambdaSummary {
  BottleneckKind kind = BottleneckKind::kNone;
  double lambda = 0.0;
  int n_runs = 0;
  RunLogRow initial;  // seed-averaged first-window means
  RunLogRow final;    // seed-averaged last-window means
};

// Per (kind, lambda), sorted by kind then lambda.
std::vector<LambdaSummary> summarize_lambdas(std::span<const RunRecord> runs);

// Smallest lambda of `kind` whose final reward is below its initial reward;
// NaN when there is none.
double reward_drop_threshold(std::span<const LambdaSummary> summaries, BottleneckKind kind);

// ---- Shared plumbing ----

struct Assets {
  World world;
  std::vector<QAExample> train;
  std::vector<QAExample> eval;
  PolicyModel speaker;
  PolicyModel listener_lm;
  std::optional<PolicyModel> listener_qa;
};

// Loads the assets named in cfg.paths, producing (and saving under
// `cache_dir`) any that are missing. `need_qa` also requires the learned
// listener's QA model. Without `need_speaker` the speaker is left at its
// initialization.
Assets prepare_assets(const ExperimentConfig& cfg, const std::filesystem::path& cache_dir,
                      bool need_qa, bool need_speaker = true);

Listener make_listener(const Assets& assets, const ExperimentConfig& cfg, ListenerKind kind);

std::string sweep_cell_name(BottleneckKind kind, double lambda, std::uint64_t seed);

}  // namespace refgame
