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

// refgame: command-line driver for the summarization game experiments.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "refgame/experiment.hpp"

namespace {

namespace fs = std::filesystem;
using refgame::ExperimentConfig;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool resume = false;
  std::string runs;
};

ExperimentConfig resolve(const Options& opt) {
  ExperimentConfig cfg = opt.config.empty() ? ExperimentConfig{} : refgame::load_config(opt.config);
  if (opt.seed) {
    cfg.ppo.seed = *opt.seed;
    cfg.seeds = {*opt.seed};
  }
  cfg.validate();
  return cfg;
}

fs::path out_dir(const Options& opt, const ExperimentConfig& cfg, const char* command) {
  if (!opt.out.empty()) return opt.out;
  return fs::path(cfg.output_dir) / command;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speaker/listener summarization game with length and surprisal bottlenecks"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* sub, bool with_resume) {
    sub->add_option("--config", opt.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "Override the PPO seed (and the sweep seed list)");
    sub->add_option("--out", opt.out, "Output directory");
    if (with_resume) sub->add_flag("--resume", opt.resume, "Continue from the latest checkpoint");
  };

  auto* gen = app.add_subcommand("generate-data", "Write train/eval QA datasets");
  add_common(gen, false);
  auto* pre = app.add_subcommand("pretrain", "Warm-start the speaker");
  add_common(pre, true);
  auto* lis = app.add_subcommand("train-listener", "Train the listener LM and QA model");
  add_common(lis, false);
  auto* trn = app.add_subcommand("train", "One PPO run");
  add_common(trn, true);
  auto* mix = app.add_subcommand("train-mixed", "Alternate language modelling and the game");
  add_common(mix, false);
  auto* fea = app.add_subcommand("feasibility", "Listener degradation under perturbations");
  add_common(fea, false);
  auto* swp = app.add_subcommand("sweep", "Bottleneck kind x lambda x seed grid");
  add_common(swp, false);
  auto* rep = app.add_subcommand("report", "Aggregate run directories");
  rep->add_option("runs", opt.runs, "Directory containing runs")->required();
  rep->add_option("--out", opt.out, "Report directory (default: <runs>/report)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (rep->parsed()) {
      refgame::cmd_report(opt.runs, opt.out.empty() ? fs::path(opt.runs) / "report" : fs::path(opt.out));
      return 0;
    }
    const ExperimentConfig cfg = resolve(opt);
    if (gen->parsed()) refgame::cmd_generate_data(cfg, out_dir(opt, cfg, "data"));
    if (pre->parsed()) refgame::cmd_pretrain(cfg, out_dir(opt, cfg, "pretrain"), opt.resume);
    if (lis->parsed()) refgame::cmd_train_listener(cfg, out_dir(opt, cfg, "listener"));
    if (trn->parsed()) refgame::cmd_train(cfg, out_dir(opt, cfg, "train"), opt.resume);
    if (mix->parsed()) refgame::cmd_train_mixed(cfg, out_dir(opt, cfg, "mixed"));
    if (fea->parsed()) refgame::cmd_feasibility(cfg, out_dir(opt, cfg, "feasibility"));
    if (swp->parsed()) refgame::cmd_sweep(cfg, out_dir(opt, cfg, "sweep"));
  } catch (const refgame::UsageError& e) {
    std::cerr << "refgame: usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "refgame: error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
