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

#include <algorithm>
#include <cstdlib>
#include <fstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "json.hpp"
#include "refgame/checkpoint.hpp"
#include "refgame/experiment.hpp"

using namespace refgame;
namespace fs = std::filesystem;

namespace {

// Everything tiny: a sweep cell takes well under a second.
ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.data.n_train = 64;
  cfg.data.n_eval = 16;
  cfg.speaker.dims = fixture::tiny_dims();
  cfg.speaker.dims.context_window = 96;
  cfg.speaker.decode = fixture::sampling_decode(12);
  cfg.speaker.warm_start.steps = 4;
  cfg.speaker.warm_start.batch_size = 4;
  cfg.speaker.warm_start.eval_interval = 4;
  cfg.speaker.warm_start.warmup_steps = 0;
  cfg.listener.dims = fixture::tiny_dims();
  cfg.listener.lm_training = cfg.speaker.warm_start;
  cfg.ppo.batch_size = 4;
  cfg.ppo.minibatch_size = 2;
  cfg.ppo.ppo_epochs = 1;
  cfg.ppo.total_steps = 2;
  cfg.ppo.learning_rate = 1e-3;
  cfg.checkpoint_interval = 1;
  return cfg;
}

std::string slurp(const fs::path& p) { return read_file(p); }

int run_cli(const std::string& args) {
  const std::string cmd = std::string(REFGAME_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream(p) << s;
}

// A fake run directory with a given log.
void fake_run(const fs::path& dir, BottleneckKind kind, double lambda, std::uint64_t seed,
              const std::vector<RunLogRow>& rows) {
  auto cfg = tiny_config();
  cfg.bottleneck.kind = kind;
  cfg.bottleneck.lambda = lambda;
  cfg.ppo.seed = seed;
  write_run_header(cfg, dir, "train");
  std::string text = run_log_header() + "\n";
  for (const auto& r : rows) text += format_run_log_row(r) + "\n";
  write_text(dir / "run_log.csv", text);
}

std::vector<RunLogRow> ramp(int steps, double offset) {
  std::vector<RunLogRow> rows;
  for (int s = 1; s <= steps; ++s) {
    RunLogRow r;
    r.step = s;
    r.mean_reward = offset + 0.01 * s;
    r.mean_penalty = 0.5 - 0.001 * s;
    r.mean_score = r.mean_reward;
    r.function_word_fraction = 0.4;
    rows.push_back(r);
  }
  return rows;
}

}  // namespace

TEST_CASE("config: defaults round trip and strictness") {
  const ExperimentConfig def;
  const auto text = config_to_json(def);
  const auto back = parse_config(text);
  CHECK(config_to_json(back) == text);
  CHECK(back.seeds == std::vector<std::uint64_t>{7, 42, 99});
  CHECK(back.sweep.lambdas == std::vector<double>{0.0, 0.1, 0.5, 0.9, 1.0});

  CHECK_THROWS_AS(parse_config(R"({"Bogus": 1})"), UsageError);
  CHECK_THROWS_AS(parse_config(R"({"PPOConfig": {"learning_rat": 1}})"), UsageError);
  CHECK_THROWS_AS(parse_config(R"({"PPOConfig": {"batch_size": "x"}})"), UsageError);
  CHECK_THROWS_AS(parse_config(R"({"PPOConfig": {"batch_size": 0}})"), UsageError);
  CHECK_THROWS_AS(parse_config(R"({"Listener": {"kind": "psychic"}})"), UsageError);
  CHECK_THROWS_AS(parse_config("{not json"), UsageError);
  const auto c = parse_config(R"({"BottleneckSpec": {"kind": "surprisal", "lambda": 0.9},
                                 "PerturbationGrid": {"truncation": [[1, 0.1], [3, 0.9]]}})");
  CHECK(c.bottleneck.kind == BottleneckKind::kSurprisal);
  CHECK(c.bottleneck.lambda == 0.9);
  CHECK(c.perturbation.truncation == std::vector<std::pair<int, double>>{{1, 0.1}, {3, 0.9}});
}

TEST_CASE("shipped configs load; the defaults file matches the library") {
  const std::filesystem::path dir = REFGAME_CONFIG_DIR;
  const auto desk = load_config(dir / "desk.json");
  CHECK(desk.ppo.batch_size == 64);
  CHECK(desk.speaker.decode.top_p == 1.0);
  CHECK(slurp(dir / "paper_defaults.json") == config_to_json(ExperimentConfig{}) + "\n");
}

TEST_CASE("report: single run has zero-width intervals") {
  const auto root = fixture::temp_dir("report_single");
  fake_run(root / "a", BottleneckKind::kLength, 0.5, 7, ramp(10, 0.2));
  cmd_report(root, root / "report");
  std::ifstream in(root / "report" / "aggregate.csv");
  std::string header, line;
  std::getline(in, header);
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    std::vector<double> f;
    std::stringstream ss(line);
    std::string cell;
    int col = 0;
    while (std::getline(ss, cell, ',')) {
      if (col++ >= 4) f.push_back(std::stod(cell));
    }
    for (std::size_t i = 0; i + 2 < f.size(); i += 3) {
      CHECK(f[i + 1] == f[i]);
      CHECK(f[i + 2] == f[i]);
    }
  }
  CHECK(rows == 10);
  CHECK(fs::exists(root / "report" / "plots" / "length_mean_reward.svg"));
}

TEST_CASE("report: identical seeds average to the same log; lambda table; idempotence") {
  const auto root = fixture::temp_dir("report_three");
  for (std::uint64_t seed : {7, 42, 99}) {
    fake_run(root / ("len_" + std::to_string(seed)), BottleneckKind::kLength, 0.0, seed, ramp(20, 0.1));
    fake_run(root / ("len9_" + std::to_string(seed)), BottleneckKind::kLength, 0.9, seed, ramp(20, -0.5));
  }
  const auto runs = collect_runs(root);
  CHECK(runs.size() == 6);
  const auto sums = summarize_lambdas(runs);
  REQUIRE(sums.size() == 2);
  CHECK(sums[0].lambda == 0.0);
  CHECK(sums[1].lambda == 0.9);
  CHECK(sums[0].n_runs == 3);
  const auto it = std::find_if(runs.begin(), runs.end(), [](const RunRecord& r) { return r.lambda == 0.0; });
  REQUIRE(it != runs.end());
  const auto single = window_mean(it->rows, true, summary_window(20));
  CHECK(sums[0].final.mean_reward == doctest::Approx(single.mean_reward).epsilon(1e-14));

  cmd_report(root, root / "report");
  const auto first = slurp(root / "report" / "aggregate.csv");
  const auto table = slurp(root / "report" / "lambda_summary.csv");
  CHECK(table.find("length,0.9,3") != std::string::npos);
  cmd_report(root, root / "report");
  CHECK(slurp(root / "report" / "aggregate.csv") == first);
  CHECK(slurp(root / "report" / "lambda_summary.csv") == table);

  // Per-step means equal the (identical) inputs.
  std::ifstream in(root / "report" / "aggregate.csv");
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  CHECK(line.rfind("length,0,1,3,0.11,0.11,0.11", 0) == 0);
}

TEST_CASE("report: threshold lambda and mixed schemas") {
  const auto root = fixture::temp_dir("report_threshold");
  fake_run(root / "l0", BottleneckKind::kLength, 0.0, 7, ramp(10, 0.1));
  auto falling = ramp(10, 0.1);
  for (auto& r : falling) r.mean_reward = 1.0 - 0.05 * r.step;
  fake_run(root / "l5", BottleneckKind::kLength, 0.5, 7, falling);
  fake_run(root / "l9", BottleneckKind::kLength, 0.9, 7, falling);
  fake_run(root / "s9", BottleneckKind::kSurprisal, 0.9, 7, falling);
  const auto sums = summarize_lambdas(collect_runs(root));
  CHECK(reward_drop_threshold(sums, BottleneckKind::kLength) == 0.5);
  CHECK(reward_drop_threshold(sums, BottleneckKind::kSurprisal) == 0.9);
  CHECK(std::isnan(reward_drop_threshold(sums, BottleneckKind::kNone)));

  write_text(root / "l0" / "run_log.csv", "step,mean_reward\n1,0.5\n");
  CHECK_THROWS_AS(collect_runs(root), Error);
}

TEST_CASE("sweep: full grid, resumption, identical reruns") {
  const auto out = fixture::temp_dir("sweep");
  auto cfg = tiny_config();
  cmd_sweep(cfg, out);
  int cells = 0;
  for (const auto& e : fs::directory_iterator(out)) {
    if (e.is_directory() && fs::exists(e.path() / "run_log.csv")) {
      ++cells;
      CHECK(fs::exists(e.path() / "DONE"));
      CHECK(fs::exists(e.path() / "config.resolved.json"));
      CHECK(fs::exists(e.path() / "env.json"));
      CHECK(fs::exists(e.path() / "checkpoints" / "final.ckpt"));
    }
  }
  CHECK(cells == 2 * 5 * 3);
  const auto aggregate = slurp(out / "report" / "aggregate.csv");

  // Interrupt one cell; the others are not rerun.
  const auto kept = out / sweep_cell_name(BottleneckKind::kLength, 0.0, 7);
  const auto redo = out / sweep_cell_name(BottleneckKind::kSurprisal, 0.5, 42);
  const auto kept_time = fs::last_write_time(kept / "run_log.csv");
  fs::remove(redo / "DONE");
  fs::remove_all(redo / "checkpoints");
  cmd_sweep(cfg, out);
  CHECK(fs::last_write_time(kept / "run_log.csv") == kept_time);
  CHECK(fs::exists(redo / "DONE"));
  CHECK(slurp(out / "report" / "aggregate.csv") == aggregate);

  // A fresh directory with the same config reproduces the aggregate.
  const auto out2 = fixture::temp_dir("sweep2");
  cmd_sweep(cfg, out2);
  CHECK(slurp(out2 / "report" / "aggregate.csv") == aggregate);
}

TEST_CASE("train command leaves inputs untouched and the listener frozen") {
  const auto base = fixture::temp_dir("train_cmd");
  auto cfg = tiny_config();
  cmd_generate_data(cfg, base / "data");
  cfg.paths.train_dataset = (base / "data" / "train.jsonl").string();
  cfg.paths.eval_dataset = (base / "data" / "eval.jsonl").string();
  const auto before = slurp(cfg.paths.train_dataset);
  cmd_train(cfg, base / "run", false);
  CHECK(slurp(cfg.paths.train_dataset) == before);
  const auto audit = nlohmann::json::parse(slurp(base / "run" / "audit.json"));
  CHECK(audit["listener_unchanged"] == true);
  CHECK(audit["reference_unchanged"] == true);
  for (const char* f : {"config.resolved.json", "env.json", "run_log.csv", "episodes.jsonl"}) {
    CHECK(fs::exists(base / "run" / f));
  }
}

TEST_CASE("cli exit codes and pretrain contract") {
  const auto base = fixture::temp_dir("cli");
  auto cfg = tiny_config();
  write_text(base / "ok.json", config_to_json(cfg));
  CHECK(run_cli("pretrain --config " + (base / "ok.json").string() + " --out " + (base / "pre").string()) == 0);
  CHECK(fs::exists(base / "pre" / "speaker.ckpt"));

  cfg.paths.train_dataset = (base / "missing.jsonl").string();
  write_text(base / "missing.json", config_to_json(cfg));
  CHECK(run_cli("pretrain --config " + (base / "missing.json").string() + " --out " + (base / "pre2").string()) == 2);
  CHECK_FALSE(fs::exists(base / "pre2" / "speaker.ckpt"));

  write_text(base / "bad.json", R"({"Speaker": {"unknown_field": 1}})");
  CHECK(run_cli("train --config " + (base / "bad.json").string()) == 1);
  CHECK(run_cli("no-such-command") == 1);
  CHECK(run_cli("--help") == 0);

  // Resume continues the step numbering.
  auto longer = tiny_config();
  longer.speaker.warm_start.steps = 8;
  write_text(base / "longer.json", config_to_json(longer));
  CHECK(run_cli("pretrain --resume --config " + (base / "longer.json").string() + " --out " + (base / "pre").string()) == 0);
  std::ifstream in(base / "pre" / "pretrain_log.csv");
  std::string line;
  std::vector<int> steps;
  std::getline(in, line);
  while (std::getline(in, line)) steps.push_back(std::stoi(line.substr(0, line.find(','))));
  CHECK(steps == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8});
}
