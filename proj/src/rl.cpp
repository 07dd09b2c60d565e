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

#include "refgame/rl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "refgame/checkpoint.hpp"

namespace refgame {
namespace {

std::vector<double> log_softmax_t(std::span<const double> logits, double temperature) {
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

double support_lse(std::span<const double> lp, std::span<const TokenId> support) {
  double mx = -std::numeric_limits<double>::infinity();
  for (TokenId t : support) mx = std::max(mx, lp[static_cast<std::size_t>(t)]);
  double z = 0.0;
  for (TokenId t : support) z += std::exp(lp[static_cast<std::size_t>(t)] - mx);
  return mx + std::log(z);
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void dump_minibatch(const std::filesystem::path& path, std::span<const Rollout* const> items,
                    const Vocabulary& vocab, const MinibatchLoss& loss) {
  nlohmann::ordered_json j;
  j["loss"] = fmt(loss.loss);
  j["policy_loss"] = fmt(loss.policy_loss);
  j["value_loss"] = fmt(loss.value_loss);
  auto arr = nlohmann::ordered_json::array();
  for (const Rollout* r : items) {
    nlohmann::ordered_json e;
    e["prompt"] = vocab.decode(r->prompt);
    std::vector<std::string> actions;
    for (TokenId t : r->actions) actions.push_back(vocab.token(t));
    e["actions"] = actions;
    e["old_logprobs"] = r->old_logprobs;
    e["ref_logprobs"] = r->ref_logprobs;
    e["values"] = r->values;
    e["advantages"] = r->advantages;
    e["returns"] = r->returns;
    arr.push_back(std::move(e));
  }
  j["episodes"] = std::move(arr);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << '\n';
}

}  // namespace

void PPOConfig::validate() const {
  if (!(learning_rate > 0.0)) throw UsageError("PPOConfig.learning_rate must be > 0");
  if (ppo_epochs < 1) throw UsageError("PPOConfig.ppo_epochs must be >= 1");
  if (batch_size < 1) throw UsageError("PPOConfig.batch_size must be >= 1");
  if (minibatch_size < 1 || batch_size % minibatch_size != 0) {
    throw UsageError("PPOConfig.minibatch_size must divide batch_size");
  }
  if (!(clip_range > 0.0)) throw UsageError("PPOConfig.clip_range must be > 0");
  if (!(ratio_threshold > 0.0)) throw UsageError("PPOConfig.ratio_threshold must be > 0");
  if (!(kl_coefficient >= 0.0)) throw UsageError("PPOConfig.kl_coefficient must be >= 0");
  if (adaptive_kl && !(kl_target > 0.0 && kl_horizon > 0.0)) {
    throw UsageError("PPOConfig: kl_target and kl_horizon must be > 0");
  }
  if (!(vf_coef >= 0.0)) throw UsageError("PPOConfig.vf_coef must be >= 0");
  if (total_steps < 0) throw UsageError("PPOConfig.total_steps must be >= 0");
}

RolloutBatch collect_rollouts(const Speaker& speaker, const Listener& listener, const World& world,
                              std::span<const QAExample> dataset, const BottleneckSpec& bottleneck,
                              int batch_size, std::uint64_t seed, int step) {
  if (batch_size < 1) throw UsageError("collect_rollouts: batch_size must be >= 1");
  if (dataset.empty()) throw UsageError("collect_rollouts: empty dataset");
  const Vocabulary& vocab = speaker.policy.vocab();
  RolloutBatch batch;
  batch.items.reserve(static_cast<std::size_t>(batch_size));
  const std::uint64_t step_seed = derive_seed(seed, static_cast<std::uint64_t>(step));
  for (int i = 0; i < batch_size; ++i) {
    Rng pick(derive_seed(step_seed, static_cast<std::uint64_t>(i), 1));
    const QAExample& ex = dataset[pick.below(dataset.size())];
    const std::uint64_t ep_seed = derive_seed(step_seed, static_cast<std::uint64_t>(i), 2);
    Rollout r;
    r.episode = play_episode(speaker, listener, world, ex, bottleneck, ep_seed);
    r.prompt = speaker_prompt(ex.passage, vocab);
    r.actions = r.episode.generation.actions(vocab.eos());
    r.supports = r.episode.generation.supports;
    r.old_logprobs = r.episode.generation.logprobs;
    action_logprobs(speaker.policy, r.prompt, r.actions, r.supports, speaker.decode.temperature,
                    &r.values);
    batch.items.push_back(std::move(r));
  }
  RunningMoments m;
  for (const auto& r : batch.items) m.update(r.episode.score);
  batch.score_mean = m.mean();
  batch.score_std = m.stddev();
  return batch;
}

std::vector<double> normalize_scores(std::span<const double> scores, RunningMoments& running,
                                     const PPOConfig& cfg) {
  std::vector<double> out(scores.begin(), scores.end());
  if (!cfg.use_score_normalization && !cfg.use_score_scaling) return out;
  running.update(scores);
  double sd = running.stddev();
  if (!(sd >= 1e-8)) sd = 1.0;
  const double shift = cfg.use_score_normalization ? running.mean() : 0.0;
  for (double& x : out) x = (x - shift) / sd;
  return out;
}

std::vector<double> action_logprobs(const PolicyModel& model, std::span<const TokenId> prompt,
                                    std::span<const TokenId> actions,
                                    std::span<const std::vector<TokenId>> supports,
                                    double temperature, std::vector<double>* values) {
  if (supports.size() != actions.size()) throw Error("action_logprobs: support count mismatch");
  ForwardPass fp(model);
  fp.append(prompt);
  if (!actions.empty()) fp.append(actions.first(actions.size() - 1));
  std::vector<double> out(actions.size());
  if (values) values->assign(actions.size(), 0.0);
  for (std::size_t i = 0; i < actions.size(); ++i) {
    const std::size_t pos = prompt.size() + i;
    const auto lp = log_softmax_t(fp.logits(pos), temperature);
    out[i] = lp[static_cast<std::size_t>(actions[i])] - support_lse(lp, supports[i]);
    if (values) (*values)[i] = fp.value(pos);
  }
  return out;
}

void finalize_rollouts(RolloutBatch& batch, const PolicyModel& reference,
                       std::span<const double> shaped_scores, double kl_coefficient,
                       double temperature) {
  if (shaped_scores.size() != batch.items.size()) throw Error("finalize_rollouts: size mismatch");
  for (std::size_t k = 0; k < batch.items.size(); ++k) {
    Rollout& r = batch.items[k];
    r.shaped_score = shaped_scores[k];
    r.ref_logprobs = action_logprobs(reference, r.prompt, r.actions, r.supports, temperature);
    const std::size_t n = r.actions.size();
    r.rewards.assign(n, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      r.rewards[t] = -kl_coefficient * (r.old_logprobs[t] - r.ref_logprobs[t]);
    }
    if (n > 0) r.rewards[n - 1] += r.shaped_score;
    r.returns.assign(n, 0.0);
    double g = 0.0;
    for (std::size_t t = n; t-- > 0;) {
      g += r.rewards[t];
      r.returns[t] = g;
    }
    r.advantages.assign(n, 0.0);
    for (std::size_t t = 0; t < n; ++t) r.advantages[t] = r.returns[t] - r.values[t];
  }
}

MinibatchLoss ppo_minibatch_loss(const PolicyModel& model, std::span<const Rollout* const> items,
                                 const PPOConfig& cfg, double temperature, std::span<double> grad) {
  MinibatchLoss out;
  for (const Rollout* r : items) out.tokens += r->actions.size();
  if (out.tokens == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(out.tokens);
  const std::size_t v = model.vocab_size();
  const bool want_grad = !grad.empty();
  std::size_t clipped = 0;
  out.max_ratio = 0.0;

  for (const Rollout* r : items) {
    const std::size_t n = r->actions.size();
    if (n == 0) continue;
    ForwardPass fp(model);
    fp.append(r->prompt);
    fp.append(std::span<const TokenId>(r->actions).first(n - 1));
    std::vector<double> dlogits(want_grad ? fp.length() * v : 0, 0.0);
    std::vector<double> dvalue(want_grad ? fp.length() : 0, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t pos = r->prompt.size() + i;
      const auto lp = log_softmax_t(fp.logits(pos), temperature);
      const double lse = support_lse(lp, r->supports[i]);
      const auto a = static_cast<std::size_t>(r->actions[i]);
      const double new_lp = lp[a] - lse;
      const double ratio = std::exp(new_lp - r->old_logprobs[i]);
      const double adv = r->advantages[i];
      const double clipped_ratio = std::clamp(ratio, 1.0 - cfg.clip_range, 1.0 + cfg.clip_range);
      const double pg1 = -adv * ratio;
      const double pg2 = -adv * clipped_ratio;
      out.policy_loss += std::max(pg1, pg2) * inv_n;
      out.max_ratio = std::max(out.max_ratio, ratio);
      if (std::abs(ratio - 1.0) > cfg.clip_range) ++clipped;
      out.approx_kl += 0.5 * (new_lp - r->old_logprobs[i]) * (new_lp - r->old_logprobs[i]) * inv_n;

      const double value = fp.value(pos);
      const double verr = value - r->returns[i];
      out.value_loss += 0.5 * verr * verr * inv_n;

      if (want_grad) {
        const double dlp = pg1 >= pg2 ? -adv * ratio * inv_n : 0.0;
        if (dlp != 0.0) {
          double* row = dlogits.data() + pos * v;
          for (TokenId t : r->supports[i]) {
            const auto j = static_cast<std::size_t>(t);
            row[j] -= dlp * std::exp(lp[j] - lse) / temperature;
          }
          row[a] += dlp / temperature;
        }
        dvalue[pos] = cfg.vf_coef * verr * inv_n;
      }
    }
    if (want_grad) fp.backward(dlogits, dvalue, grad);
  }
  out.loss = out.policy_loss + cfg.vf_coef * out.value_loss;
  out.clip_fraction = static_cast<double>(clipped) * inv_n;
  return out;
}

PPOStats ppo_update(Speaker& speaker, const RolloutBatch& batch, const PPOConfig& cfg,
                    AdamState& adam, std::uint64_t shuffle_seed,
                    const std::filesystem::path& dump_path) {
  cfg.validate();
  PPOStats stats;
  AdamConfig acfg;
  acfg.learning_rate = cfg.learning_rate;
  acfg.max_grad_norm = cfg.max_grad_norm;
  std::vector<double> grad(speaker.policy.param_count());
  const std::size_t mb = static_cast<std::size_t>(cfg.minibatch_size);
  int used = 0;
  for (int epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
    std::vector<std::size_t> order(batch.items.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(shuffle_seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    for (std::size_t begin = 0; begin < order.size(); begin += mb) {
      std::vector<const Rollout*> items;
      for (std::size_t k = begin; k < std::min(order.size(), begin + mb); ++k) {
        items.push_back(&batch.items[order[k]]);
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      const auto loss =
          ppo_minibatch_loss(speaker.policy, items, cfg, speaker.decode.temperature, grad);
      ++stats.minibatches;
      if (!std::isfinite(loss.loss)) {
        if (!dump_path.empty()) dump_minibatch(dump_path, items, speaker.policy.vocab(), loss);
        throw Error("ppo_update: non-finite loss" +
                    (dump_path.empty() ? std::string() : "; minibatch dumped to " + dump_path.string()));
      }
      if (loss.max_ratio > cfg.ratio_threshold) {
        ++stats.skipped_minibatches;
        continue;
      }
      adam_step(speaker.policy.params(), grad, adam, acfg);
      ++used;
      stats.policy_loss += loss.policy_loss;
      stats.value_loss += loss.value_loss;
      stats.clip_fraction += loss.clip_fraction;
      stats.approx_kl += loss.approx_kl;
    }
  }
  if (used > 0) {
    stats.policy_loss /= used;
    stats.value_loss /= used;
    stats.clip_fraction /= used;
    stats.approx_kl /= used;
  }
  return stats;
}

double update_kl_coefficient(double coefficient, double kl, int n_steps, const PPOConfig& cfg) {
  if (!cfg.adaptive_kl) return coefficient;
  const double error = std::clamp(kl / cfg.kl_target - 1.0, -0.2, 0.2);
  return coefficient * (1.0 + error * static_cast<double>(n_steps) / cfg.kl_horizon);
}

const std::vector<std::string>& run_log_columns() {
  static const std::vector<std::string> cols = {
      "step",          "mean_reward",          "mean_penalty",          "mean_score",
      "bleu",          "edit_distance_norm",   "function_word_fraction", "mean_sentence_length",
      "mean_word_length", "grammatical_error_rate", "kl",              "clip_fraction",
      "skipped_minibatches", "summary_tokens", "listener_surprisal"};
  return cols;
}

std::string run_log_header() {
  std::string s;
  for (const auto& c : run_log_columns()) s += (s.empty() ? "" : ",") + c;
  return s;
}

std::string format_run_log_row(const RunLogRow& r) {
  std::string s = std::to_string(r.step);
  for (double x : {r.mean_reward, r.mean_penalty, r.mean_score, r.bleu, r.edit_distance_norm,
                   r.function_word_fraction, r.mean_sentence_length, r.mean_word_length,
                   r.grammatical_error_rate, r.kl, r.clip_fraction}) {
    s += "," + fmt(x);
  }
  s += "," + std::to_string(r.skipped_minibatches);
  s += "," + fmt(r.summary_tokens) + "," + fmt(r.listener_surprisal);
  return s;
}

std::vector<RunLogRow> read_run_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open run log " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(path.string() + ": empty run log");
  if (line != run_log_header()) {
    throw Error(path.string() + ":1: unexpected run log columns '" + line + "'");
  }
  std::vector<RunLogRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != run_log_columns().size()) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": expected " +
                  std::to_string(run_log_columns().size()) + " fields, got " +
                  std::to_string(f.size()));
    }
    try {
      RunLogRow r;
      std::size_t i = 0;
      r.step = std::stoi(f[i++]);
      for (double* p : {&r.mean_reward, &r.mean_penalty, &r.mean_score, &r.bleu,
                        &r.edit_distance_norm, &r.function_word_fraction, &r.mean_sentence_length,
                        &r.mean_word_length, &r.grammatical_error_rate, &r.kl, &r.clip_fraction}) {
        *p = std::stod(f[i++]);
      }
      r.skipped_minibatches = std::stoi(f[i++]);
      r.summary_tokens = std::stod(f[i++]);
      r.listener_surprisal = std::stod(f[i++]);
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": malformed number");
    }
  }
  return rows;
}

RlState initial_rl_state(const PPOConfig& cfg) {
  RlState s;
  s.kl_coefficient = cfg.kl_coefficient;
  return s;
}

RunLogRow train_step(Speaker& speaker, const TrainBundle& bundle, RlState& state,
                     const TrainOutput& out) {
  const PPOConfig& cfg = bundle.ppo;
  auto batch = collect_rollouts(speaker, *bundle.listener, *bundle.world, bundle.dataset,
                                bundle.bottleneck, cfg.batch_size, cfg.seed, state.step);
  std::vector<double> raw;
  for (const auto& r : batch.items) raw.push_back(r.episode.score);
  const auto shaped = normalize_scores(raw, state.score_stats, cfg);
  finalize_rollouts(batch, *bundle.reference, shaped, state.kl_coefficient,
                    speaker.decode.temperature);

  double kl = 0.0;
  for (const auto& r : batch.items) {
    for (std::size_t t = 0; t < r.actions.size(); ++t) kl += r.old_logprobs[t] - r.ref_logprobs[t];
  }
  kl /= static_cast<double>(batch.items.size());

  const auto stats = ppo_update(
      speaker, batch, cfg, state.adam,
      derive_seed(cfg.seed, static_cast<std::uint64_t>(state.step), 0x707075),
      out.dir.empty() ? std::filesystem::path() : out.dir / "nonfinite_minibatch.json");
  state.kl_coefficient = update_kl_coefficient(state.kl_coefficient, kl, cfg.batch_size, cfg);

  RunLogRow row;
  row.step = state.step + 1;
  const double n = static_cast<double>(batch.items.size());
  for (const auto& r : batch.items) {
    const auto& e = r.episode;
    row.mean_reward += e.reward / n;
    row.mean_penalty += e.penalty / n;
    row.mean_score += e.score / n;
    row.bleu += e.metrics.bleu / n;
    row.edit_distance_norm += e.metrics.edit_distance_norm / n;
    row.function_word_fraction += e.metrics.function_word_fraction / n;
    row.mean_sentence_length += e.metrics.mean_sentence_length_tokens / n;
    row.mean_word_length += e.metrics.mean_word_length_chars / n;
    row.grammatical_error_rate += e.grammatical_error_rate / n;
    row.summary_tokens += static_cast<double>(e.summary.size()) / n;
    row.listener_surprisal += e.listener_surprisal / n;
  }
  row.kl = kl;
  row.clip_fraction = stats.clip_fraction;
  row.skipped_minibatches = stats.skipped_minibatches;

  if (!out.dir.empty() && out.write_episodes) {
    std::ofstream ep(out.dir / "episodes.jsonl", std::ios::app);
    for (const auto& r : batch.items) {
      ep << episode_to_jsonl(r.episode, speaker.policy.vocab(), row.step) << '\n';
    }
  }
  ++state.step;
  return row;
}

namespace {

// Keeps the first `keep_rows` data rows of a CSV log (header included).
void truncate_csv(const std::filesystem::path& path, int keep_rows) {
  std::ifstream in(path);
  std::string out, line;
  int n = -1;
  while (n < keep_rows && std::getline(in, line)) {
    out += line + "\n";
    ++n;
  }
  in.close();
  write_file_atomic(path, out);
}

void truncate_episodes(const std::filesystem::path& path, int max_step) {
  std::ifstream in(path);
  if (!in) return;
  std::string out, line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (nlohmann::json::parse(line).at("step").get<int>() <= max_step) out += line + "\n";
  }
  in.close();
  write_file_atomic(path, out);
}

void save_rl_checkpoint(const std::filesystem::path& path, const Speaker& speaker,
                        const RlState& state) {
  save_checkpoint(path, speaker.policy, to_training_state(state));
}

}  // namespace

TrainingState to_training_state(const RlState& state) {
  TrainingState ts;
  ts.step = state.step;
  ts.adam = state.adam;
  ts.score_stats = state.score_stats;
  ts.kl_coefficient = state.kl_coefficient;
  return ts;
}

RlState rl_state_from(const TrainingState& ts, const PPOConfig& cfg) {
  RlState s = initial_rl_state(cfg);
  s.step = static_cast<int>(ts.step);
  if (ts.adam) s.adam = *ts.adam;
  if (ts.score_stats) s.score_stats = *ts.score_stats;
  if (ts.kl_coefficient) s.kl_coefficient = *ts.kl_coefficient;
  return s;
}

std::vector<RunLogRow> train(Speaker& speaker, const TrainBundle& bundle, RlState& state,
                             const TrainOutput& out) {
  bundle.ppo.validate();
  bundle.bottleneck.validate();
  if (!bundle.world || !bundle.listener || !bundle.reference) {
    throw UsageError("train: bundle is missing world, listener or reference model");
  }
  std::ofstream log;
  if (!out.dir.empty()) {
    std::filesystem::create_directories(out.dir / "checkpoints");
    const auto log_path = out.dir / "run_log.csv";
    if (state.step == 0 || !std::filesystem::exists(log_path)) {
      write_file_atomic(log_path, run_log_header() + "\n");
      std::filesystem::remove(out.dir / "episodes.jsonl");
    } else {
      truncate_csv(log_path, state.step);
      truncate_episodes(out.dir / "episodes.jsonl", state.step);
    }
    log.open(log_path, std::ios::app);
    if (!log) throw Error("cannot open " + log_path.string());
  }
  std::vector<RunLogRow> rows;
  while (state.step < bundle.ppo.total_steps) {
    const auto row = train_step(speaker, bundle, state, out);
    rows.push_back(row);
    if (log.is_open()) log << format_run_log_row(row) << '\n' << std::flush;
    if (out.on_step) out.on_step(row);
    if (!out.dir.empty() && out.checkpoint_interval > 0 && state.step % out.checkpoint_interval == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%06d.ckpt", state.step);
      save_rl_checkpoint(out.dir / "checkpoints" / name, speaker, state);
      save_rl_checkpoint(out.dir / "checkpoints" / "latest.ckpt", speaker, state);
    }
  }
  if (!out.dir.empty()) {
    save_rl_checkpoint(out.dir / "checkpoints" / "latest.ckpt", speaker, state);
    save_rl_checkpoint(out.dir / "checkpoints" / "final.ckpt", speaker, state);
  }
  return rows;
}

void MixedSchedule::validate() const {
  if (lm_steps < 0 || game_steps < 0) throw UsageError("Mixed: step counts must be >= 0");
  if (lm_steps + game_steps == 0) throw UsageError("Mixed: schedule has no steps");
  if (cycles < 0) throw UsageError("Mixed.cycles must be >= 0");
}

std::vector<MixedLogRow> train_mixed(Speaker& speaker, std::span<const LmExample> text_corpus,
                                     const TrainBundle& bundle, const PretrainConfig& lm_cfg,
                                     const MixedSchedule& schedule,
                                     const std::function<void(const MixedLogRow&)>& on_row) {
  schedule.validate();
  if (text_corpus.empty()) throw UsageError("train_mixed: empty text corpus");
  if (bundle.dataset.empty()) throw UsageError("train_mixed: empty game dataset");
  PretrainConfig cfg = lm_cfg;
  cfg.steps = schedule.cycles * schedule.lm_steps;
  LmTrainer lm(text_corpus, cfg);
  RlState rl = initial_rl_state(bundle.ppo);
  std::vector<MixedLogRow> rows;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  int lm_step = 0;
  for (int cycle = 0; cycle < schedule.cycles; ++cycle) {
    for (int k = 0; k < schedule.lm_steps; ++k) {
      const auto r = lm.step(speaker.policy, lm_step++);
      MixedLogRow row{cycle + 1, "lm", r.step, r.train_loss, r.held_out_loss, nan, nan};
      rows.push_back(row);
      if (on_row) on_row(row);
    }
    for (int k = 0; k < schedule.game_steps; ++k) {
      const auto r = train_step(speaker, bundle, rl, TrainOutput{});
      MixedLogRow row{cycle + 1, "game", r.step, nan, nan, r.mean_reward, r.mean_score};
      if (k + 1 == schedule.game_steps) row.held_out_loss = lm.held_out_loss(speaker.policy);
      rows.push_back(row);
      if (on_row) on_row(row);
    }
  }
  return rows;
}

}  // namespace refgame
