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

#include "refgame/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "refgame/checkpoint.hpp"
#include "refgame/kernels.hpp"

namespace refgame {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

// Reads the members of one JSON object, rejecting keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw UsageError(path_ + ": expected an object");
  }

  template <typename T>
  Section& get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return *this;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw UsageError(path_ + "." + key + ": " + e.what());
    }
    return *this;
  }

  // For nested sections: calls fn(json, path) when the key is present.
  template <typename Fn>
  Section& nested(const char* key, Fn&& fn) {
    seen_.insert(key);
    if (j_.contains(key)) fn(j_.at(key), path_ + "." + key);
    return *this;
  }

  void done() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw UsageError(path_ + ": unknown key '" + item.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string listener_kind_name(ListenerKind k) {
  return k == ListenerKind::kOracle ? "oracle" : "learned";
}

ListenerKind parse_listener_kind(const std::string& s, const std::string& path) {
  if (s == "oracle") return ListenerKind::kOracle;
  if (s == "learned") return ListenerKind::kLearned;
  throw UsageError(path + ": listener kind must be \"oracle\" or \"learned\", got \"" + s + "\"");
}

// ---- readers ----

void read(const json& j, const std::string& p, WorldSpec& w) {
  Section(j, p)
      .get("n_entities", w.n_entities)
      .get("n_attributes", w.n_attributes)
      .get("n_values_per_attribute", w.n_values_per_attribute)
      .get("facts_per_passage", w.facts_per_passage)
      .get("distractor_sentences", w.distractor_sentences)
      .get("seed", w.seed)
      .done();
}

void read(const json& j, const std::string& p, ModelDims& d) {
  Section(j, p)
      .get("context_window", d.context_window)
      .get("d_model", d.d_model)
      .get("n_layers", d.n_layers)
      .get("n_heads", d.n_heads)
      .get("d_ff", d.d_ff)
      .done();
}

void read(const json& j, const std::string& p, DecodeConfig& d) {
  Section(j, p)
      .get("max_new_tokens", d.max_new_tokens)
      .get("min_length", d.min_length)
      .get("top_k", d.top_k)
      .get("top_p", d.top_p)
      .get("epsilon_cutoff", d.epsilon_cutoff)
      .get("temperature", d.temperature)
      .get("num_beams", d.num_beams)
      .get("seed", d.seed)
      .done();
}

void read(const json& j, const std::string& p, PretrainConfig& c) {
  Section(j, p)
      .get("steps", c.steps)
      .get("batch_size", c.batch_size)
      .get("learning_rate", c.learning_rate)
      .get("max_grad_norm", c.max_grad_norm)
      .get("held_out_fraction", c.held_out_fraction)
      .get("eval_interval", c.eval_interval)
      .get("seed", c.seed)
      .get("warmup_steps", c.warmup_steps)
      .get("cosine_decay", c.cosine_decay)
      .get("min_lr_fraction", c.min_lr_fraction)
      .done();
}

void read(const json& j, const std::string& p, SummaryBootstrap& b) {
  Section(j, p)
      .get("keep_probability", b.keep_probability)
      .get("noisy_fraction", b.noisy_fraction)
      .get("min_deletion", b.min_deletion)
      .get("max_deletion", b.max_deletion)
      .done();
}

void read(const json& j, const std::string& p, ListenerConfig& c) {
  Section(j, p)
      .nested("PretrainConfig", [&](const json& s, const std::string& sp) { read(s, sp, c.training); })
      .get("n_train_examples", c.n_train_examples)
      .get("n_eval_examples", c.n_eval_examples)
      .get("accuracy_threshold", c.accuracy_threshold)
      .get("partial_fraction", c.partial_fraction)
      .get("missing_fraction", c.missing_fraction)
      .get("empty_fraction", c.empty_fraction)
      .get("target_fraction", c.target_fraction)
      .get("contrast_fraction", c.contrast_fraction)
      .get("telegraphic_fraction", c.telegraphic_fraction)
      .get("deletion_fraction", c.deletion_fraction)
      .get("max_deletion", c.max_deletion)
      .done();
}

void read(const json& j, const std::string& p, OracleRules& r) {
  Section(j, p).get("window", r.window).get("noise", r.noise).get("noise_seed", r.noise_seed).done();
}

void read(const json& j, const std::string& p, BottleneckSpec& b) {
  std::string kind(to_string(b.kind)), mode(to_string(b.mode));
  Section(j, p)
      .get("kind", kind)
      .get("mode", mode)
      .get("lambda", b.lambda)
      .get("cutoff_budget", b.cutoff_budget)
      .done();
  try {
    b.kind = parse_bottleneck_kind(kind);
    b.mode = parse_bottleneck_mode(mode);
  } catch (const Error& e) {
    throw UsageError(p + ": " + e.what());
  }
}

void read(const json& j, const std::string& p, PPOConfig& c) {
  Section(j, p)
      .get("learning_rate", c.learning_rate)
      .get("ppo_epochs", c.ppo_epochs)
      .get("minibatch_size", c.minibatch_size)
      .get("batch_size", c.batch_size)
      .get("clip_range", c.clip_range)
      .get("ratio_threshold", c.ratio_threshold)
      .get("kl_coefficient", c.kl_coefficient)
      .get("adaptive_kl", c.adaptive_kl)
      .get("kl_target", c.kl_target)
      .get("kl_horizon", c.kl_horizon)
      .get("vf_coef", c.vf_coef)
      .get("max_grad_norm", c.max_grad_norm)
      .get("use_score_normalization", c.use_score_normalization)
      .get("use_score_scaling", c.use_score_scaling)
      .get("total_steps", c.total_steps)
      .get("seed", c.seed)
      .done();
}

void read(const json& j, const std::string& p, PerturbationGrid& g) {
  Section(j, p)
      .get("truncation", g.truncation)
      .get("scramble", g.scramble)
      .get("deletion", g.deletion)
      .done();
}

void read(const json& j, const std::string& p, ExperimentConfig& cfg) {
  Section top(j, p);
  top.nested("WorldSpec", [&](const json& s, const std::string& sp) { read(s, sp, cfg.world); });
  top.nested("Data", [&](const json& s, const std::string& sp) {
    Section(s, sp)
        .get("n_train", cfg.data.n_train)
        .get("n_eval", cfg.data.n_eval)
        .get("train_seed", cfg.data.train_seed)
        .get("eval_seed", cfg.data.eval_seed)
        .done();
  });
  top.nested("Paths", [&](const json& s, const std::string& sp) {
    Section(s, sp)
        .get("train_dataset", cfg.paths.train_dataset)
        .get("eval_dataset", cfg.paths.eval_dataset)
        .get("speaker_checkpoint", cfg.paths.speaker_checkpoint)
        .get("listener_lm_checkpoint", cfg.paths.listener_lm_checkpoint)
        .get("listener_qa_checkpoint", cfg.paths.listener_qa_checkpoint)
        .done();
  });
  top.nested("Speaker", [&](const json& s, const std::string& sp) {
    auto& S = cfg.speaker;
    Section(s, sp)
        .nested("ModelDims", [&](const json& x, const std::string& xp) { read(x, xp, S.dims); })
        .nested("DecodeConfig", [&](const json& x, const std::string& xp) { read(x, xp, S.decode); })
        .nested("PretrainConfig", [&](const json& x, const std::string& xp) { read(x, xp, S.warm_start); })
        .nested("SummaryBootstrap", [&](const json& x, const std::string& xp) { read(x, xp, S.bootstrap); })
        .get("init_seed", S.init_seed)
        .done();
  });
  top.nested("Listener", [&](const json& s, const std::string& sp) {
    auto& L = cfg.listener;
    std::string kind(listener_kind_name(L.kind));
    Section(s, sp)
        .get("kind", kind)
        .nested("ModelDims", [&](const json& x, const std::string& xp) { read(x, xp, L.dims); })
        .nested("LanguageModel", [&](const json& x, const std::string& xp) { read(x, xp, L.lm_training); })
        .nested("ListenerConfig", [&](const json& x, const std::string& xp) { read(x, xp, L.qa); })
        .nested("OracleRules", [&](const json& x, const std::string& xp) { read(x, xp, L.oracle); })
        .get("init_seed", L.init_seed)
        .done();
    L.kind = parse_listener_kind(kind, sp + ".kind");
  });
  top.nested("BottleneckSpec", [&](const json& s, const std::string& sp) { read(s, sp, cfg.bottleneck); });
  top.nested("PPOConfig", [&](const json& s, const std::string& sp) { read(s, sp, cfg.ppo); });
  top.nested("PerturbationGrid", [&](const json& s, const std::string& sp) { read(s, sp, cfg.perturbation); });
  top.nested("Feasibility", [&](const json& s, const std::string& sp) {
    std::string kind(listener_kind_name(cfg.feasibility.listener));
    Section(s, sp)
        .get("episodes", cfg.feasibility.episodes)
        .get("listener", kind)
        .get("seed", cfg.feasibility.seed)
        .done();
    cfg.feasibility.listener = parse_listener_kind(kind, sp + ".listener");
  });
  top.nested("Sweep", [&](const json& s, const std::string& sp) {
    std::vector<std::string> kinds;
    for (auto k : cfg.sweep.kinds) kinds.emplace_back(to_string(k));
    std::string mode(to_string(cfg.sweep.mode));
    Section(s, sp)
        .get("kinds", kinds)
        .get("lambdas", cfg.sweep.lambdas)
        .get("mode", mode)
        .get("cutoff_budget", cfg.sweep.cutoff_budget)
        .done();
    try {
      cfg.sweep.kinds.clear();
      for (const auto& k : kinds) cfg.sweep.kinds.push_back(parse_bottleneck_kind(k));
      cfg.sweep.mode = parse_bottleneck_mode(mode);
    } catch (const UsageError&) {
      throw;
    } catch (const Error& e) {
      throw UsageError(sp + ": " + e.what());
    }
  });
  top.nested("Mixed", [&](const json& s, const std::string& sp) {
    auto& M = cfg.mixed;
    Section(s, sp)
        .nested("MixedSchedule", [&](const json& x, const std::string& xp) {
          Section(x, xp)
              .get("lm_steps", M.schedule.lm_steps)
              .get("game_steps", M.schedule.game_steps)
              .get("cycles", M.schedule.cycles)
              .done();
        })
        .nested("PretrainConfig", [&](const json& x, const std::string& xp) { read(x, xp, M.lm); })
        .get("from_scratch", M.from_scratch)
        .done();
  });
  top.get("seeds", cfg.seeds);
  top.get("output_dir", cfg.output_dir);
  top.get("checkpoint_interval", cfg.checkpoint_interval);
  top.done();
}

// ---- writers ----

ojson write(const WorldSpec& w) {
  return {{"n_entities", w.n_entities},
          {"n_attributes", w.n_attributes},
          {"n_values_per_attribute", w.n_values_per_attribute},
          {"facts_per_passage", w.facts_per_passage},
          {"distractor_sentences", w.distractor_sentences},
          {"seed", w.seed}};
}

ojson write(const ModelDims& d) {
  return {{"context_window", d.context_window},
          {"d_model", d.d_model},
          {"n_layers", d.n_layers},
          {"n_heads", d.n_heads},
          {"d_ff", d.d_ff}};
}

ojson write(const DecodeConfig& d) {
  return {{"max_new_tokens", d.max_new_tokens}, {"min_length", d.min_length},
          {"top_k", d.top_k},                   {"top_p", d.top_p},
          {"epsilon_cutoff", d.epsilon_cutoff}, {"temperature", d.temperature},
          {"num_beams", d.num_beams},           {"seed", d.seed}};
}

ojson write(const PretrainConfig& c) {
  return {{"steps", c.steps},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"max_grad_norm", c.max_grad_norm},
          {"held_out_fraction", c.held_out_fraction},
          {"eval_interval", c.eval_interval},
          {"seed", c.seed},
          {"warmup_steps", c.warmup_steps},
          {"cosine_decay", c.cosine_decay},
          {"min_lr_fraction", c.min_lr_fraction}};
}

ojson write(const SummaryBootstrap& b) {
  return {{"keep_probability", b.keep_probability},
          {"noisy_fraction", b.noisy_fraction},
          {"min_deletion", b.min_deletion},
          {"max_deletion", b.max_deletion}};
}

ojson write(const ListenerConfig& c) {
  return {{"PretrainConfig", write(c.training)},
          {"n_train_examples", c.n_train_examples},
          {"n_eval_examples", c.n_eval_examples},
          {"accuracy_threshold", c.accuracy_threshold},
          {"partial_fraction", c.partial_fraction},
          {"missing_fraction", c.missing_fraction},
          {"empty_fraction", c.empty_fraction},
          {"target_fraction", c.target_fraction},
          {"contrast_fraction", c.contrast_fraction},
          {"telegraphic_fraction", c.telegraphic_fraction},
          {"deletion_fraction", c.deletion_fraction},
          {"max_deletion", c.max_deletion}};
}

ojson write(const BottleneckSpec& b) {
  return {{"kind", std::string(to_string(b.kind))},
          {"mode", std::string(to_string(b.mode))},
          {"lambda", b.lambda},
          {"cutoff_budget", b.cutoff_budget}};
}

ojson write(const PPOConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"ppo_epochs", c.ppo_epochs},
          {"minibatch_size", c.minibatch_size},
          {"batch_size", c.batch_size},
          {"clip_range", c.clip_range},
          {"ratio_threshold", c.ratio_threshold},
          {"kl_coefficient", c.kl_coefficient},
          {"adaptive_kl", c.adaptive_kl},
          {"kl_target", c.kl_target},
          {"kl_horizon", c.kl_horizon},
          {"vf_coef", c.vf_coef},
          {"max_grad_norm", c.max_grad_norm},
          {"use_score_normalization", c.use_score_normalization},
          {"use_score_scaling", c.use_score_scaling},
          {"total_steps", c.total_steps},
          {"seed", c.seed}};
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void check_vocab(const PolicyModel& m, const World& world, const std::string& what) {
  if (!(m.vocab() == world.vocab())) {
    throw UsageError(what + ": checkpoint vocabulary does not match the configured world");
  }
}

std::vector<QAExample> load_or_generate(const World& world, const std::string& path, int n,
                                        std::uint64_t seed, const fs::path& cache,
                                        const char* name) {
  if (!path.empty()) {
    if (!fs::exists(path)) throw Error("dataset not found: " + path);
    auto data = load_jsonl(path, world.vocab());
    if (data.empty()) throw Error("dataset is empty: " + path);
    return data;
  }
  const fs::path cached = cache / name;
  if (fs::exists(cached)) return load_jsonl(cached, world.vocab());
  auto data = generate_dataset(world, static_cast<std::size_t>(n), seed);
  fs::create_directories(cache);
  save_jsonl(data, world.vocab(), cached);
  log_info("generated " + std::to_string(data.size()) + " examples -> " + cached.string());
  return data;
}

std::vector<LmExample> warm_start_examples(const World& world, std::span<const QAExample> data,
                                           const SpeakerSetup& s) {
  Rng rng(derive_seed(s.warm_start.seed, 0x77736275));
  std::vector<LmExample> out;
  out.reserve(data.size());
  for (const auto& ex : data) {
    out.push_back(conditional_example(ex.passage, bootstrap_summary(world, ex.passage, s.bootstrap, rng),
                                      world.vocab().sep(), world.vocab().eos()));
  }
  return out;
}

std::vector<LmExample> passage_examples(const World& world, std::span<const QAExample> data) {
  std::vector<LmExample> out;
  out.reserve(data.size());
  for (const auto& ex : data) out.push_back(plain_text_example(ex.passage, world.vocab().eos()));
  return out;
}

void append_pretrain_row(std::ofstream& log, const PretrainLogRow& r) {
  log << r.step << ',' << format_double(r.train_loss) << ','
      << (std::isnan(r.held_out_loss) ? std::string() : format_double(r.held_out_loss)) << '\n'
      << std::flush;
}

// Keeps the header and the first `rows` data lines of a CSV file.
void truncate_lines(const fs::path& path, std::size_t rows) {
  std::ifstream in(path);
  std::string line, kept;
  std::size_t n = 0;
  while (n <= rows && std::getline(in, line)) {
    kept += line + "\n";
    ++n;
  }
  in.close();
  write_file_atomic(path, kept);
}

PolicyModel train_lm_model(const World& world, const ModelDims& dims, std::uint64_t init_seed,
                           std::span<const LmExample> corpus, const PretrainConfig& cfg,
                           const fs::path& log_path, const std::string& label) {
  PolicyModel model(world.vocab(), dims, init_seed);
  std::ofstream log;
  if (!log_path.empty()) {
    fs::create_directories(log_path.parent_path());
    log.open(log_path);
    log << "step,train_loss,held_out_loss\n";
  }
  pretrain_lm(model, corpus, cfg, nullptr, 0, [&](const PretrainLogRow& r) {
    if (log.is_open()) append_pretrain_row(log, r);
    if (!std::isnan(r.held_out_loss)) {
      log_info(label + " step " + std::to_string(r.step) + " held-out loss " +
               format_double(r.held_out_loss));
    }
  });
  return model;
}

PolicyModel load_or_train_listener_lm(const ExperimentConfig& cfg, const World& world,
                                      std::span<const QAExample> train, const fs::path& cache) {
  if (!cfg.paths.listener_lm_checkpoint.empty()) {
    auto m = load_checkpoint(cfg.paths.listener_lm_checkpoint).model;
    check_vocab(m, world, cfg.paths.listener_lm_checkpoint);
    return m;
  }
  const fs::path cached = cache / "listener_lm.ckpt";
  if (fs::exists(cached)) return load_checkpoint(cached).model;
  log_info("training the listener LM");
  const auto corpus = passage_examples(world, train);
  auto m = train_lm_model(world, cfg.listener.dims, derive_seed(cfg.listener.init_seed, 1), corpus,
                          cfg.listener.lm_training, cache / "listener_lm_log.csv", "listener LM");
  save_checkpoint(cached, m);
  return m;
}

struct QaResult {
  PolicyModel model;
  double accuracy = 0.0;
  bool below_threshold = false;
};

QaResult load_or_train_listener_qa(const ExperimentConfig& cfg, const World& world,
                                   std::span<const QAExample> train,
                                   std::span<const QAExample> eval, const PolicyModel& lm,
                                   const fs::path& cache) {
  const auto n_eval = std::min<std::size_t>(eval.size(), static_cast<std::size_t>(cfg.listener.qa.n_eval_examples));
  const auto held_out = eval.subspan(0, n_eval);
  auto evaluate = [&](PolicyModel m) {
    const double acc = listener_accuracy(Listener::learned(world, m, lm), held_out);
    return QaResult{std::move(m), acc, acc < cfg.listener.qa.accuracy_threshold};
  };
  if (!cfg.paths.listener_qa_checkpoint.empty()) {
    auto m = load_checkpoint(cfg.paths.listener_qa_checkpoint).model;
    check_vocab(m, world, cfg.paths.listener_qa_checkpoint);
    return evaluate(std::move(m));
  }
  const fs::path cached = cache / "listener_qa.ckpt";
  if (fs::exists(cached)) return evaluate(load_checkpoint(cached).model);
  log_info("training the learned listener");
  const auto n_train = std::min<std::size_t>(train.size(), static_cast<std::size_t>(cfg.listener.qa.n_train_examples));
  fs::create_directories(cache);
  std::ofstream log(cache / "listener_qa_log.csv");
  log << "step,train_loss,held_out_loss\n";
  auto t = train_listener(world, train.subspan(0, n_train), held_out, cfg.listener.dims,
                          cfg.listener.qa, derive_seed(cfg.listener.init_seed, 2), lm,
                          [&](const PretrainLogRow& r) {
                            append_pretrain_row(log, r);
                            if (!std::isnan(r.held_out_loss)) {
                              log_info("listener QA step " + std::to_string(r.step) +
                                       " held-out loss " + format_double(r.held_out_loss));
                            }
                          });
  PolicyModel qa = *t.listener.qa_model();
  save_checkpoint(cached, qa);
  ojson report = {{"held_out_accuracy", t.held_out_accuracy},
                  {"accuracy_threshold", cfg.listener.qa.accuracy_threshold},
                  {"below_threshold", t.below_threshold},
                  {"n_eval", n_eval}};
  write_file_atomic(cache / "listener_report.json", report.dump(2) + "\n");
  log_info("learned listener held-out accuracy " + format_double(t.held_out_accuracy));
  if (t.below_threshold) {
    log_info("warning: listener accuracy " + format_double(t.held_out_accuracy) +
             " is below the threshold " + format_double(cfg.listener.qa.accuracy_threshold));
  }
  return QaResult{std::move(qa), t.held_out_accuracy, t.below_threshold};
}

std::string build_type() {
#ifdef NDEBUG
  return "release";
#else
  return "debug";
#endif
}

TrainBundle make_bundle(const ExperimentConfig& cfg, const Assets& assets, const Listener& listener,
                        const PolicyModel& reference) {
  TrainBundle b;
  b.world = &assets.world;
  b.dataset = assets.train;
  b.listener = &listener;
  b.reference = &reference;
  b.bottleneck = cfg.bottleneck;
  b.ppo = cfg.ppo;
  return b;
}

std::string describe_row(const RunLogRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "step %d reward %.3f penalty %.3f score %.3f fwf %.3f gram %.3f kl %.3f tokens %.1f",
                r.step, r.mean_reward, r.mean_penalty, r.mean_score, r.function_word_fraction,
                r.grammatical_error_rate, r.kl, r.summary_tokens);
  return buf;
}

void write_audit(const fs::path& path, const Listener& listener, const PolicyModel& reference,
                 const std::string& listener_before, const std::string& reference_before) {
  const std::string listener_after = hex64(fnv1a(listener.state_bytes()));
  const std::string reference_after = hex64(fnv1a(serialize_checkpoint(reference)));
  ojson audit = {{"listener_before", listener_before},
                 {"listener_after", listener_after},
                 {"listener_unchanged", listener_before == listener_after},
                 {"reference_before", reference_before},
                 {"reference_after", reference_after},
                 {"reference_unchanged", reference_before == reference_after}};
  write_file_atomic(path, audit.dump(2) + "\n");
}

// One PPO run into `dir`; resumes from checkpoints/latest.ckpt when asked.
void run_training(const ExperimentConfig& cfg, const Assets& assets, const fs::path& dir,
                  bool resume) {
  write_run_header(cfg, dir, "train");
  const Listener listener = make_listener(assets, cfg, cfg.listener.kind);
  const PolicyModel& reference = assets.speaker;
  Speaker speaker{assets.speaker, cfg.speaker.decode};
  RlState state = initial_rl_state(cfg.ppo);
  const fs::path latest = dir / "checkpoints" / "latest.ckpt";
  if (resume && fs::exists(latest)) {
    auto ck = load_checkpoint(latest);
    check_vocab(ck.model, assets.world, latest.string());
    speaker.policy = std::move(ck.model);
    state = rl_state_from(ck.state, cfg.ppo);
    log_info("resuming " + dir.string() + " at step " + std::to_string(state.step));
  }
  const std::string listener_before = hex64(fnv1a(listener.state_bytes()));
  const std::string reference_before = hex64(fnv1a(serialize_checkpoint(reference)));
  TrainOutput out;
  out.dir = dir;
  out.checkpoint_interval = cfg.checkpoint_interval;
  out.on_step = [](const RunLogRow& r) { log_debug(describe_row(r)); };
  const auto bundle = make_bundle(cfg, assets, listener, reference);
  const auto rows = train(speaker, bundle, state, out);
  if (!rows.empty()) log_info(dir.filename().string() + ": " + describe_row(rows.back()));
  write_audit(dir / "audit.json", listener, reference, listener_before, reference_before);
}

}  // namespace

void ExperimentConfig::validate() const {
  world.validate();
  speaker.dims.validate();
  speaker.decode.validate();
  speaker.warm_start.validate();
  listener.dims.validate();
  listener.lm_training.validate();
  listener.qa.validate();
  if (listener.oracle.window < 1) throw UsageError("OracleRules.window must be >= 1");
  if (!(listener.oracle.noise >= 0.0 && listener.oracle.noise <= 1.0)) {
    throw UsageError("OracleRules.noise must lie in [0, 1]");
  }
  bottleneck.validate();
  ppo.validate();
  perturbation.validate();
  mixed.schedule.validate();
  mixed.lm.validate();
  if (data.n_train < 1 || data.n_eval < 1) throw UsageError("Data: n_train and n_eval must be >= 1");
  if (feasibility.episodes < 1) throw UsageError("Feasibility.episodes must be >= 1");
  if (seeds.empty()) throw UsageError("seeds must not be empty");
  if (checkpoint_interval < 0) throw UsageError("checkpoint_interval must be >= 0");
  if (sweep.kinds.empty() || sweep.lambdas.empty()) {
    throw UsageError("Sweep: kinds and lambdas must not be empty");
  }
  for (double l : sweep.lambdas) {
    if (!(l >= 0.0 && l <= 1.0)) throw UsageError("Sweep.lambdas must lie in [0, 1]");
  }
  constexpr int kSentenceTokens = 7;  // the A of E is V .
  const int max_passage =
      (world.facts_per_passage + world.distractor_sentences) * kSentenceTokens;
  if (max_passage + 1 + speaker.decode.max_new_tokens > speaker.dims.context_window) {
    throw UsageError("Speaker: passage (" + std::to_string(max_passage) + " tokens) + <sep> + " +
                     "max_new_tokens (" + std::to_string(speaker.decode.max_new_tokens) +
                     ") exceeds the context window (" +
                     std::to_string(speaker.dims.context_window) + ")");
  }
}

ExperimentConfig parse_config(const std::string& json_text, const std::string& origin) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw UsageError(origin + ": invalid JSON: " + e.what());
  }
  ExperimentConfig cfg;
  read(j, origin, cfg);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw UsageError("config file not found: " + path.string());
  return parse_config(read_file(path), path.string());
}

std::string config_to_json(const ExperimentConfig& cfg) {
  ojson j;
  j["WorldSpec"] = write(cfg.world);
  j["Data"] = {{"n_train", cfg.data.n_train},
               {"n_eval", cfg.data.n_eval},
               {"train_seed", cfg.data.train_seed},
               {"eval_seed", cfg.data.eval_seed}};
  j["Paths"] = {{"train_dataset", cfg.paths.train_dataset},
                {"eval_dataset", cfg.paths.eval_dataset},
                {"speaker_checkpoint", cfg.paths.speaker_checkpoint},
                {"listener_lm_checkpoint", cfg.paths.listener_lm_checkpoint},
                {"listener_qa_checkpoint", cfg.paths.listener_qa_checkpoint}};
  j["Speaker"] = {{"ModelDims", write(cfg.speaker.dims)},
                  {"DecodeConfig", write(cfg.speaker.decode)},
                  {"PretrainConfig", write(cfg.speaker.warm_start)},
                  {"SummaryBootstrap", write(cfg.speaker.bootstrap)},
                  {"init_seed", cfg.speaker.init_seed}};
  j["Listener"] = {{"kind", listener_kind_name(cfg.listener.kind)},
                   {"ModelDims", write(cfg.listener.dims)},
                   {"LanguageModel", write(cfg.listener.lm_training)},
                   {"ListenerConfig", write(cfg.listener.qa)},
                   {"OracleRules",
                    {{"window", cfg.listener.oracle.window},
                     {"noise", cfg.listener.oracle.noise},
                     {"noise_seed", cfg.listener.oracle.noise_seed}}},
                   {"init_seed", cfg.listener.init_seed}};
  j["BottleneckSpec"] = write(cfg.bottleneck);
  j["PPOConfig"] = write(cfg.ppo);
  j["PerturbationGrid"] = {{"truncation", cfg.perturbation.truncation},
                           {"scramble", cfg.perturbation.scramble},
                           {"deletion", cfg.perturbation.deletion}};
  j["Feasibility"] = {{"episodes", cfg.feasibility.episodes},
                      {"listener", listener_kind_name(cfg.feasibility.listener)},
                      {"seed", cfg.feasibility.seed}};
  std::vector<std::string> kinds;
  for (auto k : cfg.sweep.kinds) kinds.emplace_back(to_string(k));
  j["Sweep"] = {{"kinds", kinds},
                {"lambdas", cfg.sweep.lambdas},
                {"mode", std::string(to_string(cfg.sweep.mode))},
                {"cutoff_budget", cfg.sweep.cutoff_budget}};
  j["Mixed"] = {{"MixedSchedule",
                 {{"lm_steps", cfg.mixed.schedule.lm_steps},
                  {"game_steps", cfg.mixed.schedule.game_steps},
                  {"cycles", cfg.mixed.schedule.cycles}}},
                {"PretrainConfig", write(cfg.mixed.lm)},
                {"from_scratch", cfg.mixed.from_scratch}};
  j["seeds"] = cfg.seeds;
  j["output_dir"] = cfg.output_dir;
  j["checkpoint_interval"] = cfg.checkpoint_interval;
  return j.dump(2) + "\n";
}

void write_run_header(const ExperimentConfig& cfg, const fs::path& dir, const std::string& command) {
  fs::create_directories(dir);
  write_file_atomic(dir / "config.resolved.json", config_to_json(cfg));
  ojson env = {{"refgame_version", kVersion},
               {"command", command},
               {"compiler", __VERSION__},
               {"cxx_standard", static_cast<long>(__cplusplus)},
               {"build_type", build_type()},
               {"simd", std::string(kernels::isa_name(kernels::active().isa))}};
  write_file_atomic(dir / "env.json", env.dump(2) + "\n");
}

LogLevel log_level() {
  const char* v = std::getenv("REFGAME_LOG");
  if (!v) return LogLevel::kInfo;
  const std::string s(v);
  if (s == "quiet") return LogLevel::kQuiet;
  if (s == "debug") return LogLevel::kDebug;
  return LogLevel::kInfo;
}

void log_info(const std::string& msg) {
  if (log_level() != LogLevel::kQuiet) std::cerr << "[refgame] " << msg << std::endl;
}

void log_debug(const std::string& msg) {
  if (log_level() == LogLevel::kDebug) std::cerr << "[refgame] " << msg << std::endl;
}

Assets prepare_assets(const ExperimentConfig& cfg, const fs::path& cache, bool need_qa,
                      bool need_speaker) {
  World world(cfg.world);
  auto train = load_or_generate(world, cfg.paths.train_dataset, cfg.data.n_train,
                                cfg.data.train_seed, cache, "train.jsonl");
  auto eval = load_or_generate(world, cfg.paths.eval_dataset, cfg.data.n_eval, cfg.data.eval_seed,
                               cache, "eval.jsonl");

  std::optional<PolicyModel> speaker;
  if (!need_speaker) {
    speaker.emplace(world.vocab(), cfg.speaker.dims, cfg.speaker.init_seed);
  } else if (!cfg.paths.speaker_checkpoint.empty()) {
    speaker = load_checkpoint(cfg.paths.speaker_checkpoint).model;
    check_vocab(*speaker, world, cfg.paths.speaker_checkpoint);
  } else if (fs::exists(cache / "speaker.ckpt")) {
    speaker = load_checkpoint(cache / "speaker.ckpt").model;
  } else {
    log_info("warm-starting the speaker");
    const auto corpus = warm_start_examples(world, train, cfg.speaker);
    speaker = train_lm_model(world, cfg.speaker.dims, cfg.speaker.init_seed, corpus,
                             cfg.speaker.warm_start, cache / "pretrain_log.csv", "speaker");
    save_checkpoint(cache / "speaker.ckpt", *speaker);
  }
  PolicyModel lm = load_or_train_listener_lm(cfg, world, train, cache);
  std::optional<PolicyModel> qa;
  if (need_qa) qa = load_or_train_listener_qa(cfg, world, train, eval, lm, cache).model;
  return Assets{std::move(world), std::move(train), std::move(eval), std::move(*speaker),
                std::move(lm), std::move(qa)};
}

Listener make_listener(const Assets& assets, const ExperimentConfig& cfg, ListenerKind kind) {
  if (kind == ListenerKind::kOracle) {
    return Listener::oracle(assets.world, assets.listener_lm, cfg.listener.oracle);
  }
  if (!assets.listener_qa) throw Error("learned listener requested but no QA model was prepared");
  return Listener::learned(assets.world, *assets.listener_qa, assets.listener_lm);
}

std::string sweep_cell_name(BottleneckKind kind, double lambda, std::uint64_t seed) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_lambda%g_seed%llu", std::string(to_string(kind)).c_str(),
                lambda, static_cast<unsigned long long>(seed));
  return buf;
}

// ---- commands ----

void cmd_generate_data(const ExperimentConfig& cfg, const fs::path& out) {
  write_run_header(cfg, out, "generate-data");
  World world(cfg.world);
  const auto train = generate_dataset(world, static_cast<std::size_t>(cfg.data.n_train), cfg.data.train_seed);
  const auto eval = generate_dataset(world, static_cast<std::size_t>(cfg.data.n_eval), cfg.data.eval_seed);
  save_jsonl(train, world.vocab(), out / "train.jsonl");
  save_jsonl(eval, world.vocab(), out / "eval.jsonl");
  log_info("wrote " + std::to_string(train.size()) + " + " + std::to_string(eval.size()) +
           " examples to " + out.string());
}

void cmd_pretrain(const ExperimentConfig& cfg, const fs::path& out, bool resume) {
  World world(cfg.world);
  if (!cfg.paths.train_dataset.empty() && !fs::exists(cfg.paths.train_dataset)) {
    throw Error("corpus not found: " + cfg.paths.train_dataset);
  }
  const auto train = load_or_generate(world, cfg.paths.train_dataset, cfg.data.n_train,
                                      cfg.data.train_seed, out, "train.jsonl");
  write_run_header(cfg, out, "pretrain");
  const auto corpus = warm_start_examples(world, train, cfg.speaker);

  PolicyModel model(world.vocab(), cfg.speaker.dims, cfg.speaker.init_seed);
  AdamState adam;
  int start = 0;
  const fs::path latest = out / "pretrain_latest.ckpt";
  const fs::path log_path = out / "pretrain_log.csv";
  if (resume && fs::exists(latest)) {
    auto ck = load_checkpoint(latest);
    check_vocab(ck.model, world, latest.string());
    model = std::move(ck.model);
    if (ck.state.adam) adam = *ck.state.adam;
    start = static_cast<int>(ck.state.step);
    log_info("resuming pretraining at step " + std::to_string(start));
  }
  if (start > 0 && fs::exists(log_path)) {
    truncate_lines(log_path, static_cast<std::size_t>(start));
  } else {
    write_file_atomic(log_path, "step,train_loss,held_out_loss\n");
  }
  std::ofstream log(log_path, std::ios::app);
  pretrain_lm(model, corpus, cfg.speaker.warm_start, &adam, start, [&](const PretrainLogRow& r) {
    append_pretrain_row(log, r);
    if (!std::isnan(r.held_out_loss)) {
      log_info("step " + std::to_string(r.step) + " held-out loss " + format_double(r.held_out_loss));
      TrainingState ts;
      ts.step = r.step;
      ts.adam = adam;
      save_checkpoint(latest, model, ts);
    }
  });
  TrainingState ts;
  ts.step = cfg.speaker.warm_start.steps;
  ts.adam = adam;
  save_checkpoint(latest, model, ts);
  save_checkpoint(out / "speaker.ckpt", model);
  log_info("wrote " + (out / "speaker.ckpt").string());
}

void cmd_train_listener(const ExperimentConfig& cfg, const fs::path& out) {
  write_run_header(cfg, out, "train-listener");
  World world(cfg.world);
  const auto train = load_or_generate(world, cfg.paths.train_dataset, cfg.data.n_train,
                                      cfg.data.train_seed, out, "train.jsonl");
  const auto eval = load_or_generate(world, cfg.paths.eval_dataset, cfg.data.n_eval,
                                     cfg.data.eval_seed, out, "eval.jsonl");
  const PolicyModel lm = load_or_train_listener_lm(cfg, world, train, out);
  if (cfg.listener.kind == ListenerKind::kLearned) {
    const auto r = load_or_train_listener_qa(cfg, world, train, eval, lm, out);
    log_info("learned listener held-out accuracy " + format_double(r.accuracy) +
             (r.below_threshold ? " (below threshold)" : ""));
  }
}

void cmd_train(const ExperimentConfig& cfg, const fs::path& out, bool resume) {
  const Assets assets =
      prepare_assets(cfg, out / "assets", cfg.listener.kind == ListenerKind::kLearned);
  run_training(cfg, assets, out, resume);
}

void cmd_train_mixed(const ExperimentConfig& cfg, const fs::path& out) {
  const Assets assets =
      prepare_assets(cfg, out / "assets", cfg.listener.kind == ListenerKind::kLearned);
  write_run_header(cfg, out, "train-mixed");
  const Listener listener = make_listener(assets, cfg, cfg.listener.kind);
  Speaker speaker{cfg.mixed.from_scratch
                      ? PolicyModel(assets.world.vocab(), cfg.speaker.dims, cfg.speaker.init_seed)
                      : assets.speaker,
                  cfg.speaker.decode};
  const PolicyModel reference = speaker.policy;
  const auto corpus = passage_examples(assets.world, assets.train);
  const auto bundle = make_bundle(cfg, assets, listener, reference);
  std::ofstream log(out / "mixed_log.csv");
  log << "cycle,phase,phase_step,lm_loss,held_out_loss,mean_reward,mean_score\n";
  auto field = [](double v) { return std::isnan(v) ? std::string() : format_double(v); };
  train_mixed(speaker, corpus, bundle, cfg.mixed.lm, cfg.mixed.schedule, [&](const MixedLogRow& r) {
    log << r.cycle << ',' << r.phase << ',' << r.phase_step << ',' << field(r.lm_loss) << ','
        << field(r.held_out_loss) << ',' << field(r.mean_reward) << ',' << field(r.mean_score)
        << '\n'
        << std::flush;
    if (r.phase == "game") {
      log_debug("cycle " + std::to_string(r.cycle) + " reward " + field(r.mean_reward));
    }
  });
  save_checkpoint(out / "speaker_final.ckpt", speaker.policy);
}

void cmd_feasibility(const ExperimentConfig& cfg, const fs::path& out) {
  const bool learned = cfg.feasibility.listener == ListenerKind::kLearned;
  const Assets assets = prepare_assets(cfg, out / "assets", learned, /*need_speaker=*/false);
  write_run_header(cfg, out, "feasibility");
  const Listener listener = make_listener(assets, cfg, cfg.feasibility.listener);
  const auto specs = grid_specs(cfg.perturbation);
  const auto cells = feasibility_study(listener, assets.world, assets.eval, specs,
                                       cfg.feasibility.episodes, cfg.feasibility.seed);
  write_feasibility_csv(cells, out / "feasibility.csv");
  const std::string report = feasibility_report(cells);
  write_file_atomic(out / "feasibility_report.txt", report);
  if (log_level() != LogLevel::kQuiet) std::cerr << report;
}

void cmd_sweep(const ExperimentConfig& cfg, const fs::path& out) {
  const bool learned = cfg.listener.kind == ListenerKind::kLearned;
  const Assets assets = prepare_assets(cfg, out / "assets", learned);
  write_run_header(cfg, out, "sweep");
  std::vector<std::string> failures;
  for (BottleneckKind kind : cfg.sweep.kinds) {
    for (double lambda : cfg.sweep.lambdas) {
      for (std::uint64_t seed : cfg.seeds) {
        const std::string name = sweep_cell_name(kind, lambda, seed);
        const fs::path dir = out / name;
        if (fs::exists(dir / "DONE")) {
          log_info(name + ": done, skipping");
          continue;
        }
        ExperimentConfig cell = cfg;
        cell.bottleneck.kind = kind;
        cell.bottleneck.lambda = lambda;
        cell.bottleneck.mode = cfg.sweep.mode;
        cell.bottleneck.cutoff_budget = cfg.sweep.cutoff_budget;
        cell.ppo.seed = seed;
        cell.seeds = {seed};
        try {
          fs::remove(dir / "FAILED");
          log_info(name + ": starting");
          run_training(cell, assets, dir, /*resume=*/true);
          write_file_atomic(dir / "DONE", "");
        } catch (const std::exception& e) {
          fs::create_directories(dir);
          write_file_atomic(dir / "FAILED", std::string(e.what()) + "\n");
          failures.push_back(name + ": " + e.what());
          log_info(name + ": FAILED: " + e.what());
        }
      }
    }
  }
  if (!failures.empty()) {
    std::string summary;
    for (const auto& f : failures) summary += f + "\n";
    write_file_atomic(out / "sweep_failures.txt", summary);
  } else {
    fs::remove(out / "sweep_failures.txt");
  }
  cmd_report(out, out / "report");
}

}  // namespace refgame
