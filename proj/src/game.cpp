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

#include "refgame/game.hpp"

#include <json.hpp>

namespace refgame {

std::string_view to_string(BottleneckKind k) {
  switch (k) {
    case BottleneckKind::kNone: return "none";
    case BottleneckKind::kLength: return "length";
    case BottleneckKind::kSurprisal: return "surprisal";
  }
  return "?";
}

std::string_view to_string(BottleneckMode m) {
  return m == BottleneckMode::kPenalty ? "penalty" : "cutoff";
}

BottleneckKind parse_bottleneck_kind(std::string_view s) {
  if (s == "none") return BottleneckKind::kNone;
  if (s == "length") return BottleneckKind::kLength;
  if (s == "surprisal") return BottleneckKind::kSurprisal;
  throw UsageError("unknown bottleneck kind '" + std::string(s) + "'");
}

BottleneckMode parse_bottleneck_mode(std::string_view s) {
  if (s == "penalty") return BottleneckMode::kPenalty;
  if (s == "cutoff") return BottleneckMode::kCutoff;
  throw UsageError("unknown bottleneck mode '" + std::string(s) + "'");
}

void BottleneckSpec::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw UsageError("BottleneckSpec.lambda must lie in [0, 1]");
  if (mode == BottleneckMode::kCutoff && kind != BottleneckKind::kNone && !(cutoff_budget > 0.0)) {
    throw UsageError("BottleneckSpec.cutoff_budget must be > 0 in cutoff mode");
  }
}

double penalty_length(std::span<const TokenId> summary, std::span<const TokenId> context) {
  if (context.empty()) throw Error("penalty_length: empty context");
  return static_cast<double>(summary.size()) / static_cast<double>(context.size());
}

double penalty_surprisal(std::span<const TokenId> summary, std::span<const TokenId> context,
                         const Listener& listener) {
  const double sc = listener.surprisal(context);
  if (!(sc > 0.0)) throw Error("penalty_surprisal: context surprisal is zero");
  return listener.surprisal(summary) / sc;
}

double score(double reward, double penalty, double lambda) {
  return (1.0 - lambda) * reward - lambda * penalty;
}

TokenSequence apply_cutoff(std::span<const TokenId> summary, const BottleneckSpec& bottleneck,
                           const Listener& listener) {
  switch (bottleneck.kind) {
    case BottleneckKind::kNone:
      return TokenSequence(summary.begin(), summary.end());
    case BottleneckKind::kLength: {
      const double budget = std::max(0.0, bottleneck.cutoff_budget);
      const auto n = static_cast<std::size_t>(std::min<double>(budget, summary.size()));
      return TokenSequence(summary.begin(), summary.begin() + static_cast<std::ptrdiff_t>(n));
    }
    case BottleneckKind::kSurprisal: {
      // Per-token surprisals of the prefix under the listener LM.
      const auto& lm = listener.lm();
      const auto window = static_cast<std::size_t>(lm.dims().context_window);
      double cost = 0.0;
      std::size_t n = 0;
      for (; n < summary.size(); ++n) {
        const std::size_t chunk = n - n % window;
        const auto lp = next_token_logprobs(lm, summary.subspan(chunk, n - chunk));
        cost -= lp[static_cast<std::size_t>(summary[n])];
        if (cost > bottleneck.cutoff_budget) break;
      }
      return TokenSequence(summary.begin(), summary.begin() + static_cast<std::ptrdiff_t>(n));
    }
  }
  return {};
}

EpisodeRecord score_generation(const Listener& listener, const World& world,
                               const QAExample& example, const BottleneckSpec& bottleneck,
                               Generation generation, std::uint64_t seed) {
  bottleneck.validate();
  EpisodeRecord rec;
  rec.example = example;
  rec.seed = seed;
  rec.lambda = bottleneck.lambda;
  rec.summary = bottleneck.mode == BottleneckMode::kCutoff
                    ? apply_cutoff(generation.tokens, bottleneck, listener)
                    : generation.tokens;
  rec.generation = std::move(generation);
  rec.predicted_answer = listener.listen(rec.summary, example.question);
  rec.reward = textmetrics::rouge_l_f1(rec.predicted_answer, example.gold_answer);
  rec.listener_surprisal = listener.surprisal(rec.summary);
  switch (bottleneck.kind) {
    case BottleneckKind::kNone:
      rec.penalty = 0.0;
      break;
    case BottleneckKind::kLength:
      rec.penalty = penalty_length(rec.summary, example.passage);
      break;
    case BottleneckKind::kSurprisal: {
      const double sc = listener.surprisal(example.passage);
      if (!(sc > 0.0)) throw Error("penalty_surprisal: context surprisal is zero");
      rec.penalty = rec.listener_surprisal / sc;
      break;
    }
  }
  if (bottleneck.kind == BottleneckKind::kNone || bottleneck.mode == BottleneckMode::kCutoff) {
    rec.score = rec.reward;
  } else {
    rec.score = score(rec.reward, rec.penalty, bottleneck.lambda);
  }
  rec.metrics = textmetrics::measure(rec.summary, example.passage, world.vocab(), world.stopwords());
  rec.grammatical_error_rate = grammatical_error_rate(rec.summary, world.grammar(), world.vocab());
  return rec;
}

EpisodeRecord play_episode(const Speaker& speaker, const Listener& listener, const World& world,
                           const QAExample& example, const BottleneckSpec& bottleneck,
                           std::uint64_t seed) {
  return score_generation(listener, world, example, bottleneck,
                          speak(speaker, example.passage, seed), seed);
}

std::string episode_to_jsonl(const EpisodeRecord& rec, const Vocabulary& vocab, int step) {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["seed"] = rec.seed;
  j["passage"] = vocab.decode(rec.example.passage);
  j["question"] = vocab.decode(rec.example.question);
  j["gold_answer"] = vocab.decode(rec.example.gold_answer);
  j["summary"] = vocab.decode(rec.summary);
  j["predicted_answer"] = vocab.decode(rec.predicted_answer);
  j["reward"] = rec.reward;
  j["penalty"] = rec.penalty;
  j["score"] = rec.score;
  j["lambda"] = rec.lambda;
  j["summary_logprob"] = rec.generation.total_logprob();
  j["listener_surprisal"] = rec.listener_surprisal;
  j["rouge_l_f1"] = rec.metrics.rouge_l_f1;
  j["bleu"] = rec.metrics.bleu;
  j["edit_distance_norm"] = rec.metrics.edit_distance_norm;
  j["function_word_fraction"] = rec.metrics.function_word_fraction;
  j["mean_sentence_length"] = rec.metrics.mean_sentence_length_tokens;
  j["mean_word_length"] = rec.metrics.mean_word_length_chars;
  j["token_count"] = rec.metrics.token_count;
  j["grammatical_error_rate"] = rec.grammatical_error_rate;
  return j.dump();
}

}  // namespace refgame
