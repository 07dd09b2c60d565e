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

// One round of the summarization game and its scoring.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "refgame/agents.hpp"
#include "refgame/corpus.hpp"
#include "refgame/textmetrics.hpp"

namespace refgame {

enum class BottleneckKind { kNone, kLength, kSurprisal };
enum class BottleneckMode { kPenalty, kCutoff };

std::string_view to_string(BottleneckKind k);
std::string_view to_string(BottleneckMode m);
BottleneckKind parse_bottleneck_kind(std::string_view s);
BottleneckMode parse_bottleneck_mode(std::string_view s);

struct BottleneckSpec {
  BottleneckKind kind = BottleneckKind::kNone;
  BottleneckMode mode = BottleneckMode::kPenalty;
  double lambda = 0.0;
  double cutoff_budget = 0.0;  // tokens or nats, cutoff mode only

  void validate() const;
};

struct EpisodeRecord {
  QAExample example;
  TokenSequence summary;                 // as heard by the listener
  Generation generation;                 // speaker actions, log-probs and supports
  TokenSequence predicted_answer;
  double reward = 0.0;
  double penalty = 0.0;
  double score = 0.0;
  double lambda = 0.0;
  double listener_surprisal = 0.0;       // of the summary
  textmetrics::MetricReport metrics;     // summary against passage
  double grammatical_error_rate = 0.0;
  std::uint64_t seed = 0;
};

// |summary| / |context|. Throws Error for an empty context.
double penalty_length(std::span<const TokenId> summary, std::span<const TokenId> context);
// S_L(summary) / S_L(context). Throws Error when S_L(context) is zero.
double penalty_surprisal(std::span<const TokenId> summary, std::span<const TokenId> context,
                         const Listener& listener);
// (1 - lambda) * reward - lambda * penalty
double score(double reward, double penalty, double lambda);

// Longest prefix whose cost (tokens or listener surprisal) is within the
// budget. kind = none leaves the summary unchanged.
TokenSequence apply_cutoff(std::span<const TokenId> summary, const BottleneckSpec& bottleneck,
                           const Listener& listener);

// Scores an already produced speaker output against `example`.
EpisodeRecord score_generation(const Listener& listener, const World& world,
                               const QAExample& example, const BottleneckSpec& bottleneck,
                               Generation generation, std::uint64_t seed = 0);

// The speaker sees only the passage; the listener sees only the summary
// and the question.
EpisodeRecord play_episode(const Speaker& speaker, const Listener& listener, const World& world,
                           const QAExample& example, const BottleneckSpec& bottleneck,
                           std::uint64_t seed);

// One JSON object per line: all scalar fields, the summary and answer text.
std::string episode_to_jsonl(const EpisodeRecord& rec, const Vocabulary& vocab, int step);

}  // namespace refgame
