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

// Context corruptions and the listener-degradation study over them.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "refgame/agents.hpp"
#include "refgame/corpus.hpp"
#include "refgame/stats.hpp"

namespace refgame {

enum class PerturbationKind {
  kTargetBaseline,
  kFullBaseline,
  kEmptyBaseline,
  kStopwordRemoval,
  kTruncation,
  kScramble,
  kWordDeletion,
};

std::string_view to_string(PerturbationKind k);
PerturbationKind parse_perturbation_kind(std::string_view s);

struct PerturbationSpec {
  PerturbationKind kind = PerturbationKind::kFullBaseline;
  int m = 1;         // truncation rounds
  double c = 0.0;    // truncation span fraction
  double s = 0.0;    // scramble swap probability
  double d = 0.0;    // deletion probability
  std::uint64_t seed = 0;
  std::string level;  // "low" / "medium" / "high" for graded kinds

  void validate() const;
  // The kind's own parameter, for tables (c for truncation, s, d).
  double parameter() const;
};

// Applies `spec` to `context`. Sentence boundaries for scrambling are the
// world's terminal punctuation tokens; terminators stay in place.
TokenSequence perturb(std::span<const TokenId> context, const PerturbationSpec& spec,
                      std::span<const TokenId> gold_answer, const World& world);

// Largest span one truncation round may remove: floor(c * (L - start)).
std::size_t truncation_max_span(std::size_t length, std::size_t start, double c);

struct PerturbationGrid {
  std::vector<std::pair<int, double>> truncation = {{1, 0.25}, {2, 0.5}, {4, 0.75}};
  std::vector<double> scramble = {0.1, 0.3, 0.6};
  std::vector<double> deletion = {0.1, 0.3, 0.6};

  void validate() const;
};

// Baselines, stopword removal, then each graded kind at its levels.
std::vector<PerturbationSpec> grid_specs(const PerturbationGrid& grid);

struct FeasibilityCell {
  PerturbationSpec spec;
  double mean = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  int n = 0;
};

// Mean listener reward for each spec over n_episodes dataset items (the
// same items for every spec), with percentile bootstrap 95% intervals.
std::vector<FeasibilityCell> feasibility_study(const Listener& listener, const World& world,
                                               std::span<const QAExample> dataset,
                                               std::span<const PerturbationSpec> specs,
                                               int n_episodes, std::uint64_t seed);

// CSV columns: spec, level, parameter, mean, ci_low, ci_high, n.
void write_feasibility_csv(std::span<const FeasibilityCell> cells, const std::filesystem::path& path);
std::string feasibility_report(std::span<const FeasibilityCell> cells);

}  // namespace refgame
