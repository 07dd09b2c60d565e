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
#include <fstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "refgame/perturb.hpp"

using namespace refgame;

namespace {

const World& W() { return fixture::world(); }

bool is_subsequence(std::span<const TokenId> sub, std::span<const TokenId> seq) {
  std::size_t j = 0;
  for (TokenId t : sub) {
    while (j < seq.size() && seq[j] != t) ++j;
    if (j == seq.size()) return false;
    ++j;
  }
  return true;
}

bool is_permutation_of(TokenSequence a, TokenSequence b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return a == b;
}

}  // namespace

TEST_CASE("perturb boundary cases") {
  const auto ex = generate_dataset(W(), 1, 81)[0];
  PerturbationSpec s{.kind = PerturbationKind::kScramble, .s = 0.0, .seed = 3};
  CHECK(perturb(ex.passage, s, ex.gold_answer, W()) == ex.passage);
  PerturbationSpec d{.kind = PerturbationKind::kWordDeletion, .d = 1.0, .seed = 3};
  CHECK(perturb(ex.passage, d, ex.gold_answer, W()).empty());

  CHECK(truncation_max_span(ex.passage.size(), 0, 1.0) == ex.passage.size());
  // With m = 1 and c = 1 the draw (start 0, full span) empties the input.
  const TokenSequence three(ex.passage.begin(), ex.passage.begin() + 3);
  bool emptied = false;
  for (std::uint64_t seed = 0; seed < 200 && !emptied; ++seed) {
    PerturbationSpec t{.kind = PerturbationKind::kTruncation, .m = 1, .c = 1.0, .seed = seed};
    emptied = perturb(three, t, ex.gold_answer, W()).empty();
  }
  CHECK(emptied);

  PerturbationSpec target{.kind = PerturbationKind::kTargetBaseline};
  CHECK(perturb(ex.passage, target, ex.gold_answer, W()) == ex.gold_answer);
  PerturbationSpec empty{.kind = PerturbationKind::kEmptyBaseline};
  CHECK(perturb(ex.passage, empty, ex.gold_answer, W()).empty());
  PerturbationSpec full{.kind = PerturbationKind::kFullBaseline};
  CHECK(perturb(ex.passage, full, ex.gold_answer, W()) == ex.passage);

  PerturbationSpec bad{.kind = PerturbationKind::kScramble, .s = 1.5};
  CHECK_THROWS_AS(perturb(ex.passage, bad, ex.gold_answer, W()), UsageError);
}

TEST_CASE("perturbations never invent tokens and are deterministic") {
  const auto data = generate_dataset(W(), 200, 82);
  Rng rng(83);
  for (const auto& ex : data) {
    for (auto kind : {PerturbationKind::kStopwordRemoval, PerturbationKind::kTruncation,
                      PerturbationKind::kScramble, PerturbationKind::kWordDeletion}) {
      PerturbationSpec spec{.kind = kind,
                            .m = static_cast<int>(1 + rng.below(4)),
                            .c = rng.uniform(),
                            .s = rng.uniform(),
                            .d = rng.uniform(),
                            .seed = rng.next_u64()};
      const auto out = perturb(ex.passage, spec, ex.gold_answer, W());
      REQUIRE(out == perturb(ex.passage, spec, ex.gold_answer, W()));
      if (kind == PerturbationKind::kScramble) {
        REQUIRE(is_permutation_of(out, ex.passage));
        // Sentence order and terminators are preserved.
        for (std::size_t i = 0; i < out.size(); ++i) {
          REQUIRE(W().is_terminator(out[i]) == W().is_terminator(ex.passage[i]));
        }
        const auto a = split_sentences(out, W().vocab()), b = split_sentences(ex.passage, W().vocab());
        REQUIRE(a.size() == b.size());
        for (std::size_t k = 0; k < a.size(); ++k) REQUIRE(is_permutation_of(a[k], b[k]));
      } else {
        REQUIRE(is_subsequence(out, ex.passage));
      }
      if (kind == PerturbationKind::kStopwordRemoval) {
        for (TokenId t : out) REQUIRE_FALSE(W().stopwords().contains(t));
      }
    }
  }
}

TEST_CASE("truncation rounds apply to the shrinking sequence") {
  const auto ex = generate_dataset(W(), 1, 84)[0];
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    PerturbationSpec one{.kind = PerturbationKind::kTruncation, .m = 1, .c = 0.5, .seed = seed};
    PerturbationSpec four{.kind = PerturbationKind::kTruncation, .m = 4, .c = 0.5, .seed = seed};
    const auto a = perturb(ex.passage, one, ex.gold_answer, W());
    const auto b = perturb(ex.passage, four, ex.gold_answer, W());
    // The first round is shared, so more rounds only remove more.
    CHECK(is_subsequence(b, a));
    CHECK(ex.passage.size() - a.size() <= ex.passage.size() / 2);
  }
}

TEST_CASE("feasibility study on the oracle listener") {
  const auto listener = Listener::oracle(W(), PolicyModel(W().vocab(), fixture::tiny_dims(), 1));
  const auto data = generate_dataset(W(), 200, 85);
  const auto specs = grid_specs(PerturbationGrid{});
  CHECK(specs.size() == 4 + 9);
  const auto cells = feasibility_study(listener, W(), data, specs, 200, 86);
  REQUIRE(cells.size() == specs.size());
  auto mean_of = [&](PerturbationKind k, const std::string& level = "") {
    for (const auto& c : cells) {
      if (c.spec.kind == k && c.spec.level == level) return c.mean;
    }
    FAIL("missing cell");
    return 0.0;
  };
  // The bare answer carries no entity or attribute cue for the oracle.
  CHECK(mean_of(PerturbationKind::kTargetBaseline) == 0.0);
  CHECK(mean_of(PerturbationKind::kFullBaseline) == 1.0);
  CHECK(mean_of(PerturbationKind::kEmptyBaseline) == 0.0);
  for (const auto& c : cells) {
    CHECK(c.n == 200);
    CHECK(c.ci_low <= c.mean);
    CHECK(c.mean <= c.ci_high);
    CHECK(c.mean <= mean_of(PerturbationKind::kFullBaseline));
    CHECK(c.mean >= mean_of(PerturbationKind::kEmptyBaseline));
  }
  CHECK(mean_of(PerturbationKind::kTruncation, "low") >= mean_of(PerturbationKind::kTruncation, "high"));

  const auto dir = fixture::temp_dir("feasibility");
  write_feasibility_csv(cells, dir / "f.csv");
  std::ifstream in(dir / "f.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "spec,level,parameter,mean,ci_low,ci_high,n");
  CHECK_FALSE(feasibility_report(cells).empty());
  // Same seed, same table.
  const auto again = feasibility_study(listener, W(), data, specs, 200, 86);
  for (std::size_t i = 0; i < cells.size(); ++i) CHECK(again[i].mean == cells[i].mean);
}
