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

#include "refgame/perturb.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "refgame/textmetrics.hpp"

namespace refgame {

std::string_view to_string(PerturbationKind k) {
  switch (k) {
    case PerturbationKind::kTargetBaseline: return "target_baseline";
    case PerturbationKind::kFullBaseline: return "full_baseline";
    case PerturbationKind::kEmptyBaseline: return "empty_baseline";
    case PerturbationKind::kStopwordRemoval: return "stopword_removal";
    case PerturbationKind::kTruncation: return "truncation";
    case PerturbationKind::kScramble: return "scramble";
    case PerturbationKind::kWordDeletion: return "word_deletion";
  }
  return "?";
}

PerturbationKind parse_perturbation_kind(std::string_view s) {
  for (auto k : {PerturbationKind::kTargetBaseline, PerturbationKind::kFullBaseline,
                 PerturbationKind::kEmptyBaseline, PerturbationKind::kStopwordRemoval,
                 PerturbationKind::kTruncation, PerturbationKind::kScramble,
                 PerturbationKind::kWordDeletion}) {
    if (to_string(k) == s) return k;
  }
  throw UsageError("unknown perturbation kind '" + std::string(s) + "'");
}

void PerturbationSpec::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw UsageError(std::string("PerturbationSpec.") + name + " must lie in [0, 1]");
    }
  };
  prob(c, "c");
  prob(s, "s");
  prob(d, "d");
  if (m < 0) throw UsageError("PerturbationSpec.m must be >= 0");
}

double PerturbationSpec::parameter() const {
  switch (kind) {
    case PerturbationKind::kTruncation: return c;
    case PerturbationKind::kScramble: return s;
    case PerturbationKind::kWordDeletion: return d;
    default: return 0.0;
  }
}

std::size_t truncation_max_span(std::size_t length, std::size_t start, double c) {
  if (start >= length) return 0;
  return static_cast<std::size_t>(std::floor(c * static_cast<double>(length - start)));
}

TokenSequence perturb(std::span<const TokenId> context, const PerturbationSpec& spec,
                      std::span<const TokenId> gold_answer, const World& world) {
  spec.validate();
  TokenSequence out(context.begin(), context.end());
  Rng rng(spec.seed);
  switch (spec.kind) {
    case PerturbationKind::kTargetBaseline:
      return TokenSequence(gold_answer.begin(), gold_answer.end());
    case PerturbationKind::kFullBaseline:
      return out;
    case PerturbationKind::kEmptyBaseline:
      return {};
    case PerturbationKind::kStopwordRemoval: {
      TokenSequence kept;
      for (TokenId t : out) {
        if (!world.stopwords().contains(t)) kept.push_back(t);
      }
      return kept;
    }
    case PerturbationKind::kTruncation:
      for (int round = 0; round < spec.m && !out.empty(); ++round) {
        const std::size_t start = rng.below(out.size());
        const std::size_t max_n = truncation_max_span(out.size(), start, spec.c);
        const std::size_t n = rng.below(max_n + 1);
        out.erase(out.begin() + static_cast<std::ptrdiff_t>(start),
                  out.begin() + static_cast<std::ptrdiff_t>(start + n));
      }
      return out;
    case PerturbationKind::kScramble: {
      std::size_t begin = 0;
      for (std::size_t i = 0; i <= out.size(); ++i) {
        const bool boundary = i == out.size() || world.is_terminator(out[i]);
        if (!boundary) continue;
        // Swap within [begin, i); the terminator at i stays.
        for (std::size_t a = begin; a < i; ++a) {
          for (std::size_t b = a + 1; b < i; ++b) {
            if (rng.bernoulli(spec.s)) std::swap(out[a], out[b]);
          }
        }
        begin = i + 1;
      }
      return out;
    }
    case PerturbationKind::kWordDeletion: {
      TokenSequence kept;
      for (TokenId t : out) {
        if (!rng.bernoulli(spec.d)) kept.push_back(t);
      }
      return kept;
    }
  }
  return out;
}

void PerturbationGrid::validate() const {
  for (const auto& [m, c] : truncation) {
    PerturbationSpec{.kind = PerturbationKind::kTruncation, .m = m, .c = c}.validate();
  }
  for (double s : scramble) PerturbationSpec{.kind = PerturbationKind::kScramble, .s = s}.validate();
  for (double d : deletion) {
    PerturbationSpec{.kind = PerturbationKind::kWordDeletion, .d = d}.validate();
  }
}

std::vector<PerturbationSpec> grid_specs(const PerturbationGrid& grid) {
  grid.validate();
  std::vector<PerturbationSpec> specs;
  for (auto k : {PerturbationKind::kTargetBaseline, PerturbationKind::kFullBaseline,
                 PerturbationKind::kEmptyBaseline, PerturbationKind::kStopwordRemoval}) {
    specs.push_back({.kind = k});
  }
  auto level = [](std::size_t i, std::size_t n) -> std::string {
    if (n == 3) return i == 0 ? "low" : i == 1 ? "medium" : "high";
    return "level" + std::to_string(i + 1);
  };
  for (std::size_t i = 0; i < grid.truncation.size(); ++i) {
    specs.push_back({.kind = PerturbationKind::kTruncation,
                     .m = grid.truncation[i].first,
                     .c = grid.truncation[i].second,
                     .level = level(i, grid.truncation.size())});
  }
  for (std::size_t i = 0; i < grid.scramble.size(); ++i) {
    specs.push_back({.kind = PerturbationKind::kScramble,
                     .s = grid.scramble[i],
                     .level = level(i, grid.scramble.size())});
  }
  for (std::size_t i = 0; i < grid.deletion.size(); ++i) {
    specs.push_back({.kind = PerturbationKind::kWordDeletion,
                     .d = grid.deletion[i],
                     .level = level(i, grid.deletion.size())});
  }
  return specs;
}

std::vector<FeasibilityCell> feasibility_study(const Listener& listener, const World& world,
                                               std::span<const QAExample> dataset,
                                               std::span<const PerturbationSpec> specs,
                                               int n_episodes, std::uint64_t seed) {
  if (n_episodes < 1) throw UsageError("feasibility_study: n_episodes must be >= 1");
  if (dataset.empty()) throw UsageError("feasibility_study: empty dataset");
  std::vector<FeasibilityCell> cells;
  for (std::size_t k = 0; k < specs.size(); ++k) {
    std::vector<double> rewards;
    rewards.reserve(static_cast<std::size_t>(n_episodes));
    for (int e = 0; e < n_episodes; ++e) {
      const QAExample& ex = dataset[static_cast<std::size_t>(e) % dataset.size()];
      PerturbationSpec spec = specs[k];
      spec.seed = derive_seed(seed, k, static_cast<std::uint64_t>(e));
      const auto context = perturb(ex.passage, spec, ex.gold_answer, world);
      const auto answer = listener.listen(context, ex.question);
      rewards.push_back(textmetrics::rouge_l_f1(answer, ex.gold_answer));
    }
    const auto ci = bootstrap_ci(rewards, derive_seed(seed, k, 0xb007));
    cells.push_back({specs[k], ci.mean, ci.low, ci.high, n_episodes});
  }
  return cells;
}

void write_feasibility_csv(std::span<const FeasibilityCell> cells, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "spec,level,parameter,mean,ci_low,ci_high,n\n";
  for (const auto& c : cells) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%s,%.17g,%.17g,%.17g,%.17g,%d\n",
                  std::string(to_string(c.spec.kind)).c_str(), c.spec.level.c_str(),
                  c.spec.parameter(), c.mean, c.ci_low, c.ci_high, c.n);
    out << buf;
  }
  if (!out) throw Error("failed writing " + path.string());
}

std::string feasibility_report(std::span<const FeasibilityCell> cells) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-18s %-7s %9s %8s  %-17s %5s\n", "perturbation", "level",
                "parameter", "mean", "95% CI", "n");
  out << buf;
  for (const auto& c : cells) {
    std::string param = "-";
    if (c.spec.kind == PerturbationKind::kTruncation) {
      std::snprintf(buf, sizeof buf, "m=%d,c=%.2f", c.spec.m, c.spec.c);
      param = buf;
    } else if (!c.spec.level.empty()) {
      std::snprintf(buf, sizeof buf, "%.2f", c.spec.parameter());
      param = buf;
    }
    std::snprintf(buf, sizeof buf, "%-18s %-7s %9s %8.4f  [%.4f, %.4f] %5d\n",
                  std::string(to_string(c.spec.kind)).c_str(),
                  c.spec.level.empty() ? "-" : c.spec.level.c_str(), param.c_str(), c.mean,
                  c.ci_low, c.ci_high, c.n);
    out << buf;
  }
  return out.str();
}

}  // namespace refgame
