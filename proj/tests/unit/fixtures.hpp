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

#include <filesystem>
#include <string>

#include "refgame/agents.hpp"
#include "refgame/corpus.hpp"
#include "refgame/lm.hpp"
#include "refgame/model.hpp"

namespace fixture {

inline refgame::ModelDims tiny_dims() {
  return refgame::ModelDims{.context_window = 64, .d_model = 12, .n_layers = 2, .n_heads = 2,
                            .d_ff = 16};
}

inline const refgame::World& world() {
  static const refgame::World w{refgame::WorldSpec{}};
  return w;
}

// A model with every parameter drawn at random, so no output is uniform.
inline refgame::PolicyModel random_model(std::uint64_t seed, double scale = 0.3,
                                         refgame::ModelDims dims = tiny_dims()) {
  refgame::PolicyModel m(world().vocab(), dims, seed);
  refgame::Rng rng(seed ^ 0xabcdef);
  for (double& p : m.params()) p += scale * rng.normal();
  return m;
}

inline refgame::DecodeConfig sampling_decode(int max_new_tokens = 16) {
  refgame::DecodeConfig d;
  d.max_new_tokens = max_new_tokens;
  d.min_length = 2;
  d.top_k = 1000;
  d.top_p = 1.0;
  d.epsilon_cutoff = 0.0;
  d.num_beams = 1;
  return d;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "refgame_unit" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Central-difference check: |a - n| <= rel * max(|a|, |n|) or both tiny.
inline bool grad_close(double analytic, double numeric, double rel = 1e-3, double floor = 1e-8) {
  const double diff = std::abs(analytic - numeric);
  return diff <= floor || diff <= rel * std::max(std::abs(analytic), std::abs(numeric));
}

}  // namespace fixture
