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

// Versioned binary container for models, optionally carrying optimizer
// state and running score statistics. Doubles are stored as their IEEE-754
// bit patterns (little-endian), so a save/load round trip is bit-exact.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "refgame/lm.hpp"
#include "refgame/model.hpp"
#include "refgame/stats.hpp"

namespace refgame {

// Training state stored next to the parameters.
struct TrainingState {
  std::int64_t step = 0;
  std::optional<AdamState> adam;
  std::optional<RunningMoments> score_stats;
  std::optional<double> kl_coefficient;
};

struct Checkpoint {
  PolicyModel model;
  TrainingState state;
};

// Serialized bytes of a checkpoint. The model-only form is what the
// frozen-listener audits compare.
std::string serialize_checkpoint(const PolicyModel& model, const TrainingState& state = {});
Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

// Writes through a temporary file and renames, so a failed save never
// leaves a partial checkpoint behind.
void save_checkpoint(const std::filesystem::path& path, const PolicyModel& model,
                     const TrainingState& state = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Writes `bytes` to `path` via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace refgame
