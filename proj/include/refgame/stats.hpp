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

#include <cstdint>
#include <span>
#include <vector>

#include "refgame/common.hpp"

namespace refgame {

// Welford running mean and population variance.
class RunningMoments {
 public:
  void update(double x);
  void update(std::span<const double> xs);

  std::uint64_t count() const { return count_; }
  double mean() const { return mean_; }
  double variance() const;
  double stddev() const;

  // Raw state for checkpoints.
  double m2() const { return m2_; }
  static RunningMoments from_state(std::uint64_t count, double mean, double m2);

  friend bool operator==(const RunningMoments&, const RunningMoments&) = default;

 private:
  std::uint64_t count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

double mean(std::span<const double> xs);

struct ConfidenceInterval {
  double mean = 0.0;
  double low = 0.0;
  double high = 0.0;
};

// Percentile bootstrap interval for the mean.
ConfidenceInterval bootstrap_ci(std::span<const double> xs, std::uint64_t seed,
                                int resamples = 2000, double confidence = 0.95);

}  // namespace refgame
