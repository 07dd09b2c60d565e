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

#include "refgame/stats.hpp"

#include <algorithm>
#include <cmath>

namespace refgame {

void RunningMoments::update(double x) {
  ++count_;
  const double delta = x - mean_;
  mean_ += delta / static_cast<double>(count_);
  m2_ += delta * (x - mean_);
}

void RunningMoments::update(std::span<const double> xs) {
  for (double x : xs) update(x);
}

double RunningMoments::variance() const {
  return count_ == 0 ? 0.0 : m2_ / static_cast<double>(count_);
}

double RunningMoments::stddev() const { return std::sqrt(variance()); }

RunningMoments RunningMoments::from_state(std::uint64_t count, double mean, double m2) {
  RunningMoments r;
  r.count_ = count;
  r.mean_ = mean;
  r.m2_ = m2;
  return r;
}

double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

ConfidenceInterval bootstrap_ci(std::span<const double> xs, std::uint64_t seed, int resamples,
                                double confidence) {
  ConfidenceInterval ci;
  if (xs.empty()) return ci;
  ci.mean = mean(xs);
  if (xs.size() == 1 || resamples < 1) {
    ci.low = ci.high = ci.mean;
    return ci;
  }
  Rng rng(seed);
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) s += xs[rng.below(xs.size())];
    m = s / static_cast<double>(xs.size());
  }
  std::sort(means.begin(), means.end());
  const double alpha = (1.0 - confidence) / 2.0;
  auto at = [&](double q) {
    const double pos = q * static_cast<double>(means.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, means.size() - 1);
    return means[lo] + (pos - static_cast<double>(lo)) * (means[hi] - means[lo]);
  };
  ci.low = at(alpha);
  ci.high = at(1.0 - alpha);
  return ci;
}

}  // namespace refgame
