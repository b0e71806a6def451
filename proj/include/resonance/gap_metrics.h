// Copyright 2026 The Resonance Lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef RESONANCE_GAP_METRICS_H_
#define RESONANCE_GAP_METRICS_H_

#include <cstdint>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "json.hpp"
#include "resonance/rope.h"

namespace resonance {

// kJoint minimises over both the in-range position m and the out-of-range
// position n. kWorstOod takes, for every out-of-range n, the distance to the
// nearest in-range m, and reports the largest such distance.
enum class GapMode { kJoint, kWorstOod };

std::string ToString(GapMode mode);

// Feature gaps between positions [0, L) and [L, L'). Features are evaluated
// on canonical inputs (identity projection, one basis vector per pair), so
// scalar dimension 2j carries cos(m theta_j) and 2j + 1 carries
// sin(m theta_j).
struct GapReport {
  std::int64_t train_length = 0;
  std::int64_t test_length = 0;
  GapMode mode = GapMode::kWorstOod;
  CriticalSplit split;
  std::vector<double> wavelengths;
  std::vector<double> per_dim_joint_gap;
  std::vector<double> per_dim_worst_ood_gap;
  // sqrt(dcos^2 + dsin^2) for the whole pair.
  std::vector<double> per_pair_joint_chordal;
  std::vector<double> per_pair_worst_ood_chordal;
  // Maxima over the scalar dims of each region, in `mode`.
  double pre_critical_max_gap = 0.0;
  double post_critical_max_gap = 0.0;
  // True when every (m, n) pair was enumerated.
  bool exhaustive = true;
};

// Exhaustive enumeration is used when L * L' <= this bound.
inline constexpr std::int64_t kExhaustiveGapBudget = 100'000'000;

// Throws std::invalid_argument unless 1 <= L < L'. `force_sorted` bypasses
// enumeration (tests compare both paths).
GapReport FeatureGap(const ThetaSchedule& schedule, std::int64_t train_length,
                     std::int64_t test_length, GapMode mode,
                     bool force_sorted = false);

nlohmann::json ToJson(const GapReport& report);

enum class DistanceMode {
  // max over inputs of min over (k, j) jointly.
  kJoint,
  // max over inputs and scaled positions j of min over original positions k.
  kPerScaledPosition,
};

// Largest (over canonical inputs) minimum distance between features of
// `original` at k in [0, N) and `scaled` at j in [0, N_hat).
double EmbeddedVectorDistance(const ThetaSchedule& original,
                              const ThetaSchedule& scaled, std::int64_t n,
                              std::int64_t n_hat,
                              DistanceMode mode = DistanceMode::kJoint);

using BigInt = boost::multiprecision::cpp_int;

// Exact LCM of the integer wavelengths of pairs [0, critical_index). Throws
// std::logic_error when the schedule has no integer wavelengths.
BigInt ResonanceLcm(const ThetaSchedule& schedule, int critical_index);

}  // namespace resonance

#endif  // RESONANCE_GAP_METRICS_H_
