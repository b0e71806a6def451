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

#ifndef RESONANCE_SCALING_H_
#define RESONANCE_SCALING_H_

#include <cstdint>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <tuple>

#include "json.hpp"
#include "resonance/rope.h"

namespace resonance {

enum class ScalingMethod { kNone, kNtkAware, kDynamicNtk, kYarn };

// Where the resonance rounding sits relative to the other transform.
enum class ResonanceOrder { kAfterScaling, kBeforeScaling };

std::string ToString(ScalingMethod method);
ScalingMethod ParseScalingMethod(const std::string& name);

struct ScalingSpec {
  ScalingMethod method = ScalingMethod::kNone;
  double scale_factor = 1.0;
  std::int64_t train_length = 1;
  double alpha = 1.0;
  double beta = 32.0;
  bool resonance = false;
  // Multiplies attention logits; 1 when unset.
  std::optional<double> attention_scale;
  ResonanceOrder resonance_order = ResonanceOrder::kAfterScaling;

  void Validate() const;
  double logit_multiplier() const { return attention_scale.value_or(1.0); }

  bool operator==(const ScalingSpec&) const = default;
};

nlohmann::json ToJson(const ScalingSpec& spec);
ScalingSpec ScalingSpecFromJson(const nlohmann::json& json);

// Rounds every wavelength to the nearest integer (half away from zero,
// minimum 1) and recomputes theta = 2pi / lambda.
ThetaSchedule ApplyResonance(const ThetaSchedule& schedule);

// Base-scaling ("NTK-aware"): the unscaled schedule with base s * b.
ThetaSchedule ApplyNtkAware(int head_dim, double rotary_base, double scale);

// max(current / train, 1).
double DynamicScale(std::int64_t current_length, std::int64_t train_length);

// Per-wavelength interpolation:
//   gamma = 1                              if lambda < L / beta
//   gamma = 0                              if lambda > L / alpha
//   gamma = (L / lambda - alpha) / (beta - alpha)   otherwise
//   lambda_hat = (1 - gamma) * s * lambda + gamma * lambda
// Pairs with gamma == 1 are copied bitwise. Integer wavelengths are dropped.
ThetaSchedule ApplyYarn(const ThetaSchedule& schedule, double scale,
                        std::int64_t train_length, double alpha, double beta);

// The interpolation weight used by ApplyYarn for a single wavelength.
double YarnRamp(double wavelength, std::int64_t train_length, double alpha,
                double beta);

// Builds the schedule a model should use. `current_length` only matters for
// dynamic NTK, where it sets the scale factor.
ThetaSchedule Compose(const ScalingSpec& spec, int head_dim, double rotary_base,
                      std::optional<std::int64_t> current_length = {});

// Schedules keyed by (head_dim, base, scale). Readers share a lock; a racing
// insert of the same key keeps the last write.
class ScheduleCache {
 public:
  ThetaSchedule GetNtk(int head_dim, double rotary_base, double scale);
  size_t size() const;

 private:
  mutable std::shared_mutex mu_;
  std::map<std::tuple<int, double, double>, ThetaSchedule> entries_;
};

}  // namespace resonance

#endif  // RESONANCE_SCALING_H_
