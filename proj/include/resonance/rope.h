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

#ifndef RESONANCE_ROPE_H_
#define RESONANCE_ROPE_H_

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace resonance {

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

// One applied schedule transform, e.g. {"yarn", {s: 4, L: 64, alpha: 1, beta: 32}}.
struct ScalingStep {
  std::string method;
  std::map<std::string, double> params;

  bool operator==(const ScalingStep&) const = default;
};

// Per-pair angular frequencies of a rotary embedding together with their
// wavelengths. Pair j rotates coordinates (2j, 2j+1) by m * theta_j at
// position m. Immutable once built.
class ThetaSchedule {
 public:
  // theta_j = base^(-2j/d). Throws std::invalid_argument for odd or
  // non-positive head_dim, or base <= 1.
  static ThetaSchedule Build(int head_dim, double rotary_base);

  // Schedule from explicit wavelengths (theta_j = 2pi / lambda_j). Wavelengths
  // must be positive and strictly increasing.
  static ThetaSchedule FromWavelengths(int head_dim, double rotary_base,
                                       std::vector<double> wavelengths,
                                       std::vector<ScalingStep> trace = {});

  // Schedule whose wavelengths are exact integers. Angles are then reduced
  // modulo the period before evaluating trig functions.
  static ThetaSchedule FromIntegerWavelengths(
      int head_dim, double rotary_base, std::vector<std::int64_t> wavelengths,
      std::vector<ScalingStep> trace = {});

  // Keeps (theta, lambda) pairs verbatim; used by transforms that leave some
  // pairs bitwise untouched.
  static ThetaSchedule FromPairs(int head_dim, double rotary_base,
                                 std::vector<double> thetas,
                                 std::vector<double> wavelengths,
                                 std::vector<ScalingStep> trace = {});

  int head_dim() const { return head_dim_; }
  int num_pairs() const { return head_dim_ / 2; }
  double rotary_base() const { return rotary_base_; }
  std::span<const double> thetas() const { return thetas_; }
  std::span<const double> wavelengths() const { return wavelengths_; }
  const std::optional<std::vector<std::int64_t>>& integer_wavelengths() const {
    return integer_wavelengths_;
  }
  bool has_integer_wavelengths() const {
    return integer_wavelengths_.has_value();
  }
  const std::vector<ScalingStep>& scaling_trace() const {
    return scaling_trace_;
  }

  // Rotation angle of pair j at position m, in radians. With integer
  // wavelengths this is 2pi * (m mod lambda_j) / lambda_j, so the value is
  // exactly periodic in m.
  double Angle(int pair, std::int64_t position) const;

  bool operator==(const ThetaSchedule&) const = default;

 private:
  ThetaSchedule() = default;
  void Validate() const;

  int head_dim_ = 0;
  double rotary_base_ = 0.0;
  std::vector<double> thetas_;
  std::vector<double> wavelengths_;
  std::optional<std::vector<std::int64_t>> integer_wavelengths_;
  std::vector<ScalingStep> scaling_trace_;
};

// Split of the feature pairs at the first pair whose wavelength reaches the
// training length. Pairs below critical_index see every rotary angle during
// training; pairs at or above it do not.
struct CriticalSplit {
  std::int64_t train_length = 0;
  int critical_index = 0;
  std::vector<int> pre_critical_pairs;
  std::vector<int> post_critical_pairs;

  int pre_critical_dims() const { return 2 * critical_index; }
};

CriticalSplit ComputeCriticalSplit(const ThetaSchedule& schedule,
                                   std::int64_t train_length);

// Applies the block-diagonal rotation for `position` to `vector`.
std::vector<double> Rotate(std::span<const double> vector,
                           std::int64_t position,
                           const ThetaSchedule& schedule);

// In-place variant over any floating type; cos/sin come from a 64-bit angle.
template <typename T>
void RotateInPlace(std::span<T> vector, std::int64_t position,
                   const ThetaSchedule& schedule);

nlohmann::json ToJson(const ThetaSchedule& schedule);
ThetaSchedule ScheduleFromJson(const nlohmann::json& json);

}  // namespace resonance

#endif  // RESONANCE_ROPE_H_
