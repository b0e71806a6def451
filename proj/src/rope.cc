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

#include "resonance/rope.h"

#include <cmath>
#include <stdexcept>
#include <string>

namespace resonance {
namespace {

void CheckHeadDim(int head_dim) {
  if (head_dim < 2 || head_dim % 2 != 0) {
    throw std::invalid_argument("head_dim must be a positive even integer, got " +
                                std::to_string(head_dim));
  }
}

double RoundTo6(double x) { return std::round(x * 1e6) / 1e6; }

}  // namespace

ThetaSchedule ThetaSchedule::Build(int head_dim, double rotary_base) {
  CheckHeadDim(head_dim);
  if (!(rotary_base > 1.0) || !std::isfinite(rotary_base)) {
    throw std::invalid_argument("rotary_base must be finite and > 1");
  }
  ThetaSchedule s;
  s.head_dim_ = head_dim;
  s.rotary_base_ = rotary_base;
  const int pairs = head_dim / 2;
  s.thetas_.resize(pairs);
  s.wavelengths_.resize(pairs);
  for (int j = 0; j < pairs; ++j) {
    s.thetas_[j] = std::pow(rotary_base, -2.0 * j / head_dim);
    s.wavelengths_[j] = kTwoPi / s.thetas_[j];
  }
  s.Validate();
  return s;
}

ThetaSchedule ThetaSchedule::FromWavelengths(int head_dim, double rotary_base,
                                             std::vector<double> wavelengths,
                                             std::vector<ScalingStep> trace) {
  CheckHeadDim(head_dim);
  ThetaSchedule s;
  s.head_dim_ = head_dim;
  s.rotary_base_ = rotary_base;
  s.thetas_.resize(wavelengths.size());
  for (size_t j = 0; j < wavelengths.size(); ++j) {
    if (!(wavelengths[j] > 0.0)) {
      throw std::invalid_argument("wavelengths must be positive");
    }
    s.thetas_[j] = kTwoPi / wavelengths[j];
  }
  s.wavelengths_ = std::move(wavelengths);
  s.scaling_trace_ = std::move(trace);
  s.Validate();
  return s;
}

ThetaSchedule ThetaSchedule::FromIntegerWavelengths(
    int head_dim, double rotary_base, std::vector<std::int64_t> wavelengths,
    std::vector<ScalingStep> trace) {
  CheckHeadDim(head_dim);
  ThetaSchedule s;
  s.head_dim_ = head_dim;
  s.rotary_base_ = rotary_base;
  s.thetas_.resize(wavelengths.size());
  s.wavelengths_.resize(wavelengths.size());
  for (size_t j = 0; j < wavelengths.size(); ++j) {
    if (wavelengths[j] < 1) {
      throw std::invalid_argument("integer wavelengths must be >= 1");
    }
    s.wavelengths_[j] = static_cast<double>(wavelengths[j]);
    s.thetas_[j] = kTwoPi / s.wavelengths_[j];
  }
  s.integer_wavelengths_ = std::move(wavelengths);
  s.scaling_trace_ = std::move(trace);
  s.Validate();
  return s;
}

ThetaSchedule ThetaSchedule::FromPairs(int head_dim, double rotary_base,
                                       std::vector<double> thetas,
                                       std::vector<double> wavelengths,
                                       std::vector<ScalingStep> trace) {
  CheckHeadDim(head_dim);
  ThetaSchedule s;
  s.head_dim_ = head_dim;
  s.rotary_base_ = rotary_base;
  s.thetas_ = std::move(thetas);
  s.wavelengths_ = std::move(wavelengths);
  s.scaling_trace_ = std::move(trace);
  s.Validate();
  return s;
}

void ThetaSchedule::Validate() const {
  const size_t pairs = static_cast<size_t>(head_dim_ / 2);
  if (thetas_.size() != pairs || wavelengths_.size() != pairs) {
    throw std::invalid_argument("schedule must have head_dim/2 pairs");
  }
  // Rounding to integers may merge neighbouring periods, so integer schedules
  // are only required to be monotone.
  const bool strict = !integer_wavelengths_.has_value();
  for (size_t j = 0; j < pairs; ++j) {
    if (!(thetas_[j] > 0.0) || !std::isfinite(wavelengths_[j])) {
      throw std::invalid_argument("thetas must be positive and finite");
    }
    if (std::abs(wavelengths_[j] * thetas_[j] - kTwoPi) > 1e-12 * kTwoPi) {
      throw std::invalid_argument("wavelength and theta disagree at pair " +
                                  std::to_string(j));
    }
    if (j > 0) {
      const bool ok = strict ? thetas_[j] < thetas_[j - 1]
                             : thetas_[j] <= thetas_[j - 1];
      if (!ok) {
        throw std::invalid_argument("thetas must decrease with pair index");
      }
    }
  }
}

double ThetaSchedule::Angle(int pair, std::int64_t position) const {
  if (integer_wavelengths_) {
    const std::int64_t period = (*integer_wavelengths_)[pair];
    std::int64_t r = position % period;
    if (r < 0) r += period;
    return kTwoPi * static_cast<double>(r) / static_cast<double>(period);
  }
  return static_cast<double>(position) * thetas_[pair];
}

CriticalSplit ComputeCriticalSplit(const ThetaSchedule& schedule,
                                   std::int64_t train_length) {
  if (train_length < 1) {
    throw std::invalid_argument("train_length must be >= 1");
  }
  CriticalSplit split;
  split.train_length = train_length;
  const auto wavelengths = schedule.wavelengths();
  const double limit = static_cast<double>(train_length);
  int c = schedule.num_pairs();
  for (int j = 0; j < schedule.num_pairs(); ++j) {
    if (wavelengths[j] >= limit) {
      c = j;
      break;
    }
  }
  split.critical_index = c;
  for (int j = 0; j < schedule.num_pairs(); ++j) {
    (j < c ? split.pre_critical_pairs : split.post_critical_pairs).push_back(j);
  }
  return split;
}

template <typename T>
void RotateInPlace(std::span<T> vector, std::int64_t position,
                   const ThetaSchedule& schedule) {
  if (vector.size() != static_cast<size_t>(schedule.head_dim())) {
    throw std::invalid_argument("vector length " +
                                std::to_string(vector.size()) +
                                " does not match head_dim " +
                                std::to_string(schedule.head_dim()));
  }
  for (int j = 0; j < schedule.num_pairs(); ++j) {
    const double angle = schedule.Angle(j, position);
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double x0 = static_cast<double>(vector[2 * j]);
    const double x1 = static_cast<double>(vector[2 * j + 1]);
    vector[2 * j] = static_cast<T>(x0 * c - x1 * s);
    vector[2 * j + 1] = static_cast<T>(x0 * s + x1 * c);
  }
}

template void RotateInPlace<float>(std::span<float>, std::int64_t,
                                   const ThetaSchedule&);
template void RotateInPlace<double>(std::span<double>, std::int64_t,
                                    const ThetaSchedule&);

std::vector<double> Rotate(std::span<const double> vector,
                           std::int64_t position,
                           const ThetaSchedule& schedule) {
  std::vector<double> out(vector.begin(), vector.end());
  RotateInPlace<double>(out, position, schedule);
  return out;
}

nlohmann::json ToJson(const ThetaSchedule& schedule) {
  nlohmann::json j;
  j["head_dim"] = schedule.head_dim();
  j["rotary_base"] = schedule.rotary_base();
  j["thetas"] = std::vector<double>(schedule.thetas().begin(),
                                    schedule.thetas().end());
  nlohmann::json wavelengths = nlohmann::json::array();
  for (double w : schedule.wavelengths()) wavelengths.push_back(RoundTo6(w));
  j["wavelengths"] = std::move(wavelengths);
  if (schedule.integer_wavelengths()) {
    j["integer_wavelengths"] = *schedule.integer_wavelengths();
  }
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& step : schedule.scaling_trace()) {
    trace.push_back({{"method", step.method}, {"params", step.params}});
  }
  j["scaling_trace"] = std::move(trace);
  return j;
}

ThetaSchedule ScheduleFromJson(const nlohmann::json& j) {
  const int d = j.at("head_dim").get<int>();
  const double base = j.at("rotary_base").get<double>();
  std::vector<ScalingStep> trace;
  for (const auto& step : j.value("scaling_trace", nlohmann::json::array())) {
    trace.push_back({step.at("method").get<std::string>(),
                     step.value("params", std::map<std::string, double>{})});
  }
  if (j.contains("integer_wavelengths")) {
    return ThetaSchedule::FromIntegerWavelengths(
        d, base, j.at("integer_wavelengths").get<std::vector<std::int64_t>>(),
        std::move(trace));
  }
  // Wavelengths are stored rounded; thetas carry full precision.
  auto thetas = j.at("thetas").get<std::vector<double>>();
  std::vector<double> wavelengths(thetas.size());
  for (size_t i = 0; i < thetas.size(); ++i) {
    wavelengths[i] = kTwoPi / thetas[i];
  }
  return ThetaSchedule::FromPairs(d, base, std::move(thetas),
                                  std::move(wavelengths), std::move(trace));
}

}  // namespace resonance
