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

#include "resonance/scaling.h"

#include <cmath>
#include <mutex>
#include <stdexcept>

namespace resonance {

std::string ToString(ScalingMethod method) {
  switch (method) {
    case ScalingMethod::kNone:
      return "none";
    case ScalingMethod::kNtkAware:
      return "ntk_aware";
    case ScalingMethod::kDynamicNtk:
      return "dynamic_ntk";
    case ScalingMethod::kYarn:
      return "yarn";
  }
  return "none";
}

ScalingMethod ParseScalingMethod(const std::string& name) {
  if (name == "none" || name == "rope") return ScalingMethod::kNone;
  if (name == "ntk_aware" || name == "ntk") return ScalingMethod::kNtkAware;
  if (name == "dynamic_ntk") return ScalingMethod::kDynamicNtk;
  if (name == "yarn") return ScalingMethod::kYarn;
  throw std::invalid_argument("unknown scaling method: " + name);
}

void ScalingSpec::Validate() const {
  if (!(scale_factor >= 1.0)) {
    throw std::invalid_argument("scale_factor must be >= 1");
  }
  if (train_length < 1) {
    throw std::invalid_argument("train_length must be >= 1");
  }
  if (method == ScalingMethod::kYarn && !(beta > alpha && alpha > 0.0)) {
    throw std::invalid_argument("yarn requires beta > alpha > 0");
  }
  if (attention_scale && !(*attention_scale > 0.0)) {
    throw std::invalid_argument("attention_scale must be positive");
  }
}

nlohmann::json ToJson(const ScalingSpec& spec) {
  nlohmann::json j = {{"method", ToString(spec.method)},
                      {"scale_factor", spec.scale_factor},
                      {"train_length", spec.train_length},
                      {"alpha", spec.alpha},
                      {"beta", spec.beta},
                      {"resonance", spec.resonance},
                      {"attention_scale", nullptr}};
  if (spec.attention_scale) j["attention_scale"] = *spec.attention_scale;
  if (spec.resonance_order == ResonanceOrder::kBeforeScaling) {
    j["resonance_order"] = "before";
  }
  return j;
}

ScalingSpec ScalingSpecFromJson(const nlohmann::json& j) {
  ScalingSpec spec;
  spec.method = ParseScalingMethod(j.value("method", std::string("none")));
  spec.scale_factor = j.value("scale_factor", 1.0);
  spec.train_length = j.value("train_length", std::int64_t{1});
  spec.alpha = j.value("alpha", 1.0);
  spec.beta = j.value("beta", 32.0);
  spec.resonance = j.value("resonance", false);
  if (j.contains("attention_scale") && !j["attention_scale"].is_null()) {
    spec.attention_scale = j["attention_scale"].get<double>();
  }
  const std::string order = j.value("resonance_order", std::string("after"));
  if (order == "before") {
    spec.resonance_order = ResonanceOrder::kBeforeScaling;
  } else if (order != "after") {
    throw std::invalid_argument("resonance_order must be before or after");
  }
  spec.Validate();
  return spec;
}

ThetaSchedule ApplyResonance(const ThetaSchedule& schedule) {
  std::vector<std::int64_t> periods(schedule.num_pairs());
  for (int j = 0; j < schedule.num_pairs(); ++j) {
    // std::llround rounds halves away from zero.
    periods[j] = std::max<std::int64_t>(1, std::llround(schedule.wavelengths()[j]));
  }
  auto trace = schedule.scaling_trace();
  trace.push_back({"resonance", {}});
  return ThetaSchedule::FromIntegerWavelengths(
      schedule.head_dim(), schedule.rotary_base(), std::move(periods),
      std::move(trace));
}

ThetaSchedule ApplyNtkAware(int head_dim, double rotary_base, double scale) {
  if (!(scale >= 1.0)) {
    throw std::invalid_argument("NTK-aware scale must be >= 1");
  }
  const ThetaSchedule scaled = ThetaSchedule::Build(head_dim, scale * rotary_base);
  std::vector<double> thetas(scaled.thetas().begin(), scaled.thetas().end());
  std::vector<double> wavelengths(scaled.wavelengths().begin(),
                                  scaled.wavelengths().end());
  std::vector<ScalingStep> trace;
  if (scale != 1.0) trace.push_back({"ntk_aware", {{"s", scale}}});
  return ThetaSchedule::FromPairs(head_dim, scale * rotary_base,
                                  std::move(thetas), std::move(wavelengths),
                                  std::move(trace));
}

double DynamicScale(std::int64_t current_length, std::int64_t train_length) {
  if (current_length < 1 || train_length < 1) {
    throw std::invalid_argument("lengths must be >= 1");
  }
  return std::max(static_cast<double>(current_length) /
                      static_cast<double>(train_length),
                  1.0);
}

double YarnRamp(double wavelength, std::int64_t train_length, double alpha,
                double beta) {
  const double L = static_cast<double>(train_length);
  if (wavelength < L / beta) return 1.0;
  if (wavelength > L / alpha) return 0.0;
  return (L / wavelength - alpha) / (beta - alpha);
}

ThetaSchedule ApplyYarn(const ThetaSchedule& schedule, double scale,
                        std::int64_t train_length, double alpha, double beta) {
  if (!(beta > alpha && alpha > 0.0)) {
    throw std::invalid_argument("yarn requires beta > alpha > 0");
  }
  if (!(scale >= 1.0)) {
    throw std::invalid_argument("yarn scale must be >= 1");
  }
  if (train_length < 1) {
    throw std::invalid_argument("train_length must be >= 1");
  }
  const int pairs = schedule.num_pairs();
  std::vector<double> thetas(pairs);
  std::vector<double> wavelengths(pairs);
  for (int j = 0; j < pairs; ++j) {
    const double lambda = schedule.wavelengths()[j];
    const double gamma = YarnRamp(lambda, train_length, alpha, beta);
    if (gamma == 1.0) {
      thetas[j] = schedule.thetas()[j];
      wavelengths[j] = lambda;
      continue;
    }
    const double scaled = (1.0 - gamma) * scale * lambda + gamma * lambda;
    wavelengths[j] = scaled;
    thetas[j] = kTwoPi / scaled;
  }
  auto trace = schedule.scaling_trace();
  trace.push_back({"yarn",
                   {{"s", scale},
                    {"L", static_cast<double>(train_length)},
                    {"alpha", alpha},
                    {"beta", beta}}});
  return ThetaSchedule::FromPairs(schedule.head_dim(), schedule.rotary_base(),
                                  std::move(thetas), std::move(wavelengths),
                                  std::move(trace));
}

ThetaSchedule Compose(const ScalingSpec& spec, int head_dim, double rotary_base,
                      std::optional<std::int64_t> current_length) {
  spec.Validate();
  const bool before = spec.resonance &&
                      spec.resonance_order == ResonanceOrder::kBeforeScaling;
  ThetaSchedule schedule = ThetaSchedule::Build(head_dim, rotary_base);
  switch (spec.method) {
    case ScalingMethod::kNone:
      break;
    case ScalingMethod::kNtkAware:
      schedule = ApplyNtkAware(head_dim, rotary_base, spec.scale_factor);
      break;
    case ScalingMethod::kDynamicNtk: {
      const double s =
          DynamicScale(current_length.value_or(spec.train_length),
                       spec.train_length);
      schedule = ApplyNtkAware(head_dim, rotary_base, s);
      break;
    }
    case ScalingMethod::kYarn:
      if (before) schedule = ApplyResonance(schedule);
      schedule = ApplyYarn(schedule, spec.scale_factor, spec.train_length,
                           spec.alpha, spec.beta);
      break;
  }
  if (spec.resonance && !(before && spec.method == ScalingMethod::kYarn)) {
    schedule = ApplyResonance(schedule);
  }
  return schedule;
}

ThetaSchedule ScheduleCache::GetNtk(int head_dim, double rotary_base,
                                    double scale) {
  const auto key = std::make_tuple(head_dim, rotary_base, scale);
  {
    std::shared_lock lock(mu_);
    if (auto it = entries_.find(key); it != entries_.end()) return it->second;
  }
  ThetaSchedule schedule = ApplyNtkAware(head_dim, rotary_base, scale);
  std::unique_lock lock(mu_);
  entries_.insert_or_assign(key, schedule);
  return schedule;
}

size_t ScheduleCache::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

}  // namespace resonance
