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

#include "resonance/gap_metrics.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>


#include "resonance/parallel.h"

namespace resonance {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct GapPair {
  double joint = kInf;
  double worst = 0.0;

  void Add(double nearest) {
    joint = std::min(joint, nearest);
    worst = std::max(worst, nearest);
  }
};

struct PairFeatures {
  std::vector<double> cos;
  std::vector<double> sin;
  std::vector<double> angle;  // reduced to [0, 2pi)
};

PairFeatures EvaluatePair(const ThetaSchedule& schedule, int pair,
                          std::int64_t count) {
  PairFeatures f;
  f.cos.resize(count);
  f.sin.resize(count);
  f.angle.resize(count);
  for (std::int64_t m = 0; m < count; ++m) {
    const double a = schedule.Angle(pair, m);
    f.cos[m] = std::cos(a);
    f.sin[m] = std::sin(a);
    double r = std::fmod(a, kTwoPi);
    if (r < 0) r += kTwoPi;
    f.angle[m] = r;
  }
  return f;
}

GapPair ScalarGapExhaustive(const std::vector<double>& x, std::int64_t L) {
  GapPair gap;
  const auto n_end = static_cast<std::int64_t>(x.size());
  for (std::int64_t n = L; n < n_end; ++n) {
    double best = kInf;
    for (std::int64_t m = 0; m < L; ++m) {
      best = std::min(best, std::abs(x[n] - x[m]));
    }
    gap.Add(best);
  }
  return gap;
}

GapPair ScalarGapSorted(const std::vector<double>& x, std::int64_t L) {
  std::vector<double> seen(x.begin(), x.begin() + L);
  std::sort(seen.begin(), seen.end());
  GapPair gap;
  for (size_t n = static_cast<size_t>(L); n < x.size(); ++n) {
    auto it = std::lower_bound(seen.begin(), seen.end(), x[n]);
    double best = kInf;
    if (it != seen.end()) best = std::min(best, std::abs(*it - x[n]));
    if (it != seen.begin()) best = std::min(best, std::abs(*(it - 1) - x[n]));
    gap.Add(best);
  }
  return gap;
}

double SquaredChord(const PairFeatures& f, std::int64_t a, std::int64_t b) {
  const double dc = f.cos[a] - f.cos[b];
  const double ds = f.sin[a] - f.sin[b];
  return dc * dc + ds * ds;
}

double Chord(const PairFeatures& f, std::int64_t a, std::int64_t b) {
  return std::sqrt(SquaredChord(f, a, b));
}

// sqrt is monotone and correctly rounded, so taking it after the minimum
// gives the same bits as minimising chords.
GapPair ChordalGapExhaustive(const PairFeatures& f, std::int64_t L) {
  GapPair gap;
  const auto n_end = static_cast<std::int64_t>(f.cos.size());
  for (std::int64_t n = L; n < n_end; ++n) {
    double best = kInf;
    for (std::int64_t m = 0; m < L; ++m) {
      best = std::min(best, SquaredChord(f, n, m));
    }
    gap.Add(std::sqrt(best));
  }
  return gap;
}

// Nearest in-range position on the circle is one of the two angular
// neighbours of n among the sorted in-range angles (with wrap-around).
GapPair ChordalGapSorted(const PairFeatures& f, std::int64_t L) {
  std::vector<std::int64_t> order(L);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    return f.angle[a] < f.angle[b];
  });
  GapPair gap;
  const auto n_end = static_cast<std::int64_t>(f.cos.size());
  for (std::int64_t n = L; n < n_end; ++n) {
    auto it = std::lower_bound(
        order.begin(), order.end(), f.angle[n],
        [&](std::int64_t m, double value) { return f.angle[m] < value; });
    const std::int64_t hi = it == order.end() ? order.front() : *it;
    const std::int64_t lo = it == order.begin() ? order.back() : *(it - 1);
    gap.Add(std::min(Chord(f, n, hi), Chord(f, n, lo)));
  }
  return gap;
}

}  // namespace

std::string ToString(GapMode mode) {
  return mode == GapMode::kJoint ? "joint" : "worst_ood";
}

GapReport FeatureGap(const ThetaSchedule& schedule, std::int64_t train_length,
                     std::int64_t test_length, GapMode mode,
                     bool force_sorted) {
  if (train_length < 1 || test_length <= train_length) {
    throw std::invalid_argument("feature gap requires 1 <= L < L'");
  }
  const int pairs = schedule.num_pairs();
  GapReport report;
  report.train_length = train_length;
  report.test_length = test_length;
  report.mode = mode;
  report.split = ComputeCriticalSplit(schedule, train_length);
  report.wavelengths.assign(schedule.wavelengths().begin(),
                            schedule.wavelengths().end());
  report.exhaustive =
      !force_sorted && (test_length <= kExhaustiveGapBudget / train_length);
  report.per_dim_joint_gap.resize(2 * pairs);
  report.per_dim_worst_ood_gap.resize(2 * pairs);
  report.per_pair_joint_chordal.resize(pairs);
  report.per_pair_worst_ood_chordal.resize(pairs);

  // Each pair writes only its own slots.
  ParallelFor(pairs, DefaultWorkerCount(), [&](std::int64_t j) {
    const PairFeatures f =
        EvaluatePair(schedule, static_cast<int>(j), test_length);
    const GapPair c = report.exhaustive ? ScalarGapExhaustive(f.cos, train_length)
                                        : ScalarGapSorted(f.cos, train_length);
    const GapPair s = report.exhaustive ? ScalarGapExhaustive(f.sin, train_length)
                                        : ScalarGapSorted(f.sin, train_length);
    const GapPair chord = report.exhaustive
                              ? ChordalGapExhaustive(f, train_length)
                              : ChordalGapSorted(f, train_length);
    report.per_dim_joint_gap[2 * j] = c.joint;
    report.per_dim_joint_gap[2 * j + 1] = s.joint;
    report.per_dim_worst_ood_gap[2 * j] = c.worst;
    report.per_dim_worst_ood_gap[2 * j + 1] = s.worst;
    report.per_pair_joint_chordal[j] = chord.joint;
    report.per_pair_worst_ood_chordal[j] = chord.worst;
  });

  const auto& gaps = mode == GapMode::kJoint ? report.per_dim_joint_gap
                                             : report.per_dim_worst_ood_gap;
  const int boundary = report.split.pre_critical_dims();
  for (int i = 0; i < 2 * pairs; ++i) {
    double& slot = i < boundary ? report.pre_critical_max_gap
                                : report.post_critical_max_gap;
    slot = std::max(slot, gaps[i]);
  }
  return report;
}

nlohmann::json ToJson(const GapReport& r) {
  return {{"train_length", r.train_length},
          {"test_length", r.test_length},
          {"mode", ToString(r.mode)},
          {"critical_index", r.split.critical_index},
          {"pre_critical_pairs", r.split.critical_index},
          {"pre_critical_dims", r.split.pre_critical_dims()},
          {"wavelengths", r.wavelengths},
          {"per_dim_joint_gap", r.per_dim_joint_gap},
          {"per_dim_worst_ood_gap", r.per_dim_worst_ood_gap},
          {"per_pair_joint_chordal", r.per_pair_joint_chordal},
          {"per_pair_worst_ood_chordal", r.per_pair_worst_ood_chordal},
          {"pre_critical_max_gap", r.pre_critical_max_gap},
          {"post_critical_max_gap", r.post_critical_max_gap},
          {"exhaustive", r.exhaustive}};
}

double EmbeddedVectorDistance(const ThetaSchedule& original,
                              const ThetaSchedule& scaled, std::int64_t n,
                              std::int64_t n_hat, DistanceMode mode) {
  if (n < 1 || n_hat < 1) {
    throw std::invalid_argument("position counts must be >= 1");
  }
  if (original.head_dim() != scaled.head_dim()) {
    throw std::invalid_argument("schedules must share head_dim");
  }
  // Basis vectors e_2p and e_2p+1 only excite pair p, and both give the same
  // distance: the chord between the two rotation angles of that pair.
  double result = 0.0;
  for (int p = 0; p < original.num_pairs(); ++p) {
    const PairFeatures a = EvaluatePair(original, p, n);
    const PairFeatures b = EvaluatePair(scaled, p, n_hat);
    std::vector<std::int64_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::int64_t x, std::int64_t y) {
      return a.angle[x] < a.angle[y];
    });
    double joint = kInf;
    double worst = 0.0;
    for (std::int64_t j = 0; j < n_hat; ++j) {
      auto it = std::lower_bound(
          order.begin(), order.end(), b.angle[j],
          [&](std::int64_t k, double value) { return a.angle[k] < value; });
      const std::int64_t hi = it == order.end() ? order.front() : *it;
      const std::int64_t lo = it == order.begin() ? order.back() : *(it - 1);
      double best = kInf;
      for (std::int64_t k : {hi, lo}) {
        const double dc = a.cos[k] - b.cos[j];
        const double ds = a.sin[k] - b.sin[j];
        best = std::min(best, std::sqrt(dc * dc + ds * ds));
      }
      joint = std::min(joint, best);
      worst = std::max(worst, best);
    }
    result = std::max(result, mode == DistanceMode::kJoint ? joint : worst);
  }
  return result;
}

BigInt ResonanceLcm(const ThetaSchedule& schedule, int critical_index) {
  if (!schedule.has_integer_wavelengths()) {
    throw std::logic_error("resonance has not been applied to this schedule");
  }
  if (critical_index < 0 || critical_index > schedule.num_pairs()) {
    throw std::invalid_argument("critical_index out of range");
  }
  BigInt lcm = 1;
  for (int j = 0; j < critical_index; ++j) {
    lcm = boost::multiprecision::lcm(lcm, BigInt((*schedule.integer_wavelengths())[j]));
  }
  return lcm;
}

}  // namespace resonance
