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
#include <map>
#include <numbers>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "resonance/rng.h"
#include "resonance/scaling.h"

namespace resonance {
namespace {

// Brute-force oracle over every (m, n), computing features from Rotate() of
// canonical basis vectors rather than from the library's angle tables.
struct OracleGaps {
  std::vector<double> joint, worst;  // per scalar dim
  std::vector<double> joint_chord, worst_chord;  // per pair
};

OracleGaps BruteForce(const ThetaSchedule& s, std::int64_t L, std::int64_t Lp) {
  const int d = s.head_dim();
  OracleGaps g;
  g.joint.assign(d, 1e300);
  g.worst.assign(d, 0.0);
  g.joint_chord.assign(d / 2, 1e300);
  g.worst_chord.assign(d / 2, 0.0);
  for (int p = 0; p < d / 2; ++p) {
    std::vector<double> e(d, 0.0);
    e[2 * p] = 1.0;
    std::vector<std::pair<double, double>> feat(Lp);
    for (std::int64_t m = 0; m < Lp; ++m) {
      const auto r = Rotate(e, m, s);
      feat[m] = {r[2 * p], r[2 * p + 1]};
    }
    double w0 = 0, w1 = 0, wc = 0;
    for (std::int64_t n = L; n < Lp; ++n) {
      double b0 = 1e300, b1 = 1e300, bc = 1e300;
      for (std::int64_t m = 0; m < L; ++m) {
        const double d0 = std::abs(feat[m].first - feat[n].first);
        const double d1 = std::abs(feat[m].second - feat[n].second);
        b0 = std::min(b0, d0);
        b1 = std::min(b1, d1);
        bc = std::min(bc, std::hypot(d0, d1));
      }
      w0 = std::max(w0, b0);
      w1 = std::max(w1, b1);
      wc = std::max(wc, bc);
      g.joint[2 * p] = std::min(g.joint[2 * p], b0);
      g.joint[2 * p + 1] = std::min(g.joint[2 * p + 1], b1);
      g.joint_chord[p] = std::min(g.joint_chord[p], bc);
    }
    g.worst[2 * p] = w0;
    g.worst[2 * p + 1] = w1;
    g.worst_chord[p] = wc;
  }
  return g;
}

BigInt OracleLcm(const std::vector<std::int64_t>& values) {
  std::map<std::int64_t, int> exponent;
  for (std::int64_t v : values) {
    for (std::int64_t p = 2; p * p <= v; ++p) {
      int e = 0;
      while (v % p == 0) {
        v /= p;
        ++e;
      }
      exponent[p] = std::max(exponent[p], e);
    }
    if (v > 1) exponent[v] = std::max(exponent[v], 1);
  }
  BigInt out = 1;
  for (const auto& [p, e] : exponent) {
    for (int i = 0; i < e; ++i) out *= p;
  }
  return out;
}

TEST(FeatureGap, ResonancePeriodSixHasNoOodGap) {
  const auto s = ThetaSchedule::FromIntegerWavelengths(2, 10000, {6});
  EXPECT_NEAR(s.thetas()[0], 2 * std::numbers::pi / 6, 1e-15);
  const auto r = FeatureGap(s, 6, 12, GapMode::kWorstOod);
  EXPECT_EQ(r.per_dim_worst_ood_gap[0], 0.0);
  EXPECT_EQ(r.per_dim_worst_ood_gap[1], 0.0);
  EXPECT_EQ(r.per_pair_worst_ood_chordal[0], 0.0);
}

TEST(FeatureGap, VanillaUnitFrequencyHasOodGap) {
  const auto s = ThetaSchedule::Build(2, 10000);
  ASSERT_EQ(s.thetas()[0], 1.0);
  const auto r = FeatureGap(s, 6, 12, GapMode::kWorstOod);
  EXPECT_GT(r.per_pair_worst_ood_chordal[0], 0.0);
  EXPECT_NEAR(r.per_pair_worst_ood_chordal[0], 0.2822400161197345, 1e-12);
  const auto oracle = BruteForce(s, 6, 12);
  EXPECT_NEAR(r.per_pair_worst_ood_chordal[0], oracle.worst_chord[0], 1e-15);
}

TEST(FeatureGap, TheoremOneAtSmallScale) {
  const auto resonance = ApplyResonance(ThetaSchedule::Build(64, 10000));
  const auto r = FeatureGap(resonance, 64, 256, GapMode::kWorstOod);
  ASSERT_EQ(r.split.critical_index, 9);
  for (int i = 0; i < r.split.pre_critical_dims(); ++i) {
    EXPECT_EQ(r.per_dim_worst_ood_gap[i], 0.0) << i;
  }
  EXPECT_EQ(r.pre_critical_max_gap, 0.0);

  const auto vanilla = FeatureGap(ThetaSchedule::Build(64, 10000), 64, 256,
                                  GapMode::kWorstOod);
  EXPECT_GT(vanilla.pre_critical_max_gap, 0.0);
}

TEST(FeatureGap, TheoremOneHoldsForResonanceSchedules) {
  for (double base : {500.0, 10000.0, 80000.0}) {
    for (int d : {16, 64}) {
      const auto s = ApplyResonance(ThetaSchedule::Build(d, base));
      for (std::int64_t L : {16, 50, 64, 200}) {
        const int c = ComputeCriticalSplit(s, L).critical_index;
        std::int64_t max_pre = 0;
        for (int j = 0; j < c; ++j) max_pre = std::max(max_pre, (*s.integer_wavelengths())[j]);
        if (L < max_pre) continue;
        for (std::int64_t Lp : {L + 1, 2 * L, 5 * L + 3}) {
          const auto r = FeatureGap(s, L, Lp, GapMode::kWorstOod);
          for (int i = 0; i < 2 * c; ++i) ASSERT_EQ(r.per_dim_worst_ood_gap[i], 0.0);
        }
      }
    }
  }
}

TEST(FeatureGap, MatchesBruteForceOracle) {
  for (const auto& s : {ThetaSchedule::Build(8, 10000),
                        ApplyResonance(ThetaSchedule::Build(8, 100)),
                        ApplyYarn(ThetaSchedule::Build(8, 10000), 4, 20, 1, 32)}) {
    const auto r = FeatureGap(s, 20, 70, GapMode::kJoint);
    const auto o = BruteForce(s, 20, 70);
    for (int i = 0; i < 8; ++i) {
      EXPECT_NEAR(r.per_dim_joint_gap[i], o.joint[i], 1e-12);
      EXPECT_NEAR(r.per_dim_worst_ood_gap[i], o.worst[i], 1e-12);
    }
    for (int p = 0; p < 4; ++p) {
      EXPECT_NEAR(r.per_pair_joint_chordal[p], o.joint_chord[p], 1e-12);
      EXPECT_NEAR(r.per_pair_worst_ood_chordal[p], o.worst_chord[p], 1e-12);
    }
  }
}

TEST(FeatureGap, OrderingAndBounds) {
  for (const auto& s : {ThetaSchedule::Build(32, 10000),
                        ApplyResonance(ThetaSchedule::Build(32, 10000)),
                        ApplyNtkAware(32, 10000, 4)}) {
    const auto r = FeatureGap(s, 48, 300, GapMode::kWorstOod);
    ASSERT_EQ(r.per_dim_joint_gap.size(), 32u);
    ASSERT_EQ(r.per_dim_worst_ood_gap.size(), 32u);
    for (int i = 0; i < 32; ++i) {
      EXPECT_GE(r.per_dim_joint_gap[i], 0.0);
      EXPECT_LE(r.per_dim_joint_gap[i], r.per_dim_worst_ood_gap[i]);
      EXPECT_LE(r.per_dim_worst_ood_gap[i], 2.0);
    }
    for (int p = 0; p < 16; ++p) {
      EXPECT_LE(r.per_pair_joint_chordal[p], r.per_pair_worst_ood_chordal[p]);
      EXPECT_LE(r.per_pair_worst_ood_chordal[p], 2.0);
    }
  }
}

TEST(FeatureGap, SortedPathAgreesWithEnumeration) {
  for (const auto& s : {ThetaSchedule::Build(64, 10000),
                        ApplyResonance(ThetaSchedule::Build(64, 10000)),
                        ApplyYarn(ThetaSchedule::Build(64, 10000), 4, 64, 1, 32),
                        ApplyResonance(ApplyYarn(ThetaSchedule::Build(64, 10000), 4, 64, 1, 32))}) {
    for (auto [L, Lp] : {std::pair<std::int64_t, std::int64_t>{64, 256}, {100, 101}, {7, 1000}}) {
      const auto a = FeatureGap(s, L, Lp, GapMode::kWorstOod);
      const auto b = FeatureGap(s, L, Lp, GapMode::kWorstOod, /*force_sorted=*/true);
      EXPECT_TRUE(a.exhaustive);
      EXPECT_FALSE(b.exhaustive);
      for (int i = 0; i < 64; ++i) {
        EXPECT_NEAR(a.per_dim_joint_gap[i], b.per_dim_joint_gap[i], 1e-12);
        EXPECT_NEAR(a.per_dim_worst_ood_gap[i], b.per_dim_worst_ood_gap[i], 1e-12);
      }
      for (int p = 0; p < 32; ++p) {
        EXPECT_NEAR(a.per_pair_joint_chordal[p], b.per_pair_joint_chordal[p], 1e-12);
        EXPECT_NEAR(a.per_pair_worst_ood_chordal[p], b.per_pair_worst_ood_chordal[p], 1e-12);
      }
    }
  }
}

TEST(FeatureGap, LargeRangesUseSortedSearch) {
  const auto s = ApplyResonance(ThetaSchedule::Build(128, 10000));
  const auto r = FeatureGap(s, 4096, 32768, GapMode::kWorstOod);
  EXPECT_FALSE(r.exhaustive);
  EXPECT_EQ(r.split.critical_index, 46);
  EXPECT_LE(r.pre_critical_max_gap, 1e-12);
  EXPECT_GT(r.post_critical_max_gap, 0.0);
}

TEST(FeatureGap, ModeSelectsRegionMaxima) {
  const auto s = ThetaSchedule::Build(16, 10000);
  const auto joint = FeatureGap(s, 10, 40, GapMode::kJoint);
  const auto worst = FeatureGap(s, 10, 40, GapMode::kWorstOod);
  EXPECT_LE(joint.pre_critical_max_gap, worst.pre_critical_max_gap);
  EXPECT_EQ(joint.per_dim_worst_ood_gap, worst.per_dim_worst_ood_gap);
  const auto j = ToJson(worst);
  EXPECT_EQ(j.at("mode"), "worst_ood");
  EXPECT_EQ(j.at("per_dim_joint_gap").size(), 16u);
}

TEST(FeatureGap, RejectsBadRanges) {
  const auto s = ThetaSchedule::Build(8, 10000);
  EXPECT_THROW(FeatureGap(s, 10, 10, GapMode::kJoint), std::invalid_argument);
  EXPECT_THROW(FeatureGap(s, 10, 5, GapMode::kJoint), std::invalid_argument);
  EXPECT_THROW(FeatureGap(s, 0, 5, GapMode::kJoint), std::invalid_argument);
}

// Exhaustive oracle over full d-dimensional vectors.
double OracleEmbeddedDistance(const ThetaSchedule& a, const ThetaSchedule& b,
                              std::int64_t n, std::int64_t n_hat, bool joint) {
  const int d = a.head_dim();
  double result = 0.0;
  for (int i = 0; i < d; ++i) {
    std::vector<double> x(d, 0.0);
    x[i] = 1.0;
    double joint_min = 1e300, worst = 0.0;
    for (std::int64_t j = 0; j < n_hat; ++j) {
      const auto fb = Rotate(x, j, b);
      double best = 1e300;
      for (std::int64_t k = 0; k < n; ++k) {
        const auto fa = Rotate(x, k, a);
        double s = 0;
        for (int t = 0; t < d; ++t) s += (fa[t] - fb[t]) * (fa[t] - fb[t]);
        best = std::min(best, std::sqrt(s));
      }
      joint_min = std::min(joint_min, best);
      worst = std::max(worst, best);
    }
    result = std::max(result, joint ? joint_min : worst);
  }
  return result;
}

TEST(EmbeddedVectorDistance, IdenticalSchedules) {
  const auto s = ThetaSchedule::Build(16, 10000);
  for (std::int64_t n : {1, 4, 33}) {
    EXPECT_EQ(EmbeddedVectorDistance(s, s, n, n), 0.0);
    EXPECT_EQ(EmbeddedVectorDistance(s, s, n, n, DistanceMode::kPerScaledPosition), 0.0);
  }
}

TEST(EmbeddedVectorDistance, UnitVersusHalfFrequency) {
  const auto a = ThetaSchedule::FromWavelengths(2, 10000, {kTwoPi});
  const auto b = ThetaSchedule::FromWavelengths(2, 10000, {2 * kTwoPi});
  ASSERT_NEAR(a.thetas()[0], 1.0, 1e-15);
  ASSERT_NEAR(b.thetas()[0], 0.5, 1e-15);
  EXPECT_NEAR(EmbeddedVectorDistance(a, b, 4, 4),
              OracleEmbeddedDistance(a, b, 4, 4, true), 1e-12);
  const double per = EmbeddedVectorDistance(a, b, 4, 4, DistanceMode::kPerScaledPosition);
  EXPECT_NEAR(per, OracleEmbeddedDistance(a, b, 4, 4, false), 1e-12);
  EXPECT_GT(per, 0.0);
}

TEST(EmbeddedVectorDistance, MatchesOracleOnScaledSchedules) {
  const auto base = ThetaSchedule::Build(8, 10000);
  const auto yarn = ApplyYarn(base, 4, 16, 1, 32);
  for (auto mode : {DistanceMode::kJoint, DistanceMode::kPerScaledPosition}) {
    EXPECT_NEAR(EmbeddedVectorDistance(base, yarn, 16, 64, mode),
                OracleEmbeddedDistance(base, yarn, 16, 64, mode == DistanceMode::kJoint),
                1e-12);
  }
  EXPECT_THROW(EmbeddedVectorDistance(base, ThetaSchedule::Build(4, 10000), 2, 2),
               std::invalid_argument);
  EXPECT_THROW(EmbeddedVectorDistance(base, base, 0, 2), std::invalid_argument);
}

TEST(ResonanceLcm, SmallCases) {
  EXPECT_EQ(ResonanceLcm(ThetaSchedule::FromIntegerWavelengths(4, 10000, {6, 7}), 2), 42);
  EXPECT_EQ(ResonanceLcm(ThetaSchedule::FromIntegerWavelengths(4, 10000, {6, 6}), 2), 6);
  EXPECT_EQ(ResonanceLcm(ThetaSchedule::FromIntegerWavelengths(4, 10000, {6, 7}), 0), 1);
}

TEST(ResonanceLcm, LlamaScale) {
  const auto s = ApplyResonance(ThetaSchedule::Build(128, 10000));
  const int c = ComputeCriticalSplit(s, 4096).critical_index;
  ASSERT_EQ(c, 46);
  const BigInt lcm = ResonanceLcm(s, c);
  EXPECT_GT(lcm, BigInt(7) * boost::multiprecision::pow(BigInt(10), 51));
  EXPECT_EQ(lcm.str(), "7057974406910048702415100928873416964126012399455200");
  const auto& w = *s.integer_wavelengths();
  EXPECT_EQ(lcm, OracleLcm(std::vector<std::int64_t>(w.begin(), w.begin() + c)));
}

TEST(ResonanceLcm, DivisibleAndOrderFree) {
  CounterRng rng(5);
  for (double base : {100.0, 10000.0, 1e6}) {
    const auto s = ApplyResonance(ThetaSchedule::Build(64, base));
    const auto& w = *s.integer_wavelengths();
    for (int c : {1, 5, 17, 32}) {
      const BigInt lcm = ResonanceLcm(s, c);
      for (int j = 0; j < c; ++j) EXPECT_EQ(lcm % w[j], 0);
      std::vector<std::int64_t> shuffled(w.begin(), w.begin() + c);
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      EXPECT_EQ(OracleLcm(shuffled), lcm);
    }
  }
}

TEST(ResonanceLcm, RequiresIntegerWavelengths) {
  EXPECT_THROW(ResonanceLcm(ThetaSchedule::Build(8, 10000), 2), std::logic_error);
  const auto s = ApplyResonance(ThetaSchedule::Build(8, 10000));
  EXPECT_THROW(ResonanceLcm(s, 5), std::invalid_argument);
}

}  // namespace
}  // namespace resonance
