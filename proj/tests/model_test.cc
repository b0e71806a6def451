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

#include "resonance/model.h"

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "resonance/posgen.h"
#include "resonance/rng.h"
#include "gradcheck.h"

namespace resonance::tinyformer {
namespace {

ModelConfig MicroConfig() {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.head_dim = 8;
  c.ffn_dim = 32;
  c.max_positions = 32;
  c.pe.method = ScalingMethod::kYarn;
  c.pe.scale_factor = 4;
  c.pe.train_length = 8;
  c.pe.resonance = true;
  return c;
}

TokenBatch BatchFor(posgen::Subtask subtask, int n, int length,
                    std::uint64_t seed) {
  posgen::PosGenSpec spec;
  spec.subtask = subtask;
  spec.train_length = length;
  spec.eval_length = length + 1;
  const auto split = posgen::MakeSplits(spec, n, 0, 0, seed);
  std::vector<std::vector<Token>> rows;
  for (const auto& s : split.train) rows.push_back(s.tokens);
  return TokenBatch::FromSequences(rows);
}

// Random parameters large enough that every group has a visible gradient.
ParameterSet<double> Perturbed(const ModelConfig& config, std::uint64_t seed) {
  auto p = ParameterSet<double>::Initialize(config, seed).Cast<double>();
  CounterRng rng(seed ^ 0xABCDEF);
  p.ForEachTensor([&](const std::string& name, double* d, Eigen::Index r,
                      Eigen::Index c) {
    const bool gain = name.find("norm") != std::string::npos;
    for (Eigen::Index i = 0; i < r * c; ++i) {
      d[i] = gain ? 1.0 + 0.3 * rng.Normal() : 8.0 * d[i];
    }
  });
  return p;
}

TEST(TransformerTest, OneTokenShape) {
  const Transformer<float> model(MicroConfig());
  const auto params = ParameterSet<float>::Initialize(model.config(), 1);
  TokenBatch in{1, 1, {3}};
  const auto logits = model.Forward(params, in);
  ASSERT_EQ(logits.rows(), 1);
  ASSERT_EQ(logits.cols(), 17);
  EXPECT_TRUE(logits.allFinite());
}

TEST(TransformerTest, CausalityIsBitwise) {
  const Transformer<float> model(MicroConfig());
  const auto params = ParameterSet<float>::Initialize(model.config(), 2);
  TokenBatch a = BatchFor(posgen::Subtask::kCot, 2, 20, 5);
  const auto base = model.Forward(params, a);
  const int t = 9;
  TokenBatch b = a;
  for (int bi = 0; bi < b.batch; ++bi) {
    for (int p = t + 1; p < b.length; ++p) {
      b.ids[bi * b.length + p] = (b.at(bi, p) + 5) % 17;
    }
  }
  const auto changed = model.Forward(params, b);
  for (int bi = 0; bi < a.batch; ++bi) {
    for (int p = 0; p <= t; ++p) {
      const auto row = bi * a.length + p;
      for (int v = 0; v < 17; ++v) {
        ASSERT_EQ(base(row, v), changed(row, v)) << bi << " " << p << " " << v;
      }
    }
  }
  // and a later position does move
  EXPECT_NE((base.row(a.length - 1) - changed.row(a.length - 1)).norm(), 0.0f);
}

// With identical tokens every query and key vector is the same before
// rotation, so the first-layer logit between m and n depends on m - n only.
TEST(TransformerTest, FirstLayerLogitsAreTranslationInvariant) {
  for (bool resonance : {false, true}) {
    ModelConfig c = MicroConfig();
    c.pe.resonance = resonance;
    const Transformer<double> model(c);
    const auto params = Perturbed(c, 3);
    TokenBatch in{1, 24, std::vector<Token>(24, 7)};
    for (int head = 0; head < c.n_heads; ++head) {
      const auto logits = model.AttentionLogits(params, in, 0, head);
      for (int delta = 0; delta < 24; ++delta) {
        const double ref = logits(delta, 0);
        for (int n = 1; n + delta < 24; ++n) {
          EXPECT_NEAR(logits(n + delta, n), ref, 1e-6 * (1 + std::abs(ref)))
              << "delta " << delta << " n " << n;
        }
      }
    }
  }
}

TEST(TransformerTest, UniformLogitsGiveLogVocab) {
  ModelConfig c = MicroConfig();
  const Transformer<double> model(c);
  auto params = ParameterSet<double>::Initialize(c, 4).Cast<double>();
  params.unembedding.setZero();
  const auto batch = BatchFor(posgen::Subtask::kRecursive, 3, 12, 6);
  const double loss = model.LossAndGrad(params, batch, 4, nullptr);
  EXPECT_NEAR(loss, std::log(17.0), 1e-12);
  EXPECT_NEAR(loss, 2.8332, 1e-4);
}

TEST(TransformerTest, InitialLossNearUniform) {
  ModelConfig c;  // full-width model
  c.d_model = 128;
  c.n_heads = 2;
  c.ffn_dim = 512;
  const Transformer<float> model(c);
  const auto params = ParameterSet<float>::Initialize(c, 7);
  const auto batch = BatchFor(posgen::Subtask::kCot, 16, 64, 8);
  const double loss = model.LossAndGrad(params, batch, 4, nullptr);
  EXPECT_NEAR(loss, std::log(17.0), 0.05 * std::log(17.0));
}

TEST(TransformerTest, EmptyMaskRejected) {
  const Transformer<double> model(MicroConfig());
  const auto params = Perturbed(model.config(), 1);
  const auto batch = BatchFor(posgen::Subtask::kRecursive, 2, 6, 1);
  EXPECT_THROW(model.LossAndGrad(params, batch, 6, nullptr),
               std::invalid_argument);
}

TEST(TransformerTest, SmallStepAlongNegativeGradientLowersLoss) {
  const Transformer<double> model(MicroConfig());
  auto params = Perturbed(model.config(), 11);
  auto grads = ParameterSet<double>::Zeros(model.config());
  const auto batch = BatchFor(posgen::Subtask::kCot, 4, 16, 2);
  const double before = model.LossAndGrad(params, batch, 4, &grads);
  std::vector<const double*> g;
  grads.ForEachTensor([&](const std::string&, const double* d, Eigen::Index,
                          Eigen::Index) { g.push_back(d); });
  size_t t = 0;
  params.ForEachTensor([&](const std::string&, double* d, Eigen::Index r,
                           Eigen::Index c) {
    for (Eigen::Index i = 0; i < r * c; ++i) d[i] -= 1e-4 * g[t][i];
    ++t;
  });
  EXPECT_LT(model.LossAndGrad(params, batch, 4, nullptr), before);
}

class GradientCheck : public ::testing::TestWithParam<posgen::Subtask> {};

TEST_P(GradientCheck, MatchesCentralDifferences) {
  const ModelConfig c = MicroConfig();
  const Transformer<double> model(c);
  const auto batch = BatchFor(GetParam(), 3, 14, 9);
  const auto groups =
      testing::CheckGradients(model, Perturbed(c, 21), batch, 4);
  ASSERT_EQ(groups.size(), 3u + 8u * c.n_layers);
  for (const auto& g : groups) {
    EXPECT_EQ(g.checked, std::min<std::int64_t>(100, g.size)) << g.name;
    EXPECT_EQ(g.failures, 0) << g.name << " worst " << g.worst_relative_error;
    EXPECT_LE(g.kinks, 5) << g.name;
  }
}

INSTANTIATE_TEST_SUITE_P(
    AllSubtasks, GradientCheck,
    ::testing::Values(posgen::Subtask::kRecursive, posgen::Subtask::kCot,
                      posgen::Subtask::kSemiRecursive),
    [](const auto& info) { return posgen::ToString(info.param); });

TEST(TransformerTest, AttentionScaleMultipliesLogits) {
  ModelConfig c = MicroConfig();
  const Transformer<double> plain(c);
  c.pe.attention_scale = 1.7;
  const Transformer<double> scaled(c);
  const auto params = Perturbed(c, 5);
  const auto batch = BatchFor(posgen::Subtask::kCot, 1, 10, 3);
  const auto a = plain.AttentionLogits(params, batch, 1, 1);
  const auto b = scaled.AttentionLogits(params, batch, 1, 1);
  // layer 1 inputs differ too, so compare layer 0
  const auto a0 = plain.AttentionLogits(params, batch, 0, 0);
  const auto b0 = scaled.AttentionLogits(params, batch, 0, 0);
  for (int m = 0; m < 10; ++m) {
    for (int n = 0; n <= m; ++n) EXPECT_NEAR(b0(m, n), 1.7 * a0(m, n), 1e-12);
  }
  EXPECT_GT((a - b).norm(), 0.0);
}

TEST(TransformerTest, PositionTableExtendsOrRejects) {
  ModelConfig c = MicroConfig();
  c.max_positions = 8;
  const auto params = ParameterSet<float>::Initialize(c, 1);
  TokenBatch in{1, 12, std::vector<Token>(12, 1)};
  EXPECT_NO_THROW(Transformer<float>(c).Forward(params, in));
  c.auto_extend_positions = false;
  EXPECT_THROW(Transformer<float>(c).Forward(params, in), std::invalid_argument);
}

TEST(TransformerTest, DynamicNtkUsesLengthDependentSchedule) {
  ModelConfig c = MicroConfig();
  c.pe = {};
  c.pe.method = ScalingMethod::kDynamicNtk;
  c.pe.train_length = 8;
  const Transformer<float> model(c);
  EXPECT_EQ(model.ScheduleFor(8), ThetaSchedule::Build(8, 10000));
  EXPECT_EQ(model.ScheduleFor(16), ApplyNtkAware(8, 10000, 2.0));
}

}  // namespace
}  // namespace resonance::tinyformer
