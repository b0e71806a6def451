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

#include "resonance/trainer.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "resonance/rng.h"

namespace resonance::tinyformer {
namespace {

ModelConfig Small(int d_model = 32) {
  ModelConfig c;
  c.d_model = d_model;
  c.n_heads = 2;
  c.head_dim = d_model / 2;
  c.ffn_dim = 4 * d_model;
  c.pe.method = ScalingMethod::kYarn;
  c.pe.scale_factor = 4;
  c.pe.train_length = 64;
  return c;
}

posgen::DatasetSplit Data(posgen::Subtask subtask, int n_train, int n_val, int n_test) {
  posgen::PosGenSpec spec;
  spec.subtask = subtask;
  return posgen::MakeSplits(spec, n_train, n_val, n_test, 99);
}

TEST(AdamW, MatchesScalarReference) {
  const ModelConfig c = Small(8);
  TrainConfig tc;
  tc.learning_rate = 0.01;
  tc.weight_decay = 0.1;
  AdamW<double> opt(c, tc);
  auto params = ParameterSet<double>::Initialize(c, 1).Cast<double>();
  const double p0 = params.layers[0].wq(0, 0);
  auto grads = ParameterSet<double>::Zeros(c);
  const double g[] = {0.5, -0.25, 2.0};

  double p = p0, m = 0, v = 0;
  for (int t = 1; t <= 3; ++t) {
    grads.layers[0].wq(0, 0) = g[t - 1];
    opt.Step(&params, grads);
    p *= 1 - 0.01 * 0.1;
    m = 0.9 * m + 0.1 * g[t - 1];
    v = 0.999 * v + 0.001 * g[t - 1] * g[t - 1];
    const double m_hat = m / (1 - std::pow(0.9, t));
    const double v_hat = v / (1 - std::pow(0.999, t));
    p -= 0.01 * m_hat / (std::sqrt(v_hat) + 1e-8);
    EXPECT_NEAR(params.layers[0].wq(0, 0), p, 1e-12) << t;
  }
  EXPECT_EQ(opt.steps(), 3);
  // zero gradient: only decay
  EXPECT_NEAR(params.layers[0].wq(1, 1),
              ParameterSet<double>::Initialize(c, 1).Cast<double>().layers[0].wq(1, 1) *
                  std::pow(1 - 0.001, 3),
              1e-15);
}

TEST(Train, ZeroEpochsReturnsInitialization) {
  TrainConfig tc;
  tc.epochs = 0;
  tc.seed = 5;
  const auto r = Train(Small(), tc, Data(posgen::Subtask::kCot, 16, 4, 4));
  EXPECT_TRUE(r.metrics.epochs.empty());
  EXPECT_EQ(r.metrics.best_epoch, 0);
  const auto init = ParameterSet<float>::Initialize(Small(), 5);
  EXPECT_EQ(r.params.embedding, init.embedding);
  EXPECT_EQ(r.params.unembedding, init.unembedding);
}

TEST(Train, RejectsEmptyData) {
  TrainConfig tc;
  tc.epochs = 1;
  EXPECT_THROW(Train(Small(), tc, Data(posgen::Subtask::kCot, 0, 4, 4)),
               std::invalid_argument);
}

TEST(Train, DeterministicForFixedSeed) {
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 16;
  tc.seed = 3;
  const auto data = Data(posgen::Subtask::kSemiRecursive, 64, 16, 4);
  const auto a = Train(Small(), tc, data);
  const auto b = Train(Small(), tc, data);
  ASSERT_EQ(a.metrics.epochs.size(), 3u);
  for (size_t e = 0; e < 3; ++e) {
    EXPECT_EQ(a.metrics.epochs[e].train_loss, b.metrics.epochs[e].train_loss);
    EXPECT_EQ(a.metrics.epochs[e].val_loss, b.metrics.epochs[e].val_loss);
    EXPECT_EQ(a.metrics.epochs[e].val_ood_accuracy, b.metrics.epochs[e].val_ood_accuracy);
    EXPECT_TRUE(std::isfinite(a.metrics.epochs[e].train_loss));
    EXPECT_GE(a.metrics.epochs[e].train_loss, 0.0);
  }
  EXPECT_EQ(a.params.embedding, b.params.embedding);
  EXPECT_EQ(a.params.layers[1].w_out, b.params.layers[1].w_out);

  tc.seed = 4;
  const auto c = Train(Small(), tc, data);
  EXPECT_NE(a.metrics.epochs[0].train_loss, c.metrics.epochs[0].train_loss);
}

TEST(Train, ReturnsLowestValidationLossEpoch) {
  TrainConfig tc;
  tc.epochs = 4;
  tc.batch_size = 8;
  tc.learning_rate = 3e-3;
  const auto r = Train(Small(), tc, Data(posgen::Subtask::kCot, 64, 16, 4));
  int best = 1;
  for (const auto& m : r.metrics.epochs) {
    if (m.val_loss < r.metrics.epochs[best - 1].val_loss) best = m.epoch;
  }
  EXPECT_EQ(r.metrics.best_epoch, best);
}

TEST(Train, SingleBatchOverfit) {
  // Capacity check: one batch of 8 sequences, 500 steps.
  const ModelConfig c = Small(64);
  const auto data = Data(posgen::Subtask::kCot, 8, 0, 0);
  std::vector<std::vector<Token>> rows;
  for (const auto& s : data.train) rows.push_back(s.tokens);
  const auto batch = TokenBatch::FromSequences(rows);
  TrainConfig tc;
  tc.learning_rate = 3e-3;
  const Transformer<float> model(c);
  auto params = ParameterSet<float>::Initialize(c, 1);
  auto grads = ParameterSet<float>::Zeros(c);
  AdamW<float> opt(c, tc);
  double loss = 0;
  for (int step = 0; step < 500; ++step) {
    loss = model.LossAndGrad(params, batch, 4, &grads);
    opt.Step(&params, grads);
  }
  const auto predicted = Predict(model, params, data.train, 4);
  int correct = 0, total = 0;
  for (size_t s = 0; s < rows.size(); ++s) {
    for (size_t p = 4; p < rows[s].size(); ++p) {
      ++total;
      correct += predicted[s][p] == rows[s][p];
    }
  }
  EXPECT_GE(static_cast<double>(correct) / total, 0.99) << "final loss " << loss;
}

TEST(Evaluate, ReportShapeAndConsistency) {
  const ModelConfig c = Small();
  const Transformer<float> model(c);
  const auto params = ParameterSet<float>::Initialize(c, 2);
  const auto data = Data(posgen::Subtask::kCot, 1, 0, 40);
  const auto r = Evaluate(model, params, data.test, 64, 4, false, 16);
  ASSERT_EQ(r.per_position_accuracy.size(), 256u);
  EXPECT_TRUE(std::isnan(r.per_position_accuracy[0]));
  double sum = 0;
  for (int p = 64; p < 256; ++p) sum += r.per_position_accuracy[p];
  EXPECT_NEAR(r.ood_accuracy, sum / 192, 1e-12);
  EXPECT_EQ(r.sequences, 40);
  EXPECT_NEAR(r.loss, std::log(17.0), 0.05 * std::log(17.0));
  const auto j = ToJson(r);
  EXPECT_TRUE(j.at("per_position_accuracy")[0].is_null());

  // batch size does not change the answer
  const auto r2 = Evaluate(model, params, data.test, 64, 4, false, 7);
  EXPECT_EQ(r.ood_accuracy, r2.ood_accuracy);
  EXPECT_NEAR(r.loss, r2.loss, 1e-9);
}

TEST(Evaluate, AutoregressiveSharesTheGoldPrefix) {
  const ModelConfig c = Small();
  const Transformer<float> model(c);
  const auto params = ParameterSet<float>::Initialize(c, 2);
  auto data = Data(posgen::Subtask::kRecursive, 1, 0, 6);
  for (auto& s : data.test) s.tokens.resize(80);
  const auto tf = Predict(model, params, data.test, 64, false);
  const auto ar = Predict(model, params, data.test, 64, true);
  for (size_t s = 0; s < tf.size(); ++s) {
    for (int p = 1; p <= 64; ++p) EXPECT_EQ(tf[s][p], ar[s][p]);
  }
}

TEST(Evaluate, OraclePredictors) {
  const auto data = Data(posgen::Subtask::kCot, 1, 0, 1000);
  std::vector<std::vector<Token>> gold, random;
  CounterRng rng(17);
  for (const auto& s : data.test) {
    gold.push_back(s.tokens);
    std::vector<Token> guess(s.tokens.size());
    for (auto& t : guess) t = static_cast<Token>(rng.Below(17));
    random.push_back(std::move(guess));
  }
  EXPECT_EQ(posgen::OodAccuracy(gold, gold, 64), 1.0);  // echo of the truth
  EXPECT_NEAR(posgen::OodAccuracy(random, gold, 64), 1.0 / 17.0, 0.01);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const auto dir = std::filesystem::temp_directory_path() / "trainer_test_ckpt";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const ModelConfig c = Small();
  const auto params = ParameterSet<float>::Initialize(c, 8);
  SaveCheckpoint(dir / "checkpoint.json", c, params, {{"best_epoch", 3}});
  const auto loaded = LoadCheckpoint(dir / "checkpoint.json");
  EXPECT_EQ(loaded.config, c);
  EXPECT_EQ(loaded.manifest.at("summary").at("best_epoch"), 3);
  EXPECT_EQ(loaded.manifest.at("tensors")[0].at("name"), "embedding");
  std::vector<float> a, b;
  params.ForEachTensor([&](const std::string&, const float* d, Eigen::Index r,
                           Eigen::Index cols) { a.insert(a.end(), d, d + r * cols); });
  loaded.params.ForEachTensor([&](const std::string&, const float* d, Eigen::Index r,
                                  Eigen::Index cols) { b.insert(b.end(), d, d + r * cols); });
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)), 0);
  EXPECT_EQ(std::filesystem::file_size(dir / "checkpoint.bin"), a.size() * 4);

  // little-endian float32 in manifest order
  std::ifstream blob(dir / "checkpoint.bin", std::ios::binary);
  unsigned char bytes[4];
  blob.read(reinterpret_cast<char*>(bytes), 4);
  std::uint32_t bits = bytes[0] | (bytes[1] << 8) | (bytes[2] << 16) |
                       (static_cast<std::uint32_t>(bytes[3]) << 24);
  float first;
  std::memcpy(&first, &bits, 4);
  EXPECT_EQ(first, params.embedding(0, 0));
  std::filesystem::remove_all(dir);
}

TEST(TrainConfig, JsonAndValidation) {
  TrainConfig tc;
  tc.seed = 12;
  tc.epochs = 7;
  EXPECT_EQ(TrainConfigFromJson(ToJson(tc)), tc);
  EXPECT_THROW(TrainConfigFromJson({{"learning_rate", -1.0}}), std::invalid_argument);
  EXPECT_THROW(TrainConfigFromJson({{"batch_size", 0}}), std::invalid_argument);
  const auto defaults = TrainConfigFromJson(nlohmann::json::object());
  EXPECT_EQ(defaults.learning_rate, 2e-4);
  EXPECT_EQ(defaults.weight_decay, 1e-2);
  EXPECT_EQ(defaults.batch_size, 128);
  EXPECT_EQ(defaults.epochs, 150);
}

}  // namespace
}  // namespace resonance::tinyformer
