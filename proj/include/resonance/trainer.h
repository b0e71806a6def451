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

#ifndef RESONANCE_TINYFORMER_TRAINER_H_
#define RESONANCE_TINYFORMER_TRAINER_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <vector>

#include "json.hpp"
#include "resonance/model.h"
#include "resonance/posgen.h"

namespace resonance::tinyformer {

struct TrainConfig {
  double learning_rate = 2e-4;
  double weight_decay = 1e-2;
  int batch_size = 128;
  int epochs = 150;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void Validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json ToJson(const TrainConfig& config);
TrainConfig TrainConfigFromJson(const nlohmann::json& json);

// AdamW with decoupled weight decay:
//   p <- p * (1 - lr * wd)
//   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
//   p <- p - lr / (1 - b1^t) * m / (sqrt(v / (1 - b2^t)) + eps)
template <typename S>
class AdamW {
 public:
  AdamW(const ModelConfig& model, const TrainConfig& config);

  void Step(ParameterSet<S>* params, const ParameterSet<S>& grads);
  std::int64_t steps() const { return step_; }

 private:
  TrainConfig config_;
  ParameterSet<S> m_;
  ParameterSet<S> v_;
  std::int64_t step_ = 0;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_ood_accuracy = 0.0;
  double seconds = 0.0;
};

nlohmann::json ToJson(const EpochMetrics& metrics);
EpochMetrics EpochMetricsFromJson(const nlohmann::json& json);

struct RunMetrics {
  std::vector<EpochMetrics> epochs;
  // Epoch of the returned checkpoint (lowest validation loss); 0 when no
  // epoch ran.
  int best_epoch = 0;
};

struct EvalReport {
  std::int64_t train_length = 0;
  // Accuracy of the prediction for each position; position 0 has no
  // prediction and is NaN.
  std::vector<double> per_position_accuracy;
  double ood_accuracy = 0.0;
  double loss = 0.0;
  std::int64_t sequences = 0;
};

nlohmann::json ToJson(const EvalReport& report);

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  ParameterSet<float> params;
  RunMetrics metrics;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Trains on dataset.train with AdamW, shuffling every epoch from the run
// seed, and validates on dataset.val (OOD accuracy at the PosGen training
// length). Returns the lowest-validation-loss parameters. Targets before
// position j + k are excluded from loss and accuracy. Throws
// TrainingDiverged on a non-finite loss.
TrainResult Train(const ModelConfig& model_config,
                  const TrainConfig& train_config,
                  const posgen::DatasetSplit& dataset,
                  const EpochCallback& on_epoch = {});

// Argmax predictions for positions [1, len) of each sequence. Teacher-forced
// by default; in autoregressive mode the first `train_length` tokens come
// from the sequence and the rest are generated greedily.
std::vector<std::vector<Token>> Predict(const Transformer<float>& model,
                                        const ParameterSet<float>& params,
                                        const std::vector<posgen::SequenceSample>& data,
                                        std::int64_t train_length,
                                        bool autoregressive = false,
                                        int batch_size = 128);

EvalReport Evaluate(const Transformer<float>& model,
                    const ParameterSet<float>& params,
                    const std::vector<posgen::SequenceSample>& data,
                    std::int64_t train_length, std::int64_t loss_mask_start,
                    bool autoregressive = false, int batch_size = 128);

// checkpoint.json (names, shapes, configs, summary) next to a blob of
// little-endian float32 values in manifest order.
void SaveCheckpoint(const std::filesystem::path& manifest_path,
                    const ModelConfig& config, const ParameterSet<float>& params,
                    const nlohmann::json& summary = nlohmann::json::object());

struct LoadedCheckpoint {
  ModelConfig config;
  ParameterSet<float> params;
  nlohmann::json manifest;
};

LoadedCheckpoint LoadCheckpoint(const std::filesystem::path& manifest_path);

}  // namespace resonance::tinyformer

#endif  // RESONANCE_TINYFORMER_TRAINER_H_
