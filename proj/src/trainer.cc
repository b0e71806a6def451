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

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "resonance/rng.h"

namespace resonance::tinyformer {
namespace {

using Clock = std::chrono::steady_clock;

template <typename Row>
Token Argmax(const Row& row) {
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < row.size(); ++c) {
    if (row(c) > row(best)) best = c;
  }
  return static_cast<Token>(best);
}

TokenBatch InputsOf(std::span<const posgen::SequenceSample> data,
                    std::int64_t length) {
  TokenBatch batch;
  batch.batch = static_cast<int>(data.size());
  batch.length = static_cast<int>(length);
  batch.ids.reserve(data.size() * length);
  for (const auto& s : data) {
    if (static_cast<std::int64_t>(s.tokens.size()) < length) {
      throw std::invalid_argument("sequence shorter than batch length");
    }
    batch.ids.insert(batch.ids.end(), s.tokens.begin(),
                     s.tokens.begin() + length);
  }
  return batch;
}

struct BatchEval {
  std::vector<std::vector<Token>> predicted;
  double loss_sum = 0.0;
  std::int64_t loss_count = 0;
};

// One teacher-forced pass over a batch of equal-length sequences.
BatchEval TeacherForced(const Transformer<float>& model,
                        const ParameterSet<float>& params,
                        std::span<const posgen::SequenceSample> data,
                        std::int64_t loss_mask_start) {
  const auto len = static_cast<std::int64_t>(data.front().tokens.size());
  for (const auto& s : data) {
    if (static_cast<std::int64_t>(s.tokens.size()) != len) {
      throw std::invalid_argument("evaluation batch mixes sequence lengths");
    }
  }
  BatchEval out;
  out.predicted.assign(data.size(), std::vector<Token>(len, -1));
  if (len < 2) return out;
  const TokenBatch inputs = InputsOf(data, len - 1);
  const Matrix<float> logits = model.Forward(params, inputs);
  for (size_t b = 0; b < data.size(); ++b) {
    for (std::int64_t t = 0; t + 1 < len; ++t) {
      const auto row = logits.row(static_cast<Eigen::Index>(b) * (len - 1) + t);
      out.predicted[b][t + 1] = Argmax(row);
      if (t + 1 >= loss_mask_start) {
        const double max_value = row.maxCoeff();
        double sum = 0.0;
        for (Eigen::Index c = 0; c < row.size(); ++c) {
          sum += std::exp(static_cast<double>(row(c)) - max_value);
        }
        out.loss_sum += max_value + std::log(sum) -
                        static_cast<double>(row(data[b].tokens[t + 1]));
        ++out.loss_count;
      }
    }
  }
  return out;
}

void Autoregress(const Transformer<float>& model,
                 const ParameterSet<float>& params,
                 std::span<const posgen::SequenceSample> data,
                 std::int64_t train_length,
                 std::vector<std::vector<Token>>* predicted) {
  const auto len = static_cast<std::int64_t>(data.front().tokens.size());
  std::vector<posgen::SequenceSample> running(data.begin(), data.end());
  for (std::int64_t p = std::max<std::int64_t>(train_length, 1); p < len; ++p) {
    const TokenBatch inputs = InputsOf(running, p);
    const Matrix<float> logits = model.Forward(params, inputs);
    for (size_t b = 0; b < running.size(); ++b) {
      const Token next =
          Argmax(logits.row(static_cast<Eigen::Index>(b) * p + (p - 1)));
      running[b].tokens[p] = next;
      (*predicted)[b][p] = next;
    }
  }
}

}  // namespace

void TrainConfig::Validate() const {
  if (!(learning_rate > 0) || weight_decay < 0 || batch_size < 1 ||
      epochs < 0 || !(adam_beta1 > 0 && adam_beta1 < 1) ||
      !(adam_beta2 > 0 && adam_beta2 < 1) || !(adam_epsilon > 0)) {
    throw std::invalid_argument("invalid training configuration");
  }
}

nlohmann::json ToJson(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},       {"epochs", c.epochs},
          {"seed", c.seed},                   {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},       {"adam_epsilon", c.adam_epsilon}};
}

TrainConfig TrainConfigFromJson(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
  c.Validate();
  return c;
}

template <typename S>
AdamW<S>::AdamW(const ModelConfig& model, const TrainConfig& config)
    : config_(config),
      m_(ParameterSet<S>::Zeros(model)),
      v_(ParameterSet<S>::Zeros(model)) {
  config_.Validate();
}

template <typename S>
void AdamW<S>::Step(ParameterSet<S>* params, const ParameterSet<S>& grads) {
  ++step_;
  const double bc1 = 1.0 - std::pow(config_.adam_beta1, double(step_));
  const double bc2 = 1.0 - std::pow(config_.adam_beta2, double(step_));
  const S decay = static_cast<S>(1.0 - config_.learning_rate * config_.weight_decay);
  const S step_size = static_cast<S>(config_.learning_rate / bc1);
  const S inv_sqrt_bc2 = static_cast<S>(1.0 / std::sqrt(bc2));
  const S b1 = static_cast<S>(config_.adam_beta1);
  const S b2 = static_cast<S>(config_.adam_beta2);
  const S eps = static_cast<S>(config_.adam_epsilon);

  std::vector<S*> p_ptrs, m_ptrs, v_ptrs;
  std::vector<const S*> g_ptrs;
  std::vector<Eigen::Index> sizes;
  params->ForEachTensor([&](const std::string&, S* d, Eigen::Index r,
                            Eigen::Index c) {
    p_ptrs.push_back(d);
    sizes.push_back(r * c);
  });
  m_.ForEachTensor([&](const std::string&, S* d, Eigen::Index, Eigen::Index) {
    m_ptrs.push_back(d);
  });
  v_.ForEachTensor([&](const std::string&, S* d, Eigen::Index, Eigen::Index) {
    v_ptrs.push_back(d);
  });
  grads.ForEachTensor([&](const std::string&, const S* d, Eigen::Index,
                          Eigen::Index) { g_ptrs.push_back(d); });
  if (g_ptrs.size() != p_ptrs.size()) {
    throw std::invalid_argument("gradient/parameter layout mismatch");
  }
  for (size_t t = 0; t < p_ptrs.size(); ++t) {
    S* p = p_ptrs[t];
    S* m = m_ptrs[t];
    S* v = v_ptrs[t];
    const S* g = g_ptrs[t];
    for (Eigen::Index i = 0; i < sizes[t]; ++i) {
      p[i] *= decay;
      m[i] = b1 * m[i] + (S(1) - b1) * g[i];
      v[i] = b2 * v[i] + (S(1) - b2) * g[i] * g[i];
      p[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
    }
  }
}

template class AdamW<float>;
template class AdamW<double>;

nlohmann::json ToJson(const EpochMetrics& m) {
  return {{"epoch", m.epoch},
          {"train_loss", m.train_loss},
          {"val_loss", m.val_loss},
          {"val_ood_accuracy", m.val_ood_accuracy},
          {"seconds", m.seconds}};
}

EpochMetrics EpochMetricsFromJson(const nlohmann::json& j) {
  EpochMetrics m;
  m.epoch = j.at("epoch").get<int>();
  m.train_loss = j.at("train_loss").get<double>();
  m.val_loss = j.at("val_loss").get<double>();
  m.val_ood_accuracy = j.at("val_ood_accuracy").get<double>();
  m.seconds = j.value("seconds", 0.0);
  return m;
}

nlohmann::json ToJson(const EvalReport& r) {
  nlohmann::json per_position = nlohmann::json::array();
  for (double a : r.per_position_accuracy) {
    per_position.push_back(std::isnan(a) ? nlohmann::json(nullptr)
                                         : nlohmann::json(a));
  }
  return {{"train_length", r.train_length},
          {"ood_accuracy", r.ood_accuracy},
          {"loss", r.loss},
          {"sequences", r.sequences},
          {"per_position_accuracy", std::move(per_position)}};
}

std::vector<std::vector<Token>> Predict(
    const Transformer<float>& model, const ParameterSet<float>& params,
    const std::vector<posgen::SequenceSample>& data, std::int64_t train_length,
    bool autoregressive, int batch_size) {
  std::vector<std::vector<Token>> predicted;
  predicted.reserve(data.size());
  for (size_t start = 0; start < data.size(); start += batch_size) {
    const size_t n = std::min<size_t>(batch_size, data.size() - start);
    const std::span<const posgen::SequenceSample> chunk(data.data() + start, n);
    BatchEval e = TeacherForced(model, params, chunk, 1);
    if (autoregressive) Autoregress(model, params, chunk, train_length, &e.predicted);
    for (auto& p : e.predicted) predicted.push_back(std::move(p));
  }
  return predicted;
}

EvalReport Evaluate(const Transformer<float>& model,
                    const ParameterSet<float>& params,
                    const std::vector<posgen::SequenceSample>& data,
                    std::int64_t train_length, std::int64_t loss_mask_start,
                    bool autoregressive, int batch_size) {
  if (data.empty()) throw std::invalid_argument("empty evaluation set");
  EvalReport report;
  report.train_length = train_length;
  report.sequences = static_cast<std::int64_t>(data.size());
  std::vector<std::vector<Token>> predicted;
  std::vector<std::vector<Token>> gold;
  double loss_sum = 0.0;
  std::int64_t loss_count = 0;
  for (size_t start = 0; start < data.size(); start += batch_size) {
    const size_t n = std::min<size_t>(batch_size, data.size() - start);
    const std::span<const posgen::SequenceSample> chunk(data.data() + start, n);
    BatchEval e = TeacherForced(model, params, chunk, loss_mask_start);
    if (autoregressive) Autoregress(model, params, chunk, train_length, &e.predicted);
    loss_sum += e.loss_sum;
    loss_count += e.loss_count;
    for (size_t b = 0; b < n; ++b) {
      predicted.push_back(std::move(e.predicted[b]));
      gold.push_back(chunk[b].tokens);
    }
  }
  report.loss = loss_count ? loss_sum / static_cast<double>(loss_count)
                           : std::numeric_limits<double>::quiet_NaN();
  report.ood_accuracy = posgen::OodAccuracy(predicted, gold, train_length);

  size_t max_len = 0;
  for (const auto& g : gold) max_len = std::max(max_len, g.size());
  std::vector<std::int64_t> correct(max_len, 0), total(max_len, 0);
  for (size_t s = 0; s < gold.size(); ++s) {
    for (size_t p = 1; p < gold[s].size(); ++p) {
      ++total[p];
      correct[p] += predicted[s][p] == gold[s][p];
    }
  }
  report.per_position_accuracy.assign(max_len,
                                      std::numeric_limits<double>::quiet_NaN());
  for (size_t p = 1; p < max_len; ++p) {
    if (total[p]) {
      report.per_position_accuracy[p] =
          static_cast<double>(correct[p]) / static_cast<double>(total[p]);
    }
  }
  return report;
}

TrainResult Train(const ModelConfig& model_config,
                  const TrainConfig& train_config,
                  const posgen::DatasetSplit& dataset,
                  const EpochCallback& on_epoch) {
  model_config.Validate();
  train_config.Validate();
  if (dataset.train.empty()) {
    throw std::invalid_argument("training set is empty");
  }
  const Transformer<float> model(model_config);
  TrainResult result;
  result.params = ParameterSet<float>::Initialize(model_config, train_config.seed);
  if (train_config.epochs == 0) return result;

  const std::int64_t mask_start = dataset.spec.seed_length();
  const std::int64_t train_length = dataset.spec.train_length;
  ParameterSet<float> params = result.params;
  ParameterSet<float> grads = ParameterSet<float>::Zeros(model_config);
  AdamW<float> optimizer(model_config, train_config);
  const CounterRng shuffle_root = CounterRng(train_config.seed).Child("shuffle");

  const size_t n = dataset.train.size();
  std::vector<size_t> order(n);
  std::vector<std::vector<Token>> batch_rows;
  double best_val = std::numeric_limits<double>::infinity();

  for (int epoch = 1; epoch <= train_config.epochs; ++epoch) {
    const auto start = Clock::now();
    std::iota(order.begin(), order.end(), size_t{0});
    CounterRng rng = shuffle_root.Child(static_cast<std::uint64_t>(epoch));
    for (size_t i = n; i > 1; --i) {
      std::swap(order[i - 1], order[rng.Below(i)]);
    }

    double loss_sum = 0.0;
    size_t seen = 0;
    for (size_t b0 = 0; b0 < n; b0 += train_config.batch_size) {
      const size_t count = std::min<size_t>(train_config.batch_size, n - b0);
      batch_rows.clear();
      for (size_t i = 0; i < count; ++i) {
        batch_rows.push_back(dataset.train[order[b0 + i]].tokens);
      }
      const TokenBatch batch = TokenBatch::FromSequences(batch_rows);
      const double loss = model.LossAndGrad(params, batch, mask_start, &grads);
      if (!std::isfinite(loss)) {
        throw TrainingDiverged("non-finite training loss at epoch " +
                               std::to_string(epoch) + ", optimizer step " +
                               std::to_string(optimizer.steps() + 1));
      }
      optimizer.Step(&params, grads);
      loss_sum += loss * static_cast<double>(count);
      seen += count;
    }
    if (!params.AllFinite()) {
      throw TrainingDiverged("non-finite parameters after epoch " +
                             std::to_string(epoch));
    }

    EpochMetrics metrics;
    metrics.epoch = epoch;
    metrics.train_loss = loss_sum / static_cast<double>(seen);
    if (!dataset.val.empty()) {
      const EvalReport val =
          Evaluate(model, params, dataset.val, train_length, mask_start);
      metrics.val_loss = val.loss;
      metrics.val_ood_accuracy = val.ood_accuracy;
    } else {
      metrics.val_loss = metrics.train_loss;
    }
    metrics.seconds =
        std::chrono::duration<double>(Clock::now() - start).count();
    result.metrics.epochs.push_back(metrics);
    if (metrics.val_loss < best_val) {
      best_val = metrics.val_loss;
      result.params = params;
      result.metrics.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(metrics);
  }
  return result;
}

void SaveCheckpoint(const std::filesystem::path& manifest_path,
                    const ModelConfig& config, const ParameterSet<float>& params,
                    const nlohmann::json& summary) {
  std::filesystem::path blob_path = manifest_path;
  blob_path.replace_extension(".bin");
  nlohmann::json tensors = nlohmann::json::array();
  std::ofstream blob(blob_path, std::ios::binary);
  if (!blob) throw std::runtime_error("cannot write " + blob_path.string());
  std::int64_t offset = 0;
  params.ForEachTensor([&](const std::string& name, const float* data,
                           Eigen::Index rows, Eigen::Index cols) {
    tensors.push_back({{"name", name},
                       {"shape", {rows, cols}},
                       {"offset", offset}});
    for (Eigen::Index i = 0; i < rows * cols; ++i) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(data[i]);
      unsigned char bytes[4] = {
          static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
          static_cast<unsigned char>(bits >> 16),
          static_cast<unsigned char>(bits >> 24)};
      blob.write(reinterpret_cast<const char*>(bytes), 4);
    }
    offset += rows * cols;
  });
  nlohmann::json manifest = {{"format", "tinyformer-checkpoint-v1"},
                             {"dtype", "float32-le"},
                             {"blob", blob_path.filename().string()},
                             {"elements", offset},
                             {"model_config", ToJson(config)},
                             {"tensors", std::move(tensors)},
                             {"summary", summary}};
  std::ofstream out(manifest_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + manifest_path.string());
  out << manifest.dump(2) << '\n';
}

LoadedCheckpoint LoadCheckpoint(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot open " + manifest_path.string());
  LoadedCheckpoint ckpt;
  ckpt.manifest = nlohmann::json::parse(in);
  ckpt.config = ModelConfigFromJson(ckpt.manifest.at("model_config"));
  ckpt.params = ParameterSet<float>::Zeros(ckpt.config);
  const auto blob_path =
      manifest_path.parent_path() / ckpt.manifest.at("blob").get<std::string>();
  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw std::runtime_error("cannot open " + blob_path.string());
  const auto& tensors = ckpt.manifest.at("tensors");
  size_t index = 0;
  ckpt.params.ForEachTensor([&](const std::string& name, float* data,
                                Eigen::Index rows, Eigen::Index cols) {
    if (index >= tensors.size() || tensors[index].at("name") != name ||
        tensors[index].at("shape")[0].get<Eigen::Index>() != rows ||
        tensors[index].at("shape")[1].get<Eigen::Index>() != cols) {
      throw std::runtime_error("checkpoint layout mismatch at " + name);
    }
    ++index;
    for (Eigen::Index i = 0; i < rows * cols; ++i) {
      unsigned char bytes[4];
      if (!blob.read(reinterpret_cast<char*>(bytes), 4)) {
        throw std::runtime_error("checkpoint blob truncated");
      }
      const std::uint32_t bits = std::uint32_t{bytes[0]} |
                                 (std::uint32_t{bytes[1]} << 8) |
                                 (std::uint32_t{bytes[2]} << 16) |
                                 (std::uint32_t{bytes[3]} << 24);
      data[i] = std::bit_cast<float>(bits);
    }
  });
  return ckpt;
}

}  // namespace resonance::tinyformer
