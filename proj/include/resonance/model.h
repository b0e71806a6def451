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

#ifndef RESONANCE_TINYFORMER_MODEL_H_
#define RESONANCE_TINYFORMER_MODEL_H_

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "resonance/posgen.h"
#include "resonance/rope.h"
#include "resonance/scaling.h"

namespace resonance::tinyformer {

using posgen::Token;

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Vector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

struct ModelConfig {
  int n_layers = 2;
  int d_model = 512;
  int n_heads = 8;
  int head_dim = 64;
  int ffn_dim = 2048;
  int vocab_size = 17;
  // Rotary tables are precomputed for this many positions.
  std::int64_t max_positions = 256;
  // Longer inputs grow the table instead of failing.
  bool auto_extend_positions = true;
  double rotary_base = 10000.0;
  double norm_epsilon = 1e-6;
  ScalingSpec pe;

  void Validate() const;
  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json ToJson(const ModelConfig& config);
ModelConfig ModelConfigFromJson(const nlohmann::json& json);

template <typename S>
struct LayerParams {
  Vector<S> attn_norm;
  Matrix<S> wq, wk, wv, wo;
  Vector<S> ffn_norm;
  Matrix<S> w_in;   // d_model x ffn_dim
  Matrix<S> w_out;  // ffn_dim x d_model
};

// All trainable tensors. Linear maps act on row vectors: y = x * W.
template <typename S>
struct ParameterSet {
  Matrix<S> embedding;  // vocab x d_model
  std::vector<LayerParams<S>> layers;
  Vector<S> final_norm;
  Matrix<S> unembedding;  // d_model x vocab

  static ParameterSet Zeros(const ModelConfig& config);
  // normal(0, 0.02) matrices, unit norm gains.
  static ParameterSet Initialize(const ModelConfig& config, std::uint64_t seed);

  // fn(name, data, rows, cols) for every tensor in checkpoint order.
  template <typename Fn>
  void ForEachTensor(Fn&& fn) {
    Visit(*this, fn);
  }
  template <typename Fn>
  void ForEachTensor(Fn&& fn) const {
    Visit(*this, fn);
  }

  std::size_t size() const;
  bool AllFinite() const;
  void SetZero();

  template <typename T>
  ParameterSet<T> Cast() const;

 private:
  template <typename Self, typename Fn>
  static void Visit(Self& self, Fn& fn) {
    fn(std::string("embedding"), self.embedding.data(), self.embedding.rows(),
       self.embedding.cols());
    for (size_t l = 0; l < self.layers.size(); ++l) {
      auto& layer = self.layers[l];
      const std::string p = "layers." + std::to_string(l) + ".";
      fn(p + "attn_norm", layer.attn_norm.data(), layer.attn_norm.rows(), 1);
      fn(p + "wq", layer.wq.data(), layer.wq.rows(), layer.wq.cols());
      fn(p + "wk", layer.wk.data(), layer.wk.rows(), layer.wk.cols());
      fn(p + "wv", layer.wv.data(), layer.wv.rows(), layer.wv.cols());
      fn(p + "wo", layer.wo.data(), layer.wo.rows(), layer.wo.cols());
      fn(p + "ffn_norm", layer.ffn_norm.data(), layer.ffn_norm.rows(), 1);
      fn(p + "w_in", layer.w_in.data(), layer.w_in.rows(), layer.w_in.cols());
      fn(p + "w_out", layer.w_out.data(), layer.w_out.rows(),
         layer.w_out.cols());
    }
    fn(std::string("final_norm"), self.final_norm.data(),
       self.final_norm.rows(), 1);
    fn(std::string("unembedding"), self.unembedding.data(),
       self.unembedding.rows(), self.unembedding.cols());
  }
};

// Row-major batch of equal-length token sequences.
struct TokenBatch {
  int batch = 0;
  int length = 0;
  std::vector<Token> ids;

  Token at(int b, int t) const { return ids[static_cast<size_t>(b) * length + t]; }
  static TokenBatch FromSequences(std::span<const std::vector<Token>> sequences);
};

// cos/sin of every (position, pair) angle, evaluated in 64-bit.
template <typename S>
class RotaryTable {
 public:
  RotaryTable(const ThetaSchedule& schedule, std::int64_t positions);

  std::int64_t positions() const { return positions_; }
  int pairs() const { return pairs_; }
  const S* cos_row(std::int64_t position) const {
    return cos_.data() + position * pairs_;
  }
  const S* sin_row(std::int64_t position) const {
    return sin_.data() + position * pairs_;
  }

 private:
  std::int64_t positions_;
  int pairs_;
  std::vector<S> cos_;
  std::vector<S> sin_;
};

// Decoder-only pre-norm Transformer: RMS norm, causal multi-head attention
// with rotary q/k, ReLU feed-forward, untied output projection.
template <typename S>
class Transformer {
 public:
  explicit Transformer(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  // Schedule used for an input of `length` positions (only dynamic NTK
  // depends on the length).
  ThetaSchedule ScheduleFor(std::int64_t length) const;

  // (batch * length) x vocab logits; row b * length + t scores the token
  // following position t.
  Matrix<S> Forward(const ParameterSet<S>& params,
                    const TokenBatch& inputs) const;

  // Mean next-token cross-entropy over targets at positions >=
  // loss_mask_start. `sequences` holds full sequences: positions [0, len - 1)
  // are fed to the model and positions [1, len) are targets. When `grads` is
  // non-null it receives d(loss)/d(params). Throws std::invalid_argument when
  // no target survives the mask.
  double LossAndGrad(const ParameterSet<S>& params, const TokenBatch& sequences,
                     std::int64_t loss_mask_start,
                     ParameterSet<S>* grads) const;

  // Pre-softmax attention logits (length x length, causal entries only
  // meaningful) of one head for batch item 0.
  Matrix<S> AttentionLogits(const ParameterSet<S>& params,
                            const TokenBatch& inputs, int layer,
                            int head) const;

 private:
  struct LayerCache;
  struct Cache;

  std::shared_ptr<const RotaryTable<S>> Rotary(std::int64_t length) const;
  Matrix<S> Run(const ParameterSet<S>& params, const TokenBatch& inputs,
                Cache* cache, int stop_layer = -1, int stop_head = 0) const;

  ModelConfig config_;
  mutable std::mutex rotary_mu_;
  mutable std::map<std::int64_t, std::shared_ptr<const RotaryTable<S>>> rotary_;
  mutable ScheduleCache ntk_cache_;
};

template <typename S>
template <typename T>
ParameterSet<T> ParameterSet<S>::Cast() const {
  ParameterSet<T> out;
  out.embedding = embedding.template cast<T>();
  out.layers.resize(layers.size());
  for (size_t l = 0; l < layers.size(); ++l) {
    const auto& in = layers[l];
    auto& o = out.layers[l];
    o.attn_norm = in.attn_norm.template cast<T>();
    o.wq = in.wq.template cast<T>();
    o.wk = in.wk.template cast<T>();
    o.wv = in.wv.template cast<T>();
    o.wo = in.wo.template cast<T>();
    o.ffn_norm = in.ffn_norm.template cast<T>();
    o.w_in = in.w_in.template cast<T>();
    o.w_out = in.w_out.template cast<T>();
  }
  out.final_norm = final_norm.template cast<T>();
  out.unembedding = unembedding.template cast<T>();
  return out;
}

extern template struct ParameterSet<float>;
extern template struct ParameterSet<double>;
extern template class RotaryTable<float>;
extern template class RotaryTable<double>;
extern template class Transformer<float>;
extern template class Transformer<double>;

}  // namespace resonance::tinyformer

#endif  // RESONANCE_TINYFORMER_MODEL_H_
