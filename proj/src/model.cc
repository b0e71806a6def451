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

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "resonance/rng.h"

namespace resonance::tinyformer {

void ModelConfig::Validate() const {
  if (n_layers < 1 || d_model < 1 || n_heads < 1 || ffn_dim < 1) {
    throw std::invalid_argument("model dimensions must be positive");
  }
  if (head_dim < 2 || head_dim % 2 != 0) {
    throw std::invalid_argument("head_dim must be a positive even integer");
  }
  if (n_heads * head_dim != d_model) {
    throw std::invalid_argument("n_heads * head_dim must equal d_model");
  }
  if (vocab_size < 2) throw std::invalid_argument("vocab_size must be >= 2");
  if (max_positions < 1) {
    throw std::invalid_argument("max_positions must be positive");
  }
  pe.Validate();
}

nlohmann::json ToJson(const ModelConfig& c) {
  return {{"n_layers", c.n_layers},
          {"d_model", c.d_model},
          {"n_heads", c.n_heads},
          {"head_dim", c.head_dim},
          {"ffn_dim", c.ffn_dim},
          {"vocab_size", c.vocab_size},
          {"max_positions", c.max_positions},
          {"auto_extend_positions", c.auto_extend_positions},
          {"rotary_base", c.rotary_base},
          {"norm_epsilon", c.norm_epsilon},
          {"pe", ToJson(c.pe)}};
}

ModelConfig ModelConfigFromJson(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.value("n_layers", c.n_layers);
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.head_dim = j.value("head_dim", c.head_dim);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_positions = j.value("max_positions", c.max_positions);
  c.auto_extend_positions =
      j.value("auto_extend_positions", c.auto_extend_positions);
  c.rotary_base = j.value("rotary_base", c.rotary_base);
  c.norm_epsilon = j.value("norm_epsilon", c.norm_epsilon);
  if (j.contains("pe")) c.pe = ScalingSpecFromJson(j.at("pe"));
  c.Validate();
  return c;
}

// ---------------------------------------------------------------------------
// ParameterSet

template <typename S>
ParameterSet<S> ParameterSet<S>::Zeros(const ModelConfig& c) {
  ParameterSet p;
  p.embedding = Matrix<S>::Zero(c.vocab_size, c.d_model);
  p.layers.resize(c.n_layers);
  for (auto& layer : p.layers) {
    layer.attn_norm = Vector<S>::Zero(c.d_model);
    layer.wq = Matrix<S>::Zero(c.d_model, c.d_model);
    layer.wk = Matrix<S>::Zero(c.d_model, c.d_model);
    layer.wv = Matrix<S>::Zero(c.d_model, c.d_model);
    layer.wo = Matrix<S>::Zero(c.d_model, c.d_model);
    layer.ffn_norm = Vector<S>::Zero(c.d_model);
    layer.w_in = Matrix<S>::Zero(c.d_model, c.ffn_dim);
    layer.w_out = Matrix<S>::Zero(c.ffn_dim, c.d_model);
  }
  p.final_norm = Vector<S>::Zero(c.d_model);
  p.unembedding = Matrix<S>::Zero(c.d_model, c.vocab_size);
  return p;
}

template <typename S>
ParameterSet<S> ParameterSet<S>::Initialize(const ModelConfig& c,
                                            std::uint64_t seed) {
  c.Validate();
  ParameterSet p = Zeros(c);
  CounterRng rng = CounterRng(seed).Child("init");
  p.ForEachTensor([&](const std::string&, S* data, Eigen::Index rows,
                      Eigen::Index cols) {
    const Eigen::Index n = rows * cols;
    if (cols == 1) {
      std::fill(data, data + n, S(1));
    } else {
      for (Eigen::Index i = 0; i < n; ++i) {
        data[i] = static_cast<S>(0.02 * rng.Normal());
      }
    }
  });
  return p;
}

template <typename S>
std::size_t ParameterSet<S>::size() const {
  std::size_t n = 0;
  ForEachTensor([&](const std::string&, const S*, Eigen::Index rows,
                    Eigen::Index cols) { n += rows * cols; });
  return n;
}

template <typename S>
bool ParameterSet<S>::AllFinite() const {
  bool finite = true;
  ForEachTensor([&](const std::string&, const S* data, Eigen::Index rows,
                    Eigen::Index cols) {
    for (Eigen::Index i = 0; i < rows * cols && finite; ++i) {
      finite = std::isfinite(data[i]);
    }
  });
  return finite;
}

template <typename S>
void ParameterSet<S>::SetZero() {
  ForEachTensor([](const std::string&, S* data, Eigen::Index rows,
                   Eigen::Index cols) {
    std::fill(data, data + rows * cols, S(0));
  });
}

TokenBatch TokenBatch::FromSequences(
    std::span<const std::vector<Token>> sequences) {
  TokenBatch batch;
  batch.batch = static_cast<int>(sequences.size());
  if (sequences.empty()) return batch;
  batch.length = static_cast<int>(sequences.front().size());
  batch.ids.reserve(sequences.size() * batch.length);
  for (const auto& s : sequences) {
    if (static_cast<int>(s.size()) != batch.length) {
      throw std::invalid_argument("sequences in a batch must share a length");
    }
    batch.ids.insert(batch.ids.end(), s.begin(), s.end());
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Rotary tables

template <typename S>
RotaryTable<S>::RotaryTable(const ThetaSchedule& schedule,
                            std::int64_t positions)
    : positions_(positions), pairs_(schedule.num_pairs()) {
  cos_.resize(positions * pairs_);
  sin_.resize(positions * pairs_);
  for (std::int64_t m = 0; m < positions; ++m) {
    for (int j = 0; j < pairs_; ++j) {
      const double angle = schedule.Angle(j, m);
      cos_[m * pairs_ + j] = static_cast<S>(std::cos(angle));
      sin_[m * pairs_ + j] = static_cast<S>(std::sin(angle));
    }
  }
}

namespace {

template <typename S>
void RmsNorm(const Matrix<S>& x, const Vector<S>& gain, S eps, Matrix<S>* out,
             Vector<S>* inv) {
  const Eigen::Index d = x.cols();
  out->resize(x.rows(), d);
  inv->resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const S ms = x.row(r).squaredNorm() / static_cast<S>(d);
    const S scale = S(1) / std::sqrt(ms + eps);
    (*inv)(r) = scale;
    out->row(r) = x.row(r).cwiseProduct(gain.transpose()) * scale;
  }
}

// Accumulates into dx and dgain.
template <typename S>
void RmsNormBackward(const Matrix<S>& x, const Vector<S>& gain,
                     const Vector<S>& inv, const Matrix<S>& dy, Matrix<S>* dx,
                     Vector<S>* dgain) {
  const S d = static_cast<S>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const S scale = inv(r);
    const auto gdy = dy.row(r).cwiseProduct(gain.transpose());
    *dgain += (x.row(r).cwiseProduct(dy.row(r)) * scale).transpose();
    const S dot = gdy.dot(x.row(r));
    dx->row(r) += gdy * scale - x.row(r) * (scale * scale * scale * dot / d);
  }
}

// Rotates every head of every row; row n sits at position n % length.
template <typename S>
void ApplyRotary(Matrix<S>* m, const RotaryTable<S>& table, int length,
                 int heads, int head_dim, bool inverse) {
  const int pairs = head_dim / 2;
  for (Eigen::Index n = 0; n < m->rows(); ++n) {
    const std::int64_t t = n % length;
    const S* c = table.cos_row(t);
    const S* s = table.sin_row(t);
    S* row = m->data() + n * m->cols();
    for (int h = 0; h < heads; ++h) {
      S* v = row + h * head_dim;
      for (int p = 0; p < pairs; ++p) {
        const S sn = inverse ? -s[p] : s[p];
        const S x0 = v[2 * p];
        const S x1 = v[2 * p + 1];
        v[2 * p] = x0 * c[p] - x1 * sn;
        v[2 * p + 1] = x0 * sn + x1 * c[p];
      }
    }
  }
}

// Row-wise softmax over columns [0, i]; later columns are zeroed.
template <typename S>
void CausalSoftmax(Matrix<S>* scores) {
  const Eigen::Index t = scores->rows();
  for (Eigen::Index i = 0; i < t; ++i) {
    S* row = scores->data() + i * scores->cols();
    S max_value = row[0];
    for (Eigen::Index j = 1; j <= i; ++j) max_value = std::max(max_value, row[j]);
    S sum = 0;
    for (Eigen::Index j = 0; j <= i; ++j) {
      row[j] = std::exp(row[j] - max_value);
      sum += row[j];
    }
    const S inv = S(1) / sum;
    for (Eigen::Index j = 0; j <= i; ++j) row[j] *= inv;
    for (Eigen::Index j = i + 1; j < scores->cols(); ++j) row[j] = 0;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Transformer

template <typename S>
struct Transformer<S>::LayerCache {
  Matrix<S> x;
  Vector<S> inv1;
  Matrix<S> a;
  Matrix<S> q, k, v;  // q and k are rotated
  Matrix<S> probs;    // (batch * heads * length) x length
  Matrix<S> o;
  Matrix<S> h;
  Vector<S> inv2;
  Matrix<S> b;
  Matrix<S> u;
  Matrix<S> z;
};

template <typename S>
struct Transformer<S>::Cache {
  std::vector<LayerCache> layers;
  Matrix<S> x_final;
  Vector<S> inv_final;
  Matrix<S> f;
  std::shared_ptr<const RotaryTable<S>> rotary;
  int batch = 0;
  int length = 0;
};

template <typename S>
Transformer<S>::Transformer(ModelConfig config) : config_(std::move(config)) {
  config_.Validate();
}

template <typename S>
ThetaSchedule Transformer<S>::ScheduleFor(std::int64_t length) const {
  const ScalingSpec& pe = config_.pe;
  if (pe.method == ScalingMethod::kDynamicNtk) {
    const double s = DynamicScale(std::max<std::int64_t>(length, 1),
                                  pe.train_length);
    ThetaSchedule schedule =
        ntk_cache_.GetNtk(config_.head_dim, config_.rotary_base, s);
    return pe.resonance ? ApplyResonance(schedule) : schedule;
  }
  return Compose(pe, config_.head_dim, config_.rotary_base);
}

template <typename S>
std::shared_ptr<const RotaryTable<S>> Transformer<S>::Rotary(
    std::int64_t length) const {
  const bool dynamic = config_.pe.method == ScalingMethod::kDynamicNtk;
  if (!dynamic && length > config_.max_positions &&
      !config_.auto_extend_positions) {
    throw std::invalid_argument(
        "position " + std::to_string(length - 1) +
        " exceeds the precomputed rotary table (max_positions = " +
        std::to_string(config_.max_positions) + ")");
  }
  const std::int64_t key = dynamic ? length : 0;
  std::lock_guard lock(rotary_mu_);
  auto& slot = rotary_[key];
  if (!slot || slot->positions() < length) {
    const std::int64_t positions =
        dynamic ? length : std::max(length, config_.max_positions);
    slot = std::make_shared<const RotaryTable<S>>(ScheduleFor(length),
                                                  positions);
  }
  return slot;
}

template <typename S>
Matrix<S> Transformer<S>::Run(const ParameterSet<S>& params,
                              const TokenBatch& inputs, Cache* cache,
                              int stop_layer, int stop_head) const {
  const int B = inputs.batch;
  const int T = inputs.length;
  const int D = config_.d_model;
  const int H = config_.n_heads;
  const int hd = config_.head_dim;
  const Eigen::Index N = static_cast<Eigen::Index>(B) * T;
  if (B < 1 || T < 1) throw std::invalid_argument("empty batch");
  for (Token id : inputs.ids) {
    if (id < 0 || id >= config_.vocab_size) {
      throw std::invalid_argument("token id " + std::to_string(id) +
                                  " outside vocabulary");
    }
  }
  const auto rotary = Rotary(T);
  const S eps = static_cast<S>(config_.norm_epsilon);
  const S scale =
      static_cast<S>(config_.pe.logit_multiplier() / std::sqrt(double(hd)));

  Matrix<S> x(N, D);
  for (Eigen::Index n = 0; n < N; ++n) {
    x.row(n) = params.embedding.row(inputs.ids[n]);
  }
  if (cache) {
    cache->layers.resize(params.layers.size());
    cache->rotary = rotary;
    cache->batch = B;
    cache->length = T;
  }

  Matrix<S> a, q, k, v, o, h, bn, u, z, scores(T, T);
  Vector<S> inv1, inv2;
  for (size_t l = 0; l < params.layers.size(); ++l) {
    const auto& p = params.layers[l];
    RmsNorm(x, p.attn_norm, eps, &a, &inv1);
    q.noalias() = a * p.wq;
    k.noalias() = a * p.wk;
    v.noalias() = a * p.wv;
    ApplyRotary(&q, *rotary, T, H, hd, false);
    ApplyRotary(&k, *rotary, T, H, hd, false);
    o.resize(N, D);
    Matrix<S> probs;
    if (cache) probs.resize(static_cast<Eigen::Index>(B) * H * T, T);
    for (int b = 0; b < B; ++b) {
      for (int hh = 0; hh < H; ++hh) {
        const auto qb = q.block(b * T, hh * hd, T, hd);
        const auto kb = k.block(b * T, hh * hd, T, hd);
        scores.noalias() = qb * kb.transpose();
        scores *= scale;
        if (static_cast<int>(l) == stop_layer && b == 0 && hh == stop_head) {
          return scores;
        }
        CausalSoftmax(&scores);
        o.block(b * T, hh * hd, T, hd).noalias() =
            scores * v.block(b * T, hh * hd, T, hd);
        if (cache) {
          probs.block((static_cast<Eigen::Index>(b) * H + hh) * T, 0, T, T) =
              scores;
        }
      }
    }
    h = x;
    h.noalias() += o * p.wo;
    RmsNorm(h, p.ffn_norm, eps, &bn, &inv2);
    u.noalias() = bn * p.w_in;
    z = u.cwiseMax(S(0));
    Matrix<S> next = h;
    next.noalias() += z * p.w_out;
    if (cache) {
      auto& c = cache->layers[l];
      c.x = std::move(x);
      c.inv1 = std::move(inv1);
      c.a = std::move(a);
      c.q = std::move(q);
      c.k = std::move(k);
      c.v = std::move(v);
      c.probs = std::move(probs);
      c.o = std::move(o);
      c.h = std::move(h);
      c.inv2 = std::move(inv2);
      c.b = std::move(bn);
      c.u = std::move(u);
      c.z = std::move(z);
    }
    x = std::move(next);
  }
  if (stop_layer >= 0) throw std::invalid_argument("layer index out of range");
  Matrix<S> f;
  Vector<S> inv_final;
  RmsNorm(x, params.final_norm, eps, &f, &inv_final);
  Matrix<S> logits = f * params.unembedding;
  if (cache) {
    cache->x_final = std::move(x);
    cache->inv_final = std::move(inv_final);
    cache->f = std::move(f);
  }
  return logits;
}

template <typename S>
Matrix<S> Transformer<S>::Forward(const ParameterSet<S>& params,
                                  const TokenBatch& inputs) const {
  return Run(params, inputs, nullptr);
}

template <typename S>
Matrix<S> Transformer<S>::AttentionLogits(const ParameterSet<S>& params,
                                          const TokenBatch& inputs, int layer,
                                          int head) const {
  if (layer < 0 || layer >= config_.n_layers || head < 0 ||
      head >= config_.n_heads) {
    throw std::invalid_argument("layer or head index out of range");
  }
  return Run(params, inputs, nullptr, layer, head);
}

template <typename S>
double Transformer<S>::LossAndGrad(const ParameterSet<S>& params,
                                   const TokenBatch& sequences,
                                   std::int64_t loss_mask_start,
                                   ParameterSet<S>* grads) const {
  if (loss_mask_start < 1) {
    throw std::invalid_argument("loss_mask_start must be >= 1");
  }
  if (sequences.length < 2) {
    throw std::invalid_argument("sequences need at least two tokens");
  }
  const int B = sequences.batch;
  const int T = sequences.length - 1;
  TokenBatch inputs;
  inputs.batch = B;
  inputs.length = T;
  inputs.ids.reserve(static_cast<size_t>(B) * T);
  for (int b = 0; b < B; ++b) {
    for (int t = 0; t < T; ++t) inputs.ids.push_back(sequences.at(b, t));
  }

  Cache cache;
  const Matrix<S> logits = Run(params, inputs, grads ? &cache : nullptr);
  const Eigen::Index N = logits.rows();
  const int V = config_.vocab_size;

  Matrix<S> dlogits;
  if (grads) dlogits = Matrix<S>::Zero(N, V);
  double total = 0.0;
  std::int64_t count = 0;
  for (int b = 0; b < B; ++b) {
    for (int t = 0; t < T; ++t) {
      if (t + 1 < loss_mask_start) continue;
      const Eigen::Index n = static_cast<Eigen::Index>(b) * T + t;
      const Token target = sequences.at(b, t + 1);
      if (target < 0 || target >= V) {
        throw std::invalid_argument("target outside vocabulary");
      }
      const auto row = logits.row(n);
      const double max_value = static_cast<double>(row.maxCoeff());
      double sum = 0.0;
      for (int c = 0; c < V; ++c) {
        sum += std::exp(static_cast<double>(row(c)) - max_value);
      }
      const double log_z = max_value + std::log(sum);
      total += log_z - static_cast<double>(row(target));
      ++count;
      if (grads) {
        for (int c = 0; c < V; ++c) {
          dlogits(n, c) =
              static_cast<S>(std::exp(static_cast<double>(row(c)) - log_z));
        }
        dlogits(n, target) -= S(1);
      }
    }
  }
  if (count == 0) {
    throw std::invalid_argument("loss mask leaves no targets");
  }
  const double loss = total / static_cast<double>(count);
  if (!grads) return loss;

  dlogits /= static_cast<S>(count);
  if (grads->layers.size() != params.layers.size()) {
    *grads = ParameterSet<S>::Zeros(config_);
  } else {
    grads->SetZero();
  }
  ParameterSet<S>& g = *grads;
  const int D = config_.d_model;
  const int H = config_.n_heads;
  const int hd = config_.head_dim;
  const S scale =
      static_cast<S>(config_.pe.logit_multiplier() / std::sqrt(double(hd)));

  g.unembedding.noalias() = cache.f.transpose() * dlogits;
  Matrix<S> df = dlogits * params.unembedding.transpose();
  Matrix<S> dx = Matrix<S>::Zero(N, D);
  RmsNormBackward(cache.x_final, params.final_norm, cache.inv_final, df, &dx,
                  &g.final_norm);

  Matrix<S> dz, du, db, dh, dO, dq, dk, dv, da, dp(T, T), ds(T, T);
  for (int l = static_cast<int>(params.layers.size()) - 1; l >= 0; --l) {
    const auto& p = params.layers[l];
    const auto& c = cache.layers[l];
    auto& gl = g.layers[l];

    // Feed-forward block: next = h + relu(b * w_in) * w_out.
    gl.w_out.noalias() = c.z.transpose() * dx;
    dz.noalias() = dx * p.w_out.transpose();
    du = (c.u.array() > S(0)).select(dz, S(0));
    gl.w_in.noalias() = c.b.transpose() * du;
    db.noalias() = du * p.w_in.transpose();
    dh = dx;
    RmsNormBackward(c.h, p.ffn_norm, c.inv2, db, &dh, &gl.ffn_norm);

    // Attention block: h = x + o * wo.
    gl.wo.noalias() = c.o.transpose() * dh;
    dO.noalias() = dh * p.wo.transpose();
    dq.setZero(N, D);
    dk.setZero(N, D);
    dv.setZero(N, D);
    for (int b = 0; b < cache.batch; ++b) {
      for (int hh = 0; hh < H; ++hh) {
        const auto probs =
            c.probs.block((static_cast<Eigen::Index>(b) * H + hh) * T, 0, T, T);
        const auto dob = dO.block(b * T, hh * hd, T, hd);
        dp.noalias() = dob * c.v.block(b * T, hh * hd, T, hd).transpose();
        dv.block(b * T, hh * hd, T, hd).noalias() = probs.transpose() * dob;
        const Vector<S> rowdot = probs.cwiseProduct(dp).rowwise().sum();
        ds = probs.cwiseProduct(dp - rowdot.replicate(1, T)) * scale;
        dq.block(b * T, hh * hd, T, hd).noalias() =
            ds * c.k.block(b * T, hh * hd, T, hd);
        dk.block(b * T, hh * hd, T, hd).noalias() =
            ds.transpose() * c.q.block(b * T, hh * hd, T, hd);
      }
    }
    ApplyRotary(&dq, *cache.rotary, T, H, hd, true);
    ApplyRotary(&dk, *cache.rotary, T, H, hd, true);
    gl.wq.noalias() = c.a.transpose() * dq;
    gl.wk.noalias() = c.a.transpose() * dk;
    gl.wv.noalias() = c.a.transpose() * dv;
    da.noalias() = dq * p.wq.transpose();
    da.noalias() += dk * p.wk.transpose();
    da.noalias() += dv * p.wv.transpose();
    dx = dh;
    RmsNormBackward(c.x, p.attn_norm, c.inv1, da, &dx, &gl.attn_norm);
  }
  for (Eigen::Index n = 0; n < N; ++n) {
    g.embedding.row(inputs.ids[n]) += dx.row(n);
  }
  return loss;
}

template struct ParameterSet<float>;
template struct ParameterSet<double>;
template class RotaryTable<float>;
template class RotaryTable<double>;
template class Transformer<float>;
template class Transformer<double>;

}  // namespace resonance::tinyformer
