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

#ifndef RESONANCE_POSGEN_H_
#define RESONANCE_POSGEN_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace resonance::posgen {

using Token = std::int32_t;

enum class Subtask { kRecursive, kCot, kSemiRecursive };

// Front-window index of the semi-recursive rule.
//   kVaryingDistance: a(l) = max(floor((l - (j + k)) / 2) - j, 0)
//   kLiteral:         a(l) = max(floor(l - (j + k) / 2) - j, 0)
// The literal form keeps l - a(l) constant when j + k is even.
enum class SemiVariant { kVaryingDistance, kLiteral };

std::string ToString(Subtask subtask);
Subtask ParseSubtask(const std::string& name);

struct PosGenSpec {
  Subtask subtask = Subtask::kRecursive;
  int j = 1;
  int k = 3;
  int modulus = 17;
  int vocab_size = 17;
  std::int64_t train_length = 64;
  std::int64_t eval_length = 256;
  SemiVariant semi_variant = SemiVariant::kVaryingDistance;

  int seed_length() const { return j + k; }
  void Validate() const;
  bool operator==(const PosGenSpec&) const = default;
};

nlohmann::json ToJson(const PosGenSpec& spec);
PosGenSpec PosGenSpecFromJson(const nlohmann::json& json);

struct SequenceSample {
  std::vector<Token> tokens;

  std::span<const Token> seed(const PosGenSpec& spec) const {
    return std::span<const Token>(tokens).first(spec.seed_length());
  }
  bool operator==(const SequenceSample&) const = default;
};

struct DatasetSplit {
  PosGenSpec spec;
  std::uint64_t master_seed = 0;
  std::vector<SequenceSample> train;
  std::vector<SequenceSample> val;
  std::vector<SequenceSample> test;

  bool operator==(const DatasetSplit&) const = default;
};

// Start of the j-token front window used at position l (semi-recursive only).
std::int64_t SemiFrontIndex(const PosGenSpec& spec, std::int64_t l);

// Token at position l given tokens [0, l). h is the sum of the j + k
// arguments modulo spec.modulus. Throws std::invalid_argument if l < j + k or
// the prefix is shorter than l.
Token StepRule(const PosGenSpec& spec, std::span<const Token> prefix,
               std::int64_t l);

// Positions read by StepRule at l, in argument order.
std::vector<std::int64_t> StepDependencies(const PosGenSpec& spec,
                                           std::int64_t l);

// Extends `seed` (length j + k) to `length` tokens by the subtask rule. The
// rule is deterministic, so no random stream is involved.
SequenceSample GenerateSequence(const PosGenSpec& spec,
                                std::span<const Token> seed,
                                std::int64_t length);

// Draws n_train + n_val + n_test distinct seed tuples from
// vocab^(j + k) without replacement and extends them. Train samples have
// train_length tokens, val/test samples eval_length.
DatasetSplit MakeSplits(const PosGenSpec& spec, std::int64_t n_train,
                        std::int64_t n_val, std::int64_t n_test,
                        std::uint64_t master_seed);

// Micro-averaged accuracy over positions [L, len) of every sequence. Throws
// std::invalid_argument on shape mismatch or if no position is >= L.
double OodAccuracy(const std::vector<std::vector<Token>>& predicted,
                   const std::vector<std::vector<Token>>& gold,
                   std::int64_t train_length);

bool OracleVerify(const SequenceSample& sample, const PosGenSpec& spec);

// JSONL per split ({"seed": [...], "tokens": [...]}) plus manifest.json.
void WriteDataset(const DatasetSplit& split, const std::filesystem::path& dir);
DatasetSplit ReadDataset(const std::filesystem::path& dir);

}  // namespace resonance::posgen

#endif  // RESONANCE_POSGEN_H_
