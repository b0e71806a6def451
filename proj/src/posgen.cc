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

#include "resonance/posgen.h"

#include <fstream>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "resonance/rng.h"

namespace resonance::posgen {
namespace {

void RequirePositive(int value, const char* name) {
  if (value < 1) {
    throw std::invalid_argument(std::string(name) + " must be positive");
  }
}

// modulus^exponent, or 0 if it does not fit in 63 bits.
std::uint64_t SeedSpaceSize(int modulus, int exponent) {
  std::uint64_t size = 1;
  for (int i = 0; i < exponent; ++i) {
    if (size > (std::uint64_t{1} << 62) / static_cast<std::uint64_t>(modulus)) {
      return 0;
    }
    size *= static_cast<std::uint64_t>(modulus);
  }
  return size;
}

std::vector<Token> DecodeSeed(std::uint64_t index, int modulus, int length) {
  std::vector<Token> seed(length);
  for (int i = length - 1; i >= 0; --i) {
    seed[i] = static_cast<Token>(index % static_cast<std::uint64_t>(modulus));
    index /= static_cast<std::uint64_t>(modulus);
  }
  return seed;
}

std::vector<SequenceSample> ReadJsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<SequenceSample> samples;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    samples.push_back({j.at("tokens").get<std::vector<Token>>()});
  }
  return samples;
}

void WriteJsonl(const std::vector<SequenceSample>& samples,
                const PosGenSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& s : samples) {
    const auto seed = s.seed(spec);
    nlohmann::json j = {{"seed", std::vector<Token>(seed.begin(), seed.end())},
                        {"tokens", s.tokens}};
    out << j.dump() << '\n';
  }
}

}  // namespace

std::string ToString(Subtask subtask) {
  switch (subtask) {
    case Subtask::kRecursive:
      return "recursive";
    case Subtask::kCot:
      return "cot";
    case Subtask::kSemiRecursive:
      return "semi_recursive";
  }
  return "recursive";
}

Subtask ParseSubtask(const std::string& name) {
  if (name == "recursive") return Subtask::kRecursive;
  if (name == "cot") return Subtask::kCot;
  if (name == "semi_recursive" || name == "semi-recursive" || name == "semi") {
    return Subtask::kSemiRecursive;
  }
  throw std::invalid_argument("unknown subtask: " + name);
}

void PosGenSpec::Validate() const {
  RequirePositive(j, "j");
  RequirePositive(k, "k");
  RequirePositive(modulus, "modulus");
  if (vocab_size != modulus) {
    throw std::invalid_argument("vocab_size must equal modulus");
  }
  if (!(j + k <= train_length && train_length < eval_length)) {
    throw std::invalid_argument("need j + k <= train_length < eval_length");
  }
}

nlohmann::json ToJson(const PosGenSpec& spec) {
  return {{"subtask", ToString(spec.subtask)},
          {"j", spec.j},
          {"k", spec.k},
          {"modulus", spec.modulus},
          {"vocab_size", spec.vocab_size},
          {"train_length", spec.train_length},
          {"eval_length", spec.eval_length},
          {"semi_variant", spec.semi_variant == SemiVariant::kLiteral
                               ? "literal"
                               : "varying"}};
}

PosGenSpec PosGenSpecFromJson(const nlohmann::json& j) {
  PosGenSpec spec;
  spec.subtask = ParseSubtask(j.value("subtask", std::string("recursive")));
  spec.j = j.value("j", 1);
  spec.k = j.value("k", 3);
  spec.modulus = j.value("modulus", 17);
  spec.vocab_size = j.value("vocab_size", spec.modulus);
  spec.train_length = j.value("train_length", std::int64_t{64});
  spec.eval_length = j.value("eval_length", std::int64_t{256});
  const std::string variant = j.value("semi_variant", std::string("varying"));
  if (variant == "literal") {
    spec.semi_variant = SemiVariant::kLiteral;
  } else if (variant != "varying") {
    throw std::invalid_argument("semi_variant must be varying or literal");
  }
  spec.Validate();
  return spec;
}

std::int64_t SemiFrontIndex(const PosGenSpec& spec, std::int64_t l) {
  const std::int64_t span = spec.j + spec.k;
  std::int64_t a = 0;
  if (spec.semi_variant == SemiVariant::kVaryingDistance) {
    a = (l - span) / 2 - spec.j;
  } else {
    a = l - (span + 1) / 2 - spec.j;
  }
  return std::max<std::int64_t>(a, 0);
}

std::vector<std::int64_t> StepDependencies(const PosGenSpec& spec,
                                           std::int64_t l) {
  if (l < spec.seed_length()) {
    throw std::invalid_argument("step rule needs l >= j + k");
  }
  std::vector<std::int64_t> deps;
  deps.reserve(spec.seed_length());
  switch (spec.subtask) {
    case Subtask::kRecursive:
      for (std::int64_t p = l - spec.seed_length(); p < l; ++p) {
        deps.push_back(p);
      }
      return deps;
    case Subtask::kCot:
      for (std::int64_t p = 0; p < spec.j; ++p) deps.push_back(p);
      break;
    case Subtask::kSemiRecursive: {
      const std::int64_t a = SemiFrontIndex(spec, l);
      for (std::int64_t p = a; p < a + spec.j; ++p) deps.push_back(p);
      break;
    }
  }
  for (std::int64_t p = l - spec.k; p < l; ++p) deps.push_back(p);
  return deps;
}

Token StepRule(const PosGenSpec& spec, std::span<const Token> prefix,
               std::int64_t l) {
  if (static_cast<std::int64_t>(prefix.size()) < l) {
    throw std::invalid_argument("prefix shorter than l");
  }
  std::int64_t sum = 0;
  for (std::int64_t p : StepDependencies(spec, l)) sum += prefix[p];
  return static_cast<Token>(sum % spec.modulus);
}

SequenceSample GenerateSequence(const PosGenSpec& spec,
                                std::span<const Token> seed,
                                std::int64_t length) {
  if (static_cast<int>(seed.size()) != spec.seed_length()) {
    throw std::invalid_argument("seed must have j + k tokens");
  }
  if (length < spec.seed_length()) {
    throw std::invalid_argument("length must be >= j + k");
  }
  for (Token t : seed) {
    if (t < 0 || t >= spec.vocab_size) {
      throw std::invalid_argument("seed token outside vocabulary");
    }
  }
  SequenceSample sample;
  sample.tokens.assign(seed.begin(), seed.end());
  sample.tokens.reserve(length);
  for (std::int64_t l = spec.seed_length(); l < length; ++l) {
    sample.tokens.push_back(StepRule(spec, sample.tokens, l));
  }
  return sample;
}

DatasetSplit MakeSplits(const PosGenSpec& spec, std::int64_t n_train,
                        std::int64_t n_val, std::int64_t n_test,
                        std::uint64_t master_seed) {
  spec.Validate();
  if (n_train < 0 || n_val < 0 || n_test < 0) {
    throw std::invalid_argument("sample counts must be non-negative");
  }
  const auto total = static_cast<std::uint64_t>(n_train + n_val + n_test);
  const std::uint64_t space = SeedSpaceSize(spec.vocab_size, spec.seed_length());
  if (space != 0 && total > space) {
    throw std::invalid_argument(
        "requested " + std::to_string(total) + " samples but only " +
        std::to_string(space) + " distinct seeds exist");
  }

  CounterRng rng = CounterRng(master_seed).Child("seed-draw");
  std::vector<std::vector<Token>> seeds;
  seeds.reserve(total);
  if (space != 0) {
    // Partial Fisher-Yates over the virtual array [0, space).
    std::unordered_map<std::uint64_t, std::uint64_t> swapped;
    auto at = [&](std::uint64_t i) {
      auto it = swapped.find(i);
      return it == swapped.end() ? i : it->second;
    };
    for (std::uint64_t i = 0; i < total; ++i) {
      const std::uint64_t r = i + rng.Below(space - i);
      const std::uint64_t vi = at(i);
      const std::uint64_t vr = at(r);
      swapped[r] = vi;
      swapped[i] = vr;
      seeds.push_back(DecodeSeed(vr, spec.vocab_size, spec.seed_length()));
    }
  } else {
    std::set<std::vector<Token>> seen;
    while (seeds.size() < total) {
      std::vector<Token> seed(spec.seed_length());
      for (auto& t : seed) {
        t = static_cast<Token>(rng.Below(static_cast<std::uint64_t>(spec.vocab_size)));
      }
      if (seen.insert(seed).second) seeds.push_back(std::move(seed));
    }
  }

  DatasetSplit split;
  split.spec = spec;
  split.master_seed = master_seed;
  std::int64_t index = 0;
  auto fill = [&](std::vector<SequenceSample>& out, std::int64_t count,
                  std::int64_t length) {
    out.reserve(count);
    for (std::int64_t i = 0; i < count; ++i, ++index) {
      out.push_back(GenerateSequence(spec, seeds[index], length));
    }
  };
  fill(split.train, n_train, spec.train_length);
  fill(split.val, n_val, spec.eval_length);
  fill(split.test, n_test, spec.eval_length);
  return split;
}

double OodAccuracy(const std::vector<std::vector<Token>>& predicted,
                   const std::vector<std::vector<Token>>& gold,
                   std::int64_t train_length) {
  if (predicted.size() != gold.size()) {
    throw std::invalid_argument("predicted and gold differ in sequence count");
  }
  std::int64_t correct = 0;
  std::int64_t total = 0;
  for (size_t s = 0; s < gold.size(); ++s) {
    if (predicted[s].size() != gold[s].size()) {
      throw std::invalid_argument("predicted and gold differ in length");
    }
    for (size_t p = static_cast<size_t>(std::max<std::int64_t>(train_length, 0));
         p < gold[s].size(); ++p) {
      ++total;
      correct += predicted[s][p] == gold[s][p];
    }
  }
  if (total == 0) {
    throw std::invalid_argument("no positions at or beyond train_length");
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

bool OracleVerify(const SequenceSample& sample, const PosGenSpec& spec) {
  const auto n = static_cast<std::int64_t>(sample.tokens.size());
  if (n < spec.seed_length()) return false;
  for (Token t : sample.tokens) {
    if (t < 0 || t >= spec.vocab_size) return false;
  }
  for (std::int64_t l = spec.seed_length(); l < n; ++l) {
    if (sample.tokens[l] != StepRule(spec, sample.tokens, l)) return false;
  }
  return true;
}

void WriteDataset(const DatasetSplit& split, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  WriteJsonl(split.train, split.spec, dir / "train.jsonl");
  WriteJsonl(split.val, split.spec, dir / "val.jsonl");
  WriteJsonl(split.test, split.spec, dir / "test.jsonl");
  nlohmann::json manifest = {
      {"format", "posgen-jsonl-v1"},
      {"spec", ToJson(split.spec)},
      {"master_seed", split.master_seed},
      {"counts",
       {{"train", split.train.size()},
        {"val", split.val.size()},
        {"test", split.test.size()}}}};
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  out << manifest.dump(2) << '\n';
}

DatasetSplit ReadDataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) {
    throw std::runtime_error("missing manifest.json in " + dir.string());
  }
  const auto manifest = nlohmann::json::parse(in);
  DatasetSplit split;
  split.spec = PosGenSpecFromJson(manifest.at("spec"));
  split.master_seed = manifest.at("master_seed").get<std::uint64_t>();
  split.train = ReadJsonl(dir / "train.jsonl");
  split.val = ReadJsonl(dir / "val.jsonl");
  split.test = ReadJsonl(dir / "test.jsonl");
  return split;
}

}  // namespace resonance::posgen
