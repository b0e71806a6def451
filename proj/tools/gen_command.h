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

#ifndef RESONANCE_TOOLS_GEN_COMMAND_H_
#define RESONANCE_TOOLS_GEN_COMMAND_H_

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "resonance/posgen.h"

namespace resonance::tools {

struct GenOptions {
  std::string subtask = "recursive";
  int j = 1;
  int k = 3;
  int modulus = 17;
  std::int64_t train_length = 64;
  std::int64_t eval_length = 256;
  std::vector<std::int64_t> counts = {10000, 1000, 1000};
  std::uint64_t seed = 0;
  std::string out;
  std::string semi_variant = "varying";
};

inline CLI::App* AddGenCommand(CLI::App& app, GenOptions& o) {
  auto* gen = app.add_subcommand("gen", "Generate a PosGen dataset (JSONL + manifest)");
  gen->add_option("--subtask", o.subtask, "recursive | cot | semi_recursive")
      ->capture_default_str();
  gen->add_option("--j", o.j, "front-token count")->capture_default_str();
  gen->add_option("--k", o.k, "local-token count")->capture_default_str();
  gen->add_option("--mod", o.modulus, "modulus (and vocabulary size)")
      ->capture_default_str();
  gen->add_option("--train-len", o.train_length)->capture_default_str();
  gen->add_option("--eval-len", o.eval_length)->capture_default_str();
  gen->add_option("--counts", o.counts, "train,val,test")
      ->delimiter(',')
      ->expected(3)
      ->capture_default_str();
  gen->add_option("--seed", o.seed, "master seed")->capture_default_str();
  gen->add_option("--out", o.out, "output directory")->required();
  gen->add_option("--semi-variant", o.semi_variant,
                  "varying (default) or literal front-index formula")
      ->check(CLI::IsMember({"varying", "literal"}));
  return gen;
}

inline int RunGen(const GenOptions& o) {
  posgen::PosGenSpec spec;
  spec.subtask = posgen::ParseSubtask(o.subtask);
  spec.j = o.j;
  spec.k = o.k;
  spec.modulus = o.modulus;
  spec.vocab_size = o.modulus;
  spec.train_length = o.train_length;
  spec.eval_length = o.eval_length;
  spec.semi_variant = o.semi_variant == "literal" ? posgen::SemiVariant::kLiteral
                                                  : posgen::SemiVariant::kVaryingDistance;
  const auto split =
      posgen::MakeSplits(spec, o.counts[0], o.counts[1], o.counts[2], o.seed);
  posgen::WriteDataset(split, o.out);
  std::cout << "wrote " << split.train.size() << "/" << split.val.size() << "/"
            << split.test.size() << " " << o.subtask << " sequences to " << o.out
            << '\n';
  return 0;
}

}  // namespace resonance::tools

#endif  // RESONANCE_TOOLS_GEN_COMMAND_H_
