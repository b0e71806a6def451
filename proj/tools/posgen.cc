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

// posgen: standalone dataset generator.
#include <exception>
#include <iostream>

#include "gen_command.h"

int main(int argc, char** argv) {
  CLI::App app{"PosGen synthetic sequence generator"};
  app.require_subcommand(1);
  resonance::tools::GenOptions options;
  auto* gen = resonance::tools::AddGenCommand(app, options);
  CLI11_PARSE(app, argc, argv);
  try {
    if (gen->parsed()) return resonance::tools::RunGen(options);
  } catch (const std::exception& e) {
    std::cerr << "posgen: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
