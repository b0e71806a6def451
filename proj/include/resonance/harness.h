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

#ifndef RESONANCE_HARNESS_H_
#define RESONANCE_HARNESS_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "resonance/model.h"
#include "resonance/posgen.h"
#include "resonance/scaling.h"
#include "resonance/trainer.h"

namespace resonance::harness {

inline constexpr char kToolVersion[] = "resonance-lab 0.3.0";

// A named position-encoding variant, e.g. "resonance_yarn".
struct PeVariant {
  std::string name;
  ScalingSpec spec;

  bool operator==(const PeVariant&) const = default;
};

// The four encodings compared in the synthetic experiments, each with the
// given scale factor and training length.
std::vector<PeVariant> StandardVariants(double scale_factor,
                                        std::int64_t train_length);
// One of rope, yarn, resonance_rope, resonance_yarn.
PeVariant StandardVariant(const std::string& name, double scale_factor,
                          std::int64_t train_length);

struct ExperimentConfig {
  // Subtask is set per grid cell; everything else applies to all cells.
  posgen::PosGenSpec posgen;
  std::vector<posgen::Subtask> subtasks;
  std::int64_t n_train = 10000;
  std::int64_t n_val = 1000;
  std::int64_t n_test = 1000;
  // Datasets are fixed per subtask; run seeds vary initialization and
  // shuffling only.
  std::uint64_t data_seed = 20240101;
  tinyformer::ModelConfig model;  // pe is replaced by each variant
  tinyformer::TrainConfig train;  // seed is replaced by each run seed
  std::vector<PeVariant> variants;
  std::vector<std::uint64_t> seeds;
  std::filesystem::path output_dir = "runs/paper";
  int workers = 1;
  bool autoregressive_eval = false;

  void Validate() const;
};

// "paper": 10000/1000/1000 sequences, L = 64, L' = 256, d_model 512 (8 x 64),
// ffn 2048, 150 epochs, 5 seeds, s = 4.
// "reduced": the same grid at d_model 128 (2 x 64), ffn 512, 40 epochs,
// 3 seeds.
ExperimentConfig Profile(const std::string& name);

nlohmann::json ToJson(const ExperimentConfig& config);
// Keys absent from `json` keep the values of `base`.
ExperimentConfig ExperimentConfigFromJson(const nlohmann::json& json,
                                          const ExperimentConfig& base);
ExperimentConfig LoadExperimentConfig(const std::filesystem::path& path);

// One grid cell.
struct RunSpec {
  std::string variant;
  posgen::PosGenSpec posgen;
  std::int64_t n_train = 0;
  std::int64_t n_val = 0;
  std::int64_t n_test = 0;
  std::uint64_t data_seed = 0;
  tinyformer::ModelConfig model;
  tinyformer::TrainConfig train;
  bool autoregressive_eval = false;

  bool operator==(const RunSpec&) const = default;
};

nlohmann::json ToJson(const RunSpec& run);
RunSpec RunSpecFromJson(const nlohmann::json& json);

// Cells in variant-major, then subtask, then seed order.
std::vector<RunSpec> ExpandGrid(const ExperimentConfig& config);

// <output_dir>/runs/<variant>/<subtask>/seed-<seed>
std::filesystem::path RunDirectory(const std::filesystem::path& output_dir,
                                   const RunSpec& run);

struct RunOutcome {
  enum class Status { kComplete, kSkipped, kFailed };
  Status status = Status::kFailed;
  std::string error;
  double test_ood_accuracy = 0.0;
};

// Trains and evaluates one cell in `dir`, writing manifest.json (status,
// resolved RunSpec, artifact paths), metrics.jsonl, checkpoint.json/.bin and
// eval.json. A cell whose manifest is complete for an identical RunSpec is
// skipped.
RunOutcome ExecuteRun(const RunSpec& run, const std::filesystem::path& dir,
                      const posgen::DatasetSplit* dataset = nullptr);

// Dataset for the cell's subtask; cached under <output_dir>/data/<subtask>.
posgen::DatasetSplit PrepareDataset(const RunSpec& run,
                                    const std::filesystem::path& output_dir);

struct GridSummary {
  int completed = 0;
  int skipped = 0;
  std::vector<std::string> failures;  // "<run dir>: <error>"
};

// Runs every cell on a worker pool, then writes the report. Failed cells do
// not stop the grid.
GridSummary RunGrid(const ExperimentConfig& config,
                    std::ostream* log = nullptr);

struct ReportSummary {
  int runs = 0;
  std::vector<std::string> warnings;
};

// Aggregates complete runs under `dir` into ood_table.csv (rows: variants;
// columns: mean and population std of test OOD accuracy in percent per
// subtask, then `gaps`) and loss_curves.csv (per run and epoch). Output
// contains no timing data and is byte-stable for identical runs.
ReportSummary WriteReport(const std::filesystem::path& dir);

// Keeps freed memory inside the process; large per-batch activations
// otherwise go back to the kernel after every step.
void TuneAllocator();

}  // namespace resonance::harness

#endif  // RESONANCE_HARNESS_H_
