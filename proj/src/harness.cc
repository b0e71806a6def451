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

#include "resonance/harness.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "resonance/parallel.h"

namespace resonance::harness {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr posgen::Subtask kAllSubtasks[] = {posgen::Subtask::kRecursive,
                                            posgen::Subtask::kCot,
                                            posgen::Subtask::kSemiRecursive};

// Writes through a temporary so an interrupted run never leaves half a file.
void WriteFileAtomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::optional<json> ReadJson(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    return json::parse(in);
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

std::string FormatNumber(const char* fmt, double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, value);
  return buf;
}

}  // namespace

PeVariant StandardVariant(const std::string& name, double scale_factor,
                          std::int64_t train_length) {
  PeVariant v{name, {}};
  v.spec.train_length = train_length;
  if (name == "rope" || name == "resonance_rope") {
    v.spec.method = ScalingMethod::kNone;
  } else if (name == "yarn" || name == "resonance_yarn") {
    v.spec.method = ScalingMethod::kYarn;
    v.spec.scale_factor = scale_factor;
  } else {
    throw std::invalid_argument("unknown position-encoding variant: " + name);
  }
  v.spec.resonance = name.starts_with("resonance_");
  return v;
}

std::vector<PeVariant> StandardVariants(double scale_factor,
                                        std::int64_t train_length) {
  std::vector<PeVariant> out;
  for (const char* name : {"rope", "yarn", "resonance_rope", "resonance_yarn"}) {
    out.push_back(StandardVariant(name, scale_factor, train_length));
  }
  return out;
}

void ExperimentConfig::Validate() const {
  posgen.Validate();
  model.Validate();
  train.Validate();
  if (subtasks.empty()) throw std::invalid_argument("no subtasks configured");
  if (variants.empty()) throw std::invalid_argument("no variants configured");
  if (seeds.empty()) throw std::invalid_argument("no seeds configured");
  if (n_train < 1 || n_val < 0 || n_test < 1) {
    throw std::invalid_argument("need n_train >= 1, n_val >= 0, n_test >= 1");
  }
  if (model.vocab_size != posgen.vocab_size) {
    throw std::invalid_argument("model vocab_size must equal the PosGen vocabulary");
  }
  if (workers < 1) throw std::invalid_argument("workers must be >= 1");
  std::set<std::string> names;
  for (const auto& v : variants) {
    v.spec.Validate();
    if (v.name.empty() || v.name.find('/') != std::string::npos ||
        !names.insert(v.name).second) {
      throw std::invalid_argument("variant names must be unique path components");
    }
  }
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw std::invalid_argument("duplicate seeds");
  }
}

ExperimentConfig Profile(const std::string& name) {
  ExperimentConfig c;
  c.subtasks.assign(std::begin(kAllSubtasks), std::end(kAllSubtasks));
  c.variants = StandardVariants(4.0, c.posgen.train_length);
  c.model.max_positions = c.posgen.eval_length;
  c.workers = DefaultWorkerCount();
  if (name == "paper") {
    c.seeds = {1, 2, 3, 4, 5};
    c.output_dir = "runs/paper";
  } else if (name == "reduced") {
    c.model.d_model = 128;
    c.model.n_heads = 2;
    c.model.ffn_dim = 512;
    c.train.epochs = 40;
    c.seeds = {1, 2, 3};
    c.output_dir = "runs/reduced";
  } else {
    throw std::invalid_argument("unknown profile: " + name);
  }
  return c;
}

json ToJson(const ExperimentConfig& c) {
  json subtasks = json::array();
  for (auto s : c.subtasks) subtasks.push_back(posgen::ToString(s));
  json variants = json::array();
  for (const auto& v : c.variants) {
    variants.push_back({{"name", v.name}, {"spec", ToJson(v.spec)}});
  }
  json model = ToJson(c.model);
  model.erase("pe");
  json train = ToJson(c.train);
  train.erase("seed");
  json posgen = ToJson(c.posgen);
  posgen.erase("subtask");
  return {{"posgen", posgen},
          {"subtasks", subtasks},
          {"counts", {{"train", c.n_train}, {"val", c.n_val}, {"test", c.n_test}}},
          {"data_seed", c.data_seed},
          {"model", model},
          {"train", train},
          {"variants", variants},
          {"seeds", c.seeds},
          {"output_dir", c.output_dir.string()},
          {"workers", c.workers},
          {"autoregressive_eval", c.autoregressive_eval}};
}

ExperimentConfig ExperimentConfigFromJson(const json& patch,
                                          const ExperimentConfig& base) {
  json j = ToJson(base);
  j.merge_patch(patch);
  ExperimentConfig c;
  c.posgen = posgen::PosGenSpecFromJson(j.at("posgen"));
  c.subtasks.clear();
  for (const auto& s : j.at("subtasks")) {
    c.subtasks.push_back(posgen::ParseSubtask(s.get<std::string>()));
  }
  c.n_train = j.at("counts").at("train").get<std::int64_t>();
  c.n_val = j.at("counts").at("val").get<std::int64_t>();
  c.n_test = j.at("counts").at("test").get<std::int64_t>();
  c.data_seed = j.at("data_seed").get<std::uint64_t>();
  c.model = tinyformer::ModelConfigFromJson(j.at("model"));
  c.train = tinyformer::TrainConfigFromJson(j.at("train"));
  // Bare names select a standard variant at this scale factor.
  const double scale = patch.value("scale_factor", 4.0);
  for (const auto& v : j.at("variants")) {
    if (v.is_string()) {
      c.variants.push_back(
          StandardVariant(v.get<std::string>(), scale, c.posgen.train_length));
      continue;
    }
    json spec = v.at("spec");
    if (!spec.contains("train_length")) spec["train_length"] = c.posgen.train_length;
    c.variants.push_back({v.at("name").get<std::string>(), ScalingSpecFromJson(spec)});
  }
  c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  c.output_dir = j.at("output_dir").get<std::string>();
  c.workers = j.at("workers").get<int>();
  c.autoregressive_eval = j.at("autoregressive_eval").get<bool>();
  c.Validate();
  return c;
}

ExperimentConfig LoadExperimentConfig(const fs::path& path) {
  const auto j = ReadJson(path);
  if (!j || !j->is_object()) {
    throw std::runtime_error("cannot read experiment config " + path.string());
  }
  const std::string profile = j->value("profile", std::string("paper"));
  json patch = *j;
  patch.erase("profile");
  return ExperimentConfigFromJson(patch, Profile(profile));
}

json ToJson(const RunSpec& r) {
  return {{"variant", r.variant},
          {"posgen", ToJson(r.posgen)},
          {"counts", {{"train", r.n_train}, {"val", r.n_val}, {"test", r.n_test}}},
          {"data_seed", r.data_seed},
          {"model", ToJson(r.model)},
          {"train", ToJson(r.train)},
          {"autoregressive_eval", r.autoregressive_eval}};
}

RunSpec RunSpecFromJson(const json& j) {
  RunSpec r;
  r.variant = j.at("variant").get<std::string>();
  r.posgen = posgen::PosGenSpecFromJson(j.at("posgen"));
  r.n_train = j.at("counts").at("train").get<std::int64_t>();
  r.n_val = j.at("counts").at("val").get<std::int64_t>();
  r.n_test = j.at("counts").at("test").get<std::int64_t>();
  r.data_seed = j.at("data_seed").get<std::uint64_t>();
  r.model = tinyformer::ModelConfigFromJson(j.at("model"));
  r.train = tinyformer::TrainConfigFromJson(j.at("train"));
  r.autoregressive_eval = j.value("autoregressive_eval", false);
  return r;
}

std::vector<RunSpec> ExpandGrid(const ExperimentConfig& config) {
  config.Validate();
  std::vector<RunSpec> out;
  for (const auto& variant : config.variants) {
    for (auto subtask : config.subtasks) {
      for (auto seed : config.seeds) {
        RunSpec r;
        r.variant = variant.name;
        r.posgen = config.posgen;
        r.posgen.subtask = subtask;
        r.n_train = config.n_train;
        r.n_val = config.n_val;
        r.n_test = config.n_test;
        r.data_seed = config.data_seed;
        r.model = config.model;
        r.model.pe = variant.spec;
        r.train = config.train;
        r.train.seed = seed;
        r.autoregressive_eval = config.autoregressive_eval;
        out.push_back(std::move(r));
      }
    }
  }
  return out;
}

fs::path RunDirectory(const fs::path& output_dir, const RunSpec& run) {
  return output_dir / "runs" / run.variant / posgen::ToString(run.posgen.subtask) /
         ("seed-" + std::to_string(run.train.seed));
}

posgen::DatasetSplit PrepareDataset(const RunSpec& run, const fs::path& output_dir) {
  const fs::path dir = output_dir / "data" / posgen::ToString(run.posgen.subtask);
  if (const auto manifest = ReadJson(dir / "manifest.json")) {
    try {
      auto cached = posgen::ReadDataset(dir);
      if (cached.spec == run.posgen && cached.master_seed == run.data_seed &&
          std::ssize(cached.train) == run.n_train &&
          std::ssize(cached.val) == run.n_val &&
          std::ssize(cached.test) == run.n_test) {
        return cached;
      }
    } catch (const std::exception&) {
      // regenerate below
    }
  }
  auto split = posgen::MakeSplits(run.posgen, run.n_train, run.n_val,
                                  run.n_test, run.data_seed);
  posgen::WriteDataset(split, dir);
  return split;
}

RunOutcome ExecuteRun(const RunSpec& run, const fs::path& dir,
                      const posgen::DatasetSplit* dataset) {
  RunOutcome outcome;
  const fs::path manifest_path = dir / "manifest.json";
  const json run_json = ToJson(run);
  const json artifacts = {{"metrics", "metrics.jsonl"},
                          {"checkpoint", "checkpoint.json"},
                          {"checkpoint_blob", "checkpoint.bin"},
                          {"eval", "eval.json"}};
  if (const auto previous = ReadJson(manifest_path)) {
    bool intact = previous->value("status", "") == "complete" &&
                  previous->contains("run") && previous->at("run") == run_json;
    for (const auto& [key, file] : artifacts.items()) {
      intact = intact && fs::exists(dir / file.get<std::string>());
    }
    if (intact) {
      outcome.status = RunOutcome::Status::kSkipped;
      outcome.test_ood_accuracy =
          previous->at("results").at("test_ood_accuracy").get<double>();
      return outcome;
    }
  }

  fs::create_directories(dir);
  json manifest = {{"tool_version", kToolVersion},
                   {"status", "running"},
                   {"run", run_json},
                   {"artifacts", artifacts}};
  WriteFileAtomic(manifest_path, manifest.dump(2) + "\n");
  try {
    posgen::DatasetSplit generated;
    if (dataset == nullptr) {
      generated = posgen::MakeSplits(run.posgen, run.n_train, run.n_val,
                                     run.n_test, run.data_seed);
      dataset = &generated;
    }
    if (!(dataset->spec == run.posgen)) {
      throw std::invalid_argument("dataset does not match the run's PosGen spec");
    }
    std::ofstream metrics(dir / "metrics.jsonl", std::ios::trunc);
    const auto result = tinyformer::Train(
        run.model, run.train, *dataset, [&](const tinyformer::EpochMetrics& m) {
          metrics << tinyformer::ToJson(m).dump() << '\n';
          metrics.flush();
        });
    metrics.close();

    const auto& epochs = result.metrics.epochs;
    const int best = result.metrics.best_epoch;
    json summary = {{"best_epoch", best}, {"epochs_run", epochs.size()}};
    if (best > 0) {
      summary["best_val_loss"] = epochs[best - 1].val_loss;
      summary["best_val_ood_accuracy"] = epochs[best - 1].val_ood_accuracy;
    }
    tinyformer::SaveCheckpoint(dir / "checkpoint.json", run.model, result.params,
                               summary);

    const tinyformer::Transformer<float> model(run.model);
    const auto report = tinyformer::Evaluate(
        model, result.params, dataset->test, run.posgen.train_length,
        run.posgen.seed_length(), run.autoregressive_eval);
    json eval = tinyformer::ToJson(report);
    eval["split"] = "test";
    eval["autoregressive"] = run.autoregressive_eval;
    WriteFileAtomic(dir / "eval.json", eval.dump(2) + "\n");

    summary["test_ood_accuracy"] = report.ood_accuracy;
    summary["test_loss"] = report.loss;
    manifest["status"] = "complete";
    manifest["results"] = summary;
    WriteFileAtomic(manifest_path, manifest.dump(2) + "\n");
    outcome.status = RunOutcome::Status::kComplete;
    outcome.test_ood_accuracy = report.ood_accuracy;
  } catch (const std::exception& e) {
    manifest["status"] = "failed";
    manifest["error"] = e.what();
    WriteFileAtomic(manifest_path, manifest.dump(2) + "\n");
    outcome.status = RunOutcome::Status::kFailed;
    outcome.error = e.what();
  }
  return outcome;
}

GridSummary RunGrid(const ExperimentConfig& config, std::ostream* log) {
  const auto cells = ExpandGrid(config);
  fs::create_directories(config.output_dir);
  WriteFileAtomic(config.output_dir / "config.json", ToJson(config).dump(2) + "\n");

  std::map<posgen::Subtask, posgen::DatasetSplit> datasets;
  for (const auto& cell : cells) {
    if (!datasets.contains(cell.posgen.subtask)) {
      datasets.emplace(cell.posgen.subtask, PrepareDataset(cell, config.output_dir));
    }
  }

  GridSummary summary;
  std::mutex mu;
  ParallelFor(std::ssize(cells), config.workers, [&](std::int64_t i) {
    const auto& cell = cells[i];
    const fs::path dir = RunDirectory(config.output_dir, cell);
    const auto outcome = ExecuteRun(cell, dir, &datasets.at(cell.posgen.subtask));
    std::lock_guard lock(mu);
    const std::string label = fs::relative(dir, config.output_dir).string();
    switch (outcome.status) {
      case RunOutcome::Status::kSkipped:
        ++summary.skipped;
        if (log) *log << "skip  " << label << '\n';
        break;
      case RunOutcome::Status::kComplete:
        ++summary.completed;
        if (log) {
          *log << "done  " << label << "  test OOD accuracy "
               << FormatNumber("%.4f", outcome.test_ood_accuracy) << '\n';
        }
        break;
      case RunOutcome::Status::kFailed:
        summary.failures.push_back(label + ": " + outcome.error);
        if (log) *log << "FAIL  " << label << ": " << outcome.error << '\n';
        break;
    }
    if (log) log->flush();
  });
  WriteReport(config.output_dir);
  return summary;
}

ReportSummary WriteReport(const fs::path& dir) {
  ReportSummary summary;
  struct Run {
    std::uint64_t seed;
    double ood;
    std::vector<tinyformer::EpochMetrics> epochs;
  };
  // variant -> subtask -> seed-ordered runs
  std::map<std::string, std::map<posgen::Subtask, std::map<std::uint64_t, Run>>> found;

  const fs::path runs_dir = dir / "runs";
  if (fs::is_directory(runs_dir)) {
    for (const auto& entry : fs::recursive_directory_iterator(runs_dir)) {
      if (entry.path().filename() != "manifest.json") continue;
      const auto manifest = ReadJson(entry.path());
      if (!manifest || manifest->value("status", "") != "complete") continue;
      try {
        const RunSpec spec = RunSpecFromJson(manifest->at("run"));
        Run run{spec.train.seed,
                manifest->at("results").at("test_ood_accuracy").get<double>(),
                {}};
        std::ifstream metrics(entry.path().parent_path() / "metrics.jsonl");
        for (std::string line; std::getline(metrics, line);) {
          if (!line.empty()) {
            run.epochs.push_back(tinyformer::EpochMetricsFromJson(json::parse(line)));
          }
        }
        found[spec.variant][spec.posgen.subtask][spec.train.seed] = std::move(run);
        ++summary.runs;
      } catch (const std::exception& e) {
        summary.warnings.push_back("unreadable run " + entry.path().string() +
                                   ": " + e.what());
      }
    }
  }

  // Expected grid, when the directory carries its config.
  std::vector<std::string> rows;
  std::vector<posgen::Subtask> expected_subtasks;
  std::vector<std::uint64_t> expected_seeds;
  if (const auto config = ReadJson(dir / "config.json")) {
    for (const auto& v : config->at("variants")) {
      rows.push_back(v.is_string() ? v.get<std::string>()
                                   : v.at("name").get<std::string>());
    }
    for (const auto& s : config->at("subtasks")) {
      expected_subtasks.push_back(posgen::ParseSubtask(s.get<std::string>()));
    }
    expected_seeds = config->at("seeds").get<std::vector<std::uint64_t>>();
  } else {
    for (const char* name : {"rope", "yarn", "resonance_rope", "resonance_yarn"}) {
      if (found.contains(name)) rows.push_back(name);
    }
  }
  for (const auto& [name, unused] : found) {
    if (std::find(rows.begin(), rows.end(), name) == rows.end()) rows.push_back(name);
  }
  if (summary.runs == 0) summary.warnings.push_back("no complete runs under " + dir.string());

  std::ostringstream table;
  table << "pe";
  for (auto s : kAllSubtasks) {
    table << ',' << posgen::ToString(s) << "_mean," << posgen::ToString(s) << "_std,"
          << posgen::ToString(s) << "_n";
  }
  table << ",gaps\n";
  std::ostringstream curves;
  curves << "pe,subtask,seed,epoch,train_loss,val_loss,val_ood_accuracy\n";

  for (const auto& row : rows) {
    table << row;
    std::vector<std::string> gaps;
    for (auto subtask : kAllSubtasks) {
      std::vector<double> values;
      const auto v = found.find(row);
      const std::map<std::uint64_t, Run>* seeds = nullptr;
      if (v != found.end() && v->second.contains(subtask)) seeds = &v->second.at(subtask);
      if (seeds) {
        for (const auto& [seed, run] : *seeds) values.push_back(run.ood * 100.0);
      }
      if (std::find(expected_subtasks.begin(), expected_subtasks.end(), subtask) !=
          expected_subtasks.end()) {
        for (auto seed : expected_seeds) {
          if (!seeds || !seeds->contains(seed)) {
            gaps.push_back(posgen::ToString(subtask) + "/seed-" + std::to_string(seed));
          }
        }
      }
      if (values.empty()) {
        table << ",,,0";
        continue;
      }
      double mean = 0.0;
      for (double x : values) mean += x;
      mean /= static_cast<double>(values.size());
      double var = 0.0;
      for (double x : values) var += (x - mean) * (x - mean);
      var /= static_cast<double>(values.size());
      table << ',' << FormatNumber("%.2f", mean) << ','
            << FormatNumber("%.2f", std::sqrt(var)) << ',' << values.size();

      for (const auto& [seed, run] : *seeds) {
        for (const auto& m : run.epochs) {
          curves << row << ',' << posgen::ToString(subtask) << ',' << seed << ','
                 << m.epoch << ',' << FormatNumber("%.8g", m.train_loss) << ','
                 << FormatNumber("%.8g", m.val_loss) << ','
                 << FormatNumber("%.8g", m.val_ood_accuracy) << '\n';
        }
      }
    }
    std::string joined;
    for (const auto& g : gaps) joined += (joined.empty() ? "" : " ") + g;
    if (!gaps.empty()) {
      summary.warnings.push_back(row + " is missing " + std::to_string(gaps.size()) +
                                 " run(s)");
    }
    table << ',' << joined << '\n';
  }

  fs::create_directories(dir);
  WriteFileAtomic(dir / "ood_table.csv", table.str());
  WriteFileAtomic(dir / "loss_curves.csv", curves.str());
  return summary;
}

void TuneAllocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

}  // namespace resonance::harness
