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

// resonance_lab: schedule analysis, PosGen data, training and the
// reproduction grid.
#include <algorithm>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gen_command.h"
#include "resonance/gap_metrics.h"
#include "resonance/harness.h"
#include "resonance/parallel.h"
#include "resonance/rope.h"
#include "resonance/scaling.h"
#include "resonance/trainer.h"

namespace {

namespace fs = std::filesystem;
using namespace resonance;
using nlohmann::json;

std::string Fmt(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

std::string TraceString(const ThetaSchedule& s) {
  if (s.scaling_trace().empty()) return "rope";
  std::string out;
  for (const auto& step : s.scaling_trace()) {
    if (!out.empty()) out += " -> ";
    out += step.method;
    if (!step.params.empty()) {
      out += "(";
      bool first = true;
      for (const auto& [k, v] : step.params) {
        out += (first ? "" : ", ") + k + "=" + Fmt("%g", v);
        first = false;
      }
      out += ")";
    }
  }
  return out;
}

// ---- analyze ---------------------------------------------------------------

struct AnalyzeOptions {
  int d = 128;
  double b = 10000;
  std::int64_t L = 0;
  std::int64_t L_prime = 0;
  std::string method = "none";
  double scale = 1.0;
  double alpha = 1.0;
  double beta = 32.0;
  bool resonance = false;
  std::string resonance_order = "after";
  std::optional<double> attention_scale;
  std::int64_t current_length = 0;
  std::string json_out;
  bool force_sorted = false;
};

int RunAnalyze(const AnalyzeOptions& o) {
  ScalingSpec spec;
  spec.method = ParseScalingMethod(o.method);
  spec.scale_factor = o.scale;
  spec.train_length = o.L;
  spec.alpha = o.alpha;
  spec.beta = o.beta;
  spec.resonance = o.resonance;
  spec.attention_scale = o.attention_scale;
  spec.resonance_order = o.resonance_order == "before" ? ResonanceOrder::kBeforeScaling
                                                       : ResonanceOrder::kAfterScaling;
  spec.Validate();
  const std::int64_t L_prime = o.L_prime > 0 ? o.L_prime : 4 * o.L;
  std::optional<std::int64_t> current;
  if (spec.method == ScalingMethod::kDynamicNtk) {
    current = o.current_length > 0 ? o.current_length : L_prime;
  }
  const ThetaSchedule schedule = Compose(spec, o.d, o.b, current);
  const GapReport gaps =
      FeatureGap(schedule, o.L, L_prime, GapMode::kWorstOod, o.force_sorted);
  const CriticalSplit& split = gaps.split;
  double pre_joint = 0.0, post_joint = 0.0;
  for (int i = 0; i < o.d; ++i) {
    double& slot = i < split.pre_critical_dims() ? pre_joint : post_joint;
    slot = std::max(slot, gaps.per_dim_joint_gap[i]);
  }

  std::ostream& out = std::cout;
  out << "schedule      d=" << o.d << "  b=" << Fmt("%g", o.b) << "  "
      << TraceString(schedule) << '\n';
  out << "lengths       L=" << o.L << "  L'=" << L_prime
      << (gaps.exhaustive ? "  (exhaustive)" : "  (sorted search)") << '\n';
  out << "critical      c=" << split.critical_index << ": "
      << split.critical_index << " of " << schedule.num_pairs()
      << " feature pairs pre-critical = " << split.pre_critical_dims() << " of "
      << o.d << " scalar dimensions\n\n";
  out << "  dim  pair      wavelength  region     joint_gap  worst_ood_gap\n";
  for (int i = 0; i < o.d; ++i) {
    const int pair = i / 2;
    const bool pre = pair < split.critical_index;
    std::string wl = schedule.has_integer_wavelengths()
                         ? std::to_string((*schedule.integer_wavelengths())[pair])
                         : Fmt("%.6f", schedule.wavelengths()[pair]);
    out << Fmt("%5.0f", i) << Fmt("%6.0f", pair) << "  " << std::string(14 - std::min<size_t>(14, wl.size()), ' ')
        << wl << "  " << (pre ? "pre " : "post") << "  "
        << Fmt("%12.6e", gaps.per_dim_joint_gap[i]) << "   "
        << Fmt("%12.6e", gaps.per_dim_worst_ood_gap[i]) << '\n';
  }
  out << "\nmax gap          joint          worst_ood\n";
  out << "  pre-critical   " << Fmt("%12.6e", pre_joint) << "   "
      << Fmt("%12.6e", gaps.pre_critical_max_gap) << '\n';
  out << "  post-critical  " << Fmt("%12.6e", post_joint) << "   "
      << Fmt("%12.6e", gaps.post_critical_max_gap) << '\n';

  json doc = {{"schedule", ToJson(schedule)},
              {"scaling_spec", ToJson(spec)},
              {"gaps", ToJson(gaps)},
              {"pre_critical_max_joint_gap", pre_joint},
              {"post_critical_max_joint_gap", post_joint}};
  if (schedule.has_integer_wavelengths()) {
    const BigInt lcm = ResonanceLcm(schedule, split.critical_index);
    const std::string digits = lcm.str();
    out << "\nresonance LCM of the " << split.critical_index
        << " pre-critical wavelengths: " << digits << "  (" << digits.size()
        << " digits, ~" << Fmt("%.4e", static_cast<double>(lcm)) << ")\n";
    doc["resonance_lcm"] = digits;
  }
  if (!o.json_out.empty()) {
    if (o.json_out == "-") {
      std::cout << doc.dump(2) << '\n';
    } else {
      std::ofstream(o.json_out) << doc.dump(2) << '\n';
    }
  }
  return 0;
}

// ---- experiment config plumbing -------------------------------------------

struct GridOptions {
  std::string config;
  std::string profile = "paper";
  std::string output_dir;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> variants;
  std::vector<std::string> subtasks;
  std::vector<std::int64_t> counts;
  int epochs = -1;
  int workers = 0;
  int d_model = 0;
  int n_heads = 0;
  int head_dim = 0;
  int ffn_dim = 0;
  double scale = 0;
  double lr = 0;
  bool autoregressive = false;
};

void AddGridOptions(CLI::App* cmd, GridOptions& o) {
  cmd->add_option("--config", o.config, "experiment JSON (flags below override it)");
  cmd->add_option("--profile", o.profile, "paper | reduced (base for --config too)")
      ->check(CLI::IsMember({"paper", "reduced"}))
      ->capture_default_str();
  cmd->add_option("--output-dir", o.output_dir);
  cmd->add_option("--seeds", o.seeds)->delimiter(',');
  cmd->add_option("--variants", o.variants,
                  "rope, yarn, resonance_rope, resonance_yarn")->delimiter(',');
  cmd->add_option("--subtasks", o.subtasks)->delimiter(',');
  cmd->add_option("--counts", o.counts, "train,val,test")->delimiter(',')->expected(3);
  cmd->add_option("--epochs", o.epochs);
  cmd->add_option("--workers", o.workers);
  cmd->add_option("--d-model", o.d_model);
  cmd->add_option("--n-heads", o.n_heads);
  cmd->add_option("--head-dim", o.head_dim);
  cmd->add_option("--ffn-dim", o.ffn_dim);
  cmd->add_option("--scale", o.scale, "scale factor of the standard variants");
  cmd->add_option("--lr", o.lr);
  cmd->add_flag("--autoregressive", o.autoregressive,
                "evaluate by greedy generation past L instead of teacher forcing");
}

harness::ExperimentConfig ResolveConfig(const GridOptions& o) {
  json patch = json::object();
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw std::runtime_error("cannot open " + o.config);
    patch = json::parse(in);
  }
  const std::string profile =
      patch.contains("profile") ? patch["profile"].get<std::string>() : o.profile;
  patch.erase("profile");
  if (!o.output_dir.empty()) patch["output_dir"] = o.output_dir;
  if (!o.seeds.empty()) patch["seeds"] = o.seeds;
  if (o.scale > 0) patch["scale_factor"] = o.scale;
  if (!o.variants.empty()) patch["variants"] = o.variants;
  if (!o.subtasks.empty()) patch["subtasks"] = o.subtasks;
  if (!o.counts.empty()) {
    patch["counts"] = {{"train", o.counts[0]}, {"val", o.counts[1]}, {"test", o.counts[2]}};
  }
  if (o.epochs >= 0) patch["train"]["epochs"] = o.epochs;
  if (o.lr > 0) patch["train"]["learning_rate"] = o.lr;
  if (o.workers > 0) patch["workers"] = o.workers;
  if (o.d_model > 0) patch["model"]["d_model"] = o.d_model;
  if (o.n_heads > 0) patch["model"]["n_heads"] = o.n_heads;
  if (o.head_dim > 0) patch["model"]["head_dim"] = o.head_dim;
  if (o.ffn_dim > 0) patch["model"]["ffn_dim"] = o.ffn_dim;
  if (o.autoregressive) patch["autoregressive_eval"] = true;
  // A scale factor given without variants re-derives the standard ones.
  if (patch.contains("scale_factor") && !patch.contains("variants")) {
    json names = json::array();
    for (const auto& v : harness::Profile(profile).variants) names.push_back(v.name);
    patch["variants"] = names;
  }
  auto config = harness::ExperimentConfigFromJson(patch, harness::Profile(profile));
  config.workers = std::min(config.workers, DefaultWorkerCount());
  return config;
}

int PrintReport(const fs::path& dir, const harness::ReportSummary& r) {
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
  std::ifstream table(dir / "ood_table.csv");
  std::cout << "\n" << (dir / "ood_table.csv").string() << ":\n" << table.rdbuf();
  return 0;
}

// ---- train / eval ------------------------------------------------------------

struct TrainOptions {
  GridOptions grid;
  std::string variant;
  std::string subtask;
  std::uint64_t seed = 1;
  std::string out;
  std::string manifest;
};

int RunTrain(const TrainOptions& o) {
  harness::RunSpec run;
  fs::path dir;
  if (!o.manifest.empty()) {
    std::ifstream in(o.manifest);
    if (!in) throw std::runtime_error("cannot open " + o.manifest);
    run = harness::RunSpecFromJson(json::parse(in).at("run"));
    dir = o.out.empty() ? fs::path(o.manifest).parent_path() : fs::path(o.out);
  } else {
    GridOptions grid = o.grid;
    if (!o.variant.empty()) grid.variants = {o.variant};
    if (!o.subtask.empty()) grid.subtasks = {o.subtask};
    grid.seeds = {o.seed};
    const auto config = ResolveConfig(grid);
    const auto cells = harness::ExpandGrid(config);
    if (cells.size() != 1) {
      throw std::invalid_argument("train needs exactly one --variant and --subtask");
    }
    run = cells.front();
    dir = o.out.empty() ? harness::RunDirectory(config.output_dir, run) : fs::path(o.out);
  }
  std::cout << "training " << run.variant << " / "
            << posgen::ToString(run.posgen.subtask) << " / seed " << run.train.seed
            << " -> " << dir.string() << std::endl;
  const auto outcome = harness::ExecuteRun(run, dir);
  switch (outcome.status) {
    case harness::RunOutcome::Status::kSkipped:
      std::cout << "already complete; test OOD accuracy "
                << Fmt("%.4f", outcome.test_ood_accuracy) << '\n';
      return 0;
    case harness::RunOutcome::Status::kComplete:
      std::cout << "test OOD accuracy " << Fmt("%.4f", outcome.test_ood_accuracy) << '\n';
      return 0;
    case harness::RunOutcome::Status::kFailed:
      std::cerr << "training failed: " << outcome.error << '\n';
      return 1;
  }
  return 1;
}

struct EvalOptions {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::int64_t L = 0;
  bool autoregressive = false;
  std::string out;
};

int RunEval(const EvalOptions& o) {
  const auto ckpt = tinyformer::LoadCheckpoint(o.checkpoint);
  const auto dataset = posgen::ReadDataset(o.data);
  const auto& data = o.split == "val" ? dataset.val
                     : o.split == "train" ? dataset.train
                                          : dataset.test;
  const std::int64_t L = o.L > 0 ? o.L : dataset.spec.train_length;
  const tinyformer::Transformer<float> model(ckpt.config);
  const auto report = tinyformer::Evaluate(model, ckpt.params, data, L,
                                           dataset.spec.seed_length(), o.autoregressive);
  json doc = tinyformer::ToJson(report);
  doc["split"] = o.split;
  doc["autoregressive"] = o.autoregressive;
  std::cout << "OOD accuracy " << Fmt("%.4f", report.ood_accuracy) << "  loss "
            << Fmt("%.6f", report.loss) << "  (" << report.sequences << " sequences, L="
            << L << ")\n";
  if (!o.out.empty()) std::ofstream(o.out) << doc.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  harness::TuneAllocator();
  CLI::App app{"Rotary position-embedding laboratory"};
  app.require_subcommand(1);

  AnalyzeOptions analyze;
  auto* an = app.add_subcommand("analyze", "Wavelengths, critical split and feature gaps");
  an->add_option("--d", analyze.d, "head dimension")->capture_default_str();
  an->add_option("--b", analyze.b, "rotary base")->capture_default_str();
  an->add_option("--L", analyze.L, "training length")->required()->check(CLI::PositiveNumber);
  an->add_option("--L-prime", analyze.L_prime, "test length (default 4L)");
  an->add_option("--method", analyze.method, "none | ntk_aware | dynamic_ntk | yarn")
      ->capture_default_str();
  an->add_option("--scale", analyze.scale, "scale factor s")->capture_default_str();
  an->add_option("--alpha", analyze.alpha)->capture_default_str();
  an->add_option("--beta", analyze.beta)->capture_default_str();
  an->add_flag("--resonance", analyze.resonance, "round wavelengths to integers");
  an->add_option("--resonance-order", analyze.resonance_order, "after | before scaling")
      ->check(CLI::IsMember({"after", "before"}))
      ->capture_default_str();
  an->add_option("--attention-scale", analyze.attention_scale);
  an->add_option("--current-length", analyze.current_length,
                 "sequence length for dynamic_ntk (default L')");
  an->add_option("--json", analyze.json_out, "also write the report as JSON ('-' = stdout)");
  an->add_flag("--sorted", analyze.force_sorted, "skip exhaustive enumeration");

  tools::GenOptions gen_options;
  auto* gen = tools::AddGenCommand(app, gen_options);

  TrainOptions train;
  auto* tr = app.add_subcommand("train", "Train and evaluate one grid cell");
  AddGridOptions(tr, train.grid);
  tr->add_option("--variant", train.variant);
  tr->add_option("--subtask", train.subtask);
  tr->add_option("--seed", train.seed)->capture_default_str();
  tr->add_option("--out", train.out, "run directory (default: under output dir)");
  tr->add_option("--manifest", train.manifest, "re-execute the run a manifest describes");

  EvalOptions eval;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  ev->add_option("--checkpoint", eval.checkpoint)->required();
  ev->add_option("--data", eval.data, "dataset directory")->required();
  ev->add_option("--split", eval.split)
      ->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();
  ev->add_option("--L", eval.L, "OOD threshold (default: dataset training length)");
  ev->add_flag("--autoregressive", eval.autoregressive);
  ev->add_option("--out", eval.out, "write the EvalReport JSON here");

  GridOptions repro;
  auto* rp = app.add_subcommand("repro", "Run (or resume) the reproduction grid");
  AddGridOptions(rp, repro);

  std::string report_dir;
  auto* rep = app.add_subcommand("report", "Aggregate runs into ood_table.csv / loss_curves.csv");
  rep->add_option("--dir", report_dir)->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (an->parsed()) return RunAnalyze(analyze);
    if (gen->parsed()) return tools::RunGen(gen_options);
    if (tr->parsed()) return RunTrain(train);
    if (ev->parsed()) return RunEval(eval);
    if (rp->parsed()) {
      const auto config = ResolveConfig(repro);
      std::cout << "grid: " << config.variants.size() << " variants x "
                << config.subtasks.size() << " subtasks x " << config.seeds.size()
                << " seeds, " << config.workers << " worker(s) -> "
                << config.output_dir.string() << std::endl;
      const auto summary = harness::RunGrid(config, &std::cout);
      std::cout << summary.completed << " trained, " << summary.skipped
                << " already complete, " << summary.failures.size() << " failed\n";
      PrintReport(config.output_dir, harness::WriteReport(config.output_dir));
      for (const auto& f : summary.failures) std::cerr << "failed: " << f << '\n';
      return summary.failures.empty() ? 0 : 1;
    }
    if (rep->parsed()) return PrintReport(report_dir, harness::WriteReport(report_dir));
  } catch (const std::exception& e) {
    std::cerr << "resonance_lab: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
