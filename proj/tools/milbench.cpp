// milbench: command-line front end for the MIL benchmark harness.
//
// Exit codes: 0 ok, 1 usage or invalid config, 2 I/O failure, 3 data/config mismatch.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "milbench/errors.hpp"
#include "milbench/harness.hpp"

namespace {

using namespace milbench;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitMismatch = 3;

ExperimentConfig load_or_default(const std::string& path) {
  return path.empty() ? ExperimentConfig{} : load_experiment_config(path);
}

void write_output(const std::string& out, const std::string& text) {
  if (out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + out);
  f << text;
  if (!f) throw IoError("write failed: " + out);
}

// Side manifest for commands whose main output is a single file.
void write_run_manifest(const std::string& out, const std::string& command, nlohmann::json details) {
  if (out.empty()) return;
  details["tool"] = kToolVersion;
  details["command"] = command;
  write_output(out + ".manifest.json", details.dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiple-instance learning benchmark on synthetic shifted-mean bags"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  std::string config_path, out, format = "bin";
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  bool resume = false, baseline = false;
  double rel_width = 0.25;
  std::string dataset, train_path, val_path, test_path, method = "embedding/mean", checkpoint, results;

  auto* gen = app.add_subcommand("generate", "Write train/val/test datasets for every split seed");
  gen->add_option("--config", config_path, "Experiment config (JSON)");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--seed", seed, "Master seed (overrides the config)");
  gen->add_option("--format", format, "Dataset format")->check(CLI::IsMember({"bin", "txt"}));

  auto* bayes = app.add_subcommand("bayes", "Score a dataset with the Bayes-optimal posterior");
  bayes->add_option("--dataset", dataset, "Dataset file (.txt or binary)")->required();
  bayes->add_option("--config", config_path, "Experiment config supplying the generator parameters");
  bayes->add_option("--out", out, "Result CSV (stdout when omitted)");

  auto* train = app.add_subcommand("train", "Grid-search one method on train/val files");
  train->add_option("--config", config_path, "Experiment config (grid and model settings)");
  train->add_option("--train", train_path, "Training dataset")->required();
  train->add_option("--val", val_path, "Validation dataset")->required();
  train->add_option("--test", test_path, "Optional test dataset");
  train->add_option("--method", method, "ordering/pooling, e.g. embedding/smap");
  train->add_option("--out", out, "Checkpoint path")->required();
  train->add_option("--seed", seed, "Initialization seed");
  train->add_option("--threads", threads, "Worker threads for the grid")->check(CLI::PositiveNumber);

  auto* sweep = app.add_subcommand("sweep", "Train-size sweep over methods, sizes and seeds");
  sweep->add_option("--config", config_path, "Experiment config (JSON)");
  sweep->add_option("--out", out, "Output directory (overrides the config)");
  sweep->add_option("--seed", seed, "Master seed (overrides the config)");
  sweep->add_option("--threads", threads, "Worker threads for each grid search")->check(CLI::PositiveNumber);
  sweep->add_flag("--resume", resume, "Keep completed rows of an earlier run with the same config");

  auto* attn = app.add_subcommand("eval-attention", "Instance-level attention metrics of a checkpoint");
  attn->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required();
  attn->add_option("--dataset", dataset, "Dataset with segment annotations")->required();
  attn->add_flag("--baseline", baseline, "Also score the centered Gaussian attention baseline");
  attn->add_option("--rel-width", rel_width, "Gaussian baseline std as a fraction of bag length")
      ->check(CLI::PositiveNumber);
  attn->add_option("--out", out, "Report CSV (stdout when omitted)");

  auto* report = app.add_subcommand("report", "Summarize a results.csv as JSON");
  report->add_option("--results", results, "results.csv from sweep")->required();
  report->add_option("--out", out, "Summary JSON (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) {
      auto cfg = load_or_default(config_path);
      if (seed) cfg.master_seed = *seed;
      const auto summary = cmd_generate(cfg, out, format);
      for (const auto& f : summary.files) std::cout << f.string() << "\n";
      std::cout << summary.manifest.string() << "\n";
    } else if (bayes->parsed()) {
      const auto cfg = load_or_default(config_path);
      const auto row = cmd_bayes(dataset, cfg.generator);
      write_output(out, std::string(kResultHeader) + "\n" + format_result_row(row) + "\n");
      write_run_manifest(out, "bayes", {{"dataset", dataset}, {"config", to_json(cfg)}, {"config_hash", config_hash(cfg)}});
    } else if (train->parsed()) {
      const auto cfg = load_or_default(config_path);
      TrainRequest req;
      req.train_path = train_path;
      req.val_path = val_path;
      if (!test_path.empty()) req.test_path = test_path;
      req.method = parse_method(method);
      req.grid = cfg.grid;
      req.model = cfg.model;
      if (seed) req.model.init_seed = *seed;
      req.checkpoint_path = out;
      req.threads = threads;
      const auto summary = cmd_train(req);
      const auto& ck = summary.grid.checkpoint;
      std::cout << "selected lr=" << summary.grid.config.lr << " reg=" << summary.grid.config.reg_strength
                << " epoch=" << ck.epoch << " train_auroc=" << ck.train_auroc << " val_auroc=" << ck.val_auroc
                << (ck.constraint_satisfied ? "" : " (no epoch with val < train; unconstrained best)") << "\n";
      if (summary.test_auroc) {
        std::cout << "test_auroc=" << *summary.test_auroc << " test_auprc=" << *summary.test_auprc << "\n";
      }
      std::cout << "checkpoint " << out << "\n";
    } else if (sweep->parsed()) {
      auto cfg = load_or_default(config_path);
      if (seed) cfg.master_seed = *seed;
      if (!out.empty()) cfg.output_dir = out;
      SweepOptions opts;
      opts.threads = threads;
      opts.resume = resume;
      opts.progress = &std::cerr;
      const auto summary = cmd_sweep(cfg, opts);
      std::cout << "rows=" << summary.rows.size() << " trained=" << summary.trained
                << " skipped=" << summary.skipped << " failed=" << summary.failed
                << " total_runs=" << summary.total_runs << "\n"
                << "results " << (cfg.output_dir / "results.csv").string() << "\n";
    } else if (attn->parsed()) {
      const auto rep = cmd_eval_attention(checkpoint, dataset, baseline, rel_width);
      write_output(out, rep.to_csv());
      write_run_manifest(out, "eval-attention",
                         {{"checkpoint", checkpoint}, {"dataset", dataset}, {"baseline", baseline},
                          {"rel_width", rel_width}});
    } else if (report->parsed()) {
      write_output(out, cmd_report(results).dump(2) + "\n");
    }
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const DataMismatchError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMismatch;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitOk;
}
