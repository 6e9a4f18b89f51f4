#pragma once

// Experiment driver behind the command-line tool: dataset generation, the
// oracle, single training runs, the train-size sweep and reports.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "milbench/errors.hpp"
#include "milbench/metrics.hpp"
#include "milbench/model.hpp"
#include "milbench/synthgen.hpp"

namespace milbench {

inline constexpr const char* kToolVersion = "milbench 1.0.0";

struct MethodSpec {
  Ordering ordering = Ordering::embedding_aggregation;
  PoolingKind pooling = PoolingKind::mean;

  friend bool operator==(const MethodSpec&, const MethodSpec&) = default;
};

/// The nine valid (ordering, pooling) pairs; transmil is embedding-only.
std::vector<MethodSpec> all_methods();
/// "mean", "embedding/mean", "prediction/max", ...; a bare pooling name means
/// embedding-aggregation.
MethodSpec parse_method(std::string_view text);

struct ExperimentConfig {
  GeneratorParams generator;
  std::vector<std::size_t> sizes{100, 200, 500, 1000, 2000, 5000, 10000};
  std::size_t test_size = 1000;
  std::vector<MethodSpec> methods = all_methods();
  GridSpec grid;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::uint64_t master_seed = 0;  // drives the shared test set and the train pools
  ModelConfig model;              // everything but lr / reg_strength / pooling / ordering
  bool include_bayes = true;
  std::filesystem::path output_dir = "results";

  /// Throws ConfigError: sizes empty or not strictly ascending, seeds empty, ...
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
/// Missing keys keep their defaults. Throws ConfigError.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
/// Reads a JSON config file. Throws IoError or ConfigError.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
/// FNV-1a over the canonical JSON of everything that affects results
/// (output_dir excluded), as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

struct ResultRow {
  std::string method;
  std::string ordering;
  std::size_t train_size = 0;
  std::uint64_t seed = 0;
  double test_auroc = 0.0;
  double test_auprc = 0.0;
  double wall_time_s = 0.0;
  double best_lr = 0.0;   // NaN for the oracle
  double best_reg = 0.0;  // NaN for the oracle
};

inline constexpr const char* kResultHeader =
    "method,ordering,train_size,seed,test_auroc,test_auprc,wall_time_s,best_lr,best_reg";
std::string format_result_row(const ResultRow& row);
/// Throws IoError on a malformed file.
std::vector<ResultRow> read_results(const std::filesystem::path& path);

// Data streams ------------------------------------------------------------------

/// Shared test set, independent of the split seeds.
std::vector<Bag> make_test_set(const ExperimentConfig& cfg);
/// Training pool for one split seed; a size-n run uses its first n bags.
std::vector<Bag> make_train_pool(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t n);

/// Shuffles the first n bags of the pool for (seed, n), hands train and
/// validation spans to fn, and restores the pool order afterwards. The split
/// depends only on (seed, n), not on earlier calls.
template <class F>
void with_split(std::vector<Bag>& pool, std::size_t n, std::uint64_t seed, F&& fn);

// Commands ----------------------------------------------------------------------

struct GenerateSummary {
  std::vector<std::filesystem::path> files;
  std::filesystem::path manifest;
};

/// Writes test.<ext> plus seed<k>_train.<ext> / seed<k>_val.<ext> for every
/// seed (pool of max(sizes) bags split 4:1), and generate_manifest.json.
/// `ext` is "bin" or "txt".
GenerateSummary cmd_generate(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                             const std::string& ext = "bin");

/// Oracle scores on a dataset. Throws DataMismatchError when the file's
/// segment length or feature count disagrees with params.
ResultRow cmd_bayes(const std::filesystem::path& dataset, const GeneratorParams& params);

struct TrainRequest {
  std::filesystem::path train_path;
  std::filesystem::path val_path;
  std::optional<std::filesystem::path> test_path;
  MethodSpec method;
  GridSpec grid;
  ModelConfig model;
  std::filesystem::path checkpoint_path;
  std::size_t threads = 1;
};

struct TrainSummary {
  GridResult grid;
  std::optional<double> test_auroc;
  std::optional<double> test_auprc;
};

/// Grid search on the given files; writes the checkpoint, its manifest and
/// <checkpoint>.log.csv.
TrainSummary cmd_train(const TrainRequest& req);

struct SweepOptions {
  std::size_t threads = 1;
  bool resume = false;
  std::ostream* progress = nullptr;
};

struct SweepSummary {
  std::vector<ResultRow> rows;  // the whole results.csv after the run
  std::size_t trained = 0;      // rows produced by this invocation
  std::size_t skipped = 0;      // rows already present (resume)
  std::size_t failed = 0;
  std::size_t total_runs = 0;   // |methods| * |sizes| * |seeds| * |grid|
};

/// Writes output_dir/{manifest.json, results.csv, failures.csv,
/// plot_<ordering>_<pooling>.tsv}. With resume, rows already in results.csv
/// are kept and skipped; a manifest with another config hash raises
/// DataMismatchError.
SweepSummary cmd_sweep(const ExperimentConfig& cfg, const SweepOptions& opts = {});

/// Instance-level metrics of a checkpoint's attention on a dataset. With
/// `baseline`, also scores the centered Gaussian attention as a second row;
/// checkpoints without attention then report only that row. Without it they
/// raise UndefinedMetricError.
MetricReport cmd_eval_attention(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset,
                                bool baseline, double rel_width = 0.25);

/// Per (method, ordering, size) mean/std of test AUROC and AUPRC.
nlohmann::json cmd_report(const std::filesystem::path& results_csv);

// ---------------------------------------------------------------------------

template <class F>
void with_split(std::vector<Bag>& pool, std::size_t n, std::uint64_t seed, F&& fn) {
  if (n == 0 || n > pool.size()) throw ParameterError("with_split: size outside the pool");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng(seed, 0x73706c6974).split(n);  // "split"
  shuffle(std::span<std::size_t>(order), rng);
  const std::size_t n_train = split_train_count(n, 0.8);

  std::vector<Bag> staged(n);
  for (std::size_t i = 0; i < n; ++i) staged[i] = std::move(pool[order[i]]);
  struct Restore {
    std::vector<Bag>& pool;
    std::vector<Bag>& staged;
    const std::vector<std::size_t>& order;
    ~Restore() {
      for (std::size_t i = 0; i < order.size(); ++i) pool[order[i]] = std::move(staged[i]);
    }
  } restore{pool, staged, order};
  const std::span<const Bag> all(staged);
  fn(all.first(n_train), all.subspan(n_train));
}

}  // namespace milbench
