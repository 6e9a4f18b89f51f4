#pragma once

// Encoder-free MIL classifiers in both orderings (pool then classify, or
// classify each instance then pool) and their training loop.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <type_traits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "milbench/pooling.hpp"
#include "milbench/synthgen.hpp"

namespace milbench {

enum class Ordering { embedding_aggregation, prediction_aggregation };
enum class RegKind { l1, l2 };

std::string_view to_string(Ordering ordering);
std::string_view to_string(RegKind kind);
Ordering parse_ordering(std::string_view name);
RegKind parse_reg_kind(std::string_view name);

struct ArchConfig {
  std::size_t attention_dim = 64;  // hidden width L of the attention scorer
  double smap_alpha = 0.5;
  std::size_t smap_neighbors = 1;
  TransmilShape transmil;
};

struct ModelConfig {
  Ordering ordering = Ordering::embedding_aggregation;
  PoolingKind pooling = PoolingKind::mean;
  RegKind reg_kind = RegKind::l2;
  double reg_strength = 0.0;
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t epochs = 1000;
  std::uint64_t init_seed = 0;
  /// Epochs between AUROC evaluations; 0 picks 1 for up to 1,000 training
  /// bags and 5 above. The last epoch is always evaluated.
  std::size_t eval_interval = 0;
  ArchConfig arch;

  /// Throws ConfigError, e.g. for transmil with prediction-aggregation.
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
/// Missing keys keep their defaults.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

struct ModelParams {
  PoolingParams pooling = MeanPooling{};
  Matrix weight;  // d x 1, d = pooled width
  Matrix bias;    // 1 x 1
};

template <class Params, class F>
void visit_tensors(Params& params, F&& f)
  requires std::is_same_v<std::remove_const_t<Params>, ModelParams>
{
  f(std::string("classifier.weight"), params.weight, true);
  f(std::string("classifier.bias"), params.bias, false);
  visit_tensors(params.pooling, f);
}

/// Classifier and attention weights ~ N(0, 1/fan_in), biases zero.
ModelParams init_model(const ModelConfig& cfg, std::size_t m);
ModelParams zeros_like(const ModelParams& params);
std::size_t parameter_count(const ModelParams& params);

struct ForwardResult {
  double prob = 0.5;
  std::optional<std::vector<double>> attention;
};

ForwardResult forward(const ModelConfig& cfg, const ModelParams& params, const Matrix& h);

inline constexpr double kProbClamp = 1e-12;

/// Cross entropy of a probability clamped to [1e-12, 1 - 1e-12].
double bce(double prob, int label);
/// strength * (||theta||_1 or ||theta||_2^2) over regularized tensors.
double regularization(const ModelParams& params, RegKind kind, double strength);
/// bce(prob, label) + regularization(params, kind, strength)
double bce_loss(double prob, int label, const ModelParams& params, RegKind kind, double strength);

/// Adds scale * d bce / d params for one bag to `grads`; returns the
/// unregularized loss.
double accumulate_gradient(const ModelConfig& cfg, const ModelParams& params, const Matrix& h, int label,
                           double scale, ModelParams& grads);
void add_regularization_gradient(const ModelParams& params, RegKind kind, double strength, ModelParams& grads);

struct TrainState {
  ModelParams params;
  ModelParams velocity;
  std::size_t epoch = 0;
};

/// Classic momentum: v = momentum * v + g; theta = theta - lr * v.
void sgd_step(TrainState& state, const ModelParams& grads, double lr, double momentum = 0.9);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;   // NaN for epoch 0
  double train_auroc = 0.0;  // NaN when not evaluated
  double val_auroc = 0.0;
};

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  std::size_t input_dim = 0;
  std::size_t epoch = 0;
  double train_auroc = 0.0;
  double val_auroc = 0.0;
  /// False when no evaluated epoch had val AUROC < train AUROC and the
  /// unconstrained best epoch was returned instead.
  bool constraint_satisfied = true;
  std::vector<EpochLog> log;
};

/// Mini-batch SGD over config.epochs. Epoch 0 (initial parameters) is a
/// candidate. Returns the evaluated epoch with the highest validation AUROC
/// among those whose validation AUROC is below their training AUROC.
Checkpoint train(std::span<const Bag> train_set, std::span<const Bag> val_set, const ModelConfig& cfg);

std::vector<double> predict(const ModelConfig& cfg, const ModelParams& params, std::span<const Bag> bags);

struct GridSpec {
  std::vector<double> learning_rates{0.1, 0.01, 0.001, 0.0001};
  std::vector<double> reg_strengths{1.0, 0.1, 0.01, 0.001, 0.0001, 1e-5, 1e-6, 0.0};
};

struct GridRun {
  double lr = 0.0;
  double reg_strength = 0.0;
  double val_auroc = 0.0;
  double train_auroc = 0.0;
  std::size_t epoch = 0;
};

struct GridResult {
  ModelConfig config;
  Checkpoint checkpoint;
  std::vector<GridRun> runs;  // in (lr, reg) grid order
};

/// Trains every (lr, reg) pair and keeps the best validation AUROC; ties go to
/// the smaller reg strength, then the smaller lr. Runs are spread over
/// `threads` workers; the result does not depend on the thread count.
GridResult grid_search(const GridSpec& grid, std::span<const Bag> train_set, std::span<const Bag> val_set,
                       const ModelConfig& base, std::size_t threads = 1);

// Files -------------------------------------------------------------------------

/// Writes <path> (tensor blob) and <path>.manifest.json.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// CSV with header epoch,train_loss,train_auroc,val_auroc.
void write_training_log(const std::filesystem::path& path, std::span<const EpochLog> log);

}  // namespace milbench
