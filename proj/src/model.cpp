#include "milbench/model.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <thread>

#include "milbench/errors.hpp"
#include "milbench/metrics.hpp"
#include "milbench/tensor_io.hpp"

namespace milbench {

namespace {

constexpr std::uint64_t kInitStream = 0x696e6974;     // "init"
constexpr std::uint64_t kShuffleStream = 0x73687566;  // "shuf"
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

std::string_view to_string(Ordering ordering) {
  return ordering == Ordering::embedding_aggregation ? "embedding" : "prediction";
}

std::string_view to_string(RegKind kind) { return kind == RegKind::l1 ? "l1" : "l2"; }

Ordering parse_ordering(std::string_view name) {
  if (name == "embedding" || name == "embedding-aggregation") return Ordering::embedding_aggregation;
  if (name == "prediction" || name == "prediction-aggregation") return Ordering::prediction_aggregation;
  throw ConfigError("unknown ordering '" + std::string(name) + "'");
}

RegKind parse_reg_kind(std::string_view name) {
  if (name == "l1" || name == "L1") return RegKind::l1;
  if (name == "l2" || name == "L2") return RegKind::l2;
  throw ConfigError("unknown regularization '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (pooling == PoolingKind::transmil && ordering == Ordering::prediction_aggregation) {
    throw ConfigError("transmil has no prediction-aggregation variant");
  }
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(reg_strength >= 0.0)) throw ConfigError("regularization strength must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (arch.attention_dim == 0) throw ConfigError("attention_dim must be positive");
  if (!(arch.smap_alpha >= 0.0 && arch.smap_alpha < 1.0)) throw ConfigError("smap alpha must lie in [0, 1)");
  if (arch.smap_neighbors == 0) throw ConfigError("smap needs at least one neighbor");
  const auto& t = arch.transmil;
  if (t.width == 0 || t.n_heads == 0 || t.width % t.n_heads != 0) {
    throw ConfigError("transmil width must be a positive multiple of n_heads");
  }
}

nlohmann::json to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["ordering"] = std::string(to_string(cfg.ordering));
  j["pooling"] = std::string(to_string(cfg.pooling));
  j["reg_kind"] = std::string(to_string(cfg.reg_kind));
  j["reg_strength"] = cfg.reg_strength;
  j["lr"] = cfg.lr;
  j["momentum"] = cfg.momentum;
  j["batch_size"] = cfg.batch_size;
  j["epochs"] = cfg.epochs;
  j["init_seed"] = cfg.init_seed;
  j["eval_interval"] = cfg.eval_interval;
  j["attention_dim"] = cfg.arch.attention_dim;
  j["smap_alpha"] = cfg.arch.smap_alpha;
  j["smap_neighbors"] = cfg.arch.smap_neighbors;
  j["transmil_width"] = cfg.arch.transmil.width;
  j["transmil_layers"] = cfg.arch.transmil.n_layers;
  j["transmil_heads"] = cfg.arch.transmil.n_heads;
  j["transmil_max_distance"] = cfg.arch.transmil.max_distance;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig cfg) {
  try {
    if (j.contains("ordering")) cfg.ordering = parse_ordering(j.at("ordering").get<std::string>());
    if (j.contains("pooling")) {
      try {
        cfg.pooling = parse_pooling(j.at("pooling").get<std::string>());
      } catch (const ParameterError& e) {
        throw ConfigError(e.what());
      }
    }
    if (j.contains("reg_kind")) cfg.reg_kind = parse_reg_kind(j.at("reg_kind").get<std::string>());
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("reg_strength", cfg.reg_strength);
    get("lr", cfg.lr);
    get("momentum", cfg.momentum);
    get("batch_size", cfg.batch_size);
    get("epochs", cfg.epochs);
    get("init_seed", cfg.init_seed);
    get("eval_interval", cfg.eval_interval);
    get("attention_dim", cfg.arch.attention_dim);
    get("smap_alpha", cfg.arch.smap_alpha);
    get("smap_neighbors", cfg.arch.smap_neighbors);
    get("transmil_width", cfg.arch.transmil.width);
    get("transmil_layers", cfg.arch.transmil.n_layers);
    get("transmil_heads", cfg.arch.transmil.n_heads);
    get("transmil_max_distance", cfg.arch.transmil.max_distance);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return cfg;
}

// ---------------------------------------------------------------------------

ModelParams init_model(const ModelConfig& cfg, std::size_t m) {
  cfg.validate();
  Rng rng(cfg.init_seed, kInitStream);
  ModelParams p;
  std::size_t pooled_width = m;
  switch (cfg.pooling) {
    case PoolingKind::max: p.pooling = MaxPooling{}; break;
    case PoolingKind::mean: p.pooling = MeanPooling{}; break;
    case PoolingKind::abmil: p.pooling = init_abmil(m, cfg.arch.attention_dim, rng); break;
    case PoolingKind::smap: {
      SmapConfig smap;
      smap.alpha = cfg.arch.smap_alpha;
      smap.neighbors = cfg.arch.smap_neighbors;
      smap.inner = init_abmil(m, cfg.arch.attention_dim, rng);
      p.pooling = std::move(smap);
      break;
    }
    case PoolingKind::transmil: {
      p.pooling = init_transmil(m, cfg.arch.transmil, rng);
      pooled_width = cfg.arch.transmil.width;
      break;
    }
  }
  // Prediction-aggregation applies the classifier to instance embeddings.
  const std::size_t fan_in = pooled_width;
  p.weight = Matrix(fan_in, 1);
  const double std = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : p.weight.values()) v = gaussian_sample(rng, 0.0, std);
  p.bias = Matrix(1, 1);
  return p;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams out = params;
  visit_tensors(out, [](const std::string&, Matrix& m, bool) { m.fill(0.0); });
  return out;
}

std::size_t parameter_count(const ModelParams& params) {
  std::size_t n = 0;
  visit_tensors(params, [&](const std::string&, const Matrix& m, bool) { n += m.size(); });
  return n;
}

namespace {

double instance_logit(const ModelParams& params, std::span<const double> x) {
  return dot(params.weight.values(), x) + params.bias[0];
}

// Output of one bag, with enough intermediate state for the backward pass.
struct BagPass {
  double prob = 0.5;
  std::optional<std::vector<double>> attention;
  PoolTape tape;
  PoolResult pooled;
  // prediction-aggregation
  Matrix logits;                    // S x 1
  std::vector<double> instance_prob;  // attention orderings
  double bag_logit = 0.0;
};

bool uses_attention_mixture(const ModelConfig& cfg) {
  return cfg.ordering == Ordering::prediction_aggregation &&
         (cfg.pooling == PoolingKind::abmil || cfg.pooling == PoolingKind::smap);
}

void check_input(const ModelParams& params, const Matrix& h) {
  if (h.rows() == 0) throw ParameterError("model: empty bag");
  const bool transmil = std::holds_alternative<TransmilParams>(params.pooling);
  const std::size_t expected = transmil ? std::get<TransmilParams>(params.pooling).in_weight.cols()
                                        : params.weight.rows();
  if (h.cols() != expected) {
    throw ParameterError("model expects " + std::to_string(expected) + " features, bag has " +
                         std::to_string(h.cols()));
  }
}

BagPass run_forward(const ModelConfig& cfg, const ModelParams& params, const Matrix& h, bool record) {
  check_input(params, h);
  BagPass pass;
  PoolTape* tape = record ? &pass.tape : nullptr;
  if (cfg.ordering == Ordering::embedding_aggregation) {
    pass.pooled = pool_forward(params.pooling, h, tape);
    pass.bag_logit = instance_logit(params, pass.pooled.z);
    pass.prob = sigmoid(pass.bag_logit);
    pass.attention = pass.pooled.attention;
    return pass;
  }

  if (uses_attention_mixture(cfg)) {
    // Attention from the (smoothed) embeddings weights per-instance probabilities.
    PoolTape local;
    PoolTape& t = tape ? *tape : local;
    pass.pooled = pool_forward(params.pooling, h, &t);
    const Matrix& x = cfg.pooling == PoolingKind::smap ? t.smoothed : h;
    const auto& a = *pass.pooled.attention;
    pass.instance_prob.resize(x.rows());
    double p = 0.0;
    for (std::size_t j = 0; j < x.rows(); ++j) {
      pass.instance_prob[j] = sigmoid(instance_logit(params, x.row(j)));
      p += a[j] * pass.instance_prob[j];
    }
    pass.prob = p;
    pass.attention = pass.pooled.attention;
    return pass;
  }

  pass.logits = Matrix(h.rows(), 1);
  for (std::size_t j = 0; j < h.rows(); ++j) pass.logits[j] = instance_logit(params, h.row(j));
  const PoolingParams scalar_pool =
      cfg.pooling == PoolingKind::max ? PoolingParams(MaxPooling{}) : PoolingParams(MeanPooling{});
  pass.pooled = pool_forward(scalar_pool, pass.logits, tape);
  pass.bag_logit = pass.pooled.z[0];
  pass.prob = sigmoid(pass.bag_logit);
  return pass;
}

}  // namespace

ForwardResult forward(const ModelConfig& cfg, const ModelParams& params, const Matrix& h) {
  auto pass = run_forward(cfg, params, h, false);
  return {pass.prob, std::move(pass.attention)};
}

double bce(double prob, int label) {
  const double p = std::clamp(prob, kProbClamp, 1.0 - kProbClamp);
  return label == 1 ? -std::log(p) : -std::log1p(-p);
}

double regularization(const ModelParams& params, RegKind kind, double strength) {
  if (strength == 0.0) return 0.0;
  double total = 0.0;
  visit_tensors(params, [&](const std::string&, const Matrix& m, bool regularized) {
    if (!regularized) return;
    for (double v : m.values()) total += kind == RegKind::l1 ? std::abs(v) : v * v;
  });
  return strength * total;
}

double bce_loss(double prob, int label, const ModelParams& params, RegKind kind, double strength) {
  return bce(prob, label) + regularization(params, kind, strength);
}

void add_regularization_gradient(const ModelParams& params, RegKind kind, double strength, ModelParams& grads) {
  if (strength == 0.0) return;
  std::vector<std::pair<const Matrix*, bool>> src;
  visit_tensors(params, [&](const std::string&, const Matrix& m, bool reg) { src.emplace_back(&m, reg); });
  std::size_t i = 0;
  visit_tensors(grads, [&](const std::string&, Matrix& g, bool) {
    const auto [m, reg] = src[i++];
    if (!reg) return;
    auto gv = g.values();
    const auto mv = m->values();
    for (std::size_t k = 0; k < gv.size(); ++k) {
      if (kind == RegKind::l2) {
        gv[k] += 2.0 * strength * mv[k];
      } else if (mv[k] != 0.0) {
        gv[k] += strength * (mv[k] > 0.0 ? 1.0 : -1.0);
      }
    }
  });
}

double accumulate_gradient(const ModelConfig& cfg, const ModelParams& params, const Matrix& h, int label,
                           double scale, ModelParams& grads) {
  BagPass pass = run_forward(cfg, params, h, true);
  const double loss = bce(pass.prob, label);
  // The clamp is flat outside [1e-12, 1 - 1e-12].
  if (pass.prob < kProbClamp || pass.prob > 1.0 - kProbClamp) return loss;
  const auto y = static_cast<double>(label);

  if (cfg.ordering == Ordering::embedding_aggregation) {
    const double dlogit = scale * (pass.prob - y);
    axpy(dlogit, pass.pooled.z, grads.weight.values());
    grads.bias[0] += dlogit;
    if (kind_of(params.pooling) == PoolingKind::max || kind_of(params.pooling) == PoolingKind::mean) {
      return loss;
    }
    std::vector<double> grad_z(params.weight.values().begin(), params.weight.values().end());
    for (double& v : grad_z) v *= dlogit;
    pool_backward_accumulate(params.pooling, h, pass.tape, {grad_z, {}}, grads.pooling, nullptr);
    return loss;
  }

  if (uses_attention_mixture(cfg)) {
    const double p = pass.prob;
    const double dprob = scale * (-y / p + (1.0 - y) / (1.0 - p));
    const Matrix& x = cfg.pooling == PoolingKind::smap ? pass.tape.smoothed : h;
    const auto& a = *pass.pooled.attention;
    std::vector<double> grad_a(x.rows());
    for (std::size_t j = 0; j < x.rows(); ++j) {
      const double s = pass.instance_prob[j];
      grad_a[j] = s * dprob;
      const double dlogit = a[j] * dprob * s * (1.0 - s);
      axpy(dlogit, x.row(j), grads.weight.values());
      grads.bias[0] += dlogit;
    }
    pool_backward_accumulate(params.pooling, h, pass.tape, {{}, grad_a}, grads.pooling, nullptr);
    return loss;
  }

  const double dlogit = scale * (pass.prob - y);
  const PoolingParams scalar_pool =
      cfg.pooling == PoolingKind::max ? PoolingParams(MaxPooling{}) : PoolingParams(MeanPooling{});
  Matrix grad_logits(h.rows(), 1);
  PoolingParams unused = scalar_pool;
  const std::array<double, 1> upstream{dlogit};
  pool_backward_accumulate(scalar_pool, pass.logits, pass.tape, {upstream, {}}, unused, &grad_logits);
  for (std::size_t j = 0; j < h.rows(); ++j) {
    if (grad_logits[j] == 0.0) continue;
    axpy(grad_logits[j], h.row(j), grads.weight.values());
    grads.bias[0] += grad_logits[j];
  }
  return loss;
}

void sgd_step(TrainState& state, const ModelParams& grads, double lr, double momentum) {
  std::vector<Matrix*> params, velocity;
  std::vector<const Matrix*> g;
  visit_tensors(state.params, [&](const std::string&, Matrix& m, bool) { params.push_back(&m); });
  visit_tensors(state.velocity, [&](const std::string&, Matrix& m, bool) { velocity.push_back(&m); });
  visit_tensors(grads, [&](const std::string&, const Matrix& m, bool) { g.push_back(&m); });
  if (params.size() != velocity.size() || params.size() != g.size()) {
    throw std::logic_error("sgd_step: parameter structure mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(*velocity[i]) || !params[i]->same_shape(*g[i])) {
      throw std::logic_error("sgd_step: tensor shape mismatch");
    }
    auto v = velocity[i]->values();
    auto th = params[i]->values();
    const auto gv = g[i]->values();
    for (std::size_t k = 0; k < th.size(); ++k) {
      v[k] = momentum * v[k] + gv[k];
      th[k] -= lr * v[k];
    }
  }
}

// ---------------------------------------------------------------------------
// Training

namespace {

// Training inputs after optional caching of parameter-free pooling.
struct Inputs {
  std::vector<Matrix> cached;
  std::vector<const Matrix*> embeddings;
  std::vector<int> labels;
};

// Max and mean pooling in embedding order, and mean in prediction order
// (mean of instance logits = logit of mean embedding), reduce each bag to a
// fixed vector; training then runs on single-row bags.
bool pooling_is_cacheable(const ModelConfig& cfg) {
  if (cfg.ordering == Ordering::embedding_aggregation) {
    return cfg.pooling == PoolingKind::max || cfg.pooling == PoolingKind::mean;
  }
  return cfg.pooling == PoolingKind::mean;
}

ModelConfig cached_config(const ModelConfig& cfg) {
  ModelConfig c = cfg;
  c.ordering = Ordering::embedding_aggregation;
  c.pooling = PoolingKind::mean;
  return c;
}

Inputs make_inputs(std::span<const Bag> bags, const ModelConfig& cfg) {
  Inputs in;
  in.labels.reserve(bags.size());
  for (const Bag& b : bags) in.labels.push_back(b.label);
  if (pooling_is_cacheable(cfg)) {
    const PoolingParams pool = cfg.pooling == PoolingKind::max ? PoolingParams(MaxPooling{}) : PoolingParams(MeanPooling{});
    in.cached.reserve(bags.size());
    for (const Bag& b : bags) {
      auto z = pool_forward(pool, b.embeddings).z;
      const std::size_t m = z.size();
      in.cached.emplace_back(1, m, std::move(z));
    }
    for (const auto& m : in.cached) in.embeddings.push_back(&m);
  } else {
    for (const Bag& b : bags) in.embeddings.push_back(&b.embeddings);
  }
  return in;
}

double evaluate_auroc(const ModelConfig& cfg, const ModelParams& params, const Inputs& in) {
  std::vector<double> scores;
  scores.reserve(in.labels.size());
  for (const Matrix* h : in.embeddings) {
    const double p = forward(cfg, params, *h).prob;
    if (!std::isfinite(p)) return kNaN;
    scores.push_back(p);
  }
  return auroc(scores, in.labels);
}

void require_both_classes(std::span<const Bag> bags, const char* what) {
  bool pos = false, neg = false;
  for (const Bag& b : bags) (b.label == 1 ? pos : neg) = true;
  if (!pos || !neg) throw UndefinedMetricError(std::string(what) + " split needs both classes for AUROC");
}

}  // namespace

Checkpoint train(std::span<const Bag> train_set, std::span<const Bag> val_set, const ModelConfig& cfg) {
  if (train_set.empty() || val_set.empty()) throw ParameterError("train: empty split");
  cfg.validate();
  require_both_classes(train_set, "training");
  require_both_classes(val_set, "validation");
  const std::size_t m = train_set.front().num_features();
  for (auto set : {train_set, val_set}) {
    for (const Bag& b : set) {
      if (b.num_features() != m) throw ParameterError("train: bags differ in feature count");
    }
  }

  const Inputs tr = make_inputs(train_set, cfg);
  const Inputs va = make_inputs(val_set, cfg);
  const ModelConfig run_cfg = pooling_is_cacheable(cfg) ? cached_config(cfg) : cfg;

  TrainState state;
  state.params = init_model(cfg, m);
  state.velocity = zeros_like(state.params);
  ModelParams grads = zeros_like(state.params);

  const std::size_t n = tr.labels.size();
  const std::size_t interval = cfg.eval_interval > 0 ? cfg.eval_interval : (n <= 1000 ? 1 : 5);

  Checkpoint best_constrained, best_any;
  best_constrained.val_auroc = best_any.val_auroc = -1.0;
  bool have_constrained = false, have_any = false;
  std::vector<EpochLog> log;

  auto evaluate = [&](std::size_t epoch, double train_loss) {
    EpochLog row{epoch, train_loss, evaluate_auroc(run_cfg, state.params, tr),
                 evaluate_auroc(run_cfg, state.params, va)};
    log.push_back(row);
    if (std::isnan(row.val_auroc) || std::isnan(row.train_auroc)) return;
    auto take = [&](Checkpoint& slot) {
      slot.params = state.params;
      slot.epoch = epoch;
      slot.train_auroc = row.train_auroc;
      slot.val_auroc = row.val_auroc;
    };
    if (!have_any || row.val_auroc > best_any.val_auroc) {
      take(best_any);
      have_any = true;
    }
    if (row.val_auroc < row.train_auroc && (!have_constrained || row.val_auroc > best_constrained.val_auroc)) {
      take(best_constrained);
      have_constrained = true;
    }
  };

  evaluate(0, kNaN);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng shuffle_rng(cfg.init_seed, kShuffleStream);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle(std::span<std::size_t>(order), shuffle_rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(stop - start);
      visit_tensors(grads, [](const std::string&, Matrix& g, bool) { g.fill(0.0); });
      double batch_loss = 0.0;
      for (std::size_t i = start; i < stop; ++i) {
        const std::size_t b = order[i];
        batch_loss += accumulate_gradient(run_cfg, state.params, *tr.embeddings[b], tr.labels[b], scale, grads);
      }
      add_regularization_gradient(state.params, cfg.reg_kind, cfg.reg_strength, grads);
      epoch_loss += batch_loss * scale + regularization(state.params, cfg.reg_kind, cfg.reg_strength);
      ++batches;
      sgd_step(state, grads, cfg.lr, cfg.momentum);
    }
    state.epoch = epoch;
    const double mean_loss = epoch_loss / static_cast<double>(batches);
    if (epoch % interval == 0 || epoch == cfg.epochs) {
      evaluate(epoch, mean_loss);
    } else {
      log.push_back({epoch, mean_loss, kNaN, kNaN});
    }
  }

  Checkpoint out = have_constrained ? std::move(best_constrained) : std::move(best_any);
  if (!have_any) {
    // Every evaluation produced non-finite scores; fall back to the initial state.
    out.params = init_model(cfg, m);
    out.epoch = 0;
    out.train_auroc = out.val_auroc = kNaN;
  }
  out.constraint_satisfied = have_constrained;
  out.config = cfg;
  out.input_dim = m;
  out.log = std::move(log);
  return out;
}

std::vector<double> predict(const ModelConfig& cfg, const ModelParams& params, std::span<const Bag> bags) {
  std::vector<double> out;
  out.reserve(bags.size());
  for (const Bag& b : bags) out.push_back(forward(cfg, params, b.embeddings).prob);
  return out;
}

GridResult grid_search(const GridSpec& grid, std::span<const Bag> train_set, std::span<const Bag> val_set,
                       const ModelConfig& base, std::size_t threads) {
  if (grid.learning_rates.empty() || grid.reg_strengths.empty()) throw ConfigError("grid_search: empty grid");
  std::vector<ModelConfig> configs;
  for (double lr : grid.learning_rates) {
    for (double reg : grid.reg_strengths) {
      ModelConfig c = base;
      c.lr = lr;
      c.reg_strength = reg;
      c.validate();
      configs.push_back(c);
    }
  }

  std::vector<std::optional<Checkpoint>> results(configs.size());
  std::vector<std::exception_ptr> errors(configs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      try {
        results[i] = train(train_set, val_set, configs[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(threads, 1, configs.size());
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  GridResult out;
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const Checkpoint& c = *results[i];
    out.runs.push_back({configs[i].lr, configs[i].reg_strength, c.val_auroc, c.train_auroc, c.epoch});
    if (std::isnan(c.val_auroc)) continue;
    if (!best) {
      best = i;
      continue;
    }
    const Checkpoint& b = *results[*best];
    const auto& bc = configs[*best];
    const bool better =
        c.val_auroc > b.val_auroc ||
        (c.val_auroc == b.val_auroc &&
         (configs[i].reg_strength < bc.reg_strength ||
          (configs[i].reg_strength == bc.reg_strength && configs[i].lr < bc.lr)));
    if (better) best = i;
  }
  const std::size_t pick = best.value_or(0);
  out.config = configs[pick];
  out.checkpoint = std::move(*results[pick]);
  return out;
}

// ---------------------------------------------------------------------------
// Files

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::vector<NamedTensor> tensors;
  nlohmann::json shapes = nlohmann::json::array();
  visit_tensors(ckpt.params, [&](const std::string& name, const Matrix& m, bool) {
    tensors.push_back({name, m});
    shapes.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  });
  write_tensor_blob(path, tensors);

  nlohmann::json manifest;
  manifest["format"] = "milbench-checkpoint";
  manifest["version"] = kTensorBlobVersion;
  manifest["config"] = to_json(ckpt.config);
  manifest["input_dim"] = ckpt.input_dim;
  manifest["epoch"] = ckpt.epoch;
  manifest["train_auroc"] = ckpt.train_auroc;
  manifest["val_auroc"] = ckpt.val_auroc;
  manifest["constraint_satisfied"] = ckpt.constraint_satisfied;
  manifest["tensors"] = shapes;
  std::ofstream out(path.string() + ".manifest.json");
  if (!out) throw IoError("cannot write checkpoint manifest for " + path.string());
  out << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path.string() + ".manifest.json");
  if (!in) throw IoError("missing checkpoint manifest for " + path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad checkpoint manifest: " + std::string(e.what()));
  }
  Checkpoint ckpt;
  ckpt.config = model_config_from_json(manifest.at("config"));
  ckpt.input_dim = manifest.at("input_dim").get<std::size_t>();
  ckpt.epoch = manifest.value("epoch", std::size_t{0});
  auto real = [&](const char* key) {
    const auto& v = manifest.at(key);
    return v.is_null() ? kNaN : v.get<double>();
  };
  ckpt.train_auroc = real("train_auroc");
  ckpt.val_auroc = real("val_auroc");
  ckpt.constraint_satisfied = manifest.value("constraint_satisfied", true);
  ckpt.params = init_model(ckpt.config, ckpt.input_dim);

  const auto tensors = read_tensor_blob(path);
  std::size_t i = 0;
  visit_tensors(ckpt.params, [&](const std::string& name, Matrix& m, bool) {
    if (i >= tensors.size() || tensors[i].name != name || !tensors[i].value.same_shape(m)) {
      throw IoError("checkpoint tensor '" + name + "' missing or misshapen in " + path.string());
    }
    m = tensors[i++].value;
  });
  if (i != tensors.size()) throw IoError("checkpoint has unexpected extra tensors: " + path.string());
  return ckpt;
}

void write_training_log(const std::filesystem::path& path, std::span<const EpochLog> log) {
  std::FILE* f = std::fopen(path.string().c_str(), "w");
  if (!f) throw IoError("cannot open for writing: " + path.string());
  std::fprintf(f, "epoch,train_loss,train_auroc,val_auroc\n");
  auto real = [](double v) -> std::string {
    if (std::isnan(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
  };
  for (const auto& row : log) {
    std::fprintf(f, "%zu,%s,%s,%s\n", row.epoch, real(row.train_loss).c_str(), real(row.train_auroc).c_str(),
                 real(row.val_auroc).c_str());
  }
  if (std::fclose(f) != 0) throw IoError("write failed: " + path.string());
}

}  // namespace milbench
