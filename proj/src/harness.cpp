#include "milbench/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <tuple>

#include "milbench/bayes.hpp"

namespace milbench {

namespace {

constexpr std::uint64_t kTestStream = 0x74657374;  // "test"
constexpr std::uint64_t kPoolStream = 0x706f6f6c;  // "pool"
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt_real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_real(const std::string& s) {
  if (s == "nan" || s.empty()) return kNaN;
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument(s);
  return v;
}

std::string method_name(const MethodSpec& m) { return std::string(to_string(m.pooling)); }
std::string ordering_name(const MethodSpec& m) { return std::string(to_string(m.ordering)); }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

nlohmann::json generator_json(const GeneratorParams& g) {
  return {{"q_pos", g.q_pos}, {"s_low", g.s_low}, {"s_high", g.s_high}, {"r", g.r},     {"delta", g.delta},
          {"mu", g.mu},       {"sigma", g.sigma}, {"m", g.m},           {"k", g.k}};
}

GeneratorParams generator_from_json(const nlohmann::json& j) {
  GeneratorParams g;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("q_pos", g.q_pos);
  get("s_low", g.s_low);
  get("s_high", g.s_high);
  get("r", g.r);
  get("delta", g.delta);
  get("mu", g.mu);
  get("sigma", g.sigma);
  get("m", g.m);
  get("k", g.k);
  return g;
}

ModelConfig method_config(const ExperimentConfig& cfg, const MethodSpec& m) {
  ModelConfig c = cfg.model;
  c.ordering = m.ordering;
  c.pooling = m.pooling;
  return c;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), ',', ';');
  return s;
}

}  // namespace

std::vector<MethodSpec> all_methods() {
  std::vector<MethodSpec> out;
  for (auto ordering : {Ordering::embedding_aggregation, Ordering::prediction_aggregation}) {
    for (auto pooling : {PoolingKind::max, PoolingKind::mean, PoolingKind::abmil, PoolingKind::smap,
                         PoolingKind::transmil}) {
      if (pooling == PoolingKind::transmil && ordering == Ordering::prediction_aggregation) continue;
      out.push_back({ordering, pooling});
    }
  }
  return out;
}

MethodSpec parse_method(std::string_view text) {
  MethodSpec m;
  const auto slash = text.find('/');
  std::string_view pooling = text;
  if (slash != std::string_view::npos) {
    m.ordering = parse_ordering(text.substr(0, slash));
    pooling = text.substr(slash + 1);
  }
  try {
    m.pooling = parse_pooling(pooling);
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  if (m.pooling == PoolingKind::transmil && m.ordering == Ordering::prediction_aggregation) {
    throw ConfigError("transmil has no prediction-aggregation variant");
  }
  return m;
}

void ExperimentConfig::validate() const {
  try {
    generator.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  if (sizes.empty()) throw ConfigError("sizes must not be empty");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] < 2) throw ConfigError("every train size needs at least 2 bags");
    if (i > 0 && sizes[i] <= sizes[i - 1]) throw ConfigError("sizes must be strictly ascending");
  }
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds must be distinct");
  }
  if (test_size == 0) throw ConfigError("test_size must be positive");
  if (grid.learning_rates.empty() || grid.reg_strengths.empty()) throw ConfigError("grid must not be empty");
  for (std::size_t i = 0; i < methods.size(); ++i) {
    method_config(*this, methods[i]).validate();
    for (std::size_t k = 0; k < i; ++k) {
      if (methods[k] == methods[i]) throw ConfigError("duplicate method " + method_name(methods[i]));
    }
  }
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["generator"] = generator_json(cfg.generator);
  j["sizes"] = cfg.sizes;
  j["test_size"] = cfg.test_size;
  nlohmann::json methods = nlohmann::json::array();
  for (const auto& m : cfg.methods) methods.push_back(ordering_name(m) + "/" + method_name(m));
  j["methods"] = methods;
  j["grid"] = {{"lr", cfg.grid.learning_rates}, {"reg", cfg.grid.reg_strengths}};
  j["seeds"] = cfg.seeds;
  j["master_seed"] = cfg.master_seed;
  nlohmann::json model = to_json(cfg.model);
  for (const char* key : {"ordering", "pooling", "lr", "reg_strength"}) model.erase(key);
  j["model"] = model;
  j["include_bayes"] = cfg.include_bayes;
  j["output_dir"] = cfg.output_dir.string();
  return j;
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  try {
    if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
    if (j.contains("generator")) cfg.generator = generator_from_json(j.at("generator"));
    if (j.contains("sizes")) cfg.sizes = j.at("sizes").get<std::vector<std::size_t>>();
    if (j.contains("test_size")) cfg.test_size = j.at("test_size").get<std::size_t>();
    if (j.contains("methods")) {
      cfg.methods.clear();
      for (const auto& m : j.at("methods")) {
        if (m.is_string()) {
          cfg.methods.push_back(parse_method(m.get<std::string>()));
        } else {
          MethodSpec spec;
          spec.ordering = parse_ordering(m.value("ordering", std::string("embedding")));
          spec.pooling = parse_method(m.at("pooling").get<std::string>()).pooling;
          cfg.methods.push_back(spec);
        }
      }
    }
    if (j.contains("grid")) {
      const auto& g = j.at("grid");
      if (g.contains("lr")) cfg.grid.learning_rates = g.at("lr").get<std::vector<double>>();
      if (g.contains("reg")) cfg.grid.reg_strengths = g.at("reg").get<std::vector<double>>();
    }
    if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("master_seed")) cfg.master_seed = j.at("master_seed").get<std::uint64_t>();
    if (j.contains("model")) cfg.model = model_config_from_json(j.at("model"), cfg.model);
    if (j.contains("include_bayes")) cfg.include_bayes = j.at("include_bayes").get<bool>();
    if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  if (path.extension() == ".toml") throw ConfigError("TOML configs are not supported; use JSON");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

std::string config_hash(const ExperimentConfig& cfg) {
  nlohmann::json j = to_json(cfg);
  j.erase("output_dir");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string format_result_row(const ResultRow& r) {
  char wall[32];
  std::snprintf(wall, sizeof wall, "%.3f", r.wall_time_s);
  return r.method + "," + r.ordering + "," + std::to_string(r.train_size) + "," + std::to_string(r.seed) + "," +
         fmt_real(r.test_auroc) + "," + fmt_real(r.test_auprc) + "," + wall + "," + fmt_real(r.best_lr) + "," +
         fmt_real(r.best_reg);
}

std::vector<ResultRow> read_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kResultHeader) throw IoError("bad results header in " + path.string());
  std::vector<ResultRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 9) throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected 9 fields");
    try {
      rows.push_back({f[0], f[1], std::stoull(f[2]), std::stoull(f[3]), parse_real(f[4]), parse_real(f[5]),
                      parse_real(f[6]), parse_real(f[7]), parse_real(f[8])});
    } catch (const std::exception&) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": malformed row");
    }
  }
  return rows;
}

std::vector<Bag> make_test_set(const ExperimentConfig& cfg) {
  Rng rng(cfg.master_seed, kTestStream);
  return sample_dataset(cfg.generator, cfg.test_size, rng);
}

std::vector<Bag> make_train_pool(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t n) {
  Rng rng = Rng(cfg.master_seed, kPoolStream).split(seed);
  return sample_dataset(cfg.generator, n, rng);
}

// ---------------------------------------------------------------------------

GenerateSummary cmd_generate(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                             const std::string& ext) {
  if (ext != "bin" && ext != "txt") throw ConfigError("dataset format must be bin or txt");
  cfg.validate();
  ensure_dir(out_dir);
  GenerateSummary out;
  const auto file = [&](const std::string& stem) { return out_dir / (stem + "." + ext); };

  {
    const auto test = make_test_set(cfg);
    out.files.push_back(file("test"));
    write_dataset(out.files.back(), test, cfg.generator.r);
  }
  const std::size_t n = cfg.sizes.back();
  nlohmann::json splits = nlohmann::json::array();
  for (std::uint64_t seed : cfg.seeds) {
    auto pool = make_train_pool(cfg, seed, n);
    with_split(pool, n, seed, [&](std::span<const Bag> train, std::span<const Bag> val) {
      const std::string stem = "seed" + std::to_string(seed);
      out.files.push_back(file(stem + "_train"));
      write_dataset(out.files.back(), train, cfg.generator.r);
      out.files.push_back(file(stem + "_val"));
      write_dataset(out.files.back(), val, cfg.generator.r);
      splits.push_back({{"seed", seed}, {"train", train.size()}, {"val", val.size()}});
    });
  }

  nlohmann::json manifest;
  manifest["tool"] = kToolVersion;
  manifest["command"] = "generate";
  manifest["config"] = to_json(cfg);
  manifest["config_hash"] = config_hash(cfg);
  manifest["format"] = ext;
  manifest["splits"] = splits;
  nlohmann::json files = nlohmann::json::array();
  for (const auto& f : out.files) files.push_back(f.filename().string());
  manifest["files"] = files;
  out.manifest = out_dir / "generate_manifest.json";
  write_text(out.manifest, manifest.dump(2) + "\n");
  return out;
}

ResultRow cmd_bayes(const std::filesystem::path& dataset, const GeneratorParams& params) {
  params.validate();
  const auto data = read_dataset(dataset);
  if (data.bags.empty()) throw DataMismatchError("dataset " + dataset.string() + " has no bags");
  if (data.segment_length != params.r) {
    throw DataMismatchError("dataset segment length " + std::to_string(data.segment_length) +
                            " differs from r = " + std::to_string(params.r));
  }
  for (const Bag& b : data.bags) {
    if (b.num_features() != params.m) {
      throw DataMismatchError("dataset has " + std::to_string(b.num_features()) + " features, params say " +
                              std::to_string(params.m));
    }
    if (b.num_instances() < params.r) throw DataMismatchError("bag shorter than the segment length");
  }
  const auto start = std::chrono::steady_clock::now();
  const auto scores = oracle_scores(data.bags, params);
  std::vector<int> labels;
  for (const Bag& b : data.bags) labels.push_back(b.label);
  ResultRow row{"bayes", "oracle", 0, 0, auroc(scores, labels), auprc(scores, labels), 0.0, kNaN, kNaN};
  row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return row;
}

TrainSummary cmd_train(const TrainRequest& req) {
  ModelConfig base = req.model;
  base.ordering = req.method.ordering;
  base.pooling = req.method.pooling;
  base.validate();
  const auto train_set = read_dataset(req.train_path);
  const auto val_set = read_dataset(req.val_path);
  TrainSummary out;
  out.grid = grid_search(req.grid, train_set.bags, val_set.bags, base, req.threads);
  if (req.test_path) {
    const auto test = read_dataset(*req.test_path);
    const std::size_t m = out.grid.checkpoint.input_dim;
    for (const Bag& b : test.bags) {
      if (b.num_features() != m) throw DataMismatchError("test set feature count differs from training data");
    }
    const auto scores = predict(out.grid.config, out.grid.checkpoint.params, test.bags);
    std::vector<int> labels;
    for (const Bag& b : test.bags) labels.push_back(b.label);
    out.test_auroc = auroc(scores, labels);
    out.test_auprc = auprc(scores, labels);
  }
  if (req.checkpoint_path.has_parent_path()) ensure_dir(req.checkpoint_path.parent_path());
  save_checkpoint(req.checkpoint_path, out.grid.checkpoint);
  write_training_log(req.checkpoint_path.string() + ".log.csv", out.grid.checkpoint.log);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

using RowKey = std::tuple<std::string, std::string, std::size_t, std::uint64_t>;

RowKey key_of(const ResultRow& r) { return {r.method, r.ordering, r.train_size, r.seed}; }

void write_plot_data(const std::filesystem::path& dir, const std::vector<ResultRow>& rows) {
  std::map<std::pair<std::string, std::string>, std::map<std::size_t, std::vector<double>>> curves;
  for (const auto& r : rows) curves[{r.ordering, r.method}][r.train_size].push_back(r.test_auroc);
  for (const auto& [method, by_size] : curves) {
    std::string text = "size\tmean_auroc\tstd_auroc\n";
    for (const auto& [size, values] : by_size) {
      const auto ms = mean_std(values);
      text += std::to_string(size) + "\t" + fmt_real(ms.count ? ms.mean : kNaN) + "\t" +
              fmt_real(ms.count ? ms.std : kNaN) + "\n";
    }
    write_text(dir / ("plot_" + method.first + "_" + method.second + ".tsv"), text);
  }
}

}  // namespace

SweepSummary cmd_sweep(const ExperimentConfig& cfg, const SweepOptions& opts) {
  cfg.validate();
  const auto& dir = cfg.output_dir;
  ensure_dir(dir);
  const auto results_path = dir / "results.csv";
  const auto failures_path = dir / "failures.csv";
  const auto manifest_path = dir / "manifest.json";
  const std::string hash = config_hash(cfg);

  SweepSummary summary;
  const std::size_t grid_size = cfg.grid.learning_rates.size() * cfg.grid.reg_strengths.size();
  summary.total_runs = cfg.methods.size() * cfg.sizes.size() * cfg.seeds.size() * grid_size;

  std::set<RowKey> done;
  if (opts.resume && std::filesystem::exists(manifest_path)) {
    std::ifstream in(manifest_path);
    nlohmann::json old;
    try {
      old = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw IoError("bad sweep manifest " + manifest_path.string() + ": " + e.what());
    }
    if (old.value("config_hash", std::string()) != hash) {
      throw DataMismatchError("resume: " + manifest_path.string() + " was written for config " +
                              old.value("config_hash", std::string("?")) + ", this config is " + hash);
    }
    if (std::filesystem::exists(results_path)) {
      summary.rows = read_results(results_path);
      for (const auto& r : summary.rows) done.insert(key_of(r));
    }
  }

  nlohmann::json manifest;
  manifest["tool"] = kToolVersion;
  manifest["command"] = "sweep";
  manifest["config"] = to_json(cfg);
  manifest["config_hash"] = hash;
  manifest["total_runs"] = summary.total_runs;
  write_text(manifest_path, manifest.dump(2) + "\n");

  const bool fresh = !opts.resume || done.empty();
  std::ofstream results(results_path, fresh ? std::ios::trunc : std::ios::app);
  if (!results) throw IoError("cannot open " + results_path.string());
  if (fresh) results << kResultHeader << "\n" << std::flush;
  const bool fresh_failures = fresh || !std::filesystem::exists(failures_path);
  std::ofstream failures(failures_path, fresh_failures ? std::ios::trunc : std::ios::app);
  if (!failures) throw IoError("cannot open " + failures_path.string());
  if (fresh_failures) failures << "method,ordering,train_size,seed,error\n" << std::flush;

  auto emit = [&](const ResultRow& row) {
    results << format_result_row(row) << "\n" << std::flush;
    if (!results) throw IoError("write failed: " + results_path.string());
    summary.rows.push_back(row);
    ++summary.trained;
  };

  auto pending = [&](const RowKey& key) {
    if (done.count(key)) {
      ++summary.skipped;
      return false;
    }
    return true;
  };

  std::vector<Bag> test_set;
  std::vector<int> test_labels;
  double bayes_auroc = kNaN, bayes_auprc = kNaN, bayes_time = 0.0;
  auto ensure_test = [&] {
    if (!test_set.empty()) return;
    test_set = make_test_set(cfg);
    for (const Bag& b : test_set) test_labels.push_back(b.label);
    if (cfg.include_bayes) {
      const auto start = std::chrono::steady_clock::now();
      const auto scores = oracle_scores(test_set, cfg.generator);
      bayes_auroc = auroc(scores, test_labels);
      bayes_auprc = auprc(scores, test_labels);
      bayes_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
  };

  std::size_t runs_done = 0;
  for (std::uint64_t seed : cfg.seeds) {
    bool seed_pending = false;
    for (std::size_t size : cfg.sizes) {
      if (cfg.include_bayes && !done.count({"bayes", "oracle", size, seed})) seed_pending = true;
      for (const auto& m : cfg.methods) {
        if (!done.count({method_name(m), ordering_name(m), size, seed})) seed_pending = true;
      }
    }
    if (!seed_pending) {
      summary.skipped += cfg.sizes.size() * (cfg.methods.size() + (cfg.include_bayes ? 1 : 0));
      runs_done += cfg.sizes.size() * cfg.methods.size() * grid_size;
      continue;
    }
    ensure_test();
    auto pool = make_train_pool(cfg, seed, cfg.sizes.back());
    for (std::size_t size : cfg.sizes) {
      if (cfg.include_bayes && pending({"bayes", "oracle", size, seed})) {
        emit({"bayes", "oracle", size, seed, bayes_auroc, bayes_auprc, bayes_time, kNaN, kNaN});
      }
      for (const auto& m : cfg.methods) {
        runs_done += grid_size;
        if (!pending({method_name(m), ordering_name(m), size, seed})) continue;
        ResultRow row{method_name(m), ordering_name(m), size, seed, kNaN, kNaN, 0.0, kNaN, kNaN};
        const auto start = std::chrono::steady_clock::now();
        try {
          with_split(pool, size, seed, [&](std::span<const Bag> train_set, std::span<const Bag> val_set) {
            ModelConfig base = method_config(cfg, m);
            base.init_seed = Rng(seed, size).split(static_cast<std::uint64_t>(m.pooling) * 2 +
                                                   static_cast<std::uint64_t>(m.ordering))
                                 .next_u64();
            const auto result = grid_search(cfg.grid, train_set, val_set, base, opts.threads);
            const auto scores = predict(result.config, result.checkpoint.params, test_set);
            row.test_auroc = auroc(scores, test_labels);
            row.test_auprc = auprc(scores, test_labels);
            row.best_lr = result.config.lr;
            row.best_reg = result.config.reg_strength;
          });
        } catch (const std::exception& e) {
          ++summary.failed;
          failures << row.method << "," << row.ordering << "," << size << "," << seed << "," << one_line(e.what())
                   << "\n"
                   << std::flush;
        }
        row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        emit(row);
        if (opts.progress) {
          *opts.progress << "[" << runs_done << "/" << summary.total_runs << "] " << row.ordering << "/"
                         << row.method << " size=" << size << " seed=" << seed
                         << " test_auroc=" << fmt_real(row.test_auroc) << " (" << row.wall_time_s << " s)\n"
                         << std::flush;
        }
      }
    }
  }
  write_plot_data(dir, summary.rows);
  return summary;
}

MetricReport cmd_eval_attention(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset,
                                bool baseline, double rel_width) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const auto data = read_dataset(dataset);
  for (const Bag& b : data.bags) {
    if (b.num_features() != ckpt.input_dim) throw DataMismatchError("dataset feature count differs from checkpoint");
  }
  const auto& cfg = ckpt.config;
  const bool has_attention = cfg.pooling == PoolingKind::abmil || cfg.pooling == PoolingKind::smap ||
                             cfg.pooling == PoolingKind::transmil;
  if (!has_attention && !baseline) {
    throw UndefinedMetricError(std::string(to_string(cfg.ordering)) + "/" + std::string(to_string(cfg.pooling)) +
                               " has no attention; pass the baseline flag for the centered Gaussian");
  }

  std::vector<double> scores;
  std::vector<int> labels;
  AttentionEval model_eval, gauss_eval;
  for (const Bag& b : data.bags) {
    const auto out = forward(cfg, ckpt.params, b.embeddings);
    scores.push_back(out.prob);
    labels.push_back(b.label);
    const auto inst = b.instance_labels.empty() ? segment_labels(b.num_instances(), b.segment_start,
                                                                 data.segment_length)
                                                : b.instance_labels;
    if (has_attention) {
      model_eval.attention.push_back(*out.attention);
      model_eval.instance_labels.push_back(inst);
      model_eval.bag_labels.push_back(b.label);
    }
    if (baseline) {
      gauss_eval.attention.push_back(centered_gaussian_attention(b.num_instances(), rel_width));
      gauss_eval.instance_labels.push_back(inst);
      gauss_eval.bag_labels.push_back(b.label);
    }
  }
  const double bag_auroc = auroc(scores, labels);
  const double bag_auprc = auprc(scores, labels);

  MetricReport report;
  auto add = [&](const std::string& name, const AttentionEval& eval, double a, double p) {
    const auto r = instance_level_report(eval);
    report.rows.push_back({name, cfg.init_seed, a, p, r.attention_correctness, r.instance_auroc, r.instance_auprc});
  };
  if (has_attention) {
    add(std::string(to_string(cfg.ordering)) + "/" + std::string(to_string(cfg.pooling)), model_eval, bag_auroc,
        bag_auprc);
  }
  if (baseline) add("centered_gaussian", gauss_eval, kNaN, kNaN);
  return report;
}

nlohmann::json cmd_report(const std::filesystem::path& results_csv) {
  const auto rows = read_results(results_csv);
  std::map<std::tuple<std::string, std::string, std::size_t>, std::pair<std::vector<double>, std::vector<double>>>
      groups;
  for (const auto& r : rows) {
    auto& g = groups[{r.ordering, r.method, r.train_size}];
    g.first.push_back(r.test_auroc);
    g.second.push_back(r.test_auprc);
  }
  auto stat = [](const std::vector<double>& v) {
    const auto ms = mean_std(v);
    nlohmann::json j;
    j["mean"] = ms.count ? nlohmann::json(ms.mean) : nlohmann::json(nullptr);
    j["std"] = ms.count ? nlohmann::json(ms.std) : nlohmann::json(nullptr);
    j["n"] = ms.count;
    return j;
  };
  nlohmann::json out;
  out["source"] = results_csv.string();
  out["rows"] = rows.size();
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [key, values] : groups) {
    entries.push_back({{"ordering", std::get<0>(key)},
                       {"method", std::get<1>(key)},
                       {"train_size", std::get<2>(key)},
                       {"test_auroc", stat(values.first)},
                       {"test_auprc", stat(values.second)},
                       {"failed", static_cast<std::size_t>(std::count_if(
                                      values.first.begin(), values.first.end(),
                                      [](double v) { return std::isnan(v); }))}});
  }
  out["groups"] = entries;
  return out;
}

}  // namespace milbench
