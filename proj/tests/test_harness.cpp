#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "milbench/errors.hpp"
#include "milbench/harness.hpp"

using namespace milbench;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "milbench_harness_test" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& f) {
  std::ifstream in(f, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

ExperimentConfig tiny_config(const std::filesystem::path& out) {
  ExperimentConfig cfg;
  cfg.generator.m = 6;
  cfg.generator.s_low = 8;
  cfg.generator.s_high = 14;
  cfg.generator.r = 4;
  cfg.generator.delta = 1.0;
  cfg.sizes = {40, 80};
  cfg.test_size = 60;
  cfg.seeds = {0, 1};
  cfg.methods = {parse_method("mean"), parse_method("embedding/smap"), parse_method("prediction/max")};
  cfg.grid = {{0.05}, {0.001, 0.0}};
  cfg.model.epochs = 4;
  cfg.model.batch_size = 16;
  cfg.model.arch.attention_dim = 4;
  cfg.output_dir = out;
  return cfg;
}

// results.csv with the wall_time_s column blanked.
std::string without_wall_time(const std::string& csv) {
  std::istringstream in(csv);
  std::string out, line;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) f.push_back(c);
    if (f.size() == 9) f[6] = "";
    for (std::size_t i = 0; i < f.size(); ++i) out += (i ? "," : "") + f[i];
    out += "\n";
  }
  return out;
}

}  // namespace

TEST(Methods, NineValidCombinations) {
  const auto all = all_methods();
  EXPECT_EQ(all.size(), 9u);
  EXPECT_EQ(parse_method("transmil").ordering, Ordering::embedding_aggregation);
  EXPECT_EQ(parse_method("prediction/smap").pooling, PoolingKind::smap);
  EXPECT_THROW(parse_method("prediction/transmil"), ConfigError);
  EXPECT_THROW(parse_method("median"), ConfigError);
}

TEST(Config, DefaultsAndValidation) {
  ExperimentConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.sizes.front(), 100u);
  EXPECT_EQ(cfg.sizes.back(), 10000u);
  EXPECT_EQ(cfg.test_size, 1000u);
  EXPECT_EQ(cfg.seeds.size(), 3u);
  EXPECT_EQ(cfg.generator.r, 12u);
  cfg.sizes = {200, 100};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.seeds.clear();
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_THROW(experiment_config_from_json(nlohmann::json{{"sizes", "many"}}), ConfigError);
}

TEST(Config, JsonRoundTripAndHash) {
  auto cfg = tiny_config("/tmp/x");
  const auto back = experiment_config_from_json(to_json(cfg));
  EXPECT_EQ(to_json(back), to_json(cfg));
  EXPECT_EQ(config_hash(back), config_hash(cfg));
  auto other = cfg;
  other.output_dir = "/elsewhere";
  EXPECT_EQ(config_hash(other), config_hash(cfg));
  other.seeds = {0, 2};
  EXPECT_NE(config_hash(other), config_hash(cfg));
  const auto dir = fresh_dir("cfg");
  std::ofstream(dir / "c.json") << to_json(cfg).dump();
  EXPECT_EQ(to_json(load_experiment_config(dir / "c.json")), to_json(cfg));
  EXPECT_THROW(load_experiment_config(dir / "missing.json"), IoError);
}

TEST(Results, RowFormatRoundTrip) {
  ResultRow r{"smap", "embedding", 100, 2, 0.75, 0.5, 1.25, 0.01, 0.0};
  EXPECT_EQ(format_result_row(r), "smap,embedding,100,2,0.75,0.5,1.250,0.01,0");
  const auto dir = fresh_dir("rows");
  std::ofstream(dir / "r.csv") << kResultHeader << "\n" << format_result_row(r) << "\n";
  const auto rows = read_results(dir / "r.csv");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].test_auroc, 0.75);
  std::ofstream(dir / "bad.csv") << "a,b\n";
  EXPECT_THROW(read_results(dir / "bad.csv"), IoError);
}

TEST(Split, DependsOnlyOnSeedAndSize) {
  auto cfg = tiny_config("/tmp/x");
  auto pool = make_train_pool(cfg, 3, 80);
  const auto before = pool.front().embeddings;
  std::vector<double> first, second;
  with_split(pool, 40, 3, [&](auto tr, auto va) {
    EXPECT_EQ(tr.size(), 32u);
    EXPECT_EQ(va.size(), 8u);
    first.push_back(tr[0].embeddings(0, 0));
  });
  with_split(pool, 80, 3, [&](auto, auto) {});
  with_split(pool, 40, 3, [&](auto tr, auto) { second.push_back(tr[0].embeddings(0, 0)); });
  EXPECT_EQ(first, second);
  EXPECT_EQ(pool.front().embeddings, before);  // order restored
  EXPECT_THROW(with_split(pool, 81, 3, [](auto, auto) {}), ParameterError);
}

TEST(Generate, FilesAndManifestAreReproducible) {
  auto cfg = tiny_config("/tmp/x");
  const auto a = fresh_dir("gen_a"), b = fresh_dir("gen_b");
  const auto sa = cmd_generate(cfg, a, "txt");
  cmd_generate(cfg, b, "txt");
  EXPECT_EQ(sa.files.size(), 1u + 2 * cfg.seeds.size());
  for (const auto& f : sa.files) EXPECT_EQ(slurp(f), slurp(b / f.filename())) << f;
  const auto manifest = nlohmann::json::parse(slurp(sa.manifest));
  EXPECT_EQ(manifest["config"]["generator"]["r"], 4);
  EXPECT_EQ(read_dataset(a / "test.txt").bags.size(), 60u);
  EXPECT_EQ(read_dataset(a / "seed0_train.txt").bags.size(), 64u);
  EXPECT_THROW(cmd_generate(cfg, a, "csv"), ConfigError);
}

TEST(Bayes, OracleRowAndMismatch) {
  auto cfg = tiny_config("/tmp/x");
  const auto dir = fresh_dir("bayes");
  cmd_generate(cfg, dir);
  const auto row = cmd_bayes(dir / "test.bin", cfg.generator);
  EXPECT_EQ(row.method, "bayes");
  EXPECT_GT(row.test_auroc, 0.6);
  auto wrong = cfg.generator;
  wrong.r = 5;
  EXPECT_THROW(cmd_bayes(dir / "test.bin", wrong), DataMismatchError);
  wrong = cfg.generator;
  wrong.m = 7;
  EXPECT_THROW(cmd_bayes(dir / "test.bin", wrong), DataMismatchError);
  EXPECT_THROW(cmd_bayes(dir / "nothing.bin", cfg.generator), IoError);
}

TEST(Bayes, NoSignalIsChance) {
  auto cfg = tiny_config("/tmp/x");
  cfg.generator.delta = 0.0;
  cfg.test_size = 400;
  const auto dir = fresh_dir("bayes0");
  cmd_generate(cfg, dir);
  EXPECT_NEAR(cmd_bayes(dir / "test.bin", cfg.generator).test_auroc, 0.5, 0.05);
}

TEST(Sweep, SingleCellGivesOneRow) {
  auto cfg = tiny_config(fresh_dir("one"));
  cfg.sizes = {40};
  cfg.seeds = {0};
  cfg.methods = {parse_method("mean")};
  cfg.grid = {{0.05}, {0.0}};
  cfg.include_bayes = false;
  const auto s = cmd_sweep(cfg);
  EXPECT_EQ(s.rows.size(), 1u);
  EXPECT_EQ(s.total_runs, 1u);
  EXPECT_EQ(read_results(cfg.output_dir / "results.csv").size(), 1u);
}

TEST(Sweep, RerunIsByteIdenticalAndResumeSkips) {
  auto cfg = tiny_config(fresh_dir("det_a"));
  const auto a = cmd_sweep(cfg);
  EXPECT_EQ(a.total_runs, 3u * 2 * 2 * 2);
  EXPECT_EQ(a.rows.size(), (3u + 1) * 2 * 2);
  EXPECT_EQ(a.failed, 0u);
  const auto first = slurp(cfg.output_dir / "results.csv");

  auto cfg_b = cfg;
  cfg_b.output_dir = fresh_dir("det_b");
  cmd_sweep(cfg_b);
  EXPECT_EQ(without_wall_time(first), without_wall_time(slurp(cfg_b.output_dir / "results.csv")));

  // Drop the last rows and resume: the file is completed to the same content.
  std::string text = first;
  for (int i = 0; i < 3; ++i) text.erase(text.rfind('\n', text.size() - 2) + 1);
  std::ofstream(cfg.output_dir / "results.csv", std::ios::trunc) << text;
  SweepOptions opts;
  opts.resume = true;
  const auto r = cmd_sweep(cfg, opts);
  EXPECT_EQ(r.trained, 3u);
  EXPECT_EQ(without_wall_time(slurp(cfg.output_dir / "results.csv")), without_wall_time(first));

  // Plot data: one TSV per method with one line per size.
  const auto tsv = slurp(cfg.output_dir / "plot_embedding_mean.tsv");
  EXPECT_EQ(tsv.substr(0, tsv.find('\n')), "size\tmean_auroc\tstd_auroc");
  EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 3);

  auto changed = cfg;
  changed.seeds = {0, 5};
  EXPECT_THROW(cmd_sweep(changed, opts), DataMismatchError);
}

TEST(Sweep, FailuresAreRecordedAndSweepContinues) {
  auto cfg = tiny_config(fresh_dir("fail"));
  cfg.sizes = {2, 40};  // a 2-bag split cannot contain both classes in validation
  cfg.seeds = {0};
  cfg.methods = {parse_method("mean")};
  const auto s = cmd_sweep(cfg);
  EXPECT_EQ(s.failed, 1u);
  const auto rows = read_results(cfg.output_dir / "results.csv");
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_TRUE(std::isnan(rows[1].test_auroc));
  EXPECT_FALSE(std::isnan(rows[3].test_auroc));
  const auto failures = slurp(cfg.output_dir / "failures.csv");
  EXPECT_EQ(std::count(failures.begin(), failures.end(), '\n'), 2);
}

TEST(TrainAndAttention, EndToEnd) {
  auto cfg = tiny_config("/tmp/x");
  cfg.sizes = {80};
  cfg.seeds = {0};
  const auto dir = fresh_dir("train");
  cmd_generate(cfg, dir);
  TrainRequest req;
  req.train_path = dir / "seed0_train.bin";
  req.val_path = dir / "seed0_val.bin";
  req.test_path = dir / "test.bin";
  req.method = parse_method("smap");
  req.grid = cfg.grid;
  req.model = cfg.model;
  req.checkpoint_path = dir / "smap.ckpt";
  const auto summary = cmd_train(req);
  ASSERT_TRUE(summary.test_auroc.has_value());
  EXPECT_TRUE(std::filesystem::exists(dir / "smap.ckpt.manifest.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "smap.ckpt.log.csv"));

  const auto report = cmd_eval_attention(dir / "smap.ckpt", dir / "test.bin", true, 0.25);
  ASSERT_EQ(report.rows.size(), 2u);
  EXPECT_EQ(report.rows[0].split, "embedding/smap");
  EXPECT_EQ(report.rows[0].auroc, *summary.test_auroc);
  EXPECT_EQ(report.rows[1].split, "centered_gaussian");
  EXPECT_GE(report.rows[0].attention_correctness, 0.0);
  EXPECT_LE(report.rows[0].attention_correctness, 1.0);

  req.method = parse_method("mean");
  req.checkpoint_path = dir / "mean.ckpt";
  cmd_train(req);
  EXPECT_THROW(cmd_eval_attention(dir / "mean.ckpt", dir / "test.bin", false), UndefinedMetricError);
  EXPECT_EQ(cmd_eval_attention(dir / "mean.ckpt", dir / "test.bin", true).rows.size(), 1u);
}

TEST(Report, GroupsBySizeAndMethod) {
  auto cfg = tiny_config(fresh_dir("report"));
  cfg.seeds = {0, 1};
  cfg.methods = {parse_method("mean")};
  cmd_sweep(cfg);
  const auto j = cmd_report(cfg.output_dir / "results.csv");
  EXPECT_EQ(j["rows"], 8);
  ASSERT_EQ(j["groups"].size(), 4u);
  for (const auto& g : j["groups"]) EXPECT_EQ(g["test_auroc"]["n"], 2);
}
