#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <map>

#include <nlohmann/json.hpp>

#include "milbench/errors.hpp"
#include "milbench/metrics.hpp"
#include "milbench/numerics.hpp"

using namespace milbench;

namespace {

// (#concordant + 0.5 #tied) / (#pos #neg) by pair enumeration.
double pairwise_auroc(const std::vector<double>& s, const std::vector<int>& y) {
  long long twice = 0, pos = 0, neg = 0;
  for (int v : y) (v ? pos : neg)++;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      twice += s[i] > s[j] ? 2 : (s[i] == s[j] ? 1 : 0);
    }
  }
  return static_cast<double>(twice) / static_cast<double>(2 * pos * neg);
}

// Average precision stepping through distinct thresholds from the top.
double stepwise_ap(const std::vector<double>& s, const std::vector<int>& y) {
  std::map<double, std::pair<int, int>, std::greater<>> blocks;  // score -> (pos, total)
  int total_pos = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    blocks[s[i]].first += y[i];
    blocks[s[i]].second += 1;
    total_pos += y[i];
  }
  double ap = 0.0, prev_recall = 0.0;
  int tp = 0, seen = 0;
  for (const auto& [score, b] : blocks) {
    tp += b.first;
    seen += b.second;
    const double recall = static_cast<double>(tp) / total_pos;
    ap += (recall - prev_recall) * (static_cast<double>(tp) / seen);
    prev_recall = recall;
  }
  return ap;
}

struct RandomSet {
  std::vector<double> scores;
  std::vector<int> labels;
};

RandomSet random_set(Rng& rng) {
  RandomSet s;
  const std::size_t n = 2 + rng.uniform_int(0, 198);
  const auto levels = 1 + rng.uniform_int(0, 20);  // few levels force ties
  for (std::size_t i = 0; i < n; ++i) {
    s.scores.push_back(static_cast<double>(rng.uniform_int(0, levels)) / static_cast<double>(levels));
    s.labels.push_back(rng.uniform() < 0.4 ? 1 : 0);
  }
  s.labels[0] = 1;
  s.labels[1] = 0;
  return s;
}

}  // namespace

TEST(Auroc, WorkedExamples) {
  EXPECT_EQ(auroc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}), 0.75);
  EXPECT_EQ(auroc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}), 1.0);
  EXPECT_EQ(auroc(std::vector<double>{0.3, 0.3, 0.3}, std::vector<int>{0, 1, 1}), 0.5);
}

TEST(Auroc, SingleClassAndMismatchRejected) {
  EXPECT_THROW(auroc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), UndefinedMetricError);
  EXPECT_THROW(auroc(std::vector<double>{0.1}, std::vector<int>{1, 0}), ParameterError);
}

TEST(Auroc, EqualsPairwiseCountExactly) {
  Rng rng(1);
  for (int t = 0; t < 1000; ++t) {
    const auto s = random_set(rng);
    ASSERT_EQ(auroc(s.scores, s.labels), pairwise_auroc(s.scores, s.labels)) << "set " << t;
  }
}

TEST(Auroc, InvariantUnderMonotoneTransform) {
  Rng rng(2);
  for (int t = 0; t < 100; ++t) {
    auto s = random_set(rng);
    std::vector<double> shifted;
    for (double v : s.scores) shifted.push_back(std::exp(3.0 * v) - 7.0);
    EXPECT_EQ(auroc(s.scores, s.labels), auroc(shifted, s.labels));
  }
}

TEST(Auroc, FlippedLabelsComplementWithoutTies) {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> scores;
    std::vector<int> labels, flipped;
    for (int i = 0; i < 50; ++i) {
      scores.push_back(rng.uniform());
      labels.push_back(i % 3 == 0);
      flipped.push_back(1 - labels.back());
    }
    EXPECT_NEAR(auroc(scores, labels) + auroc(scores, flipped), 1.0, 1e-15);
  }
}

TEST(Auprc, WorkedExamples) {
  EXPECT_NEAR(auprc(std::vector<double>{0.9, 0.8, 0.7}, std::vector<int>{1, 0, 1}), 0.5 + 0.5 * 2.0 / 3.0, 1e-15);
  EXPECT_EQ(auprc(std::vector<double>{0.9, 0.8, 0.1}, std::vector<int>{1, 1, 0}), 1.0);
  EXPECT_NEAR(auprc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, std::vector<int>{1, 0, 0, 0}), 0.25, 1e-15);
  EXPECT_THROW(auprc(std::vector<double>{0.5, 0.4}, std::vector<int>{0, 0}), UndefinedMetricError);
}

TEST(Auprc, MatchesStepwiseEnumeration) {
  Rng rng(4);
  for (int t = 0; t < 1000; ++t) {
    const auto s = random_set(rng);
    ASSERT_NEAR(auprc(s.scores, s.labels), stepwise_ap(s.scores, s.labels), 1e-12) << "set " << t;
  }
}

TEST(AttentionCorrectness, Basics) {
  EXPECT_EQ(attention_correctness(std::vector<double>{0.5, 0.5, 0.0}, std::vector<int>{1, 1, 0}), 1.0);
  EXPECT_NEAR(attention_correctness(std::vector<double>(4, 0.25), std::vector<int>{0, 1, 1, 0}), 0.5, 1e-15);
  EXPECT_EQ(attention_correctness(std::vector<double>{0.0, 1.0}, std::vector<int>{1, 0}), 0.0);
  EXPECT_THROW(attention_correctness(std::vector<double>{1.0}, std::vector<int>{1, 0}), ParameterError);
}

TEST(GaussianBaseline, ShapeAndLimits) {
  EXPECT_EQ(centered_gaussian_attention(1, 0.25), std::vector<double>{1.0});
  for (std::size_t s : {2u, 7u, 30u}) {
    const auto a = centered_gaussian_attention(s, 0.25);
    double sum = 0.0;
    for (std::size_t j = 0; j < s; ++j) {
      EXPECT_NEAR(a[j], a[s - 1 - j], 1e-15);
      sum += a[j];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_GE(a[s / 2], a[0]);
  }
  for (double v : centered_gaussian_attention(3, 1e6)) EXPECT_NEAR(v, 1.0 / 3.0, 1e-6);
}

TEST(InstanceReport, OneHotAndUniform) {
  AttentionEval e;
  e.attention = {{0.0, 1.0, 0.0}};
  e.instance_labels = {{0, 1, 0}};
  e.bag_labels = {1};
  auto r = instance_level_report(e);
  EXPECT_EQ(r.attention_correctness, 1.0);
  EXPECT_EQ(r.instance_auroc, 1.0);
  EXPECT_EQ(r.instance_auprc, 1.0);

  AttentionEval u;
  u.attention = {std::vector<double>(4, 0.25), std::vector<double>(5, 0.2), std::vector<double>(3, 1.0 / 3)};
  u.instance_labels = {{0, 1, 1, 0}, {1, 0, 0, 0, 0}, {0, 0, 0}};
  u.bag_labels = {1, 1, 0};
  r = instance_level_report(u);
  EXPECT_NEAR(r.attention_correctness, (0.5 + 0.2) / 2, 1e-15);
  EXPECT_EQ(r.instance_auroc, 0.5);
  EXPECT_EQ(r.positive_bags, 2u);

  AttentionEval none;
  none.attention = {{1.0}};
  none.instance_labels = {{0}};
  none.bag_labels = {0};
  EXPECT_THROW(instance_level_report(none), UndefinedMetricError);
}

TEST(InstanceReport, GaussianBaselineIsChanceWhenPositionIsUninformative) {
  Rng rng(5);
  AttentionEval e;
  for (int i = 0; i < 2000; ++i) {
    const std::size_t s = 20 + rng.uniform_int(0, 40);
    std::vector<int> y(s, 0);
    for (std::size_t j = 0; j < 12; ++j) y[j] = 1;
    shuffle(std::span<int>(y), rng);
    e.attention.push_back(centered_gaussian_attention(s, 0.25));
    e.instance_labels.push_back(y);
    e.bag_labels.push_back(1);
  }
  EXPECT_NEAR(instance_level_report(e).instance_auroc, 0.5, 0.05);
}

// With a uniformly placed contiguous segment, central slots are covered more
// often than edge slots, so the bell curve ranks above chance. Oracle: rank by
// distance to the centre and count pairs directly.
TEST(InstanceReport, GaussianBaselineOnContiguousSegmentsMatchesRankOracle) {
  Rng rng(5);
  AttentionEval e;
  double oracle = 0.0;
  for (int i = 0; i < 500; ++i) {
    const std::size_t s = 20 + rng.uniform_int(0, 40);
    const std::size_t u = rng.uniform_int(0, s - 12);
    std::vector<int> y(s, 0);
    for (std::size_t j = u; j < u + 12; ++j) y[j] = 1;
    e.attention.push_back(centered_gaussian_attention(s, 0.25));
    e.instance_labels.push_back(y);
    e.bag_labels.push_back(1);
    const double c = 0.5 * static_cast<double>(s - 1);
    double wins = 0.0, pairs = 0.0;
    for (std::size_t a = 0; a < s; ++a) {
      for (std::size_t b = 0; b < s; ++b) {
        if (y[a] != 1 || y[b] != 0) continue;
        const double da = std::abs(static_cast<double>(a) - c), db = std::abs(static_cast<double>(b) - c);
        wins += da < db ? 1.0 : (da == db ? 0.5 : 0.0);
        pairs += 1.0;
      }
    }
    oracle += wins / pairs;
  }
  oracle /= 500.0;
  const double got = instance_level_report(e).instance_auroc;
  EXPECT_NEAR(got, oracle, 1e-12);
  EXPECT_GT(got, 0.55);
}

TEST(Bootstrap, IdenticalScoresAndDeterminism) {
  Rng rng(6);
  std::vector<double> a, b;
  std::vector<int> y;
  for (int i = 0; i < 200; ++i) {
    y.push_back(i % 2);
    a.push_back(y.back() + 0.01 * rng.uniform());  // perfectly ranked
    b.push_back(rng.uniform());
  }
  const auto same = bootstrap_diff(a, a, y, 200, 1);
  EXPECT_EQ(same.mean_diff, 0.0);
  EXPECT_LE(same.ci_low, 0.0);
  EXPECT_GE(same.ci_high, 0.0);
  const auto d1 = bootstrap_diff(a, b, y, 300, 9), d2 = bootstrap_diff(a, b, y, 300, 9);
  EXPECT_EQ(d1.mean_diff, d2.mean_diff);
  EXPECT_EQ(d1.ci_low, d2.ci_low);
  EXPECT_GT(d1.ci_low, 0.0);
}

TEST(Summary, PercentileAndMeanStd) {
  EXPECT_EQ(percentile({1, 2, 3, 4, 5}, 50), 3.0);
  EXPECT_NEAR(percentile({1, 2, 3, 4}, 25), 1.75, 1e-15);
  const std::vector<double> v{1.0, 3.0, std::numeric_limits<double>::quiet_NaN()};
  const auto ms = mean_std(v);
  EXPECT_EQ(ms.count, 2u);
  EXPECT_EQ(ms.mean, 2.0);
  EXPECT_EQ(ms.std, 1.0);
}

TEST(Report, CsvAndJson) {
  MetricReport r;
  r.rows.push_back({"test", 0, 0.8, 0.7, 0.5, 0.6, 0.4});
  r.rows.push_back({"test", 1, 0.6, 0.5, 0.3, 0.4, 0.2});
  const auto csv = r.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "split,seed,auroc,auprc,attention_correctness,instance_auroc,instance_auprc");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  const auto j = nlohmann::json::parse(r.summary_json());
  EXPECT_NEAR(j["auroc"]["mean"].get<double>(), 0.7, 1e-15);
  EXPECT_NEAR(j["auroc"]["std"].get<double>(), 0.1, 1e-15);
}
