#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace milbench {

struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;  // 0 or 1
};

/// Mann-Whitney AUROC with midranks: (concordant + 0.5 * tied) / (pos * neg).
/// Throws UndefinedMetricError when a class is missing or a score is not
/// finite.
double auroc(std::span<const double> scores, std::span<const int> labels);
inline double auroc(const ScoredSet& s) { return auroc(s.scores, s.labels); }

/// Average precision over descending unique thresholds; tied scores form one
/// block. Throws UndefinedMetricError without positives.
double auprc(std::span<const double> scores, std::span<const int> labels);
inline double auprc(const ScoredSet& s) { return auprc(s.scores, s.labels); }

/// Attention mass on positive instances: sum_j a_j * y_j.
double attention_correctness(std::span<const double> attention, std::span<const int> instance_labels);

/// Image-independent bell curve over instance position, centred on the
/// middle instance with standard deviation rel_width * S.
std::vector<double> centered_gaussian_attention(std::size_t s, double rel_width);

struct AttentionEval {
  std::vector<std::vector<double>> attention;
  std::vector<std::vector<int>> instance_labels;
  std::vector<int> bag_labels;
};

struct InstanceReport {
  double attention_correctness = 0.0;
  double instance_auroc = 0.0;  // NaN when no positive bag has both instance classes
  double instance_auprc = 0.0;
  std::size_t positive_bags = 0;
  std::size_t ranked_bags = 0;  // positive bags that contributed to AUROC/AUPRC
};

/// Per-positive-bag metrics averaged over positive bags. Bags whose instances
/// are all one class are skipped for AUROC/AUPRC only.
InstanceReport instance_level_report(const AttentionEval& eval);

struct BootstrapResult {
  double mean_diff = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

/// Paired bootstrap of AUROC(a) - AUROC(b) with a 95% percentile interval.
/// Single-class resamples are redrawn, up to 1000 times per replicate.
BootstrapResult bootstrap_diff(std::span<const double> scores_a, std::span<const double> scores_b,
                               std::span<const int> labels, std::size_t n_boot, std::uint64_t seed);

/// Linear-interpolation percentile (q in [0, 100]) of unsorted values.
double percentile(std::vector<double> values, double q);

// Reports ---------------------------------------------------------------------

struct MetricRow {
  std::string split;
  std::uint64_t seed = 0;
  double auroc = 0.0;
  double auprc = 0.0;
  double attention_correctness = 0.0;
  double instance_auroc = 0.0;
  double instance_auprc = 0.0;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::size_t count = 0;
};

/// Mean and population standard deviation, skipping NaN entries.
MeanStd mean_std(std::span<const double> values);

struct MetricReport {
  std::vector<MetricRow> rows;

  /// split,seed,auroc,auprc,attention_correctness,instance_auroc,instance_auprc
  std::string to_csv() const;
  /// Per-metric mean and standard deviation across rows, as JSON text.
  std::string summary_json() const;
};

}  // namespace milbench
