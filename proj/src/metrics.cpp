#include "milbench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "milbench/errors.hpp"
#include "milbench/numerics.hpp"

namespace milbench {

namespace {

void check_scored(std::span<const double> scores, std::span<const int> labels, const char* what) {
  if (scores.size() != labels.size()) {
    throw ParameterError(std::string(what) + ": scores and labels differ in length");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw UndefinedMetricError(std::string(what) + ": non-finite score");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw ParameterError(std::string(what) + ": labels must be 0 or 1");
  }
}

std::vector<std::size_t> order_ascending(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  return idx;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  check_scored(scores, labels, "auroc");
  const auto n_pos = static_cast<std::uint64_t>(std::count(labels.begin(), labels.end(), 1));
  const std::uint64_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("auroc: both classes are required");

  // Twice the midrank of a tie block covering 1-based ranks i+1..j is i+1+j,
  // an integer, so the statistic is formed from exact integer counts.
  const auto idx = order_ascending(scores);
  std::uint64_t doubled_rank_sum = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i + 1;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const std::uint64_t doubled_midrank = i + 1 + j;
    for (std::size_t t = i; t < j; ++t) {
      if (labels[idx[t]] == 1) doubled_rank_sum += doubled_midrank;
    }
    i = j;
  }
  const std::uint64_t doubled_u = doubled_rank_sum - n_pos * (n_pos + 1);
  return static_cast<double>(doubled_u) / static_cast<double>(2 * n_pos * n_neg);
}

double auprc(std::span<const double> scores, std::span<const int> labels) {
  check_scored(scores, labels, "auprc");
  const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (n_pos == 0) throw UndefinedMetricError("auprc: no positive examples");

  auto idx = order_ascending(scores);
  std::reverse(idx.begin(), idx.end());
  std::size_t tp = 0, fp = 0;
  double prev_recall = 0.0;
  double ap = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

double attention_correctness(std::span<const double> attention, std::span<const int> instance_labels) {
  if (attention.size() != instance_labels.size()) {
    throw ParameterError("attention_correctness: attention and labels differ in length");
  }
  double mass = 0.0;
  for (std::size_t j = 0; j < attention.size(); ++j) {
    if (instance_labels[j] == 1) mass += attention[j];
  }
  return mass;
}

std::vector<double> centered_gaussian_attention(std::size_t s, double rel_width) {
  if (s == 0) throw ParameterError("centered_gaussian_attention: need at least one instance");
  if (!(rel_width > 0.0)) throw ParameterError("centered_gaussian_attention: rel_width must be positive");
  const double centre = 0.5 * static_cast<double>(s - 1);
  const double width = rel_width * static_cast<double>(s);
  std::vector<double> a(s);
  double total = 0.0;
  for (std::size_t j = 0; j < s; ++j) {
    const double d = static_cast<double>(j) - centre;
    a[j] = std::exp(-d * d / (2.0 * width * width));
    total += a[j];
  }
  for (double& v : a) v /= total;
  return a;
}

InstanceReport instance_level_report(const AttentionEval& eval) {
  const std::size_t n = eval.bag_labels.size();
  if (eval.attention.size() != n || eval.instance_labels.size() != n) {
    throw ParameterError("instance_level_report: per-bag arrays differ in length");
  }
  InstanceReport rep;
  double correctness = 0.0, inst_auroc = 0.0, inst_auprc = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    if (eval.bag_labels[b] != 1) continue;
    const auto& a = eval.attention[b];
    const auto& y = eval.instance_labels[b];
    ++rep.positive_bags;
    correctness += attention_correctness(a, y);
    const auto n_pos = std::count(y.begin(), y.end(), 1);
    if (n_pos == 0 || static_cast<std::size_t>(n_pos) == y.size()) continue;
    ++rep.ranked_bags;
    inst_auroc += auroc(a, y);
    inst_auprc += auprc(a, y);
  }
  if (rep.positive_bags == 0) throw UndefinedMetricError("instance_level_report: no positive bags");
  rep.attention_correctness = correctness / static_cast<double>(rep.positive_bags);
  if (rep.ranked_bags > 0) {
    rep.instance_auroc = inst_auroc / static_cast<double>(rep.ranked_bags);
    rep.instance_auprc = inst_auprc / static_cast<double>(rep.ranked_bags);
  } else {
    rep.instance_auroc = std::numeric_limits<double>::quiet_NaN();
    rep.instance_auprc = std::numeric_limits<double>::quiet_NaN();
  }
  return rep;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ParameterError("percentile: empty input");
  if (!(q >= 0.0 && q <= 100.0)) throw ParameterError("percentile: q must lie in [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

BootstrapResult bootstrap_diff(std::span<const double> scores_a, std::span<const double> scores_b,
                               std::span<const int> labels, std::size_t n_boot, std::uint64_t seed) {
  const std::size_t n = labels.size();
  if (scores_a.size() != n || scores_b.size() != n) {
    throw ParameterError("bootstrap_diff: paired inputs differ in length");
  }
  if (n_boot < 100) throw ParameterError("bootstrap_diff: n_boot must be at least 100");
  constexpr int kMaxRedraws = 1000;

  Rng rng(seed, 0x6b6f6f7473ULL);
  std::vector<double> diffs;
  diffs.reserve(n_boot);
  std::vector<double> sa(n), sb(n);
  std::vector<int> y(n);
  for (std::size_t b = 0; b < n_boot; ++b) {
    bool ok = false;
    for (int attempt = 0; attempt <= kMaxRedraws && !ok; ++attempt) {
      std::size_t positives = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(rng.uniform_int(0, n - 1));
        sa[i] = scores_a[k];
        sb[i] = scores_b[k];
        y[i] = labels[k];
        positives += static_cast<std::size_t>(y[i]);
      }
      ok = positives > 0 && positives < n;
    }
    if (!ok) throw UndefinedMetricError("bootstrap_diff: could not draw a two-class resample");
    diffs.push_back(auroc(sa, y) - auroc(sb, y));
  }
  BootstrapResult res;
  res.mean_diff = std::accumulate(diffs.begin(), diffs.end(), 0.0) / static_cast<double>(diffs.size());
  res.ci_low = percentile(diffs, 2.5);
  res.ci_high = percentile(diffs, 97.5);
  return res;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  double sum = 0.0;
  for (double v : values) {
    if (std::isnan(v)) continue;
    sum += v;
    ++out.count;
  }
  if (out.count == 0) {
    out.mean = out.std = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  out.mean = sum / static_cast<double>(out.count);
  double ss = 0.0;
  for (double v : values) {
    if (!std::isnan(v)) ss += (v - out.mean) * (v - out.mean);
  }
  out.std = std::sqrt(ss / static_cast<double>(out.count));
  return out;
}

namespace {

std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string MetricReport::to_csv() const {
  std::string out = "split,seed,auroc,auprc,attention_correctness,instance_auroc,instance_auprc\n";
  for (const auto& r : rows) {
    out += r.split + "," + std::to_string(r.seed) + "," + fmt_real(r.auroc) + "," + fmt_real(r.auprc) + "," +
           fmt_real(r.attention_correctness) + "," + fmt_real(r.instance_auroc) + "," +
           fmt_real(r.instance_auprc) + "\n";
  }
  return out;
}

std::string MetricReport::summary_json() const {
  const auto column = [&](double MetricRow::*field) {
    std::vector<double> v;
    v.reserve(rows.size());
    for (const auto& r : rows) v.push_back(r.*field);
    const auto ms = mean_std(v);
    nlohmann::json j;
    j["mean"] = ms.count ? nlohmann::json(ms.mean) : nlohmann::json(nullptr);
    j["std"] = ms.count ? nlohmann::json(ms.std) : nlohmann::json(nullptr);
    j["n"] = ms.count;
    return j;
  };
  nlohmann::json j;
  j["auroc"] = column(&MetricRow::auroc);
  j["auprc"] = column(&MetricRow::auprc);
  j["attention_correctness"] = column(&MetricRow::attention_correctness);
  j["instance_auroc"] = column(&MetricRow::instance_auroc);
  j["instance_auprc"] = column(&MetricRow::instance_auprc);
  j["rows"] = rows.size();
  return j.dump(2);
}

}  // namespace milbench
