#include "milbench/bayes.hpp"

#include <cmath>
#include <string>

#include "milbench/errors.hpp"

namespace milbench {

namespace {

constexpr double kLogRatioClamp = 700.0;

void check_dims(const Bag& bag, const GeneratorParams& params) {
  if (bag.num_features() != params.m) {
    throw ParameterError("bag has " + std::to_string(bag.num_features()) +
                         " features, generator expects " + std::to_string(params.m));
  }
  if (bag.num_instances() == 0) throw ParameterError("empty bag");
  if (!(params.sigma > 0.0)) throw ParameterError("sigma must be positive");
  if (params.k < 1 || params.k > params.m) throw ParameterError("need 1 <= k <= m");
}

// Log-likelihood ratio of each segment start against the all-base model:
// ratio_u = sum_{j in [u, u+R)} sum_{k < K} [log N(h_jk | mu+delta) - log N(h_jk | mu)].
std::vector<double> segment_log_ratios(const Bag& bag, const GeneratorParams& params) {
  const std::size_t s = bag.num_instances();
  const std::size_t r = params.r;
  if (r < 1 || s < r) {
    throw ParameterError("bag of " + std::to_string(s) + " instances is shorter than segment length " +
                         std::to_string(r));
  }
  const double inv_var = 1.0 / (params.sigma * params.sigma);
  // (x-mu)^2 - (x-mu-delta)^2 = 2 delta (x-mu) - delta^2
  std::vector<double> prefix(s + 1, 0.0);
  for (std::size_t j = 0; j < s; ++j) {
    const auto row = bag.embeddings.row(j);
    double c = 0.0;
    for (std::size_t f = 0; f < params.k; ++f) {
      c += 0.5 * inv_var * params.delta * (2.0 * (row[f] - params.mu) - params.delta);
    }
    prefix[j + 1] = prefix[j] + c;
  }
  std::vector<double> ratios(s - r + 1);
  for (std::size_t u = 0; u + r <= s; ++u) ratios[u] = prefix[u + r] - prefix[u];
  return ratios;
}

// log p(h|y=1) - log p(h|y=0)
double marginal_log_ratio(const Bag& bag, const GeneratorParams& params) {
  const auto ratios = segment_log_ratios(bag, params);
  return log_sum_exp(ratios) - std::log(static_cast<double>(ratios.size()));
}

}  // namespace

double log_likelihood_negative(const Bag& bag, const GeneratorParams& params) {
  check_dims(bag, params);
  const double inv_var = 1.0 / (params.sigma * params.sigma);
  const double per_entry = -0.5 * std::log(2.0 * 3.14159265358979323846) - std::log(params.sigma);
  double quad = 0.0;
  for (double x : bag.embeddings.values()) {
    const double d = x - params.mu;
    quad += d * d;
  }
  return static_cast<double>(bag.embeddings.size()) * per_entry - 0.5 * inv_var * quad;
}

double log_likelihood_positive(const Bag& bag, const GeneratorParams& params) {
  check_dims(bag, params);
  const double ratio = marginal_log_ratio(bag, params);
  return log_likelihood_negative(bag, params) + ratio;
}

PosteriorResult posterior(const Bag& bag, const GeneratorParams& params) {
  if (!(params.q_pos >= 0.0 && params.q_pos <= 1.0)) throw ParameterError("q_pos must lie in [0, 1]");
  PosteriorResult res;
  if (params.q_pos == 0.0 || params.q_pos == 1.0) {
    res.posterior = params.q_pos;
    return res;
  }
  check_dims(bag, params);
  const double ratio = marginal_log_ratio(bag, params);
  res.log_lik_neg = log_likelihood_negative(bag, params);
  res.log_lik_pos = res.log_lik_neg + ratio;
  // The class-conditional difference is taken from the segment ratios directly
  // rather than by subtracting two large log-likelihoods.
  const double logit = ratio + std::log(params.q_pos) - std::log1p(-params.q_pos);
  if (logit >= kLogRatioClamp) {
    res.posterior = 1.0;
  } else if (logit <= -kLogRatioClamp) {
    res.posterior = 0.0;
  } else {
    res.posterior = sigmoid(logit);
  }
  return res;
}

std::vector<double> oracle_scores(std::span<const Bag> dataset, const GeneratorParams& params) {
  std::vector<double> scores;
  scores.reserve(dataset.size());
  for (const Bag& bag : dataset) scores.push_back(posterior(bag, params).posterior);
  return scores;
}

}  // namespace milbench
