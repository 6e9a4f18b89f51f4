#pragma once

// Closed-form posterior p(y = 1 | h, S) under the Shifted Mean MIL process.
// The uniform p(S) factor is identical for both classes and cancels, so it is
// never evaluated.

#include <span>
#include <vector>

#include "milbench/synthgen.hpp"

namespace milbench {

struct PosteriorResult {
  double posterior = 0.5;
  double log_lik_neg = 0.0;
  double log_lik_pos = 0.0;
};

/// sum_j sum_k log N(h_jk | mu, sigma^2)
double log_likelihood_negative(const Bag& bag, const GeneratorParams& params);

/// log p(h | S, y = 1): the segment start u is marginalized over its uniform
/// prior on {0, ..., S - R}. Linear in S via prefix sums of per-instance
/// log-likelihood ratios.
double log_likelihood_positive(const Bag& bag, const GeneratorParams& params);

/// For q_pos in {0, 1} the prior is returned without touching the data
/// (both log-likelihood fields are left at 0).
PosteriorResult posterior(const Bag& bag, const GeneratorParams& params);

std::vector<double> oracle_scores(std::span<const Bag> dataset, const GeneratorParams& params);

}  // namespace milbench
