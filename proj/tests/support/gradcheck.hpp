#pragma once

// Central-difference check of the full model loss (BCE + penalty) against
// accumulate_gradient + add_regularization_gradient.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "milbench/model.hpp"

namespace gradcheck {

struct TensorError {
  std::string name;
  double rel_error = 0.0;
};

inline double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// ||a - n|| / max(||a||, ||n||, 1e-6). The floor sits above central-difference
// roundoff (about ulp(loss) / eps ~ 1e-11), so tensors whose true gradient is
// zero compare as equal while any real error above 1e-10 still shows.
inline double rel_error(std::span<const double> a, std::span<const double> n) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - n[i]) * (a[i] - n[i]);
  return std::sqrt(d) / std::max({norm(a), norm(n), 1e-6});
}

struct Case {
  milbench::ModelConfig cfg;
  milbench::ModelParams params;
  milbench::Matrix h;
  int label = 0;
};

// Random small instance of an (ordering, pooling) model with perturbed
// biases so no tensor sits at its zero initialization.
inline Case random_case(milbench::Ordering ordering, milbench::PoolingKind pooling, std::uint64_t seed) {
  using namespace milbench;
  Rng rng(seed, 77);
  Case c;
  c.cfg.ordering = ordering;
  c.cfg.pooling = pooling;
  c.cfg.init_seed = seed;
  c.cfg.arch.attention_dim = 4;
  c.cfg.arch.smap_alpha = 0.1 + 0.8 * rng.uniform();
  c.cfg.arch.smap_neighbors = 1 + rng.uniform_int(0, 1);
  c.cfg.arch.transmil = {8, 1, 2, 3};
  c.cfg.reg_kind = rng.uniform() < 0.5 ? RegKind::l1 : RegKind::l2;
  c.cfg.reg_strength = 0.01 * rng.uniform();
  const std::size_t m = 3 + rng.uniform_int(0, 2);
  const std::size_t s = 1 + rng.uniform_int(0, 6);
  c.params = init_model(c.cfg, m);
  visit_tensors(c.params, [&](const std::string&, Matrix& t, bool) {
    for (double& v : t.values()) v += 0.3 * rng.normal();
  });
  c.h = Matrix(s, m);
  for (double& v : c.h.values()) v = rng.normal();
  c.label = rng.uniform() < 0.5 ? 1 : 0;
  return c;
}

inline double total_loss(const Case& c, const milbench::ModelParams& p) {
  const auto out = milbench::forward(c.cfg, p, c.h);
  return milbench::bce_loss(out.prob, c.label, p, c.cfg.reg_kind, c.cfg.reg_strength);
}

inline std::vector<TensorError> check(const Case& c, double eps = 1e-5) {
  using namespace milbench;
  ModelParams grads = zeros_like(c.params);
  accumulate_gradient(c.cfg, c.params, c.h, c.label, 1.0, grads);
  add_regularization_gradient(c.params, c.cfg.reg_kind, c.cfg.reg_strength, grads);

  ModelParams probe = c.params;
  std::vector<Matrix*> tensors;
  std::vector<std::string> names;
  visit_tensors(probe, [&](const std::string& name, Matrix& t, bool) {
    tensors.push_back(&t);
    names.push_back(name);
  });
  std::vector<const Matrix*> analytic;
  visit_tensors(grads, [&](const std::string&, const Matrix& t, bool) { analytic.push_back(&t); });

  std::vector<TensorError> out;
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    auto x = tensors[t]->values();
    std::vector<double> numeric(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double keep = x[i];
      x[i] = keep + eps;
      const double up = total_loss(c, probe);
      x[i] = keep - eps;
      const double down = total_loss(c, probe);
      x[i] = keep;
      numeric[i] = (up - down) / (2 * eps);
    }
    out.push_back({names[t], rel_error(analytic[t]->values(), numeric)});
  }
  return out;
}

inline double worst(const std::vector<TensorError>& errors) {
  double w = 0.0;
  for (const auto& e : errors) w = std::max(w, e.rel_error);
  return w;
}

}  // namespace gradcheck
