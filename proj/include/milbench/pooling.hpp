#pragma once

// Bag pooling operators: max, mean, attention (ABMIL), smoothed attention
// (SmAP) and a transformer with a class token (TransMIL), each with an exact
// analytic backward pass.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "milbench/numerics.hpp"

namespace milbench {

enum class PoolingKind { max, mean, abmil, smap, transmil };

std::string_view to_string(PoolingKind kind);
/// Throws ParameterError for unknown names.
PoolingKind parse_pooling(std::string_view name);

struct MaxPooling {};
struct MeanPooling {};

/// a_j = softmax_j(u^T tanh(U h_j))
struct AbmilParams {
  Matrix U;  // L x M
  Matrix u;  // L x 1
};

/// Smoothing ((1 - alpha) I + alpha Lap) G = (1 - alpha) H over a chain graph
/// linking each instance to `neighbors` instances on each side, followed by
/// attention pooling of G.
struct SmapConfig {
  double alpha = 0.5;  // in [0, 1)
  std::size_t neighbors = 1;
  AbmilParams inner;
};

struct TransmilLayer {
  Matrix wq;  // (heads * head_dim) x width; head h owns rows [h*D, (h+1)*D)
  Matrix wk;
  Matrix wv;
  Matrix wo;  // width x (heads * head_dim)
};

/// Class-token transformer over the bag. Instances are first projected to
/// `width` by (in_weight, in_bias). Attention logits get a learned bias looked
/// up by clipped relative position; pairs involving the class token share one
/// extra bucket.
struct TransmilParams {
  std::size_t n_heads = 2;
  std::size_t head_dim = 8;
  std::size_t max_distance = 8;
  Matrix in_weight;        // width x M
  Matrix in_bias;          // width x 1
  Matrix class_token;      // width x 1
  Matrix positional_bias;  // (2 * max_distance + 2) x 1
  std::vector<TransmilLayer> layers;

  std::size_t width() const { return in_weight.rows(); }
  std::size_t n_buckets() const { return 2 * max_distance + 2; }
  std::size_t bucket(std::size_t row, std::size_t col) const;
};

using PoolingParams = std::variant<MaxPooling, MeanPooling, AbmilParams, SmapConfig, TransmilParams>;

PoolingKind kind_of(const PoolingParams& params);

/// Calls f(name, matrix, regularized) for every trainable tensor, in a fixed
/// order. Bias-like tensors are reported with regularized = false.
template <class Params, class F>
void visit_tensors(Params& params, F&& f) {
  auto abmil = [&](auto& p, const std::string& prefix) {
    f(prefix + "U", p.U, true);
    f(prefix + "u", p.u, true);
  };
  std::visit(
      [&](auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, AbmilParams>) {
          abmil(p, "attention.");
        } else if constexpr (std::is_same_v<T, SmapConfig>) {
          abmil(p.inner, "attention.");
        } else if constexpr (std::is_same_v<T, TransmilParams>) {
          f(std::string("transmil.in_weight"), p.in_weight, true);
          f(std::string("transmil.in_bias"), p.in_bias, false);
          f(std::string("transmil.class_token"), p.class_token, false);
          f(std::string("transmil.positional_bias"), p.positional_bias, false);
          for (std::size_t l = 0; l < p.layers.size(); ++l) {
            const std::string pre = "transmil.layer" + std::to_string(l) + ".";
            f(pre + "wq", p.layers[l].wq, true);
            f(pre + "wk", p.layers[l].wk, true);
            f(pre + "wv", p.layers[l].wv, true);
            f(pre + "wo", p.layers[l].wo, true);
          }
        }
      },
      params);
}

/// Same structure as `params` with every tensor zeroed.
PoolingParams zeros_like(const PoolingParams& params);

AbmilParams init_abmil(std::size_t m, std::size_t hidden, Rng& rng);

struct TransmilShape {
  std::size_t width = 16;
  std::size_t n_layers = 1;
  std::size_t n_heads = 2;
  std::size_t max_distance = 8;
};

/// Weights ~ N(0, 1/fan_in); biases and the positional bias start at zero.
TransmilParams init_transmil(std::size_t m, const TransmilShape& shape, Rng& rng);

struct PoolResult {
  std::vector<double> z;
  std::optional<std::vector<double>> attention;
};

// Per-operator entry points -------------------------------------------------

PoolResult max_pool(const Matrix& h);
PoolResult mean_pool(const Matrix& h);
std::vector<double> abmil_attention(const Matrix& h, const AbmilParams& p);
PoolResult abmil_pool(const Matrix& h, const AbmilParams& p);
/// Exact minimizer of the smoothing objective; returns h unchanged for alpha = 0.
Matrix smap_smooth(const Matrix& h, const SmapConfig& cfg);
PoolResult smap_pool(const Matrix& h, const SmapConfig& cfg);
PoolResult transmil_pool(const Matrix& h, const TransmilParams& p);

// Generic forward / backward --------------------------------------------------

/// Intermediate values recorded by pool_forward for the backward pass.
struct PoolTape {
  std::vector<std::size_t> argmax;  // max: winning row per column
  Matrix smoothed;                  // smap: G
  Matrix hidden;                    // abmil/smap: tanh(U x_j), S x L
  std::vector<double> attention;

  struct Layer {
    Matrix input;  // (S+1) x width
    Matrix q, k, v;
    std::vector<Matrix> probs;  // per head, (S+1) x (S+1)
    Matrix mixed;               // (S+1) x (heads * head_dim), concatenated head outputs
  };
  std::vector<Layer> layers;
  double attention_norm = 0.0;  // transmil: sum of head-mean class-row weights
};

PoolResult pool_forward(const PoolingParams& params, const Matrix& h, PoolTape* tape = nullptr);

/// Gradient with respect to a PoolResult. An empty span means zero.
struct PoolUpstream {
  std::span<const double> grad_z;
  std::span<const double> grad_attention;
};

struct PoolGradient {
  Matrix grad_h;
  PoolingParams grad_params;
};

/// Adds the gradient of the pooled output to `grad_params` (same structure as
/// params) and, when grad_h is non-null, to *grad_h (S x M).
void pool_backward_accumulate(const PoolingParams& params, const Matrix& h, const PoolTape& tape,
                              const PoolUpstream& upstream, PoolingParams& grad_params, Matrix* grad_h);

/// Recomputes the forward pass and returns exact gradients.
PoolGradient pool_backward(const PoolingParams& params, const Matrix& h, const PoolUpstream& upstream);

}  // namespace milbench
