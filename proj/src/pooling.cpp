#include "milbench/pooling.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "milbench/errors.hpp"

namespace milbench {

std::string_view to_string(PoolingKind kind) {
  switch (kind) {
    case PoolingKind::max: return "max";
    case PoolingKind::mean: return "mean";
    case PoolingKind::abmil: return "abmil";
    case PoolingKind::smap: return "smap";
    case PoolingKind::transmil: return "transmil";
  }
  return "unknown";
}

PoolingKind parse_pooling(std::string_view name) {
  for (auto k : {PoolingKind::max, PoolingKind::mean, PoolingKind::abmil, PoolingKind::smap,
                 PoolingKind::transmil}) {
    if (to_string(k) == name) return k;
  }
  throw ParameterError("unknown pooling kind '" + std::string(name) + "'");
}

PoolingKind kind_of(const PoolingParams& params) { return static_cast<PoolingKind>(params.index()); }

std::size_t TransmilParams::bucket(std::size_t row, std::size_t col) const {
  if (row == 0 || col == 0) return 2 * max_distance + 1;
  const auto d = static_cast<long>(col) - static_cast<long>(row);
  const auto md = static_cast<long>(max_distance);
  return static_cast<std::size_t>(std::clamp(d, -md, md) + md);
}

PoolingParams zeros_like(const PoolingParams& params) {
  PoolingParams out = params;
  visit_tensors(out, [](const std::string&, Matrix& m, bool) { m.fill(0.0); });
  return out;
}

namespace {

Matrix normal_matrix(std::size_t rows, std::size_t cols, double fan_in, Rng& rng) {
  Matrix m(rows, cols);
  const double std = 1.0 / std::sqrt(fan_in);
  for (double& v : m.values()) v = gaussian_sample(rng, 0.0, std);
  return m;
}

void softmax_inplace(std::span<double> x) {
  const double peak = *std::max_element(x.begin(), x.end());
  double total = 0.0;
  for (double& v : x) {
    v = std::exp(v - peak);
    total += v;
  }
  for (double& v : x) v /= total;
}

void require_rows(const Matrix& h) {
  if (h.rows() == 0) throw ParameterError("pooling: empty bag");
}

// out (rows x out_cols) += a^T b with a: n x rows, b: n x out_cols
void add_at_b(const Matrix& a, const Matrix& b, Matrix& out) {
  for (std::size_t j = 0; j < a.rows(); ++j) {
    const auto aj = a.row(j);
    const auto bj = b.row(j);
    for (std::size_t r = 0; r < a.cols(); ++r) {
      if (aj[r] != 0.0) axpy(aj[r], bj, out.row(r));
    }
  }
}

// out (n x cols) += a b with a: n x k, b: k x cols
void add_ab(const Matrix& a, const Matrix& b, Matrix& out) {
  for (std::size_t j = 0; j < a.rows(); ++j) {
    const auto aj = a.row(j);
    auto oj = out.row(j);
    for (std::size_t r = 0; r < a.cols(); ++r) {
      if (aj[r] != 0.0) axpy(aj[r], b.row(r), oj);
    }
  }
}

// --- attention core shared by ABMIL and SmAP --------------------------------

void check_abmil(const Matrix& x, const AbmilParams& p) {
  if (p.U.cols() != x.cols()) {
    throw ParameterError("attention: U has " + std::to_string(p.U.cols()) + " columns, bag has " +
                         std::to_string(x.cols()) + " features");
  }
  if (p.U.rows() == 0 || p.u.rows() != p.U.rows() || p.u.cols() != 1) {
    throw ParameterError("attention: u must be a column of length L = rows(U) >= 1");
  }
}

std::vector<double> attention_forward(const Matrix& x, const AbmilParams& p, Matrix* hidden_out) {
  require_rows(x);
  check_abmil(x, p);
  Matrix hidden = matmul_transposed(x, p.U);
  for (double& v : hidden.values()) v = std::tanh(v);
  std::vector<double> logits(x.rows());
  for (std::size_t j = 0; j < x.rows(); ++j) logits[j] = dot(hidden.row(j), p.u.values());
  softmax_inplace(logits);
  if (hidden_out) *hidden_out = std::move(hidden);
  return logits;
}

// Backward of z = sum_j a_j x_j with a = attention(x). grad_attention is the
// direct upstream on a (may be empty).
void attention_pool_backward(const Matrix& x, const AbmilParams& p, const Matrix& hidden,
                             std::span<const double> a, std::span<const double> grad_z,
                             std::span<const double> grad_attention, AbmilParams& grad,
                             Matrix* grad_x) {
  const std::size_t s = x.rows();
  const std::size_t l = p.U.rows();
  std::vector<double> ga(s, 0.0);
  for (std::size_t j = 0; j < s; ++j) {
    if (!grad_attention.empty()) ga[j] += grad_attention[j];
    if (!grad_z.empty()) ga[j] += dot(grad_z, x.row(j));
  }
  double weighted = 0.0;
  for (std::size_t j = 0; j < s; ++j) weighted += a[j] * ga[j];

  Matrix dpre(s, l);
  for (std::size_t j = 0; j < s; ++j) {
    const double dlogit = a[j] * (ga[j] - weighted);
    const auto hj = hidden.row(j);
    axpy(dlogit, hj, grad.u.values());
    auto dj = dpre.row(j);
    for (std::size_t r = 0; r < l; ++r) dj[r] = dlogit * p.u[r] * (1.0 - hj[r] * hj[r]);
  }
  add_at_b(dpre, x, grad.U);
  if (grad_x) {
    if (!grad_z.empty()) {
      for (std::size_t j = 0; j < s; ++j) axpy(a[j], grad_z, grad_x->row(j));
    }
    add_ab(dpre, p.U, *grad_x);
  }
}

// --- smoothing --------------------------------------------------------------

Matrix smooth_columns(const Matrix& h, double alpha, std::size_t neighbors) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ParameterError("smap: alpha must lie in [0, 1)");
  if (neighbors < 1) throw ParameterError("smap: need at least one neighbor per side");
  if (alpha == 0.0) return h;
  const std::size_t s = h.rows();
  Matrix rhs = h;
  for (double& v : rhs.values()) v *= (1.0 - alpha);

  if (neighbors == 1) {
    Tridiagonal sys;
    sys.diag.assign(s, 1.0 - alpha);
    sys.sub.assign(s > 0 ? s - 1 : 0, -alpha);
    sys.sup.assign(s > 0 ? s - 1 : 0, -alpha);
    for (std::size_t j = 0; j + 1 < s; ++j) {
      sys.diag[j] += alpha;
      sys.diag[j + 1] += alpha;
    }
    return tridiag_solve(sys, rhs);
  }

  Matrix system(s, s);
  for (std::size_t j = 0; j < s; ++j) system(j, j) = 1.0 - alpha;
  for (std::size_t j = 0; j < s; ++j) {
    for (std::size_t d = 1; d <= neighbors && j + d < s; ++d) {
      system(j, j + d) -= alpha;
      system(j + d, j) -= alpha;
      system(j, j) += alpha;
      system(j + d, j + d) += alpha;
    }
  }
  return BandedCholesky(system, neighbors).solve(rhs);
}

// --- transmil -----------------------------------------------------------------

void check_transmil(const Matrix& h, const TransmilParams& p) {
  const std::size_t w = p.width();
  const std::size_t hd = p.n_heads * p.head_dim;
  if (p.n_heads == 0 || p.head_dim == 0 || w == 0) throw ParameterError("transmil: empty model");
  if (p.in_weight.cols() != h.cols()) throw ParameterError("transmil: input width does not match bag features");
  if (p.in_bias.rows() != w || p.class_token.rows() != w) throw ParameterError("transmil: bias/token width mismatch");
  if (hd != w) throw ParameterError("transmil: heads * head_dim must equal the model width");
  if (p.positional_bias.rows() != p.n_buckets()) throw ParameterError("transmil: positional bias size mismatch");
  for (const auto& layer : p.layers) {
    if (layer.wq.rows() != hd || layer.wq.cols() != w || !layer.wk.same_shape(layer.wq) ||
        !layer.wv.same_shape(layer.wq) || layer.wo.rows() != w || layer.wo.cols() != hd) {
      throw ParameterError("transmil: layer weight shapes inconsistent");
    }
  }
}

struct TransmilForward {
  std::vector<double> z;
  std::vector<double> attention;
};

TransmilForward transmil_forward(const Matrix& h, const TransmilParams& p, PoolTape* tape) {
  require_rows(h);
  check_transmil(h, p);
  const std::size_t s = h.rows();
  const std::size_t n = s + 1;
  const std::size_t w = p.width();
  const std::size_t dim = p.head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));

  Matrix x(n, w);
  std::copy(p.class_token.values().begin(), p.class_token.values().end(), x.row(0).begin());
  for (std::size_t j = 0; j < s; ++j) {
    auto xr = x.row(j + 1);
    const auto hj = h.row(j);
    for (std::size_t c = 0; c < w; ++c) xr[c] = p.in_bias[c] + dot(p.in_weight.row(c), hj);
  }

  std::vector<double> last_class_row(s, 0.0);
  if (tape) tape->layers.clear();
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& layer = p.layers[l];
    PoolTape::Layer rec;
    rec.q = matmul_transposed(x, layer.wq);
    rec.k = matmul_transposed(x, layer.wk);
    rec.v = matmul_transposed(x, layer.wv);
    rec.mixed = Matrix(n, p.n_heads * dim);
    for (std::size_t hh = 0; hh < p.n_heads; ++hh) {
      Matrix probs(n, n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto qi = rec.q.row(i).subspan(hh * dim, dim);
        auto pr = probs.row(i);
        for (std::size_t k = 0; k < n; ++k) {
          pr[k] = dot(qi, rec.k.row(k).subspan(hh * dim, dim)) * scale + p.positional_bias[p.bucket(i, k)];
        }
        softmax_inplace(pr);
        auto out = rec.mixed.row(i).subspan(hh * dim, dim);
        for (std::size_t k = 0; k < n; ++k) axpy(pr[k], rec.v.row(k).subspan(hh * dim, dim), out);
      }
      if (l + 1 == p.layers.size()) {
        for (std::size_t j = 0; j < s; ++j) last_class_row[j] += probs(0, j + 1) / static_cast<double>(p.n_heads);
      }
      rec.probs.push_back(std::move(probs));
    }
    Matrix next = matmul_transposed(rec.mixed, layer.wo);
    axpy(1.0, x.values(), next.values());
    if (tape) {
      rec.input = std::move(x);
      tape->layers.push_back(std::move(rec));
    }
    x = std::move(next);
  }

  TransmilForward out;
  out.z.assign(x.row(0).begin(), x.row(0).end());
  if (p.layers.empty()) {
    out.attention.assign(s, 1.0 / static_cast<double>(s));
    if (tape) tape->attention_norm = 0.0;
  } else {
    double total = 0.0;
    for (double v : last_class_row) total += v;
    out.attention.resize(s);
    for (std::size_t j = 0; j < s; ++j) out.attention[j] = last_class_row[j] / total;
    if (tape) tape->attention_norm = total;
  }
  if (tape) tape->attention = out.attention;
  return out;
}

void transmil_backward(const Matrix& h, const TransmilParams& p, const PoolTape& tape,
                       const PoolUpstream& up, TransmilParams& grad, Matrix* grad_h) {
  const std::size_t s = h.rows();
  const std::size_t n = s + 1;
  const std::size_t w = p.width();
  const std::size_t dim = p.head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));

  Matrix gx(n, w);
  if (!up.grad_z.empty()) std::copy(up.grad_z.begin(), up.grad_z.end(), gx.row(0).begin());

  // Upstream on the renormalized head-mean class row of the last layer.
  std::vector<double> g_class_row;
  if (!up.grad_attention.empty() && !p.layers.empty()) {
    double weighted = 0.0;
    for (std::size_t j = 0; j < s; ++j) weighted += up.grad_attention[j] * tape.attention[j];
    g_class_row.resize(s);
    for (std::size_t j = 0; j < s; ++j) {
      g_class_row[j] = (up.grad_attention[j] - weighted) / tape.attention_norm / static_cast<double>(p.n_heads);
    }
  }

  for (std::size_t l = p.layers.size(); l-- > 0;) {
    const auto& layer = p.layers[l];
    const auto& rec = tape.layers[l];
    auto& glayer = grad.layers[l];

    // next = x + mixed wo^T
    Matrix gmixed(n, p.n_heads * dim);
    add_ab(gx, layer.wo, gmixed);
    add_at_b(gx, rec.mixed, glayer.wo);

    Matrix gq(n, p.n_heads * dim), gk(n, p.n_heads * dim), gv(n, p.n_heads * dim);
    for (std::size_t hh = 0; hh < p.n_heads; ++hh) {
      const Matrix& probs = rec.probs[hh];
      const std::size_t off = hh * dim;
      for (std::size_t i = 0; i < n; ++i) {
        const auto go = gmixed.row(i).subspan(off, dim);
        const auto pr = probs.row(i);
        std::vector<double> gp(n);
        for (std::size_t k = 0; k < n; ++k) {
          gp[k] = dot(go, rec.v.row(k).subspan(off, dim));
          axpy(pr[k], go, gv.row(k).subspan(off, dim));
        }
        if (i == 0 && l + 1 == p.layers.size() && !g_class_row.empty()) {
          for (std::size_t j = 0; j < s; ++j) gp[j + 1] += g_class_row[j];
        }
        double weighted = 0.0;
        for (std::size_t k = 0; k < n; ++k) weighted += pr[k] * gp[k];
        auto gqi = gq.row(i).subspan(off, dim);
        const auto qi = rec.q.row(i).subspan(off, dim);
        for (std::size_t k = 0; k < n; ++k) {
          const double glogit = pr[k] * (gp[k] - weighted);
          if (glogit == 0.0) continue;
          grad.positional_bias[p.bucket(i, k)] += glogit;
          axpy(glogit * scale, rec.k.row(k).subspan(off, dim), gqi);
          axpy(glogit * scale, qi, gk.row(k).subspan(off, dim));
        }
      }
    }
    add_at_b(gq, rec.input, glayer.wq);
    add_at_b(gk, rec.input, glayer.wk);
    add_at_b(gv, rec.input, glayer.wv);
    add_ab(gq, layer.wq, gx);
    add_ab(gk, layer.wk, gx);
    add_ab(gv, layer.wv, gx);
  }

  axpy(1.0, gx.row(0), grad.class_token.values());
  for (std::size_t j = 0; j < s; ++j) {
    const auto gj = gx.row(j + 1);
    axpy(1.0, gj, grad.in_bias.values());
    const auto hj = h.row(j);
    for (std::size_t c = 0; c < w; ++c) {
      if (gj[c] != 0.0) axpy(gj[c], hj, grad.in_weight.row(c));
    }
    if (grad_h) {
      auto out = grad_h->row(j);
      for (std::size_t c = 0; c < w; ++c) {
        if (gj[c] != 0.0) axpy(gj[c], p.in_weight.row(c), out);
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------

AbmilParams init_abmil(std::size_t m, std::size_t hidden, Rng& rng) {
  if (m == 0 || hidden == 0) throw ParameterError("init_abmil: dimensions must be positive");
  AbmilParams p;
  p.U = normal_matrix(hidden, m, static_cast<double>(m), rng);
  p.u = normal_matrix(hidden, 1, static_cast<double>(hidden), rng);
  return p;
}

TransmilParams init_transmil(std::size_t m, const TransmilShape& shape, Rng& rng) {
  if (m == 0 || shape.width == 0 || shape.n_heads == 0 || shape.width % shape.n_heads != 0) {
    throw ParameterError("init_transmil: width must be a positive multiple of n_heads");
  }
  TransmilParams p;
  p.n_heads = shape.n_heads;
  p.head_dim = shape.width / shape.n_heads;
  p.max_distance = shape.max_distance;
  const auto w = static_cast<double>(shape.width);
  p.in_weight = normal_matrix(shape.width, m, static_cast<double>(m), rng);
  p.in_bias = Matrix(shape.width, 1);
  p.class_token = normal_matrix(shape.width, 1, w, rng);
  p.positional_bias = Matrix(p.n_buckets(), 1);
  for (std::size_t l = 0; l < shape.n_layers; ++l) {
    TransmilLayer layer;
    layer.wq = normal_matrix(shape.width, shape.width, w, rng);
    layer.wk = normal_matrix(shape.width, shape.width, w, rng);
    layer.wv = normal_matrix(shape.width, shape.width, w, rng);
    layer.wo = normal_matrix(shape.width, shape.width, w, rng);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

PoolResult max_pool(const Matrix& h) { return pool_forward(MaxPooling{}, h); }
PoolResult mean_pool(const Matrix& h) { return pool_forward(MeanPooling{}, h); }

std::vector<double> abmil_attention(const Matrix& h, const AbmilParams& p) {
  return attention_forward(h, p, nullptr);
}

PoolResult abmil_pool(const Matrix& h, const AbmilParams& p) { return pool_forward(p, h); }

Matrix smap_smooth(const Matrix& h, const SmapConfig& cfg) {
  return smooth_columns(h, cfg.alpha, cfg.neighbors);
}

PoolResult smap_pool(const Matrix& h, const SmapConfig& cfg) { return pool_forward(cfg, h); }

PoolResult transmil_pool(const Matrix& h, const TransmilParams& p) { return pool_forward(p, h); }

PoolResult pool_forward(const PoolingParams& params, const Matrix& h, PoolTape* tape) {
  require_rows(h);
  const std::size_t s = h.rows();
  const std::size_t m = h.cols();
  PoolResult res;

  auto weighted_sum = [&](const Matrix& x, std::span<const double> a) {
    std::vector<double> z(x.cols(), 0.0);
    for (std::size_t j = 0; j < x.rows(); ++j) axpy(a[j], x.row(j), z);
    return z;
  };

  switch (kind_of(params)) {
    case PoolingKind::max: {
      res.z.assign(h.row(0).begin(), h.row(0).end());
      std::vector<std::size_t> arg(m, 0);
      for (std::size_t j = 1; j < s; ++j) {
        const auto row = h.row(j);
        for (std::size_t c = 0; c < m; ++c) {
          if (row[c] > res.z[c]) {
            res.z[c] = row[c];
            arg[c] = j;
          }
        }
      }
      if (tape) tape->argmax = std::move(arg);
      break;
    }
    case PoolingKind::mean: {
      res.z.assign(m, 0.0);
      for (std::size_t j = 0; j < s; ++j) axpy(1.0, h.row(j), res.z);
      for (double& v : res.z) v /= static_cast<double>(s);
      break;
    }
    case PoolingKind::abmil: {
      const auto& p = std::get<AbmilParams>(params);
      Matrix hidden;
      auto a = attention_forward(h, p, tape ? &hidden : nullptr);
      res.z = weighted_sum(h, a);
      if (tape) {
        tape->hidden = std::move(hidden);
        tape->attention = a;
      }
      res.attention = std::move(a);
      break;
    }
    case PoolingKind::smap: {
      const auto& cfg = std::get<SmapConfig>(params);
      Matrix g = smooth_columns(h, cfg.alpha, cfg.neighbors);
      Matrix hidden;
      auto a = attention_forward(g, cfg.inner, tape ? &hidden : nullptr);
      res.z = weighted_sum(g, a);
      if (tape) {
        tape->hidden = std::move(hidden);
        tape->attention = a;
        tape->smoothed = std::move(g);
      }
      res.attention = std::move(a);
      break;
    }
    case PoolingKind::transmil: {
      auto out = transmil_forward(h, std::get<TransmilParams>(params), tape);
      res.z = std::move(out.z);
      res.attention = std::move(out.attention);
      break;
    }
  }
  return res;
}

void pool_backward_accumulate(const PoolingParams& params, const Matrix& h, const PoolTape& tape,
                              const PoolUpstream& up, PoolingParams& grad_params, Matrix* grad_h) {
  require_rows(h);
  const std::size_t s = h.rows();
  const std::size_t m = h.cols();
  if (!up.grad_z.empty() && kind_of(params) != PoolingKind::transmil && up.grad_z.size() != m) {
    throw ParameterError("pool_backward: grad_z length mismatch");
  }
  if (!up.grad_attention.empty() && up.grad_attention.size() != s) {
    throw ParameterError("pool_backward: grad_attention length mismatch");
  }
  if (grad_params.index() != params.index()) throw ParameterError("pool_backward: gradient kind mismatch");
  if (grad_h && (grad_h->rows() != s || grad_h->cols() != m)) {
    throw ParameterError("pool_backward: grad_h shape mismatch");
  }

  switch (kind_of(params)) {
    case PoolingKind::max: {
      if (grad_h && !up.grad_z.empty()) {
        for (std::size_t c = 0; c < m; ++c) (*grad_h)(tape.argmax[c], c) += up.grad_z[c];
      }
      break;
    }
    case PoolingKind::mean: {
      if (grad_h && !up.grad_z.empty()) {
        const double inv = 1.0 / static_cast<double>(s);
        for (std::size_t j = 0; j < s; ++j) axpy(inv, up.grad_z, grad_h->row(j));
      }
      break;
    }
    case PoolingKind::abmil: {
      const auto& p = std::get<AbmilParams>(params);
      attention_pool_backward(h, p, tape.hidden, tape.attention, up.grad_z, up.grad_attention,
                              std::get<AbmilParams>(grad_params), grad_h);
      break;
    }
    case PoolingKind::smap: {
      const auto& cfg = std::get<SmapConfig>(params);
      auto& gcfg = std::get<SmapConfig>(grad_params);
      Matrix grad_g;
      if (grad_h) grad_g = Matrix(s, m);
      attention_pool_backward(tape.smoothed, cfg.inner, tape.hidden, tape.attention, up.grad_z,
                              up.grad_attention, gcfg.inner, grad_h ? &grad_g : nullptr);
      if (grad_h) {
        // The smoothing operator is symmetric, so its adjoint is itself.
        const Matrix back = smooth_columns(grad_g, cfg.alpha, cfg.neighbors);
        axpy(1.0, back.values(), grad_h->values());
      }
      break;
    }
    case PoolingKind::transmil: {
      const auto& p = std::get<TransmilParams>(params);
      if (!up.grad_z.empty() && up.grad_z.size() != p.width()) {
        throw ParameterError("pool_backward: grad_z length mismatch");
      }
      transmil_backward(h, p, tape, up, std::get<TransmilParams>(grad_params), grad_h);
      break;
    }
  }
}

PoolGradient pool_backward(const PoolingParams& params, const Matrix& h, const PoolUpstream& upstream) {
  PoolTape tape;
  pool_forward(params, h, &tape);
  PoolGradient out{Matrix(h.rows(), h.cols()), zeros_like(params)};
  pool_backward_accumulate(params, h, tape, upstream, out.grad_params, &out.grad_h);
  return out;
}

}  // namespace milbench
