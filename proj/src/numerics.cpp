#include "milbench/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "milbench/errors.hpp"

namespace milbench {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ParameterError("Matrix: data length " + std::to_string(data_.size()) +
                         " does not match " + std::to_string(rows) + "x" +
                         std::to_string(cols));
  }
}

Matrix Matrix::column(std::vector<double> values) {
  const auto n = values.size();
  return Matrix(n, 1, std::move(values));
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double dot(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ParameterError("matmul_transposed: inner dimensions differ");
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ai = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(ai, b.row(j));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rng

namespace {

constexpr std::uint64_t kPcgMultiplier = 6364136223846793005ULL;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {
  inc_ = (stream << 1u) | 1u;
  state_ = 0;
  next_u32();
  state_ += seed;
  next_u32();
}

std::uint32_t Rng::next_u32() {
  const std::uint64_t old = state_;
  state_ = old * kPcgMultiplier + inc_;
  const auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
  const auto rot = static_cast<std::uint32_t>(old >> 59u);
  return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t hi = next_u32();
  return (hi << 32u) | next_u32();
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11u) * 0x1.0p-53;
}

std::uint32_t Rng::bounded(std::uint32_t bound) {
  if (bound == 0) throw ParameterError("Rng::bounded: bound must be positive");
  const std::uint32_t threshold = (0u - bound) % bound;
  for (;;) {
    const std::uint32_t r = next_u32();
    if (r >= threshold) return r % bound;
  }
}

std::uint64_t Rng::uniform_int(std::uint64_t lo, std::uint64_t hi) {
  if (hi < lo) throw ParameterError("Rng::uniform_int: empty range");
  const std::uint64_t span = hi - lo;
  if (span < std::numeric_limits<std::uint32_t>::max()) {
    return lo + bounded(static_cast<std::uint32_t>(span + 1));
  }
  // Wide ranges: rejection on 64-bit draws.
  const std::uint64_t range = span + 1;
  if (range == 0) return next_u64();
  const std::uint64_t threshold = (0ULL - range) % range;
  for (;;) {
    const std::uint64_t r = next_u64();
    if (r >= threshold) return lo + r % range;
  }
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(theta);
  has_spare_ = true;
  return radius * std::cos(theta);
}

Rng Rng::split(std::uint64_t id) const {
  const std::uint64_t child_seed = splitmix64(seed_ ^ splitmix64(stream_ + 0x632be59bd9b4e019ULL));
  return Rng(splitmix64(child_seed + id), splitmix64(id ^ stream_));
}

// ---------------------------------------------------------------------------

double gaussian_sample(Rng& rng, double mean, double std) {
  if (!(std > 0.0)) throw ParameterError("gaussian_sample: std must be positive");
  return mean + std * rng.normal();
}

double log_gaussian_pdf(double x, double mean, double std) {
  if (!(std > 0.0)) throw ParameterError("log_gaussian_pdf: std must be positive");
  constexpr double kHalfLog2Pi = 0.91893853320467274178;
  const double z = (x - mean) / std;
  return -kHalfLog2Pi - std::log(std) - 0.5 * z * z;
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw ParameterError("log_sum_exp: empty input");
  if (values.size() == 1) return values[0];
  const double peak = *std::max_element(values.begin(), values.end());
  if (std::isinf(peak)) return peak;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - peak);
  return peak + std::log(acc);
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Linear solvers

Matrix Tridiagonal::to_dense() const {
  const std::size_t n = size();
  Matrix dense(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    dense(i, i) = diag[i];
    if (i + 1 < n) {
      dense(i, i + 1) = sup[i];
      dense(i + 1, i) = sub[i];
    }
  }
  return dense;
}

Matrix tridiag_solve(const Tridiagonal& sys, const Matrix& rhs) {
  const std::size_t n = sys.size();
  if (n == 0) throw ParameterError("tridiag_solve: empty system");
  if (sys.sub.size() + 1 != n || sys.sup.size() + 1 != n) {
    throw ParameterError("tridiag_solve: off-diagonal lengths must be n - 1");
  }
  if (rhs.rows() != n) throw ParameterError("tridiag_solve: rhs row count mismatch");

  // The elimination factors depend only on the system, so each sweep step is
  // applied to a whole row of right-hand sides at once.
  std::vector<double> upper(n, 0.0);
  std::vector<double> inv_pivot(n, 0.0);
  Matrix x = rhs;
  const std::size_t cols = rhs.cols();

  double pivot = sys.diag[0];
  if (pivot == 0.0 || !std::isfinite(pivot)) {
    throw SingularSystemError("tridiag_solve: zero pivot at row 0");
  }
  inv_pivot[0] = 1.0 / pivot;
  for (std::size_t i = 1; i < n; ++i) {
    upper[i - 1] = sys.sup[i - 1] * inv_pivot[i - 1];
    pivot = sys.diag[i] - sys.sub[i - 1] * upper[i - 1];
    if (pivot == 0.0 || !std::isfinite(pivot)) {
      throw SingularSystemError("tridiag_solve: zero pivot at row " + std::to_string(i));
    }
    inv_pivot[i] = 1.0 / pivot;
  }

  {
    auto r0 = x.row(0);
    for (std::size_t c = 0; c < cols; ++c) r0[c] *= inv_pivot[0];
  }
  for (std::size_t i = 1; i < n; ++i) {
    const auto prev = x.row(i - 1);
    auto cur = x.row(i);
    const double l = sys.sub[i - 1];
    for (std::size_t c = 0; c < cols; ++c) cur[c] = (cur[c] - l * prev[c]) * inv_pivot[i];
  }
  for (std::size_t i = n - 1; i-- > 0;) {
    const auto next = x.row(i + 1);
    auto cur = x.row(i);
    for (std::size_t c = 0; c < cols; ++c) cur[c] -= upper[i] * next[c];
  }
  return x;
}

BandedCholesky::BandedCholesky(const Matrix& dense, std::size_t bandwidth)
    : n_(dense.rows()), bw_(bandwidth), factor_(dense.rows() * (bandwidth + 1), 0.0) {
  if (dense.rows() != dense.cols()) throw ParameterError("BandedCholesky: matrix not square");
  for (std::size_t i = 0; i < n_; ++i) {
    const std::size_t j0 = i > bw_ ? i - bw_ : 0;
    for (std::size_t j = j0; j <= i; ++j) {
      double s = dense(i, j);
      const std::size_t k0 = std::max(j0, j > bw_ ? j - bw_ : 0);
      for (std::size_t k = k0; k < j; ++k) s -= at(i, k) * at(j, k);
      if (j == i) {
        if (!(s > 0.0)) {
          throw SingularSystemError("BandedCholesky: matrix not positive definite at row " +
                                    std::to_string(i));
        }
        at(i, i) = std::sqrt(s);
      } else {
        at(i, j) = s / at(j, j);
      }
    }
  }
}

Matrix BandedCholesky::solve(const Matrix& rhs) const {
  if (rhs.rows() != n_) throw ParameterError("BandedCholesky::solve: rhs row count mismatch");
  Matrix x = rhs;
  const std::size_t cols = rhs.cols();
  // L y = b
  for (std::size_t i = 0; i < n_; ++i) {
    auto cur = x.row(i);
    const std::size_t k0 = i > bw_ ? i - bw_ : 0;
    for (std::size_t k = k0; k < i; ++k) axpy(-at(i, k), x.row(k), cur);
    const double inv = 1.0 / at(i, i);
    for (std::size_t c = 0; c < cols; ++c) cur[c] *= inv;
  }
  // L^T x = y
  for (std::size_t i = n_; i-- > 0;) {
    auto cur = x.row(i);
    const std::size_t k1 = std::min(n_, i + bw_ + 1);
    for (std::size_t k = i + 1; k < k1; ++k) axpy(-at(k, i), x.row(k), cur);
    const double inv = 1.0 / at(i, i);
    for (std::size_t c = 0; c < cols; ++c) cur[c] *= inv;
  }
  return x;
}

std::vector<double> finite_diff_gradient(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> x, double eps) {
  if (!(eps > 0.0)) throw ParameterError("finite_diff_gradient: eps must be positive");
  std::vector<double> point(x.begin(), x.end());
  std::vector<double> grad(x.size(), 0.0);
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double orig = point[i];
    point[i] = orig + eps;
    const double up = f(point);
    point[i] = orig - eps;
    const double down = f(point);
    point[i] = orig;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

}  // namespace milbench
