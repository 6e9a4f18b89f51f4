#pragma once

// Dense linear algebra, seeded sampling and small numerical utilities shared
// by the generator, the oracle, the pooling operators and the trainer.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace milbench {

/// Row-major matrix of doubles. Vectors are stored as n x 1 matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix column(std::vector<double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  void fill(double v);
  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Dot product with four independent accumulators. The summation order is
/// fixed, so results are reproducible for a given build.
double dot(std::span<const double> a, std::span<const double> b);

/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

/// out = a * b^T, with a: n x k, b: m x k.
Matrix matmul_transposed(const Matrix& a, const Matrix& b);

/// PCG32 (XSH-RR, 64-bit state) with selectable stream.
///
/// The sequence depends only on (seed, stream) and the call sequence. Normal
/// draws use the Box-Muller transform on two 53-bit uniforms; the second value
/// of each pair is cached and returned by the next call.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, bound), unbiased. bound must be positive.
  std::uint32_t bounded(std::uint32_t bound);
  /// Uniform integer in the closed range [lo, hi].
  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi);
  /// Standard normal draw.
  double normal();

  /// Independent generator for sub-task `id`. Does not advance this one.
  Rng split(std::uint64_t id) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Fisher-Yates shuffle driven by Rng, identical across standard libraries.
template <class T>
void shuffle(std::span<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, i - 1));
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

/// mean + std * z with z = rng.normal().
double gaussian_sample(Rng& rng, double mean, double std);

double log_gaussian_pdf(double x, double mean, double std);

/// ln(sum(exp(values))) with max-shift. Throws ParameterError when empty.
double log_sum_exp(std::span<const double> values);

/// Logistic function, evaluated without overflow for any finite input.
double sigmoid(double x);

/// n x n tridiagonal matrix.
struct Tridiagonal {
  std::vector<double> sub;   // n - 1 entries, below the diagonal
  std::vector<double> diag;  // n entries
  std::vector<double> sup;   // n - 1 entries, above the diagonal

  std::size_t size() const { return diag.size(); }
  Matrix to_dense() const;
};

/// Solves sys * X = rhs for every column of rhs with the Thomas algorithm.
/// Throws SingularSystemError on a zero pivot.
Matrix tridiag_solve(const Tridiagonal& sys, const Matrix& rhs);

/// Cholesky factor of a symmetric positive definite band matrix with
/// `bandwidth` non-zero diagonals on each side of the main diagonal.
class BandedCholesky {
 public:
  /// `dense` must be symmetric with zeros outside the band.
  BandedCholesky(const Matrix& dense, std::size_t bandwidth);

  Matrix solve(const Matrix& rhs) const;
  std::size_t size() const { return n_; }

 private:
  double& at(std::size_t i, std::size_t j) { return factor_[i * (bw_ + 1) + (i - j)]; }
  double at(std::size_t i, std::size_t j) const { return factor_[i * (bw_ + 1) + (i - j)]; }

  std::size_t n_;
  std::size_t bw_;
  std::vector<double> factor_;  // lower factor, row i holds L(i, i-bw .. i)
};

/// Central differences of f at x, one coordinate at a time.
std::vector<double> finite_diff_gradient(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> x, double eps);

}  // namespace milbench
