#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

#include "arblab/errors.hpp"

namespace arblab {

/// Dense row-major matrix of doubles.
///
/// Row vectors are the unit of meaning throughout the library: a classifier
/// is stored as c rows of dimension d (row i is w_i), a feature batch as b
/// rows of dimension d, logits as b rows of c.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool all_finite() const noexcept;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double s);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(double s, Matrix a);

/// a · b. Throws DimensionError unless a.cols() == b.rows().
Matrix matmul(const Matrix& a, const Matrix& b);
/// a · bᵀ. Throws DimensionError unless a.cols() == b.cols().
Matrix matmul_transposed(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

/// Largest absolute entry of a − b.
double max_abs_diff(const Matrix& a, const Matrix& b);
double frobenius_norm(const Matrix& a);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
/// y += alpha · x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

/// Deterministic 64-bit generator: xoshiro256** seeded through SplitMix64.
///
/// Gaussians use the Box–Muller transform (both outputs consumed in order),
/// gamma variates use Marsaglia–Tsang. Only integer arithmetic and libm
/// log/sqrt/cos/sin are involved, so streams are reproducible across
/// platforms with a conforming libm.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64() noexcept;
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) noexcept;
  double normal() noexcept;
  /// Gamma(shape, 1). shape > 0.
  double gamma(double shape) noexcept;
  /// Beta(a, b) via two gamma draws.
  double beta(double a, double b) noexcept;

  /// Independent child generator; advances this generator by one draw.
  Rng split() noexcept;

  /// In-place Fisher–Yates shuffle.
  template <typename T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// rows × cols matrix of i.i.d. standard normal entries.
Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols);

/// Orthonormal basis for the column span of `a` (rows ≥ cols), by modified
/// Gram–Schmidt with one re-orthogonalization pass.
/// Throws RankError when a column's residual norm falls below 1e-12.
Matrix qr_orthonormal(const Matrix& a);

}  // namespace arblab
