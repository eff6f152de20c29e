#ifndef XVIEW_NUMERICS_HPP_
#define XVIEW_NUMERICS_HPP_

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace xview {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  /// Throws DimMismatch when rows * cols != values.size().
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  Matrix transpose() const;
  /// Rows picked by index, in the given order.
  Matrix gather_rows(std::span<const std::size_t> indices) const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

/// Guard below which a vector is considered to have no direction.
inline constexpr double kNormEpsilon = 1e-12;

double l2_norm(std::span<const double> v);

/// Throws NormTooSmall when ||v|| <= kNormEpsilon.
Vector l2_normalize(std::span<const double> v);

/// Entry (i, j) is the Euclidean distance between A.row(i) and B.row(j).
Matrix pairwise_euclidean(const Matrix& a, const Matrix& b);

/// Entry (i, j) is the inner product of A.row(i) and B.row(j).
Matrix dot_product_similarity(const Matrix& a, const Matrix& b);

using ScalarFn = std::function<double(std::span<const double>)>;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
Vector finite_diff_grad(const ScalarFn& f, std::span<const double> x, double h = 1e-5);

bool all_finite(std::span<const double> v) noexcept;

}  // namespace xview

#endif  // XVIEW_NUMERICS_HPP_
