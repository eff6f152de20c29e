#include "xview/numerics.hpp"

#include <cmath>
#include <string>

#include "xview/error.hpp"
#include "xview/kernels.hpp"

namespace xview {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (rows_ * cols_ != values_.size()) {
    throw Error(ErrorCode::DimMismatch, std::to_string(rows_) + "x" + std::to_string(cols_) +
                                            " matrix given " + std::to_string(values_.size()) +
                                            " values");
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t n = rows.size();
  const std::size_t d = n == 0 ? 0 : rows.begin()->size();
  std::vector<double> values;
  values.reserve(n * d);
  for (const auto& r : rows) {
    if (r.size() != d) throw Error(ErrorCode::DimMismatch, "ragged row list");
    values.insert(values.end(), r.begin(), r.end());
  }
  return Matrix(n, d, std::move(values));
}

Matrix Matrix::transpose() const {
  Matrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

Matrix Matrix::gather_rows(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), cols_);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

Vector l2_normalize(std::span<const double> v) {
  const double n = l2_norm(v);
  if (!(n > kNormEpsilon)) throw Error(ErrorCode::NormTooSmall, "norm " + std::to_string(n));
  Vector out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

Matrix pairwise_euclidean(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw Error(ErrorCode::DimMismatch, "pairwise_euclidean column count");
  Matrix out(a.rows(), b.rows());
  kernels::parallel::pairwise_euclidean(a, b, out);
  return out;
}

Matrix dot_product_similarity(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw Error(ErrorCode::DimMismatch, "dot_product_similarity column count");
  Matrix out(a.rows(), b.rows());
  kernels::parallel::dot_similarity(a, b, out);
  return out;
}

Vector finite_diff_grad(const ScalarFn& f, std::span<const double> x, double h) {
  Vector probe(x.begin(), x.end());
  Vector grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw Error(ErrorCode::NonFiniteEvaluation, "coordinate " + std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

bool all_finite(std::span<const double> v) noexcept {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace xview
