#ifndef XVIEW_KERNELS_HPP_
#define XVIEW_KERNELS_HPP_

// Data-parallel inner loops. Each kernel exists twice: a plain serial
// reference and an OpenMP version. Every output entry is computed by one
// thread with a fixed summation order, so both produce bitwise identical
// results for any thread count. Shapes are validated by the callers.

#include "xview/numerics.hpp"

namespace xview::kernels {

namespace serial {

void pairwise_euclidean(const Matrix& a, const Matrix& b, Matrix& out);
void dot_similarity(const Matrix& a, const Matrix& b, Matrix& out);
/// out = x * w^T + bias (w is out_features x in_features).
void affine(const Matrix& x, const Matrix& w, std::span<const double> bias, Matrix& out);
/// grad_w += dy^T * x; grad_b += column sums of dy.
void affine_param_grad(const Matrix& x, const Matrix& dy, Matrix& grad_w, std::span<double> grad_b);
/// dx = dy * w.
void affine_input_grad(const Matrix& dy, const Matrix& w, Matrix& dx);

}  // namespace serial

namespace parallel {

void pairwise_euclidean(const Matrix& a, const Matrix& b, Matrix& out);
void dot_similarity(const Matrix& a, const Matrix& b, Matrix& out);
void affine(const Matrix& x, const Matrix& w, std::span<const double> bias, Matrix& out);
void affine_param_grad(const Matrix& x, const Matrix& dy, Matrix& grad_w, std::span<double> grad_b);
void affine_input_grad(const Matrix& dy, const Matrix& w, Matrix& dx);

/// Thread count the parallel kernels will use (1 when built without OpenMP).
int max_threads() noexcept;
void set_threads(int n) noexcept;

}  // namespace parallel

}  // namespace xview::kernels

#endif  // XVIEW_KERNELS_HPP_
