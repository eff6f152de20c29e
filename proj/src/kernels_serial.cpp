#include <cmath>

#include "xview/kernels.hpp"

namespace xview::kernels::serial {

void pairwise_euclidean(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t d = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = a(i, k) - b(j, k);
        s += diff * diff;
      }
      out(i, j) = std::sqrt(s);
    }
  }
}

void dot_similarity(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t d = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += a(i, k) * b(j, k);
      out(i, j) = s;
    }
  }
}

void affine(const Matrix& x, const Matrix& w, std::span<const double> bias, Matrix& out) {
  for (std::size_t n = 0; n < x.rows(); ++n) {
    for (std::size_t o = 0; o < w.rows(); ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < w.cols(); ++i) s += x(n, i) * w(o, i);
      out(n, o) = s + bias[o];
    }
  }
}

void affine_param_grad(const Matrix& x, const Matrix& dy, Matrix& grad_w, std::span<double> grad_b) {
  for (std::size_t o = 0; o < dy.cols(); ++o) {
    for (std::size_t i = 0; i < x.cols(); ++i) {
      double s = 0.0;
      for (std::size_t n = 0; n < x.rows(); ++n) s += dy(n, o) * x(n, i);
      grad_w(o, i) += s;
    }
    double sb = 0.0;
    for (std::size_t n = 0; n < dy.rows(); ++n) sb += dy(n, o);
    grad_b[o] += sb;
  }
}

void affine_input_grad(const Matrix& dy, const Matrix& w, Matrix& dx) {
  for (std::size_t n = 0; n < dy.rows(); ++n) {
    for (std::size_t i = 0; i < w.cols(); ++i) {
      double s = 0.0;
      for (std::size_t o = 0; o < w.rows(); ++o) s += dy(n, o) * w(o, i);
      dx(n, i) = s;
    }
  }
}

}  // namespace xview::kernels::serial
