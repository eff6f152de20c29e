#include <cmath>
#include <cstdint>

#include "xview/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace xview::kernels::parallel {

namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::int64_t kMinParallelWork = 1 << 14;

}  // namespace

void pairwise_euclidean(const Matrix& a, const Matrix& b, Matrix& out) {
  const auto n = static_cast<std::int64_t>(a.rows());
  const std::size_t m = b.rows();
  const std::size_t d = a.cols();
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* po = out.values().data();
#pragma omp parallel for schedule(static) if (n * static_cast<std::int64_t>(m * d) > kMinParallelWork)
  for (std::int64_t i = 0; i < n; ++i) {
    const double* ra = pa + i * d;
    for (std::size_t j = 0; j < m; ++j) {
      const double* rb = pb + j * d;
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = ra[k] - rb[k];
        s += diff * diff;
      }
      po[i * m + j] = std::sqrt(s);
    }
  }
}

void dot_similarity(const Matrix& a, const Matrix& b, Matrix& out) {
  const auto n = static_cast<std::int64_t>(a.rows());
  const std::size_t m = b.rows();
  const std::size_t d = a.cols();
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* po = out.values().data();
#pragma omp parallel for schedule(static) if (n * static_cast<std::int64_t>(m * d) > kMinParallelWork)
  for (std::int64_t i = 0; i < n; ++i) {
    const double* ra = pa + i * d;
    for (std::size_t j = 0; j < m; ++j) {
      const double* rb = pb + j * d;
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += ra[k] * rb[k];
      po[i * m + j] = s;
    }
  }
}

void affine(const Matrix& x, const Matrix& w, std::span<const double> bias, Matrix& out) {
  const auto n = static_cast<std::int64_t>(x.rows());
  const std::size_t outs = w.rows();
  const std::size_t ins = w.cols();
  const double* px = x.values().data();
  const double* pw = w.values().data();
  double* po = out.values().data();
#pragma omp parallel for schedule(static) if (n * static_cast<std::int64_t>(outs * ins) > kMinParallelWork)
  for (std::int64_t r = 0; r < n; ++r) {
    const double* rx = px + r * ins;
    for (std::size_t o = 0; o < outs; ++o) {
      const double* rw = pw + o * ins;
      double s = 0.0;
      for (std::size_t i = 0; i < ins; ++i) s += rx[i] * rw[i];
      po[r * outs + o] = s + bias[o];
    }
  }
}

void affine_param_grad(const Matrix& x, const Matrix& dy, Matrix& grad_w, std::span<double> grad_b) {
  const auto outs = static_cast<std::int64_t>(dy.cols());
  const std::size_t ins = x.cols();
  const std::size_t n = x.rows();
  const double* px = x.values().data();
  const double* pdy = dy.values().data();
  double* pg = grad_w.values().data();
  const std::size_t dcols = dy.cols();
#pragma omp parallel for schedule(static) if (outs * static_cast<std::int64_t>(ins * n) > kMinParallelWork)
  for (std::int64_t o = 0; o < outs; ++o) {
    for (std::size_t i = 0; i < ins; ++i) {
      double s = 0.0;
      for (std::size_t r = 0; r < n; ++r) s += pdy[r * dcols + o] * px[r * ins + i];
      pg[o * ins + i] += s;
    }
    double sb = 0.0;
    for (std::size_t r = 0; r < n; ++r) sb += pdy[r * dcols + o];
    grad_b[o] += sb;
  }
}

void affine_input_grad(const Matrix& dy, const Matrix& w, Matrix& dx) {
  const auto n = static_cast<std::int64_t>(dy.rows());
  const std::size_t outs = w.rows();
  const std::size_t ins = w.cols();
  const double* pdy = dy.values().data();
  const double* pw = w.values().data();
  double* pdx = dx.values().data();
#pragma omp parallel for schedule(static) if (n * static_cast<std::int64_t>(outs * ins) > kMinParallelWork)
  for (std::int64_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < ins; ++i) {
      double s = 0.0;
      for (std::size_t o = 0; o < outs; ++o) s += pdy[r * outs + o] * pw[o * ins + i];
      pdx[r * ins + i] = s;
    }
  }
}

int max_threads() noexcept {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) noexcept {
#ifdef _OPENMP
  omp_set_num_threads(n);
#else
  (void)n;
#endif
}

}  // namespace xview::kernels::parallel
