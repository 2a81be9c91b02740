#include "msopt/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

namespace msopt::kernels {

namespace detail {

void add_scalar(double* dst, const double* a, const double* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] + b[i];
}

void sub_scalar(double* dst, const double* a, const double* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] - b[i];
}

void hadamard_scalar(double* dst, const double* a, const double* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] * b[i];
}

void scale_scalar(double* dst, const double* x, double s, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = x[i] * s;
}

void axpy_scalar(double* y, double a, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void gemm_nn_scalar(double* c, const double* a, const double* b, std::size_t m,
                    std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    if (!accumulate) std::memset(crow, 0, n * sizeof(double));
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double apv = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += apv * brow[j];
    }
  }
}

void gemm_tn_scalar(double* c, const double* a, const double* b, std::size_t m,
                    std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double apv = arow[i];
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += apv * brow[j];
    }
  }
}

}  // namespace detail

namespace {

struct Dispatch {
  void (*add)(double*, const double*, const double*, std::size_t);
  void (*sub)(double*, const double*, const double*, std::size_t);
  void (*hadamard)(double*, const double*, const double*, std::size_t);
  void (*scale)(double*, const double*, double, std::size_t);
  void (*axpy)(double*, double, const double*, std::size_t);
  void (*gemm_nn)(double*, const double*, const double*, std::size_t,
                  std::size_t, std::size_t, bool);
  void (*gemm_tn)(double*, const double*, const double*, std::size_t,
                  std::size_t, std::size_t, bool);
};

constexpr Dispatch kScalar{detail::add_scalar,   detail::sub_scalar,
                           detail::hadamard_scalar, detail::scale_scalar,
                           detail::axpy_scalar,  detail::gemm_nn_scalar,
                           detail::gemm_tn_scalar};

#if defined(__x86_64__) || defined(_M_X64)
constexpr Dispatch kAvx2{detail::add_avx2,   detail::sub_avx2,
                         detail::hadamard_avx2, detail::scale_avx2,
                         detail::axpy_avx2,  detail::gemm_nn_avx2,
                         detail::gemm_tn_avx2};
#endif

Backend g_backend = [] {
#if defined(__x86_64__) || defined(_M_X64)
  if (const char* env = std::getenv("MSOPT_KERNEL_BACKEND")) {
    if (std::string(env) == "scalar") return Backend::Scalar;
    if (std::string(env) == "avx2") return Backend::Avx2;
  }
  if (__builtin_cpu_supports("avx2")) return Backend::Avx2;
#endif
  return Backend::Scalar;
}();

const Dispatch& table() {
#if defined(__x86_64__) || defined(_M_X64)
  if (g_backend == Backend::Avx2) return kAvx2;
#endif
  return kScalar;
}

}  // namespace

Backend active_backend() { return g_backend; }

void force_backend(Backend b) {
  if (b == Backend::Avx2 && !avx2_supported()) return;
  g_backend = b;
}

const char* backend_name(Backend b) {
  return b == Backend::Avx2 ? "avx2" : "scalar";
}

bool avx2_supported() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

void add(double* dst, const double* a, const double* b, std::size_t n) {
  table().add(dst, a, b, n);
}
void sub(double* dst, const double* a, const double* b, std::size_t n) {
  table().sub(dst, a, b, n);
}
void hadamard(double* dst, const double* a, const double* b, std::size_t n) {
  table().hadamard(dst, a, b, n);
}
void scale(double* dst, const double* x, double s, std::size_t n) {
  table().scale(dst, x, s, n);
}
void axpy(double* y, double a, const double* x, std::size_t n) {
  table().axpy(y, a, x, n);
}
void gemm_nn(double* c, const double* a, const double* b, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  table().gemm_nn(c, a, b, m, k, n, accumulate);
}
void gemm_tn(double* c, const double* a, const double* b, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  table().gemm_tn(c, a, b, m, k, n, accumulate);
}

void transpose(double* dst, const double* src, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
}

void gemm_nt(double* c, const double* a, const double* b, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  std::vector<double> bt(k * n);
  transpose(bt.data(), b, n, k);
  gemm_nn(c, a, bt.data(), m, k, n, accumulate);
}

}  // namespace msopt::kernels
