#pragma once

#include <cstddef>

namespace msopt::kernels {

// Data-parallel inner loops shared by the dense factorizations and the
// transformer. Every kernel exists as a scalar reference and (on x86-64
// with AVX2) a vectorized variant. Vectorization is always across
// independent output elements, never inside one accumulation chain, so
// both variants produce bit-identical results and the dispatch choice
// cannot perturb reproducibility.

enum class Backend { Scalar, Avx2 };

Backend active_backend();
void force_backend(Backend b);   // tests and MSOPT_KERNEL_BACKEND override
const char* backend_name(Backend b);
bool avx2_supported();

// dst[i] = a[i] op b[i]
void add(double* dst, const double* a, const double* b, std::size_t n);
void sub(double* dst, const double* a, const double* b, std::size_t n);
void hadamard(double* dst, const double* a, const double* b, std::size_t n);
// dst[i] = x[i] * s
void scale(double* dst, const double* x, double s, std::size_t n);
// y[i] += a * x[i]
void axpy(double* y, double a, const double* x, std::size_t n);

// Row-major GEMM, C[m x n] (+)= A[m x k] * B[k x n].
void gemm_nn(double* c, const double* a, const double* b, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate);
// C[m x n] (+)= A^T * B where A is stored [k x m].
void gemm_tn(double* c, const double* a, const double* b, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate);
// C[m x n] (+)= A * B^T where B is stored [n x k]. Internally transposes B
// and runs gemm_nn, so the accumulation order matches the other variants.
void gemm_nt(double* c, const double* a, const double* b, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate);

void transpose(double* dst, const double* src, std::size_t rows, std::size_t cols);

namespace detail {
void add_scalar(double*, const double*, const double*, std::size_t);
void sub_scalar(double*, const double*, const double*, std::size_t);
void hadamard_scalar(double*, const double*, const double*, std::size_t);
void scale_scalar(double*, const double*, double, std::size_t);
void axpy_scalar(double*, double, const double*, std::size_t);
void gemm_nn_scalar(double*, const double*, const double*, std::size_t,
                    std::size_t, std::size_t, bool);
void gemm_tn_scalar(double*, const double*, const double*, std::size_t,
                    std::size_t, std::size_t, bool);

#if defined(__x86_64__) || defined(_M_X64)
void add_avx2(double*, const double*, const double*, std::size_t);
void sub_avx2(double*, const double*, const double*, std::size_t);
void hadamard_avx2(double*, const double*, const double*, std::size_t);
void scale_avx2(double*, const double*, double, std::size_t);
void axpy_avx2(double*, double, const double*, std::size_t);
void gemm_nn_avx2(double*, const double*, const double*, std::size_t,
                  std::size_t, std::size_t, bool);
void gemm_tn_avx2(double*, const double*, const double*, std::size_t,
                  std::size_t, std::size_t, bool);
#endif
}  // namespace detail

}  // namespace msopt::kernels
