// AVX2 variants, compiled with -mavx2 and dispatched at runtime. No FMA:
// the scalar reference rounds mul and add separately, and bitwise
// equivalence with it is part of the kernel contract.

#include "crdt/kernels.hpp"

#if defined(__AVX2__)

#include <immintrin.h>

#include <cstring>

namespace crdt::kernels {
namespace {

void matmul_avx2(const double* a, const double* b, double* c,
                 std::size_t m, std::size_t k, std::size_t n,
                 bool accumulate) {
    if (!accumulate) {
        std::memset(c, 0, m * n * sizeof(double));
    }
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            const double* brow = b + kk * n;
            const __m256d av = _mm256_set1_pd(aik);
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4) {
                __m256d bv = _mm256_loadu_pd(brow + j);
                __m256d cv = _mm256_loadu_pd(crow + j);
                cv = _mm256_add_pd(cv, _mm256_mul_pd(av, bv));
                _mm256_storeu_pd(crow + j, cv);
            }
            for (; j < n; ++j) {
                crow[j] += aik * brow[j];
            }
        }
    }
}

void add_avx2(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i),
                                                _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_avx2(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i),
                                                _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_avx2(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                                _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d yv = _mm256_loadu_pd(y + i);
        yv = _mm256_add_pd(yv, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
        _mm256_storeu_pd(y + i, yv);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_avx2(const double* a, double s, double* out, std::size_t n) {
    const __m256d sv = _mm256_set1_pd(s);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), sv));
    }
    for (; i < n; ++i) out[i] = a[i] * s;
}

}  // namespace

const Ops& avx2_ops() {
    static const Ops ops{matmul_avx2, add_avx2, sub_avx2,
                         mul_avx2,    axpy_avx2, scale_avx2,
                         "avx2"};
    return ops;
}

}  // namespace crdt::kernels

#endif  // __AVX2__
