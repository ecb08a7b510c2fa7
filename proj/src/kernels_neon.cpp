// NEON variants for aarch64 (float64x2). Same contract as the scalar
// reference: per-element accumulation order preserved, no fused multiply-add.

#include "crdt/kernels.hpp"

#if defined(__aarch64__)

#include <arm_neon.h>

#include <cstring>

namespace crdt::kernels {
namespace {

void matmul_neon(const double* a, const double* b, double* c,
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
            const float64x2_t av = vdupq_n_f64(aik);
            std::size_t j = 0;
            for (; j + 2 <= n; j += 2) {
                float64x2_t bv = vld1q_f64(brow + j);
                float64x2_t cv = vld1q_f64(crow + j);
                cv = vaddq_f64(cv, vmulq_f64(av, bv));
                vst1q_f64(crow + j, cv);
            }
            for (; j < n; ++j) {
                crow[j] += aik * brow[j];
            }
        }
    }
}

void add_neon(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(out + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_neon(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(out + i, vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_neon(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void axpy_neon(double alpha, const double* x, double* y, std::size_t n) {
    const float64x2_t av = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t yv = vld1q_f64(y + i);
        yv = vaddq_f64(yv, vmulq_f64(av, vld1q_f64(x + i)));
        vst1q_f64(y + i, yv);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_neon(const double* a, double s, double* out, std::size_t n) {
    const float64x2_t sv = vdupq_n_f64(s);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), sv));
    }
    for (; i < n; ++i) out[i] = a[i] * s;
}

}  // namespace

const Ops& neon_ops() {
    static const Ops ops{matmul_neon, add_neon, sub_neon,
                         mul_neon,    axpy_neon, scale_neon,
                         "neon"};
    return ops;
}

}  // namespace crdt::kernels

#endif  // __aarch64__
