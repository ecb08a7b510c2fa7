#pragma once

#include <cstddef>
#include <string>

namespace crdt::kernels {

// Dense double-precision kernels used by the tensor layer. Every backend
// implements the same contract and must produce bitwise-identical results:
// the vector variants keep the per-element accumulation order of the scalar
// reference (matmul broadcasts A[i,k] over a row of B, no FMA contraction),
// so runtime backend selection never changes numerics.

enum class Backend { scalar, avx2, neon };

struct Ops {
    // C[m x n] = A[m x k] * B[k x n], all row-major.
    // accumulate=false zero-fills C first, true adds into it.
    void (*matmul)(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n,
                   bool accumulate);
    void (*add)(const double* a, const double* b, double* out, std::size_t n);
    void (*sub)(const double* a, const double* b, double* out, std::size_t n);
    void (*mul)(const double* a, const double* b, double* out, std::size_t n);
    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    void (*scale)(const double* a, double s, double* out, std::size_t n);
    const char* name;
};

const Ops& scalar_ops();

bool backend_available(Backend b);

// Active backend: picked once at startup (best available, overridable via
// the CRDT_KERNEL_BACKEND env var: "scalar", "avx2" or "neon").
Backend active_backend();
const Ops& active();

// For equivalence tests and explicit overrides. Throws std::runtime_error
// if the backend is not available on this machine.
const Ops& get(Backend b);
void set_backend(Backend b);

std::string backend_name(Backend b);

// Row-major transpose, out[c x r] from a[r x c]. Pure data movement, shared
// by all backends; lets backward passes reuse the single matmul kernel.
void transpose(const double* a, double* out, std::size_t rows, std::size_t cols);

}  // namespace crdt::kernels
