#include "crdt/kernels.hpp"

#include <cstdlib>
#include <stdexcept>
#include <string>

namespace crdt::kernels {

// The AVX2 translation unit is always built with -mavx2 on x86-64; whether
// its kernels are usable on the running CPU is a runtime question.
#if defined(__x86_64__)
const Ops& avx2_ops();
#endif
#if defined(__aarch64__)
const Ops& neon_ops();
#endif

namespace {

bool avx2_supported() {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
    return __builtin_cpu_supports("avx2") != 0;
#else
    return false;
#endif
}

bool neon_supported() {
#if defined(__aarch64__)
    return true;
#else
    return false;
#endif
}

Backend pick_default() {
    if (const char* env = std::getenv("CRDT_KERNEL_BACKEND")) {
        const std::string want(env);
        if (want == "scalar") return Backend::scalar;
        if (want == "avx2" && avx2_supported()) return Backend::avx2;
        if (want == "neon" && neon_supported()) return Backend::neon;
        // Unknown or unavailable request falls through to autodetect.
    }
    if (avx2_supported()) return Backend::avx2;
    if (neon_supported()) return Backend::neon;
    return Backend::scalar;
}

Backend& current() {
    static Backend b = pick_default();
    return b;
}

}  // namespace

bool backend_available(Backend b) {
    switch (b) {
        case Backend::scalar: return true;
        case Backend::avx2: return avx2_supported();
        case Backend::neon: return neon_supported();
    }
    return false;
}

const Ops& get(Backend b) {
    switch (b) {
        case Backend::scalar:
            return scalar_ops();
        case Backend::avx2:
#if defined(__x86_64__)
            if (avx2_supported()) return avx2_ops();
#endif
            break;
        case Backend::neon:
#if defined(__aarch64__)
            return neon_ops();
#else
            break;
#endif
    }
    throw std::runtime_error("kernel backend not available: " + backend_name(b));
}

Backend active_backend() { return current(); }

const Ops& active() { return get(current()); }

void set_backend(Backend b) {
    get(b);  // throws if unavailable
    current() = b;
}

std::string backend_name(Backend b) {
    switch (b) {
        case Backend::scalar: return "scalar";
        case Backend::avx2: return "avx2";
        case Backend::neon: return "neon";
    }
    return "unknown";
}

}  // namespace crdt::kernels
