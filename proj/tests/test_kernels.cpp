#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <vector>

#include "crdt/kernels.hpp"
#include "crdt/rng.hpp"

using namespace crdt;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

std::vector<kernels::Backend> simd_backends() {
    std::vector<kernels::Backend> out;
    for (auto b : {kernels::Backend::avx2, kernels::Backend::neon}) {
        if (kernels::backend_available(b)) out.push_back(b);
    }
    return out;
}

}  // namespace

TEST_CASE("matmul identity returns input") {
    const std::size_t n = 7;
    Rng rng(11);
    auto v = random_vec(rng, n * n);
    std::vector<double> eye(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0;
    std::vector<double> out(n * n);
    kernels::scalar_ops().matmul(eye.data(), v.data(), out.data(), n, n, n, false);
    CHECK(out == v);
}

TEST_CASE("matmul hand example") {
    // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
    std::vector<double> a{1, 2, 3, 4}, b{5, 6, 7, 8}, c(4);
    kernels::scalar_ops().matmul(a.data(), b.data(), c.data(), 2, 2, 2, false);
    CHECK(c == std::vector<double>{19, 22, 43, 50});
    // accumulate adds on top
    kernels::scalar_ops().matmul(a.data(), b.data(), c.data(), 2, 2, 2, true);
    CHECK(c == std::vector<double>{38, 44, 86, 100});
}

TEST_CASE("transpose round trip") {
    Rng rng(5);
    auto a = random_vec(rng, 6 * 13);
    std::vector<double> t(13 * 6), back(6 * 13);
    kernels::transpose(a.data(), t.data(), 6, 13);
    kernels::transpose(t.data(), back.data(), 13, 6);
    CHECK(back == a);
}

TEST_CASE("simd backends match scalar reference bitwise") {
    const auto backends = simd_backends();
    if (backends.empty()) {
        MESSAGE("no SIMD backend available on this machine; scalar only");
        return;
    }
    Rng rng(42);
    for (auto backend : backends) {
        const auto& simd = kernels::get(backend);
        CAPTURE(simd.name);
        // Odd sizes on purpose so the remainder loops run.
        for (auto [m, k, n] : {std::tuple<std::size_t, std::size_t, std::size_t>{1, 1, 1},
                               {3, 5, 7},
                               {8, 8, 8},
                               {13, 17, 10},
                               {32, 64, 33}}) {
            auto a = random_vec(rng, m * k);
            auto b = random_vec(rng, k * n);
            std::vector<double> c_ref(m * n), c_simd(m * n);
            kernels::scalar_ops().matmul(a.data(), b.data(), c_ref.data(), m, k, n, false);
            simd.matmul(a.data(), b.data(), c_simd.data(), m, k, n, false);
            CHECK(std::memcmp(c_ref.data(), c_simd.data(), m * n * sizeof(double)) == 0);

            kernels::scalar_ops().matmul(a.data(), b.data(), c_ref.data(), m, k, n, true);
            simd.matmul(a.data(), b.data(), c_simd.data(), m, k, n, true);
            CHECK(std::memcmp(c_ref.data(), c_simd.data(), m * n * sizeof(double)) == 0);
        }
        for (std::size_t n : {1u, 2u, 3u, 4u, 5u, 31u, 100u, 1001u}) {
            auto a = random_vec(rng, n);
            auto b = random_vec(rng, n);
            std::vector<double> r1(n), r2(n);
            kernels::scalar_ops().add(a.data(), b.data(), r1.data(), n);
            simd.add(a.data(), b.data(), r2.data(), n);
            CHECK(r1 == r2);
            kernels::scalar_ops().sub(a.data(), b.data(), r1.data(), n);
            simd.sub(a.data(), b.data(), r2.data(), n);
            CHECK(r1 == r2);
            kernels::scalar_ops().mul(a.data(), b.data(), r1.data(), n);
            simd.mul(a.data(), b.data(), r2.data(), n);
            CHECK(r1 == r2);
            kernels::scalar_ops().scale(a.data(), 0.37, r1.data(), n);
            simd.scale(a.data(), 0.37, r2.data(), n);
            CHECK(r1 == r2);
            r1 = b;
            r2 = b;
            kernels::scalar_ops().axpy(-1.7, a.data(), r1.data(), n);
            simd.axpy(-1.7, a.data(), r2.data(), n);
            CHECK(r1 == r2);
        }
    }
}

TEST_CASE("backend selection") {
    const auto original = kernels::active_backend();
    kernels::set_backend(kernels::Backend::scalar);
    CHECK(kernels::active_backend() == kernels::Backend::scalar);
    CHECK(std::string(kernels::active().name) == "scalar");
    kernels::set_backend(original);
    CHECK(kernels::active_backend() == original);
    // Requesting a backend the machine lacks is an error, not a fallback.
    bool have_both = kernels::backend_available(kernels::Backend::avx2) &&
                     kernels::backend_available(kernels::Backend::neon);
    CHECK(!have_both);  // no machine has both ISAs
    if (!kernels::backend_available(kernels::Backend::neon)) {
        CHECK_THROWS(kernels::set_backend(kernels::Backend::neon));
    }
    if (!kernels::backend_available(kernels::Backend::avx2)) {
        CHECK_THROWS(kernels::set_backend(kernels::Backend::avx2));
    }
}
