#include <random>
#include <vector>

#include "doctest.h"
#include "pace/kernels.hpp"
#include "pace/model.hpp"

using namespace pace;

namespace {

struct Restore {
    ~Restore() { kernels::select("auto"); }
};

std::vector<double> rand_vec(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    std::vector<double> v(n);
    for (double& x : v) x = u(rng);
    return v;
}

}  // namespace

TEST_CASE("avx2 kernels agree with the scalar reference") {
    const kernels::KernelTable* simd = kernels::avx2_table();
    if (!simd) {
        MESSAGE("AVX2 unavailable; skipping");
        return;
    }
    const kernels::KernelTable& ref = kernels::scalar_table();
    std::mt19937_64 rng(7);
    for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 7u, 8u, 15u, 16u, 17u, 31u, 64u, 257u}) {
        auto a = rand_vec(rng, n), b = rand_vec(rng, n), c = rand_vec(rng, n), o = rand_vec(rng, n);
        auto o1 = o, o2 = o;
        ref.axpy(o1.data(), a.data(), 0.37, n);
        simd->axpy(o2.data(), a.data(), 0.37, n);
        for (std::size_t i = 0; i < n; ++i) CHECK(o1[i] == doctest::Approx(o2[i]).epsilon(1e-15));
        o1 = o2 = o;
        ref.mul_acc(o1.data(), a.data(), b.data(), -1.3, n);
        simd->mul_acc(o2.data(), a.data(), b.data(), -1.3, n);
        for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(o1[i] - o2[i]) <= 1e-14);
        o1 = o2 = o;
        ref.mul3_acc(o1.data(), a.data(), b.data(), c.data(), 0.5, n);
        simd->mul3_acc(o2.data(), a.data(), b.data(), c.data(), 0.5, n);
        for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(o1[i] - o2[i]) <= 1e-14);
        ref.mul(o1.data(), a.data(), b.data(), n);
        simd->mul(o2.data(), a.data(), b.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(o1[i] == o2[i]);
        CHECK(std::abs(ref.dot(a.data(), b.data(), n) - simd->dot(a.data(), b.data(), n)) <= 1e-12);
    }
}

TEST_CASE("kernel selection") {
    Restore restore;
    kernels::select("scalar");
    CHECK(std::string(kernels::active().name) == "scalar");
    CHECK_THROWS(kernels::select("neon9000"));
    if (kernels::avx2_table()) {
        kernels::select("avx2");
        CHECK(std::string(kernels::active().name) == "avx2");
    }
}

TEST_CASE("unaligned slices match the scalar reference") {
    const kernels::KernelTable* simd = kernels::avx2_table();
    if (!simd) return;
    std::mt19937_64 rng(8);
    auto a = rand_vec(rng, 80), b = rand_vec(rng, 80), o = rand_vec(rng, 80);
    for (std::size_t off : {1u, 2u, 3u}) {
        const std::size_t n = 80 - off - 2;
        auto o1 = o, o2 = o;
        kernels::scalar_table().mul_acc(o1.data() + off, a.data() + off, b.data() + 1, 0.7, n);
        simd->mul_acc(o2.data() + off, a.data() + off, b.data() + 1, 0.7, n);
        for (std::size_t i = 0; i < o.size(); ++i) CHECK(std::abs(o1[i] - o2[i]) <= 1e-14);
        CHECK(std::abs(kernels::scalar_table().dot(a.data() + off, b.data(), n) - simd->dot(a.data() + off, b.data(), n)) <=
              1e-12);
    }
}

TEST_CASE("model outputs agree across kernel variants") {
    if (!kernels::avx2_table()) return;
    Restore restore;
    ModelConfig c;
    c.channels = 12;
    c.l_max = 2;
    c.l_hidden = 2;
    c.v_max = 3;
    c.mlp_hidden = 16;
    c.species = {1, 6, 8};
    Model m(c, {}, 3);
    Structure s;
    s.species = {6, 1, 8, 1, 6};
    s.positions = {{0, 0, 0}, {1.05, 0.1, 0}, {-0.4, 1.2, 0.2}, {0.2, -0.5, 0.9}, {-1.3, -0.4, -0.3}};
    kernels::select("scalar");
    const Prediction a = m.predict(s);
    kernels::select("avx2");
    const Prediction b = m.predict(s);
    CHECK(std::abs(a.energies[0] - b.energies[0]) <= 1e-12 * (1 + std::abs(a.energies[0])));
    for (std::size_t i = 0; i < s.size(); ++i)
        for (int k = 0; k < 3; ++k) CHECK(std::abs(a.forces[i][k] - b.forces[i][k]) <= 1e-12);
}
