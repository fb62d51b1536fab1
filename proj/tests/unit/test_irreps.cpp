#include <cmath>
#include <numbers>

#include "doctest.h"
#include "oracles.hpp"
#include "pace/error.hpp"
#include "pace/irreps.hpp"

using namespace pace;

TEST_CASE("layout string round trip and invariants") {
    auto lay = IrrepsLayout::parse("256x0+256x1+256x2+256x3");
    CHECK(lay.str() == "256x0+256x1+256x2+256x3");
    CHECK(lay.dim() == 256u * 16u);
    auto merged = IrrepsLayout({{2, 1}, {3, 0}, {4, 1}});
    CHECK(merged.str() == "3x0+6x1");
    CHECK(merged.offset(1) == 3u);
    CHECK_THROWS_AS(IrrepsLayout::parse("4x"), ParseError);
    CHECK_THROWS_AS(IrrepsLayout({{1, 7}}), ConfigError);
    CHECK_THROWS_AS(IrrepsLayout({{0, 1}}), ConfigError);
}

TEST_CASE("spherical harmonic values") {
    const double y00 = 0.5 / std::sqrt(std::numbers::pi);
    const double c1 = std::sqrt(3.0 / (4.0 * std::numbers::pi));
    auto y = real_spherical_harmonics({0, 0, 1}, 1);
    CHECK(y[0][0] == doctest::Approx(0.2820947918).epsilon(1e-10));
    CHECK(y[0][0] == doctest::Approx(y00));
    CHECK(std::abs(y[1][0]) < 1e-15);
    CHECK(y[1][1] == doctest::Approx(c1));
    CHECK(std::abs(y[1][2]) < 1e-15);
    y = real_spherical_harmonics({1, 0, 0}, 1);
    CHECK(y[1][2] == doctest::Approx(c1));
    CHECK(std::abs(y[1][0]) < 1e-15);
    CHECK_THROWS_AS(real_spherical_harmonics({1, 1, 0}, 1), InputError);
    CHECK_THROWS_AS(real_spherical_harmonics({1, 0, 0}, 7), ConfigError);
}

TEST_CASE("spherical harmonics are orthonormal under quadrature") {
    // Gauss-Legendre in cos(theta) x uniform phi, exact for degree <= 12.
    const int nz = 16, nphi = 32;
    std::vector<double> x(nz), w(nz);
    for (int i = 0; i < nz; ++i) {
        double z = std::cos(std::numbers::pi * (i + 0.75) / (nz + 0.5));
        for (int it = 0; it < 100; ++it) {
            double p0 = 1, p1 = z;
            for (int k = 2; k <= nz; ++k) {
                double p2 = ((2 * k - 1) * z * p1 - (k - 1) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            double dp = nz * (z * p1 - p0) / (z * z - 1);
            z -= p1 / dp;
            if (it > 50) {
                x[static_cast<std::size_t>(i)] = z;
                w[static_cast<std::size_t>(i)] = 2 / ((1 - z * z) * dp * dp);
                break;
            }
        }
    }
    const std::size_t n = sh_dim(kMaxL);
    std::vector<double> gram(n * n, 0.0), y(n);
    for (int a = 0; a < nz; ++a)
        for (int b = 0; b < nphi; ++b) {
            double z = x[static_cast<std::size_t>(a)], s = std::sqrt(1 - z * z), phi = 2 * std::numbers::pi * b / nphi;
            spherical_harmonics<double>(s * std::cos(phi), s * std::sin(phi), z, kMaxL, y.data());
            double wt = w[static_cast<std::size_t>(a)] * 2 * std::numbers::pi / nphi;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) gram[i * n + j] += wt * y[i] * y[j];
        }
    double worst = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) worst = std::max(worst, std::abs(gram[i * n + j] - (i == j ? 1.0 : 0.0)));
    CHECK(worst < 1e-12);
}

TEST_CASE("spherical harmonics are equivariant") {
    std::mt19937_64 rng(11);
    double worst = 0;
    for (int t = 0; t < 100; ++t) {
        Rotation R = Rotation::random(rng);
        Vec3 r = oracle::random_unit(rng);
        auto a = real_spherical_harmonics(R.apply(r), kMaxL);
        auto b = real_spherical_harmonics(r, kMaxL);
        for (int l = 0; l <= kMaxL; ++l) {
            auto D = wigner_d_matrix(l, R);
            const int d = 2 * l + 1;
            for (int i = 0; i < d; ++i) {
                double s = 0;
                for (int j = 0; j < d; ++j) s += D[static_cast<std::size_t>(i * d + j)] * b[static_cast<std::size_t>(l)][static_cast<std::size_t>(j)];
                worst = std::max(worst, std::abs(s - a[static_cast<std::size_t>(l)][static_cast<std::size_t>(i)]));
            }
        }
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("wigner D properties") {
    std::mt19937_64 rng(3);
    for (int l = 0; l <= kMaxL; ++l) {
        auto D = wigner_d_matrix(l, Rotation::identity());
        const int d = 2 * l + 1;
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) CHECK(std::abs(D[static_cast<std::size_t>(i * d + j)] - (i == j ? 1.0 : 0.0)) < 1e-13);
    }
    // l = 1 is the rotation matrix in (y, z, x) order.
    Rotation R = Rotation::random(rng);
    auto D1 = wigner_d_matrix(1, R);
    const int perm[3] = {1, 2, 0};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) CHECK(std::abs(D1[static_cast<std::size_t>(3 * i + j)] - R(perm[i], perm[j])) < 1e-12);
    Rotation R2 = Rotation::random(rng);
    for (int l = 1; l <= kMaxL; ++l) {
        auto A = wigner_d_matrix(l, R * R2), B = wigner_d_matrix(l, R), C = wigner_d_matrix(l, R2);
        const int d = 2 * l + 1;
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) {
                double s = 0;
                for (int k = 0; k < d; ++k) s += B[static_cast<std::size_t>(i * d + k)] * C[static_cast<std::size_t>(k * d + j)];
                CHECK(std::abs(s - A[static_cast<std::size_t>(i * d + j)]) < 1e-12);
            }
    }
}

TEST_CASE("rotate is a norm-preserving group action") {
    std::mt19937_64 rng(5);
    IrrepsTensor<double> t(IrrepsLayout::parse("3x0+2x1+2x2+1x4"), 4);
    t.data = oracle::random_vec(rng, t.data.size());
    Rotation R1 = Rotation::random(rng), R2 = Rotation::random(rng);
    auto a = rotate(rotate(t, R2), R1);
    auto b = rotate(t, R1 * R2);
    for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(std::abs(a.data[i] - b.data[i]) < 1e-12);
    auto same = rotate(t, Rotation::identity());
    for (std::size_t i = 0; i < t.data.size(); ++i) CHECK(std::abs(same.data[i] - t.data[i]) < 1e-13);
    auto r = rotate(t, R1);
    for (std::size_t i = 0; i < t.rows; ++i) {
        for (int c = 0; c < 3; ++c) CHECK(r.at(i, 0, 0, c) == t.at(i, 0, 0, c));
        for (int l : {1, 2, 4}) {
            for (int c = 0; c < t.layout.mul(l); ++c) {
                double n1 = 0, n2 = 0;
                for (int m = -l; m <= l; ++m) {
                    n1 += t.at(i, l, m, c) * t.at(i, l, m, c);
                    n2 += r.at(i, l, m, c) * r.at(i, l, m, c);
                }
                CHECK(std::abs(n1 - n2) < 1e-12);
            }
        }
    }
    CHECK_THROWS_AS(Rotation::from_matrix({1, 0, 0, 0, 1, 0, 0, 0, -1}), InputError);
}
