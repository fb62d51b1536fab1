#include <cmath>
#include <numbers>

#include "doctest.h"
#include "oracles.hpp"
#include "pace/error.hpp"
#include "pace/radial.hpp"

using namespace pace;

TEST_CASE("bessel basis") {
    RadialConfig cfg;
    cfg.n_basis = 6;
    cfg.cutoff = 5.0;
    for (double v : bessel_basis(5.0, cfg)) CHECK(v == 0.0);
    for (double v : bessel_basis(7.0, cfg)) CHECK(v == 0.0);
    CHECK_THROWS_AS(bessel_basis(0.0, cfg), InputError);
    // Small-r limit sqrt(2/c) n pi / c (envelope is 1 at r = 0).
    auto b = bessel_basis(1e-8, cfg);
    for (int n = 1; n <= 6; ++n)
        CHECK(b[static_cast<std::size_t>(n - 1)] ==
              doctest::Approx(std::sqrt(2.0 / 5.0) * n * std::numbers::pi / 5.0).epsilon(1e-9));
    // Second-order contact with zero at the cutoff.
    for (double eps : {1e-2, 1e-3}) {
        auto e = bessel_basis(5.0 - eps, cfg);
        for (double v : e) CHECK(std::abs(v) <= 50 * eps * eps);
    }
}

TEST_CASE("exponential Bernstein basis") {
    RadialConfig cfg;
    cfg.kind = RadialKind::exp_bernstein;
    cfg.n_basis = 8;
    cfg.cutoff = 5.0;
    auto z = exp_bernstein_basis(0.0, cfg, 0.5);
    for (int k = 0; k < 7; ++k) CHECK(z[static_cast<std::size_t>(k)] == 0.0);
    CHECK(z[7] == doctest::Approx(1.0));
    // Partition of unity before the envelope.
    for (double r : {0.3, 1.1, 2.7, 4.4}) {
        auto v = exp_bernstein_basis(r, cfg, 0.5);
        const double env = cutoff_envelope(r / cfg.cutoff, cfg.p);
        double s = 0;
        for (double x : v) {
            CHECK(x >= 0.0);
            CHECK(x <= 1.0);
            s += x;
        }
        CHECK(s == doctest::Approx(env).epsilon(1e-12));
    }
    CHECK_THROWS_AS(exp_bernstein_basis(-0.1, cfg, 0.5), InputError);
}

TEST_CASE("radial basis is smooth at the cutoff") {
    for (RadialKind kind : {RadialKind::bessel, RadialKind::exp_bernstein}) {
        RadialConfig cfg;
        cfg.kind = kind;
        cfg.n_basis = 5;
        cfg.cutoff = 4.0;
        const double h = 1e-4;
        auto a = radial_basis(cfg.cutoff - h, cfg), b = radial_basis(cfg.cutoff, cfg);
        for (std::size_t k = 0; k < a.size(); ++k) CHECK(std::abs((b[k] - a[k]) / h) <= 1e-6);
    }
    CHECK_THROWS_AS(parse_radial_kind("gaussian"), ConfigError);
    CHECK(parse_radial_kind("eb") == RadialKind::exp_bernstein);
    RadialConfig bad;
    bad.n_basis = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("radial weight MLP") {
    const int C = 3;
    TensorProduct tp(IrrepsLayout::uniform(1, 0, 1), IrrepsLayout::uniform(C, 0, 1), IrrepsLayout::uniform(C, 0, 1), C);
    const int n_out = static_cast<int>(tp.weight_count());
    Mlp shape(4, 6, n_out);
    MlpParams zero{shape, std::vector<double>(shape.weight_count(), 0.0)};
    // b2 occupies the last n_out slots.
    for (int k = 0; k < n_out; ++k) zero.values[zero.values.size() - static_cast<std::size_t>(n_out - k)] = 0.1 * k;
    std::vector<double> rbf{0.2, -0.3, 0.5, 0.1};
    auto w = radial_weight_mlp(rbf, zero, tp);
    REQUIRE(w.size() == tp.weight_count());
    for (int k = 0; k < n_out; ++k) CHECK(w[static_cast<std::size_t>(k)] == doctest::Approx(0.1 * k));

    std::mt19937_64 rng(3);
    MlpParams p{shape, std::vector<double>(shape.weight_count())};
    shape.init(p.values.data(), rng);
    auto g = oracle::random_vec(rng, static_cast<std::size_t>(n_out));
    std::vector<double> pre(6), y(static_cast<std::size_t>(n_out)), gx(4, 0.0), gp(p.values.size(), 0.0);
    shape.forward<double, double>(p.values.data(), rbf.data(), pre.data(), y.data());
    shape.backward<double, double>(p.values.data(), rbf.data(), pre.data(), g.data(), gx.data(), gp.data());
    auto f = [&](const MlpParams& q) {
        auto o = radial_weight_mlp(rbf, q, tp);
        double s = 0;
        for (std::size_t k = 0; k < o.size(); ++k) s += o[k] * g[k];
        return s;
    };
    double err = 0, scale = 1e-300;
    for (std::size_t i = 0; i < p.values.size(); ++i) {
        MlpParams a = p, b = p;
        a.values[i] += 1e-6;
        b.values[i] -= 1e-6;
        const double fd = (f(a) - f(b)) / 2e-6;
        err = std::max(err, std::abs(fd - gp[i]));
        scale = std::max(scale, std::abs(fd));
    }
    CHECK(err / scale <= 1e-6);
    MlpParams wrong{Mlp(3, 6, n_out), std::vector<double>(Mlp(3, 6, n_out).weight_count(), 0.0)};
    CHECK_THROWS_AS(radial_weight_mlp(rbf, wrong, tp), ConfigError);
}
