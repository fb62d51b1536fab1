#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "oracles.hpp"
#include "pace/model.hpp"

using namespace pace;

namespace {

ModelConfig tiny_config(bool eb = true, bool si = true, RadialKind kind = RadialKind::bessel) {
    ModelConfig c;
    c.channels = 4;
    c.l_max = 2;
    c.l_hidden = 2;
    c.v_max = 3;
    c.mlp_hidden = 8;
    c.edge_booster = eb;
    c.extra_si = si;
    c.radial.kind = kind;
    c.radial.n_basis = 6;
    c.radial.cutoff = 5.0;
    c.species = {1, 6, 8};
    return c;
}

Structure shifted(Structure s, std::size_t atom, int k, double h) {
    s.positions[atom][k] += h;
    return s;
}

double max_abs(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (int k = 0; k < 3; ++k) m = std::max(m, std::abs(a[i][k] - b[i][k]));
    return m;
}

}  // namespace

TEST_CASE("model config validation and JSON round trip") {
    ModelConfig c = tiny_config();
    CHECK(ModelConfig::from_json(c.to_json()) == c);
    ModelConfig bad = c;
    bad.l_max = 4;  // 4 * 2 > 6
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.l_hidden = 3;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.v_max = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.species = {6, 1};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    nlohmann::json j = c.to_json();
    j["channels"] = "many";
    CHECK_THROWS_AS(ModelConfig::from_json(j), ConfigError);
    ModelConfig noeb = c;
    noeb.edge_booster = false;
    noeb.l_max = 6;
    noeb.l_hidden = 2;
    CHECK_NOTHROW(noeb.validate());
}

TEST_CASE("parameter names are unique and initialisation is seeded") {
    Model a(tiny_config(), {}, 7), b(tiny_config(), {}, 7), c(tiny_config(), {}, 8);
    CHECK(a.parameters().values == b.parameters().values);
    CHECK(a.parameters().values != c.parameters().values);
    CHECK(a.parameters().contains("embedding"));
    CHECK(a.parameters().contains("layer1.si3.part2.W0"));
    Model noextra(tiny_config(true, false), {}, 7);
    CHECK_FALSE(noextra.parameters().contains("layer1.si2.part1.W0"));
    Model eb(tiny_config(false), {}, 7);
    CHECK_FALSE(eb.parameters().contains("radial_w2.W1"));
}

TEST_CASE("forces match central finite differences") {
    std::mt19937_64 rng(11);
    for (RadialKind kind : {RadialKind::bessel, RadialKind::exp_bernstein}) {
        Model m(tiny_config(true, true, kind), {-10.0, 0, 1, 0}, 3);
        for (int trial = 0; trial < 3; ++trial) {
            Structure s = oracle::random_cluster(rng, 5, {1, 6, 8});
            Prediction pr = m.predict(s);
            const double h = 1e-4;
            double err = 0, scale = 1e-12;
            for (std::size_t i = 0; i < s.size(); ++i)
                for (int k = 0; k < 3; ++k) {
                    double fd = -(m.energy(shifted(s, i, k, h)) - m.energy(shifted(s, i, k, -h))) / (2 * h);
                    err = std::max(err, std::abs(fd - pr.forces[i][k]));
                    scale = std::max(scale, std::abs(fd));
                }
            CHECK(err / scale < 1e-5);
            Vec3 net{};
            for (const auto& f : pr.forces)
                for (int k = 0; k < 3; ++k) net[k] += f[k];
            CHECK(std::abs(net[0]) + std::abs(net[1]) + std::abs(net[2]) < 1e-8);
        }
    }
}

TEST_CASE("energy is invariant and forces equivariant under rigid motions and permutations") {
    std::mt19937_64 rng(5);
    for (bool eb : {true, false})
        for (bool si : {true, false}) {
            Model m(tiny_config(eb, si), {}, 9);
            Structure s = oracle::random_cluster(rng, 6, {1, 6, 8});
            Prediction p0 = m.predict(s);
            for (int t = 0; t < 5; ++t) {
                Rotation R = Rotation::random(rng);
                Structure r = s;
                for (auto& x : r.positions) {
                    x = R.apply(x);
                    x[0] += 0.3;
                    x[2] -= 1.1;
                }
                Prediction p1 = m.predict(r);
                CHECK(std::abs(p1.energies[0] - p0.energies[0]) <= 1e-9 * (1 + std::abs(p0.energies[0])));
                std::vector<Vec3> rf;
                for (const auto& f : p0.forces) rf.push_back(R.apply(f));
                CHECK(max_abs(rf, p1.forces) <= 1e-9);
            }
            Structure perm = s;
            std::reverse(perm.positions.begin(), perm.positions.end());
            std::reverse(perm.species.begin(), perm.species.end());
            Prediction pp = m.predict(perm);
            CHECK(std::abs(pp.energies[0] - p0.energies[0]) <= 1e-10 * (1 + std::abs(p0.energies[0])));
            std::vector<Vec3> back(pp.forces.rbegin(), pp.forces.rend());
            CHECK(max_abs(back, p0.forces) <= 1e-10);
        }
}

TEST_CASE("isolated atom has zero force and batching matches single evaluations") {
    Model m(tiny_config(), {-3.0, 0, 1, 0}, 1);
    Structure one;
    one.species = {6};
    one.positions = {{0.1, 0.2, 0.3}};
    Prediction p = m.predict(one);
    CHECK(p.forces[0] == Vec3{0, 0, 0});

    std::mt19937_64 rng(3);
    Structure a = oracle::random_cluster(rng, 4, {1, 6}), b = oracle::random_cluster(rng, 5, {8, 1, 6});
    for (auto& x : b.positions) x[0] += 20.0;
    std::vector<MolecularGraph> gs{build_graph(a, 5.0, m.config().species), build_graph(b, 5.0, m.config().species)};
    MolecularGraph g = batch(gs);
    std::vector<Vec3> pos = a.positions;
    pos.insert(pos.end(), b.positions.begin(), b.positions.end());
    Prediction pb = m.predict(g, pos);
    Prediction pa = m.predict(a), pbb = m.predict(b);
    CHECK(std::abs(pb.energies[0] - pa.energies[0]) <= 1e-12);
    CHECK(std::abs(pb.energies[1] - pbb.energies[0]) <= 1e-12);
    std::vector<Vec3> fa(pb.forces.begin(), pb.forces.begin() + 4), fb(pb.forces.begin() + 4, pb.forces.end());
    CHECK(max_abs(fa, pa.forces) <= 1e-12);
    CHECK(max_abs(fb, pbb.forces) <= 1e-12);
}

TEST_CASE("layer-by-layer composition equals the full forward pass") {
    std::mt19937_64 rng(17);
    for (bool eb : {true, false}) {
        Model m(tiny_config(eb), {-2.0, 0, 1, 0}, 4);
        Structure s = oracle::random_cluster(rng, 5, {1, 6, 8});
        MolecularGraph g = build_graph(s, 5.0, m.config().species);
        const std::size_t E = g.edges.size();
        auto x0 = m.embed_nodes(g);
        auto ef = m.edge_features(g, s.positions);
        IrrepsTensor<double> x0c(x0.layout, E), x0n(x0.layout, E);
        for (std::size_t e = 0; e < E; ++e) {
            std::copy_n(x0.row(static_cast<std::size_t>(g.edges[e].center)).begin(), x0.width(), x0c.row(e).begin());
            std::copy_n(x0.row(static_cast<std::size_t>(g.edges[e].neighbor)).begin(), x0.width(), x0n.row(e).begin());
        }
        auto m1 = m.edge_booster(ef.sh, ef.rbf, x0c, x0n);
        CHECK(m1.layout == m.message1_layout());
        auto A1 = m.aggregate(m1, g);
        auto x1 = m.many_body_update(1, A1, x0, g.species);
        IrrepsTensor<double> x1n(x1.layout, E);
        for (std::size_t e = 0; e < E; ++e)
            std::copy_n(x1.row(static_cast<std::size_t>(g.edges[e].neighbor)).begin(), x1.width(), x1n.row(e).begin());
        auto m2 = m.layer2_message(m1, ef.rbf, x0c, x0n, x1n);
        auto A2 = m.aggregate(m2, g);
        auto x2 = m.many_body_update(2, A2, x1, g.species);
        auto E_layers = m.readout_energy(x1, x2, g);
        double E_full = m.energy(s);
        CHECK(std::abs(E_layers[0] - E_full) <= 1e-12 * (1 + std::abs(E_full)));
    }
}

TEST_CASE("edge booster is equivariant and ablations change outputs") {
    std::mt19937_64 rng(23);
    Model m(tiny_config(), {}, 2);
    Structure s = oracle::random_cluster(rng, 4, {1, 6, 8});
    MolecularGraph g = build_graph(s, 5.0, m.config().species);
    auto message = [&](const std::vector<Vec3>& pos) {
        auto x0 = m.embed_nodes(g);
        auto ef = m.edge_features(g, pos);
        IrrepsTensor<double> c(x0.layout, g.edges.size()), n(x0.layout, g.edges.size());
        for (std::size_t e = 0; e < g.edges.size(); ++e) {
            c.row(e)[0] = 0;
            std::copy_n(x0.row(static_cast<std::size_t>(g.edges[e].center)).begin(), x0.width(), c.row(e).begin());
            std::copy_n(x0.row(static_cast<std::size_t>(g.edges[e].neighbor)).begin(), x0.width(), n.row(e).begin());
        }
        return m.edge_booster(ef.sh, ef.rbf, c, n);
    };
    Rotation R = Rotation::random(rng);
    std::vector<Vec3> rp;
    for (const auto& x : s.positions) rp.push_back(R.apply(x));
    auto a = rotate(message(s.positions), R), b = message(rp);
    double err = 0;
    for (std::size_t k = 0; k < a.data.size(); ++k) err = std::max(err, std::abs(a.data[k] - b.data[k]));
    CHECK(err <= 1e-12);

    // Zero second-product radial and pair weights: the boosted part vanishes.
    Model z = m;
    for (const char* nm : {"radial_w2.W2", "pair_w2.W2", "pair_w2.b2"})
        for (double& x : z.parameters().view(nm)) x = 0.0;
    auto x0 = z.embed_nodes(g);
    auto ef = z.edge_features(g, s.positions);
    IrrepsTensor<double> c(x0.layout, g.edges.size()), n(x0.layout, g.edges.size());
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        std::copy_n(x0.row(static_cast<std::size_t>(g.edges[e].center)).begin(), x0.width(), c.row(e).begin());
        std::copy_n(x0.row(static_cast<std::size_t>(g.edges[e].neighbor)).begin(), x0.width(), n.row(e).begin());
    }
    auto mz = z.edge_booster(ef.sh, ef.rbf, c, n);
    auto mm = m.edge_booster(ef.sh, ef.rbf, c, n);
    double boosted = 0, first = 0;
    for (std::size_t e = 0; e < mz.rows; ++e)
        for (const Irrep& ir : mz.layout.entries())
            for (int mm_ = -ir.l; mm_ <= ir.l; ++mm_)
                for (int ch = 0; ch < ir.mul; ++ch) {
                    bool second = ir.l > 2 || ch >= 4;
                    if (second)
                        boosted = std::max(boosted, std::abs(mz.at(e, ir.l, mm_, ch)));
                    else
                        first = std::max(first, std::abs(mz.at(e, ir.l, mm_, ch) - mm.at(e, ir.l, mm_, ch)));
                }
    CHECK(boosted == 0.0);
    CHECK(first == 0.0);

    Model noeb(tiny_config(false), {}, 2), nosi(tiny_config(true, false), {}, 2);
    CHECK(noeb.energy(s) != m.energy(s));
    CHECK(nosi.energy(s) != m.energy(s));
}

TEST_CASE("zero contraction weights leave only the skip connection; zero readout gives the mean") {
    std::mt19937_64 rng(29);
    Model m(tiny_config(), {-7.5, 0, 1, 0}, 6);
    Structure s = oracle::random_cluster(rng, 4, {1, 6, 8});
    MolecularGraph g = build_graph(s, 5.0, m.config().species);
    for (double& x : m.parameters().view("layer1.contraction")) x = 0;
    auto x0 = m.embed_nodes(g);
    IrrepsTensor<double> A(m.message1_layout(), g.n_nodes());
    for (double& x : A.data) x = std::sin(static_cast<double>(&x - A.data.data()));
    auto x1 = m.many_body_update(1, A, x0, g.species);
    // Only the skip connection survives: x1[l=0] = W x0 + b, higher orders zero.
    auto W = m.parameters().view("layer1.skip.W0");
    auto bvec = m.parameters().view("layer1.skip.b");
    double err = 0;
    for (std::size_t i = 0; i < g.n_nodes(); ++i)
        for (int c = 0; c < 4; ++c) {
            double ref = bvec[static_cast<std::size_t>(c)];
            for (int k = 0; k < 4; ++k) ref += W[static_cast<std::size_t>(c * 4 + k)] * x0.row(i)[static_cast<std::size_t>(k)];
            err = std::max(err, std::abs(ref - x1.at(i, 0, 0, c)));
            for (int l = 1; l <= 2; ++l)
                for (int mm = -l; mm <= l; ++mm) err = std::max(err, std::abs(x1.at(i, l, mm, c)));
        }
    CHECK(err <= 1e-14);

    for (const char* nm : {"readout1.W2", "readout1.b2", "readout2.W2", "readout2.b2"})
        for (double& x : m.parameters().view(nm)) x = 0;
    CHECK(m.energy(s) == -7.5);
}

TEST_CASE("parameter gradients match finite differences") {
    std::mt19937_64 rng(31);
    Model m(tiny_config(true, true, RadialKind::exp_bernstein), {}, 12);
    Structure s = oracle::random_cluster(rng, 4, {1, 6, 8});
    MolecularGraph g = build_graph(s, 5.0, m.config().species);
    std::vector<double> flat;
    for (const auto& x : s.positions) flat.insert(flat.end(), x.begin(), x.end());
    std::vector<double> seed{1.0};
    std::vector<double> grad(m.parameters().size(), 0.0);
    m.evaluate<double>(g, {flat, seed, false, grad.data()});
    std::uniform_int_distribution<std::size_t> pick(0, grad.size() - 1);
    std::vector<std::size_t> idx{m.parameters().find("radial.gamma").offset, m.parameters().find("embedding").offset};
    for (int k = 0; k < 40; ++k) idx.push_back(pick(rng));
    double err = 0, scale = 1e-12;
    for (std::size_t q : idx) {
        Model mp = m, mm = m;
        const double h = 1e-5;
        mp.parameters().values[q] += h;
        mm.parameters().values[q] -= h;
        double fd = (mp.energy(s) - mm.energy(s)) / (2 * h);
        err = std::max(err, std::abs(fd - grad[q]));
        scale = std::max(scale, std::abs(fd));
    }
    CHECK(err / scale < 1e-6);
}

TEST_CASE("dual pass gives the parameter gradient of the force directional derivative") {
    std::mt19937_64 rng(37);
    Model m(tiny_config(), {}, 13);
    Structure s = oracle::random_cluster(rng, 4, {1, 6, 8});
    MolecularGraph g = build_graph(s, 5.0, m.config().species);
    auto u = oracle::random_vec(rng, 3 * s.size());
    std::vector<Dual<double>> pos;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (int k = 0; k < 3; ++k) pos.push_back({s.positions[i][k], u[3 * i + static_cast<std::size_t>(k)]});
    std::vector<Dual<double>> seed{Dual<double>(1.0, 0.0)};
    std::vector<Dual<double>> grad(m.parameters().size(), Dual<double>(0.0));
    m.evaluate<Dual<double>>(g, {pos, seed, false, grad.data()});
    // d/dtheta of u . dE/dx, by finite differences over the analytic forces.
    auto directional = [&](const Model& mod) {
        Prediction p = mod.predict(s);
        double acc = 0;
        for (std::size_t i = 0; i < s.size(); ++i)
            for (int k = 0; k < 3; ++k) acc -= u[3 * i + static_cast<std::size_t>(k)] * p.forces[i][k];
        return acc;
    };
    std::uniform_int_distribution<std::size_t> pick(0, grad.size() - 1);
    double err = 0, scale = 1e-12;
    for (int k = 0; k < 30; ++k) {
        std::size_t q = pick(rng);
        Model mp = m, mm = m;
        const double h = 1e-5;
        mp.parameters().values[q] += h;
        mm.parameters().values[q] -= h;
        double fd = (directional(mp) - directional(mm)) / (2 * h);
        err = std::max(err, std::abs(fd - grad[q].d));
        scale = std::max(scale, std::abs(fd));
    }
    CHECK(err / scale < 1e-6);
}

TEST_CASE("checkpoint round trip is bit exact and validated") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "pace_ckpt_test";
    fs::create_directories(dir);
    Model m(tiny_config(true, true, RadialKind::exp_bernstein), {-4.25, -1.0, 0.5, 6.0}, 21);
    save_checkpoint(dir / "m.ckpt", m, {{"epoch", 3}});
    nlohmann::json extra;
    Model back = load_checkpoint(dir / "m.ckpt", &extra);
    CHECK(extra["epoch"] == 3);
    CHECK(back.config() == m.config());
    CHECK(back.stats() == m.stats());
    CHECK(back.parameters().values == m.parameters().values);
    std::mt19937_64 rng(2);
    Structure s = oracle::random_cluster(rng, 5, {1, 6, 8});
    Prediction a = m.predict(s), b = back.predict(s);
    CHECK(a.energies == b.energies);
    CHECK(a.forces == b.forces);

    ModelConfig other = m.config();
    other.channels = 8;
    try {
        (void)load_checkpoint(dir / "m.ckpt", other);
        FAIL("expected a mismatch");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("channels") != std::string::npos);
    }
    {
        std::fstream f(dir / "m.ckpt", std::ios::in | std::ios::out | std::ios::binary);
        f.write("XACE", 4);
    }
    CHECK_THROWS_AS((void)load_checkpoint(dir / "m.ckpt"), FormatError);
    std::ofstream(dir / "short.ckpt", std::ios::binary).write("PACE\1\0", 6);
    CHECK_THROWS_AS((void)load_checkpoint(dir / "short.ckpt"), FormatError);
    fs::remove_all(dir);
}

TEST_CASE("coupling fault injection breaks equivariance") {
    std::mt19937_64 rng(41);
    Model m(tiny_config(), {}, 5);
    m.perturb_coupling(2, 0, 2, 1, 5.0);
    Structure s = oracle::random_cluster(rng, 5, {1, 6, 8});
    Prediction p0 = m.predict(s);
    Rotation R = Rotation::random(rng);
    Structure r = s;
    for (auto& x : r.positions) x = R.apply(x);
    Prediction p1 = m.predict(r);
    std::vector<Vec3> rf;
    for (const auto& f : p0.forces) rf.push_back(R.apply(f));
    CHECK(max_abs(rf, p1.forces) > 1e-3);
}
