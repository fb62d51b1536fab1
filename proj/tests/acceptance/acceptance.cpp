// Acceptance suite: one PASS/FAIL line per criterion. Arguments select
// criteria by number (default: all).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "pace/coupling.hpp"
#include "pace/dynamics.hpp"
#include "pace/equiv_ops.hpp"
#include "pace/model.hpp"
#include "pace/training.hpp"
#include "pace/verify.hpp"

using namespace pace;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

void note(Outcome& o, bool ok, const std::string& what) {
    o.pass = o.pass && ok;
    if (!o.detail.empty()) o.detail += "; ";
    o.detail += what + (ok ? "" : " [violated]");
}

std::string sci(double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.3g", v);
    return b;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Structure random_molecule(std::mt19937_64& rng, int n, const std::vector<int>& elements) {
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    std::uniform_int_distribution<std::size_t> pick(0, elements.size() - 1);
    Structure s;
    // Every species of the draw appears at least once.
    std::vector<int> sp = elements;
    while (static_cast<int>(sp.size()) < n) sp.push_back(elements[pick(rng)]);
    std::shuffle(sp.begin(), sp.end(), rng);
    const double radius = 0.6 * std::cbrt(static_cast<double>(n)) + 0.6;
    while (static_cast<int>(s.size()) < n) {
        Vec3 p{u(rng) * radius / 2, u(rng) * radius / 2, u(rng) * radius / 2};
        bool ok = true;
        for (const auto& q : s.positions) {
            double d2 = 0;
            for (int k = 0; k < 3; ++k) d2 += (p[k] - q[k]) * (p[k] - q[k]);
            ok = ok && d2 >= 0.85 * 0.85;
        }
        if (!ok) continue;
        s.positions.push_back(p);
        s.species.push_back(sp[s.size()]);
    }
    return s;
}

ModelConfig property_config() {
    ModelConfig c;
    c.channels = 8;
    c.l_max = 3;
    c.l_hidden = 3;
    c.v_max = 3;
    c.mlp_hidden = 16;
    c.radial.n_basis = 6;
    c.species = {1, 6, 7, 8};
    return c;
}

// ---- 1 ------------------------------------------------------------------------------

Outcome equivariance() {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    Model m(property_config(), {-20.0, -4.0, 1.0, 4.0}, 101);
    std::mt19937_64 rng(1);
    double worst_e = 0, worst_f = 0;
    const std::vector<int> all{1, 6, 7, 8};
    for (int mol = 0; mol < 5; ++mol) {
        const int n = 3 + mol * 7 / 4;  // 3, 4, 6, 8, 10
        std::vector<int> el(all.begin(), all.begin() + 2 + mol % 3);
        Structure s = random_molecule(rng, n, el);
        const Prediction base = m.predict(s);
        const double e0 = base.energies[0];
        std::normal_distribution<double> g(0.0, 3.0);
        for (int t = 0; t < 100; ++t) {
            const Rotation R = Rotation::random(rng);
            const Vec3 shift{g(rng), g(rng), g(rng)};
            std::vector<std::size_t> perm(s.size());
            std::iota(perm.begin(), perm.end(), 0);
            std::shuffle(perm.begin(), perm.end(), rng);
            Structure x = s;
            for (std::size_t i = 0; i < s.size(); ++i) {
                const Vec3 r = R.apply(s.positions[perm[i]]);
                x.species[i] = s.species[perm[i]];
                for (int k = 0; k < 3; ++k) x.positions[i][k] = r[k] + shift[k];
            }
            const Prediction p = m.predict(x);
            worst_e = std::max(worst_e, std::abs(p.energies[0] - e0) / (1 + std::abs(e0)));
            for (std::size_t i = 0; i < s.size(); ++i) {
                const Vec3 rf = R.apply(base.forces[perm[i]]);
                for (int k = 0; k < 3; ++k) worst_f = std::max(worst_f, std::abs(p.forces[i][k] - rf[k]));
            }
        }
    }
    const double secs = seconds_since(t0);
    note(o, worst_e <= 1e-9, "max |dE|/(1+|E|) " + sci(worst_e));
    note(o, worst_f <= 1e-9, "max force deviation " + sci(worst_f) + " eV/Å");
    note(o, secs <= 120, "runtime " + sci(secs) + " s");
    return o;
}

// ---- 2 ------------------------------------------------------------------------------

Outcome gradients() {
    Outcome o;
    std::mt19937_64 rng(2);
    double worst_rel = 0, worst_net = 0;
    for (int k = 0; k < 10; ++k) {
        Model m(property_config(), {-20.0, -4.0, 1.0, 4.0}, 200 + static_cast<std::uint64_t>(k));
        Structure s = random_molecule(rng, 3 + k % 6, {1, 6, 7, 8});
        auto fa = m.predict(s).forces;
        auto fd = finite_difference_forces(m, s, 1e-4);
        double err = 0, scale = 0;
        Vec3 net{0, 0, 0};
        for (std::size_t i = 0; i < s.size(); ++i)
            for (int c = 0; c < 3; ++c) {
                err = std::max(err, std::abs(fa[i][c] - fd[i][c]));
                scale = std::max(scale, std::abs(fd[i][c]));
                net[c] += fa[i][c];
            }
        worst_rel = std::max(worst_rel, err / scale);
        worst_net = std::max(worst_net, std::sqrt(net[0] * net[0] + net[1] * net[1] + net[2] * net[2]));
    }
    note(o, worst_rel <= 1e-5, "max relative force error " + sci(worst_rel));
    note(o, worst_net <= 1e-8, "max |sum f| " + sci(worst_net) + " eV/Å");
    return o;
}

// ---- 3 ------------------------------------------------------------------------------

Outcome coupling() {
    Outcome o;
    const double orth = cg_orthogonality_error(4);
    const double eq = cg_equivariance_error(4, 3, 3);
    const double gen = generalized_cg_equivariance_error(3, 3, 3, 4);
    note(o, orth <= 1e-12, "CG orthogonality (l <= 4) " + sci(orth));
    note(o, eq <= 1e-12, "CG equivariance (l <= 4) " + sci(eq));
    note(o, gen <= 1e-12, "generalized CG equivariance (l <= 3, v <= 3) " + sci(gen));
    return o;
}

// ---- 4 ------------------------------------------------------------------------------

Outcome spans() {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    FeatureFn y1y1 = [](std::span<const Vec3> nb) {
        auto y = real_spherical_harmonics(nb[0], 1)[1];
        std::vector<double> out;
        for (double a : y)
            for (double b : y) out.push_back(a * b);
        return out;
    };
    const double r1 = span_residual(y1y1, sh_targets(2, 2), 1, 1000, 11).max_residual;

    ModelConfig c;
    c.channels = 4;
    c.l_max = 3;
    c.l_hidden = 1;
    c.v_max = 1;
    c.mlp_hidden = 16;
    c.species = {1, 6};
    Model m(c, {}, 12);
    // Features: every entry of the boosted message; 10 samples per feature.
    const std::size_t width = m.message1_layout().dim();
    const double r2 =
        span_residual(model_edge_booster(m, 1.4, 0, 1), sh_targets(0, 6), 1, 10 * width + 100, 13).max_residual;

    FeatureFn prod = [](std::span<const Vec3> nb) {
        std::vector<double> s(3, 0.0);
        for (const Vec3& r : nb) {
            auto y = real_spherical_harmonics(r, 1)[1];
            for (std::size_t k = 0; k < 3; ++k) s[k] += y[k];
        }
        std::vector<double> out;
        for (double a : s)
            for (double b : s) out.push_back(a * b);
        return out;
    };
    const double r3 = span_residual(prod, pair_square_target(), 2, 200, 14).max_residual;
    const double secs = seconds_since(t0);
    note(o, r1 <= 1e-10, "Y1 x Y1 -> Y2 residual " + sci(r1));
    note(o, r2 <= 1e-8, "edge booster -> Y^l (l <= 6) residual " + sci(r2));
    note(o, r3 >= 1e-2, "unboosted pair counterexample residual " + sci(r3));
    note(o, secs <= 300, "runtime " + sci(secs) + " s");
    return o;
}

// ---- 5 ------------------------------------------------------------------------------

std::vector<double> couple(const std::vector<double>& x, int a, const std::vector<double>& y, int b, int c) {
    const auto& cg = clebsch_gordan(a, b, c);
    std::vector<double> out(static_cast<std::size_t>(2 * c + 1), 0.0);
    for (int i = 0; i < 2 * a + 1; ++i)
        for (int j = 0; j < 2 * b + 1; ++j)
            for (int k = 0; k < 2 * c + 1; ++k)
                out[static_cast<std::size_t>(k)] +=
                    cg(i, j, k) * x[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(j)];
    return out;
}

Outcome contraction() {
    Outcome o;
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    double worst = 0;
    for (int vmax = 1; vmax <= 3; ++vmax)
        for (int lmax = 0; lmax <= 2; ++lmax) {
            std::vector<int> targets(static_cast<std::size_t>(lmax + 1));
            std::iota(targets.begin(), targets.end(), 0);
            const int K = 2;
            SymmetricContraction sc(1, lmax, targets, vmax, K);
            std::vector<double> w(sc.weight_count());
            for (double& x : w) x = g(rng);
            std::vector<IrrepsTensor<double>> A;
            for (int v = 0; v < vmax; ++v) {
                IrrepsTensor<double> t(sc.in(), 3);
                for (double& x : t.data) x = g(rng);
                A.push_back(std::move(t));
            }
            std::vector<int> species{0, 1, 0};
            auto got = symmetric_contraction(A, species, K, ContractionWeights{w}, sc.table(), sc.out());
            for (std::size_t i = 0; i < species.size(); ++i)
                for (int L : targets) {
                    std::vector<double> ref(static_cast<std::size_t>(2 * L + 1), 0.0);
                    for (int v = 1; v <= vmax; ++v) {
                        const auto& paths = sc.table().at(L, v);
                        for (std::size_t q = 0; q < paths.size(); ++q) {
                            const auto& P = paths[q].path;
                            auto block = [&](int j) {
                                const int l = P.ls[static_cast<std::size_t>(j)];
                                std::vector<double> x(static_cast<std::size_t>(2 * l + 1));
                                for (int mm = -l; mm <= l; ++mm)
                                    x[static_cast<std::size_t>(mm + l)] = A[static_cast<std::size_t>(j)].at(i, l, mm, 0);
                                return x;
                            };
                            auto x = block(0);
                            for (int j = 1; j < v; ++j)
                                x = couple(x, P.couples[static_cast<std::size_t>(j - 1)], block(j),
                                           P.ls[static_cast<std::size_t>(j)], P.couples[static_cast<std::size_t>(j)]);
                            const double wt = w[sc.weight_offset(L, v, species[i], q)];
                            for (std::size_t mm = 0; mm < ref.size(); ++mm) ref[mm] += wt * x[mm];
                        }
                    }
                    for (int M = -L; M <= L; ++M)
                        worst = std::max(worst, std::abs(got.at(i, L, M, 0) - ref[static_cast<std::size_t>(M + L)]));
                }
        }
    note(o, worst <= 1e-11, "max deviation from chained pairwise couplings " + sci(worst));
    return o;
}

// ---- 6 ------------------------------------------------------------------------------

struct Desk {
    std::vector<Structure> data;
    DatasetStats stats;
};

Desk desk_data() {
    AnalyticPotential pot({6, 8});
    std::vector<int> cluster{6, 6, 8, 8, 8};
    Desk d{synthetic_dataset(pot, cluster, 50, 0.1, 1), {}};
    std::vector<MolecularGraph> gs;
    for (const auto& s : d.data) gs.push_back(build_graph(s, 5.0, std::vector<int>{6, 8}));
    d.stats = compute_stats(d.data, gs);
    return d;
}

ModelConfig desk_config(bool eb, bool si) {
    ModelConfig c;
    c.channels = 32;
    c.l_max = 2;
    c.l_hidden = 2;
    c.v_max = 3;
    c.edge_booster = eb;
    c.extra_si = si;
    c.radial.cutoff = 5.0;
    c.species = {6, 8};
    return c;
}

TrainConfig desk_train(int steps) {
    TrainConfig t;
    t.epochs = 100000;
    t.max_steps = steps;
    t.batch_size = 5;
    t.lr = 0.01;
    t.ema_decay = 0.99;
    t.energy_weight = 1000;
    t.force_weight = 1000;
    t.val_interval = 10;
    t.seed = 0;
    return t;
}

double full_loss(const Model& m, std::span<const Structure> data, const TrainConfig& t) {
    std::vector<Prediction> p;
    for (const auto& s : data) p.push_back(m.predict(s));
    return loss(p, data, t.energy_weight, t.force_weight).total();
}

Outcome training() {
    Outcome o;
    Desk d = desk_data();
    const auto t0 = std::chrono::steady_clock::now();
    Model init(desk_config(true, true), d.stats, 0);
    const Metrics m0 = evaluate(init, d.data);
    TrainConfig tc = desk_train(2000);
    TrainResult r = train(init, d.data, {}, tc);
    const Metrics m1 = evaluate(r.model, d.data);
    const double secs = seconds_since(t0);
    note(o, r.steps <= 2000, std::to_string(r.steps) + " steps");
    note(o, m1.e_rmse <= 0.01 * m0.e_rmse,
         "energy RMSE " + sci(m0.e_rmse) + " -> " + sci(m1.e_rmse) + " meV (ratio " + sci(m1.e_rmse / m0.e_rmse) + ")");
    note(o, m1.f_rmse * 10 <= m0.f_rmse,
         "force RMSE " + sci(m0.f_rmse) + " -> " + sci(m1.f_rmse) + " meV/Å (x" + sci(m0.f_rmse / m1.f_rmse) + ")");
    note(o, secs <= 1800, "runtime " + sci(secs) + " s");

    // Ablations at a shorter equal budget.
    const int budget = 300;
    TrainConfig ta = desk_train(budget);
    std::vector<std::pair<std::string, double>> finals;
    for (auto [name, eb, si] : {std::tuple{"full", true, true}, std::tuple{"-EB", false, true},
                                std::tuple{"-SI", true, false}}) {
        Model m(desk_config(eb, si), d.stats, 0);
        TrainResult ra = train(m, d.data, {}, ta);
        finals.emplace_back(name, full_loss(ra.last, d.data, ta));
    }
    bool distinct = true;
    std::string table;
    for (std::size_t a = 0; a < finals.size(); ++a) {
        table += (a ? ", " : "") + finals[a].first + " " + sci(finals[a].second);
        for (std::size_t b = a + 1; b < finals.size(); ++b) distinct = distinct && finals[a].second != finals[b].second;
    }
    note(o, distinct, "final losses after " + std::to_string(budget) + " steps: " + table);
    return o;
}

// ---- 7 ------------------------------------------------------------------------------

Outcome md() {
    Outcome o;
    AnalyticPotential pot({6, 8});
    std::vector<int> cluster{6, 6, 8, 8, 8};
    auto data = synthetic_dataset(pot, cluster, 50, 0.1, 1);
    double worst = 0;
    for (std::size_t k = 0; k < 3; ++k) {
        MDConfig mc;
        mc.steps = 1000;
        mc.stride = 1;
        mc.langevin = {1.0, 0.0, 0.0};
        Trajectory t = run_md(data[k], pot.force_fn(cluster), mc);
        const double e0 = t.frames.front().total();
        for (const auto& f : t.frames) worst = std::max(worst, std::abs(f.total() - e0) / std::abs(e0));
    }
    note(o, worst <= 1e-4, "max relative energy drift over 1000 x 1 fs " + sci(worst));

    const double dist = 1.4237;
    std::vector<std::vector<Vec3>> frames(10, std::vector<Vec3>{{0.3, -0.2, 0.1}, {0.3 + dist, -0.2, 0.1}});
    Rdf g = rdf(frames, 0.05, 3.0);
    const std::size_t want = static_cast<std::size_t>(dist / 0.05);  // 28
    double outside = 0;
    for (std::size_t b = 0; b < g.counts.size(); ++b)
        if (b != want) outside += g.counts[b];
    note(o, g.counts.at(want) == 1.0 && outside == 0.0,
         "dimer at " + sci(dist) + " Å fills bin " + std::to_string(want) + " only");
    return o;
}

// ---- 8 ------------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome determinism() {
    Outcome o;
    const fs::path dir = fs::temp_directory_path() / "pace_acceptance";
    fs::create_directories(dir);
    Desk d = desk_data();
    ModelConfig c = desk_config(true, true);
    c.channels = 8;
    std::vector<std::string> logs;
    std::vector<std::vector<double>> losses;
    for (int run = 0; run < 2; ++run) {
        TrainConfig t = desk_train(40);
        t.val_interval = 1;
        t.seed = 17;
        t.metrics_path = dir / ("run" + std::to_string(run) + ".csv");
        t.checkpoint_path = dir / "best.ckpt";
        TrainResult r = train(Model(c, d.stats, 17), d.data, {}, t);
        logs.push_back(slurp(t.metrics_path));
        losses.push_back(r.step_losses);
    }
    note(o, logs[0] == logs[1] && !logs[0].empty() && losses[0] == losses[1],
         "two seeded runs give identical logs (" + std::to_string(losses[0].size()) + " steps)");

    Model m = load_checkpoint(dir / "best.ckpt", c);
    save_checkpoint(dir / "again.ckpt", m);
    Model back = load_checkpoint(dir / "again.ckpt");
    bool same = true;
    for (const auto& s : d.data) {
        const Prediction a = m.predict(s), b = back.predict(s);
        same = same && a.energies == b.energies && a.forces == b.forces;
    }
    note(o, same && back.parameters().values == m.parameters().values,
         "checkpoint round trip reproduces all 50 predictions bit for bit");
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"equivariance", equivariance}, {"gradient exactness", gradients}, {"coupling correctness", coupling},
        {"span oracles", spans},        {"contraction oracle", contraction}, {"desk-scale training", training},
        {"MD integrity", md},           {"determinism and persistence", determinism}};
    std::set<int> chosen;
    for (int i = 1; i < argc; ++i) chosen.insert(std::atoi(argv[i]));
    int failed = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const int id = static_cast<int>(k) + 1;
        if (!chosen.empty() && !chosen.count(id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[k].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("%s %d %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", id, criteria[k].first.c_str(),
                    seconds_since(t0), o.detail.c_str());
        std::fflush(stdout);
        failed += o.pass ? 0 : 1;
    }
    return failed ? 1 : 0;
}
