#include "pace/verify.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "pace/coupling.hpp"
#include "pace/error.hpp"

namespace pace {

std::vector<Vec3> finite_difference_forces(const Model& model, const Structure& s, double h) {
    if (!(h > 0)) throw InputError("finite difference step must be positive");
    std::vector<Vec3> f(s.size(), Vec3{0, 0, 0});
    Structure p = s;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (int k = 0; k < 3; ++k) {
            p.positions[i][k] = s.positions[i][k] + h;
            const double ep = model.energy(p);
            p.positions[i][k] = s.positions[i][k] - h;
            const double em = model.energy(p);
            p.positions[i][k] = s.positions[i][k];
            f[i][k] = -(ep - em) / (2 * h);
        }
    return f;
}

EquivarianceReport equivariance_report(const Model& model, const Structure& s, int n_transforms,
                                       std::mt19937_64& rng) {
    EquivarianceReport rep;
    const Prediction base = model.predict(s);
    const double e0 = base.energies.at(0);
    std::normal_distribution<double> gauss(0.0, 2.0);
    for (int t = 0; t < n_transforms; ++t) {
        const Rotation R = Rotation::random(rng);
        const Vec3 shift{gauss(rng), gauss(rng), gauss(rng)};
        std::vector<std::size_t> perm(s.size());
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);

        Structure rot = s, tr = s, pm = s;
        for (std::size_t i = 0; i < s.size(); ++i) {
            rot.positions[i] = R.apply(s.positions[i]);
            for (int k = 0; k < 3; ++k) tr.positions[i][k] += shift[k];
            pm.species[i] = s.species[perm[i]];
            pm.positions[i] = s.positions[perm[i]];
        }
        const Prediction pr = model.predict(rot), pt = model.predict(tr), pp = model.predict(pm);
        rep.energy_rotation = std::max(rep.energy_rotation, std::abs(pr.energies[0] - e0));
        rep.energy_translation = std::max(rep.energy_translation, std::abs(pt.energies[0] - e0));
        rep.energy_permutation = std::max(rep.energy_permutation, std::abs(pp.energies[0] - e0));
        for (std::size_t i = 0; i < s.size(); ++i) {
            const Vec3 rf = R.apply(base.forces[i]);
            for (int k = 0; k < 3; ++k) {
                double d = std::max({std::abs(pr.forces[i][k] - rf[k]), std::abs(pt.forces[i][k] - base.forces[i][k]),
                                     std::abs(pp.forces[i][k] - base.forces[perm[i]][k])});
                rep.force_equivariance = std::max(rep.force_equivariance, d);
            }
        }
    }
    return rep;
}

SpanResult span_residual(const Matrix& features, const Matrix& targets, double regularization) {
    if (features.rows != targets.rows) throw InputError("features and targets differ in sample count");
    if (features.cols == 0) throw InputError("no feature columns");
    if (features.rows < 10 * features.cols)
        throw InputError("span check needs at least 10 samples per feature (" + std::to_string(features.rows) +
                         " samples, " + std::to_string(features.cols) + " features)");
    if (regularization < 0) throw InputError("regularization must be nonnegative");
    const Eigen::Index n = static_cast<Eigen::Index>(features.rows), k = static_cast<Eigen::Index>(features.cols),
                       extra = regularization > 0 ? k : 0;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n + extra, k);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < k; ++j) A(i, j) = features(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
    for (Eigen::Index j = 0; j < extra; ++j) A(n + j, j) = std::sqrt(regularization);

    // Column scaling keeps the pivoting meaningful when features differ in size.
    Eigen::VectorXd scale = A.colwise().norm().transpose();
    for (Eigen::Index j = 0; j < k; ++j)
        if (scale(j) > 0) A.col(j) /= scale(j);

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    SpanResult out;
    out.rank = static_cast<int>(qr.rank());
    const auto& R = qr.matrixR();
    if (out.rank > 0)
        out.condition = std::abs(R(0, 0)) / std::abs(R(out.rank - 1, out.rank - 1));
    if (out.rank < k) {
        std::ostringstream os;
        os << "rank-deficient features: rank " << out.rank << " of " << k << ", condition " << out.condition;
        out.warning = os.str();
    }
    for (std::size_t t = 0; t < targets.cols; ++t) {
        Eigen::VectorXd b = Eigen::VectorXd::Zero(n + extra);
        for (Eigen::Index i = 0; i < n; ++i) b(i) = targets(static_cast<std::size_t>(i), t);
        const double bn = b.head(n).norm();
        double res = 0;
        if (bn > 0) {
            Eigen::VectorXd c = qr.solve(b);
            res = (b.head(n) - A.topRows(n) * c).norm() / bn;
        }
        out.residuals.push_back(res);
        out.max_residual = std::max(out.max_residual, res);
    }
    return out;
}

namespace {

Vec3 unit(const Vec3& v) {
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (!(n > 0)) throw InputError("zero neighbor vector");
    return {v[0] / n, v[1] / n, v[2] / n};
}

std::vector<double> sh_flat(const Vec3& r, int l_max) {
    const Vec3 u = unit(r);
    std::vector<double> y(sh_dim(l_max));
    spherical_harmonics(u[0], u[1], u[2], l_max, y.data());
    return y;
}

std::vector<double> sh_sum(std::span<const Vec3> nb, int l_max) {
    std::vector<double> s(sh_dim(l_max), 0.0);
    for (const Vec3& r : nb) {
        auto y = sh_flat(r, l_max);
        for (std::size_t i = 0; i < s.size(); ++i) s[i] += y[i];
    }
    return s;
}

Vec3 random_direction(std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    for (;;) {
        Vec3 v{g(rng), g(rng), g(rng)};
        const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        if (n > 1e-6) return {v[0] / n, v[1] / n, v[2] / n};
    }
}

Matrix sample(const FeatureFn& f, const std::vector<std::vector<Vec3>>& envs) {
    Matrix m;
    for (std::size_t i = 0; i < envs.size(); ++i) {
        auto row = f(envs[i]);
        if (i == 0) m = Matrix(envs.size(), row.size());
        if (row.size() != m.cols) throw InputError("feature function returned rows of varying size");
        std::copy(row.begin(), row.end(), m.data.begin() + static_cast<std::ptrdiff_t>(i * m.cols));
    }
    return m;
}

std::vector<std::vector<Vec3>> environments(std::size_t n_neighbors, std::size_t n_samples, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::vector<Vec3>> envs(n_samples);
    for (auto& e : envs)
        for (std::size_t j = 0; j < n_neighbors; ++j) e.push_back(random_direction(rng));
    return envs;
}

}  // namespace

SpanResult span_residual(const FeatureFn& features, const FeatureFn& targets, std::size_t n_neighbors,
                         std::size_t n_samples, std::uint64_t seed, double regularization) {
    auto envs = environments(n_neighbors, n_samples, seed);
    return span_residual(sample(features, envs), sample(targets, envs), regularization);
}

FeatureFn sh_aggregation(int l_max) {
    return [l_max](std::span<const Vec3> nb) { return sh_sum(nb, l_max); };
}

FeatureFn boosted_aggregation(int l_max) {
    return [l_max](std::span<const Vec3> nb) {
        const std::size_t d = sh_dim(l_max);
        std::vector<double> out = sh_sum(nb, l_max);
        std::vector<double> prod(d * (d + 1) / 2, 0.0);
        for (const Vec3& r : nb) {
            auto y = sh_flat(r, l_max);
            std::size_t q = 0;
            for (std::size_t a = 0; a < d; ++a)
                for (std::size_t b = a; b < d; ++b) prod[q++] += y[a] * y[b];
        }
        out.insert(out.end(), prod.begin(), prod.end());
        return out;
    };
}

FeatureFn product_of_aggregates(int l_max) {
    return [l_max](std::span<const Vec3> nb) {
        std::vector<double> s = sh_sum(nb, l_max);
        std::vector<double> out = s;
        for (std::size_t a = 0; a < s.size(); ++a)
            for (std::size_t b = a; b < s.size(); ++b) out.push_back(s[a] * s[b]);
        return out;
    };
}

FeatureFn model_edge_booster(const Model& model, double r, int species_a, int species_b) {
    const auto& sp = model.config().species;
    const int K = static_cast<int>(sp.size());
    if (species_a < 0 || species_a >= K || species_b < 0 || species_b >= K)
        throw InputError("species index outside the model alphabet");
    if (!(r > 0) || r > model.config().cutoff()) throw InputError("edge length must lie in (0, cutoff]");
    return [&model, r, za = sp[static_cast<std::size_t>(species_a)], zb = sp[static_cast<std::size_t>(species_b)]](
               std::span<const Vec3> nb) {
        if (nb.empty()) throw InputError("edge booster features need one neighbor");
        const Vec3 u = unit(nb[0]);
        Structure s{{za, zb}, {{0, 0, 0}, {r * u[0], r * u[1], r * u[2]}}, {}, {}};
        MolecularGraph g = build_graph(s, model.config().cutoff(), model.config().species);
        auto ef = model.edge_features(g, s.positions);
        auto x0 = model.embed_nodes(g);
        const std::size_t nbasis = ef.rbf.size() / g.edges.size();
        IrrepsTensor<double> sh(ef.sh.layout, 1), xc(x0.layout, 1), xn(x0.layout, 1);
        // Edge 0 is 0 -> 1.
        std::copy_n(ef.sh.row(0).begin(), sh.width(), sh.row(0).begin());
        std::copy_n(x0.row(0).begin(), xc.width(), xc.row(0).begin());
        std::copy_n(x0.row(1).begin(), xn.width(), xn.row(0).begin());
        std::vector<double> rbf(ef.rbf.begin(), ef.rbf.begin() + static_cast<std::ptrdiff_t>(nbasis));
        auto m = model.edge_booster(sh, rbf, xc, xn);
        return m.data;
    };
}

FeatureFn sh_targets(int l_lo, int l_hi) {
    if (l_lo < 0 || l_hi < l_lo || l_hi > kMaxL) throw InputError("target orders out of range");
    return [l_lo, l_hi](std::span<const Vec3> nb) {
        if (nb.empty()) throw InputError("targets need one neighbor");
        auto y = sh_flat(nb[0], l_hi);
        return std::vector<double>(y.begin() + l_lo * l_lo, y.end());
    };
}

FeatureFn pair_square_target() {
    return [](std::span<const Vec3> nb) {
        double s = 0;
        for (const Vec3& r : nb) {
            const Vec3 u = unit(r);
            s += u[1] * u[1];
        }
        return std::vector<double>{s};
    };
}

std::vector<MonomialCheck> dspanning_degree_check(const FeatureFn& features, int D, std::size_t neighbor_count,
                                                  std::uint64_t seed, double tol) {
    if (D < 0) throw InputError("degree must be nonnegative");
    if (neighbor_count == 0) throw InputError("need at least one neighbor");
    std::vector<std::array<int, 3>> monos;
    for (int t = 0; t <= D; ++t)
        for (int a = t; a >= 0; --a)
            for (int b = t - a; b >= 0; --b) monos.push_back({a, b, t - a - b});
    // Probe the feature width to size the sample set.
    std::mt19937_64 probe_rng(seed);
    std::vector<Vec3> probe(neighbor_count);
    for (auto& v : probe) v = random_direction(probe_rng);
    const std::size_t width = features(probe).size();
    const std::size_t n_samples = std::max<std::size_t>(10 * width + 10, 200);
    auto envs = environments(neighbor_count, n_samples, seed + 1);
    Matrix F = sample(features, envs);
    Matrix T(n_samples, monos.size());
    for (std::size_t s = 0; s < n_samples; ++s)
        for (std::size_t q = 0; q < monos.size(); ++q) {
            double acc = 0;
            for (const Vec3& u : envs[s])
                acc += std::pow(u[0], monos[q][0]) * std::pow(u[1], monos[q][1]) * std::pow(u[2], monos[q][2]);
            T(s, q) = acc;
        }
    SpanResult r = span_residual(F, T);
    std::vector<MonomialCheck> out;
    for (std::size_t q = 0; q < monos.size(); ++q) out.push_back({monos[q], r.residuals[q], r.residuals[q] <= tol});
    return out;
}

// ---- couplings ------------------------------------------------------------------

double cg_orthogonality_error(int l_max) {
    if (l_max < 0 || 2 * l_max > 2 * kMaxL) throw InputError("l_max out of range");
    double worst = 0;
    for (int l1 = 0; l1 <= l_max; ++l1)
        for (int l2 = 0; l2 <= l_max; ++l2)
            for (int a = std::abs(l1 - l2); a <= l1 + l2; ++a)
                for (int b = std::abs(l1 - l2); b <= l1 + l2; ++b) {
                    const CGTensor& A = clebsch_gordan(l1, l2, a);
                    const CGTensor& B = clebsch_gordan(l1, l2, b);
                    for (int ma = 0; ma < 2 * a + 1; ++ma)
                        for (int mb = 0; mb < 2 * b + 1; ++mb) {
                            double s = 0;
                            for (int m1 = 0; m1 < 2 * l1 + 1; ++m1)
                                for (int m2 = 0; m2 < 2 * l2 + 1; ++m2) s += A(m1, m2, ma) * B(m1, m2, mb);
                            const double want = (a == b && ma == mb) ? 1.0 : 0.0;
                            worst = std::max(worst, std::abs(s - want));
                        }
                }
    return worst;
}

namespace {

std::vector<double> apply_d(const std::vector<double>& D, const std::vector<double>& x) {
    const std::size_t d = x.size();
    std::vector<double> y(d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) y[i] += D[i * d + j] * x[j];
    return y;
}

std::vector<double> gaussian(std::mt19937_64& rng, int l) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> v(static_cast<std::size_t>(2 * l + 1));
    for (double& x : v) x = g(rng);
    return v;
}

/// Contracts a dense block over (m_1..m_v, M) with one vector per factor.
std::vector<double> contract_block(const PathBlock& pb, const std::vector<std::vector<double>>& u) {
    const auto& ls = pb.path.ls;
    const int L = pb.path.target();
    const std::size_t dL = static_cast<std::size_t>(2 * L + 1);
    std::vector<double> out(dL, 0.0);
    const std::size_t prefix = pb.block.size() / dL;
    for (std::size_t p = 0; p < prefix; ++p) {
        double prod = 1;
        std::size_t rest = p;
        for (std::size_t k = ls.size(); k-- > 0;) {
            const std::size_t d = static_cast<std::size_t>(2 * ls[k] + 1);
            prod *= u[k][rest % d];
            rest /= d;
        }
        for (std::size_t M = 0; M < dL; ++M) out[M] += pb.block[p * dL + M] * prod;
    }
    return out;
}

}  // namespace

double cg_equivariance_error(int l_max, int n_rotations, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    double worst = 0;
    for (int t = 0; t < n_rotations; ++t) {
        const Rotation R = Rotation::random(rng);
        for (int l1 = 0; l1 <= l_max; ++l1)
            for (int l2 = 0; l2 <= l_max; ++l2)
                for (int l3 = std::abs(l1 - l2); l3 <= std::min(l1 + l2, 2 * kMaxL); ++l3) {
                    PathBlock pb{{{l1, l2}, {l1, l3}}, {}};
                    const CGTensor& cg = clebsch_gordan(l1, l2, l3);
                    pb.block = cg.values();
                    auto u = gaussian(rng, l1), w = gaussian(rng, l2);
                    if (l3 > kMaxL) continue;
                    auto lhs = contract_block(pb, {apply_d(wigner_d_matrix(l1, R), u), apply_d(wigner_d_matrix(l2, R), w)});
                    auto rhs = apply_d(wigner_d_matrix(l3, R), contract_block(pb, {u, w}));
                    for (std::size_t k = 0; k < lhs.size(); ++k) worst = std::max(worst, std::abs(lhs[k] - rhs[k]));
                }
    }
    return worst;
}

double generalized_cg_equivariance_error(int l_max, int v_max, int n_rotations, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<int> targets;
    for (int L = 0; L <= l_max; ++L) targets.push_back(L);
    GeneralizedCGTable table(l_max, targets, v_max);
    double worst = 0;
    for (int t = 0; t < n_rotations; ++t) {
        const Rotation R = Rotation::random(rng);
        std::vector<std::vector<double>> D;
        for (int l = 0; l <= l_max; ++l) D.push_back(wigner_d_matrix(l, R));
        for (int L : targets)
            for (int v = 1; v <= v_max; ++v)
                for (const PathBlock& pb : table.at(L, v)) {
                    std::vector<std::vector<double>> u, ru;
                    for (int l : pb.path.ls) {
                        u.push_back(gaussian(rng, l));
                        ru.push_back(apply_d(D[static_cast<std::size_t>(l)], u.back()));
                    }
                    auto lhs = contract_block(pb, ru);
                    auto rhs = apply_d(D[static_cast<std::size_t>(L)], contract_block(pb, u));
                    for (std::size_t k = 0; k < lhs.size(); ++k) worst = std::max(worst, std::abs(lhs[k] - rhs[k]));
                }
    }
    return worst;
}

}  // namespace pace
