#include "pace/dynamics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "pace/dual.hpp"
#include "pace/error.hpp"

namespace pace {

// ---- analytic potential -----------------------------------------------------------

AnalyticPotential::AnalyticPotential(std::vector<int> species) : species_(std::move(species)), c9_(0.3) {
    const int K = static_cast<int>(species_.size());
    if (K == 0) throw ConfigError("analytic potential needs species");
    for (int a = 0; a < K; ++a)
        for (int b = a; b < K; ++b) pairs_.push_back({0.6 + 0.2 * (a + b), 1.0, 1.1 + 0.15 * (a + b)});
}

AnalyticPotential::AnalyticPotential(std::vector<int> species, std::vector<Pair> pairs, double c9)
    : species_(std::move(species)), pairs_(std::move(pairs)), c9_(c9) {
    const std::size_t K = species_.size();
    if (pairs_.size() != K * (K + 1) / 2) throw ConfigError("analytic potential needs one parameter set per pair");
}

int AnalyticPotential::index(int z) const {
    auto it = std::find(species_.begin(), species_.end(), z);
    if (it == species_.end()) throw DataError("species " + std::to_string(z) + " unknown to the potential");
    return static_cast<int>(it - species_.begin());
}

const AnalyticPotential::Pair& AnalyticPotential::pair(int za, int zb) const {
    int a = index(za), b = index(zb);
    if (a > b) std::swap(a, b);
    const int K = static_cast<int>(species_.size());
    return pairs_[static_cast<std::size_t>(a * K - a * (a - 1) / 2 + (b - a))];
}

template <class T>
T AnalyticPotential::energy_impl(std::span<const int> z, std::span<const T> x) const {
    using std::exp;
    using std::sqrt;
    const std::size_t n = z.size();
    std::vector<T> r(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            T dx = x[3 * j] - x[3 * i], dy = x[3 * j + 1] - x[3 * i + 1], dz = x[3 * j + 2] - x[3 * i + 2];
            r[i * n + j] = r[j * n + i] = sqrt(dx * dx + dy * dy + dz * dz);
        }
    T e(0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const Pair& p = pair(z[i], z[j]);
            T q = T(1.0) - exp((r[i * n + j] - p.r0) * (-p.alpha));
            e += (q * q - 1.0) * p.depth;
            T r2 = r[i * n + j] * r[i * n + j];
            T r6 = r2 * r2 * r2;
            e += T(kCore) / (r6 * r6);
        }
    // cos at vertex i of triangle (i, j, k) from the law of cosines.
    auto cosv = [](const T& a, const T& b, const T& opp) { return (a * a + b * b - opp * opp) / (a * b * 2.0); };
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            for (std::size_t k = j + 1; k < n; ++k) {
                const T &rij = r[i * n + j], &rik = r[i * n + k], &rjk = r[j * n + k];
                T ci = cosv(rij, rik, rjk), cj = cosv(rij, rjk, rik), ck = cosv(rik, rjk, rij);
                T prod = rij * rik * rjk;
                e += (T(1.0) + ci * cj * ck * 3.0) / (prod * prod * prod) * c9_;
            }
    return e;
}

double AnalyticPotential::energy(const Structure& s) const {
    std::vector<double> x;
    for (const auto& p : s.positions) x.insert(x.end(), p.begin(), p.end());
    return energy_impl<double>(s.species, x);
}

double AnalyticPotential::energy_forces(std::span<const int> z, std::span<const Vec3> positions,
                                        std::vector<Vec3>& forces) const {
    const std::size_t n = positions.size();
    if (z.size() != n) throw InputError("species and positions differ in length");
    std::vector<Dual<double>> x(3 * n);
    for (std::size_t i = 0; i < n; ++i)
        for (int k = 0; k < 3; ++k) x[3 * i + static_cast<std::size_t>(k)] = Dual<double>(positions[i][k]);
    forces.assign(n, Vec3{});
    double e = 0;
    for (std::size_t q = 0; q < 3 * n; ++q) {
        x[q].d = 1.0;
        Dual<double> v = energy_impl<Dual<double>>(z, x);
        x[q].d = 0.0;
        e = v.v;
        forces[q / 3][q % 3] = -v.d;
    }
    if (n == 0) e = 0;
    return e;
}

void AnalyticPotential::label(Structure& s) const {
    std::vector<Vec3> f;
    s.energy = energy_forces(s.species, s.positions, f);
    s.forces = f;
}

ForceFn AnalyticPotential::force_fn(std::vector<int> z) const {
    return [this, z = std::move(z)](std::span<const Vec3> pos, std::vector<Vec3>& f) {
        return energy_forces(z, pos, f);
    };
}

std::vector<Structure> synthetic_dataset(const AnalyticPotential& pot, std::span<const int> cluster_species, int n,
                                         double sigma, std::uint64_t seed) {
    if (n < 0 || sigma < 0) throw InputError("dataset size and noise must be nonnegative");
    std::mt19937_64 rng(seed);
    Structure ref;
    ref.species.assign(cluster_species.begin(), cluster_species.end());
    const std::size_t n_atoms = ref.species.size();
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    auto connected = [&](const std::vector<Vec3>& x) {
        for (std::size_t i = 0; i < x.size(); ++i) {
            bool near = x.size() == 1;
            for (std::size_t j = 0; j < x.size(); ++j) {
                if (i == j) continue;
                double d2 = 0;
                for (int k = 0; k < 3; ++k) d2 += (x[i][k] - x[j][k]) * (x[i][k] - x[j][k]);
                near = near || d2 < 2.2 * 2.2;
            }
            if (!near) return false;
        }
        return true;
    };
    for (int attempt = 0;; ++attempt) {
        if (attempt == 100) throw DataError("could not build a bound reference cluster");
        // Random start with separations >= 1 Å, then damped steepest descent.
        ref.positions.clear();
        const double radius = 0.7 * std::cbrt(static_cast<double>(n_atoms)) + 0.3;
        while (ref.positions.size() < n_atoms) {
            Vec3 v{radius * u(rng), radius * u(rng), radius * u(rng)};
            bool ok = true;
            for (const auto& q : ref.positions) {
                double d2 = 0;
                for (int k = 0; k < 3; ++k) d2 += (v[k] - q[k]) * (v[k] - q[k]);
                ok = ok && d2 >= 1.0;
            }
            if (ok) ref.positions.push_back(v);
        }
        std::vector<Vec3> f;
        double e = pot.energy_forces(ref.species, ref.positions, f), step = 0.01;
        for (int it = 0; it < 3000 && step > 1e-9; ++it) {
            std::vector<Vec3> trial = ref.positions;
            for (std::size_t i = 0; i < trial.size(); ++i)
                for (int k = 0; k < 3; ++k) trial[i][k] += step * f[i][k];
            std::vector<Vec3> ft;
            double et = pot.energy_forces(ref.species, trial, ft);
            if (et < e) {
                ref.positions = std::move(trial);
                f = std::move(ft);
                e = et;
                step *= 1.2;
            } else {
                step *= 0.5;
            }
        }
        if (connected(ref.positions)) break;
    }
    std::vector<Structure> out;
    std::normal_distribution<double> noise(0.0, sigma);
    for (int c = 0; c < n; ++c) {
        Structure s;
        s.species = ref.species;
        for (const auto& p : ref.positions) s.positions.push_back({p[0] + noise(rng), p[1] + noise(rng), p[2] + noise(rng)});
        pot.label(s);
        out.push_back(std::move(s));
    }
    return out;
}

// ---- Langevin dynamics -------------------------------------------------------------

double MDState::kinetic() const {
    double k = 0;
    for (std::size_t i = 0; i < velocities.size(); ++i)
        for (int c = 0; c < 3; ++c) k += 0.5 * masses[i] * velocities[i][c] * velocities[i][c];
    return k / kAccel;
}

void LangevinParams::validate() const {
    if (!(dt > 0)) throw InputError("time step must be positive");
    if (!(friction >= 0)) throw InputError("friction must be nonnegative");
    if (!(temperature >= 0)) throw InputError("temperature must be nonnegative");
}

namespace {

void evaluate_forces(MDState& s, const ForceFn& force) {
    s.potential = force(s.positions, s.forces);
    if (s.forces.size() != s.positions.size()) throw InputError("force callback returned the wrong size");
    bool ok = std::isfinite(s.potential);
    for (const auto& f : s.forces) ok = ok && std::isfinite(f[0]) && std::isfinite(f[1]) && std::isfinite(f[2]);
    if (!ok) throw DivergenceError("non-finite forces at t = " + std::to_string(s.time) + " fs");
}

}  // namespace

MDState make_state(const Structure& s, const ForceFn& force) {
    MDState st;
    st.positions = s.positions;
    st.velocities.assign(s.size(), Vec3{});
    for (int z : s.species) st.masses.push_back(atomic_mass(z));
    evaluate_forces(st, force);
    return st;
}

void langevin_step(MDState& s, const ForceFn& force, const LangevinParams& p, std::mt19937_64& rng) {
    p.validate();
    const std::size_t n = s.positions.size();
    const double h = 0.5 * p.dt;
    auto kick = [&] {
        for (std::size_t i = 0; i < n; ++i)
            for (int c = 0; c < 3; ++c) s.velocities[i][c] += h * kAccel * s.forces[i][c] / s.masses[i];
    };
    auto drift = [&] {
        for (std::size_t i = 0; i < n; ++i)
            for (int c = 0; c < 3; ++c) s.positions[i][c] += h * s.velocities[i][c];
    };
    kick();
    drift();
    if (p.friction > 0 || p.temperature > 0) {
        const double c1 = std::exp(-p.friction * p.dt), c2 = std::sqrt(std::max(0.0, 1 - c1 * c1));
        std::normal_distribution<double> g(0.0, 1.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double sd = std::sqrt(kBoltzmann * p.temperature * kAccel / s.masses[i]);
            for (int c = 0; c < 3; ++c) s.velocities[i][c] = c1 * s.velocities[i][c] + c2 * sd * g(rng);
        }
    }
    drift();
    evaluate_forces(s, force);
    kick();
    s.time += p.dt;
}

void initialize_velocities(MDState& s, double temperature, std::mt19937_64& rng) {
    if (temperature < 0) throw InputError("temperature must be nonnegative");
    std::normal_distribution<double> g(0.0, 1.0);
    const std::size_t n = s.positions.size();
    s.velocities.assign(n, Vec3{});
    if (temperature == 0 || n == 0) return;
    Vec3 p{};
    double M = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double sd = std::sqrt(kBoltzmann * temperature * kAccel / s.masses[i]);
        for (int c = 0; c < 3; ++c) {
            s.velocities[i][c] = sd * g(rng);
            p[c] += s.masses[i] * s.velocities[i][c];
        }
        M += s.masses[i];
    }
    for (auto& v : s.velocities)
        for (int c = 0; c < 3; ++c) v[c] -= p[c] / M;
}

Trajectory run_md(const Structure& start, const ForceFn& force, const MDConfig& cfg) {
    cfg.langevin.validate();
    if (cfg.steps < 0 || cfg.stride < 1) throw InputError("steps must be nonnegative and stride positive");
    std::mt19937_64 rng(cfg.seed);
    Trajectory t;
    t.species = start.species;
    MDState s = make_state(start, force);
    const double t0 = cfg.init_temperature >= 0 ? cfg.init_temperature : cfg.langevin.temperature;
    initialize_velocities(s, t0, rng);
    t.frames.push_back(s);
    for (int k = 1; k <= cfg.steps; ++k) {
        langevin_step(s, force, cfg.langevin, rng);
        if (k % cfg.stride == 0) t.frames.push_back(s);
    }
    return t;
}

void write_trajectory(const std::filesystem::path& path, const Trajectory& traj) {
    std::vector<Structure> frames;
    for (const auto& f : traj.frames) {
        Structure s;
        s.species = traj.species;
        s.positions = f.positions;
        s.energy = f.total();
        s.forces = f.forces;
        frames.push_back(std::move(s));
    }
    write_extended_xyz(path, frames);
}

std::vector<std::vector<Vec3>> trajectory_positions(std::span<const Structure> frames) {
    std::vector<std::vector<Vec3>> out;
    for (const auto& s : frames) out.push_back(s.positions);
    return out;
}

// ---- radial distribution -------------------------------------------------------------

std::size_t rdf_bin(double r, double dr) {
    auto b = static_cast<std::size_t>(std::floor(r / dr));
    if (static_cast<double>(b + 1) * dr <= r) ++b;
    if (b > 0 && static_cast<double>(b) * dr > r) --b;
    return b;
}

Rdf rdf(std::span<const std::vector<Vec3>> frames, double dr, double r_max) {
    if (!(dr > 0) || !(r_max > 0)) throw InputError("rdf needs positive dr and r_max");
    Rdf out;
    out.dr = dr;
    out.r_max = r_max;
    out.n_frames = frames.size();
    const std::size_t nb = rdf_bin(r_max, dr) + ((static_cast<double>(rdf_bin(r_max, dr)) * dr < r_max) ? 1 : 0);
    out.counts.assign(nb, 0.0);
    out.g.assign(nb, 0.0);
    if (frames.empty()) return out;
    const std::size_t n = frames[0].size();
    for (const auto& f : frames) {
        if (f.size() != n) throw InputError("rdf frames differ in atom count");
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                double d2 = 0;
                for (int k = 0; k < 3; ++k) d2 += (f[j][k] - f[i][k]) * (f[j][k] - f[i][k]);
                double r = std::sqrt(d2);
                if (!(r < r_max)) continue;
                std::size_t b = rdf_bin(r, dr);
                if (b < nb) out.counts[b] += 1.0;
            }
    }
    const double nf = static_cast<double>(frames.size()), pairs = 0.5 * static_cast<double>(n * (n - 1));
    const double vsphere = 4.0 / 3.0 * std::numbers::pi * r_max * r_max * r_max;
    for (std::size_t b = 0; b < nb; ++b) {
        out.counts[b] /= nf;
        const double lo = static_cast<double>(b) * dr, hi = std::min(lo + dr, r_max);
        const double vshell = 4.0 / 3.0 * std::numbers::pi * (hi * hi * hi - lo * lo * lo);
        out.g[b] = pairs > 0 ? out.counts[b] / (pairs * vshell / vsphere) : 0.0;
    }
    return out;
}

std::string Rdf::header() const {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "# g(r) = mean pair count in [r_lo, r_lo + dr) / (N(N-1)/2 * V_shell / V_sphere(r_max)); "
                  "dr = %g A, r_max = %g A, frames = %zu\n",
                  dr, r_max, n_frames);
    return buf;
}

std::string Rdf::csv() const {
    std::string s = header() + "r_lo,r_mid,g,count\n";
    char buf[128];
    for (std::size_t b = 0; b < g.size(); ++b) {
        const double lo = static_cast<double>(b) * dr;
        std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.10g,%.10g\n", lo, lo + 0.5 * dr, g[b], counts[b]);
        s += buf;
    }
    return s;
}

}  // namespace pace
