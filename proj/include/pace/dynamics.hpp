#pragma once

// Langevin dynamics, radial distribution functions and an analytic reference
// potential used to label synthetic data.
//
// Units: Å, fs, amu, eV. Accelerations are f/m * kAccel (Å/fs^2).

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pace/molgraph.hpp"

namespace pace {

inline constexpr double kAccel = 0.00964853321;  // (eV/Å)/amu in Å/fs^2
inline constexpr double kBoltzmann = 8.617333262e-5;  // eV/K

/// Returns the potential energy and writes forces (size = atoms).
using ForceFn = std::function<double(std::span<const Vec3> positions, std::vector<Vec3>& forces)>;

/// Morse pairs with a steep core plus an Axilrod-Teller triple term:
///   E = sum_{i<j} D_ab [(1 - exp(-alpha (r - r0_ab)))^2 - 1] + kCore / r^12
///     + c9 sum_{i<j<k} (1 + 3 cos g_i cos g_j cos g_k) / (r_ij r_ik r_jk)^3
/// Parameters are indexed by sorted species pair. Forces are exact.
class AnalyticPotential {
public:
    struct Pair {
        double depth, alpha, r0;
    };
    /// Defaults for up to three species (pair types in order aa, ab, ..., bb, ...).
    explicit AnalyticPotential(std::vector<int> species);
    AnalyticPotential(std::vector<int> species, std::vector<Pair> pairs, double c9);

    const std::vector<int>& species() const { return species_; }
    double c9() const { return c9_; }
    const Pair& pair(int za, int zb) const;
    /// eV Å^12. Keeps pairs from collapsing under the triple term.
    static constexpr double kCore = 0.01;

    double energy(const Structure& s) const;
    double energy_forces(std::span<const int> z, std::span<const Vec3> positions, std::vector<Vec3>& forces) const;
    /// Fills energy and forces of s.
    void label(Structure& s) const;
    ForceFn force_fn(std::vector<int> z) const;

private:
    template <class T>
    T energy_impl(std::span<const int> idx, std::span<const T> x) const;
    int index(int z) const;

    std::vector<int> species_;
    std::vector<Pair> pairs_;  // upper triangle, row-major
    double c9_;
};

/// `n` configurations of one cluster: a relaxed reference geometry displaced
/// by Gaussian noise of `sigma` Å, labelled with exact energies and forces.
std::vector<Structure> synthetic_dataset(const AnalyticPotential& pot, std::span<const int> cluster_species, int n,
                                         double sigma, std::uint64_t seed);

struct MDState {
    std::vector<Vec3> positions;  // Å
    std::vector<Vec3> velocities;  // Å/fs
    std::vector<double> masses;  // amu
    std::vector<Vec3> forces;  // eV/Å at positions
    double potential = 0;  // eV
    double time = 0;  // fs

    double kinetic() const;  // eV
    double total() const { return potential + kinetic(); }
};

struct LangevinParams {
    double dt = 1.0;  // fs
    double friction = 0.0;  // 1/fs
    double temperature = 0.0;  // K
    /// InputError on dt <= 0, friction < 0 or temperature < 0.
    void validate() const;
};

/// Masses from atomic numbers; forces and potential evaluated at the start.
MDState make_state(const Structure& s, const ForceFn& force);

/// One BAOAB step. With friction = 0 and temperature = 0 it is exactly velocity
/// Verlet and draws nothing from `rng`. DivergenceError on non-finite forces.
void langevin_step(MDState& state, const ForceFn& force, const LangevinParams& p, std::mt19937_64& rng);

/// Maxwell-Boltzmann velocities with zero net momentum.
void initialize_velocities(MDState& state, double temperature, std::mt19937_64& rng);

struct Trajectory {
    std::vector<int> species;
    std::vector<MDState> frames;
};

struct MDConfig {
    int steps = 1000;
    int stride = 10;
    LangevinParams langevin;
    double init_temperature = -1;  // < 0: use langevin.temperature
    std::uint64_t seed = 0;
};

/// Frame 0 is the initial state; then every `stride` steps.
Trajectory run_md(const Structure& start, const ForceFn& force, const MDConfig& cfg);

/// Extended XYZ with total energy and forces per frame.
void write_trajectory(const std::filesystem::path& path, const Trajectory& traj);
std::vector<std::vector<Vec3>> trajectory_positions(std::span<const Structure> frames);

struct Rdf {
    double dr = 0.05;
    double r_max = 0;
    std::size_t n_frames = 0;
    std::vector<double> counts;  // average pair count per bin [b dr, (b+1) dr)
    std::vector<double> g;  // shell-normalised
    std::string header() const;
    std::string csv() const;
};

/// Pairs are binned by distance into half-open bins. g(b) divides the mean
/// count by the ideal share of the N(N-1)/2 pairs falling into the shell,
/// n_pairs * V_shell(b) / V_sphere(r_max). InputError on dr <= 0 or r_max <= 0.
Rdf rdf(std::span<const std::vector<Vec3>> frames, double dr, double r_max);
/// Bin index of r for bins [b dr, (b+1) dr), exact for the stored boundaries.
std::size_t rdf_bin(double r, double dr);

}  // namespace pace
