#pragma once

// Numerical oracles: finite-difference forces, symmetry reports and
// least-squares span checks of feature families against target functions.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pace/model.hpp"

namespace pace {

/// Central differences of the energy, one coordinate at a time.
std::vector<Vec3> finite_difference_forces(const Model& model, const Structure& s, double h = 1e-4);

struct EquivarianceReport {
    double energy_rotation = 0;  // max |E(Rx) - E(x)|
    double energy_translation = 0;
    double energy_permutation = 0;
    double force_equivariance = 0;  // max ||f(Rx + t) - R f(x)||_inf, also over permutations
};

/// n_transforms random rotations, translations and permutations.
EquivarianceReport equivariance_report(const Model& model, const Structure& s, int n_transforms,
                                       std::mt19937_64& rng);

/// Row-major samples x columns.
struct Matrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> data;
    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

struct SpanResult {
    std::vector<double> residuals;  // per target column, ||t - F c|| / ||t||
    double max_residual = 0;
    int rank = 0;
    double condition = 0;  // |R_00| / |R_kk| over the numerical rank
    std::string warning;  // set for rank-deficient sampling
};

/// Minimum normalized least-squares residual of each target column over linear
/// combinations of the feature columns, by column-pivoted QR. InputError unless
/// samples >= 10 x features. `regularization` adds ridge rows sqrt(lambda) I.
SpanResult span_residual(const Matrix& features, const Matrix& targets, double regularization = 0);

/// Feature/target samplers over unit directions or neighbor environments.
using FeatureFn = std::function<std::vector<double>(std::span<const Vec3> neighbors)>;

SpanResult span_residual(const FeatureFn& features, const FeatureFn& targets, std::size_t n_neighbors,
                         std::size_t n_samples, std::uint64_t seed, double regularization = 0);

// ---- feature families -------------------------------------------------------------

/// sum_j Y^{0..l_max}(r_j).
FeatureFn sh_aggregation(int l_max);
/// sum_j Y^{0..l_max}(r_j) together with sum_j Y(r_j) (x) Y(r_j) (all entry products on one edge).
FeatureFn boosted_aggregation(int l_max);
/// sum_j Y(r_j) together with (sum_j Y(r_j)) (x) (sum_j Y(r_j)).
FeatureFn product_of_aggregates(int l_max);
/// Entries of the model's edge-boosted message of a single edge of length `r`
/// between species indices a and b (the environment holds one neighbor).
FeatureFn model_edge_booster(const Model& model, double r, int species_a, int species_b);
/// Y^l_m for l in [l_lo, l_hi] of the single neighbor direction.
FeatureFn sh_targets(int l_lo, int l_hi);

struct MonomialCheck {
    std::array<int, 3> powers{};  // x^a y^b z^c
    double residual = 0;
    bool pass = false;
};

/// Fits each symmetrized monomial sum_j x_j^a y_j^b z_j^c (a+b+c <= D) of unit
/// neighbor directions from the features on random `neighbor_count`
/// environments; pass when residual <= tol.
std::vector<MonomialCheck> dspanning_degree_check(const FeatureFn& features, int D, std::size_t neighbor_count,
                                                  std::uint64_t seed, double tol = 1e-6);

// ---- couplings ------------------------------------------------------------------

/// max |sum_{m1 m2} C[m1 m2 m3] C'[m1 m2 m3'] - delta| over l1, l2 <= l_max and all
/// admissible (l3, m3), (l3', m3').
double cg_orthogonality_error(int l_max);
/// max |C(D1 u, D2 w) - D3 C(u, w)| over l1, l2 <= l_max, random inputs and rotations.
double cg_equivariance_error(int l_max, int n_rotations, std::uint64_t seed);
/// Same check for every generalized coupling block with l <= l_max, targets
/// L <= l_max and orders v <= v_max.
double generalized_cg_equivariance_error(int l_max, int v_max, int n_rotations, std::uint64_t seed);

/// The pair (x (x) x) entry y_1^2 + y_2^2 target over two-neighbor environments.
FeatureFn pair_square_target();

}  // namespace pace
