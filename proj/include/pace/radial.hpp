#pragma once

// Invariant edge-length features: a Bessel basis and an exponential-Bernstein
// basis, both multiplied by the polynomial cutoff envelope
//   u(d) = 1 - (p+1)(p+2)/2 d^p + p(p+2) d^(p+1) - p(p+1)/2 d^(p+2),  d = r / r_cut,
// whose value and first two derivatives vanish at d = 1. Beyond the cutoff
// every basis function is zero.

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pace/dual.hpp"
#include "pace/equiv_ops.hpp"

namespace pace {

enum class RadialKind { bessel, exp_bernstein };

std::string to_string(RadialKind k);
/// "bessel" or "exp_bernstein" (also "eb"); ConfigError otherwise.
RadialKind parse_radial_kind(std::string_view s);

struct RadialConfig {
    RadialKind kind = RadialKind::bessel;
    int n_basis = 8;
    double cutoff = 5.0;  // Å
    int p = 6;
    /// ConfigError on n_basis < 1, cutoff <= 0 or p < 1.
    void validate() const;
    bool operator==(const RadialConfig&) const = default;
};

inline constexpr double kDefaultBernsteinGamma = 0.5;  // 1/Å

template <class T>
T cutoff_envelope(const T& d, int p) {
    if (!(d < 1.0)) return T(0.0);
    const double a = (p + 1.0) * (p + 2.0) / 2.0, b = p * (p + 2.0), c = p * (p + 1.0) / 2.0;
    T dp = ipow(d, p);
    return T(1.0) - dp * (a - d * (b - d * c));
}

/// out[n-1] = sqrt(2/c) sin(n pi r / c) / r * u(r / c), n = 1..n_basis.
template <class T>
void bessel_basis(const T& r, const RadialConfig& cfg, T* out) {
    using std::sin;
    const double c = cfg.cutoff;
    if (!(r < c)) {
        for (int n = 0; n < cfg.n_basis; ++n) out[n] = T(0.0);
        return;
    }
    T env = cutoff_envelope(r / c, cfg.p);
    T pref = env * std::sqrt(2.0 / c) / r;
    for (int n = 1; n <= cfg.n_basis; ++n) out[n - 1] = pref * sin(r * (n * std::numbers::pi / c));
}

/// out[k] = binom(K-1, k) x^k (1-x)^(K-1-k) * u(r / c) with x = exp(-gamma r).
template <class T, class G>
void exp_bernstein_basis(const T& r, const RadialConfig& cfg, const G& gamma, T* out) {
    using std::exp;
    const int K = cfg.n_basis;
    if (!(r < cfg.cutoff)) {
        for (int k = 0; k < K; ++k) out[k] = T(0.0);
        return;
    }
    T env = cutoff_envelope(r / cfg.cutoff, cfg.p);
    T x = exp(-(r * gamma));
    T y = T(1.0) - x;
    double binom = 1.0;
    for (int k = 0; k < K; ++k) {
        out[k] = env * ipow(x, k) * ipow(y, K - 1 - k) * binom;
        binom = binom * (K - 1 - k) / (k + 1);
    }
}

/// Checked scalar entry points. bessel_basis throws InputError for r <= 0;
/// exp_bernstein_basis throws InputError for r < 0.
std::vector<double> bessel_basis(double r, const RadialConfig& cfg);
std::vector<double> exp_bernstein_basis(double r, const RadialConfig& cfg, double gamma = kDefaultBernsteinGamma);
std::vector<double> radial_basis(double r, const RadialConfig& cfg, double gamma = kDefaultBernsteinGamma);

/// Per-edge tensor-product weights from the radial features: the MLP output
/// laid out as [path][channel] for `tp`. ConfigError when the MLP shape does
/// not match rbf or the tensor product's weight grid.
std::vector<double> radial_weight_mlp(std::span<const double> rbf, const MlpParams& params, const TensorProduct& tp);

}  // namespace pace
