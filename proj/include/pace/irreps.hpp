#pragma once

// Irreducible-representation layouts, real spherical harmonics and the Wigner-D
// action of SO(3).
//
// Conventions
// -----------
// * Real spherical harmonics are orthonormal on the unit sphere (integral of
//   Y_lm^2 over the sphere is 1) and are listed in ascending m = -l..l. With
//   this ordering the l=1 block reads sqrt(3/4pi) * (y, z, x). For m > 0 the
//   component is proportional to Re((x+iy)^m), for m < 0 to Im((x+iy)^|m|);
//   no Condon-Shortley phase is applied to the real functions.
// * Parity is not tracked: an irrep is an SO(3) block indexed by l alone.
// * A feature row stores its blocks in ascending l. Inside a block of
//   multiplicity C the storage is m-major with channels contiguous:
//   element (m, c) sits at offset (m + l) * C + c.

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pace/dual.hpp"

namespace pace {

/// Largest rotation order handled anywhere in the library.
inline constexpr int kMaxL = 6;

struct Irrep {
    int mul = 0;
    int l = 0;
    bool operator==(const Irrep&) const = default;
};

class IrrepsLayout {
public:
    IrrepsLayout() = default;
    /// Sorts by l and merges entries with equal l. Throws ConfigError on
    /// non-positive multiplicity or l outside [0, kMaxL].
    explicit IrrepsLayout(std::vector<Irrep> entries);

    /// Uniform multiplicity `mul` for every l in [l_lo, l_hi].
    static IrrepsLayout uniform(int mul, int l_lo, int l_hi);
    /// Parses "256x0+256x1". Throws ParseError (line 1) on malformed text.
    static IrrepsLayout parse(std::string_view text);
    std::string str() const;

    std::span<const Irrep> entries() const { return entries_; }
    bool empty() const { return entries_.empty(); }
    std::size_t dim() const { return dim_; }
    bool contains(int l) const;
    /// Multiplicity of order l, 0 when absent.
    int mul(int l) const;
    /// Offset of the l block inside a row; throws InputError when absent.
    std::size_t offset(int l) const;
    int lmax() const { return entries_.empty() ? -1 : entries_.back().l; }

    bool operator==(const IrrepsLayout& o) const { return entries_ == o.entries_; }

private:
    std::vector<Irrep> entries_;
    std::array<std::ptrdiff_t, kMaxL + 1> offsets_{-1, -1, -1, -1, -1, -1, -1};
    std::size_t dim_ = 0;
};

/// Rows of irreps features with a shared layout.
template <class T>
struct IrrepsTensor {
    IrrepsLayout layout;
    std::size_t rows = 0;
    std::vector<T> data;

    IrrepsTensor() = default;
    IrrepsTensor(IrrepsLayout lay, std::size_t n)
        : layout(std::move(lay)), rows(n), data(n * layout.dim(), T(0.0)) {}

    std::size_t width() const { return layout.dim(); }
    std::span<T> row(std::size_t i) { return {data.data() + i * width(), width()}; }
    std::span<const T> row(std::size_t i) const { return {data.data() + i * width(), width()}; }
    std::span<T> block(std::size_t i, int l) {
        return {data.data() + i * width() + layout.offset(l),
                static_cast<std::size_t>(layout.mul(l) * (2 * l + 1))};
    }
    std::span<const T> block(std::size_t i, int l) const {
        return {data.data() + i * width() + layout.offset(l),
                static_cast<std::size_t>(layout.mul(l) * (2 * l + 1))};
    }
    T& at(std::size_t i, int l, int m, int c) {
        return data[i * width() + layout.offset(l) + static_cast<std::size_t>((m + l) * layout.mul(l) + c)];
    }
    const T& at(std::size_t i, int l, int m, int c) const {
        return data[i * width() + layout.offset(l) + static_cast<std::size_t>((m + l) * layout.mul(l) + c)];
    }
};

using Vec3 = std::array<double, 3>;

/// Proper rotation, row-major 3x3.
class Rotation {
public:
    Rotation() : m_{1, 0, 0, 0, 1, 0, 0, 0, 1} {}
    /// Validates orthonormality (1e-12) and det = +1; throws InputError.
    static Rotation from_matrix(const std::array<double, 9>& m);
    static Rotation identity() { return {}; }
    static Rotation axis_angle(const Vec3& axis, double angle);
    /// Haar-uniform random rotation.
    static Rotation random(std::mt19937_64& rng);

    double operator()(int r, int c) const { return m_[static_cast<std::size_t>(3 * r + c)]; }
    const std::array<double, 9>& matrix() const { return m_; }
    Vec3 apply(const Vec3& v) const;
    Rotation operator*(const Rotation& o) const;
    Rotation transpose() const;

private:
    std::array<double, 9> m_;
};

/// (l_max+1)^2 values: all blocks l = 0..l_max concatenated.
inline std::size_t sh_dim(int lmax) { return static_cast<std::size_t>((lmax + 1) * (lmax + 1)); }

/// Real spherical harmonics of the direction of an arbitrary nonzero vector,
/// written into `out` (size sh_dim(lmax)). Works for dual numbers, which is how
/// the model obtains exact Jacobians.
template <class T>
void spherical_harmonics(const T& x, const T& y, const T& z, int lmax, T* out);

/// Per-l real spherical harmonic values for a unit direction.
/// Throws InputError when |direction| differs from 1 by more than 1e-9 and
/// ConfigError when l_max is outside [0, kMaxL].
std::vector<std::vector<double>> real_spherical_harmonics(const Vec3& direction, int lmax);

/// (2l+1)x(2l+1) row-major matrix D with Y^l(R r) = D Y^l(r).
std::vector<double> wigner_d_matrix(int l, const Rotation& R);

/// Applies D^l(R) to every (l, channel) block of every row.
IrrepsTensor<double> rotate(const IrrepsTensor<double>& t, const Rotation& R);

// ---- implementation of the templated harmonic evaluation ------------------

namespace detail {
/// sqrt((2l+1)/(4 pi) * (l-m)!/(l+m)!), times sqrt(2) when m > 0.
double sh_norm(int l, int m);
}  // namespace detail

template <class T>
void spherical_harmonics(const T& x_in, const T& y_in, const T& z_in, int lmax, T* out) {
    using std::sqrt;
    T r = sqrt(x_in * x_in + y_in * y_in + z_in * z_in);
    T inv = T(1.0) / r;
    T x = x_in * inv, y = y_in * inv, z = z_in * inv;

    // Q_l^m(z) = P_l^m(z) / sin^m(theta), a polynomial in z.
    std::array<std::array<T, kMaxL + 1>, kMaxL + 1> q{};
    for (int m = 0; m <= lmax; ++m) {
        double dfact = 1.0;
        for (int k = 2 * m - 1; k > 1; k -= 2) dfact *= k;
        q[m][m] = T(dfact);
        if (m + 1 <= lmax) q[m + 1][m] = z * (double(2 * m + 1) * dfact);
        for (int l = m + 2; l <= lmax; ++l)
            q[l][m] = (z * q[l - 1][m] * double(2 * l - 1) - q[l - 2][m] * double(l + m - 1)) / double(l - m);
    }
    // c_m + i s_m = (x + i y)^m
    std::array<T, kMaxL + 1> c{}, s{};
    c[0] = T(1.0);
    s[0] = T(0.0);
    for (int m = 1; m <= lmax; ++m) {
        c[m] = c[m - 1] * x - s[m - 1] * y;
        s[m] = s[m - 1] * x + c[m - 1] * y;
    }
    for (int l = 0; l <= lmax; ++l) {
        T* blk = out + l * l;
        blk[l] = q[l][0] * detail::sh_norm(l, 0);
        for (int m = 1; m <= l; ++m) {
            double n = detail::sh_norm(l, m);
            blk[l + m] = q[l][m] * c[m] * n;
            blk[l - m] = q[l][m] * s[m] * n;
        }
    }
}

}  // namespace pace
