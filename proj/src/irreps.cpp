#include "pace/irreps.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>

#include "pace/error.hpp"

namespace pace {

IrrepsLayout::IrrepsLayout(std::vector<Irrep> entries) {
    for (const Irrep& e : entries) {
        if (e.mul <= 0) throw ConfigError("irreps multiplicity must be positive");
        if (e.l < 0 || e.l > kMaxL) throw ConfigError("irreps order l=" + std::to_string(e.l) + " outside [0, 6]");
    }
    std::stable_sort(entries.begin(), entries.end(), [](const Irrep& a, const Irrep& b) { return a.l < b.l; });
    for (const Irrep& e : entries) {
        if (!entries_.empty() && entries_.back().l == e.l)
            entries_.back().mul += e.mul;
        else
            entries_.push_back(e);
    }
    std::size_t off = 0;
    for (const Irrep& e : entries_) {
        offsets_[static_cast<std::size_t>(e.l)] = static_cast<std::ptrdiff_t>(off);
        off += static_cast<std::size_t>(e.mul * (2 * e.l + 1));
    }
    dim_ = off;
}

IrrepsLayout IrrepsLayout::uniform(int mul, int l_lo, int l_hi) {
    std::vector<Irrep> e;
    for (int l = l_lo; l <= l_hi; ++l) e.push_back({mul, l});
    return IrrepsLayout(std::move(e));
}

IrrepsLayout IrrepsLayout::parse(std::string_view text) {
    std::vector<Irrep> entries;
    if (text.empty()) return {};
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t plus = text.find('+', pos);
        std::string_view tok = text.substr(pos, plus == std::string_view::npos ? std::string_view::npos : plus - pos);
        std::size_t x = tok.find('x');
        if (x == std::string_view::npos || x == 0 || x + 1 == tok.size())
            throw ParseError(1, "bad irreps token '" + std::string(tok) + "'");
        Irrep e;
        auto r1 = std::from_chars(tok.data(), tok.data() + x, e.mul);
        auto r2 = std::from_chars(tok.data() + x + 1, tok.data() + tok.size(), e.l);
        if (r1.ec != std::errc{} || r1.ptr != tok.data() + x || r2.ec != std::errc{} ||
            r2.ptr != tok.data() + tok.size())
            throw ParseError(1, "bad irreps token '" + std::string(tok) + "'");
        entries.push_back(e);
        if (plus == std::string_view::npos) break;
        pos = plus + 1;
    }
    try {
        return IrrepsLayout(std::move(entries));
    } catch (const ConfigError& e) {
        throw ParseError(1, e.what());
    }
}

std::string IrrepsLayout::str() const {
    std::string s;
    for (const Irrep& e : entries_) {
        if (!s.empty()) s += '+';
        s += std::to_string(e.mul) + "x" + std::to_string(e.l);
    }
    return s;
}

bool IrrepsLayout::contains(int l) const {
    return l >= 0 && l <= kMaxL && offsets_[static_cast<std::size_t>(l)] >= 0;
}

int IrrepsLayout::mul(int l) const {
    for (const Irrep& e : entries_)
        if (e.l == l) return e.mul;
    return 0;
}

std::size_t IrrepsLayout::offset(int l) const {
    if (!contains(l)) throw InputError("layout " + str() + " has no l=" + std::to_string(l) + " block");
    return static_cast<std::size_t>(offsets_[static_cast<std::size_t>(l)]);
}

// ---- rotations --------------------------------------------------------------

Rotation Rotation::from_matrix(const std::array<double, 9>& m) {
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0;
            for (int k = 0; k < 3; ++k) s += m[3 * i + k] * m[3 * j + k];
            if (std::abs(s - (i == j ? 1.0 : 0.0)) > 1e-12) throw InputError("rotation matrix is not orthonormal");
        }
    double det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
                 m[2] * (m[3] * m[7] - m[4] * m[6]);
    if (det < 0) throw InputError("rotation matrix has determinant -1");
    Rotation r;
    r.m_ = m;
    return r;
}

Rotation Rotation::axis_angle(const Vec3& axis, double angle) {
    double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
    if (n == 0) throw InputError("rotation axis must be nonzero");
    double x = axis[0] / n, y = axis[1] / n, z = axis[2] / n;
    double c = std::cos(angle), s = std::sin(angle), t = 1 - c;
    Rotation r;
    r.m_ = {t * x * x + c,     t * x * y - s * z, t * x * z + s * y,
            t * x * y + s * z, t * y * y + c,     t * y * z - s * x,
            t * x * z - s * y, t * y * z + s * x, t * z * z + c};
    return r;
}

Rotation Rotation::random(std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    double q[4];
    double n = 0;
    do {
        n = 0;
        for (double& v : q) {
            v = g(rng);
            n += v * v;
        }
    } while (n < 1e-12);
    n = std::sqrt(n);
    double w = q[0] / n, x = q[1] / n, y = q[2] / n, z = q[3] / n;
    Rotation r;
    r.m_ = {1 - 2 * (y * y + z * z), 2 * (x * y - z * w),     2 * (x * z + y * w),
            2 * (x * y + z * w),     1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
            2 * (x * z - y * w),     2 * (y * z + x * w),     1 - 2 * (x * x + y * y)};
    return r;
}

Vec3 Rotation::apply(const Vec3& v) const {
    return {m_[0] * v[0] + m_[1] * v[1] + m_[2] * v[2], m_[3] * v[0] + m_[4] * v[1] + m_[5] * v[2],
            m_[6] * v[0] + m_[7] * v[1] + m_[8] * v[2]};
}

Rotation Rotation::operator*(const Rotation& o) const {
    Rotation r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0;
            for (int k = 0; k < 3; ++k) s += m_[3 * i + k] * o.m_[3 * k + j];
            r.m_[3 * i + j] = s;
        }
    return r;
}

Rotation Rotation::transpose() const {
    Rotation r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r.m_[3 * i + j] = m_[3 * j + i];
    return r;
}

// ---- spherical harmonics ------------------------------------------------------

namespace detail {

double sh_norm(int l, int m) {
    static const auto table = [] {
        std::array<std::array<double, kMaxL + 1>, kMaxL + 1> t{};
        for (int l = 0; l <= kMaxL; ++l)
            for (int m = 0; m <= l; ++m) {
                long double ratio = 1.0L;  // (l-m)!/(l+m)!
                for (int k = l - m + 1; k <= l + m; ++k) ratio /= k;
                long double v = std::sqrt((2.0L * l + 1.0L) / (4.0L * std::numbers::pi_v<long double>) * ratio);
                if (m > 0) v *= std::numbers::sqrt2_v<long double>;
                t[l][m] = static_cast<double>(v);
            }
        return t;
    }();
    return table[static_cast<std::size_t>(l)][static_cast<std::size_t>(m)];
}

}  // namespace detail

std::vector<std::vector<double>> real_spherical_harmonics(const Vec3& direction, int lmax) {
    if (lmax < 0 || lmax > kMaxL) throw ConfigError("l_max must lie in [0, 6]");
    double n = std::sqrt(direction[0] * direction[0] + direction[1] * direction[1] + direction[2] * direction[2]);
    if (!(std::abs(n - 1.0) <= 1e-9)) throw InputError("spherical harmonics need a unit direction");
    std::vector<double> flat(sh_dim(lmax));
    spherical_harmonics<double>(direction[0], direction[1], direction[2], lmax, flat.data());
    std::vector<std::vector<double>> out;
    for (int l = 0; l <= lmax; ++l) out.emplace_back(flat.begin() + l * l, flat.begin() + (l + 1) * (l + 1));
    return out;
}

namespace {

/// P_n(z) and P_n'(z) by the three-term recurrence.
std::pair<double, double> legendre(int n, double z) {
    double p0 = 1, p1 = z;
    if (n == 0) return {1.0, 0.0};
    for (int k = 2; k <= n; ++k) {
        double p2 = ((2 * k - 1) * z * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    return {p1, n * (z * p1 - p0) / (z * z - 1)};
}

/// Gauss-Legendre nodes and weights on [-1, 1].
void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
    x.assign(static_cast<std::size_t>(n), 0.0);
    w.assign(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        for (int it = 0; it < 100; ++it) {
            auto [p, dp] = legendre(n, z);
            double dz = p / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        double dp = legendre(n, z).second;
        x[static_cast<std::size_t>(i)] = z;
        w[static_cast<std::size_t>(i)] = 2 / ((1 - z * z) * dp * dp);
    }
}

}  // namespace

std::vector<double> wigner_d_matrix(int l, const Rotation& R) {
    if (l < 0 || l > kMaxL) throw ConfigError("l must lie in [0, 6]");
    const int d = 2 * l + 1;
    // D_{mm'} = integral of Y_m(R r) Y_m'(r); the quadrature is exact for the
    // degree-2l integrand.
    std::vector<double> zs, ws;
    const int nz = l + 2;
    const int nphi = 2 * l + 3;
    gauss_legendre(nz, zs, ws);
    std::vector<double> D(static_cast<std::size_t>(d * d), 0.0);
    std::vector<double> ya(sh_dim(l)), yb(sh_dim(l));
    for (int a = 0; a < nz; ++a) {
        double z = zs[static_cast<std::size_t>(a)];
        double st = std::sqrt(1 - z * z);
        for (int b = 0; b < nphi; ++b) {
            double phi = 2 * std::numbers::pi * b / nphi;
            Vec3 r{st * std::cos(phi), st * std::sin(phi), z};
            Vec3 rr = R.apply(r);
            spherical_harmonics<double>(r[0], r[1], r[2], l, yb.data());
            spherical_harmonics<double>(rr[0], rr[1], rr[2], l, ya.data());
            double w = ws[static_cast<std::size_t>(a)] * 2 * std::numbers::pi / nphi;
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j)
                    D[static_cast<std::size_t>(i * d + j)] +=
                        w * ya[static_cast<std::size_t>(l * l + i)] * yb[static_cast<std::size_t>(l * l + j)];
        }
    }
    return D;
}

IrrepsTensor<double> rotate(const IrrepsTensor<double>& t, const Rotation& R) {
    IrrepsTensor<double> out = t;
    for (const Irrep& e : t.layout.entries()) {
        if (e.l == 0) continue;
        const int d = 2 * e.l + 1;
        std::vector<double> D = wigner_d_matrix(e.l, R);
        for (std::size_t i = 0; i < t.rows; ++i) {
            auto src = t.block(i, e.l);
            auto dst = out.block(i, e.l);
            for (int m = 0; m < d; ++m)
                for (int c = 0; c < e.mul; ++c) {
                    double s = 0;
                    for (int k = 0; k < d; ++k)
                        s += D[static_cast<std::size_t>(m * d + k)] * src[static_cast<std::size_t>(k * e.mul + c)];
                    dst[static_cast<std::size_t>(m * e.mul + c)] = s;
                }
        }
    }
    return out;
}

}  // namespace pace
