#include "pace/coupling.hpp"

#include <array>
#include <cmath>
#include <complex>
#include <mutex>

#include "pace/error.hpp"
#include "pace/irreps.hpp"

namespace pace {

namespace {

using cplx = std::complex<long double>;

long double factorial(int n) {
    static const auto table = [] {
        std::array<long double, 64> t{};
        t[0] = 1.0L;
        for (std::size_t i = 1; i < t.size(); ++i) t[i] = t[i - 1] * static_cast<long double>(i);
        return t;
    }();
    return table[static_cast<std::size_t>(n)];
}

/// <j1 m1 j2 m2 | J M> in the Condon-Shortley convention (Racah formula).
long double complex_cg(int j1, int m1, int j2, int m2, int J, int M) {
    if (m1 + m2 != M) return 0.0L;
    if (J < std::abs(j1 - j2) || J > j1 + j2) return 0.0L;
    if (std::abs(m1) > j1 || std::abs(m2) > j2 || std::abs(M) > J) return 0.0L;
    long double pre = std::sqrt((2.0L * J + 1) * factorial(J + j1 - j2) * factorial(J - j1 + j2) *
                                factorial(j1 + j2 - J) / factorial(j1 + j2 + J + 1));
    pre *= std::sqrt(factorial(J + M) * factorial(J - M) * factorial(j1 - m1) * factorial(j1 + m1) *
                     factorial(j2 - m2) * factorial(j2 + m2));
    long double sum = 0.0L;
    for (int k = 0; k <= j1 + j2 + J; ++k) {
        int a = j1 + j2 - J - k, b = j1 - m1 - k, c = j2 + m2 - k, d = J - j2 + m1 + k, e = J - j1 - m2 + k;
        if (a < 0 || b < 0 || c < 0 || d < 0 || e < 0) continue;
        long double term = 1.0L / (factorial(k) * factorial(a) * factorial(b) * factorial(c) * factorial(d) *
                                   factorial(e));
        sum += (k % 2 == 0) ? term : -term;
    }
    return pre * sum;
}

/// Row-major (2l+1)^2 unitary U with Y_real = U Y_complex.
std::vector<cplx> real_from_complex(int l) {
    const int d = 2 * l + 1;
    std::vector<cplx> U(static_cast<std::size_t>(d * d), cplx(0, 0));
    auto at = [&](int m, int mc) -> cplx& { return U[static_cast<std::size_t>((m + l) * d + (mc + l))]; };
    const long double r2 = 1.0L / std::sqrt(2.0L);
    at(0, 0) = 1;
    for (int m = 1; m <= l; ++m) {
        long double sgn = (m % 2 == 0) ? 1.0L : -1.0L;
        at(m, m) = cplx(sgn * r2, 0);
        at(m, -m) = cplx(r2, 0);
        at(-m, m) = cplx(0, -sgn * r2);
        at(-m, -m) = cplx(0, r2);
    }
    return U;
}

CGTensor compute_real_cg(int l1, int l2, int l3) {
    const int d1 = 2 * l1 + 1, d2 = 2 * l2 + 1, d3 = 2 * l3 + 1;
    std::vector<double> vals(static_cast<std::size_t>(d1 * d2 * d3), 0.0);
    if (l3 < std::abs(l1 - l2) || l3 > l1 + l2) return CGTensor(l1, l2, l3, std::move(vals));
    auto U1 = real_from_complex(l1), U2 = real_from_complex(l2), U3 = real_from_complex(l3);
    std::vector<cplx> c(vals.size());
    long double re2 = 0, im2 = 0;
    for (int a = 0; a < d1; ++a)
        for (int b = 0; b < d2; ++b)
            for (int k = 0; k < d3; ++k) {
                cplx s(0, 0);
                for (int ma = -l1; ma <= l1; ++ma) {
                    cplx u1 = std::conj(U1[static_cast<std::size_t>(a * d1 + ma + l1)]);
                    if (u1 == cplx(0, 0)) continue;
                    for (int mb = -l2; mb <= l2; ++mb) {
                        cplx u2 = std::conj(U2[static_cast<std::size_t>(b * d2 + mb + l2)]);
                        if (u2 == cplx(0, 0)) continue;
                        int M = ma + mb;
                        if (std::abs(M) > l3) continue;
                        cplx u3 = U3[static_cast<std::size_t>(k * d3 + M + l3)];
                        if (u3 == cplx(0, 0)) continue;
                        s += u3 * complex_cg(l1, ma, l2, mb, l3, M) * u1 * u2;
                    }
                }
                auto idx = static_cast<std::size_t>((a * d2 + b) * d3 + k);
                c[idx] = s;
                re2 += s.real() * s.real();
                im2 += s.imag() * s.imag();
            }
    // The coupling is either purely real or purely imaginary; keep whichever
    // part carries the norm.
    const bool use_real = re2 >= im2;
    for (std::size_t i = 0; i < vals.size(); ++i)
        vals[i] = static_cast<double>(use_real ? c[i].real() : c[i].imag());
    for (double& v : vals)
        if (std::abs(v) < 1e-15) v = 0.0;
    for (double v : vals) {
        if (v != 0.0) {
            if (v < 0)
                for (double& w : vals) w = (w == 0.0) ? 0.0 : -w;
            break;
        }
    }
    return CGTensor(l1, l2, l3, std::move(vals));
}

}  // namespace

CGTensor::CGTensor(int l1, int l2, int l3, std::vector<double> values)
    : l1_(l1), l2_(l2), l3_(l3), values_(std::move(values)) {}

bool CGTensor::is_zero() const {
    for (double v : values_)
        if (v != 0.0) return false;
    return true;
}

std::vector<CGTensor::Entry> CGTensor::nonzeros() const {
    std::vector<Entry> out;
    const int d1 = 2 * l1_ + 1, d2 = 2 * l2_ + 1, d3 = 2 * l3_ + 1;
    for (int a = 0; a < d1; ++a)
        for (int b = 0; b < d2; ++b)
            for (int c = 0; c < d3; ++c) {
                double v = (*this)(a, b, c);
                if (std::abs(v) > 1e-15) out.push_back({a, b, c, v});
            }
    return out;
}

const CGTensor& clebsch_gordan(int l1, int l2, int l3) {
    constexpr int n = 2 * kMaxL + 1;
    if (l1 < 0 || l2 < 0 || l3 < 0 || l1 >= n || l2 >= n || l3 >= n)
        throw ConfigError("Clebsch-Gordan orders out of range");
    static std::mutex mu;
    static std::array<std::unique_ptr<CGTensor>, n * n * n> cache;
    std::lock_guard lock(mu);
    auto& slot = cache[static_cast<std::size_t>((l1 * n + l2) * n + l3)];
    if (!slot) slot = std::make_unique<CGTensor>(compute_real_cg(l1, l2, l3));
    return *slot;
}

std::vector<int> ContractionPath::eta() const {
    std::vector<int> e;
    if (ls.empty()) return e;
    e.push_back(ls[0]);
    for (std::size_t i = 1; i < ls.size(); ++i) {
        e.push_back(ls[i]);
        e.push_back(couples[i]);
    }
    return e;
}

bool ContractionPath::valid() const {
    if (ls.empty() || ls.size() != couples.size()) return false;
    if (couples[0] != ls[0]) return false;
    for (std::size_t i = 0; i < ls.size(); ++i)
        if (ls[i] < 0 || couples[i] < 0) return false;
    for (std::size_t i = 1; i < ls.size(); ++i) {
        int lo = std::abs(couples[i - 1] - ls[i]), hi = couples[i - 1] + ls[i];
        if (couples[i] < lo || couples[i] > hi) return false;
    }
    return true;
}

std::vector<std::vector<ContractionPath>> enumerate_paths(int l_max, int L_target, int v_max) {
    if (l_max < 0 || L_target < 0 || v_max < 0) throw InputError("enumerate_paths arguments must be nonnegative");
    std::vector<std::vector<ContractionPath>> out(static_cast<std::size_t>(v_max));
    // Depth-first in ascending (l_i, L_i) order yields lexicographic eta.
    for (int v = 1; v <= v_max; ++v) {
        auto& list = out[static_cast<std::size_t>(v - 1)];
        ContractionPath cur;
        auto rec = [&](auto&& self, int depth) -> void {
            if (depth == v) {
                if (cur.couples.back() == L_target) list.push_back(cur);
                return;
            }
            for (int l = 0; l <= l_max; ++l) {
                if (depth == 0) {
                    cur.ls.push_back(l);
                    cur.couples.push_back(l);
                    self(self, 1);
                    cur.ls.pop_back();
                    cur.couples.pop_back();
                    continue;
                }
                int prev = cur.couples.back();
                int lo = std::abs(prev - l), hi = prev + l;
                bool last = depth + 1 == v;
                for (int L = lo; L <= hi; ++L) {
                    if (last ? L != L_target : L > l_max) continue;
                    cur.ls.push_back(l);
                    cur.couples.push_back(L);
                    self(self, depth + 1);
                    cur.ls.pop_back();
                    cur.couples.pop_back();
                }
            }
        };
        rec(rec, 0);
    }
    return out;
}

std::vector<double> generalized_cg(const ContractionPath& path) {
    if (!path.valid()) throw InputError("invalid contraction path");
    // G[m_1..m_k, M_k], starting from the identity map for the first factor.
    const int l1 = path.ls[0];
    std::vector<double> G(static_cast<std::size_t>((2 * l1 + 1) * (2 * l1 + 1)), 0.0);
    for (int m = 0; m < 2 * l1 + 1; ++m) G[static_cast<std::size_t>(m * (2 * l1 + 1) + m)] = 1.0;
    std::size_t prefix = static_cast<std::size_t>(2 * l1 + 1);
    for (std::size_t k = 1; k < path.ls.size(); ++k) {
        const int Lp = path.couples[k - 1], l = path.ls[k], L = path.couples[k];
        const int dp = 2 * Lp + 1, dl = 2 * l + 1, dL = 2 * L + 1;
        const CGTensor& cg = clebsch_gordan(Lp, l, L);
        auto nz = cg.nonzeros();
        std::vector<double> next(prefix * static_cast<std::size_t>(dl * dL), 0.0);
        for (std::size_t p = 0; p < prefix; ++p)
            for (const auto& e : nz) {
                double g = G[p * static_cast<std::size_t>(dp) + static_cast<std::size_t>(e.m1)];
                if (g == 0.0) continue;
                next[(p * static_cast<std::size_t>(dl) + static_cast<std::size_t>(e.m2)) * static_cast<std::size_t>(dL) +
                     static_cast<std::size_t>(e.m3)] += g * e.value;
            }
        G = std::move(next);
        prefix *= static_cast<std::size_t>(dl);
    }
    return G;
}

GeneralizedCGTable::GeneralizedCGTable(int l_max, std::vector<int> targets, int v_max)
    : l_max_(l_max), v_max_(v_max), targets_(std::move(targets)) {
    if (v_max < 1) throw ConfigError("v_max must be at least 1");
    for (int L : targets_) {
        auto per_v = enumerate_paths(l_max, L, v_max);
        for (int v = 1; v <= v_max; ++v) {
            std::vector<PathBlock> blocks;
            for (const auto& p : per_v[static_cast<std::size_t>(v - 1)]) {
                auto blk = generalized_cg(p);
                bool nonzero = false;
                for (double x : blk) nonzero = nonzero || x != 0.0;
                if (nonzero) blocks.push_back({p, std::move(blk)});
            }
            entries_[{L, v}] = std::move(blocks);
        }
    }
}

const std::vector<PathBlock>& GeneralizedCGTable::at(int L, int v) const {
    auto it = entries_.find({L, v});
    if (it == entries_.end())
        throw ConfigError("generalized CG table lacks L=" + std::to_string(L) + ", v=" + std::to_string(v));
    return it->second;
}

std::vector<PathBlock>& GeneralizedCGTable::mutable_at(int L, int v) {
    auto it = entries_.find({L, v});
    if (it == entries_.end())
        throw ConfigError("generalized CG table lacks L=" + std::to_string(L) + ", v=" + std::to_string(v));
    return it->second;
}

}  // namespace pace
