#pragma once

// Equivariant primitives on irreps rows: the channelwise weighted tensor
// product, per-l self-interaction, the species-weighted symmetric contraction
// and the two-layer SiLU MLP used for every invariant map.
//
// The classes below hold structure only. Parameter values are read from a
// flat `const double*` so that the model can keep every tensor in one
// Parameters block; activations and gradients are templated so the same code
// runs on double and on dual numbers. Forward calls accumulate (+=) into the
// output, backward calls accumulate into every gradient pointer that is not
// null.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "pace/coupling.hpp"
#include "pace/dual.hpp"
#include "pace/error.hpp"
#include "pace/irreps.hpp"
#include "pace/kernels.hpp"

namespace pace {

namespace detail {
template <class T>
std::vector<T>& scratch(int slot, std::size_t n) {
    thread_local std::vector<T> bufs[4];
    auto& b = bufs[slot];
    if (b.size() < n) b.resize(n);
    return b;
}
}  // namespace detail

// ---- activations ------------------------------------------------------------

template <class T>
T sigmoid(const T& x) {
    using std::exp;
    return T(1.0) / (T(1.0) + exp(-x));
}
template <class T>
T silu(const T& x) {
    return x * sigmoid(x);
}
template <class T>
T silu_grad(const T& x) {
    T s = sigmoid(x);
    return s * (T(1.0) + x * (T(1.0) - s));
}

// ---- tensor product ----------------------------------------------------------

class TensorProduct {
public:
    struct Path {
        int l1, l2, l3;
        std::vector<CGTensor::Entry> entries;
    };

    /// in1/in2 multiplicities must be 1 or `channels`; out multiplicity must
    /// equal `channels`. Every output l needs at least one path, otherwise
    /// ConfigError.
    TensorProduct(IrrepsLayout in1, IrrepsLayout in2, IrrepsLayout out, int channels);

    const IrrepsLayout& in1() const { return in1_; }
    const IrrepsLayout& in2() const { return in2_; }
    const IrrepsLayout& out() const { return out_; }
    int channels() const { return c_; }
    /// Paths ordered by (l1, l2, l3).
    const std::vector<Path>& paths() const { return paths_; }
    std::size_t weight_count() const { return paths_.size() * static_cast<std::size_t>(c_); }

    /// out += sum_paths w[p][c] * CG * u[l1][m1][c] * v[l2][m2][c]
    template <class T>
    void forward(const T* u, const T* v, const T* w, T* out) const;

    template <class T>
    void backward(const T* u, const T* v, const T* w, const T* g_out, T* g_u, T* g_v, T* g_w) const;

private:
    template <class T>
    const T* widen(const IrrepsLayout& lay, int l, const T* row, int slot) const;

    IrrepsLayout in1_, in2_, out_;
    int c_;
    std::vector<Path> paths_;
};

// ---- self-interaction --------------------------------------------------------

/// Per-l channel mixing out^l = W^l in^l, plus a bias on l = 0. Output orders
/// must be a subset of the input orders; input blocks absent from the output
/// are dropped. Weight layout: for each output l, W^l[c_out][c_in]; then
/// b[c_out] when the output has an l = 0 block.
class SelfInteraction {
public:
    SelfInteraction(IrrepsLayout in, IrrepsLayout out);
    const IrrepsLayout& in() const { return in_; }
    const IrrepsLayout& out() const { return out_; }
    std::size_t weight_count() const { return count_; }
    std::size_t weight_offset(int l) const;
    std::size_t bias_offset() const { return bias_; }
    void init(double* p, std::mt19937_64& rng) const;

    template <class T, class X>
    void forward(const double* p, const X* in, T* out) const;
    template <class T, class X>
    void backward(const double* p, const X* in, const T* g_out, T* g_in, T* g_p) const;

private:
    IrrepsLayout in_, out_;
    std::vector<std::size_t> woff_;  // per out entry
    std::size_t bias_ = 0;
    std::size_t count_ = 0;
};

// ---- MLP -------------------------------------------------------------------

/// y = W2 silu(W1 x + b1) + b2. Weight layout: W1[h][in], b1[h], W2[o][h], b2[o].
/// Without bias the b1/b2 slots are absent and MLP(0) = 0.
class Mlp {
public:
    Mlp() = default;
    Mlp(int n_in, int n_hidden, int n_out, bool bias = true);
    int n_in() const { return in_; }
    int n_hidden() const { return hid_; }
    int n_out() const { return out_; }
    bool has_bias() const { return bias_; }
    std::size_t weight_count() const;
    void init(double* p, std::mt19937_64& rng) const;

    /// `pre` receives the hidden pre-activations (n_hidden), reused by backward.
    template <class T, class X>
    void forward(const double* p, const X* x, T* pre, T* y) const;
    template <class T, class X>
    void backward(const double* p, const X* x, const T* pre, const T* g_y, T* g_x, T* g_p) const;

private:
    int in_ = 0, hid_ = 0, out_ = 0;
    bool bias_ = true;
};

// ---- symmetric contraction -------------------------------------------------

/// Species-weighted symmetric contraction of v_max atomic bases into the
/// target orders. For each target L and species s the weights W[s][eta][c]
/// are first folded with the generalized couplings into dense tensors
/// T_v[(k_1..k_v), M][c] (k = l^2 + l + m); the node features are then
/// contracted one basis at a time, starting from the highest order:
///   a_{v-1} = sum_{k_v} (T_v + a_v)[.., k_v, M] * A_v[k_v],   a_{v_max} = 0.
/// Weight layout: for each target L, for v = 1..v_max: [species][path][c].
class SymmetricContraction {
public:
    SymmetricContraction(int channels, int l_in, std::vector<int> targets, int v_max, int n_species);
    /// Uses an existing table; ConfigError when it lacks a (target, v) entry.
    SymmetricContraction(int channels, GeneralizedCGTable table, std::vector<int> targets, int n_species);

    int channels() const { return c_; }
    int v_max() const { return vmax_; }
    int n_species() const { return ns_; }
    const IrrepsLayout& in() const { return in_; }
    const IrrepsLayout& out() const { return out_; }
    const GeneralizedCGTable& table() const { return table_; }
    /// Edits the couplings in place (fault injection). Call refresh() after.
    GeneralizedCGTable& mutable_table() { return table_; }
    void refresh();

    std::size_t weight_count() const { return count_; }
    /// Offset of W[s][path][0] for (L, v).
    std::size_t weight_offset(int L, int v, int species, std::size_t path) const;
    std::size_t path_count(int L, int v) const;
    void init(double* p, std::mt19937_64& rng) const;

    /// A[v-1] points at n_nodes rows of layout in(); out has layout out().
    template <class T>
    void forward(const double* p, std::span<const T* const> A, std::span<const int> species, T* out) const;
    /// g_A entries may be null; g_p may be null.
    template <class T>
    void backward(const double* p, std::span<const T* const> A, std::span<const int> species, const T* g_out,
                  std::span<T* const> g_A, T* g_p) const;

private:
    struct Nz {
        std::uint32_t idx;
        double value;
    };
    struct Step {
        std::uint32_t s, o, k;
    };
    struct Level {
        std::vector<std::vector<Nz>> paths;  // dense index into T_v per path
        std::vector<std::uint32_t> t_pattern;
        std::vector<std::uint32_t> s_pattern;  // T_v and a_v combined
        std::vector<Step> steps;
        std::size_t size = 0;  // D^v * (2L+1)
        std::size_t woff = 0;
    };
    struct Target {
        int L;
        std::vector<Level> levels;  // index v-1
    };

    template <class T>
    void build_T(const double* p, const Target& tg, int s, std::vector<std::vector<double>>& Tv) const;

    int c_, lin_, vmax_, ns_;
    std::size_t D_;
    IrrepsLayout in_, out_;
    GeneralizedCGTable table_;
    std::vector<Target> targets_;
    std::size_t count_ = 0;
};

// ---- whole-tensor conveniences ---------------------------------------------

/// w holds either P*C shared weights or rows*P*C per-row weights.
IrrepsTensor<double> weighted_tensor_product(const IrrepsTensor<double>& u, const IrrepsTensor<double>& v,
                                             std::span<const double> w, const IrrepsLayout& out_layout);

struct SIWeights {
    IrrepsLayout out;
    std::vector<double> values;  // SelfInteraction weight layout
};
IrrepsTensor<double> self_interaction(const IrrepsTensor<double>& A, const SIWeights& w);

struct ContractionWeights {
    std::vector<double> values;  // SymmetricContraction weight layout
};
IrrepsTensor<double> symmetric_contraction(std::span<const IrrepsTensor<double>> bases, std::span<const int> species,
                                           int n_species, const ContractionWeights& w,
                                           const GeneralizedCGTable& table, const IrrepsLayout& out_layout);

struct MlpParams {
    Mlp shape;
    std::vector<double> values;
};
std::vector<double> invariant_mlp(std::span<const double> x, const MlpParams& params);

// ============================================================================
// template implementations
// ============================================================================

template <class T>
const T* TensorProduct::widen(const IrrepsLayout& lay, int l, const T* row, int slot) const {
    const T* blk = row + lay.offset(l);
    if (lay.mul(l) == c_) return blk;
    const std::size_t d = static_cast<std::size_t>(2 * l + 1), C = static_cast<std::size_t>(c_);
    auto& buf = detail::scratch<T>(slot, d * C);
    for (std::size_t m = 0; m < d; ++m)
        for (std::size_t c = 0; c < C; ++c) buf[m * C + c] = blk[m];
    return buf.data();
}

template <class T>
void TensorProduct::forward(const T* u, const T* v, const T* w, T* out) const {
    using namespace kernels;
    const std::size_t C = static_cast<std::size_t>(c_);
    for (std::size_t p = 0; p < paths_.size(); ++p) {
        const Path& P = paths_[p];
        const T* ub = widen(in1_, P.l1, u, 0);
        const T* vb = widen(in2_, P.l2, v, 1);
        T* ob = out + out_.offset(P.l3);
        const T* wp = w + p * C;
        const std::size_t d1 = static_cast<std::size_t>(2 * P.l1 + 1);
        auto& wu = detail::scratch<T>(2, d1 * C);
        for (std::size_t m = 0; m < d1; ++m) mul(wu.data() + m * C, wp, ub + m * C, C);
        for (const auto& e : P.entries)
            mul_acc(ob + static_cast<std::size_t>(e.m3) * C, wu.data() + static_cast<std::size_t>(e.m1) * C,
                    vb + static_cast<std::size_t>(e.m2) * C, e.value, C);
    }
}

template <class T>
void TensorProduct::backward(const T* u, const T* v, const T* w, const T* g_out, T* g_u, T* g_v, T* g_w) const {
    using namespace kernels;
    const std::size_t C = static_cast<std::size_t>(c_);
    for (std::size_t p = 0; p < paths_.size(); ++p) {
        const Path& P = paths_[p];
        const std::size_t d1 = static_cast<std::size_t>(2 * P.l1 + 1), d2 = static_cast<std::size_t>(2 * P.l2 + 1);
        const T* ub = widen(in1_, P.l1, u, 0);
        const T* vb = widen(in2_, P.l2, v, 1);
        const T* gb = g_out + out_.offset(P.l3);
        const T* wp = w + p * C;
        if (g_u || g_w) {
            auto& s = detail::scratch<T>(2, d1 * C);
            std::fill(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(d1 * C), T(0.0));
            for (const auto& e : P.entries)
                mul_acc(s.data() + static_cast<std::size_t>(e.m1) * C, vb + static_cast<std::size_t>(e.m2) * C,
                        gb + static_cast<std::size_t>(e.m3) * C, e.value, C);
            if (g_w)
                for (std::size_t m = 0; m < d1; ++m) mul_acc(g_w + p * C, ub + m * C, s.data() + m * C, 1.0, C);
            if (g_u) {
                T* gu = g_u + in1_.offset(P.l1);
                if (in1_.mul(P.l1) == c_) {
                    for (std::size_t m = 0; m < d1; ++m) mul_acc(gu + m * C, wp, s.data() + m * C, 1.0, C);
                } else {
                    for (std::size_t m = 0; m < d1; ++m) gu[m] += dot(wp, s.data() + m * C, C);
                }
            }
        }
        if (g_v) {
            auto& wu = detail::scratch<T>(2, d1 * C);
            for (std::size_t m = 0; m < d1; ++m) mul(wu.data() + m * C, wp, ub + m * C, C);
            T* gv = g_v + in2_.offset(P.l2);
            if (in2_.mul(P.l2) == c_) {
                for (const auto& e : P.entries)
                    mul_acc(gv + static_cast<std::size_t>(e.m2) * C, wu.data() + static_cast<std::size_t>(e.m1) * C,
                            gb + static_cast<std::size_t>(e.m3) * C, e.value, C);
            } else {
                for (const auto& e : P.entries)
                    gv[e.m2] += dot(wu.data() + static_cast<std::size_t>(e.m1) * C,
                                    gb + static_cast<std::size_t>(e.m3) * C, C) *
                                e.value;
            }
            (void)d2;
        }
    }
}

template <class T, class X>
void SelfInteraction::forward(const double* p, const X* in, T* out) const {
    using namespace kernels;
    auto entries = out_.entries();
    for (std::size_t e = 0; e < entries.size(); ++e) {
        const int l = entries[e].l;
        const std::size_t co = static_cast<std::size_t>(entries[e].mul), ci = static_cast<std::size_t>(in_.mul(l));
        const X* ib = in + in_.offset(l);
        T* ob = out + out_.offset(l);
        const double* W = p + woff_[e];
        for (int m = 0; m < 2 * l + 1; ++m)
            for (std::size_t c = 0; c < co; ++c)
                ob[static_cast<std::size_t>(m) * co + c] += dot(W + c * ci, ib + static_cast<std::size_t>(m) * ci, ci);
        if (l == 0)
            for (std::size_t c = 0; c < co; ++c) ob[c] += p[bias_ + c];
    }
}

template <class T, class X>
void SelfInteraction::backward(const double* p, const X* in, const T* g_out, T* g_in, T* g_p) const {
    using namespace kernels;
    auto entries = out_.entries();
    for (std::size_t e = 0; e < entries.size(); ++e) {
        const int l = entries[e].l;
        const std::size_t co = static_cast<std::size_t>(entries[e].mul), ci = static_cast<std::size_t>(in_.mul(l));
        const X* ib = in + in_.offset(l);
        const T* gb = g_out + out_.offset(l);
        const double* W = p + woff_[e];
        for (int m = 0; m < 2 * l + 1; ++m) {
            const T* g = gb + static_cast<std::size_t>(m) * co;
            const X* x = ib + static_cast<std::size_t>(m) * ci;
            for (std::size_t c = 0; c < co; ++c) {
                if (g_in) axpy(g_in + in_.offset(l) + static_cast<std::size_t>(m) * ci, W + c * ci, g[c], ci);
                if (g_p) axpy(g_p + woff_[e] + c * ci, x, g[c], ci);
            }
        }
        if (l == 0 && g_p)
            for (std::size_t c = 0; c < co; ++c) g_p[bias_ + c] += gb[c];
    }
}

template <class T, class X>
void Mlp::forward(const double* p, const X* x, T* pre, T* y) const {
    using namespace kernels;
    const std::size_t ni = static_cast<std::size_t>(in_), nh = static_cast<std::size_t>(hid_),
                      no = static_cast<std::size_t>(out_);
    const double* W1 = p;
    const double* b1 = W1 + nh * ni;
    const double* W2 = bias_ ? b1 + nh : b1;
    const double* b2 = W2 + no * nh;
    auto& act = detail::scratch<T>(3, nh);
    for (std::size_t h = 0; h < nh; ++h) {
        pre[h] = bias_ ? dot(W1 + h * ni, x, ni) + b1[h] : dot(W1 + h * ni, x, ni);
        act[h] = silu(pre[h]);
    }
    for (std::size_t o = 0; o < no; ++o) {
        if (bias_)
            y[o] += dot(W2 + o * nh, act.data(), nh) + b2[o];
        else
            y[o] += dot(W2 + o * nh, act.data(), nh);
    }
}

template <class T, class X>
void Mlp::backward(const double* p, const X* x, const T* pre, const T* g_y, T* g_x, T* g_p) const {
    using namespace kernels;
    const std::size_t ni = static_cast<std::size_t>(in_), nh = static_cast<std::size_t>(hid_),
                      no = static_cast<std::size_t>(out_);
    const double* W1 = p;
    const std::size_t b1n = bias_ ? nh : 0;
    const double* W2 = W1 + nh * ni + b1n;
    auto& gh = detail::scratch<T>(3, nh);
    std::fill(gh.begin(), gh.begin() + static_cast<std::ptrdiff_t>(nh), T(0.0));
    for (std::size_t o = 0; o < no; ++o) axpy(gh.data(), W2 + o * nh, g_y[o], nh);
    if (g_p) {
        T* gW2 = g_p + nh * ni + b1n;
        T* gb2 = gW2 + no * nh;
        for (std::size_t h = 0; h < nh; ++h) {
            T a = silu(pre[h]);
            for (std::size_t o = 0; o < no; ++o) gW2[o * nh + h] += g_y[o] * a;
        }
        if (bias_)
            for (std::size_t o = 0; o < no; ++o) gb2[o] += g_y[o];
    }
    for (std::size_t h = 0; h < nh; ++h) gh[h] = gh[h] * silu_grad(pre[h]);
    if (g_p) {
        T* gW1 = g_p;
        T* gb1 = g_p + nh * ni;
        for (std::size_t h = 0; h < nh; ++h) {
            axpy(gW1 + h * ni, x, gh[h], ni);
            if (bias_) gb1[h] += gh[h];
        }
    }
    if (g_x)
        for (std::size_t h = 0; h < nh; ++h) axpy(g_x, W1 + h * ni, gh[h], ni);
}

template <class T>
void SymmetricContraction::build_T(const double* p, const Target& tg, int s,
                                   std::vector<std::vector<double>>& Tv) const {
    const std::size_t C = static_cast<std::size_t>(c_);
    Tv.resize(static_cast<std::size_t>(vmax_));
    for (int v = 1; v <= vmax_; ++v) {
        const Level& lv = tg.levels[static_cast<std::size_t>(v - 1)];
        auto& t = Tv[static_cast<std::size_t>(v - 1)];
        t.assign(lv.size * C, 0.0);
        for (std::size_t q = 0; q < lv.paths.size(); ++q) {
            const double* w = p + lv.woff + (static_cast<std::size_t>(s) * lv.paths.size() + q) * C;
            for (const Nz& z : lv.paths[q]) kernels::axpy(t.data() + z.idx * C, w, z.value, C);
        }
    }
}

template <class T>
void SymmetricContraction::forward(const double* p, std::span<const T* const> A, std::span<const int> species,
                                   T* out) const {
    using namespace kernels;
    if (A.size() != static_cast<std::size_t>(vmax_)) throw InputError("symmetric contraction needs v_max bases");
    const std::size_t C = static_cast<std::size_t>(c_), win = in_.dim(), wout = out_.dim();
    const std::size_t n = species.size();
    std::vector<std::vector<double>> Tv;
    std::vector<std::vector<T>> a(static_cast<std::size_t>(vmax_));
    std::vector<std::vector<T>> S(static_cast<std::size_t>(vmax_));
    for (const Target& tg : targets_) {
        const std::size_t O = static_cast<std::size_t>(2 * tg.L + 1);
        for (int v = 0; v < vmax_; ++v) {
            std::size_t asz = (v == 0 ? O : tg.levels[static_cast<std::size_t>(v - 1)].size) * C;
            a[static_cast<std::size_t>(v)].assign(asz, T(0.0));
            S[static_cast<std::size_t>(v)].assign(tg.levels[static_cast<std::size_t>(v)].size * C, T(0.0));
        }
        for (int s = 0; s < ns_; ++s) {
            bool any = false;
            for (std::size_t i = 0; i < n; ++i) any = any || species[i] == s;
            if (!any) continue;
            build_T<T>(p, tg, s, Tv);
            for (std::size_t i = 0; i < n; ++i) {
                if (species[i] != s) continue;
                for (int v = vmax_; v >= 1; --v) {
                    const Level& lv = tg.levels[static_cast<std::size_t>(v - 1)];
                    const T* Av = A[static_cast<std::size_t>(v - 1)] + i * win;
                    auto& dst = a[static_cast<std::size_t>(v - 1)];
                    std::fill(dst.begin(), dst.end(), T(0.0));
                    if (v == vmax_) {
                        const double* Sv = Tv[static_cast<std::size_t>(v - 1)].data();
                        for (const Step& st : lv.steps)
                            mul_acc(dst.data() + st.o * C, Sv + st.s * C, Av + st.k * C, 1.0, C);
                    } else {
                        auto& Sv = S[static_cast<std::size_t>(v - 1)];
                        const double* Tr = Tv[static_cast<std::size_t>(v - 1)].data();
                        const T* av = a[static_cast<std::size_t>(v)].data();
                        for (std::uint32_t idx : lv.s_pattern)
                            for (std::size_t c = 0; c < C; ++c) Sv[idx * C + c] = av[idx * C + c] + Tr[idx * C + c];
                        for (const Step& st : lv.steps)
                            mul_acc(dst.data() + st.o * C, Sv.data() + st.s * C, Av + st.k * C, 1.0, C);
                    }
                }
                T* ob = out + i * wout + out_.offset(tg.L);
                for (std::size_t q = 0; q < O * C; ++q) ob[q] += a[0][q];
            }
        }
    }
}

template <class T>
void SymmetricContraction::backward(const double* p, std::span<const T* const> A, std::span<const int> species,
                                    const T* g_out, std::span<T* const> g_A, T* g_p) const {
    using namespace kernels;
    const std::size_t C = static_cast<std::size_t>(c_), win = in_.dim(), wout = out_.dim();
    const std::size_t n = species.size();
    const std::size_t V = static_cast<std::size_t>(vmax_);
    std::vector<std::vector<double>> Tv;
    std::vector<std::vector<T>> a(V + 1), S(V), gT(V);
    for (const Target& tg : targets_) {
        const std::size_t O = static_cast<std::size_t>(2 * tg.L + 1);
        a[0].assign(O * C, T(0.0));
        for (std::size_t v = 1; v <= V; ++v) {
            a[v].assign(tg.levels[v - 1].size * C, T(0.0));
            S[v - 1].assign(tg.levels[v - 1].size * C, T(0.0));
        }
        for (int s = 0; s < ns_; ++s) {
            bool any = false;
            for (std::size_t i = 0; i < n; ++i) any = any || species[i] == s;
            if (!any) continue;
            build_T<T>(p, tg, s, Tv);
            if (g_p)
                for (std::size_t v = 0; v < V; ++v) gT[v].assign(tg.levels[v].size * C, T(0.0));
            for (std::size_t i = 0; i < n; ++i) {
                if (species[i] != s) continue;
                // Recompute S_v = T_v + a_v for v < v_max.
                std::vector<T>& top = a[V];
                std::fill(top.begin(), top.end(), T(0.0));
                for (std::size_t v = V; v >= 1; --v) {
                    const Level& lv = tg.levels[v - 1];
                    const T* Av = A[v - 1] + i * win;
                    if (v == V) {
                        if (V == 1) break;
                        auto& dst = a[v - 1];
                        std::fill(dst.begin(), dst.end(), T(0.0));
                        const double* Sv = Tv[v - 1].data();
                        for (const Step& st : lv.steps)
                            mul_acc(dst.data() + st.o * C, Sv + st.s * C, Av + st.k * C, 1.0, C);
                        continue;
                    }
                    auto& Sv = S[v - 1];
                    const double* Tr = Tv[v - 1].data();
                    const T* av = a[v].data();
                    for (std::uint32_t idx : lv.s_pattern)
                        for (std::size_t c = 0; c < C; ++c) Sv[idx * C + c] = av[idx * C + c] + Tr[idx * C + c];
                    if (v == 1) break;
                    auto& dst = a[v - 1];
                    std::fill(dst.begin(), dst.end(), T(0.0));
                    for (const Step& st : lv.steps)
                        mul_acc(dst.data() + st.o * C, Sv.data() + st.s * C, Av + st.k * C, 1.0, C);
                }
                // Reverse sweep: g holds the cotangent of a_{v-1}.
                std::vector<T>& g0 = a[0];
                const T* go = g_out + i * wout + out_.offset(tg.L);
                for (std::size_t q = 0; q < O * C; ++q) g0[q] = go[q];
                for (std::size_t v = 1; v <= V; ++v) {
                    const Level& lv = tg.levels[v - 1];
                    const T* Av = A[v - 1] + i * win;
                    T* gAv = g_A[v - 1] ? g_A[v - 1] + i * win : nullptr;
                    const T* gin = a[v - 1].data();
                    std::vector<T>& gS = a[v];  // a_v is no longer needed
                    std::fill(gS.begin(), gS.end(), T(0.0));
                    if (v == V) {
                        const double* Sv = Tv[v - 1].data();
                        for (const Step& st : lv.steps) {
                            if (gAv) mul_acc(gAv + st.k * C, Sv + st.s * C, gin + st.o * C, 1.0, C);
                            if (g_p) mul_acc(gT[v - 1].data() + st.s * C, Av + st.k * C, gin + st.o * C, 1.0, C);
                        }
                    } else {
                        const T* Sv = S[v - 1].data();
                        for (const Step& st : lv.steps) {
                            if (gAv) mul_acc(gAv + st.k * C, Sv + st.s * C, gin + st.o * C, 1.0, C);
                            mul_acc(gS.data() + st.s * C, Av + st.k * C, gin + st.o * C, 1.0, C);
                        }
                        if (g_p)
                            for (std::uint32_t idx : lv.t_pattern)
                                for (std::size_t c = 0; c < C; ++c) gT[v - 1][idx * C + c] += gS[idx * C + c];
                    }
                }
            }
            if (g_p) {
                for (std::size_t v = 1; v <= V; ++v) {
                    const Level& lv = tg.levels[v - 1];
                    for (std::size_t q = 0; q < lv.paths.size(); ++q) {
                        T* gw = g_p + lv.woff + (static_cast<std::size_t>(s) * lv.paths.size() + q) * C;
                        for (const Nz& z : lv.paths[q]) axpy(gw, gT[v - 1].data() + z.idx * C, z.value, C);
                    }
                }
            }
        }
    }
}

}  // namespace pace
