#include "pace/equiv_ops.hpp"

#include <algorithm>
#include <set>

namespace pace {

// ---- tensor product ----------------------------------------------------------

TensorProduct::TensorProduct(IrrepsLayout in1, IrrepsLayout in2, IrrepsLayout out, int channels)
    : in1_(std::move(in1)), in2_(std::move(in2)), out_(std::move(out)), c_(channels) {
    if (c_ <= 0) throw ConfigError("tensor product needs a positive channel count");
    for (const Irrep& e : in1_.entries())
        if (e.mul != 1 && e.mul != c_) throw ConfigError("tensor product input multiplicity must be 1 or C");
    for (const Irrep& e : in2_.entries())
        if (e.mul != 1 && e.mul != c_) throw ConfigError("tensor product input multiplicity must be 1 or C");
    for (const Irrep& e : out_.entries())
        if (e.mul != c_) throw ConfigError("tensor product output multiplicity must equal C");
    for (const Irrep& a : in1_.entries())
        for (const Irrep& b : in2_.entries())
            for (const Irrep& o : out_.entries()) {
                if (o.l < std::abs(a.l - b.l) || o.l > a.l + b.l) continue;
                auto nz = clebsch_gordan(a.l, b.l, o.l).nonzeros();
                if (!nz.empty()) paths_.push_back({a.l, b.l, o.l, std::move(nz)});
            }
    for (const Irrep& o : out_.entries()) {
        bool hit = std::any_of(paths_.begin(), paths_.end(), [&](const Path& p) { return p.l3 == o.l; });
        if (!hit) throw ConfigError("output order l=" + std::to_string(o.l) + " is unreachable from the inputs");
    }
}

// ---- self-interaction --------------------------------------------------------

SelfInteraction::SelfInteraction(IrrepsLayout in, IrrepsLayout out) : in_(std::move(in)), out_(std::move(out)) {
    for (const Irrep& e : out_.entries()) {
        if (!in_.contains(e.l))
            throw ConfigError("self-interaction output l=" + std::to_string(e.l) + " missing from the input");
        woff_.push_back(count_);
        count_ += static_cast<std::size_t>(e.mul) * static_cast<std::size_t>(in_.mul(e.l));
    }
    bias_ = count_;
    if (out_.contains(0)) count_ += static_cast<std::size_t>(out_.mul(0));
}

std::size_t SelfInteraction::weight_offset(int l) const {
    auto entries = out_.entries();
    for (std::size_t e = 0; e < entries.size(); ++e)
        if (entries[e].l == l) return woff_[e];
    throw InputError("self-interaction has no l=" + std::to_string(l) + " block");
}

void SelfInteraction::init(double* p, std::mt19937_64& rng) const {
    auto entries = out_.entries();
    for (std::size_t e = 0; e < entries.size(); ++e) {
        const int ci = in_.mul(entries[e].l);
        const double a = std::sqrt(3.0 / ci);
        std::uniform_real_distribution<double> u(-a, a);
        const std::size_t n = static_cast<std::size_t>(entries[e].mul) * static_cast<std::size_t>(ci);
        for (std::size_t i = 0; i < n; ++i) p[woff_[e] + i] = u(rng);
    }
    for (std::size_t i = bias_; i < count_; ++i) p[i] = 0.0;
}

// ---- MLP -------------------------------------------------------------------

Mlp::Mlp(int n_in, int n_hidden, int n_out, bool bias) : in_(n_in), hid_(n_hidden), out_(n_out), bias_(bias) {
    if (n_in <= 0 || n_hidden <= 0 || n_out <= 0) throw ConfigError("MLP sizes must be positive");
}

std::size_t Mlp::weight_count() const {
    const auto ni = static_cast<std::size_t>(in_), nh = static_cast<std::size_t>(hid_),
               no = static_cast<std::size_t>(out_);
    return bias_ ? nh * ni + nh + no * nh + no : nh * ni + no * nh;
}

void Mlp::init(double* p, std::mt19937_64& rng) const {
    const auto ni = static_cast<std::size_t>(in_), nh = static_cast<std::size_t>(hid_),
               no = static_cast<std::size_t>(out_);
    std::uniform_real_distribution<double> u1(-std::sqrt(3.0 / in_), std::sqrt(3.0 / in_));
    std::uniform_real_distribution<double> u2(-std::sqrt(3.0 / hid_), std::sqrt(3.0 / hid_));
    std::size_t k = 0;
    for (std::size_t i = 0; i < nh * ni; ++i) p[k++] = u1(rng);
    if (bias_)
        for (std::size_t i = 0; i < nh; ++i) p[k++] = 0.0;
    for (std::size_t i = 0; i < no * nh; ++i) p[k++] = u2(rng);
    if (bias_)
        for (std::size_t i = 0; i < no; ++i) p[k++] = 0.0;
}

// ---- symmetric contraction -------------------------------------------------

namespace {
IrrepsLayout target_layout(int channels, const std::vector<int>& targets) {
    std::vector<Irrep> e;
    for (int L : targets) e.push_back({channels, L});
    return IrrepsLayout(std::move(e));
}
}  // namespace

SymmetricContraction::SymmetricContraction(int channels, int l_in, std::vector<int> targets, int v_max,
                                           int n_species)
    : SymmetricContraction(channels, GeneralizedCGTable(l_in, targets, v_max), targets, n_species) {}

SymmetricContraction::SymmetricContraction(int channels, GeneralizedCGTable table, std::vector<int> targets,
                                           int n_species)
    : c_(channels),
      lin_(table.l_max()),
      vmax_(table.v_max()),
      ns_(n_species),
      D_(sh_dim(table.l_max())),
      in_(IrrepsLayout::uniform(channels, 0, table.l_max())),
      out_(target_layout(channels, targets)),
      table_(std::move(table)) {
    if (c_ <= 0 || ns_ <= 0) throw ConfigError("contraction needs positive channel and species counts");
    std::sort(targets.begin(), targets.end());
    for (int L : targets) {
        Target tg;
        tg.L = L;
        tg.levels.resize(static_cast<std::size_t>(vmax_));
        for (int v = 1; v <= vmax_; ++v) {
            Level& lv = tg.levels[static_cast<std::size_t>(v - 1)];
            lv.woff = count_;
            count_ += static_cast<std::size_t>(ns_) * table_.at(L, v).size() * static_cast<std::size_t>(c_);
        }
        targets_.push_back(std::move(tg));
    }
    refresh();
}

void SymmetricContraction::refresh() {
    for (Target& tg : targets_) {
        const std::size_t O = static_cast<std::size_t>(2 * tg.L + 1);
        std::set<std::uint32_t> a_pattern;  // pattern of a_v, filled from level v+1
        for (int v = vmax_; v >= 1; --v) {
            Level& lv = tg.levels[static_cast<std::size_t>(v - 1)];
            std::size_t Dv = 1;
            for (int i = 0; i < v; ++i) Dv *= D_;
            lv.size = Dv * O;
            lv.paths.clear();
            std::set<std::uint32_t> tp;
            for (const PathBlock& pb : table_.at(tg.L, v)) {
                std::vector<Nz> nz;
                const auto& ls = pb.path.ls;
                std::vector<std::size_t> dims;
                for (int l : ls) dims.push_back(static_cast<std::size_t>(2 * l + 1));
                for (std::size_t flat = 0; flat < pb.block.size(); ++flat) {
                    double val = pb.block[flat];
                    if (val == 0.0) continue;
                    std::size_t rem = flat / O, M = flat % O;
                    std::vector<std::size_t> ms(ls.size());
                    for (std::size_t j = ls.size(); j-- > 0;) {
                        ms[j] = rem % dims[j];
                        rem /= dims[j];
                    }
                    std::size_t idx = 0;
                    for (std::size_t j = 0; j < ls.size(); ++j)
                        idx = idx * D_ + static_cast<std::size_t>(ls[j] * ls[j]) + ms[j];
                    idx = idx * O + M;
                    nz.push_back({static_cast<std::uint32_t>(idx), val});
                    tp.insert(static_cast<std::uint32_t>(idx));
                }
                lv.paths.push_back(std::move(nz));
            }
            lv.t_pattern.assign(tp.begin(), tp.end());
            std::set<std::uint32_t> sp = tp;
            if (v < vmax_) sp.insert(a_pattern.begin(), a_pattern.end());
            lv.s_pattern.assign(sp.begin(), sp.end());
            lv.steps.clear();
            a_pattern.clear();
            for (std::uint32_t s : lv.s_pattern) {
                std::size_t M = s % O, k = (s / O) % D_, pre = s / (O * D_);
                auto o = static_cast<std::uint32_t>(pre * O + M);
                lv.steps.push_back({s, o, static_cast<std::uint32_t>(k)});
                a_pattern.insert(o);
            }
        }
    }
}

std::size_t SymmetricContraction::path_count(int L, int v) const {
    for (const Target& tg : targets_)
        if (tg.L == L) return tg.levels.at(static_cast<std::size_t>(v - 1)).paths.size();
    throw ConfigError("contraction has no target L=" + std::to_string(L));
}

std::size_t SymmetricContraction::weight_offset(int L, int v, int species, std::size_t path) const {
    for (const Target& tg : targets_)
        if (tg.L == L) {
            const Level& lv = tg.levels.at(static_cast<std::size_t>(v - 1));
            return lv.woff + (static_cast<std::size_t>(species) * lv.paths.size() + path) * static_cast<std::size_t>(c_);
        }
    throw ConfigError("contraction has no target L=" + std::to_string(L));
}

void SymmetricContraction::init(double* p, std::mt19937_64& rng) const {
    for (const Target& tg : targets_)
        for (const Level& lv : tg.levels) {
            if (lv.paths.empty()) continue;
            const double a = std::sqrt(3.0 / static_cast<double>(lv.paths.size()));
            std::uniform_real_distribution<double> u(-a, a);
            const std::size_t n = static_cast<std::size_t>(ns_) * lv.paths.size() * static_cast<std::size_t>(c_);
            for (std::size_t i = 0; i < n; ++i) p[lv.woff + i] = u(rng);
        }
}

// ---- conveniences ------------------------------------------------------------

IrrepsTensor<double> weighted_tensor_product(const IrrepsTensor<double>& u, const IrrepsTensor<double>& v,
                                             std::span<const double> w, const IrrepsLayout& out_layout) {
    if (out_layout.empty()) throw ConfigError("empty output layout");
    const int C = out_layout.entries()[0].mul;
    TensorProduct tp(u.layout, v.layout, out_layout, C);
    if (u.rows != v.rows) throw InputError("tensor product inputs have different row counts");
    const std::size_t per = tp.weight_count();
    const bool shared = w.size() == per;
    if (!shared && w.size() != per * u.rows) throw InputError("tensor product weight count mismatch");
    IrrepsTensor<double> out(out_layout, u.rows);
    for (std::size_t i = 0; i < u.rows; ++i)
        tp.forward(u.row(i).data(), v.row(i).data(), w.data() + (shared ? 0 : i * per), out.row(i).data());
    return out;
}

IrrepsTensor<double> self_interaction(const IrrepsTensor<double>& A, const SIWeights& w) {
    SelfInteraction si(A.layout, w.out);
    if (w.values.size() != si.weight_count()) throw InputError("self-interaction weight count mismatch");
    IrrepsTensor<double> out(w.out, A.rows);
    for (std::size_t i = 0; i < A.rows; ++i) si.forward(w.values.data(), A.row(i).data(), out.row(i).data());
    return out;
}

IrrepsTensor<double> symmetric_contraction(std::span<const IrrepsTensor<double>> bases, std::span<const int> species,
                                           int n_species, const ContractionWeights& w,
                                           const GeneralizedCGTable& table, const IrrepsLayout& out_layout) {
    if (bases.size() != static_cast<std::size_t>(table.v_max()))
        throw ConfigError("expected v_max atomic bases");
    if (out_layout.empty()) throw ConfigError("empty output layout");
    const int C = out_layout.entries()[0].mul;
    std::vector<int> targets;
    for (const Irrep& e : out_layout.entries()) targets.push_back(e.l);
    SymmetricContraction sc(C, table, targets, n_species);
    if (!(sc.out() == out_layout)) throw ConfigError("contraction output layout must be uniform");
    if (w.values.size() != sc.weight_count()) throw InputError("contraction weight count mismatch");
    std::vector<const double*> ptrs;
    for (const auto& b : bases) {
        if (!(b.layout == sc.in()) || b.rows != species.size()) throw InputError("atomic basis shape mismatch");
        ptrs.push_back(b.data.data());
    }
    IrrepsTensor<double> out(out_layout, species.size());
    sc.forward<double>(w.values.data(), ptrs, species, out.data.data());
    return out;
}

std::vector<double> invariant_mlp(std::span<const double> x, const MlpParams& params) {
    if (x.size() != static_cast<std::size_t>(params.shape.n_in())) throw InputError("MLP input size mismatch");
    if (params.values.size() != params.shape.weight_count()) throw InputError("MLP parameter count mismatch");
    std::vector<double> pre(static_cast<std::size_t>(params.shape.n_hidden()));
    std::vector<double> y(static_cast<std::size_t>(params.shape.n_out()), 0.0);
    params.shape.forward(params.values.data(), x.data(), pre.data(), y.data());
    return y;
}

}  // namespace pace
