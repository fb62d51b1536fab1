#include "pace/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>
#include <random>

#include "pace/error.hpp"

namespace pace {

// ---- configuration ----------------------------------------------------------

void ModelConfig::validate() const {
    auto bad = [](const std::string& field, const std::string& why) {
        throw ConfigError("model config: " + field + " " + why);
    };
    if (channels < 1) bad("channels", "must be positive");
    if (l_max < 0 || l_max > kMaxL) bad("l_max", "must lie in [0, 6]");
    if (l_hidden < 0 || l_hidden > l_max) bad("l_hidden", "must lie in [0, l_max]");
    if (v_max < 1) bad("v_max", "must be at least 1");
    if (mlp_hidden < 1) bad("mlp_hidden", "must be positive");
    if (l_max * n_boost() > kMaxL) bad("l_max", "times the boost count exceeds 6");
    radial.validate();
    if (species.empty()) bad("species", "must not be empty");
    for (std::size_t i = 0; i < species.size(); ++i) {
        if (species[i] < 1 || species[i] > 118) bad("species", "holds an invalid atomic number");
        if (i > 0 && species[i] <= species[i - 1]) bad("species", "must be strictly ascending");
    }
}

nlohmann::json ModelConfig::to_json() const {
    return {{"channels", channels},
            {"l_max", l_max},
            {"l_hidden", l_hidden},
            {"v_max", v_max},
            {"edge_booster", edge_booster},
            {"extra_si", extra_si},
            {"mlp_hidden", mlp_hidden},
            {"radial",
             {{"kind", to_string(radial.kind)},
              {"n_basis", radial.n_basis},
              {"cutoff", radial.cutoff},
              {"p", radial.p}}},
            {"species", species}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    std::string field;
    try {
        if (!j.is_object()) throw ConfigError("model config must be a JSON object");
        auto get = [&](const nlohmann::json& o, const char* key, auto& dst) {
            field = key;
            if (o.contains(key)) dst = o.at(key).get<std::remove_reference_t<decltype(dst)>>();
        };
        get(j, "channels", c.channels);
        get(j, "l_max", c.l_max);
        get(j, "l_hidden", c.l_hidden);
        get(j, "v_max", c.v_max);
        get(j, "edge_booster", c.edge_booster);
        get(j, "extra_si", c.extra_si);
        get(j, "mlp_hidden", c.mlp_hidden);
        get(j, "species", c.species);
        if (j.contains("radial")) {
            const auto& r = j.at("radial");
            std::string kind = to_string(c.radial.kind);
            get(r, "kind", kind);
            c.radial.kind = parse_radial_kind(kind);
            get(r, "n_basis", c.radial.n_basis);
            get(r, "cutoff", c.radial.cutoff);
            get(r, "p", c.radial.p);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("model config field '" + field + "': " + e.what());
    }
    return c;
}

nlohmann::json stats_to_json(const DatasetStats& s) {
    return {{"mean_energy", s.mean_energy},
            {"energy_per_atom", s.energy_per_atom},
            {"force_std", s.force_std},
            {"avg_neighbors", s.avg_neighbors}};
}

DatasetStats stats_from_json(const nlohmann::json& j) {
    DatasetStats s;
    try {
        s.mean_energy = j.value("mean_energy", 0.0);
        s.energy_per_atom = j.value("energy_per_atom", 0.0);
        s.force_std = j.value("force_std", 1.0);
        s.avg_neighbors = j.value("avg_neighbors", 0.0);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad dataset statistics: ") + e.what());
    }
    return s;
}

// ---- parameters -----------------------------------------------------------

std::size_t Parameters::add(std::string name, std::vector<std::size_t> shape) {
    if (contains(name)) throw ConfigError("duplicate parameter name " + name);
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    ParamTensor t{std::move(name), std::move(shape), values.size(), n};
    values.resize(values.size() + n, 0.0);
    grads.resize(values.size(), 0.0);
    tensors_.push_back(std::move(t));
    return tensors_.back().offset;
}

bool Parameters::contains(const std::string& name) const {
    return std::any_of(tensors_.begin(), tensors_.end(), [&](const ParamTensor& t) { return t.name == name; });
}

const ParamTensor& Parameters::find(const std::string& name) const {
    for (const auto& t : tensors_)
        if (t.name == name) return t;
    throw InputError("no parameter named " + name);
}

std::span<double> Parameters::view(const std::string& name) {
    const auto& t = find(name);
    return {values.data() + t.offset, t.size};
}

std::span<const double> Parameters::view(const std::string& name) const {
    const auto& t = find(name);
    return {values.data() + t.offset, t.size};
}

void Parameters::zero_grad() { std::fill(grads.begin(), grads.end(), 0.0); }

// ---- structure --------------------------------------------------------------

namespace {

struct LayerMods {
    IrrepsLayout prev;  // layout of x_prev
    std::vector<IrrepsLayout> parts;
    std::vector<std::vector<SelfInteraction>> si;  // [set][part]
    std::vector<std::vector<std::size_t>> si_off;
    std::optional<SymmetricContraction> sc;
    std::size_t sc_off = 0;
    std::optional<SelfInteraction> skip;
    std::size_t skip_off = 0;

    std::size_t out_dim() const { return sc->out().dim(); }
    std::size_t a_dim() const { return sc->in().dim(); }
};

}  // namespace

struct Model::Impl {
    int C = 0, H = 0, K = 0, Ly = 0, Lb = 0, Lh = 0, nb = 0, V = 0;
    bool eb = true;
    RadialConfig radial;
    IrrepsLayout LY, L0, LA, LB, LH;
    Mlp pair_h, pair_w2, pair_w3, rad_w1, rad_w2, rad_w3, out1, out2;
    std::optional<TensorProduct> tp1, tp2, tp3a, tp3b;
    LayerMods layer[2];
    std::size_t off_embed = 0, off_pair_h = 0, off_pair_w2 = 0, off_pair_w3 = 0;
    std::size_t off_rad_w1 = 0, off_rad_w2 = 0, off_rad_w3 = 0, off_gamma = 0, off_out1 = 0, off_out2 = 0;
    std::size_t P1C = 0, P2C = 0, P3aC = 0, P3bC = 0;

    std::size_t P3C() const { return P3aC + P3bC; }
    std::size_t dA() const { return LA.dim(); }
    std::size_t dB() const { return eb ? LB.dim() : 0; }
};

namespace {

std::size_t add_mlp(Parameters& P, const std::string& name, const Mlp& m) {
    const auto ni = static_cast<std::size_t>(m.n_in()), nh = static_cast<std::size_t>(m.n_hidden()),
               no = static_cast<std::size_t>(m.n_out());
    std::size_t off = P.add(name + ".W1", {nh, ni});
    if (m.has_bias()) P.add(name + ".b1", {nh});
    P.add(name + ".W2", {no, nh});
    if (m.has_bias()) P.add(name + ".b2", {no});
    return off;
}

std::size_t add_si(Parameters& P, const std::string& name, const SelfInteraction& si) {
    std::size_t off = P.size();
    for (const Irrep& e : si.out().entries())
        P.add(name + ".W" + std::to_string(e.l),
              {static_cast<std::size_t>(e.mul), static_cast<std::size_t>(si.in().mul(e.l))});
    if (si.out().contains(0)) P.add(name + ".b", {static_cast<std::size_t>(si.out().mul(0))});
    if (P.size() - off != si.weight_count()) throw ConfigError("self-interaction weight layout mismatch");
    return off;
}

/// Edge harmonics in component normalisation (Y^0 = 1).
constexpr double kShScale = 3.5449077018110318;  // sqrt(4 pi)

template <class T>
void edge_sh(const T& x, const T& y, const T& z, int lmax, T* out) {
    spherical_harmonics(x, y, z, lmax, out);
    for (std::size_t k = 0; k < sh_dim(lmax); ++k) out[k] = out[k] * kShScale;
}

template <class T>
void zero(std::vector<T>& v, std::size_t n) {
    v.assign(n, T(0.0));
}

template <class T, class G>
void radial_eval(const Model::Impl& I, const T& d, const G& gamma, T* out) {
    if (I.radial.kind == RadialKind::bessel)
        bessel_basis(d, I.radial, out);
    else
        exp_bernstein_basis(d, I.radial, gamma, out);
}

/// Pair-MLP terms for one ordered species pair (or one edge in the layer API).
struct PairRow {
    std::vector<double> in, pre_h, h, pre2, q2, pre3, q3;
};

void pair_row(const Model::Impl& I, const double* p, const double* xa, const double* xb, PairRow& r) {
    const std::size_t C = static_cast<std::size_t>(I.C), H = static_cast<std::size_t>(I.H);
    r.in.assign(2 * C, 0.0);
    std::copy(xa, xa + C, r.in.begin());
    std::copy(xb, xb + C, r.in.begin() + static_cast<std::ptrdiff_t>(C));
    r.pre_h.assign(H, 0.0);
    r.h.assign(C, 0.0);
    I.pair_h.forward<double, double>(p + I.off_pair_h, r.in.data(), r.pre_h.data(), r.h.data());
    if (I.eb) {
        r.pre2.assign(H, 0.0);
        r.q2.assign(I.P2C, 0.0);
        I.pair_w2.forward<double, double>(p + I.off_pair_w2, r.in.data(), r.pre2.data(), r.q2.data());
    }
    r.pre3.assign(H, 0.0);
    r.q3.assign(I.P3C(), 0.0);
    I.pair_w3.forward<double, double>(p + I.off_pair_w3, r.in.data(), r.pre3.data(), r.q3.data());
}

/// m11 and m12 of one edge; m11, m12 and w1 must be zero on entry.
template <class T>
void message1(const Model::Impl& I, const double* p, const T* Y, const T* rbf, const T* h, const double* q2, T* pre1,
              T* w1, T* pre2, T* w2, T* m11, T* m12) {
    I.rad_w1.forward(p + I.off_rad_w1, rbf, pre1, w1);
    I.tp1->forward(Y, h, w1, m11);
    if (I.eb) {
        for (std::size_t k = 0; k < I.P2C; ++k) w2[k] = T(q2[k]);
        I.rad_w2.forward(p + I.off_rad_w2, rbf, pre2, w2);
        I.tp2->forward(Y, m11, w2, m12);
    }
}

/// Second-layer message parts; m2a and m2b must be zero on entry.
template <class T>
void message2(const Model::Impl& I, const double* p, const T* rbf, const double* q3, const T* m11, const T* m12,
              const T* x1j, T* pre3, T* w3, T* m2a, T* m2b) {
    for (std::size_t k = 0; k < I.P3C(); ++k) w3[k] = T(q3[k]);
    I.rad_w3.forward(p + I.off_rad_w3, rbf, pre3, w3);
    I.tp3a->forward(m11, x1j, w3, m2a);
    if (I.eb) I.tp3b->forward(m12, x1j, w3 + I.P3aC, m2b);
}

std::vector<double> inverse_counts(const MolecularGraph& g) {
    std::vector<double> inv(g.n_nodes(), 0.0);
    for (const Edge& e : g.edges) inv[static_cast<std::size_t>(e.center)] += 1.0;
    for (double& v : inv) v = v > 0 ? 1.0 / v : 0.0;
    return inv;
}

template <class T>
void aggregate_rows(const MolecularGraph& g, const std::vector<double>& inv, const T* msg, std::size_t w, T* out) {
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        const auto i = static_cast<std::size_t>(g.edges[e].center);
        kernels::axpy(out + i * w, msg + e * w, inv[i], w);
    }
}

/// x_new = contract(SI_v(parts)) + SI(x_prev). `out` must be zero on entry.
template <class T, class X>
void layer_forward(const LayerMods& L, const double* p, const std::vector<const T*>& parts, std::span<const int> species,
                   const X* x_prev, std::vector<std::vector<T>>& B, T* out) {
    const std::size_t n = species.size(), dA = L.a_dim(), V = static_cast<std::size_t>(L.sc->v_max());
    B.resize(L.si.size());
    for (std::size_t k = 0; k < L.si.size(); ++k) {
        zero(B[k], n * dA);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t q = 0; q < L.parts.size(); ++q)
                L.si[k][q].forward(p + L.si_off[k][q], parts[q] + i * L.parts[q].dim(), B[k].data() + i * dA);
    }
    std::vector<const T*> ptr(V);
    for (std::size_t v = 0; v < V; ++v) ptr[v] = B[L.si.size() == 1 ? 0 : v].data();
    L.sc->forward<T>(p + L.sc_off, ptr, species, out);
    const std::size_t dp = L.prev.dim(), dout = L.out_dim();
    for (std::size_t i = 0; i < n; ++i) L.skip->forward(p + L.skip_off, x_prev + i * dp, out + i * dout);
}

template <class T, class X>
void layer_backward(const LayerMods& L, const double* p, const std::vector<const T*>& parts,
                    std::span<const int> species, const X* x_prev, const std::vector<std::vector<T>>& B,
                    const T* g_out, const std::vector<T*>& g_parts, T* g_prev, T* gp) {
    const std::size_t n = species.size(), dA = L.a_dim(), V = static_cast<std::size_t>(L.sc->v_max());
    const std::size_t dp = L.prev.dim(), dout = L.out_dim();
    for (std::size_t i = 0; i < n; ++i)
        L.skip->backward(p + L.skip_off, x_prev + i * dp, g_out + i * dout, g_prev ? g_prev + i * dp : nullptr,
                         gp ? gp + L.skip_off : nullptr);
    std::vector<std::vector<T>> gB(L.si.size());
    for (auto& b : gB) zero(b, n * dA);
    std::vector<const T*> ptr(V);
    std::vector<T*> gptr(V);
    for (std::size_t v = 0; v < V; ++v) {
        std::size_t k = L.si.size() == 1 ? 0 : v;
        ptr[v] = B[k].data();
        gptr[v] = gB[k].data();
    }
    L.sc->backward<T>(p + L.sc_off, ptr, species, g_out, gptr, gp ? gp + L.sc_off : nullptr);
    for (std::size_t k = 0; k < L.si.size(); ++k)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t q = 0; q < L.parts.size(); ++q) {
                const std::size_t w = L.parts[q].dim();
                L.si[k][q].backward(p + L.si_off[k][q], parts[q] + i * w, gB[k].data() + i * dA,
                                    g_parts[q] ? g_parts[q] + i * w : nullptr,
                                    gp ? gp + L.si_off[k][q] : nullptr);
            }
}

}  // namespace

// ---- construction -------------------------------------------------------------

Model::Model(ModelConfig cfg, DatasetStats stats, std::uint64_t seed)
    : cfg_(std::move(cfg)), stats_(stats), impl_(std::make_unique<Impl>()) {
    cfg_.validate();
    Impl& I = *impl_;
    I.C = cfg_.channels;
    I.H = cfg_.mlp_hidden;
    I.K = static_cast<int>(cfg_.species.size());
    I.Ly = cfg_.l_max;
    I.Lb = cfg_.edge_booster ? std::min(2 * cfg_.l_max, kMaxL) : cfg_.l_max;
    I.Lh = cfg_.l_hidden;
    I.nb = cfg_.radial.n_basis;
    I.V = cfg_.v_max;
    I.eb = cfg_.edge_booster;
    I.radial = cfg_.radial;
    const int C = I.C;
    I.LY = IrrepsLayout::uniform(1, 0, I.Ly);
    I.L0 = IrrepsLayout::uniform(C, 0, 0);
    I.LA = IrrepsLayout::uniform(C, 0, I.Ly);
    I.LB = IrrepsLayout::uniform(C, 0, I.Lb);
    I.LH = IrrepsLayout::uniform(C, 0, I.Lh);

    I.tp1.emplace(I.LY, I.L0, I.LA, C);
    I.P1C = I.tp1->weight_count();
    if (I.eb) {
        I.tp2.emplace(I.LY, I.LA, I.LB, C);
        I.P2C = I.tp2->weight_count();
    }
    I.tp3a.emplace(I.LA, I.LH, I.LA, C);
    I.P3aC = I.tp3a->weight_count();
    if (I.eb) {
        I.tp3b.emplace(I.LB, I.LH, I.LA, C);
        I.P3bC = I.tp3b->weight_count();
    }

    Parameters& P = params_;
    const auto Cs = static_cast<std::size_t>(C), Ks = static_cast<std::size_t>(I.K);
    I.off_embed = P.add("embedding", {Ks, Cs});
    I.pair_h = Mlp(2 * C, I.H, C);
    I.off_pair_h = add_mlp(P, "pair_h", I.pair_h);
    if (I.eb) {
        I.pair_w2 = Mlp(2 * C, I.H, static_cast<int>(I.P2C));
        I.off_pair_w2 = add_mlp(P, "pair_w2", I.pair_w2);
    }
    I.pair_w3 = Mlp(2 * C, I.H, static_cast<int>(I.P3C()));
    I.off_pair_w3 = add_mlp(P, "pair_w3", I.pair_w3);
    I.rad_w1 = Mlp(I.nb, I.H, static_cast<int>(I.P1C), false);
    I.off_rad_w1 = add_mlp(P, "radial_w1", I.rad_w1);
    if (I.eb) {
        I.rad_w2 = Mlp(I.nb, I.H, static_cast<int>(I.P2C), false);
        I.off_rad_w2 = add_mlp(P, "radial_w2", I.rad_w2);
    }
    I.rad_w3 = Mlp(I.nb, I.H, static_cast<int>(I.P3C()), false);
    I.off_rad_w3 = add_mlp(P, "radial_w3", I.rad_w3);
    if (cfg_.radial.kind == RadialKind::exp_bernstein) I.off_gamma = P.add("radial.gamma", {1});

    const int n_sets = cfg_.extra_si ? I.V : 1;
    for (int layer = 0; layer < 2; ++layer) {
        LayerMods& L = I.layer[layer];
        const std::string pre = "layer" + std::to_string(layer + 1);
        L.prev = layer == 0 ? I.L0 : I.LH;
        L.parts = {I.LA};
        if (I.eb) L.parts.push_back(layer == 0 ? I.LB : I.LA);
        L.si.resize(static_cast<std::size_t>(n_sets));
        L.si_off.resize(static_cast<std::size_t>(n_sets));
        for (int k = 0; k < n_sets; ++k)
            for (std::size_t q = 0; q < L.parts.size(); ++q) {
                L.si[static_cast<std::size_t>(k)].emplace_back(L.parts[q], I.LA);
                L.si_off[static_cast<std::size_t>(k)].push_back(
                    add_si(P, pre + ".si" + std::to_string(k + 1) + ".part" + std::to_string(q + 1),
                           L.si[static_cast<std::size_t>(k)].back()));
            }
        std::vector<int> targets;
        if (layer == 0)
            for (int l = 0; l <= I.Lh; ++l) targets.push_back(l);
        else
            targets = {0};
        L.sc.emplace(C, I.Ly, targets, I.V, I.K);
        L.sc_off = P.add(pre + ".contraction", {L.sc->weight_count()});
        L.skip.emplace(L.prev, I.L0);
        L.skip_off = add_si(P, pre + ".skip", *L.skip);
    }
    I.out1 = Mlp(C, I.H, 1);
    I.off_out1 = add_mlp(P, "readout1", I.out1);
    I.out2 = Mlp(C, I.H, 1);
    I.off_out2 = add_mlp(P, "readout2", I.out2);

    // Initial values, drawn in registration order.
    std::mt19937_64 rng(seed);
    double* p = P.values.data();
    std::uniform_real_distribution<double> emb(-std::sqrt(3.0), std::sqrt(3.0));
    for (std::size_t k = 0; k < Ks * Cs; ++k) p[I.off_embed + k] = emb(rng);
    I.pair_h.init(p + I.off_pair_h, rng);
    if (I.eb) I.pair_w2.init(p + I.off_pair_w2, rng);
    I.pair_w3.init(p + I.off_pair_w3, rng);
    I.rad_w1.init(p + I.off_rad_w1, rng);
    if (I.eb) I.rad_w2.init(p + I.off_rad_w2, rng);
    I.rad_w3.init(p + I.off_rad_w3, rng);
    if (cfg_.radial.kind == RadialKind::exp_bernstein) p[I.off_gamma] = kDefaultBernsteinGamma;
    for (auto& L : I.layer) {
        for (std::size_t k = 0; k < L.si.size(); ++k)
            for (std::size_t q = 0; q < L.si[k].size(); ++q) L.si[k][q].init(p + L.si_off[k][q], rng);
        L.sc->init(p + L.sc_off, rng);
        L.skip->init(p + L.skip_off, rng);
    }
    I.out1.init(p + I.off_out1, rng);
    I.out2.init(p + I.off_out2, rng);
}

Model::Model(const Model& o) : cfg_(o.cfg_), stats_(o.stats_), params_(o.params_), impl_(std::make_unique<Impl>(*o.impl_)) {}
Model& Model::operator=(const Model& o) {
    if (this != &o) {
        cfg_ = o.cfg_;
        stats_ = o.stats_;
        params_ = o.params_;
        impl_ = std::make_unique<Impl>(*o.impl_);
    }
    return *this;
}
Model::Model(Model&&) noexcept = default;
Model& Model::operator=(Model&&) noexcept = default;
Model::~Model() = default;

void Model::perturb_coupling(int layer, int L, int v, std::size_t path, double delta) {
    if (layer != 1 && layer != 2) throw InputError("layer must be 1 or 2");
    auto& sc = *impl_->layer[layer - 1].sc;
    auto& blocks = sc.mutable_table().mutable_at(L, v);
    if (path >= blocks.size()) throw InputError("coupling path index out of range");
    for (double& x : blocks[path].block) x += delta;
    sc.refresh();
}

// ---- evaluation ------------------------------------------------------------------

template <class T>
EvalResult<T> Model::evaluate(const MolecularGraph& g, const EvalRequest<T>& req) const {
    using std::sqrt;
    const Impl& I = *impl_;
    const double* p = params_.values.data();
    const std::size_t n = g.n_nodes(), nE = g.edges.size(), nm = g.n_molecules();
    const std::size_t C = static_cast<std::size_t>(I.C), H = static_cast<std::size_t>(I.H),
                      K = static_cast<std::size_t>(I.K), nb = static_cast<std::size_t>(I.nb);
    const std::size_t SY = sh_dim(I.Ly), dA = I.dA(), dB = I.dB(), dH = I.LH.dim();
    if (req.positions.size() != 3 * n) throw InputError("positions must hold 3 values per node");
    if (!req.energy_seeds.empty() && req.energy_seeds.size() != nm)
        throw InputError("energy seeds must hold one value per molecule");
    for (int s : g.species)
        if (s < 0 || static_cast<std::size_t>(s) >= K) throw DataError("graph species outside the model alphabet");
    const std::span<const int> sp(g.species);
    const T* pos = req.positions.data();

    // Species-pair terms (position independent).
    std::vector<PairRow> pairs(K * K);
    std::vector<T> hT(K * K * C);
    for (std::size_t a = 0; a < K; ++a)
        for (std::size_t b = 0; b < K; ++b) {
            PairRow& r = pairs[a * K + b];
            pair_row(I, p, p + I.off_embed + a * C, p + I.off_embed + b * C, r);
            for (std::size_t c = 0; c < C; ++c) hT[(a * K + b) * C + c] = T(r.h[c]);
        }
    auto pair_of = [&](const Edge& e) {
        return static_cast<std::size_t>(sp[static_cast<std::size_t>(e.center)]) * K +
               static_cast<std::size_t>(sp[static_cast<std::size_t>(e.neighbor)]);
    };
    const T gamma = I.radial.kind == RadialKind::exp_bernstein ? T(p[I.off_gamma]) : T(0.0);

    // Layer 1 messages.
    std::vector<T> rv(3 * nE), dist(nE), Y(nE * SY), rbf(nE * nb);
    std::vector<T> pre1(nE * H), w1, pre2(nE * H), w2(nE * I.P2C), pre3(nE * H), w3(nE * I.P3C()), m11, m12;
    zero(w1, nE * I.P1C);
    zero(m11, nE * dA);
    zero(m12, nE * dB);
    for (std::size_t e = 0; e < nE; ++e) {
        const Edge& ed = g.edges[e];
        const auto i = static_cast<std::size_t>(ed.center), j = static_cast<std::size_t>(ed.neighbor);
        for (int k = 0; k < 3; ++k) rv[3 * e + k] = pos[3 * j + k] - pos[3 * i + k];
        dist[e] = sqrt(rv[3 * e] * rv[3 * e] + rv[3 * e + 1] * rv[3 * e + 1] + rv[3 * e + 2] * rv[3 * e + 2]);
        edge_sh(rv[3 * e], rv[3 * e + 1], rv[3 * e + 2], I.Ly, Y.data() + e * SY);
        radial_eval(I, dist[e], gamma, rbf.data() + e * nb);
        const std::size_t pr = pair_of(ed);
        message1(I, p, Y.data() + e * SY, rbf.data() + e * nb, hT.data() + pr * C,
                 I.eb ? pairs[pr].q2.data() : nullptr, pre1.data() + e * H, w1.data() + e * I.P1C,
                 pre2.data() + e * H, w2.data() + e * I.P2C, m11.data() + e * dA, m12.data() + e * dB);
    }
    const std::vector<double> inv = inverse_counts(g);
    std::vector<T> A11, A12;
    zero(A11, n * dA);
    zero(A12, n * dB);
    aggregate_rows(g, inv, m11.data(), dA, A11.data());
    if (I.eb) aggregate_rows(g, inv, m12.data(), dB, A12.data());

    // Layer 1 update.
    std::vector<double> x0(n * C);
    for (std::size_t i = 0; i < n; ++i)
        std::copy_n(p + I.off_embed + static_cast<std::size_t>(sp[i]) * C, C, x0.begin() + static_cast<std::ptrdiff_t>(i * C));
    std::vector<const T*> parts1{A11.data()};
    if (I.eb) parts1.push_back(A12.data());
    std::vector<std::vector<T>> B1, B2;
    std::vector<T> x1;
    zero(x1, n * dH);
    layer_forward(I.layer[0], p, parts1, sp, x0.data(), B1, x1.data());

    // Layer 2.
    std::vector<T> m2a, m2b;
    zero(m2a, nE * dA);
    zero(m2b, I.eb ? nE * dA : 0);
    for (std::size_t e = 0; e < nE; ++e) {
        const Edge& ed = g.edges[e];
        const auto j = static_cast<std::size_t>(ed.neighbor);
        message2(I, p, rbf.data() + e * nb, pairs[pair_of(ed)].q3.data(), m11.data() + e * dA,
                 I.eb ? m12.data() + e * dB : nullptr, x1.data() + j * dH, pre3.data() + e * H,
                 w3.data() + e * I.P3C(), m2a.data() + e * dA, I.eb ? m2b.data() + e * dA : nullptr);
    }
    std::vector<T> A2a, A2b;
    zero(A2a, n * dA);
    zero(A2b, I.eb ? n * dA : 0);
    aggregate_rows(g, inv, m2a.data(), dA, A2a.data());
    if (I.eb) aggregate_rows(g, inv, m2b.data(), dA, A2b.data());
    std::vector<const T*> parts2{A2a.data()};
    if (I.eb) parts2.push_back(A2b.data());
    std::vector<T> x2;
    zero(x2, n * C);
    layer_forward(I.layer[1], p, parts2, sp, x1.data(), B2, x2.data());

    // Readout.
    EvalResult<T> res;
    res.energies.assign(nm, T(stats_.mean_energy));
    std::vector<T> pro1(n * H), pro2(n * H);
    for (std::size_t i = 0; i < n; ++i) {
        T e1(0.0), e2(0.0);
        I.out1.forward(p + I.off_out1, x1.data() + i * dH, pro1.data() + i * H, &e1);
        I.out2.forward(p + I.off_out2, x2.data() + i * C, pro2.data() + i * H, &e2);
        res.energies[static_cast<std::size_t>(g.node_molecule[i])] += e1 + e2;
    }
    if (req.energy_seeds.empty()) return res;

    // ---- reverse sweep ----
    T* gp = req.param_grad;
    auto gpo = [&](std::size_t off) -> T* { return gp ? gp + off : nullptr; };
    std::vector<T> gx1, gx2;
    zero(gx1, n * dH);
    zero(gx2, n * C);
    for (std::size_t i = 0; i < n; ++i) {
        const T& gE = req.energy_seeds[static_cast<std::size_t>(g.node_molecule[i])];
        I.out1.backward(p + I.off_out1, x1.data() + i * dH, pro1.data() + i * H, &gE, gx1.data() + i * dH,
                        gpo(I.off_out1));
        I.out2.backward(p + I.off_out2, x2.data() + i * C, pro2.data() + i * H, &gE, gx2.data() + i * C,
                        gpo(I.off_out2));
    }
    std::vector<T> gA2a, gA2b;
    zero(gA2a, n * dA);
    zero(gA2b, I.eb ? n * dA : 0);
    std::vector<T*> gparts2{gA2a.data()};
    if (I.eb) gparts2.push_back(gA2b.data());
    layer_backward(I.layer[1], p, parts2, sp, x1.data(), B2, gx2.data(), gparts2, gx1.data(), gp);

    std::vector<T> gm11, gm12, gw3, gq3(K * K * I.P3C());
    zero(gm11, nE * dA);
    zero(gm12, nE * dB);
    zero(gw3, nE * I.P3C());
    std::fill(gq3.begin(), gq3.end(), T(0.0));
    {
        std::vector<T> gmsg(dA);
        for (std::size_t e = 0; e < nE; ++e) {
            const Edge& ed = g.edges[e];
            const auto i = static_cast<std::size_t>(ed.center), j = static_cast<std::size_t>(ed.neighbor);
            const T* w3e = w3.data() + e * I.P3C();
            T* gw3e = gw3.data() + e * I.P3C();
            for (std::size_t k = 0; k < dA; ++k) gmsg[k] = gA2a[i * dA + k] * inv[i];
            I.tp3a->backward(m11.data() + e * dA, x1.data() + j * dH, w3e, gmsg.data(), gm11.data() + e * dA,
                             gx1.data() + j * dH, gw3e);
            if (I.eb) {
                for (std::size_t k = 0; k < dA; ++k) gmsg[k] = gA2b[i * dA + k] * inv[i];
                I.tp3b->backward(m12.data() + e * dB, x1.data() + j * dH, w3e + I.P3aC, gmsg.data(),
                                 gm12.data() + e * dB, gx1.data() + j * dH, gw3e + I.P3aC);
            }
        }
    }

    std::vector<T> gA11, gA12, gx0;
    zero(gA11, n * dA);
    zero(gA12, n * dB);
    zero(gx0, gp ? n * C : 0);
    std::vector<T*> gparts1{gA11.data()};
    if (I.eb) gparts1.push_back(gA12.data());
    layer_backward(I.layer[0], p, parts1, sp, x0.data(), B1, gx1.data(), gparts1, gp ? gx0.data() : nullptr, gp);

    // Edge adjoints down to SH, radial features and pair terms.
    std::vector<T> gY(SY), grbf(nb), gw1(I.P1C), gw2(I.P2C), gh(C), ghp(gp ? K * K * C : 0, T(0.0)),
        gq2(gp ? K * K * I.P2C : 0, T(0.0));
    if (req.position_grad) zero(res.position_grad, 3 * n);
    using TT = Dual<T>;
    std::vector<TT> tY(SY), trbf(nb);
    T ggamma(0.0);
    for (std::size_t e = 0; e < nE; ++e) {
        const Edge& ed = g.edges[e];
        const auto i = static_cast<std::size_t>(ed.center), j = static_cast<std::size_t>(ed.neighbor);
        const std::size_t pr = pair_of(ed);
        T* gm11e = gm11.data() + e * dA;
        for (std::size_t k = 0; k < dA; ++k) gm11e[k] += gA11[i * dA + k] * inv[i];
        std::fill(gY.begin(), gY.end(), T(0.0));
        std::fill(grbf.begin(), grbf.end(), T(0.0));
        std::fill(gw1.begin(), gw1.end(), T(0.0));
        std::fill(gh.begin(), gh.end(), T(0.0));
        const T* Ye = Y.data() + e * SY;
        const T* rbfe = rbf.data() + e * nb;
        if (I.eb) {
            T* gm12e = gm12.data() + e * dB;
            for (std::size_t k = 0; k < dB; ++k) gm12e[k] += gA12[i * dB + k] * inv[i];
            std::fill(gw2.begin(), gw2.end(), T(0.0));
            I.tp2->backward(Ye, m11.data() + e * dA, w2.data() + e * I.P2C, gm12e, gY.data(), gm11e, gw2.data());
            I.rad_w2.backward(p + I.off_rad_w2, rbfe, pre2.data() + e * H, gw2.data(), grbf.data(), gpo(I.off_rad_w2));
            if (gp)
                for (std::size_t k = 0; k < I.P2C; ++k) gq2[pr * I.P2C + k] += gw2[k];
        }
        I.tp1->backward(Ye, hT.data() + pr * C, w1.data() + e * I.P1C, gm11e, gY.data(), gh.data(), gw1.data());
        I.rad_w1.backward(p + I.off_rad_w1, rbfe, pre1.data() + e * H, gw1.data(), grbf.data(), gpo(I.off_rad_w1));
        const T* gw3e = gw3.data() + e * I.P3C();
        I.rad_w3.backward(p + I.off_rad_w3, rbfe, pre3.data() + e * H, gw3e, grbf.data(), gpo(I.off_rad_w3));
        if (gp) {
            for (std::size_t k = 0; k < C; ++k) ghp[pr * C + k] += gh[k];
            for (std::size_t k = 0; k < I.P3C(); ++k) gq3[pr * I.P3C() + k] += gw3e[k];
        }
        if (gp && I.radial.kind == RadialKind::exp_bernstein) {
            radial_eval(I, TT(dist[e]), TT(gamma, T(1.0)), trbf.data());
            for (std::size_t k = 0; k < nb; ++k) ggamma += grbf[k] * trbf[k].d;
        }
        if (req.position_grad) {
            const T* r = rv.data() + 3 * e;
            T gr[3] = {T(0.0), T(0.0), T(0.0)};
            for (int c = 0; c < 3; ++c) {
                TT x[3] = {TT(r[0]), TT(r[1]), TT(r[2])};
                x[c].d = T(1.0);
                edge_sh(x[0], x[1], x[2], I.Ly, tY.data());
                for (std::size_t k = 0; k < SY; ++k) gr[c] += gY[k] * tY[k].d;
            }
            radial_eval(I, TT(dist[e], T(1.0)), TT(gamma), trbf.data());
            T gd(0.0);
            for (std::size_t k = 0; k < nb; ++k) gd += grbf[k] * trbf[k].d;
            for (int c = 0; c < 3; ++c) {
                T v = gr[c] + gd * r[c] / dist[e];
                res.position_grad[3 * j + c] += v;
                res.position_grad[3 * i + c] -= v;
            }
        }
    }
    if (!gp) return res;
    if (I.radial.kind == RadialKind::exp_bernstein) gp[I.off_gamma] += ggamma;

    // Pair MLPs and the embedding.
    std::vector<T> gin(2 * C), preT(H);
    for (std::size_t i = 0; i < n; ++i)
        kernels::axpy(gp + I.off_embed + static_cast<std::size_t>(sp[i]) * C, gx0.data() + i * C, 1.0, C);
    for (std::size_t a = 0; a < K; ++a)
        for (std::size_t b = 0; b < K; ++b) {
            const std::size_t pr = a * K + b;
            const PairRow& r = pairs[pr];
            std::fill(gin.begin(), gin.end(), T(0.0));
            for (std::size_t k = 0; k < H; ++k) preT[k] = T(r.pre_h[k]);
            I.pair_h.backward(p + I.off_pair_h, r.in.data(), preT.data(), ghp.data() + pr * C, gin.data(),
                              gp + I.off_pair_h);
            if (I.eb) {
                for (std::size_t k = 0; k < H; ++k) preT[k] = T(r.pre2[k]);
                I.pair_w2.backward(p + I.off_pair_w2, r.in.data(), preT.data(), gq2.data() + pr * I.P2C, gin.data(),
                                   gp + I.off_pair_w2);
            }
            for (std::size_t k = 0; k < H; ++k) preT[k] = T(r.pre3[k]);
            I.pair_w3.backward(p + I.off_pair_w3, r.in.data(), preT.data(), gq3.data() + pr * I.P3C(), gin.data(),
                               gp + I.off_pair_w3);
            kernels::axpy(gp + I.off_embed + a * C, gin.data(), 1.0, C);
            kernels::axpy(gp + I.off_embed + b * C, gin.data() + C, 1.0, C);
        }
    return res;
}

template EvalResult<double> Model::evaluate<double>(const MolecularGraph&, const EvalRequest<double>&) const;
template EvalResult<Dual<double>> Model::evaluate<Dual<double>>(const MolecularGraph&,
                                                                const EvalRequest<Dual<double>>&) const;

Prediction Model::predict(const MolecularGraph& g, std::span<const Vec3> positions) const {
    if (positions.size() != g.n_nodes()) throw InputError("positions do not match the graph");
    std::vector<double> flat(3 * positions.size());
    for (std::size_t i = 0; i < positions.size(); ++i)
        for (int k = 0; k < 3; ++k) flat[3 * i + k] = positions[i][k];
    std::vector<double> seeds(g.n_molecules(), 1.0);
    EvalRequest<double> req{flat, seeds, true, nullptr};
    auto r = evaluate(g, req);
    Prediction out;
    out.energies = std::move(r.energies);
    out.forces.resize(positions.size());
    for (std::size_t i = 0; i < positions.size(); ++i)
        for (int k = 0; k < 3; ++k) out.forces[i][k] = -r.position_grad[3 * i + k];
    return out;
}

Prediction Model::predict(const Structure& s) const {
    MolecularGraph g = build_graph(s, cfg_.cutoff(), cfg_.species);
    return predict(g, s.positions);
}

double Model::energy(const Structure& s) const {
    MolecularGraph g = build_graph(s, cfg_.cutoff(), cfg_.species);
    std::vector<double> flat(3 * s.size());
    for (std::size_t i = 0; i < s.size(); ++i)
        for (int k = 0; k < 3; ++k) flat[3 * i + k] = s.positions[i][k];
    return evaluate<double>(g, {flat, {}, false, nullptr}).energies.at(0);
}

// ---- layer operations ------------------------------------------------------------

IrrepsLayout Model::message1_layout() const {
    const Impl& I = *impl_;
    if (!I.eb) return I.LA;
    std::vector<Irrep> e;
    for (int l = 0; l <= I.Lb; ++l) e.push_back({l <= I.Ly ? 2 * I.C : I.C, l});
    return IrrepsLayout(e);
}

IrrepsLayout Model::message2_layout() const {
    const Impl& I = *impl_;
    return IrrepsLayout::uniform(I.eb ? 2 * I.C : I.C, 0, I.Ly);
}

IrrepsLayout Model::hidden_layout() const { return impl_->LH; }

namespace {

/// Splits a merged row set into parts (first C channels, remaining channels).
std::vector<std::vector<double>> split_merged(const IrrepsTensor<double>& t, const std::vector<IrrepsLayout>& parts,
                                              int C) {
    std::vector<std::vector<double>> out(parts.size());
    for (std::size_t q = 0; q < parts.size(); ++q) out[q].assign(t.rows * parts[q].dim(), 0.0);
    for (std::size_t i = 0; i < t.rows; ++i)
        for (const Irrep& e : t.layout.entries()) {
            const auto src = t.block(i, e.l);
            const int d = 2 * e.l + 1;
            // Channel offset of part q inside this merged block.
            int base = 0;
            for (std::size_t q = 0; q < parts.size(); ++q) {
                if (!parts[q].contains(e.l)) continue;
                double* dst = out[q].data() + i * parts[q].dim() + parts[q].offset(e.l);
                for (int m = 0; m < d; ++m)
                    for (int c = 0; c < C; ++c)
                        dst[m * C + c] = src[static_cast<std::size_t>(m * e.mul + base + c)];
                base += C;
            }
            if (base != e.mul) throw InputError("merged layout does not match the model");
        }
    return out;
}

IrrepsTensor<double> merge_parts(const IrrepsLayout& lay, std::size_t rows,
                                 const std::vector<std::pair<const double*, IrrepsLayout>>& parts, int C) {
    IrrepsTensor<double> t(lay, rows);
    for (std::size_t i = 0; i < rows; ++i)
        for (const Irrep& e : lay.entries()) {
            auto dst = t.block(i, e.l);
            const int d = 2 * e.l + 1;
            int base = 0;
            for (const auto& [ptr, pl] : parts) {
                if (!pl.contains(e.l)) continue;
                const double* src = ptr + i * pl.dim() + pl.offset(e.l);
                for (int m = 0; m < d; ++m)
                    for (int c = 0; c < C; ++c) dst[static_cast<std::size_t>(m * e.mul + base + c)] = src[m * C + c];
                base += C;
            }
        }
    return t;
}

void check_rows(const IrrepsTensor<double>& t, const IrrepsLayout& lay, std::size_t rows, const char* what) {
    if (!(t.layout == lay)) throw InputError(std::string(what) + " has layout " + t.layout.str() + ", expected " + lay.str());
    if (t.rows != rows) throw InputError(std::string(what) + " has the wrong number of rows");
}

}  // namespace

IrrepsTensor<double> Model::embed_nodes(const MolecularGraph& g) const {
    const Impl& I = *impl_;
    IrrepsTensor<double> x(I.L0, g.n_nodes());
    const std::size_t C = static_cast<std::size_t>(I.C);
    for (std::size_t i = 0; i < g.n_nodes(); ++i) {
        const int s = g.species[i];
        if (s < 0 || s >= I.K) throw DataError("species outside the model alphabet");
        std::copy_n(params_.values.data() + I.off_embed + static_cast<std::size_t>(s) * C, C, x.row(i).begin());
    }
    return x;
}

Model::EdgeFeatures Model::edge_features(const MolecularGraph& g, std::span<const Vec3> positions) const {
    const Impl& I = *impl_;
    if (positions.size() != g.n_nodes()) throw InputError("positions do not match the graph");
    EdgeFeatures f{IrrepsTensor<double>(I.LY, g.edges.size()), std::vector<double>(g.edges.size() * static_cast<std::size_t>(I.nb))};
    const double gamma = I.radial.kind == RadialKind::exp_bernstein ? params_.values[I.off_gamma] : 0.0;
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        const Edge& ed = g.edges[e];
        double r[3];
        for (int k = 0; k < 3; ++k)
            r[k] = positions[static_cast<std::size_t>(ed.neighbor)][k] - positions[static_cast<std::size_t>(ed.center)][k];
        double d = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
        edge_sh(r[0], r[1], r[2], I.Ly, f.sh.row(e).data());
        radial_eval(I, d, gamma, f.rbf.data() + e * static_cast<std::size_t>(I.nb));
    }
    return f;
}

IrrepsTensor<double> Model::edge_booster(const IrrepsTensor<double>& sh, std::span<const double> rbf,
                                         const IrrepsTensor<double>& x0c, const IrrepsTensor<double>& x0n) const {
    const Impl& I = *impl_;
    const std::size_t E = sh.rows, C = static_cast<std::size_t>(I.C), H = static_cast<std::size_t>(I.H),
                      nb = static_cast<std::size_t>(I.nb);
    check_rows(sh, I.LY, E, "spherical harmonics");
    check_rows(x0c, I.L0, E, "center embeddings");
    check_rows(x0n, I.L0, E, "neighbor embeddings");
    if (rbf.size() != E * nb) throw InputError("radial features have the wrong size");
    const double* p = params_.values.data();
    std::vector<double> m11(E * I.dA(), 0.0), m12(E * I.dB(), 0.0);
    std::vector<double> pre1(H), w1(I.P1C), pre2(H), w2(I.P2C);
    PairRow pr;
    for (std::size_t e = 0; e < E; ++e) {
        pair_row(I, p, x0c.row(e).data(), x0n.row(e).data(), pr);
        std::fill(w1.begin(), w1.end(), 0.0);
        message1<double>(I, p, sh.row(e).data(), rbf.data() + e * nb, pr.h.data(), I.eb ? pr.q2.data() : nullptr,
                         pre1.data(), w1.data(), pre2.data(), w2.data(), m11.data() + e * I.dA(),
                         m12.data() + e * I.dB());
    }
    (void)C;
    std::vector<std::pair<const double*, IrrepsLayout>> parts{{m11.data(), I.LA}};
    if (I.eb) parts.emplace_back(m12.data(), I.LB);
    return merge_parts(message1_layout(), E, parts, I.C);
}

IrrepsTensor<double> Model::aggregate(const IrrepsTensor<double>& messages, const MolecularGraph& g) const {
    if (messages.rows != g.edges.size()) throw InputError("one message per edge expected");
    IrrepsTensor<double> A(messages.layout, g.n_nodes());
    aggregate_rows(g, inverse_counts(g), messages.data.data(), messages.width(), A.data.data());
    return A;
}

IrrepsTensor<double> Model::many_body_update(int layer, const IrrepsTensor<double>& A,
                                             const IrrepsTensor<double>& x_prev, std::span<const int> species) const {
    const Impl& I = *impl_;
    if (layer != 1 && layer != 2) throw InputError("layer must be 1 or 2");
    const LayerMods& L = I.layer[layer - 1];
    const std::size_t n = species.size();
    check_rows(A, layer == 1 ? message1_layout() : message2_layout(), n, "atomic base");
    check_rows(x_prev, L.prev, n, "previous features");
    for (int s : species)
        if (s < 0 || s >= I.K) throw DataError("species outside the model alphabet");
    auto parts = split_merged(A, L.parts, I.C);
    std::vector<const double*> ptrs;
    for (auto& v : parts) ptrs.push_back(v.data());
    std::vector<std::vector<double>> B;
    IrrepsTensor<double> out(L.sc->out(), n);
    layer_forward(L, params_.values.data(), ptrs, species, x_prev.data.data(), B, out.data.data());
    return out;
}

IrrepsTensor<double> Model::layer2_message(const IrrepsTensor<double>& m1, std::span<const double> rbf,
                                           const IrrepsTensor<double>& x0c, const IrrepsTensor<double>& x0n,
                                           const IrrepsTensor<double>& x1n) const {
    const Impl& I = *impl_;
    const std::size_t E = m1.rows, H = static_cast<std::size_t>(I.H), nb = static_cast<std::size_t>(I.nb);
    check_rows(m1, message1_layout(), E, "first-layer messages");
    check_rows(x0c, I.L0, E, "center embeddings");
    check_rows(x0n, I.L0, E, "neighbor embeddings");
    check_rows(x1n, I.LH, E, "neighbor features");
    if (rbf.size() != E * nb) throw InputError("radial features have the wrong size");
    std::vector<IrrepsLayout> lays{I.LA};
    if (I.eb) lays.push_back(I.LB);
    auto parts = split_merged(m1, lays, I.C);
    const double* p = params_.values.data();
    std::vector<double> m2a(E * I.dA(), 0.0), m2b(I.eb ? E * I.dA() : 0, 0.0), pre3(H), w3(I.P3C());
    PairRow pr;
    for (std::size_t e = 0; e < E; ++e) {
        pair_row(I, p, x0c.row(e).data(), x0n.row(e).data(), pr);
        message2<double>(I, p, rbf.data() + e * nb, pr.q3.data(), parts[0].data() + e * I.dA(),
                         I.eb ? parts[1].data() + e * I.dB() : nullptr, x1n.row(e).data(), pre3.data(), w3.data(),
                         m2a.data() + e * I.dA(), I.eb ? m2b.data() + e * I.dA() : nullptr);
    }
    std::vector<std::pair<const double*, IrrepsLayout>> out{{m2a.data(), I.LA}};
    if (I.eb) out.emplace_back(m2b.data(), I.LA);
    return merge_parts(message2_layout(), E, out, I.C);
}

std::vector<double> Model::readout_energy(const IrrepsTensor<double>& x1, const IrrepsTensor<double>& x2,
                                          const MolecularGraph& g) const {
    const Impl& I = *impl_;
    const std::size_t n = g.n_nodes(), H = static_cast<std::size_t>(I.H);
    check_rows(x1, I.LH, n, "first-layer features");
    check_rows(x2, I.L0, n, "second-layer features");
    const double* p = params_.values.data();
    std::vector<double> E(g.n_molecules(), stats_.mean_energy), pre(H);
    for (std::size_t i = 0; i < n; ++i) {
        double e1 = 0, e2 = 0;
        I.out1.forward(p + I.off_out1, x1.row(i).data(), pre.data(), &e1);
        I.out2.forward(p + I.off_out2, x2.row(i).data(), pre.data(), &e2);
        E[static_cast<std::size_t>(g.node_molecule[i])] += e1 + e2;
    }
    return E;
}

// ---- checkpoints -------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'P', 'A', 'C', 'E'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kFloat64 = 1;

template <class U>
void put(std::ostream& os, U v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}
template <class U>
U get(std::istream& is, const char* what) {
    U v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(U))) throw FormatError(std::string("checkpoint truncated in ") + what);
    return v;
}

void flatten(const nlohmann::json& j, const std::string& prefix, std::vector<std::pair<std::string, nlohmann::json>>& out) {
    if (j.is_object()) {
        for (auto it = j.begin(); it != j.end(); ++it)
            flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
    } else {
        out.emplace_back(prefix, j);
    }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model, const nlohmann::json& extra) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
    os.write(kMagic, 4);
    put(os, kVersion);
    nlohmann::json header{{"config", model.config().to_json()}, {"stats", stats_to_json(model.stats())}};
    if (!extra.is_null()) header["extra"] = extra;
    const std::string text = header.dump();
    put(os, static_cast<std::uint64_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    const auto& P = model.parameters();
    put(os, static_cast<std::uint32_t>(P.tensors().size()));
    for (const auto& t : P.tensors()) {
        put(os, static_cast<std::uint32_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        put(os, kFloat64);
        put(os, static_cast<std::uint32_t>(t.shape.size()));
        for (std::size_t d : t.shape) put(os, static_cast<std::uint64_t>(d));
        os.write(reinterpret_cast<const char*>(P.values.data() + t.offset), static_cast<std::streamsize>(t.size * 8));
    }
    if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open checkpoint " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("not a checkpoint (bad magic)");
    auto version = get<std::uint32_t>(is, "version");
    if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
    auto len = get<std::uint64_t>(is, "header");
    if (len > (1u << 26)) throw FormatError("checkpoint header too large");
    std::string text(len, '\0');
    if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("checkpoint truncated in header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad checkpoint header: ") + e.what());
    }
    if (!header.contains("config")) throw FormatError("checkpoint header lacks a config");
    ModelConfig cfg;
    try {
        cfg = ModelConfig::from_json(header["config"]);
    } catch (const ConfigError& e) {
        throw FormatError(std::string("bad checkpoint config: ") + e.what());
    }
    Model m(cfg, header.contains("stats") ? stats_from_json(header["stats"]) : DatasetStats{}, 0);
    if (extra) *extra = header.value("extra", nlohmann::json());
    auto& P = m.parameters();
    auto count = get<std::uint32_t>(is, "record count");
    if (count != P.tensors().size())
        throw FormatError("checkpoint holds " + std::to_string(count) + " records, model expects " +
                          std::to_string(P.tensors().size()));
    std::vector<bool> seen(P.tensors().size(), false);
    for (std::uint32_t r = 0; r < count; ++r) {
        auto nlen = get<std::uint32_t>(is, "record name");
        if (nlen > 4096) throw FormatError("checkpoint record name too long");
        std::string name(nlen, '\0');
        if (!is.read(name.data(), nlen)) throw FormatError("checkpoint truncated in record name");
        if (get<std::uint8_t>(is, "dtype") != kFloat64) throw FormatError("record " + name + " is not float64");
        auto rank = get<std::uint32_t>(is, "rank");
        std::vector<std::size_t> shape;
        for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(static_cast<std::size_t>(get<std::uint64_t>(is, "dims")));
        if (!P.contains(name)) throw FormatError("unexpected checkpoint record " + name);
        const auto& t = P.find(name);
        if (t.shape != shape) throw FormatError("record " + name + " has the wrong shape");
        std::size_t idx = static_cast<std::size_t>(&t - P.tensors().data());
        seen[idx] = true;
        if (!is.read(reinterpret_cast<char*>(P.values.data() + t.offset), static_cast<std::streamsize>(t.size * 8)))
            throw FormatError("checkpoint truncated in record " + name);
    }
    for (std::size_t k = 0; k < seen.size(); ++k)
        if (!seen[k]) throw FormatError("checkpoint lacks record " + P.tensors()[k].name);
    return m;
}

Model load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
    Model m = load_checkpoint(path);
    std::vector<std::pair<std::string, nlohmann::json>> a, b;
    flatten(m.config().to_json(), "", a);
    flatten(expected.to_json(), "", b);
    for (std::size_t k = 0; k < a.size() && k < b.size(); ++k)
        if (a[k].first != b[k].first || a[k].second != b[k].second)
            throw ConfigError("checkpoint config mismatch in field '" + b[k].first + "': checkpoint has " +
                              a[k].second.dump() + ", expected " + b[k].second.dump());
    return m;
}

}  // namespace pace
