#pragma once

// The two-layer network.
//
//   x0_i      = embedding[species_i]                                 (C x 0)
//   h, q2, q3 = pair MLPs of (x0_i || x0_j), one per species pair
//   m11_ij    = Y(r_ij) (x)_{w1} h,         w1 = MLP(R(r))
//   m12_ij    = Y(r_ij) (x)_{w2} m11_ij,    w2 = MLP(R(r)) + q2
//   A1_i      = mean_j (m11 || m12)
//   x1_i      = contract(SI_v(A1_i), species_i) + SI(x0_i)          (C x 0..L_hidden)
//   m2_ij     = (m11 || m12) (x)_{w3} x1_j, w3 = MLP(R(r)) + q3      (2C x 0..l_max)
//   x2_i      = contract(SI_v(A2_i), species_i)[L=0] + SI(x1_i)      (C x 0)
//   E         = E_mean + sum_i MLP(x1_i[l=0]) + MLP(x2_i)
//
// The concatenated messages are kept as two parts internally; the public
// layer operations take and return the concatenated ("merged") layout in
// which, per l, channels [0, C) come from the first part and [C, 2C) from the
// second. Evaluation is templated on the activation type so the same adjoint
// code runs on doubles (energies, forces, parameter gradients) and on dual
// numbers (force-loss gradients, see training.hpp).

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pace/dual.hpp"
#include "pace/equiv_ops.hpp"
#include "pace/irreps.hpp"
#include "pace/molgraph.hpp"
#include "pace/radial.hpp"

namespace pace {

struct ModelConfig {
    int channels = 256;
    int l_max = 3;
    int l_hidden = 3;
    int v_max = 3;
    bool edge_booster = true;
    bool extra_si = true;
    int mlp_hidden = 64;
    RadialConfig radial;  // radial.cutoff is also the graph cutoff
    std::vector<int> species;  // ascending atomic numbers

    int n_boost() const { return edge_booster ? 2 : 1; }
    double cutoff() const { return radial.cutoff; }
    /// ConfigError naming the offending field.
    void validate() const;
    nlohmann::json to_json() const;
    /// Missing keys keep their defaults; ConfigError on wrong types or values.
    static ModelConfig from_json(const nlohmann::json& j);
    bool operator==(const ModelConfig&) const = default;
};

nlohmann::json stats_to_json(const DatasetStats& s);
DatasetStats stats_from_json(const nlohmann::json& j);

struct ParamTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
};

/// Flat parameter vector with named views and a gradient slot of equal size.
class Parameters {
public:
    std::size_t add(std::string name, std::vector<std::size_t> shape);
    const std::vector<ParamTensor>& tensors() const { return tensors_; }
    const ParamTensor& find(const std::string& name) const;
    bool contains(const std::string& name) const;
    std::span<double> view(const std::string& name);
    std::span<const double> view(const std::string& name) const;
    std::size_t size() const { return values.size(); }
    void zero_grad();

    std::vector<double> values;
    std::vector<double> grads;

private:
    std::vector<ParamTensor> tensors_;
};

struct Prediction {
    std::vector<double> energies;  // per molecule, eV
    std::vector<Vec3> forces;  // per atom, eV/Å
};

template <class T>
struct EvalRequest {
    std::span<const T> positions;  // 3 per node
    /// dLoss/dE per molecule; empty means forward only.
    std::span<const T> energy_seeds;
    bool position_grad = false;
    /// Accumulates dLoss/dparams when not null (size = parameters().size()).
    T* param_grad = nullptr;
};

template <class T>
struct EvalResult {
    std::vector<T> energies;
    std::vector<T> position_grad;  // 3 per node, filled when requested
};

class Model {
public:
    /// Builds the modules and draws initial parameters from `seed`.
    explicit Model(ModelConfig cfg, DatasetStats stats = {}, std::uint64_t seed = 0);
    Model(const Model&);
    Model& operator=(const Model&);
    Model(Model&&) noexcept;
    Model& operator=(Model&&) noexcept;
    ~Model();

    const ModelConfig& config() const { return cfg_; }
    const DatasetStats& stats() const { return stats_; }
    void set_stats(const DatasetStats& s) { stats_ = s; }
    Parameters& parameters() { return params_; }
    const Parameters& parameters() const { return params_; }

    // ---- layer operations (forward only) ----------------------------------

    IrrepsLayout message1_layout() const;
    IrrepsLayout message2_layout() const;
    IrrepsLayout hidden_layout() const;

    /// Embedding rows of the graph's species (C x 0).
    IrrepsTensor<double> embed_nodes(const MolecularGraph& g) const;
    /// Spherical harmonics (1 x 0..l_max) and radial features per edge.
    struct EdgeFeatures {
        IrrepsTensor<double> sh;
        std::vector<double> rbf;  // n_edges x n_basis
    };
    EdgeFeatures edge_features(const MolecularGraph& g, std::span<const Vec3> positions) const;
    /// Row-wise boosted message in message1_layout().
    IrrepsTensor<double> edge_booster(const IrrepsTensor<double>& sh, std::span<const double> rbf,
                                      const IrrepsTensor<double>& x0_center,
                                      const IrrepsTensor<double>& x0_neighbor) const;
    /// Mean over incoming edges; isolated nodes get zeros.
    IrrepsTensor<double> aggregate(const IrrepsTensor<double>& messages, const MolecularGraph& g) const;
    /// layer 1: x_prev = x0, result in hidden_layout(); layer 2: x_prev = x1, result C x 0.
    IrrepsTensor<double> many_body_update(int layer, const IrrepsTensor<double>& A, const IrrepsTensor<double>& x_prev,
                                          std::span<const int> species) const;
    /// Row-wise second-layer message in message2_layout().
    IrrepsTensor<double> layer2_message(const IrrepsTensor<double>& m1, std::span<const double> rbf,
                                        const IrrepsTensor<double>& x0_center, const IrrepsTensor<double>& x0_neighbor,
                                        const IrrepsTensor<double>& x1_neighbor) const;
    std::vector<double> readout_energy(const IrrepsTensor<double>& x1, const IrrepsTensor<double>& x2,
                                       const MolecularGraph& g) const;

    // ---- full evaluation -----------------------------------------------------

    template <class T>
    EvalResult<T> evaluate(const MolecularGraph& g, const EvalRequest<T>& req) const;

    Prediction predict(const MolecularGraph& g, std::span<const Vec3> positions) const;
    /// Builds the graph with the model cutoff and alphabet.
    Prediction predict(const Structure& s) const;
    double energy(const Structure& s) const;

    /// Adds `delta` to every entry of one generalized coupling block (fault injection).
    void perturb_coupling(int layer, int L, int v, std::size_t path, double delta);

    struct Impl;

private:
    ModelConfig cfg_;
    DatasetStats stats_;
    Parameters params_;
    std::unique_ptr<Impl> impl_;
};

extern template EvalResult<double> Model::evaluate<double>(const MolecularGraph&, const EvalRequest<double>&) const;
extern template EvalResult<Dual<double>> Model::evaluate<Dual<double>>(const MolecularGraph&,
                                                                       const EvalRequest<Dual<double>>&) const;

/// Checkpoint: "PACE", u32 version, u64-length JSON header (config, stats,
/// `extra`), u32 record count, then named float64 records.
void save_checkpoint(const std::filesystem::path& path, const Model& model, const nlohmann::json& extra = {});
/// FormatError on bad magic, version or records.
Model load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra = nullptr);
/// Also checks the stored config against `expected`; ConfigError names the first differing field.
Model load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace pace
