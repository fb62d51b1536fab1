#include "pace/radial.hpp"

#include "pace/error.hpp"

namespace pace {

std::string to_string(RadialKind k) { return k == RadialKind::bessel ? "bessel" : "exp_bernstein"; }

RadialKind parse_radial_kind(std::string_view s) {
    if (s == "bessel") return RadialKind::bessel;
    if (s == "exp_bernstein" || s == "eb") return RadialKind::exp_bernstein;
    throw ConfigError("unknown radial kind '" + std::string(s) + "'");
}

void RadialConfig::validate() const {
    if (n_basis < 1) throw ConfigError("radial.n_basis must be at least 1");
    if (!(cutoff > 0)) throw ConfigError("radial.cutoff must be positive");
    if (p < 1) throw ConfigError("radial envelope exponent must be positive");
}

std::vector<double> bessel_basis(double r, const RadialConfig& cfg) {
    cfg.validate();
    if (!(r > 0)) throw InputError("Bessel basis needs r > 0");
    std::vector<double> out(static_cast<std::size_t>(cfg.n_basis));
    bessel_basis<double>(r, cfg, out.data());
    return out;
}

std::vector<double> exp_bernstein_basis(double r, const RadialConfig& cfg, double gamma) {
    cfg.validate();
    if (!(r >= 0)) throw InputError("exp-Bernstein basis needs r >= 0");
    std::vector<double> out(static_cast<std::size_t>(cfg.n_basis));
    exp_bernstein_basis<double, double>(r, cfg, gamma, out.data());
    return out;
}

std::vector<double> radial_basis(double r, const RadialConfig& cfg, double gamma) {
    return cfg.kind == RadialKind::bessel ? bessel_basis(r, cfg) : exp_bernstein_basis(r, cfg, gamma);
}

std::vector<double> radial_weight_mlp(std::span<const double> rbf, const MlpParams& params, const TensorProduct& tp) {
    if (rbf.size() != static_cast<std::size_t>(params.shape.n_in()))
        throw ConfigError("radial MLP input size does not match the radial basis");
    if (static_cast<std::size_t>(params.shape.n_out()) != tp.weight_count())
        throw ConfigError("radial MLP output size does not match the tensor-product weight grid");
    return invariant_mlp(rbf, params);
}

}  // namespace pace
