#include "pace/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "json.hpp"
#include "pace/coupling.hpp"
#include "pace/dynamics.hpp"
#include "pace/error.hpp"
#include "pace/kernels.hpp"
#include "pace/model.hpp"
#include "pace/training.hpp"
#include "pace/verify.hpp"

#ifndef PACE_PRESET_DIR
#define PACE_PRESET_DIR "configs/presets"
#endif

namespace pace::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Usage : std::runtime_error {
    using std::runtime_error::runtime_error;
};

bool is_cache(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    char magic[8] = {};
    in.read(magic, 8);
    return in.gcount() == 8 && std::memcmp(magic, "PACEDATA", 8) == 0;
}

std::vector<Structure> load_frames(const fs::path& p, const std::string& energy_key = "energy") {
    if (!fs::exists(p)) throw std::runtime_error("no such file: " + p.string());
    return is_cache(p) ? load_dataset_cache(p) : read_extended_xyz(p, energy_key);
}

json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("invalid JSON in " + p.string() + ": " + e.what());
    }
}

void write_json(const fs::path& p, const json& j) {
    std::ofstream out(p);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << j.dump(2) << '\n';
}

fs::path preset_path(const std::string& name) {
    fs::path p(name);
    if (fs::exists(p)) return p;
    p = fs::path(PACE_PRESET_DIR) / (name + ".json");
    if (fs::exists(p)) return p;
    throw ConfigError("unknown preset '" + name + "'");
}

/// Model flags shared by train and synth-style commands; unset values keep the config.
struct ModelFlags {
    std::optional<int> channels, l_max, l_hidden, v_max, n_basis, mlp_hidden;
    std::optional<double> cutoff;
    std::optional<std::string> radial;
    bool no_eb = false, no_si = false;

    void add(CLI::App& app) {
        app.add_option("--channels", channels, "Feature channels");
        app.add_option("--l-max", l_max, "Maximum rotation order of the harmonics");
        app.add_option("--l-hidden", l_hidden, "Rotation order of the hidden features");
        app.add_option("--v-max", v_max, "Correlation order of the contraction");
        app.add_option("--n-basis", n_basis, "Radial basis size");
        app.add_option("--mlp-hidden", mlp_hidden, "Hidden width of the invariant MLPs");
        app.add_option("--cutoff", cutoff, "Radius cutoff in Å");
        app.add_option("--radial", radial, "Radial basis: bessel or exp_bernstein")
            ->check(CLI::IsMember({"bessel", "exp_bernstein", "eb"}));
        app.add_flag("--no-edge-booster", no_eb, "Disable the edge booster");
        app.add_flag("--no-extra-si", no_si, "Share one self-interaction across correlation orders");
    }
    void apply(ModelConfig& c) const {
        if (channels) c.channels = *channels;
        if (l_max) c.l_max = *l_max;
        if (l_hidden) c.l_hidden = *l_hidden;
        else if (l_max && c.l_hidden > c.l_max) c.l_hidden = c.l_max;
        if (v_max) c.v_max = *v_max;
        if (n_basis) c.radial.n_basis = *n_basis;
        if (mlp_hidden) c.mlp_hidden = *mlp_hidden;
        if (cutoff) c.radial.cutoff = *cutoff;
        if (radial) c.radial.kind = parse_radial_kind(*radial);
        if (no_eb) c.edge_booster = false;
        if (no_si) c.extra_si = false;
    }
};

ForceFn model_forces(const Model& m, std::vector<int> species) {
    return [&m, species = std::move(species)](std::span<const Vec3> x, std::vector<Vec3>& f) {
        Structure s{species, {x.begin(), x.end()}, {}, {}};
        Prediction p = m.predict(s);
        f = std::move(p.forces);
        return p.energies.at(0);
    };
}

std::string fmt(double v, int prec = 6) {
    std::ostringstream os;
    os << std::setprecision(prec) << v;
    return os.str();
}

// ---- subcommands ------------------------------------------------------------------

struct Ctx {
    std::ostream& out;
    std::ostream& err;
};

struct PreprocessArgs {
    std::string input, output, stats, energy_key = "energy";
    bool kcal = false;
    double cutoff = 5.0;
};

int do_preprocess(const PreprocessArgs& a, Ctx& c) {
    auto frames = read_extended_xyz(a.input, a.energy_key);
    if (a.kcal)
        for (auto& s : frames) convert_units(s);
    save_dataset_cache(a.output, frames);
    if (!a.stats.empty()) {
        auto alphabet = species_alphabet(frames);
        std::vector<MolecularGraph> gs;
        for (const auto& s : frames) gs.push_back(build_graph(s, a.cutoff, alphabet));
        json j = stats_to_json(compute_stats(frames, gs));
        j["species"] = alphabet;
        j["cutoff"] = a.cutoff;
        write_json(a.stats, j);
    }
    c.out << "wrote " << frames.size() << " frames to " << a.output << '\n';
    return 0;
}

struct TrainArgs {
    std::string config, preset, train, val, output = "model.ckpt", metrics;
    std::optional<int> epochs, batch_size, max_steps, val_interval;
    std::optional<double> lr, ema, energy_weight, force_weight;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::vector<int> species;
    std::string energy_key = "energy";
    bool quiet = false;
    ModelFlags model;
};

int do_train(const TrainArgs& a, Ctx& c) {
    json cfg = json::object();
    if (!a.preset.empty()) cfg = read_json(preset_path(a.preset));
    if (!a.config.empty()) {
        json file = read_json(a.config);
        cfg.merge_patch(file);
    }
    ModelConfig mc = cfg.contains("model") ? ModelConfig::from_json(cfg["model"]) : ModelConfig{};
    TrainConfig tc = cfg.contains("train") ? TrainConfig::from_json(cfg["train"]) : TrainConfig{};
    std::string train_path = a.train, val_path = a.val;
    if (cfg.contains("data")) {
        const json& d = cfg["data"];
        if (train_path.empty() && d.contains("train")) train_path = d["train"].get<std::string>();
        if (val_path.empty() && d.contains("val")) val_path = d["val"].get<std::string>();
    }
    if (train_path.empty()) throw Usage("train needs --train or data.train in the config");
    a.model.apply(mc);
    if (a.epochs) tc.epochs = *a.epochs;
    if (a.batch_size) tc.batch_size = *a.batch_size;
    if (a.max_steps) tc.max_steps = *a.max_steps;
    if (a.val_interval) tc.val_interval = *a.val_interval;
    if (a.lr) tc.lr = *a.lr;
    if (a.ema) tc.ema_decay = *a.ema;
    if (a.energy_weight) tc.energy_weight = *a.energy_weight;
    if (a.force_weight) tc.force_weight = *a.force_weight;
    if (a.seed) tc.seed = *a.seed;
    if (a.threads) tc.threads = *a.threads;
    tc.checkpoint_path = a.output;
    if (!a.metrics.empty()) tc.metrics_path = a.metrics;

    auto train = load_frames(train_path, a.energy_key);
    std::vector<Structure> val;
    if (!val_path.empty()) val = load_frames(val_path, a.energy_key);
    if (train.empty()) throw ConfigError("training set is empty");
    mc.species = a.species.empty() ? species_alphabet(train) : a.species;
    std::sort(mc.species.begin(), mc.species.end());
    mc.validate();
    std::vector<MolecularGraph> gs;
    for (const auto& s : train) gs.push_back(build_graph(s, mc.cutoff(), mc.species));
    Model model(mc, compute_stats(train, gs), tc.seed);

    if (!a.quiet) c.out << metrics_csv_header() << '\n';
    auto progress = [&](const EpochLog& e) {
        if (!a.quiet) c.out << metrics_csv_row(e) << '\n' << std::flush;
    };
    TrainResult r = pace::train(model, train, val, tc, progress);
    c.out << "steps " << r.steps << ", best epoch " << r.best_epoch << ", checkpoint " << a.output << '\n';
    return 0;
}

struct EvalArgs {
    std::string checkpoint, data, energy_key = "energy";
    bool as_json = false;
    int threads = 1;
};

int do_eval(const EvalArgs& a, Ctx& c) {
    Model m = load_checkpoint(a.checkpoint);
    auto data = load_frames(a.data, a.energy_key);
    Metrics mt = evaluate(m, data, a.threads);
    if (a.as_json) {
        c.out << json{{"n", data.size()},
                      {"energy_mae_meV", mt.e_mae},
                      {"energy_rmse_meV", mt.e_rmse},
                      {"force_mae_meV_per_A", mt.f_mae},
                      {"force_rmse_meV_per_A", mt.f_rmse}}
                     .dump(2)
              << '\n';
        return 0;
    }
    c.out << "quantity          MAE          RMSE\n";
    c.out << "E (meV)     " << std::setw(12) << fmt(mt.e_mae) << "  " << std::setw(12) << fmt(mt.e_rmse) << '\n';
    c.out << "F (meV/Å)   " << std::setw(12) << fmt(mt.f_mae) << "  " << std::setw(12) << fmt(mt.f_rmse) << '\n';
    return 0;
}

struct PredictArgs {
    std::string checkpoint, input, output, format = "xyz";
};

int do_predict(const PredictArgs& a, Ctx& c) {
    Model m = load_checkpoint(a.checkpoint);
    auto frames = load_frames(a.input);
    for (auto& s : frames) {
        Prediction p = m.predict(s);
        s.energy = p.energies.at(0);
        s.forces = std::move(p.forces);
    }
    std::ofstream file;
    std::ostream* os = &c.out;
    if (!a.output.empty()) {
        file.open(a.output);
        if (!file) throw std::runtime_error("cannot write " + a.output);
        os = &file;
    }
    if (a.format == "xyz") {
        *os << serialize_extended_xyz(frames);
    } else {
        *os << "frame,atom,element,x,y,z,energy,fx,fy,fz\n" << std::setprecision(17);
        for (std::size_t k = 0; k < frames.size(); ++k)
            for (std::size_t i = 0; i < frames[k].size(); ++i) {
                const auto& s = frames[k];
                *os << k << ',' << i << ',' << element_symbol(s.species[i]) << ',' << s.positions[i][0] << ','
                    << s.positions[i][1] << ',' << s.positions[i][2] << ',' << *s.energy << ',' << (*s.forces)[i][0]
                    << ',' << (*s.forces)[i][1] << ',' << (*s.forces)[i][2] << '\n';
            }
    }
    return 0;
}

struct MdArgs {
    std::string checkpoint, input, output = "trajectory.xyz";
    std::vector<int> analytic;
    int frame = 0, steps = 1000, stride = 10;
    double dt = 1.0, friction = 0.0, temperature = 0.0;
    std::optional<double> init_temperature;
    std::uint64_t seed = 0;
};

int do_md(const MdArgs& a, Ctx& c) {
    if (a.checkpoint.empty() == a.analytic.empty()) throw Usage("md needs exactly one of --checkpoint and --analytic");
    auto frames = load_frames(a.input);
    if (a.frame < 0 || static_cast<std::size_t>(a.frame) >= frames.size())
        throw InputError("frame index out of range");
    const Structure& start = frames[static_cast<std::size_t>(a.frame)];
    std::optional<Model> model;
    std::optional<AnalyticPotential> pot;
    ForceFn f;
    if (!a.checkpoint.empty()) {
        model.emplace(load_checkpoint(a.checkpoint));
        f = model_forces(*model, start.species);
    } else {
        std::vector<int> sp = a.analytic;
        std::sort(sp.begin(), sp.end());
        pot.emplace(sp);
        f = pot->force_fn(start.species);
    }
    MDConfig mc;
    mc.steps = a.steps;
    mc.stride = a.stride;
    mc.langevin = {a.dt, a.friction, a.temperature};
    mc.langevin.validate();
    if (a.init_temperature) mc.init_temperature = *a.init_temperature;
    mc.seed = a.seed;
    Trajectory t = run_md(start, f, mc);
    write_trajectory(a.output, t);
    const double e0 = t.frames.front().total(), e1 = t.frames.back().total();
    c.out << "frames " << t.frames.size() << ", total energy " << fmt(e0, 10) << " -> " << fmt(e1, 10) << " eV\n";
    return 0;
}

struct RdfArgs {
    std::string input, output;
    double dr = 0.05, r_max = 5.0;
};

int do_rdf(const RdfArgs& a, Ctx& c) {
    auto frames = load_frames(a.input);
    Rdf r = rdf(trajectory_positions(frames), a.dr, a.r_max);
    if (a.output.empty()) {
        c.out << r.csv();
    } else {
        std::ofstream out(a.output);
        if (!out) throw std::runtime_error("cannot write " + a.output);
        out << r.csv();
    }
    return 0;
}

struct CgArgs {
    int l1 = 1, l2 = 1, l3 = 0;
    std::vector<int> path;
};

int do_cg_dump(const CgArgs& a, Ctx& c) {
    if (!a.path.empty()) {
        // eta = (l1, l2, L2, l3, L3, ...)
        if (a.path.size() % 2 == 0) throw InputError("a path lists l1 followed by (l, L) pairs");
        ContractionPath p;
        p.ls.push_back(a.path[0]);
        p.couples.push_back(a.path[0]);
        for (std::size_t k = 1; k < a.path.size(); k += 2) {
            p.ls.push_back(a.path[k]);
            p.couples.push_back(a.path[k + 1]);
        }
        auto blk = generalized_cg(p);
        const std::size_t dL = static_cast<std::size_t>(2 * p.target() + 1);
        c.out << "index,M,value\n" << std::setprecision(17);
        for (std::size_t i = 0; i < blk.size(); ++i)
            if (blk[i] != 0.0) c.out << i / dL << ',' << static_cast<int>(i % dL) - p.target() << ',' << blk[i] << '\n';
        return 0;
    }
    const CGTensor& t = clebsch_gordan(a.l1, a.l2, a.l3);
    c.out << "m1,m2,m3,value\n" << std::setprecision(17);
    for (const auto& e : t.nonzeros())
        c.out << e.m1 - a.l1 << ',' << e.m2 - a.l2 << ',' << e.m3 - a.l3 << ',' << e.value << '\n';
    return 0;
}

int do_inspect(const std::string& path, bool tensors, Ctx& c) {
    json extra;
    Model m = load_checkpoint(path, &extra);
    json j{{"config", m.config().to_json()},
           {"stats", stats_to_json(m.stats())},
           {"extra", extra},
           {"parameters", m.parameters().size()}};
    c.out << j.dump(2) << '\n';
    if (tensors)
        for (const auto& t : m.parameters().tensors()) {
            c.out << t.name << " [";
            for (std::size_t k = 0; k < t.shape.size(); ++k) c.out << (k ? "," : "") << t.shape[k];
            c.out << "]\n";
        }
    return 0;
}

struct SynthArgs {
    std::vector<int> cluster{6, 6, 8, 8, 8};
    int n = 50;
    double sigma = 0.1;
    std::uint64_t seed = 0;
    std::string output = "synthetic.xyz";
};

int do_synth(const SynthArgs& a, Ctx& c) {
    std::vector<int> alphabet = a.cluster;
    std::sort(alphabet.begin(), alphabet.end());
    alphabet.erase(std::unique(alphabet.begin(), alphabet.end()), alphabet.end());
    AnalyticPotential pot(alphabet);
    auto data = synthetic_dataset(pot, a.cluster, a.n, a.sigma, a.seed);
    write_extended_xyz(a.output, data);
    c.out << "wrote " << data.size() << " labelled frames to " << a.output << '\n';
    return 0;
}

// ---- selfcheck ----------------------------------------------------------------------

int do_selfcheck(std::uint64_t seed, Ctx& c) {
    struct Row {
        std::string name;
        double value;
        std::string bound;
        bool pass;
    };
    std::vector<Row> rows;
    auto le = [&](std::string name, double v, double tol) {
        rows.push_back({std::move(name), v, "<= " + fmt(tol, 2), v <= tol});
    };
    auto ge = [&](std::string name, double v, double tol) {
        rows.push_back({std::move(name), v, ">= " + fmt(tol, 2), v >= tol});
    };

    {
        const auto* avx = kernels::avx2_table();
        double worst = 0;
        if (avx) {
            std::mt19937_64 rng(seed);
            std::normal_distribution<double> g;
            for (std::size_t n : {1, 3, 4, 7, 33, 256}) {
                std::vector<double> a(n), b(n), o1(n, 0.5), o2(n, 0.5);
                for (std::size_t i = 0; i < n; ++i) a[i] = g(rng), b[i] = g(rng);
                kernels::scalar_table().mul_acc(o1.data(), a.data(), b.data(), 0.7, n);
                avx->mul_acc(o2.data(), a.data(), b.data(), 0.7, n);
                for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(o1[i] - o2[i]));
                const double d1 = kernels::scalar_table().dot(a.data(), b.data(), n), d2 = avx->dot(a.data(), b.data(), n);
                worst = std::max(worst, std::abs(d1 - d2) / (1 + std::abs(d1)));
            }
        }
        le(std::string("kernels scalar vs ") + (avx ? "avx2" : "scalar (no avx2)"), worst, 1e-12);
    }
    le("CG orthogonality, l <= 4", cg_orthogonality_error(4), 1e-12);
    le("CG equivariance, l <= 3", cg_equivariance_error(3, 3, seed), 1e-12);
    le("generalized CG equivariance, l <= 2, v <= 3", generalized_cg_equivariance_error(2, 3, 2, seed), 1e-12);

    FeatureFn y1y1 = [](std::span<const Vec3> nb) {
        auto y = real_spherical_harmonics(nb[0], 1)[1];
        std::vector<double> o;
        for (double p : y)
            for (double q : y) o.push_back(p * q);
        return o;
    };
    le("span: Y1 x Y1 -> Y2", span_residual(y1y1, sh_targets(2, 2), 1, 500, seed).max_residual, 1e-10);

    ModelConfig bc;
    bc.channels = 2;
    bc.l_max = 3;
    bc.l_hidden = 1;
    bc.v_max = 1;
    bc.mlp_hidden = 8;
    bc.radial.n_basis = 4;
    bc.species = {1, 6};
    Model boosted(bc, {}, seed);
    le("span: edge booster -> Y^l, l <= 6",
       span_residual(model_edge_booster(boosted, 1.3, 0, 1), sh_targets(0, 6), 1, 3000, seed).max_residual, 1e-8);
    FeatureFn prod = [](std::span<const Vec3> nb) {
        std::vector<double> s(3, 0.0);
        for (const Vec3& r : nb) {
            auto y = real_spherical_harmonics(r, 1)[1];
            for (std::size_t k = 0; k < 3; ++k) s[k] += y[k];
        }
        std::vector<double> o;
        for (double p : s)
            for (double q : s) o.push_back(p * q);
        return o;
    };
    ge("span: pair counterexample without boosting", span_residual(prod, pair_square_target(), 2, 200, seed).max_residual,
       1e-2);
    {
        double worst = 0;
        for (const auto& m : dspanning_degree_check(boosted_aggregation(1), 2, 3, seed))
            worst = std::max(worst, m.residual);
        le("degree 2 monomials from boosted aggregation", worst, 1e-6);
    }

    ModelConfig tc;
    tc.channels = 4;
    tc.l_max = 2;
    tc.l_hidden = 2;
    tc.v_max = 3;
    tc.mlp_hidden = 8;
    tc.radial.n_basis = 6;
    tc.species = {1, 6, 8};
    Model m(tc, {}, seed);
    std::mt19937_64 rng(seed);
    AnalyticPotential pot({1, 6, 8});
    Structure s = synthetic_dataset(pot, std::vector<int>{1, 6, 8, 8}, 1, 0.05, seed)[0];
    auto rep = equivariance_report(m, s, 10, rng);
    le("energy invariance", std::max({rep.energy_rotation, rep.energy_translation, rep.energy_permutation}), 1e-9);
    le("force equivariance", rep.force_equivariance, 1e-9);
    {
        auto fd = finite_difference_forces(m, s);
        auto fa = m.predict(s).forces;
        double err = 0, scale = 1e-300;
        for (std::size_t i = 0; i < s.size(); ++i)
            for (int k = 0; k < 3; ++k) {
                err = std::max(err, std::abs(fd[i][k] - fa[i][k]));
                scale = std::max(scale, std::abs(fa[i][k]));
            }
        le("forces vs finite differences (relative)", err / scale, 1e-5);
    }

    bool all = true;
    c.out << std::left << std::setw(48) << "check" << std::setw(14) << "value" << std::setw(10) << "bound"
          << "result\n";
    for (const auto& r : rows) {
        c.out << std::left << std::setw(48) << r.name << std::setw(14) << fmt(r.value, 3) << std::setw(10) << r.bound
              << (r.pass ? "PASS" : "FAIL") << '\n';
        all = all && r.pass;
    }
    return all ? 0 : 1;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"PACE equivariant interatomic potential"};
    app.name("pace");
    app.require_subcommand(1);
    Ctx ctx{out, err};
    std::optional<std::string> kernel_variant;
    app.add_option("--kernels", kernel_variant, "Kernel variant: scalar, avx2 or auto")
        ->check(CLI::IsMember({"scalar", "avx2", "auto"}));

    PreprocessArgs pre;
    auto* c_pre = app.add_subcommand("preprocess", "Convert extended XYZ into a dataset cache and statistics");
    c_pre->add_option("--input,-i", pre.input, "Extended XYZ file")->required();
    c_pre->add_option("--output,-o", pre.output, "Dataset cache path")->required();
    c_pre->add_option("--stats", pre.stats, "Write dataset statistics as JSON");
    c_pre->add_option("--energy-key", pre.energy_key, "Comment-line key holding the energy");
    c_pre->add_option("--cutoff", pre.cutoff, "Cutoff for neighbor statistics (Å)");
    c_pre->add_flag("--kcal", pre.kcal, "Input energies in kcal/mol (forces in kcal/mol/Å)");

    TrainArgs tr;
    auto* c_train = app.add_subcommand("train", "Train a model");
    c_train->add_option("--config,-c", tr.config, "JSON config with model, train and data sections");
    c_train->add_option("--preset", tr.preset, "Bundled preset name or JSON path");
    c_train->add_option("--train", tr.train, "Training data (extended XYZ or cache)");
    c_train->add_option("--val", tr.val, "Validation data");
    c_train->add_option("--output,-o", tr.output, "Checkpoint for the best EMA weights");
    c_train->add_option("--metrics", tr.metrics, "Metrics CSV");
    c_train->add_option("--epochs", tr.epochs);
    c_train->add_option("--batch-size", tr.batch_size);
    c_train->add_option("--max-steps", tr.max_steps, "Stop after this many optimizer steps");
    c_train->add_option("--val-interval", tr.val_interval, "Epochs between validations");
    c_train->add_option("--lr", tr.lr);
    c_train->add_option("--ema", tr.ema, "EMA decay");
    c_train->add_option("--energy-weight", tr.energy_weight);
    c_train->add_option("--force-weight", tr.force_weight);
    c_train->add_option("--seed", tr.seed);
    c_train->add_option("--threads", tr.threads)->check(CLI::PositiveNumber);
    c_train->add_option("--species", tr.species, "Atomic numbers of the alphabet (default: from data)")
        ->delimiter(',');
    c_train->add_option("--energy-key", tr.energy_key);
    c_train->add_flag("--quiet,-q", tr.quiet);
    tr.model.add(*c_train);

    EvalArgs ev;
    auto* c_eval = app.add_subcommand("eval", "MAE and RMSE of a checkpoint on labelled data");
    c_eval->add_option("--checkpoint", ev.checkpoint)->required();
    c_eval->add_option("--data", ev.data)->required();
    c_eval->add_option("--energy-key", ev.energy_key);
    c_eval->add_option("--threads", ev.threads)->check(CLI::PositiveNumber);
    c_eval->add_flag("--json", ev.as_json);

    PredictArgs pr;
    auto* c_pred = app.add_subcommand("predict", "Energies and forces for structures");
    c_pred->add_option("--checkpoint", pr.checkpoint)->required();
    c_pred->add_option("--input,-i", pr.input)->required();
    c_pred->add_option("--output,-o", pr.output, "Output file (default: stdout)");
    c_pred->add_option("--format", pr.format)->check(CLI::IsMember({"xyz", "csv"}));

    MdArgs md;
    auto* c_md = app.add_subcommand("md", "Langevin dynamics from a starting frame");
    c_md->add_option("--checkpoint", md.checkpoint, "Model checkpoint for forces");
    c_md->add_option("--analytic", md.analytic, "Use the analytic potential over these atomic numbers")
        ->delimiter(',');
    c_md->add_option("--input,-i", md.input)->required();
    c_md->add_option("--frame", md.frame);
    c_md->add_option("--output,-o", md.output);
    c_md->add_option("--steps", md.steps)->check(CLI::NonNegativeNumber);
    c_md->add_option("--stride", md.stride)->check(CLI::PositiveNumber);
    c_md->add_option("--dt", md.dt, "Time step (fs)");
    c_md->add_option("--friction", md.friction, "Friction (1/fs)");
    c_md->add_option("--temperature", md.temperature, "Bath temperature (K)");
    c_md->add_option("--init-temperature", md.init_temperature, "Initial velocity temperature (K)");
    c_md->add_option("--seed", md.seed);

    RdfArgs rd;
    auto* c_rdf = app.add_subcommand("rdf", "Radial distribution function of a trajectory");
    c_rdf->add_option("--input,-i", rd.input)->required();
    c_rdf->add_option("--output,-o", rd.output, "CSV path (default: stdout)");
    c_rdf->add_option("--dr", rd.dr);
    c_rdf->add_option("--r-max", rd.r_max);

    std::uint64_t check_seed = 0;
    auto* c_self = app.add_subcommand("selfcheck", "Run the numerical oracle suite");
    c_self->add_option("--seed", check_seed);

    CgArgs cg;
    auto* c_cg = app.add_subcommand("cg-dump", "Print Clebsch-Gordan or chained coupling coefficients");
    c_cg->add_option("--l1", cg.l1);
    c_cg->add_option("--l2", cg.l2);
    c_cg->add_option("--l3", cg.l3);
    c_cg->add_option("--path", cg.path, "Chained path l1,l2,L2,l3,L3,...")->delimiter(',');

    std::string inspect_path;
    bool inspect_tensors = false;
    auto* c_ins = app.add_subcommand("inspect-checkpoint", "Show a checkpoint's config, statistics and tensors");
    c_ins->add_option("checkpoint", inspect_path)->required();
    c_ins->add_flag("--tensors", inspect_tensors);

    SynthArgs sy;
    auto* c_syn = app.add_subcommand("synth", "Generate a labelled synthetic cluster dataset");
    c_syn->add_option("--cluster", sy.cluster, "Atomic numbers of the cluster atoms")->delimiter(',');
    c_syn->add_option("--n", sy.n)->check(CLI::NonNegativeNumber);
    c_syn->add_option("--sigma", sy.sigma, "Displacement noise (Å)");
    c_syn->add_option("--seed", sy.seed);
    c_syn->add_option("--output,-o", sy.output);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return 0;
        }
        err << "error: " << e.what() << '\n';
        auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return 2;
    }

    try {
        if (kernel_variant) kernels::select(*kernel_variant);
        if (c_pre->parsed()) return do_preprocess(pre, ctx);
        if (c_train->parsed()) return do_train(tr, ctx);
        if (c_eval->parsed()) return do_eval(ev, ctx);
        if (c_pred->parsed()) return do_predict(pr, ctx);
        if (c_md->parsed()) return do_md(md, ctx);
        if (c_rdf->parsed()) return do_rdf(rd, ctx);
        if (c_self->parsed()) return do_selfcheck(check_seed, ctx);
        if (c_cg->parsed()) return do_cg_dump(cg, ctx);
        if (c_ins->parsed()) return do_inspect(inspect_path, inspect_tensors, ctx);
        if (c_syn->parsed()) return do_synth(sy, ctx);
    } catch (const Usage& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv;
    argv.push_back("pace");
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace pace::cli
