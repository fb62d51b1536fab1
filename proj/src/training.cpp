#include "pace/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "pace/error.hpp"

namespace pace {

namespace {

void check_labels(const Structure& s, std::size_t n_pred_atoms) {
    if (!s.energy) throw DataError("structure lacks an energy label");
    if (!s.forces) throw DataError("structure lacks force labels");
    if (s.forces->size() != s.size()) throw DataError("force label count differs from atom count");
    if (n_pred_atoms != s.size()) throw DataError("prediction size differs from structure size");
}

/// Runs f(i) for i in [0, n) on up to `threads` workers.
template <class F>
void parallel_for(std::size_t n, int threads, F&& f) {
    const std::size_t t = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), n);
    if (t <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errs(t);
    for (std::size_t w = 0; w < t; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += t) f(i);
            } catch (...) {
                errs[w] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
}

struct Sample {
    const Structure* s;
    MolecularGraph g;
};

double val_loss(const Model& m, std::span<const Structure> data, double le, double lf, int threads) {
    std::vector<Prediction> pred(data.size());
    parallel_for(data.size(), threads, [&](std::size_t i) { pred[i] = m.predict(data[i]); });
    return loss(pred, data, le, lf).total();
}

}  // namespace

LossTerms loss(std::span<const Prediction> pred, std::span<const Structure> targets, double lambda_e,
               double lambda_f) {
    if (pred.size() != targets.size()) throw DataError("prediction count differs from target count");
    double se = 0, sf = 0;
    std::size_t n_mol = 0, n_comp = 0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        const Structure& t = targets[k];
        check_labels(t, pred[k].forces.size());
        if (pred[k].energies.size() != 1) throw DataError("expected one energy per prediction");
        const double de = pred[k].energies[0] - *t.energy;
        se += de * de;
        ++n_mol;
        for (std::size_t i = 0; i < t.size(); ++i)
            for (int c = 0; c < 3; ++c) {
                const double df = pred[k].forces[i][c] - (*t.forces)[i][c];
                sf += df * df;
            }
        n_comp += 3 * t.size();
    }
    LossTerms out;
    if (n_mol) out.energy = lambda_e * se / static_cast<double>(n_mol);
    if (n_comp) out.force = lambda_f * sf / static_cast<double>(n_comp);
    return out;
}

void AmsGrad::step(std::span<double> params, std::span<const double> grads, double lr) {
    if (params.size() != grads.size()) throw InputError("parameter and gradient sizes differ");
    for (std::size_t i = 0; i < grads.size(); ++i)
        if (!std::isfinite(grads[i]))
            throw DivergenceError("non-finite gradient at parameter index " + std::to_string(i));
    if (m.size() != params.size()) {
        m.assign(params.size(), 0.0);
        v.assign(params.size(), 0.0);
        vhat.assign(params.size(), 0.0);
        t = 0;
    }
    ++t;
    const double bc1 = 1 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        m[i] = beta1 * m[i] + (1 - beta1) * g;
        v[i] = beta2 * v[i] + (1 - beta2) * g * g;
        vhat[i] = std::max(vhat[i], v[i]);
        params[i] -= lr * (m[i] / bc1) / (std::sqrt(vhat[i] / bc2) + eps);
    }
}

void ema_update(std::span<double> shadow, std::span<const double> params, double decay) {
    if (shadow.size() != params.size()) throw InputError("EMA shadow and parameter sizes differ");
    for (std::size_t i = 0; i < shadow.size(); ++i) shadow[i] = decay * shadow[i] + (1 - decay) * params[i];
}

// ---- config ------------------------------------------------------------------

void TrainConfig::validate() const {
    auto bad = [](const std::string& field, const std::string& why) {
        throw ConfigError("train config: " + field + " " + why);
    };
    if (epochs < 0) bad("epochs", "must be nonnegative");
    if (batch_size < 1) bad("batch_size", "must be positive");
    if (!(lr > 0)) bad("lr", "must be positive");
    if (!(ema_decay >= 0 && ema_decay <= 1)) bad("ema_decay", "must lie in [0, 1]");
    if (!(energy_weight >= 0)) bad("energy_weight", "must be nonnegative");
    if (!(force_weight >= 0)) bad("force_weight", "must be nonnegative");
    if (val_interval < 1) bad("val_interval", "must be positive");
    if (max_steps < 0) bad("max_steps", "must be nonnegative");
    if (threads < 1) bad("threads", "must be positive");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"epochs", epochs},
            {"batch_size", batch_size},
            {"lr", lr},
            {"ema_decay", ema_decay},
            {"energy_weight", energy_weight},
            {"force_weight", force_weight},
            {"val_interval", val_interval},
            {"max_steps", max_steps},
            {"threads", threads},
            {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    std::string field;
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            field = it.key();
            const auto& v = it.value();
            if (field == "epochs") c.epochs = v.get<int>();
            else if (field == "batch_size") c.batch_size = v.get<int>();
            else if (field == "lr") c.lr = v.get<double>();
            else if (field == "ema_decay") c.ema_decay = v.get<double>();
            else if (field == "energy_weight") c.energy_weight = v.get<double>();
            else if (field == "force_weight") c.force_weight = v.get<double>();
            else if (field == "val_interval") c.val_interval = v.get<int>();
            else if (field == "max_steps") c.max_steps = v.get<int>();
            else if (field == "threads") c.threads = v.get<int>();
            else if (field == "seed") c.seed = v.get<std::uint64_t>();
            else if (field == "metrics_path") c.metrics_path = v.get<std::string>();
            else if (field == "checkpoint_path") c.checkpoint_path = v.get<std::string>();
            else throw ConfigError("train config: unknown field '" + field + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("train config field '" + field + "': " + e.what());
    }
    return c;
}

// ---- metrics -----------------------------------------------------------------

Metrics compute_metrics(std::span<const Prediction> pred, std::span<const Structure> targets) {
    if (pred.size() != targets.size()) throw DataError("prediction count differs from target count");
    double ae = 0, se = 0, af = 0, sf = 0;
    std::size_t nf = 0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        const Structure& t = targets[k];
        check_labels(t, pred[k].forces.size());
        const double de = pred[k].energies.at(0) - *t.energy;
        ae += std::abs(de);
        se += de * de;
        for (std::size_t i = 0; i < t.size(); ++i)
            for (int c = 0; c < 3; ++c) {
                const double df = pred[k].forces[i][c] - (*t.forces)[i][c];
                af += std::abs(df);
                sf += df * df;
            }
        nf += 3 * t.size();
    }
    Metrics m;
    if (!pred.empty()) {
        const double n = static_cast<double>(pred.size());
        m.e_mae = 1000 * ae / n;
        m.e_rmse = 1000 * std::sqrt(se / n);
    }
    if (nf) {
        m.f_mae = 1000 * af / static_cast<double>(nf);
        m.f_rmse = 1000 * std::sqrt(sf / static_cast<double>(nf));
    }
    return m;
}

Metrics evaluate(const Model& model, std::span<const Structure> data, int threads) {
    std::vector<Prediction> pred(data.size());
    parallel_for(data.size(), threads, [&](std::size_t i) { pred[i] = model.predict(data[i]); });
    return compute_metrics(pred, data);
}

// ---- gradient ------------------------------------------------------------------

LossTerms loss_and_gradient(const Model& model, std::span<const Structure* const> batch,
                            std::span<const MolecularGraph* const> graphs, double lambda_e, double lambda_f,
                            std::vector<double>& grad, int threads) {
    if (batch.size() != graphs.size()) throw InputError("batch and graph counts differ");
    const std::size_t P = model.parameters().size();
    grad.assign(P, 0.0);
    if (batch.empty()) return {};
    std::size_t n_atoms = 0;
    for (const Structure* s : batch) {
        if (!s->energy || !s->forces) throw DataError("training structure lacks energy or force labels");
        if (s->forces->size() != s->size()) throw DataError("force label count differs from atom count");
        n_atoms += s->size();
    }
    const double M = static_cast<double>(batch.size());
    const double c = -2 * lambda_f / (3 * static_cast<double>(n_atoms));

    std::vector<Prediction> pred(batch.size());
    const std::size_t chunk = static_cast<std::size_t>(std::max(threads, 1));
    std::vector<std::vector<Dual<double>>> gbuf(std::min(chunk, batch.size()));
    for (std::size_t lo = 0; lo < batch.size(); lo += chunk) {
        const std::size_t hi = std::min(batch.size(), lo + chunk);
        parallel_for(hi - lo, threads, [&](std::size_t w) {
            const std::size_t k = lo + w;
            const Structure& s = *batch[k];
            const MolecularGraph& g = *graphs[k];
            pred[k] = model.predict(g, s.positions);
            const double a = 2 * lambda_e * (pred[k].energies[0] - *s.energy) / M;
            std::vector<Dual<double>> pos(3 * s.size());
            for (std::size_t i = 0; i < s.size(); ++i)
                for (int q = 0; q < 3; ++q)
                    pos[3 * i + static_cast<std::size_t>(q)] =
                        Dual<double>(s.positions[i][q], pred[k].forces[i][q] - (*s.forces)[i][q]);
            std::vector<Dual<double>> seed{Dual<double>(c, a)};
            auto& gb = gbuf[w];
            gb.assign(P, Dual<double>(0.0));
            model.evaluate<Dual<double>>(g, {pos, seed, false, gb.data()});
        });
        // Reduce in molecule order so the sum is independent of the thread count.
        for (std::size_t w = 0; w < hi - lo; ++w)
            for (std::size_t p = 0; p < P; ++p) grad[p] += gbuf[w][p].d;
    }
    std::vector<Structure> tgt;
    tgt.reserve(batch.size());
    for (const Structure* s : batch) tgt.push_back(*s);
    return loss(pred, tgt, lambda_e, lambda_f);
}

// ---- loop ----------------------------------------------------------------------

std::string metrics_csv_header() { return "epoch,train_loss,val_E_MAE_meV,val_F_MAE_meV_per_A,val_E_RMSE,val_F_RMSE"; }

std::string metrics_csv_row(const EpochLog& e) {
    std::ostringstream os;
    os << std::setprecision(17) << e.epoch << ',' << e.train_loss << ',' << e.val.e_mae << ',' << e.val.f_mae << ','
       << e.val.e_rmse << ',' << e.val.f_rmse;
    return os.str();
}

TrainResult train(Model init, std::span<const Structure> train_set, std::span<const Structure> val_set,
                  const TrainConfig& cfg, const std::function<void(const EpochLog&)>& progress) {
    cfg.validate();
    if (train_set.empty()) throw ConfigError("training set is empty");
    const auto& alphabet = init.config().species;
    const double cutoff = init.config().cutoff();
    std::vector<Sample> samples;
    samples.reserve(train_set.size());
    for (const Structure& s : train_set) {
        if (!s.energy || !s.forces) throw DataError("training structure lacks energy or force labels");
        samples.push_back({&s, build_graph(s, cutoff, alphabet)});
    }
    std::span<const Structure> val = val_set.empty() ? train_set : val_set;

    Model model = std::move(init);
    Model shadow = model;
    AmsGrad opt;
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);

    std::ofstream csv;
    if (!cfg.metrics_path.empty()) {
        csv.open(cfg.metrics_path);
        if (!csv) throw std::runtime_error("cannot open metrics file " + cfg.metrics_path.string());
        csv << metrics_csv_header() << '\n';
    }

    TrainResult res{shadow, shadow, {}, {}, 0, 0};
    double best = std::numeric_limits<double>::infinity();
    auto save_best = [&](const Model& m, int epoch) {
        if (!cfg.checkpoint_path.empty())
            save_checkpoint(cfg.checkpoint_path, m, {{"epoch", epoch}, {"train", cfg.to_json()}});
    };
    auto validate = [&](int epoch, double train_loss) {
        EpochLog e{epoch, train_loss, evaluate(shadow, val, cfg.threads)};
        const double vl = val_loss(shadow, val, cfg.energy_weight, cfg.force_weight, cfg.threads);
        if (!std::isfinite(vl)) {
            throw DivergenceError("non-finite validation loss at epoch " + std::to_string(epoch));
        }
        if (vl < best) {
            best = vl;
            res.model = shadow;
            res.best_epoch = epoch;
            save_best(shadow, epoch);
        }
        res.log.push_back(e);
        if (csv) csv << metrics_csv_row(e) << '\n' << std::flush;
        if (progress) progress(e);
    };

    if (cfg.epochs == 0) {
        res.model = shadow;
        save_best(shadow, 0);
        res.last = shadow;
        return res;
    }

    std::vector<double> grad;
    bool stop = false;
    for (int epoch = 1; epoch <= cfg.epochs && !stop; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0;
        std::size_t n_batches = 0;
        for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch_size));
            std::vector<const Structure*> bs;
            std::vector<const MolecularGraph*> bg;
            for (std::size_t k = lo; k < hi; ++k) {
                bs.push_back(samples[order[k]].s);
                bg.push_back(&samples[order[k]].g);
            }
            LossTerms lt = loss_and_gradient(model, bs, bg, cfg.energy_weight, cfg.force_weight, grad, cfg.threads);
            if (!std::isfinite(lt.total())) {
                save_best(res.model, res.best_epoch);
                throw DivergenceError("non-finite training loss at step " + std::to_string(res.steps + 1));
            }
            try {
                opt.step(model.parameters().values, grad, cfg.lr);
            } catch (const DivergenceError&) {
                save_best(res.model, res.best_epoch);
                throw;
            }
            ema_update(shadow.parameters().values, model.parameters().values, cfg.ema_decay);
            res.step_losses.push_back(lt.total());
            epoch_loss += lt.total();
            ++n_batches;
            ++res.steps;
            if (cfg.max_steps && res.steps >= cfg.max_steps) {
                stop = true;
                break;
            }
        }
        const double mean_loss = epoch_loss / static_cast<double>(std::max<std::size_t>(n_batches, 1));
        if (epoch % cfg.val_interval == 0 || stop || epoch == cfg.epochs) validate(epoch, mean_loss);
    }
    res.last = shadow;
    return res;
}

}  // namespace pace
