#pragma once

// Loss, AMSGrad, parameter EMA, the training loop and error metrics.
//
// Loss = lambda_E * mean_mol (E - E_ref)^2 + lambda_F * mean_{atoms, xyz} (f - f_ref)^2.
//
// Gradients: one double pass gives E and f. A second pass evaluates the model
// on dual positions x + eps u with u = f - f_ref and seeds the reverse sweep
// of molecule m with c + eps dL/dE_m, c = -2 lambda_F / (3 N). The eps part of
// the accumulated parameter adjoint is then the full loss gradient, the force
// term arriving as c u . d^2E/dx dtheta.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pace/model.hpp"

namespace pace {

struct LossTerms {
    double energy = 0;  // lambda_E * mean squared energy error
    double force = 0;  // lambda_F * mean squared force component error
    double total() const { return energy + force; }
};

/// DataError when a target lacks energy or forces or sizes disagree.
LossTerms loss(std::span<const Prediction> pred, std::span<const Structure> targets, double lambda_e, double lambda_f);

struct AmsGrad {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<double> m, v, vhat;
    std::uint64_t t = 0;

    /// params -= lr * mhat / (sqrt(vhat) + eps), with bias-corrected moments and
    /// vhat the running max of v. DivergenceError on a non-finite gradient
    /// (params untouched).
    void step(std::span<double> params, std::span<const double> grads, double lr);
};

/// shadow <- decay * shadow + (1 - decay) * params
void ema_update(std::span<double> shadow, std::span<const double> params, double decay);

struct TrainConfig {
    int epochs = 5000;
    int batch_size = 5;
    double lr = 0.01;
    double ema_decay = 0.99;
    double energy_weight = 9;
    double force_weight = 1000;
    int val_interval = 1;  // epochs between validations
    int max_steps = 0;  // 0: no cap
    int threads = 1;
    std::uint64_t seed = 0;
    std::filesystem::path metrics_path;  // CSV, optional
    std::filesystem::path checkpoint_path;  // best EMA weights, optional

    /// ConfigError naming the field.
    void validate() const;
    nlohmann::json to_json() const;
    /// Unknown keys are rejected.
    static TrainConfig from_json(const nlohmann::json& j);
};

struct Metrics {
    double e_mae = 0, f_mae = 0, e_rmse = 0, f_rmse = 0;  // meV and meV/Å
};

/// Predictions of `model` against labelled structures.
Metrics evaluate(const Model& model, std::span<const Structure> data, int threads = 1);
Metrics compute_metrics(std::span<const Prediction> pred, std::span<const Structure> targets);

/// Loss and its parameter gradient over a set of labelled structures (one
/// batch). `grad` is overwritten. Deterministic for any thread count.
LossTerms loss_and_gradient(const Model& model, std::span<const Structure* const> batch,
                            std::span<const MolecularGraph* const> graphs, double lambda_e, double lambda_f,
                            std::vector<double>& grad, int threads = 1);

struct EpochLog {
    int epoch = 0;
    double train_loss = 0;
    Metrics val;
};

struct TrainResult {
    Model model;  // EMA weights with the best validation loss
    Model last;  // EMA weights after the final step
    std::vector<EpochLog> log;
    std::vector<double> step_losses;
    int steps = 0;
    int best_epoch = 0;
};

/// Runs the loop; `progress` (optional) sees every logged epoch.
/// DivergenceError on a non-finite loss after saving the last good checkpoint.
TrainResult train(Model init, std::span<const Structure> train_set, std::span<const Structure> val_set,
                  const TrainConfig& cfg, const std::function<void(const EpochLog&)>& progress = {});

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochLog& e);

}  // namespace pace
