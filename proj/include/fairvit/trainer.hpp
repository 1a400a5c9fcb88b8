#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fairvit/data.hpp"
#include "fairvit/metrics.hpp"
#include "fairvit/model.hpp"

namespace fairvit {

enum class OptimizerKind { Adam, Sgd };
std::string optimizer_name(OptimizerKind k);
OptimizerKind optimizer_from_name(const std::string& name);

struct TrainConfig {
    double lr = 1e-4;
    size_t batch = 16;
    size_t epochs = 25;
    double lambda = 0.5;
    uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    bool augment = true;
    // Applies the three per-head updates from two reversal-free backward
    // passes instead of the fused GRL pass. Mathematically identical for SGD;
    // kept for equivalence testing.
    bool literal_updates = false;

    void validate() const;
};

struct AdamState {
    Tensor m, v;
    size_t t = 0;
};

struct OptState {
    std::map<std::string, AdamState> slots;
};

// Standard bias-corrected Adam step, in place.
void adam_update(Tensor& param, const Tensor& grad, AdamState& state, double lr, double beta1,
                 double beta2, double eps);
void sgd_update(Tensor& param, const Tensor& grad, double lr);

struct StepLosses {
    double l_pred = 0.0;
    double l_adv = 0.0;
    size_t adv_correct = 0;  // training-head argmax hits on this batch
    size_t batch_size = 0;
};

struct StepContext {
    size_t epoch = 0;
    size_t step = 0;
};

struct EpochLog {
    size_t epoch = 0;
    double mean_l_pred = 0.0;
    double mean_l_adv = 0.0;
    double val_pc = 0.0;
    double val_mae = 0.0;
    double val_rmse = 0.0;
    double adversary_accuracy = 0.0;  // training-head accuracy over the epoch
};
std::string epoch_log_to_json(const EpochLog& log);  // one JSON-lines entry

// One optimization step on a batch (already augmented). Realizes the combined
// objective: predictor/adversary heads minimize their losses while the feature
// extractor receives grad(L_pred) - lambda * grad(L_adv) through the GRL.
StepLosses train_step(Model& model, const std::vector<const Sample*>& batch, const TrainConfig& cfg,
                      OptState& opt, Rng& dropout_rng, const StepContext& ctx = {});

struct TrainResult {
    std::vector<EpochLog> logs;
};

// Full training loop with seeded shuffling, per-epoch validation metrics and
// per-epoch checkpoints (when run_dir is non-empty). start_epoch/opt resume a
// partially trained model.
TrainResult train(Model& model, const Dataset& train_ds, const Dataset& val_ds, const TrainConfig& cfg,
                  const std::string& run_dir = "", size_t start_epoch = 0, OptState* opt = nullptr);

struct EvalResult {
    std::vector<PredRow> rows;
    Tensor features;  // [n, feature_dim]
    std::optional<double> inline_adversary_accuracy;
};

// Deterministic eval-mode predictions (dropout off, no augmentation).
EvalResult evaluate(const Model& model, const Dataset& ds, size_t batch_size = 64);

// Checkpoint helpers that carry trainer state alongside the parameters.
void save_train_checkpoint(const std::string& path, const Model& model, const OptState& opt,
                           size_t epochs_done);
struct LoadedTrainState {
    Model model;
    OptState opt;
    size_t epochs_done = 0;
};
LoadedTrainState load_train_checkpoint(const std::string& path);

}  // namespace fairvit
