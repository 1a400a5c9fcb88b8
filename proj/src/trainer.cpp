#include "fairvit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "fairvit/checkpoint.hpp"

namespace fs = std::filesystem;

namespace fairvit {

std::string optimizer_name(OptimizerKind k) {
    return k == OptimizerKind::Adam ? "adam" : "sgd";
}

OptimizerKind optimizer_from_name(const std::string& name) {
    if (name == "adam") return OptimizerKind::Adam;
    if (name == "sgd") return OptimizerKind::Sgd;
    throw ConfigError("unknown optimizer '" + name + "' (expected adam or sgd)");
}

void TrainConfig::validate() const {
    if (lr <= 0.0) throw ConfigError("train config: lr must be positive");
    if (batch < 1) throw ConfigError("train config: batch must be >= 1");
    if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
    if (lambda < 0.0) throw ConfigError("train config: lambda must be non-negative");
}

void adam_update(Tensor& param, const Tensor& grad, AdamState& state, double lr, double beta1,
                 double beta2, double eps) {
    if (state.t == 0) {
        state.m = Tensor::zeros(param.shape());
        state.v = Tensor::zeros(param.shape());
    }
    if (state.m.shape() != param.shape() || grad.shape() != param.shape()) {
        throw ShapeError("adam_update: state/grad shapes do not match parameter " +
                         shape_str(param.shape()));
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (size_t i = 0; i < param.numel(); ++i) {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad[i] * grad[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

void sgd_update(Tensor& param, const Tensor& grad, double lr) {
    if (grad.shape() != param.shape()) {
        throw ShapeError("sgd_update: grad shape " + shape_str(grad.shape()) +
                         " does not match parameter " + shape_str(param.shape()));
    }
    for (size_t i = 0; i < param.numel(); ++i) param[i] -= lr * grad[i];
}

std::string epoch_log_to_json(const EpochLog& log) {
    nlohmann::json j;
    j["epoch"] = log.epoch;
    j["mean_l_pred"] = log.mean_l_pred;
    j["mean_l_adv"] = log.mean_l_adv;
    j["val_pc"] = log.val_pc;
    j["val_mae"] = log.val_mae;
    j["val_rmse"] = log.val_rmse;
    j["adversary_accuracy"] = log.adversary_accuracy;
    return j.dump();
}

namespace {

struct BatchTensors {
    Tensor images;  // [N, c, s, s]
    Tensor targets; // [N]
    Tensor onehot;  // [N, C]
    std::vector<int> attrs;
};

BatchTensors assemble(const std::vector<const Sample*>& batch, const ModelConfig& cfg) {
    if (batch.empty()) throw ContractError("train_step: empty batch");
    const size_t N = batch.size();
    const size_t C = cfg.channels, S = cfg.image_size;
    BatchTensors bt{Tensor({N, C, S, S}), Tensor({N}), Tensor({N, cfg.attr_classes}), {}};
    for (size_t i = 0; i < N; ++i) {
        const Sample& s = *batch[i];
        if (s.image.shape() != Shape{C, S, S}) {
            throw ShapeError("batch image " + s.id + " has shape " + shape_str(s.image.shape()) +
                             ", expected " + shape_str({C, S, S}));
        }
        std::copy(s.image.data().begin(), s.image.data().end(),
                  bt.images.data().begin() + i * C * S * S);
        bt.targets[i] = s.score;
        bt.onehot[i * cfg.attr_classes + static_cast<size_t>(s.attr)] = 1.0;
        bt.attrs.push_back(s.attr);
    }
    return bt;
}

size_t count_argmax_hits(const Tensor& logits, const std::vector<int>& attrs) {
    const size_t N = logits.dim(0), C = logits.dim(1);
    size_t correct = 0;
    for (size_t i = 0; i < N; ++i) {
        size_t best = 0;
        for (size_t j = 1; j < C; ++j) {
            if (logits[i * C + j] > logits[i * C + best]) best = j;
        }
        if (static_cast<int>(best) == attrs[i]) ++correct;
    }
    return correct;
}

void apply_update(Tensor& param, const Tensor& grad, const std::string& name, const TrainConfig& cfg,
                  OptState& opt) {
    if (cfg.optimizer == OptimizerKind::Adam) {
        adam_update(param, grad, opt.slots[name], cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    } else {
        sgd_update(param, grad, cfg.lr);
    }
}

}  // namespace

StepLosses train_step(Model& model, const std::vector<const Sample*>& batch, const TrainConfig& cfg,
                      OptState& opt, Rng& dropout_rng, const StepContext& ctx) {
    const ModelConfig& mc = model.config();
    BatchTensors bt = assemble(batch, mc);

    Tape tape;
    BoundParams bp = model.bind(tape);
    Tensor images = tape.leaf(bt.images, false);
    FeatureBundle fb = model.extract_features(tape, bp, images, true, &dropout_rng);
    Tensor pred = model.predict_score(tape, bp, fb.f, true, &dropout_rng);
    Tensor l_pred = nn::mse_loss(tape, pred, tape.leaf(bt.targets, false));

    StepLosses losses;
    losses.batch_size = batch.size();
    losses.l_pred = l_pred.item();

    const bool adversarial = mc.has_adversary();
    Tensor l_adv;
    Tensor adv_logits;
    if (adversarial) {
        adv_logits = model.adversary_logits(tape, bp, fb.f, true, &dropout_rng,
                                            /*use_grl=*/!cfg.literal_updates);
        l_adv = nn::cross_entropy_loss(tape, adv_logits, tape.leaf(bt.onehot, false));
        losses.l_adv = l_adv.item();
        losses.adv_correct = count_argmax_hits(adv_logits, bt.attrs);
    }

    if (!std::isfinite(losses.l_pred) || (adversarial && !std::isfinite(losses.l_adv))) {
        throw TrainingAbort("non-finite loss at epoch " + std::to_string(ctx.epoch) + " step " +
                            std::to_string(ctx.step) + ": l_pred=" + std::to_string(losses.l_pred) +
                            " l_adv=" + std::to_string(losses.l_adv));
    }

    if (!cfg.literal_updates) {
        // fused: one backward pass; the GRL realizes the -lambda reversal for theta_F
        Tensor total = adversarial ? tape.add(l_pred, l_adv) : l_pred;
        GradientMap grads = tape.backward(total);
        model.params().for_each([&](const std::string& name, Tensor& param) {
            const Tensor* g = grads.find(bp.at(name).node());
            if (g) apply_update(param, *g, name, cfg, opt);
        });
    } else {
        // separate per-head updates from the same forward pass
        GradientMap g_pred = tape.backward(l_pred);
        std::optional<GradientMap> g_adv;
        if (adversarial) g_adv.emplace(tape.backward(l_adv));
        for (auto& [name, param] : model.params().theta_p.entries()) {
            const Tensor* g = g_pred.find(bp.at(name).node());
            if (g) apply_update(param, *g, name, cfg, opt);
        }
        if (adversarial) {
            for (auto& [name, param] : model.params().theta_a.entries()) {
                const Tensor* g = g_adv->find(bp.at(name).node());
                if (g) apply_update(param, *g, name, cfg, opt);
            }
        }
        for (auto& [name, param] : model.params().theta_f.entries()) {
            const Tensor* gp = g_pred.find(bp.at(name).node());
            if (!gp) continue;
            Tensor combined = *gp;
            if (adversarial) {
                const Tensor* ga = g_adv->find(bp.at(name).node());
                if (ga) {
                    for (size_t i = 0; i < combined.numel(); ++i) {
                        combined[i] -= cfg.lambda * (*ga)[i];
                    }
                }
            }
            apply_update(param, combined, name, cfg, opt);
        }
    }
    return losses;
}

EvalResult evaluate(const Model& model, const Dataset& ds, size_t batch_size) {
    if (ds.samples.empty()) throw ValidationError("evaluate: empty dataset");
    const ModelConfig& mc = model.config();
    EvalResult result;
    result.features = Tensor({ds.size(), mc.feature_dim()});
    size_t adv_correct = 0;

    for (size_t start = 0; start < ds.size(); start += batch_size) {
        const size_t n = std::min(batch_size, ds.size() - start);
        std::vector<const Sample*> batch;
        batch.reserve(n);
        for (size_t i = 0; i < n; ++i) batch.push_back(&ds.samples[start + i]);
        BatchTensors bt = assemble(batch, mc);

        Tape tape;
        BoundParams bp = model.bind(tape);
        Tensor images = tape.leaf(bt.images, false);
        FeatureBundle fb = model.extract_features(tape, bp, images, false);
        Tensor pred = model.predict_score(tape, bp, fb.f, false);
        for (size_t i = 0; i < n; ++i) {
            const Sample& s = ds.samples[start + i];
            result.rows.push_back(PredRow{s.id, s.score, pred[i], s.attr});
            std::copy(fb.f.data().begin() + i * mc.feature_dim(),
                      fb.f.data().begin() + (i + 1) * mc.feature_dim(),
                      result.features.data().begin() + (start + i) * mc.feature_dim());
        }
        if (mc.has_adversary()) {
            Tensor logits = model.adversary_logits(tape, bp, fb.f, false);
            adv_correct += count_argmax_hits(logits, bt.attrs);
        }
    }
    if (mc.has_adversary()) {
        result.inline_adversary_accuracy =
            static_cast<double>(adv_correct) / static_cast<double>(ds.size());
    }
    return result;
}

void save_train_checkpoint(const std::string& path, const Model& model, const OptState& opt,
                           size_t epochs_done) {
    Checkpoint ckpt;
    ckpt.config = model.config();
    ckpt.params = model.params();
    for (const auto& [name, st] : opt.slots) {
        if (st.t == 0) continue;
        ckpt.extras.emplace("opt.m." + name, st.m);
        ckpt.extras.emplace("opt.v." + name, st.v);
        ckpt.extras.emplace("opt.t." + name, Tensor::scalar(static_cast<double>(st.t)));
    }
    ckpt.extras.emplace("train.epoch", Tensor::scalar(static_cast<double>(epochs_done)));
    save_checkpoint(path, ckpt);
}

LoadedTrainState load_train_checkpoint(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    LoadedTrainState state{Model(ckpt.config, std::move(ckpt.params)), OptState{}, 0};
    for (const auto& [name, t] : ckpt.extras) {
        if (name == "train.epoch") {
            state.epochs_done = static_cast<size_t>(t.item());
        } else if (name.rfind("opt.m.", 0) == 0) {
            state.opt.slots[name.substr(6)].m = t;
        } else if (name.rfind("opt.v.", 0) == 0) {
            state.opt.slots[name.substr(6)].v = t;
        } else if (name.rfind("opt.t.", 0) == 0) {
            state.opt.slots[name.substr(6)].t = static_cast<size_t>(t.item());
        }
    }
    return state;
}

TrainResult train(Model& model, const Dataset& train_ds, const Dataset& val_ds, const TrainConfig& cfg,
                  const std::string& run_dir, size_t start_epoch, OptState* opt_in) {
    cfg.validate();
    if (train_ds.samples.empty() || val_ds.samples.empty()) {
        throw ValidationError("train: train and validation datasets must be non-empty");
    }
    if (model.config().has_adversary() && model.config().grl_lambda != cfg.lambda) {
        throw ConfigError("train: model grl_lambda " + std::to_string(model.config().grl_lambda) +
                          " differs from train lambda " + std::to_string(cfg.lambda));
    }

    OptState local_opt;
    OptState& opt = opt_in ? *opt_in : local_opt;

    std::ofstream log_file;
    if (!run_dir.empty()) {
        fs::create_directories(run_dir);
        log_file.open(fs::path(run_dir) / "epochs.jsonl", std::ios::app);
        if (!log_file) throw IoError("cannot open epoch log in " + run_dir);
    }

    TrainResult result;
    const size_t n = train_ds.size();
    for (size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(cfg.seed, epoch, 1));
        Rng dropout_rng(mix_seed(cfg.seed, epoch, 2));
        Rng augment_rng(mix_seed(cfg.seed, epoch, 3));

        std::vector<size_t> order(n);
        for (size_t i = 0; i < n; ++i) order[i] = i;
        for (size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);

        double sum_pred = 0.0, sum_adv = 0.0;
        size_t adv_correct = 0, steps = 0;
        for (size_t start = 0; start < n; start += cfg.batch) {
            const size_t bn = std::min(cfg.batch, n - start);
            std::vector<Sample> augmented;
            std::vector<const Sample*> batch;
            augmented.reserve(bn);
            batch.reserve(bn);
            for (size_t i = 0; i < bn; ++i) {
                const Sample& s = train_ds.samples[order[start + i]];
                if (cfg.augment) {
                    Sample a = s;
                    a.image = augment(s.image, augment_rng);
                    augmented.push_back(std::move(a));
                } else {
                    augmented.push_back(s);
                }
            }
            for (const Sample& s : augmented) batch.push_back(&s);
            StepLosses sl = train_step(model, batch, cfg, opt, dropout_rng,
                                       StepContext{epoch, steps});
            sum_pred += sl.l_pred;
            sum_adv += sl.l_adv;
            adv_correct += sl.adv_correct;
            ++steps;
        }

        EvalResult val = evaluate(model, val_ds);
        std::vector<double> preds, targets;
        for (const PredRow& r : val.rows) {
            preds.push_back(r.pred);
            targets.push_back(r.y);
        }
        EpochLog log;
        log.epoch = epoch;
        log.mean_l_pred = sum_pred / static_cast<double>(steps);
        log.mean_l_adv = sum_adv / static_cast<double>(steps);
        log.val_pc = pearson(preds, targets);
        log.val_mae = mae(preds, targets);
        log.val_rmse = rmse(preds, targets);
        log.adversary_accuracy =
            model.config().has_adversary() ? static_cast<double>(adv_correct) / static_cast<double>(n) : 0.0;
        result.logs.push_back(log);

        if (!run_dir.empty()) {
            log_file << epoch_log_to_json(log) << "\n";
            log_file.flush();
            char name[32];
            std::snprintf(name, sizeof(name), "epoch_%03zu.ckpt", epoch);
            save_train_checkpoint((fs::path(run_dir) / name).string(), model, opt, epoch + 1);
        }
    }
    if (!run_dir.empty()) {
        save_train_checkpoint((fs::path(run_dir) / "final.ckpt").string(), model, opt, cfg.epochs);
    }
    return result;
}

}  // namespace fairvit
