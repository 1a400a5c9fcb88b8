// Command-line driver: dataset synthesis, training, evaluation, saliency
// export and the fairness comparison report.
//
// Exit codes: 0 success, 1 validation/config error, 2 runtime abort.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fairvit/checkpoint.hpp"
#include "fairvit/explain.hpp"
#include "fairvit/image_io.hpp"
#include "fairvit/run_config.hpp"
#include "fairvit/trainer.hpp"

namespace fs = std::filesystem;
using namespace fairvit;

namespace {

struct CommonOpts {
    std::string config_file;
    std::vector<std::string> overrides;
};

RunConfig resolve_config(const CommonOpts& opts) {
    RunConfig cfg;
    if (!opts.config_file.empty()) cfg = RunConfig::from_file(opts.config_file);
    for (const std::string& kv : opts.overrides) {
        const size_t eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

void ensure_output_dir(const std::string& dir, bool force) {
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir)) throw ValidationError(dir + " exists and is not a directory");
        if (!fs::is_empty(dir) && !force) {
            throw ValidationError("output directory " + dir + " is not empty (use --force to overwrite)");
        }
    } else {
        fs::create_directories(dir);
    }
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << text;
}

// Loads the requested split: per-row labels if the manifest carries them,
// otherwise a seeded stratified 60/20/20 split.
Dataset load_split(const std::string& data_dir, const RunConfig& cfg, Split which) {
    const std::string manifest = (fs::path(data_dir) / "manifest.csv").string();
    Dataset full = load_manifest(manifest, cfg.model.image_size, Split::Full);
    bool labeled = false;
    {
        std::ifstream in(manifest);
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const size_t last = line.rfind(',');
            const std::string tag = line.substr(last + 1);
            if (tag == "train" || tag == "val" || tag == "test") labeled = true;
            break;
        }
    }
    if (which == Split::Full) return full;
    if (labeled) return load_manifest(manifest, cfg.model.image_size, which);
    auto parts = split_dataset(full, SplitRatios{}, cfg.train.seed);
    switch (which) {
        case Split::Train: return parts[0];
        case Split::Val: return parts[1];
        default: return parts[2];
    }
}

int cmd_synth(const CommonOpts& common, const std::string& out_dir, bool force) {
    RunConfig cfg = resolve_config(common);
    ensure_output_dir(out_dir, force);
    Dataset ds = generate(cfg.synth);
    export_dataset(ds, out_dir);
    write_text((fs::path(out_dir) / "config.txt").string(), cfg.to_text());

    size_t per_group[2] = {0, 0};
    double mean_score[2] = {0, 0};
    double lo = 5.0, hi = 1.0;
    for (const Sample& s : ds.samples) {
        per_group[s.attr] += 1;
        mean_score[s.attr] += s.score;
        lo = std::min(lo, s.score);
        hi = std::max(hi, s.score);
    }
    for (int g = 0; g < 2; ++g) mean_score[g] /= std::max<size_t>(1, per_group[g]);
    std::printf("wrote %zu samples to %s\n", ds.size(), out_dir.c_str());
    std::printf("group balance: A=%zu C=%zu\n", per_group[0], per_group[1]);
    std::printf("score range [%.3f, %.3f], group means A=%.3f C=%.3f\n", lo, hi, mean_score[0],
                mean_score[1]);
    return 0;
}

int cmd_train(const CommonOpts& common, const std::string& data_dir, const std::string& run_dir,
              const std::string& resume, bool force) {
    RunConfig cfg = resolve_config(common);
    if (resume.empty()) {
        ensure_output_dir(run_dir, force);
    } else if (!fs::exists(run_dir)) {
        fs::create_directories(run_dir);
    }
    Dataset train_ds = load_split(data_dir, cfg, Split::Train);
    Dataset val_ds = load_split(data_dir, cfg, Split::Val);

    write_text((fs::path(run_dir) / "config.txt").string(), cfg.to_text());

    size_t start_epoch = 0;
    OptState opt;
    Model model(cfg.model, cfg.train.seed);
    if (!resume.empty()) {
        LoadedTrainState state = load_train_checkpoint(resume);
        if (model_config_text(state.model.config()) != model_config_text(cfg.model)) {
            throw ValidationError("resume checkpoint config does not match the requested config");
        }
        model = std::move(state.model);
        opt = std::move(state.opt);
        start_epoch = state.epochs_done;
    }
    TrainResult res = train(model, train_ds, val_ds, cfg.train, run_dir, start_epoch, &opt);
    if (!res.logs.empty()) {
        const EpochLog& last = res.logs.back();
        std::printf("trained %s for %zu epochs: val PC %.4f MAE %.4f RMSE %.4f\n",
                    variant_name(cfg.model.variant).c_str(), cfg.train.epochs, last.val_pc,
                    last.val_mae, last.val_rmse);
    }
    std::printf("run artifacts in %s\n", run_dir.c_str());
    return 0;
}

int cmd_eval(const CommonOpts& common, const std::string& ckpt_path, const std::string& data_dir,
             const std::string& split_str, const std::string& out_dir, bool force) {
    RunConfig cfg = resolve_config(common);
    LoadedTrainState state = load_train_checkpoint(ckpt_path);
    cfg.model = state.model.config();  // checkpoint is authoritative for the architecture
    ensure_output_dir(out_dir, force);

    Dataset ds = load_split(data_dir, cfg, split_from_name(split_str));
    EvalResult ev = evaluate(state.model, ds);

    std::ostringstream preds;
    preds << "id,y,pred,attr\n";
    char buf[128];
    for (const PredRow& r : ev.rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%d\n", r.id.c_str(), r.y, r.pred, r.attr);
        preds << buf;
    }
    write_text((fs::path(out_dir) / "predictions.csv").string(), preds.str());

    std::vector<int> attrs;
    for (const PredRow& r : ev.rows) attrs.push_back(r.attr);
    MetricsReport report = compute_metrics(ev.rows, ev.features, cfg.probe,
                                           ev.inline_adversary_accuracy);
    write_text((fs::path(out_dir) / "metrics.json").string(), metrics_to_json(report) + "\n");
    std::printf("PC %.4f MAE %.4f RMSE %.4f gap %.4f probe %.1f%%\n", report.pc, report.mae,
                report.rmse, report.performance_gap, 100.0 * report.probe_accuracy);
    return 0;
}

int cmd_explain(const CommonOpts& common, const std::string& ckpt_path, const std::string& data_dir,
                const std::vector<std::string>& ids, const std::string& split_str,
                const std::string& out_dir, bool force) {
    RunConfig cfg = resolve_config(common);
    LoadedTrainState state = load_train_checkpoint(ckpt_path);
    cfg.model = state.model.config();
    ensure_output_dir(out_dir, force);
    Dataset ds = load_split(data_dir, cfg, split_from_name(split_str));

    std::vector<std::string> missing;
    for (const std::string& id : ids) {
        const auto it = std::find_if(ds.samples.begin(), ds.samples.end(),
                                     [&](const Sample& s) { return s.id == id; });
        if (it == ds.samples.end()) {
            missing.push_back(id);
            continue;
        }
        const Sample& sample = *it;
        write_ppm((fs::path(out_dir) / (id + ".original.ppm")).string(), sample.image);
        if (state.model.config().has_cnn()) {
            export_heatmap(grad_cam(state.model, sample), sample.image, out_dir);
        } else {
            std::fprintf(stderr, "warning: %s: no CNN branch, grad-cam skipped\n", id.c_str());
        }
        if (state.model.config().has_vit()) {
            export_heatmap(attention_rollout(state.model, sample), sample.image, out_dir);
        } else {
            std::fprintf(stderr, "warning: %s: no ViT branch, attention rollout skipped\n", id.c_str());
        }
    }
    if (!missing.empty()) {
        std::fprintf(stderr, "error: %zu id(s) not found in %s split:", missing.size(),
                     split_str.c_str());
        for (const std::string& id : missing) std::fprintf(stderr, " %s", id.c_str());
        std::fprintf(stderr, "\n");
        return 1;
    }
    std::printf("heatmaps written to %s\n", out_dir.c_str());
    return 0;
}

int cmd_report(const std::string& baseline_path, const std::string& fair_path,
               const std::string& out_path) {
    auto read_file = [](const std::string& p) {
        std::ifstream in(p);
        if (!in) throw IoError("cannot open metrics file " + p);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    MetricsReport base = metrics_from_json(read_file(baseline_path));
    MetricsReport fair = metrics_from_json(read_file(fair_path));
    const double reduction = bias_reduction(base.performance_gap, fair.performance_gap);

    std::printf("%-14s %8s %8s %8s %8s\n", "method", "MAE[A]", "MAE[C]", "gap", "probe");
    auto row = [](const char* name, const MetricsReport& r) {
        std::printf("%-14s %8.3f %8.3f %8.3f %7.1f%%\n", name, r.group_mae.at(0), r.group_mae.at(1),
                    r.performance_gap, 100.0 * r.probe_accuracy);
    };
    row("baseline", base);
    row("fair", fair);
    std::printf("bias reduction: %.1f%%\n", reduction);

    nlohmann::json j;
    j["baseline"] = nlohmann::json::parse(metrics_to_json(base));
    j["fair"] = nlohmann::json::parse(metrics_to_json(fair));
    j["bias_reduction_percent"] = reduction;
    char formatted[32];
    std::snprintf(formatted, sizeof(formatted), "%.1f%%", reduction);
    j["bias_reduction_display"] = formatted;
    if (!out_path.empty()) write_text(out_path, j.dump(2) + "\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fairvit: fair hybrid CNN/ViT score regression on synthetic biased data"};
    app.require_subcommand(1);

    CommonOpts common;
    std::string out_dir, data_dir, run_dir, ckpt, resume, split = "test";
    std::string baseline_path, fair_path, report_out;
    std::vector<std::string> ids;
    bool force = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_file, "flat key=value config file");
        sub->add_option("--set", common.overrides, "override a config key (key=value)")
            ->take_all();
    };

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    add_common(synth);
    synth->add_option("--out", out_dir, "output dataset directory")->required();
    synth->add_flag("--force", force, "allow writing into a non-empty directory");

    CLI::App* train_cmd = app.add_subcommand("train", "train a model variant");
    add_common(train_cmd);
    train_cmd->add_option("--data", data_dir, "dataset directory (manifest.csv + images)")->required();
    train_cmd->add_option("--out", run_dir, "run directory for checkpoints and logs")->required();
    train_cmd->add_option("--resume", resume, "checkpoint to resume from");
    train_cmd->add_flag("--force", force, "allow writing into a non-empty directory");
    // shortcuts for the most common experiment knobs; equivalent to --set
    std::string variant_flag, lambda_flag, seed_flag, epochs_flag;
    train_cmd->add_option("--variant", variant_flag,
                          "cnn_only | vit_only | hybrid | fair_hybrid");
    train_cmd->add_option("--lambda", lambda_flag, "adversarial weight");
    train_cmd->add_option("--seed", seed_flag, "training seed");
    train_cmd->add_option("--epochs", epochs_flag, "training epochs");
    train_cmd->callback([&]() {
        if (!variant_flag.empty()) common.overrides.push_back("variant=" + variant_flag);
        if (!lambda_flag.empty()) common.overrides.push_back("lambda=" + lambda_flag);
        if (!seed_flag.empty()) common.overrides.push_back("seed=" + seed_flag);
        if (!epochs_flag.empty()) common.overrides.push_back("epochs=" + epochs_flag);
    });

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval_cmd);
    eval_cmd->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    eval_cmd->add_option("--data", data_dir, "dataset directory")->required();
    eval_cmd->add_option("--split", split, "train|val|test|full (default test)");
    eval_cmd->add_option("--out", out_dir, "output directory")->required();
    eval_cmd->add_flag("--force", force, "allow writing into a non-empty directory");

    CLI::App* explain_cmd = app.add_subcommand("explain", "export saliency heatmaps");
    add_common(explain_cmd);
    explain_cmd->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    explain_cmd->add_option("--data", data_dir, "dataset directory")->required();
    explain_cmd->add_option("--ids", ids, "sample ids")->required()->delimiter(',');
    explain_cmd->add_option("--split", split, "train|val|test|full (default test)");
    explain_cmd->add_option("--out", out_dir, "output directory")->required();
    explain_cmd->add_flag("--force", force, "allow writing into a non-empty directory");

    CLI::App* report_cmd = app.add_subcommand("report", "compare baseline and fair metrics");
    report_cmd->add_option("--baseline", baseline_path, "baseline metrics.json")->required();
    report_cmd->add_option("--fair", fair_path, "fair-model metrics.json")->required();
    report_cmd->add_option("--out", report_out, "write the comparison as JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed()) return cmd_synth(common, out_dir, force);
        if (train_cmd->parsed()) return cmd_train(common, data_dir, run_dir, resume, force);
        if (eval_cmd->parsed()) return cmd_eval(common, ckpt, data_dir, split, out_dir, force);
        if (explain_cmd->parsed())
            return cmd_explain(common, ckpt, data_dir, ids, split, out_dir, force);
        if (report_cmd->parsed()) return cmd_report(baseline_path, fair_path, report_out);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const ShapeError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const DomainError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const TrainingAbort& e) {
        std::fprintf(stderr, "training aborted: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "fatal: %s\n", e.what());
        return 2;
    }
    return 0;
}
