// Python bindings over the core pipeline: synthesis, training, evaluation,
// metrics and the two explainers.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fairvit/explain.hpp"
#include "fairvit/metrics.hpp"
#include "fairvit/run_config.hpp"
#include "fairvit/trainer.hpp"

namespace py = pybind11;
using namespace fairvit;

namespace {

py::array_t<double> tensor_to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

ModelConfig model_config_from_dict(const py::dict& d) {
    ModelConfig cfg;
    for (auto item : d) {
        const std::string key = py::cast<std::string>(item.first);
        if (key == "variant") cfg.variant = variant_from_name(py::cast<std::string>(item.second));
        else if (key == "image_size") cfg.image_size = py::cast<size_t>(item.second);
        else if (key == "channels") cfg.channels = py::cast<size_t>(item.second);
        else if (key == "cnn_channels") cfg.cnn_channels = py::cast<std::vector<size_t>>(item.second);
        else if (key == "patch") cfg.patch = py::cast<size_t>(item.second);
        else if (key == "d_vit") cfg.d_vit = py::cast<size_t>(item.second);
        else if (key == "vit_depth") cfg.vit_depth = py::cast<size_t>(item.second);
        else if (key == "heads") cfg.heads = py::cast<size_t>(item.second);
        else if (key == "head_hidden") cfg.head_hidden = py::cast<size_t>(item.second);
        else if (key == "head_hidden_layers") cfg.head_hidden_layers = py::cast<size_t>(item.second);
        else if (key == "dropout") cfg.dropout = py::cast<double>(item.second);
        else if (key == "attr_classes") cfg.attr_classes = py::cast<size_t>(item.second);
        else if (key == "grl_lambda") cfg.grl_lambda = py::cast<double>(item.second);
        else throw ConfigError("unknown model config key '" + key + "'");
    }
    return cfg;
}

TrainConfig train_config_from_dict(const py::dict& d) {
    TrainConfig cfg;
    for (auto item : d) {
        const std::string key = py::cast<std::string>(item.first);
        if (key == "lr") cfg.lr = py::cast<double>(item.second);
        else if (key == "batch") cfg.batch = py::cast<size_t>(item.second);
        else if (key == "epochs") cfg.epochs = py::cast<size_t>(item.second);
        else if (key == "lambda" || key == "grl_lambda") cfg.lambda = py::cast<double>(item.second);
        else if (key == "seed") cfg.seed = py::cast<uint64_t>(item.second);
        else if (key == "optimizer") cfg.optimizer = optimizer_from_name(py::cast<std::string>(item.second));
        else if (key == "augment") cfg.augment = py::cast<bool>(item.second);
        else if (key == "literal_updates") cfg.literal_updates = py::cast<bool>(item.second);
        else throw ConfigError("unknown train config key '" + key + "'");
    }
    return cfg;
}

py::dict metrics_to_dict(const MetricsReport& r) {
    py::dict d;
    d["pc"] = r.pc;
    d["mae"] = r.mae;
    d["rmse"] = r.rmse;
    py::dict gm;
    for (const auto& [g, v] : r.group_mae) gm[py::int_(g)] = v;
    d["group_mae"] = gm;
    d["performance_gap"] = r.performance_gap;
    d["probe_accuracy"] = r.probe_accuracy;
    if (r.inline_adversary_accuracy) d["inline_adversary_accuracy"] = *r.inline_adversary_accuracy;
    return d;
}

struct PyTrainedModel {
    Model model;
    std::vector<EpochLog> logs;
};

}  // namespace

PYBIND11_MODULE(_fairvit, m) {
    m.doc() = "Fair hybrid CNN/ViT score regression with adversarial debiasing";

    py::register_exception<ShapeError>(m, "ShapeError");
    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<ValidationError>(m, "ValidationError");
    py::register_exception<TrainingAbort>(m, "TrainingAbort");

    py::class_<Dataset>(m, "Dataset")
        .def("__len__", [](const Dataset& d) { return d.size(); })
        .def("ids",
             [](const Dataset& d) {
                 std::vector<std::string> out;
                 for (const Sample& s : d.samples) out.push_back(s.id);
                 return out;
             })
        .def("scores",
             [](const Dataset& d) {
                 std::vector<double> out;
                 for (const Sample& s : d.samples) out.push_back(s.score);
                 return out;
             })
        .def("attrs",
             [](const Dataset& d) {
                 std::vector<int> out;
                 for (const Sample& s : d.samples) out.push_back(s.attr);
                 return out;
             })
        .def("image", [](const Dataset& d, size_t i) { return tensor_to_numpy(d.samples.at(i).image); });

    m.def(
        "generate",
        [](size_t n, size_t image_size, double local_cue_weight, double global_cue_weight,
           double group_offset, double cue_noise, uint64_t seed) {
            SyntheticSpec spec{n, image_size, local_cue_weight, global_cue_weight, group_offset,
                               cue_noise, seed};
            return generate(spec);
        },
        py::arg("n"), py::arg("image_size") = 32, py::arg("local_cue_weight") = 0.25,
        py::arg("global_cue_weight") = 0.25, py::arg("group_offset") = 0.0,
        py::arg("cue_noise") = 0.02, py::arg("seed") = 0,
        "Generate a synthetic dataset with a controllable attribute/score bias.");

    m.def(
        "split",
        [](const Dataset& ds, double train_r, double val_r, double test_r, uint64_t seed) {
            auto parts = split_dataset(ds, SplitRatios{train_r, val_r, test_r}, seed);
            return py::make_tuple(parts[0], parts[1], parts[2]);
        },
        py::arg("dataset"), py::arg("train") = 0.6, py::arg("val") = 0.2, py::arg("test") = 0.2,
        py::arg("seed") = 0, "Stratified train/val/test split.");

    m.def("load_manifest", [](const std::string& path, size_t image_size) {
        return load_manifest(path, image_size, Split::Full);
    });
    m.def("export_dataset", &export_dataset);

    py::class_<PyTrainedModel>(m, "TrainedModel")
        .def("logs",
             [](const PyTrainedModel& tm) {
                 std::vector<std::string> out;
                 for (const EpochLog& l : tm.logs) out.push_back(epoch_log_to_json(l));
                 return out;
             })
        .def("evaluate",
             [](const PyTrainedModel& tm, const Dataset& ds, size_t probe_epochs,
                uint64_t probe_seed) {
                 EvalResult ev = evaluate(tm.model, ds);
                 ProbeConfig pc;
                 pc.epochs = probe_epochs;
                 pc.seed = probe_seed;
                 MetricsReport report = compute_metrics(ev.rows, ev.features, pc,
                                                        ev.inline_adversary_accuracy);
                 py::dict d = metrics_to_dict(report);
                 std::vector<double> preds;
                 for (const PredRow& r : ev.rows) preds.push_back(r.pred);
                 d["predictions"] = preds;
                 return d;
             },
             py::arg("dataset"), py::arg("probe_epochs") = 200, py::arg("probe_seed") = 0)
        .def("save", [](const PyTrainedModel& tm, const std::string& path) {
            save_train_checkpoint(path, tm.model, OptState{}, tm.logs.size());
        })
        .def("grad_cam",
             [](const PyTrainedModel& tm, const Dataset& ds, size_t index) {
                 return tensor_to_numpy(grad_cam(tm.model, ds.samples.at(index)).values);
             })
        .def("attention_rollout", [](const PyTrainedModel& tm, const Dataset& ds, size_t index) {
            return tensor_to_numpy(attention_rollout(tm.model, ds.samples.at(index)).values);
        });

    m.def(
        "train",
        [](const Dataset& train_ds, const Dataset& val_ds, const py::dict& model_cfg,
           const py::dict& train_cfg) {
            ModelConfig mc = model_config_from_dict(model_cfg);
            TrainConfig tc = train_config_from_dict(train_cfg);
            if (mc.has_adversary()) mc.grl_lambda = tc.lambda;
            Model model(mc, tc.seed);
            TrainResult res = train(model, train_ds, val_ds, tc);
            return PyTrainedModel{std::move(model), std::move(res.logs)};
        },
        py::arg("train_ds"), py::arg("val_ds"), py::arg("model_config") = py::dict(),
        py::arg("train_config") = py::dict(),
        "Train a model variant; returns a TrainedModel handle.");

    m.def("load", [](const std::string& path) {
        LoadedTrainState st = load_train_checkpoint(path);
        return PyTrainedModel{std::move(st.model), {}};
    });

    // metric primitives
    m.def("pearson", &pearson);
    m.def("mae", static_cast<double (*)(const std::vector<double>&, const std::vector<double>&)>(&mae));
    m.def("rmse", static_cast<double (*)(const std::vector<double>&, const std::vector<double>&)>(&rmse));
    m.def("bias_reduction", &bias_reduction);
    m.def(
        "performance_gap",
        [](const std::vector<double>& pred, const std::vector<double>& y, const std::vector<int>& attr) {
            if (pred.size() != y.size() || y.size() != attr.size()) {
                throw ShapeError("performance_gap: input lengths differ");
            }
            std::vector<PredRow> rows;
            for (size_t i = 0; i < pred.size(); ++i) {
                rows.push_back(PredRow{std::to_string(i), y[i], pred[i], attr[i]});
            }
            auto [gm, gap] = performance_gap(rows);
            py::dict d;
            for (const auto& [g, v] : gm) d[py::int_(g)] = v;
            return py::make_tuple(d, gap);
        },
        "Per-group MAE map and the absolute gap.");

    m.def(
        "grl_gradient_check",
        [](double lambda) {
            // forward identity + reversed backward, exercised end to end
            Tape tape;
            Rng rng(5);
            Tensor x = tape.leaf(Tensor::uniform({8}, rng, -1, 1));
            Tensor w = Tensor::uniform({8}, rng, 0.5, 1.5);
            Tensor y = nn::grl(tape, x, nn::GrlConfig{lambda});
            GradientMap g = tape.backward(tape.sum(tape.mul(y, tape.leaf(w, false))));
            const Tensor& gx = g.at(x.node());
            for (size_t i = 0; i < 8; ++i) {
                if (gx[i] != -lambda * w[i]) return false;
            }
            return true;
        },
        py::arg("lambda_") = 0.5);

    m.attr("__version__") = "0.1.0";
}
