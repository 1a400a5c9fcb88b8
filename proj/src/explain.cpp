#include "fairvit/explain.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "fairvit/image_io.hpp"

namespace fs = std::filesystem;

namespace fairvit {

namespace {

// min-max to [0,1]; constant maps render as neutral 0.5
void normalize_map(Tensor& map) {
    double lo = map[0], hi = map[0];
    for (double v : map.data()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi - lo <= 0.0) {
        for (double& v : map.data()) v = 0.5;
        return;
    }
    for (double& v : map.data()) v = (v - lo) / (hi - lo);
}

Tensor upsample_to(const Tensor& map, size_t size) {
    Tensor as_img({1, map.dim(0), map.dim(1)}, map.data());
    Tensor up = resize_bilinear(as_img, size, size);
    return Tensor({size, size}, up.data());
}

// head-average + residual mix + row renormalization for one layer
Tensor layer_transition(const Tensor& attn) {
    Tensor a = attn;
    if (a.rank() == 4) {
        if (a.dim(0) != 1) {
            throw ShapeError("rollout: expected batch of 1, got " + shape_str(a.shape()));
        }
        a = Tensor({a.dim(1), a.dim(2), a.dim(3)}, a.data());
    }
    if (a.rank() != 3 || a.dim(1) != a.dim(2)) {
        throw ShapeError("rollout: expected [heads,tokens,tokens], got " + shape_str(a.shape()));
    }
    const size_t H = a.dim(0), T = a.dim(1);
    Tensor mixed({T, T});
    for (size_t i = 0; i < T; ++i) {
        for (size_t j = 0; j < T; ++j) {
            double s = 0.0;
            for (size_t h = 0; h < H; ++h) s += a[(h * T + i) * T + j];
            mixed[i * T + j] = 0.5 * (s / static_cast<double>(H)) + (i == j ? 0.5 : 0.0);
        }
    }
    for (size_t i = 0; i < T; ++i) {
        double row_sum = 0.0;
        for (size_t j = 0; j < T; ++j) row_sum += mixed[i * T + j];
        if (row_sum <= 0.0) throw ValidationError("rollout: non-positive attention row sum");
        for (size_t j = 0; j < T; ++j) mixed[i * T + j] /= row_sum;
    }
    return mixed;
}

}  // namespace

Tensor rollout_matrix(const std::vector<Tensor>& attn_maps) {
    if (attn_maps.empty()) throw ValidationError("rollout: need at least one attention layer");
    Tensor rollout = layer_transition(attn_maps[0]);
    const size_t T = rollout.dim(0);
    for (size_t l = 1; l < attn_maps.size(); ++l) {
        Tensor next = layer_transition(attn_maps[l]);
        if (next.dim(0) != T) {
            throw ShapeError("rollout: token count changed between layers (" + std::to_string(T) +
                             " vs " + std::to_string(next.dim(0)) + ")");
        }
        // rollout_(l) = A_l * rollout_(l-1)
        Tensor prod({T, T});
        for (size_t i = 0; i < T; ++i) {
            for (size_t k = 0; k < T; ++k) {
                const double v = next[i * T + k];
                for (size_t j = 0; j < T; ++j) prod[i * T + j] += v * rollout[k * T + j];
            }
        }
        rollout = std::move(prod);
    }
    return rollout;
}

Tensor grad_cam_raw(const Model& model, const Sample& sample) {
    const ModelConfig& cfg = model.config();
    if (!cfg.has_cnn()) {
        throw ConfigError("grad_cam: variant " + variant_name(cfg.variant) + " has no CNN branch");
    }
    const size_t S = cfg.image_size;
    Tape tape;
    BoundParams bp = model.bind(tape);
    Tensor images = tape.leaf(Tensor({1, cfg.channels, S, S}, sample.image.data()), false);
    FeatureBundle fb = model.extract_features(tape, bp, images, false);
    Tensor score = model.predict_score(tape, bp, fb.f, false);  // [1]
    GradientMap grads = tape.backward(score);

    const Tensor& acts = *fb.cnn_activations;  // [1, K, h, w]
    const Tensor& d_acts = grads.at(acts.node());
    const size_t K = acts.dim(1), h = acts.dim(2), w = acts.dim(3);

    Tensor raw({h, w});
    for (size_t k = 0; k < K; ++k) {
        const double* aplane = acts.data().data() + k * h * w;
        const double* gplane = d_acts.data().data() + k * h * w;
        double alpha = 0.0;
        for (size_t i = 0; i < h * w; ++i) alpha += gplane[i];
        alpha /= static_cast<double>(h * w);
        for (size_t i = 0; i < h * w; ++i) raw[i] += alpha * aplane[i];
    }
    for (double& v : raw.data()) v = std::max(0.0, v);
    return raw;
}

Heatmap grad_cam(const Model& model, const Sample& sample) {
    Tensor raw = grad_cam_raw(model, sample);
    Tensor up = upsample_to(raw, model.config().image_size);
    normalize_map(up);
    return Heatmap{std::move(up), "grad_cam", sample.id};
}

Heatmap attention_rollout_from_maps(const std::vector<Tensor>& attn_maps, size_t image_size,
                                    const std::string& sample_id) {
    Tensor rollout = rollout_matrix(attn_maps);
    const size_t T = rollout.dim(0);
    const size_t n_patches = T - 1;
    const auto grid = static_cast<size_t>(std::lround(std::sqrt(static_cast<double>(n_patches))));
    if (grid * grid != n_patches) {
        throw ShapeError("rollout: " + std::to_string(n_patches) + " patches do not form a square grid");
    }
    // class-token row, class-token column dropped
    Tensor patch_map({grid, grid});
    for (size_t i = 0; i < n_patches; ++i) patch_map[i] = rollout[i + 1];
    Tensor up = upsample_to(patch_map, image_size);
    normalize_map(up);
    return Heatmap{std::move(up), "attention_rollout", sample_id};
}

Heatmap attention_rollout(const Model& model, const Sample& sample) {
    const ModelConfig& cfg = model.config();
    if (!cfg.has_vit()) {
        throw ConfigError("attention_rollout: variant " + variant_name(cfg.variant) +
                          " has no ViT branch");
    }
    Tape tape;
    BoundParams bp = model.bind(tape);
    Tensor images = tape.leaf(Tensor({1, cfg.channels, cfg.image_size, cfg.image_size},
                                     sample.image.data()), false);
    FeatureBundle fb = model.extract_features(tape, bp, images, false);
    std::vector<Tensor> maps;
    maps.reserve(fb.attn_maps.size());
    for (const Tensor& m : fb.attn_maps) maps.push_back(m.detached());
    return attention_rollout_from_maps(maps, cfg.image_size, sample.id);
}

std::vector<std::string> export_heatmap(const Heatmap& hm, const Tensor& original,
                                        const std::string& dir) {
    if (original.rank() != 3 || original.dim(0) != 3) {
        throw ShapeError("export_heatmap: original must be [3,h,w], got " + shape_str(original.shape()));
    }
    const size_t h = hm.values.dim(0), w = hm.values.dim(1);
    if (original.dim(1) != h || original.dim(2) != w) {
        throw ShapeError("export_heatmap: map " + shape_str(hm.values.shape()) +
                         " does not match image " + shape_str(original.shape()));
    }
    const fs::path base = fs::path(dir) / (hm.sample_id + "." + hm.source);
    const std::string map_path = base.string() + ".pgm";
    const std::string overlay_path = base.string() + ".overlay.ppm";
    write_pgm(map_path, hm.values);

    Tensor overlay({3, h, w});
    for (size_t c = 0; c < 3; ++c) {
        for (size_t i = 0; i < h * w; ++i) {
            overlay[c * h * w + i] = 0.5 * original[c * h * w + i] + 0.5 * hm.values[i];
        }
    }
    write_ppm(overlay_path, overlay);
    return {map_path, overlay_path};
}

std::pair<size_t, size_t> heatmap_peak(const Heatmap& hm) {
    size_t best = 0;
    for (size_t i = 1; i < hm.values.numel(); ++i) {
        if (hm.values[i] > hm.values[best]) best = i;
    }
    const size_t w = hm.values.dim(1);
    return {best / w, best % w};
}

}  // namespace fairvit
