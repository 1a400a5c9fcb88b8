#include "fairvit/model.hpp"

#include <cmath>

namespace fairvit {

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::CnnOnly: return "cnn_only";
        case Variant::VitOnly: return "vit_only";
        case Variant::Hybrid: return "hybrid";
        case Variant::FairHybrid: return "fair_hybrid";
    }
    return "unknown";
}

Variant variant_from_name(const std::string& name) {
    if (name == "cnn_only") return Variant::CnnOnly;
    if (name == "vit_only") return Variant::VitOnly;
    if (name == "hybrid") return Variant::Hybrid;
    if (name == "fair_hybrid") return Variant::FairHybrid;
    throw ConfigError("unknown model variant '" + name +
                      "' (expected cnn_only, vit_only, hybrid or fair_hybrid)");
}

size_t ModelConfig::feature_dim() const {
    size_t d = 0;
    if (has_cnn()) d += cnn_dim();
    if (has_vit()) d += d_vit;
    return d;
}

void ModelConfig::validate() const {
    if (image_size == 0) throw ConfigError("model config: image_size must be positive");
    if (channels == 0) throw ConfigError("model config: channels must be positive");
    if (has_cnn()) {
        if (cnn_channels.empty()) throw ConfigError("model config: cnn_channels must be non-empty");
        if (d_cnn != 0 && d_cnn != cnn_channels.back()) {
            throw ConfigError("model config: d_cnn " + std::to_string(d_cnn) +
                              " contradicts cnn_channels.back() " + std::to_string(cnn_channels.back()));
        }
        if (cnn_dim() < 1) throw ConfigError("model config: d_cnn must be >= 1");
    }
    if (has_vit()) {
        if (d_vit < 1) throw ConfigError("model config: d_vit must be >= 1");
        if (patch == 0 || image_size % patch != 0) {
            throw ConfigError("model config: image_size " + std::to_string(image_size) +
                              " not divisible by patch " + std::to_string(patch));
        }
        if (heads == 0 || d_vit % heads != 0) {
            throw ConfigError("model config: d_vit " + std::to_string(d_vit) +
                              " not divisible by heads " + std::to_string(heads));
        }
        if (vit_depth == 0) throw ConfigError("model config: vit_depth must be >= 1");
    }
    if (head_hidden == 0) throw ConfigError("model config: head_hidden must be positive");
    if (dropout < 0.0 || dropout >= 1.0) {
        throw ConfigError("model config: dropout must be in [0,1), got " + std::to_string(dropout));
    }
    if (attr_classes < 2) throw ConfigError("model config: attr_classes must be >= 2");
    if (grl_lambda < 0.0) throw ConfigError("model config: grl_lambda must be non-negative");
}

void LayerParams::add(const std::string& name, Tensor value) {
    if (index_.count(name)) throw ContractError("duplicate parameter name " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(name, std::move(value));
}

Tensor& LayerParams::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter " + name);
    return entries_[it->second].second;
}

const Tensor& LayerParams::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter " + name);
    return entries_[it->second].second;
}

const Tensor& ParameterSet::at(const std::string& name) const {
    if (theta_f.contains(name)) return theta_f.at(name);
    if (theta_p.contains(name)) return theta_p.at(name);
    if (theta_a.contains(name)) return theta_a.at(name);
    throw ContractError("unknown parameter " + name);
}

Tensor& ParameterSet::at(const std::string& name) {
    if (theta_f.contains(name)) return theta_f.at(name);
    if (theta_p.contains(name)) return theta_p.at(name);
    if (theta_a.contains(name)) return theta_a.at(name);
    throw ContractError("unknown parameter " + name);
}

std::vector<std::string> ParameterSet::names() const {
    std::vector<std::string> out;
    for_each([&](const std::string& n, const Tensor&) { out.push_back(n); });
    return out;
}

const Tensor& BoundParams::at(const std::string& name) const {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ContractError("parameter " + name + " not bound to tape");
    return it->second;
}

// ---- Model --------------------------------------------------------------------

Model::Model(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    init_params(seed);
}

Model::Model(ModelConfig cfg, ParameterSet params) : cfg_(std::move(cfg)), params_(std::move(params)) {
    cfg_.validate();
    Model fresh(cfg_, 0);
    const auto expected = fresh.params_.names();
    const auto got = params_.names();
    if (expected != got) {
        throw ValidationError("parameter set does not match model config: expected " +
                              std::to_string(expected.size()) + " tensors, got " +
                              std::to_string(got.size()) + (expected.empty() ? "" : " (first expected " +
                              expected.front() + ")"));
    }
    params_.for_each([&](const std::string& n, const Tensor& t) {
        if (t.shape() != fresh.params_.at(n).shape()) {
            throw ValidationError("parameter " + n + " has shape " + shape_str(t.shape()) +
                                  ", config implies " + shape_str(fresh.params_.at(n).shape()));
        }
    });
}

namespace {

Tensor fan_in_uniform(Shape shape, size_t fan_in, Rng& rng) {
    const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return Tensor::uniform(std::move(shape), rng, -limit, limit);
}

}  // namespace

void Model::init_params(uint64_t seed) {
    Rng rng(mix_seed(seed, 0xF417ULL));
    auto add_linear = [&](LayerParams& lp, const std::string& prefix, size_t in, size_t out) {
        lp.add(prefix + ".weight", fan_in_uniform({in, out}, in, rng));
        lp.add(prefix + ".bias", Tensor::zeros({out}));
    };

    if (cfg_.has_cnn()) {
        size_t ci = cfg_.channels;
        for (size_t s = 0; s < cfg_.cnn_channels.size(); ++s) {
            const size_t co = cfg_.cnn_channels[s];
            const std::string prefix = "cnn.stage" + std::to_string(s);
            params_.theta_f.add(prefix + ".weight", fan_in_uniform({co, ci, 3, 3}, ci * 9, rng));
            params_.theta_f.add(prefix + ".bias", Tensor::zeros({co}));
            ci = co;
        }
    }
    if (cfg_.has_vit()) {
        const size_t d = cfg_.d_vit;
        const size_t flat = cfg_.channels * cfg_.patch * cfg_.patch;
        add_linear(params_.theta_f, "vit.patch", flat, d);
        params_.theta_f.add("vit.patch.cls", Tensor::normal({d}, rng, 0.0, 0.02));
        params_.theta_f.add("vit.patch.pos", Tensor::normal({cfg_.tokens(), d}, rng, 0.0, 0.02));
        for (size_t b = 0; b < cfg_.vit_depth; ++b) {
            const std::string prefix = "vit.block" + std::to_string(b);
            params_.theta_f.add(prefix + ".ln1.gain", Tensor::ones({d}));
            params_.theta_f.add(prefix + ".ln1.shift", Tensor::zeros({d}));
            for (const char* head : {"wq", "wk", "wv", "wo"}) {
                params_.theta_f.add(prefix + ".attn." + std::string(head), fan_in_uniform({d, d}, d, rng));
            }
            for (const char* head : {"bq", "bk", "bv", "bo"}) {
                params_.theta_f.add(prefix + ".attn." + std::string(head), Tensor::zeros({d}));
            }
            params_.theta_f.add(prefix + ".ln2.gain", Tensor::ones({d}));
            params_.theta_f.add(prefix + ".ln2.shift", Tensor::zeros({d}));
            add_linear(params_.theta_f, prefix + ".mlp.fc1", d, cfg_.mlp_hidden());
            add_linear(params_.theta_f, prefix + ".mlp.fc2", cfg_.mlp_hidden(), d);
        }
        params_.theta_f.add("vit.final_ln.gain", Tensor::ones({d}));
        params_.theta_f.add("vit.final_ln.shift", Tensor::zeros({d}));
    }

    auto add_head = [&](LayerParams& lp, const std::string& name, size_t out_dim) {
        size_t in = cfg_.feature_dim();
        for (size_t h = 0; h < cfg_.head_hidden_layers; ++h) {
            add_linear(lp, name + ".fc" + std::to_string(h), in, cfg_.head_hidden);
            in = cfg_.head_hidden;
        }
        add_linear(lp, name + ".out", in, out_dim);
    };
    add_head(params_.theta_p, "predictor", 1);
    if (cfg_.has_adversary()) add_head(params_.theta_a, "adversary", cfg_.attr_classes);
}

BoundParams Model::bind(Tape& tape) const {
    BoundParams bp;
    params_.for_each([&](const std::string& n, const Tensor& t) {
        bp.by_name.emplace(n, tape.leaf(t, true));
    });
    return bp;
}

FeatureBundle Model::extract_features(Tape& tape, const BoundParams& bp, const Tensor& images,
                                      bool training, Rng* dropout_rng) const {
    if (images.rank() != 4 || images.dim(1) != cfg_.channels || images.dim(2) != cfg_.image_size ||
        images.dim(3) != cfg_.image_size) {
        throw ShapeError("extract_features: images " + shape_str(images.shape()) +
                         " do not match config [*, " + std::to_string(cfg_.channels) + ", " +
                         std::to_string(cfg_.image_size) + ", " + std::to_string(cfg_.image_size) + "]");
    }
    (void)training;
    (void)dropout_rng;

    FeatureBundle fb;
    if (cfg_.has_cnn()) {
        Tensor x = images;
        for (size_t s = 0; s < cfg_.cnn_channels.size(); ++s) {
            const std::string prefix = "cnn.stage" + std::to_string(s);
            const size_t stride = s == 0 ? 1 : 2;  // stride-2 downsampling between stages
            x = nn::relu(tape, nn::conv2d(tape, x, bp.at(prefix + ".weight"), bp.at(prefix + ".bias"),
                                          stride, 1));
        }
        fb.cnn_activations = x;
        fb.f_cnn = nn::global_avg_pool(tape, x);
    }
    if (cfg_.has_vit()) {
        nn::PatchEmbedParams pe{bp.at("vit.patch.weight"), bp.at("vit.patch.bias"),
                                bp.at("vit.patch.cls"), bp.at("vit.patch.pos")};
        Tensor x = nn::patch_embed(tape, images, cfg_.patch, pe);
        for (size_t b = 0; b < cfg_.vit_depth; ++b) {
            const std::string prefix = "vit.block" + std::to_string(b);
            // pre-norm residual blocks
            Tensor normed = nn::layer_norm(tape, x, bp.at(prefix + ".ln1.gain"),
                                           bp.at(prefix + ".ln1.shift"), 1e-5);
            nn::AttentionParams ap{bp.at(prefix + ".attn.wq"), bp.at(prefix + ".attn.bq"),
                                   bp.at(prefix + ".attn.wk"), bp.at(prefix + ".attn.bk"),
                                   bp.at(prefix + ".attn.wv"), bp.at(prefix + ".attn.bv"),
                                   bp.at(prefix + ".attn.wo"), bp.at(prefix + ".attn.bo")};
            nn::AttentionResult ar = nn::multi_head_attention(tape, normed, ap, cfg_.heads);
            fb.attn_maps.push_back(ar.attn);
            x = tape.add(x, ar.out);
            Tensor normed2 = nn::layer_norm(tape, x, bp.at(prefix + ".ln2.gain"),
                                            bp.at(prefix + ".ln2.shift"), 1e-5);
            Tensor h = nn::relu(tape, nn::linear(tape, normed2, bp.at(prefix + ".mlp.fc1.weight"),
                                                 bp.at(prefix + ".mlp.fc1.bias")));
            Tensor mlp_out = nn::linear(tape, h, bp.at(prefix + ".mlp.fc2.weight"),
                                        bp.at(prefix + ".mlp.fc2.bias"));
            x = tape.add(x, mlp_out);
        }
        Tensor final_norm = nn::layer_norm(tape, x, bp.at("vit.final_ln.gain"),
                                           bp.at("vit.final_ln.shift"), 1e-5);
        Tensor cls = tape.slice(final_norm, 1, 0, 1);  // [B,1,d]
        fb.f_vit = tape.reshape(cls, {images.dim(0), cfg_.d_vit});
    }

    if (fb.f_cnn && fb.f_vit) {
        fb.f = tape.concat(*fb.f_cnn, *fb.f_vit, 1);
    } else if (fb.f_cnn) {
        fb.f = *fb.f_cnn;
    } else {
        fb.f = *fb.f_vit;
    }
    return fb;
}

Tensor Model::mlp_head(Tape& tape, const BoundParams& bp, const Tensor& x, const std::string& prefix,
                       bool training, Rng* dropout_rng) const {
    if (training && cfg_.dropout > 0.0 && dropout_rng == nullptr) {
        throw ContractError("mlp_head: training with dropout requires an RNG handle");
    }
    Tensor h = x;
    for (size_t l = 0; l < cfg_.head_hidden_layers; ++l) {
        const std::string fc = prefix + ".fc" + std::to_string(l);
        h = nn::relu(tape, nn::linear(tape, h, bp.at(fc + ".weight"), bp.at(fc + ".bias")));
        if (training && cfg_.dropout > 0.0) {
            h = nn::dropout(tape, h, cfg_.dropout, true, *dropout_rng);
        }
    }
    return nn::linear(tape, h, bp.at(prefix + ".out.weight"), bp.at(prefix + ".out.bias"));
}

Tensor Model::predict_score(Tape& tape, const BoundParams& bp, const Tensor& f, bool training,
                            Rng* dropout_rng) const {
    if (f.rank() != 2 || f.dim(1) != cfg_.feature_dim()) {
        throw ShapeError("predict_score: features " + shape_str(f.shape()) + " do not match fused dim " +
                         std::to_string(cfg_.feature_dim()));
    }
    Tensor out = mlp_head(tape, bp, f, "predictor", training, dropout_rng);  // [B,1]
    return tape.reshape(out, {f.dim(0)});
}

Tensor Model::adversary_logits(Tape& tape, const BoundParams& bp, const Tensor& f, bool training,
                               Rng* dropout_rng, bool use_grl) const {
    if (!cfg_.has_adversary()) {
        throw ConfigError("adversary_logits: variant " + variant_name(cfg_.variant) +
                          " has no adversary head");
    }
    if (f.rank() != 2 || f.dim(1) != cfg_.feature_dim()) {
        throw ShapeError("adversary_logits: features " + shape_str(f.shape()) +
                         " do not match fused dim " + std::to_string(cfg_.feature_dim()));
    }
    Tensor in = use_grl ? nn::grl(tape, f, nn::GrlConfig{cfg_.grl_lambda}) : f;
    return mlp_head(tape, bp, in, "adversary", training, dropout_rng);
}

}  // namespace fairvit
