#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "fairvit/nn.hpp"

namespace fairvit {

enum class Variant { CnnOnly, VitOnly, Hybrid, FairHybrid };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct ModelConfig {
    Variant variant = Variant::FairHybrid;
    size_t image_size = 32;
    size_t channels = 3;
    std::vector<size_t> cnn_channels = {8, 16, 32};
    size_t d_cnn = 0;  // 0 = derived from cnn_channels.back()
    size_t patch = 8;
    size_t d_vit = 32;
    size_t vit_depth = 2;
    size_t heads = 2;
    size_t vit_mlp_hidden = 0;  // 0 = 2 * d_vit
    size_t head_hidden = 64;
    size_t head_hidden_layers = 2;
    double dropout = 0.5;
    size_t attr_classes = 2;
    double grl_lambda = 0.5;

    void validate() const;  // throws ConfigError naming the violated invariant

    bool has_cnn() const { return variant != Variant::VitOnly; }
    bool has_vit() const { return variant != Variant::CnnOnly; }
    bool has_adversary() const { return variant == Variant::FairHybrid; }
    size_t cnn_dim() const { return d_cnn ? d_cnn : (cnn_channels.empty() ? 0 : cnn_channels.back()); }
    size_t mlp_hidden() const { return vit_mlp_hidden ? vit_mlp_hidden : 2 * d_vit; }
    size_t feature_dim() const;
    size_t tokens() const { return (image_size / patch) * (image_size / patch) + 1; }
};

// Ordered collection of named learnable tensors. Names are dotted paths whose
// first segment is the layer name ("cnn.stage0.weight").
class LayerParams {
public:
    void add(const std::string& name, Tensor value);
    bool contains(const std::string& name) const { return index_.count(name) > 0; }
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
    size_t count() const { return entries_.size(); }

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::unordered_map<std::string, size_t> index_;
};

// Learnable parameters partitioned into feature extractor / predictor /
// adversary. Partitions are disjoint and jointly cover every parameter.
struct ParameterSet {
    LayerParams theta_f;
    LayerParams theta_p;
    LayerParams theta_a;

    size_t count() const { return theta_f.count() + theta_p.count() + theta_a.count(); }
    const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);
    std::vector<std::string> names() const;

    // Applies fn(name, tensor) over all partitions in deterministic order.
    template <typename Fn>
    void for_each(Fn&& fn) {
        for (auto& [n, t] : theta_f.entries()) fn(n, t);
        for (auto& [n, t] : theta_p.entries()) fn(n, t);
        for (auto& [n, t] : theta_a.entries()) fn(n, t);
    }
    template <typename Fn>
    void for_each(Fn&& fn) const {
        for (const auto& [n, t] : theta_f.entries()) fn(n, t);
        for (const auto& [n, t] : theta_p.entries()) fn(n, t);
        for (const auto& [n, t] : theta_a.entries()) fn(n, t);
    }
};

struct FeatureBundle {
    std::optional<Tensor> f_cnn;           // [batch, d_cnn]
    std::optional<Tensor> f_vit;           // [batch, d_vit]
    Tensor f;                              // fused [batch, d]
    std::vector<Tensor> attn_maps;         // per layer [batch, heads, tokens, tokens]
    std::optional<Tensor> cnn_activations; // final conv stage output, on tape
};

// Parameters bound onto a tape for one forward/backward pass.
struct BoundParams {
    std::unordered_map<std::string, Tensor> by_name;
    const Tensor& at(const std::string& name) const;
};

class Model {
public:
    Model(ModelConfig cfg, uint64_t seed);                 // deterministic init
    Model(ModelConfig cfg, ParameterSet params);           // from checkpoint

    const ModelConfig& config() const { return cfg_; }
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }

    BoundParams bind(Tape& tape) const;

    FeatureBundle extract_features(Tape& tape, const BoundParams& bp, const Tensor& images,
                                   bool training, Rng* dropout_rng = nullptr) const;
    Tensor predict_score(Tape& tape, const BoundParams& bp, const Tensor& f, bool training,
                         Rng* dropout_rng = nullptr) const;
    // Routes f through the GRL (unless use_grl=false) and the adversary head.
    Tensor adversary_logits(Tape& tape, const BoundParams& bp, const Tensor& f, bool training,
                            Rng* dropout_rng = nullptr, bool use_grl = true) const;

private:
    void init_params(uint64_t seed);
    Tensor mlp_head(Tape& tape, const BoundParams& bp, const Tensor& x, const std::string& prefix,
                    bool training, Rng* dropout_rng) const;

    ModelConfig cfg_;
    ParameterSet params_;
};

}  // namespace fairvit
