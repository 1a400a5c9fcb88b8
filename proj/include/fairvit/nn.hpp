#pragma once

#include "fairvit/tape.hpp"

namespace fairvit::nn {

// Adversarial weight for the gradient reversal layer. Constant across training.
struct GrlConfig {
    double lambda = 0.5;
    void validate() const {
        if (lambda < 0.0) throw ConfigError("grl: lambda must be non-negative, got " + std::to_string(lambda));
    }
};

struct AttentionParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct AttentionResult {
    Tensor out;   // [batch, tokens, d]
    Tensor attn;  // [batch, heads, tokens, tokens]
};

struct PatchEmbedParams {
    Tensor weight;  // [channels*patch*patch, d]
    Tensor bias;    // [d]
    Tensor cls;     // [d]
    Tensor pos;     // [1+n_patches, d]
};

// x[batch,in] (or [batch,tokens,in]) * w[in,out] + b[out]
Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b);

// Cross-correlation with zero padding; out h = floor((h+2p-kh)/stride)+1.
Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& kernels, const Tensor& bias,
              size_t stride, size_t padding);

// [batch, c, h, w] -> per-channel spatial mean [batch, c]
Tensor global_avg_pool(Tape& tape, const Tensor& x);

// Standardizes over the last axis, then applies gain/shift.
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& shift, double eps);

// Row softmax over the last axis with max-shift stabilization.
Tensor softmax_last(Tape& tape, const Tensor& x);

Tensor relu(Tape& tape, const Tensor& x);

// Inverted dropout: training scales survivors by 1/(1-rate); eval is identity.
Tensor dropout(Tape& tape, const Tensor& x, double rate, bool training, Rng& rng);

// Gradient reversal: forward identity (bitwise), backward -lambda * upstream (exact).
Tensor grl(Tape& tape, const Tensor& x, const GrlConfig& cfg);

// (1/N) * sum((pred - target)^2)
Tensor mse_loss(Tape& tape, const Tensor& pred, const Tensor& target);

// -(1/N) sum_i sum_j onehot[i,j] * log softmax(logits)[i,j], max-shift stabilized.
Tensor cross_entropy_loss(Tape& tape, const Tensor& logits, const Tensor& onehot);

AttentionResult multi_head_attention(Tape& tape, const Tensor& x, const AttentionParams& p, size_t heads);

// Patchify + linear projection, prepend the learned class token, add position
// embeddings. Output [batch, 1+n_patches, d].
Tensor patch_embed(Tape& tape, const Tensor& img, size_t patch, const PatchEmbedParams& p);

}  // namespace fairvit::nn
