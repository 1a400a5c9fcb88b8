#pragma once

#include <string>
#include <vector>

#include "fairvit/data.hpp"
#include "fairvit/model.hpp"

namespace fairvit {

struct Heatmap {
    Tensor values;       // [h, w] in [0,1]
    std::string source;  // "grad_cam" or "attention_rollout"
    std::string sample_id;
};

// Gradient-weighted activation map over the final convolutional stage,
// targeting the regression scalar. Upsampled to image size, min-max
// normalized; a constant raw map renders as all-0.5.
Heatmap grad_cam(const Model& model, const Sample& sample);

// The ReLU-rectified map at conv-stage resolution, before upsampling and
// normalization. Non-negative by construction.
Tensor grad_cam_raw(const Model& model, const Sample& sample);

// Head-averaged, residual-adjusted (0.5A + 0.5I), row-renormalized attention
// matrices multiplied across layers. Maps accept [heads,t,t] or batch-1
// [1,heads,t,t] tensors. Returns the full token-to-token rollout matrix.
Tensor rollout_matrix(const std::vector<Tensor>& attn_maps);

// Class-token row of the rollout over the patch grid, upsampled and normalized.
Heatmap attention_rollout(const Model& model, const Sample& sample);
Heatmap attention_rollout_from_maps(const std::vector<Tensor>& attn_maps, size_t image_size,
                                    const std::string& sample_id);

// Writes <id>.<source>.pgm (raw map) and <id>.<source>.overlay.ppm (0.5-alpha
// blend onto the input) into dir. Returns the two paths.
std::vector<std::string> export_heatmap(const Heatmap& hm, const Tensor& original,
                                        const std::string& dir);

// Location of the map's maximum (ties -> lowest row-major index).
std::pair<size_t, size_t> heatmap_peak(const Heatmap& hm);

}  // namespace fairvit
