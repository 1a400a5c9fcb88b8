#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "fairvit/tensor.hpp"

namespace fairvit {

enum class Split { Train, Val, Test, Full };
std::string split_name(Split s);
Split split_from_name(const std::string& name);

// Generator ground truth for one sample (in-memory only; not exported).
struct CueInfo {
    size_t box_x = 0, box_y = 0, box_size = 0;  // local-cue patch bounds
    double u_local = 0.0, u_global = 0.0;
};

struct Sample {
    std::string id;
    Tensor image;  // [c, h, w], values in [0,1]
    double score;  // in [1,5]
    int attr;      // in [0, class_count)
    std::optional<CueInfo> cue;
};

struct Dataset {
    std::vector<Sample> samples;
    Split split = Split::Full;
    size_t class_count = 2;

    size_t size() const { return samples.size(); }
    void validate() const;  // id uniqueness + per-sample invariants
};

// Controls for the synthetic stand-in data. Scores follow
//   y = 1 + 4 * clamp01(w_local*u_local + w_global*u_global + group_offset*z + noise)
// where u_local is the contrast of a small planted high-frequency patch,
// u_global the strength of a large-scale mirror-symmetry structure, and z the
// group whose background tint makes it recoverable from pixels.
struct SyntheticSpec {
    size_t n = 2000;
    size_t image_size = 32;
    double local_cue_weight = 0.25;
    double global_cue_weight = 0.25;
    double group_offset = 0.0;
    double cue_noise = 0.02;
    uint64_t seed = 0;

    void validate() const;
};

Dataset generate(const SyntheticSpec& spec);

// Training-time augmentation: horizontal flip with p=0.5, then per-channel
// scaling uniform in [0.9, 1.1], clamped back to [0,1].
Tensor augment(const Tensor& img, Rng& rng);

struct SplitRatios {
    double train = 0.6, val = 0.2, test = 0.2;
};

// Stratified by attribute group, deterministic per seed.
std::array<Dataset, 3> split_dataset(const Dataset& ds, const SplitRatios& ratios, uint64_t seed);

// Manifest CSV (header: id,filename,score,split) with images beside it.
// Attributes derive from the filename's first character (A -> 0, C -> 1);
// images are resized to image_size. `filter` = Full loads every row.
Dataset load_manifest(const std::string& manifest_path, size_t image_size, Split filter = Split::Full);

// Writes images/<id>.ppm plus manifest.csv into dir (which must exist).
void export_dataset(const Dataset& ds, const std::string& dir);

}  // namespace fairvit
