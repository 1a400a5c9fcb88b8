#include "fairvit/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "fairvit/image_io.hpp"

namespace fs = std::filesystem;

namespace fairvit {

std::string split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
        case Split::Full: return "full";
    }
    return "full";
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    if (name == "test") return Split::Test;
    if (name == "full") return Split::Full;
    throw ValidationError("unknown split '" + name + "'");
}

void Dataset::validate() const {
    std::set<std::string> ids;
    for (const Sample& s : samples) {
        if (!ids.insert(s.id).second) throw ValidationError("duplicate sample id " + s.id);
        if (s.score < 1.0 || s.score > 5.0) {
            throw ValidationError("sample " + s.id + ": score " + std::to_string(s.score) +
                                  " outside [1,5]");
        }
        if (s.attr < 0 || static_cast<size_t>(s.attr) >= class_count) {
            throw ValidationError("sample " + s.id + ": attribute " + std::to_string(s.attr) +
                                  " outside [0," + std::to_string(class_count) + ")");
        }
        for (double v : s.image.data()) {
            if (v < 0.0 || v > 1.0) {
                throw ValidationError("sample " + s.id + ": pixel value " + std::to_string(v) +
                                      " outside [0,1]");
            }
        }
    }
}

void SyntheticSpec::validate() const {
    if (n == 0) throw ValidationError("synthetic spec: n must be positive");
    if (image_size < 16) throw ValidationError("synthetic spec: image_size must be >= 16");
    if (local_cue_weight < 0 || global_cue_weight < 0) {
        throw ValidationError("synthetic spec: cue weights must be non-negative");
    }
    if (cue_noise < 0) throw ValidationError("synthetic spec: cue_noise must be non-negative");
    if (group_offset < 0) throw ValidationError("synthetic spec: group_offset must be non-negative");
}

namespace {

constexpr double kTintDelta = 0.08;       // attribute marker strength
constexpr double kBackgroundNoise = 0.02;
constexpr double kLocalAmplitude = 0.38;  // checkerboard contrast at u_local = 1
constexpr double kGlobalAmplitude = 0.5;  // ramp swing at u_global = 1
constexpr double kDistractorAmplitude = 0.05;
constexpr size_t kCoarseCells = 4;        // low-frequency grid for the distractor texture

// Smooth low-frequency field in [-1,1] from a coarse random grid, bilinear.
Tensor smooth_field(size_t h, size_t w, Rng& rng) {
    const size_t gh = kCoarseCells, gw = kCoarseCells;
    std::vector<double> grid(gh * gw);
    for (double& v : grid) v = rng.uniform(-1.0, 1.0);
    Tensor out({h, w});
    for (size_t y = 0; y < h; ++y) {
        const double fy = (h > 1) ? static_cast<double>(y) * (gh - 1) / (h - 1) : 0.0;
        const size_t y0 = std::min(static_cast<size_t>(fy), gh - 2);
        const double wy = fy - y0;
        for (size_t x = 0; x < w; ++x) {
            const double fx = (w > 1) ? static_cast<double>(x) * (gw - 1) / (w - 1) : 0.0;
            const size_t x0 = std::min(static_cast<size_t>(fx), gw - 2);
            const double wx = fx - x0;
            const double top = grid[y0 * gw + x0] * (1 - wx) + grid[y0 * gw + x0 + 1] * wx;
            const double bot = grid[(y0 + 1) * gw + x0] * (1 - wx) + grid[(y0 + 1) * gw + x0 + 1] * wx;
            out[y * w + x] = top * (1 - wy) + bot * wy;
        }
    }
    return out;
}

Sample make_sample(const SyntheticSpec& spec, size_t index) {
    Rng rng(mix_seed(spec.seed, 0xDA7AULL, index));
    const size_t S = spec.image_size;
    const int attr = static_cast<int>(index % 2);  // groups balanced within +-1

    // cue strengths have a visibility floor: a planted pattern is always present
    const double u_local = rng.uniform(0.2, 1.0);
    const double u_global = rng.uniform(0.2, 1.0);
    const double noise = rng.normal(0.0, spec.cue_noise);

    // background with group tint
    const double tint = attr == 0 ? kTintDelta : -kTintDelta;
    Tensor img({3, S, S});
    for (size_t c = 0; c < 3; ++c) {
        const double base = 0.5 + (c == 0 ? tint : (c == 2 ? -tint : 0.0));
        double* plane = img.data().data() + c * S * S;
        for (size_t i = 0; i < S * S; ++i) plane[i] = base + kBackgroundNoise * rng.normal();
    }

    // low-frequency texture, mirrored onto both halves (score-independent)
    Tensor field = smooth_field(S, S / 2, rng);
    for (size_t y = 0; y < S; ++y) {
        for (size_t x = 0; x < S / 2; ++x) {
            const double fv = kDistractorAmplitude * field[y * (S / 2) + x];
            for (size_t c = 0; c < 3; ++c) {
                img[(c * S + y) * S + x] += fv;
                img[(c * S + y) * S + (S - 1 - x)] += fv;
            }
        }
    }

    // global cue: vertical luminance ramp whose slope encodes u_global
    for (size_t y = 0; y < S; ++y) {
        const double ramp = kGlobalAmplitude * u_global *
                            (static_cast<double>(2 * y) / static_cast<double>(S - 1) - 1.0) * 0.5;
        for (size_t c = 0; c < 3; ++c) {
            double* row = img.data().data() + (c * S + y) * S;
            for (size_t x = 0; x < S; ++x) row[x] += ramp;
        }
    }

    // local cue: zero-mean high-frequency checkerboard patch; its contrast
    // encodes u_local, so only local texture detectors can read it
    const size_t box = 3 * S / 8;
    const size_t margin = 3;
    const size_t bx = margin + rng.uniform_int(S - box - 2 * margin + 1);
    const size_t by = margin + rng.uniform_int(S - box - 2 * margin + 1);
    for (size_t y = by; y < by + box; ++y) {
        for (size_t x = bx; x < bx + box; ++x) {
            const double sign = (((x - bx) / 2 + (y - by) / 2) % 2 == 0) ? 1.0 : -1.0;
            for (size_t c = 0; c < 3; ++c) {
                img[(c * S + y) * S + x] += sign * kLocalAmplitude * u_local;
            }
        }
    }

    for (double& v : img.data()) v = std::clamp(v, 0.0, 1.0);

    const double inner = spec.local_cue_weight * u_local + spec.global_cue_weight * u_global +
                         spec.group_offset * attr + noise;
    const double score = 1.0 + 4.0 * std::clamp(inner, 0.0, 1.0);

    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "%c%05zu", attr == 0 ? 'A' : 'C', index);

    Sample s;
    s.id = idbuf;
    s.image = std::move(img);
    s.score = score;
    s.attr = attr;
    s.cue = CueInfo{bx, by, box, u_local, u_global};
    return s;
}

}  // namespace

Dataset generate(const SyntheticSpec& spec) {
    spec.validate();
    Dataset ds;
    ds.split = Split::Full;
    ds.class_count = 2;
    ds.samples.reserve(spec.n);
    for (size_t i = 0; i < spec.n; ++i) ds.samples.push_back(make_sample(spec, i));
    return ds;
}

Tensor augment(const Tensor& img, Rng& rng) {
    if (img.rank() != 3) throw ShapeError("augment: expected [c,h,w], got " + shape_str(img.shape()));
    const size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
    Tensor out = img.detached();
    if (rng.bernoulli(0.5)) {
        for (size_t c = 0; c < C; ++c) {
            for (size_t y = 0; y < H; ++y) {
                double* row = out.data().data() + (c * H + y) * W;
                std::reverse(row, row + W);
            }
        }
    }
    for (size_t c = 0; c < C; ++c) {
        const double factor = rng.uniform(0.9, 1.1);
        double* plane = out.data().data() + c * H * W;
        for (size_t i = 0; i < H * W; ++i) plane[i] = std::clamp(plane[i] * factor, 0.0, 1.0);
    }
    return out;
}

std::array<Dataset, 3> split_dataset(const Dataset& ds, const SplitRatios& ratios, uint64_t seed) {
    if (std::fabs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
        throw ValidationError("split ratios must sum to 1");
    }
    if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0) {
        throw ValidationError("split ratios must be non-negative");
    }

    std::vector<std::vector<size_t>> by_group(ds.class_count);
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        const auto g = static_cast<size_t>(ds.samples[i].attr);
        if (g >= by_group.size()) by_group.resize(g + 1);
        by_group[g].push_back(i);
    }
    for (size_t g = 0; g < by_group.size(); ++g) {
        if (by_group[g].empty()) {
            throw ValidationError("stratified split: attribute group " + std::to_string(g) + " is empty");
        }
    }

    std::array<Dataset, 3> out;
    out[0].split = Split::Train;
    out[1].split = Split::Val;
    out[2].split = Split::Test;
    for (auto& d : out) d.class_count = ds.class_count;

    Rng rng(mix_seed(seed, 0x5711ULL));
    for (auto& indices : by_group) {
        // seeded Fisher-Yates
        for (size_t i = indices.size(); i > 1; --i) {
            const size_t j = rng.uniform_int(i);
            std::swap(indices[i - 1], indices[j]);
        }
        const double r[3] = {ratios.train, ratios.val, ratios.test};
        const size_t n = indices.size();
        size_t counts[3];
        double frac[3];
        size_t assigned = 0;
        for (int k = 0; k < 3; ++k) {
            const double exact = r[k] * static_cast<double>(n);
            counts[k] = static_cast<size_t>(exact);
            frac[k] = exact - static_cast<double>(counts[k]);
            assigned += counts[k];
        }
        while (assigned < n) {  // largest remainder, ties resolved train > val > test
            int best = 0;
            for (int k = 1; k < 3; ++k) {
                if (frac[k] > frac[best] + 1e-12) best = k;
            }
            ++counts[best];
            frac[best] = -1.0;
            ++assigned;
        }
        size_t cursor = 0;
        for (int k = 0; k < 3; ++k) {
            for (size_t c = 0; c < counts[k]; ++c) {
                out[static_cast<size_t>(k)].samples.push_back(ds.samples[indices[cursor++]]);
            }
        }
    }
    // id order within each split keeps output independent of group interleaving
    for (auto& d : out) {
        std::sort(d.samples.begin(), d.samples.end(),
                  [](const Sample& a, const Sample& b) { return a.id < b.id; });
    }
    return out;
}

Dataset load_manifest(const std::string& manifest_path, size_t image_size, Split filter) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest " + manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();

    std::string line;
    if (!std::getline(in, line)) throw ValidationError("manifest " + manifest_path + " is empty");
    if (line != "id,filename,score,split") {
        throw ValidationError("manifest " + manifest_path + ": expected header id,filename,score,split");
    }

    Dataset ds;
    ds.split = filter;
    ds.class_count = 2;
    size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string id, filename, score_str, split_str;
        if (!std::getline(ss, id, ',') || !std::getline(ss, filename, ',') ||
            !std::getline(ss, score_str, ',') || !std::getline(ss, split_str)) {
            throw ValidationError("manifest row " + std::to_string(row) + ": expected 4 columns");
        }
        const Split row_split = split_from_name(split_str);
        if (filter != Split::Full && row_split != filter) continue;

        const std::string basename = fs::path(filename).filename().string();
        int attr;
        if (!basename.empty() && basename[0] == 'A') {
            attr = 0;
        } else if (!basename.empty() && basename[0] == 'C') {
            attr = 1;
        } else {
            throw ValidationError("manifest row " + std::to_string(row) + ": filename '" + filename +
                                  "' must start with 'A' or 'C'");
        }
        const double score = std::stod(score_str);
        if (score < 1.0 || score > 5.0) {
            throw ValidationError("manifest row " + std::to_string(row) + ": score " + score_str +
                                  " outside [1,5]");
        }
        Tensor img = read_image((base / filename).string());
        if (img.dim(0) == 1) {  // expand grayscale
            Tensor rgb({3, img.dim(1), img.dim(2)});
            for (size_t c = 0; c < 3; ++c) {
                std::copy(img.data().begin(), img.data().end(),
                          rgb.data().begin() + c * img.dim(1) * img.dim(2));
            }
            img = std::move(rgb);
        }
        img = resize_bilinear(img, image_size, image_size);
        ds.samples.push_back(Sample{id, std::move(img), score, attr, std::nullopt});
    }
    ds.validate();
    return ds;
}

void export_dataset(const Dataset& ds, const std::string& dir) {
    const fs::path root(dir);
    if (!fs::exists(root)) throw IoError("export_dataset: directory " + dir + " does not exist");
    fs::create_directories(root / "images");

    std::ofstream manifest(root / "manifest.csv");
    if (!manifest) throw IoError("cannot write manifest in " + dir);
    manifest << "id,filename,score,split\n";
    char score_buf[64];
    for (const Sample& s : ds.samples) {
        const std::string filename = "images/" + s.id + ".ppm";
        write_ppm((root / filename).string(), s.image);
        std::snprintf(score_buf, sizeof(score_buf), "%.17g", s.score);
        manifest << s.id << "," << filename << "," << score_buf << "," << split_name(ds.split) << "\n";
    }
    if (!manifest) throw IoError("failed writing manifest in " + dir);
}

}  // namespace fairvit
