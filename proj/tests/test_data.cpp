#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fairvit/data.hpp"
#include "fairvit/nn.hpp"

namespace fs = std::filesystem;
using namespace fairvit;

namespace {

double group_mean_score(const Dataset& ds, int attr) {
    double s = 0;
    size_t n = 0;
    for (const Sample& smp : ds.samples) {
        if (smp.attr == attr) {
            s += smp.score;
            ++n;
        }
    }
    return s / static_cast<double>(n);
}

bool datasets_identical(const Dataset& a, const Dataset& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a.samples[i].id != b.samples[i].id) return false;
        if (a.samples[i].score != b.samples[i].score) return false;
        if (a.samples[i].attr != b.samples[i].attr) return false;
        if (!a.samples[i].image.same_values(b.samples[i].image)) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("generator determinism and balance") {
    SyntheticSpec spec;
    spec.n = 101;
    spec.seed = 5;
    Dataset a = generate(spec);
    Dataset b = generate(spec);
    CHECK(datasets_identical(a, b));
    a.validate();

    size_t g0 = 0, g1 = 0;
    for (const Sample& s : a.samples) (s.attr == 0 ? g0 : g1) += 1;
    CHECK(g0 + g1 == 101);
    CHECK(std::llabs(static_cast<long long>(g0) - static_cast<long long>(g1)) <= 1);

    SyntheticSpec other = spec;
    other.seed = 6;
    CHECK_FALSE(datasets_identical(a, generate(other)));
}

TEST_CASE("bias dial") {
    SUBCASE("zero offset: group means equal within sampling error") {
        SyntheticSpec spec;
        spec.n = 2000;
        spec.group_offset = 0.0;
        spec.seed = 11;
        Dataset ds = generate(spec);
        const double diff = group_mean_score(ds, 1) - group_mean_score(ds, 0);
        // score sd is around 0.4 at these weights; 3 sigma of the mean-difference estimator
        CHECK(std::fabs(diff) < 3.0 * 0.45 * std::sqrt(2.0 / 1000.0));
    }
    SUBCASE("offset 0.5 shifts group-1 mean by about +2.0 without clamping") {
        SyntheticSpec spec;
        spec.n = 2000;
        spec.local_cue_weight = 0.1;  // keep the inner sum inside [0,1]
        spec.global_cue_weight = 0.1;
        spec.cue_noise = 0.01;
        spec.group_offset = 0.5;
        spec.seed = 13;
        Dataset ds = generate(spec);
        const double diff = group_mean_score(ds, 1) - group_mean_score(ds, 0);
        CHECK(diff == doctest::Approx(2.0).epsilon(0.02));
    }
    SUBCASE("between-group difference nondecreasing in offset") {
        double last = -1.0;
        for (double offset : {0.0, 0.25, 0.5}) {
            SyntheticSpec spec;
            spec.n = 2000;
            spec.group_offset = offset;
            spec.seed = 17;
            Dataset ds = generate(spec);
            const double diff = group_mean_score(ds, 1) - group_mean_score(ds, 0);
            CHECK(diff >= last - 1e-9);
            last = diff;
        }
    }
}

TEST_CASE("attribute recoverable from raw pixels by a logistic probe") {
    SyntheticSpec spec;
    spec.n = 400;
    spec.seed = 23;
    Dataset ds = generate(spec);
    const size_t d = ds.samples[0].image.numel();
    const size_t n_train = 300, n_test = ds.size() - n_train;

    Tensor x_train({n_train, d}), x_test({n_test, d});
    Tensor onehot({n_train, 2});
    std::vector<int> test_attr;
    for (size_t i = 0; i < ds.size(); ++i) {
        const Sample& s = ds.samples[i];
        if (i < n_train) {
            std::copy(s.image.data().begin(), s.image.data().end(),
                      x_train.data().begin() + i * d);
            onehot[i * 2 + static_cast<size_t>(s.attr)] = 1.0;
        } else {
            std::copy(s.image.data().begin(), s.image.data().end(),
                      x_test.data().begin() + (i - n_train) * d);
            test_attr.push_back(s.attr);
        }
    }

    Tensor w = Tensor::zeros({d, 2}), b = Tensor::zeros({2});
    for (int iter = 0; iter < 120; ++iter) {
        Tape tape;
        Tensor tw = tape.leaf(w), tb = tape.leaf(b);
        Tensor loss = nn::cross_entropy_loss(
            tape, nn::linear(tape, tape.leaf(x_train, false), tw, tb), tape.leaf(onehot, false));
        GradientMap g = tape.backward(loss);
        const Tensor& gw = g.at(tw.node());
        const Tensor& gb = g.at(tb.node());
        for (size_t i = 0; i < w.numel(); ++i) w[i] -= 0.5 * gw[i];
        for (size_t i = 0; i < b.numel(); ++i) b[i] -= 0.5 * gb[i];
    }
    Tape tape;
    Tensor logits = nn::linear(tape, tape.leaf(x_test, false), tape.leaf(w, false),
                               tape.leaf(b, false));
    size_t correct = 0;
    for (size_t i = 0; i < n_test; ++i) {
        const int pred = logits[i * 2 + 1] > logits[i * 2] ? 1 : 0;
        if (pred == test_attr[i]) ++correct;
    }
    CHECK(static_cast<double>(correct) / n_test >= 0.95);
}

TEST_CASE("augment") {
    SyntheticSpec spec;
    spec.n = 2;
    spec.seed = 31;
    Dataset ds = generate(spec);
    const Tensor& img = ds.samples[0].image;
    const size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);

    // find seeds whose first bernoulli draw goes each way
    uint64_t no_flip_seed = 0, flip_seed = 0;
    bool found_no = false, found_yes = false;
    for (uint64_t s = 0; s < 64 && (!found_no || !found_yes); ++s) {
        Rng probe(s);
        if (probe.bernoulli(0.5)) {
            if (!found_yes) {
                flip_seed = s;
                found_yes = true;
            }
        } else if (!found_no) {
            no_flip_seed = s;
            found_no = true;
        }
    }
    REQUIRE(found_no);
    REQUIRE(found_yes);

    SUBCASE("no-flip path reproduces per-channel jitter exactly") {
        Rng rng(no_flip_seed);
        Tensor out = augment(img, rng);
        Rng replay(no_flip_seed);
        replay.bernoulli(0.5);
        for (size_t c = 0; c < C; ++c) {
            const double f = replay.uniform(0.9, 1.1);
            for (size_t i = 0; i < H * W; ++i) {
                const double expected = std::clamp(img[c * H * W + i] * f, 0.0, 1.0);
                CHECK(out[c * H * W + i] == expected);
            }
        }
    }
    SUBCASE("flip path mirrors rows") {
        Rng rng(flip_seed);
        Tensor out = augment(img, rng);
        Rng replay(flip_seed);
        replay.bernoulli(0.5);
        for (size_t c = 0; c < C; ++c) {
            const double f = replay.uniform(0.9, 1.1);
            for (size_t y = 0; y < H; ++y) {
                for (size_t x = 0; x < W; ++x) {
                    const double expected =
                        std::clamp(img[(c * H + y) * W + (W - 1 - x)] * f, 0.0, 1.0);
                    CHECK(out[(c * H + y) * W + x] == expected);
                }
            }
        }
    }
    SUBCASE("output stays within [0,1]") {
        Rng rng(99);
        for (int rep = 0; rep < 10; ++rep) {
            Tensor out = augment(ds.samples[1].image, rng);
            for (double v : out.data()) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
        }
    }
}

TEST_CASE("stratified split") {
    SyntheticSpec spec;
    spec.n = 1000;
    spec.seed = 37;
    Dataset ds = generate(spec);

    auto parts = split_dataset(ds, SplitRatios{}, 7);
    CHECK(parts[0].size() == 600);
    CHECK(parts[1].size() == 200);
    CHECK(parts[2].size() == 200);
    CHECK(parts[0].split == Split::Train);

    SUBCASE("group proportions preserved within one sample") {
        for (const Dataset& part : parts) {
            long long g0 = 0, g1 = 0;
            for (const Sample& s : part.samples) (s.attr == 0 ? g0 : g1) += 1;
            CHECK(std::llabs(g0 - g1) <= 1);
        }
    }
    SUBCASE("same seed gives identical assignment, different seed does not") {
        auto parts2 = split_dataset(ds, SplitRatios{}, 7);
        CHECK(datasets_identical(parts[0], parts2[0]));
        CHECK(datasets_identical(parts[2], parts2[2]));
        auto parts3 = split_dataset(ds, SplitRatios{}, 8);
        CHECK_FALSE(datasets_identical(parts[0], parts3[0]));
    }
    SUBCASE("splits cover the dataset without overlap") {
        std::set<std::string> ids;
        for (const Dataset& part : parts) {
            for (const Sample& s : part.samples) CHECK(ids.insert(s.id).second);
        }
        CHECK(ids.size() == ds.size());
    }
    SUBCASE("empty group rejected") {
        Dataset lopsided;
        lopsided.class_count = 2;
        lopsided.samples.push_back(ds.samples[0]);
        CHECK_THROWS_AS(split_dataset(lopsided, SplitRatios{}, 1), ValidationError);
    }
    SUBCASE("ratios must sum to one") {
        CHECK_THROWS_AS(split_dataset(ds, SplitRatios{0.5, 0.2, 0.2}, 1), ValidationError);
    }
}

TEST_CASE("manifest export and ingestion") {
    const fs::path dir = fs::temp_directory_path() / "fv_data_test";
    fs::remove_all(dir);
    fs::create_directories(dir);

    SyntheticSpec spec;
    spec.n = 12;
    spec.seed = 41;
    Dataset ds = generate(spec);
    export_dataset(ds, dir.string());

    SUBCASE("round trip preserves ids, scores, attrs; pixels within quantization") {
        Dataset loaded = load_manifest((dir / "manifest.csv").string(), spec.image_size);
        REQUIRE(loaded.size() == ds.size());
        for (size_t i = 0; i < ds.size(); ++i) {
            CHECK(loaded.samples[i].id == ds.samples[i].id);
            CHECK(loaded.samples[i].score == ds.samples[i].score);
            CHECK(loaded.samples[i].attr == ds.samples[i].attr);
            double max_err = 0;
            for (size_t j = 0; j < ds.samples[i].image.numel(); ++j) {
                max_err = std::max(max_err,
                                   std::fabs(loaded.samples[i].image[j] - ds.samples[i].image[j]));
            }
            CHECK(max_err <= 0.5 / 255.0 + 1e-12);
        }
    }
    SUBCASE("A/C prefixes map to attributes 0/1") {
        Dataset loaded = load_manifest((dir / "manifest.csv").string(), spec.image_size);
        for (const Sample& s : loaded.samples) {
            CHECK(s.attr == (s.id[0] == 'A' ? 0 : 1));
        }
    }
    SUBCASE("unknown prefix names the row") {
        std::ofstream bad(dir / "bad.csv");
        bad << "id,filename,score,split\n";
        bad << "X1,images/" << ds.samples[0].id << ".ppm,3.0,full\n";
        // row 2 has filename starting with 'i', but the basename check uses the file name itself;
        // rename to an unknown prefix
        bad << "X2,X1.ppm,3.0,full\n";
        bad.close();
        fs::copy_file(dir / "images" / (ds.samples[0].id + ".ppm"), dir / "X1.ppm",
                      fs::copy_options::overwrite_existing);
        CHECK_THROWS_WITH_AS(load_manifest((dir / "bad.csv").string(), spec.image_size),
                             doctest::Contains("row"), ValidationError);
    }
    SUBCASE("score outside range rejected") {
        std::ofstream bad(dir / "bad_score.csv");
        bad << "id,filename,score,split\n";
        bad << ds.samples[0].id << ",images/" << ds.samples[0].id << ".ppm,7.5,full\n";
        bad.close();
        CHECK_THROWS_AS(load_manifest((dir / "bad_score.csv").string(), spec.image_size),
                        ValidationError);
    }
    SUBCASE("missing image is an I/O error") {
        std::ofstream bad(dir / "bad_file.csv");
        bad << "id,filename,score,split\n";
        bad << "A9,images/A99999.ppm,3.0,full\n";
        bad.close();
        CHECK_THROWS_AS(load_manifest((dir / "bad_file.csv").string(), spec.image_size), IoError);
    }
    SUBCASE("resize to a different working resolution") {
        Dataset loaded = load_manifest((dir / "manifest.csv").string(), 16);
        CHECK(loaded.samples[0].image.shape() == Shape{3, 16, 16});
    }
    fs::remove_all(dir);
}
