#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fairvit/nn.hpp"
#include "test_util.hpp"

using namespace fairvit;
using namespace fairvit::nn;
using testutil::random_tensor;

namespace {

Tensor weighted_sum(Tape& t, const Tensor& y, uint64_t seed) {
    Rng rng(seed);
    Tensor w = Tensor::uniform(y.shape(), rng, 0.5, 1.5);
    return t.sum(t.mul(y, t.leaf(w, false)));
}

}  // namespace

TEST_CASE("linear") {
    Tape tape;
    SUBCASE("identity map") {
        Tensor x = tape.leaf(Tensor({1, 2}, {1, 0}));
        Tensor w = tape.leaf(Tensor({2, 2}, {1, 0, 0, 1}));
        Tensor b = tape.leaf(Tensor({2}, {0, 0}));
        Tensor y = linear(tape, x, w, b);
        CHECK(y[0] == 1.0);
        CHECK(y[1] == 0.0);
    }
    SUBCASE("hand arithmetic") {
        Tensor x = tape.leaf(Tensor({1, 2}, {1, 1}));
        Tensor w = tape.leaf(Tensor({2, 1}, {1, 2}));
        Tensor b = tape.leaf(Tensor({1}, {3}));
        CHECK(linear(tape, x, w, b).item() == doctest::Approx(6.0));
    }
    SUBCASE("gradient vs finite differences") {
        Rng rng(2);
        auto f = [](Tape& t, const std::vector<Tensor>& xs) {
            return weighted_sum(t, linear(t, xs[0], xs[1], xs[2]), 17);
        };
        FiniteDiffReport r = finite_diff_check(
            f, {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng), random_tensor({2}, rng)},
            1e-5, 1e-4);
        CHECK(r.pass);
    }
    SUBCASE("shape mismatch") {
        Tensor x = tape.leaf(Tensor({1, 3}, {1, 1, 1}));
        Tensor w = tape.leaf(Tensor({2, 1}, {1, 2}));
        Tensor b = tape.leaf(Tensor({1}, {0}));
        CHECK_THROWS_AS(linear(tape, x, w, b), ShapeError);
    }
}

TEST_CASE("conv2d") {
    SUBCASE("1x1 identity kernel per channel") {
        Tape tape;
        Rng rng(4);
        Tensor x = tape.leaf(random_tensor({1, 1, 4, 4}, rng, 0.0, 1.0));
        Tensor k = tape.leaf(Tensor({1, 1, 1, 1}, {1.0}));
        Tensor b = tape.leaf(Tensor({1}, {0.0}));
        Tensor y = conv2d(tape, x, k, b, 1, 0);
        CHECK(y.same_values(Tensor({1, 1, 4, 4}, x.data())));
    }
    SUBCASE("3x3 all-ones kernel on 3x3 all-ones input") {
        Tape tape;
        Tensor x = tape.leaf(Tensor::ones({1, 1, 3, 3}));
        Tensor k = tape.leaf(Tensor::ones({1, 1, 3, 3}));
        Tensor b = tape.leaf(Tensor({1}, {0.0}));
        Tensor y = conv2d(tape, x, k, b, 1, 0);
        CHECK(y.shape() == Shape{1, 1, 1, 1});
        CHECK(y[0] == doctest::Approx(9.0));
    }
    SUBCASE("output geometry with stride and padding") {
        Tape tape;
        Rng rng(5);
        Tensor x = tape.leaf(random_tensor({2, 3, 8, 8}, rng));
        Tensor k = tape.leaf(random_tensor({4, 3, 3, 3}, rng));
        Tensor b = tape.leaf(random_tensor({4}, rng));
        CHECK(conv2d(tape, x, k, b, 2, 1).shape() == Shape{2, 4, 4, 4});
    }
    SUBCASE("gradient vs finite differences on 2x1x5x5") {
        Rng rng(6);
        auto f = [](Tape& t, const std::vector<Tensor>& xs) {
            return weighted_sum(t, conv2d(t, xs[0], xs[1], xs[2], 1, 1), 23);
        };
        FiniteDiffReport r = finite_diff_check(
            f,
            {random_tensor({2, 1, 5, 5}, rng), random_tensor({3, 1, 3, 3}, rng),
             random_tensor({3}, rng)},
            1e-5, 1e-4);
        CHECK(r.pass);
        auto f2 = [](Tape& t, const std::vector<Tensor>& xs) {
            return weighted_sum(t, conv2d(t, xs[0], xs[1], xs[2], 2, 1), 29);
        };
        FiniteDiffReport r2 = finite_diff_check(
            f2,
            {random_tensor({1, 2, 6, 6}, rng), random_tensor({2, 2, 3, 3}, rng),
             random_tensor({2}, rng)},
            1e-5, 1e-4);
        CHECK(r2.pass);
    }
    SUBCASE("kernel larger than padded input") {
        Tape tape;
        Tensor x = tape.leaf(Tensor::ones({1, 1, 2, 2}));
        Tensor k = tape.leaf(Tensor::ones({1, 1, 5, 5}));
        Tensor b = tape.leaf(Tensor({1}, {0.0}));
        CHECK_THROWS_AS(conv2d(tape, x, k, b, 1, 0), ShapeError);
    }
}

TEST_CASE("global_avg_pool") {
    Tape tape;
    SUBCASE("constant map") {
        Tensor x = tape.leaf(Tensor::full({2, 3, 4, 4}, 5.0));
        Tensor y = global_avg_pool(tape, x);
        for (size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(5.0));
    }
    SUBCASE("arithmetic mean") {
        Tensor x = tape.leaf(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
        CHECK(global_avg_pool(tape, x)[0] == doctest::Approx(2.5));
    }
    SUBCASE("shape contract") {
        Rng rng(7);
        Tensor x = tape.leaf(random_tensor({2, 8, 4, 4}, rng));
        CHECK(global_avg_pool(tape, x).shape() == Shape{2, 8});
    }
    SUBCASE("gradient") {
        Rng rng(8);
        auto f = [](Tape& t, const Tensor& x) {
            return weighted_sum(t, global_avg_pool(t, x), 31);
        };
        CHECK(finite_diff_check(f, random_tensor({2, 3, 3, 3}, rng), 1e-5, 1e-4).pass);
    }
}

TEST_CASE("layer_norm") {
    SUBCASE("zero variance collapses to shift") {
        Tape tape;
        Tensor x = tape.leaf(Tensor({3}, {1, 1, 1}));
        Tensor gain = tape.leaf(Tensor::ones({3}));
        Tensor shift = tape.leaf(Tensor::zeros({3}));
        Tensor y = layer_norm(tape, x, gain, shift, 1e-5);
        for (size_t i = 0; i < 3; ++i) CHECK(y[i] == doctest::Approx(0.0));
    }
    SUBCASE("unit-variance pair") {
        Tape tape;
        Tensor x = tape.leaf(Tensor({2}, {-1, 1}));
        Tensor y = layer_norm(tape, x, tape.leaf(Tensor::ones({2})), tape.leaf(Tensor::zeros({2})),
                              1e-12);
        CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-5));
        CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-5));
    }
    SUBCASE("output mean equals shift per row") {
        Tape tape;
        Rng rng(9);
        Tensor x = tape.leaf(random_tensor({4, 6}, rng));
        Tensor shift = tape.leaf(Tensor::full({6}, 0.7));
        Tensor y = layer_norm(tape, x, tape.leaf(Tensor::ones({6})), shift, 1e-5);
        for (size_t r = 0; r < 4; ++r) {
            double m = 0;
            for (size_t j = 0; j < 6; ++j) m += y[r * 6 + j];
            CHECK(m / 6 == doctest::Approx(0.7).epsilon(1e-9));
        }
    }
    SUBCASE("gradient") {
        Rng rng(10);
        auto f = [](Tape& t, const std::vector<Tensor>& xs) {
            return weighted_sum(t, layer_norm(t, xs[0], xs[1], xs[2], 1e-5), 37);
        };
        FiniteDiffReport r = finite_diff_check(
            f, {random_tensor({3, 5}, rng), random_tensor({5}, rng, 0.5, 1.5),
                random_tensor({5}, rng)},
            1e-5, 1e-4);
        CHECK(r.pass);
    }
}

TEST_CASE("multi_head_attention") {
    SUBCASE("attention rows sum to 1") {
        Rng rng(11);
        Tape tape;
        AttentionParams p{tape.leaf(random_tensor({8, 8}, rng)), tape.leaf(random_tensor({8}, rng)),
                          tape.leaf(random_tensor({8, 8}, rng)), tape.leaf(random_tensor({8}, rng)),
                          tape.leaf(random_tensor({8, 8}, rng)), tape.leaf(random_tensor({8}, rng)),
                          tape.leaf(random_tensor({8, 8}, rng)), tape.leaf(random_tensor({8}, rng))};
        Tensor x = tape.leaf(random_tensor({2, 5, 8}, rng));
        AttentionResult ar = multi_head_attention(tape, x, p, 2);
        CHECK(ar.out.shape() == Shape{2, 5, 8});
        CHECK(ar.attn.shape() == Shape{2, 2, 5, 5});
        for (size_t row = 0; row < 2 * 2 * 5; ++row) {
            double s = 0;
            for (size_t j = 0; j < 5; ++j) s += ar.attn[row * 5 + j];
            CHECK(std::fabs(s - 1.0) < 1e-9);
        }
    }
    SUBCASE("single token attends to itself") {
        Rng rng(12);
        Tape tape;
        AttentionParams p{tape.leaf(random_tensor({4, 4}, rng)), tape.leaf(random_tensor({4}, rng)),
                          tape.leaf(random_tensor({4, 4}, rng)), tape.leaf(random_tensor({4}, rng)),
                          tape.leaf(random_tensor({4, 4}, rng)), tape.leaf(random_tensor({4}, rng)),
                          tape.leaf(random_tensor({4, 4}, rng)), tape.leaf(random_tensor({4}, rng))};
        Tensor x = tape.leaf(random_tensor({3, 1, 4}, rng));
        AttentionResult ar = multi_head_attention(tape, x, p, 2);
        CHECK(ar.attn.same_values(Tensor::ones({3, 2, 1, 1})));
    }
    SUBCASE("head divisibility") {
        Tape tape;
        Rng rng(13);
        AttentionParams p{tape.leaf(random_tensor({6, 6}, rng)), tape.leaf(random_tensor({6}, rng)),
                          tape.leaf(random_tensor({6, 6}, rng)), tape.leaf(random_tensor({6}, rng)),
                          tape.leaf(random_tensor({6, 6}, rng)), tape.leaf(random_tensor({6}, rng)),
                          tape.leaf(random_tensor({6, 6}, rng)), tape.leaf(random_tensor({6}, rng))};
        Tensor x = tape.leaf(random_tensor({1, 2, 6}, rng));
        CHECK_THROWS_AS(multi_head_attention(tape, x, p, 4), ConfigError);
    }
    SUBCASE("gradient vs finite differences on 1x3x8, 2 heads") {
        Rng rng(14);
        std::vector<Tensor> points;
        points.push_back(random_tensor({1, 3, 8}, rng, -0.5, 0.5));
        for (int i = 0; i < 4; ++i) {
            points.push_back(random_tensor({8, 8}, rng, -0.5, 0.5));
            points.push_back(random_tensor({8}, rng, -0.5, 0.5));
        }
        auto f = [](Tape& t, const std::vector<Tensor>& xs) {
            AttentionParams p{xs[1], xs[2], xs[3], xs[4], xs[5], xs[6], xs[7], xs[8]};
            return weighted_sum(t, multi_head_attention(t, xs[0], p, 2).out, 41);
        };
        FiniteDiffReport r = finite_diff_check(f, points, 1e-5, 1e-4);
        CHECK(r.pass);
    }
}

TEST_CASE("patch_embed") {
    Rng rng(15);
    auto make_params = [&](size_t flat, size_t d, size_t tokens, bool zero_pos) {
        PatchEmbedParams p;
        p.weight = random_tensor({flat, d}, rng);
        p.bias = random_tensor({d}, rng);
        p.cls = random_tensor({d}, rng);
        p.pos = zero_pos ? Tensor::zeros({tokens, d}) : random_tensor({tokens, d}, rng);
        return p;
    };
    SUBCASE("patch count 16/8 -> 5 tokens") {
        Tape tape;
        PatchEmbedParams p = make_params(3 * 64, 6, 5, false);
        Tensor img = tape.leaf(random_tensor({2, 3, 16, 16}, rng));
        PatchEmbedParams bp{tape.leaf(p.weight), tape.leaf(p.bias), tape.leaf(p.cls), tape.leaf(p.pos)};
        CHECK(patch_embed(tape, img, 8, bp).shape() == Shape{2, 5, 6});
    }
    SUBCASE("single patch plus class token") {
        Tape tape;
        PatchEmbedParams p = make_params(3 * 16, 4, 2, false);
        Tensor img = tape.leaf(random_tensor({1, 3, 4, 4}, rng));
        PatchEmbedParams bp{tape.leaf(p.weight), tape.leaf(p.bias), tape.leaf(p.cls), tape.leaf(p.pos)};
        CHECK(patch_embed(tape, img, 4, bp).shape() == Shape{1, 2, 4});
    }
    SUBCASE("zero position embeddings: patch permutation permutes tokens") {
        const size_t S = 8, patch = 4, d = 5;
        PatchEmbedParams p = make_params(3 * 16, d, 5, true);
        Tensor img = random_tensor({1, 3, S, S}, rng);
        // swap the two top patches (grid is 2x2)
        Tensor swapped = img;
        for (size_t c = 0; c < 3; ++c) {
            for (size_t y = 0; y < patch; ++y) {
                for (size_t x = 0; x < patch; ++x) {
                    std::swap(swapped[(c * S + y) * S + x], swapped[(c * S + y) * S + x + patch]);
                }
            }
        }
        auto embed = [&](const Tensor& im) {
            Tape tape;
            PatchEmbedParams bp{tape.leaf(p.weight), tape.leaf(p.bias), tape.leaf(p.cls),
                                tape.leaf(p.pos)};
            return patch_embed(tape, tape.leaf(im, false), patch, bp).detached();
        };
        Tensor a = embed(img), b = embed(swapped);
        // class token unchanged; tokens 1 and 2 swap; tokens 3,4 unchanged
        for (size_t j = 0; j < d; ++j) {
            CHECK(a[0 * d + j] == b[0 * d + j]);
            CHECK(a[1 * d + j] == b[2 * d + j]);
            CHECK(a[2 * d + j] == b[1 * d + j]);
            CHECK(a[3 * d + j] == b[3 * d + j]);
            CHECK(a[4 * d + j] == b[4 * d + j]);
        }
    }
    SUBCASE("divisibility") {
        Tape tape;
        PatchEmbedParams p = make_params(3 * 9, 4, 2, false);
        Tensor img = tape.leaf(random_tensor({1, 3, 8, 8}, rng));
        PatchEmbedParams bp{tape.leaf(p.weight), tape.leaf(p.bias), tape.leaf(p.cls), tape.leaf(p.pos)};
        CHECK_THROWS_AS(patch_embed(tape, img, 3, bp), ConfigError);
    }
}

TEST_CASE("relu and dropout") {
    Tape tape;
    SUBCASE("relu definition and idempotence") {
        Tensor x = tape.leaf(Tensor({3}, {-1, 0, 2}));
        Tensor y = relu(tape, x);
        CHECK(y[0] == 0.0);
        CHECK(y[1] == 0.0);
        CHECK(y[2] == 2.0);
        CHECK(relu(tape, y).same_values(y));
    }
    SUBCASE("dropout eval identity") {
        Rng rng(16);
        Tensor x = tape.leaf(testutil::random_tensor({4, 4}, rng));
        Rng drop_rng(1);
        CHECK(dropout(tape, x, 0.5, false, drop_rng).same_values(x));
    }
    SUBCASE("dropout expectation over many draws") {
        Rng rng(17);
        const double value = 0.8, rate = 0.5;
        Rng drop_rng(99);
        double sum = 0.0;
        const int n = 100000;
        for (int i = 0; i < n; ++i) {
            Tape t;
            Tensor x = t.leaf(Tensor({1}, {value}));
            sum += dropout(t, x, rate, true, drop_rng)[0];
        }
        CHECK(sum / n == doctest::Approx(value).epsilon(0.02));
    }
    SUBCASE("rate bounds") {
        Rng drop_rng(1);
        Tensor x = tape.leaf(Tensor({2}, {1, 2}));
        CHECK_THROWS_AS(dropout(tape, x, 1.0, true, drop_rng), ConfigError);
    }
}

TEST_CASE("gradient reversal layer") {
    Rng rng(18);
    const Tensor x0 = random_tensor({3, 4}, rng);
    const Tensor w0 = random_tensor({3, 4}, rng);

    for (double lambda : {0.0, 0.5, 2.0}) {
        Tape tape;
        Tensor x = tape.leaf(x0);
        Tensor y = grl(tape, x, GrlConfig{lambda});
        CHECK(y.same_values(x0));  // forward bitwise identity
        Tensor root = tape.sum(tape.mul(y, tape.leaf(w0, false)));
        GradientMap g = tape.backward(root);
        const Tensor& gx = g.at(x.node());
        for (size_t i = 0; i < gx.numel(); ++i) {
            CHECK(gx[i] == -lambda * w0[i]);  // exact multiplication, bitwise
        }
    }
    SUBCASE("negative lambda rejected") {
        Tape tape;
        Tensor x = tape.leaf(x0);
        CHECK_THROWS_AS(grl(tape, x, GrlConfig{-0.1}), ConfigError);
    }
}

TEST_CASE("mse_loss") {
    Tape tape;
    SUBCASE("perfect prediction") {
        Tensor p = tape.leaf(Tensor({3}, {1, 2, 3}));
        Tensor t = tape.leaf(Tensor({3}, {1, 2, 3}));
        CHECK(mse_loss(tape, p, t).item() == 0.0);
    }
    SUBCASE("direct evaluation") {
        CHECK(mse_loss(tape, tape.leaf(Tensor({1}, {2})), tape.leaf(Tensor({1}, {0}))).item() ==
              doctest::Approx(4.0));
        CHECK(mse_loss(tape, tape.leaf(Tensor({2}, {2, 5})), tape.leaf(Tensor({2}, {1, 3}))).item() ==
              doctest::Approx(2.5));
    }
    SUBCASE("length mismatch") {
        CHECK_THROWS_AS(mse_loss(tape, tape.leaf(Tensor({2}, {1, 2})), tape.leaf(Tensor({3}, {1, 2, 3}))),
                        ShapeError);
    }
}

TEST_CASE("cross_entropy_loss") {
    SUBCASE("confident correct prediction approaches zero") {
        Tape tape;
        Tensor logits = tape.leaf(Tensor({1, 2}, {30.0, -30.0}));
        Tensor onehot = tape.leaf(Tensor({1, 2}, {1.0, 0.0}));
        CHECK(cross_entropy_loss(tape, logits, onehot).item() < 1e-9);
    }
    SUBCASE("uniform logits give ln 2") {
        Tape tape;
        Tensor logits = tape.leaf(Tensor({2, 2}, {0.3, 0.3, -1.0, -1.0}));
        Tensor onehot = tape.leaf(Tensor({2, 2}, {1, 0, 0, 1}));
        CHECK(cross_entropy_loss(tape, logits, onehot).item() == doctest::Approx(std::log(2.0)));
    }
    SUBCASE("shift invariance per row") {
        Rng rng(19);
        Tensor logits = random_tensor({4, 3}, rng);
        Tensor onehot = Tensor::zeros({4, 3});
        for (size_t i = 0; i < 4; ++i) onehot[i * 3 + (i % 3)] = 1.0;
        Tape t1;
        const double a = cross_entropy_loss(t1, t1.leaf(logits), t1.leaf(onehot)).item();
        Tensor shifted = logits;
        for (size_t i = 0; i < 4; ++i) {
            const double c = rng.uniform(-50.0, 50.0);
            for (size_t j = 0; j < 3; ++j) shifted[i * 3 + j] += c;
        }
        Tape t2;
        const double b = cross_entropy_loss(t2, t2.leaf(shifted), t2.leaf(onehot)).item();
        CHECK(std::fabs(a - b) < 1e-9);
    }
    SUBCASE("gradient vs finite differences") {
        Rng rng(20);
        Tensor onehot = Tensor::zeros({3, 4});
        for (size_t i = 0; i < 3; ++i) onehot[i * 4 + i] = 1.0;
        auto f = [onehot](Tape& t, const Tensor& x) {
            return cross_entropy_loss(t, x, t.leaf(onehot, false));
        };
        CHECK(finite_diff_check(f, random_tensor({3, 4}, rng), 1e-5, 1e-4).pass);
    }
    SUBCASE("malformed one-hot") {
        Tape tape;
        Tensor logits = tape.leaf(Tensor({1, 2}, {0.0, 0.0}));
        CHECK_THROWS_AS(cross_entropy_loss(tape, logits, tape.leaf(Tensor({1, 2}, {0.5, 0.5}))),
                        ValidationError);
        CHECK_THROWS_AS(cross_entropy_loss(tape, logits, tape.leaf(Tensor({1, 2}, {1.0, 1.0}))),
                        ValidationError);
    }
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(21);
    Tape tape;
    Tensor x = tape.leaf(random_tensor({3, 7}, rng, -30, 30));
    Tensor s = softmax_last(tape, x);
    for (size_t r = 0; r < 3; ++r) {
        double sum = 0;
        for (size_t j = 0; j < 7; ++j) sum += s[r * 7 + j];
        CHECK(std::fabs(sum - 1.0) < 1e-9);
    }
}
