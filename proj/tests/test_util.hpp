#pragma once

#include <cmath>
#include <vector>

#include "fairvit/tape.hpp"

namespace testutil {

using fairvit::Rng;
using fairvit::Shape;
using fairvit::Tensor;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    return Tensor::uniform(std::move(shape), rng, lo, hi);
}

// Random tensor whose entries are pairwise separated by more than `gap` within
// each reduction group of `axis`; keeps finite differences away from max kinks.
inline Tensor random_separated(Shape shape, size_t axis, Rng& rng, double gap = 1e-3) {
    for (uint64_t attempt = 0;; ++attempt) {
        Tensor t = Tensor::uniform(shape, rng, -1.0, 1.0);
        size_t outer = 1, inner = 1;
        const size_t d = shape[axis];
        for (size_t i = 0; i < axis; ++i) outer *= shape[i];
        for (size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
        bool ok = true;
        for (size_t o = 0; o < outer && ok; ++o) {
            for (size_t in = 0; in < inner && ok; ++in) {
                for (size_t a = 0; a < d && ok; ++a) {
                    for (size_t b = a + 1; b < d && ok; ++b) {
                        const double va = t[(o * d + a) * inner + in];
                        const double vb = t[(o * d + b) * inner + in];
                        if (std::fabs(va - vb) <= gap) ok = false;
                    }
                }
            }
        }
        if (ok) return t;
        if (attempt > 200) throw std::runtime_error("random_separated: could not find a separated point");
    }
}

// Entries bounded away from zero (for relu-style kinks).
inline Tensor random_away_from_zero(Shape shape, Rng& rng, double margin = 1e-3) {
    Tensor t(std::move(shape));
    for (size_t i = 0; i < t.numel(); ++i) {
        double v = rng.uniform(margin, 1.0);
        if (rng.bernoulli(0.5)) v = -v;
        t[i] = v;
    }
    return t;
}

inline bool approx_equal(const Tensor& a, const Tensor& b, double tol) {
    if (a.shape() != b.shape()) return false;
    for (size_t i = 0; i < a.numel(); ++i) {
        if (std::fabs(a[i] - b[i]) > tol) return false;
    }
    return true;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

}  // namespace testutil
