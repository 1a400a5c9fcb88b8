#include "fairvit/nn.hpp"

#include <algorithm>
#include <cmath>

namespace fairvit::nn {

namespace {

// Valid output range [lo, hi) so that `o*stride + k_off - pad` stays in [0, in_size).
void valid_range(size_t k_off, size_t pad, size_t stride, size_t in_size, size_t out_size,
                 size_t& lo, size_t& hi) {
    lo = 0;
    if (pad > k_off) lo = (pad - k_off + stride - 1) / stride;
    const long long top = static_cast<long long>(in_size) - 1 - static_cast<long long>(k_off) +
                          static_cast<long long>(pad);
    hi = top < 0 ? 0 : std::min(out_size, static_cast<size_t>(top / static_cast<long long>(stride)) + 1);
    if (lo > hi) lo = hi;
}

}  // namespace

Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
    if (w.rank() != 2 || b.rank() != 1 || b.dim(0) != w.dim(1)) {
        throw ShapeError("linear: weight " + shape_str(w.shape()) + " and bias " + shape_str(b.shape()) +
                         " are inconsistent");
    }
    if (x.rank() < 2 || x.dim(x.rank() - 1) != w.dim(0)) {
        throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(w.shape()));
    }
    Tensor y = tape.matmul(x, w);
    return tape.add(y, tape.broadcast_to(b, y.shape()));
}

Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& kernels, const Tensor& bias,
              size_t stride, size_t padding) {
    if (x.rank() != 4 || kernels.rank() != 4 || bias.rank() != 1) {
        throw ShapeError("conv2d: expected x[b,c,h,w], kernels[co,ci,kh,kw], bias[co]; got " +
                         shape_str(x.shape()) + ", " + shape_str(kernels.shape()) + ", " +
                         shape_str(bias.shape()));
    }
    const size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const size_t Co = kernels.dim(0), Kh = kernels.dim(2), Kw = kernels.dim(3);
    if (kernels.dim(1) != Ci || bias.dim(0) != Co) {
        throw ShapeError("conv2d: channel mismatch between x " + shape_str(x.shape()) + " and kernels " +
                         shape_str(kernels.shape()));
    }
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    if (Kh > H + 2 * padding || Kw > W + 2 * padding) {
        throw ShapeError("conv2d: kernel " + shape_str(kernels.shape()) + " larger than padded input " +
                         shape_str(x.shape()) + " with padding " + std::to_string(padding));
    }
    const size_t Ho = (H + 2 * padding - Kh) / stride + 1;
    const size_t Wo = (W + 2 * padding - Kw) / stride + 1;

    Tensor out({B, Co, Ho, Wo});
    for (size_t b = 0; b < B; ++b) {
        for (size_t co = 0; co < Co; ++co) {
            double* oplane = out.data().data() + (b * Co + co) * Ho * Wo;
            const double bv = bias[co];
            for (size_t i = 0; i < Ho * Wo; ++i) oplane[i] = bv;
            for (size_t ci = 0; ci < Ci; ++ci) {
                const double* iplane = x.data().data() + (b * Ci + ci) * H * W;
                const double* kplane = kernels.data().data() + (co * Ci + ci) * Kh * Kw;
                for (size_t kh = 0; kh < Kh; ++kh) {
                    size_t oh_lo, oh_hi;
                    valid_range(kh, padding, stride, H, Ho, oh_lo, oh_hi);
                    for (size_t kw = 0; kw < Kw; ++kw) {
                        const double kv = kplane[kh * Kw + kw];
                        size_t ow_lo, ow_hi;
                        valid_range(kw, padding, stride, W, Wo, ow_lo, ow_hi);
                        for (size_t oh = oh_lo; oh < oh_hi; ++oh) {
                            const size_t ih = oh * stride + kh - padding;
                            const double* irow = iplane + ih * W;
                            double* orow = oplane + oh * Wo;
                            for (size_t ow = ow_lo; ow < ow_hi; ++ow) {
                                orow[ow] += kv * irow[ow * stride + kw - padding];
                            }
                        }
                    }
                }
            }
        }
    }

    const int in_x = x.node(), in_k = kernels.node(), in_b = bias.node();
    std::vector<int> ins;
    for (int id : {in_x, in_k, in_b}) {
        if (id >= 0) ins.push_back(id);
    }
    const Tensor xv = x.detached(), kv = kernels.detached();
    return tape.record(
        "conv2d", std::move(out), ins,
        [in_x, in_k, in_b, xv, kv, B, Ci, Co, H, W, Kh, Kw, Ho, Wo, stride, padding](
            const Tensor& g, GradientMap& acc) {
            if (in_x >= 0) {
                Tensor gx({B, Ci, H, W});
                for (size_t b = 0; b < B; ++b) {
                    for (size_t co = 0; co < Co; ++co) {
                        const double* gplane = g.data().data() + (b * Co + co) * Ho * Wo;
                        for (size_t ci = 0; ci < Ci; ++ci) {
                            double* gxplane = gx.data().data() + (b * Ci + ci) * H * W;
                            const double* kplane = kv.data().data() + (co * Ci + ci) * Kh * Kw;
                            for (size_t kh = 0; kh < Kh; ++kh) {
                                size_t oh_lo, oh_hi;
                                valid_range(kh, padding, stride, H, Ho, oh_lo, oh_hi);
                                for (size_t kw = 0; kw < Kw; ++kw) {
                                    const double kval = kplane[kh * Kw + kw];
                                    size_t ow_lo, ow_hi;
                                    valid_range(kw, padding, stride, W, Wo, ow_lo, ow_hi);
                                    for (size_t oh = oh_lo; oh < oh_hi; ++oh) {
                                        const size_t ih = oh * stride + kh - padding;
                                        double* gxrow = gxplane + ih * W;
                                        const double* grow = gplane + oh * Wo;
                                        for (size_t ow = ow_lo; ow < ow_hi; ++ow) {
                                            gxrow[ow * stride + kw - padding] += kval * grow[ow];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                acc.accumulate(in_x, gx);
            }
            if (in_k >= 0) {
                Tensor gk({Co, Ci, Kh, Kw});
                for (size_t b = 0; b < B; ++b) {
                    for (size_t co = 0; co < Co; ++co) {
                        const double* gplane = g.data().data() + (b * Co + co) * Ho * Wo;
                        for (size_t ci = 0; ci < Ci; ++ci) {
                            const double* iplane = xv.data().data() + (b * Ci + ci) * H * W;
                            double* gkplane = gk.data().data() + (co * Ci + ci) * Kh * Kw;
                            for (size_t kh = 0; kh < Kh; ++kh) {
                                size_t oh_lo, oh_hi;
                                valid_range(kh, padding, stride, H, Ho, oh_lo, oh_hi);
                                for (size_t kw = 0; kw < Kw; ++kw) {
                                    size_t ow_lo, ow_hi;
                                    valid_range(kw, padding, stride, W, Wo, ow_lo, ow_hi);
                                    double accum = 0.0;
                                    for (size_t oh = oh_lo; oh < oh_hi; ++oh) {
                                        const size_t ih = oh * stride + kh - padding;
                                        const double* irow = iplane + ih * W;
                                        const double* grow = gplane + oh * Wo;
                                        for (size_t ow = ow_lo; ow < ow_hi; ++ow) {
                                            accum += grow[ow] * irow[ow * stride + kw - padding];
                                        }
                                    }
                                    gkplane[kh * Kw + kw] += accum;
                                }
                            }
                        }
                    }
                }
                acc.accumulate(in_k, gk);
            }
            if (in_b >= 0) {
                Tensor gb({Co});
                for (size_t b = 0; b < B; ++b) {
                    for (size_t co = 0; co < Co; ++co) {
                        const double* gplane = g.data().data() + (b * Co + co) * Ho * Wo;
                        double accum = 0.0;
                        for (size_t i = 0; i < Ho * Wo; ++i) accum += gplane[i];
                        gb[co] += accum;
                    }
                }
                acc.accumulate(in_b, gb);
            }
        });
}

Tensor global_avg_pool(Tape& tape, const Tensor& x) {
    if (x.rank() != 4) {
        throw ShapeError("global_avg_pool: expected [b,c,h,w], got " + shape_str(x.shape()));
    }
    const size_t B = x.dim(0), C = x.dim(1), spatial = x.dim(2) * x.dim(3);
    Tensor out({B, C});
    for (size_t bc = 0; bc < B * C; ++bc) {
        const double* plane = x.data().data() + bc * spatial;
        double s = 0.0;
        for (size_t i = 0; i < spatial; ++i) s += plane[i];
        out[bc] = s / static_cast<double>(spatial);
    }
    const int ix = x.node();
    if (ix < 0) return out;
    const Shape in_shape = x.shape();
    return tape.record("global_avg_pool", std::move(out), {ix},
                       [ix, in_shape, spatial](const Tensor& g, GradientMap& acc) {
                           Tensor gx(in_shape);
                           const double inv = 1.0 / static_cast<double>(spatial);
                           for (size_t bc = 0; bc < g.numel(); ++bc) {
                               double* plane = gx.data().data() + bc * spatial;
                               const double gv = g[bc] * inv;
                               for (size_t i = 0; i < spatial; ++i) plane[i] = gv;
                           }
                           acc.accumulate(ix, gx);
                       });
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
    if (eps <= 0.0) throw ConfigError("layer_norm: eps must be positive");
    const size_t d = x.dim(x.rank() - 1);
    if (gain.shape() != Shape{d} || shift.shape() != Shape{d}) {
        throw ShapeError("layer_norm: gain/shift must have shape [" + std::to_string(d) + "], got " +
                         shape_str(gain.shape()) + " and " + shape_str(shift.shape()));
    }
    const size_t rows = x.numel() / d;
    Tensor out(x.shape());
    Tensor xhat(x.shape());
    std::vector<double> inv_sigma(rows);
    for (size_t r = 0; r < rows; ++r) {
        const double* row = x.data().data() + r * d;
        double mu = 0.0;
        for (size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_sigma[r] = inv;
        for (size_t j = 0; j < d; ++j) {
            const double xh = (row[j] - mu) * inv;
            xhat[r * d + j] = xh;
            out[r * d + j] = gain[j] * xh + shift[j];
        }
    }
    const int in_x = x.node(), in_g = gain.node(), in_s = shift.node();
    std::vector<int> ins;
    for (int id : {in_x, in_g, in_s}) {
        if (id >= 0) ins.push_back(id);
    }
    if (ins.empty()) return out;
    const Tensor gv = gain.detached();
    const Tensor xh = xhat.detached();
    const Shape in_shape = x.shape();
    return tape.record(
        "layer_norm", std::move(out), ins,
        [in_x, in_g, in_s, gv, xh, inv_sigma, rows, d, in_shape](const Tensor& g, GradientMap& acc) {
            if (in_x >= 0) {
                Tensor gx(in_shape);
                for (size_t r = 0; r < rows; ++r) {
                    const double* grow = g.data().data() + r * d;
                    const double* xrow = xh.data().data() + r * d;
                    double m1 = 0.0, m2 = 0.0;
                    for (size_t j = 0; j < d; ++j) {
                        const double gh = grow[j] * gv[j];
                        m1 += gh;
                        m2 += gh * xrow[j];
                    }
                    m1 /= static_cast<double>(d);
                    m2 /= static_cast<double>(d);
                    for (size_t j = 0; j < d; ++j) {
                        const double gh = grow[j] * gv[j];
                        gx[r * d + j] = (gh - m1 - xrow[j] * m2) * inv_sigma[r];
                    }
                }
                acc.accumulate(in_x, gx);
            }
            if (in_g >= 0) {
                Tensor gg({d});
                for (size_t r = 0; r < rows; ++r) {
                    for (size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xh[r * d + j];
                }
                acc.accumulate(in_g, gg);
            }
            if (in_s >= 0) {
                Tensor gs({d});
                for (size_t r = 0; r < rows; ++r) {
                    for (size_t j = 0; j < d; ++j) gs[j] += g[r * d + j];
                }
                acc.accumulate(in_s, gs);
            }
        });
}

Tensor softmax_last(Tape& tape, const Tensor& x) {
    const size_t d = x.dim(x.rank() - 1);
    const size_t rows = x.numel() / d;
    Tensor out(x.shape());
    for (size_t r = 0; r < rows; ++r) {
        const double* row = x.data().data() + r * d;
        double* orow = out.data().data() + r * d;
        double m = row[0];
        for (size_t j = 1; j < d; ++j) m = std::max(m, row[j]);
        double z = 0.0;
        for (size_t j = 0; j < d; ++j) {
            orow[j] = std::exp(row[j] - m);
            z += orow[j];
        }
        for (size_t j = 0; j < d; ++j) orow[j] /= z;
    }
    const int ix = x.node();
    if (ix < 0) return out;
    const Tensor sv = out.detached();
    return tape.record("softmax", std::move(out), {ix},
                       [ix, sv, rows, d](const Tensor& g, GradientMap& acc) {
                           Tensor gx(g.shape());
                           for (size_t r = 0; r < rows; ++r) {
                               const double* grow = g.data().data() + r * d;
                               const double* srow = sv.data().data() + r * d;
                               double dot = 0.0;
                               for (size_t j = 0; j < d; ++j) dot += grow[j] * srow[j];
                               for (size_t j = 0; j < d; ++j) {
                                   gx[r * d + j] = srow[j] * (grow[j] - dot);
                               }
                           }
                           acc.accumulate(ix, gx);
                       });
}

Tensor relu(Tape& tape, const Tensor& x) {
    Tensor out(x.shape());
    for (size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
    const int ix = x.node();
    if (ix < 0) return out;
    const Tensor xv = x.detached();
    return tape.record("relu", std::move(out), {ix}, [ix, xv](const Tensor& g, GradientMap& acc) {
        Tensor gx(g.shape());
        for (size_t i = 0; i < g.numel(); ++i) gx[i] = xv[i] > 0.0 ? g[i] : 0.0;
        acc.accumulate(ix, gx);
    });
}

Tensor dropout(Tape& tape, const Tensor& x, double rate, bool training, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) {
        throw ConfigError("dropout: rate must be in [0,1), got " + std::to_string(rate));
    }
    if (!training || rate == 0.0) return x;  // identity, no RNG draw
    const double keep_scale = 1.0 / (1.0 - rate);
    std::vector<double> mask(x.numel());
    for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
    Tensor out(x.shape());
    for (size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * mask[i];
    const int ix = x.node();
    if (ix < 0) return out;
    return tape.record("dropout", std::move(out), {ix}, [ix, mask](const Tensor& g, GradientMap& acc) {
        Tensor gx(g.shape());
        for (size_t i = 0; i < g.numel(); ++i) gx[i] = g[i] * mask[i];
        acc.accumulate(ix, gx);
    });
}

Tensor grl(Tape& tape, const Tensor& x, const GrlConfig& cfg) {
    cfg.validate();
    Tensor out(x.shape(), x.data());
    const int ix = x.node();
    if (ix < 0) return out;
    const double lambda = cfg.lambda;
    return tape.record("grl", std::move(out), {ix}, [ix, lambda](const Tensor& g, GradientMap& acc) {
        Tensor gx(g.shape());
        for (size_t i = 0; i < g.numel(); ++i) gx[i] = -lambda * g[i];
        acc.accumulate(ix, gx);
    });
}

Tensor mse_loss(Tape& tape, const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape() || pred.numel() == 0) {
        throw ShapeError("mse_loss: prediction " + shape_str(pred.shape()) + " vs target " +
                         shape_str(target.shape()));
    }
    Tensor diff = tape.sub(pred, target);
    return tape.mean(tape.mul(diff, diff));
}

Tensor cross_entropy_loss(Tape& tape, const Tensor& logits, const Tensor& onehot) {
    if (logits.rank() != 2 || onehot.shape() != logits.shape()) {
        throw ShapeError("cross_entropy_loss: logits " + shape_str(logits.shape()) + " vs one-hot " +
                         shape_str(onehot.shape()));
    }
    const size_t N = logits.dim(0), C = logits.dim(1);
    for (size_t i = 0; i < N; ++i) {
        size_t ones = 0;
        for (size_t j = 0; j < C; ++j) {
            const double v = onehot[i * C + j];
            if (v == 1.0) {
                ++ones;
            } else if (v != 0.0) {
                throw ValidationError("cross_entropy_loss: row " + std::to_string(i) +
                                      " is not one-hot (entry " + std::to_string(v) + ")");
            }
        }
        if (ones != 1) {
            throw ValidationError("cross_entropy_loss: row " + std::to_string(i) +
                                  " must contain exactly one 1, found " + std::to_string(ones));
        }
    }

    Tensor probs({N, C});
    double total = 0.0;
    for (size_t i = 0; i < N; ++i) {
        const double* row = logits.data().data() + i * C;
        double m = row[0];
        for (size_t j = 1; j < C; ++j) m = std::max(m, row[j]);
        double z = 0.0;
        for (size_t j = 0; j < C; ++j) z += std::exp(row[j] - m);
        const double lse = m + std::log(z);
        for (size_t j = 0; j < C; ++j) {
            probs[i * C + j] = std::exp(row[j] - m) / z;
            total += onehot[i * C + j] * (lse - row[j]);
        }
    }
    Tensor out = Tensor::scalar(total / static_cast<double>(N));

    const int in_l = logits.node(), in_z = onehot.node();
    std::vector<int> ins;
    if (in_l >= 0) ins.push_back(in_l);
    if (in_z >= 0) ins.push_back(in_z);
    if (ins.empty()) return out;
    const Tensor pv = probs.detached();
    const Tensor zv = onehot.detached();
    const Tensor lv = logits.detached();
    return tape.record("cross_entropy", std::move(out), ins,
                       [in_l, in_z, pv, zv, lv, N, C](const Tensor& g, GradientMap& acc) {
                           const double gn = g[0] / static_cast<double>(N);
                           if (in_l >= 0) {
                               Tensor gl({N, C});
                               for (size_t i = 0; i < N * C; ++i) gl[i] = gn * (pv[i] - zv[i]);
                               acc.accumulate(in_l, gl);
                           }
                           if (in_z >= 0) {
                               // d/dz of sum z*(lse - l) = lse - l per entry
                               Tensor gz({N, C});
                               for (size_t i = 0; i < N; ++i) {
                                   const double* row = lv.data().data() + i * C;
                                   double m = row[0];
                                   for (size_t j = 1; j < C; ++j) m = std::max(m, row[j]);
                                   double z = 0.0;
                                   for (size_t j = 0; j < C; ++j) z += std::exp(row[j] - m);
                                   const double lse = m + std::log(z);
                                   for (size_t j = 0; j < C; ++j) gz[i * C + j] = gn * (lse - row[j]);
                               }
                               acc.accumulate(in_z, gz);
                           }
                       });
}

AttentionResult multi_head_attention(Tape& tape, const Tensor& x, const AttentionParams& p, size_t heads) {
    if (x.rank() != 3) {
        throw ShapeError("attention: expected [batch, tokens, d], got " + shape_str(x.shape()));
    }
    const size_t B = x.dim(0), T = x.dim(1), D = x.dim(2);
    if (heads == 0 || D % heads != 0) {
        throw ConfigError("attention: embed dim " + std::to_string(D) + " not divisible by heads " +
                          std::to_string(heads));
    }
    const size_t dh = D / heads;

    auto split_heads = [&](const Tensor& t) {
        return tape.permute(tape.reshape(t, {B, T, heads, dh}), {0, 2, 1, 3});  // [B,H,T,dh]
    };
    Tensor q = split_heads(linear(tape, x, p.wq, p.bq));
    Tensor k = split_heads(linear(tape, x, p.wk, p.bk));
    Tensor v = split_heads(linear(tape, x, p.wv, p.bv));

    Tensor scores = tape.scale(tape.matmul(q, tape.permute(k, {0, 1, 3, 2})),
                               1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor attn = softmax_last(tape, scores);  // [B,H,T,T]
    Tensor ctx = tape.matmul(attn, v);         // [B,H,T,dh]
    Tensor merged = tape.reshape(tape.permute(ctx, {0, 2, 1, 3}), {B, T, D});
    Tensor out = linear(tape, merged, p.wo, p.bo);
    return {out, attn};
}

Tensor patch_embed(Tape& tape, const Tensor& img, size_t patch, const PatchEmbedParams& p) {
    if (img.rank() != 4) {
        throw ShapeError("patch_embed: expected [batch, c, h, w], got " + shape_str(img.shape()));
    }
    const size_t B = img.dim(0), C = img.dim(1), H = img.dim(2), W = img.dim(3);
    if (patch == 0 || H % patch != 0 || W % patch != 0) {
        throw ConfigError("patch_embed: image " + std::to_string(H) + "x" + std::to_string(W) +
                          " not divisible by patch " + std::to_string(patch));
    }
    const size_t hp = H / patch, wp = W / patch, n_patches = hp * wp;
    const size_t flat = C * patch * patch;
    if (p.weight.rank() != 2 || p.weight.dim(0) != flat) {
        throw ShapeError("patch_embed: projection weight " + shape_str(p.weight.shape()) +
                         " does not match patch volume " + std::to_string(flat));
    }
    const size_t d = p.weight.dim(1);
    if (p.pos.shape() != Shape{n_patches + 1, d} || p.cls.shape() != Shape{d}) {
        throw ShapeError("patch_embed: cls/pos shapes " + shape_str(p.cls.shape()) + "/" +
                         shape_str(p.pos.shape()) + " do not match " + std::to_string(n_patches + 1) +
                         " tokens of width " + std::to_string(d));
    }

    Tensor patches = tape.reshape(
        tape.permute(tape.reshape(img, {B, C, hp, patch, wp, patch}), {0, 2, 4, 1, 3, 5}),
        {B, n_patches, flat});
    Tensor tokens = linear(tape, patches, p.weight, p.bias);              // [B, Np, d]
    Tensor cls = tape.broadcast_to(tape.reshape(p.cls, {1, d}), {B, 1, d});
    Tensor seq = tape.concat(cls, tokens, 1);                              // [B, 1+Np, d]
    return tape.add(seq, tape.broadcast_to(p.pos, {B, n_patches + 1, d}));
}

}  // namespace fairvit::nn
