#include "fairvit/tape.hpp"

#include <algorithm>
#include <cmath>

namespace fairvit {

namespace {

std::vector<size_t> strides_of(const Shape& s) {
    std::vector<size_t> st(s.size(), 1);
    for (size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

// C[m,n] += A[m,k] * B[k,n]
void mm_acc(const double* A, const double* B, double* C, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const double* arow = A + i * k;
        double* crow = C + i * n;
        for (size_t l = 0; l < k; ++l) {
            const double av = arow[l];
            const double* brow = B + l * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,k] += G[m,n] * B^T, with B stored as [k,n]
void mm_bt_acc(const double* G, const double* B, double* C, size_t m, size_t n, size_t k) {
    for (size_t i = 0; i < m; ++i) {
        const double* grow = G + i * n;
        double* crow = C + i * k;
        for (size_t l = 0; l < k; ++l) {
            const double* brow = B + l * n;
            double acc = 0.0;
            for (size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            crow[l] += acc;
        }
    }
}

// C[k,n] += A^T * G, with A stored as [m,k], G as [m,n]
void mm_at_acc(const double* A, const double* G, double* C, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const double* arow = A + i * k;
        const double* grow = G + i * n;
        for (size_t l = 0; l < k; ++l) {
            const double av = arow[l];
            double* crow = C + l * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
        }
    }
}

Tensor permute_values(const Tensor& x, const std::vector<size_t>& axes) {
    const Shape& in_shape = x.shape();
    const size_t rank = in_shape.size();
    Shape out_shape(rank);
    for (size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[axes[i]];

    const std::vector<size_t> in_strides = strides_of(in_shape);
    std::vector<size_t> step(rank);
    for (size_t i = 0; i < rank; ++i) step[i] = in_strides[axes[i]];

    Tensor out(out_shape);
    std::vector<size_t> idx(rank, 0);
    size_t in_off = 0;
    const size_t total = out.numel();
    for (size_t lin = 0; lin < total; ++lin) {
        out[lin] = x[in_off];
        for (size_t ax = rank; ax-- > 0;) {
            ++idx[ax];
            in_off += step[ax];
            if (idx[ax] < out_shape[ax]) break;
            in_off -= step[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    return out;
}

bool is_suffix(const Shape& suffix, const Shape& full) {
    if (suffix.size() > full.size()) return false;
    const size_t off = full.size() - suffix.size();
    for (size_t i = 0; i < suffix.size(); ++i) {
        if (full[off + i] != suffix[i]) return false;
    }
    return true;
}

}  // namespace

// ---- GradientMap ------------------------------------------------------------

const Tensor* GradientMap::find(int node) const {
    if (node < 0 || static_cast<size_t>(node) >= grads_.size() || !has_[static_cast<size_t>(node)]) {
        return nullptr;
    }
    return &grads_[static_cast<size_t>(node)];
}

const Tensor& GradientMap::at(int node) const {
    const Tensor* g = find(node);
    if (!g) throw ContractError("no gradient recorded for node " + std::to_string(node));
    return *g;
}

void GradientMap::accumulate(int node, const Tensor& partial) {
    auto idx = static_cast<size_t>(node);
    if (node < 0 || idx >= grads_.size()) {
        throw ContractError("gradient accumulate: node id " + std::to_string(node) + " out of range");
    }
    if (!has_[idx]) {
        grads_[idx] = partial;
        has_[idx] = 1;
        return;
    }
    Tensor& slot = grads_[idx];
    if (slot.shape() != partial.shape()) {
        throw ShapeError("gradient accumulate: shape " + shape_str(partial.shape()) +
                         " does not match existing " + shape_str(slot.shape()));
    }
    for (size_t i = 0; i < slot.numel(); ++i) slot[i] += partial[i];
}

// ---- Tape -------------------------------------------------------------------

Tensor Tape::attach(Tensor value, int node_id, bool requires_grad) {
    value.node_ = node_id;
    value.requires_grad_ = requires_grad;
    return value;
}

Tensor Tape::leaf(const Tensor& value, bool requires_grad) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{"leaf", {}, value.shape(), nullptr});
    return attach(value.detached(), id, requires_grad);
}

int Tape::check_input(const char* op, const Tensor& t) const {
    if (t.node() < 0) return -1;
    if (static_cast<size_t>(t.node()) >= nodes_.size()) {
        throw ContractError(std::string(op) + ": operand node id " + std::to_string(t.node()) +
                            " does not belong to this tape");
    }
    return t.node();
}

Tensor Tape::record(const char* op, Tensor value, const std::vector<int>& inputs, BackwardFn backward) {
    if (inputs.empty()) return value;  // all-constant computation stays off the tape
    for (int id : inputs) {
        if (id < 0 || static_cast<size_t>(id) >= nodes_.size()) {
            throw ContractError(std::string(op) + ": input node id out of range");
        }
    }
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{op, inputs, value.shape(), std::move(backward)});
    return attach(std::move(value), id, false);
}

GradientMap Tape::backward(const Tensor& root) const {
    if (!root.on_tape() || static_cast<size_t>(root.node()) >= nodes_.size()) {
        throw ContractError("backward: root is not attached to this tape");
    }
    if (root.numel() != 1) {
        throw ContractError("backward: root must be a scalar, got shape " + shape_str(root.shape()));
    }
    GradientMap grads(nodes_.size());
    grads.accumulate(root.node(), Tensor::ones(root.shape()));
    for (int id = root.node(); id >= 0; --id) {
        const Node& nd = nodes_[static_cast<size_t>(id)];
        if (!nd.backward) continue;
        const Tensor* g = grads.find(id);
        if (!g) continue;
        nd.backward(*g, grads);
    }
    return grads;
}

// ---- primitives --------------------------------------------------------------

Tensor Tape::add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor out(a.shape());
    for (size_t i = 0; i < out.numel(); ++i) out[i] = a[i] + b[i];
    const int ia = check_input("add", a), ib = check_input("add", b);
    std::vector<int> ins;
    if (ia >= 0) ins.push_back(ia);
    if (ib >= 0) ins.push_back(ib);
    return record("add", std::move(out), ins, [ia, ib](const Tensor& g, GradientMap& acc) {
        if (ia >= 0) acc.accumulate(ia, g);
        if (ib >= 0) acc.accumulate(ib, g);
    });
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor out(a.shape());
    for (size_t i = 0; i < out.numel(); ++i) out[i] = a[i] - b[i];
    const int ia = check_input("sub", a), ib = check_input("sub", b);
    std::vector<int> ins;
    if (ia >= 0) ins.push_back(ia);
    if (ib >= 0) ins.push_back(ib);
    return record("sub", std::move(out), ins, [ia, ib](const Tensor& g, GradientMap& acc) {
        if (ia >= 0) acc.accumulate(ia, g);
        if (ib >= 0) {
            Tensor neg(g.shape());
            for (size_t i = 0; i < g.numel(); ++i) neg[i] = -g[i];
            acc.accumulate(ib, neg);
        }
    });
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor out(a.shape());
    for (size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * b[i];
    const int ia = check_input("mul", a), ib = check_input("mul", b);
    std::vector<int> ins;
    if (ia >= 0) ins.push_back(ia);
    if (ib >= 0) ins.push_back(ib);
    const Tensor av = a.detached(), bv = b.detached();
    return record("mul", std::move(out), ins, [ia, ib, av, bv](const Tensor& g, GradientMap& acc) {
        if (ia >= 0) {
            Tensor ga(g.shape());
            for (size_t i = 0; i < g.numel(); ++i) ga[i] = g[i] * bv[i];
            acc.accumulate(ia, ga);
        }
        if (ib >= 0) {
            Tensor gb(g.shape());
            for (size_t i = 0; i < g.numel(); ++i) gb[i] = g[i] * av[i];
            acc.accumulate(ib, gb);
        }
    });
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
    const size_t ra = a.rank(), rb = b.rank();
    if (ra < 2 || rb < 2) {
        throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    const size_t m = a.dim(ra - 2), k = a.dim(ra - 1);
    const size_t k2 = b.dim(rb - 2), n = b.dim(rb - 1);
    if (k != k2) {
        throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    const Shape lead_a(a.shape().begin(), a.shape().end() - 2);
    const Shape lead_b(b.shape().begin(), b.shape().end() - 2);
    bool a_batched = true, b_batched = true;
    Shape lead;
    if (lead_a == lead_b) {
        lead = lead_a;
    } else if (lead_b.empty()) {
        lead = lead_a;
        b_batched = false;
    } else if (lead_a.empty()) {
        lead = lead_b;
        a_batched = false;
    } else {
        throw ShapeError("matmul: batch dimensions disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    const size_t batches = shape_numel(lead);
    Shape out_shape = lead;
    out_shape.push_back(m);
    out_shape.push_back(n);

    Tensor out(out_shape);
    for (size_t bi = 0; bi < batches; ++bi) {
        const double* ap = a.data().data() + (a_batched ? bi * m * k : 0);
        const double* bp = b.data().data() + (b_batched ? bi * k * n : 0);
        mm_acc(ap, bp, out.data().data() + bi * m * n, m, k, n);
    }

    const int ia = check_input("matmul", a), ib = check_input("matmul", b);
    std::vector<int> ins;
    if (ia >= 0) ins.push_back(ia);
    if (ib >= 0) ins.push_back(ib);
    const Tensor av = a.detached(), bv = b.detached();
    return record("matmul", std::move(out), ins,
                  [ia, ib, av, bv, m, k, n, batches, a_batched, b_batched](const Tensor& g, GradientMap& acc) {
                      if (ia >= 0) {
                          Tensor ga(av.shape());
                          for (size_t bi = 0; bi < batches; ++bi) {
                              const double* gp = g.data().data() + bi * m * n;
                              const double* bp = bv.data().data() + (b_batched ? bi * k * n : 0);
                              double* out_p = ga.data().data() + (a_batched ? bi * m * k : 0);
                              mm_bt_acc(gp, bp, out_p, m, n, k);
                          }
                          acc.accumulate(ia, ga);
                      }
                      if (ib >= 0) {
                          Tensor gb(bv.shape());
                          for (size_t bi = 0; bi < batches; ++bi) {
                              const double* ap = av.data().data() + (a_batched ? bi * m * k : 0);
                              const double* gp = g.data().data() + bi * m * n;
                              double* out_p = gb.data().data() + (b_batched ? bi * k * n : 0);
                              mm_at_acc(ap, gp, out_p, m, k, n);
                          }
                          acc.accumulate(ib, gb);
                      }
                  });
}

Tensor Tape::transpose(const Tensor& x) {
    if (x.rank() < 2) {
        throw ShapeError("transpose: rank >= 2 required, got " + shape_str(x.shape()));
    }
    std::vector<size_t> axes(x.rank());
    for (size_t i = 0; i < axes.size(); ++i) axes[i] = i;
    std::swap(axes[x.rank() - 2], axes[x.rank() - 1]);
    return permute(x, axes);
}

Tensor Tape::permute(const Tensor& x, const std::vector<size_t>& axes) {
    if (axes.size() != x.rank()) {
        throw ShapeError("permute: axes count " + std::to_string(axes.size()) + " does not match rank " +
                         std::to_string(x.rank()));
    }
    std::vector<char> seen(x.rank(), 0);
    for (size_t ax : axes) {
        if (ax >= x.rank() || seen[ax]) throw ShapeError("permute: axes must be a permutation");
        seen[ax] = 1;
    }
    Tensor out = permute_values(x, axes);
    const int ix = check_input("permute", x);
    if (ix < 0) return out;
    std::vector<size_t> inverse(axes.size());
    for (size_t i = 0; i < axes.size(); ++i) inverse[axes[i]] = i;
    return record("permute", std::move(out), {ix}, [ix, inverse](const Tensor& g, GradientMap& acc) {
        acc.accumulate(ix, permute_values(g, inverse));
    });
}

Tensor Tape::reshape(const Tensor& x, const Shape& shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    Tensor out(shape, x.data());
    const int ix = check_input("reshape", x);
    if (ix < 0) return out;
    const Shape in_shape = x.shape();
    return record("reshape", std::move(out), {ix}, [ix, in_shape](const Tensor& g, GradientMap& acc) {
        acc.accumulate(ix, Tensor(in_shape, g.data()));
    });
}

Tensor Tape::sum(const Tensor& x) {
    double total = 0.0;
    for (size_t i = 0; i < x.numel(); ++i) total += x[i];
    Tensor out = Tensor::scalar(total);
    const int ix = check_input("sum", x);
    if (ix < 0) return out;
    const Shape in_shape = x.shape();
    return record("sum", std::move(out), {ix}, [ix, in_shape](const Tensor& g, GradientMap& acc) {
        acc.accumulate(ix, Tensor::full(in_shape, g[0]));
    });
}

Tensor Tape::mean(const Tensor& x) {
    double total = 0.0;
    for (size_t i = 0; i < x.numel(); ++i) total += x[i];
    const double n = static_cast<double>(x.numel());
    Tensor out = Tensor::scalar(total / n);
    const int ix = check_input("mean", x);
    if (ix < 0) return out;
    const Shape in_shape = x.shape();
    return record("mean", std::move(out), {ix}, [ix, in_shape, n](const Tensor& g, GradientMap& acc) {
        acc.accumulate(ix, Tensor::full(in_shape, g[0] / n));
    });
}

Tensor Tape::max_axis(const Tensor& x, size_t axis) {
    if (axis >= x.rank()) {
        throw ShapeError("max_axis: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
    }
    const size_t d = x.dim(axis);
    size_t outer = 1, inner = 1;
    for (size_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);

    Shape out_shape;
    for (size_t i = 0; i < x.rank(); ++i) {
        if (i != axis) out_shape.push_back(x.dim(i));
    }
    if (out_shape.empty()) out_shape = {1};

    Tensor out(out_shape);
    std::vector<size_t> argmax(outer * inner);
    for (size_t o = 0; o < outer; ++o) {
        for (size_t in = 0; in < inner; ++in) {
            size_t best = 0;
            double best_v = x[o * d * inner + in];
            for (size_t j = 1; j < d; ++j) {
                const double v = x[(o * d + j) * inner + in];
                if (v > best_v) {  // strict: ties keep the lowest index
                    best_v = v;
                    best = j;
                }
            }
            out[o * inner + in] = best_v;
            argmax[o * inner + in] = best;
        }
    }
    const int ix = check_input("max_axis", x);
    if (ix < 0) return out;
    const Shape in_shape = x.shape();
    return record("max_axis", std::move(out), {ix},
                  [ix, in_shape, argmax, outer, inner, d](const Tensor& g, GradientMap& acc) {
                      Tensor gx(in_shape);
                      for (size_t o = 0; o < outer; ++o) {
                          for (size_t in = 0; in < inner; ++in) {
                              const size_t j = argmax[o * inner + in];
                              gx[(o * d + j) * inner + in] = g[o * inner + in];
                          }
                      }
                      acc.accumulate(ix, gx);
                  });
}

Tensor Tape::exp(const Tensor& x) {
    Tensor out(x.shape());
    for (size_t i = 0; i < x.numel(); ++i) out[i] = std::exp(x[i]);
    const int ix = check_input("exp", x);
    if (ix < 0) return out;
    const Tensor ov = out.detached();
    return record("exp", std::move(out), {ix}, [ix, ov](const Tensor& g, GradientMap& acc) {
        Tensor gx(g.shape());
        for (size_t i = 0; i < g.numel(); ++i) gx[i] = g[i] * ov[i];
        acc.accumulate(ix, gx);
    });
}

Tensor Tape::log(const Tensor& x) {
    Tensor out(x.shape());
    for (size_t i = 0; i < x.numel(); ++i) {
        if (x[i] <= 0.0) {
            throw DomainError("log: non-positive operand " + std::to_string(x[i]));
        }
        out[i] = std::log(x[i]);
    }
    const int ix = check_input("log", x);
    if (ix < 0) return out;
    const Tensor xv = x.detached();
    return record("log", std::move(out), {ix}, [ix, xv](const Tensor& g, GradientMap& acc) {
        Tensor gx(g.shape());
        for (size_t i = 0; i < g.numel(); ++i) gx[i] = g[i] / xv[i];
        acc.accumulate(ix, gx);
    });
}

Tensor Tape::power(const Tensor& x, double exponent) {
    const bool integral = exponent == std::floor(exponent);
    for (size_t i = 0; i < x.numel(); ++i) {
        if (!integral && x[i] < 0.0) {
            throw DomainError("power: negative base " + std::to_string(x[i]) +
                              " with non-integer exponent " + std::to_string(exponent));
        }
        if (exponent < 1.0 && exponent != 0.0 && x[i] == 0.0) {
            throw DomainError("power: zero base with exponent " + std::to_string(exponent) +
                              " has no finite derivative");
        }
    }
    Tensor out(x.shape());
    for (size_t i = 0; i < x.numel(); ++i) out[i] = std::pow(x[i], exponent);
    const int ix = check_input("power", x);
    if (ix < 0) return out;
    const Tensor xv = x.detached();
    return record("power", std::move(out), {ix}, [ix, xv, exponent](const Tensor& g, GradientMap& acc) {
        Tensor gx(g.shape());
        for (size_t i = 0; i < g.numel(); ++i) {
            gx[i] = exponent == 0.0 ? 0.0 : g[i] * exponent * std::pow(xv[i], exponent - 1.0);
        }
        acc.accumulate(ix, gx);
    });
}

Tensor Tape::broadcast_to(const Tensor& x, const Shape& target) {
    if (!is_suffix(x.shape(), target)) {
        throw ShapeError("broadcast: " + shape_str(x.shape()) + " is not a trailing suffix of " +
                         shape_str(target));
    }
    const size_t xn = x.numel();
    const size_t reps = shape_numel(target) / xn;
    Tensor out(target);
    for (size_t r = 0; r < reps; ++r) {
        std::copy(x.data().begin(), x.data().end(), out.data().begin() + r * xn);
    }
    const int ix = check_input("broadcast", x);
    if (ix < 0) return out;
    const Shape in_shape = x.shape();
    return record("broadcast", std::move(out), {ix},
                  [ix, in_shape, xn, reps](const Tensor& g, GradientMap& acc) {
                      Tensor gx(in_shape);
                      for (size_t r = 0; r < reps; ++r) {
                          const double* gp = g.data().data() + r * xn;
                          for (size_t i = 0; i < xn; ++i) gx[i] += gp[i];
                      }
                      acc.accumulate(ix, gx);
                  });
}

Tensor Tape::scale(const Tensor& x, double c) {
    Tensor out(x.shape());
    for (size_t i = 0; i < x.numel(); ++i) out[i] = c * x[i];
    const int ix = check_input("scale", x);
    if (ix < 0) return out;
    return record("scale", std::move(out), {ix}, [ix, c](const Tensor& g, GradientMap& acc) {
        Tensor gx(g.shape());
        for (size_t i = 0; i < g.numel(); ++i) gx[i] = c * g[i];
        acc.accumulate(ix, gx);
    });
}

Tensor Tape::concat(const Tensor& a, const Tensor& b, size_t axis) {
    if (a.rank() != b.rank() || axis >= a.rank()) {
        throw ShapeError("concat: incompatible ranks " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()) + " at axis " + std::to_string(axis));
    }
    for (size_t i = 0; i < a.rank(); ++i) {
        if (i != axis && a.dim(i) != b.dim(i)) {
            throw ShapeError("concat: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                             " differ outside axis " + std::to_string(axis));
        }
    }
    Shape out_shape = a.shape();
    out_shape[axis] = a.dim(axis) + b.dim(axis);
    size_t outer = 1, inner = 1;
    for (size_t i = 0; i < axis; ++i) outer *= a.dim(i);
    for (size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
    const size_t block_a = a.dim(axis) * inner, block_b = b.dim(axis) * inner;

    Tensor out(out_shape);
    for (size_t o = 0; o < outer; ++o) {
        std::copy(a.data().begin() + o * block_a, a.data().begin() + (o + 1) * block_a,
                  out.data().begin() + o * (block_a + block_b));
        std::copy(b.data().begin() + o * block_b, b.data().begin() + (o + 1) * block_b,
                  out.data().begin() + o * (block_a + block_b) + block_a);
    }
    const int ia = check_input("concat", a), ib = check_input("concat", b);
    std::vector<int> ins;
    if (ia >= 0) ins.push_back(ia);
    if (ib >= 0) ins.push_back(ib);
    const Shape sa = a.shape(), sb = b.shape();
    return record("concat", std::move(out), ins,
                  [ia, ib, sa, sb, outer, block_a, block_b](const Tensor& g, GradientMap& acc) {
                      if (ia >= 0) {
                          Tensor ga(sa);
                          for (size_t o = 0; o < outer; ++o) {
                              std::copy(g.data().begin() + o * (block_a + block_b),
                                        g.data().begin() + o * (block_a + block_b) + block_a,
                                        ga.data().begin() + o * block_a);
                          }
                          acc.accumulate(ia, ga);
                      }
                      if (ib >= 0) {
                          Tensor gb(sb);
                          for (size_t o = 0; o < outer; ++o) {
                              std::copy(g.data().begin() + o * (block_a + block_b) + block_a,
                                        g.data().begin() + (o + 1) * (block_a + block_b),
                                        gb.data().begin() + o * block_b);
                          }
                          acc.accumulate(ib, gb);
                      }
                  });
}

Tensor Tape::slice(const Tensor& x, size_t axis, size_t start, size_t len) {
    if (axis >= x.rank() || len == 0 || start + len > x.dim(axis)) {
        throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") invalid for axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
    }
    Shape out_shape = x.shape();
    out_shape[axis] = len;
    size_t outer = 1, inner = 1;
    for (size_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    const size_t d = x.dim(axis);

    Tensor out(out_shape);
    for (size_t o = 0; o < outer; ++o) {
        std::copy(x.data().begin() + (o * d + start) * inner,
                  x.data().begin() + (o * d + start + len) * inner,
                  out.data().begin() + o * len * inner);
    }
    const int ix = check_input("slice", x);
    if (ix < 0) return out;
    const Shape in_shape = x.shape();
    return record("slice", std::move(out), {ix},
                  [ix, in_shape, outer, inner, d, start, len](const Tensor& g, GradientMap& acc) {
                      Tensor gx(in_shape);
                      for (size_t o = 0; o < outer; ++o) {
                          std::copy(g.data().begin() + o * len * inner,
                                    g.data().begin() + (o + 1) * len * inner,
                                    gx.data().begin() + (o * d + start) * inner);
                      }
                      acc.accumulate(ix, gx);
                  });
}

// ---- dispatch -----------------------------------------------------------------

Tensor apply_primitive(Tape& tape, Primitive kind, const std::vector<Tensor>& inputs,
                       const PrimitiveAttrs& attrs) {
    auto unary = [&](const char* name) -> const Tensor& {
        if (inputs.size() != 1) {
            throw ContractError(std::string(name) + ": expected 1 input, got " + std::to_string(inputs.size()));
        }
        return inputs[0];
    };
    auto binary = [&](const char* name) {
        if (inputs.size() != 2) {
            throw ContractError(std::string(name) + ": expected 2 inputs, got " + std::to_string(inputs.size()));
        }
    };
    switch (kind) {
        case Primitive::Add: binary("add"); return tape.add(inputs[0], inputs[1]);
        case Primitive::Sub: binary("sub"); return tape.sub(inputs[0], inputs[1]);
        case Primitive::Mul: binary("mul"); return tape.mul(inputs[0], inputs[1]);
        case Primitive::Matmul: binary("matmul"); return tape.matmul(inputs[0], inputs[1]);
        case Primitive::Transpose: return tape.transpose(unary("transpose"));
        case Primitive::Reshape: return tape.reshape(unary("reshape"), attrs.shape);
        case Primitive::Sum: return tape.sum(unary("sum"));
        case Primitive::Mean: return tape.mean(unary("mean"));
        case Primitive::MaxAxis: return tape.max_axis(unary("max_axis"), attrs.axis);
        case Primitive::Exp: return tape.exp(unary("exp"));
        case Primitive::Log: return tape.log(unary("log"));
        case Primitive::Power: return tape.power(unary("power"), attrs.exponent);
        case Primitive::Broadcast: return tape.broadcast_to(unary("broadcast"), attrs.shape);
    }
    throw ContractError("apply_primitive: unknown primitive kind");
}

// ---- finite differences --------------------------------------------------------

FiniteDiffReport finite_diff_check(const TensorFn& f, const std::vector<Tensor>& points,
                                   double eps, double rel_tol) {
    if (eps <= 0.0) throw ContractError("finite_diff_check: eps must be positive");

    Tape tape;
    std::vector<Tensor> leaves;
    leaves.reserve(points.size());
    for (const Tensor& p : points) leaves.push_back(tape.leaf(p, true));
    Tensor y = f(tape, leaves);
    if (y.numel() != 1) {
        throw ContractError("finite_diff_check: f must return a scalar, got shape " + shape_str(y.shape()));
    }
    if (!y.on_tape()) {
        throw ContractError("finite_diff_check: f output is not attached to the tape");
    }
    GradientMap grads = tape.backward(y);

    std::vector<Tensor> work;
    work.reserve(points.size());
    for (const Tensor& p : points) work.push_back(p.detached());

    auto eval = [&]() {
        Tape t;
        std::vector<Tensor> ls;
        ls.reserve(work.size());
        for (const Tensor& w : work) ls.push_back(t.leaf(w, false));
        return f(t, ls).item();
    };

    double max_rel = 0.0;
    for (size_t i = 0; i < work.size(); ++i) {
        const Tensor* g = grads.find(leaves[i].node());
        for (size_t c = 0; c < work[i].numel(); ++c) {
            const double orig = work[i][c];
            work[i][c] = orig + eps;
            const double fp = eval();
            work[i][c] = orig - eps;
            const double fm = eval();
            work[i][c] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double analytic = g ? (*g)[c] : 0.0;
            const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-3});
            max_rel = std::max(max_rel, std::fabs(analytic - numeric) / denom);
        }
    }
    return {max_rel, max_rel <= rel_tol};
}

FiniteDiffReport finite_diff_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                                   const Tensor& point, double eps, double rel_tol) {
    return finite_diff_check(
        [&f](Tape& t, const std::vector<Tensor>& xs) { return f(t, xs[0]); },
        {point}, eps, rel_tol);
}

}  // namespace fairvit
