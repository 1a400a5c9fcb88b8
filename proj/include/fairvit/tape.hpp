#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fairvit/tensor.hpp"

namespace fairvit {

class Tape;

// Gradients produced by Tape::backward, keyed by tape node id. Nodes not
// reachable from the backward root have no entry.
class GradientMap {
public:
    const Tensor* find(int node) const;
    const Tensor& at(int node) const;
    bool contains(int node) const { return find(node) != nullptr; }

    // Adds a partial gradient into a node's slot (elementwise accumulation).
    void accumulate(int node, const Tensor& partial);

private:
    friend class Tape;
    explicit GradientMap(size_t n) : grads_(n), has_(n, 0) {}
    std::vector<Tensor> grads_;
    std::vector<char> has_;
};

// Append-only record of one forward computation. Nodes reference only earlier
// nodes, so a single reverse sweep computes exact gradients. A tape and the
// tensors attached to it are confined to one thread.
class Tape {
public:
    using BackwardFn = std::function<void(const Tensor& upstream, GradientMap& acc)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    size_t size() const { return nodes_.size(); }

    // Registers an input value. requires_grad marks trainable leaves.
    Tensor leaf(const Tensor& value, bool requires_grad = true);

    // Registers an operation result. `inputs` lists tape-attached operands
    // (detached constants are simply captured by the backward closure).
    Tensor record(const char* op, Tensor value, const std::vector<int>& inputs, BackwardFn backward);

    // Reverse sweep from a scalar root. Gradient shapes equal value shapes.
    GradientMap backward(const Tensor& root) const;

    const Shape& node_shape(int node) const { return nodes_.at(static_cast<size_t>(node)).shape; }

    // ---- primitives -------------------------------------------------------
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
    Tensor matmul(const Tensor& a, const Tensor& b);
    Tensor transpose(const Tensor& x);                        // swaps the last two axes
    Tensor permute(const Tensor& x, const std::vector<size_t>& axes);
    Tensor reshape(const Tensor& x, const Shape& shape);
    Tensor sum(const Tensor& x);   // full reduction -> shape [1]
    Tensor mean(const Tensor& x);  // full reduction -> shape [1]
    Tensor max_axis(const Tensor& x, size_t axis);  // ties routed to the lowest index
    Tensor exp(const Tensor& x);
    Tensor log(const Tensor& x);
    Tensor power(const Tensor& x, double exponent);
    Tensor broadcast_to(const Tensor& x, const Shape& target);  // trailing-dim rule
    Tensor scale(const Tensor& x, double c);
    Tensor concat(const Tensor& a, const Tensor& b, size_t axis);
    Tensor slice(const Tensor& x, size_t axis, size_t start, size_t len);

private:
    struct Node {
        const char* op;
        std::vector<int> inputs;
        Shape shape;
        BackwardFn backward;  // empty for leaves
    };

    int check_input(const char* op, const Tensor& t) const;
    Tensor attach(Tensor value, int node_id, bool requires_grad);

    std::vector<Node> nodes_;
};

// ---- generic primitive dispatch (mostly for tests and bindings) -----------
enum class Primitive {
    Add, Sub, Mul, Matmul, Transpose, Reshape, Sum, Mean, MaxAxis, Exp, Log, Power, Broadcast
};

struct PrimitiveAttrs {
    size_t axis = 0;       // MaxAxis
    double exponent = 1.0; // Power
    Shape shape;           // Reshape, Broadcast
};

Tensor apply_primitive(Tape& tape, Primitive kind, const std::vector<Tensor>& inputs,
                       const PrimitiveAttrs& attrs = {});

// ---- finite-difference gradient oracle -------------------------------------
// Central differences (f(x+eps) - f(x-eps)) / (2 eps) per coordinate, compared
// against the tape gradient. Relative error uses max(|a|,|n|,1e-3) as scale.
struct FiniteDiffReport {
    double max_rel_error = 0.0;
    bool pass = false;
};

using TensorFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

FiniteDiffReport finite_diff_check(const TensorFn& f, const std::vector<Tensor>& points,
                                   double eps, double rel_tol);

FiniteDiffReport finite_diff_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                                   const Tensor& point, double eps, double rel_tol);

}  // namespace fairvit
