#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fairvit/errors.hpp"
#include "fairvit/rng.hpp"

namespace fairvit {

using Shape = std::vector<size_t>;

std::string shape_str(const Shape& s);
size_t shape_numel(const Shape& s);

// Dense row-major tensor of 64-bit floats. A tensor may carry a tape node id
// (node() >= 0) linking it to the computation record of one Tape; detached
// tensors (node() == -1) are plain values.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double v);
    static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);
    static Tensor normal(Shape shape, Rng& rng, double mean, double sd);

    const Shape& shape() const { return shape_; }
    size_t rank() const { return shape_.size(); }
    size_t numel() const { return data_.size(); }
    size_t dim(size_t i) const { return shape_.at(i); }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }
    double operator[](size_t i) const { return data_[i]; }
    double& operator[](size_t i) { return data_[i]; }

    double item() const;  // requires numel() == 1

    int node() const { return node_; }
    bool requires_grad() const { return requires_grad_; }
    bool on_tape() const { return node_ >= 0; }

    // Returns a copy with no tape attachment.
    Tensor detached() const;

    bool all_finite() const;
    bool same_values(const Tensor& other) const;  // bitwise shape+data equality

private:
    friend class Tape;
    Shape shape_;
    std::vector<double> data_;
    int node_ = -1;
    bool requires_grad_ = false;
};

}  // namespace fairvit
