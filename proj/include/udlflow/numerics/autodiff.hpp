#pragma once

#include "udlflow/numerics/tensor.hpp"

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

namespace udlflow::ad {

using num::Shape;
using num::Tensor;

// A learnable tensor. `grad` is the accumulator the optimizer reads.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    void zero_grad() { grad = Tensor(value.shape()); }
};

class Tape;

// Handle to a node on a tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    Tape& tape() const { return *tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

// Append-only define-by-run tape. Nodes are stored in creation order, so a
// node's parents always precede it and the reverse sweep is a plain backwards
// loop. One tape per thread; tapes never share nodes.
class Tape {
public:
    // `parent_grads[i]` is null when parent i does not need a gradient.
    using Backward = std::function<void(const Tensor& out_grad, const std::vector<Tensor*>& parent_grads)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    // Binding the same parameter twice yields the same node.
    Var param(const Parameter& p);
    Var record(Tensor value, std::vector<Var> parents, Backward backward);

    // Reverse sweep from a scalar node. Throws ContractError for non-scalars.
    void backward(const Var& loss);

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    // Gradient of the last backward() target w.r.t. `p`; zeros if `p` was never
    // bound or not reached.
    Tensor gradient(const Parameter& p) const;
    // Adds the gradients into every bound Parameter's accumulator.
    void accumulate(const std::vector<Parameter*>& params) const;

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        std::vector<std::size_t> parents;
        Backward backward;
        bool requires_grad = false;
        Tensor grad;
        bool has_grad = false;
    };

    std::vector<Node> nodes_;
    std::unordered_map<const Parameter*, std::size_t> bound_;
};

// Traced counterparts of the num:: operations, same semantics and names so
// that layer code can be written once against either tensors or tape vars.
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& x, const Var& s);
Var add_row(const Var& x, const Var& row);
Var mul_row(const Var& x, const Tensor& row);
Var mask_mul(const Var& x, const Tensor& mask);
Var relu(const Var& x);
Var exp(const Var& x);
Var clamp(const Var& x, double lo, double hi);
Var square(const Var& x);
Var sum(const Var& x);
Var mean(const Var& x);
Var row_sum(const Var& x);
Var reshape(const Var& x, Shape shape);
Var diag_embed(const Var& v);
Var tri_solve(const Var& m, const Var& y, bool lower, bool unit_diagonal);
Var conv2d(const Var& x, const Var& kernel, const Var& bias, const num::ConvGeometry& g);

} // namespace udlflow::ad
