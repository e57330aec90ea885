#pragma once

#include "udlflow/numerics/autodiff.hpp"

#include <cstdint>
#include <vector>

namespace udlflow::flows {

// Layer code is written once as templates over one of these contexts.
// EvalCtx runs on plain tensors; TraceCtx records onto a tape.
struct EvalCtx {
    using T = num::Tensor;

    // When set, every ReLU appends the sign pattern of its pre-activations.
    std::vector<std::uint8_t>* pattern = nullptr;

    const num::Tensor& p(const ad::Parameter& q) const { return q.value; }
    num::Tensor c(num::Tensor t) const { return t; }
    num::Tensor relu(const num::Tensor& x)
    {
        if (pattern)
            for (double v : x.values()) pattern->push_back(v > 0.0 ? 1 : 0);
        return num::relu(x);
    }
};

struct TraceCtx {
    using T = ad::Var;

    ad::Tape& tape;

    ad::Var p(const ad::Parameter& q) const { return tape.param(q); }
    ad::Var c(num::Tensor t) const { return tape.constant(std::move(t)); }
    ad::Var relu(const ad::Var& x) const { return ad::relu(x); }
};

inline std::size_t rows_of(const num::Tensor& t) { return t.rows(); }
inline std::size_t rows_of(const ad::Var& v) { return v.value().rows(); }

} // namespace udlflow::flows
