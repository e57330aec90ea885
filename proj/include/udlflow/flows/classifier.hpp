#pragma once

#include "udlflow/flows/context.hpp"
#include "udlflow/flows/layers.hpp"

#include <random>
#include <span>
#include <vector>

namespace udlflow::flows {

// ReLU classifier: dense layers with ReLU between them, raw logits out.
class ReluNetwork {
public:
    ReluNetwork() = default;
    // sizes = {in, hidden..., classes}; He-normal weights, zero biases.
    ReluNetwork(const std::vector<std::size_t>& sizes, std::uint64_t seed);
    explicit ReluNetwork(std::vector<AffineMap> layers);

    template <class Ctx>
    typename Ctx::T apply(Ctx& ctx, const typename Ctx::T& x) const
    {
        typename Ctx::T h = x;
        const std::size_t n = depth();
        for (std::size_t i = 0; i < n; ++i) {
            h = add_row(matmul_nt(h, ctx.p(params_[2 * i])), ctx.p(params_[2 * i + 1]));
            if (i + 1 < n) h = ctx.relu(h);
        }
        return h;
    }

    Tensor logits(const Tensor& x) const;
    std::vector<double> logits(std::span<const double> x) const;
    std::size_t predict(std::span<const double> x) const;

    std::size_t depth() const { return params_.size() / 2; }
    std::size_t in_dim() const { return params_.front().value.cols(); }
    std::size_t classes() const { return params_.back().value.size(); }
    std::vector<AffineMap> layers() const;
    std::vector<ad::Parameter*> parameters();

private:
    std::vector<ad::Parameter> params_;
};

// Index of the first maximum.
std::size_t argmax(std::span<const double> v);

} // namespace udlflow::flows
