#pragma once

#include "udlflow/flows/layers.hpp"
#include "udlflow/radial/radial_base.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace udlflow::flows {

// An affine bijection: a dense LU transform or a one-star convolution.
class AffineBijection {
public:
    AffineBijection() = default;
    AffineBijection(LUAffineLayer lu) : impl_(std::move(lu)) {}
    AffineBijection(OneStarConv conv) : impl_(std::move(conv)) {}

    template <class Ctx>
    typename Ctx::T forward(Ctx& ctx, const typename Ctx::T& x) const
    {
        return std::visit([&](const auto& a) { return a.forward(ctx, x); }, impl_);
    }
    template <class Ctx>
    typename Ctx::T inverse(Ctx& ctx, const typename Ctx::T& y) const
    {
        return std::visit([&](const auto& a) { return a.inverse(ctx, y); }, impl_);
    }
    template <class Ctx>
    typename Ctx::T log_det(Ctx& ctx) const
    {
        return std::visit([&](const auto& a) { return a.log_det(ctx); }, impl_);
    }
    template <class Ctx>
    typename Ctx::T penalty(Ctx& ctx) const
    {
        return std::visit([&](const auto& a) { return a.penalty(ctx); }, impl_);
    }

    double log_det() const;
    std::size_t dim() const;
    AffineMap dense() const;
    AffineMap dense_inverse() const;
    bool is_one_star() const { return std::holds_alternative<OneStarConv>(impl_); }
    const LUAffineLayer& lu() const; // the channel transform for one-star convolutions
    LUAffineLayer& lu();
    const OneStarConv& one_star() const { return std::get<OneStarConv>(impl_); }
    std::vector<ad::Parameter*> parameters();

private:
    std::variant<LUAffineLayer, OneStarConv> impl_;
};

// A^-1 o C o A. Without an affine the block is the bare coupling layer.
struct AdjointBlock {
    std::optional<AffineBijection> affine;
    CouplingLayer coupling;
};

struct ImageShape {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 1;

    std::size_t size() const { return height * width * channels; }
    bool operator==(const ImageShape&) const = default;
};

enum class ConditionerKind { dense, conv };
enum class AffineKind { none, lu, one_star };
enum class FinalAffineKind { none, lu, diagonal };

struct FlowConfig {
    std::size_t dim = 2;
    std::optional<ImageShape> image; // required for conv conditioners and one-star convolutions
    std::size_t blocks = 5;
    ConditionerKind conditioner = ConditionerKind::dense;
    std::size_t hidden_layers = 3;
    std::size_t hidden_width = 0;    // dense; 0 means max(8, 2 * dim)
    std::size_t hidden_channels = 0; // conv; 0 means max(8, 2 * channels)
    std::size_t kernel = 3;
    AffineKind block_affine = AffineKind::lu;
    FinalAffineKind final_affine = FinalAffineKind::lu;
    std::uint64_t seed = 0;
};

// Alternating masks: half splits for flat vectors, checkerboards on images.
Tensor half_mask(std::size_t dim, bool flip);
Tensor checkerboard_mask(const ImageShape& shape, bool flip);

// F = A_{n+1} o B_n o ... o B_1 mapping latents z to data x.
class FlowModel {
public:
    FlowModel(std::vector<AdjointBlock> blocks, std::optional<AffineBijection> final_affine, radial::RadialBase base);

    static FlowModel build(const FlowConfig& config, radial::RadialBase base);

    std::size_t dim() const { return base_.dim(); }
    const std::vector<AdjointBlock>& blocks() const { return blocks_; }
    std::vector<AdjointBlock>& blocks() { return blocks_; }
    const std::optional<AffineBijection>& final_affine() const { return final_; }
    std::optional<AffineBijection>& final_affine() { return final_; }
    const radial::RadialBase& base() const { return base_; }
    radial::RadialBase& base() { return base_; }
    bool uniformly_scaling() const { return uniformly_scaling_; }
    void set_uniformly_scaling(bool v) { uniformly_scaling_ = v; }
    const std::optional<ImageShape>& image() const { return image_; }
    void set_image(std::optional<ImageShape> s) { image_ = s; }

    template <class Ctx>
    typename Ctx::T forward(Ctx& ctx, const typename Ctx::T& z) const
    {
        typename Ctx::T h = z;
        for (const auto& b : blocks_) {
            if (b.affine) {
                h = b.affine->forward(ctx, h);
                h = b.coupling.forward(ctx, h);
                h = b.affine->inverse(ctx, h);
            } else {
                h = b.coupling.forward(ctx, h);
            }
        }
        if (final_) h = final_->forward(ctx, h);
        return h;
    }

    template <class Ctx>
    typename Ctx::T inverse(Ctx& ctx, const typename Ctx::T& x) const
    {
        typename Ctx::T h = x;
        if (final_) h = final_->inverse(ctx, h);
        for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
            if (it->affine) {
                h = it->affine->forward(ctx, h);
                h = it->coupling.inverse(ctx, h);
                h = it->affine->inverse(ctx, h);
            } else {
                h = it->coupling.inverse(ctx, h);
            }
        }
        return h;
    }

    // Row batches (n x d).
    Tensor forward(const Tensor& z) const;
    Tensor inverse(const Tensor& x) const;
    // log p(x) per row, shape {n}.
    Tensor log_prob(const Tensor& x) const;
    // Traced per-row log densities.
    ad::Var log_prob(TraceCtx& ctx, const ad::Var& x) const;
    // Traced sum of LU regularization terms over every affine layer.
    ad::Var lu_penalty(TraceCtx& ctx) const;

    // log|det dF/dz|; ContractError unless uniformly scaling.
    double log_det_constant() const;

    // | F^-1(x) |_k < udl_radius(q).
    bool udl_contains(std::span<const double> x, double q) const;

    Tensor sample(std::size_t n, std::uint64_t seed) const;

    // ReLU sign patterns of the forward (from z) or inverse (from x) pass at a
    // single point; the map is affine wherever the pattern is constant.
    std::vector<std::uint8_t> forward_activation_pattern(std::span<const double> z) const;
    std::vector<std::uint8_t> inverse_activation_pattern(std::span<const double> x) const;

    // Every learnable parameter, base distribution last when learnable.
    std::vector<ad::Parameter*> parameters();
    std::size_t parameter_count() const;

private:
    std::vector<AdjointBlock> blocks_;
    std::optional<AffineBijection> final_;
    radial::RadialBase base_;
    bool uniformly_scaling_ = true;
    std::optional<ImageShape> image_;
};

} // namespace udlflow::flows
