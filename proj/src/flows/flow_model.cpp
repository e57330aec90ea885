#include "udlflow/flows/flow_model.hpp"

#include "udlflow/error.hpp"

namespace udlflow::flows {

double AffineBijection::log_det() const
{
    return std::visit([](const auto& a) { return a.log_det(); }, impl_);
}

std::size_t AffineBijection::dim() const
{
    return std::visit([](const auto& a) { return a.dim(); }, impl_);
}

AffineMap AffineBijection::dense() const
{
    return std::visit([](const auto& a) { return a.dense(); }, impl_);
}

AffineMap AffineBijection::dense_inverse() const
{
    return std::visit([](const auto& a) { return a.dense_inverse(); }, impl_);
}

const LUAffineLayer& AffineBijection::lu() const
{
    if (auto* c = std::get_if<OneStarConv>(&impl_)) return c->channel_transform();
    return std::get<LUAffineLayer>(impl_);
}

LUAffineLayer& AffineBijection::lu()
{
    if (auto* c = std::get_if<OneStarConv>(&impl_)) return c->channel_transform();
    return std::get<LUAffineLayer>(impl_);
}

std::vector<ad::Parameter*> AffineBijection::parameters() { return lu().parameters(); }

Tensor half_mask(std::size_t dim, bool flip)
{
    Tensor m({dim});
    const std::size_t first = (dim + 1) / 2;
    for (std::size_t i = 0; i < dim; ++i) m[i] = ((i < first) != flip) ? 1.0 : 0.0;
    return m;
}

Tensor checkerboard_mask(const ImageShape& s, bool flip)
{
    Tensor m({s.size()});
    for (std::size_t y = 0; y < s.height; ++y)
        for (std::size_t x = 0; x < s.width; ++x)
            for (std::size_t c = 0; c < s.channels; ++c)
                m[(y * s.width + x) * s.channels + c] = (((x + y) % 2 == 0) != flip) ? 1.0 : 0.0;
    return m;
}

FlowModel::FlowModel(std::vector<AdjointBlock> blocks, std::optional<AffineBijection> final_affine,
                     radial::RadialBase base)
    : blocks_(std::move(blocks)), final_(std::move(final_affine)), base_(std::move(base))
{
    const std::size_t d = base_.dim();
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        if (blocks_[i].coupling.dim() != d || (blocks_[i].affine && blocks_[i].affine->dim() != d))
            throw DimensionError("flow: block " + std::to_string(i) + " does not act on dimension " + std::to_string(d));
    }
    if (final_ && final_->dim() != d) throw DimensionError("flow: final affine has the wrong dimension");
}

FlowModel FlowModel::build(const FlowConfig& cfg, radial::RadialBase base)
{
    const std::size_t d = cfg.dim;
    if (base.dim() != d) throw DimensionError("flow: base dimension differs from the configured dimension");
    if (cfg.image && cfg.image->size() != d) throw DimensionError("flow: image shape does not match the dimension");
    const bool needs_image = cfg.conditioner == ConditionerKind::conv || cfg.block_affine == AffineKind::one_star;
    if (needs_image && !cfg.image) throw ContractError("flow: conv conditioners and one-star convolutions need an image shape");

    std::mt19937_64 rng(cfg.seed);
    std::vector<AdjointBlock> blocks;
    for (std::size_t i = 0; i < cfg.blocks; ++i) {
        const std::string pre = "block" + std::to_string(i);
        const bool flip = i % 2 == 1;
        Tensor mask = cfg.image ? checkerboard_mask(*cfg.image, flip) : half_mask(d, flip);
        Conditioner cond;
        if (cfg.conditioner == ConditionerKind::dense) {
            const std::size_t width = cfg.hidden_width ? cfg.hidden_width : std::max<std::size_t>(8, 2 * d);
            cond = DenseConditioner(d, width, cfg.hidden_layers, rng, pre + ".cond");
        } else {
            const ImageShape& s = *cfg.image;
            const std::size_t hc = cfg.hidden_channels ? cfg.hidden_channels : std::max<std::size_t>(8, 2 * s.channels);
            cond = ConvConditioner(s.height, s.width, s.channels, hc, cfg.kernel, cfg.hidden_layers, rng, pre + ".cond");
        }
        AdjointBlock block{std::nullopt, CouplingLayer(std::move(mask), std::move(cond))};
        if (cfg.block_affine == AffineKind::lu) block.affine = AffineBijection(LUAffineLayer(d, false, pre + ".affine"));
        else if (cfg.block_affine == AffineKind::one_star)
            block.affine = AffineBijection(OneStarConv(cfg.image->height * cfg.image->width,
                                                       LUAffineLayer(cfg.image->channels, false, pre + ".affine")));
        blocks.push_back(std::move(block));
    }
    std::optional<AffineBijection> fin;
    if (cfg.final_affine == FinalAffineKind::lu) fin = AffineBijection(LUAffineLayer(d, false, "final"));
    else if (cfg.final_affine == FinalAffineKind::diagonal) fin = AffineBijection(LUAffineLayer(d, true, "final"));
    FlowModel model(std::move(blocks), std::move(fin), std::move(base));
    model.image_ = cfg.image;
    return model;
}

Tensor FlowModel::forward(const Tensor& z) const
{
    if (z.cols() != dim()) throw DimensionError("flow forward: expected " + std::to_string(dim()) + " columns");
    EvalCtx ctx;
    return forward(ctx, z);
}

Tensor FlowModel::inverse(const Tensor& x) const
{
    if (x.cols() != dim()) throw DimensionError("flow inverse: expected " + std::to_string(dim()) + " columns");
    EvalCtx ctx;
    return inverse(ctx, x);
}

Tensor FlowModel::log_prob(const Tensor& x) const
{
    Tensor lp = base_.log_density(inverse(x));
    const double ld = final_ ? final_->log_det() : 0.0;
    for (double& v : lp.values()) v -= ld;
    return lp;
}

ad::Var FlowModel::log_prob(TraceCtx& ctx, const ad::Var& x) const
{
    const auto& nd = base_.norm_dist();
    const ad::Var params = nd.learnable() ? ctx.p(nd.parameter()) : ctx.c(nd.parameter().value);
    ad::Var lp = base_.log_density(inverse(ctx, x), params);
    if (final_) lp = ad::add_scalar(lp, ad::scale(final_->log_det(ctx), -1.0));
    return lp;
}

ad::Var FlowModel::lu_penalty(TraceCtx& ctx) const
{
    ad::Var s = ctx.c(Tensor::scalar(0.0));
    for (const auto& b : blocks_)
        if (b.affine) s = ad::add(s, b.affine->penalty(ctx));
    if (final_) s = ad::add(s, final_->penalty(ctx));
    return s;
}

double FlowModel::log_det_constant() const
{
    if (!uniformly_scaling_) throw ContractError("log_det_constant: flow is not flagged uniformly scaling");
    return final_ ? final_->log_det() : 0.0;
}

bool FlowModel::udl_contains(std::span<const double> x, double q) const
{
    if (x.size() != dim()) throw DimensionError("udl_contains: point has wrong dimension");
    const Tensor z = inverse(Tensor({1, dim()}, std::vector<double>(x.begin(), x.end())));
    return radial::norm(z.row(0), base_.order()) < base_.udl_radius(q);
}

Tensor FlowModel::sample(std::size_t n, std::uint64_t seed) const { return forward(base_.sample(n, seed)); }

std::vector<std::uint8_t> FlowModel::forward_activation_pattern(std::span<const double> z) const
{
    std::vector<std::uint8_t> pattern;
    EvalCtx ctx;
    ctx.pattern = &pattern;
    forward(ctx, Tensor({1, dim()}, std::vector<double>(z.begin(), z.end())));
    return pattern;
}

std::vector<std::uint8_t> FlowModel::inverse_activation_pattern(std::span<const double> x) const
{
    std::vector<std::uint8_t> pattern;
    EvalCtx ctx;
    ctx.pattern = &pattern;
    inverse(ctx, Tensor({1, dim()}, std::vector<double>(x.begin(), x.end())));
    return pattern;
}

std::vector<ad::Parameter*> FlowModel::parameters()
{
    std::vector<ad::Parameter*> out;
    for (auto& b : blocks_) {
        if (b.affine)
            for (auto* p : b.affine->parameters()) out.push_back(p);
        for (auto* p : b.coupling.parameters()) out.push_back(p);
    }
    if (final_)
        for (auto* p : final_->parameters()) out.push_back(p);
    if (base_.norm_dist().learnable()) out.push_back(&base_.norm_dist().parameter());
    return out;
}

std::size_t FlowModel::parameter_count() const
{
    std::size_t n = 0;
    for (auto* p : const_cast<FlowModel*>(this)->parameters()) n += p->value.size();
    return n;
}

} // namespace udlflow::flows
