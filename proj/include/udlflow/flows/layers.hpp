#pragma once

#include "udlflow/flows/context.hpp"
#include "udlflow/numerics/autodiff.hpp"

#include <random>
#include <string>
#include <variant>
#include <vector>

namespace udlflow::flows {

using num::Tensor;

// y = x W^T + b for row batches; weight is (out x in).
struct AffineMap {
    Tensor weight;
    Tensor bias;

    std::size_t in_dim() const { return weight.cols(); }
    std::size_t out_dim() const { return weight.rows(); }
    Tensor apply(const Tensor& x) const;
};

// Fully connected ReLU network, identity on the last layer.
// Parameters are stored as [W0, b0, W1, b1, ...] with W_i of shape (out x in).
class DenseConditioner {
public:
    DenseConditioner() = default;
    // `hidden_layers` hidden layers of width `hidden`; the last layer starts at zero.
    DenseConditioner(std::size_t dim, std::size_t hidden, std::size_t hidden_layers, std::mt19937_64& rng,
                     const std::string& prefix);
    explicit DenseConditioner(std::vector<ad::Parameter> params);

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

    std::size_t depth() const { return params_.size() / 2; }
    std::size_t in_dim() const { return params_.front().value.cols(); }
    std::size_t out_dim() const { return params_.back().value.size(); }
    // Linear maps with a ReLU between consecutive entries.
    std::vector<AffineMap> lowered() const;

    std::vector<ad::Parameter>& parameters() { return params_; }
    const std::vector<ad::Parameter>& parameters() const { return params_; }

private:
    std::vector<ad::Parameter> params_;
};

// Same-padding convolutional ReLU network on channel-last images.
// Parameters are [K0, b0, K1, b1, ...] with kernels laid out [ky][kx][cin][cout].
class ConvConditioner {
public:
    ConvConditioner() = default;
    ConvConditioner(std::size_t height, std::size_t width, std::size_t channels, std::size_t hidden_channels,
                    std::size_t kernel, std::size_t layers, std::mt19937_64& rng, const std::string& prefix);
    ConvConditioner(std::size_t height, std::size_t width, std::vector<std::size_t> channels, std::size_t kernel,
                    std::vector<ad::Parameter> params);

    template <class Ctx>
    typename Ctx::T apply(Ctx& ctx, const typename Ctx::T& x) const
    {
        typename Ctx::T h = x;
        const std::size_t n = depth();
        for (std::size_t i = 0; i < n; ++i) {
            h = conv2d(h, ctx.p(params_[2 * i]), ctx.p(params_[2 * i + 1]), geometry(i));
            if (i + 1 < n) h = ctx.relu(h);
        }
        return h;
    }

    std::size_t depth() const { return channels_.size() - 1; }
    num::ConvGeometry geometry(std::size_t layer) const;
    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    std::size_t kernel() const { return kernel_; }
    // channel counts at each layer boundary: input, hidden..., output
    const std::vector<std::size_t>& channels() const { return channels_; }
    std::vector<AffineMap> lowered() const;

    std::vector<ad::Parameter>& parameters() { return params_; }
    const std::vector<ad::Parameter>& parameters() const { return params_; }

private:
    std::size_t height_ = 0, width_ = 0, kernel_ = 3;
    std::vector<std::size_t> channels_;
    std::vector<ad::Parameter> params_;
};

using Conditioner = std::variant<DenseConditioner, ConvConditioner>;

// y = x + (1 - mask) * c(mask * x). Volume preserving.
class CouplingLayer {
public:
    CouplingLayer() = default;
    CouplingLayer(Tensor mask, Conditioner conditioner);

    template <class Ctx>
    typename Ctx::T forward(Ctx& ctx, const typename Ctx::T& x) const
    {
        return add(x, mul_row(shift(ctx, x), complement_));
    }

    template <class Ctx>
    typename Ctx::T inverse(Ctx& ctx, const typename Ctx::T& y) const
    {
        return sub(y, mul_row(shift(ctx, y), complement_));
    }

    std::size_t dim() const { return mask_.size(); }
    const Tensor& mask() const { return mask_; }
    const Conditioner& conditioner() const { return cond_; }
    Conditioner& conditioner() { return cond_; }
    std::vector<ad::Parameter*> parameters();

private:
    template <class Ctx>
    typename Ctx::T shift(Ctx& ctx, const typename Ctx::T& x) const
    {
        const auto masked = mul_row(x, mask_);
        return std::visit([&](const auto& c) { return c.apply(ctx, masked); }, cond_);
    }

    Tensor mask_;
    Tensor complement_;
    Conditioner cond_;
};

// T(x) = L U x + b with L unit lower triangular and
// U upper triangular, diag(U) = sign * exp(clamp(log_diag, -10, 10)).
// With `diagonal_only` the off-diagonal parts are absent (a rescaling S x + b).
class LUAffineLayer {
public:
    static constexpr double kLogDiagBound = 10.0;

    LUAffineLayer() = default;
    // Identity initialization.
    LUAffineLayer(std::size_t dim, bool diagonal_only, const std::string& prefix);
    LUAffineLayer(ad::Parameter lower, ad::Parameter upper, ad::Parameter log_diag, Tensor sign, ad::Parameter bias,
                  bool diagonal_only);

    template <class Ctx>
    typename Ctx::T forward(Ctx& ctx, const typename Ctx::T& x) const
    {
        const auto u = upper_matrix(ctx);
        if (diagonal_only_) return add_row(matmul_nt(x, u), ctx.p(bias_));
        return add_row(matmul_nt(x, matmul(lower_matrix(ctx), u)), ctx.p(bias_));
    }

    template <class Ctx>
    typename Ctx::T inverse(Ctx& ctx, const typename Ctx::T& y) const
    {
        auto r = add_row(y, scale(ctx.p(bias_), -1.0));
        if (!diagonal_only_) r = tri_solve(lower_matrix(ctx), r, true, true);
        return tri_solve(upper_matrix(ctx), r, false, false);
    }

    template <class Ctx>
    typename Ctx::T log_det(Ctx& ctx) const
    {
        return sum(clamp(ctx.p(log_diag_), -kLogDiagBound, kLogDiagBound));
    }

    // Squared strictly-lower, strictly-upper and log-diagonal parameters.
    template <class Ctx>
    typename Ctx::T penalty(Ctx& ctx) const
    {
        auto s = sum(square(ctx.p(log_diag_)));
        if (diagonal_only_) return s;
        s = add(s, sum(square(mask_mul(ctx.p(lower_), strict_lower_mask()))));
        return add(s, sum(square(mask_mul(ctx.p(upper_), strict_upper_mask()))));
    }

    double log_det() const;
    std::size_t dim() const { return bias_.value.size(); }
    bool diagonal_only() const { return diagonal_only_; }

    Tensor lower() const; // L (unit lower)
    Tensor upper() const; // U
    AffineMap dense() const;
    AffineMap dense_inverse() const;

    const ad::Parameter& lower_param() const { return lower_; }
    const ad::Parameter& upper_param() const { return upper_; }
    const ad::Parameter& log_diag_param() const { return log_diag_; }
    const ad::Parameter& bias_param() const { return bias_; }
    ad::Parameter& lower_param() { return lower_; }
    ad::Parameter& upper_param() { return upper_; }
    ad::Parameter& log_diag_param() { return log_diag_; }
    ad::Parameter& bias_param() { return bias_; }
    const Tensor& sign() const { return sign_; }
    std::vector<ad::Parameter*> parameters();

private:
    template <class Ctx>
    typename Ctx::T lower_matrix(Ctx& ctx) const
    {
        return add(mask_mul(ctx.p(lower_), strict_lower_mask()), ctx.c(Tensor::identity(dim())));
    }

    template <class Ctx>
    typename Ctx::T upper_matrix(Ctx& ctx) const
    {
        auto diag = mul_row(diag_embed(exp(clamp(ctx.p(log_diag_), -kLogDiagBound, kLogDiagBound))), sign_);
        if (diagonal_only_) return diag;
        return add(mask_mul(ctx.p(upper_), strict_upper_mask()), diag);
    }

    const Tensor& strict_lower_mask() const;
    const Tensor& strict_upper_mask() const;

    ad::Parameter lower_, upper_, log_diag_, bias_;
    Tensor sign_;
    bool diagonal_only_ = false;
    Tensor lower_mask_, upper_mask_;
};

// An LU transform over channels applied at every spatial position.
class OneStarConv {
public:
    OneStarConv() = default;
    OneStarConv(std::size_t positions, LUAffineLayer channel_transform);

    template <class Ctx>
    typename Ctx::T forward(Ctx& ctx, const typename Ctx::T& x) const
    {
        const std::size_t n = rows_of(x), c = lu_.dim();
        return reshape(lu_.forward(ctx, reshape(x, {n * positions_, c})), {n, positions_ * c});
    }

    template <class Ctx>
    typename Ctx::T inverse(Ctx& ctx, const typename Ctx::T& y) const
    {
        const std::size_t n = rows_of(y), c = lu_.dim();
        return reshape(lu_.inverse(ctx, reshape(y, {n * positions_, c})), {n, positions_ * c});
    }

    template <class Ctx>
    typename Ctx::T log_det(Ctx& ctx) const
    {
        return scale(lu_.log_det(ctx), static_cast<double>(positions_));
    }

    template <class Ctx>
    typename Ctx::T penalty(Ctx& ctx) const
    {
        return lu_.penalty(ctx);
    }

    double log_det() const { return static_cast<double>(positions_) * lu_.log_det(); }
    std::size_t positions() const { return positions_; }
    std::size_t dim() const { return positions_ * lu_.dim(); }
    const LUAffineLayer& channel_transform() const { return lu_; }
    LUAffineLayer& channel_transform() { return lu_; }
    AffineMap dense() const;
    AffineMap dense_inverse() const;

private:
    std::size_t positions_ = 1;
    LUAffineLayer lu_;
};

} // namespace udlflow::flows
