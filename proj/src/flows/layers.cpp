#include "udlflow/flows/layers.hpp"

#include "udlflow/error.hpp"

#include <cmath>

namespace udlflow::flows {

namespace {

Tensor he_normal(std::size_t out, std::size_t in, std::size_t fan_in, std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    Tensor w({out, in});
    for (double& v : w.values()) v = n(rng);
    return w;
}

Tensor triangle_mask(std::size_t d, bool lower)
{
    Tensor m({d, d});
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            if (lower ? j < i : j > i) m(i, j) = 1.0;
    return m;
}

Tensor block_diagonal(const Tensor& w, std::size_t copies)
{
    const std::size_t c = w.rows();
    Tensor out({c * copies, c * copies});
    for (std::size_t p = 0; p < copies; ++p)
        for (std::size_t i = 0; i < c; ++i)
            for (std::size_t j = 0; j < c; ++j) out(p * c + i, p * c + j) = w(i, j);
    return out;
}

Tensor tiled(const Tensor& b, std::size_t copies)
{
    Tensor out({b.size() * copies});
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = b[i % b.size()];
    return out;
}

} // namespace

Tensor AffineMap::apply(const Tensor& x) const { return num::add_row(num::matmul_nt(x, weight), bias); }

DenseConditioner::DenseConditioner(std::size_t dim, std::size_t hidden, std::size_t hidden_layers,
                                   std::mt19937_64& rng, const std::string& prefix)
{
    std::vector<std::size_t> sizes{dim};
    for (std::size_t i = 0; i < hidden_layers; ++i) sizes.push_back(hidden);
    sizes.push_back(dim);
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
        const bool last = i + 2 == sizes.size();
        Tensor w = last ? Tensor({sizes[i + 1], sizes[i]}) : he_normal(sizes[i + 1], sizes[i], sizes[i], rng);
        params_.emplace_back(prefix + ".w" + std::to_string(i), std::move(w));
        params_.emplace_back(prefix + ".b" + std::to_string(i), Tensor({sizes[i + 1]}));
    }
}

DenseConditioner::DenseConditioner(std::vector<ad::Parameter> params) : params_(std::move(params))
{
    if (params_.empty() || params_.size() % 2) throw ContractError("dense conditioner: expected weight/bias pairs");
    std::size_t in = params_[0].value.cols();
    for (std::size_t i = 0; i < depth(); ++i) {
        const Tensor& w = params_[2 * i].value;
        const Tensor& b = params_[2 * i + 1].value;
        if (w.rank() != 2 || w.cols() != in || b.size() != w.rows())
            throw DimensionError("dense conditioner: layer " + std::to_string(i) + " has inconsistent shapes");
        in = w.rows();
    }
    if (in != params_[0].value.cols()) throw DimensionError("dense conditioner: output width differs from input");
}

std::vector<AffineMap> DenseConditioner::lowered() const
{
    std::vector<AffineMap> out;
    for (std::size_t i = 0; i < depth(); ++i) out.push_back({params_[2 * i].value, params_[2 * i + 1].value});
    return out;
}

ConvConditioner::ConvConditioner(std::size_t height, std::size_t width, std::size_t channels,
                                 std::size_t hidden_channels, std::size_t kernel, std::size_t layers,
                                 std::mt19937_64& rng, const std::string& prefix)
    : height_(height), width_(width), kernel_(kernel)
{
    if (layers == 0) throw ContractError("conv conditioner: need at least one layer");
    if (kernel % 2 == 0) throw ContractError("conv conditioner: kernel size must be odd");
    channels_.push_back(channels);
    for (std::size_t i = 0; i + 1 < layers; ++i) channels_.push_back(hidden_channels);
    channels_.push_back(channels);
    for (std::size_t i = 0; i < depth(); ++i) {
        const std::size_t ci = channels_[i], co = channels_[i + 1];
        const std::size_t count = kernel * kernel * ci * co;
        Tensor k = i + 1 == depth() ? Tensor({count}) : he_normal(1, count, kernel * kernel * ci, rng).reshaped({count});
        params_.emplace_back(prefix + ".k" + std::to_string(i), std::move(k));
        params_.emplace_back(prefix + ".b" + std::to_string(i), Tensor({co}));
    }
}

ConvConditioner::ConvConditioner(std::size_t height, std::size_t width, std::vector<std::size_t> channels,
                                 std::size_t kernel, std::vector<ad::Parameter> params)
    : height_(height), width_(width), kernel_(kernel), channels_(std::move(channels)), params_(std::move(params))
{
    if (channels_.size() < 2 || params_.size() != 2 * depth())
        throw ContractError("conv conditioner: channel list and parameters disagree");
    if (channels_.front() != channels_.back()) throw DimensionError("conv conditioner: output channels differ from input");
    for (std::size_t i = 0; i < depth(); ++i) {
        if (params_[2 * i].value.size() != kernel_ * kernel_ * channels_[i] * channels_[i + 1] ||
            params_[2 * i + 1].value.size() != channels_[i + 1])
            throw DimensionError("conv conditioner: layer " + std::to_string(i) + " has inconsistent shapes");
    }
}

num::ConvGeometry ConvConditioner::geometry(std::size_t layer) const
{
    return {height_, width_, channels_[layer], channels_[layer + 1], kernel_};
}

std::vector<AffineMap> ConvConditioner::lowered() const
{
    std::vector<AffineMap> out;
    for (std::size_t i = 0; i < depth(); ++i)
        out.push_back({num::conv2d_as_matrix(params_[2 * i].value, geometry(i)),
                       tiled(params_[2 * i + 1].value, height_ * width_)});
    return out;
}

CouplingLayer::CouplingLayer(Tensor mask, Conditioner conditioner) : mask_(std::move(mask)), cond_(std::move(conditioner))
{
    complement_ = Tensor(mask_.shape());
    for (std::size_t i = 0; i < mask_.size(); ++i) {
        if (mask_[i] != 0.0 && mask_[i] != 1.0) throw ContractError("coupling mask entries must be 0 or 1");
        complement_[i] = 1.0 - mask_[i];
    }
    const std::size_t in = std::visit(
        [](const auto& c) -> std::size_t {
            if constexpr (std::is_same_v<std::decay_t<decltype(c)>, DenseConditioner>) return c.in_dim();
            else return c.height() * c.width() * c.channels().front();
        },
        cond_);
    if (in != mask_.size()) throw DimensionError("coupling: conditioner width differs from mask length");
}

std::vector<ad::Parameter*> CouplingLayer::parameters()
{
    std::vector<ad::Parameter*> out;
    std::visit([&](auto& c) {
        for (auto& p : c.parameters()) out.push_back(&p);
    }, cond_);
    return out;
}

LUAffineLayer::LUAffineLayer(std::size_t dim, bool diagonal_only, const std::string& prefix)
    : lower_(prefix + ".lower", Tensor({dim, dim})),
      upper_(prefix + ".upper", Tensor({dim, dim})),
      log_diag_(prefix + ".log_diag", Tensor({dim})),
      bias_(prefix + ".bias", Tensor({dim})),
      sign_(Tensor({dim}, 1.0)),
      diagonal_only_(diagonal_only),
      lower_mask_(triangle_mask(dim, true)),
      upper_mask_(triangle_mask(dim, false))
{
    if (diagonal_only_) {
        lower_ = ad::Parameter();
        upper_ = ad::Parameter();
    }
}

LUAffineLayer::LUAffineLayer(ad::Parameter lower, ad::Parameter upper, ad::Parameter log_diag, Tensor sign,
                             ad::Parameter bias, bool diagonal_only)
    : lower_(std::move(lower)), upper_(std::move(upper)), log_diag_(std::move(log_diag)), bias_(std::move(bias)),
      sign_(std::move(sign)), diagonal_only_(diagonal_only)
{
    const std::size_t d = bias_.value.size();
    if (log_diag_.value.size() != d || sign_.size() != d)
        throw DimensionError("lu affine: diagonal and bias lengths differ");
    for (std::size_t i = 0; i < d; ++i) {
        if (sign_[i] != 1.0 && sign_[i] != -1.0)
            throw ContractError("lu affine: U diagonal entry " + std::to_string(i) + " must be nonzero (sign +-1)");
        if (!std::isfinite(log_diag_.value[i]))
            throw ContractError("lu affine: U diagonal entry " + std::to_string(i) + " is not finite");
    }
    if (!diagonal_only_) {
        if (lower_.value.shape() != num::Shape{d, d} || upper_.value.shape() != num::Shape{d, d})
            throw DimensionError("lu affine: triangular factors must be " + std::to_string(d) + "x" + std::to_string(d));
    }
    lower_mask_ = triangle_mask(d, true);
    upper_mask_ = triangle_mask(d, false);
}

const Tensor& LUAffineLayer::strict_lower_mask() const { return lower_mask_; }
const Tensor& LUAffineLayer::strict_upper_mask() const { return upper_mask_; }

double LUAffineLayer::log_det() const
{
    double s = 0.0;
    for (double v : log_diag_.value.values()) s += std::clamp(v, -kLogDiagBound, kLogDiagBound);
    return s;
}

Tensor LUAffineLayer::lower() const
{
    EvalCtx ctx;
    if (diagonal_only_) return Tensor::identity(dim());
    return lower_matrix(ctx);
}

Tensor LUAffineLayer::upper() const
{
    EvalCtx ctx;
    return upper_matrix(ctx);
}

AffineMap LUAffineLayer::dense() const { return {num::matmul(lower(), upper()), bias_.value}; }

AffineMap LUAffineLayer::dense_inverse() const
{
    // Rows of inverse(I) without the bias are the columns of W^-1.
    EvalCtx ctx;
    Tensor r = Tensor::identity(dim());
    if (!diagonal_only_) r = num::tri_solve(lower_matrix(ctx), r, true, true);
    Tensor winv = num::transpose(num::tri_solve(upper_matrix(ctx), r, false, false));
    Tensor b = num::scale(num::matmul_nt(Tensor(num::Shape{1, dim()}, bias_.value.storage()), winv).reshaped({dim()}), -1.0);
    return {std::move(winv), std::move(b)};
}

std::vector<ad::Parameter*> LUAffineLayer::parameters()
{
    if (diagonal_only_) return {&log_diag_, &bias_};
    return {&lower_, &upper_, &log_diag_, &bias_};
}

OneStarConv::OneStarConv(std::size_t positions, LUAffineLayer channel_transform)
    : positions_(positions), lu_(std::move(channel_transform))
{
    if (positions_ == 0) throw ContractError("one-star convolution: need at least one position");
}

AffineMap OneStarConv::dense() const
{
    const AffineMap m = lu_.dense();
    return {block_diagonal(m.weight, positions_), tiled(m.bias, positions_)};
}

AffineMap OneStarConv::dense_inverse() const
{
    const AffineMap m = lu_.dense_inverse();
    return {block_diagonal(m.weight, positions_), tiled(m.bias, positions_)};
}

} // namespace udlflow::flows
