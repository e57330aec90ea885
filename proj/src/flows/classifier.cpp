#include "udlflow/flows/classifier.hpp"

#include "udlflow/error.hpp"

#include <cmath>

namespace udlflow::flows {

ReluNetwork::ReluNetwork(const std::vector<std::size_t>& sizes, std::uint64_t seed)
{
    if (sizes.size() < 2) throw ContractError("classifier: need at least input and output sizes");
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
        std::normal_distribution<double> n(0.0, std::sqrt(2.0 / static_cast<double>(sizes[i])));
        Tensor w({sizes[i + 1], sizes[i]});
        for (double& v : w.values()) v = n(rng);
        params_.emplace_back("layer" + std::to_string(i) + ".w", std::move(w));
        params_.emplace_back("layer" + std::to_string(i) + ".b", Tensor({sizes[i + 1]}));
    }
}

ReluNetwork::ReluNetwork(std::vector<AffineMap> layers)
{
    if (layers.empty()) throw ContractError("classifier: no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        if (l.weight.rank() != 2 || l.bias.size() != l.weight.rows())
            throw DimensionError("classifier: layer " + std::to_string(i) + " has inconsistent shapes");
        if (i > 0 && l.weight.cols() != layers[i - 1].weight.rows())
            throw DimensionError("classifier: layer " + std::to_string(i) + " input width mismatch");
        params_.emplace_back("layer" + std::to_string(i) + ".w", l.weight);
        params_.emplace_back("layer" + std::to_string(i) + ".b", l.bias);
    }
}

Tensor ReluNetwork::logits(const Tensor& x) const
{
    if (x.cols() != in_dim()) throw DimensionError("classifier: expected " + std::to_string(in_dim()) + " inputs");
    EvalCtx ctx;
    return apply(ctx, x);
}

std::vector<double> ReluNetwork::logits(std::span<const double> x) const
{
    const Tensor y = logits(Tensor({1, x.size()}, std::vector<double>(x.begin(), x.end())));
    return y.storage();
}

std::size_t ReluNetwork::predict(std::span<const double> x) const { return argmax(logits(x)); }

std::vector<AffineMap> ReluNetwork::layers() const
{
    std::vector<AffineMap> out;
    for (std::size_t i = 0; i < depth(); ++i) out.push_back({params_[2 * i].value, params_[2 * i + 1].value});
    return out;
}

std::vector<ad::Parameter*> ReluNetwork::parameters()
{
    std::vector<ad::Parameter*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
}

std::size_t argmax(std::span<const double> v)
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

} // namespace udlflow::flows
