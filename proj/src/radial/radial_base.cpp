#include "udlflow/radial/radial_base.hpp"

#include "udlflow/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace udlflow::radial {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// log of the constant c in V(r) = c r^d.
double log_ball_constant(std::size_t d, NormOrder k)
{
    const double dd = static_cast<double>(d);
    switch (k) {
    case NormOrder::l1: return dd * std::log(2.0) - std::lgamma(dd + 1.0);
    case NormOrder::l2: return 0.5 * dd * std::log(std::numbers::pi) - std::lgamma(0.5 * dd + 1.0);
    case NormOrder::linf: return dd * std::log(2.0);
    }
    return 0.0;
}

void norm_gradient(std::span<const double> x, NormOrder k, double r, std::span<double> out)
{
    std::fill(out.begin(), out.end(), 0.0);
    auto sgn = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
    switch (k) {
    case NormOrder::l1:
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = sgn(x[i]);
        break;
    case NormOrder::l2:
        if (r > 0.0)
            for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / r;
        break;
    case NormOrder::linf: {
        std::size_t best = 0;
        for (std::size_t i = 1; i < x.size(); ++i)
            if (std::abs(x[i]) > std::abs(x[best])) best = i;
        if (!x.empty()) out[best] = sgn(x[best]);
        break;
    }
    }
}

} // namespace

std::string to_string(NormOrder k)
{
    switch (k) {
    case NormOrder::l1: return "1";
    case NormOrder::l2: return "2";
    case NormOrder::linf: return "inf";
    }
    return "?";
}

NormOrder parse_norm_order(const std::string& k)
{
    if (k == "1") return NormOrder::l1;
    if (k == "2") return NormOrder::l2;
    if (k == "inf" || k == "infinity") return NormOrder::linf;
    throw ContractError("unsupported norm order '" + k + "' (expected 1, 2 or inf)");
}

NormOrder norm_order_from_int(int k)
{
    if (k == 1) return NormOrder::l1;
    if (k == 2) return NormOrder::l2;
    if (k <= 0) return NormOrder::linf;
    throw ContractError("unsupported norm order " + std::to_string(k) + " (expected 1, 2 or inf)");
}

double norm(std::span<const double> x, NormOrder k)
{
    double s = 0.0;
    switch (k) {
    case NormOrder::l1:
        for (double v : x) s += std::abs(v);
        return s;
    case NormOrder::l2:
        for (double v : x) s += v * v;
        return std::sqrt(s);
    case NormOrder::linf:
        for (double v : x) s = std::max(s, std::abs(v));
        return s;
    }
    return s;
}

double ball_volume(std::size_t d, NormOrder k, double r)
{
    if (d == 0) throw ContractError("ball_volume: dimension must be positive");
    if (r < 0.0) throw ContractError("ball_volume: radius must be nonnegative");
    if (r == 0.0) return 0.0;
    return std::exp(log_ball_constant(d, k) + static_cast<double>(d) * std::log(r));
}

double log_ball_volume_derivative(std::size_t d, NormOrder k, double r)
{
    const double dd = static_cast<double>(d);
    const double lr = d == 1 ? 0.0 : (r > 0.0 ? (dd - 1.0) * std::log(r) : -kInf);
    return std::log(dd) + log_ball_constant(d, k) + lr;
}

RadialBase::RadialBase(std::size_t dim, NormOrder order, NormDistribution norm_dist)
    : dim_(dim), order_(order), rho_(std::move(norm_dist))
{
    if (dim_ == 0) throw ContractError("radial base: dimension must be positive");
}

double RadialBase::log_profile(double r) const
{
    const double dd = static_cast<double>(dim_);
    return rho_.log_pdf_over_power(r, dd - 1.0) - std::log(dd) - log_ball_constant(dim_, order_);
}

double RadialBase::profile(double r) const { return std::exp(log_profile(r)); }

double RadialBase::log_density(std::span<const double> x) const
{
    if (x.size() != dim_) throw DimensionError("radial base: point has wrong dimension");
    return log_profile(norm(x, order_));
}

num::Tensor RadialBase::log_density(const num::Tensor& z) const
{
    if (z.cols() != dim_) throw DimensionError("radial base: batch has wrong dimension");
    num::Tensor out({z.rows()});
    for (std::size_t i = 0; i < z.rows(); ++i) out[i] = log_density(z.row(i));
    return out;
}

ad::Var RadialBase::log_density(const ad::Var& z, const ad::Var& params) const
{
    const num::Tensor& zv = z.value();
    if (zv.cols() != dim_) throw DimensionError("radial base: batch has wrong dimension");
    const std::size_t n = zv.rows();
    const double dd = static_cast<double>(dim_);
    const double offset = std::log(dd) + log_ball_constant(dim_, order_);
    const std::size_t np = rho_.raw().size();

    num::Tensor out({n});
    num::Tensor dparams({n, np});
    num::Tensor dz({n, dim_});
    std::vector<double> gnorm(dim_);
    // The norm distribution is read from the tape binding so the traced value
    // matches whatever parameters the tape saw.
    NormDistribution rho = NormDistribution::from_raw(rho_.kind(), params.value().storage(), rho_.shape_cap(),
                                                      rho_.dof(), rho_.learnable());
    for (std::size_t i = 0; i < n; ++i) {
        const auto zi = zv.row(i);
        const double r = norm(zi, order_);
        double dr = 0.0;
        out[i] = rho.log_pdf_over_power(r, dd - 1.0, dparams.row(i), &dr) - offset;
        norm_gradient(zi, order_, r, gnorm);
        for (std::size_t j = 0; j < dim_; ++j) dz(i, j) = dr * gnorm[j];
    }
    return z.tape().record(std::move(out), {z, params},
                           [dparams, dz](const num::Tensor& g, const std::vector<num::Tensor*>& pg) {
                               const std::size_t rows = dz.rows();
                               if (pg[0])
                                   for (std::size_t i = 0; i < rows; ++i)
                                       for (std::size_t j = 0; j < dz.cols(); ++j) (*pg[0])(i, j) += g[i] * dz(i, j);
                               if (pg[1])
                                   for (std::size_t i = 0; i < rows; ++i)
                                       for (std::size_t j = 0; j < dparams.cols(); ++j)
                                           (*pg[1])[j] += g[i] * dparams(i, j);
                           });
}

bool RadialBase::radial_monotonic(std::string* why) const { return rho_.monotone_profile(dim_, why); }

double RadialBase::udl_radius(double q) const
{
    if (!(q >= 0.0 && q <= 1.0)) throw ContractError("udl_radius: q must lie in [0, 1]");
    std::string why;
    if (!radial_monotonic(&why))
        throw ContractError("udl_radius: base is not radial monotonic (" + why +
                            "); shell-shaped level sets are not supported");
    return rho_.quantile(q);
}

void sample_unit_sphere(std::span<double> out, NormOrder k, std::mt19937_64& rng)
{
    const std::size_t d = out.size();
    switch (k) {
    case NormOrder::l1: {
        // Dirichlet(1, ..., 1) magnitudes via normalized exponentials, random signs.
        std::exponential_distribution<double> e(1.0);
        std::bernoulli_distribution sign(0.5);
        double s = 0.0;
        for (double& v : out) {
            v = e(rng);
            s += v;
        }
        for (double& v : out) v = (sign(rng) ? 1.0 : -1.0) * v / s;
        break;
    }
    case NormOrder::l2: {
        std::normal_distribution<double> nrm(0.0, 1.0);
        double s = 0.0;
        do {
            s = 0.0;
            for (double& v : out) {
                v = nrm(rng);
                s += v * v;
            }
        } while (s == 0.0);
        s = std::sqrt(s);
        for (double& v : out) v /= s;
        break;
    }
    case NormOrder::linf: {
        // One face chosen uniformly (coordinate and sign), the rest uniform.
        std::uniform_int_distribution<std::size_t> face(0, 2 * d - 1);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        const std::size_t f = face(rng);
        for (double& v : out) v = u(rng);
        out[f / 2] = (f % 2 == 0) ? 1.0 : -1.0;
        break;
    }
    }
}

num::Tensor RadialBase::sample(std::size_t n, std::mt19937_64& rng) const
{
    num::Tensor out({n, dim_});
    for (std::size_t i = 0; i < n; ++i) {
        auto row = out.row(i);
        sample_unit_sphere(row, order_, rng);
        const double r = rho_.sample(rng);
        for (double& v : row) v *= r;
    }
    return out;
}

num::Tensor RadialBase::sample(std::size_t n, std::uint64_t seed) const
{
    std::mt19937_64 rng(seed);
    return sample(n, rng);
}

} // namespace udlflow::radial
