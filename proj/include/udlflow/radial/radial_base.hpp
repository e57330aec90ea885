#pragma once

#include "udlflow/numerics/autodiff.hpp"
#include "udlflow/radial/norm_distribution.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string>

namespace udlflow::radial {

enum class NormOrder { l1, l2, linf };

std::string to_string(NormOrder k);
// Accepts "1", "2", "inf"; anything else is a ContractError.
NormOrder parse_norm_order(const std::string& k);
NormOrder norm_order_from_int(int k); // 0 or negative denotes infinity

double norm(std::span<const double> x, NormOrder k);

// Volume of the l_k ball of radius r in d dimensions.
double ball_volume(std::size_t d, NormOrder k, double r);
// log of dV/dr; -inf at r == 0 for d > 1.
double log_ball_volume_derivative(std::size_t d, NormOrder k, double r);

// d-dimensional distribution with density g(|x|_k), g(r) = rho(r) / V'(r).
class RadialBase {
public:
    RadialBase(std::size_t dim, NormOrder order, NormDistribution norm_dist);

    std::size_t dim() const { return dim_; }
    NormOrder order() const { return order_; }
    const NormDistribution& norm_dist() const { return rho_; }
    NormDistribution& norm_dist() { return rho_; }

    // log g(r). At r == 0 with d > 1 the value is the per-kind limit:
    // finite when rho(r) ~ r^(d-1) near 0 (chi with dof d, gamma with shape d),
    // +inf when rho(0) > 0 (exponential, half-normal, gamma shape < d), -inf
    // for the lognormal and gamma shape > d.
    double log_profile(double r) const;
    double profile(double r) const;

    double log_density(std::span<const double> x) const;
    // Row-wise log densities of an n x d batch, shape {n}.
    num::Tensor log_density(const num::Tensor& z) const;
    // Traced version; `params` is the tape binding of the norm distribution's
    // raw parameters (a constant when the base is frozen).
    ad::Var log_density(const ad::Var& z, const ad::Var& params) const;

    bool radial_monotonic(std::string* why = nullptr) const;

    // quantile of the norm distribution; UDL_B(q) = { z : |z|_k < radius }.
    // Throws ContractError with the diagnostic when the profile is not monotone.
    double udl_radius(double q) const;

    num::Tensor sample(std::size_t n, std::uint64_t seed) const;
    num::Tensor sample(std::size_t n, std::mt19937_64& rng) const;

private:
    std::size_t dim_;
    NormOrder order_;
    NormDistribution rho_;
};

// Uniform direction on the unit l_k sphere, written into `out`.
void sample_unit_sphere(std::span<double> out, NormOrder k, std::mt19937_64& rng);

} // namespace udlflow::radial
