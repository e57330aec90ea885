#pragma once

#include "udlflow/numerics/autodiff.hpp"

#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace udlflow::radial {

enum class NormKind { lognormal, gamma, gamma_mixture, half_normal, exponential, chi };

std::string to_string(NormKind kind);
NormKind parse_norm_kind(const std::string& name);

// One-dimensional density on [0, inf), the law of |X|_k for a radial X.
//
// Parameters live in an unconstrained vector (log-transformed positives and
// softmax logits) so they can be optimized directly:
//   lognormal      [mu, log sigma]
//   gamma          [raw shape, log scale]
//   gamma_mixture  [logits(m), raw shapes(m), log scales(m)]
//   half_normal    [log sigma]
//   exponential    [log rate]
//   chi            [log sigma]            (degrees of freedom fixed)
// A gamma shape is exp(raw), or cap * sigmoid(raw) when a shape cap is set.
// The cap keeps a gamma radial profile monotone (shape <= dimension).
class NormDistribution {
public:
    static NormDistribution lognormal(double mu, double sigma);
    static NormDistribution gamma(double shape, double scale, std::optional<double> shape_cap = std::nullopt);
    static NormDistribution gamma_mixture(std::vector<double> weights, std::vector<double> shapes,
                                          std::vector<double> scales,
                                          std::optional<double> shape_cap = std::nullopt);
    static NormDistribution half_normal(double sigma);
    static NormDistribution exponential(double rate);
    // Norm of an isotropic Gaussian with standard deviation sigma in `dof` dimensions.
    static NormDistribution chi(double dof, double sigma);

    // Rebuilds from a raw parameter vector (used by deserialization).
    static NormDistribution from_raw(NormKind kind, std::vector<double> raw, std::optional<double> shape_cap,
                                     double dof, bool learnable);

    NormKind kind() const { return kind_; }
    std::size_t components() const;
    const std::optional<double>& shape_cap() const { return shape_cap_; }
    double dof() const { return dof_; }

    bool learnable() const { return learnable_; }
    void set_learnable(bool v) { learnable_ = v; }

    const ad::Parameter& parameter() const { return params_; }
    ad::Parameter& parameter() { return params_; }
    std::span<const double> raw() const { return params_.value.values(); }

    // Natural-parameter views.
    std::vector<double> weights() const;
    double gamma_shape(std::size_t j) const;
    double gamma_scale(std::size_t j) const;

    double pdf(double r) const;
    double log_pdf(double r) const;
    double cdf(double r) const;
    // q <= 0 gives 0, q >= 1 gives +inf.
    double quantile(double q) const;
    double mean() const;
    double variance() const;
    double sample(std::mt19937_64& rng) const;

    // log(rho(r) / r^beta) with the r -> 0 limit resolved per kind
    // (+inf, finite, or -inf). Writes d/d(raw params) into `dparams` when it
    // is non-empty and the derivative in r into `dr` when non-null; both
    // derivatives are 0 at r == 0.
    double log_pdf_over_power(double r, double beta, std::span<double> dparams = {}, double* dr = nullptr) const;

    // Whether the profile rho(r) / r^(dim-1) is strictly decreasing. For the
    // lognormal the profile rises on (0, r*) with r* = exp(mu - dim*sigma^2);
    // it is accepted when the mass below r* is at most 1e-12.
    bool monotone_profile(std::size_t dim, std::string* why = nullptr) const;

private:
    NormDistribution(NormKind kind, std::vector<double> raw);

    double shape_from_raw(double raw) const;
    // d shape / d raw
    double shape_jacobian(double raw) const;

    NormKind kind_;
    ad::Parameter params_;
    std::optional<double> shape_cap_;
    double dof_ = 1.0;
    bool learnable_ = true;
};

} // namespace udlflow::radial
