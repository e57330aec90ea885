#include "udlflow/radial/norm_distribution.hpp"

#include "udlflow/error.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace udlflow::radial {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double logit(double p) { return std::log(p / (1.0 - p)); }

// Signed contribution e * log(r) with the r == 0 conventions: the result is
// only finite at r == 0 when the exponent vanishes. Exponents within 1e-9 of
// zero count as zero so exp(log(d)) round-off does not flip the limit.
double power_log(double e, double r)
{
    if (r > 0.0) return e * std::log(r);
    if (std::abs(e) <= 1e-9) return 0.0;
    return e > 0.0 ? -kInf : kInf;
}

double log_sum_exp(std::span<const double> t)
{
    double m = -kInf;
    for (double v : t) m = std::max(m, v);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double v : t) s += std::exp(v - m);
    return m + std::log(s);
}

void require_positive(double v, const char* what)
{
    if (!(v > 0.0) || !std::isfinite(v)) throw ContractError(std::string("norm distribution: ") + what + " must be positive");
}

} // namespace

std::string to_string(NormKind kind)
{
    switch (kind) {
    case NormKind::lognormal: return "lognormal";
    case NormKind::gamma: return "gamma";
    case NormKind::gamma_mixture: return "gamma-mixture";
    case NormKind::half_normal: return "half-normal";
    case NormKind::exponential: return "exponential";
    case NormKind::chi: return "chi";
    }
    return "?";
}

NormKind parse_norm_kind(const std::string& name)
{
    for (NormKind k : {NormKind::lognormal, NormKind::gamma, NormKind::gamma_mixture, NormKind::half_normal,
                       NormKind::exponential, NormKind::chi})
        if (to_string(k) == name) return k;
    throw FormatError("unknown norm distribution kind '" + name + "'");
}

NormDistribution::NormDistribution(NormKind kind, std::vector<double> raw)
    : kind_(kind), params_("norm_dist", num::Tensor::vector(std::move(raw)))
{
}

NormDistribution NormDistribution::lognormal(double mu, double sigma)
{
    require_positive(sigma, "sigma");
    return NormDistribution(NormKind::lognormal, {mu, std::log(sigma)});
}

NormDistribution NormDistribution::gamma(double shape, double scale, std::optional<double> shape_cap)
{
    // Single gamma stores [raw shape, log scale]; reuse the mixture checks and
    // drop the lone logit.
    const NormDistribution mix = gamma_mixture({1.0}, {shape}, {scale}, shape_cap);
    NormDistribution d(NormKind::gamma, {mix.raw()[1], mix.raw()[2]});
    d.shape_cap_ = shape_cap;
    return d;
}

NormDistribution NormDistribution::gamma_mixture(std::vector<double> weights, std::vector<double> shapes,
                                                 std::vector<double> scales, std::optional<double> shape_cap)
{
    const std::size_t m = weights.size();
    if (m == 0 || shapes.size() != m || scales.size() != m)
        throw ContractError("gamma mixture: weights, shapes and scales must have equal nonzero length");
    double wsum = 0.0;
    for (double w : weights) {
        require_positive(w, "mixture weight");
        wsum += w;
    }
    if (shape_cap) require_positive(*shape_cap, "shape cap");
    std::vector<double> raw(3 * m);
    for (std::size_t j = 0; j < m; ++j) {
        require_positive(shapes[j], "gamma shape");
        require_positive(scales[j], "gamma scale");
        raw[j] = std::log(weights[j] / wsum);
        if (shape_cap) {
            if (shapes[j] >= *shape_cap) throw ContractError("gamma shape must be below the shape cap");
            raw[m + j] = logit(shapes[j] / *shape_cap);
        } else {
            raw[m + j] = std::log(shapes[j]);
        }
        raw[2 * m + j] = std::log(scales[j]);
    }
    NormDistribution d(NormKind::gamma_mixture, std::move(raw));
    d.shape_cap_ = shape_cap;
    return d;
}

NormDistribution NormDistribution::half_normal(double sigma)
{
    require_positive(sigma, "sigma");
    return NormDistribution(NormKind::half_normal, {std::log(sigma)});
}

NormDistribution NormDistribution::exponential(double rate)
{
    require_positive(rate, "rate");
    return NormDistribution(NormKind::exponential, {std::log(rate)});
}

NormDistribution NormDistribution::chi(double dof, double sigma)
{
    require_positive(dof, "degrees of freedom");
    require_positive(sigma, "sigma");
    NormDistribution d(NormKind::chi, {std::log(sigma)});
    d.dof_ = dof;
    return d;
}

NormDistribution NormDistribution::from_raw(NormKind kind, std::vector<double> raw, std::optional<double> shape_cap,
                                            double dof, bool learnable)
{
    std::size_t expected = 0;
    switch (kind) {
    case NormKind::lognormal:
    case NormKind::gamma: expected = 2; break;
    case NormKind::half_normal:
    case NormKind::exponential:
    case NormKind::chi: expected = 1; break;
    case NormKind::gamma_mixture:
        if (raw.empty() || raw.size() % 3 != 0)
            throw SchemaError("gamma-mixture parameter vector length must be a positive multiple of 3");
        expected = raw.size();
        break;
    }
    if (raw.size() != expected)
        throw SchemaError(to_string(kind) + " expects " + std::to_string(expected) + " parameters, got " +
                          std::to_string(raw.size()));
    for (double v : raw)
        if (!std::isfinite(v)) throw SchemaError("non-finite norm distribution parameter");
    NormDistribution d(kind, std::move(raw));
    d.shape_cap_ = shape_cap;
    d.dof_ = dof;
    d.learnable_ = learnable;
    if (kind == NormKind::chi) require_positive(dof, "degrees of freedom");
    return d;
}

std::size_t NormDistribution::components() const
{
    return kind_ == NormKind::gamma_mixture ? raw().size() / 3 : 1;
}

double NormDistribution::shape_from_raw(double r) const
{
    return shape_cap_ ? *shape_cap_ * sigmoid(r) : std::exp(r);
}

double NormDistribution::shape_jacobian(double r) const
{
    if (shape_cap_) {
        const double s = sigmoid(r);
        return *shape_cap_ * s * (1.0 - s);
    }
    return std::exp(r);
}

std::vector<double> NormDistribution::weights() const
{
    if (kind_ != NormKind::gamma_mixture) return {1.0};
    const std::size_t m = components();
    std::vector<double> w(raw().begin(), raw().begin() + static_cast<long>(m));
    const double lse = log_sum_exp(w);
    for (double& v : w) v = std::exp(v - lse);
    return w;
}

double NormDistribution::gamma_shape(std::size_t j) const
{
    if (kind_ == NormKind::gamma) return shape_from_raw(raw()[0]);
    if (kind_ == NormKind::gamma_mixture) return shape_from_raw(raw()[components() + j]);
    throw ContractError("gamma_shape on a non-gamma norm distribution");
}

double NormDistribution::gamma_scale(std::size_t j) const
{
    if (kind_ == NormKind::gamma) return std::exp(raw()[1]);
    if (kind_ == NormKind::gamma_mixture) return std::exp(raw()[2 * components() + j]);
    throw ContractError("gamma_scale on a non-gamma norm distribution");
}

double NormDistribution::log_pdf_over_power(double r, double beta, std::span<double> dparams, double* dr) const
{
    if (r < 0.0) return -kInf;
    const bool want = !dparams.empty();
    if (want) std::fill(dparams.begin(), dparams.end(), 0.0);
    if (dr) *dr = 0.0;
    const bool at_zero = r == 0.0;
    const double lr = at_zero ? -kInf : std::log(r);
    auto raw_at = [this](std::size_t i) { return raw()[i]; };

    switch (kind_) {
    case NormKind::lognormal: {
        if (at_zero) return -kInf;
        const double mu = raw_at(0), ls = raw_at(1), s2 = std::exp(2.0 * ls);
        const double u = lr - mu;
        const double v = -(1.0 + beta) * lr - ls - 0.5 * std::log(2.0 * std::numbers::pi) - u * u / (2.0 * s2);
        if (want) {
            dparams[0] = u / s2;
            dparams[1] = -1.0 + u * u / s2;
        }
        if (dr) *dr = (-(1.0 + beta) - u / s2) / r;
        return v;
    }
    case NormKind::half_normal: {
        const double ls = raw_at(0), s2 = std::exp(2.0 * ls);
        const double v = power_log(-beta, r) + 0.5 * std::log(2.0 / std::numbers::pi) - ls - r * r / (2.0 * s2);
        if (!at_zero) {
            if (want) dparams[0] = -1.0 + r * r / s2;
            if (dr) *dr = -beta / r - r / s2;
        }
        return v;
    }
    case NormKind::exponential: {
        const double rate = std::exp(raw_at(0));
        const double v = power_log(-beta, r) + raw_at(0) - rate * r;
        if (!at_zero) {
            if (want) dparams[0] = 1.0 - rate * r;
            if (dr) *dr = -beta / r - rate;
        }
        return v;
    }
    case NormKind::chi: {
        const double k = dof_, ls = raw_at(0), s2 = std::exp(2.0 * ls);
        const double v = power_log(k - 1.0 - beta, r) - r * r / (2.0 * s2) - (0.5 * k - 1.0) * std::log(2.0) -
                         k * ls - std::lgamma(0.5 * k);
        if (!at_zero) {
            if (want) dparams[0] = r * r / s2 - k;
            if (dr) *dr = (k - 1.0 - beta) / r - r / s2;
        }
        return v;
    }
    case NormKind::gamma:
    case NormKind::gamma_mixture: {
        const bool mixture = kind_ == NormKind::gamma_mixture;
        const std::size_t m = components();
        const std::size_t shape_off = mixture ? m : 0, scale_off = mixture ? 2 * m : 1;
        std::vector<double> terms(m), dshape(m), dlscale(m), dcr(m);
        std::vector<double> logw(m, 0.0);
        if (mixture) {
            for (std::size_t j = 0; j < m; ++j) logw[j] = raw_at(j);
            const double lse = log_sum_exp(logw);
            for (double& v : logw) v -= lse;
        }
        for (std::size_t j = 0; j < m; ++j) {
            const double a = shape_from_raw(raw_at(shape_off + j));
            const double lth = raw_at(scale_off + j), th = std::exp(lth);
            terms[j] = logw[j] + power_log(a - 1.0 - beta, r) - r / th - a * lth - std::lgamma(a);
            if (!at_zero) {
                dshape[j] = (lr - lth - boost::math::digamma(a)) * shape_jacobian(raw_at(shape_off + j));
                dlscale[j] = r / th - a;
                dcr[j] = (a - 1.0 - beta) / r - 1.0 / th;
            }
        }
        const double v = log_sum_exp(terms);
        if (at_zero || !std::isfinite(v)) return v;
        for (std::size_t j = 0; j < m; ++j) {
            const double resp = std::exp(terms[j] - v);
            if (want) {
                if (mixture) dparams[j] = resp - std::exp(logw[j]);
                dparams[shape_off + j] = resp * dshape[j];
                dparams[scale_off + j] = resp * dlscale[j];
            }
            if (dr) *dr += resp * dcr[j];
        }
        return v;
    }
    }
    return -kInf;
}

double NormDistribution::log_pdf(double r) const { return log_pdf_over_power(r, 0.0); }

double NormDistribution::pdf(double r) const { return std::exp(log_pdf(r)); }

double NormDistribution::cdf(double r) const
{
    if (r <= 0.0) return 0.0;
    if (std::isinf(r)) return 1.0;
    switch (kind_) {
    case NormKind::lognormal: {
        const double mu = raw()[0], s = std::exp(raw()[1]);
        return 0.5 * std::erfc(-(std::log(r) - mu) / (s * std::numbers::sqrt2));
    }
    case NormKind::half_normal: return std::erf(r / (std::exp(raw()[0]) * std::numbers::sqrt2));
    case NormKind::exponential: return -std::expm1(-std::exp(raw()[0]) * r);
    case NormKind::chi: {
        const double s = std::exp(raw()[0]);
        return boost::math::gamma_p(0.5 * dof_, r * r / (2.0 * s * s));
    }
    case NormKind::gamma:
    case NormKind::gamma_mixture: {
        const auto w = weights();
        double c = 0.0;
        for (std::size_t j = 0; j < w.size(); ++j) c += w[j] * boost::math::gamma_p(gamma_shape(j), r / gamma_scale(j));
        return std::min(1.0, c);
    }
    }
    return 0.0;
}

double NormDistribution::quantile(double q) const
{
    if (q <= 0.0) return 0.0;
    if (q >= 1.0) return kInf;
    switch (kind_) {
    case NormKind::lognormal:
        return std::exp(raw()[0] + std::exp(raw()[1]) * std::numbers::sqrt2 * boost::math::erf_inv(2.0 * q - 1.0));
    case NormKind::half_normal: return std::exp(raw()[0]) * std::numbers::sqrt2 * boost::math::erf_inv(q);
    case NormKind::exponential: return -std::log1p(-q) / std::exp(raw()[0]);
    case NormKind::chi: return std::exp(raw()[0]) * std::sqrt(2.0 * boost::math::gamma_p_inv(0.5 * dof_, q));
    case NormKind::gamma: return gamma_scale(0) * boost::math::gamma_p_inv(gamma_shape(0), q);
    case NormKind::gamma_mixture: {
        // Each component quantile brackets the mixture quantile.
        double lo = kInf, hi = 0.0;
        for (std::size_t j = 0; j < components(); ++j) {
            const double qj = gamma_scale(j) * boost::math::gamma_p_inv(gamma_shape(j), q);
            lo = std::min(lo, qj);
            hi = std::max(hi, qj);
        }
        for (int it = 0; it < 500 && hi - lo > 1e-10 * std::max(1.0, hi); ++it) {
            const double mid = 0.5 * (lo + hi);
            (cdf(mid) < q ? lo : hi) = mid;
        }
        return 0.5 * (lo + hi);
    }
    }
    return 0.0;
}

double NormDistribution::mean() const
{
    switch (kind_) {
    case NormKind::lognormal: return std::exp(raw()[0] + 0.5 * std::exp(2.0 * raw()[1]));
    case NormKind::half_normal: return std::exp(raw()[0]) * std::sqrt(2.0 / std::numbers::pi);
    case NormKind::exponential: return 1.0 / std::exp(raw()[0]);
    case NormKind::chi:
        return std::exp(raw()[0]) * std::numbers::sqrt2 *
               std::exp(std::lgamma(0.5 * (dof_ + 1.0)) - std::lgamma(0.5 * dof_));
    case NormKind::gamma:
    case NormKind::gamma_mixture: {
        const auto w = weights();
        double m = 0.0;
        for (std::size_t j = 0; j < w.size(); ++j) m += w[j] * gamma_shape(j) * gamma_scale(j);
        return m;
    }
    }
    return 0.0;
}

double NormDistribution::variance() const
{
    const double mu = mean();
    switch (kind_) {
    case NormKind::lognormal: {
        const double s2 = std::exp(2.0 * raw()[1]);
        return std::expm1(s2) * std::exp(2.0 * raw()[0] + s2);
    }
    case NormKind::half_normal: return std::exp(2.0 * raw()[0]) * (1.0 - 2.0 / std::numbers::pi);
    case NormKind::exponential: return mu * mu;
    case NormKind::chi: return std::exp(2.0 * raw()[0]) * dof_ - mu * mu;
    case NormKind::gamma:
    case NormKind::gamma_mixture: {
        const auto w = weights();
        double m2 = 0.0;
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double a = gamma_shape(j), th = gamma_scale(j);
            m2 += w[j] * (a * th * th + a * a * th * th);
        }
        return m2 - mu * mu;
    }
    }
    return 0.0;
}

double NormDistribution::sample(std::mt19937_64& rng) const
{
    switch (kind_) {
    case NormKind::lognormal: {
        std::normal_distribution<double> n(raw()[0], std::exp(raw()[1]));
        return std::exp(n(rng));
    }
    case NormKind::half_normal: {
        std::normal_distribution<double> n(0.0, std::exp(raw()[0]));
        return std::abs(n(rng));
    }
    case NormKind::exponential: {
        std::exponential_distribution<double> e(std::exp(raw()[0]));
        return e(rng);
    }
    case NormKind::chi: {
        std::gamma_distribution<double> g(0.5 * dof_, 2.0);
        return std::exp(raw()[0]) * std::sqrt(g(rng));
    }
    case NormKind::gamma:
    case NormKind::gamma_mixture: {
        std::size_t j = 0;
        if (kind_ == NormKind::gamma_mixture) {
            const auto w = weights();
            std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
            j = pick(rng);
        }
        std::gamma_distribution<double> g(gamma_shape(j), gamma_scale(j));
        return g(rng);
    }
    }
    return 0.0;
}

bool NormDistribution::monotone_profile(std::size_t dim, std::string* why) const
{
    const double d = static_cast<double>(dim);
    auto fail = [why](std::string msg) {
        if (why) *why = std::move(msg);
        return false;
    };
    switch (kind_) {
    case NormKind::half_normal:
    case NormKind::exponential: return true;
    case NormKind::chi:
        if (dof_ <= d) return true;
        return fail("chi norm distribution with dof > dimension has a rising profile near 0");
    case NormKind::gamma:
    case NormKind::gamma_mixture: {
        bool all_capped = true;
        for (std::size_t j = 0; j < components(); ++j) all_capped = all_capped && gamma_shape(j) <= d;
        if (all_capped) return true;
        // Sum of profiles with some shape above d: scan log-spaced radii.
        const double lo = std::max(quantile(1e-9), 1e-300), hi = quantile(1.0 - 1e-9);
        double prev = kInf;
        const int n = 2000;
        for (int i = 0; i <= n; ++i) {
            const double r = lo * std::pow(hi / lo, static_cast<double>(i) / n);
            const double v = log_pdf_over_power(r, d - 1.0);
            if (!(v < prev)) return fail("gamma profile not decreasing near r=" + std::to_string(r));
            prev = v;
        }
        return true;
    }
    case NormKind::lognormal: {
        const double mu = raw()[0], s2 = std::exp(2.0 * raw()[1]);
        const double mode = std::exp(mu - d * s2);
        if (cdf(mode) <= 1e-12) return true;
        return fail("lognormal profile rises below r=" + std::to_string(mode) + " carrying mass " +
                    std::to_string(cdf(mode)));
    }
    }
    return false;
}

} // namespace udlflow::radial
