#pragma once

#include "udlflow/datasets/dataset.hpp"
#include "udlflow/flows/flow_model.hpp"
#include "udlflow/radial/radial_base.hpp"

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace udlflow::valcal {

using num::Tensor;

struct KsResult {
    double stat = 0.0;
    double p = 1.0;
};

// Survival function of the Kolmogorov distribution, P(K > lambda).
double kolmogorov_sf(double lambda);

// One-sample KS of the sample norms against the analytic CDF of `rho`.
KsResult ks_test(std::span<const double> norms, const radial::NormDistribution& rho);
// KS of the latent norms |z_i|_k against the base's norm distribution. Needs n >= 10.
KsResult ks_statistic(const Tensor& latents, const radial::RadialBase& base);

struct PPPoint {
    double empirical = 0.0;
    double model = 0.0;
};

// Model probabilities j / (grid - 1) paired with the empirical CDF at the
// matching model quantile.
std::vector<PPPoint> pp_plot_data(const Tensor& latents, const radial::RadialBase& base, std::size_t grid_size);
void write_pp_csv(std::ostream& out, const std::vector<PPPoint>& points);

// Exact two-sided binomial test of P(success) = 1/2.
double binomial_two_sided(std::size_t successes, std::size_t trials);

struct SignTestResult {
    std::vector<double> p_values; // one per dimension
    double threshold = 0.0;       // alpha / (2 d)
    std::size_t pass_count = 0;
    bool all_pass = false;
};

// Zero coordinates are excluded per dimension. Needs n >= 10.
SignTestResult sign_symmetry_test(const Tensor& latents, double alpha = 0.05);

struct EnergyResult {
    double stat = 0.0;
    double p = 1.0;
    std::size_t excluded = 0; // zero-norm rows
    std::size_t permutations = 0;
};

// 2 E|X - Y| - E|X - X'| - E|Y - Y'| with the V-statistic means.
double energy_statistic(const Tensor& x, const Tensor& y);
// Energy test of |z| / |z|_k against |u| for u uniform on the unit l_k sphere,
// drawn fresh with the same count. For k = 1 the reference is Dirichlet(1, ..., 1).
EnergyResult projected_uniformity_test(const Tensor& latents, std::size_t permutations = 200, std::uint64_t seed = 0,
                                       radial::NormOrder order = radial::NormOrder::l1);

// True (accept) iff no p-value is below alpha / m.
bool combine_bonferroni(std::span<const double> p_values, double alpha = 0.05);

enum class Verdict { accept, norm_ok_radiality_fail, reject };
std::string to_string(Verdict v);

struct ValidationOptions {
    double alpha = 0.05;
    std::size_t permutations = 200;
    std::uint64_t seed = 0;
};

struct ValidationReport {
    std::size_t n = 0;
    double alpha = 0.05;
    KsResult ks;
    SignTestResult sign;
    EnergyResult energy;
    Verdict verdict = Verdict::reject;
    // KS p in (1e-4, alpha): a moderate norm misfit that recalibration can absorb.
    bool recalibration_advised = false;

    double mean_sign_p() const;
};

ValidationReport validate_latents(const Tensor& latents, const radial::RadialBase& base,
                                  const ValidationOptions& options = {});
ValidationReport validate(const flows::FlowModel& model, const data::Dataset& data,
                          const ValidationOptions& options = {});

void write_key_value(std::ostream& out, const ValidationReport& r);
// test,dimension,statistic,p_value,threshold,pass
void write_csv(std::ostream& out, const ValidationReport& r);

struct Calibration {
    std::vector<double> q;
    std::vector<double> radii;
    radial::NormOrder order = radial::NormOrder::l2;
    std::string source;

    // Radius for an exact grid level; ContractError for levels not on the grid.
    double radius(double q) const;
};

// Radius(q) is the ceil(q n)-th smallest calibration latent norm (radius 0 at
// q = 0). The closed ball of that radius holds at least ceil(q n) points.
Calibration recalibrate(const flows::FlowModel& model, const data::Dataset& calibration, std::vector<double> q_grid);

// |F^-1(x)|_k <= calibrated radius.
bool calibrated_contains(const flows::FlowModel& model, const Calibration& cal, double q, std::span<const double> x);

// Gaussian-kernel density estimate with Silverman's bandwidth, for plots.
double silverman_bandwidth(std::span<const double> samples);
std::vector<double> kde(std::span<const double> samples, std::span<const double> at);

} // namespace udlflow::valcal
