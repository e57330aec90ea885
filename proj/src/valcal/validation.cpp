#include "udlflow/valcal/validation.hpp"

#include "udlflow/error.hpp"

#include <boost/math/distributions/binomial.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

namespace udlflow::valcal {

namespace {

std::vector<double> latent_norms(const Tensor& latents, radial::NormOrder k)
{
    std::vector<double> r(latents.rows());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = radial::norm(latents.row(i), k);
    return r;
}

void require_rows(const Tensor& t, std::size_t n, const char* what)
{
    if (t.rank() != 2) throw DimensionError(std::string(what) + ": latents must be an n x d matrix");
    if (t.rows() < n)
        throw ContractError(std::string(what) + ": needs at least " + std::to_string(n) + " rows, got " +
                            std::to_string(t.rows()));
}

} // namespace

double kolmogorov_sf(double lambda)
{
    if (!(lambda > 0.0)) return 1.0;
    constexpr int terms = 100;
    double s = 0.0;
    if (lambda < 1.0) {
        // The alternating series cancels badly for small lambda; the Jacobi
        // theta form converges fast there.
        const double c = std::numbers::pi * std::numbers::pi / (8.0 * lambda * lambda);
        for (int k = 1; k <= terms; ++k) {
            const double t = std::exp(-static_cast<double>((2 * k - 1) * (2 * k - 1)) * c);
            s += t;
            if (t < 1e-300) break;
        }
        s = 1.0 - std::sqrt(2.0 * std::numbers::pi) / lambda * s;
    } else {
        for (int k = 1; k <= terms; ++k) {
            const double t = std::exp(-2.0 * k * k * lambda * lambda);
            s += (k % 2 ? 2.0 : -2.0) * t;
            if (t < 1e-300) break;
        }
    }
    return std::clamp(s, 0.0, 1.0);
}

KsResult ks_test(std::span<const double> norms, const radial::NormDistribution& rho)
{
    std::vector<double> r(norms.begin(), norms.end());
    std::sort(r.begin(), r.end());
    const double n = static_cast<double>(r.size());
    KsResult res;
    res.stat = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
        const double f = rho.cdf(r[i]);
        res.stat = std::max({res.stat, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
    }
    res.p = kolmogorov_sf(std::sqrt(n) * res.stat);
    return res;
}

KsResult ks_statistic(const Tensor& latents, const radial::RadialBase& base)
{
    require_rows(latents, 10, "ks_statistic");
    if (latents.cols() != base.dim()) throw DimensionError("ks_statistic: latent dimension differs from the base");
    const auto r = latent_norms(latents, base.order());
    return ks_test(r, base.norm_dist());
}

std::vector<PPPoint> pp_plot_data(const Tensor& latents, const radial::RadialBase& base, std::size_t grid_size)
{
    if (grid_size < 2) throw ContractError("pp_plot_data: grid size must be at least 2");
    require_rows(latents, 1, "pp_plot_data");
    auto r = latent_norms(latents, base.order());
    std::sort(r.begin(), r.end());
    std::vector<PPPoint> out(grid_size);
    for (std::size_t j = 0; j < grid_size; ++j) {
        const double q = static_cast<double>(j) / static_cast<double>(grid_size - 1);
        double emp;
        if (j == 0) emp = 0.0;
        else if (j + 1 == grid_size) emp = 1.0;
        else {
            const double radius = base.norm_dist().quantile(q);
            emp = static_cast<double>(std::upper_bound(r.begin(), r.end(), radius) - r.begin()) /
                  static_cast<double>(r.size());
        }
        out[j] = {emp, q};
    }
    return out;
}

void write_pp_csv(std::ostream& out, const std::vector<PPPoint>& points)
{
    out << "empirical,model\n";
    out.precision(17);
    for (const auto& p : points) out << p.empirical << ',' << p.model << '\n';
}

double binomial_two_sided(std::size_t successes, std::size_t trials)
{
    if (successes > trials) throw ContractError("binomial_two_sided: more successes than trials");
    if (trials == 0) return 1.0;
    const boost::math::binomial_distribution<double> b(static_cast<double>(trials), 0.5);
    const std::size_t k = std::min(successes, trials - successes);
    // symmetric null: both tails have the same mass
    return std::min(1.0, 2.0 * boost::math::cdf(b, static_cast<double>(k)));
}

SignTestResult sign_symmetry_test(const Tensor& latents, double alpha)
{
    require_rows(latents, 10, "sign_symmetry_test");
    const std::size_t d = latents.cols();
    SignTestResult res;
    res.threshold = alpha / (2.0 * static_cast<double>(d));
    for (std::size_t j = 0; j < d; ++j) {
        std::size_t pos = 0, nonzero = 0;
        for (std::size_t i = 0; i < latents.rows(); ++i) {
            const double v = latents(i, j);
            if (v == 0.0) continue;
            ++nonzero;
            pos += v > 0.0;
        }
        const double p = binomial_two_sided(pos, nonzero);
        res.p_values.push_back(p);
        res.pass_count += p > res.threshold;
    }
    res.all_pass = res.pass_count == d;
    return res;
}

namespace {

struct PairSums {
    double xy = 0.0, xx = 0.0, yy = 0.0;
};

double energy_from(const PairSums& s, double n, double m) { return 2.0 * s.xy / (n * m) - s.xx / (n * n) - s.yy / (m * m); }

std::vector<double> distance_matrix(const Tensor& z)
{
    const std::size_t n = z.rows(), d = z.cols();
    std::vector<double> dm(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double t = z(i, c) - z(j, c);
                s += t * t;
            }
            dm[i * n + j] = dm[j * n + i] = std::sqrt(s);
        }
    return dm;
}

PairSums pair_sums(const std::vector<double>& dm, std::size_t n, const std::vector<std::uint8_t>& in_x)
{
    PairSums s;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = dm.data() + i * n;
        double to_x = 0.0, to_y = 0.0;
        for (std::size_t j = 0; j < n; ++j) (in_x[j] ? to_x : to_y) += row[j];
        if (in_x[i]) {
            s.xx += to_x;
            s.xy += to_y;
        } else {
            s.yy += to_y;
        }
    }
    return s;
}

Tensor stack(const Tensor& a, const Tensor& b)
{
    Tensor out({a.rows() + b.rows(), a.cols()});
    std::copy(a.values().begin(), a.values().end(), out.values().begin());
    std::copy(b.values().begin(), b.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(a.size()));
    return out;
}

} // namespace

double energy_statistic(const Tensor& x, const Tensor& y)
{
    if (x.rank() != 2 || y.rank() != 2 || x.cols() != y.cols())
        throw DimensionError("energy_statistic: samples must share the column count");
    if (x.rows() == 0 || y.rows() == 0) throw ContractError("energy_statistic: empty sample");
    const Tensor z = stack(x, y);
    std::vector<std::uint8_t> in_x(z.rows(), 0);
    std::fill(in_x.begin(), in_x.begin() + static_cast<std::ptrdiff_t>(x.rows()), 1);
    return energy_from(pair_sums(distance_matrix(z), z.rows(), in_x), static_cast<double>(x.rows()),
                       static_cast<double>(y.rows()));
}

EnergyResult projected_uniformity_test(const Tensor& latents, std::size_t permutations, std::uint64_t seed,
                                       radial::NormOrder order)
{
    require_rows(latents, 1, "projected_uniformity_test");
    const std::size_t d = latents.cols();
    EnergyResult res;
    res.permutations = permutations;
    std::vector<double> proj;
    for (std::size_t i = 0; i < latents.rows(); ++i) {
        const auto row = latents.row(i);
        const double s = radial::norm(row, order);
        if (s == 0.0) {
            ++res.excluded;
            continue;
        }
        for (double v : row) proj.push_back(std::abs(v) / s);
    }
    const std::size_t n = proj.size() / d;
    if (n < 20)
        throw ContractError("projected_uniformity_test: needs at least 20 nonzero rows, got " + std::to_string(n));
    const Tensor x({n, d}, std::move(proj));

    // reference: |u| for u uniform on the unit sphere; Dirichlet(1, ..., 1) for l1
    std::mt19937_64 rng(seed);
    Tensor y({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        radial::sample_unit_sphere(y.row(i), order, rng);
        for (double& v : y.row(i)) v = std::abs(v);
    }

    const Tensor z = stack(x, y);
    const std::size_t total = z.rows();
    const auto dm = distance_matrix(z);
    std::vector<std::uint8_t> in_x(total, 0);
    std::fill(in_x.begin(), in_x.begin() + static_cast<std::ptrdiff_t>(n), 1);
    const double nn = static_cast<double>(n);
    res.stat = energy_from(pair_sums(dm, total, in_x), nn, nn);

    std::size_t at_least = 0;
    for (std::size_t p = 0; p < permutations; ++p) {
        std::mt19937_64 prng(seed ^ (0x9e3779b97f4a7c15ULL * (p + 1)));
        std::shuffle(in_x.begin(), in_x.end(), prng);
        at_least += energy_from(pair_sums(dm, total, in_x), nn, nn) >= res.stat;
    }
    res.p = static_cast<double>(1 + at_least) / static_cast<double>(1 + permutations);
    return res;
}

bool combine_bonferroni(std::span<const double> p_values, double alpha)
{
    if (p_values.empty()) throw ContractError("combine_bonferroni: no p-values");
    const double t = alpha / static_cast<double>(p_values.size());
    return std::none_of(p_values.begin(), p_values.end(), [t](double p) { return p < t; });
}

std::string to_string(Verdict v)
{
    switch (v) {
    case Verdict::accept: return "accept";
    case Verdict::norm_ok_radiality_fail: return "norm-ok-radiality-fail";
    case Verdict::reject: return "reject";
    }
    return "reject";
}

double ValidationReport::mean_sign_p() const
{
    if (sign.p_values.empty()) return 0.0;
    return std::accumulate(sign.p_values.begin(), sign.p_values.end(), 0.0) / static_cast<double>(sign.p_values.size());
}

ValidationReport validate_latents(const Tensor& latents, const radial::RadialBase& base,
                                  const ValidationOptions& options)
{
    ValidationReport r;
    r.n = latents.rows();
    r.alpha = options.alpha;
    r.ks = ks_statistic(latents, base);
    r.sign = sign_symmetry_test(latents, options.alpha);
    r.energy = projected_uniformity_test(latents, options.permutations, options.seed, base.order());
    const bool norm_ok = r.ks.p > options.alpha;
    const bool radial_ok = r.sign.all_pass && r.energy.p > options.alpha;
    r.verdict = !norm_ok ? Verdict::reject : radial_ok ? Verdict::accept : Verdict::norm_ok_radiality_fail;
    r.recalibration_advised = r.ks.p > 1e-4 && r.ks.p < options.alpha;
    return r;
}

ValidationReport validate(const flows::FlowModel& model, const data::Dataset& data, const ValidationOptions& options)
{
    if (data.dim() != model.dim()) throw DimensionError("validate: dataset dimension differs from the model");
    return validate_latents(model.inverse(data.samples), model.base(), options);
}

void write_key_value(std::ostream& out, const ValidationReport& r)
{
    out.precision(17);
    out << "n=" << r.n << '\n'
        << "ks_stat=" << r.ks.stat << '\n'
        << "ks_p=" << r.ks.p << '\n'
        << "sign_threshold=" << r.sign.threshold << '\n'
        << "sign_pass_count=" << r.sign.pass_count << '\n'
        << "sign_dims=" << r.sign.p_values.size() << '\n'
        << "sign_mean_p=" << r.mean_sign_p() << '\n';
    for (std::size_t j = 0; j < r.sign.p_values.size(); ++j) out << "sign_p." << j << '=' << r.sign.p_values[j] << '\n';
    out << "energy_stat=" << r.energy.stat << '\n'
        << "energy_p=" << r.energy.p << '\n'
        << "energy_excluded=" << r.energy.excluded << '\n'
        << "energy_permutations=" << r.energy.permutations << '\n'
        << "recalibration_advised=" << (r.recalibration_advised ? "true" : "false") << '\n'
        << "verdict=" << to_string(r.verdict) << '\n';
}

void write_csv(std::ostream& out, const ValidationReport& r)
{
    out.precision(17);
    out << "test,dimension,statistic,p_value,threshold,pass\n";
    const double alpha = r.alpha;
    out << "ks,," << r.ks.stat << ',' << r.ks.p << ',' << alpha << ',' << (r.ks.p > alpha) << '\n';
    for (std::size_t j = 0; j < r.sign.p_values.size(); ++j)
        out << "sign," << j << ",," << r.sign.p_values[j] << ',' << r.sign.threshold << ','
            << (r.sign.p_values[j] > r.sign.threshold) << '\n';
    out << "energy,," << r.energy.stat << ',' << r.energy.p << ',' << alpha << ',' << (r.energy.p > alpha) << '\n';
}

double Calibration::radius(double level) const
{
    for (std::size_t i = 0; i < q.size(); ++i)
        if (q[i] == level) return radii[i];
    throw ContractError("Calibration: level " + std::to_string(level) + " is not on the calibration grid");
}

Calibration recalibrate(const flows::FlowModel& model, const data::Dataset& calibration, std::vector<double> q_grid)
{
    if (calibration.empty()) throw ContractError("recalibrate: calibration set is empty");
    if (calibration.dim() != model.dim()) throw DimensionError("recalibrate: dataset dimension differs from the model");
    auto r = latent_norms(model.inverse(calibration.samples), model.base().order());
    std::sort(r.begin(), r.end());
    const double n = static_cast<double>(r.size());
    Calibration cal;
    cal.order = model.base().order();
    cal.source = calibration.name;
    for (double q : q_grid) {
        if (!(q >= 0.0 && q <= 1.0)) throw ContractError("recalibrate: levels must lie in [0, 1]");
        // ceil(q n) without q n = 900.0000000000001 style rounding pushing it up a step
        const auto k = static_cast<std::size_t>(std::ceil(q * n - 1e-9));
        cal.q.push_back(q);
        cal.radii.push_back(k == 0 ? 0.0 : r[std::min(k, r.size()) - 1]);
    }
    return cal;
}

bool calibrated_contains(const flows::FlowModel& model, const Calibration& cal, double q, std::span<const double> x)
{
    if (x.size() != model.dim()) throw DimensionError("calibrated_contains: point has wrong dimension");
    const Tensor z = model.inverse(Tensor({1, x.size()}, std::vector<double>(x.begin(), x.end())));
    return radial::norm(z.row(0), cal.order) <= cal.radius(q);
}

double silverman_bandwidth(std::span<const double> samples)
{
    const std::size_t n = samples.size();
    if (n < 2) return 1.0;
    const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double v : samples) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    std::vector<double> s(samples.begin(), samples.end());
    std::sort(s.begin(), s.end());
    auto at = [&](double p) {
        const double pos = p * static_cast<double>(n - 1);
        const auto lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, n - 1);
        return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
    };
    const double iqr = at(0.75) - at(0.25);
    double spread = std::min(sd, iqr / 1.34);
    if (!(spread > 0.0)) spread = sd > 0.0 ? sd : 1.0;
    return 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
}

std::vector<double> kde(std::span<const double> samples, std::span<const double> at)
{
    if (samples.empty()) throw ContractError("kde: no samples");
    const double h = silverman_bandwidth(samples);
    const double c = 1.0 / (static_cast<double>(samples.size()) * h * std::sqrt(2.0 * std::numbers::pi));
    std::vector<double> out;
    out.reserve(at.size());
    for (double x : at) {
        double s = 0.0;
        for (double v : samples) {
            const double u = (x - v) / h;
            s += std::exp(-0.5 * u * u);
        }
        out.push_back(c * s);
    }
    return out;
}

} // namespace udlflow::valcal
