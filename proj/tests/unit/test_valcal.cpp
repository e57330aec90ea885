#include "doctest.h"

#include "udlflow/error.hpp"
#include "udlflow/training/trainer.hpp"
#include "udlflow/valcal/validation.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

using namespace udlflow;
using num::Tensor;
using radial::NormDistribution;
using radial::NormOrder;
using radial::RadialBase;

namespace {

RadialBase gaussian(std::size_t d) { return train::standard_normal_base(d); }

Tensor shifted(Tensor z, double by)
{
    for (double& v : z.values()) v += by;
    return z;
}

} // namespace

TEST_CASE("Kolmogorov survival function")
{
    // reference values of the asymptotic Kolmogorov distribution
    CHECK(valcal::kolmogorov_sf(0.2) == doctest::Approx(0.999999999999495).epsilon(1e-12));
    CHECK(valcal::kolmogorov_sf(0.5) == doctest::Approx(0.9639452436648751).epsilon(1e-12));
    CHECK(valcal::kolmogorov_sf(1.0) == doctest::Approx(0.26999967167735456).epsilon(1e-12));
    CHECK(valcal::kolmogorov_sf(1.3581) == doctest::Approx(0.0499996304316674).epsilon(1e-10));
    CHECK(valcal::kolmogorov_sf(2.0) == doctest::Approx(0.0006709252557796953).epsilon(1e-10));
    CHECK(valcal::kolmogorov_sf(3.0) == doctest::Approx(3.045995948942526e-08).epsilon(1e-8));
    CHECK(valcal::kolmogorov_sf(0.0) == 1.0);
    // the two series agree where they meet
    CHECK(valcal::kolmogorov_sf(std::nextafter(1.0, 0.0)) == doctest::Approx(valcal::kolmogorov_sf(1.0)).epsilon(1e-12));
}

TEST_CASE("KS statistic")
{
    const std::vector<double> x{0.1, 0.25, 0.4, 0.8, 1.1, 1.5, 2.0, 2.2, 3.1, 0.05, 0.6, 0.9};
    const auto r = valcal::ks_test(x, NormDistribution::exponential(1.0));
    CHECK(r.stat == doctest::Approx(0.13400436921611175).epsilon(1e-12));
    CHECK(r.p == doctest::Approx(0.9823819445370425).epsilon(1e-10));

    // norms placed at the model quantiles (i - 1/2) / n: D = 1 / (2n)
    const auto rho = NormDistribution::gamma(3.0, 0.7);
    std::vector<double> q;
    for (int i = 1; i <= 200; ++i) q.push_back(rho.quantile((i - 0.5) / 200.0));
    CHECK(valcal::ks_test(q, rho).stat == doctest::Approx(1.0 / 400.0).epsilon(1e-9));

    CHECK_THROWS_AS(valcal::ks_statistic(Tensor({9, 2}), gaussian(2)), ContractError);
    CHECK_THROWS_AS(valcal::ks_statistic(Tensor({20, 3}), gaussian(2)), DimensionError);
}

TEST_CASE("PP plot data")
{
    const auto base = gaussian(3);
    const Tensor z = base.sample(2000, 3);
    const auto two = valcal::pp_plot_data(z, base, 2);
    REQUIRE(two.size() == 2);
    CHECK(two[0].empirical == 0.0);
    CHECK(two[0].model == 0.0);
    CHECK(two[1].empirical == 1.0);
    CHECK(two[1].model == 1.0);

    // exact quantile radii in the first coordinate: the empirical CDF is the model CDF to 1/n
    const std::size_t n = 400;
    Tensor exact({n, 3});
    for (std::size_t i = 0; i < n; ++i) exact(i, 0) = base.norm_dist().quantile((i + 0.5) / n);
    for (const auto& p : valcal::pp_plot_data(exact, base, 21))
        CHECK(std::abs(p.empirical - p.model) <= 1.0 / std::sqrt(static_cast<double>(n)));

    // larger norms: the empirical CDF sits below the model CDF
    Tensor big = z;
    for (double& v : big.values()) v *= 1.3;
    for (const auto& p : valcal::pp_plot_data(big, base, 11)) CHECK(p.empirical <= p.model);

    std::ostringstream csv;
    valcal::write_pp_csv(csv, two);
    CHECK(csv.str() == "empirical,model\n0,0\n1,1\n");
    CHECK_THROWS_AS(valcal::pp_plot_data(z, base, 1), ContractError);
}

TEST_CASE("exact binomial sign test")
{
    CHECK(valcal::binomial_two_sided(50, 100) == 1.0);
    CHECK(valcal::binomial_two_sided(20, 20) == doctest::Approx(2.0 * std::pow(0.5, 20)).epsilon(1e-12));
    CHECK(valcal::binomial_two_sided(0, 20) == doctest::Approx(1.9073486328125e-06).epsilon(1e-12));
    CHECK(valcal::binomial_two_sided(30, 100) == doctest::Approx(7.85013964559367e-05).epsilon(1e-10));
    CHECK(valcal::binomial_two_sided(7, 23) == doctest::Approx(0.0931396484375).epsilon(1e-12));
    CHECK(valcal::binomial_two_sided(0, 0) == 1.0);

    Tensor z({20, 1}, 1.0);
    auto r = valcal::sign_symmetry_test(z);
    CHECK(r.threshold == doctest::Approx(0.025));
    CHECK(r.pass_count == 0);
    CHECK_FALSE(r.all_pass);

    // zeros are dropped: 10 positives, 10 negatives, 5 zeros
    Tensor m({25, 2});
    for (std::size_t i = 0; i < 25; ++i) {
        m(i, 0) = i < 10 ? 1.0 : i < 20 ? -1.0 : 0.0;
        m(i, 1) = i % 2 ? 0.5 : -0.5;
    }
    r = valcal::sign_symmetry_test(m);
    CHECK(r.p_values[0] == 1.0);
    CHECK(r.threshold == doctest::Approx(0.0125));
    CHECK(r.all_pass);
    CHECK_THROWS_AS(valcal::sign_symmetry_test(Tensor({5, 2})), ContractError);
}

TEST_CASE("energy statistic")
{
    const Tensor x = Tensor::matrix({{0.1, 0.9}, {0.5, 0.5}, {0.3, 0.7}});
    const Tensor y = Tensor::matrix({{0.8, 0.2}, {0.6, 0.4}});
    CHECK(valcal::energy_statistic(x, y) == doctest::Approx(0.738533749239283).epsilon(1e-12));
    CHECK(valcal::energy_statistic(x, x) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK_THROWS_AS(valcal::energy_statistic(x, Tensor({2, 3})), DimensionError);
}

TEST_CASE("projected uniformity test")
{
    // l1-radial latents project to Dirichlet(1, 1, 1), the reference itself
    std::size_t rejections = 0, rejections_l2 = 0;
    const auto l1 = RadialBase(3, NormOrder::l1, NormDistribution::gamma(3.0, 1.0));
    const auto base = gaussian(3);
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto r = valcal::projected_uniformity_test(l1.sample(200, 100 + s), 200, s);
        CHECK(r.p > 0.0);
        CHECK(r.p <= 1.0);
        rejections += r.p < 0.05;
        const auto g = base.sample(200, 300 + s);
        rejections_l2 += valcal::projected_uniformity_test(g, 200, s, NormOrder::l2).p < 0.05;
    }
    // about 1 in 20 expected under the null
    CHECK(rejections <= 4);
    CHECK(rejections_l2 <= 4);
    // Gaussian directions are not uniform on the l1 simplex
    const auto g4 = gaussian(4);
    for (std::uint64_t s = 0; s < 3; ++s) CHECK(valcal::projected_uniformity_test(g4.sample(1000, s), 100, s).p < 0.05);

    // every projection at a vertex
    Tensor vertex({200, 3});
    for (std::size_t i = 0; i < 200; ++i) vertex(i, 0) = 1.0 + static_cast<double>(i % 7);
    const auto v = valcal::projected_uniformity_test(vertex, 200, 1);
    CHECK(v.p < 0.01);

    Tensor with_zeros = base.sample(50, 1);
    for (std::size_t j = 0; j < 3; ++j) with_zeros(4, j) = with_zeros(9, j) = 0.0;
    const auto z = valcal::projected_uniformity_test(with_zeros, 50, 2);
    CHECK(z.excluded == 2);
    CHECK(z.permutations == 50);
    CHECK_THROWS_AS(valcal::projected_uniformity_test(Tensor({30, 2}), 10, 0), ContractError);

    const auto a = valcal::projected_uniformity_test(base.sample(100, 4), 100, 9);
    const auto b = valcal::projected_uniformity_test(base.sample(100, 4), 100, 9);
    CHECK(a.stat == b.stat);
    CHECK(a.p == b.p);
}

TEST_CASE("Bonferroni combination")
{
    CHECK_FALSE(valcal::combine_bonferroni(std::vector<double>{0.04}));
    CHECK(valcal::combine_bonferroni(std::vector<double>{0.02, 0.5, 0.9, 0.3}));
    CHECK_FALSE(valcal::combine_bonferroni(std::vector<double>{0.01, 0.5, 0.9, 0.3}));
    CHECK_THROWS_AS(valcal::combine_bonferroni(std::vector<double>{}), ContractError);
}

TEST_CASE("validation report on base and shifted latents")
{
    const auto base = gaussian(4);
    valcal::ValidationOptions opt;
    opt.permutations = 100;
    const auto good = valcal::validate_latents(base.sample(1000, 7), base, opt);
    CHECK(good.ks.p > 0.05);
    CHECK(good.ks.stat >= 0.0);
    CHECK(good.ks.stat <= 1.0);
    for (double p : good.sign.p_values) {
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
    }

    const auto bad = valcal::validate_latents(shifted(base.sample(1000, 7), 0.5), base, opt);
    CHECK(bad.ks.p < 0.01);
    CHECK(bad.verdict == valcal::Verdict::reject);

    // right norms, wrong directions: all mass in the positive orthant
    Tensor orthant = base.sample(1000, 8);
    for (double& v : orthant.values()) v = std::abs(v);
    const auto rad = valcal::validate_latents(orthant, base, opt);
    CHECK(rad.ks.p > 0.05);
    CHECK(rad.verdict == valcal::Verdict::norm_ok_radiality_fail);

    std::ostringstream kv, csv;
    valcal::write_key_value(kv, good);
    valcal::write_csv(csv, good);
    CHECK(kv.str().find("verdict=" + valcal::to_string(good.verdict) + "\n") != std::string::npos);
    CHECK(kv.str().find("sign_p.3=") != std::string::npos);
    const std::string c = csv.str();
    CHECK(c.rfind("test,dimension,statistic,p_value,threshold,pass\n", 0) == 0);
    CHECK(std::count(c.begin(), c.end(), '\n') == 1 + 1 + 4 + 1);
}

TEST_CASE("null calibration of the validation suite")
{
    const auto base = train::default_veriflow_base(3);
    std::size_t ks_pass = 0, accept = 0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        valcal::ValidationOptions opt;
        opt.seed = s;
        opt.permutations = 100;
        const auto r = valcal::validate_latents(base.sample(1000, 500 + s), base, opt);
        ks_pass += r.ks.p > 0.05;
        accept += r.verdict == valcal::Verdict::accept;
    }
    CHECK(ks_pass >= 18);
    // three tests at 5% each; the combined verdict keeps most seeds
    CHECK(accept >= 15);
}

TEST_CASE("recalibration")
{
    flows::FlowConfig cfg;
    cfg.dim = 2;
    cfg.seed = 3;
    auto model = flows::FlowModel::build(cfg, train::default_veriflow_base(2));
    auto ds = data::synth("two-moons", 257, 5);
    ds.name = "cal";
    const std::vector<double> grid{0.0, 0.5, 0.9, 1.0};
    const auto cal = valcal::recalibrate(model, ds, grid);
    CHECK(cal.source == "cal");
    CHECK(std::is_sorted(cal.radii.begin(), cal.radii.end()));
    CHECK(cal.radius(0.0) == 0.0);

    double max_norm = 0.0;
    const Tensor z = model.inverse(ds.samples);
    for (std::size_t i = 0; i < z.rows(); ++i) max_norm = std::max(max_norm, radial::norm(z.row(i), NormOrder::l1));
    CHECK(cal.radius(1.0) == max_norm);

    for (double q : {0.5, 0.9, 1.0}) {
        std::size_t inside = 0;
        for (std::size_t i = 0; i < ds.size(); ++i) inside += valcal::calibrated_contains(model, cal, q, ds.samples.row(i));
        CHECK(inside == static_cast<std::size_t>(std::ceil(q * 257)));
    }
    CHECK_THROWS_AS(cal.radius(0.7), ContractError);
    CHECK_THROWS_AS(valcal::recalibrate(model, ds, {1.5}), ContractError);
    CHECK_THROWS_AS(valcal::recalibrate(model, data::Dataset{}, grid), ContractError);

    // sampled from the model itself, the empirical radii track the analytic ones
    data::Dataset own;
    own.samples = model.sample(20000, 2);
    own.sample_shape = {2};
    const auto self = valcal::recalibrate(model, own, {0.5, 0.8, 0.95});
    for (double q : {0.5, 0.8, 0.95}) {
        const double analytic = model.base().udl_radius(q);
        // quantile standard error: sqrt(q (1 - q) / n) / rho(r_q)
        const double se = std::sqrt(q * (1 - q) / 20000.0) / model.base().norm_dist().pdf(analytic);
        CHECK(std::abs(self.radius(q) - analytic) < 4.0 * se);
    }
}

TEST_CASE("kernel density estimate")
{
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 2.0);
    std::vector<double> s(5000);
    for (double& v : s) v = n(rng);
    const double h = valcal::silverman_bandwidth(s);
    CHECK(h == doctest::Approx(0.9 * 2.0 * std::pow(5000.0, -0.2)).epsilon(0.05));
    std::vector<double> grid;
    for (int i = -400; i <= 400; ++i) grid.push_back(i * 0.05);
    const auto f = valcal::kde(s, grid);
    double mass = 0.0;
    for (double v : f) mass += v * 0.05;
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(f[400] == doctest::Approx(1.0 / (2.0 * std::sqrt(2.0 * M_PI))).epsilon(0.05));
}
