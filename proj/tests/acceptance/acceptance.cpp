// Acceptance harness: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include "flow_helpers.hpp"

#include "udlflow/datasets/dataset.hpp"
#include "udlflow/io/model_file.hpp"
#include "udlflow/training/trainer.hpp"
#include "udlflow/valcal/validation.hpp"
#include "udlflow/verify/bench.hpp"
#include "udlflow/verify/property_file.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>

using namespace udlflow;
using flows::FlowModel;
using num::Tensor;
using testsupport::row_tensor;

namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool ok = false;
    std::string detail;
};

double max_abs_diff(const Tensor& a, const Tensor& b)
{
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

FlowModel random_flow(std::size_t d, std::uint64_t seed)
{
    flows::FlowConfig cfg;
    cfg.dim = d;
    cfg.blocks = 5;
    cfg.seed = seed;
    FlowModel m = FlowModel::build(cfg, train::default_veriflow_base(d));
    testsupport::randomize(m, seed + 100);
    return m;
}

// Toy two-moons flow shared by criteria 2, 3, 7 and 9.
const FlowModel& moons_flow()
{
    static const FlowModel m = [] {
        flows::FlowConfig cfg;
        cfg.dim = 2;
        cfg.seed = 1;
        FlowModel f = FlowModel::build(cfg, train::default_veriflow_base(2));
        auto tc = train::veriflow_preset();
        tc.max_epochs = 15;
        tc.seed = 1;
        train::train(f, data::synth("two-moons", 2000, 1), tc);
        return f;
    }();
    return m;
}

Outcome bijectivity()
{
    std::string detail;
    bool ok = true;
    for (std::size_t d : {2u, 16u}) {
        const FlowModel m = random_flow(d, 10 + d);
        const Tensor z = m.base().sample(1000, d);
        const double err = max_abs_diff(m.inverse(m.forward(z)), z);
        std::mt19937_64 rng(d);
        double lo = 1e300, hi = -1e300;
        for (int i = 0; i < 50; ++i) {
            const auto p = testsupport::random_point(d, rng);
            const double ld = testsupport::log_abs_det(
                testsupport::numerical_jacobian([&](const Tensor& v) { return m.forward(v); }, p));
            lo = std::min(lo, ld);
            hi = std::max(hi, ld);
        }
        ok = ok && err < 1e-8 && hi - lo < 1e-5;
        detail += fmt("d=%zu roundtrip=%.2e logdet_spread=%.2e; ", d, err, hi - lo);
    }
    return {ok, detail};
}

Outcome normalization()
{
    const FlowModel& m = moons_flow();
    // Smallest symmetric-quantile box holding 99.9% of 10^5 model samples, then padded.
    const Tensor s = m.sample(100000, 3);
    double lo[2], hi[2];
    for (std::size_t j = 0; j < 2; ++j) {
        std::vector<double> c(s.rows());
        for (std::size_t i = 0; i < s.rows(); ++i) c[i] = s(i, j);
        std::sort(c.begin(), c.end());
        lo[j] = c[static_cast<std::size_t>(0.00025 * c.size())];
        hi[j] = c[static_cast<std::size_t>(0.99975 * c.size())];
        const double w = hi[j] - lo[j];
        lo[j] -= 0.25 * w;
        hi[j] += 0.25 * w;
    }
    std::size_t inside = 0;
    for (std::size_t i = 0; i < s.rows(); ++i)
        inside += s(i, 0) > lo[0] && s(i, 0) < hi[0] && s(i, 1) > lo[1] && s(i, 1) < hi[1];
    const double covered = static_cast<double>(inside) / s.rows();

    const std::size_t n = 800;
    const double hx = (hi[0] - lo[0]) / n, hy = (hi[1] - lo[1]) / n;
    Tensor grid(num::Shape{n * n, 2});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            grid(i * n + j, 0) = lo[0] + (i + 0.5) * hx;
            grid(i * n + j, 1) = lo[1] + (j + 0.5) * hy;
        }
    double total = 0.0;
    for (double v : m.log_prob(grid).values()) total += std::exp(v);
    total *= hx * hy;
    return {covered >= 0.999 && std::abs(total - 1.0) <= 1e-2,
            fmt("integral=%.5f sample_coverage=%.5f grid=%zux%zu", total, covered, n, n)};
}

Outcome level_sets()
{
    const FlowModel& m = moons_flow();
    const Tensor s = m.sample(10000, 5);
    bool ok = true;
    std::string detail;
    for (double q : {0.5, 0.8, 0.95}) {
        std::size_t in = 0;
        for (std::size_t i = 0; i < s.rows(); ++i) in += m.udl_contains(s.row(i), q);
        const double frac = in / 10000.0;
        ok = ok && std::abs(frac - q) <= 0.02;
        detail += fmt("q=%.2f frac=%.4f; ", q, frac);
    }
    const Tensor x = m.sample(1000, 6);
    const Tensor lp = m.log_prob(x);
    const Tensor z = m.inverse(x);
    std::size_t agree = 0;
    for (std::size_t p = 0; p < 500; ++p) {
        const std::size_t i = 2 * p, j = 2 * p + 1;
        const double ni = radial::norm(z.row(i), m.base().order()), nj = radial::norm(z.row(j), m.base().order());
        agree += (lp[i] > lp[j]) == (ni < nj) && (lp[i] < lp[j]) == (ni > nj);
    }
    ok = ok && agree == 500;
    detail += fmt("rank_agreement=%zu/500", agree);
    return {ok, detail};
}

// Log-affine base (gamma(d) on the l1 norm is the Laplace product), the premise of piecewise-affine log densities.
FlowModel laplace_moons_flow()
{
    flows::FlowConfig cfg;
    cfg.dim = 2;
    cfg.seed = 2;
    radial::RadialBase base(2, radial::NormOrder::l1, radial::NormDistribution::gamma(2.0, 1.0));
    base.norm_dist().set_learnable(false);
    FlowModel f = FlowModel::build(cfg, std::move(base));
    auto tc = train::veriflow_preset();
    tc.max_epochs = 15;
    tc.seed = 2;
    train::train(f, data::synth("two-moons", 2000, 2), tc);
    return f;
}

Outcome piecewise_affine()
{
    const FlowModel m = laplace_moons_flow();
    std::mt19937_64 rng(4);
    const int steps = 400;
    double worst = 0.0;
    std::size_t smooth = 0, breaks = 0;
    for (int seg = 0; seg < 20; ++seg) {
        const auto a = testsupport::random_point(2, rng, 1.5), b = testsupport::random_point(2, rng, 1.5);
        Tensor pts(num::Shape{steps + 1, 2});
        for (int i = 0; i <= steps; ++i)
            for (std::size_t k = 0; k < 2; ++k) pts(i, k) = a[k] + (b[k] - a[k]) * i / steps;
        const Tensor lp = m.log_prob(pts);
        const Tensor z = m.inverse(pts);
        for (int i = 1; i < steps; ++i) {
            // a breakpoint is a ReLU pattern change or a latent sign change (the l1 kink) across the stencil
            const auto p0 = m.inverse_activation_pattern(pts.row(i - 1));
            bool same = p0 == m.inverse_activation_pattern(pts.row(i)) && p0 == m.inverse_activation_pattern(pts.row(i + 1));
            for (std::size_t k = 0; k < 2; ++k)
                same = same && std::signbit(z(i - 1, k)) == std::signbit(z(i, k)) &&
                       std::signbit(z(i, k)) == std::signbit(z(i + 1, k));
            if (!same) {
                ++breaks;
                continue;
            }
            ++smooth;
            worst = std::max(worst, std::abs(lp[i + 1] - 2 * lp[i] + lp[i - 1]));
        }
    }
    return {worst < 1e-6 && smooth > 0,
            fmt("max_second_difference=%.2e smooth_stencils=%zu breakpoint_stencils=%zu", worst, smooth, breaks)};
}

Outcome training_efficacy()
{
    const char* mnist = std::getenv("UDLFLOW_MNIST_DIR");
    bool ok = true;
    std::string detail;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        std::vector<std::pair<std::string, data::Dataset>> runs;
        runs.emplace_back("two-moons", data::synth("two-moons", 2000, seed));
        if (mnist && *mnist) {
            data::IdxOptions o;
            o.class_filter = 0;
            o.downsample = 4;
            o.keep_integer = true;
            runs.emplace_back("digit-0", data::load_idx(std::string(mnist) + "/train-images-idx3-ubyte",
                                                         std::string(mnist) + "/train-labels-idx1-ubyte", o));
        } else {
            runs.emplace_back("gaussian-mixture", data::synth("gaussian-mixture", 2000, seed));
        }
        for (const auto& [name, ds] : runs) {
            const std::size_t d = ds.dim();
            std::optional<flows::ImageShape> image;
            if (ds.sample_shape.size() == 3) image = flows::ImageShape{ds.sample_shape[0], ds.sample_shape[1], ds.sample_shape[2]};
            auto cfg = train::veriflow_preset();
            cfg.seed = seed;
            cfg.dequantize = image.has_value();

            flows::FlowConfig vc;
            vc.dim = d;
            vc.image = image;
            vc.seed = seed;
            if (image) {
                vc.conditioner = flows::ConditionerKind::conv;
                vc.block_affine = flows::AffineKind::one_star;
            }
            FlowModel veriflow = FlowModel::build(vc, train::default_veriflow_base(d));
            FlowModel baseline = FlowModel::build(train::baseline_architecture(d, image, seed), train::standard_normal_base(d));
            const auto rv = train::train(veriflow, ds, cfg);
            const auto rb = train::train(baseline, ds, cfg);
            const bool pass = rv.best_val_nll <= rv.initial_val_nll - 1.0 && rv.best_val_nll < rb.best_val_nll;
            ok = ok && pass;
            detail += fmt("%s/seed%llu init=%.3f veriflow=%.3f baseline=%.3f%s; ", name.c_str(),
                          static_cast<unsigned long long>(seed), rv.initial_val_nll, rv.best_val_nll, rb.best_val_nll,
                          pass ? "" : " MISS");
        }
    }
    return {ok, detail};
}

Outcome validation_calibration()
{
    const std::size_t d = 4;
    const auto base = train::default_veriflow_base(d);
    std::size_t ks = 0, sign = 0, proj = 0, joint = 0, shifted_reject = 0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        valcal::ValidationOptions opt;
        opt.seed = s;
        const Tensor z = base.sample(1000, 900 + s);
        const auto r = valcal::validate_latents(z, base, opt);
        ks += r.ks.p > 0.05;
        sign += r.sign.all_pass;
        proj += r.energy.p > 0.05;
        joint += r.ks.p > 0.05 && r.sign.all_pass && r.energy.p > 0.05;
        Tensor moved = z;
        for (double& v : moved.values()) v += 0.5;
        shifted_reject += valcal::validate_latents(moved, base, opt).ks.p < 0.01;
    }
    const bool ok = ks >= 18 && sign >= 18 && proj >= 18 && shifted_reject >= 18;
    return {ok, fmt("of 20 seeds: ks=%zu sign=%zu projected=%zu (all three jointly %zu) shifted_ks_reject=%zu", ks,
                    sign, proj, joint, shifted_reject)};
}

Outcome recalibration()
{
    const FlowModel& m = moons_flow();
    const auto cal_set = data::synth("two-moons", 1001, 77);
    const auto cal = valcal::recalibrate(m, cal_set, {0.5, 0.9});
    bool ok = true;
    std::string detail;
    for (double q : {0.5, 0.9}) {
        std::size_t in = 0;
        for (std::size_t i = 0; i < cal_set.size(); ++i) in += valcal::calibrated_contains(m, cal, q, cal_set.samples.row(i));
        const auto want = static_cast<std::size_t>(std::ceil(q * cal_set.size()));
        ok = ok && in == want;
        detail += fmt("q=%.1f inside=%zu expected=%zu; ", q, in, want);
    }
    return {ok, detail};
}

Outcome verifier_soundness()
{
    std::mt19937_64 rng(42), fuzz_rng(43);
    std::normal_distribution<double> nd(0.0, 0.5), bias(0.0, 0.1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::size_t agree = 0, certified = 0, falsified = 0, replay_ok = 0, fuzz_ok = 0;
    for (int k = 0; k < 20; ++k) {
        // Random biases: with zero biases every net ties at the origin, a single point no grid can hit.
        auto layers = flows::ReluNetwork({2, 8, 8, 2}, 1000 + k).layers();
        for (auto& l : layers)
            for (double& b : l.bias.values()) b = bias(rng);
        const flows::ReluNetwork net(std::move(layers));
        const std::vector<double> x{nd(rng), nd(rng)};
        const std::size_t t = net.predict(x);
        bool net_agrees = true;
        for (double eps : {0.05, 0.2}) {
            const auto v = verify::verify_local(net, x, eps);
            const double st = eps / 50.0;
            bool grid_violation = false;
            for (int i = 0; i <= 100 && !grid_violation; ++i)
                for (int j = 0; j <= 100; ++j) {
                    const auto y = net.logits(std::vector<double>{x[0] - eps + i * st, x[1] - eps + j * st});
                    if (y[1 - t] >= y[t]) {
                        grid_violation = true;
                        break;
                    }
                }
            if (v.status == verify::Status::unknown || (v.status == verify::Status::falsified) != grid_violation)
                net_agrees = false;
            if (v.status == verify::Status::falsified) {
                ++falsified;
                const auto& c = v.counterexample;
                bool in_box = true; // against the task box [x - eps, x + eps] as stored
                for (std::size_t i = 0; i < 2; ++i) in_box = in_box && c[i] >= x[i] - eps && c[i] <= x[i] + eps;
                const auto y = net.logits(c);
                replay_ok += in_box && y[1 - t] >= y[t];
            }
            if (v.status == verify::Status::certified) {
                ++certified;
                bool clean = true;
                for (int f = 0; f < 100000 && clean; ++f) {
                    const auto y = net.logits(std::vector<double>{x[0] + eps * (2 * u(fuzz_rng) - 1), x[1] + eps * (2 * u(fuzz_rng) - 1)});
                    clean = y[1 - t] < y[t];
                }
                fuzz_ok += clean;
            }
        }
        agree += net_agrees;
    }
    return {agree == 20 && replay_ok == falsified && fuzz_ok == certified,
            fmt("grid_agreement=%zu/20 (eps 0.05 and 0.2 per net) falsified_replayed=%zu/%zu certified_fuzzed=%zu/%zu",
                agree, replay_ok, falsified, fuzz_ok, certified)};
}

Outcome crossover_harness()
{
    const FlowModel& flow = moons_flow();
    flows::ReluNetwork net({2, 16, 16, 2}, 3);
    auto cc = train::veriflow_preset();
    cc.max_epochs = 30;
    cc.batch_size = 64;
    cc.learning_rate = 1e-2;
    train::train_classifier(net, data::synth("two-moons", 2000, 1), cc);

    verify::BenchOptions o;
    o.instances = 50;
    o.seed = 9;
    const auto res = verify::bench_robustness(flow, net, o);
    std::stringstream csv;
    verify::write_bench_csv(csv, res.rows);
    const auto rows = verify::read_bench_csv(csv);

    bool ok = rows.size() == 2 + 2 * o.instances;
    std::string detail;
    for (double eps : {o.eps_verify, o.eps_falsify}) {
        // recompute the crossover from the parsed rows without the library helper
        double global = -1.0;
        std::optional<std::size_t> manual;
        double cum = 0.0;
        std::size_t i = 0, local_certified = 0;
        verify::Status gstat = verify::Status::unknown;
        for (const auto& r : rows)
            if (r.mode == "global" && r.epsilon == eps) global = r.seconds, gstat = r.verdict;
        for (const auto& r : rows) {
            if (r.mode == "global" || r.epsilon != eps) continue;
            ++i;
            cum += r.seconds;
            if (!manual && cum >= global) manual = i;
            local_certified += r.verdict == verify::Status::certified;
        }
        const auto lib = verify::crossover(rows, eps);
        ok = ok && global >= 0.0 && i == o.instances && lib == manual;
        const bool implication = gstat != verify::Status::certified || local_certified == o.instances;
        ok = ok && implication;
        detail += fmt("eps=%g global=%s locals_certified=%zu/%zu crossover=%s; ", eps, verify::to_string(gstat).c_str(),
                      local_certified, o.instances, lib ? std::to_string(*lib).c_str() : "none");
    }
    return {ok, detail};
}

Outcome round_trips()
{
    const fs::path dir = fs::temp_directory_path() / "udlflow_acceptance";
    fs::remove_all(dir);
    double worst = 0.0;
    for (std::size_t d : {2u, 16u}) {
        const FlowModel m = random_flow(d, 30 + d);
        io::save(m, dir / "flow.json");
        const FlowModel back = io::load_flow(dir / "flow.json");
        const Tensor z = m.base().sample(200, 1);
        const Tensor x = m.forward(z);
        worst = std::max({worst, max_abs_diff(back.forward(z), x), max_abs_diff(back.inverse(x), m.inverse(x)),
                          max_abs_diff(back.log_prob(x), m.log_prob(x))});
    }
    const FlowModel flow = random_flow(2, 5);
    const flows::ReluNetwork net({2, 8, 2}, 6);
    std::size_t same = 0, total = 0;
    std::vector<verify::VerificationTask> tasks{
        verify::make_global_task(flow, net, verify::small_box_region(2), 0.01),
        verify::make_global_task(flow, net, verify::latent_udl_region(flow, 0.5, flow.base().order()), 0.02),
        verify::make_local_task(net, {0.1, -0.2}, 0.05),
        verify::make_confidence_task(flow, net, verify::small_box_region(2), 1, 0.3)};
    for (const auto& t : tasks) {
        const auto files = verify::export_spec(t, dir, "p" + std::to_string(total));
        const auto back = verify::import_spec(files.property);
        ++total;
        verify::VerifyOptions vo;
        vo.budget = 500;
        const auto a = verify::verify(t, vo), b = verify::verify(back, vo);
        same += back.property.kind == t.property.kind && back.property.epsilon == t.property.epsilon &&
                back.property.center == t.property.center && back.property.target == t.property.target &&
                back.property.tau == t.property.tau && back.region.kind == t.region.kind &&
                back.region.radius == t.region.radius && back.region.box == t.region.box && back.graph == t.graph &&
                a.status == b.status && a.nodes == b.nodes;
    }
    fs::remove_all(dir);
    return {worst <= 1e-12 && same == total, fmt("model_max_diff=%.2e property_tasks_reproduced=%zu/%zu", worst, same, total)};
}

struct Criterion {
    int id;
    const char* name;
    double limit_seconds;
    std::function<Outcome()> run;
};

} // namespace

int main()
{
    const std::vector<Criterion> criteria{
        {1, "bijectivity and uniform scaling", 60, bijectivity},
        {2, "change of variables integrates to one", 120, normalization},
        {3, "level-set mass and density order", 60, level_sets},
        {4, "piecewise-affine log density", 60, piecewise_affine},
        {5, "training efficacy and ablation direction", 900, training_efficacy},
        {6, "validation suite calibration", 300, validation_calibration},
        {7, "recalibration containment", 10, recalibration},
        {8, "verifier soundness and completeness", 600, verifier_soundness},
        {9, "global versus local crossover harness", 600, crossover_harness},
        {10, "format round trips", 10, round_trips},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool pass = o.ok && secs < c.limit_seconds;
        failed += !pass;
        std::printf("%s criterion %d (%s): %s [%.1fs, limit %.0fs]\n", pass ? "PASS" : "FAIL", c.id, c.name,
                    o.detail.c_str(), secs, c.limit_seconds);
        std::fflush(stdout);
    }
    return failed ? 1 : 0;
}
