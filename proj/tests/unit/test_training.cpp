#include "doctest.h"
#include "flow_helpers.hpp"
#include "gradcheck.hpp"

#include "udlflow/error.hpp"
#include "udlflow/training/trainer.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

using namespace udlflow;
using flows::FlowConfig;
using flows::FlowModel;
using num::Tensor;

namespace {

FlowModel veriflow_model(std::size_t d, std::uint64_t seed)
{
    FlowConfig cfg;
    cfg.dim = d;
    cfg.seed = seed;
    return FlowModel::build(cfg, train::default_veriflow_base(d));
}

double traced_loss(const FlowModel& m, const Tensor& x, double w)
{
    ad::Tape tape;
    flows::TraceCtx ctx{tape};
    return train::nll_loss(ctx, m, x, w).value().item();
}

} // namespace

TEST_CASE("identity flow at the origin costs -log g(0)")
{
    for (std::size_t d : {1u, 2u, 5u}) {
        const FlowModel m({}, std::nullopt, train::standard_normal_base(d));
        const Tensor origin({4, d});
        const double expected = 0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi);
        CHECK(traced_loss(m, origin, 1e-4) == doctest::Approx(expected).epsilon(1e-12));
        CHECK(train::mean_nll(m, origin) == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("LU penalty enters the loss additively")
{
    FlowModel m = veriflow_model(3, 1);
    testsupport::randomize(m, 2);
    std::mt19937_64 rng(3);
    const Tensor x = testsupport::random_tensor({16, 3}, rng, -1.0, 1.0);
    ad::Tape tape;
    flows::TraceCtx ctx{tape};
    const double penalty = m.lu_penalty(ctx).value().item();
    CHECK(penalty > 0.0);
    CHECK(traced_loss(m, x, 0.0) == doctest::Approx(train::mean_nll(m, x)).epsilon(1e-12));
    CHECK(traced_loss(m, x, 0.5) - traced_loss(m, x, 0.0) == doctest::Approx(0.5 * penalty).epsilon(1e-10));
}

TEST_CASE("non-finite loss is reported")
{
    const FlowModel m({}, std::nullopt, train::standard_normal_base(2));
    Tensor x({1, 2});
    x(0, 0) = std::numeric_limits<double>::infinity();
    ad::Tape tape;
    flows::TraceCtx ctx{tape};
    CHECK_THROWS_AS(train::nll_loss(ctx, m, x, 0.0), NumericError);
    CHECK_THROWS_AS(train::nll_loss(ctx, m, Tensor({2, 3}), 0.0), DimensionError);
}

TEST_CASE("Adam update rule")
{
    ad::Parameter p("w", Tensor::vector({1.0, -2.0, 0.5}));
    std::vector<ad::Parameter*> ps{&p};
    train::AdamState st;

    // zero gradient: both moments stay zero, nothing moves
    train::adam_step(ps, st, 0.1);
    CHECK(p.value == Tensor::vector({1.0, -2.0, 0.5}));

    // first step with gradient g: m_hat = g, v_hat = g^2, so the step is -lr g / (|g| + eps)
    train::AdamState fresh;
    p.grad = Tensor::vector({3.0, -1e-4, 0.0});
    const Tensor before = p.value;
    train::adam_step(ps, fresh, 0.01);
    CHECK(p.value[0] - before[0] == doctest::Approx(-0.01 * 3.0 / (3.0 + 1e-8)).epsilon(1e-12));
    CHECK(p.value[1] - before[1] == doctest::Approx(0.01 * 1e-4 / (1e-4 + 1e-8)).epsilon(1e-12));
    CHECK(p.value[2] == before[2]);

    // a constant gradient keeps m_hat = g and v_hat = g^2 at every step
    train::AdamState st2;
    ad::Parameter q("q", Tensor::vector({0.0}));
    std::vector<ad::Parameter*> qs{&q};
    for (int i = 0; i < 500; ++i) {
        q.grad = Tensor::vector({0.25});
        train::adam_step(qs, st2, 1e-3);
    }
    CHECK(q.value[0] == doctest::Approx(-500 * 1e-3 * 0.25 / (0.25 + 1e-8)).epsilon(1e-9));

    ad::Parameter bad("b", Tensor::vector({1.0}));
    bad.grad = Tensor::vector({1.0, 2.0});
    std::vector<ad::Parameter*> bs{&bad};
    train::AdamState st3;
    CHECK_THROWS_AS(train::adam_step(bs, st3, 0.1), DimensionError);
}

TEST_CASE("gradient clipping")
{
    ad::Parameter a("a", Tensor::vector({0.0, 0.0})), b("b", Tensor::vector({0.0}));
    a.grad = Tensor::vector({30.0, 0.0});
    b.grad = Tensor::vector({40.0});
    std::vector<ad::Parameter*> ps{&a, &b};
    CHECK(train::clip_gradients(ps, 10.0) == doctest::Approx(50.0));
    CHECK(a.grad[0] == doctest::Approx(6.0));
    CHECK(b.grad[0] == doctest::Approx(8.0));
    CHECK(train::clip_gradients(ps, 100.0) == doctest::Approx(10.0));
    CHECK(b.grad[0] == doctest::Approx(8.0));
}

TEST_CASE("dequantization")
{
    std::mt19937_64 rng(4);
    const std::size_t n = 20000;
    Tensor px({n, 3});
    for (std::size_t i = 0; i < n; ++i) {
        px(i, 0) = 0;
        px(i, 1) = 255;
        px(i, 2) = 100;
    }
    const Tensor v = train::dequantize(px, rng);
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        CHECK(v(i, 0) >= 0.0);
        CHECK(v(i, 0) < 1.0 / 256.0);
        CHECK(v(i, 1) >= 255.0 / 256.0);
        CHECK(v(i, 1) < 1.0);
        mean += v(i, 2);
    }
    mean /= static_cast<double>(n);
    // the uniform offset has standard deviation 1 / sqrt(12) before scaling
    const double se = 1.0 / std::sqrt(12.0) / 256.0 / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(mean - 100.5 / 256.0) < 3.0 * se);

    CHECK_THROWS_AS(train::dequantize(Tensor::vector({256.0}), rng), ContractError);
    CHECK_THROWS_AS(train::dequantize(Tensor::vector({-1.0}), rng), ContractError);
    CHECK_THROWS_AS(train::dequantize(Tensor::vector({3.5}), rng), ContractError);
}

TEST_CASE("early stopping counts epochs without improvement")
{
    train::EarlyStopper s(3);
    const double hist[] = {3, 2, 2, 2, 2};
    std::size_t stopped_after = 99;
    for (std::size_t e = 0; e < 5; ++e)
        if (s.update(hist[e])) {
            stopped_after = e;
            break;
        }
    CHECK(stopped_after == 4);
    CHECK(s.best() == 2.0);
    CHECK(s.best_epoch() == 1);

    train::EarlyStopper zero(0);
    CHECK(zero.update(1.0));
}

TEST_CASE("zero epochs leave the model untouched")
{
    FlowModel m = veriflow_model(2, 5);
    const auto before = m.sample(20, 1);
    train::TrainConfig cfg;
    cfg.max_epochs = 0;
    const auto r = train::train(m, data::synth("two-moons", 200, 1), cfg);
    CHECK(r.history.empty());
    CHECK(m.sample(20, 1) == before);
    CHECK(std::isfinite(r.initial_val_nll));
}

TEST_CASE("configuration checks")
{
    FlowModel m = veriflow_model(2, 5);
    train::TrainConfig cfg;
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(train::train(m, data::synth("rings", 10, 1), cfg), ContractError);
    cfg = {};
    CHECK_THROWS_AS(train::train(m, data::Dataset{}, cfg), ContractError);
    data::Dataset wide;
    wide.samples = Tensor({4, 3});
    wide.sample_shape = {3};
    CHECK_THROWS_AS(train::train(m, wide, cfg), DimensionError);
}

TEST_CASE("the loss falls over the first 50 steps on two-moons")
{
    FlowModel m = veriflow_model(2, 7);
    const auto ds = data::synth("two-moons", 2000, 7);
    const auto params = m.parameters();
    train::AdamState st;
    std::vector<double> losses;
    std::mt19937_64 rng(1);
    for (int step = 0; step < 50; ++step) {
        std::vector<std::size_t> idx(128);
        for (auto& i : idx) i = rng() % ds.size();
        const Tensor batch = ds.subset(idx).samples;
        ad::Tape tape;
        flows::TraceCtx ctx{tape};
        const ad::Var loss = train::nll_loss(ctx, m, batch, 1e-4);
        tape.backward(loss);
        for (auto* p : params) p->zero_grad();
        tape.accumulate(params);
        train::adam_step(params, st, 1e-3);
        losses.push_back(train::mean_nll(m, ds.samples));
    }
    CHECK(losses.back() < losses.front());
    CHECK(train::mean_nll(m, ds.samples) < losses[0] - 0.05);
}

TEST_CASE("two-moons training improves the held-out likelihood")
{
    FlowModel m = veriflow_model(2, 11);
    train::TrainConfig cfg;
    cfg.max_epochs = 40;
    cfg.seed = 11;
    const auto r = train::train(m, data::synth("two-moons", 2000, 11), cfg);
    REQUIRE_FALSE(r.history.empty());
    CHECK_FALSE(r.diverged);
    CHECK(r.best_val_nll <= r.initial_val_nll - 1.0);
    // the restored parameters are the best ones
    data::Dataset tr, va;
    train::split_train_validation(data::synth("two-moons", 2000, 11), cfg.validation_fraction, cfg.seed, tr, va);
    CHECK(train::mean_nll(m, va.samples) == doctest::Approx(r.best_val_nll).epsilon(1e-12));
    for (const auto& e : r.history) CHECK(std::abs(e.log_det) < 50.0);

    std::ostringstream csv;
    train::write_history_csv(csv, r.history);
    const std::string s = csv.str();
    CHECK(s.rfind("epoch,train_nll,val_nll,log_det\n", 0) == 0);
    CHECK(static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')) == r.history.size() + 1);
}

TEST_CASE("training is reproducible and thread-count independent up to rounding")
{
    const auto ds = data::synth("rings", 600, 2);
    train::TrainConfig cfg;
    cfg.max_epochs = 3;
    cfg.seed = 4;
    FlowModel a = veriflow_model(2, 3), b = veriflow_model(2, 3), c = veriflow_model(2, 3);
    const auto ra = train::train(a, ds, cfg);
    const auto rb = train::train(b, ds, cfg);
    CHECK(std::abs(ra.best_val_nll - rb.best_val_nll) < 1e-9);
    cfg.threads = 3;
    const auto rc = train::train(c, ds, cfg);
    CHECK(std::abs(ra.best_val_nll - rc.best_val_nll) < 1e-6);
}

TEST_CASE("dequantized image-like training runs")
{
    data::Dataset px;
    std::mt19937_64 rng(8);
    px.samples = Tensor({300, 4});
    for (double& v : px.samples.values()) v = static_cast<double>(rng() % 64 + 96);
    px.sample_shape = {4};
    FlowModel m = veriflow_model(4, 1);
    train::TrainConfig cfg;
    cfg.max_epochs = 2;
    cfg.dequantize = true;
    const auto r = train::train(m, px, cfg);
    CHECK(r.history.size() == 2);
    CHECK(std::isfinite(r.best_val_nll));
}

TEST_CASE("baseline configuration is coupling only with a fixed Gaussian base")
{
    const auto cfg = train::baseline_architecture(4, std::nullopt, 1);
    const FlowModel m = FlowModel::build(cfg, train::standard_normal_base(4));
    CHECK_FALSE(m.final_affine().has_value());
    for (const auto& b : m.blocks()) CHECK_FALSE(b.affine.has_value());
    CHECK_FALSE(m.base().norm_dist().learnable());
    CHECK(m.log_det_constant() == 0.0);
    const auto p = train::baseline_unstable_preset();
    CHECK(p.learning_rate == 1e-5);
    CHECK(p.patience == 10);
    CHECK(train::veriflow_preset().learning_rate == 1e-3);
    CHECK(train::veriflow_preset().patience == 3);
}

TEST_CASE("cross-entropy gradient and classifier fitting")
{
    std::mt19937_64 rng(2);
    const Tensor z = testsupport::random_tensor({5, 3}, rng, -2.0, 2.0);
    const std::vector<int> y{0, 2, 1, 1, 0};
    const auto rep = testsupport::gradient_check(
        [&](ad::Tape&, const ad::Var& v) { return train::cross_entropy(v, y); }, z);
    CHECK(rep.worst < 1e-6);
    // uniform logits cost log k
    ad::Tape t;
    CHECK(train::cross_entropy(t.constant(Tensor({2, 4})), {0, 3}).value().item() ==
          doctest::Approx(std::log(4.0)));

    auto ds = data::synth("two-moons", 400, 3);
    flows::ReluNetwork net({2, 16, 16, 2}, 3);
    train::TrainConfig cfg;
    cfg.max_epochs = 60;
    cfg.batch_size = 64;
    cfg.learning_rate = 1e-2;
    const auto r = train::train_classifier(net, ds, cfg);
    CHECK(r.train_loss.back() < r.train_loss.front());
    CHECK(r.accuracy > 0.95);
}
