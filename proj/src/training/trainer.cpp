#include "udlflow/training/trainer.hpp"

#include "udlflow/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

namespace udlflow::train {

using num::Tensor;

void TrainConfig::validate() const
{
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw ContractError("train: learning rate must be positive");
    if (batch_size == 0) throw ContractError("train: batch size must be at least 1");
    if (!(lu_reg_weight >= 0.0)) throw ContractError("train: LU regularization weight must be nonnegative");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
        throw ContractError("train: validation fraction must lie in [0, 1)");
    if (!(clip_norm > 0.0)) throw ContractError("train: clip norm must be positive");
    if (threads == 0) throw ContractError("train: thread count must be at least 1");
}

TrainConfig veriflow_preset() { return TrainConfig{}; }

TrainConfig baseline_unstable_preset()
{
    TrainConfig c;
    c.learning_rate = 1e-5;
    c.patience = 10;
    return c;
}

flows::FlowConfig baseline_architecture(std::size_t dim, std::optional<flows::ImageShape> image, std::uint64_t seed)
{
    flows::FlowConfig c;
    c.dim = dim;
    c.image = image;
    c.conditioner = image ? flows::ConditionerKind::conv : flows::ConditionerKind::dense;
    c.block_affine = flows::AffineKind::none;
    c.final_affine = flows::FinalAffineKind::none;
    c.seed = seed;
    return c;
}

radial::RadialBase standard_normal_base(std::size_t dim)
{
    auto chi = radial::NormDistribution::chi(static_cast<double>(dim), 1.0);
    chi.set_learnable(false);
    return radial::RadialBase(dim, radial::NormOrder::l2, std::move(chi));
}

radial::RadialBase default_veriflow_base(std::size_t dim)
{
    const double d = static_cast<double>(dim);
    auto mix = radial::NormDistribution::gamma_mixture({1.0 / 3, 1.0 / 3, 1.0 / 3}, {0.5 * d, 0.7 * d, 0.9 * d},
                                                       {1.0, 1.0, 1.0}, d);
    return radial::RadialBase(dim, radial::NormOrder::l1, std::move(mix));
}

void adam_step(const std::vector<ad::Parameter*>& params, AdamState& state, double lr, const AdamHyper& h)
{
    if (state.m.size() != params.size()) {
        state.m.clear();
        state.v.clear();
        for (auto* p : params) {
            state.m.emplace_back(p->value.shape());
            state.v.emplace_back(p->value.shape());
        }
        state.t = 0;
    }
    ++state.t;
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i];
        if (p.grad.shape() != p.value.shape() || state.m[i].shape() != p.value.shape())
            throw DimensionError("adam_step: gradient shape does not match parameter " + p.name);
        auto m = state.m[i].values();
        auto v = state.v[i].values();
        auto g = p.grad.values();
        auto w = p.value.values();
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g[j];
            v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g[j] * g[j];
            w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + h.eps);
        }
    }
}

double clip_gradients(const std::vector<ad::Parameter*>& params, double max_norm)
{
    double s = 0.0;
    for (auto* p : params)
        for (double g : p->grad.values()) s += g * g;
    const double n = std::sqrt(s);
    if (n > max_norm) {
        const double f = max_norm / n;
        for (auto* p : params)
            for (double& g : p->grad.values()) g *= f;
    }
    return n;
}

ad::Var nll_loss(flows::TraceCtx& ctx, const flows::FlowModel& model, const Tensor& batch, double lu_reg_weight,
                 std::optional<std::size_t> n_total, bool with_penalty)
{
    if (batch.rank() != 2 || batch.cols() != model.dim())
        throw DimensionError("nll_loss: batch must be n x " + std::to_string(model.dim()));
    const double n = static_cast<double>(n_total.value_or(batch.rows()));
    ad::Var loss = ad::scale(ad::sum(model.log_prob(ctx, ctx.c(batch))), -1.0 / n);
    if (with_penalty && lu_reg_weight > 0.0) loss = ad::add(loss, ad::scale(model.lu_penalty(ctx), lu_reg_weight));
    if (!std::isfinite(loss.value().item())) {
        std::ostringstream msg;
        msg << "nll_loss: non-finite loss " << loss.value().item() << " on a batch of " << batch.rows();
        throw NumericError(msg.str());
    }
    return loss;
}

double mean_nll(const flows::FlowModel& model, const Tensor& x)
{
    const Tensor lp = model.log_prob(x);
    double s = 0.0;
    for (double v : lp.values()) s += v;
    return -s / static_cast<double>(lp.size());
}

Tensor dequantize(const Tensor& pixels, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor out(pixels.shape());
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const double p = pixels[i];
        if (!(p >= 0.0 && p <= 255.0) || p != std::floor(p))
            throw ContractError("dequantize: pixel " + std::to_string(p) + " is not an integer in [0, 255]");
        out[i] = (p + u(rng)) / 256.0;
    }
    return out;
}

bool EarlyStopper::update(double val_nll)
{
    improved_ = val_nll < best_;
    if (improved_) {
        best_ = val_nll;
        best_epoch_ = epoch_;
        stale_ = 0;
    } else {
        ++stale_;
    }
    ++epoch_;
    return stale_ >= patience_;
}

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history)
{
    out << "epoch,train_nll,val_nll,log_det\n";
    out.precision(17);
    for (const auto& r : history) out << r.epoch << ',' << r.train_nll << ',' << r.val_nll << ',' << r.log_det << '\n';
}

void split_train_validation(const data::Dataset& data, double fraction, std::uint64_t seed, data::Dataset& train,
                            data::Dataset& validation)
{
    const std::size_t n = data.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed ^ 0x5eed5a11ULL);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::size_t n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    if (fraction > 0.0 && n >= 2) n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
    if (n < 2) n_val = 0;
    std::vector<std::size_t> vi(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> ti(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
    std::sort(vi.begin(), vi.end());
    std::sort(ti.begin(), ti.end());
    train = data.subset(ti);
    // with no held-out rows the training rows double as validation
    validation = n_val ? data.subset(vi) : train;
}

namespace {

std::vector<Tensor> snapshot(const std::vector<ad::Parameter*>& params)
{
    std::vector<Tensor> s;
    s.reserve(params.size());
    for (auto* p : params) s.push_back(p->value);
    return s;
}

void restore(const std::vector<ad::Parameter*>& params, const std::vector<Tensor>& s)
{
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = s[i];
}

Tensor rows(const Tensor& x, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end)
{
    Tensor out({end - begin, x.cols()});
    for (std::size_t i = begin; i < end; ++i) {
        const auto src = x.row(idx[i]);
        std::copy(src.begin(), src.end(), out.row(i - begin).begin());
    }
    return out;
}

struct ShardResult {
    double loss = 0.0;
    double nll = 0.0;
    std::vector<Tensor> grads;
    std::string error;
};

// Loss and gradients of one batch, split over `threads` contiguous shards.
// Shard results are reduced in shard order so the sum does not depend on
// thread scheduling.
bool batch_gradient(const flows::FlowModel& model, const std::vector<ad::Parameter*>& params, const Tensor& batch,
                    double lu_reg, std::size_t threads, double& loss, double& nll, std::string& error)
{
    const std::size_t n = batch.rows();
    const std::size_t shards = std::min(threads, n);
    std::vector<ShardResult> res(shards);
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    auto work = [&](std::size_t s) {
        const std::size_t b = n * s / shards, e = n * (s + 1) / shards;
        auto& r = res[s];
        try {
            ad::Tape tape;
            flows::TraceCtx ctx{tape};
            const Tensor part = shards == 1 ? batch : rows(batch, all, b, e);
            const ad::Var data_term = nll_loss(ctx, model, part, 0.0, n, false);
            r.nll = data_term.value().item();
            ad::Var total = data_term;
            if (s == 0 && lu_reg > 0.0) total = ad::add(total, ad::scale(model.lu_penalty(ctx), lu_reg));
            r.loss = total.value().item();
            tape.backward(total);
            for (auto* p : params) r.grads.push_back(tape.gradient(*p));
        } catch (const Error& ex) {
            r.error = ex.what();
        }
    };
    if (shards == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t s = 0; s < shards; ++s) pool.emplace_back(work, s);
        for (auto& t : pool) t.join();
    }
    loss = nll = 0.0;
    for (const auto& r : res)
        if (!r.error.empty()) {
            error = r.error;
            return false;
        }
    for (auto* p : params) p->zero_grad();
    for (const auto& r : res) {
        loss += r.loss;
        nll += r.nll;
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto g = params[i]->grad.values();
            const auto src = r.grads[i].values();
            for (std::size_t j = 0; j < g.size(); ++j) g[j] += src[j];
        }
    }
    if (!std::isfinite(loss)) {
        error = "non-finite loss";
        return false;
    }
    for (auto* p : params)
        if (!num::all_finite(p->grad)) {
            error = "non-finite gradient for " + p->name;
            return false;
        }
    return true;
}

double safe_log_det(const flows::FlowModel& model)
{
    try {
        return model.log_det_constant();
    } catch (const ContractError&) {
        return std::nan("");
    }
}

} // namespace

TrainResult train(flows::FlowModel& model, const data::Dataset& dataset, const TrainConfig& config)
{
    config.validate();
    if (dataset.empty()) throw ContractError("train: dataset is empty");
    if (dataset.dim() != model.dim())
        throw DimensionError("train: dataset has dimension " + std::to_string(dataset.dim()) + ", model expects " +
                             std::to_string(model.dim()));

    data::Dataset tr, va;
    split_train_validation(dataset, config.validation_fraction, config.seed, tr, va);
    std::mt19937_64 rng(config.seed);
    Tensor val_x = va.samples;
    if (config.dequantize) {
        std::mt19937_64 vrng(config.seed + 1);
        val_x = dequantize(va.samples, vrng);
    }

    const auto params = model.parameters();
    TrainResult result;
    result.initial_val_nll = mean_nll(model, val_x);
    result.best_val_nll = result.initial_val_nll;
    auto best = snapshot(params);
    if (config.max_epochs == 0) return result;

    AdamState adam;
    EarlyStopper stopper(config.patience);
    std::vector<std::size_t> order(tr.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
        const Tensor train_x = config.dequantize ? dequantize(tr.samples, rng) : tr.samples;
        std::shuffle(order.begin(), order.end(), rng);
        double nll_sum = 0.0;
        std::size_t counted = 0;
        for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
            const std::size_t e = std::min(order.size(), b + config.batch_size);
            const Tensor batch = rows(train_x, order, b, e);
            double loss = 0.0, nll = 0.0;
            std::string error;
            if (!batch_gradient(model, params, batch, config.lu_reg_weight, config.threads, loss, nll, error)) {
                ++result.skipped_steps;
                if (result.message.empty()) result.message = "skipped step in epoch " + std::to_string(epoch) + ": " + error;
                continue;
            }
            nll_sum += nll * static_cast<double>(e - b);
            counted += e - b;
            clip_gradients(params, config.clip_norm);
            adam_step(params, adam, config.learning_rate);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_nll = counted ? nll_sum / static_cast<double>(counted) : std::nan("");
        rec.val_nll = mean_nll(model, val_x);
        rec.log_det = safe_log_det(model);
        result.history.push_back(rec);

        if (!std::isfinite(rec.val_nll)) {
            result.diverged = true;
            result.message = "validation NLL became non-finite at epoch " + std::to_string(epoch);
            break;
        }
        const bool stop = stopper.update(rec.val_nll);
        if (rec.val_nll < result.best_val_nll) {
            result.best_val_nll = rec.val_nll;
            result.best_epoch = epoch;
            best = snapshot(params);
        }
        if (stop) break;
    }
    restore(params, best);
    return result;
}

ad::Var cross_entropy(const ad::Var& logits, const std::vector<int>& labels)
{
    const Tensor& z = logits.value();
    if (z.rank() != 2 || z.rows() != labels.size())
        throw DimensionError("cross_entropy: need one label per logit row");
    const std::size_t n = z.rows(), k = z.cols();
    Tensor prob({n, k});
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
            throw ContractError("cross_entropy: label out of range");
        const auto r = z.row(i);
        const double mx = *std::max_element(r.begin(), r.end());
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += std::exp(r[j] - mx);
        const double lse = mx + std::log(s);
        for (std::size_t j = 0; j < k; ++j) prob(i, j) = std::exp(r[j] - lse);
        loss += lse - r[static_cast<std::size_t>(labels[i])];
    }
    loss /= static_cast<double>(n);
    return logits.tape().record(Tensor::scalar(loss), {logits},
                                [prob, labels, n, k](const Tensor& g, const std::vector<Tensor*>& pg) {
                                    if (!pg[0]) return;
                                    const double f = g.item() / static_cast<double>(n);
                                    for (std::size_t i = 0; i < n; ++i)
                                        for (std::size_t j = 0; j < k; ++j) {
                                            const double t = static_cast<std::size_t>(labels[i]) == j ? 1.0 : 0.0;
                                            (*pg[0])(i, j) += f * (prob(i, j) - t);
                                        }
                                });
}

ClassifierResult train_classifier(flows::ReluNetwork& net, const data::Dataset& dataset, const TrainConfig& config)
{
    config.validate();
    if (dataset.empty() || !dataset.labels) throw ContractError("train_classifier: need a nonempty labelled dataset");
    if (dataset.dim() != net.in_dim()) throw DimensionError("train_classifier: input dimension mismatch");
    const auto params = net.parameters();
    AdamState adam;
    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    ClassifierResult res;
    for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
            const std::size_t e = std::min(order.size(), b + config.batch_size);
            const Tensor x = rows(dataset.samples, order, b, e);
            std::vector<int> y;
            for (std::size_t i = b; i < e; ++i) y.push_back((*dataset.labels)[order[i]]);
            ad::Tape tape;
            flows::TraceCtx ctx{tape};
            const ad::Var loss = cross_entropy(net.apply(ctx, ctx.c(x)), y);
            tape.backward(loss);
            for (auto* p : params) p->zero_grad();
            tape.accumulate(params);
            clip_gradients(params, config.clip_norm);
            adam_step(params, adam, config.learning_rate);
            total += loss.value().item() * static_cast<double>(e - b);
        }
        res.train_loss.push_back(total / static_cast<double>(order.size()));
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i)
        correct += static_cast<int>(net.predict(dataset.samples.row(i))) == (*dataset.labels)[i];
    res.accuracy = static_cast<double>(correct) / static_cast<double>(dataset.size());
    return res;
}

} // namespace udlflow::train
