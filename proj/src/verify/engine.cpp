#include "udlflow/verify/engine.hpp"

#include "udlflow/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <thread>

namespace udlflow::verify {

std::string to_string(Status s)
{
    switch (s) {
    case Status::certified: return "certified";
    case Status::falsified: return "falsified";
    case Status::unknown: return "unknown";
    }
    return "?";
}

void VerifyOptions::validate() const
{
    if (!(slack >= 0.0) || !std::isfinite(slack)) throw ContractError("verify: slack must be finite and >= 0");
    if (threads == 0) throw ContractError("verify: threads must be >= 1");
    if (batch == 0) throw ContractError("verify: batch must be >= 1");
}

namespace {

std::uint64_t splitmix(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

struct Work {
    IntervalBox box;
    std::uint64_t id = 0;
};

enum class Outcome { safe, violated, split };

struct NodeResult {
    Outcome outcome = Outcome::split;
    std::vector<double> counterexample;
};

class Engine {
public:
    Engine(const VerificationTask& task, const VerifyOptions& o)
        : task_(task), opt_(o), g_(task.graph.fused()), dom_(task.domain())
    {
        y_ = g_.output("y");
        if (task.property.kind == PropertyKind::global_robustness) yp_ = g_.output("yp");
        classes_ = g_.node(y_).dim;
        if (task.property.kind != PropertyKind::global_robustness && task.property.target >= classes_)
            throw ContractError("verify: target class out of range");
        if (dom_.box.dim() != g_.input_dim()) throw DimensionError("verify: domain does not match the graph input");
    }

    const Domain& domain() const { return dom_; }

    NodeResult process(const Work& w) const
    {
        if (dom_.has_cut() && min_l1(w.box) > dom_.cut_radius) return {Outcome::safe, {}};
        const auto boxes = interval_forward(g_, w.box);
        if (certified(boxes)) return {Outcome::safe, {}};

        bool point = true;
        for (std::size_t i = 0; i < w.box.dim(); ++i) point = point && w.box.width(i) == 0.0;
        if (point) {
            if (dom_.contains(w.box.lower) && task_.violates(w.box.lower)) return {Outcome::violated, w.box.lower};
            return {Outcome::safe, {}};
        }
        if (auto cex = falsify(w)) return {Outcome::violated, std::move(*cex)};
        return {Outcome::split, {}};
    }

private:
    double min_l1(const IntervalBox& b) const
    {
        double s = 0.0;
        for (std::size_t i = 0; i < dom_.cut_dims; ++i) s += std::max({0.0, b.lower[i], -b.upper[i]});
        return s;
    }

    double lower_margin(const std::vector<IntervalBox>& boxes, std::size_t out, std::size_t a, std::size_t b) const
    {
        std::vector<double> c(classes_, 0.0);
        c[a] = 1.0;
        c[b] = -1.0;
        return linear_bounds(g_, boxes, out, c).first;
    }

    bool dominates(const std::vector<IntervalBox>& boxes, std::size_t out, std::size_t t) const
    {
        for (std::size_t j = 0; j < classes_; ++j)
            if (j != t && !(lower_margin(boxes, out, t, j) > opt_.slack)) return false;
        return true;
    }

    bool certified(const std::vector<IntervalBox>& boxes) const
    {
        const Property& p = task_.property;
        switch (p.kind) {
        case PropertyKind::local_robustness: return dominates(boxes, y_, p.target);
        case PropertyKind::global_robustness:
            for (std::size_t t = 0; t < classes_; ++t)
                if (dominates(boxes, y_, t) && dominates(boxes, yp_, t)) return true;
            return false;
        case PropertyKind::confidence_bound: {
            for (std::size_t j = 0; j < classes_; ++j)
                if (j != p.target && lower_margin(boxes, y_, j, p.target) > opt_.slack) return true;
            std::vector<double> c(classes_, -1.0 / static_cast<double>(classes_));
            c[p.target] = 1.0;
            return linear_bounds(g_, boxes, y_, c).second - p.tau < -opt_.slack;
        }
        }
        return false;
    }

    // Nonnegative exactly on (candidate) violations.
    double score(std::span<const double> input) const
    {
        const auto v = g_.evaluate(input);
        const auto& y = v[y_];
        const Property& p = task_.property;
        auto worst = [&](const std::vector<double>& out, std::size_t t) {
            double m = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < out.size(); ++j)
                if (j != t) m = std::max(m, out[j] - out[t]);
            return m;
        };
        switch (p.kind) {
        case PropertyKind::local_robustness: return worst(y, p.target);
        case PropertyKind::global_robustness: {
            const std::size_t t = flows::argmax(y);
            return std::max(worst(y, t), worst(v[yp_], t));
        }
        case PropertyKind::confidence_bound: return std::min(-worst(y, p.target), confidence(y, p.target) - p.tau);
        }
        return -1.0;
    }

    std::optional<std::vector<double>> falsify(const Work& w) const
    {
        std::mt19937_64 rng(splitmix(opt_.seed ^ splitmix(w.id)));
        const std::size_t n = w.box.dim();
        std::vector<double> best;
        double best_score = -std::numeric_limits<double>::infinity();
        auto consider = [&](std::vector<double> p) -> bool {
            if (!dom_.contains(p)) return false;
            const double s = score(p);
            if (s >= 0.0 && task_.violates(p)) {
                best = std::move(p);
                return true;
            }
            if (s > best_score) {
                best_score = s;
                best = std::move(p);
            }
            return false;
        };
        if (consider(w.box.midpoint())) return best;
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (std::size_t k = 1; k < opt_.samples; ++k) {
            std::vector<double> p(n);
            for (std::size_t i = 0; i < n; ++i) p[i] = w.box.lower[i] + u(rng) * w.box.width(i);
            if (consider(std::move(p))) return best;
        }
        if (best.empty()) return std::nullopt;

        std::vector<double> step(n);
        for (std::size_t i = 0; i < n; ++i) step[i] = w.box.width(i) / 4.0;
        std::vector<double> cur = best;
        double cur_score = best_score;
        for (std::size_t s = 0, i = 0; s < opt_.descent_steps; ++s, i = (i + 1) % n) {
            if (step[i] == 0.0) continue;
            bool moved = false;
            for (double dir : {1.0, -1.0}) {
                std::vector<double> p = cur;
                p[i] = std::clamp(p[i] + dir * step[i], w.box.lower[i], w.box.upper[i]);
                if (p[i] == cur[i] || !dom_.contains(p)) continue;
                const double sc = score(p);
                if (sc > cur_score) {
                    cur = std::move(p);
                    cur_score = sc;
                    moved = true;
                    break;
                }
            }
            if (!moved) step[i] /= 2.0;
            else if (cur_score >= 0.0 && task_.violates(cur)) return cur;
        }
        return std::nullopt;
    }

    const VerificationTask& task_;
    VerifyOptions opt_;
    Graph g_;
    Domain dom_;
    std::size_t y_ = 0, yp_ = 0, classes_ = 0;
};

} // namespace

Verdict verify(const VerificationTask& task, const VerifyOptions& options)
{
    options.validate();
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    auto finish = [&](Status s, std::string msg) {
        v.status = s;
        v.message = std::move(msg);
        v.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return v;
    };
    if (options.budget <= 0) return finish(Status::unknown, "no budget");

    const Engine engine(task, options);
    std::vector<Work> stack{{engine.domain().box, 1}};
    std::uint64_t next_id = 2;
    const auto budget = static_cast<std::size_t>(options.budget);

    while (!stack.empty()) {
        if (v.nodes >= budget) return finish(Status::unknown, "budget exhausted");
        const std::size_t k = std::min({options.batch, stack.size(), budget - v.nodes});
        std::vector<Work> batch(std::make_move_iterator(stack.end() - static_cast<std::ptrdiff_t>(k)),
                                std::make_move_iterator(stack.end()));
        stack.resize(stack.size() - k);
        std::vector<NodeResult> results(k);

        const std::size_t nt = std::min(options.threads, k);
        if (nt <= 1) {
            for (std::size_t i = 0; i < k; ++i) results[i] = engine.process(batch[i]);
        } else {
            std::vector<std::thread> pool;
            std::vector<std::exception_ptr> errors(nt);
            for (std::size_t t = 0; t < nt; ++t)
                pool.emplace_back([&, t] {
                    try {
                        for (std::size_t i = t; i < k; i += nt) results[i] = engine.process(batch[i]);
                    } catch (...) {
                        errors[t] = std::current_exception();
                    }
                });
            for (auto& th : pool) th.join();
            for (auto& e : errors)
                if (e) std::rethrow_exception(e);
        }
        v.nodes += k;

        for (std::size_t i = 0; i < k; ++i)
            if (results[i].outcome == Outcome::violated) {
                v.counterexample = std::move(results[i].counterexample);
                return finish(Status::falsified, "counterexample found");
            }
        for (std::size_t i = 0; i < k; ++i) {
            if (results[i].outcome != Outcome::split) continue;
            auto [a, b] = batch[i].box.split(batch[i].box.widest());
            stack.push_back({std::move(a), next_id++});
            stack.push_back({std::move(b), next_id++});
        }
    }
    return finish(Status::certified, "all nodes pruned");
}

Verdict verify_local(const flows::ReluNetwork& net, std::vector<double> x, double epsilon,
                     const VerifyOptions& options)
{
    return verify(make_local_task(net, std::move(x), epsilon), options);
}

} // namespace udlflow::verify
