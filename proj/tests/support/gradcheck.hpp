#pragma once

#include "udlflow/numerics/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>

namespace testsupport {

using udlflow::ad::Parameter;
using udlflow::ad::Tape;
using udlflow::ad::Var;
using udlflow::num::Tensor;

using ScalarFn = std::function<Var(Tape&, const Var&)>;

struct GradReport {
    double worst = 0.0; // max |a - n| / max(1e-6, |a|, |n|)
    std::size_t index = 0;
};

// Central differences (h = 1e-5) against the tape gradient of f at x.
inline GradReport gradient_check(const ScalarFn& f, const Tensor& x, double h = 1e-5)
{
    Parameter p("x", x);
    Tape tape;
    Var loss = f(tape, tape.param(p));
    tape.backward(loss);
    const Tensor analytic = tape.gradient(p);

    GradReport rep;
    Tensor xp = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = xp[i];
        xp[i] = orig + h;
        Tape t1;
        const double fp = f(t1, t1.constant(xp)).value().item();
        xp[i] = orig - h;
        Tape t2;
        const double fm = f(t2, t2.constant(xp)).value().item();
        xp[i] = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        const double denom = std::max({1e-6, std::abs(numeric), std::abs(analytic[i])});
        const double rel = std::abs(numeric - analytic[i]) / denom;
        // Tiny absolute differences on near-zero gradients are rounding noise.
        const double err = std::abs(numeric - analytic[i]) < 1e-8 ? 0.0 : rel;
        if (err > rep.worst) {
            rep.worst = err;
            rep.index = i;
        }
    }
    return rep;
}

inline Tensor random_tensor(udlflow::num::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0)
{
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> u(lo, hi);
    for (double& v : t.values()) v = u(rng);
    return t;
}

} // namespace testsupport
