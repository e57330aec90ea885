#pragma once

#include "udlflow/flows/flow_model.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace testsupport {

using udlflow::num::Tensor;

// Perturbs every parameter so that no layer is the identity. Matrix and
// kernel noise is scaled by the fan-in so that deep stacks stay well scaled.
inline void randomize(udlflow::flows::FlowModel& model, std::uint64_t seed, double scale = 0.3)
{
    std::mt19937_64 rng(seed);
    for (auto* p : model.parameters()) {
        if (p == &model.base().norm_dist().parameter()) continue;
        double s = scale;
        if (p->value.rank() == 2) s /= std::sqrt(static_cast<double>(p->value.cols()));
        else if (p->value.size() > 64) s /= std::sqrt(static_cast<double>(p->value.size()) / 8.0);
        std::normal_distribution<double> n(0.0, s);
        for (double& v : p->value.values()) v += n(rng);
    }
}

inline Tensor row_tensor(const std::vector<double>& v) { return Tensor({1, v.size()}, v); }

// Central-difference Jacobian of a row map at x.
inline Eigen::MatrixXd numerical_jacobian(const std::function<Tensor(const Tensor&)>& f, const std::vector<double>& x,
                                          double h = 1e-6)
{
    const std::size_t d = x.size();
    const std::size_t m = f(row_tensor(x)).cols();
    Eigen::MatrixXd j(m, d);
    for (std::size_t c = 0; c < d; ++c) {
        auto xp = x, xm = x;
        xp[c] += h;
        xm[c] -= h;
        const Tensor fp = f(row_tensor(xp)), fm = f(row_tensor(xm));
        for (std::size_t r = 0; r < m; ++r) j(r, c) = (fp(0, r) - fm(0, r)) / (2.0 * h);
    }
    return j;
}

inline double log_abs_det(const Eigen::MatrixXd& m) { return std::log(std::abs(m.fullPivLu().determinant())); }

inline Eigen::MatrixXd to_eigen(const Tensor& t)
{
    Eigen::MatrixXd m(t.rows(), t.cols());
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) m(i, j) = t(i, j);
    return m;
}

inline std::vector<double> random_point(std::size_t d, std::mt19937_64& rng, double s = 1.0)
{
    std::normal_distribution<double> n(0.0, s);
    std::vector<double> v(d);
    for (double& e : v) e = n(rng);
    return v;
}

} // namespace testsupport
