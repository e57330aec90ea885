#include "udlflow/numerics/autodiff.hpp"

#include "udlflow/error.hpp"

#include <cmath>

namespace udlflow::ad {

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Tensor value)
{
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::param(const Parameter& p)
{
    if (auto it = bound_.find(&p); it != bound_.end()) return Var(this, it->second);
    Node n;
    n.value = p.value;
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    bound_.emplace(&p, nodes_.size() - 1);
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> parents, Backward backward)
{
    Node n;
    n.value = std::move(value);
    n.parents.reserve(parents.size());
    for (const Var& p : parents) {
        if (&p.tape() != this) throw ContractError("tape: parent belongs to a different tape");
        n.parents.push_back(p.id());
        n.requires_grad = n.requires_grad || nodes_[p.id()].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

void Tape::backward(const Var& loss)
{
    if (&loss.tape() != this) throw ContractError("backward: loss belongs to a different tape");
    if (loss.value().size() != 1) throw ContractError("backward: loss must be a scalar, got shape " +
                                                      num::shape_string(loss.shape()));
    for (Node& n : nodes_) {
        n.has_grad = false;
        n.grad = Tensor();
    }
    Node& root = nodes_[loss.id()];
    root.grad = Tensor(root.value.shape(), 1.0);
    root.has_grad = true;
    std::vector<Tensor*> pg;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.has_grad || !n.backward) continue;
        pg.assign(n.parents.size(), nullptr);
        for (std::size_t i = 0; i < n.parents.size(); ++i) {
            Node& p = nodes_[n.parents[i]];
            if (!p.requires_grad) continue;
            if (!p.has_grad) {
                p.grad = Tensor(p.value.shape());
                p.has_grad = true;
            }
            pg[i] = &p.grad;
        }
        n.backward(n.grad, pg);
    }
}

Tensor Tape::gradient(const Parameter& p) const
{
    auto it = bound_.find(&p);
    if (it == bound_.end() || !nodes_[it->second].has_grad) return Tensor(p.value.shape());
    return nodes_[it->second].grad;
}

void Tape::accumulate(const std::vector<Parameter*>& params) const
{
    for (Parameter* p : params) {
        auto it = bound_.find(p);
        if (it == bound_.end() || !nodes_[it->second].has_grad) continue;
        const Tensor& g = nodes_[it->second].grad;
        if (p->grad.shape() != p->value.shape()) p->grad = Tensor(p->value.shape());
        for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
    }
}

namespace {

void axpy(Tensor& dst, const Tensor& src, double a = 1.0)
{
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += a * src[i];
}

} // namespace

Var matmul(const Var& a, const Var& b)
{
    Tape& t = a.tape();
    return t.record(num::matmul(a.value(), b.value()), {a, b},
                    [a, b](const Tensor& g, const std::vector<Tensor*>& pg) {
                        if (pg[0]) axpy(*pg[0], num::matmul_nt(g, b.value()));
                        if (pg[1]) axpy(*pg[1], num::matmul(num::transpose(a.value()), g));
                    });
}

Var matmul_nt(const Var& a, const Var& b)
{
    Tape& t = a.tape();
    return t.record(num::matmul_nt(a.value(), b.value()), {a, b},
                    [a, b](const Tensor& g, const std::vector<Tensor*>& pg) {
                        if (pg[0]) axpy(*pg[0], num::matmul(g, b.value()));
                        if (pg[1]) axpy(*pg[1], num::matmul(num::transpose(g), a.value()));
                    });
}

Var add(const Var& a, const Var& b)
{
    return a.tape().record(num::add(a.value(), b.value()), {a, b},
                           [](const Tensor& g, const std::vector<Tensor*>& pg) {
                               if (pg[0]) axpy(*pg[0], g);
                               if (pg[1]) axpy(*pg[1], g);
                           });
}

Var sub(const Var& a, const Var& b)
{
    return a.tape().record(num::sub(a.value(), b.value()), {a, b},
                           [](const Tensor& g, const std::vector<Tensor*>& pg) {
                               if (pg[0]) axpy(*pg[0], g);
                               if (pg[1]) axpy(*pg[1], g, -1.0);
                           });
}

Var mul(const Var& a, const Var& b)
{
    return a.tape().record(num::mul(a.value(), b.value()), {a, b},
                           [a, b](const Tensor& g, const std::vector<Tensor*>& pg) {
                               if (pg[0]) axpy(*pg[0], num::mul(g, b.value()));
                               if (pg[1]) axpy(*pg[1], num::mul(g, a.value()));
                           });
}

Var scale(const Var& a, double s)
{
    return a.tape().record(num::scale(a.value(), s), {a},
                           [s](const Tensor& g, const std::vector<Tensor*>& pg) { axpy(*pg[0], g, s); });
}

Var add_scalar(const Var& x, const Var& s)
{
    return x.tape().record(num::add_scalar(x.value(), s.value()), {x, s},
                           [](const Tensor& g, const std::vector<Tensor*>& pg) {
                               if (pg[0]) axpy(*pg[0], g);
                               if (pg[1]) (*pg[1])[0] += num::sum(g).item();
                           });
}

Var add_row(const Var& x, const Var& row)
{
    return x.tape().record(num::add_row(x.value(), row.value()), {x, row},
                           [](const Tensor& g, const std::vector<Tensor*>& pg) {
                               if (pg[0]) axpy(*pg[0], g);
                               if (pg[1]) {
                                   const std::size_t n = g.rows(), d = g.cols();
                                   for (std::size_t i = 0; i < n; ++i)
                                       for (std::size_t j = 0; j < d; ++j) (*pg[1])[j] += g(i, j);
                               }
                           });
}

Var mul_row(const Var& x, const Tensor& row)
{
    return x.tape().record(num::mul_row(x.value(), row), {x},
                           [row](const Tensor& g, const std::vector<Tensor*>& pg) {
                               axpy(*pg[0], num::mul_row(g, row));
                           });
}

Var mask_mul(const Var& x, const Tensor& mask)
{
    return x.tape().record(num::mul(x.value(), mask), {x},
                           [mask](const Tensor& g, const std::vector<Tensor*>& pg) {
                               axpy(*pg[0], num::mul(g, mask));
                           });
}

Var relu(const Var& x)
{
    return x.tape().record(num::relu(x.value()), {x}, [x](const Tensor& g, const std::vector<Tensor*>& pg) {
        const Tensor& v = x.value();
        Tensor& d = *pg[0];
        for (std::size_t i = 0; i < g.size(); ++i)
            if (v[i] > 0.0) d[i] += g[i];
    });
}

Var exp(const Var& x)
{
    Tensor out = num::exp(x.value());
    Tensor saved = out;
    return x.tape().record(std::move(out), {x}, [saved](const Tensor& g, const std::vector<Tensor*>& pg) {
        axpy(*pg[0], num::mul(g, saved));
    });
}

Var clamp(const Var& x, double lo, double hi)
{
    return x.tape().record(num::clamp(x.value(), lo, hi), {x},
                           [x, lo, hi](const Tensor& g, const std::vector<Tensor*>& pg) {
                               const Tensor& v = x.value();
                               for (std::size_t i = 0; i < g.size(); ++i)
                                   if (v[i] >= lo && v[i] <= hi) (*pg[0])[i] += g[i];
                           });
}

Var square(const Var& x)
{
    return x.tape().record(num::square(x.value()), {x}, [x](const Tensor& g, const std::vector<Tensor*>& pg) {
        const Tensor& v = x.value();
        for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += 2.0 * v[i] * g[i];
    });
}

Var sum(const Var& x)
{
    return x.tape().record(num::sum(x.value()), {x}, [](const Tensor& g, const std::vector<Tensor*>& pg) {
        const double s = g.item();
        for (double& v : pg[0]->storage()) v += s;
    });
}

Var mean(const Var& x)
{
    const double n = static_cast<double>(x.value().size());
    return x.tape().record(num::mean(x.value()), {x}, [n](const Tensor& g, const std::vector<Tensor*>& pg) {
        const double s = g.item() / n;
        for (double& v : pg[0]->storage()) v += s;
    });
}

Var row_sum(const Var& x)
{
    return x.tape().record(num::row_sum(x.value()), {x}, [](const Tensor& g, const std::vector<Tensor*>& pg) {
        Tensor& d = *pg[0];
        const std::size_t n = d.rows(), c = d.cols();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) d(i, j) += g[i];
    });
}

Var reshape(const Var& x, Shape shape)
{
    return x.tape().record(num::reshape(x.value(), std::move(shape)), {x},
                           [](const Tensor& g, const std::vector<Tensor*>& pg) {
                               for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
                           });
}

Var diag_embed(const Var& v)
{
    return v.tape().record(num::diag_embed(v.value()), {v}, [](const Tensor& g, const std::vector<Tensor*>& pg) {
        const std::size_t n = g.rows();
        for (std::size_t i = 0; i < n; ++i) (*pg[0])[i] += g(i, i);
    });
}

// X solves X M^T = Y row-wise. With gY = G M^{-1} (a transposed triangular
// solve), dM = -gY^T X restricted to the stored triangle.
Var tri_solve(const Var& m, const Var& y, bool lower, bool unit_diagonal)
{
    Tensor x = num::tri_solve(m.value(), y.value(), lower, unit_diagonal);
    Tensor saved = x;
    return m.tape().record(std::move(x), {m, y},
                    [m, lower, unit_diagonal, saved](const Tensor& g, const std::vector<Tensor*>& pg) {
                        const Tensor mt = num::transpose(m.value());
                        const Tensor gy = num::tri_solve(mt, g, !lower, unit_diagonal);
                        if (pg[1]) axpy(*pg[1], gy);
                        if (pg[0]) {
                            const Tensor& xv = saved;
                            const Tensor gm = num::matmul(num::transpose(gy), xv);
                            const std::size_t d = gm.rows();
                            for (std::size_t i = 0; i < d; ++i)
                                for (std::size_t j = 0; j < d; ++j) {
                                    const bool in_triangle = lower ? (j < i || (j == i && !unit_diagonal))
                                                                   : (j > i || (j == i && !unit_diagonal));
                                    if (in_triangle) (*pg[0])(i, j) -= gm(i, j);
                                }
                        }
                    });
}

Var conv2d(const Var& x, const Var& kernel, const Var& bias, const num::ConvGeometry& geo)
{
    return x.tape().record(
        num::conv2d(x.value(), kernel.value(), bias.value(), geo), {x, kernel, bias},
        [x, kernel, geo](const Tensor& g, const std::vector<Tensor*>& pg) {
            const Tensor& in = x.value();
            const Tensor& k = kernel.value();
            const std::size_t n = in.rows();
            const auto h = static_cast<long>(geo.height), w = static_cast<long>(geo.width);
            const auto ks = static_cast<long>(geo.kernel), pad = ks / 2;
            const std::size_t ci = geo.in_channels, co = geo.out_channels;
            for (std::size_t s = 0; s < n; ++s) {
                const double* ip = &in(s, 0);
                const double* gp = &g(s, 0);
                for (long py = 0; py < h; ++py)
                    for (long px = 0; px < w; ++px) {
                        const double* go = gp + (py * w + px) * static_cast<long>(co);
                        if (pg[2])
                            for (std::size_t c = 0; c < co; ++c) (*pg[2])[c] += go[c];
                        for (long ky = 0; ky < ks; ++ky) {
                            const long iy = py + ky - pad;
                            if (iy < 0 || iy >= h) continue;
                            for (long kx = 0; kx < ks; ++kx) {
                                const long ix = px + kx - pad;
                                if (ix < 0 || ix >= w) continue;
                                const std::size_t in_off = static_cast<std::size_t>(iy * w + ix) * ci;
                                const std::size_t k_off = static_cast<std::size_t>(ky * ks + kx) * ci * co;
                                for (std::size_t a = 0; a < ci; ++a) {
                                    double acc_in = 0.0;
                                    for (std::size_t c = 0; c < co; ++c) {
                                        acc_in += go[c] * k[k_off + a * co + c];
                                        if (pg[1]) (*pg[1])[k_off + a * co + c] += ip[in_off + a] * go[c];
                                    }
                                    if (pg[0]) (*pg[0])(s, in_off + a) += acc_in;
                                }
                            }
                        }
                    }
            }
        });
}

} // namespace udlflow::ad
