#include "udlflow/numerics/tensor.hpp"

#include "udlflow/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace udlflow::num {

std::size_t shape_size(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data))
{
    if (shape_size(shape_) != data_.size())
        throw DimensionError("tensor shape " + shape_string(shape_) + " does not match " +
                             std::to_string(data_.size()) + " values");
}

Tensor Tensor::vector(std::vector<double> values)
{
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
{
    return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows)
{
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::identity(std::size_t n)
{
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

std::size_t Tensor::dim(std::size_t axis) const
{
    if (axis >= shape_.size()) throw DimensionError("axis out of range for shape " + shape_string(shape_));
    return shape_[axis];
}

std::size_t Tensor::rows() const
{
    if (rank() != 2) throw DimensionError("expected a matrix, got shape " + shape_string(shape_));
    return shape_[0];
}

std::size_t Tensor::cols() const
{
    if (rank() != 2) throw DimensionError("expected a matrix, got shape " + shape_string(shape_));
    return shape_[1];
}

std::span<double> Tensor::row(std::size_t r)
{
    const std::size_t c = cols();
    return std::span<double>(data_).subspan(r * c, c);
}

std::span<const double> Tensor::row(std::size_t r) const
{
    const std::size_t c = cols();
    return std::span<const double>(data_).subspan(r * c, c);
}

double Tensor::item() const
{
    if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const
{
    if (shape_size(shape) != data_.size())
        throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool all_finite(const Tensor& t)
{
    return std::all_of(t.storage().begin(), t.storage().end(), [](double v) { return std::isfinite(v); });
}

void check_finite(const Tensor& t, const std::string& what)
{
    if (!all_finite(t)) throw NumericError("non-finite value in " + what);
}

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op)
{
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
}

template <class F>
Tensor map(const Tensor& x, F f)
{
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    return out;
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b)
{
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    if (b.rows() != k)
        throw DimensionError("matmul: inner dimensions " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        double* o = &out(i, 0);
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a(i, p);
            if (av == 0.0) continue;
            const double* br = &b(p, 0);
            for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
        }
    }
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b)
{
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    if (b.cols() != k)
        throw DimensionError("matmul_nt: inner dimensions " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()) + "^T");
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        const double* ar = &a(i, 0);
        for (std::size_t j = 0; j < m; ++j) {
            const double* br = &b(j, 0);
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
            out(i, j) = s;
        }
    }
    return out;
}

Tensor transpose(const Tensor& a)
{
    const std::size_t r = a.rows(), c = a.cols();
    Tensor out({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out(j, i) = a(i, j);
    return out;
}

Tensor add(const Tensor& a, const Tensor& b)
{
    require_same(a, b, "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b)
{
    require_same(a, b, "sub");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b)
{
    require_same(a, b, "mul");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

Tensor mask_mul(const Tensor& x, const Tensor& mask) { return mul(x, mask); }

Tensor scale(const Tensor& a, double s)
{
    return map(a, [s](double v) { return v * s; });
}

Tensor add_scalar(const Tensor& x, const Tensor& s)
{
    const double v = s.item();
    return map(x, [v](double e) { return e + v; });
}

Tensor add_row(const Tensor& x, const Tensor& row)
{
    const std::size_t n = x.rows(), d = x.cols();
    if (row.size() != d) throw DimensionError("add_row: row of size " + std::to_string(row.size()) + " vs " + std::to_string(d));
    Tensor out(x.shape());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out(i, j) = x(i, j) + row[j];
    return out;
}

Tensor mul_row(const Tensor& x, const Tensor& row)
{
    const std::size_t n = x.rows(), d = x.cols();
    if (row.size() != d) throw DimensionError("mul_row: row of size " + std::to_string(row.size()) + " vs " + std::to_string(d));
    Tensor out(x.shape());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out(i, j) = x(i, j) * row[j];
    return out;
}

Tensor relu(const Tensor& x)
{
    return map(x, [](double v) { return v > 0.0 ? v : 0.0; });
}

Tensor exp(const Tensor& x)
{
    return map(x, [](double v) { return std::exp(v); });
}

Tensor log(const Tensor& x)
{
    return map(x, [](double v) { return std::log(v); });
}

Tensor clamp(const Tensor& x, double lo, double hi)
{
    return map(x, [lo, hi](double v) { return std::clamp(v, lo, hi); });
}

Tensor square(const Tensor& x)
{
    return map(x, [](double v) { return v * v; });
}

Tensor sum(const Tensor& x)
{
    double s = 0.0;
    for (double v : x.storage()) s += v;
    return Tensor::scalar(s);
}

Tensor mean(const Tensor& x)
{
    if (x.empty()) throw DimensionError("mean of empty tensor");
    return Tensor::scalar(sum(x).item() / static_cast<double>(x.size()));
}

Tensor row_sum(const Tensor& x)
{
    const std::size_t n = x.rows(), d = x.cols();
    Tensor out({n});
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += x(i, j);
        out[i] = s;
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) { return x.reshaped(std::move(shape)); }

Tensor diag_embed(const Tensor& v)
{
    const std::size_t n = v.size();
    Tensor out({n, n});
    for (std::size_t i = 0; i < n; ++i) out(i, i) = v[i];
    return out;
}

Tensor tri_solve(const Tensor& m, const Tensor& y, bool lower, bool unit_diagonal)
{
    const std::size_t d = m.rows();
    if (m.cols() != d) throw DimensionError("tri_solve: matrix not square " + shape_string(m.shape()));
    if (y.cols() != d) throw DimensionError("tri_solve: rhs shape " + shape_string(y.shape()));
    const std::size_t n = y.rows();
    Tensor x(y.shape());
    for (std::size_t r = 0; r < n; ++r) {
        const double* yr = &y(r, 0);
        double* xr = &x(r, 0);
        if (lower) {
            for (std::size_t i = 0; i < d; ++i) {
                double s = yr[i];
                for (std::size_t j = 0; j < i; ++j) s -= m(i, j) * xr[j];
                xr[i] = unit_diagonal ? s : s / m(i, i);
            }
        } else {
            for (std::size_t ii = d; ii-- > 0;) {
                double s = yr[ii];
                for (std::size_t j = ii + 1; j < d; ++j) s -= m(ii, j) * xr[j];
                xr[ii] = unit_diagonal ? s : s / m(ii, ii);
            }
        }
    }
    return x;
}

namespace {

void check_conv(const Tensor& x, const Tensor& kernel, const Tensor& bias, const ConvGeometry& g)
{
    if (g.kernel % 2 == 0) throw DimensionError("conv2d: kernel size must be odd");
    if (x.cols() != g.height * g.width * g.in_channels)
        throw DimensionError("conv2d: input width " + std::to_string(x.cols()) + " does not match geometry");
    if (kernel.size() != g.kernel * g.kernel * g.in_channels * g.out_channels)
        throw DimensionError("conv2d: kernel size mismatch");
    if (bias.size() != g.out_channels) throw DimensionError("conv2d: bias size mismatch");
}

} // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, const ConvGeometry& g)
{
    check_conv(x, kernel, bias, g);
    const std::size_t n = x.rows();
    const auto h = static_cast<long>(g.height), w = static_cast<long>(g.width);
    const auto k = static_cast<long>(g.kernel), pad = k / 2;
    const std::size_t ci = g.in_channels, co = g.out_channels;
    Tensor out({n, g.height * g.width * co});
    for (std::size_t s = 0; s < n; ++s) {
        const double* in = &x(s, 0);
        double* o = &out(s, 0);
        for (long py = 0; py < h; ++py)
            for (long px = 0; px < w; ++px) {
                double* op = o + (py * w + px) * static_cast<long>(co);
                for (std::size_t c = 0; c < co; ++c) op[c] = bias[c];
                for (long ky = 0; ky < k; ++ky) {
                    const long iy = py + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    for (long kx = 0; kx < k; ++kx) {
                        const long ix = px + kx - pad;
                        if (ix < 0 || ix >= w) continue;
                        const double* ip = in + (iy * w + ix) * static_cast<long>(ci);
                        const double* kp = &kernel[static_cast<std::size_t>((ky * k + kx)) * ci * co];
                        for (std::size_t a = 0; a < ci; ++a) {
                            const double v = ip[a];
                            if (v == 0.0) continue;
                            for (std::size_t c = 0; c < co; ++c) op[c] += v * kp[a * co + c];
                        }
                    }
                }
            }
    }
    return out;
}

Tensor conv2d_as_matrix(const Tensor& kernel, const ConvGeometry& g)
{
    const auto h = static_cast<long>(g.height), w = static_cast<long>(g.width);
    const auto k = static_cast<long>(g.kernel), pad = k / 2;
    const std::size_t ci = g.in_channels, co = g.out_channels;
    Tensor m({g.height * g.width * co, g.height * g.width * ci});
    for (long py = 0; py < h; ++py)
        for (long px = 0; px < w; ++px)
            for (long ky = 0; ky < k; ++ky) {
                const long iy = py + ky - pad;
                if (iy < 0 || iy >= h) continue;
                for (long kx = 0; kx < k; ++kx) {
                    const long ix = px + kx - pad;
                    if (ix < 0 || ix >= w) continue;
                    for (std::size_t a = 0; a < ci; ++a)
                        for (std::size_t c = 0; c < co; ++c) {
                            const auto row = static_cast<std::size_t>(py * w + px) * co + c;
                            const auto col = static_cast<std::size_t>(iy * w + ix) * ci + a;
                            m(row, col) += kernel[static_cast<std::size_t>(ky * k + kx) * ci * co + a * co + c];
                        }
                }
            }
    return m;
}

double dot(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

} // namespace udlflow::num
