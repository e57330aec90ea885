#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace udlflow::num {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles. Batches of vectors are rank-2 tensors with
// one sample per row.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor vector(std::vector<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor scalar(double v);
    static Tensor identity(std::size_t n);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    std::size_t dim(std::size_t axis) const;

    // Rank-2 accessors.
    std::size_t rows() const;
    std::size_t cols() const;
    double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    const double& operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    double& operator[](std::size_t i) { return data_[i]; }
    const double& operator[](std::size_t i) const { return data_[i]; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    std::span<double> row(std::size_t r);
    std::span<const double> row(std::size_t r) const;

    double item() const;

    Tensor reshaped(Shape shape) const;
    void fill(double v);

    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

// Throws NumericError naming `what` if any entry is NaN or infinite.
void check_finite(const Tensor& t, const std::string& what);
bool all_finite(const Tensor& t);

// Plain (untraced) arithmetic. Shapes are checked and mismatches raise
// DimensionError.
Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T, the natural form for row-batched inputs against (out x in) weights.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// Adds the single value of `s` to every entry of `x`.
Tensor add_scalar(const Tensor& x, const Tensor& s);
Tensor add_row(const Tensor& x, const Tensor& row);
Tensor mul_row(const Tensor& x, const Tensor& row);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor square(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor row_sum(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor diag_embed(const Tensor& v);
Tensor mask_mul(const Tensor& x, const Tensor& mask);

// Solves M x_r = y_r for each row y_r of `y`, M square triangular.
// `unit_diagonal` treats the diagonal of M as ones without reading it.
Tensor tri_solve(const Tensor& m, const Tensor& y, bool lower, bool unit_diagonal);

// Same-padding, stride-1 2-D convolution on channel-last images.
// x: n x (h*w*cin), kernel: (k*k*cin*cout) laid out [ky][kx][cin][cout], bias: cout.
struct ConvGeometry {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 1;
};
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, const ConvGeometry& g);
// Dense (h*w*cout) x (h*w*cin) matrix equal to the convolution's linear part.
Tensor conv2d_as_matrix(const Tensor& kernel, const ConvGeometry& g);

double dot(std::span<const double> a, std::span<const double> b);

} // namespace udlflow::num
