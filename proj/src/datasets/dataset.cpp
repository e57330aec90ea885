#include "udlflow/datasets/dataset.hpp"

#include "udlflow/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace udlflow::data {

std::size_t Dataset::dim() const
{
    if (!samples.empty()) return samples.cols();
    std::size_t d = 1;
    for (auto s : sample_shape) d *= s;
    return sample_shape.empty() ? 0 : d;
}

void Dataset::validate() const
{
    if (!samples.empty() && samples.rank() != 2) throw ContractError("dataset: samples must be a matrix");
    if (labels && labels->size() != size()) throw ContractError("dataset: label count differs from sample count");
    std::size_t prod = 1;
    for (auto s : sample_shape) prod *= s;
    if (!samples.empty() && !sample_shape.empty() && prod != samples.cols())
        throw ContractError("dataset: sample shape does not match the row width");
}

void Dataset::refresh_range()
{
    if (samples.empty()) {
        value_min = value_max = 0.0;
        return;
    }
    const auto [lo, hi] = std::minmax_element(samples.storage().begin(), samples.storage().end());
    value_min = *lo;
    value_max = *hi;
}

Dataset Dataset::subset(const std::vector<std::size_t>& index) const
{
    Dataset out;
    out.name = name;
    out.sample_shape = sample_shape;
    const std::size_t d = dim();
    out.samples = num::Tensor({index.size(), d});
    if (labels) out.labels.emplace();
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= size()) throw ContractError("dataset subset: index out of range");
        std::copy_n(samples.row(index[i]).begin(), d, out.samples.row(i).begin());
        if (labels) out.labels->push_back((*labels)[index[i]]);
    }
    if (index.empty()) out.samples = num::Tensor();
    out.refresh_range();
    return out;
}

Dataset Dataset::filter_class(int label) const
{
    if (!labels) throw ContractError("dataset: class filter needs labels");
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < labels->size(); ++i)
        if ((*labels)[i] == label) keep.push_back(i);
    return subset(keep);
}

const std::vector<std::string>& synth_names()
{
    static const std::vector<std::string> names{"two-moons", "rings", "checkerboard", "gaussian-mixture"};
    return names;
}

Dataset synth(const std::string& name, std::size_t n, std::uint64_t seed, const SynthOptions& opt)
{
    if (n == 0) throw ContractError("synth: n must be positive");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> g(0.0, 1.0);
    Dataset ds;
    ds.name = name;
    ds.sample_shape = {2};
    ds.samples = num::Tensor({n, 2});
    ds.labels.emplace(n);
    auto& lab = *ds.labels;
    const double pi = std::numbers::pi;

    if (name == "two-moons") {
        const double noise = opt.noise < 0 ? 0.1 : opt.noise;
        for (std::size_t i = 0; i < n; ++i) {
            const int c = i % 2;
            const double t = pi * u(rng);
            double x = std::cos(t), y = std::sin(t);
            if (c == 1) {
                x = 1.0 - x;
                y = 0.5 - y;
            }
            ds.samples(i, 0) = x + noise * g(rng);
            ds.samples(i, 1) = y + noise * g(rng);
            lab[i] = c;
        }
    } else if (name == "rings") {
        const double noise = opt.noise < 0 ? 0.05 : opt.noise;
        for (std::size_t i = 0; i < n; ++i) {
            const int c = i % 2;
            const double r = c == 0 ? 1.0 : 0.5;
            const double t = 2.0 * pi * u(rng);
            ds.samples(i, 0) = r * std::cos(t) + noise * g(rng);
            ds.samples(i, 1) = r * std::sin(t) + noise * g(rng);
            lab[i] = c;
        }
    } else if (name == "checkerboard") {
        // 4 x 4 board on [-1, 1]^2, mass on the squares with even parity
        for (std::size_t i = 0; i < n; ++i) {
            const int col = static_cast<int>(u(rng) * 4.0) % 4;
            int row = static_cast<int>(u(rng) * 2.0) % 2 * 2;
            if (col % 2 == 1) row += 1;
            ds.samples(i, 0) = -1.0 + 0.5 * (col + u(rng));
            ds.samples(i, 1) = -1.0 + 0.5 * (row + u(rng));
            lab[i] = (col + row) / 2 % 2;
        }
    } else if (name == "gaussian-mixture") {
        const std::size_t m = std::max<std::size_t>(1, opt.components);
        const double noise = opt.noise < 0 ? 0.1 : opt.noise;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t c = i % m;
            double cx = 0.0, cy = 0.0;
            if (m > 1) {
                cx = std::cos(2.0 * pi * c / m);
                cy = std::sin(2.0 * pi * c / m);
            }
            ds.samples(i, 0) = cx + noise * g(rng);
            ds.samples(i, 1) = cy + noise * g(rng);
            lab[i] = static_cast<int>(c);
        }
    } else {
        throw ContractError("synth: unknown dataset '" + name + "'");
    }
    ds.refresh_range();
    return ds;
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path)
{
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError(path + ": truncated IDX header");
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

std::ifstream open_binary(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return in;
}

} // namespace

num::Tensor mean_pool(const num::Tensor& images, std::size_t h, std::size_t w, std::size_t c, std::size_t f)
{
    if (f == 0) throw ContractError("mean_pool: factor must be positive");
    if (f == 1) return images;
    if (h % f || w % f) throw ContractError("mean_pool: image size not divisible by the factor");
    const std::size_t oh = h / f, ow = w / f, n = images.rows();
    num::Tensor out({n, oh * ow * c});
    const double inv = 1.0 / static_cast<double>(f * f);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                for (std::size_t k = 0; k < c; ++k)
                    out(s, ((y / f) * ow + x / f) * c + k) += images(s, (y * w + x) * c + k) * inv;
    return out;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path, const IdxOptions& opt)
{
    auto in = open_binary(images_path);
    if (read_be32(in, images_path) != 0x00000803u) throw FormatError(images_path + ": bad IDX image magic");
    const std::size_t n = read_be32(in, images_path), h = read_be32(in, images_path), w = read_be32(in, images_path);
    std::vector<unsigned char> pix(n * h * w);
    if (!in.read(reinterpret_cast<char*>(pix.data()), static_cast<std::streamsize>(pix.size())))
        throw FormatError(images_path + ": truncated pixel data");

    std::optional<std::vector<int>> labels;
    if (!labels_path.empty()) {
        auto lin = open_binary(labels_path);
        if (read_be32(lin, labels_path) != 0x00000801u) throw FormatError(labels_path + ": bad IDX label magic");
        const std::size_t nl = read_be32(lin, labels_path);
        if (nl != n) throw FormatError("IDX: " + std::to_string(n) + " images but " + std::to_string(nl) + " labels");
        std::vector<unsigned char> lb(nl);
        if (!lin.read(reinterpret_cast<char*>(lb.data()), static_cast<std::streamsize>(nl)))
            throw FormatError(labels_path + ": truncated label data");
        labels.emplace(lb.begin(), lb.end());
    } else if (opt.class_filter) {
        throw ContractError("load_idx: a class filter needs a labels file");
    }

    Dataset ds;
    ds.name = images_path;
    num::Tensor all({n, h * w});
    const double scale = opt.keep_integer ? 1.0 : 1.0 / 255.0;
    for (std::size_t i = 0; i < pix.size(); ++i) all[i] = pix[i] * scale;
    ds.samples = std::move(all);
    ds.labels = std::move(labels);
    ds.sample_shape = {h, w, 1};
    if (opt.class_filter) ds = ds.filter_class(*opt.class_filter);
    if (opt.downsample != 1 && !ds.empty()) {
        ds.samples = mean_pool(ds.samples, h, w, 1, opt.downsample);
    }
    ds.sample_shape = {h / opt.downsample, w / opt.downsample, 1};
    ds.name = images_path;
    ds.refresh_range();
    return ds;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> cells;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            cells.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    cells.push_back(cur);
    return cells;
}

double parse_cell(std::string s, std::size_t row, std::size_t col)
{
    while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.pop_back();
    std::size_t b = 0;
    while (b < s.size() && s[b] == ' ') ++b;
    if (b < s.size() && s[b] == '+') ++b;
    double v = 0.0;
    const char* first = s.data() + b;
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || first == last)
        throw FormatError("csv row " + std::to_string(row) + ", column " + std::to_string(col) + ": not a number '" +
                          s + "'");
    return v;
}

std::string format_double(double v)
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

} // namespace

Dataset load_csv(const std::string& path, bool has_header, std::optional<std::size_t> label_column)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    std::size_t row = 0, width = 0;
    std::vector<double> values;
    std::vector<int> labels;
    bool first = true;
    if (has_header) {
        std::getline(in, line);
        ++row;
    }
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (first) {
            width = cells.size();
            first = false;
        } else if (cells.size() != width) {
            throw FormatError("csv row " + std::to_string(row) + ": expected " + std::to_string(width) + " cells, got " +
                              std::to_string(cells.size()));
        }
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const double v = parse_cell(cells[c], row, c + 1);
            if (label_column && c == *label_column) labels.push_back(static_cast<int>(std::lround(v)));
            else values.push_back(v);
        }
    }
    Dataset ds;
    ds.name = path;
    const std::size_t d = width - (label_column && width > 0 ? 1 : 0);
    if (label_column && width > 0 && *label_column >= width) throw FormatError("csv: label column out of range");
    if (!values.empty()) {
        const std::size_t rows = values.size() / d;
        ds.samples = num::Tensor({rows, d}, std::move(values));
    }
    if (label_column) ds.labels = std::move(labels);
    ds.sample_shape = {d};
    ds.refresh_range();
    return ds;
}

void save_csv(const std::string& path, const Dataset& data, bool write_header)
{
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    const std::size_t d = data.dim();
    if (write_header) {
        for (std::size_t j = 0; j < d; ++j) out << (j ? "," : "") << "x" << j;
        if (data.labels) out << ",label";
        out << '\n';
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) out << (j ? "," : "") << format_double(data.samples(i, j));
        if (data.labels) out << ',' << (*data.labels)[i];
        out << '\n';
    }
    if (!out) throw IoError("write failed for " + path);
}

} // namespace udlflow::data
