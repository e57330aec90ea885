#pragma once

#include "udlflow/numerics/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace udlflow::data {

struct Dataset {
    std::string name;
    num::Tensor samples;                       // n x d, one sample per row
    std::optional<std::vector<int>> labels;    // length n when present
    std::vector<std::size_t> sample_shape;     // {d} or {height, width, channels}
    double value_min = 0.0, value_max = 0.0;   // observed range

    std::size_t size() const { return samples.empty() ? 0 : samples.rows(); }
    std::size_t dim() const;
    bool empty() const { return size() == 0; }

    // Throws ContractError if the invariants are violated.
    void validate() const;
    void refresh_range();

    // Rows selected by `index`, labels carried along.
    Dataset subset(const std::vector<std::size_t>& index) const;
    Dataset filter_class(int label) const;
};

struct SynthOptions {
    double noise = -1.0;       // < 0 selects the generator's default
    std::size_t components = 8; // gaussian-mixture only
};

// two-moons, rings, checkerboard, gaussian-mixture. Unknown names raise ContractError.
Dataset synth(const std::string& name, std::size_t n, std::uint64_t seed, const SynthOptions& options = {});
const std::vector<std::string>& synth_names();

struct IdxOptions {
    std::optional<int> class_filter;
    std::size_t downsample = 1; // mean pooling factor
    bool keep_integer = false;  // leave pixels in [0, 255] for dequantization
};

// MNIST-style IDX files. The labels path may be empty when no filter is used.
Dataset load_idx(const std::string& images_path, const std::string& labels_path, const IdxOptions& options = {});

// Mean pooling of channel-last images stored one per row.
num::Tensor mean_pool(const num::Tensor& images, std::size_t height, std::size_t width, std::size_t channels,
                      std::size_t factor);

// Rectangular numeric CSV. `label_column` (if set) is split off as integer labels.
Dataset load_csv(const std::string& path, bool has_header, std::optional<std::size_t> label_column = std::nullopt);
// Shortest round-trip decimals. Labels, when present, go to a trailing "label" column.
void save_csv(const std::string& path, const Dataset& data, bool write_header = true);

} // namespace udlflow::data
