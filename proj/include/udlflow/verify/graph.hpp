#pragma once

#include "udlflow/flows/classifier.hpp"
#include "udlflow/flows/flow_model.hpp"

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace udlflow::verify {

using num::Tensor;

struct IntervalBox {
    std::vector<double> lower, upper;

    IntervalBox() = default;
    IntervalBox(std::vector<double> lo, std::vector<double> hi);
    static IntervalBox around(std::span<const double> center, double radius);
    static IntervalBox point(std::span<const double> x);

    std::size_t dim() const { return lower.size(); }
    double width(std::size_t i) const { return upper[i] - lower[i]; }
    std::size_t widest() const; // first index of the largest width
    bool contains(std::span<const double> x) const;
    std::vector<double> midpoint() const;
    std::pair<IntervalBox, IntervalBox> split(std::size_t axis) const;

    bool operator==(const IntervalBox&) const = default;
};

enum class Op { input, linear, relu, add };
std::string to_string(Op op);

struct Node {
    Op op = Op::input;
    std::vector<std::size_t> inputs; // a single input for linear/relu, two for add
    Tensor weight;                   // linear: (out x in)
    Tensor bias;                     // linear: out
    std::size_t dim = 0;

    bool operator==(const Node&) const = default;
};

// DAG of piecewise-linear operations over one flat input vector. Nodes are
// stored in topological order; node 0 is the input.
class Graph {
public:
    Graph() = default;
    explicit Graph(std::size_t input_dim);

    std::size_t add_linear(std::size_t in, Tensor weight, Tensor bias);
    std::size_t add_relu(std::size_t in);
    std::size_t add_add(std::size_t a, std::size_t b);
    // Rows [begin, end) of node `in` as a linear node.
    std::size_t add_slice(std::size_t in, std::size_t begin, std::size_t end);

    // Appends a flow's forward map z -> x (or the inverse x -> z).
    std::size_t append_flow(std::size_t in, const flows::FlowModel& model, bool inverse = false);
    std::size_t append_classifier(std::size_t in, const flows::ReluNetwork& net);

    void set_output(const std::string& name, std::size_t node);
    std::size_t output(const std::string& name) const;
    bool has_output(const std::string& name) const;
    const std::vector<std::pair<std::string, std::size_t>>& outputs() const { return outputs_; }

    const std::vector<Node>& nodes() const { return nodes_; }
    const Node& node(std::size_t i) const { return nodes_.at(i); }
    std::size_t input_dim() const { return nodes_.empty() ? 0 : nodes_[0].dim; }
    std::size_t size() const { return nodes_.size(); }
    // Reconstruction from stored nodes; validates wiring and shapes.
    static Graph from_nodes(std::vector<Node> nodes, std::vector<std::pair<std::string, std::size_t>> outputs);

    // Exact double-precision values of every node.
    std::vector<std::vector<double>> evaluate(std::span<const double> x) const;
    std::vector<double> evaluate_output(std::span<const double> x, const std::string& name) const;

    // Fuses chains of linear nodes and add nodes of linear forms of a common
    // node. Outputs and evaluation are preserved up to rounding.
    Graph fused() const;

    bool operator==(const Graph&) const = default;

private:
    void check_node(std::size_t i) const;

    std::vector<Node> nodes_;
    std::vector<std::pair<std::string, std::size_t>> outputs_;
};

// Sound elementwise bounds of every node over the input box: linear layers
// by positive/negative weight splitting, ReLU by clamping, add by interval addition.
std::vector<IntervalBox> interval_forward(const Graph& g, const IntervalBox& in);
// Bounds of c . value(node). When the node is linear the combination is
// pushed through its weights first, which is tighter than combining its box.
std::pair<double, double> linear_bounds(const Graph& g, const std::vector<IntervalBox>& boxes, std::size_t node,
                                        std::span<const double> c);

} // namespace udlflow::verify
