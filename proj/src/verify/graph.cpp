#include "udlflow/verify/graph.hpp"

#include "udlflow/error.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace udlflow::verify {

IntervalBox::IntervalBox(std::vector<double> lo, std::vector<double> hi) : lower(std::move(lo)), upper(std::move(hi))
{
    if (lower.size() != upper.size()) throw DimensionError("IntervalBox: bound vectors differ in length");
    for (std::size_t i = 0; i < lower.size(); ++i)
        if (!(lower[i] <= upper[i]))
            throw ContractError("IntervalBox: lower bound exceeds upper bound at index " + std::to_string(i));
}

IntervalBox IntervalBox::around(std::span<const double> center, double radius)
{
    if (!(radius >= 0.0)) throw ContractError("IntervalBox: radius must be nonnegative");
    std::vector<double> lo(center.begin(), center.end()), hi = lo;
    for (std::size_t i = 0; i < lo.size(); ++i) {
        lo[i] -= radius;
        hi[i] += radius;
    }
    return IntervalBox(std::move(lo), std::move(hi));
}

IntervalBox IntervalBox::point(std::span<const double> x) { return around(x, 0.0); }

std::size_t IntervalBox::widest() const
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < dim(); ++i)
        if (width(i) > width(best)) best = i;
    return best;
}

bool IntervalBox::contains(std::span<const double> x) const
{
    if (x.size() != dim()) return false;
    for (std::size_t i = 0; i < dim(); ++i)
        if (!(x[i] >= lower[i] && x[i] <= upper[i])) return false;
    return true;
}

std::vector<double> IntervalBox::midpoint() const
{
    std::vector<double> m(dim());
    for (std::size_t i = 0; i < dim(); ++i) m[i] = 0.5 * (lower[i] + upper[i]);
    return m;
}

std::pair<IntervalBox, IntervalBox> IntervalBox::split(std::size_t axis) const
{
    IntervalBox a = *this, b = *this;
    const double mid = 0.5 * (lower[axis] + upper[axis]);
    a.upper[axis] = mid;
    b.lower[axis] = mid;
    return {std::move(a), std::move(b)};
}

std::string to_string(Op op)
{
    switch (op) {
    case Op::input: return "input";
    case Op::linear: return "linear";
    case Op::relu: return "relu";
    case Op::add: return "add";
    }
    return "?";
}

Graph::Graph(std::size_t input_dim)
{
    Node n;
    n.op = Op::input;
    n.dim = input_dim;
    nodes_.push_back(std::move(n));
}

void Graph::check_node(std::size_t i) const
{
    if (i >= nodes_.size()) throw ContractError("Graph: node " + std::to_string(i) + " does not exist");
}

std::size_t Graph::add_linear(std::size_t in, Tensor weight, Tensor bias)
{
    check_node(in);
    if (weight.rank() != 2 || weight.cols() != nodes_[in].dim)
        throw DimensionError("Graph: linear weight does not match its input of size " +
                             std::to_string(nodes_[in].dim));
    if (bias.size() != weight.rows()) throw DimensionError("Graph: linear bias does not match the weight rows");
    Node n;
    n.op = Op::linear;
    n.inputs = {in};
    n.dim = weight.rows();
    n.weight = std::move(weight);
    n.bias = bias.reshaped({n.dim});
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
}

std::size_t Graph::add_relu(std::size_t in)
{
    check_node(in);
    Node n;
    n.op = Op::relu;
    n.inputs = {in};
    n.dim = nodes_[in].dim;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
}

std::size_t Graph::add_add(std::size_t a, std::size_t b)
{
    check_node(a);
    check_node(b);
    if (nodes_[a].dim != nodes_[b].dim) throw DimensionError("Graph: add operands differ in size");
    Node n;
    n.op = Op::add;
    n.inputs = {a, b};
    n.dim = nodes_[a].dim;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
}

std::size_t Graph::add_slice(std::size_t in, std::size_t begin, std::size_t end)
{
    check_node(in);
    if (begin > end || end > nodes_[in].dim) throw ContractError("Graph: slice out of range");
    Tensor w({end - begin, nodes_[in].dim});
    for (std::size_t i = begin; i < end; ++i) w(i - begin, i) = 1.0;
    return add_linear(in, std::move(w), Tensor({end - begin}));
}

namespace {

std::size_t append_affine(Graph& g, std::size_t in, const flows::AffineMap& a)
{
    return g.add_linear(in, a.weight, a.bias);
}

// Shift (1 - m) * c(m * h), negated when `negate` is set.
std::size_t append_shift(Graph& g, std::size_t h, const flows::CouplingLayer& c, bool negate)
{
    auto layers = std::visit([](const auto& cond) { return cond.lowered(); }, c.conditioner());
    const Tensor& m = c.mask();
    auto& first = layers.front().weight;
    for (std::size_t r = 0; r < first.rows(); ++r)
        for (std::size_t j = 0; j < first.cols(); ++j) first(r, j) *= m[j];
    auto& last = layers.back();
    for (std::size_t r = 0; r < last.weight.rows(); ++r) {
        const double s = (1.0 - m[r]) * (negate ? -1.0 : 1.0);
        for (std::size_t j = 0; j < last.weight.cols(); ++j) last.weight(r, j) *= s;
        last.bias[r] *= s;
    }
    std::size_t cur = h;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        cur = append_affine(g, cur, layers[i]);
        if (i + 1 < layers.size()) cur = g.add_relu(cur);
    }
    return cur;
}

} // namespace

std::size_t Graph::append_flow(std::size_t in, const flows::FlowModel& model, bool inverse)
{
    check_node(in);
    if (nodes_[in].dim != model.dim()) throw DimensionError("Graph: flow input size mismatch");
    std::size_t h = in;
    if (!inverse) {
        for (const auto& b : model.blocks()) {
            if (b.affine) h = append_affine(*this, h, b.affine->dense());
            h = add_add(h, append_shift(*this, h, b.coupling, false));
            if (b.affine) h = append_affine(*this, h, b.affine->dense_inverse());
        }
        if (model.final_affine()) h = append_affine(*this, h, model.final_affine()->dense());
    } else {
        if (model.final_affine()) h = append_affine(*this, h, model.final_affine()->dense_inverse());
        for (auto it = model.blocks().rbegin(); it != model.blocks().rend(); ++it) {
            if (it->affine) h = append_affine(*this, h, it->affine->dense());
            h = add_add(h, append_shift(*this, h, it->coupling, true));
            if (it->affine) h = append_affine(*this, h, it->affine->dense_inverse());
        }
    }
    return h;
}

std::size_t Graph::append_classifier(std::size_t in, const flows::ReluNetwork& net)
{
    check_node(in);
    const auto layers = net.layers();
    std::size_t h = in;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        h = append_affine(*this, h, layers[i]);
        if (i + 1 < layers.size()) h = add_relu(h);
    }
    return h;
}

void Graph::set_output(const std::string& name, std::size_t node)
{
    check_node(node);
    for (auto& o : outputs_)
        if (o.first == name) {
            o.second = node;
            return;
        }
    outputs_.emplace_back(name, node);
}

std::size_t Graph::output(const std::string& name) const
{
    for (const auto& o : outputs_)
        if (o.first == name) return o.second;
    throw ContractError("Graph: no output named '" + name + "'");
}

bool Graph::has_output(const std::string& name) const
{
    return std::any_of(outputs_.begin(), outputs_.end(), [&](const auto& o) { return o.first == name; });
}

Graph Graph::from_nodes(std::vector<Node> nodes, std::vector<std::pair<std::string, std::size_t>> outputs)
{
    if (nodes.empty() || nodes[0].op != Op::input) throw SchemaError("graph: node 0 must be the input");
    Graph g(nodes[0].dim);
    for (std::size_t i = 1; i < nodes.size(); ++i) {
        auto& n = nodes[i];
        const std::string where = "graph node " + std::to_string(i);
        for (std::size_t in : n.inputs)
            if (in >= i) throw SchemaError(where + ": inputs must refer to earlier nodes");
        try {
            switch (n.op) {
            case Op::input: throw SchemaError(where + ": only node 0 may be an input");
            case Op::linear:
                if (n.inputs.size() != 1) throw SchemaError(where + ": linear takes one input");
                g.add_linear(n.inputs[0], std::move(n.weight), std::move(n.bias));
                break;
            case Op::relu:
                if (n.inputs.size() != 1) throw SchemaError(where + ": relu takes one input");
                g.add_relu(n.inputs[0]);
                break;
            case Op::add:
                if (n.inputs.size() != 2) throw SchemaError(where + ": add takes two inputs");
                g.add_add(n.inputs[0], n.inputs[1]);
                break;
            }
        } catch (const DimensionError& e) {
            throw SchemaError(where + ": " + e.what());
        }
    }
    for (auto& [name, id] : outputs) {
        if (id >= g.size()) throw SchemaError("graph output '" + name + "' refers to a missing node");
        g.set_output(name, id);
    }
    return g;
}

std::vector<std::vector<double>> Graph::evaluate(std::span<const double> x) const
{
    if (x.size() != input_dim())
        throw DimensionError("Graph: input has size " + std::to_string(x.size()) + ", expected " +
                             std::to_string(input_dim()));
    std::vector<std::vector<double>> v(nodes_.size());
    v[0].assign(x.begin(), x.end());
    for (std::size_t i = 1; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        const auto& a = v[n.inputs[0]];
        auto& out = v[i];
        out.resize(n.dim);
        switch (n.op) {
        case Op::linear:
            for (std::size_t r = 0; r < n.dim; ++r) {
                double s = n.bias[r];
                const double* w = &n.weight(r, 0);
                for (std::size_t j = 0; j < a.size(); ++j) s += w[j] * a[j];
                out[r] = s;
            }
            break;
        case Op::relu:
            for (std::size_t r = 0; r < n.dim; ++r) out[r] = a[r] > 0.0 ? a[r] : 0.0;
            break;
        case Op::add: {
            const auto& b = v[n.inputs[1]];
            for (std::size_t r = 0; r < n.dim; ++r) out[r] = a[r] + b[r];
            break;
        }
        case Op::input: break;
        }
    }
    return v;
}

std::vector<double> Graph::evaluate_output(std::span<const double> x, const std::string& name) const
{
    auto v = evaluate(x);
    return std::move(v[output(name)]);
}

namespace {

// value = W * node(base) + b
struct Form {
    std::size_t base = 0;
    Tensor w;
    Tensor b;
};

Tensor matmul_plain(const Tensor& a, const Tensor& b) { return num::matmul(a, b); }

} // namespace

Graph Graph::fused() const
{
    Graph g(input_dim());
    const std::size_t n = nodes_.size();
    std::vector<std::optional<Form>> form(n);
    std::vector<std::optional<std::size_t>> placed(n);
    placed[0] = 0;

    auto as_form = [&](std::size_t i) -> Form {
        if (form[i]) return *form[i];
        const std::size_t d = nodes_[i].dim;
        return Form{*placed[i], Tensor::identity(d), Tensor({d})};
    };
    auto place = [&](std::size_t i) -> std::size_t {
        if (placed[i]) return *placed[i];
        const Form& f = *form[i];
        placed[i] = g.add_linear(f.base, f.w, f.b);
        return *placed[i];
    };

    for (std::size_t i = 1; i < n; ++i) {
        const Node& nd = nodes_[i];
        switch (nd.op) {
        case Op::linear: {
            const Form in = as_form(nd.inputs[0]);
            Form f;
            f.base = in.base;
            f.w = matmul_plain(nd.weight, in.w);
            f.b = num::add(num::matmul(nd.weight, in.b.reshaped({in.b.size(), 1})).reshaped({nd.dim}), nd.bias);
            form[i] = std::move(f);
            break;
        }
        case Op::relu: placed[i] = g.add_relu(place(nd.inputs[0])); break;
        case Op::add: {
            const Form a = as_form(nd.inputs[0]), b = as_form(nd.inputs[1]);
            if (a.base == b.base) form[i] = Form{a.base, num::add(a.w, b.w), num::add(a.b, b.b)};
            else placed[i] = g.add_add(place(nd.inputs[0]), place(nd.inputs[1]));
            break;
        }
        case Op::input: break;
        }
    }
    for (const auto& [name, id] : outputs_) g.set_output(name, place(id));
    return g;
}

std::vector<IntervalBox> interval_forward(const Graph& g, const IntervalBox& in)
{
    if (in.dim() != g.input_dim()) throw DimensionError("interval_forward: box does not match the graph input");
    std::vector<IntervalBox> b(g.size());
    b[0] = in;
    for (std::size_t i = 1; i < g.size(); ++i) {
        const Node& n = g.node(i);
        const IntervalBox& a = b[n.inputs[0]];
        IntervalBox& out = b[i];
        out.lower.resize(n.dim);
        out.upper.resize(n.dim);
        switch (n.op) {
        case Op::linear:
            for (std::size_t r = 0; r < n.dim; ++r) {
                double lo = n.bias[r], hi = n.bias[r];
                const double* w = &n.weight(r, 0);
                for (std::size_t j = 0; j < a.dim(); ++j) {
                    if (w[j] >= 0.0) {
                        lo += w[j] * a.lower[j];
                        hi += w[j] * a.upper[j];
                    } else {
                        lo += w[j] * a.upper[j];
                        hi += w[j] * a.lower[j];
                    }
                }
                out.lower[r] = lo;
                out.upper[r] = hi;
            }
            break;
        case Op::relu:
            for (std::size_t r = 0; r < n.dim; ++r) {
                out.lower[r] = std::max(0.0, a.lower[r]);
                out.upper[r] = std::max(0.0, a.upper[r]);
            }
            break;
        case Op::add: {
            const IntervalBox& c = b[n.inputs[1]];
            for (std::size_t r = 0; r < n.dim; ++r) {
                out.lower[r] = a.lower[r] + c.lower[r];
                out.upper[r] = a.upper[r] + c.upper[r];
            }
            break;
        }
        case Op::input: break;
        }
    }
    return b;
}

std::pair<double, double> linear_bounds(const Graph& g, const std::vector<IntervalBox>& boxes, std::size_t node,
                                        std::span<const double> c)
{
    const Node& n = g.node(node);
    if (c.size() != n.dim) throw DimensionError("linear_bounds: coefficient vector has the wrong size");
    if (n.op == Op::linear) {
        const IntervalBox& in = boxes[n.inputs[0]];
        double lo = 0.0, hi = 0.0;
        for (std::size_t r = 0; r < n.dim; ++r) {
            lo += c[r] * n.bias[r];
        }
        hi = lo;
        for (std::size_t j = 0; j < in.dim(); ++j) {
            double w = 0.0;
            for (std::size_t r = 0; r < n.dim; ++r) w += c[r] * n.weight(r, j);
            if (w >= 0.0) {
                lo += w * in.lower[j];
                hi += w * in.upper[j];
            } else {
                lo += w * in.upper[j];
                hi += w * in.lower[j];
            }
        }
        return {lo, hi};
    }
    const IntervalBox& b = boxes[node];
    double lo = 0.0, hi = 0.0;
    for (std::size_t r = 0; r < n.dim; ++r) {
        if (c[r] >= 0.0) {
            lo += c[r] * b.lower[r];
            hi += c[r] * b.upper[r];
        } else {
            lo += c[r] * b.upper[r];
            hi += c[r] * b.lower[r];
        }
    }
    return {lo, hi};
}

} // namespace udlflow::verify
