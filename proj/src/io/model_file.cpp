#include "udlflow/io/model_file.hpp"

#include "udlflow/error.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace udlflow::io {

using json = nlohmann::json;
using num::Tensor;

namespace {

// ---- writing ----

json vec(const Tensor& t)
{
    json a = json::array();
    for (double v : t.values()) {
        if (!std::isfinite(v)) throw ContractError("save: model contains a non-finite value");
        a.push_back(v);
    }
    return a;
}

json tensor(const Tensor& t, num::Shape shape)
{
    return json{{"shape", shape}, {"data", vec(t)}};
}

json matrix(const Tensor& t) { return tensor(t, {t.rows(), t.cols()}); }

Tensor masked(const Tensor& m, bool strictly_lower)
{
    Tensor out = m;
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c)
            if (strictly_lower ? c >= r : c <= r) out(r, c) = 0.0;
    return out;
}

json lu_json(const flows::LUAffineLayer& lu)
{
    json j{{"type", "lu-affine"},
           {"dim", lu.dim()},
           {"diagonal_only", lu.diagonal_only()},
           {"log_diag", vec(lu.log_diag_param().value)},
           {"sign", vec(lu.sign())},
           {"bias", vec(lu.bias_param().value)}};
    if (!lu.diagonal_only()) {
        j["lower"] = matrix(masked(lu.lower_param().value, true));
        j["upper"] = matrix(masked(lu.upper_param().value, false));
    }
    return j;
}

json affine_json(const flows::AffineBijection& a)
{
    if (!a.is_one_star()) return lu_json(a.lu());
    return json{{"type", "one-star-conv"},
                {"positions", a.one_star().positions()},
                {"channel_transform", lu_json(a.lu())}};
}

json conditioner_json(const flows::Conditioner& c)
{
    if (const auto* d = std::get_if<flows::DenseConditioner>(&c)) {
        json layers = json::array();
        for (std::size_t i = 0; i < d->depth(); ++i)
            layers.push_back({{"weight", matrix(d->parameters()[2 * i].value)},
                              {"bias", vec(d->parameters()[2 * i + 1].value)}});
        return json{{"kind", "dense"}, {"layers", layers}};
    }
    const auto& cv = std::get<flows::ConvConditioner>(c);
    json layers = json::array();
    for (std::size_t i = 0; i < cv.depth(); ++i) {
        const std::size_t k = cv.kernel();
        layers.push_back({{"kernel", tensor(cv.parameters()[2 * i].value, {k, k, cv.channels()[i], cv.channels()[i + 1]})},
                          {"bias", vec(cv.parameters()[2 * i + 1].value)}});
    }
    return json{{"kind", "conv"},
                {"height", cv.height()},
                {"width", cv.width()},
                {"kernel", cv.kernel()},
                {"channels", cv.channels()},
                {"layers", layers}};
}

json header(const std::string& kind) { return json{{"format_version", kFormatVersion}, {"kind", kind}}; }

std::string emit(const json& j) { return j.dump(2) + "\n"; }

// ---- reading ----

struct Reader {
    std::string where;

    [[noreturn]] void fail(const std::string& msg) const { throw SchemaError(where + ": " + msg); }

    const json& at(const json& obj, const char* key) const
    {
        if (!obj.is_object()) fail("expected an object");
        auto it = obj.find(key);
        if (it == obj.end()) fail(std::string("missing '") + key + "'");
        return *it;
    }

    std::size_t count(const json& obj, const char* key) const
    {
        const json& v = at(obj, key);
        if (!v.is_number_unsigned()) fail(std::string("'") + key + "' must be a nonnegative integer");
        return v.get<std::size_t>();
    }

    bool flag(const json& obj, const char* key) const
    {
        const json& v = at(obj, key);
        if (!v.is_boolean()) fail(std::string("'") + key + "' must be a boolean");
        return v.get<bool>();
    }

    double number(const json& v, const std::string& what) const
    {
        if (!v.is_number()) fail(what + " must be a number");
        const double d = v.get<double>();
        if (!std::isfinite(d)) fail(what + " must be finite");
        return d;
    }

    std::string text(const json& obj, const char* key) const
    {
        const json& v = at(obj, key);
        if (!v.is_string()) fail(std::string("'") + key + "' must be a string");
        return v.get<std::string>();
    }

    std::vector<double> numbers(const json& v, const std::string& what) const
    {
        if (!v.is_array()) fail(what + " must be an array");
        std::vector<double> out;
        out.reserve(v.size());
        for (const auto& e : v) out.push_back(number(e, what + " entry"));
        return out;
    }

    Tensor vector(const json& obj, const char* key, std::size_t expected) const
    {
        auto data = numbers(at(obj, key), std::string("'") + key + "'");
        if (data.size() != expected)
            fail(std::string("'") + key + "' has " + std::to_string(data.size()) + " values, expected " +
                 std::to_string(expected));
        return Tensor({expected}, std::move(data));
    }

    // Stored {"shape", "data"}; `shape` is the expected shape.
    Tensor tensor(const json& obj, const char* key, const num::Shape& shape) const
    {
        const json& t = at(obj, key);
        const json& s = at(t, "shape");
        if (!s.is_array()) fail(std::string("'") + key + ".shape' must be an array");
        num::Shape stored;
        for (const auto& e : s) {
            if (!e.is_number_unsigned()) fail(std::string("'") + key + ".shape' must hold nonnegative integers");
            stored.push_back(e.get<std::size_t>());
        }
        if (stored != shape)
            fail(std::string("'") + key + "' has shape " + num::shape_string(stored) + ", expected " +
                 num::shape_string(shape));
        auto data = numbers(at(t, "data"), std::string("'") + key + ".data'");
        if (data.size() != num::shape_size(shape))
            fail(std::string("'") + key + "' has " + std::to_string(data.size()) + " values, expected " +
                 std::to_string(num::shape_size(shape)));
        return Tensor(shape, std::move(data));
    }

    // A stored matrix whose shape is read rather than checked.
    Tensor any_matrix(const json& obj, const char* key) const
    {
        const json& s = at(at(obj, key), "shape");
        if (!s.is_array() || s.size() != 2 || !s[0].is_number_unsigned() || !s[1].is_number_unsigned())
            fail(std::string("'") + key + ".shape' must be [rows, cols]");
        return tensor(obj, key, {s[0].get<std::size_t>(), s[1].get<std::size_t>()});
    }
};

json parse_json(std::string_view text)
{
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("model file is not valid JSON: ") + e.what());
    }
}

void check_header(const json& j, const std::string& kind)
{
    Reader r{"model file"};
    if (!j.is_object()) r.fail("top level must be an object");
    const json& v = r.at(j, "format_version");
    if (!v.is_number_integer()) r.fail("'format_version' must be an integer");
    if (v.get<long long>() != kFormatVersion)
        throw VersionError("model file has format_version " + v.dump() + ", this build reads version " +
                           std::to_string(kFormatVersion));
    const std::string k = r.text(j, "kind");
    if (k != kind) throw SchemaError("model file holds a " + k + ", expected a " + kind);
}

flows::LUAffineLayer parse_lu(const Reader& r, const json& j, const std::string& prefix)
{
    if (r.text(j, "type") != "lu-affine") r.fail("expected an lu-affine transform");
    const std::size_t d = r.count(j, "dim");
    const bool diag = r.flag(j, "diagonal_only");
    ad::Parameter log_diag(prefix + ".log_diag", r.vector(j, "log_diag", d));
    ad::Parameter bias(prefix + ".bias", r.vector(j, "bias", d));
    Tensor sign = r.vector(j, "sign", d);
    for (std::size_t i = 0; i < d; ++i)
        if (sign[i] != 1.0 && sign[i] != -1.0)
            r.fail("U diagonal entry " + std::to_string(i) + " has sign " + std::to_string(sign[i]) +
                   "; the diagonal of U must be nonzero");
    ad::Parameter lower, upper;
    if (!diag) {
        Tensor l = r.tensor(j, "lower", {d, d}), u = r.tensor(j, "upper", {d, d});
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b) {
                if (b >= a && l(a, b) != 0.0) r.fail("'lower' must be strictly lower triangular");
                if (b <= a && u(a, b) != 0.0) r.fail("'upper' must be strictly upper triangular (diagonal is log_diag/sign)");
            }
        lower = ad::Parameter(prefix + ".lower", std::move(l));
        upper = ad::Parameter(prefix + ".upper", std::move(u));
    }
    try {
        return flows::LUAffineLayer(std::move(lower), std::move(upper), std::move(log_diag), std::move(sign),
                                    std::move(bias), diag);
    } catch (const Error& e) {
        r.fail(e.what());
    }
}

flows::AffineBijection parse_affine(const Reader& r, const json& j, const std::string& prefix)
{
    const std::string type = r.text(j, "type");
    if (type == "lu-affine") return flows::AffineBijection(parse_lu(r, j, prefix));
    if (type == "one-star-conv") {
        const std::size_t positions = r.count(j, "positions");
        auto lu = parse_lu(r, r.at(j, "channel_transform"), prefix);
        try {
            return flows::AffineBijection(flows::OneStarConv(positions, std::move(lu)));
        } catch (const Error& e) {
            r.fail(e.what());
        }
    }
    r.fail("unknown affine type '" + type + "'");
}

flows::Conditioner parse_conditioner(const Reader& r, const json& j, std::size_t dim, const std::string& prefix)
{
    const std::string kind = r.text(j, "kind");
    const json& layers = r.at(j, "layers");
    if (!layers.is_array() || layers.empty()) r.fail("conditioner 'layers' must be a nonempty array");
    std::vector<ad::Parameter> params;
    try {
        if (kind == "dense") {
            std::size_t in = dim;
            for (std::size_t i = 0; i < layers.size(); ++i) {
                Tensor w = r.any_matrix(layers[i], "weight");
                if (w.cols() != in) r.fail("conditioner layer " + std::to_string(i) + " weight has the wrong width");
                const std::size_t out = w.rows();
                params.emplace_back(prefix + ".w" + std::to_string(i), std::move(w));
                params.emplace_back(prefix + ".b" + std::to_string(i), r.vector(layers[i], "bias", out));
                in = out;
            }
            return flows::DenseConditioner(std::move(params));
        }
        if (kind == "conv") {
            const std::size_t h = r.count(j, "height"), w = r.count(j, "width"), k = r.count(j, "kernel");
            std::vector<std::size_t> channels;
            const json& ch = r.at(j, "channels");
            if (!ch.is_array()) r.fail("'channels' must be an array");
            for (const auto& c : ch) {
                if (!c.is_number_unsigned()) r.fail("'channels' must hold nonnegative integers");
                channels.push_back(c.get<std::size_t>());
            }
            if (channels.size() != layers.size() + 1) r.fail("'channels' must have one entry more than 'layers'");
            for (std::size_t i = 0; i < layers.size(); ++i) {
                Tensor kern = r.tensor(layers[i], "kernel", {k, k, channels[i], channels[i + 1]});
                params.emplace_back(prefix + ".k" + std::to_string(i), kern.reshaped({kern.size()}));
                params.emplace_back(prefix + ".b" + std::to_string(i), r.vector(layers[i], "bias", channels[i + 1]));
            }
            return flows::ConvConditioner(h, w, std::move(channels), k, std::move(params));
        }
    } catch (const SchemaError&) {
        throw;
    } catch (const Error& e) {
        r.fail(e.what());
    }
    r.fail("unknown conditioner kind '" + kind + "'");
}

radial::RadialBase parse_base(const json& j)
{
    Reader r{"base"};
    const std::size_t d = r.count(j, "dim");
    radial::NormOrder order;
    try {
        order = radial::parse_norm_order(r.text(j, "order"));
    } catch (const Error& e) {
        r.fail(e.what());
    }
    const json& n = r.at(j, "norm");
    Reader rn{"base norm"};
    std::optional<double> cap;
    const json& c = rn.at(n, "shape_cap");
    if (!c.is_null()) cap = rn.number(c, "'shape_cap'");
    try {
        auto dist = radial::NormDistribution::from_raw(radial::parse_norm_kind(rn.text(n, "kind")),
                                                       rn.numbers(rn.at(n, "raw"), "'raw'"), cap,
                                                       rn.number(rn.at(n, "dof"), "'dof'"), rn.flag(n, "learnable"));
        return radial::RadialBase(d, order, std::move(dist));
    } catch (const SchemaError& e) {
        throw SchemaError(std::string("base norm: ") + e.what());
    } catch (const Error& e) {
        rn.fail(e.what());
    }
}

flows::AffineMap parse_dense_layer(const Reader& r, const json& j)
{
    if (r.text(j, "type") != "relu-dense") r.fail("expected a relu-dense layer");
    Tensor w = r.any_matrix(j, "weight");
    const std::size_t out = w.rows();
    return {std::move(w), r.vector(j, "bias", out)};
}

} // namespace

std::string dump_flow(const flows::FlowModel& model)
{
    json j = header("flow");
    j["dim"] = model.dim();
    j["uniformly_scaling"] = model.uniformly_scaling();
    if (model.image()) {
        const auto& s = *model.image();
        j["image"] = {{"height", s.height}, {"width", s.width}, {"channels", s.channels}};
    } else {
        j["image"] = nullptr;
    }
    json layers = json::array();
    for (const auto& b : model.blocks()) {
        if (b.affine) layers.push_back(affine_json(*b.affine));
        layers.push_back({{"type", "coupling"},
                          {"mask", vec(b.coupling.mask())},
                          {"conditioner", conditioner_json(b.coupling.conditioner())}});
    }
    if (model.final_affine()) layers.push_back({{"type", "final-affine"}, {"affine", affine_json(*model.final_affine())}});
    j["layers"] = layers;

    const auto& base = model.base();
    const auto& rho = base.norm_dist();
    json norm{{"kind", radial::to_string(rho.kind())},
              {"raw", vec(rho.parameter().value)},
              {"dof", rho.dof()},
              {"learnable", rho.learnable()}};
    norm["shape_cap"] = rho.shape_cap() ? json(*rho.shape_cap()) : json(nullptr);
    j["base"] = {{"dim", base.dim()}, {"order", radial::to_string(base.order())}, {"norm", norm}};
    return emit(j);
}

flows::FlowModel parse_flow(std::string_view text)
{
    const json j = parse_json(text);
    check_header(j, "flow");
    Reader top{"flow"};
    const std::size_t d = top.count(j, "dim");
    auto base = parse_base(top.at(j, "base"));
    if (base.dim() != d) top.fail("base dimension differs from 'dim'");

    const json& layers = top.at(j, "layers");
    if (!layers.is_array()) top.fail("'layers' must be an array");
    std::vector<flows::AdjointBlock> blocks;
    std::optional<flows::AffineBijection> final_affine;
    std::optional<flows::AffineBijection> pending;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        Reader r{"layer " + std::to_string(i)};
        const json& l = layers[i];
        const std::string type = r.text(l, "type");
        const std::string pre = "block" + std::to_string(blocks.size());
        if (final_affine) r.fail("no layer may follow the final affine");
        if (type == "lu-affine" || type == "one-star-conv") {
            if (pending) r.fail("two affine layers in a row; an affine must be followed by a coupling");
            pending = parse_affine(r, l, pre + ".affine");
            if (pending->dim() != d) r.fail("affine acts on dimension " + std::to_string(pending->dim()));
        } else if (type == "coupling") {
            Tensor mask = r.vector(l, "mask", d);
            auto cond = parse_conditioner(r, r.at(l, "conditioner"), d, pre + ".cond");
            try {
                blocks.push_back({std::move(pending), flows::CouplingLayer(std::move(mask), std::move(cond))});
            } catch (const Error& e) {
                r.fail(e.what());
            }
            pending.reset();
        } else if (type == "final-affine") {
            if (pending) r.fail("affine layer without a coupling before the final affine");
            final_affine = parse_affine(r, r.at(l, "affine"), "final");
            if (final_affine->dim() != d) r.fail("final affine acts on dimension " + std::to_string(final_affine->dim()));
        } else {
            r.fail("unknown layer type '" + type + "'");
        }
    }
    if (pending) throw SchemaError("layer " + std::to_string(layers.size() - 1) + ": affine layer without a coupling");

    flows::FlowModel model(std::move(blocks), std::move(final_affine), std::move(base));
    model.set_uniformly_scaling(top.flag(j, "uniformly_scaling"));
    const json& img = top.at(j, "image");
    if (!img.is_null()) {
        Reader ri{"image"};
        flows::ImageShape s{ri.count(img, "height"), ri.count(img, "width"), ri.count(img, "channels")};
        if (s.size() != d) ri.fail("image shape does not match 'dim'");
        model.set_image(s);
    }
    return model;
}

std::string dump_classifier(const flows::ReluNetwork& net)
{
    json j = header("classifier");
    json layers = json::array();
    for (const auto& l : net.layers())
        layers.push_back({{"type", "relu-dense"}, {"weight", matrix(l.weight)}, {"bias", vec(l.bias)}});
    j["layers"] = layers;
    return emit(j);
}

flows::ReluNetwork parse_classifier(std::string_view text)
{
    const json j = parse_json(text);
    check_header(j, "classifier");
    Reader top{"classifier"};
    const json& layers = top.at(j, "layers");
    if (!layers.is_array() || layers.empty()) top.fail("'layers' must be a nonempty array");
    std::vector<flows::AffineMap> maps;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        Reader r{"layer " + std::to_string(i)};
        maps.push_back(parse_dense_layer(r, layers[i]));
        if (i > 0 && maps[i].weight.cols() != maps[i - 1].weight.rows())
            r.fail("input width " + std::to_string(maps[i].weight.cols()) + " does not match the previous layer");
    }
    return flows::ReluNetwork(std::move(maps));
}

std::string dump_graph(const verify::Graph& graph)
{
    json j = header("graph");
    j["input_dim"] = graph.input_dim();
    json nodes = json::array();
    for (std::size_t i = 1; i < graph.size(); ++i) {
        const auto& n = graph.node(i);
        json o{{"op", verify::to_string(n.op)}, {"inputs", n.inputs}};
        if (n.op == verify::Op::linear) {
            o["weight"] = matrix(n.weight);
            o["bias"] = vec(n.bias);
        }
        nodes.push_back(std::move(o));
    }
    j["nodes"] = nodes;
    json outs = json::array();
    for (const auto& [name, id] : graph.outputs()) outs.push_back({{"name", name}, {"node", id}});
    j["outputs"] = outs;
    return emit(j);
}

verify::Graph parse_graph(std::string_view text)
{
    const json j = parse_json(text);
    check_header(j, "graph");
    Reader top{"graph"};
    std::vector<verify::Node> nodes(1);
    nodes[0].op = verify::Op::input;
    nodes[0].dim = top.count(j, "input_dim");
    const json& list = top.at(j, "nodes");
    if (!list.is_array()) top.fail("'nodes' must be an array");
    for (std::size_t i = 0; i < list.size(); ++i) {
        Reader r{"graph node " + std::to_string(i + 1)};
        const json& o = list[i];
        verify::Node n;
        const std::string op = r.text(o, "op");
        if (op == "linear") n.op = verify::Op::linear;
        else if (op == "relu") n.op = verify::Op::relu;
        else if (op == "add") n.op = verify::Op::add;
        else r.fail("unknown op '" + op + "'");
        const json& ins = r.at(o, "inputs");
        if (!ins.is_array()) r.fail("'inputs' must be an array");
        for (const auto& e : ins) {
            if (!e.is_number_unsigned()) r.fail("'inputs' must hold node indices");
            n.inputs.push_back(e.get<std::size_t>());
        }
        if (n.op == verify::Op::linear) {
            n.weight = r.any_matrix(o, "weight");
            n.bias = r.vector(o, "bias", n.weight.rows());
        }
        nodes.push_back(std::move(n));
    }
    std::vector<std::pair<std::string, std::size_t>> outputs;
    const json& outs = top.at(j, "outputs");
    if (!outs.is_array()) top.fail("'outputs' must be an array");
    for (const auto& o : outs) outputs.emplace_back(top.text(o, "name"), top.count(o, "node"));
    return verify::Graph::from_nodes(std::move(nodes), std::move(outputs));
}

std::string file_kind(std::string_view text)
{
    const json j = parse_json(text);
    Reader r{"model file"};
    return r.text(j, "kind");
}

std::string read_text(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_text(const std::filesystem::path& path, std::string_view text)
{
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("write to '" + path.string() + "' failed");
}

void save(const flows::FlowModel& model, const std::filesystem::path& path) { write_text(path, dump_flow(model)); }
void save(const flows::ReluNetwork& net, const std::filesystem::path& path) { write_text(path, dump_classifier(net)); }
void save(const verify::Graph& graph, const std::filesystem::path& path) { write_text(path, dump_graph(graph)); }
flows::FlowModel load_flow(const std::filesystem::path& path) { return parse_flow(read_text(path)); }
flows::ReluNetwork load_classifier(const std::filesystem::path& path) { return parse_classifier(read_text(path)); }
verify::Graph load_graph(const std::filesystem::path& path) { return parse_graph(read_text(path)); }

} // namespace udlflow::io
