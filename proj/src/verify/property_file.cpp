#include "udlflow/verify/property_file.hpp"

#include "udlflow/error.hpp"
#include "udlflow/io/model_file.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <map>
#include <sstream>

namespace udlflow::verify {

namespace {

constexpr int kPropertyVersion = 1;

std::string fmt(double v)
{
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string fmt_list(std::span<const double> v)
{
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt(v[i]);
    return s;
}

std::string var(const char* prefix, std::size_t i) { return std::string(prefix) + "_" + std::to_string(i); }

std::string ge(const std::string& a, const std::string& b) { return "(>= " + a + " " + b + ")"; }
std::string le(const std::string& a, const std::string& b) { return "(<= " + a + " " + b + ")"; }
std::string assert_(const std::string& e) { return "(assert " + e + ")"; }

void box_bounds(std::vector<std::string>& out, const char* prefix, const IntervalBox& b)
{
    for (std::size_t i = 0; i < b.dim(); ++i) {
        out.push_back(assert_(ge(var(prefix, i), fmt(b.lower[i]))));
        out.push_back(assert_(le(var(prefix, i), fmt(b.upper[i]))));
    }
}

void region_constraints(std::vector<std::string>& out, const LatentRegion& r)
{
    if (r.kind != RegionKind::l1_ball) {
        box_bounds(out, "Z", r.box);
        return;
    }
    std::string sum = "(+";
    for (std::size_t i = 0; i < r.dim(); ++i) {
        out.push_back(assert_(ge(var("T", i), var("Z", i))));
        out.push_back(assert_(ge(var("T", i), "(- " + var("Z", i) + ")")));
        sum += " " + var("T", i);
    }
    out.push_back(assert_(le(sum + ")", fmt(r.radius))));
}

// y_a is a (weak) maximum
std::string weak_max(const char* y, std::size_t a, std::size_t classes)
{
    std::string s;
    for (std::size_t k = 0; k < classes; ++k)
        if (k != a) s += " " + ge(var(y, a), var(y, k));
    return s;
}

std::vector<std::string> body(const PropertySpec& s)
{
    std::vector<std::string> out;
    const std::size_t d = s.input_dim, c = s.classes;
    const Property& p = s.property;
    const bool l1 = p.kind != PropertyKind::local_robustness && s.region.kind == RegionKind::l1_ball;
    const char* in = p.kind == PropertyKind::local_robustness ? "X" : "Z";
    for (std::size_t i = 0; i < d; ++i) out.push_back("(declare-input " + var(in, i) + ")");
    if (p.kind == PropertyKind::global_robustness)
        for (std::size_t i = 0; i < d; ++i) out.push_back("(declare-input " + var("D", i) + ")");
    if (l1)
        for (std::size_t i = 0; i < d; ++i) out.push_back("(declare-aux " + var("T", i) + ")");
    for (std::size_t j = 0; j < c; ++j) out.push_back("(declare-output " + var("Y", j) + ")");
    if (p.kind == PropertyKind::global_robustness)
        for (std::size_t j = 0; j < c; ++j) out.push_back("(declare-output " + var("Yp", j) + ")");

    std::string neg = "(or";
    switch (p.kind) {
    case PropertyKind::local_robustness:
        box_bounds(out, "X", IntervalBox::around(p.center, p.epsilon));
        for (std::size_t j = 0; j < c; ++j)
            if (j != p.target) neg += " (and " + ge(var("Y", j), var("Y", p.target)) + ")";
        break;
    case PropertyKind::global_robustness:
        region_constraints(out, s.region);
        box_bounds(out, "D", IntervalBox(std::vector<double>(d, -p.epsilon), std::vector<double>(d, p.epsilon)));
        for (std::size_t a = 0; a < c; ++a)
            for (std::size_t b = 0; b < c; ++b)
                if (a != b) neg += " (and" + weak_max("Y", a, c) + " " + ge(var("Yp", b), var("Yp", a)) + ")";
        break;
    case PropertyKind::confidence_bound: {
        region_constraints(out, s.region);
        std::string conf = "(+";
        for (std::size_t j = 0; j < c; ++j)
            conf += " (* " + fmt(j == p.target ? 1.0 : -1.0 / static_cast<double>(c)) + " " + var("Y", j) + ")";
        conf += ")";
        neg += " (and" + weak_max("Y", p.target, c) + " " + ge(conf, fmt(p.tau)) + ")";
        break;
    }
    }
    out.push_back(assert_(neg + ")"));
    return out;
}

// ---- s-expressions ----

struct Sexp {
    std::string atom; // empty for lists
    std::vector<Sexp> items;
    std::size_t line = 0;
};

class SexpReader {
public:
    explicit SexpReader(std::string_view text) : t_(text) {}

    bool next(Sexp& out)
    {
        skip();
        if (pos_ >= t_.size()) return false;
        out = read();
        return true;
    }

    std::size_t line() const { return line_; }

private:
    [[noreturn]] void fail(const std::string& m) const
    {
        throw FormatError("property file line " + std::to_string(line_) + ": " + m);
    }

    void skip()
    {
        while (pos_ < t_.size()) {
            const char ch = t_[pos_];
            if (ch == '\n') {
                ++line_;
                ++pos_;
            } else if (std::isspace(static_cast<unsigned char>(ch))) {
                ++pos_;
            } else if (ch == ';') {
                while (pos_ < t_.size() && t_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    Sexp read()
    {
        skip();
        if (pos_ >= t_.size()) fail("unexpected end of file");
        Sexp s;
        s.line = line_;
        if (t_[pos_] == ')') fail("unbalanced ')'");
        if (t_[pos_] == '(') {
            ++pos_;
            for (;;) {
                skip();
                if (pos_ >= t_.size()) fail("missing ')'");
                if (t_[pos_] == ')') {
                    ++pos_;
                    break;
                }
                s.items.push_back(read());
            }
            if (s.items.empty()) fail("empty expression");
            return s;
        }
        const std::size_t b = pos_;
        while (pos_ < t_.size() && !std::isspace(static_cast<unsigned char>(t_[pos_])) && t_[pos_] != '(' &&
               t_[pos_] != ')' && t_[pos_] != ';')
            ++pos_;
        s.atom = std::string(t_.substr(b, pos_ - b));
        return s;
    }

    std::string_view t_;
    std::size_t pos_ = 0;
    std::size_t line_ = 1;
};

bool as_number(const std::string& a, double& v)
{
    if (a.empty()) return false;
    auto res = std::from_chars(a.data(), a.data() + a.size(), v);
    return res.ec == std::errc() && res.ptr == a.data() + a.size();
}

bool same(const Sexp& a, const Sexp& b)
{
    if (a.items.empty() != b.items.empty()) return false;
    if (a.items.empty()) {
        double x, y;
        if (as_number(a.atom, x) && as_number(b.atom, y)) return x == y;
        return a.atom == b.atom;
    }
    if (a.items.size() != b.items.size()) return false;
    for (std::size_t i = 0; i < a.items.size(); ++i)
        if (!same(a.items[i], b.items[i])) return false;
    return true;
}

std::vector<Sexp> read_all(std::string_view text)
{
    SexpReader r(text);
    std::vector<Sexp> out;
    Sexp s;
    while (r.next(s)) out.push_back(std::move(s));
    return out;
}

// ---- directives ----

using Directives = std::map<std::string, std::vector<std::string>>;

Directives read_directives(std::string_view text)
{
    Directives d;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
        ++no;
        const std::string tag = ";; @udlflow ";
        if (line.rfind(tag, 0) != 0) continue;
        std::istringstream w(line.substr(tag.size()));
        std::string key, tok;
        w >> key;
        if (key.empty()) throw FormatError("property file line " + std::to_string(no) + ": empty directive");
        if (d.count(key)) throw FormatError("property file line " + std::to_string(no) + ": repeated directive '" + key + "'");
        auto& vals = d[key];
        while (w >> tok) vals.push_back(tok);
    }
    return d;
}

struct DirectiveReader {
    const Directives& d;

    const std::vector<std::string>& get(const std::string& k) const
    {
        auto it = d.find(k);
        if (it == d.end()) throw FormatError("property file: missing directive '" + k + "'");
        return it->second;
    }
    std::string word(const std::string& k) const
    {
        const auto& v = get(k);
        if (v.size() != 1) throw FormatError("property file: directive '" + k + "' takes one value");
        return v[0];
    }
    std::vector<double> numbers(const std::string& k) const
    {
        std::vector<double> out;
        for (const auto& s : get(k)) {
            double v;
            if (!as_number(s, v)) throw FormatError("property file: directive '" + k + "' has a bad number '" + s + "'");
            out.push_back(v);
        }
        return out;
    }
    double number(const std::string& k) const
    {
        const auto v = numbers(k);
        if (v.size() != 1) throw FormatError("property file: directive '" + k + "' takes one value");
        return v[0];
    }
    std::size_t count(const std::string& k) const
    {
        const double v = number(k);
        if (!(v >= 0.0) || v != std::floor(v)) throw FormatError("property file: directive '" + k + "' must be a count");
        return static_cast<std::size_t>(v);
    }
};

} // namespace

PropertySpec property_spec(const VerificationTask& task, std::string model)
{
    PropertySpec s;
    s.property = task.property;
    s.region = task.region;
    s.classes = task.classes();
    s.input_dim = task.property.kind == PropertyKind::local_robustness ? task.property.center.size() : task.region.dim();
    s.model = std::move(model);
    return s;
}

std::string write_property(const PropertySpec& s)
{
    const Property& p = s.property;
    const bool local = p.kind == PropertyKind::local_robustness;
    if (!local && s.region.dim() != s.input_dim) throw DimensionError("write_property: region dimension mismatch");
    if (local && p.center.size() != s.input_dim) throw DimensionError("write_property: center dimension mismatch");
    if (s.classes < 2) throw ContractError("write_property: needs at least two classes");
    if (s.model.find_first_of(" \t\n") != std::string::npos)
        throw ContractError("write_property: model file name must not contain whitespace");

    std::ostringstream o;
    o << "; udlflow property file: a satisfying assignment is a counterexample\n";
    auto dir = [&](const std::string& k, const std::string& v) { o << ";; @udlflow " << k << " " << v << "\n"; };
    dir("version", std::to_string(kPropertyVersion));
    dir("kind", to_string(p.kind));
    dir("dim", std::to_string(s.input_dim));
    dir("classes", std::to_string(s.classes));
    dir("epsilon", fmt(p.epsilon));
    if (local) {
        dir("center", fmt_list(p.center));
    } else {
        dir("region", to_string(s.region.kind));
        dir("radius", fmt(s.region.radius));
        dir("q", fmt(s.region.q));
        dir("calibrated", s.region.calibrated ? "1" : "0");
        dir("lower", fmt_list(s.region.box.lower));
        dir("upper", fmt_list(s.region.box.upper));
    }
    if (p.kind != PropertyKind::global_robustness) dir("target", std::to_string(p.target));
    if (p.kind == PropertyKind::confidence_bound) dir("tau", fmt(p.tau));
    if (!s.model.empty()) dir("model", s.model);
    for (const auto& line : body(s)) o << line << "\n";
    return o.str();
}

PropertySpec parse_property(std::string_view text)
{
    const Directives d = read_directives(text);
    const DirectiveReader r{d};
    if (r.word("version") != std::to_string(kPropertyVersion))
        throw VersionError("property file version " + r.word("version") + " is not supported");

    PropertySpec s;
    const std::string kind = r.word("kind");
    if (kind == "local") s.property.kind = PropertyKind::local_robustness;
    else if (kind == "global") s.property.kind = PropertyKind::global_robustness;
    else if (kind == "confidence") s.property.kind = PropertyKind::confidence_bound;
    else throw FormatError("property file: unknown kind '" + kind + "'");
    s.input_dim = r.count("dim");
    s.classes = r.count("classes");
    s.property.epsilon = r.number("epsilon");
    if (!(s.property.epsilon >= 0.0)) throw FormatError("property file: epsilon must be >= 0");
    if (s.classes < 2) throw FormatError("property file: needs at least two classes");

    if (s.property.kind == PropertyKind::local_robustness) {
        s.property.center = r.numbers("center");
        if (s.property.center.size() != s.input_dim) throw FormatError("property file: center has the wrong length");
    } else {
        const std::string region = r.word("region");
        if (region == "box") s.region.kind = RegionKind::box;
        else if (region == "l1-ball") s.region.kind = RegionKind::l1_ball;
        else if (region == "linf-ball") s.region.kind = RegionKind::linf_ball;
        else throw FormatError("property file: unknown region '" + region + "'");
        s.region.radius = r.number("radius");
        s.region.q = r.number("q");
        s.region.calibrated = r.count("calibrated") != 0;
        auto lo = r.numbers("lower"), hi = r.numbers("upper");
        if (lo.size() != s.input_dim || hi.size() != s.input_dim)
            throw FormatError("property file: region bounds have the wrong length");
        try {
            s.region.box = IntervalBox(std::move(lo), std::move(hi));
        } catch (const Error& e) {
            throw FormatError(std::string("property file: ") + e.what());
        }
    }
    if (s.property.kind != PropertyKind::global_robustness) {
        s.property.target = r.count("target");
        if (s.property.target >= s.classes) throw FormatError("property file: target class out of range");
    }
    if (s.property.kind == PropertyKind::confidence_bound) s.property.tau = r.number("tau");
    if (d.count("model")) s.model = r.word("model");

    const auto parsed = read_all(text);
    const auto expected_lines = body(s);
    std::string joined;
    for (const auto& l : expected_lines) joined += l + "\n";
    const auto expected = read_all(joined);
    for (std::size_t i = 0; i < std::max(parsed.size(), expected.size()); ++i) {
        if (i >= parsed.size())
            throw FormatError("property file: missing statement " + expected_lines[i]);
        if (i >= expected.size() || !same(parsed[i], expected[i]))
            throw FormatError("property file line " + std::to_string(parsed[i].line) +
                              ": statement does not match the declared property" +
                              (i < expected.size() ? " (expected " + expected_lines[i] + ")" : ""));
    }
    return s;
}

VerificationTask assemble_task(const PropertySpec& spec, Graph graph)
{
    const bool global = spec.property.kind == PropertyKind::global_robustness;
    const std::size_t in = global ? 2 * spec.input_dim : spec.input_dim;
    if (graph.input_dim() != in)
        throw DimensionError("assemble_task: graph takes " + std::to_string(graph.input_dim()) + " inputs, property needs " +
                             std::to_string(in));
    if (!graph.has_output("y") || (global && !graph.has_output("yp")))
        throw ContractError("assemble_task: graph lacks the outputs the property refers to");
    VerificationTask t{spec.property, spec.region, std::move(graph)};
    if (t.classes() != spec.classes) throw DimensionError("assemble_task: class count differs from the graph");
    if (global && t.graph.node(t.graph.output("yp")).dim != spec.classes)
        throw DimensionError("assemble_task: perturbed output has the wrong size");
    return t;
}

ExportedSpec export_spec(const VerificationTask& task, const std::filesystem::path& dir, const std::string& stem)
{
    const PropertySpec s = property_spec(task, stem + ".graph.json");
    ExportedSpec out{dir / (stem + ".vnnlib"), dir / s.model};
    io::write_text(out.property, write_property(s));
    io::save(task.graph, out.model);
    return out;
}

VerificationTask import_spec(const std::filesystem::path& property_path)
{
    const PropertySpec s = parse_property(io::read_text(property_path));
    if (s.model.empty()) throw FormatError("property file names no model file");
    return assemble_task(s, io::load_graph(property_path.parent_path() / s.model));
}

} // namespace udlflow::verify
