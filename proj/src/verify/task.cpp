#include "udlflow/verify/task.hpp"

#include "udlflow/error.hpp"

#include <cmath>

namespace udlflow::verify {

std::string to_string(RegionKind k)
{
    switch (k) {
    case RegionKind::l1_ball: return "l1-ball";
    case RegionKind::linf_ball: return "linf-ball";
    case RegionKind::box: return "box";
    }
    return "?";
}

std::string to_string(PropertyKind k)
{
    switch (k) {
    case PropertyKind::local_robustness: return "local";
    case PropertyKind::global_robustness: return "global";
    case PropertyKind::confidence_bound: return "confidence";
    }
    return "?";
}

IntervalBox LatentRegion::hull() const { return box; }

bool LatentRegion::contains(std::span<const double> z) const
{
    if (!box.contains(z)) return false;
    if (kind != RegionKind::l1_ball) return true;
    double s = 0.0;
    for (double v : z) s += std::abs(v);
    return s <= radius;
}

namespace {

LatentRegion ball(RegionKind kind, std::size_t d, double r, double q, bool calibrated)
{
    LatentRegion reg;
    reg.kind = kind;
    reg.radius = r;
    reg.q = q;
    reg.calibrated = calibrated;
    reg.box = IntervalBox(std::vector<double>(d, -r), std::vector<double>(d, r));
    return reg;
}

} // namespace

LatentRegion latent_udl_region(const flows::FlowModel& model, double q, radial::NormOrder k,
                               const std::optional<valcal::Calibration>& calibration)
{
    if (k == radial::NormOrder::l2)
        throw ContractError("latent_udl_region: l2 level sets are not linear and cannot be exported");
    if (k != model.base().order())
        throw ContractError("latent_udl_region: requested " + radial::to_string(k) + " region but the base is " +
                            radial::to_string(model.base().order()) + "-radial");
    if (!(q >= 0.0 && q < 1.0)) throw ContractError("latent_udl_region: q must lie in [0, 1)");
    double r = 0.0;
    if (calibration) {
        if (calibration->order != k) throw ContractError("latent_udl_region: calibration uses a different norm");
        r = calibration->radius(q);
    } else {
        r = model.base().udl_radius(q);
    }
    const auto kind = k == radial::NormOrder::l1 ? RegionKind::l1_ball : RegionKind::linf_ball;
    return ball(kind, model.dim(), r, q, calibration.has_value());
}

LatentRegion small_box_region(std::size_t dim, double side, std::vector<double> center)
{
    if (!(side >= 0.0) || !std::isfinite(side)) throw ContractError("small_box_region: side must be finite and >= 0");
    if (center.empty()) center.assign(dim, 0.0);
    if (center.size() != dim) throw DimensionError("small_box_region: center has the wrong size");
    LatentRegion reg;
    reg.kind = RegionKind::box;
    reg.box = IntervalBox::around(center, side / 2.0);
    return reg;
}

double confidence(std::span<const double> y, std::size_t i)
{
    if (y.size() < 2) throw ContractError("confidence: needs at least two logits");
    if (i >= y.size()) throw ContractError("confidence: class index out of range");
    double others = 0.0;
    for (std::size_t j = 0; j < y.size(); ++j)
        if (j != i) others += y[j];
    return y[i] - others / static_cast<double>(y.size());
}

bool Domain::contains(std::span<const double> p) const
{
    if (!box.contains(p)) return false;
    if (!has_cut()) return true;
    double s = 0.0;
    for (std::size_t i = 0; i < cut_dims; ++i) s += std::abs(p[i]);
    return s <= cut_radius;
}

Domain task_domain(const Property& p, const LatentRegion& region)
{
    Domain d;
    if (p.kind == PropertyKind::local_robustness) {
        d.box = IntervalBox::around(p.center, p.epsilon);
        return d;
    }
    IntervalBox hull = region.hull();
    if (p.kind == PropertyKind::global_robustness) {
        const std::size_t n = hull.dim();
        for (std::size_t i = 0; i < n; ++i) {
            hull.lower.push_back(-p.epsilon);
            hull.upper.push_back(p.epsilon);
        }
    }
    d.box = std::move(hull);
    if (region.kind == RegionKind::l1_ball) {
        d.cut_dims = region.dim();
        d.cut_radius = region.radius;
    }
    return d;
}

namespace {

bool beaten(std::span<const double> y, std::size_t t)
{
    for (std::size_t j = 0; j < y.size(); ++j)
        if (j != t && y[j] >= y[t]) return true;
    return false;
}

} // namespace

bool violates(const Property& p, std::span<const double> y, std::span<const double> yp)
{
    switch (p.kind) {
    case PropertyKind::local_robustness: return beaten(y, p.target);
    case PropertyKind::global_robustness: {
        const std::size_t t = flows::argmax(y);
        return beaten(y, t) || beaten(yp, t);
    }
    case PropertyKind::confidence_bound: {
        for (std::size_t j = 0; j < y.size(); ++j)
            if (y[j] > y[p.target]) return false;
        return confidence(y, p.target) >= p.tau;
    }
    }
    return false;
}

Domain VerificationTask::domain() const { return task_domain(property, region); }

std::size_t VerificationTask::classes() const { return graph.node(graph.output("y")).dim; }

bool VerificationTask::violates(std::span<const double> input) const
{
    const auto v = graph.evaluate(input);
    const auto& y = v[graph.output("y")];
    if (property.kind == PropertyKind::global_robustness) return verify::violates(property, y, v[graph.output("yp")]);
    return verify::violates(property, y, {});
}

VerificationTask make_local_task(const flows::ReluNetwork& net, std::vector<double> x, double epsilon)
{
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ContractError("local task: epsilon must be finite and >= 0");
    if (x.size() != net.in_dim()) throw DimensionError("local task: point does not match the classifier input");
    VerificationTask t;
    t.property.kind = PropertyKind::local_robustness;
    t.property.epsilon = epsilon;
    t.property.target = net.predict(x);
    t.property.center = std::move(x);
    t.graph = Graph(net.in_dim());
    t.graph.set_output("y", t.graph.append_classifier(0, net));
    return t;
}

VerificationTask make_global_task(const flows::FlowModel& flow, const flows::ReluNetwork& net, LatentRegion region,
                                  double epsilon)
{
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon))
        throw ContractError("global task: epsilon must be finite and >= 0");
    const std::size_t d = flow.dim();
    if (region.dim() != d) throw DimensionError("global task: region does not match the flow dimension");
    if (net.in_dim() != d) throw DimensionError("global task: classifier input does not match the flow");
    VerificationTask t;
    t.property.kind = PropertyKind::global_robustness;
    t.property.epsilon = epsilon;
    t.region = std::move(region);
    Graph& g = t.graph;
    g = Graph(2 * d);
    const std::size_t x = g.append_flow(g.add_slice(0, 0, d), flow);
    const std::size_t xp = g.add_add(x, g.add_slice(0, d, 2 * d));
    g.set_output("x", x);
    g.set_output("y", g.append_classifier(x, net));
    g.set_output("yp", g.append_classifier(xp, net));
    return t;
}

VerificationTask make_confidence_task(const flows::FlowModel& flow, const flows::ReluNetwork& net,
                                      LatentRegion region, std::size_t cls, double tau)
{
    if (!std::isfinite(tau)) throw ContractError("confidence task: tau must be finite");
    if (cls >= net.classes()) throw ContractError("confidence task: class index out of range");
    if (net.classes() < 2) throw ContractError("confidence task: needs at least two classes");
    const std::size_t d = flow.dim();
    if (region.dim() != d || net.in_dim() != d) throw DimensionError("confidence task: dimension mismatch");
    VerificationTask t;
    t.property.kind = PropertyKind::confidence_bound;
    t.property.target = cls;
    t.property.tau = tau;
    t.region = std::move(region);
    t.graph = Graph(d);
    const std::size_t x = t.graph.append_flow(0, flow);
    t.graph.set_output("x", x);
    t.graph.set_output("y", t.graph.append_classifier(x, net));
    return t;
}

} // namespace udlflow::verify
