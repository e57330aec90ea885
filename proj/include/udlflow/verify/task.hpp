#pragma once

#include "udlflow/valcal/validation.hpp"
#include "udlflow/verify/graph.hpp"

#include <optional>

namespace udlflow::verify {

enum class RegionKind { l1_ball, linf_ball, box };
std::string to_string(RegionKind k);

// Latent input set of a global or confidence task.
struct LatentRegion {
    RegionKind kind = RegionKind::box;
    double radius = 0.0; // balls
    IntervalBox box;     // box kind
    double q = 0.0;
    bool calibrated = false;

    std::size_t dim() const { return box.dim(); }
    // Axis-aligned hull; for the balls [-r, r]^d.
    IntervalBox hull() const;
    bool contains(std::span<const double> z) const;

    bool operator==(const LatentRegion&) const = default;
};

// Ball of the UDL at level q. k must match the base order and be l1 or linf;
// l2 regions are not linear and are refused.
LatentRegion latent_udl_region(const flows::FlowModel& model, double q, radial::NormOrder k,
                               const std::optional<valcal::Calibration>& calibration = std::nullopt);
// Cube of the given side centred at `center` (the origin when empty).
LatentRegion small_box_region(std::size_t dim, double side = 0.05, std::vector<double> center = {});

enum class PropertyKind { local_robustness, global_robustness, confidence_bound };
std::string to_string(PropertyKind k);

struct Property {
    PropertyKind kind = PropertyKind::global_robustness;
    double epsilon = 0.0;       // l_inf perturbation radius
    std::vector<double> center; // local
    std::size_t target = 0;     // local: argmax at the center; confidence: class id
    double tau = 0.0;           // confidence threshold

    bool operator==(const Property&) const = default;
};

// conf(y) = y_i - (sum_{j != i} y_j) / |y|
double confidence(std::span<const double> y, std::size_t i);

// Joint input box and optional l1 constraint on the first `cut_dims` inputs.
struct Domain {
    IntervalBox box;
    std::size_t cut_dims = 0;
    double cut_radius = 0.0;
    bool has_cut() const { return cut_dims > 0; }
    bool contains(std::span<const double> p) const;
};

// Graph inputs: local x'; global (z, delta) with outputs y = c(F(z)) and
// yp = c(F(z) + delta); confidence z with output y = c(F(z)).
struct VerificationTask {
    Property property;
    LatentRegion region;
    Graph graph;

    Domain domain() const;
    std::size_t classes() const;
    // Does the graph output at this input break the property? Ties count as violations.
    bool violates(std::span<const double> input) const;

    bool operator==(const VerificationTask&) const = default;
};

Domain task_domain(const Property& p, const LatentRegion& region);
bool violates(const Property& p, std::span<const double> y, std::span<const double> yp);

VerificationTask make_local_task(const flows::ReluNetwork& net, std::vector<double> x, double epsilon);
VerificationTask make_global_task(const flows::FlowModel& flow, const flows::ReluNetwork& net, LatentRegion region,
                                  double epsilon);
VerificationTask make_confidence_task(const flows::FlowModel& flow, const flows::ReluNetwork& net,
                                      LatentRegion region, std::size_t cls, double tau);

} // namespace udlflow::verify
