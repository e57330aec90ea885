#pragma once

#include "udlflow/verify/task.hpp"

#include <filesystem>
#include <string>
#include <string_view>

namespace udlflow::verify {

// Everything in a property file; the graph lives in the companion model file.
struct PropertySpec {
    Property property;
    LatentRegion region;
    std::size_t input_dim = 0; // latent (global, confidence) or data (local) dimension
    std::size_t classes = 0;
    std::string model; // companion graph file name, may be empty

    bool operator==(const PropertySpec&) const = default;
};

PropertySpec property_spec(const VerificationTask& task, std::string model = {});

// Text form: declarations, linear precondition assertions and the negated
// postcondition as an or-of-ands, so satisfying assignments are counterexamples.
std::string write_property(const PropertySpec& spec);
// FormatError when the text is malformed or when the assertions disagree with
// the @udlflow directives.
PropertySpec parse_property(std::string_view text);

// Rebuilds a task from a parsed property and its graph; checks that they fit.
VerificationTask assemble_task(const PropertySpec& spec, Graph graph);

struct ExportedSpec {
    std::filesystem::path property;
    std::filesystem::path model;
};

// Writes <stem>.vnnlib and <stem>.graph.json into `dir`.
ExportedSpec export_spec(const VerificationTask& task, const std::filesystem::path& dir, const std::string& stem);
VerificationTask import_spec(const std::filesystem::path& property_path);

} // namespace udlflow::verify
