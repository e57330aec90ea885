#pragma once

#include "udlflow/flows/classifier.hpp"
#include "udlflow/flows/flow_model.hpp"
#include "udlflow/verify/graph.hpp"

#include <filesystem>
#include <string>
#include <string_view>

namespace udlflow::io {

inline constexpr int kFormatVersion = 1;

// Canonical text: sorted keys, two-space indent, shortest round-trip decimals,
// trailing newline. Equal models give identical bytes.
std::string dump_flow(const flows::FlowModel& model);
std::string dump_classifier(const flows::ReluNetwork& net);
std::string dump_graph(const verify::Graph& graph);

// VersionError on a format_version mismatch, SchemaError (naming the layer
// or node index) on anything structurally wrong, FormatError on bad JSON.
flows::FlowModel parse_flow(std::string_view text);
flows::ReluNetwork parse_classifier(std::string_view text);
verify::Graph parse_graph(std::string_view text);

// "flow", "classifier" or "graph".
std::string file_kind(std::string_view text);

void save(const flows::FlowModel& model, const std::filesystem::path& path);
void save(const flows::ReluNetwork& net, const std::filesystem::path& path);
void save(const verify::Graph& graph, const std::filesystem::path& path);
flows::FlowModel load_flow(const std::filesystem::path& path);
flows::ReluNetwork load_classifier(const std::filesystem::path& path);
verify::Graph load_graph(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
// Creates parent directories; IoError when the file cannot be written.
void write_text(const std::filesystem::path& path, std::string_view text);

} // namespace udlflow::io
