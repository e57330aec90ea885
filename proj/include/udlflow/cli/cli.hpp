#pragma once

#include "udlflow/training/trainer.hpp"
#include "udlflow/valcal/validation.hpp"

#include <ostream>
#include <string>
#include <vector>

namespace udlflow::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kFalsified = 1;
inline constexpr int kUsage = 2;
inline constexpr int kRuntime = 3;

// args excludes the program name. Every artifact path is printed to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

// Standalone SVG documents.
std::string pp_svg(const std::vector<valcal::PPPoint>& points, const std::string& title);
std::string history_svg(const std::vector<train::EpochRecord>& history);

} // namespace udlflow::cli
