#pragma once

#include "udlflow/verify/engine.hpp"

#include <istream>
#include <optional>
#include <ostream>

namespace udlflow::verify {

struct BenchRow {
    std::string mode; // "global" or "local-<i>", i from 1
    double epsilon = 0.0;
    Status verdict = Status::unknown;
    double seconds = 0.0;
};

struct BenchOptions {
    double eps_verify = 0.001;
    double eps_falsify = 0.1;
    std::size_t instances = 20;
    std::optional<LatentRegion> region; // small latent box when unset
    VerifyOptions verify;
    std::uint64_t seed = 0;
};

struct BenchResult {
    std::vector<BenchRow> rows;
    std::vector<std::vector<double>> latents; // instance points z_i in the region
    std::vector<std::vector<double>> centers; // x_i = F(z_i)
};

// Two global rows (verify, falsify) then, for each of the two epsilons, one
// local row per instance. Instances are drawn from the global task's region.
BenchResult bench_robustness(const flows::FlowModel& flow, const flows::ReluNetwork& net,
                             const BenchOptions& options = {});

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows);
std::vector<BenchRow> read_bench_csv(std::istream& in);

// Smallest i with sum of the first i local times at `epsilon` >= the global
// time; empty when the local runs never catch up.
std::optional<std::size_t> crossover(const std::vector<BenchRow>& rows, double epsilon);

} // namespace udlflow::verify
