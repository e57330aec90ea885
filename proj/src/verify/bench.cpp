#include "udlflow/verify/bench.hpp"

#include "udlflow/error.hpp"

#include <charconv>
#include <random>
#include <sstream>

namespace udlflow::verify {

namespace {

std::string fmt(double v)
{
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

Status parse_status(const std::string& s)
{
    for (Status st : {Status::certified, Status::falsified, Status::unknown})
        if (to_string(st) == s) return st;
    throw FormatError("bench csv: unknown verdict '" + s + "'");
}

} // namespace

BenchResult bench_robustness(const flows::FlowModel& flow, const flows::ReluNetwork& net, const BenchOptions& o)
{
    const LatentRegion region = o.region ? *o.region : small_box_region(flow.dim());
    BenchResult res;
    for (double eps : {o.eps_verify, o.eps_falsify}) {
        const Verdict v = verify(make_global_task(flow, net, region, eps), o.verify);
        res.rows.push_back({"global", eps, v.status, v.seconds});
    }

    std::mt19937_64 rng(o.seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const IntervalBox hull = region.hull();
    for (std::size_t attempts = 0; res.latents.size() < o.instances; ++attempts) {
        if (attempts > 1000 * (o.instances + 1)) throw ContractError("bench: cannot sample points in the region");
        std::vector<double> z(hull.dim());
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = hull.lower[i] + u(rng) * hull.width(i);
        if (!region.contains(z)) continue;
        const Tensor x = flow.forward(Tensor({1, z.size()}, z));
        res.centers.emplace_back(x.values().begin(), x.values().end());
        res.latents.push_back(std::move(z));
    }
    for (double eps : {o.eps_verify, o.eps_falsify})
        for (std::size_t i = 0; i < res.centers.size(); ++i) {
            const Verdict v = verify_local(net, res.centers[i], eps, o.verify);
            res.rows.push_back({"local-" + std::to_string(i + 1), eps, v.status, v.seconds});
        }
    return res;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows)
{
    out << "mode,epsilon,verdict,seconds\n";
    for (const auto& r : rows) out << r.mode << ',' << fmt(r.epsilon) << ',' << to_string(r.verdict) << ',' << fmt(r.seconds) << '\n';
}

std::vector<BenchRow> read_bench_csv(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line) || line != "mode,epsilon,verdict,seconds")
        throw FormatError("bench csv: missing header mode,epsilon,verdict,seconds");
    std::vector<BenchRow> rows;
    std::size_t no = 1;
    while (std::getline(in, line)) {
        ++no;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 4) throw FormatError("bench csv line " + std::to_string(no) + ": expected 4 fields");
        BenchRow r;
        r.mode = f[0];
        try {
            r.epsilon = std::stod(f[1]);
            r.seconds = std::stod(f[3]);
        } catch (const std::exception&) {
            throw FormatError("bench csv line " + std::to_string(no) + ": bad number");
        }
        r.verdict = parse_status(f[2]);
        rows.push_back(std::move(r));
    }
    return rows;
}

std::optional<std::size_t> crossover(const std::vector<BenchRow>& rows, double epsilon)
{
    std::optional<double> global;
    for (const auto& r : rows)
        if (r.mode == "global" && r.epsilon == epsilon) global = r.seconds;
    if (!global) return std::nullopt;
    double total = 0.0;
    std::size_t i = 0;
    for (const auto& r : rows) {
        if (r.epsilon != epsilon || r.mode.rfind("local-", 0) != 0) continue;
        ++i;
        total += r.seconds;
        if (total >= *global) return i;
    }
    return std::nullopt;
}

} // namespace udlflow::verify
