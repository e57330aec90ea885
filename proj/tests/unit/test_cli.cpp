#include "doctest.h"

#include "udlflow/cli/cli.hpp"
#include "udlflow/io/model_file.hpp"
#include "udlflow/verify/bench.hpp"
#include "udlflow/verify/property_file.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace udlflow;

namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run invoke(std::vector<std::string> args, const fs::path& dir)
{
    args.insert(args.begin(), {"--out-dir", dir.string()});
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path fresh(const std::string& name)
{
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    return dir;
}

} // namespace

TEST_CASE("usage errors and help")
{
    const fs::path dir = fresh("udlflow_cli_usage");
    CHECK(invoke({}, dir).code == cli::kUsage);
    CHECK(invoke({"no-such-verb"}, dir).code == cli::kUsage);
    CHECK(invoke({"train"}, dir).code == cli::kUsage); // --data required
    const auto h = invoke({"--help"}, dir);
    CHECK(h.code == cli::kOk);
    CHECK(h.out.find("bench-robustness") != std::string::npos);
    const auto missing = invoke({"sample", "--model", (dir / "nope.json").string()}, dir);
    CHECK(missing.code == cli::kRuntime);
    CHECK(missing.err.find("nope.json") != std::string::npos);
}

TEST_CASE("end to end on a toy dataset")
{
    const fs::path dir = fresh("udlflow_cli_e2e");
    REQUIRE(invoke({"synth-data", "--name", "two-moons", "--n", "300"}, dir).code == cli::kOk);
    CHECK(fs::exists(dir / "two-moons.csv"));

    const auto tr = invoke({"train", "--data", (dir / "two-moons.csv").string(), "--blocks", "2", "--hidden-layers", "1",
                         "--epochs", "3", "--name", "moons"},
                        dir);
    REQUIRE(tr.code == cli::kOk);
    for (const char* f : {"moons.json", "moons_history.csv", "moons_history.svg"}) {
        CHECK(fs::exists(dir / f));
        CHECK(tr.out.find((dir / f).string()) != std::string::npos);
    }
    const auto flow = io::load_flow(dir / "moons.json");
    CHECK(flow.dim() == 2);

    const auto cl = invoke({"train", "--kind", "classifier", "--data", "synth:two-moons", "--n", "300", "--hidden", "8",
                         "--epochs", "3", "--name", "clf"},
                        dir);
    REQUIRE(cl.code == cli::kOk);
    CHECK(io::load_classifier(dir / "clf.json").classes() == 2);

    REQUIRE(invoke({"sample", "--model", (dir / "moons.json").string(), "--n", "50"}, dir).code == cli::kOk);
    {
        std::ifstream in(dir / "samples.csv");
        std::string line;
        std::size_t rows = 0;
        std::getline(in, line);
        CHECK(line == "x0,x1");
        while (std::getline(in, line)) ++rows;
        CHECK(rows == 50);
    }
    REQUIRE(invoke({"logprob", "--model", (dir / "moons.json").string(), "--data", (dir / "samples.csv").string()}, dir)
                .code == cli::kOk);
    CHECK(fs::exists(dir / "logprob.csv"));

    const auto val = invoke({"validate", "--model", (dir / "moons.json").string(), "--data", "synth:two-moons", "--n",
                          "200", "--permutations", "20"},
                         dir);
    REQUIRE(val.code == cli::kOk);
    for (const char* f : {"validation.txt", "validation.csv", "validation_pp.csv", "validation_pp.svg"})
        CHECK(fs::exists(dir / f));

    const std::vector<std::string> models{"--model", (dir / "moons.json").string(), "--classifier",
                                          (dir / "clf.json").string()};
    auto with = [&](std::vector<std::string> v) {
        v.insert(v.begin() + 1, models.begin(), models.end());
        return v;
    };
    const auto ver = invoke(with({"verify", "--eps", "0.0", "--box-side", "0.0"}), dir);
    // a point box at eps 0 is decided exactly
    CHECK(ver.code != cli::kUsage);
    CHECK(ver.code != cli::kRuntime);
    CHECK(fs::exists(dir / "verdict.txt"));
    CHECK(io::read_text(dir / "verdict.txt").find("seconds") == std::string::npos);

    REQUIRE(invoke(with({"export", "--eps", "0.01", "--name", "prop"}), dir).code == cli::kOk);
    const auto task = verify::import_spec(dir / "prop.vnnlib");
    CHECK(task.property.kind == verify::PropertyKind::global_robustness);
    CHECK(task.property.epsilon == 0.01);

    const auto bench = invoke(with({"bench-robustness", "--instances", "3", "--budget", "200"}), dir);
    REQUIRE(bench.code == cli::kOk);
    std::ifstream in(dir / "bench.csv");
    CHECK(verify::read_bench_csv(in).size() == 8);
    CHECK(bench.out.find("crossover=") != std::string::npos);
}

TEST_CASE("verify exit codes follow the verdict")
{
    const fs::path dir = fresh("udlflow_cli_verdicts");
    // 2-2 identity classifier: class 0 iff x0 >= x1
    const flows::ReluNetwork net(std::vector<flows::AffineMap>{
        flows::AffineMap{num::Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0}), num::Tensor({2}, {0.0, 0.0})}});
    io::save(net, dir / "id.json");
    const std::string clf = (dir / "id.json").string();
    const auto safe = invoke({"verify", "--classifier", clf, "--mode", "local", "--point", "1,0", "--eps", "0.1"}, dir);
    CHECK(safe.code == cli::kOk);
    CHECK(safe.out.find("verdict=certified") != std::string::npos);
    const auto bad = invoke({"verify", "--classifier", clf, "--mode", "local", "--point", "1,0.9", "--eps", "0.1"}, dir);
    CHECK(bad.code == cli::kFalsified);
    CHECK(fs::exists(dir / "verdict_counterexample.csv"));
    CHECK(invoke({"verify", "--classifier", clf, "--mode", "local", "--point", "1,x"}, dir).code == cli::kUsage);
    CHECK(invoke({"verify", "--classifier", clf, "--mode", "global"}, dir).code == cli::kUsage);
}

TEST_CASE("svg documents")
{
    const std::string pp = cli::pp_svg({{0.0, 0.0}, {0.5, 0.4}, {1.0, 1.0}}, "t");
    CHECK(pp.rfind("<svg", 0) == 0);
    CHECK(pp.find("polyline") != std::string::npos);
    const std::string h = cli::history_svg({{1, 2.0, 2.5, 0.0}, {2, 1.5, 1.8, 0.0}});
    CHECK(h.find("</svg>") != std::string::npos);
    CHECK(cli::history_svg({}).find("</svg>") != std::string::npos);
}
