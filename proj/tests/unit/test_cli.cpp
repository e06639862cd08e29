#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "pmlds/io.hpp"

namespace fs = std::filesystem;
using namespace pmlds;

namespace {

int run(std::initializer_list<std::string> args)
{
    std::vector<std::string> owned{"pmlds"};
    owned.insert(owned.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : owned) {
        argv.push_back(a.c_str());
    }
    return cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name)
{
    const auto p = fs::temp_directory_path() / ("pmlds_cli_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("generate, train and predict end to end")
{
    const auto dir = scratch("pipeline");
    REQUIRE(run({"generate", "synthetic", "--steps", "120", "--seed", "3", "--out", (dir / "data").string()}) ==
            cli::kOk);
    const auto obs = (dir / "data" / "observations.csv").string();
    CHECK(io::read_csv(obs).rows() == 120);
    CHECK(io::read_csv(obs).cols() == 10);
    CHECK(fs::exists(dir / "data" / "truth.json"));
    CHECK(fs::exists(dir / "data" / "manifest.json"));

    for (const char* name : {"a", "b"}) {
        REQUIRE(run({"train", "--data", obs, "--L", "40", "--N", "30", "--seed", "5", "--out",
                     (dir / name).string()}) == cli::kOk);
    }
    CHECK(slurp(dir / "a" / "checkpoint.json") == slurp(dir / "b" / "checkpoint.json"));
    CHECK(slurp(dir / "a" / "statics.json") == slurp(dir / "b" / "statics.json"));
    const Matrix log = io::read_csv((dir / "a" / "training_log.csv").string());
    CHECK(log.rows() == 3);

    // Resuming continues the iteration count.
    REQUIRE(run({"train", "--data", obs, "--resume", (dir / "a" / "checkpoint.json").string(), "--iterations", "1",
                 "--out", (dir / "resumed").string()}) == cli::kOk);
    CHECK(io::read_csv((dir / "resumed" / "training_log.csv").string())(0, 0) == 4.0);

    for (const char* name : {"p1", "p2"}) {
        REQUIRE(run({"predict", "--checkpoint", (dir / "a" / "checkpoint.json").string(), "--data", obs,
                     "--horizon", "5", "--draws", "50", "--out", (dir / name).string()}) == cli::kOk);
    }
    CHECK(slurp(dir / "p1" / "prediction.csv") == slurp(dir / "p2" / "prediction.csv"));
    CHECK(io::read_csv((dir / "p1" / "prediction.csv").string()).rows() == 50);

    REQUIRE(run({"predict", "--checkpoint", (dir / "a" / "checkpoint.json").string(), "--data", obs, "--horizon",
                 "0", "--out", (dir / "p0").string()}) == cli::kOk);
    CHECK(io::read_csv((dir / "p0" / "prediction.csv").string()).rows() == 0);

    // Thread count does not change the results.
    REQUIRE(run({"train", "--data", obs, "--L", "40", "--N", "30", "--seed", "5", "--threads", "3", "--out",
                 (dir / "c").string()}) == cli::kOk);
    CHECK(slurp(dir / "a" / "checkpoint.json") == slurp(dir / "c" / "checkpoint.json"));
    fs::remove_all(dir);
}

TEST_CASE("bad input maps to exit codes")
{
    const auto dir = scratch("errors");
    fs::create_directories(dir);
    CHECK(run({}) == cli::kUsage);
    CHECK(run({"no-such-command"}) == cli::kUsage);
    CHECK(run({"train"}) == cli::kUsage);

    std::ofstream(dir / "empty.csv") << "y1,y2\n";
    CHECK(run({"train", "--data", (dir / "empty.csv").string(), "--out", (dir / "t").string()}) == cli::kUsage);

    std::ofstream(dir / "ragged.csv") << "1,2\n3\n";
    CHECK(run({"train", "--data", (dir / "ragged.csv").string(), "--out", (dir / "t").string()}) == cli::kData);
    CHECK(run({"train", "--data", (dir / "missing.csv").string(), "--out", (dir / "t").string()}) == cli::kData);

    REQUIRE(run({"generate", "synthetic", "--steps", "40", "--out", (dir / "data").string()}) == cli::kOk);
    const auto obs = (dir / "data" / "observations.csv").string();
    REQUIRE(run({"train", "--data", obs, "--L", "20", "--N", "10", "--out", (dir / "m").string()}) == cli::kOk);

    std::ofstream(dir / "three.csv") << "1,2,3\n4,5,6\n";
    CHECK(run({"predict", "--checkpoint", (dir / "m" / "checkpoint.json").string(), "--data",
               (dir / "three.csv").string(), "--out", (dir / "p").string()}) == cli::kUsage);
    CHECK(run({"train", "--data", obs, "--L", "20", "--N", "0", "--out", (dir / "bad").string()}) == cli::kUsage);
    fs::remove_all(dir);
}

TEST_CASE("heat subcommands")
{
    const auto dir = scratch("heat");
    REQUIRE(run({"generate", "heat", "--elements", "20", "--steps", "30", "--out", (dir / "g").string()}) ==
            cli::kOk);
    CHECK(io::read_csv((dir / "g" / "observations.csv").string()).cols() == 21);
    CHECK(io::read_csv((dir / "g" / "observations.csv").string()).rows() == 30);

    REQUIRE(run({"simulate-heat", "--elements", "20", "--N", "20", "--draws", "50", "--max-time", "0.1",
                 "--snapshots", "0.05,0.1", "--out", (dir / "s").string()}) == cli::kOk);
    const auto report = io::read_json((dir / "s" / "report.json").string());
    CHECK(report.at("speedup").get<double>() == 25.0);
    CHECK(fs::exists(dir / "s" / "manifest.json"));
    CHECK(run({"simulate-heat", "--burst", "15", "--out", (dir / "bad").string()}) == cli::kUsage);
    CHECK(run({"simulate-heat", "--snapshots", "0.1,abc", "--out", (dir / "bad").string()}) == cli::kUsage);
    fs::remove_all(dir);
}
