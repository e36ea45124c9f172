#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "rotsense/concepts.hpp"
#include "rotsense/io.hpp"
#include "rotsense/persist.hpp"

#ifndef ROTSENSE_CLI_PATH
#error "ROTSENSE_CLI_PATH must point at the rotsense binary"
#endif

namespace fs = std::filesystem;
using rotsense::json;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("rotsense_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

int run(const std::string& args) {
    const std::string cmd = std::string(ROTSENSE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json read_json(const fs::path& p) { return json::parse(rotsense::read_file_bytes(p)); }

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
    EXPECT_EQ(run("--help"), 0);
    EXPECT_EQ(run("test --help"), 0);
    EXPECT_EQ(run("test --no-such-flag 1"), 2);
    const auto dir = scratch("usage");
    EXPECT_EQ(run("test --input " + (dir / "missing.npy").string() + " --output-dir " + dir.string()), 2);
}

TEST(Cli, ConfigTypeErrorIsAnInputError) {
    const auto dir = scratch("config");
    ASSERT_EQ(run("synth --kind gaussian_null --n 100 --d 6 --output-dir " + dir.string()), 0);
    std::ofstream(dir / "bad.toml") << "[test]\nk = \"five\"\n";
    EXPECT_EQ(run("--config " + (dir / "bad.toml").string() + " test --input " + (dir / "embeddings.npy").string() +
                  " --output-dir " + dir.string()),
              2);
}

TEST(Cli, DegreeNormalisationOfSignedDataIsANumericError) {
    const auto dir = scratch("degree");
    ASSERT_EQ(run("synth --kind gaussian_null --n 60 --d 6 --output-dir " + dir.string()), 0);
    EXPECT_EQ(run("decompose --input " + (dir / "embeddings.npy").string() + " --k 3 --output-dir " + dir.string()), 3);
}

TEST(Cli, TestIsDeterministicAcrossThreadsAndVerifies) {
    const auto dir = scratch("determinism");
    ASSERT_EQ(run("--seed 4 synth --kind planted --n 400 --d 12 --k 3 --output-dir " + dir.string()), 0);
    const std::string common = "--seed 9 --verify test --input " + (dir / "embeddings.npy").string() +
                               " --k 3 --resamples 19 --restarts 2";
    std::string first;
    for (int threads : {1, 4}) {
        const auto out = dir / ("t" + std::to_string(threads));
        ASSERT_EQ(run("--threads " + std::to_string(threads) + " --output-dir " + out.string() + " " + common), 0);
        const std::string bytes = rotsense::read_file_bytes(out / "test_report.json");
        if (first.empty())
            first = bytes;
        else
            EXPECT_EQ(bytes, first);
        const auto rep = rotsense::load_report(out / "test_report.rsb");
        EXPECT_EQ(rep.null_ts1.size(), 19u);
    }
    const json j = json::parse(first);
    EXPECT_EQ(j["command"], "test");
    EXPECT_EQ(j["seed"], 9);
    EXPECT_EQ(j["config_hash"].get<std::string>().size(), 8u);
}

TEST(Cli, ReconstructionFidelityMatchesFidelityCommand) {
    const auto dir = scratch("fidelity");
    ASSERT_EQ(run("--seed 2 synth --kind spurious --n 300 --d 16 --output-dir " + dir.string()), 0);
    const std::string in = (dir / "embeddings.npy").string();
    const std::string base = " --norm-mode none --restarts 2 --output-dir " + dir.string();
    ASSERT_EQ(run("--seed 5 decompose --input " + in + " --k 6" + base), 0);
    ASSERT_EQ(run("--seed 5 reconstruct --model " + (dir / "model.rsb").string() + " --output-format npy --output-dir " +
                  dir.string()),
              0);
    ASSERT_EQ(run("--seed 5 fidelity --input " + in + " --ks 6" + base), 0);

    const auto a = rotsense::load_matrix(dir / "embeddings.npy");
    const auto rec = rotsense::load_matrix(dir / "reconstruction.npy");
    const double direct = rotsense::reconstruction_fidelity(a.data, rec.data);
    const json curve = read_json(dir / "fidelity.json")["result"]["curve"];
    ASSERT_EQ(curve.size(), 1u);
    EXPECT_NEAR(curve[0]["fidelity"].get<double>(), direct, 1e-12);
}
