#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "duet/io.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code = -1;
    std::string output; // stdout and stderr
};

RunResult run(const std::string& args) {
    const std::string cmd = std::string("\"") + DUET_CLI_PATH + "\" " + args + " 2>&1";
    RunResult r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return r;
    char buf[4096];
    std::size_t got = 0;
    while ((got = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, got);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("duet_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

std::string first_line(const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    return line;
}

const std::string tiny_scenario = R"({"schema_version": 1, "id": "tiny", "mechanisms": ["linear"], "n": 30,
  "env_counts": [2], "seeds": 2, "estimator": {"mode": "oracle", "inject_mean": true}, "taus": [0.25]})";

} // namespace

TEST(Cli, HelpAndUsageErrors) {
    EXPECT_EQ(run("--help").code, 0);
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("frobnicate").code, 2);
    EXPECT_EQ(run("discover").code, 2);
    EXPECT_EQ(run("discover --data /nonexistent/dir").code, 2);
    EXPECT_EQ(run("generate --out x --mechanism nope").code, 2);
}

TEST(Cli, GenerateThenDiscoverOracle) {
    const fs::path dir = temp_dir("gen");
    ASSERT_EQ(run("generate --mechanism lsnm --d 3 --k 2 --n 60 --seed 4 --out " + (dir / "data").string()).code, 0);
    EXPECT_TRUE(fs::exists(dir / "data" / "meta.json"));
    EXPECT_TRUE(fs::exists(dir / "data" / "env_2.csv"));
    const auto r = run("discover --mode oracle --inject-mean --data " + (dir / "data").string() + " --out " + (dir / "r.json").string());
    ASSERT_EQ(r.code, 0) << r.output;
    std::ifstream in(dir / "r.json");
    const auto j = duet::Json::parse(in);
    EXPECT_EQ(j["support"].size(), 3u);
    EXPECT_TRUE(j["diagnostics"].contains("eig_gap"));
}

TEST(Cli, DiscoverSteinWritesJsonToStdout) {
    const fs::path dir = temp_dir("stein");
    ASSERT_EQ(run("generate --mechanism linear --k 2 --n 200 --seed 1 --out " + (dir / "data").string()).code, 0);
    const auto r = run("discover --data " + (dir / "data").string());
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NO_THROW(duet::Json::parse(r.output));
}

TEST(Cli, SingleAuxiliaryEnvironmentIsUsageError) {
    const fs::path dir = temp_dir("k1");
    EXPECT_EQ(run("generate --k 1 --n 50 --out " + (dir / "data").string()).code, 2);
}

TEST(Cli, PipelineFailureReportsStage) {
    // Unit rescalings leave the first Hessian-difference group singular.
    const fs::path dir = temp_dir("unit");
    ASSERT_EQ(run("generate --k 2 --n 20 --out " + (dir / "data").string()).code, 0);
    std::ifstream in(dir / "data" / "meta.json");
    auto meta = duet::Json::parse(in);
    in.close();
    meta["lambdas"] = duet::Json::parse("[[1.0, 1.0], [1.0, 1.0]]");
    write_text(dir / "data" / "meta.json", meta.dump());
    const auto r = run("discover --mode oracle --inject-mean --data " + (dir / "data").string());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.output.find("\"stage\":\"similarity\""), std::string::npos) << r.output;
    EXPECT_EQ(run("discover --inject-mean --data " + (dir / "data").string()).code, 2);
}

TEST(Cli, ExperimentWritesCsvAndSummary) {
    const fs::path dir = temp_dir("experiment");
    write_text(dir / "tiny.json", tiny_scenario);
    const auto r = run("experiment --scenario " + (dir / "tiny.json").string() + " --out " + (dir / "out" / "r.csv").string());
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_EQ(first_line(dir / "out" / "r.csv"), "scenario,mechanism,n_envs,seed,tau,shd,runtime_ms,error");
    EXPECT_EQ(first_line(dir / "out" / "r.summary.csv"), "scenario,mechanism,n_envs,tau,runs,errors,mean_shd,std_shd");
}

TEST(Cli, BadScenarioIsUsageError) {
    const fs::path dir = temp_dir("badscenario");
    write_text(dir / "bad.json", R"({"schema_version": 1, "id": "x", "mechanisms": ["linear"], "sedes": 3})");
    EXPECT_EQ(run("experiment --scenario " + (dir / "bad.json").string() + " --out " + (dir / "r.csv").string()).code, 2);
    write_text(dir / "broken.json", "{");
    EXPECT_EQ(run("check-assumptions --scenario " + (dir / "broken.json").string()).code, 2);
}

TEST(Cli, CheckAssumptions) {
    const auto ok = run(std::string("check-assumptions --scenario ") + DUET_SCENARIO_DIR + "/gaussian_k3.json");
    ASSERT_EQ(ok.code, 0) << ok.output;
    EXPECT_TRUE(duet::Json::parse(ok.output)["pass"].get<bool>());

    const fs::path dir = temp_dir("check");
    write_text(dir / "unit.json", R"({"schema_version": 1, "id": "unit", "mechanisms": ["linear"], "seeds": 3,
      "lambda_range": [1.0, 1.0]})");
    const auto bad = run("check-assumptions --scenario " + (dir / "unit.json").string());
    EXPECT_EQ(bad.code, 1);
    EXPECT_FALSE(duet::Json::parse(bad.output)["pass"].get<bool>());
}

TEST(Cli, OracleValidateSmall) {
    const auto r = run("oracle-validate --seeds 2 --configs 4 --n 30");
    EXPECT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("all SHD 0"), std::string::npos);
}
