#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "coreflow/workflow.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Result {
    int code = -1;
    std::string out;
};

Result cli(const std::string& args) {
    const std::string cmd = std::string("'") + COREFLOW_CLI_PATH + "' " + args + " 2>/dev/null";
    Result r;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe) return r;
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
    const int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::path(COREFLOW_CLI_WORKDIR) / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// The single run directory created below `parent`.
fs::path only_subdir(const fs::path& parent) {
    fs::path found;
    int count = 0;
    for (const auto& e : fs::directory_iterator(parent)) {
        if (e.is_directory()) {
            found = e.path();
            ++count;
        }
    }
    EXPECT_EQ(count, 1);
    return found;
}

const fs::path kTyped = testsupport::data_dir() / "typed_planning";
const fs::path kTestData = testsupport::test_data_dir();

}  // namespace

TEST(Cli, ValidateExitCodes) {
    EXPECT_EQ(cli("validate " + q(kTyped / "listing.core")).code, 0);
    EXPECT_EQ(cli("validate " + q(kTestData / "no_forever.core")).code, 0);

    auto dir = fresh_dir("validate");
    std::ofstream(dir / "dangling.core") << "Step 1:::Process:::A.:::next::Step 2\n";
    std::ofstream(dir / "garbage.core") << "hello\n";
    auto invalid = cli("validate " + q(dir / "dangling.core"));
    EXPECT_EQ(invalid.code, 1);
    EXPECT_NE(invalid.out.find("missing step 'Step 2'"), std::string::npos);
    EXPECT_EQ(cli("validate " + q(dir / "garbage.core")).code, 2);
    EXPECT_EQ(cli("validate " + q(dir / "absent.core")).code, 2);
    EXPECT_EQ(cli("").code, 2);
    EXPECT_EQ(cli("frobnicate").code, 2);
}

TEST(Cli, RunWritesTrace) {
    auto dir = fresh_dir("run");
    auto r = cli("run " + q(kTyped / "listing.core") + " -c " + q(kTyped / "config.reinforce.json") +
                 " -t tp-01 -o " + q(dir));
    EXPECT_EQ(r.code, 0);
    auto trace = testsupport::slurp(only_subdir(dir) / "trace.jsonl");
    EXPECT_EQ(std::count(trace.begin(), trace.end(), '\n'), 6);
}

TEST(Cli, RunBudgetAndBackendExitCodes) {
    auto dir = fresh_dir("run_codes");
    EXPECT_EQ(cli("run " + q(kTestData / "no_forever.core") + " -c " + q(kTestData / "config.looping.json") +
                  " -t 'Loop forever.' -o " + q(dir / "a"))
                  .code,
              3);
    EXPECT_EQ(cli("run " + q(kTestData / "no_forever.core") + " -c " + q(kTestData / "config.http_dead.json") +
                  " -t ac-01 -o " + q(dir / "b"))
                  .code,
              4);
}

TEST(Cli, EvalAndBaselines) {
    auto dir = fresh_dir("eval");
    auto r = cli("eval " + q(kTyped / "listing.core") + " -c " + q(kTyped / "config.reinforce.json") +
                 " --split train -o " + q(dir / "wf"));
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("reward: 0.8750"), std::string::npos) << r.out;
    auto report = testsupport::load_json(only_subdir(dir / "wf") / "report.json");
    EXPECT_EQ(report["per_instance"].size(), 12u);

    EXPECT_EQ(cli("eval -c " + q(kTyped / "config.reinforce.json") + " -b zero -o " + q(dir / "zero")).code, 0);
    EXPECT_EQ(cli("eval -c " + q(kTyped / "config.reinforce.json") + " -b few -o " + q(dir / "few")).code, 0);
    EXPECT_EQ(cli("eval -c " + q(kTyped / "config.reinforce.json") + " -o " + q(dir / "x")).code, 2);
    EXPECT_EQ(cli("eval " + q(kTyped / "listing.core") + " -c " + q(kTyped / "config.reinforce.json") +
                  " --split dev -o " + q(dir / "x"))
                  .code,
              2);
}

TEST(Cli, OptimizeIncontextAndResumeFinished) {
    auto dir = fresh_dir("incontext");
    auto r = cli("optimize -m incontext -c " + q(kTyped / "config.incontext.json") + " -o " + q(dir));
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("iteration=1 reward="), std::string::npos);
    EXPECT_NE(r.out.find("termination=delta_converged"), std::string::npos) << r.out;
    const auto run_dir = only_subdir(dir);
    EXPECT_TRUE(fs::exists(run_dir / "meta.json"));
    auto best = coreflow::parse_workflow(testsupport::slurp(run_dir / "best.core"));
    EXPECT_TRUE(coreflow::validate(best).valid);

    auto again = cli("optimize -m incontext -c " + q(kTyped / "config.incontext.json") + " -r " +
                     q(run_dir / "run.jsonl"));
    EXPECT_EQ(again.code, 0);
    EXPECT_NE(again.out.find("run already finished"), std::string::npos);
    EXPECT_EQ(cli("optimize -m reinforce -c " + q(kTyped / "config.incontext.json") + " -r " +
                  q(run_dir / "run.jsonl"))
                  .code,
              2);
}

TEST(Cli, OptimizeReinforceResumeReproducesRun) {
    auto dir = fresh_dir("reinforce");
    ASSERT_EQ(cli("optimize -m reinforce -c " + q(kTyped / "config.reinforce.json") + " -o " + q(dir / "full")).code, 0);
    const auto full = testsupport::slurp(only_subdir(dir / "full") / "run.jsonl");

    // Keep the header and the first 10 iterations, as if the process had died.
    fs::create_directories(dir / "cut");
    std::string cut;
    std::size_t pos = 0;
    for (int line = 0; line < 11; ++line) pos = full.find('\n', pos) + 1;
    cut = full.substr(0, pos);
    std::ofstream(dir / "cut" / "run.jsonl") << cut;

    auto r = cli("optimize -m reinforce -c " + q(kTyped / "config.reinforce.json") + " -r " +
                 q(dir / "cut" / "run.jsonl"));
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(r.out.rfind("iteration=11 ", 0), 0u) << r.out;
    EXPECT_EQ(testsupport::slurp(dir / "cut" / "run.jsonl"), full);
}

TEST(Cli, GeneratorFailureExitCode) {
    auto dir = fresh_dir("genfail");
    EXPECT_EQ(cli("optimize -m incontext -c " + q(kTestData / "config.bad_generator.json") + " -o " + q(dir)).code, 5);
}
