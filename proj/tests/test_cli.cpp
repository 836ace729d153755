#include <cstdlib>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "tapinv/cli.hpp"

using namespace tapinv;
using namespace tapinv::cli;

namespace {

const std::string data_dir = TAPINV_DATA_DIR "/braess/";

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("tapinv_test_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

void put(const fs::path& p, const std::string& text)
{
    std::ofstream(p) << text;
}

ExperimentConfig config_from(const json& j, const fs::path& dir)
{
    const fs::path file = dir / "config.json";
    put(file, j.dump(2));
    return load_config(file.string());
}

std::string config_error_of(const json& j, const fs::path& dir)
{
    try {
        validate(config_from(j, dir));
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ConfigError);
        return e.what();
    }
    return "";
}

json braess_base(const fs::path& out)
{
    return {{"network", data_dir + "network.txt"}, {"output_dir", out.string()}};
}

int run_binary(const std::string& args, const fs::path& log)
{
    const std::string cmd = std::string(TAPINV_CLI) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST(Config, UnknownKeysAreRejected)
{
    const fs::path dir = scratch("unknown");
    json j = braess_base(dir / "out");
    j["lamda"] = 3;
    EXPECT_NE(config_error_of(j, dir).find("lamda"), std::string::npos);
    j = braess_base(dir / "out");
    j["joint"] = {{"lambda", 10}, {"c3", 1}};
    EXPECT_NE(config_error_of(j, dir).find("joint.c3"), std::string::npos);
    j = braess_base(dir / "out");
    j["kernel"] = {{"weighting", "cubic"}};
    EXPECT_NE(config_error_of(j, dir).find("kernel.weighting"), std::string::npos);
}

TEST(Config, ErrorsNameTheKey)
{
    const fs::path dir = scratch("errors");
    json j = braess_base(dir / "out");
    j["demand"] = "missing.txt";
    EXPECT_NE(config_error_of(j, dir).find("demand"), std::string::npos);
    j = braess_base(dir / "out");
    j["joint"] = {{"lambda", -1}};
    EXPECT_NE(config_error_of(j, dir).find("lambda"), std::string::npos);
    j = braess_base(dir / "out");
    j["kernel"] = {{"degree", "five"}};
    EXPECT_NE(config_error_of(j, dir).find("kernel.degree"), std::string::npos);
    put(dir / "broken.json", "{\"network\": ");
    EXPECT_THROW(load_config((dir / "broken.json").string()), Error);
}

TEST(Config, RelativePathsResolveAgainstTheConfigFile)
{
    const ExperimentConfig c = load_config(data_dir + "experiment.json");
    EXPECT_TRUE(fs::path(c.network).is_absolute());
    EXPECT_TRUE(fs::exists(c.network));
    EXPECT_EQ(c.joint.lambda, 1e3);
    EXPECT_EQ(c.joint.kernel.degree, 5);
    EXPECT_EQ(c.joint.kernel.offset, 30.0);
    EXPECT_EQ(c.seed, 1u);
}

TEST(Config, ResolvedConfigRoundTrips)
{
    const fs::path dir = scratch("roundtrip");
    ExperimentConfig c = load_config(data_dir + "experiment.json");
    c.output_dir = (dir / "out").string();
    const json first = to_json(c);
    const ExperimentConfig again = config_from(first, dir);
    EXPECT_EQ(to_json(again), first);
}

TEST(Generate, BraessGroundTruth)
{
    const fs::path dir = scratch("generate");
    ExperimentConfig c = load_config(data_dir + "generate.json");
    c.output_dir = (dir / "out").string();
    ASSERT_EQ(cmd_generate(c), exit_ok);
    const FlowVector x = io::load_flows((dir / "out" / "flows.txt").string(), io::load_network(c.network)).flows;
    const FlowVector want = (FlowVector(5) << 2080, 2080, 0, 1920, 1920).finished();
    EXPECT_LE((x - want).cwiseAbs().maxCoeff(), 1e-6);
    const std::string text = slurp(dir / "out" / "flows.txt");
    EXPECT_NE(text.find("# true coefficients: {\"beta\":[1.0,1.0],\"degree\":1}"), std::string::npos);
    EXPECT_NE(text.find("# true demand 1 -> 2: 4000"), std::string::npos);
    EXPECT_NE(text.find("# tap relative gap:"), std::string::npos);
    for (const char* f : {"result.json", "trace.csv", "resolved_config.json", "run.log"})
        EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
}

TEST(Generate, ZeroDemandGivesZeroFlows)
{
    const fs::path dir = scratch("generate_zero");
    put(dir / "zero.txt", "1, 2, 0\n");
    json j = braess_base(dir / "out");
    j["generate"] = {{"beta", data_dir + "true_coefficients.json"}, {"demand", (dir / "zero.txt").string()}};
    j["kernel"] = {{"degree", 1}};
    ASSERT_EQ(cmd_generate(config_from(j, dir)), exit_ok);
    const auto net = io::load_network(data_dir + "network.txt");
    EXPECT_EQ(io::load_flows((dir / "out" / "flows.txt").string(), net).flows.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Generate, ParallelLinksSplitEvenly)
{
    const fs::path dir = scratch("generate_parallel");
    put(dir / "net.txt", "1, 1, 2, 10, 100\n2, 1, 2, 10, 100\n");
    put(dir / "od.txt", "1, 2, 300\n");
    const json j = {{"network", (dir / "net.txt").string()},
                    {"output_dir", (dir / "out").string()},
                    {"generate", {{"beta", {{"degree", 2}, {"beta", {1.0, 0.15, 0.3}}}}, {"demand", (dir / "od.txt").string()}}},
                    {"kernel", {{"degree", 2}}},
                    {"tap", {{"gap_tolerance", 1e-10}}}};
    ASSERT_EQ(cmd_generate(config_from(j, dir)), exit_ok);
    const auto net = io::load_network((dir / "net.txt").string());
    const FlowVector x = io::load_flows((dir / "out" / "flows.txt").string(), net).flows;
    EXPECT_NEAR(x[0], 150.0, 1e-6);
    EXPECT_NEAR(x[1], 150.0, 1e-6);
}

TEST(Generate, RequiresTheGenerationBlock)
{
    const fs::path dir = scratch("generate_missing");
    json j = braess_base(dir / "out");
    j["demand"] = data_dir + "demand.txt";
    try {
        cmd_generate(config_from(j, dir));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ConfigError);
        EXPECT_NE(std::string(e.what()).find("generate"), std::string::npos);
    }
}

TEST(Tap, ZeroDemandExitsCleanly)
{
    const fs::path dir = scratch("tap_zero");
    put(dir / "zero.txt", "1, 2, 0\n");
    json j = braess_base(dir / "out");
    j["demand"] = (dir / "zero.txt").string();
    ASSERT_EQ(cmd_tap(config_from(j, dir)), exit_ok);
    const json r = json::parse(slurp(dir / "out" / "result.json"));
    for (const auto& v : r["flows"])
        EXPECT_EQ(v.get<double>(), 0.0);
    EXPECT_TRUE(r["converged"].get<bool>());
}

TEST(Tap, NonConvergenceIsASoftExit)
{
    const fs::path dir = scratch("tap_soft");
    json j = braess_base(dir / "out");
    j["demand"] = data_dir + "demand.txt";
    j["tap"] = {{"gap_tolerance", 1e-14}, {"max_iterations", 1}, {"step_rule", "msa"}};
    EXPECT_EQ(cmd_tap(config_from(j, dir)), exit_soft);
    EXPECT_FALSE(json::parse(slurp(dir / "out" / "result.json"))["converged"].get<bool>());
}

TEST(Invvi, RoundTripOnGeneratedFlows)
{
    const fs::path dir = scratch("invvi");
    ExperimentConfig c = load_config(data_dir + "invvi.json");
    c.output_dir = (dir / "out").string();
    ASSERT_EQ(cmd_invvi(c), exit_ok);
    const json r = json::parse(slurp(dir / "out" / "result.json"));
    EXPECT_EQ(r["solver_status"], "optimal");
    EXPECT_LE(r["roundtrip"][0]["max_relative_flow_error"].get<double>(), 0.01);
    EXPECT_EQ(r["coefficients"]["beta"][0].get<double>(), 1.0);
    for (const auto& a : r["active_constraints"])
        if (a.contains("link_id")) {
            EXPECT_TRUE(a["link_id"].get<int>() >= 1 && a["link_id"].get<int>() <= 5);
        }
}

TEST(Joint, BraessExperimentIsReproducible)
{
    const fs::path dir = scratch("joint");
    ExperimentConfig c = load_config(data_dir + "experiment.json");
    c.output_dir = (dir / "a").string();
    ASSERT_EQ(cmd_joint(c), exit_ok);
    const json r = json::parse(slurp(dir / "a" / "result.json"));
    EXPECT_NEAR(r["best"]["demand"][0]["demand"].get<double>(), 4000.0, 80.0);
    const std::string trace = slurp(dir / "a" / "trace.csv");
    EXPECT_EQ(trace.rfind("iter,F,xi,g1,beta1,beta2,beta3,beta4,beta5\n", 0), 0u);

    // Re-run from the emitted resolved config into a second directory.
    json resolved = json::parse(slurp(dir / "a" / "resolved_config.json"));
    resolved["output_dir"] = (dir / "b").string();
    ASSERT_EQ(cmd_joint(config_from(resolved, dir)), exit_ok);
    EXPECT_EQ(slurp(dir / "b" / "trace.csv"), trace);
}

TEST(Joint, DegreeMismatchIsAConfigError)
{
    const fs::path dir = scratch("joint_degree");
    ExperimentConfig c = load_config(data_dir + "experiment.json");
    c.output_dir = (dir / "out").string();
    c.beta_init.kind = CoefficientSource::Kind::file;
    c.beta_init.path = data_dir + "true_coefficients.json";
    try {
        cmd_joint(c);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ConfigError);
        EXPECT_NE(std::string(e.what()).find("beta_init"), std::string::npos);
    }
}

TEST(Checkgrad, SymmetricNetworkHasZeroBetaGradients)
{
    const fs::path dir = scratch("checkgrad_sym");
    put(dir / "net.txt", "1, 1, 2, 10, 100\n2, 1, 2, 10, 100\n");
    put(dir / "od.txt", "1, 2, 300\n");
    put(dir / "x.txt", "1, 150\n2, 150\n");
    const json j = {{"network", (dir / "net.txt").string()},
                    {"demand_init", (dir / "od.txt").string()},
                    {"observed_flows", (dir / "x.txt").string()},
                    {"beta_init", {{"degree", 2}, {"beta", {1.0, 0.5, 0.5}}}},
                    {"output_dir", (dir / "out").string()},
                    {"kernel", {{"degree", 2}}},
                    {"tap", {{"gap_tolerance", 1e-12}}}};
    ASSERT_EQ(cmd_checkgrad(config_from(j, dir)), exit_ok);
    const json r = json::parse(slurp(dir / "out" / "result.json"));
    EXPECT_TRUE(r["passed"].get<bool>());
    EXPECT_TRUE(r["equilibrium_matching"].get<bool>());
    for (const auto& row : r["rows"])
        if (row["check"] == "beta_flow") {
            EXPECT_LE(std::abs(row["analytic"].get<double>()), 1e-6);
            EXPECT_LE(std::abs(row["numeric"].get<double>()), 1e-6);
        }
}

TEST(Checkgrad, BraessTruthReportsEachCheck)
{
    const fs::path dir = scratch("checkgrad_braess");
    ExperimentConfig c = load_config(data_dir + "checkgrad.json");
    c.output_dir = (dir / "out").string();
    ASSERT_EQ(cmd_checkgrad(c), exit_ok);
    const json r = json::parse(slurp(dir / "out" / "result.json"));
    EXPECT_TRUE(r["equilibrium_matching"].get<bool>());
    bool potential = false, equilibrium = false;
    for (const auto& row : r["rows"]) {
        if (row["check"] == "potential") {
            potential = true;
            EXPECT_FALSE(row["flagged"].get<bool>()) << row["entry"];
        }
        if (row["check"] == "equilibrium_F") {
            equilibrium = true;
            EXPECT_FALSE(row["flagged"].get<bool>()) << row["entry"];
        }
        if (row["check"] == "beta_flow" && row["entry"] == "obs0.link1.beta1") {
            EXPECT_NEAR(row["analytic"].get<double>(), -80.0 / 3.0, 1e-2);
            EXPECT_NEAR(row["numeric"].get<double>(), -40.0, 0.05);
        }
    }
    EXPECT_TRUE(potential);
    EXPECT_TRUE(equilibrium);
}

TEST(Binary, SubcommandsAndExitCodes)
{
    const fs::path dir = scratch("binary");
    const fs::path log = dir / "out.txt";
    EXPECT_EQ(run_binary("--help", log), 0);
    EXPECT_EQ(run_binary("tap --config " + data_dir + "invvi.json --output " + (dir / "tap").string() + " -q", log), 0);
    EXPECT_TRUE(fs::exists(dir / "tap" / "result.json"));
    EXPECT_EQ(run_binary("tap --network " + data_dir + "nope.txt --demand " + data_dir + "demand.txt", log), 1);
    EXPECT_NE(slurp(log).find("--network"), std::string::npos);
    EXPECT_EQ(run_binary("frobnicate", log), 1);
    put(dir / "bad.json", "{\"network\": \"" + data_dir + "network.txt\", \"colour\": 1}");
    EXPECT_EQ(run_binary("tap --config " + (dir / "bad.json").string(), log), 1);
    EXPECT_NE(slurp(log).find("colour"), std::string::npos);
    EXPECT_EQ(run_binary("solver selftest --count 20", log), 0);
    EXPECT_NE(slurp(log).find("PASS"), std::string::npos);
}

TEST(Binary, FlagsOverrideTheConfig)
{
    const fs::path dir = scratch("binary_override");
    const fs::path log = dir / "out.txt";
    ASSERT_EQ(run_binary("joint --config " + data_dir + "experiment.json --lambda 1 --max-iters 3 -q --output " +
                             (dir / "j").string(),
                         log),
              2);
    const json resolved = json::parse(slurp(dir / "j" / "resolved_config.json"));
    EXPECT_EQ(resolved["joint"]["lambda"].get<double>(), 1.0);
    EXPECT_EQ(resolved["joint"]["max_outer_iterations"].get<int>(), 3);
}
