#include <clusterflow_tools/commands.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace clusterflow;
using namespace clusterflow::tools;
namespace fs = std::filesystem;

namespace {

class CommandTest : public ::testing::Test
{
protected:
    void SetUp() override
    {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = fs::temp_directory_path() / (std::string("clusterflow_cmd_") + info->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    CommandContext context(const std::string& json, const fs::path& out) const
    {
        CommandContext ctx;
        ctx.config = parse_run_config(json);
        ctx.config.output.directory = out.string();
        validate_run_config(ctx.config);
        ctx.timestamp = false;
        ctx.log = &log_;
        return ctx;
    }

    int run(const std::string& command, const std::string& json, const fs::path& out)
    {
        fs::create_directories(out);
        return run_command(command, context(json, out), err_);
    }

    static std::string slurp(const fs::path& p)
    {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    fs::path dir_;
    mutable std::ostringstream log_;
    std::ostringstream err_;
};

const char* small_solve = R"({
    "quadrature": {"samples": 300},
    "series": {"order": 1, "times": [0.0, 0.05]}
})";

} // namespace

TEST_F(CommandTest, IdentitiesPassWithDefaults)
{
    EXPECT_EQ(run("identities", "{}", dir_), exit_pass) << log_.str();
    EXPECT_TRUE(fs::exists(dir_ / "identities.json"));
    EXPECT_TRUE(fs::exists(dir_ / "identities.csv"));
}

TEST_F(CommandTest, ZeroToleranceFailsWithNames)
{
    EXPECT_EQ(run("identities", R"({"identities": {"tolerance": 0}})", dir_), exit_check_failure);
    const std::string out = log_.str();
    EXPECT_NE(out.find("failing identities:"), std::string::npos);
    EXPECT_NE(out.find("free_scattering_identity"), std::string::npos) << out;
}

TEST_F(CommandTest, SolveIsByteReproducible)
{
    ASSERT_EQ(run("solve", small_solve, dir_ / "a"), exit_pass) << err_.str();
    ASSERT_EQ(run("solve", small_solve, dir_ / "b"), exit_pass) << err_.str();
    for (const char* f : {"trace.json", "trace.csv"}) {
        const auto a = slurp(dir_ / "a" / f);
        EXPECT_FALSE(a.empty());
        EXPECT_EQ(a, slurp(dir_ / "b" / f)) << f;
    }
}

TEST_F(CommandTest, TimestampAddsGeneratedLine)
{
    auto ctx = context(small_solve, dir_);
    ctx.timestamp = true;
    ASSERT_EQ(run_command("solve", ctx, err_), exit_pass);
    EXPECT_NE(slurp(dir_ / "trace.csv").find("# generated:"), std::string::npos);
}

TEST_F(CommandTest, FreeSolveIsTransport)
{
    const std::string cfg = R"({
        "potential": {"kind": "free"},
        "quadrature": {"samples": 200},
        "series": {"order": 1, "times": [0.3]}
    })";
    ASSERT_EQ(run("solve", cfg, dir_), exit_pass) << err_.str();
    const auto trace = SolutionTrace::from_json(slurp(dir_ / "trace.json"));
    const auto config = parse_run_config(cfg);
    const auto g0 = maxwellian_gaussian(config.initial);
    MacroPoint p = trace.probes[1][0];
    const double expected = g0.evaluate({p.v, p.r - 0.3 * p.v});
    EXPECT_NEAR(trace.cell(0, 1, 1).cumulative, expected, 1e-10 * expected);
}

TEST_F(CommandTest, OutOfRegimeSolveWarns)
{
    ASSERT_EQ(run("solve", R"({"initial_data": {"mass": 1.0}, "quadrature": {"samples": 100},
                               "series": {"order": 1, "times": [0.05]}})",
                  dir_),
              exit_pass);
    EXPECT_NE(log_.str().find("WARNING"), std::string::npos);
    EXPECT_NE(slurp(dir_ / "trace.json").find("\"in_regime\": false"), std::string::npos);
}

TEST_F(CommandTest, CompareTraceWithItself)
{
    ASSERT_EQ(run("solve", small_solve, dir_), exit_pass);
    const std::string trace = (dir_ / "trace.json").string();
    const std::string cfg = std::string(R"({"compare": {"reference": ")") + trace + R"(", "candidate": ")" + trace +
                            R"("}})";
    EXPECT_EQ(run("compare", cfg, dir_ / "cmp"), exit_pass) << err_.str();
    const std::string csv = slurp(dir_ / "cmp" / "discrepancy.csv");
    EXPECT_FALSE(csv.empty());
    EXPECT_EQ(csv.find("nan"), std::string::npos);
}

TEST_F(CommandTest, CompareMissingFileIsRuntimeError)
{
    const std::string cfg = R"({"compare": {"reference": "/nonexistent/a.json", "candidate": "/nonexistent/b.json"}})";
    EXPECT_NE(run("compare", cfg, dir_), exit_pass);
    EXPECT_FALSE(err_.str().empty());
}

TEST_F(CommandTest, ResidualNeedsArityOne)
{
    EXPECT_EQ(run("residual", R"({"series": {"arity": 2}})", dir_), exit_config_error);
}

TEST_F(CommandTest, OracleWritesReport)
{
    const std::string cfg = R"({
        "initial_data": {"mass": 1.0, "temperature": 0.04, "spatial_width": 0.2},
        "ensemble": {"replicates": 200},
        "series": {"times": [0.0, 0.05]}
    })";
    EXPECT_EQ(run("oracle", cfg, dir_), exit_pass) << err_.str();
    const auto e = EmpiricalDensity::from_json(slurp(dir_ / "oracle.json"));
    EXPECT_EQ(e.replicates, 200u);
    EXPECT_EQ(e.times.size(), 2u);
}

TEST_F(CommandTest, PrintConfigIsParseable)
{
    ASSERT_EQ(run("print-config", "{}", dir_), exit_pass);
    EXPECT_NO_THROW(parse_run_config(log_.str()));
}

TEST_F(CommandTest, UnknownCommand)
{
    EXPECT_EQ(run("plot", "{}", dir_), exit_config_error);
}

TEST(CommandNames, AllSubcommands)
{
    const auto& names = command_names();
    for (const char* n : {"identities", "solve", "functional", "oracle", "compare", "residual", "print-config"})
        EXPECT_NE(std::find(names.begin(), names.end(), n), names.end()) << n;
}
