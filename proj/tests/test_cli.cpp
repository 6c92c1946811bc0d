#include "ecmid/signals.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

const fs::path kScratch{ECMID_SCRATCH_DIR};

class Cli : public ::testing::Test {
protected:
    void SetUp() override
    {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = kScratch / info->name();
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }

    fs::path path(const std::string& name) const { return dir_ / name; }

    fs::path write_config(const std::string& name, const std::string& text) const
    {
        std::ofstream(path(name)) << text;
        return path(name);
    }

    /// Runs the tool with `args` and returns its exit status.
    int run(const std::string& args) const
    {
        const std::string cmd = std::string("\"") + ECMID_CLI_PATH + "\" " + args + " > \"" +
                                path("stdout.txt").string() + "\" 2> \"" + path("stderr.txt").string() + "\"";
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

    std::string slurp(const fs::path& p) const
    {
        std::ifstream in(p);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    nlohmann::json report(const fs::path& p) const { return nlohmann::json::parse(slurp(p)); }

    fs::path dir_;
};

constexpr const char* kShortRun = R"(
[battery]
capacity_ah = 0.5
[experiment]
duration_s = 1800
noise_std = 0
seed = 7
)";

} // namespace

TEST_F(Cli, SimulateWritesCsvWithHeaderAndSoc)
{
    ASSERT_EQ(run("simulate --out " + path("sim.csv").string()), 0) << slurp(path("stderr.txt"));
    const std::string text = slurp(path("sim.csv"));
    EXPECT_EQ(text.rfind("# ecmid ", 0), 0u);
    EXPECT_NE(text.find(" config "), std::string::npos);
    const ecmid::SampledRecord rec = ecmid::load_csv(path("sim.csv"));
    EXPECT_EQ(rec.size(), 3600);
    EXPECT_DOUBLE_EQ(rec.ts, 1.0);
    ASSERT_TRUE(rec.has_soc());
    EXPECT_DOUBLE_EQ((*rec.soc)[0], 0.9);
    EXPECT_TRUE(fs::exists(path("sim.csv.truth.json")));
    EXPECT_TRUE(fs::exists(path("sim.csv.ocv.csv")));
    EXPECT_DOUBLE_EQ(report(path("sim.csv.truth.json"))["params"]["r0_ohm"].get<double>(), 0.06);
}

TEST_F(Cli, SimulateNoiseFreeIsReproducible)
{
    const fs::path cfg = write_config("run.ini", kShortRun);
    ASSERT_EQ(run("simulate --config " + cfg.string() + " --out " + path("a.csv").string()), 0);
    ASSERT_EQ(run("simulate --config " + cfg.string() + " --out " + path("b.csv").string()), 0);
    EXPECT_EQ(slurp(path("a.csv")), slurp(path("b.csv")));
}

TEST_F(Cli, SimulateStepSettlesToTotalResistance)
{
    const fs::path cfg = write_config("step.ini", R"(
[battery]
capacity_ah = 1e6
[experiment]
profile = step
amplitude_a = 1
duration_s = 1500
noise_std = 0
)");
    ASSERT_EQ(run("simulate --config " + cfg.string() + " --out " + path("step.csv").string()), 0);
    const ecmid::SampledRecord rec = ecmid::load_csv(path("step.csv"));
    const double drop = rec.voltage[0] - rec.voltage[rec.size() - 1];
    EXPECT_NEAR(drop, 0.11, 1e-4);
    EXPECT_NEAR(rec.voltage[59] - rec.voltage[60], 0.06, 1e-9);
}

TEST_F(Cli, IdentifyRecoversNoiseFreeParameters)
{
    const fs::path cfg = write_config("run.ini", kShortRun);
    ASSERT_EQ(run("simulate --config " + cfg.string() + " --out " + path("sim.csv").string()), 0);
    ASSERT_EQ(run("identify --config " + cfg.string() + " --data " + path("sim.csv").string() + " --out " +
                  path("id").string() + " --dump-problem " + path("bundle").string()),
              0)
        << slurp(path("stderr.txt"));
    const auto j = report(path("id/report.json"));
    EXPECT_NEAR(j["params"]["r0_ohm"].get<double>(), 0.06, 0.0006);
    EXPECT_NEAR(j["tau1_s"].get<double>(), 18.0, 0.18);
    EXPECT_NEAR(j["tau2_s"].get<double>(), 100.0, 1.0);
    EXPECT_TRUE(j["header"].get<std::string>().rfind("ecmid ", 0) == 0);
    EXPECT_TRUE(fs::exists(path("id/ocv.csv")));
    EXPECT_TRUE(fs::exists(path("id/prediction.csv")));
    EXPECT_TRUE(fs::exists(path("bundle/pi.csv")));
    EXPECT_NE(slurp(path("stdout.txt")).find("R0 = "), std::string::npos);
}

TEST_F(Cli, IdentifyWithoutSocNeedsInitialSoc)
{
    std::ofstream(path("log.csv")) << "time_s,current_a,voltage_v\n0,-1,3.7\n1,-1,3.69\n2,-1,3.68\n";
    EXPECT_EQ(run("identify --data " + path("log.csv").string() + " --out " + path("id").string()), 2);
    EXPECT_NE(slurp(path("stderr.txt")).find("initial_soc"), std::string::npos);
}

TEST_F(Cli, IdentifyMissingFileIsADataError)
{
    EXPECT_EQ(run("identify --data " + path("absent.csv").string() + " --out " + path("id").string()), 3);
}

TEST_F(Cli, TuneSingleCellMatchesIdentify)
{
    const fs::path cfg = write_config("run.ini", std::string(kShortRun) + R"(
[solver]
lambda1 = 1e-8
lambda2 = 0
lambda1_grid = 1e-8
lambda2_grid = 0
)");
    ASSERT_EQ(run("simulate --config " + cfg.string() + " --out " + path("sim.csv").string()), 0);
    ASSERT_EQ(run("identify --config " + cfg.string() + " --data " + path("sim.csv").string() + " --out " +
                  path("id").string()),
              0);
    ASSERT_EQ(run("tune --jobs 1 --config " + cfg.string() + " --data " + path("sim.csv").string() + " --out " +
                  path("tune").string()),
              0)
        << slurp(path("stderr.txt"));
    const auto a = report(path("id/report.json"));
    const auto b = report(path("tune/report.json"));
    EXPECT_EQ(a["params"], b["params"]);
    EXPECT_EQ(a["rmse_v"], b["rmse_v"]);
}

TEST_F(Cli, TuneGridMarksTheSmallestRmse)
{
    const fs::path cfg = write_config("run.ini", R"(
[battery]
capacity_ah = 0.5
[experiment]
duration_s = 1800
noise_std = 1e-4
seed = 7
[solver]
lambda1_grid = 1e-9, 1e-7
lambda2_grid = 0, 1e-6
)");
    ASSERT_EQ(run("simulate --config " + cfg.string() + " --out " + path("sim.csv").string()), 0)
        << slurp(path("stderr.txt"));
    ASSERT_EQ(run("tune --jobs 2 --config " + cfg.string() + " --data " + path("sim.csv").string() + " --out " +
                  path("tune").string()),
              0)
        << slurp(path("stderr.txt"));
    std::ifstream in(path("tune/grid.csv"));
    std::string line;
    std::getline(in, line);
    std::getline(in, line);
    EXPECT_EQ(line, "lambda1,lambda2,ok,rmse_v,vaf_pct,best,error");
    double best = 0.0;
    std::vector<double> all;
    while (std::getline(in, line)) {
        const auto fields = ecmid::detail::split_fields(line);
        ASSERT_GE(fields.size(), 6u);
        if (fields[2] != "1") {
            continue;
        }
        const double r = ecmid::detail::parse_double(fields[3], 0);
        all.push_back(r);
        if (fields[5] == "1") {
            best = r;
        }
    }
    ASSERT_EQ(all.size(), 4u);
    for (double r : all) {
        EXPECT_LE(best, r);
    }
}

TEST_F(Cli, TuneEmptyGridIsAConfigError)
{
    const fs::path cfg = write_config("run.ini", "[solver]\nlambda1_grid =\n");
    EXPECT_EQ(run("tune --config " + cfg.string() + " --data x.csv --out " + path("tune").string()), 2);
}

TEST_F(Cli, MonteCarloSingleRun)
{
    const fs::path cfg = write_config("run.ini", R"(
[battery]
capacity_ah = 0.5
[experiment]
duration_s = 1200
runs = 1
noise_std = 1e-4
)");
    ASSERT_EQ(run("montecarlo --config " + cfg.string() + " --out " + path("mc").string()), 0)
        << slurp(path("stderr.txt"));
    const auto j = report(path("mc/runs/run_000.json"));
    std::ifstream in(path("mc/stats.csv"));
    std::string line;
    std::getline(in, line);
    std::getline(in, line);
    std::getline(in, line);
    const auto fields = ecmid::detail::split_fields(line);
    ASSERT_EQ(fields[0], "r0");
    EXPECT_EQ(ecmid::detail::parse_double(fields[2], 0), j["params"]["r0_ohm"].get<double>());
    EXPECT_EQ(ecmid::detail::parse_double(fields[3], 0), 0.0);
    EXPECT_TRUE(fs::exists(path("mc/ocv_band.csv")));

    const std::string first = slurp(path("mc/runs.csv"));
    ASSERT_EQ(run("montecarlo --config " + cfg.string() + " --out " + path("mc").string()), 0);
    EXPECT_EQ(slurp(path("mc/runs.csv")), first);
}

TEST_F(Cli, BadConfigExitsWithTwo)
{
    const fs::path cfg = write_config("bad.ini", "[solver]\nlambda3 = 1\n");
    EXPECT_EQ(run("simulate --config " + cfg.string() + " --out " + path("x.csv").string()), 2);
    EXPECT_NE(slurp(path("stderr.txt")).find("lambda3"), std::string::npos);
    EXPECT_EQ(run("simulate --bogus"), 2);
    EXPECT_EQ(run(""), 2);
}
