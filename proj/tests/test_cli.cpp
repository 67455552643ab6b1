#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "vscsim/analysis.hpp"
#include "vscsim/results.hpp"
#include "vscsim/scenarios.hpp"

using namespace vscsim;
namespace fs = std::filesystem;

namespace {

struct Cli {
    int code;
    std::string out;
};

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("vscsim_cli_" + name);
    fs::remove_all(p);
    return p;
}

Cli cli(const std::string& args, const fs::path& dir)
{
    fs::create_directories(dir);
    const fs::path log = dir / "stdout.txt";
    const std::string cmd = std::string(VSCSIM_CLI) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

} // namespace

TEST_CASE("cli run writes the same samples as the library")
{
    const auto dir = scratch("run");
    const auto r = cli("run --system small --test setpoint --model pm-i0 --dt 250e-6 --out-dir " + dir.string(), dir);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("VSC.P_ac=50.000 MW") != std::string::npos);
    const auto stored = read_run(dir / "small-setpoint-pm-i0-250us.csv");

    ScenarioConfig cfg;
    cfg.model = VscModel::pm_i0;
    cfg.dt = 250e-6;
    const auto direct = run_scenario(cfg);
    CHECK(stored.names == direct.names);
    CHECK(stored.time == direct.time);
    CHECK(stored.data == direct.data);
    CHECK(stored.metadata.at("model") == "pm-i0");
}

TEST_CASE("cli exit codes")
{
    const auto dir = scratch("codes");
    const auto out = " --out-dir " + dir.string();
    CHECK(cli("run --model pm-i9" + out, dir).code == 2);
    CHECK(cli("run --dt 20e-3" + out, dir).code == 2);
    CHECK(cli("run --test nope" + out, dir).code == 2);
    CHECK(cli("frobnicate", dir).code == 2);
    CHECK(cli("", dir).code == 2);
    CHECK(cli("validate " + (dir / "missing.ini").string(), dir).code == 4);
    CHECK(cli("compare a b" + out, dir).code == 4);
    CHECK(cli("list", dir).code == 0);
}

TEST_CASE("cli validate accepts the shipped configs and rejects bad machine data")
{
    const auto dir = scratch("validate");
    for (const auto& f : {"small_system.ini", "large_system.ini", "tests/setpoint_fast_pq.ini"}) {
        CHECK(cli("validate " + (fs::path(VSCSIM_CONFIGS) / f).string(), dir).code == 0);
    }
    std::ofstream(dir / "bad.ini") << shipped_system_ini("small");
    const auto r = cli("validate " + (dir / "bad.ini").string() + " --set machine.G1.xdpp=0.9", dir);
    CHECK(r.code == 2);
    CHECK(r.out.find("error[config]") != std::string::npos);
}

TEST_CASE("cli compare of a run with itself is zero, spans are clipped with a warning")
{
    const auto dir = scratch("compare");
    const auto out = " --out-dir " + dir.string();
    REQUIRE(cli("run --model pm-full --dt 100e-6" + out, dir).code == 0);
    REQUIRE(cli("run --model pm-i0 --dt 100e-6 --duration 2" + out, dir).code == 0);
    auto same = cli("compare small-setpoint-pm-full-100us small-setpoint-pm-full-100us --signal VSC.P_ac" + out, dir);
    CHECK(same.code == 0);
    CHECK(same.out.find("RMSE 0\n") != std::string::npos);
    CHECK(same.out.find("warning") == std::string::npos);
    auto clipped = cli("compare small-setpoint-pm-full-100us small-setpoint-pm-i0-100us --signal VSC.P_ac" + out, dir);
    CHECK(clipped.code == 0);
    CHECK(clipped.out.find("warning: runs cover different spans") != std::string::npos);
    CHECK(fs::exists(dir / "compare-small-setpoint-pm-full-100us-vs-small-setpoint-pm-i0-100us_VSC.P_ac.svg"));
}

TEST_CASE("cli sweep emits the rmse table and one plot per signal")
{
    const auto dir = scratch("sweep");
    const auto r = cli("sweep --models pm-i0 --dts 250e-6,1e-3 --signals VSC.P_ac --jobs 1 --out-dir " + dir.string(),
                       dir);
    REQUIRE(r.code == 0);
    std::ifstream in(dir / "sweep-small-setpoint.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "model,dt,signal,rmse,wall_clock_s,diverged");
    int rows = 0;
    for (std::string line; std::getline(in, line);) {
        ++rows;
    }
    CHECK(rows == 2);
    CHECK(fs::exists(dir / "sweep-small-setpoint_VSC.P_ac.svg"));
    const auto np = cli("sweep --models pm-i0 --dts 1e-3 --signals VSC.P_ac --no-plots --out-dir " +
                            (dir / "np").string(),
                        dir);
    CHECK(np.code == 0);
    CHECK(!fs::exists(dir / "np" / "sweep-small-setpoint_VSC.P_ac.svg"));
}
