#include "support.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace ctmc;
using namespace ctmc::testing;

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("ctmc_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

fs::path write_text(const fs::path& dir, const std::string& text) {
    const fs::path p = dir / "config.json";
    std::ofstream(p) << text;
    return p;
}

json read_json(const fs::path& p) {
    std::ifstream in(p);
    return json::parse(in);
}

std::string config_message(const std::string& text) {
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

const std::string two_state_text =
    R"({"model": {"type": "piecewise_constant", "states": ["0", "1"], "breakpoints": [0, 1],
        "blocks": [{"dense": [[-1, 1], [2, -2]]}]},
        "run": {"n_paths": 20000, "seed": 3}})";

int run(const std::string& cmd, const fs::path& cfg, const fs::path& out, std::string* log_text = nullptr) {
    std::ostringstream log;
    const int code = run_subcommand(cmd, cfg, out, std::nullopt, log);
    if (log_text) *log_text = log.str();
    return code;
}

}  // namespace

TEST(ParseConfig, SyntaxErrorReportsLine) {
    const std::string msg = config_message("{\n  \"model\": {\n    \"type\": ,\n  }\n}");
    EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
}

TEST(ParseConfig, FieldPathInMessages) {
    EXPECT_NE(config_message(R"({"model": {"type": "piecewise_constant", "size": 2, "breakpoints": [0, 1],
        "blocks": [{"dense": [[-1, 1], [2]]}]}})")
                  .find("model.blocks[0].dense[1]"),
              std::string::npos);
    EXPECT_NE(config_message(R"({"model": {"type": "warp"}})").find("field 'model.type'"), std::string::npos);
    EXPECT_NE(config_message(R"({"model": {"type": "piecewise_constant", "size": 1, "breakpoints": [0, 1],
        "blocks": [{"dense": [[0]]}]}, "run": {"n_paths": 0}})")
                  .find("field 'run.n_paths'"),
              std::string::npos);
    EXPECT_NE(config_message(R"({"run": {}})").find("field 'model': missing"), std::string::npos);
}

TEST(ParseConfig, RejectsBadRunWindow) {
    const std::string base = R"({"model": {"type": "piecewise_constant", "size": 1, "breakpoints": [0, 1],
        "blocks": [{"dense": [[0]]}]}, "run": )";
    EXPECT_THROW(parse_config(base + R"({"s": 0.8, "t_end": 0.2}})"), ConfigError);
    EXPECT_THROW(parse_config(base + R"({"t_end": 2}})"), ConfigError);
    EXPECT_THROW(parse_config(base + R"({"quadrature": "simpson"}})"), ConfigError);
    EXPECT_NO_THROW(parse_config(base + R"({"quadrature": "trapezoid"}})"));
}

TEST(ParseConfig, AllShippedConfigsLoad) {
    for (const auto& entry : fs::directory_iterator(CTMC_SOURCE_DIR "/configs"))
        EXPECT_NO_THROW(load_config(entry.path())) << entry.path();
}

TEST(ParseConfig, EntriesAndLabels) {
    const RunConfig cfg = load_config(CTMC_SOURCE_DIR "/configs/three_state_breakpoint.json");
    const auto& q = std::get<PiecewiseConstantRates>(cfg.rates);
    EXPECT_EQ(q.size(), 3u);
    EXPECT_EQ(q.space().label(2), "down");
    EXPECT_EQ(q.breakpoints(), (std::vector<double>{0.0, 0.4, 1.0}));
    EXPECT_TRUE(validate_q_matrix(q).valid);
}

TEST(FieldCsv, SeventeenDigitRoundTrip) {
    const MinimalSolution sol = minimal_solution(two_state(), 0.0, 1.0);
    std::stringstream ss;
    write_field_csv(ss, two_state().space(), sol.grid.nodes, sol.field);
    std::string header;
    std::getline(ss, header);
    EXPECT_EQ(header, "time,P_0_0,P_0_1,P_1_0,P_1_1");
    ss.seekg(0);
    const auto [times, field] = read_field_csv(ss);
    ASSERT_EQ(times, sol.grid.nodes);
    for (std::size_t k = 0; k < field.size(); ++k) EXPECT_EQ(field[k], sol.field[k]);
    EXPECT_EQ(format_number(0.1), "0.10000000000000001");
}

TEST(Cli, BuildZeroRatesGivesIdentity) {
    const auto dir = scratch("zero");
    const auto cfg = write_text(dir, R"({"model": {"type": "piecewise_constant", "size": 2, "breakpoints": [0, 1],
        "blocks": [{"dense": [[0, 0], [0, 0]]}]}})");
    ASSERT_EQ(run("build", cfg, dir), exit_ok);
    std::ifstream in(dir / "field.csv");
    const auto [times, field] = read_field_csv(in);
    for (const auto& m : field) EXPECT_EQ(m, Matrix::Identity(2, 2));
    EXPECT_TRUE(fs::exists(dir / "series_report.json"));
}

TEST(Cli, BuildTwoStateFinalRow) {
    const auto dir = scratch("two_state_build");
    ASSERT_EQ(run("build", CTMC_SOURCE_DIR "/configs/two_state.json", dir), exit_ok);
    std::ifstream in(dir / "field.csv");
    const auto [times, field] = read_field_csv(in);
    EXPECT_EQ(times.front(), 0.0);
    EXPECT_EQ(field.front(), Matrix::Identity(2, 2));
    EXPECT_EQ(times.back(), 1.0);
    EXPECT_NEAR(field.back()(0, 0), 0.6832621, 1e-5);
    const json report = read_json(dir / "series_report.json");
    EXPECT_LE(report.at("tail_bound").get<double>(), 1e-6);
}

TEST(Cli, InvalidRatesExitOneAndNameEntry) {
    const auto dir = scratch("negative");
    const auto cfg = write_text(dir, R"({"model": {"type": "piecewise_constant", "size": 2, "breakpoints": [0, 1],
        "blocks": [{"dense": [[-1, 1], [-0.5, 0.5]]}]}})");
    std::string log;
    EXPECT_EQ(run("build", cfg, dir, &log), exit_config);
    EXPECT_NE(log.find("(1,0)"), std::string::npos) << log;
}

TEST(Cli, MissingConfigExitsOne) {
    EXPECT_EQ(run("build", "/nonexistent/config.json", scratch("missing")), exit_config);
    EXPECT_EQ(run("frobnicate", CTMC_SOURCE_DIR "/configs/two_state.json", scratch("unknown")), exit_config);
}

TEST(Cli, VerifyConservative) {
    const auto dir = scratch("verify_two_state");
    ASSERT_EQ(run("verify", CTMC_SOURCE_DIR "/configs/two_state.json", dir), exit_ok);
    const json r = read_json(dir / "verification_report.json");
    EXPECT_TRUE(r.at("passed").get<bool>());
    EXPECT_TRUE(r.at("regular").get<bool>());
}

TEST(Cli, VerifyKilledChainIsNotRegular) {
    const auto dir = scratch("verify_kill");
    ASSERT_EQ(run("verify", CTMC_SOURCE_DIR "/configs/single_kill.json", dir), exit_ok);
    const json r = read_json(dir / "verification_report.json");
    EXPECT_TRUE(r.at("passed").get<bool>());
    EXPECT_FALSE(r.at("regular").get<bool>());
    for (const auto& point : r.at("defect_curve")) {
        const double t = point.at("t").get<double>();
        EXPECT_NEAR(point.at("defect").at(0).get<double>(), 1.0 - std::exp(-t), 1e-6);
    }
}

TEST(Cli, VerifyCorruptHookFails) {
    const auto dir = scratch("verify_corrupt");
    const auto cfg = write_text(dir, R"({"model": {"type": "piecewise_constant", "size": 2, "breakpoints": [0, 1],
        "blocks": [{"dense": [[-1, 1], [2, -2]]}]},
        "run": {"probe_count": 5},
        "test_hooks": {"corrupt_entry": {"s": 0.25, "t": 0.75, "row": 0, "col": 1, "value": -0.001}}})");
    std::string log;
    EXPECT_EQ(run("verify", cfg, dir, &log), exit_property);
    EXPECT_NE(log.find("nonnegativity"), std::string::npos) << log;
    EXPECT_FALSE(read_json(dir / "verification_report.json").at("passed").get<bool>());
}

TEST(Cli, OracleCompare) {
    for (const char* name : {"two_state", "three_state_breakpoint"}) {
        const auto dir = scratch(std::string("oracle_") + name);
        ASSERT_EQ(run("oracle-compare", std::string(CTMC_SOURCE_DIR "/configs/") + name + ".json", dir), exit_ok);
        EXPECT_LE(read_json(dir / "oracle_report.json").at("max_discrepancy").get<double>(), 1e-4) << name;
    }
    std::string log;
    EXPECT_EQ(run("oracle-compare", CTMC_SOURCE_DIR "/configs/affine_callable.json", scratch("oracle_callable"), &log),
              exit_config);
    EXPECT_NE(log.find("oracle requires piecewise-constant rates"), std::string::npos);
}

TEST(Cli, SimulateExitsZero) {
    const auto dir = scratch("simulate");
    const auto cfg = write_text(dir, two_state_text);
    EXPECT_EQ(run("simulate", cfg, dir), exit_ok);
    const json r = read_json(dir / "estimate.json");
    EXPECT_EQ(r.at("paths").get<std::size_t>(), 20000u);
    EXPECT_EQ(r.at("seed").get<std::uint64_t>(), 3u);

    const auto tiny = write_text(dir, R"({"model": {"type": "piecewise_constant", "size": 2, "breakpoints": [0, 1],
        "blocks": [{"dense": [[-1, 1], [2, -2]]}]}, "run": {"n_paths": 10, "write_terminals": true}})");
    EXPECT_EQ(run("simulate", tiny, dir), exit_ok);
    std::ifstream in(dir / "terminals.csv");
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, 11);
}

TEST(Cli, SeedOverrideIsRecorded) {
    const auto dir = scratch("seed");
    std::ostringstream log;
    EXPECT_EQ(run_subcommand("simulate", write_text(dir, two_state_text), dir, 12345u, log), exit_ok);
    EXPECT_EQ(read_json(dir / "estimate.json").at("seed").get<std::uint64_t>(), 12345u);
}

TEST(Cli, NoConvergenceExitsTwo) {
    const auto dir = scratch("noconv");
    const auto cfg = write_text(dir, R"({"model": {"type": "piecewise_constant", "size": 2, "breakpoints": [0, 1],
        "blocks": [{"dense": [[-1, 1], [2, -2]]}]}, "run": {"max_order": 1, "series_tol": 1e-14}})");
    EXPECT_EQ(run("build", cfg, dir), exit_no_convergence);
}

TEST(Cli, PolicyCurves) {
    const auto dir = scratch("policy");
    ASSERT_EQ(run("policy", CTMC_SOURCE_DIR "/configs/queue_policy.json", dir), exit_ok);
    std::ifstream in(dir / "policy_curves.csv");
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "time,survival,mean_length");
    double last_survival = 2.0;
    while (std::getline(in, line)) {
        std::istringstream row(line);
        std::string t, surv;
        std::getline(row, t, ',');
        std::getline(row, surv, ',');
        const double s = std::stod(surv);
        EXPECT_LE(s, last_survival + 1e-12);
        last_survival = s;
    }
    EXPECT_LT(last_survival, 1.0);
}

TEST(CliBinary, ExitCodesFromProcess) {
    const auto dir = scratch("binary");
    const std::string exe = CTMC_CLI_PATH;
    auto status = [&](const std::string& args) {
        const int raw = std::system((exe + " " + args + " > /dev/null 2>&1").c_str());
        return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    };
    EXPECT_EQ(status("build --config " CTMC_SOURCE_DIR "/configs/two_state.json --out " + dir.string()), 0);
    EXPECT_TRUE(fs::exists(dir / "field.csv"));
    EXPECT_EQ(status("oracle-compare --config " CTMC_SOURCE_DIR "/configs/affine_callable.json --out " + dir.string()), 1);
    EXPECT_EQ(status("build --config /nonexistent.json"), 1);
    EXPECT_EQ(status("simulate --config " CTMC_SOURCE_DIR "/configs/two_state.json --seed 5 --out " + dir.string()), 0);
}
