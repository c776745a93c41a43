#include "ctmc/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Minimal transition matrices of nonhomogeneous Markov chains"};
    app.require_subcommand(1);

    std::string config;
    std::string out = ".";
    std::optional<std::uint64_t> seed;
    for (const char* name : {"build", "verify", "oracle-compare", "simulate", "policy"}) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out, "output directory");
        sub->add_option("--seed", seed, "overrides run.seed");
    }
    app.get_subcommand("build")->description("series solution: field.csv and series_report.json");
    app.get_subcommand("verify")->description("property checks: verification_report.json");
    app.get_subcommand("oracle-compare")->description("compare with matrix exponentials: oracle_report.json");
    app.get_subcommand("simulate")->description("Monte Carlo check: estimate.json");
    app.get_subcommand("policy")->description("compiled policy kernel and queue curves: policy_curves.csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : ctmc::exit_config;
    }
    return ctmc::run_subcommand(app.get_subcommands().front()->get_name(), config, out, seed);
}
