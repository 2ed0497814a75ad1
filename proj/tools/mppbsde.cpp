#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "mppbsde/errors.hpp"
#include "mppbsde/parallel.hpp"
#include "mppbsde/runner.hpp"

namespace {

enum Exit { ok = 0, check_failure = 1, validation = 2, numerical = 3 };

void configure_logging() {
    auto logger = spdlog::stderr_color_mt("mppbsde");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
    const char* level = std::getenv("MPPBSDE_LOG");
    spdlog::set_level(level != nullptr ? spdlog::level::from_str(level) : spdlog::level::warn);
}

} // namespace

int main(int argc, char** argv) {
    configure_logging();

    CLI::App app{"BSDE solver and verification toolkit for marked point processes"};
    app.require_subcommand(1);

    std::string scenario_path;
    std::string suite_path;
    std::string out_dir = "out";
    std::size_t jobs = mppbsde::default_jobs();
    std::uint64_t seed_offset = 0;
    double tol = 0.0;
    std::vector<std::size_t> grids;

    auto common = [&](CLI::App* sub, bool needs_scenario) {
        auto* opt = sub->add_option("--scenario", scenario_path, "Scenario JSON file");
        if (needs_scenario) {
            opt->required();
        }
        sub->add_option("--out", out_dir, "Output directory")->capture_default_str();
        sub->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
        sub->add_option("--seed-offset", seed_offset, "Added to every scenario seed");
        sub->add_option("--tol", tol, "Override the check tolerance");
    };

    auto* simulate = app.add_subcommand("simulate", "Simulate paths and compare counts with the compensator");
    common(simulate, true);
    auto* solve = app.add_subcommand("solve", "Solve on the lattice, with oracle and forward residual");
    common(solve, true);
    auto* reflect = app.add_subcommand("reflect", "Solve the mean-reflected equation by Picard iteration");
    common(reflect, true);
    auto* verify = app.add_subcommand("verify", "Run a suite of property checks");
    common(verify, false);
    verify->add_option("--suite", suite_path, "Suite manifest JSON")->required();
    auto* convergence = app.add_subcommand("convergence", "Grid refinement study against the oracle");
    common(convergence, true);
    convergence->add_option("--grids", grids, "Step counts, e.g. --grids 100 1000 10000");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? Exit::ok : Exit::validation;
    }

    mppbsde::RunContext ctx;
    ctx.out_dir = out_dir;
    ctx.jobs = jobs;
    ctx.seed_offset = seed_offset;
    if (tol > 0.0) {
        ctx.tol = tol;
    }
    ctx.log = [](const std::string& msg) { spdlog::info("{}", msg); };

    try {
        mppbsde::RunManifest manifest;
        if (verify->parsed()) {
            manifest = mppbsde::cmd_verify(std::filesystem::path(suite_path), ctx);
        } else {
            const auto scenario = mppbsde::load_scenario(scenario_path);
            spdlog::debug("scenario '{}' loaded", scenario.name);
            if (simulate->parsed()) {
                manifest = mppbsde::cmd_simulate(scenario, ctx);
            } else if (solve->parsed()) {
                manifest = mppbsde::cmd_solve(scenario, ctx);
            } else if (reflect->parsed()) {
                manifest = mppbsde::cmd_reflect(scenario, ctx);
            } else {
                auto list = grids.empty() ? scenario.run.grids : grids;
                if (list.empty()) {
                    list = {100, 1000, 10000};
                }
                manifest = mppbsde::cmd_convergence(scenario, list, ctx);
            }
        }
        std::cout << manifest.summary.dump(2) << '\n';
        spdlog::info("wrote {} file(s) to {}", manifest.files.size(), out_dir);
        return manifest.exit_code == 0 ? Exit::ok : Exit::check_failure;
    } catch (const mppbsde::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return Exit::numerical;
    } catch (const std::invalid_argument& e) {
        std::cerr << "validation error: " << e.what() << '\n';
        return Exit::validation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return Exit::numerical;
    }
}
