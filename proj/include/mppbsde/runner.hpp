#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mppbsde/io.hpp"
#include "mppbsde/scenario.hpp"
#include "mppbsde/verification.hpp"

namespace mppbsde {

struct RunContext {
    std::filesystem::path out_dir = ".";
    std::size_t jobs = 1;
    std::uint64_t seed_offset = 0;
    std::optional<double> tol;
    std::function<void(const std::string&)> log;
};

struct ConvergenceRow {
    std::size_t steps = 0;
    double max_dA = 0.0;
    double y0 = 0.0;
    std::optional<double> oracle;
    std::optional<double> error;
};

struct ConvergenceStudy {
    std::vector<ConvergenceRow> rows;
    std::optional<double> order; // least-squares slope of log error against log max dA
    bool exact = false;          // every error below exact_floor
    static constexpr double exact_floor = 1e-9;
};

ConvergenceStudy convergence_study(const Scenario& s, const std::vector<std::size_t>& grids, std::size_t jobs = 1);

// Builds a suite entry from one manifest item {check, scenario, params, tolerance, expect_fail, name}.
SuiteEntry suite_entry(const nlohmann::json& item, const std::filesystem::path& base_dir, std::size_t index);

RunManifest cmd_simulate(const Scenario& s, const RunContext& ctx);
RunManifest cmd_solve(const Scenario& s, const RunContext& ctx);
RunManifest cmd_reflect(const Scenario& s, const RunContext& ctx);
RunManifest cmd_verify(const nlohmann::json& suite, const std::filesystem::path& base_dir, const RunContext& ctx);
RunManifest cmd_verify(const std::filesystem::path& suite_path, const RunContext& ctx);
RunManifest cmd_convergence(const Scenario& s, const std::vector<std::size_t>& grids, const RunContext& ctx);

} // namespace mppbsde
