#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mppbsde/lattice.hpp"
#include "mppbsde/reflection.hpp"

namespace mppbsde {

// Arithmetic over count variables n1..nK and n (the total): numbers, + - * / ^,
// comparisons (1 or 0), && || !, min max abs exp log sqrt and if(c, a, b).
std::function<double(std::span<const int>)> compile_expression(const std::string& text, std::size_t marks);

struct CompensatorBlock {
    std::vector<std::string> marks;
    std::vector<std::string> labels;
    std::vector<PhiSegment> phi;
    std::vector<std::pair<double, double>> clock;
    std::optional<std::vector<std::pair<double, double>>> rho;
    double horizon = 1.0;
};

struct GrowthOverride {
    std::optional<double> alpha;
    std::optional<double> beta;
    std::optional<double> lambda;
    std::optional<double> c0;
};

struct DriverBlock {
    std::string name = "zero";
    GrowthOverride growth;
};

struct TableRow {
    std::vector<int> counts;
    double value = 0.0;
};

struct TerminalBlock {
    std::optional<std::string> expression;
    std::vector<TableRow> table;
    double table_default = 0.0;
    std::optional<double> bound;
};

struct LossBlock {
    std::string name;
};

struct GridBlock {
    std::optional<std::size_t> steps;
    std::optional<double> dt;
    int n_max = 30;
    unsigned j_max = 2;
    double tail_tol = 1e-12;
    bool implicit = false;
    Scheme scheme = Scheme::explicit_euler;
};

struct RunBlock {
    std::uint64_t seed = 0;
    std::size_t paths = 0;
    double quad_step = 0.01;
    double tol = 1e-8;
    double picard_tol = 1e-10;
    std::size_t max_iter = 50;
    std::vector<std::size_t> grids;
};

struct Scenario {
    std::string name;
    CompensatorBlock compensator;
    DriverBlock driver;
    TerminalBlock terminal;
    std::optional<LossBlock> loss;
    GridBlock grid;
    RunBlock run;

    [[nodiscard]] CompensatorSpec spec() const;
    [[nodiscard]] Driver make_driver() const;
    [[nodiscard]] TerminalCondition make_terminal() const;
    [[nodiscard]] std::optional<LossFunction> make_loss() const;
    [[nodiscard]] TimeGrid time_grid(std::optional<std::size_t> steps = std::nullopt) const;
    [[nodiscard]] SolverOptions solver_options() const;
};

// Validates structure and content; errors are ValidationError with a JSON-pointer prefix.
Scenario parse_scenario(const nlohmann::json& doc);
Scenario load_scenario(const std::filesystem::path& path);
nlohmann::json to_json(const Scenario& s);

} // namespace mppbsde
