#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <vector>

#include "mppbsde/errors.hpp"
#include "mppbsde/scenario.hpp"

using namespace mppbsde;
using nlohmann::json;

namespace {

json minimal() {
    return json::parse(R"({
        "compensator": {"marks": 1, "phi": [{"start": 0, "probs": [1]}], "clock": [[0, 0], [1, 1]], "horizon": 1},
        "driver": "entropic:1",
        "terminal": {"expression": "n >= 1"}
    })");
}

std::string error_of(const json& doc) {
    try {
        (void)parse_scenario(doc);
    } catch (const ValidationError& e) {
        return e.what();
    }
    return "";
}

double eval(const std::string& text, std::vector<int> counts) {
    return compile_expression(text, counts.size())(counts);
}

} // namespace

TEST(Expression, ArithmeticAndPrecedence) {
    EXPECT_DOUBLE_EQ(eval("1 + 2 * 3", {0}), 7.0);
    EXPECT_DOUBLE_EQ(eval("(1 + 2) * 3", {0}), 9.0);
    EXPECT_DOUBLE_EQ(eval("2 ^ 3 ^ 2", {0}), 512.0);
    EXPECT_DOUBLE_EQ(eval("-2 ^ 2", {0}), -4.0);
    EXPECT_DOUBLE_EQ(eval("7 / 2", {0}), 3.5);
    EXPECT_DOUBLE_EQ(eval("1.5e1", {0}), 15.0);
}

TEST(Expression, VariablesAndLogic) {
    EXPECT_DOUBLE_EQ(eval("n1 - n2", {3, 1}), 2.0);
    EXPECT_DOUBLE_EQ(eval("n", {3, 1}), 4.0);
    EXPECT_DOUBLE_EQ(eval("n1 >= 2 && n2 < 1", {3, 1}), 0.0);
    EXPECT_DOUBLE_EQ(eval("n1 >= 2 || n2 < 1", {3, 1}), 1.0);
    EXPECT_DOUBLE_EQ(eval("!(n1 == 3)", {3, 1}), 0.0);
    EXPECT_DOUBLE_EQ(eval("n1 != n2", {3, 1}), 1.0);
}

TEST(Expression, Functions) {
    EXPECT_DOUBLE_EQ(eval("max(n1 - n2, 0)", {1, 4}), 0.0);
    EXPECT_DOUBLE_EQ(eval("min(n1, n2, 2)", {3, 4}), 2.0);
    EXPECT_DOUBLE_EQ(eval("if(n1 > 2, 10, 20)", {3}), 10.0);
    EXPECT_NEAR(eval("log(exp(2))", {0}), 2.0, 1e-15);
    EXPECT_NEAR(eval("sqrt(n) + abs(-2) + floor(2.7) + ceil(0.2)", {4}), 2.0 + 2.0 + 2.0 + 1.0, 1e-15);
    EXPECT_NEAR(eval("pi", {0}), M_PI, 1e-15);
}

TEST(Expression, Errors) {
    EXPECT_THROW(compile_expression("n3", 2), ValidationError);
    EXPECT_THROW(compile_expression("foo(1)", 1), ValidationError);
    EXPECT_THROW(compile_expression("1 +", 1), ValidationError);
    EXPECT_THROW(compile_expression("max()", 1), ValidationError);
    EXPECT_THROW(compile_expression("", 1), ValidationError);
    EXPECT_THROW(compile_expression(std::string(500, '(') + "1" + std::string(500, ')'), 1), ValidationError);
}

TEST(Scenario, MinimalDefaults) {
    const auto s = parse_scenario(minimal());
    EXPECT_EQ(s.compensator.marks.size(), 1u);
    EXPECT_EQ(s.driver.name, "entropic:1");
    EXPECT_EQ(s.grid.n_max, 30);
    EXPECT_EQ(s.time_grid().steps(), 1000u);
    EXPECT_EQ(s.time_grid(10).steps(), 10u);
    EXPECT_FALSE(s.loss.has_value());
    const std::vector<int> one{1};
    EXPECT_EQ(s.make_terminal()(one), 1.0);
}

TEST(Scenario, MalformedPhiNamesThePointer) {
    auto doc = minimal();
    doc["compensator"]["phi"][0]["probs"] = {0.9};
    EXPECT_EQ(error_of(doc), "/compensator/phi/0/probs: probabilities sum to 0.9, expected 1");
}

TEST(Scenario, RejectsUnknownAndMissingKeys) {
    auto doc = minimal();
    doc["compensator"]["rate"] = 1;
    EXPECT_EQ(error_of(doc), "/compensator/rate: unknown key");
    auto no_driver = minimal();
    no_driver.erase("driver");
    EXPECT_EQ(error_of(no_driver), "/driver: missing");
}

TEST(Scenario, SemanticErrorsArePrefixed) {
    auto doc = minimal();
    doc["driver"] = "entropic:-2";
    EXPECT_EQ(error_of(doc).rfind("/driver: ", 0), 0u);
    auto clock = minimal();
    clock["compensator"]["clock"] = {{0, 0}, {1, -1}};
    EXPECT_EQ(error_of(clock).rfind("/compensator", 0), 0u);
    auto expr = minimal();
    expr["terminal"]["expression"] = "n2";
    EXPECT_EQ(error_of(expr).rfind("/terminal/expression: ", 0), 0u);
    auto loss = minimal();
    loss["loss"] = "sine:0,2";
    EXPECT_EQ(error_of(loss).rfind("/loss/name: ", 0), 0u);
}

TEST(Scenario, TableTerminal) {
    auto doc = minimal();
    doc["terminal"] = json::parse(R"({"table": [{"counts": [2], "value": 5}], "default": -1})");
    const auto xi = parse_scenario(doc).make_terminal();
    EXPECT_EQ(xi(std::vector<int>{2}), 5.0);
    EXPECT_EQ(xi(std::vector<int>{3}), -1.0);
}

TEST(Scenario, GrowthOverrideAndSchemes) {
    auto doc = minimal();
    doc["driver"] = json::parse(R"({"name": "lipschitz_linear:1,0", "growth": {"beta": 0}})");
    doc["grid"] = json::parse(R"({"dt": 0.1, "scheme": "exponential", "implicit": true})");
    const auto s = parse_scenario(doc);
    EXPECT_EQ(s.make_driver().growth().beta, 0.0);
    EXPECT_EQ(s.time_grid().steps(), 10u);
    EXPECT_EQ(s.solver_options().scheme, Scheme::exponential);
    EXPECT_TRUE(s.solver_options().implicit);
    doc["grid"]["scheme"] = "implicit-ish";
    EXPECT_EQ(error_of(doc).rfind("/grid/scheme", 0), 0u);
}

TEST(Scenario, RoundTrip) {
    auto doc = json::parse(R"json({
        "name": "rt",
        "compensator": {"marks": ["up", "down"], "labels": ["u", "d"],
                        "phi": [{"start": 0, "probs": [0.5, 0.5]}, {"start": 0.5, "probs": [0.8, 0.2]}],
                        "clock": [[0, 0], [0.5, 0.25], [1, 1.25]], "horizon": 1},
        "driver": {"name": "affine_jump:0.1,0.5"},
        "terminal": {"expression": "max(n1 - n2, 0)"},
        "loss": "linear:0.5",
        "grid": {"steps": 50, "n_max": 20},
        "run": {"seed": 4, "paths": 10, "grids": [10, 20], "picard_tol": "inf"}
    })json");
    const auto a = parse_scenario(doc);
    const auto b = parse_scenario(to_json(a));
    EXPECT_EQ(to_json(a), to_json(b));
    EXPECT_EQ(b.compensator.marks, (std::vector<std::string>{"up", "down"}));
    EXPECT_EQ(b.run.grids, (std::vector<std::size_t>{10, 20}));
    EXPECT_TRUE(std::isinf(b.run.picard_tol));
    EXPECT_EQ(b.grid.steps.value(), 50u);
}

TEST(Scenario, LoadReportsMissingFile) {
    EXPECT_THROW(load_scenario("/nonexistent/scenario.json"), ValidationError);
}
