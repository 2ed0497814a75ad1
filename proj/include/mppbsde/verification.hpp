#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mppbsde/lattice.hpp"
#include "mppbsde/reflection.hpp"

namespace mppbsde {

struct CheckReport {
    std::string name;
    bool pass = true;
    double worst_margin = -std::numeric_limits<double>::infinity();
    double tolerance = 0.0;
    std::optional<std::size_t> layer;
    std::optional<std::size_t> state;
    std::map<std::string, double> params;
    std::map<std::string, std::vector<double>> curves;
    std::string note;

    // Records a margin (positive = violation size); keeps the worst location.
    void observe(double margin, std::optional<std::size_t> at_layer = std::nullopt,
                 std::optional<std::size_t> at_state = std::nullopt);
    // pass = worst_margin <= tolerance, unless already failed for another reason.
    void finish();
};

// Xi(p) = E[exp(p lam e^{beta A_T} |xi| + p lam int_0^T e^{beta A_s} alpha_s dA_s)] on the lattice.
struct XiBound {
    double p = 1.0;
    double value = 0.0;
    double log_value = 0.0;
};

XiBound xi_bound(double p, const GrowthParams& growth, const LatticeModel& model, const TerminalCondition& xi);

// log E_{i,s}[exp(c |xi|)] for every lattice node, layer-major.
std::vector<double> log_terminal_moments(const LatticeModel& model, const TerminalCondition& xi, double c);

// exp(p lam |y(i,n)|) <= E_{i,n}[exp(p lam e^{beta A_T} |xi| + p lam int_{t_i}^T e^{beta A} alpha dA)] (1 + tol).
CheckReport check_apriori_y(const ValueField& field, const TerminalCondition& xi, const GrowthParams& growth,
                            const std::vector<double>& p_list, double tol = 1e-8);

// e^{p G} with G_t = e^{beta A_t} lam |y_t| + lam int_0^t e^{beta A} alpha dA is a lattice submartingale:
// E_i[e^{p G_{i+1}}] >= e^{p G_i} (1 - tol).
CheckReport check_submartingale(const ValueField& field, const GrowthParams& growth, double p, double tol = 1e-8);

struct UFunctionals {
    std::size_t grid_steps = 0;
    // E[(sum |U|^2 phi dA)^{p/2}] and E[(sum (e^{q lam |U|} - 1)^2 phi dA)^p], keyed "p" and "p,q".
    std::map<std::string, double> quadratic;
    std::map<std::string, double> exponential;
};

struct UFunctionalPlan {
    std::vector<int> p_list{1, 2};
    std::vector<int> q_list{1, 2};
    double lambda = 1.0;
    std::size_t mc_paths = 4000; // for non-integer powers
    std::uint64_t seed = 7;
};

// Left-endpoint lattice functionals along the exact lattice law. Integer powers are
// exact moments; the half-integer power uses seeded Monte Carlo shared across grids.
UFunctionals u_functionals(const ValueField& field, const UFunctionalPlan& plan);

// Finiteness, plus relative change < rel_tol between the last two fields.
CheckReport check_apriori_u(const std::vector<ValueField>& refinements, const UFunctionalPlan& plan,
                            double rel_tol = 0.05);

struct ComparisonCase {
    Driver driver;
    TerminalCondition xi;
};

struct ComparisonOptions {
    SamplePlan hypothesis;
    double tol = 1e-10;
    std::optional<double> max_gap; // also require y' - y <= max_gap + tol
    SolverOptions solver;
};

// Samples f <= f' and g <= g' first; then y <= y' + tol at every node and a bit-identical rerun.
CheckReport check_comparison(const CompensatorSpec& spec, const ComparisonCase& lower, const ComparisonCase& upper,
                             const TimeGrid& grid, const ComparisonOptions& opts = {});

struct RegularizationOptions {
    InfConvolutionSearch search;
    double tol = 1e-11;
    SolverOptions solver;
};

// y^n (from inf-convolutions f^n) nondecreasing along n_list; gap to y shrinking.
CheckReport check_monotone_regularization(const CompensatorSpec& spec, const Driver& d, const TerminalCondition& xi,
                                          const std::vector<double>& n_list, const TimeGrid& grid,
                                          const RegularizationOptions& opts = {});

// |Y_0(xi^n) - Y_0(xi)| nonincreasing along n_list, with the last below the first.
CheckReport check_terminal_truncation(const CompensatorSpec& spec, const Driver& d, const TerminalCondition& xi,
                                      const std::vector<double>& n_list, const TimeGrid& grid,
                                      const SolverOptions& solver = {});

// |L(eta) - L(eta')| <= kappa E|eta - eta'| + 2 tol on random coupled law pairs.
CheckReport check_L_lipschitz(const LossFunction& loss, std::size_t trials, std::uint64_t seed,
                              double bisection_tol = 1e-10);

struct SuiteEntry {
    std::string name;
    std::function<CheckReport()> run;
    bool expect_fail = false;
};

struct SuiteResult {
    CheckReport report;
    bool expect_fail = false;
    [[nodiscard]] bool as_expected() const { return report.pass != expect_fail; }
};

// Runs entries on up to `jobs` threads; results ordered by name.
std::vector<SuiteResult> run_suite(const std::vector<SuiteEntry>& entries, std::size_t jobs);

} // namespace mppbsde
