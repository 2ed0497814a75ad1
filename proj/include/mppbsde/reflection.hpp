#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mppbsde/lattice.hpp"

namespace mppbsde {

// Loss l(t, y), strictly increasing and bi-Lipschitz in y with constants
// kappa_lower <= kappa_upper.
struct LossFunction {
    std::string name;
    std::function<double(double, double)> eval;
    double kappa_lower = 1.0;
    double kappa_upper = 1.0;

    double operator()(double t, double y) const { return eval(t, y); }
    [[nodiscard]] double kappa() const { return kappa_upper / kappa_lower; }
};

// "linear:c" (l = y - c) and "sine:c,a" (l = y - c + a sin y, 0 <= a < 1).
LossFunction make_loss(const std::string& spec);

struct LossSamplePlan {
    std::size_t samples = 2000;
    double horizon = 1.0;
    double y_range = 5.0;
    std::uint64_t seed = 1;
};

struct LossReport {
    bool pass = true;
    std::size_t samples = 0;
    std::size_t monotonicity_violations = 0;
    std::size_t lipschitz_violations = 0;
    std::size_t growth_violations = 0;
    double worst_margin = 0.0;
    std::string worst_sample;
    double tolerance = 0.0;
};

LossReport validate_loss(const LossFunction& loss, const LossSamplePlan& plan, double tol);

// Finite law of a real random variable.
struct DiscreteLaw {
    std::vector<double> values;
    std::vector<double> probs;

    void validate(double tol = 1e-9) const;
    [[nodiscard]] double mean() const;
};

// Law of y(i, N_{t_i}) from a value field and the exact lattice law.
DiscreteLaw layer_law(const std::vector<double>& y, const LawTable& laws, std::size_t layer);

// E[l(t, x + eta)]
double expected_loss(const LossFunction& loss, double t, const DiscreteLaw& law, double x = 0.0);

// L_t(eta) = inf{x >= 0 : E[l(t, x + eta)] >= 0}, by bisection to absolute tolerance tol.
double operator_L(const LossFunction& loss, double t, const DiscreteLaw& law, double tol = 1e-10);

struct PicardHorizon {
    double h = 0.0;         // largest h with (32 + 64 kappa) beta rho(h) < 1, capped at T
    double h_grid = 0.0;    // largest grid time not above h (0 when the grid step is too coarse)
    std::size_t windows = 0; // ceil(T / h)
    bool guaranteed = false; // h covers at least one grid step and windows <= 1e6
};

PicardHorizon picard_horizon(double beta, double kappa, const CompensatorSpec& spec);
PicardHorizon picard_horizon(double beta, double kappa, const CompensatorSpec& spec, const TimeGrid& grid);

struct ReflectedSolution {
    ValueField y_field;          // unreflected
    ValueField Y_field;          // y + R, same u
    std::vector<double> L;       // L_{t_i}(y_{t_i})
    std::vector<double> R;       // sup_{j >= i} L_j
    std::vector<double> K;       // R_0 - R_i
    std::vector<double> margins; // E[l(t_i, Y_{t_i})]
    double flatness = 0.0;
    std::vector<double> picard_trace;
    bool converged = true;
    PicardHorizon horizon;
};

ReflectedSolution running_sup_reflect(const ValueField& y_field, const LawTable& laws, const LossFunction& loss,
                                      double tol = 1e-10);

struct ReflectOptions {
    double picard_tol = 1e-10;
    std::size_t max_iter = 50;
    double bisection_tol = 1e-10;
    SolverOptions solver;
};

// Picard iteration Y^(0) = 0, Y^(m) = reflected solution with f(s, Y^(m-1)_s, u).
ReflectedSolution solve_reflected(const CompensatorSpec& spec, const Driver& d, const LossFunction& loss,
                                  const TerminalCondition& xi, const TimeGrid& grid, const ReflectOptions& opts = {});

struct SkorokhodReport {
    std::vector<double> margins;
    double min_margin = 0.0;
    double flatness = 0.0;
    double k_terminal = 0.0;
    double tolerance = 0.0;
    bool constraint_ok = true;
    bool flat_ok = true;
    bool monotone_ok = true;
    [[nodiscard]] bool pass() const { return constraint_ok && flat_ok && monotone_ok; }
};

// sum_{i >= 1} E[l(t_{i-1}, Y_{t_{i-1}})] (K_i - K_{i-1}): the grid value before each
// increment of K plays the role of Y_{t-}.
double flatness_residual(std::span<const double> margins, std::span<const double> K);

SkorokhodReport skorokhod_report(const ReflectedSolution& sol, const LossFunction& loss, const LawTable& laws,
                                 double tol);

} // namespace mppbsde
