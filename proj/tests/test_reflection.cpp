#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "mppbsde/drivers.hpp"
#include "mppbsde/errors.hpp"
#include "mppbsde/lattice.hpp"
#include "mppbsde/numerics.hpp"
#include "mppbsde/reflection.hpp"

using namespace mppbsde;

namespace {

const double kP1 = 0.63212055882855768; // 1 - e^-1

CompensatorSpec canonical() { return CompensatorSpec::homogeneous(1.0, 1.0); }

TerminalCondition indicator() {
    return {[](std::span<const int> n) { return n[0] >= 1 ? 1.0 : 0.0; }, 1.0, "1{n>=1}"};
}

DiscreteLaw bernoulli(double p) { return {{0.0, 1.0}, {1.0 - p, p}}; }

} // namespace

TEST(Loss, CatalogValuesAndConstants) {
    const auto lin = make_loss("linear:0.8");
    EXPECT_DOUBLE_EQ(lin(0.0, 1.0), 0.2);
    EXPECT_EQ(lin.kappa(), 1.0);
    const auto sine = make_loss("sine:0.2,0.4");
    EXPECT_NEAR(sine(0.0, 1.0), 0.8 + 0.4 * std::sin(1.0), 1e-15);
    EXPECT_NEAR(sine.kappa_lower, 0.6, 1e-15);
    EXPECT_NEAR(sine.kappa_upper, 1.4, 1e-15);
    EXPECT_THROW(make_loss("sine:0,1"), ValidationError);
    EXPECT_THROW(make_loss("quadratic:1"), ValidationError);
    EXPECT_THROW(make_loss("linear"), ValidationError);
}

TEST(Loss, ValidationDetectsMisdeclaredConstants) {
    EXPECT_TRUE(validate_loss(make_loss("sine:0,0.5"), {}, 1e-12).pass);
    LossFunction wrong = make_loss("sine:0,0.5");
    wrong.kappa_upper = 1.2;
    const auto r = validate_loss(wrong, {}, 1e-12);
    EXPECT_FALSE(r.pass);
    EXPECT_GT(r.lipschitz_violations, 0u);
    const LossFunction decreasing{"dec", [](double, double y) { return -y; }, 1.0, 1.0};
    EXPECT_GT(validate_loss(decreasing, {}, 1e-12).monotonicity_violations, 0u);
}

TEST(DiscreteLaw, Validation) {
    EXPECT_THROW((DiscreteLaw{{0.0, 1.0}, {0.5, 0.4}}).validate(), ValidationError);
    EXPECT_THROW((DiscreteLaw{{0.0}, {1.0, 0.0}}).validate(), ValidationError);
    EXPECT_NEAR(bernoulli(0.3).mean(), 0.3, 1e-15);
}

TEST(OperatorL, LinearClosedForm) {
    const auto loss = make_loss("linear:0.8");
    EXPECT_NEAR(operator_L(loss, 0.0, bernoulli(kP1)), 0.8 - kP1, 1e-10);
    EXPECT_NEAR(operator_L(loss, 0.0, bernoulli(kP1)), 0.16787944117144232, 1e-10);
    EXPECT_EQ(operator_L(loss, 0.0, DiscreteLaw{{1.0}, {1.0}}), 0.0);
}

TEST(OperatorL, SinePointMass) {
    // E l(x - 1) = (x - 1) + a sin(x - 1) vanishes only at x = 1.
    const auto loss = make_loss("sine:0,0.5");
    EXPECT_NEAR(operator_L(loss, 0.0, DiscreteLaw{{-1.0}, {1.0}}), 1.0, 1e-10);
}

TEST(OperatorL, SatisfiesConstraintAndIsMinimal) {
    std::mt19937_64 rng(5);
    const auto loss = make_loss("sine:0.3,0.6");
    for (int trial = 0; trial < 200; ++trial) {
        DiscreteLaw law;
        double total = 0.0;
        for (int k = 0; k < 4; ++k) {
            law.values.push_back(-3.0 + 6.0 * uniform01(rng));
            law.probs.push_back(0.05 + uniform01(rng));
            total += law.probs.back();
        }
        for (double& p : law.probs) {
            p /= total;
        }
        const double x = operator_L(loss, 0.0, law, 1e-12);
        EXPECT_GE(x, 0.0);
        EXPECT_GE(expected_loss(loss, 0.0, law, x), -1e-11);
        if (x > 1e-9) {
            EXPECT_LT(expected_loss(loss, 0.0, law, x - 1e-9), 0.0);
        }
    }
}

TEST(PicardHorizon, ClosedForms) {
    const auto spec = canonical();
    const auto a = picard_horizon(1.0, 1.0, spec);
    EXPECT_LT(a.h, 1.0 / 96.0);
    EXPECT_NEAR(a.h, 1.0 / 96.0, 1e-15);
    EXPECT_EQ(a.windows, 97u);
    EXPECT_TRUE(a.guaranteed);

    const auto b = picard_horizon(0.1, 2.0, spec);
    EXPECT_LT(b.h, 1.0 / 16.0);
    EXPECT_NEAR(b.h, 1.0 / 16.0, 1e-15);
    EXPECT_EQ(b.windows, 17u);

    const auto c = picard_horizon(0.0, 3.0, spec);
    EXPECT_EQ(c.h, 1.0);
    EXPECT_EQ(c.windows, 1u);

    EXPECT_THROW(picard_horizon(1.0, 0.5, spec), ValidationError);
}

TEST(PicardHorizon, GridAwareFlag) {
    const auto spec = canonical();
    const auto fine = picard_horizon(1.0, 1.0, spec, TimeGrid::uniform(spec, 1000));
    EXPECT_TRUE(fine.guaranteed);
    EXPECT_NEAR(fine.h_grid, 0.01, 1e-12);
    const auto coarse = picard_horizon(1.0, 1.0, spec, TimeGrid::uniform(spec, 10));
    EXPECT_FALSE(coarse.guaranteed);
    EXPECT_EQ(coarse.h_grid, 0.0);
}

TEST(Flatness, PairsPreviousMarginWithIncrement) {
    const std::vector<double> margins{0.0, 1.0, 0.0, 2.0};
    const std::vector<double> K{0.0, 0.5, 0.5, 1.0};
    EXPECT_DOUBLE_EQ(flatness_residual(margins, K), 0.0 * 0.5 + 1.0 * 0.0 + 0.0 * 0.5);
    EXPECT_THROW(flatness_residual(margins, std::vector<double>{0.0}), ValidationError);
}

TEST(SolveReflected, BindingConstraintGivesLinearK) {
    const LossFunction loss = make_loss("linear:0.63212055882855768");
    const auto spec = canonical();
    const auto grid = TimeGrid::uniform(spec, 200);
    const auto sol = solve_reflected(spec, make_driver("constant:-1"), loss, indicator(), grid);
    ASSERT_TRUE(sol.converged);
    for (std::size_t i = 0; i < sol.K.size(); ++i) {
        EXPECT_NEAR(sol.K[i], grid.time(i), 1e-8);
        EXPECT_GE(sol.margins[i], -1e-9);
    }
    const auto report = skorokhod_report(sol, loss, forward_law(spec, grid), 1e-8);
    EXPECT_TRUE(report.pass());
}

TEST(SolveReflected, SlackConstraintLeavesSolutionAlone) {
    const auto loss = make_loss("sine:0.2,0.4");
    const auto spec = canonical();
    const auto grid = TimeGrid::uniform(spec, 100);
    const auto sol = solve_reflected(spec, make_driver("zero"), loss, indicator(), grid);
    for (double k : sol.K) {
        EXPECT_EQ(k, 0.0);
    }
    EXPECT_EQ(sol.Y_field.y, sol.y_field.y);
    EXPECT_EQ(sol.picard_trace.size(), 1u);
}

TEST(SolveReflected, PerturbedKBreaksFlatness) {
    const auto loss = make_loss("sine:0.2,0.4");
    const auto spec = canonical();
    const auto grid = TimeGrid::uniform(spec, 100);
    auto sol = solve_reflected(spec, make_driver("zero"), loss, indicator(), grid);
    for (std::size_t i = 0; i < sol.K.size(); ++i) {
        sol.K[i] += 0.1 * grid.time(i);
    }
    const auto report = skorokhod_report(sol, loss, forward_law(spec, grid), 1e-8);
    EXPECT_TRUE(report.constraint_ok);
    EXPECT_FALSE(report.flat_ok);
}

TEST(SolveReflected, PicardContracts) {
    ReflectOptions ro;
    ro.picard_tol = 1e-10;
    const auto spec = canonical();
    const auto sol = solve_reflected(spec, make_driver("lipschitz_linear:0.1,0"), make_loss("linear:0.8"),
                                     indicator(), TimeGrid::uniform(spec, 100), ro);
    ASSERT_TRUE(sol.converged);
    for (std::size_t k = 1; k < sol.picard_trace.size(); ++k) {
        EXPECT_LT(sol.picard_trace[k], sol.picard_trace[k - 1]);
    }
    EXPECT_LT(sol.picard_trace.back(), 1e-10);
    EXPECT_TRUE(sol.horizon.guaranteed);
}

TEST(SolveReflected, ReportsNonConvergence) {
    ReflectOptions ro;
    ro.max_iter = 2;
    const auto spec = canonical();
    const auto sol = solve_reflected(spec, make_driver("lipschitz_linear:0.1,0"), make_loss("linear:0.8"),
                                     indicator(), TimeGrid::uniform(spec, 50), ro);
    EXPECT_FALSE(sol.converged);
    EXPECT_EQ(sol.picard_trace.size(), 2u);
}
