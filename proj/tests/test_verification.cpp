#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "mppbsde/drivers.hpp"
#include "mppbsde/errors.hpp"
#include "mppbsde/lattice.hpp"
#include "mppbsde/reflection.hpp"
#include "mppbsde/verification.hpp"

using namespace mppbsde;

namespace {

CompensatorSpec canonical() { return CompensatorSpec::homogeneous(1.0, 1.0); }

TerminalCondition indicator(double scale = 1.0) {
    return {[scale](std::span<const int> n) { return n[0] >= 1 ? scale : 0.0; }, scale, "indicator"};
}

SolverOptions exponential() {
    SolverOptions o;
    o.scheme = Scheme::exponential;
    return o;
}

} // namespace

TEST(CheckReport, ObserveKeepsWorstLocation) {
    CheckReport r;
    r.tolerance = 0.5;
    r.observe(0.1, 3, 4);
    r.observe(0.2, 5, 6);
    r.observe(-1.0, 7, 8);
    r.finish();
    EXPECT_TRUE(r.pass);
    EXPECT_EQ(r.worst_margin, 0.2);
    EXPECT_EQ(r.layer.value(), 5u);
    EXPECT_EQ(r.state.value(), 6u);
    r.observe(0.6);
    r.finish();
    EXPECT_FALSE(r.pass);
}

TEST(XiBound, MatchesExponentialMoment) {
    // E[exp(|xi|)] for xi = 1{N_1 >= 1}: e^-1 + (1 - e^-1) e.
    const LatticeModel model(canonical(), TimeGrid::uniform(canonical(), 10), {});
    GrowthParams g;
    const auto b = xi_bound(1.0, g, model, indicator());
    EXPECT_NEAR(b.log_value, 0.73532566405551922, 1e-12);
    EXPECT_NEAR(b.value, std::exp(0.73532566405551922), 1e-11);
}

TEST(AprioriY, HoldsForExactEntropicField) {
    const Driver d = make_driver("entropic:1");
    const auto field = solve_backward(canonical(), d, indicator(), TimeGrid::uniform(canonical(), 200), exponential());
    const auto r = check_apriori_y(field, indicator(), d.growth(), {1.0, 2.0, 3.0}, 1e-8);
    EXPECT_TRUE(r.pass) << r.worst_margin;
}

TEST(AprioriY, ExplicitSchemeOvershootsTightBound) {
    const Driver d = make_driver("entropic:1");
    const auto field = solve_backward(canonical(), d, indicator(), TimeGrid::uniform(canonical(), 1000));
    const auto r = check_apriori_y(field, indicator(), d.growth(), {1.0}, 1e-8);
    EXPECT_FALSE(r.pass);
    EXPECT_LT(r.worst_margin, 1e-3);
}

TEST(AprioriY, UnderstatedBetaFails) {
    const Driver d = make_driver("lipschitz_linear:1,0");
    GrowthParams g = d.growth();
    g.beta = 0.0;
    const auto field = solve_backward(canonical(), d, indicator(), TimeGrid::uniform(canonical(), 200));
    const auto r = check_apriori_y(field, indicator(), g, {1.0}, 1e-8);
    EXPECT_FALSE(r.pass);
    EXPECT_TRUE(r.layer.has_value());
    EXPECT_TRUE(check_apriori_y(field, indicator(), d.growth(), {1.0}, 1e-8).pass);
}

TEST(Submartingale, HoldsAndFailsAsDeclared) {
    const Driver ent = make_driver("entropic:1");
    const auto field = solve_backward(canonical(), ent, indicator(), TimeGrid::uniform(canonical(), 200), exponential());
    EXPECT_TRUE(check_submartingale(field, ent.growth(), 2.0).pass);

    const Driver lin = make_driver("lipschitz_linear:1,0");
    GrowthParams g = lin.growth();
    g.beta = 0.0;
    const auto grows = solve_backward(canonical(), lin, indicator(), TimeGrid::uniform(canonical(), 200));
    EXPECT_FALSE(check_submartingale(grows, g, 1.0).pass);
    EXPECT_TRUE(check_submartingale(grows, lin.growth(), 1.0).pass);
}

TEST(UFunctionals, QuadraticMomentIsTerminalVariance) {
    const auto field =
        solve_backward(canonical(), make_driver("zero"), indicator(), TimeGrid::uniform(canonical(), 2000));
    UFunctionalPlan plan;
    plan.p_list = {2};
    plan.q_list = {1};
    const auto u = u_functionals(field, plan);
    const double p = 0.63212055882855768;
    EXPECT_NEAR(u.quadratic.at("p=2"), p * (1.0 - p), 2e-3);
    EXPECT_GT(u.exponential.at("p=2,q=1"), 0.0);
}

TEST(UFunctionals, StableUnderRefinement) {
    const Driver d = make_driver("entropic:1");
    std::vector<ValueField> fields;
    for (std::size_t n : {500u, 2000u}) {
        fields.push_back(solve_backward(canonical(), d, indicator(), TimeGrid::uniform(canonical(), n), exponential()));
    }
    UFunctionalPlan plan;
    plan.mc_paths = 2000;
    const auto r = check_apriori_u(fields, plan);
    EXPECT_TRUE(r.pass) << r.worst_margin;
    EXPECT_EQ(r.curves.size(), 6u);
}

TEST(Comparison, OrderedDataGiveOrderedSolutions) {
    const Driver f = make_driver("entropic:1");
    ComparisonOptions co;
    co.tol = 1e-10;
    const auto r = check_comparison(canonical(), {f, indicator()}, {f.renamed("same"), indicator(2.0)},
                                    TimeGrid::uniform(canonical(), 200), co);
    EXPECT_TRUE(r.pass) << r.note;
    EXPECT_EQ(r.params.at("bit_identical"), 1.0);
    EXPECT_GE(r.params.at("min_gap"), 0.0);
}

TEST(Comparison, UnmetHypothesisIsReported) {
    const auto r = check_comparison(canonical(), {make_driver("constant:1"), indicator()},
                                    {make_driver("zero"), indicator()}, TimeGrid::uniform(canonical(), 50));
    EXPECT_FALSE(r.pass);
    EXPECT_NE(r.note.find("hypothesis"), std::string::npos);
}

TEST(Comparison, MaxGapIsEnforced) {
    const Driver f = make_driver("entropic:1");
    const Driver up("up", [f](double t, double y, std::span<const double> u, std::span<const double> phi) {
        return f(t, y, u, phi) + 0.1;
    }, f.convexity(), f.growth());
    ComparisonOptions co;
    co.tol = 1e-6;
    co.max_gap = 0.1;
    EXPECT_TRUE(check_comparison(canonical(), {f, indicator()}, {up, indicator()}, TimeGrid::uniform(canonical(), 100),
                                 co)
                    .pass);
    co.max_gap = 0.05;
    EXPECT_FALSE(check_comparison(canonical(), {f, indicator()}, {up, indicator()},
                                  TimeGrid::uniform(canonical(), 100), co)
                     .pass);
}

TEST(Regularization, GapShrinksForSteepTerminal) {
    const auto r = check_monotone_regularization(canonical(), make_driver("entropic:1"), indicator(3.0),
                                                 {2.0, 4.0, 8.0}, TimeGrid::uniform(canonical(), 100));
    EXPECT_TRUE(r.pass) << r.note;
    const auto& gap = r.curves.at("gap");
    EXPECT_GT(gap.front(), gap.back());
}

TEST(TerminalTruncation, ConvergesForUnboundedTerminal) {
    const TerminalCondition xi{[](std::span<const int> n) { return 1.0 * n[0]; }, std::nullopt, "n"};
    const auto r = check_terminal_truncation(canonical(), make_driver("zero"), xi, {1.0, 2.0, 4.0, 8.0},
                                             TimeGrid::uniform(canonical(), 100));
    EXPECT_TRUE(r.pass) << r.note;
}

TEST(LLipschitz, HoldsForDeclaredKappa) {
    const auto r = check_L_lipschitz(make_loss("sine:0.1,0.5"), 300, 9);
    EXPECT_TRUE(r.pass);
    EXPECT_EQ(r.params.at("violations"), 0.0);
    EXPECT_NEAR(r.params.at("kappa"), 3.0, 1e-12);
}

TEST(RunSuite, SortsAndCapturesErrors) {
    std::vector<SuiteEntry> entries;
    entries.push_back({"b", [] {
                           CheckReport r;
                           r.finish();
                           return r;
                       },
                       false});
    entries.push_back({"a", []() -> CheckReport { throw std::runtime_error("boom"); }, true});
    const auto results = run_suite(entries, 2);
    ASSERT_EQ(results.size(), 2u);
    EXPECT_EQ(results[0].report.name, "a");
    EXPECT_FALSE(results[0].report.pass);
    EXPECT_TRUE(results[0].as_expected());
    EXPECT_NE(results[0].report.note.find("boom"), std::string::npos);
    EXPECT_TRUE(results[1].as_expected());
}
