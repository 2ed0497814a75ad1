#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "mppbsde/errors.hpp"
#include "mppbsde/mpp.hpp"
#include "mppbsde/numerics.hpp"

using namespace mppbsde;

namespace {

CompensatorSpec two_mark_spec() {
    return CompensatorSpec(MarkSpace({"up", "down"}),
                           {PhiSegment{0.0, {0.7, 0.3}}, PhiSegment{0.5, {0.2, 0.8}}},
                           PiecewiseLinear({{0.0, 0.0}, {0.5, 0.25}, {1.0, 1.25}}), 1.0);
}

} // namespace

TEST(PiecewiseLinear, EvaluatesAndExtrapolates) {
    const PiecewiseLinear f({{0.0, 0.0}, {1.0, 2.0}, {2.0, 2.0}});
    EXPECT_DOUBLE_EQ(f(0.5), 1.0);
    EXPECT_DOUBLE_EQ(f(1.5), 2.0);
    EXPECT_DOUBLE_EQ(f(-1.0), 0.0);
    EXPECT_DOUBLE_EQ(f(9.0), 2.0);
    EXPECT_TRUE(f.nondecreasing());
}

TEST(PiecewiseLinear, GeneralizedInverseSkipsFlatPieces) {
    const PiecewiseLinear f({{0.0, 0.0}, {1.0, 1.0}, {2.0, 1.0}, {3.0, 2.0}});
    EXPECT_DOUBLE_EQ(f.generalized_inverse(0.5), 0.5);
    EXPECT_DOUBLE_EQ(f.generalized_inverse(1.0), 1.0);
    EXPECT_DOUBLE_EQ(f.generalized_inverse(1.5), 2.5);
}

TEST(PiecewiseLinear, RejectsUnsortedBreakpoints) {
    EXPECT_THROW(PiecewiseLinear({{1.0, 0.0}, {0.5, 1.0}}), ValidationError);
}

TEST(StepFunction, RightContinuous) {
    const StepFunction s({0.0, 0.5}, {1.0, 3.0});
    EXPECT_EQ(s(0.49), 1.0);
    EXPECT_EQ(s(0.5), 3.0);
}

TEST(CompensatorSpec, RejectsBadPhi) {
    EXPECT_THROW(CompensatorSpec(MarkSpace::with_size(2), {PhiSegment{0.0, {0.5, 0.4}}},
                                 PiecewiseLinear({{0.0, 0.0}, {1.0, 1.0}}), 1.0),
                 ValidationError);
    EXPECT_THROW(CompensatorSpec(MarkSpace::with_size(1), {PhiSegment{0.0, {1.0}}},
                                 PiecewiseLinear({{0.0, 0.0}, {1.0, -1.0}}), 1.0),
                 ValidationError);
    EXPECT_THROW(CompensatorSpec(MarkSpace::with_size(1), {PhiSegment{0.0, {1.0}}},
                                 PiecewiseLinear({{0.0, 0.0}, {0.5, 1.0}}), 1.0),
                 ValidationError);
}

TEST(CompensatorSpec, RejectsModulusBelowClock) {
    EXPECT_THROW(CompensatorSpec(MarkSpace::with_size(1), {PhiSegment{0.0, {1.0}}},
                                 PiecewiseLinear({{0.0, 0.0}, {1.0, 2.0}}), 1.0,
                                 PiecewiseLinear({{0.0, 0.0}, {1.0, 1.0}})),
                 ValidationError);
}

TEST(CompensatorSpec, MarkMeansAndModulus) {
    const auto spec = two_mark_spec();
    const auto m = spec.mark_means(0.0, 1.0);
    EXPECT_NEAR(m[0], 0.7 * 0.25 + 0.2 * 1.0, 1e-15);
    EXPECT_NEAR(m[1], 0.3 * 0.25 + 0.8 * 1.0, 1e-15);
    EXPECT_NEAR(spec.modulus(0.5), 1.0, 1e-15);
    EXPECT_NEAR(spec.modulus(0.1), 0.2, 1e-15);
    EXPECT_NEAR(spec.modulus(2.0), 1.25, 1e-15);
    EXPECT_EQ(spec.phi_at(0.5)[0], 0.2);
}

TEST(MppPath, CountsBeforeAndThrough) {
    MppPath p{{{0.2, 0}, {0.5, 1}, {0.7, 0}}, 1.0};
    EXPECT_EQ(p.counts_before(0.5, 2), (std::vector<int>{1, 0}));
    EXPECT_EQ(p.counts_through(0.5, 2), (std::vector<int>{1, 1}));
    EXPECT_NO_THROW(p.validate(2));
    MppPath bad{{{0.5, 0}, {0.5, 0}}, 1.0};
    EXPECT_THROW(bad.validate(1), ValidationError);
}

TEST(Simulation, DeterministicPerSeed) {
    const auto spec = two_mark_spec();
    const auto a = simulate_path(spec, 99);
    const auto b = simulate_path(spec, 99);
    ASSERT_EQ(a.events.size(), b.events.size());
    for (std::size_t k = 0; k < a.events.size(); ++k) {
        EXPECT_EQ(a.events[k].time, b.events[k].time);
        EXPECT_EQ(a.events[k].mark, b.events[k].mark);
    }
    EXPECT_NO_THROW(a.validate(2));
}

TEST(Simulation, MarkCountsMatchCompensator) {
    const auto spec = two_mark_spec();
    const auto means = spec.mark_means(0.0, 1.0);
    const int paths = 20000;
    std::vector<double> total(2, 0.0);
    for (int m = 0; m < paths; ++m) {
        const auto c = simulate_path(spec, 1000 + m).counts_through(1.0, 2);
        total[0] += c[0];
        total[1] += c[1];
    }
    for (std::size_t e = 0; e < 2; ++e) {
        const double se = std::sqrt(means[e] / paths);
        EXPECT_LT(std::abs(total[e] / paths - means[e]), 4.0 * se) << e;
    }
}

TEST(Integrals, NuOfConstantIsClock) {
    const auto spec = two_mark_spec();
    const auto path = simulate_path(spec, 3);
    const double v = integral_nu(spec, [](double, std::span<const int>, std::size_t) { return 1.0; }, path, 0.05);
    EXPECT_NEAR(v, 1.25, 1e-13);
    const double w =
        integral_nu(spec, [](double t, std::span<const int>, std::size_t) { return t; }, path, 0.05);
    // int_0^.5 t * .5 dt + int_.5^1 t * 2 dt
    EXPECT_NEAR(w, 0.0625 + 0.75, 1e-13);
}

TEST(Integrals, PCountsEvents) {
    MppPath p{{{0.2, 0}, {0.5, 1}, {0.7, 0}}, 1.0};
    const double v = integral_p(p, [](double, std::span<const int> n, std::size_t e) { return e + 10.0 * n[0]; }, 2);
    EXPECT_DOUBLE_EQ(v, 0.0 + 11.0 + 10.0);
}

TEST(Integrals, CompensatedIntegralHasMeanZero) {
    const auto spec = two_mark_spec();
    const int paths = 20000;
    CompensatedSum sum;
    CompensatedSum sq;
    for (int m = 0; m < paths; ++m) {
        const auto path = simulate_path(spec, 50000 + m);
        const double v = integral_q(
            spec, path, [](double t, std::span<const int> n, std::size_t e) { return (e + 1.0) * t / (1.0 + n[0]); },
            0.05);
        sum += v;
        sq += v * v;
    }
    const double mean = sum.value() / paths;
    const double se = std::sqrt((sq.value() / paths - mean * mean) / paths);
    EXPECT_LT(std::abs(mean), 4.0 * se);
}

TEST(Integrals, RejectsBadQuadStep) {
    const auto spec = CompensatorSpec::homogeneous(1.0, 1.0);
    const auto path = simulate_path(spec, 1);
    EXPECT_THROW(integral_q(spec, path, [](double, std::span<const int>, std::size_t) { return 1.0; }, 0.0),
                 ValidationError);
}
