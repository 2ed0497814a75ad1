#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "mppbsde/drivers.hpp"
#include "mppbsde/errors.hpp"
#include "mppbsde/numerics.hpp"

using namespace mppbsde;

namespace {

const std::vector<double> one_mark{1.0};

CompensatorSpec canonical() { return CompensatorSpec::homogeneous(1.0, 1.0); }

} // namespace

TEST(JLambda, OneMarkValue) {
    const std::vector<double> u{1.0};
    EXPECT_NEAR(j_lambda(u, 1.0, one_mark), 0.71828182845904524, 1e-15);
    EXPECT_EQ(j_lambda(std::vector<double>{0.0}, 1.0, one_mark), 0.0);
}

TEST(JLambda, NonnegativeAndLogConsistent) {
    std::mt19937_64 rng(3);
    const std::vector<double> phi{0.25, 0.75};
    for (int k = 0; k < 500; ++k) {
        const std::vector<double> u{-5.0 + 10.0 * uniform01(rng), -5.0 + 10.0 * uniform01(rng)};
        const double lam = 0.1 + 2.0 * uniform01(rng);
        const double j = j_lambda(u, lam, phi);
        EXPECT_GE(j, 0.0);
        if (j > 0.0) {
            EXPECT_NEAR(log_j_lambda(u, lam, phi), std::log(j), 1e-10);
        }
    }
}

TEST(JLambda, LogDomainStaysFinite) {
    const std::vector<double> u{1000.0};
    EXPECT_EQ(j_lambda(u, 1.0, one_mark), std::numeric_limits<double>::infinity());
    EXPECT_NEAR(log_j_lambda(u, 1.0, one_mark), 1000.0, 1e-9);
}

TEST(WeightedNorm, Value) {
    EXPECT_DOUBLE_EQ(weighted_norm(std::vector<double>{3.0, 4.0}, std::vector<double>{0.5, 0.5}),
                     std::sqrt(12.5));
}

TEST(MakeDriver, CatalogValues) {
    const std::vector<double> u{0.5};
    EXPECT_EQ(make_driver("zero")(0.0, 1.0, u, one_mark), 0.0);
    EXPECT_EQ(make_driver("constant:-1")(0.0, 1.0, u, one_mark), -1.0);
    EXPECT_NEAR(make_driver("entropic:2")(0.0, 1.0, u, one_mark), (std::exp(1.0) - 2.0) / 2.0, 1e-15);
    EXPECT_NEAR(make_driver("neg_entropic:1")(0.0, 1.0, u, one_mark), -(std::exp(-0.5) - 1.0 + 0.5), 1e-15);
    EXPECT_NEAR(make_driver("lipschitz_linear:0.3,2")(0.0, 1.0, u, one_mark), 0.3 + 1.0, 1e-15);
    EXPECT_NEAR(make_driver("affine_jump:0.1,0.5")(0.0, 1.0, u, one_mark), 0.35, 1e-15);
}

TEST(MakeDriver, RejectsMalformed) {
    EXPECT_THROW(make_driver("nope"), ValidationError);
    EXPECT_THROW(make_driver("entropic"), ValidationError);
    EXPECT_THROW(make_driver("entropic:-1"), ValidationError);
    EXPECT_THROW(make_driver("affine_jump:0,-1"), ValidationError);
    EXPECT_THROW(make_driver("constant:abc"), ValidationError);
}

TEST(VerifyStructure, CatalogDriversPass) {
    const auto spec = CompensatorSpec(MarkSpace::with_size(2), {PhiSegment{0.0, {0.4, 0.6}}},
                                      PiecewiseLinear({{0.0, 0.0}, {1.0, 1.5}}), 1.0);
    for (const char* name : {"zero", "constant:0.5", "entropic:1", "entropic:0.5", "neg_entropic:1",
                             "lipschitz_linear:0.5,0.5", "affine_jump:0.1,0.5"}) {
        const auto r = verify_structure(make_driver(name), spec, SamplePlan{}, 1e-10);
        EXPECT_TRUE(r.all_pass()) << name;
        EXPECT_EQ(r.verdicts.size(), 5u);
    }
}

TEST(VerifyStructure, UnderstatedLipschitzFails) {
    const Driver d = make_driver("lipschitz_linear:1,0");
    GrowthParams g = d.growth();
    g.beta = 0.5;
    const auto r = verify_structure(d.with_growth(g), canonical(), SamplePlan{}, 1e-10);
    EXPECT_FALSE(r.verdict("lipschitz_y").pass);
    EXPECT_GT(r.verdict("lipschitz_y").violations, 0u);
    EXPECT_NEAR(r.verdict("lipschitz_y").worst_margin, 0.5, 1e-9);
}

TEST(VerifyStructure, WrongConvexityFails) {
    const Driver d = make_driver("entropic:1");
    const Driver flipped("flipped", d.function(), Convexity::concave_in_u, d.growth());
    const auto r = verify_structure(flipped, canonical(), SamplePlan{}, 1e-10);
    EXPECT_FALSE(r.verdict("convexity").pass);
}

TEST(InfConvolution, EntropicClosedForm) {
    // inf_r e^r - 1 - r + 2|3 - r| is attained at r = ln 3.
    const auto r = inf_convolution(make_driver("entropic:1"), 2.0, 0.0, 0.0, std::vector<double>{3.0}, one_mark);
    EXPECT_NEAR(r.value, 8.0 - 3.0 * std::log(3.0), 1e-9);
    EXPECT_NEAR(r.minimizer[0], std::log(3.0), 1e-4);
    EXPECT_TRUE(r.converged);
}

TEST(InfConvolution, BelowDriverAndMonotoneInN) {
    std::mt19937_64 rng(11);
    const Driver d = make_driver("entropic:1");
    const std::vector<double> phi{0.3, 0.7};
    for (int k = 0; k < 50; ++k) {
        const std::vector<double> u{-2.0 + 4.0 * uniform01(rng), -2.0 + 4.0 * uniform01(rng)};
        double prev = -std::numeric_limits<double>::infinity();
        for (double n : {1.0, 2.0, 4.0, 8.0}) {
            const double v = inf_convolution(d, n, 0.0, 0.0, u, phi).value;
            EXPECT_LE(v, d(0.0, 0.0, u, phi) + 1e-10);
            EXPECT_GE(v, prev - 1e-10);
            prev = v;
        }
    }
}

TEST(InfConvolution, ExactForLipschitzBelowN) {
    const Driver d = make_driver("lipschitz_linear:0,1");
    const std::vector<double> u{1.7};
    const auto r = inf_convolution(d, 3.0, 0.0, 0.0, u, one_mark);
    EXPECT_NEAR(r.value, 1.7, 1e-9);
}

TEST(InfConvolutionDriver, CountsEvaluations) {
    auto stats = std::make_shared<InfConvolutionStats>();
    const Driver fn = inf_convolution_driver(make_driver("entropic:1"), 4.0, {}, stats);
    const std::vector<double> u{0.5};
    EXPECT_LE(fn(0.0, 0.0, u, one_mark), make_driver("entropic:1")(0.0, 0.0, u, one_mark) + 1e-12);
    EXPECT_EQ(stats->evaluations.load(), 1u);
}

TEST(Truncations, ClampAndShift) {
    const Driver c = clamp_driver(make_driver("constant:5"), 2.0);
    const std::vector<double> u{0.0};
    EXPECT_EQ(c(0.0, 0.0, u, one_mark), 2.0);

    const Driver s = shift_driver(make_driver("constant:5"), 2.0);
    EXPECT_EQ(s(0.0, 0.0, u, one_mark), 2.0);
    const Driver lin = shift_driver(make_driver("lipschitz_linear:1,0"), 2.0);
    EXPECT_EQ(lin(0.0, 3.0, u, one_mark), 3.0);
    EXPECT_EQ(s.growth().alpha(0.0), 10.0);

    const TerminalCondition xi{[](std::span<const int> n) { return 3.0 * n[0]; }, std::nullopt, "3n"};
    const auto cut = clamp_terminal(xi, 4.0);
    const std::vector<int> two{2};
    EXPECT_EQ(cut(two), 4.0);
    EXPECT_EQ(cut.bound.value(), 4.0);
    EXPECT_THROW(clamp_terminal(xi, 0.0), ValidationError);
}

TEST(GrowthParams, WeightedAlphaIntegral) {
    GrowthParams g;
    g.alpha = StepFunction(2.0);
    g.beta = 1.0;
    // int_0^1 e^s 2 ds
    EXPECT_NEAR(g.weighted_alpha_integral(canonical(), 0.0, 1.0), 2.0 * (std::exp(1.0) - 1.0), 1e-12);
    g.beta = 0.0;
    EXPECT_NEAR(g.weighted_alpha_integral(canonical(), 0.25, 1.0), 1.5, 1e-15);
}
