#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace mppbsde {

// Neumaier-compensated accumulator.
class CompensatedSum {
public:
    CompensatedSum& operator+=(double x) noexcept;
    [[nodiscard]] double value() const noexcept { return sum_ + carry_; }

private:
    double sum_ = 0.0;
    double carry_ = 0.0;
};

double compensated_dot(std::span<const double> a, std::span<const double> b) noexcept;

// log(sum_k w_k exp(x_k)) for nonnegative weights; -inf when all weights vanish.
double log_sum_exp(std::span<const double> x, std::span<const double> w);

// exp(x) - 1 - x without cancellation near zero.
double exp_excess(double x) noexcept;

double poisson_pmf(unsigned k, double mean);
// P(X > k) for X ~ Poisson(mean).
double poisson_tail(unsigned k, double mean);
// Smallest k with P(X > k) < tol.
unsigned poisson_quantile_for_tail(double mean, double tol);

// Uniform double in [0, 1) with 53 random bits; identical on every platform.
template <class Engine>
double uniform01(Engine& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Gauss-Legendre nodes and weights on [-1, 1], 5 points (exact to degree 9).
struct GaussRule {
    static constexpr std::size_t size = 5;
    static const double nodes[size];
    static const double weights[size];
};

} // namespace mppbsde
