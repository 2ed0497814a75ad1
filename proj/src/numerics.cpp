#include "mppbsde/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <boost/math/distributions/poisson.hpp>

namespace mppbsde {

CompensatedSum& CompensatedSum::operator+=(double x) noexcept {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
        carry_ += (sum_ - t) + x;
    } else {
        carry_ += (x - t) + sum_;
    }
    sum_ = t;
    return *this;
}

double compensated_dot(std::span<const double> a, std::span<const double> b) noexcept {
    CompensatedSum acc;
    const std::size_t n = std::min(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) {
        acc += a[i] * b[i];
    }
    return acc.value();
}

double log_sum_exp(std::span<const double> x, std::span<const double> w) {
    if (x.size() != w.size()) {
        throw std::invalid_argument("log_sum_exp: size mismatch");
    }
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (w[i] > 0.0) {
            top = std::max(top, x[i]);
        }
    }
    if (!std::isfinite(top)) {
        return top;
    }
    CompensatedSum acc;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (w[i] > 0.0) {
            acc += w[i] * std::exp(x[i] - top);
        }
    }
    return top + std::log(acc.value());
}

double exp_excess(double x) noexcept {
    if (std::abs(x) < 1e-3) {
        // Taylor tail; relative error below 1e-16 on this range.
        const double x2 = x * x;
        return x2 * (0.5 + x * (1.0 / 6.0 + x * (1.0 / 24.0 + x * (1.0 / 120.0 + x / 720.0))));
    }
    return std::expm1(x) - x;
}

double poisson_pmf(unsigned k, double mean) {
    if (mean <= 0.0) {
        return k == 0 ? 1.0 : 0.0;
    }
    return boost::math::pdf(boost::math::poisson_distribution<double>(mean), static_cast<double>(k));
}

double poisson_tail(unsigned k, double mean) {
    if (mean <= 0.0) {
        return 0.0;
    }
    return boost::math::cdf(
        boost::math::complement(boost::math::poisson_distribution<double>(mean), static_cast<double>(k)));
}

unsigned poisson_quantile_for_tail(double mean, double tol) {
    unsigned k = 0;
    while (poisson_tail(k, mean) >= tol) {
        ++k;
        if (k > 1u << 20) {
            throw std::runtime_error("poisson_quantile_for_tail: tail tolerance unreachable");
        }
    }
    return k;
}

const double GaussRule::nodes[GaussRule::size] = {
    -0.9061798459386639927976269, -0.5384693101056830910363144, 0.0,
    0.5384693101056830910363144, 0.9061798459386639927976269};
const double GaussRule::weights[GaussRule::size] = {
    0.2369268850561890875142640, 0.4786286704993664680412915, 0.5688888888888888888888889,
    0.4786286704993664680412915, 0.2369268850561890875142640};

} // namespace mppbsde
