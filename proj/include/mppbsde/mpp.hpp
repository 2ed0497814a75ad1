#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mppbsde {

// Continuous piecewise-linear function given by breakpoints (x_j, v_j), x strictly
// increasing. Constant extrapolation outside the breakpoint range.
class PiecewiseLinear {
public:
    PiecewiseLinear() = default;
    explicit PiecewiseLinear(std::vector<std::pair<double, double>> breakpoints);

    [[nodiscard]] double operator()(double x) const;
    // inf{x : f(x) >= v}; requires f nondecreasing and f(x_first) < v <= f(x_last).
    [[nodiscard]] double generalized_inverse(double v) const;
    [[nodiscard]] const std::vector<std::pair<double, double>>& breakpoints() const noexcept { return points_; }
    [[nodiscard]] bool nondecreasing() const noexcept;

private:
    std::vector<std::pair<double, double>> points_;
};

// Right-continuous step function: value_j on [start_j, start_{j+1}).
class StepFunction {
public:
    StepFunction() : starts_{0.0}, values_{0.0} {}
    explicit StepFunction(double constant) : starts_{0.0}, values_{constant} {}
    StepFunction(std::vector<double> starts, std::vector<double> values);

    [[nodiscard]] double operator()(double t) const;
    [[nodiscard]] const std::vector<double>& starts() const noexcept { return starts_; }
    [[nodiscard]] const std::vector<double>& values() const noexcept { return values_; }

private:
    std::vector<double> starts_;
    std::vector<double> values_;
};

class MarkSpace {
public:
    MarkSpace() = default;
    explicit MarkSpace(std::vector<std::string> ids, std::vector<std::string> labels = {});

    [[nodiscard]] std::size_t size() const noexcept { return ids_.size(); }
    [[nodiscard]] const std::vector<std::string>& ids() const noexcept { return ids_; }
    [[nodiscard]] const std::vector<std::string>& labels() const noexcept { return labels_; }
    [[nodiscard]] std::optional<std::size_t> index_of(const std::string& id) const;

    static MarkSpace with_size(std::size_t k);

private:
    std::vector<std::string> ids_;
    std::vector<std::string> labels_;
};

// Mark law phi_t as a piecewise-constant schedule of probability vectors.
struct PhiSegment {
    double start = 0.0;
    std::vector<double> probs;
};

// Deterministic compensator nu(dt, de) = phi_t(de) dA_t on [0, T].
class CompensatorSpec {
public:
    CompensatorSpec(MarkSpace marks, std::vector<PhiSegment> phi, PiecewiseLinear clock, double horizon,
                    std::optional<PiecewiseLinear> modulus = std::nullopt);

    // K = 1, phi = (1), A(t) = rate * t.
    static CompensatorSpec homogeneous(double rate, double horizon, std::vector<double> phi = {1.0});

    [[nodiscard]] const MarkSpace& marks() const noexcept { return marks_; }
    [[nodiscard]] std::size_t mark_count() const noexcept { return marks_.size(); }
    [[nodiscard]] double horizon() const noexcept { return horizon_; }
    [[nodiscard]] const PiecewiseLinear& clock() const noexcept { return clock_; }
    [[nodiscard]] const std::vector<PhiSegment>& phi_schedule() const noexcept { return phi_; }
    [[nodiscard]] const std::optional<PiecewiseLinear>& explicit_modulus() const noexcept { return modulus_; }

    [[nodiscard]] double A(double t) const { return clock_(t); }
    [[nodiscard]] std::span<const double> phi_at(double t) const;
    // Per-mark compensator mass int_a^b phi_s(e) dA_s.
    [[nodiscard]] std::vector<double> mark_means(double a, double b) const;
    // dA-weighted average of phi over [a, b]; phi_at(a) when A is flat there.
    [[nodiscard]] std::vector<double> phi_average(double a, double b) const;
    // rho(h): the declared modulus, or the exact modulus sup_t A(t+h) - A(t) of the clock.
    [[nodiscard]] double modulus(double h) const;
    // Sorted breakpoints of A and phi inside [0, T], including both ends.
    [[nodiscard]] std::vector<double> knots() const;

private:
    void validate() const;

    MarkSpace marks_;
    std::vector<PhiSegment> phi_;
    PiecewiseLinear clock_;
    double horizon_;
    std::optional<PiecewiseLinear> modulus_;
};

struct Event {
    double time = 0.0;
    std::size_t mark = 0;
};

struct MppPath {
    std::vector<Event> events;
    double horizon = 0.0;

    // Per-mark counts of events strictly before t.
    [[nodiscard]] std::vector<int> counts_before(double t, std::size_t marks) const;
    // Per-mark counts of events at or before t.
    [[nodiscard]] std::vector<int> counts_through(double t, std::size_t marks) const;
    void validate(std::size_t marks) const;
};

// H(t, counts on [0, t), mark); the counts stand in for the predictable history.
using PredictableField = std::function<double(double, std::span<const int>, std::size_t)>;

// Integrand for clock integrals: (t, counts before t, phi_t).
using ClockIntegrand = std::function<double(double, std::span<const int>, std::span<const double>)>;

MppPath simulate_path(const CompensatorSpec& spec, std::uint64_t seed);

double integral_p(const MppPath& path, const PredictableField& h, std::size_t marks);

// int_0^T g(t, N_{t-}, phi_t) dA_t along the path, split at the clock and phi knots,
// the path events and any extra breakpoints, with Gauss-Legendre panels no longer than quad_step.
double integrate_clock(const CompensatorSpec& spec, const MppPath& path, const ClockIntegrand& g,
                       double quad_step, std::span<const double> extra_breaks = {});

double integral_nu(const CompensatorSpec& spec, const PredictableField& h, const MppPath& path,
                   double quad_step, std::span<const double> extra_breaks = {});

double integral_q(const CompensatorSpec& spec, const MppPath& path, const PredictableField& h,
                  double quad_step, std::span<const double> extra_breaks = {});

} // namespace mppbsde
