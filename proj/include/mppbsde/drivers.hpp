#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mppbsde/mpp.hpp"

namespace mppbsde {

using UVector = std::vector<double>;

// ||u||_t = (sum_e phi_t(e) u(e)^2)^{1/2}
double weighted_norm(std::span<const double> u, std::span<const double> phi);

// j_lambda(u) = sum_e phi(e) (exp(lam u(e)) - 1 - lam u(e)) >= 0. Returns +inf when the
// true value exceeds the double range; use log_j_lambda for such arguments.
double j_lambda(std::span<const double> u, double lam, std::span<const double> phi);

// log j_lambda(u), evaluated in the log domain so that lam * |u| > 700 stays finite.
double log_j_lambda(std::span<const double> u, double lam, std::span<const double> phi);

struct GrowthParams {
    StepFunction alpha;  // alpha_t >= 0, piecewise constant
    double beta = 0.0;   // Lipschitz constant in y
    double lambda = 1.0; // exponential scale
    double c0 = 0.0;     // linear-bound constant

    void validate() const;
    // int_a^b e^{beta A_s} alpha_s dA_s, exact for piecewise-constant alpha.
    [[nodiscard]] double weighted_alpha_integral(const CompensatorSpec& spec, double a, double b) const;
    // Upper/lower growth envelopes q_bar and q_under.
    [[nodiscard]] double upper_envelope(double t, double y, std::span<const double> u,
                                        std::span<const double> phi) const;
    [[nodiscard]] double lower_envelope(double t, double y, std::span<const double> u,
                                        std::span<const double> phi) const;
};

enum class Convexity { convex_in_u, concave_in_u };

using DriverFn =
    std::function<double(double t, double y, std::span<const double> u, std::span<const double> phi)>;

// Generator f(t, y, u) with declared structural metadata. Immutable value type.
class Driver {
public:
    Driver(std::string name, DriverFn eval, Convexity convexity, GrowthParams growth);

    double operator()(double t, double y, std::span<const double> u, std::span<const double> phi) const {
        return eval_(t, y, u, phi);
    }

    [[nodiscard]] const std::string& name() const noexcept { return name_; }
    [[nodiscard]] Convexity convexity() const noexcept { return convexity_; }
    [[nodiscard]] const GrowthParams& growth() const noexcept { return growth_; }
    [[nodiscard]] const DriverFn& function() const noexcept { return eval_; }

    [[nodiscard]] Driver with_growth(GrowthParams growth) const;
    [[nodiscard]] Driver renamed(std::string name) const;

private:
    std::string name_;
    DriverFn eval_;
    Convexity convexity_;
    GrowthParams growth_;
};

// Built-in catalog: "zero", "constant:a", "entropic:lam", "neg_entropic:lam",
// "lipschitz_linear:beta,L", "affine_jump:a,b".
Driver make_driver(const std::string& spec);

// Markovian terminal condition xi = g(N_T(e_1), ..., N_T(e_K)).
struct TerminalCondition {
    std::function<double(std::span<const int>)> g;
    std::optional<double> bound;
    std::string description;

    double operator()(std::span<const int> counts) const { return g(counts); }
};

struct SamplePlan {
    std::size_t samples = 2000;
    double y_range = 2.0;
    double u_range = 2.0;
    std::uint64_t seed = 1;
};

struct AssumptionVerdict {
    std::string assumption;
    bool pass = true;
    std::size_t violations = 0;
    double worst_margin = 0.0; // largest observed excess over the allowed bound
    std::string worst_sample;
};

struct StructureReport {
    std::vector<AssumptionVerdict> verdicts;
    double tolerance = 0.0;

    [[nodiscard]] bool all_pass() const;
    [[nodiscard]] const AssumptionVerdict& verdict(const std::string& assumption) const;
};

// Certifies continuity, Lipschitz-in-y, the exponential growth envelope, midpoint
// convexity/concavity in u and the uniform linear bound by random sampling.
StructureReport verify_structure(const Driver& d, const CompensatorSpec& spec, const SamplePlan& plan,
                                 double tol);

struct InfConvolutionSearch {
    double tol = 1e-11;
    std::size_t max_iter = 200;
};

struct InfConvolutionResult {
    double value = 0.0;
    UVector minimizer;
    bool converged = true;
    // False when n <= C0: the search box is then heuristic rather than certified.
    bool certified_box = true;
    std::size_t iterations = 0;
};

// f^n(t, y, u) = inf_r { f(t, y, r) + n ||u - r||_t }.
InfConvolutionResult inf_convolution(const Driver& d, double n, double t, double y, std::span<const double> u,
                                     std::span<const double> phi, const InfConvolutionSearch& search = {});

struct InfConvolutionStats {
    std::atomic<std::size_t> evaluations{0};
    std::atomic<std::size_t> degraded{0};
};

// The regularized generator f^n as a Driver. Precision losses are counted in stats.
Driver inf_convolution_driver(const Driver& d, double n, const InfConvolutionSearch& search = {},
                              std::shared_ptr<InfConvolutionStats> stats = nullptr);

// min(max(f, -k), k)
Driver clamp_driver(const Driver& d, double k);

TerminalCondition clamp_terminal(const TerminalCondition& xi, double n);

// f(t, y, u) - f(t, 0, 0) + clamp(f(t, 0, 0), -n, n)
Driver shift_driver(const Driver& d, double n);

} // namespace mppbsde
