#include "mppbsde/drivers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include <boost/math/tools/minima.hpp>

#include "mppbsde/errors.hpp"
#include "mppbsde/numerics.hpp"

namespace mppbsde {

namespace {

constexpr double kOverflowArg = 700.0;

std::vector<double> parse_params(const std::string& text, const std::string& spec) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) {
                throw std::invalid_argument(item);
            }
        } catch (const std::exception&) {
            throw ValidationError("driver '" + spec + "': cannot parse parameter '" + item + "'");
        }
    }
    return out;
}

std::string format_sample(double t, double y, std::span<const double> u) {
    std::ostringstream os;
    os.precision(6);
    os << "t=" << t << " y=" << y << " u=(";
    for (std::size_t e = 0; e < u.size(); ++e) {
        os << (e ? "," : "") << u[e];
    }
    os << ")";
    return os.str();
}

// Worst case of L|x| - (e^x - 1 - x) over x for the one-mark entropic envelope.
double linear_vs_entropic_gap(double slope) {
    if (slope <= 0.0) {
        return 0.0;
    }
    return (slope + 1.0) * std::log1p(slope) - slope;
}

} // namespace

double weighted_norm(std::span<const double> u, std::span<const double> phi) {
    CompensatedSum acc;
    for (std::size_t e = 0; e < u.size(); ++e) {
        acc += phi[e] * u[e] * u[e];
    }
    return std::sqrt(std::max(0.0, acc.value()));
}

double j_lambda(std::span<const double> u, double lam, std::span<const double> phi) {
    if (!(lam > 0.0)) {
        throw ValidationError("j_lambda requires lambda > 0");
    }
    double max_arg = 0.0;
    for (std::size_t e = 0; e < u.size(); ++e) {
        if (phi[e] > 0.0) {
            max_arg = std::max(max_arg, lam * u[e]);
        }
    }
    if (max_arg > kOverflowArg) {
        return std::exp(log_j_lambda(u, lam, phi));
    }
    CompensatedSum acc;
    for (std::size_t e = 0; e < u.size(); ++e) {
        if (phi[e] > 0.0) {
            acc += phi[e] * exp_excess(lam * u[e]);
        }
    }
    return std::max(0.0, acc.value());
}

double log_j_lambda(std::span<const double> u, double lam, std::span<const double> phi) {
    if (!(lam > 0.0)) {
        throw ValidationError("j_lambda requires lambda > 0");
    }
    // Each term phi(e) * (e^x - 1 - x) = phi(e) * exp(x + log1p(-(1 + x) e^{-x})) for large x.
    std::vector<double> logs;
    std::vector<double> ones;
    for (std::size_t e = 0; e < u.size(); ++e) {
        if (!(phi[e] > 0.0)) {
            continue;
        }
        const double x = lam * u[e];
        double log_term;
        if (x > kOverflowArg) {
            log_term = x + std::log1p(-(1.0 + x) * std::exp(-x));
        } else {
            const double v = exp_excess(x);
            log_term = v > 0.0 ? std::log(v) : -std::numeric_limits<double>::infinity();
        }
        logs.push_back(std::log(phi[e]) + log_term);
        ones.push_back(1.0);
    }
    return log_sum_exp(logs, ones);
}

// --- GrowthParams -----------------------------------------------------------

void GrowthParams::validate() const {
    if (!(beta >= 0.0) || !std::isfinite(beta)) {
        throw ValidationError("growth: beta must be finite and >= 0");
    }
    if (!(lambda > 0.0) || !std::isfinite(lambda)) {
        throw ValidationError("growth: lambda must be finite and > 0");
    }
    if (!(c0 >= 0.0) || !std::isfinite(c0)) {
        throw ValidationError("growth: c0 must be finite and >= 0");
    }
    for (double a : alpha.values()) {
        if (!(a >= 0.0) || !std::isfinite(a)) {
            throw ValidationError("growth: alpha must be finite and >= 0");
        }
    }
}

double GrowthParams::weighted_alpha_integral(const CompensatorSpec& spec, double a, double b) const {
    if (!(b > a)) {
        return 0.0;
    }
    const auto& starts = alpha.starts();
    const auto& values = alpha.values();
    CompensatedSum acc;
    for (std::size_t j = 0; j < starts.size(); ++j) {
        const double lo = std::max(a, j == 0 ? a : starts[j]);
        const double hi = j + 1 < starts.size() ? std::min(b, starts[j + 1]) : b;
        if (!(hi > lo) || values[j] == 0.0) {
            continue;
        }
        const double a_lo = spec.A(lo);
        const double a_hi = spec.A(hi);
        if (beta > 0.0) {
            acc += values[j] * (std::exp(beta * a_hi) - std::exp(beta * a_lo)) / beta;
        } else {
            acc += values[j] * (a_hi - a_lo);
        }
    }
    return acc.value();
}

double GrowthParams::upper_envelope(double t, double y, std::span<const double> u,
                                    std::span<const double> phi) const {
    return j_lambda(u, lambda, phi) / lambda + alpha(t) + beta * std::abs(y);
}

double GrowthParams::lower_envelope(double t, double y, std::span<const double> u,
                                    std::span<const double> phi) const {
    UVector neg(u.begin(), u.end());
    for (double& v : neg) {
        v = -v;
    }
    return -j_lambda(neg, lambda, phi) / lambda - alpha(t) - beta * std::abs(y);
}

// --- Driver -----------------------------------------------------------------

Driver::Driver(std::string name, DriverFn eval, Convexity convexity, GrowthParams growth)
    : name_(std::move(name)), eval_(std::move(eval)), convexity_(convexity), growth_(std::move(growth)) {
    if (!eval_) {
        throw ValidationError("driver '" + name_ + "' has no evaluation function");
    }
    growth_.validate();
}

Driver Driver::with_growth(GrowthParams growth) const {
    return Driver(name_, eval_, convexity_, std::move(growth));
}

Driver Driver::renamed(std::string name) const {
    return Driver(std::move(name), eval_, convexity_, growth_);
}

Driver make_driver(const std::string& spec) {
    const auto colon = spec.find(':');
    const std::string kind = spec.substr(0, colon);
    const std::vector<double> params =
        colon == std::string::npos ? std::vector<double>{} : parse_params(spec.substr(colon + 1), spec);
    auto expect = [&](std::size_t n) {
        if (params.size() != n) {
            std::ostringstream msg;
            msg << "driver '" << spec << "' expects " << n << " parameter(s), got " << params.size();
            throw ValidationError(msg.str());
        }
    };

    if (kind == "zero") {
        expect(0);
        return Driver(spec, [](double, double, std::span<const double>, std::span<const double>) { return 0.0; },
                      Convexity::convex_in_u, GrowthParams{});
    }
    if (kind == "constant") {
        expect(1);
        const double a = params[0];
        GrowthParams g;
        g.alpha = StepFunction(std::abs(a));
        return Driver(spec, [a](double, double, std::span<const double>, std::span<const double>) { return a; },
                      Convexity::convex_in_u, g);
    }
    if (kind == "entropic" || kind == "neg_entropic") {
        expect(1);
        const double lam = params[0];
        if (!(lam > 0.0)) {
            throw ValidationError("driver '" + spec + "': lambda must be positive");
        }
        GrowthParams g;
        g.lambda = lam;
        if (kind == "entropic") {
            return Driver(
                spec,
                [lam](double, double, std::span<const double> u, std::span<const double> phi) {
                    return j_lambda(u, lam, phi) / lam;
                },
                Convexity::convex_in_u, g);
        }
        return Driver(
            spec,
            [lam](double, double, std::span<const double> u, std::span<const double> phi) {
                UVector neg(u.begin(), u.end());
                for (double& v : neg) {
                    v = -v;
                }
                return -j_lambda(neg, lam, phi) / lam;
            },
            Convexity::concave_in_u, g);
    }
    if (kind == "lipschitz_linear") {
        expect(2);
        const double beta = params[0];
        const double lip = params[1];
        if (lip < 0.0) {
            throw ValidationError("driver '" + spec + "': L must be >= 0");
        }
        GrowthParams g;
        g.beta = std::abs(beta);
        g.alpha = StepFunction(lip > 0.0 ? std::max(1.0, linear_vs_entropic_gap(lip)) : 0.0);
        return Driver(
            spec,
            [beta, lip](double, double y, std::span<const double> u, std::span<const double> phi) {
                return beta * y + (lip > 0.0 ? lip * weighted_norm(u, phi) : 0.0);
            },
            Convexity::convex_in_u, g);
    }
    if (kind == "affine_jump") {
        expect(2);
        const double a = params[0];
        const double b = params[1];
        if (!(b > -1.0)) {
            throw ValidationError("driver '" + spec + "': b must exceed -1");
        }
        GrowthParams g;
        g.alpha = StepFunction(std::abs(a) + linear_vs_entropic_gap(std::abs(b)));
        g.c0 = std::abs(b);
        return Driver(
            spec,
            [a, b](double, double, std::span<const double> u, std::span<const double> phi) {
                return a + b * compensated_dot(u, phi);
            },
            Convexity::convex_in_u, g);
    }
    throw ValidationError("unknown driver '" + spec + "'");
}

// --- structure verification -------------------------------------------------

bool StructureReport::all_pass() const {
    return std::all_of(verdicts.begin(), verdicts.end(), [](const auto& v) { return v.pass; });
}

const AssumptionVerdict& StructureReport::verdict(const std::string& assumption) const {
    for (const auto& v : verdicts) {
        if (v.assumption == assumption) {
            return v;
        }
    }
    throw std::out_of_range("no verdict for " + assumption);
}

StructureReport verify_structure(const Driver& d, const CompensatorSpec& spec, const SamplePlan& plan,
                                 double tol) {
    if (plan.samples == 0) {
        throw ValidationError("verify_structure: sample plan is empty");
    }
    const std::size_t k = spec.mark_count();
    const auto& growth = d.growth();
    std::mt19937_64 rng(plan.seed);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * uniform01(rng); };

    StructureReport report;
    report.tolerance = tol;
    for (const char* name : {"continuity", "lipschitz_y", "growth_envelope", "convexity", "linear_bound"}) {
        AssumptionVerdict v;
        v.assumption = name;
        report.verdicts.push_back(v);
    }
    auto record = [&](std::size_t idx, double margin, bool violated, const std::string& where) {
        auto& v = report.verdicts[idx];
        if (violated) {
            ++v.violations;
            v.pass = false;
        }
        if (margin > v.worst_margin || v.worst_sample.empty()) {
            if (margin > v.worst_margin) {
                v.worst_margin = margin;
            }
            v.worst_sample = where;
        }
    };

    UVector u(k), u2(k), mid(k), zero(k, 0.0), bumped(k);
    for (std::size_t s = 0; s < plan.samples; ++s) {
        const double t = uniform(0.0, spec.horizon());
        const auto phi = spec.phi_at(t);
        const double y = uniform(-plan.y_range, plan.y_range);
        const double y2 = uniform(-plan.y_range, plan.y_range);
        for (std::size_t e = 0; e < k; ++e) {
            u[e] = uniform(-plan.u_range, plan.u_range);
            u2[e] = uniform(-plan.u_range, plan.u_range);
        }
        const double theta = uniform(0.0, 1.0);
        const std::string where = format_sample(t, y, u);
        const double f = d(t, y, u, phi);

        // continuity: a 1e-9 perturbation must move f by a vanishing amount.
        {
            const double h = 1e-9;
            for (std::size_t e = 0; e < k; ++e) {
                bumped[e] = u[e] + h;
            }
            const double moved = std::abs(d(t, y + h, bumped, phi) - f);
            const double allowed = std::max(tol, 1e-6 * (1.0 + std::abs(f)));
            const bool bad = !std::isfinite(f) || !(moved <= allowed);
            record(0, std::isfinite(moved) ? moved - allowed : std::numeric_limits<double>::infinity(), bad,
                   where);
        }
        // Lipschitz in y
        {
            const double dy = std::abs(y - y2);
            const double df = std::abs(f - d(t, y2, u, phi));
            const bool bad = df > growth.beta * dy + tol;
            record(1, dy > 0.0 ? df / dy - growth.beta : 0.0, bad, where);
        }
        // exponential growth envelope
        {
            const double upper = growth.upper_envelope(t, y, u, phi);
            const double lower = growth.lower_envelope(t, y, u, phi);
            const double excess = std::max(f - upper, lower - f);
            record(2, excess, excess > tol, where);
        }
        // midpoint convexity / concavity in u
        {
            for (std::size_t e = 0; e < k; ++e) {
                mid[e] = theta * u[e] + (1.0 - theta) * u2[e];
            }
            const double chord = theta * f + (1.0 - theta) * d(t, y, u2, phi);
            const double at_mid = d(t, y, mid, phi);
            const double excess = d.convexity() == Convexity::convex_in_u ? at_mid - chord : chord - at_mid;
            record(3, excess, excess > tol, where);
        }
        // uniform linear bound
        {
            const double diff = d(t, 0.0, u, phi) - d(t, 0.0, zero, phi);
            const double bound = growth.c0 * weighted_norm(u, phi);
            const double excess = d.convexity() == Convexity::convex_in_u ? -bound - diff : diff - bound;
            record(4, excess, excess > tol, where);
        }
    }
    return report;
}

// --- inf-convolution ----------------------------------------------------------

namespace {

struct PenalizedObjective {
    const Driver& d;
    double n;
    double t;
    double y;
    std::span<const double> u;
    std::span<const double> phi;
    mutable UVector diff;

    double operator()(std::span<const double> r) const {
        diff.resize(r.size());
        for (std::size_t e = 0; e < r.size(); ++e) {
            diff[e] = u[e] - r[e];
        }
        return d(t, y, r, phi) + n * weighted_norm(diff, phi);
    }
};

// Minimizes s -> F(r + s dir) over [lo, hi]; updates r and returns the new value
// when it improves on current.
double line_search(const PenalizedObjective& obj, UVector& r, const UVector& dir, double lo, double hi,
                   double current, const InfConvolutionSearch& search) {
    if (!(hi > lo)) {
        return current;
    }
    UVector probe(r.size());
    auto along = [&](double s) {
        for (std::size_t e = 0; e < r.size(); ++e) {
            probe[e] = r[e] + s * dir[e];
        }
        return obj(probe);
    };
    std::uintmax_t iters = search.max_iter;
    const auto [s_best, f_best] =
        boost::math::tools::brent_find_minima(along, lo, hi, std::numeric_limits<double>::digits / 2, iters);
    if (f_best < current) {
        for (std::size_t e = 0; e < r.size(); ++e) {
            r[e] += s_best * dir[e];
        }
        return f_best;
    }
    return current;
}

// Largest interval [lo, hi] with r + s dir inside the box |r_e - u_e| <= halfwidth_e.
std::pair<double, double> box_interval(const UVector& r, const UVector& dir, std::span<const double> u,
                                       const UVector& halfwidth) {
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    for (std::size_t e = 0; e < r.size(); ++e) {
        if (dir[e] == 0.0) {
            continue;
        }
        const double a = (u[e] - halfwidth[e] - r[e]) / dir[e];
        const double b = (u[e] + halfwidth[e] - r[e]) / dir[e];
        lo = std::max(lo, std::min(a, b));
        hi = std::min(hi, std::max(a, b));
    }
    if (!std::isfinite(lo) || !std::isfinite(hi)) {
        return {0.0, 0.0};
    }
    return {std::min(lo, 0.0), std::max(hi, 0.0)};
}

} // namespace

InfConvolutionResult inf_convolution(const Driver& d, double n, double t, double y, std::span<const double> u,
                                     std::span<const double> phi, const InfConvolutionSearch& search) {
    if (!(n > 0.0)) {
        throw ValidationError("inf_convolution requires n > 0");
    }
    if (d.convexity() != Convexity::convex_in_u) {
        throw ValidationError("inf_convolution requires a driver convex in u");
    }
    const std::size_t k = u.size();
    PenalizedObjective obj{d, n, t, y, u, phi, {}};

    InfConvolutionResult result;
    result.minimizer.assign(u.begin(), u.end());
    result.value = d(t, y, u, phi);

    std::vector<std::size_t> active;
    double phi_min = 1.0;
    for (std::size_t e = 0; e < k; ++e) {
        if (phi[e] > 0.0) {
            active.push_back(e);
            phi_min = std::min(phi_min, phi[e]);
        }
    }
    if (active.empty()) {
        return result;
    }

    // Any r that beats r = u satisfies (n - C0) ||u - r||_t <= f(u) - f(0,0) + beta|y| + C0 ||u||_t.
    const auto& g = d.growth();
    UVector zero(k, 0.0);
    const double base = d(t, 0.0, zero, phi);
    double radius;
    if (n > g.c0) {
        radius = (result.value - base + g.beta * std::abs(y) + g.c0 * weighted_norm(u, phi)) / (n - g.c0);
        radius = std::max(radius, 0.0) + 1.0;
    } else {
        result.certified_box = false;
        radius = std::abs(result.value - base) / n + weighted_norm(u, phi) + 1.0;
    }
    UVector halfwidth(k, 0.0);
    for (std::size_t e : active) {
        halfwidth[e] = radius / std::sqrt(phi[e]);
    }

    if (active.size() == 1) {
        const std::size_t e = active.front();
        UVector r(u.begin(), u.end());
        UVector dir(k, 0.0);
        dir[e] = 1.0;
        const double best = line_search(obj, r, dir, -halfwidth[e], halfwidth[e], result.value, search);
        if (best < result.value) {
            result.value = best;
            result.minimizer = r;
        }
        result.iterations = 1;
        return result;
    }

    // Several active marks: coordinate sweeps plus gradient and momentum line searches,
    // started from r = u and from r = 0 (projected into the box).
    for (int start = 0; start < 2; ++start) {
        UVector r(u.begin(), u.end());
        if (start == 1) {
            for (std::size_t e : active) {
                r[e] = std::clamp(0.0, u[e] - halfwidth[e], u[e] + halfwidth[e]);
            }
        }
        double value = obj(r);
        bool converged = false;
        std::size_t iter = 0;
        for (; iter < search.max_iter; ++iter) {
            const double before = value;
            const UVector r_prev = r;
            for (std::size_t e : active) {
                UVector dir(k, 0.0);
                dir[e] = 1.0;
                const auto [lo, hi] = box_interval(r, dir, u, halfwidth);
                value = line_search(obj, r, dir, lo, hi, value, search);
            }
            // Scaled negative gradient of f escapes the kink of the norm at r = u.
            UVector grad(k, 0.0);
            const double h = 1e-7;
            UVector probe = r;
            const double f0 = d(t, y, r, phi);
            double gnorm = 0.0;
            for (std::size_t e : active) {
                probe[e] = r[e] + h;
                grad[e] = -(d(t, y, probe, phi) - f0) / h / phi[e];
                probe[e] = r[e];
                gnorm += grad[e] * grad[e];
            }
            if (gnorm > 0.0) {
                const auto [lo, hi] = box_interval(r, grad, u, halfwidth);
                value = line_search(obj, r, grad, lo, hi, value, search);
            }
            UVector toward(k, 0.0);
            UVector momentum(k, 0.0);
            for (std::size_t e : active) {
                toward[e] = u[e] - r[e];
                momentum[e] = r[e] - r_prev[e];
            }
            for (const UVector* dir : {&toward, &momentum}) {
                const auto [lo, hi] = box_interval(r, *dir, u, halfwidth);
                value = line_search(obj, r, *dir, lo, hi, value, search);
            }
            if (before - value <= search.tol * (1.0 + std::abs(value))) {
                converged = true;
                break;
            }
        }
        result.iterations += iter + 1;
        if (!converged) {
            result.converged = false;
        }
        if (value < result.value) {
            result.value = value;
            result.minimizer = r;
        }
    }
    return result;
}

Driver inf_convolution_driver(const Driver& d, double n, const InfConvolutionSearch& search,
                              std::shared_ptr<InfConvolutionStats> stats) {
    if (!(n > 0.0)) {
        throw ValidationError("inf_convolution_driver requires n > 0");
    }
    if (d.convexity() != Convexity::convex_in_u) {
        throw ValidationError("inf_convolution_driver requires a driver convex in u");
    }
    GrowthParams g = d.growth();
    // Regularized generators satisfy the envelope with (3 alpha, 3 beta).
    std::vector<double> tripled = g.alpha.values();
    for (double& a : tripled) {
        a *= 3.0;
    }
    g.alpha = StepFunction(g.alpha.starts(), tripled);
    g.beta *= 3.0;
    std::ostringstream name;
    name << d.name() << "^inf(" << n << ")";
    return Driver(
        name.str(),
        [d, n, search, stats](double t, double y, std::span<const double> u, std::span<const double> phi) {
            const auto r = inf_convolution(d, n, t, y, u, phi, search);
            if (stats) {
                stats->evaluations.fetch_add(1, std::memory_order_relaxed);
                if (!r.converged) {
                    stats->degraded.fetch_add(1, std::memory_order_relaxed);
                }
            }
            return r.value;
        },
        Convexity::convex_in_u, g);
}

Driver clamp_driver(const Driver& d, double k) {
    if (!(k > 0.0)) {
        throw ValidationError("clamp_driver requires k > 0");
    }
    std::ostringstream name;
    name << "clamp(" << d.name() << "," << k << ")";
    return Driver(
        name.str(),
        [d, k](double t, double y, std::span<const double> u, std::span<const double> phi) {
            return std::clamp(d(t, y, u, phi), -k, k);
        },
        d.convexity(), d.growth());
}

TerminalCondition clamp_terminal(const TerminalCondition& xi, double n) {
    if (!(n > 0.0)) {
        throw ValidationError("clamp_terminal requires n > 0");
    }
    TerminalCondition out;
    out.g = [g = xi.g, n](std::span<const int> counts) { return std::clamp(g(counts), -n, n); };
    out.bound = xi.bound ? std::min(*xi.bound, n) : n;
    out.description = "clamp(" + xi.description + "," + std::to_string(n) + ")";
    return out;
}

Driver shift_driver(const Driver& d, double n) {
    if (!(n > 0.0)) {
        throw ValidationError("shift_driver requires n > 0");
    }
    GrowthParams g = d.growth();
    std::vector<double> doubled = g.alpha.values();
    for (double& a : doubled) {
        a *= 2.0;
    }
    g.alpha = StepFunction(g.alpha.starts(), doubled);
    std::ostringstream name;
    name << "shift(" << d.name() << "," << n << ")";
    return Driver(
        name.str(),
        [d, n](double t, double y, std::span<const double> u, std::span<const double> phi) {
            const UVector zero(u.size(), 0.0);
            const double origin = d(t, 0.0, zero, phi);
            return d(t, y, u, phi) - origin + std::clamp(origin, -n, n);
        },
        d.convexity(), g);
}

} // namespace mppbsde
