#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mppbsde/drivers.hpp"
#include "mppbsde/lattice.hpp"
#include "mppbsde/mpp.hpp"
#include "mppbsde/numerics.hpp"
#include "mppbsde/parallel.hpp"
#include "mppbsde/reflection.hpp"
#include "mppbsde/verification.hpp"

using namespace mppbsde;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* pattern, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, pattern, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const CompensatorSpec& canonical_spec() {
    static const CompensatorSpec spec = CompensatorSpec::homogeneous(1.0, 1.0);
    return spec;
}

TerminalCondition indicator(double scale = 1.0) {
    return {[scale](std::span<const int> n) { return n[0] >= 1 ? scale : 0.0; }, scale, "indicator"};
}

SolverOptions options(Scheme scheme = Scheme::explicit_euler) {
    SolverOptions o;
    o.n_max = 30;
    o.scheme = scheme;
    return o;
}

TimeGrid canonical_grid(std::size_t steps = 1000) {
    return TimeGrid::uniform(canonical_spec(), steps);
}

Outcome zero_driver_oracle() {
    const double exact = 1.0 - std::exp(-1.0);
    const auto t0 = std::chrono::steady_clock::now();
    const auto field = solve_backward(canonical_spec(), make_driver("zero"), indicator(), canonical_grid(), options());
    const double elapsed = seconds_since(t0);
    const double err = std::abs(field.y0() - exact);
    return {err < 1e-3 && elapsed < 5.0,
            fmt("zero driver: Y0 = %.7f, |Y0 - (1 - e^-1)| = %.2e (< 1e-3), solve %.3f s (< 5 s)", field.y0(), err,
                elapsed)};
}

Outcome entropic_oracle() {
    const double exact = std::log(std::exp(-1.0) + std::exp(1.0) - 1.0);
    const Driver d = make_driver("entropic:1");
    const auto field = solve_backward(canonical_spec(), d, indicator(), canonical_grid(), options());
    const double err = std::abs(field.y0() - exact);
    EnsembleSpec ens;
    ens.paths = 1000;
    ens.seed_offset = 1;
    ens.jobs = default_jobs();
    const auto res = forward_residual(field, canonical_spec(), d, indicator(), ens, 0.01);
    return {err < 2e-3 && res.mean_abs < 5e-3,
            fmt("entropic driver: Y0 = %.6f, |Y0 - ln(e^-1 + e - 1)| = %.2e (< 2e-3); forward residual mean|D| = %.2e "
                "over %zu paths (< 5e-3)",
                field.y0(), err, res.mean_abs, res.paths)};
}

Outcome comparison() {
    const Driver f = make_driver("entropic:1");
    const Driver f_up(
        "entropic:1+0.1",
        [f](double t, double y, std::span<const double> u, std::span<const double> phi) { return f(t, y, u, phi) + 0.1; },
        f.convexity(), f.growth());
    ComparisonOptions co;
    co.tol = 1e-6;
    co.max_gap = 0.1 * canonical_spec().A(1.0);
    co.solver = options();
    const auto r = check_comparison(canonical_spec(), {f, indicator()}, {f_up, indicator()}, canonical_grid(), co);
    const double min_gap = r.params.at("min_gap");
    const double max_gap = r.params.at("max_gap");
    const bool identical = r.params.at("bit_identical") == 1.0;
    return {r.pass && min_gap >= 0.0 && identical,
            fmt("comparison f' = f + 0.1: min(Y' - Y) = %.3e (>= 0), max(Y' - Y) = %.12f (<= 0.1 A(T) + 1e-6); "
                "rerun bit-identical: %s",
                min_gap, max_gap, identical ? "yes" : "no")};
}

Outcome apriori_bound() {
    const Driver ent = make_driver("entropic:1");
    const auto field =
        solve_backward(canonical_spec(), ent, indicator(), canonical_grid(), options(Scheme::exponential));
    const auto good = check_apriori_y(field, indicator(), ent.growth(), {1.0, 2.0}, 1e-8);

    const Driver linear = make_driver("lipschitz_linear:1,0");
    GrowthParams understated = linear.growth();
    understated.beta = 0.0;
    const auto fixture_field = solve_backward(canonical_spec(), linear, indicator(), canonical_grid(), options());
    const auto bad = check_apriori_y(fixture_field, indicator(), understated, {1.0, 2.0}, 1e-8);
    return {good.pass && !bad.pass,
            fmt("a priori exp bound, p in {1,2}, slack 1 + 1e-8: entropic worst relative excess %.2e -> %s; "
                "understated-beta fixture (f = y, beta declared 0) excess %.2e -> %s (must fail)",
                good.worst_margin, good.pass ? "pass" : "fail", bad.worst_margin, bad.pass ? "pass" : "fail")};
}

Outcome u_functionals_stable() {
    const Driver ent = make_driver("entropic:1");
    std::vector<ValueField> fields;
    for (std::size_t n : {1000u, 10000u}) {
        fields.push_back(
            solve_backward(canonical_spec(), ent, indicator(), canonical_grid(n), options(Scheme::exponential)));
    }
    UFunctionalPlan plan;
    plan.p_list = {1, 2};
    plan.q_list = {1, 2};
    const auto r = check_apriori_u(fields, plan, 0.05);
    std::string values;
    for (const auto& [key, curve] : r.curves) {
        values += fmt(" [%s: %.4g -> %.4g]", key.c_str(), curve[0], curve[1]);
    }
    return {r.pass, fmt("U functionals, p,q in {1,2}, N = 1e3 -> 1e4: max relative change %.2e (< 5%%);",
                        r.worst_margin) +
                        values};
}

Outcome regularization_monotone() {
    RegularizationOptions ro;
    ro.solver = options();
    const auto r = check_monotone_regularization(canonical_spec(), make_driver("entropic:1"), indicator(3.0),
                                                 {2, 4, 8, 16}, canonical_grid(), ro);
    const auto& gap = r.curves.at("gap");
    return {r.pass && gap.back() < gap.front(),
            fmt("inf-convolution f^n, n = 2,4,8,16 (terminal 3*1{n>=1}): worst decrease %.2e (tol %.0e); "
                "||y^n - y|| = %.3e, %.3e, %.3e, %.3e",
                std::max(0.0, r.worst_margin), r.tolerance, gap[0], gap[1], gap[2], gap[3])};
}

Outcome binding_reflection() {
    const double c = 1.0 - std::exp(-1.0);
    const LossFunction loss{"linear", [c](double, double y) { return y - c; }, 1.0, 1.0};
    const TimeGrid grid = canonical_grid();
    const auto sol = solve_reflected(canonical_spec(), make_driver("constant:-1"), loss, indicator(), grid);
    const LawTable laws = forward_law(canonical_spec(), grid, options());
    const auto sk = skorokhod_report(sol, loss, laws, 1e-8);
    double k_err = 0.0;
    for (std::size_t i = 0; i < sol.K.size(); ++i) {
        k_err = std::max(k_err, std::abs(sol.K[i] - grid.time(i)));
    }
    return {k_err < 1e-6 && sk.min_margin >= -1e-8 && std::abs(sk.flatness) < 1e-8,
            fmt("binding reflection f = -1, l = y - E[xi]: max|K(t_i) - t_i| = %.2e (< 1e-6), min margin = %.2e "
                "(>= -1e-8), flatness = %.2e (< 1e-8)",
                k_err, sk.min_margin, sk.flatness)};
}

Outcome operator_l() {
    const double p1 = 1.0 - std::exp(-1.0);
    const LossFunction linear{"linear", [](double, double y) { return y - 0.8; }, 1.0, 1.0};
    const DiscreteLaw eta{{0.0, 1.0}, {1.0 - p1, p1}};
    const double l = operator_L(linear, 0.0, eta, 1e-12);
    double worst = std::abs(l - (0.8 - p1));
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        DiscreteLaw law;
        double total = 0.0;
        for (int k = 0; k < 5; ++k) {
            law.values.push_back(-2.0 + 4.0 * uniform01(rng));
            law.probs.push_back(0.1 + uniform01(rng));
            total += law.probs.back();
        }
        for (double& p : law.probs) {
            p /= total;
        }
        double mean = 0.0;
        for (int k = 0; k < 5; ++k) {
            mean += law.probs[k] * law.values[k];
        }
        worst = std::max(worst, std::abs(operator_L(linear, 0.0, law, 1e-12) - std::max(0.0, 0.8 - mean)));
    }
    const auto lip = check_L_lipschitz(make_loss("sine:0,0.4"), 1000, 5, 1e-10);
    const auto violations = static_cast<int>(lip.params.at("violations"));
    return {worst <= 1e-10 && violations == 0,
            fmt("L_t: linear closed form max error %.2e (<= 1e-10), L(eta) = %.9f for E[eta] = 1 - e^-1; "
                "kappa-Lipschitz (kappa = 7/3) violations %d / 1000",
                worst, l, violations)};
}

Outcome picard() {
    const LossFunction loss{"linear", [](double, double y) { return y - 0.8; }, 1.0, 1.0};
    ReflectOptions ro;
    ro.picard_tol = 1e-8;
    ro.max_iter = 25;
    ro.solver = options();
    const auto sol =
        solve_reflected(canonical_spec(), make_driver("lipschitz_linear:0.1,0"), loss, indicator(), canonical_grid(), ro);
    bool decreasing = true;
    for (std::size_t k = 1; k < sol.picard_trace.size(); ++k) {
        decreasing = decreasing && sol.picard_trace[k] < sol.picard_trace[k - 1];
    }
    const double last = sol.picard_trace.back();
    return {decreasing && last < 1e-8 && sol.picard_trace.size() <= 25 && sol.horizon.guaranteed,
            fmt("Picard f = 0.1 y, kappa = 1: %zu iterations, strictly decreasing: %s, last distance %.2e (< 1e-8); "
                "h = %.6f, windows = %zu, guarantee flag: %s",
                sol.picard_trace.size(), decreasing ? "yes" : "no", last, sol.horizon.h, sol.horizon.windows,
                sol.horizon.guaranteed ? "set" : "unset")};
}

Outcome martingale_sanity() {
    const auto& spec = canonical_spec();
    const Driver ent = make_driver("entropic:1");
    const auto field = solve_backward(spec, ent, indicator(), canonical_grid(), options());
    const std::size_t paths = 10000;
    std::vector<PredictableField> integrands = {
        [](double, std::span<const int>, std::size_t) { return 1.0; },
        [](double t, std::span<const int>, std::size_t) { return t * t; },
        [](double t, std::span<const int> n, std::size_t) { return std::cos(3.0 * t) / (1.0 + n[0]); },
    };
    const auto samples = parallel_map(paths, default_jobs(), [&](std::size_t m) {
        const MppPath path = simulate_path(spec, 100000 + m);
        std::vector<double> out;
        const auto sol = field_path_solution(field, path);
        out.push_back(integral_q(spec, path, sol.u, 0.01, sol.breaks));
        for (const auto& h : integrands) {
            out.push_back(integral_q(spec, path, h, 0.01));
        }
        return out;
    });
    std::string detail;
    bool pass = true;
    const char* names[] = {"int int U dq", "H = 1", "H = t^2", "H = cos(3t)/(1 + N_t-)"};
    for (std::size_t k = 0; k < 4; ++k) {
        CompensatedSum sum;
        for (const auto& s : samples) {
            sum += s[k];
        }
        const double mean = sum.value() / static_cast<double>(paths);
        CompensatedSum var;
        for (const auto& s : samples) {
            var += (s[k] - mean) * (s[k] - mean);
        }
        const double se = std::sqrt(var.value() / static_cast<double>(paths - 1) / static_cast<double>(paths));
        const double z = mean / se;
        pass = pass && std::abs(z) < 4.0;
        detail += fmt("%s%s: mean %.2e, %.2f sigma", k == 0 ? "" : "; ", names[k], mean, z);
    }
    return {pass, fmt("martingale sanity over %zu paths: ", paths) + detail};
}

} // namespace

int main() {
    const std::vector<std::function<Outcome()>> criteria = {
        zero_driver_oracle, entropic_oracle, comparison,         apriori_bound, u_functionals_stable,
        regularization_monotone, binding_reflection, operator_l, picard,        martingale_sanity,
    };
    int failures = 0;
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        Outcome o;
        try {
            o = criteria[k]();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        failures += o.pass ? 0 : 1;
        std::printf("criterion %2zu: %s  %s\n", k + 1, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("acceptance: %zu/%zu passed in %.1f s\n", criteria.size() - failures, criteria.size(),
                seconds_since(t0));
    return failures == 0 ? 0 : 1;
}
