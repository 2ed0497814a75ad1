#include "mppbsde/verification.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include "mppbsde/errors.hpp"
#include "mppbsde/numerics.hpp"
#include "mppbsde/parallel.hpp"

namespace mppbsde {

void CheckReport::observe(double margin, std::optional<std::size_t> at_layer, std::optional<std::size_t> at_state) {
    if (std::isnan(margin)) {
        margin = std::numeric_limits<double>::infinity();
    }
    if (margin > worst_margin) {
        worst_margin = margin;
        layer = at_layer;
        state = at_state;
    }
}

void CheckReport::finish() {
    pass = pass && worst_margin <= tolerance;
}

std::vector<double> log_terminal_moments(const LatticeModel& model, const TerminalCondition& xi, double c) {
    const std::size_t steps = model.steps();
    const std::size_t states = model.states();
    std::vector<double> out((steps + 1) * states);
    for (std::size_t s = 0; s < states; ++s) {
        out[steps * states + s] = c * std::abs(xi(model.lattice().counts(s)));
    }
    for (std::size_t i = steps; i-- > 0;) {
        const std::span<const double> next(out.data() + (i + 1) * states, states);
        for (std::size_t s = 0; s < states; ++s) {
            out[i * states + s] = model.log_expect(i, s, next);
        }
    }
    return out;
}

XiBound xi_bound(double p, const GrowthParams& growth, const LatticeModel& model, const TerminalCondition& xi) {
    if (!(p > 0.0)) {
        throw ValidationError("xi_bound needs p > 0");
    }
    growth.validate();
    const auto& spec = model.spec();
    const double lam = growth.lambda;
    const double c = p * lam * std::exp(growth.beta * spec.A(spec.horizon()));
    const auto moments = log_terminal_moments(model, xi, c);
    XiBound out;
    out.p = p;
    out.log_value = moments[0] + p * lam * growth.weighted_alpha_integral(spec, 0.0, spec.horizon());
    out.value = std::exp(out.log_value);
    return out;
}

CheckReport check_apriori_y(const ValueField& field, const TerminalCondition& xi, const GrowthParams& growth,
                            const std::vector<double>& p_list, double tol) {
    growth.validate();
    if (p_list.empty()) {
        throw ValidationError("check_apriori_y needs at least one p");
    }
    const LatticeModel& model = *field.model;
    const auto& spec = model.spec();
    const auto& grid = model.grid();
    const std::size_t states = model.states();
    const double lam = growth.lambda;
    CheckReport report;
    report.name = "apriori_y";
    report.tolerance = tol;
    report.params["beta"] = growth.beta;
    report.params["lambda"] = lam;
    for (std::size_t k = 0; k < p_list.size(); ++k) {
        const double p = p_list[k];
        report.params["p" + std::to_string(k)] = p;
        const double c = p * lam * std::exp(growth.beta * spec.A(spec.horizon()));
        const auto moments = log_terminal_moments(model, xi, c);
        std::vector<double> worst_per_layer(grid.steps() + 1, -std::numeric_limits<double>::infinity());
        for (std::size_t i = 0; i <= grid.steps(); ++i) {
            const double drift = p * lam * growth.weighted_alpha_integral(spec, grid.time(i), spec.horizon());
            for (std::size_t s = 0; s < states; ++s) {
                const double lhs = p * lam * std::abs(field.y_at(i, s));
                const double rhs = moments[i * states + s] + drift;
                const double margin = std::expm1(lhs - rhs);
                worst_per_layer[i] = std::max(worst_per_layer[i], margin);
                report.observe(margin, i, s);
            }
        }
        std::ostringstream key;
        key << "worst_margin_p" << p;
        report.curves[key.str()] = std::move(worst_per_layer);
    }
    report.finish();
    return report;
}

CheckReport check_submartingale(const ValueField& field, const GrowthParams& growth, double p, double tol) {
    growth.validate();
    const LatticeModel& model = *field.model;
    const auto& spec = model.spec();
    const auto& grid = model.grid();
    const std::size_t steps = grid.steps();
    const std::size_t states = model.states();
    const double lam = growth.lambda;
    std::vector<double> log_v((steps + 1) * states);
    for (std::size_t i = 0; i <= steps; ++i) {
        const double drift = lam * growth.weighted_alpha_integral(spec, 0.0, grid.time(i));
        const double scale = std::exp(growth.beta * grid.A(i)) * lam;
        for (std::size_t s = 0; s < states; ++s) {
            log_v[i * states + s] = p * (scale * std::abs(field.y_at(i, s)) + drift);
        }
    }
    CheckReport report;
    report.name = "submartingale";
    report.tolerance = tol;
    report.params["p"] = p;
    report.params["beta"] = growth.beta;
    for (std::size_t i = 0; i < steps; ++i) {
        const std::span<const double> next(log_v.data() + (i + 1) * states, states);
        for (std::size_t s = 0; s < states; ++s) {
            const double ahead = model.log_expect(i, s, next);
            report.observe(-std::expm1(ahead - log_v[i * states + s]), i, s);
        }
    }
    report.finish();
    return report;
}

namespace {

// Per-node increments c(i, s) of a left-endpoint additive functional of U.
template <class Weight>
std::vector<double> node_increments(const ValueField& field, Weight weight) {
    const LatticeModel& model = *field.model;
    const std::size_t steps = model.steps();
    const std::size_t states = model.states();
    const std::size_t marks = model.marks();
    std::vector<double> c(steps * states, 0.0);
    for (std::size_t i = 0; i < steps; ++i) {
        const auto phi = model.phi(i);
        const double da = model.grid().dA(i);
        for (std::size_t s = 0; s < states; ++s) {
            const auto u = field.u_at(i, s);
            CompensatedSum acc;
            for (std::size_t e = 0; e < marks; ++e) {
                acc += phi[e] * weight(u[e]);
            }
            c[i * states + s] = da * acc.value();
        }
    }
    return c;
}

// First and second moments of sum_i c(i, N_{t_i}) from the root.
std::pair<double, double> additive_moments(const LatticeModel& model, const std::vector<double>& c) {
    const std::size_t steps = model.steps();
    const std::size_t states = model.states();
    std::vector<double> m1(states, 0.0);
    std::vector<double> m2(states, 0.0);
    std::vector<double> n1(states);
    std::vector<double> n2(states);
    for (std::size_t i = steps; i-- > 0;) {
        for (std::size_t s = 0; s < states; ++s) {
            const double ci = c[i * states + s];
            const double e1 = model.expect(i, s, m1);
            const double e2 = model.expect(i, s, m2);
            n1[s] = ci + e1;
            n2[s] = ci * ci + 2.0 * ci * e1 + e2;
        }
        m1.swap(n1);
        m2.swap(n2);
    }
    return {m1[0], m2[0]};
}

// E[(sum_i c(i, N_{t_i}))^{power}] by Monte Carlo over simulated paths.
double additive_power_mc(const LatticeModel& model, const std::vector<double>& c, double power, std::size_t paths,
                         std::uint64_t seed) {
    const auto& grid = model.grid();
    const std::size_t steps = grid.steps();
    const std::size_t states = model.states();
    const std::size_t marks = model.marks();
    CompensatedSum acc;
    std::vector<int> counts(marks);
    for (std::size_t m = 0; m < paths; ++m) {
        const MppPath path = simulate_path(model.spec(), seed + m);
        std::fill(counts.begin(), counts.end(), 0);
        std::size_t next_event = 0;
        CompensatedSum x;
        for (std::size_t i = 0; i < steps; ++i) {
            while (next_event < path.events.size() && path.events[next_event].time <= grid.time(i)) {
                ++counts[path.events[next_event].mark];
                ++next_event;
            }
            const auto s = model.lattice().index_of(counts);
            if (!s) {
                throw NumericalError("simulated path leaves the lattice");
            }
            x += c[i * states + *s];
        }
        acc += std::pow(std::max(0.0, x.value()), power);
    }
    return acc.value() / static_cast<double>(paths);
}

std::string key_of(int p, std::optional<int> q = std::nullopt) {
    std::ostringstream k;
    k << "p=" << p;
    if (q) {
        k << ",q=" << *q;
    }
    return k.str();
}

} // namespace

UFunctionals u_functionals(const ValueField& field, const UFunctionalPlan& plan) {
    const LatticeModel& model = *field.model;
    UFunctionals out;
    out.grid_steps = model.steps();
    const auto quad = node_increments(field, [](double u) { return u * u; });
    const auto quad_moments = additive_moments(model, quad);
    for (int p : plan.p_list) {
        if (p < 1) {
            throw ValidationError("U functionals need p >= 1");
        }
        double value;
        if (p == 2) {
            value = quad_moments.first;
        } else if (p == 4) {
            value = quad_moments.second;
        } else {
            value = additive_power_mc(model, quad, 0.5 * p, plan.mc_paths, plan.seed);
        }
        out.quadratic[key_of(p)] = value;
    }
    for (int q : plan.q_list) {
        const double scale = q * plan.lambda;
        const auto expo = node_increments(field, [scale](double u) {
            const double v = std::expm1(scale * std::abs(u));
            return v * v;
        });
        const auto moments = additive_moments(model, expo);
        for (int p : plan.p_list) {
            double value;
            if (p == 1) {
                value = moments.first;
            } else if (p == 2) {
                value = moments.second;
            } else {
                value = additive_power_mc(model, expo, p, plan.mc_paths, plan.seed);
            }
            out.exponential[key_of(p, q)] = value;
        }
    }
    return out;
}

CheckReport check_apriori_u(const std::vector<ValueField>& refinements, const UFunctionalPlan& plan,
                            double rel_tol) {
    if (refinements.empty()) {
        throw ValidationError("check_apriori_u needs at least one field");
    }
    CheckReport report;
    report.name = "apriori_u";
    report.tolerance = rel_tol;
    std::vector<UFunctionals> all;
    for (const auto& f : refinements) {
        all.push_back(u_functionals(f, plan));
    }
    auto visit = [&](const std::string& family, auto member) {
        for (const auto& [key, last] : all.back().*member) {
            std::vector<double> curve;
            for (const auto& fn : all) {
                curve.push_back((fn.*member).at(key));
            }
            if (!std::isfinite(last)) {
                report.pass = false;
                report.note += family + " " + key + " is not finite; ";
                report.observe(std::numeric_limits<double>::infinity());
            } else if (all.size() >= 2) {
                const double prev = curve[curve.size() - 2];
                const double scale = std::max(std::abs(last), std::abs(prev));
                report.observe(scale == 0.0 ? 0.0 : std::abs(last - prev) / scale);
            } else {
                report.observe(0.0);
            }
            report.curves[family + " " + key] = std::move(curve);
        }
    };
    visit("quadratic", &UFunctionals::quadratic);
    visit("exponential", &UFunctionals::exponential);
    for (std::size_t k = 0; k < all.size(); ++k) {
        report.params["grid" + std::to_string(k)] = static_cast<double>(all[k].grid_steps);
    }
    report.finish();
    return report;
}

CheckReport check_comparison(const CompensatorSpec& spec, const ComparisonCase& lower, const ComparisonCase& upper,
                             const TimeGrid& grid, const ComparisonOptions& opts) {
    CheckReport report;
    report.name = "comparison";
    report.tolerance = opts.tol;
    const auto model = std::make_shared<const LatticeModel>(spec, grid, opts.solver);
    const std::size_t marks = spec.mark_count();

    std::mt19937_64 rng(opts.hypothesis.seed);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * uniform01(rng); };
    double hypothesis_excess = 0.0;
    UVector u(marks);
    for (std::size_t k = 0; k < opts.hypothesis.samples; ++k) {
        const double t = uniform(0.0, spec.horizon());
        const double y = uniform(-opts.hypothesis.y_range, opts.hypothesis.y_range);
        for (double& v : u) {
            v = uniform(-opts.hypothesis.u_range, opts.hypothesis.u_range);
        }
        const auto phi = spec.phi_at(t);
        hypothesis_excess = std::max(hypothesis_excess, lower.driver(t, y, u, phi) - upper.driver(t, y, u, phi));
    }
    for (std::size_t s = 0; s < model->states(); ++s) {
        const auto n = model->lattice().counts(s);
        hypothesis_excess = std::max(hypothesis_excess, lower.xi(n) - upper.xi(n));
    }
    report.params["hypothesis_excess"] = hypothesis_excess;
    if (hypothesis_excess > opts.tol) {
        report.pass = false;
        report.note = "hypothesis unmet";
        return report;
    }

    const ValueField y = solve_backward(model, lower.driver, lower.xi, opts.solver);
    const ValueField y_upper = solve_backward(model, upper.driver, upper.xi, opts.solver);
    const ValueField again = solve_backward(model, lower.driver, lower.xi, opts.solver);
    const bool identical = again.y.size() == y.y.size() &&
                           std::memcmp(again.y.data(), y.y.data(), y.y.size() * sizeof(double)) == 0 &&
                           std::memcmp(again.u.data(), y.u.data(), y.u.size() * sizeof(double)) == 0;
    report.params["bit_identical"] = identical ? 1.0 : 0.0;
    if (!identical) {
        report.pass = false;
        report.note = "rerun differs";
    }
    const std::size_t states = model->states();
    double min_gap = std::numeric_limits<double>::infinity();
    double max_gap = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i <= model->steps(); ++i) {
        for (std::size_t s = 0; s < states; ++s) {
            const double gap = y_upper.y_at(i, s) - y.y_at(i, s);
            min_gap = std::min(min_gap, gap);
            max_gap = std::max(max_gap, gap);
            report.observe(-gap, i, s);
            if (opts.max_gap) {
                report.observe(gap - *opts.max_gap, i, s);
            }
        }
    }
    report.params["min_gap"] = min_gap;
    report.params["max_gap"] = max_gap;
    report.finish();
    return report;
}

CheckReport check_monotone_regularization(const CompensatorSpec& spec, const Driver& d, const TerminalCondition& xi,
                                          const std::vector<double>& n_list, const TimeGrid& grid,
                                          const RegularizationOptions& opts) {
    if (n_list.empty()) {
        throw ValidationError("check_monotone_regularization needs a nonempty n_list");
    }
    for (std::size_t k = 0; k < n_list.size(); ++k) {
        if (k > 0 && !(n_list[k] > n_list[k - 1])) {
            throw ValidationError("n_list must be increasing");
        }
    }
    if (!(n_list.front() > d.growth().c0)) {
        throw ValidationError("n_list must start above C0");
    }
    CheckReport report;
    report.name = "monotone_regularization";
    report.tolerance = opts.tol;
    const auto model = std::make_shared<const LatticeModel>(spec, grid, opts.solver);
    const ValueField exact = solve_backward(model, d, xi, opts.solver);
    auto stats = std::make_shared<InfConvolutionStats>();
    std::vector<ValueField> fields;
    std::vector<double> gaps;
    for (double n : n_list) {
        fields.push_back(solve_backward(model, inf_convolution_driver(d, n, opts.search, stats), xi, opts.solver));
        double gap = 0.0;
        for (std::size_t k = 0; k < exact.y.size(); ++k) {
            gap = std::max(gap, std::abs(fields.back().y[k] - exact.y[k]));
        }
        gaps.push_back(gap);
    }
    const std::size_t states = model->states();
    for (std::size_t k = 1; k < fields.size(); ++k) {
        for (std::size_t i = 0; i <= model->steps(); ++i) {
            for (std::size_t s = 0; s < states; ++s) {
                report.observe(fields[k - 1].y_at(i, s) - fields[k].y_at(i, s), i, s);
            }
        }
        report.observe(gaps[k] - gaps[k - 1]);
    }
    if (gaps.size() >= 2 && !(gaps.back() < gaps.front())) {
        report.pass = false;
        report.note = "gap to the unregularized solution does not shrink";
    }
    if (fields.size() == 1) {
        report.observe(0.0);
    }
    report.curves["n"] = n_list;
    report.curves["gap"] = gaps;
    report.params["degraded_evaluations"] = static_cast<double>(stats->degraded.load());
    report.params["evaluations"] = static_cast<double>(stats->evaluations.load());
    report.finish();
    return report;
}

CheckReport check_terminal_truncation(const CompensatorSpec& spec, const Driver& d, const TerminalCondition& xi,
                                      const std::vector<double>& n_list, const TimeGrid& grid,
                                      const SolverOptions& solver) {
    if (n_list.empty()) {
        throw ValidationError("check_terminal_truncation needs a nonempty n_list");
    }
    CheckReport report;
    report.name = "terminal_truncation";
    report.tolerance = 1e-12;
    const auto model = std::make_shared<const LatticeModel>(spec, grid, solver);
    const double y0 = solve_backward(model, d, xi, solver).y0();
    std::vector<double> gaps;
    for (double n : n_list) {
        gaps.push_back(std::abs(solve_backward(model, d, clamp_terminal(xi, n), solver).y0() - y0));
    }
    report.observe(0.0);
    for (std::size_t k = 1; k < gaps.size(); ++k) {
        report.observe(gaps[k] - gaps[k - 1]);
    }
    if (gaps.size() >= 2 && !(gaps.back() < gaps.front() || gaps.back() <= report.tolerance)) {
        report.pass = false;
        report.note = "truncation gap does not shrink";
    }
    report.curves["n"] = n_list;
    report.curves["gap"] = gaps;
    report.finish();
    return report;
}

CheckReport check_L_lipschitz(const LossFunction& loss, std::size_t trials, std::uint64_t seed, double bisection_tol) {
    CheckReport report;
    report.name = "L_lipschitz";
    report.tolerance = 0.0;
    report.params["kappa"] = loss.kappa();
    report.params["trials"] = static_cast<double>(trials);
    std::mt19937_64 rng(seed);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * uniform01(rng); };
    std::size_t violations = 0;
    for (std::size_t k = 0; k < trials; ++k) {
        const std::size_t support = 1 + static_cast<std::size_t>(uniform01(rng) * 8.0);
        DiscreteLaw a;
        DiscreteLaw b;
        double total = 0.0;
        for (std::size_t j = 0; j < support; ++j) {
            const double w = uniform(0.05, 1.0);
            a.probs.push_back(w);
            total += w;
            a.values.push_back(uniform(-3.0, 3.0));
            b.values.push_back(a.values.back() + uniform(-1.0, 1.0));
        }
        for (double& w : a.probs) {
            w /= total;
        }
        b.probs = a.probs;
        const double t = uniform(0.0, 1.0);
        CompensatedSum distance;
        for (std::size_t j = 0; j < support; ++j) {
            distance += a.probs[j] * std::abs(a.values[j] - b.values[j]);
        }
        const double la = operator_L(loss, t, a, bisection_tol);
        const double lb = operator_L(loss, t, b, bisection_tol);
        const double margin = std::abs(la - lb) - loss.kappa() * distance.value() - 2.0 * bisection_tol;
        if (margin > 0.0) {
            ++violations;
        }
        report.observe(margin);
    }
    report.params["violations"] = static_cast<double>(violations);
    report.finish();
    return report;
}

std::vector<SuiteResult> run_suite(const std::vector<SuiteEntry>& entries, std::size_t jobs) {
    auto results = parallel_map(entries.size(), jobs, [&](std::size_t k) {
        SuiteResult r;
        r.expect_fail = entries[k].expect_fail;
        try {
            r.report = entries[k].run();
        } catch (const std::exception& e) {
            r.report.pass = false;
            r.report.note = std::string("error: ") + e.what();
        }
        r.report.name = entries[k].name;
        return r;
    });
    std::stable_sort(results.begin(), results.end(),
                     [](const SuiteResult& a, const SuiteResult& b) { return a.report.name < b.report.name; });
    return results;
}

} // namespace mppbsde
