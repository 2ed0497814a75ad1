#include "mppbsde/reflection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "mppbsde/errors.hpp"
#include "mppbsde/numerics.hpp"

namespace mppbsde {

namespace {

std::vector<double> loss_params(const std::string& spec, std::size_t expected) {
    const auto colon = spec.find(':');
    std::vector<double> out;
    if (colon != std::string::npos) {
        std::stringstream ss(spec.substr(colon + 1));
        std::string item;
        while (std::getline(ss, item, ',')) {
            try {
                std::size_t used = 0;
                out.push_back(std::stod(item, &used));
                if (used != item.size()) {
                    throw ValidationError("loss '" + spec + "': bad parameter '" + item + "'");
                }
            } catch (const std::logic_error&) {
                throw ValidationError("loss '" + spec + "': bad parameter '" + item + "'");
            }
        }
    }
    if (out.size() != expected) {
        std::ostringstream msg;
        msg << "loss '" << spec << "' expects " << expected << " parameter(s)";
        throw ValidationError(msg.str());
    }
    return out;
}

} // namespace

LossFunction make_loss(const std::string& spec) {
    const std::string kind = spec.substr(0, spec.find(':'));
    if (kind == "linear") {
        const double c = loss_params(spec, 1)[0];
        return {spec, [c](double, double y) { return y - c; }, 1.0, 1.0};
    }
    if (kind == "sine") {
        const auto p = loss_params(spec, 2);
        const double c = p[0];
        const double a = p[1];
        if (!(a >= 0.0 && a < 1.0)) {
            throw ValidationError("loss 'sine' needs 0 <= a < 1");
        }
        return {spec, [c, a](double, double y) { return y - c + a * std::sin(y); }, 1.0 - a, 1.0 + a};
    }
    throw ValidationError("unknown loss '" + spec + "'");
}

LossReport validate_loss(const LossFunction& loss, const LossSamplePlan& plan, double tol) {
    if (plan.samples == 0) {
        throw ValidationError("validate_loss needs at least one sample");
    }
    if (!(loss.kappa_lower > 0.0) || loss.kappa_upper < loss.kappa_lower) {
        throw ValidationError("loss needs 0 < kappa_lower <= kappa_upper");
    }
    std::mt19937_64 rng(plan.seed);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * uniform01(rng); };
    LossReport report;
    report.samples = plan.samples;
    report.tolerance = tol;
    double origin_scale = 0.0;
    for (std::size_t k = 0; k <= 16; ++k) {
        origin_scale = std::max(origin_scale, std::abs(loss(plan.horizon * static_cast<double>(k) / 16.0, 0.0)));
    }
    const double growth_c = std::max(loss.kappa_upper, origin_scale);
    auto note = [&](double margin, const std::string& where) {
        if (margin > report.worst_margin) {
            report.worst_margin = margin;
            report.worst_sample = where;
        }
    };
    for (std::size_t k = 0; k < plan.samples; ++k) {
        const double t = uniform(0.0, plan.horizon);
        // Half of the pairs are close together to probe local slopes.
        const double y1 = uniform(-plan.y_range, plan.y_range);
        const double y2 = (k % 2 == 0) ? uniform(-plan.y_range, plan.y_range) : y1 + uniform(-1e-3, 1e-3);
        if (y1 == y2) {
            continue;
        }
        const double lo = std::min(y1, y2);
        const double hi = std::max(y1, y2);
        const double l_lo = loss(t, lo);
        const double l_hi = loss(t, hi);
        std::ostringstream where;
        where << "t=" << t << " y1=" << lo << " y2=" << hi;
        if (!(l_hi > l_lo)) {
            ++report.monotonicity_violations;
            note(l_lo - l_hi + tol, where.str());
        }
        const double dy = hi - lo;
        const double dl = std::abs(l_hi - l_lo);
        const double below = loss.kappa_lower * dy - dl;
        const double above = dl - loss.kappa_upper * dy;
        const double excess = std::max(below, above) / dy;
        if (excess > tol) {
            ++report.lipschitz_violations;
        }
        note(excess, where.str());
        const double growth = std::abs(loss(t, y1)) - growth_c * (1.0 + std::abs(y1));
        if (growth > tol) {
            ++report.growth_violations;
        }
    }
    report.pass = report.monotonicity_violations == 0 && report.lipschitz_violations == 0 &&
                  report.growth_violations == 0;
    return report;
}

void DiscreteLaw::validate(double tol) const {
    if (values.empty() || values.size() != probs.size()) {
        throw ValidationError("discrete law needs matching nonempty values and probabilities");
    }
    CompensatedSum mass;
    for (double p : probs) {
        if (!(p >= 0.0) || !std::isfinite(p)) {
            throw ValidationError("discrete law has a negative or non-finite probability");
        }
        mass += p;
    }
    if (std::abs(mass.value() - 1.0) > tol) {
        std::ostringstream msg;
        msg << "discrete law masses sum to " << mass.value() << ", expected 1";
        throw ValidationError(msg.str());
    }
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw ValidationError("discrete law has a non-finite value");
        }
    }
}

double DiscreteLaw::mean() const {
    return compensated_dot(values, probs);
}

DiscreteLaw layer_law(const std::vector<double>& y, const LawTable& laws, std::size_t layer) {
    const std::size_t states = laws.model->states();
    DiscreteLaw law;
    const auto mass = laws.layer(layer);
    for (std::size_t s = 0; s < states; ++s) {
        if (mass[s] > 0.0) {
            law.values.push_back(y[layer * states + s]);
            law.probs.push_back(mass[s]);
        }
    }
    return law;
}

double expected_loss(const LossFunction& loss, double t, const DiscreteLaw& law, double x) {
    CompensatedSum acc;
    for (std::size_t k = 0; k < law.values.size(); ++k) {
        acc += law.probs[k] * loss(t, x + law.values[k]);
    }
    return acc.value();
}

double operator_L(const LossFunction& loss, double t, const DiscreteLaw& law, double tol) {
    law.validate();
    if (!(tol > 0.0)) {
        throw ValidationError("operator_L needs a positive tolerance");
    }
    const double at_zero = expected_loss(loss, t, law);
    if (at_zero >= 0.0) {
        return 0.0;
    }
    double lo = 0.0;
    double hi = -at_zero / loss.kappa_lower;
    // Rounding can leave the bracket end marginally infeasible.
    for (int k = 0; k < 60 && expected_loss(loss, t, law, hi) < 0.0; ++k) {
        lo = hi;
        hi = hi * 2.0 + tol;
    }
    for (int k = 0; k < 100 && hi - lo > tol; ++k) {
        const double mid = 0.5 * (lo + hi);
        if (expected_loss(loss, t, law, mid) >= 0.0) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    return hi;
}

PicardHorizon picard_horizon(double beta, double kappa, const CompensatorSpec& spec) {
    if (!(beta >= 0.0)) {
        throw ValidationError("picard_horizon needs beta >= 0");
    }
    if (!(kappa >= 1.0)) {
        throw ValidationError("picard_horizon needs kappa >= 1");
    }
    const double T = spec.horizon();
    PicardHorizon out;
    const double factor = (32.0 + 64.0 * kappa) * beta;
    auto ok = [&](double h) { return factor * spec.modulus(h) < 1.0; };
    if (beta == 0.0 || ok(T)) {
        out.h = T;
    } else {
        double lo = 0.0;
        double hi = T;
        for (int k = 0; k < 2000; ++k) {
            const double mid = 0.5 * (lo + hi);
            if (mid <= lo || mid >= hi) {
                break;
            }
            (ok(mid) ? lo : hi) = mid;
        }
        out.h = lo;
    }
    if (out.h > 0.0) {
        const double windows = std::ceil(T / out.h);
        out.windows = windows > 1e18 ? std::numeric_limits<std::size_t>::max() : static_cast<std::size_t>(windows);
    } else {
        out.windows = std::numeric_limits<std::size_t>::max();
    }
    out.guaranteed = out.h > 0.0 && out.windows <= 1000000;
    return out;
}

PicardHorizon picard_horizon(double beta, double kappa, const CompensatorSpec& spec, const TimeGrid& grid) {
    PicardHorizon out = picard_horizon(beta, kappa, spec);
    const auto& times = grid.times();
    const auto it = std::upper_bound(times.begin(), times.end(), out.h);
    out.h_grid = *(it - 1);
    double max_step = 0.0;
    for (std::size_t i = 0; i < grid.steps(); ++i) {
        max_step = std::max(max_step, grid.time(i + 1) - grid.time(i));
    }
    out.guaranteed = out.guaranteed && out.h >= max_step;
    return out;
}

double flatness_residual(std::span<const double> margins, std::span<const double> K) {
    if (margins.size() != K.size()) {
        throw ValidationError("flatness_residual: margins and K differ in length");
    }
    CompensatedSum acc;
    for (std::size_t i = 1; i < K.size(); ++i) {
        acc += margins[i - 1] * (K[i] - K[i - 1]);
    }
    return acc.value();
}

ReflectedSolution running_sup_reflect(const ValueField& y_field, const LawTable& laws, const LossFunction& loss,
                                      double tol) {
    if (y_field.model.get() != laws.model.get() &&
        y_field.grid().times() != laws.model->grid().times()) {
        throw ValidationError("value field and law table use different grids");
    }
    const std::size_t layers = y_field.grid().steps() + 1;
    const std::size_t states = y_field.model->states();
    ReflectedSolution sol;
    sol.y_field = y_field;
    sol.L.resize(layers);
    for (std::size_t i = 0; i < layers; ++i) {
        sol.L[i] = operator_L(loss, y_field.grid().time(i), layer_law(y_field.y, laws, i), tol);
    }
    sol.R.resize(layers);
    double running = 0.0;
    for (std::size_t i = layers; i-- > 0;) {
        running = std::max(running, sol.L[i]);
        sol.R[i] = running;
    }
    sol.K.resize(layers);
    for (std::size_t i = 0; i < layers; ++i) {
        sol.K[i] = sol.R[0] - sol.R[i];
    }
    sol.Y_field = y_field;
    for (std::size_t i = 0; i < layers; ++i) {
        for (std::size_t s = 0; s < states; ++s) {
            sol.Y_field.y[i * states + s] += sol.R[i];
        }
    }
    sol.margins.resize(layers);
    for (std::size_t i = 0; i < layers; ++i) {
        sol.margins[i] = expected_loss(loss, y_field.grid().time(i), layer_law(sol.Y_field.y, laws, i));
    }
    sol.flatness = flatness_residual(sol.margins, sol.K);
    return sol;
}

ReflectedSolution solve_reflected(const CompensatorSpec& spec, const Driver& d, const LossFunction& loss,
                                  const TerminalCondition& xi, const TimeGrid& grid, const ReflectOptions& opts) {
    if (opts.max_iter == 0) {
        throw ValidationError("solve_reflected needs max_iter >= 1");
    }
    const auto model = std::make_shared<const LatticeModel>(spec, grid, opts.solver);
    const LawTable laws = forward_law(model);
    const double beta = d.growth().beta;
    std::vector<double> previous((model->steps() + 1) * model->states(), 0.0);
    ReflectedSolution best;
    bool have = false;
    for (std::size_t m = 0; m < opts.max_iter; ++m) {
        const ValueField field = solve_backward_frozen(model, d, xi, previous, opts.solver);
        ReflectedSolution next = running_sup_reflect(field, laws, loss, opts.bisection_tol);
        double distance = 0.0;
        for (std::size_t k = 0; k < previous.size(); ++k) {
            distance = std::max(distance, std::abs(next.Y_field.y[k] - previous[k]));
        }
        next.picard_trace = have ? best.picard_trace : std::vector<double>{};
        next.picard_trace.push_back(distance);
        previous = next.Y_field.y;
        best = std::move(next);
        have = true;
        if (beta == 0.0 || distance < opts.picard_tol) {
            best.converged = true;
            best.horizon = picard_horizon(beta, loss.kappa(), spec, grid);
            return best;
        }
    }
    best.converged = false;
    best.horizon = picard_horizon(beta, loss.kappa(), spec, grid);
    return best;
}

SkorokhodReport skorokhod_report(const ReflectedSolution& sol, const LossFunction& loss, const LawTable& laws,
                                 double tol) {
    const std::size_t layers = sol.Y_field.grid().steps() + 1;
    if (sol.K.size() != layers || laws.model->steps() + 1 != layers) {
        throw ValidationError("skorokhod_report: inconsistent grids");
    }
    SkorokhodReport report;
    report.tolerance = tol;
    report.margins.resize(layers);
    for (std::size_t i = 0; i < layers; ++i) {
        report.margins[i] = expected_loss(loss, sol.Y_field.grid().time(i), layer_law(sol.Y_field.y, laws, i));
    }
    report.min_margin = *std::min_element(report.margins.begin(), report.margins.end());
    report.flatness = flatness_residual(report.margins, sol.K);
    report.k_terminal = sol.K.back();
    report.constraint_ok = report.min_margin >= -tol;
    report.flat_ok = std::abs(report.flatness) <= tol * std::max(1.0, report.k_terminal);
    report.monotone_ok = sol.K.front() == 0.0;
    for (std::size_t i = 1; i < layers; ++i) {
        report.monotone_ok = report.monotone_ok && sol.K[i] >= sol.K[i - 1];
    }
    return report;
}

} // namespace mppbsde
