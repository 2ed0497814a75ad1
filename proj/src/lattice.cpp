#include "mppbsde/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "mppbsde/errors.hpp"
#include "mppbsde/numerics.hpp"
#include "mppbsde/parallel.hpp"

namespace mppbsde {

namespace {

constexpr double kGridMerge = 1e-13;

// All compositions of `total` into `parts` nonnegative parts, lexicographically ascending.
void append_compositions(int total, std::size_t parts, std::vector<int>& prefix,
                         std::vector<std::vector<int>>& out) {
    if (parts == 1) {
        prefix.push_back(total);
        out.push_back(prefix);
        prefix.pop_back();
        return;
    }
    for (int c = 0; c <= total; ++c) {
        prefix.push_back(c);
        append_compositions(total - c, parts - 1, prefix, out);
        prefix.pop_back();
    }
}

double increment_probability(std::span<const int> inc, std::span<const double> means) {
    double p = 1.0;
    for (std::size_t e = 0; e < inc.size(); ++e) {
        p *= poisson_pmf(static_cast<unsigned>(inc[e]), means[e]);
        if (p == 0.0) {
            break;
        }
    }
    return p;
}

unsigned required_jumps(double mean, unsigned j_max, double tail_tol) {
    unsigned j = j_max;
    while (poisson_tail(j, mean) >= tail_tol) {
        ++j;
        if (j > (1u << 16)) {
            break;
        }
    }
    return j;
}

// Odometer over per-mark Poisson increments with truncated supports.
template <class Visit>
void enumerate_poisson_products(std::span<const double> means, double tail, Visit visit) {
    const std::size_t k = means.size();
    std::vector<unsigned> top(k);
    std::vector<std::vector<double>> pmf(k);
    const double share = tail / static_cast<double>(k);
    for (std::size_t e = 0; e < k; ++e) {
        const double m = means[e];
        if (m > 500.0) {
            top[e] = poisson_quantile_for_tail(m, share);
            for (unsigned c = 0; c <= top[e]; ++c) {
                pmf[e].push_back(poisson_pmf(c, m));
            }
            continue;
        }
        // Forward recurrence p_{c+1} = p_c m / (c + 1) until the remaining mass is below share.
        double p = std::exp(-m);
        double cumulative = 0.0;
        unsigned c = 0;
        while (true) {
            pmf[e].push_back(p);
            cumulative += p;
            if (m == 0.0 || 1.0 - cumulative < share || c > 100000) {
                break;
            }
            p *= m / static_cast<double>(c + 1);
            ++c;
        }
        top[e] = c;
    }
    std::vector<int> inc(k, 0);
    while (true) {
        double p = 1.0;
        for (std::size_t e = 0; e < k; ++e) {
            p *= pmf[e][static_cast<std::size_t>(inc[e])];
        }
        visit(std::span<const int>(inc), p);
        std::size_t e = 0;
        for (; e < k; ++e) {
            if (static_cast<unsigned>(inc[e]) < top[e]) {
                ++inc[e];
                break;
            }
            inc[e] = 0;
        }
        if (e == k) {
            break;
        }
    }
}

// log E_t[exp(c g(N_T))] given N_t = counts.
double log_terminal_moment(const CompensatorSpec& spec, const TerminalCondition& xi, double c, double t,
                           std::span<const int> counts) {
    const auto means = spec.mark_means(t, spec.horizon());
    std::vector<double> logs;
    std::vector<double> weights;
    std::vector<int> final_counts(counts.begin(), counts.end());
    enumerate_poisson_products(means, 1e-12, [&](std::span<const int> inc, double p) {
        for (std::size_t e = 0; e < inc.size(); ++e) {
            final_counts[e] = counts[e] + inc[e];
        }
        logs.push_back(c * xi(final_counts));
        weights.push_back(p);
    });
    double total = 0.0;
    for (double w : weights) {
        total += w;
    }
    return log_sum_exp(logs, weights) - std::log(total);
}

std::vector<double> parse_catalog_params(const std::string& name) {
    std::vector<double> out;
    const auto colon = name.find(':');
    if (colon == std::string::npos) {
        return out;
    }
    std::stringstream ss(name.substr(colon + 1));
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(std::stod(item));
    }
    return out;
}

} // namespace

// --- TimeGrid -------------------------------------------------------------------

TimeGrid::TimeGrid(std::vector<double> times, std::vector<double> a_values)
    : times_(std::move(times)), A_(std::move(a_values)) {
    dA_.resize(times_.size() - 1);
    for (std::size_t i = 0; i + 1 < times_.size(); ++i) {
        dA_[i] = A_[i + 1] - A_[i];
    }
}

TimeGrid TimeGrid::uniform(const CompensatorSpec& spec, std::size_t steps) {
    if (steps == 0) {
        throw ValidationError("time grid needs at least one step");
    }
    std::vector<double> times(steps + 1);
    for (std::size_t i = 0; i <= steps; ++i) {
        times[i] = spec.horizon() * static_cast<double>(i) / static_cast<double>(steps);
    }
    times.back() = spec.horizon();
    return from_times(spec, std::move(times));
}

TimeGrid TimeGrid::from_times(const CompensatorSpec& spec, std::vector<double> times) {
    if (times.size() < 2 || times.front() != 0.0 || std::abs(times.back() - spec.horizon()) > kGridMerge) {
        throw ValidationError("time grid must start at 0 and end at T");
    }
    for (std::size_t i = 1; i < times.size(); ++i) {
        if (!(times[i] > times[i - 1])) {
            throw ValidationError("time grid must be strictly increasing");
        }
    }
    const auto knots = spec.knots();
    times.insert(times.end(), knots.begin(), knots.end());
    std::sort(times.begin(), times.end());
    std::vector<double> merged;
    for (double t : times) {
        if (merged.empty() || t - merged.back() > kGridMerge) {
            merged.push_back(t);
        } else if (std::find(knots.begin(), knots.end(), t) != knots.end()) {
            merged.back() = t; // snap to the exact breakpoint
        }
    }
    merged.back() = spec.horizon();
    std::vector<double> a_values(merged.size());
    for (std::size_t i = 0; i < merged.size(); ++i) {
        a_values[i] = spec.A(merged[i]);
    }
    return TimeGrid(std::move(merged), std::move(a_values));
}

double TimeGrid::max_dA() const noexcept {
    return dA_.empty() ? 0.0 : *std::max_element(dA_.begin(), dA_.end());
}

std::size_t TimeGrid::layer_of(double t) const {
    const auto it = std::lower_bound(times_.begin(), times_.end(), t);
    if (it == times_.begin()) {
        return 0;
    }
    const auto j = static_cast<std::size_t>(it - times_.begin());
    return std::min(j - 1, steps() - 1);
}

std::size_t TimeGrid::layer_at(double t) const {
    const auto it = std::upper_bound(times_.begin(), times_.end(), t);
    if (it == times_.begin()) {
        return 0;
    }
    return std::min(static_cast<std::size_t>(it - times_.begin()) - 1, steps() - 1);
}

// --- StateLattice ------------------------------------------------------------------

StateLattice::StateLattice(std::size_t marks, int n_max) : marks_(marks), n_max_(n_max) {
    if (marks == 0) {
        throw ValidationError("state lattice needs at least one mark");
    }
    if (n_max < 0) {
        throw ValidationError("n_max must be >= 0");
    }
    const auto cap = static_cast<std::size_t>(n_max);
    choose_.assign(cap + 1, std::vector<std::size_t>(marks + 1, 0));
    for (std::size_t m = 0; m <= cap; ++m) {
        choose_[m][1] = 1;
        for (std::size_t p = 2; p <= marks; ++p) {
            std::size_t sum = 0;
            for (std::size_t c = 0; c <= m; ++c) {
                sum += choose_[m - c][p - 1];
            }
            choose_[m][p] = sum;
        }
    }
    std::vector<int> prefix;
    for (int total = 0; total <= n_max; ++total) {
        offset_.push_back(states_.size());
        append_compositions(total, marks, prefix, states_);
    }
    jump_.resize(states_.size() * marks);
    for (std::size_t s = 0; s < states_.size(); ++s) {
        std::vector<int> next = states_[s];
        for (std::size_t e = 0; e < marks; ++e) {
            ++next[e];
            jump_[s * marks + e] = index_of(next);
            --next[e];
        }
    }
}

int StateLattice::total(std::size_t s) const {
    int sum = 0;
    for (int c : states_[s]) {
        sum += c;
    }
    return sum;
}

std::optional<std::size_t> StateLattice::index_of(std::span<const int> counts) const {
    if (counts.size() != marks_) {
        return std::nullopt;
    }
    int total = 0;
    for (int c : counts) {
        if (c < 0) {
            return std::nullopt;
        }
        total += c;
    }
    if (total > n_max_) {
        return std::nullopt;
    }
    std::size_t rank = offset_[static_cast<std::size_t>(total)];
    int remaining = total;
    for (std::size_t j = 0; j + 1 < marks_; ++j) {
        const std::size_t parts_after = marks_ - 1 - j;
        for (int v = 0; v < counts[j]; ++v) {
            rank += choose_[static_cast<std::size_t>(remaining - v)][parts_after];
        }
        remaining -= counts[j];
    }
    return rank;
}

// --- kernels and model ----------------------------------------------------------

TransitionKernel transition_kernel(const CompensatorSpec& spec, double t0, double t1, unsigned j_max,
                                   double tail_tol, unsigned j_ceiling) {
    if (!(t1 > t0)) {
        throw ValidationError("transition_kernel requires t0 < t1");
    }
    if (j_max < 1) {
        throw ValidationError("transition_kernel requires j_max >= 1");
    }
    if (!(tail_tol > 0.0)) {
        throw ValidationError("transition_kernel requires tail_tol > 0");
    }
    const auto means = spec.mark_means(t0, t1);
    double total = 0.0;
    for (double m : means) {
        total += m;
    }
    const unsigned needed = required_jumps(total, j_max, tail_tol);
    if (needed > j_ceiling) {
        std::ostringstream msg;
        msg << "transition kernel: Poisson tail below " << tail_tol << " over [" << t0 << ", " << t1
            << "] requires j_max >= " << needed << " (ceiling " << j_ceiling << ")";
        throw NumericalError(msg.str());
    }
    TransitionKernel kernel;
    kernel.j_max = needed;
    std::vector<std::vector<int>> all;
    std::vector<int> prefix;
    for (unsigned j = 0; j <= needed; ++j) {
        append_compositions(static_cast<int>(j), spec.mark_count(), prefix, all);
    }
    CompensatedSum mass;
    for (auto& inc : all) {
        const double p = increment_probability(inc, means);
        if (p > 0.0) {
            mass += p;
            kernel.increments.push_back(std::move(inc));
            kernel.probs.push_back(p);
        }
    }
    kernel.tail_mass = std::max(0.0, 1.0 - mass.value());
    return kernel;
}

LatticeModel::LatticeModel(const CompensatorSpec& spec, TimeGrid grid, const SolverOptions& opts)
    : spec_(spec), grid_(std::move(grid)), lattice_(spec.mark_count(), opts.n_max) {
    if (opts.j_max < 1) {
        throw ValidationError("j_max must be >= 1");
    }
    if (!(opts.tail_tol > 0.0)) {
        throw ValidationError("tail_tol must be positive");
    }
    if (std::abs(grid_.times().back() - spec.horizon()) > kGridMerge) {
        throw ValidationError("time grid horizon differs from the compensator horizon");
    }
    state_tail_ = poisson_tail(static_cast<unsigned>(opts.n_max), spec.A(spec.horizon()));
    if (state_tail_ > opts.state_tail_tol) {
        const unsigned need = poisson_quantile_for_tail(spec.A(spec.horizon()), opts.state_tail_tol);
        std::ostringstream msg;
        msg << "state overflow: P(|N_T| > n_max=" << opts.n_max << ") = " << state_tail_ << " exceeds "
            << opts.state_tail_tol << "; n_max >= " << need << " required";
        throw NumericalError(msg.str());
    }

    const std::size_t steps = grid_.steps();
    std::vector<unsigned> j_layer(steps);
    unsigned j_global = opts.j_max;
    for (std::size_t i = 0; i < steps; ++i) {
        j_layer[i] = required_jumps(grid_.dA(i), opts.j_max, opts.tail_tol);
        if (j_layer[i] > 64) {
            std::ostringstream msg;
            msg << "transition kernel on layer " << i << " requires j_max >= " << j_layer[i]
                << "; refine the time grid";
            throw NumericalError(msg.str());
        }
        j_global = std::max(j_global, j_layer[i]);
    }
    const StateLattice catalog(spec.mark_count(), static_cast<int>(j_global));
    catalog_ = catalog.size();

    probs_.resize(steps);
    phi_.resize(steps + 1);
    for (std::size_t i = 0; i < steps; ++i) {
        const double t0 = grid_.time(i);
        const double t1 = grid_.time(i + 1);
        phi_[i] = spec.phi_average(t0, t1);
        const auto means = spec.mark_means(t0, t1);
        auto& p = probs_[i];
        p.assign(catalog_, 0.0);
        CompensatedSum mass;
        for (std::size_t k = 0; k < catalog_; ++k) {
            if (catalog.total(k) <= static_cast<int>(j_layer[i])) {
                p[k] = increment_probability(catalog.counts(k), means);
                mass += p[k];
            }
        }
        max_kernel_tail_ = std::max(max_kernel_tail_, std::max(0.0, 1.0 - mass.value()));
        const double norm = mass.value();
        for (double& v : p) {
            v /= norm;
        }
    }
    {
        const auto last = spec.phi_at(spec.horizon());
        phi_[steps].assign(last.begin(), last.end());
    }

    target_.resize(lattice_.size() * catalog_);
    std::vector<int> moved(spec.mark_count());
    for (std::size_t s = 0; s < lattice_.size(); ++s) {
        const auto n = lattice_.counts(s);
        for (std::size_t k = 0; k < catalog_; ++k) {
            const auto inc = catalog.counts(k);
            for (std::size_t e = 0; e < moved.size(); ++e) {
                moved[e] = n[e] + inc[e];
            }
            target_[s * catalog_ + k] = lattice_.index_of(moved).value_or(s);
        }
    }
}

double LatticeModel::expect(std::size_t i, std::size_t s, std::span<const double> next) const {
    const auto& p = probs_[i];
    CompensatedSum acc;
    for (std::size_t k = 0; k < catalog_; ++k) {
        if (p[k] > 0.0) {
            acc += p[k] * next[target_[s * catalog_ + k]];
        }
    }
    return acc.value();
}

double LatticeModel::log_expect(std::size_t i, std::size_t s, std::span<const double> log_next) const {
    const auto& p = probs_[i];
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < catalog_; ++k) {
        if (p[k] > 0.0) {
            top = std::max(top, log_next[target_[s * catalog_ + k]]);
        }
    }
    if (!std::isfinite(top)) {
        return top;
    }
    CompensatedSum acc;
    for (std::size_t k = 0; k < catalog_; ++k) {
        if (p[k] > 0.0) {
            acc += p[k] * std::exp(log_next[target_[s * catalog_ + k]] - top);
        }
    }
    return top + std::log(acc.value());
}

// --- backward solver ----------------------------------------------------------------

namespace {

ValueField solve_impl(std::shared_ptr<const LatticeModel> model, const Driver& d, const TerminalCondition& xi,
                      std::span<const double> frozen, const SolverOptions& opts) {
    const std::size_t steps = model->steps();
    const std::size_t states = model->states();
    const std::size_t marks = model->marks();
    const auto& grid = model->grid();
    const auto& lattice = model->lattice();
    const double beta = d.growth().beta;
    const double lam = d.growth().lambda;

    if (!frozen.empty() && frozen.size() != (steps + 1) * states) {
        throw ValidationError("frozen field does not match the lattice");
    }
    if (opts.implicit && frozen.empty() && beta * grid.max_dA() >= 1.0) {
        std::ostringstream msg;
        msg << "implicit y-step needs beta * max dA < 1 for a contraction; beta = " << beta
            << ", max dA = " << grid.max_dA();
        throw ValidationError(msg.str());
    }

    ValueField field;
    field.model = model;
    field.y.assign((steps + 1) * states, 0.0);
    field.u.assign((steps + 1) * states * marks, 0.0);

    for (std::size_t s = 0; s < states; ++s) {
        const double g = xi(lattice.counts(s));
        if (!std::isfinite(g)) {
            throw NumericalError("terminal condition is not finite on the lattice");
        }
        field.y[steps * states + s] = g;
    }

    std::vector<double> scaled(states);
    UVector u(marks);
    for (std::size_t i = steps; i-- > 0;) {
        const double t = grid.time(i);
        const double da = grid.dA(i);
        const auto phi = model->phi(i);
        const std::span<const double> next(field.y.data() + (i + 1) * states, states);
        if (opts.scheme == Scheme::exponential) {
            for (std::size_t s = 0; s < states; ++s) {
                scaled[s] = lam * next[s];
            }
        }
        for (std::size_t s = 0; s < states; ++s) {
            const double cont = model->expect(i, s, next);
            for (std::size_t e = 0; e < marks; ++e) {
                const auto succ = lattice.successor(s, e);
                u[e] = succ ? next[*succ] - next[s] : 0.0;
            }
            double base = cont;
            double jterm = 0.0;
            if (opts.scheme == Scheme::exponential) {
                base = model->log_expect(i, s, scaled) / lam;
                jterm = j_lambda(u, lam, phi) / lam;
            }
            auto step = [&](double y_arg) { return base + da * (d(t, y_arg, u, phi) - jterm); };

            double value;
            if (!frozen.empty()) {
                value = step(frozen[i * states + s]);
            } else if (!opts.implicit) {
                value = step(cont);
            } else {
                value = step(cont);
                std::size_t iter = 0;
                while (true) {
                    const double next_value = step(value);
                    const double change = std::abs(next_value - value);
                    value = next_value;
                    if (change <= opts.picard_tol * std::max(1.0, std::abs(value))) {
                        break;
                    }
                    if (++iter >= opts.max_fixed_point_iter || !std::isfinite(value)) {
                        throw NumericalError("implicit y-step did not converge");
                    }
                }
            }
            if (!std::isfinite(value)) {
                std::ostringstream msg;
                msg << "solver produced a non-finite value at layer " << i << ", state " << s;
                throw NumericalError(msg.str());
            }
            field.y[i * states + s] = value;
            std::copy(u.begin(), u.end(), field.u.begin() + static_cast<std::ptrdiff_t>((i * states + s) * marks));
        }
    }
    return field;
}

} // namespace

ValueField solve_backward(const CompensatorSpec& spec, const Driver& d, const TerminalCondition& xi,
                          const TimeGrid& grid, const SolverOptions& opts) {
    return solve_backward(std::make_shared<const LatticeModel>(spec, grid, opts), d, xi, opts);
}

ValueField solve_backward(std::shared_ptr<const LatticeModel> model, const Driver& d,
                          const TerminalCondition& xi, const SolverOptions& opts) {
    return solve_impl(std::move(model), d, xi, {}, opts);
}

ValueField solve_backward_frozen(std::shared_ptr<const LatticeModel> model, const Driver& d,
                                 const TerminalCondition& xi, std::span<const double> frozen_y,
                                 const SolverOptions& opts) {
    if (frozen_y.empty()) {
        throw ValidationError("solve_backward_frozen needs a frozen field");
    }
    return solve_impl(std::move(model), d, xi, frozen_y, opts);
}

// --- closed forms -----------------------------------------------------------------

double closed_form_zero_driver(const CompensatorSpec& spec, const TerminalCondition& xi, double t,
                               std::span<const int> counts, double intensity_scale) {
    if (t >= spec.horizon()) {
        return xi(counts);
    }
    auto means = spec.mark_means(t, spec.horizon());
    for (double& m : means) {
        m *= intensity_scale;
    }
    CompensatedSum value;
    CompensatedSum mass;
    std::vector<int> final_counts(counts.begin(), counts.end());
    enumerate_poisson_products(means, 1e-12, [&](std::span<const int> inc, double p) {
        for (std::size_t e = 0; e < inc.size(); ++e) {
            final_counts[e] = counts[e] + inc[e];
        }
        value += p * xi(final_counts);
        mass += p;
    });
    return value.value() / mass.value();
}

double entropic_closed_form(const CompensatorSpec& spec, const TerminalCondition& xi, double lam, double t,
                            std::span<const int> counts) {
    if (!(lam > 0.0)) {
        throw ValidationError("entropic_closed_form requires lambda > 0");
    }
    if (t >= spec.horizon()) {
        return xi(counts);
    }
    return log_terminal_moment(spec, xi, lam, t, counts) / lam;
}

std::optional<OracleFn> oracle_for(const Driver& d, const CompensatorSpec& spec, const TerminalCondition& xi) {
    const std::string& name = d.name();
    const std::string kind = name.substr(0, name.find(':'));
    std::vector<double> params;
    try {
        params = parse_catalog_params(name);
    } catch (const std::exception&) {
        return std::nullopt;
    }
    const double horizon_a = spec.A(spec.horizon());
    if (kind == "zero" && params.empty()) {
        return OracleFn([spec, xi](double t, std::span<const int> n) {
            return closed_form_zero_driver(spec, xi, t, n);
        });
    }
    if (kind == "constant" && params.size() == 1) {
        const double a = params[0];
        return OracleFn([spec, xi, a, horizon_a](double t, std::span<const int> n) {
            return closed_form_zero_driver(spec, xi, t, n) + a * (horizon_a - spec.A(t));
        });
    }
    if (kind == "entropic" && params.size() == 1) {
        const double lam = params[0];
        return OracleFn([spec, xi, lam](double t, std::span<const int> n) {
            return entropic_closed_form(spec, xi, lam, t, n);
        });
    }
    if (kind == "neg_entropic" && params.size() == 1) {
        const double lam = params[0];
        return OracleFn([spec, xi, lam](double t, std::span<const int> n) {
            if (t >= spec.horizon()) {
                return xi(n);
            }
            return -log_terminal_moment(spec, xi, -lam, t, n) / lam;
        });
    }
    if (kind == "affine_jump" && params.size() == 2) {
        const double a = params[0];
        const double b = params[1];
        return OracleFn([spec, xi, a, b, horizon_a](double t, std::span<const int> n) {
            return closed_form_zero_driver(spec, xi, t, n, 1.0 + b) + a * (horizon_a - spec.A(t));
        });
    }
    return std::nullopt;
}

ValueField field_from_oracle(std::shared_ptr<const LatticeModel> model, const OracleFn& oracle) {
    const std::size_t steps = model->steps();
    const std::size_t states = model->states();
    const std::size_t marks = model->marks();
    ValueField field;
    field.model = model;
    field.y.assign((steps + 1) * states, 0.0);
    field.u.assign((steps + 1) * states * marks, 0.0);
    for (std::size_t i = 0; i <= steps; ++i) {
        for (std::size_t s = 0; s < states; ++s) {
            field.y[i * states + s] = oracle(model->grid().time(i), model->lattice().counts(s));
        }
    }
    for (std::size_t i = 0; i < steps; ++i) {
        for (std::size_t s = 0; s < states; ++s) {
            for (std::size_t e = 0; e < marks; ++e) {
                const auto succ = model->lattice().successor(s, e);
                field.u[(i * states + s) * marks + e] =
                    succ ? field.y[(i + 1) * states + *succ] - field.y[(i + 1) * states + s] : 0.0;
            }
        }
    }
    return field;
}

// --- trajectories ---------------------------------------------------------------------

FieldPath::FieldPath(const ValueField& field, const MppPath& path) : field_(field), path_(path) {
    const auto& grid = field.grid();
    if (std::abs(path.horizon - grid.times().back()) > kGridMerge) {
        throw ValidationError("path horizon does not match the value field grid");
    }
    const std::size_t marks = field.model->marks();
    state_at_layer_.resize(grid.steps() + 1);
    for (std::size_t i = 0; i <= grid.steps(); ++i) {
        state_at_layer_[i] = state_of(path.counts_through(grid.time(i), marks));
    }
}

std::size_t FieldPath::state_of(std::span<const int> counts) const {
    const auto s = field_.lattice().index_of(counts);
    if (!s) {
        throw NumericalError("path event count exceeds the lattice cap n_max");
    }
    return *s;
}

double FieldPath::y(double t) const {
    const auto& grid = field_.grid();
    const std::size_t marks = field_.model->marks();
    const std::size_t i = grid.layer_at(t);
    const std::size_t n = state_of(path_.counts_through(t, marks));
    if (i >= grid.steps()) {
        return field_.y_at(grid.steps(), n);
    }
    const std::size_t n0 = state_at_layer_[i];
    const double w = (t - grid.time(i)) / (grid.time(i + 1) - grid.time(i));
    return field_.y_at(i + 1, n) + (1.0 - w) * (field_.y_at(i, n0) - field_.y_at(i + 1, n0));
}

double FieldPath::u(double t, std::span<const int> counts_before, std::size_t e) const {
    const std::size_t i = field_.grid().layer_of(t);
    return field_.u_at(i, state_of(counts_before))[e];
}

Trajectory sample_trajectory(const ValueField& field, const MppPath& path) {
    const FieldPath fp(field, path);
    const auto& grid = field.grid();
    const std::size_t marks = field.model->marks();
    Trajectory traj;
    std::size_t next_event = 0;
    auto push_grid = [&](std::size_t i) {
        TrajectoryPoint pt;
        pt.t = grid.time(i);
        pt.counts = path.counts_through(pt.t, marks);
        pt.y = fp.y(pt.t);
        const std::size_t layer = std::min(i, grid.steps() - 1);
        const auto s = field.lattice().index_of(pt.counts);
        const auto uu = field.u_at(i == grid.steps() ? grid.steps() : layer, *s);
        pt.u.assign(uu.begin(), uu.end());
        traj.points.push_back(std::move(pt));
    };
    for (std::size_t i = 0; i <= grid.steps(); ++i) {
        while (next_event < path.events.size() && path.events[next_event].time <= grid.time(i)) {
            const auto& ev = path.events[next_event];
            const auto before = path.counts_before(ev.time, marks);
            const std::size_t layer = grid.layer_of(ev.time);
            const auto s = field.lattice().index_of(before);
            if (!s) {
                throw NumericalError("path event count exceeds the lattice cap n_max");
            }
            const auto uu = field.u_at(layer, *s);
            // Left limit: same interpolation with the pre-jump count.
            const double w = (ev.time - grid.time(layer)) / (grid.time(layer + 1) - grid.time(layer));
            const auto s0 = field.lattice().index_of(path.counts_through(grid.time(layer), marks));
            const double y_left = field.y_at(layer + 1, *s) +
                                  (1.0 - w) * (field.y_at(layer, *s0) - field.y_at(layer + 1, *s0));
            TrajectoryPoint pre{ev.time, y_left, before, UVector(uu.begin(), uu.end()), false};
            TrajectoryPoint post{ev.time, y_left + uu[ev.mark], path.counts_through(ev.time, marks),
                                 UVector(uu.begin(), uu.end()), true};
            if (!(ev.time == grid.time(i))) {
                traj.points.push_back(std::move(pre));
                traj.points.push_back(std::move(post));
            } else {
                traj.points.push_back(std::move(pre));
            }
            ++next_event;
        }
        push_grid(i);
    }
    return traj;
}

PathSolution field_path_solution(const ValueField& field, const MppPath& path) {
    auto fp = std::make_shared<FieldPath>(field, path);
    PathSolution sol;
    sol.y = [fp](double t) { return fp->y(t); };
    sol.u = [fp](double t, std::span<const int> counts, std::size_t e) { return fp->u(t, counts, e); };
    sol.breaks = field.grid().times();
    return sol;
}

PathSolution oracle_path_solution(const CompensatorSpec& spec, const OracleFn& oracle, const MppPath& path) {
    const std::size_t marks = spec.mark_count();
    PathSolution sol;
    sol.y = [oracle, &path, marks](double t) { return oracle(t, path.counts_through(t, marks)); };
    sol.u = [oracle](double t, std::span<const int> counts, std::size_t e) {
        std::vector<int> bumped(counts.begin(), counts.end());
        ++bumped[e];
        return oracle(t, bumped) - oracle(t, counts);
    };
    return sol;
}

// --- forward residual ------------------------------------------------------------------

ResidualStats forward_residual(const std::function<PathSolution(const MppPath&)>& solution,
                               const CompensatorSpec& spec, const Driver& d, const TerminalCondition& xi,
                               const EnsembleSpec& ensemble, double quad_step, std::size_t grid_steps) {
    if (ensemble.paths == 0) {
        throw ValidationError("forward_residual needs at least one path");
    }
    if (!(quad_step > 0.0)) {
        throw ValidationError("quad_step must be positive");
    }
    const std::size_t marks = spec.mark_count();
    const auto defects = parallel_map(ensemble.paths, ensemble.jobs, [&](std::size_t m) {
        const MppPath path = simulate_path(spec, ensemble.seed_offset + m);
        const PathSolution sol = solution(path);
        UVector u(marks);
        const double drift = integrate_clock(
            spec, path,
            [&](double t, std::span<const int> counts, std::span<const double> phi) {
                for (std::size_t e = 0; e < marks; ++e) {
                    u[e] = sol.u(t, counts, e);
                }
                return d(t, sol.y(t), u, phi);
            },
            quad_step, sol.breaks);
        const double martingale = integral_q(spec, path, sol.u, quad_step, sol.breaks);
        const double terminal = xi(path.counts_through(spec.horizon(), marks));
        return sol.y(0.0) - terminal - drift + martingale;
    });
    ResidualStats stats;
    stats.paths = defects.size();
    stats.grid_steps = grid_steps;
    CompensatedSum sum;
    CompensatedSum sum_abs;
    for (double v : defects) {
        sum += v;
        sum_abs += std::abs(v);
        stats.max_abs = std::max(stats.max_abs, std::abs(v));
    }
    const double n = static_cast<double>(defects.size());
    stats.mean = sum.value() / n;
    stats.mean_abs = sum_abs.value() / n;
    CompensatedSum var;
    for (double v : defects) {
        var += (v - stats.mean) * (v - stats.mean);
    }
    stats.stddev = defects.size() > 1 ? std::sqrt(var.value() / (n - 1.0)) : 0.0;
    return stats;
}

ResidualStats forward_residual(const ValueField& field, const CompensatorSpec& spec, const Driver& d,
                               const TerminalCondition& xi, const EnsembleSpec& ensemble, double quad_step) {
    return forward_residual([&field](const MppPath& path) { return field_path_solution(field, path); }, spec, d,
                            xi, ensemble, quad_step, field.grid().steps());
}

// --- forward law -----------------------------------------------------------------------

LawTable forward_law(std::shared_ptr<const LatticeModel> model) {
    const std::size_t steps = model->steps();
    const std::size_t states = model->states();
    LawTable law;
    law.model = model;
    law.mass.assign((steps + 1) * states, 0.0);
    law.mass[0] = 1.0; // state 0 is the empty count vector
    for (std::size_t i = 0; i < steps; ++i) {
        const auto p = model->probs(i);
        for (std::size_t s = 0; s < states; ++s) {
            const double m = law.mass[i * states + s];
            if (m == 0.0) {
                continue;
            }
            for (std::size_t k = 0; k < p.size(); ++k) {
                if (p[k] > 0.0) {
                    law.mass[(i + 1) * states + model->target(s, k)] += m * p[k];
                }
            }
        }
    }
    return law;
}

LawTable forward_law(const CompensatorSpec& spec, const TimeGrid& grid, const SolverOptions& opts) {
    return forward_law(std::make_shared<const LatticeModel>(spec, grid, opts));
}

} // namespace mppbsde
