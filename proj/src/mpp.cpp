#include "mppbsde/mpp.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "mppbsde/errors.hpp"
#include "mppbsde/numerics.hpp"

namespace mppbsde {

namespace {

constexpr double kProbTol = 1e-9;
constexpr double kKnotMerge = 1e-14;

std::vector<double> merge_sorted(std::vector<double> xs, double lo, double hi) {
    std::vector<double> out;
    std::sort(xs.begin(), xs.end());
    for (double x : xs) {
        if (x < lo || x > hi) {
            continue;
        }
        if (out.empty() || x - out.back() > kKnotMerge * std::max(1.0, std::abs(x))) {
            out.push_back(x);
        }
    }
    return out;
}

} // namespace

// --- PiecewiseLinear -----------------------------------------------------

PiecewiseLinear::PiecewiseLinear(std::vector<std::pair<double, double>> breakpoints)
    : points_(std::move(breakpoints)) {
    if (points_.empty()) {
        throw ValidationError("piecewise-linear function needs at least one breakpoint");
    }
    for (std::size_t j = 0; j < points_.size(); ++j) {
        if (!std::isfinite(points_[j].first) || !std::isfinite(points_[j].second)) {
            throw ValidationError("piecewise-linear breakpoints must be finite");
        }
        if (j > 0 && !(points_[j].first > points_[j - 1].first)) {
            throw ValidationError("piecewise-linear breakpoints must be strictly increasing in x");
        }
    }
}

double PiecewiseLinear::operator()(double x) const {
    if (x <= points_.front().first) {
        return points_.front().second;
    }
    if (x >= points_.back().first) {
        return points_.back().second;
    }
    const auto it = std::upper_bound(points_.begin(), points_.end(), x,
                                     [](double v, const auto& p) { return v < p.first; });
    const auto& [x1, v1] = *it;
    const auto& [x0, v0] = *(it - 1);
    const double w = (x - x0) / (x1 - x0);
    return v0 + w * (v1 - v0);
}

double PiecewiseLinear::generalized_inverse(double v) const {
    if (v <= points_.front().second) {
        return points_.front().first;
    }
    const auto it = std::lower_bound(points_.begin(), points_.end(), v,
                                     [](const auto& p, double value) { return p.second < value; });
    if (it == points_.end()) {
        return points_.back().first;
    }
    const auto& [x1, v1] = *it;
    const auto& [x0, v0] = *(it - 1);
    // v0 < v <= v1, so the segment has positive slope.
    const double x = x0 + (v - v0) / (v1 - v0) * (x1 - x0);
    return std::min(std::max(x, x0), x1);
}

bool PiecewiseLinear::nondecreasing() const noexcept {
    for (std::size_t j = 1; j < points_.size(); ++j) {
        if (points_[j].second < points_[j - 1].second) {
            return false;
        }
    }
    return true;
}

// --- StepFunction --------------------------------------------------------

StepFunction::StepFunction(std::vector<double> starts, std::vector<double> values)
    : starts_(std::move(starts)), values_(std::move(values)) {
    if (starts_.empty() || starts_.size() != values_.size()) {
        throw ValidationError("step function needs matching, nonempty start/value lists");
    }
    for (std::size_t j = 1; j < starts_.size(); ++j) {
        if (!(starts_[j] > starts_[j - 1])) {
            throw ValidationError("step function starts must be strictly increasing");
        }
    }
}

double StepFunction::operator()(double t) const {
    const auto it = std::upper_bound(starts_.begin(), starts_.end(), t);
    if (it == starts_.begin()) {
        return values_.front();
    }
    return values_[static_cast<std::size_t>(it - starts_.begin()) - 1];
}

// --- MarkSpace -----------------------------------------------------------

MarkSpace::MarkSpace(std::vector<std::string> ids, std::vector<std::string> labels)
    : ids_(std::move(ids)), labels_(std::move(labels)) {
    if (ids_.empty()) {
        throw ValidationError("mark space must contain at least one mark");
    }
    std::set<std::string> seen(ids_.begin(), ids_.end());
    if (seen.size() != ids_.size()) {
        throw ValidationError("mark identifiers must be unique");
    }
    if (!labels_.empty() && labels_.size() != ids_.size()) {
        throw ValidationError("mark labels must match the number of marks");
    }
}

std::optional<std::size_t> MarkSpace::index_of(const std::string& id) const {
    const auto it = std::find(ids_.begin(), ids_.end(), id);
    if (it == ids_.end()) {
        return std::nullopt;
    }
    return static_cast<std::size_t>(it - ids_.begin());
}

MarkSpace MarkSpace::with_size(std::size_t k) {
    std::vector<std::string> ids;
    for (std::size_t e = 0; e < k; ++e) {
        ids.push_back("e" + std::to_string(e + 1));
    }
    return MarkSpace(std::move(ids));
}

// --- CompensatorSpec -----------------------------------------------------

CompensatorSpec::CompensatorSpec(MarkSpace marks, std::vector<PhiSegment> phi, PiecewiseLinear clock,
                                 double horizon, std::optional<PiecewiseLinear> modulus)
    : marks_(std::move(marks)),
      phi_(std::move(phi)),
      clock_(std::move(clock)),
      horizon_(horizon),
      modulus_(std::move(modulus)) {
    validate();
}

CompensatorSpec CompensatorSpec::homogeneous(double rate, double horizon, std::vector<double> phi) {
    const std::size_t k = phi.size();
    return CompensatorSpec(MarkSpace::with_size(k), {PhiSegment{0.0, std::move(phi)}},
                           PiecewiseLinear({{0.0, 0.0}, {horizon, rate * horizon}}), horizon);
}

void CompensatorSpec::validate() const {
    if (!(horizon_ > 0.0) || !std::isfinite(horizon_)) {
        throw ValidationError("horizon T must be positive and finite");
    }
    const auto& pts = clock_.breakpoints();
    if (pts.front().first != 0.0 || pts.front().second != 0.0) {
        throw ValidationError("clock A must start at (0, 0)");
    }
    if (pts.back().first < horizon_) {
        throw ValidationError("clock A breakpoints must cover [0, T]");
    }
    if (!clock_.nondecreasing()) {
        throw ValidationError("clock A must be nondecreasing");
    }
    if (phi_.empty()) {
        throw ValidationError("phi schedule must have at least one segment");
    }
    if (phi_.front().start != 0.0) {
        throw ValidationError("phi schedule must start at t = 0");
    }
    for (std::size_t j = 0; j < phi_.size(); ++j) {
        const auto& seg = phi_[j];
        if (j > 0 && !(seg.start > phi_[j - 1].start)) {
            throw ValidationError("phi segment starts must be strictly increasing");
        }
        if (seg.probs.size() != marks_.size()) {
            std::ostringstream msg;
            msg << "phi segment " << j << " has " << seg.probs.size() << " probabilities, expected "
                << marks_.size();
            throw ValidationError(msg.str());
        }
        double total = 0.0;
        for (double p : seg.probs) {
            if (!(p >= 0.0) || !std::isfinite(p)) {
                throw ValidationError("phi probabilities must be finite and nonnegative");
            }
            total += p;
        }
        if (std::abs(total - 1.0) > kProbTol) {
            std::ostringstream msg;
            msg << "phi segment " << j << " probabilities sum to " << total << ", expected 1";
            throw ValidationError(msg.str());
        }
    }
    if (modulus_) {
        const auto& rho = modulus_->breakpoints();
        if (rho.front().first != 0.0 || rho.front().second != 0.0) {
            throw ValidationError("modulus rho must satisfy rho(0) = 0");
        }
        if (rho.back().first < horizon_) {
            throw ValidationError("modulus rho breakpoints must cover [0, T]");
        }
        if (!modulus_->nondecreasing()) {
            throw ValidationError("modulus rho must be nondecreasing");
        }
        const auto ks = knots();
        for (std::size_t a = 0; a < ks.size(); ++a) {
            for (std::size_t b = a + 1; b < ks.size(); ++b) {
                const double inc = A(ks[b]) - A(ks[a]);
                if (inc > (*modulus_)(ks[b] - ks[a]) + 1e-12 * std::max(1.0, inc)) {
                    std::ostringstream msg;
                    msg << "modulus rho does not dominate the clock increment on [" << ks[a] << ", "
                        << ks[b] << "]";
                    throw ValidationError(msg.str());
                }
            }
        }
    }
}

std::span<const double> CompensatorSpec::phi_at(double t) const {
    const auto it = std::upper_bound(phi_.begin(), phi_.end(), t,
                                     [](double v, const PhiSegment& s) { return v < s.start; });
    const auto& seg = it == phi_.begin() ? phi_.front() : *(it - 1);
    return seg.probs;
}

std::vector<double> CompensatorSpec::mark_means(double a, double b) const {
    std::vector<double> out(mark_count(), 0.0);
    if (!(b > a)) {
        return out;
    }
    for (std::size_t j = 0; j < phi_.size(); ++j) {
        const double lo = std::max(a, phi_[j].start);
        const double hi = j + 1 < phi_.size() ? std::min(b, phi_[j + 1].start) : b;
        if (!(hi > lo)) {
            continue;
        }
        const double mass = A(hi) - A(lo);
        for (std::size_t e = 0; e < out.size(); ++e) {
            out[e] += phi_[j].probs[e] * mass;
        }
    }
    return out;
}

std::vector<double> CompensatorSpec::phi_average(double a, double b) const {
    const double mass = A(b) - A(a);
    if (!(mass > 0.0)) {
        const auto p = phi_at(a);
        return {p.begin(), p.end()};
    }
    auto means = mark_means(a, b);
    for (double& m : means) {
        m /= mass;
    }
    return means;
}

double CompensatorSpec::modulus(double h) const {
    if (h <= 0.0) {
        return 0.0;
    }
    if (modulus_) {
        return (*modulus_)(h);
    }
    // t -> A(t + h) - A(t) is piecewise linear with kinks where t or t + h is a clock knot.
    double best = 0.0;
    const auto& pts = clock_.breakpoints();
    auto probe = [&](double t) {
        t = std::clamp(t, 0.0, std::max(0.0, horizon_ - h));
        const double hi = std::min(t + h, horizon_);
        best = std::max(best, A(hi) - A(t));
    };
    probe(0.0);
    for (const auto& [x, v] : pts) {
        probe(x);
        probe(x - h);
    }
    return best;
}

std::vector<double> CompensatorSpec::knots() const {
    std::vector<double> xs{0.0, horizon_};
    for (const auto& [x, v] : clock_.breakpoints()) {
        xs.push_back(x);
    }
    for (const auto& seg : phi_) {
        xs.push_back(seg.start);
    }
    return merge_sorted(std::move(xs), 0.0, horizon_);
}

// --- MppPath -------------------------------------------------------------

std::vector<int> MppPath::counts_before(double t, std::size_t marks) const {
    std::vector<int> counts(marks, 0);
    for (const auto& ev : events) {
        if (!(ev.time < t)) {
            break;
        }
        ++counts[ev.mark];
    }
    return counts;
}

std::vector<int> MppPath::counts_through(double t, std::size_t marks) const {
    std::vector<int> counts(marks, 0);
    for (const auto& ev : events) {
        if (ev.time > t) {
            break;
        }
        ++counts[ev.mark];
    }
    return counts;
}

void MppPath::validate(std::size_t marks) const {
    for (std::size_t n = 0; n < events.size(); ++n) {
        const auto& ev = events[n];
        if (!(ev.time > 0.0) || ev.time > horizon) {
            throw ValidationError("event times must lie in (0, T]");
        }
        if (ev.mark >= marks) {
            throw ValidationError("event mark index out of range");
        }
        if (n > 0 && !(ev.time > events[n - 1].time)) {
            throw ValidationError("event times must be strictly increasing");
        }
    }
}

// --- simulation and integrals ---------------------------------------------

MppPath simulate_path(const CompensatorSpec& spec, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    MppPath path;
    path.horizon = spec.horizon();
    const double total = spec.A(spec.horizon());
    double gamma = 0.0;
    while (true) {
        gamma += -std::log1p(-uniform01(rng));
        if (gamma > total) {
            break;
        }
        const double t = spec.clock().generalized_inverse(gamma);
        const auto phi = spec.phi_at(t);
        const double u = uniform01(rng);
        double cum = 0.0;
        std::size_t mark = phi.size() - 1;
        for (std::size_t e = 0; e < phi.size(); ++e) {
            cum += phi[e];
            if (u < cum) {
                mark = e;
                break;
            }
        }
        while (phi[mark] == 0.0 && mark > 0) {
            --mark;
        }
        if (!path.events.empty() && !(t > path.events.back().time)) {
            continue; // coincident times have probability zero; drop the rounding artefact
        }
        path.events.push_back(Event{t, mark});
    }
    return path;
}

double integral_p(const MppPath& path, const PredictableField& h, std::size_t marks) {
    CompensatedSum acc;
    std::vector<int> counts(marks, 0);
    for (const auto& ev : path.events) {
        acc += h(ev.time, counts, ev.mark);
        ++counts[ev.mark];
    }
    return acc.value();
}

double integrate_clock(const CompensatorSpec& spec, const MppPath& path, const ClockIntegrand& g,
                       double quad_step, std::span<const double> extra_breaks) {
    if (!(quad_step > 0.0)) {
        throw ValidationError("quad_step must be positive");
    }
    const double horizon = spec.horizon();
    std::vector<double> xs = spec.knots();
    for (const auto& ev : path.events) {
        xs.push_back(ev.time);
    }
    xs.insert(xs.end(), extra_breaks.begin(), extra_breaks.end());
    xs = merge_sorted(std::move(xs), 0.0, horizon);

    const std::size_t marks = spec.mark_count();
    std::vector<int> counts(marks, 0);
    std::size_t next_event = 0;
    CompensatedSum acc;
    for (std::size_t j = 0; j + 1 < xs.size(); ++j) {
        const double a = xs[j];
        const double b = xs[j + 1];
        // State on (a, b] is the count of events at or before a.
        while (next_event < path.events.size() && path.events[next_event].time <= a) {
            ++counts[path.events[next_event].mark];
            ++next_event;
        }
        const double mass = spec.A(b) - spec.A(a);
        if (!(mass > 0.0)) {
            continue;
        }
        const double slope = mass / (b - a);
        const auto phi = spec.phi_at(0.5 * (a + b));
        const auto panels = static_cast<std::size_t>(std::ceil((b - a) / quad_step - 1e-12));
        const std::size_t n_panels = std::max<std::size_t>(1, panels);
        const double width = (b - a) / static_cast<double>(n_panels);
        for (std::size_t k = 0; k < n_panels; ++k) {
            const double lo = a + width * static_cast<double>(k);
            const double mid = lo + 0.5 * width;
            for (std::size_t q = 0; q < GaussRule::size; ++q) {
                const double t = mid + 0.5 * width * GaussRule::nodes[q];
                acc += 0.5 * width * GaussRule::weights[q] * slope * g(t, counts, phi);
            }
        }
    }
    return acc.value();
}

double integral_nu(const CompensatorSpec& spec, const PredictableField& h, const MppPath& path,
                   double quad_step, std::span<const double> extra_breaks) {
    const std::size_t marks = spec.mark_count();
    return integrate_clock(
        spec, path,
        [&](double t, std::span<const int> counts, std::span<const double> phi) {
            double s = 0.0;
            for (std::size_t e = 0; e < marks; ++e) {
                if (phi[e] > 0.0) {
                    s += phi[e] * h(t, counts, e);
                }
            }
            return s;
        },
        quad_step, extra_breaks);
}

double integral_q(const CompensatorSpec& spec, const MppPath& path, const PredictableField& h,
                  double quad_step, std::span<const double> extra_breaks) {
    if (!(quad_step > 0.0)) {
        throw ValidationError("quad_step must be positive");
    }
    return integral_p(path, h, spec.mark_count()) - integral_nu(spec, h, path, quad_step, extra_breaks);
}

} // namespace mppbsde
