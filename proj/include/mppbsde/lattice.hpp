#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "mppbsde/drivers.hpp"
#include "mppbsde/mpp.hpp"

namespace mppbsde {

class TimeGrid {
public:
    // `steps` equal steps on [0, T], refined by every breakpoint of A and phi.
    static TimeGrid uniform(const CompensatorSpec& spec, std::size_t steps);
    static TimeGrid from_times(const CompensatorSpec& spec, std::vector<double> times);

    [[nodiscard]] std::size_t steps() const noexcept { return times_.size() - 1; }
    [[nodiscard]] const std::vector<double>& times() const noexcept { return times_; }
    [[nodiscard]] double time(std::size_t i) const { return times_[i]; }
    [[nodiscard]] double dA(std::size_t i) const { return dA_[i]; }
    [[nodiscard]] double A(std::size_t i) const { return A_[i]; }
    [[nodiscard]] double max_dA() const noexcept;
    // Layer i with t_i < t <= t_{i+1}; 0 for t <= 0.
    [[nodiscard]] std::size_t layer_of(double t) const;
    // Layer i with t_i <= t < t_{i+1}; last layer for t >= T.
    [[nodiscard]] std::size_t layer_at(double t) const;

private:
    TimeGrid(std::vector<double> times, std::vector<double> a_values);

    std::vector<double> times_;
    std::vector<double> A_;
    std::vector<double> dA_;
};

// Count vectors n in N^K with |n| <= n_max, ordered by total then lexicographically.
class StateLattice {
public:
    StateLattice(std::size_t marks, int n_max);

    [[nodiscard]] std::size_t size() const noexcept { return states_.size(); }
    [[nodiscard]] std::size_t marks() const noexcept { return marks_; }
    [[nodiscard]] int n_max() const noexcept { return n_max_; }
    [[nodiscard]] std::span<const int> counts(std::size_t s) const { return states_[s]; }
    [[nodiscard]] int total(std::size_t s) const;
    [[nodiscard]] std::optional<std::size_t> index_of(std::span<const int> counts) const;
    // State after one jump of mark e; nullopt at the cap |n| = n_max.
    [[nodiscard]] std::optional<std::size_t> successor(std::size_t s, std::size_t e) const {
        return jump_[s * marks_ + e];
    }

private:
    std::size_t marks_;
    int n_max_;
    std::vector<std::vector<int>> states_;
    std::vector<std::size_t> offset_;               // first index of each total
    std::vector<std::vector<std::size_t>> choose_;  // compositions of m into p parts
    std::vector<std::optional<std::size_t>> jump_;
};

// One-step law of the count increment over [t_i, t_{i+1}].
struct TransitionKernel {
    std::vector<std::vector<int>> increments; // sorted by total, then lexicographically
    std::vector<double> probs;                // exact Poisson-multinomial masses
    double tail_mass = 0.0;                   // 1 - sum(probs)
    unsigned j_max = 0;
};

// Truncates the total jump count at j_max, raising j_max (up to j_ceiling) until the
// discarded Poisson tail is below tail_tol.
TransitionKernel transition_kernel(const CompensatorSpec& spec, double t0, double t1, unsigned j_max,
                                   double tail_tol, unsigned j_ceiling = 64);

enum class Scheme {
    explicit_euler, // y = E_i[y_{i+1}] + f(t_i, y_hat, u) dA_i
    exponential,    // y = (1/lam) log E_i[e^{lam y_{i+1}}] + (f - j_lam(u)/lam) dA_i
};

struct SolverOptions {
    bool implicit = false;
    double picard_tol = 1e-12; // relative tolerance of the implicit y-step
    unsigned j_max = 2;
    double tail_tol = 1e-12;
    int n_max = 30;
    double state_tail_tol = 1e-10;
    Scheme scheme = Scheme::explicit_euler;
    std::size_t max_fixed_point_iter = 10000;
};

// Time grid, state lattice and per-layer transition kernels. Kernels are renormalized
// to conditional laws given at most j_max jumps; jumps that would leave the lattice
// are absorbed at the current state.
class LatticeModel {
public:
    LatticeModel(const CompensatorSpec& spec, TimeGrid grid, const SolverOptions& opts);

    [[nodiscard]] const CompensatorSpec& spec() const noexcept { return spec_; }
    [[nodiscard]] const TimeGrid& grid() const noexcept { return grid_; }
    [[nodiscard]] const StateLattice& lattice() const noexcept { return lattice_; }
    [[nodiscard]] std::size_t steps() const noexcept { return grid_.steps(); }
    [[nodiscard]] std::size_t states() const noexcept { return lattice_.size(); }
    [[nodiscard]] std::size_t marks() const noexcept { return lattice_.marks(); }
    [[nodiscard]] std::span<const double> phi(std::size_t i) const { return phi_[i]; }
    [[nodiscard]] std::span<const double> probs(std::size_t i) const { return probs_[i]; }
    [[nodiscard]] std::size_t target(std::size_t s, std::size_t k) const { return target_[s * catalog_ + k]; }
    [[nodiscard]] double max_kernel_tail() const noexcept { return max_kernel_tail_; }
    // P(N_T total > n_max) under the exact law.
    [[nodiscard]] double state_tail() const noexcept { return state_tail_; }

    // E[next(N_{t_{i+1}}) | N_{t_i} = state s].
    [[nodiscard]] double expect(std::size_t i, std::size_t s, std::span<const double> next) const;
    // log E[exp(log_next(N_{t_{i+1}})) | N_{t_i} = s].
    [[nodiscard]] double log_expect(std::size_t i, std::size_t s, std::span<const double> log_next) const;

private:
    CompensatorSpec spec_;
    TimeGrid grid_;
    StateLattice lattice_;
    std::size_t catalog_ = 0;
    std::vector<std::vector<double>> probs_;
    std::vector<std::vector<double>> phi_;
    std::vector<std::size_t> target_;
    double max_kernel_tail_ = 0.0;
    double state_tail_ = 0.0;
};

// y(i, n) and u(i, n, e) on the lattice.
struct ValueField {
    std::shared_ptr<const LatticeModel> model;
    std::vector<double> y; // (steps + 1) x states
    std::vector<double> u; // (steps + 1) x states x marks; zero on the terminal layer

    [[nodiscard]] const TimeGrid& grid() const { return model->grid(); }
    [[nodiscard]] const StateLattice& lattice() const { return model->lattice(); }
    [[nodiscard]] double y_at(std::size_t i, std::size_t s) const { return y[i * model->states() + s]; }
    [[nodiscard]] std::span<const double> u_at(std::size_t i, std::size_t s) const {
        return std::span<const double>(u).subspan((i * model->states() + s) * model->marks(), model->marks());
    }
    // Value at time 0 in the empty state.
    [[nodiscard]] double y0() const { return y.front(); }
};

ValueField solve_backward(const CompensatorSpec& spec, const Driver& d, const TerminalCondition& xi,
                          const TimeGrid& grid, const SolverOptions& opts = {});

// Same, on a prebuilt model.
ValueField solve_backward(std::shared_ptr<const LatticeModel> model, const Driver& d,
                          const TerminalCondition& xi, const SolverOptions& opts = {});

// Driver evaluated with its y-argument frozen to a lattice field (one value per node).
ValueField solve_backward_frozen(std::shared_ptr<const LatticeModel> model, const Driver& d,
                                 const TerminalCondition& xi, std::span<const double> frozen_y,
                                 const SolverOptions& opts = {});

// E_t[g(N_T)] given N_t = counts, with per-mark Poisson increments whose means are
// scaled by intensity_scale (exact up to a 1e-12 tail).
double closed_form_zero_driver(const CompensatorSpec& spec, const TerminalCondition& xi, double t,
                               std::span<const int> counts, double intensity_scale = 1.0);

// (1/lam) log E_t[exp(lam g(N_T))].
double entropic_closed_form(const CompensatorSpec& spec, const TerminalCondition& xi, double lam, double t,
                            std::span<const int> counts);

// Registered closed forms for catalog drivers (zero, constant, entropic, neg_entropic,
// affine_jump); nullopt when the driver has none.
using OracleFn = std::function<double(double t, std::span<const int> counts)>;
std::optional<OracleFn> oracle_for(const Driver& d, const CompensatorSpec& spec, const TerminalCondition& xi);

// Exact field from an oracle evaluated at the grid nodes.
ValueField field_from_oracle(std::shared_ptr<const LatticeModel> model, const OracleFn& oracle);

struct TrajectoryPoint {
    double t = 0.0;
    double y = 0.0;
    std::vector<int> counts;
    UVector u;
    bool after_jump = false;
};

struct Trajectory {
    std::vector<TrajectoryPoint> points;
};

// (Y, U) along one path. Between grid points Y follows y(i+1, N_t) plus a linearly
// vanishing correction, so Y jumps only at events and each jump equals u.
class FieldPath {
public:
    FieldPath(const ValueField& field, const MppPath& path);

    [[nodiscard]] double y(double t) const;
    [[nodiscard]] double u(double t, std::span<const int> counts_before, std::size_t e) const;

private:
    [[nodiscard]] std::size_t state_of(std::span<const int> counts) const;

    const ValueField& field_;
    const MppPath& path_;
    std::vector<std::size_t> state_at_layer_; // state index at each grid time
};

Trajectory sample_trajectory(const ValueField& field, const MppPath& path);

// A candidate solution restricted to one path.
struct PathSolution {
    std::function<double(double)> y;
    PredictableField u;
    std::vector<double> breaks;
};

// The path must outlive the returned solution.
PathSolution field_path_solution(const ValueField& field, const MppPath& path);

PathSolution oracle_path_solution(const CompensatorSpec& spec, const OracleFn& oracle, const MppPath& path);

struct ResidualStats {
    double mean = 0.0;
    double mean_abs = 0.0;
    double max_abs = 0.0;
    double stddev = 0.0;
    std::size_t paths = 0;
    std::size_t grid_steps = 0;
};

struct EnsembleSpec {
    std::size_t paths = 1000;
    std::uint64_t seed_offset = 0;
    std::size_t jobs = 1;
};

// D = Y_0 - g(N_T) - int f(s, Y_s, U_s) dA_s + int int U dq, pathwise over the ensemble.
ResidualStats forward_residual(const ValueField& field, const CompensatorSpec& spec, const Driver& d,
                               const TerminalCondition& xi, const EnsembleSpec& ensemble, double quad_step);

ResidualStats forward_residual(const std::function<PathSolution(const MppPath&)>& solution,
                               const CompensatorSpec& spec, const Driver& d, const TerminalCondition& xi,
                               const EnsembleSpec& ensemble, double quad_step, std::size_t grid_steps = 0);

struct LawTable {
    std::shared_ptr<const LatticeModel> model;
    std::vector<double> mass; // (steps + 1) x states

    [[nodiscard]] double at(std::size_t i, std::size_t s) const { return mass[i * model->states() + s]; }
    [[nodiscard]] std::span<const double> layer(std::size_t i) const {
        return std::span<const double>(mass).subspan(i * model->states(), model->states());
    }
};

LawTable forward_law(std::shared_ptr<const LatticeModel> model);
LawTable forward_law(const CompensatorSpec& spec, const TimeGrid& grid, const SolverOptions& opts = {});

} // namespace mppbsde
