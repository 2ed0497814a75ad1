#include "mppbsde/runner.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mppbsde/errors.hpp"
#include "mppbsde/parallel.hpp"

namespace mppbsde {

using nlohmann::json;

namespace {

class Stopwatch {
public:
    [[nodiscard]] double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void say(const RunContext& ctx, const std::string& msg) {
    if (ctx.log) {
        ctx.log(msg);
    }
}

RunManifest start_manifest(const std::string& command, const Scenario* s) {
    RunManifest m;
    m.command = command;
    m.tool_version = tool_version();
    if (s != nullptr) {
        m.scenario_hash = sha256_hex(to_json(*s).dump());
    }
    return m;
}

void finish_manifest(RunManifest& m, const RunContext& ctx, const Stopwatch& clock) {
    m.wall_clock = clock.seconds();
    write_json(ctx.out_dir / "manifest.json", m.to_json());
}

void prepare(const RunContext& ctx) {
    std::filesystem::create_directories(ctx.out_dir);
}

Driver offset_driver(const Driver& d, double c) {
    GrowthParams g = d.growth();
    std::vector<double> alpha = g.alpha.values();
    for (double& a : alpha) {
        a += std::abs(c);
    }
    g.alpha = StepFunction(g.alpha.starts(), alpha);
    std::ostringstream name;
    name << d.name() << "+" << c;
    return Driver(
        name.str(),
        [d, c](double t, double y, std::span<const double> u, std::span<const double> phi) {
            return d(t, y, u, phi) + c;
        },
        d.convexity(), g);
}

TerminalCondition offset_terminal(const TerminalCondition& xi, double c) {
    TerminalCondition out = xi;
    out.g = [g = xi.g, c](std::span<const int> n) { return g(n) + c; };
    if (xi.bound) {
        out.bound = *xi.bound + std::abs(c);
    }
    return out;
}

double param_number(const json& params, const char* key, double fallback) {
    if (!params.contains(key)) {
        return fallback;
    }
    if (!params.at(key).is_number()) {
        throw ValidationError(std::string("/params/") + key + ": expected a number");
    }
    return params.at(key).get<double>();
}

std::vector<double> param_list(const json& params, const char* key, std::vector<double> fallback) {
    if (!params.contains(key)) {
        return fallback;
    }
    const auto& v = params.at(key);
    if (!v.is_array() || v.empty()) {
        throw ValidationError(std::string("/params/") + key + ": expected a nonempty array of numbers");
    }
    std::vector<double> out;
    for (const auto& x : v) {
        if (!x.is_number()) {
            throw ValidationError(std::string("/params/") + key + ": expected numbers");
        }
        out.push_back(x.get<double>());
    }
    return out;
}

json report_json(const CheckReport& r, bool expect_fail) {
    json doc;
    doc["name"] = r.name;
    doc["pass"] = r.pass;
    doc["expect_fail"] = expect_fail;
    doc["worst_margin"] = std::isfinite(r.worst_margin) ? json(r.worst_margin) : json(format_double(r.worst_margin));
    doc["tolerance"] = r.tolerance;
    if (r.layer) {
        doc["layer"] = *r.layer;
    }
    if (r.state) {
        doc["state"] = *r.state;
    }
    doc["params"] = r.params;
    doc["curves"] = r.curves;
    doc["note"] = r.note;
    return doc;
}

CheckReport run_check(const std::string& check, const Scenario& s, const json& params, std::optional<double> tolerance) {
    const auto spec = s.spec();
    const Driver d = s.make_driver();
    const TerminalCondition xi = s.make_terminal();
    const SolverOptions opts = s.solver_options();
    auto growth_for = [&] {
        GrowthParams g = d.growth();
        if (params.contains("beta_override")) {
            g.beta = param_number(params, "beta_override", g.beta);
        }
        return g;
    };

    if (check == "apriori_y") {
        const ValueField field = solve_backward(spec, d, xi, s.time_grid(), opts);
        return check_apriori_y(field, xi, growth_for(), param_list(params, "p", {1.0, 2.0}), tolerance.value_or(1e-8));
    }
    if (check == "submartingale") {
        const ValueField field = solve_backward(spec, d, xi, s.time_grid(), opts);
        return check_submartingale(field, growth_for(), param_number(params, "p", 1.0), tolerance.value_or(1e-8));
    }
    if (check == "apriori_u") {
        std::vector<ValueField> fields;
        for (double n : param_list(params, "grids", {1000.0, 10000.0})) {
            fields.push_back(solve_backward(spec, d, xi, s.time_grid(static_cast<std::size_t>(n)), opts));
        }
        UFunctionalPlan plan;
        plan.lambda = d.growth().lambda;
        plan.mc_paths = static_cast<std::size_t>(param_number(params, "mc_paths", 4000));
        plan.p_list.clear();
        for (double p : param_list(params, "p", {1, 2})) {
            plan.p_list.push_back(static_cast<int>(p));
        }
        plan.q_list.clear();
        for (double q : param_list(params, "q", {1, 2})) {
            plan.q_list.push_back(static_cast<int>(q));
        }
        return check_apriori_u(fields, plan, tolerance.value_or(0.05));
    }
    if (check == "comparison") {
        const double shift = param_number(params, "driver_shift", 0.1);
        const double terminal_shift = param_number(params, "terminal_shift", 0.0);
        ComparisonOptions co;
        co.tol = tolerance.value_or(1e-10);
        co.solver = opts;
        if (params.contains("max_gap")) {
            co.max_gap = param_number(params, "max_gap", 0.0);
        }
        return check_comparison(spec, {d, xi}, {offset_driver(d, shift), offset_terminal(xi, terminal_shift)},
                                s.time_grid(), co);
    }
    if (check == "monotone_regularization") {
        RegularizationOptions ro;
        ro.tol = tolerance.value_or(1e-11);
        ro.solver = opts;
        return check_monotone_regularization(spec, d, xi, param_list(params, "n", {2, 4, 8, 16}), s.time_grid(), ro);
    }
    if (check == "terminal_truncation") {
        return check_terminal_truncation(spec, d, xi, param_list(params, "n", {1, 2, 4, 8, 16}), s.time_grid(), opts);
    }
    if (check == "L_lipschitz") {
        const auto loss = s.make_loss();
        if (!loss) {
            throw ValidationError("/loss: L_lipschitz needs a loss block");
        }
        return check_L_lipschitz(*loss, static_cast<std::size_t>(param_number(params, "trials", 1000)),
                                 static_cast<std::uint64_t>(param_number(params, "seed", 1)),
                                 tolerance.value_or(1e-10));
    }
    if (check == "skorokhod" || check == "picard") {
        const auto loss = s.make_loss();
        if (!loss) {
            throw ValidationError("/loss: " + check + " needs a loss block");
        }
        const TimeGrid grid = s.time_grid();
        ReflectOptions ro;
        ro.picard_tol = s.run.picard_tol;
        ro.max_iter = s.run.max_iter;
        ro.solver = opts;
        ReflectedSolution sol = solve_reflected(spec, d, *loss, xi, grid, ro);
        CheckReport r;
        r.name = check;
        r.tolerance = tolerance.value_or(1e-8);
        if (check == "skorokhod") {
            const double perturb = param_number(params, "perturb_k", 0.0);
            for (std::size_t i = 0; i < sol.K.size(); ++i) {
                sol.K[i] += perturb * grid.time(i);
            }
            const LawTable laws = forward_law(spec, grid, opts);
            const auto sk = skorokhod_report(sol, *loss, laws, r.tolerance);
            r.observe(-sk.min_margin);
            r.observe(std::abs(sk.flatness) / std::max(1.0, sk.k_terminal));
            r.pass = sk.monotone_ok;
            r.params["min_margin"] = sk.min_margin;
            r.params["flatness"] = sk.flatness;
            r.params["K_T"] = sk.k_terminal;
            r.curves["K"] = sol.K;
            r.curves["margin"] = sk.margins;
        } else {
            r.observe(0.0);
            for (std::size_t k = 1; k < sol.picard_trace.size(); ++k) {
                if (!(sol.picard_trace[k] < sol.picard_trace[k - 1])) {
                    r.pass = false;
                    r.note = "Picard distances do not decrease strictly";
                }
            }
            if (!sol.converged) {
                r.pass = false;
                r.note = "Picard iteration did not converge";
            }
            r.params["iterations"] = static_cast<double>(sol.picard_trace.size());
            r.params["h"] = sol.horizon.h;
            r.params["windows"] = static_cast<double>(sol.horizon.windows);
            r.params["guaranteed"] = sol.horizon.guaranteed ? 1.0 : 0.0;
            r.curves["trace"] = sol.picard_trace;
        }
        r.finish();
        return r;
    }
    if (check == "structure") {
        SamplePlan plan;
        plan.samples = static_cast<std::size_t>(param_number(params, "samples", 2000));
        const auto rep = verify_structure(d, spec, plan, tolerance.value_or(1e-9));
        CheckReport r;
        r.name = check;
        r.tolerance = rep.tolerance;
        r.observe(0.0);
        for (const auto& v : rep.verdicts) {
            r.params[v.assumption + "_violations"] = static_cast<double>(v.violations);
            r.pass = r.pass && v.pass;
        }
        r.finish();
        return r;
    }
    if (check == "loss") {
        const auto loss = s.make_loss();
        if (!loss) {
            throw ValidationError("/loss: loss check needs a loss block");
        }
        const auto rep = validate_loss(*loss, {}, tolerance.value_or(1e-9));
        CheckReport r;
        r.name = check;
        r.tolerance = rep.tolerance;
        r.observe(rep.worst_margin);
        r.pass = rep.pass;
        r.params["monotonicity_violations"] = static_cast<double>(rep.monotonicity_violations);
        r.params["lipschitz_violations"] = static_cast<double>(rep.lipschitz_violations);
        r.note = rep.worst_sample;
        return r;
    }
    throw ValidationError("unknown check '" + check + "'");
}

} // namespace

ConvergenceStudy convergence_study(const Scenario& s, const std::vector<std::size_t>& grids, std::size_t jobs) {
    if (grids.empty()) {
        throw ValidationError("convergence needs at least one grid");
    }
    const auto spec = s.spec();
    const Driver d = s.make_driver();
    const TerminalCondition xi = s.make_terminal();
    const auto oracle = oracle_for(d, spec, xi);
    std::optional<double> exact;
    if (oracle) {
        const std::vector<int> origin(spec.mark_count(), 0);
        exact = (*oracle)(0.0, origin);
    }
    ConvergenceStudy study;
    study.rows = parallel_map(grids.size(), jobs, [&](std::size_t k) {
        const TimeGrid grid = s.time_grid(grids[k]);
        ConvergenceRow row;
        row.steps = grid.steps();
        row.max_dA = grid.max_dA();
        row.y0 = solve_backward(spec, d, xi, grid, s.solver_options()).y0();
        row.oracle = exact;
        if (exact) {
            row.error = std::abs(row.y0 - *exact);
        }
        return row;
    });
    if (!exact) {
        return study;
    }
    study.exact = true;
    std::vector<std::pair<double, double>> pts;
    for (const auto& r : study.rows) {
        if (*r.error > ConvergenceStudy::exact_floor) {
            study.exact = false;
        }
        if (*r.error > 0.0 && r.max_dA > 0.0) {
            pts.emplace_back(std::log(r.max_dA), std::log(*r.error));
        }
    }
    if (!study.exact && pts.size() >= 2) {
        double mx = 0.0;
        double my = 0.0;
        for (const auto& [x, y] : pts) {
            mx += x;
            my += y;
        }
        mx /= static_cast<double>(pts.size());
        my /= static_cast<double>(pts.size());
        double sxy = 0.0;
        double sxx = 0.0;
        for (const auto& [x, y] : pts) {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
        }
        if (sxx > 0.0) {
            study.order = sxy / sxx;
        }
    }
    return study;
}

SuiteEntry suite_entry(const json& item, const std::filesystem::path& base_dir, std::size_t index) {
    const std::string ptr = "/checks/" + std::to_string(index);
    if (!item.is_object()) {
        throw ValidationError(ptr + ": expected an object");
    }
    for (const auto& kv : item.items()) {
        static const char* allowed[] = {"check", "scenario", "params", "tolerance", "expect_fail", "name"};
        bool known = false;
        for (const char* k : allowed) {
            known = known || kv.key() == k;
        }
        if (!known) {
            throw ValidationError(ptr + "/" + kv.key() + ": unknown key");
        }
    }
    if (!item.contains("check") || !item.at("check").is_string()) {
        throw ValidationError(ptr + "/check: expected a check name");
    }
    if (!item.contains("scenario")) {
        throw ValidationError(ptr + "/scenario: missing");
    }
    const std::string check = item.at("check").get<std::string>();
    Scenario s;
    try {
        s = item.at("scenario").is_string() ? load_scenario(base_dir / item.at("scenario").get<std::string>())
                                            : parse_scenario(item.at("scenario"));
    } catch (const ValidationError& e) {
        throw ValidationError(ptr + "/scenario: " + e.what());
    }
    const json params = item.value("params", json::object());
    if (!params.is_object()) {
        throw ValidationError(ptr + "/params: expected an object");
    }
    std::optional<double> tolerance;
    if (item.contains("tolerance")) {
        if (!item.at("tolerance").is_number()) {
            throw ValidationError(ptr + "/tolerance: expected a number");
        }
        tolerance = item.at("tolerance").get<double>();
    }
    SuiteEntry entry;
    entry.name = item.value("name", check + "@" + s.name);
    entry.expect_fail = item.value("expect_fail", false);
    entry.run = [check, s, params, tolerance] { return run_check(check, s, params, tolerance); };
    return entry;
}

RunManifest cmd_simulate(const Scenario& s, const RunContext& ctx) {
    const Stopwatch clock;
    prepare(ctx);
    RunManifest m = start_manifest("simulate", &s);
    const auto spec = s.spec();
    const std::size_t paths = s.run.paths == 0 ? 1000 : s.run.paths;
    const std::size_t marks = spec.mark_count();
    const std::uint64_t base = s.run.seed + ctx.seed_offset;
    say(ctx, "simulating " + std::to_string(paths) + " paths");
    const auto all = parallel_map(paths, ctx.jobs, [&](std::size_t k) { return simulate_path(spec, base + k); });
    m.seeds = {base, base + paths - 1};

    CsvWriter csv(ctx.out_dir / "paths.csv", {"path", "event_time", "mark_index"});
    std::vector<double> sum(marks, 0.0);
    std::vector<double> sum_sq(marks, 0.0);
    std::size_t events = 0;
    for (std::size_t k = 0; k < all.size(); ++k) {
        std::vector<double> counts(marks, 0.0);
        for (const auto& ev : all[k].events) {
            csv << static_cast<long long>(k) << ev.time << static_cast<long long>(ev.mark);
            csv.end_row();
            counts[ev.mark] += 1.0;
            ++events;
        }
        for (std::size_t e = 0; e < marks; ++e) {
            sum[e] += counts[e];
            sum_sq[e] += counts[e] * counts[e];
        }
    }
    const auto expected = spec.mark_means(0.0, spec.horizon());
    json stats;
    stats["paths"] = paths;
    stats["events"] = events;
    stats["marks"] = json::array();
    bool within = true;
    const double n = static_cast<double>(paths);
    for (std::size_t e = 0; e < marks; ++e) {
        const double mean = sum[e] / n;
        const double var = paths > 1 ? (sum_sq[e] - n * mean * mean) / (n - 1.0) : 0.0;
        const double stderr_ = std::sqrt(std::max(var, 0.0) / n);
        const double z = stderr_ > 0.0 ? (mean - expected[e]) / stderr_ : (mean == expected[e] ? 0.0 : INFINITY);
        within = within && std::abs(z) <= 4.0;
        stats["marks"].push_back({{"id", spec.marks().ids()[e]},
                                  {"empirical_mean_count", mean},
                                  {"compensator_mean", expected[e]},
                                  {"stderr", stderr_},
                                  {"z", std::isfinite(z) ? json(z) : json("inf")}});
    }
    stats["within_4_sigma"] = within;
    write_json(ctx.out_dir / "stats.json", stats);
    m.add_file(ctx.out_dir, "paths.csv");
    m.add_file(ctx.out_dir, "stats.json");
    m.summary = {{"events", events}, {"within_4_sigma", within}};
    finish_manifest(m, ctx, clock);
    return m;
}

RunManifest cmd_solve(const Scenario& s, const RunContext& ctx) {
    const Stopwatch clock;
    prepare(ctx);
    RunManifest m = start_manifest("solve", &s);
    const auto spec = s.spec();
    const Driver d = s.make_driver();
    const TerminalCondition xi = s.make_terminal();
    const TimeGrid grid = s.time_grid();
    say(ctx, "solving on " + std::to_string(grid.steps()) + " steps");
    const ValueField field = solve_backward(spec, d, xi, grid, s.solver_options());
    write_value_field(ctx.out_dir / "value_field.csv", field);
    m.add_file(ctx.out_dir, "value_field.csv");
    m.summary["y0"] = field.y0();
    m.summary["grid_N"] = grid.steps();
    m.summary["max_kernel_tail"] = field.model->max_kernel_tail();
    m.summary["state_tail"] = field.model->state_tail();

    if (const auto oracle = oracle_for(d, spec, xi)) {
        const auto& model = *field.model;
        double worst = 0.0;
        const std::vector<int> origin(spec.mark_count(), 0);
        const double y0_exact = (*oracle)(0.0, origin);
        for (std::size_t s_idx = 0; s_idx < model.states(); ++s_idx) {
            worst = std::max(worst, std::abs(field.y_at(0, s_idx) - (*oracle)(0.0, model.lattice().counts(s_idx))));
        }
        json oj = {{"oracle_y0", y0_exact}, {"y0", field.y0()}, {"diff", std::abs(field.y0() - y0_exact)},
                   {"max_diff_layer0", worst}};
        write_json(ctx.out_dir / "oracle.json", oj);
        m.add_file(ctx.out_dir, "oracle.json");
        m.summary["oracle_diff"] = std::abs(field.y0() - y0_exact);
    }
    if (s.run.paths > 0) {
        EnsembleSpec ens;
        ens.paths = s.run.paths;
        ens.seed_offset = s.run.seed + ctx.seed_offset;
        ens.jobs = ctx.jobs;
        m.seeds = {ens.seed_offset, ens.seed_offset + ens.paths - 1};
        say(ctx, "forward residual over " + std::to_string(ens.paths) + " paths");
        const auto stats = forward_residual(field, spec, d, xi, ens, s.run.quad_step);
        write_json(ctx.out_dir / "residual.json", residual_json(stats));
        m.add_file(ctx.out_dir, "residual.json");
        m.summary["residual_mean_abs"] = stats.mean_abs;
    }
    finish_manifest(m, ctx, clock);
    return m;
}

RunManifest cmd_reflect(const Scenario& s, const RunContext& ctx) {
    const auto loss = s.make_loss();
    if (!loss) {
        throw ValidationError("/loss: scenario has no loss block; reflect needs one");
    }
    const Stopwatch clock;
    prepare(ctx);
    RunManifest m = start_manifest("reflect", &s);
    const auto spec = s.spec();
    const Driver d = s.make_driver();
    const TimeGrid grid = s.time_grid();
    ReflectOptions ro;
    ro.picard_tol = s.run.picard_tol;
    ro.max_iter = s.run.max_iter;
    ro.solver = s.solver_options();
    const double tol = ctx.tol.value_or(s.run.tol);
    const auto sol = solve_reflected(spec, d, *loss, s.make_terminal(), grid, ro);
    const LawTable laws = forward_law(spec, grid, ro.solver);
    const auto sk = skorokhod_report(sol, *loss, laws, tol);
    write_reflection(ctx.out_dir / "reflection.csv", sol);
    write_json(ctx.out_dir / "picard.json", sol.picard_trace);
    json report = {{"converged", sol.converged},
                   {"iterations", sol.picard_trace.size()},
                   {"y0", sol.Y_field.y0()},
                   {"horizon",
                    {{"h", sol.horizon.h},
                     {"h_grid", sol.horizon.h_grid},
                     {"windows", sol.horizon.windows},
                     {"guaranteed", sol.horizon.guaranteed}}},
                   {"skorokhod",
                    {{"min_margin", sk.min_margin},
                     {"flatness", sk.flatness},
                     {"K_T", sk.k_terminal},
                     {"tolerance", tol},
                     {"pass", sk.pass()}}}};
    write_json(ctx.out_dir / "report.json", report);
    for (const char* f : {"reflection.csv", "picard.json", "report.json"}) {
        m.add_file(ctx.out_dir, f);
    }
    m.summary = report;
    m.exit_code = (sol.converged && sk.pass()) ? 0 : 1;
    finish_manifest(m, ctx, clock);
    return m;
}

RunManifest cmd_verify(const json& suite, const std::filesystem::path& base_dir, const RunContext& ctx) {
    if (!suite.is_object() || !suite.contains("checks") || !suite.at("checks").is_array()) {
        throw ValidationError("/checks: expected an array of checks");
    }
    for (const auto& kv : suite.items()) {
        if (kv.key() != "checks" && kv.key() != "name") {
            throw ValidationError("/" + kv.key() + ": unknown key");
        }
    }
    if (suite.at("checks").empty()) {
        throw ValidationError("no checks");
    }
    std::vector<SuiteEntry> entries;
    for (std::size_t k = 0; k < suite.at("checks").size(); ++k) {
        entries.push_back(suite_entry(suite.at("checks")[k], base_dir, k));
    }
    const Stopwatch clock;
    prepare(ctx);
    RunManifest m = start_manifest("verify", nullptr);
    m.scenario_hash = sha256_hex(suite.dump());
    say(ctx, "running " + std::to_string(entries.size()) + " checks");
    const auto results = run_suite(entries, ctx.jobs);
    CsvWriter csv(ctx.out_dir / "summary.csv",
                  {"name", "pass", "expect_fail", "as_expected", "worst_margin", "tolerance", "note"});
    bool all_ok = true;
    json rows = json::array();
    for (const auto& r : results) {
        const std::string file = "check_" + r.report.name + ".json";
        std::string safe = file;
        for (char& c : safe) {
            if (c == '/' || c == ' ' || c == ':') {
                c = '_';
            }
        }
        write_json(ctx.out_dir / safe, report_json(r.report, r.expect_fail));
        m.add_file(ctx.out_dir, safe);
        csv << r.report.name << std::string(r.report.pass ? "true" : "false")
            << std::string(r.expect_fail ? "true" : "false") << std::string(r.as_expected() ? "true" : "false")
            << r.report.worst_margin << r.report.tolerance << r.report.note;
        csv.end_row();
        all_ok = all_ok && r.as_expected();
        rows.push_back({{"name", r.report.name},
                        {"pass", r.report.pass},
                        {"expect_fail", r.expect_fail},
                        {"as_expected", r.as_expected()}});
        say(ctx, r.report.name + (r.as_expected() ? " ok" : " UNEXPECTED"));
    }
    m.add_file(ctx.out_dir, "summary.csv");
    m.summary = {{"checks", rows}, {"all_as_expected", all_ok}};
    m.exit_code = all_ok ? 0 : 1;
    finish_manifest(m, ctx, clock);
    return m;
}

RunManifest cmd_verify(const std::filesystem::path& suite_path, const RunContext& ctx) {
    std::ifstream in(suite_path);
    if (!in) {
        throw ValidationError("cannot open suite manifest '" + suite_path.string() + "'");
    }
    json suite;
    try {
        suite = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError(suite_path.string() + ": " + e.what());
    }
    return cmd_verify(suite, suite_path.parent_path(), ctx);
}

RunManifest cmd_convergence(const Scenario& s, const std::vector<std::size_t>& grids, const RunContext& ctx) {
    const Stopwatch clock;
    prepare(ctx);
    RunManifest m = start_manifest("convergence", &s);
    const auto study = convergence_study(s, grids, ctx.jobs);
    CsvWriter csv(ctx.out_dir / "convergence.csv", {"steps", "max_dA", "y0", "oracle", "error"});
    json rows = json::array();
    for (const auto& r : study.rows) {
        csv << static_cast<long long>(r.steps) << r.max_dA << r.y0;
        if (r.oracle) {
            csv << *r.oracle << *r.error;
        } else {
            csv << std::string() << std::string();
        }
        csv.end_row();
        rows.push_back({{"steps", r.steps}, {"max_dA", r.max_dA}, {"y0", r.y0},
                        {"error", r.error ? json(*r.error) : json(nullptr)}});
    }
    json summary = {{"rows", rows}, {"exact", study.exact}};
    summary["order"] = study.order ? json(*study.order) : json(nullptr);
    bool ok = true;
    if (study.order) {
        ok = *study.order >= 0.9;
    }
    summary["order_ok"] = ok;
    write_json(ctx.out_dir / "summary.json", summary);
    m.add_file(ctx.out_dir, "convergence.csv");
    m.add_file(ctx.out_dir, "summary.json");
    m.summary = summary;
    m.exit_code = ok ? 0 : 1;
    finish_manifest(m, ctx, clock);
    return m;
}

} // namespace mppbsde
