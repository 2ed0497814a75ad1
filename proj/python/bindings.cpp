#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mppbsde/errors.hpp"
#include "mppbsde/runner.hpp"

namespace py = pybind11;
using namespace mppbsde;

namespace {

TerminalCondition terminal_from(const py::object& g, std::size_t marks) {
    if (py::isinstance<TerminalCondition>(g)) {
        return g.cast<TerminalCondition>();
    }
    if (py::isinstance<py::str>(g)) {
        const auto text = g.cast<std::string>();
        return {compile_expression(text, marks), std::nullopt, text};
    }
    auto fn = g.cast<std::function<double(std::vector<int>)>>();
    return {[fn](std::span<const int> n) { return fn(std::vector<int>(n.begin(), n.end())); }, std::nullopt,
            "python callable"};
}

py::dict manifest_dict(const RunManifest& m) {
    return py::module_::import("json").attr("loads")(m.to_json().dump());
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Lattice BSDE solver and property checks for marked point processes";

    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

    py::class_<CompensatorSpec>(m, "CompensatorSpec")
        .def(py::init([](std::vector<std::string> marks, std::vector<std::pair<double, std::vector<double>>> phi,
                         std::vector<std::pair<double, double>> clock, double horizon) {
                 std::vector<PhiSegment> segs;
                 for (auto& [start, probs] : phi) {
                     segs.push_back({start, probs});
                 }
                 return CompensatorSpec(MarkSpace(std::move(marks)), std::move(segs), PiecewiseLinear(std::move(clock)),
                                        horizon);
             }),
             py::arg("marks"), py::arg("phi"), py::arg("clock"), py::arg("horizon"))
        .def_static("homogeneous", &CompensatorSpec::homogeneous, py::arg("rate"), py::arg("horizon"),
                    py::arg("phi") = std::vector<double>{1.0})
        .def_property_readonly("horizon", &CompensatorSpec::horizon)
        .def_property_readonly("mark_count", &CompensatorSpec::mark_count)
        .def("A", &CompensatorSpec::A)
        .def("mark_means", &CompensatorSpec::mark_means)
        .def("modulus", &CompensatorSpec::modulus);

    m.def(
        "simulate_path",
        [](const CompensatorSpec& spec, std::uint64_t seed) {
            std::vector<std::pair<double, std::size_t>> out;
            for (const auto& ev : simulate_path(spec, seed).events) {
                out.emplace_back(ev.time, ev.mark);
            }
            return out;
        },
        py::arg("spec"), py::arg("seed"), "Event list [(time, mark_index)] of one simulated path.");

    m.def("j_lambda", [](std::vector<double> u, double lam, std::vector<double> phi) { return j_lambda(u, lam, phi); });
    m.def("weighted_norm", [](std::vector<double> u, std::vector<double> phi) { return weighted_norm(u, phi); });

    py::class_<GrowthParams>(m, "GrowthParams")
        .def_property_readonly("alpha", [](const GrowthParams& g) { return g.alpha(0.0); })
        .def_readonly("beta", &GrowthParams::beta)
        .def_readonly("lambda_", &GrowthParams::lambda)
        .def_readonly("c0", &GrowthParams::c0);

    py::class_<Driver>(m, "Driver")
        .def_property_readonly("name", &Driver::name)
        .def_property_readonly("growth", &Driver::growth)
        .def("__call__", [](const Driver& d, double t, double y, std::vector<double> u, std::vector<double> phi) {
            return d(t, y, u, phi);
        });
    m.def("make_driver", &make_driver, py::arg("name"));
    m.def(
        "inf_convolution",
        [](const Driver& d, double n, double t, double y, std::vector<double> u, std::vector<double> phi) {
            return inf_convolution(d, n, t, y, u, phi).value;
        },
        py::arg("driver"), py::arg("n"), py::arg("t"), py::arg("y"), py::arg("u"), py::arg("phi"));

    py::class_<TerminalCondition>(m, "Terminal")
        .def("__call__", [](const TerminalCondition& xi, std::vector<int> n) { return xi(n); })
        .def_readonly("description", &TerminalCondition::description);
    m.def(
        "terminal", [](const py::object& g, std::size_t marks) { return terminal_from(g, marks); }, py::arg("g"),
        py::arg("marks") = 1, "Terminal condition from an expression string or a callable on the count list.");

    py::enum_<Scheme>(m, "Scheme")
        .value("explicit_euler", Scheme::explicit_euler)
        .value("exponential", Scheme::exponential);

    py::class_<ValueField>(m, "ValueField")
        .def_property_readonly("y0", &ValueField::y0)
        .def_property_readonly("steps", [](const ValueField& f) { return f.grid().steps(); })
        .def_property_readonly("states", [](const ValueField& f) { return f.model->states(); })
        .def_property_readonly("times", [](const ValueField& f) { return f.grid().times(); })
        .def("y", [](const ValueField& f, std::size_t layer, std::vector<int> counts) {
            const auto s = f.lattice().index_of(counts);
            if (!s) {
                throw ValidationError("counts outside the lattice");
            }
            return f.y_at(layer, *s);
        })
        .def("u", [](const ValueField& f, std::size_t layer, std::vector<int> counts) {
            const auto s = f.lattice().index_of(counts);
            if (!s) {
                throw ValidationError("counts outside the lattice");
            }
            const auto u = f.u_at(layer, *s);
            return std::vector<double>(u.begin(), u.end());
        });

    m.def(
        "solve",
        [](const CompensatorSpec& spec, const Driver& d, const py::object& g, std::size_t steps, Scheme scheme,
           int n_max, bool implicit) {
            SolverOptions o;
            o.scheme = scheme;
            o.n_max = n_max;
            o.implicit = implicit;
            const auto xi = terminal_from(g, spec.mark_count());
            return solve_backward(spec, d, xi, TimeGrid::uniform(spec, steps), o);
        },
        py::arg("spec"), py::arg("driver"), py::arg("terminal"), py::arg("steps") = 1000,
        py::arg("scheme") = Scheme::explicit_euler, py::arg("n_max") = 30, py::arg("implicit") = false);

    m.def(
        "closed_form_zero_driver",
        [](const CompensatorSpec& spec, const py::object& g, double t, std::vector<int> counts) {
            return closed_form_zero_driver(spec, terminal_from(g, spec.mark_count()), t, counts);
        },
        py::arg("spec"), py::arg("terminal"), py::arg("t"), py::arg("counts"));
    m.def(
        "entropic_closed_form",
        [](const CompensatorSpec& spec, const py::object& g, double lam, double t, std::vector<int> counts) {
            return entropic_closed_form(spec, terminal_from(g, spec.mark_count()), lam, t, counts);
        },
        py::arg("spec"), py::arg("terminal"), py::arg("lam"), py::arg("t"), py::arg("counts"));

    m.def(
        "forward_residual",
        [](const ValueField& field, const Driver& d, const py::object& g, std::size_t paths, std::uint64_t seed,
           double quad_step) {
            const auto& spec = field.model->spec();
            EnsembleSpec ens;
            ens.paths = paths;
            ens.seed_offset = seed;
            const auto r = forward_residual(field, spec, d, terminal_from(g, spec.mark_count()), ens, quad_step);
            return py::dict(py::arg("mean") = r.mean, py::arg("mean_abs") = r.mean_abs, py::arg("max_abs") = r.max_abs,
                            py::arg("stddev") = r.stddev, py::arg("paths") = r.paths);
        },
        py::arg("field"), py::arg("driver"), py::arg("terminal"), py::arg("paths") = 100, py::arg("seed") = 0,
        py::arg("quad_step") = 0.01);

    py::class_<LossFunction>(m, "Loss")
        .def_readonly("name", &LossFunction::name)
        .def_readonly("kappa_lower", &LossFunction::kappa_lower)
        .def_readonly("kappa_upper", &LossFunction::kappa_upper)
        .def("__call__", &LossFunction::operator());
    m.def("make_loss", &make_loss, py::arg("name"));
    m.def(
        "operator_L",
        [](const LossFunction& loss, double t, std::vector<double> values, std::vector<double> probs, double tol) {
            return operator_L(loss, t, DiscreteLaw{std::move(values), std::move(probs)}, tol);
        },
        py::arg("loss"), py::arg("t"), py::arg("values"), py::arg("probs"), py::arg("tol") = 1e-10);

    m.def(
        "picard_horizon",
        [](double beta, double kappa, const CompensatorSpec& spec) {
            const auto h = picard_horizon(beta, kappa, spec);
            return py::dict(py::arg("h") = h.h, py::arg("windows") = h.windows, py::arg("guaranteed") = h.guaranteed);
        },
        py::arg("beta"), py::arg("kappa"), py::arg("spec"));

    m.def(
        "solve_reflected",
        [](const CompensatorSpec& spec, const Driver& d, const LossFunction& loss, const py::object& g,
           std::size_t steps, double picard_tol, std::size_t max_iter) {
            ReflectOptions o;
            o.picard_tol = picard_tol;
            o.max_iter = max_iter;
            const auto sol =
                solve_reflected(spec, d, loss, terminal_from(g, spec.mark_count()), TimeGrid::uniform(spec, steps), o);
            return py::dict(py::arg("K") = sol.K, py::arg("L") = sol.L, py::arg("margins") = sol.margins,
                            py::arg("flatness") = sol.flatness, py::arg("trace") = sol.picard_trace,
                            py::arg("converged") = sol.converged, py::arg("y0") = sol.Y_field.y0(),
                            py::arg("guaranteed") = sol.horizon.guaranteed);
        },
        py::arg("spec"), py::arg("driver"), py::arg("loss"), py::arg("terminal"), py::arg("steps") = 1000,
        py::arg("picard_tol") = 1e-10, py::arg("max_iter") = 50);

    m.def(
        "parse_scenario",
        [](const std::string& text) { return to_json(parse_scenario(nlohmann::json::parse(text))).dump(); },
        py::arg("json_text"), "Validates a scenario and returns its normalized JSON.");

    auto context = [](const std::filesystem::path& out, std::size_t jobs, std::uint64_t seed_offset) {
        RunContext ctx;
        ctx.out_dir = out;
        ctx.jobs = jobs;
        ctx.seed_offset = seed_offset;
        return ctx;
    };
    m.def(
        "run",
        [context](const std::string& command, const std::filesystem::path& scenario, const std::filesystem::path& out,
                  std::size_t jobs, std::uint64_t seed_offset, std::vector<std::size_t> grids) {
            const auto ctx = context(out, jobs, seed_offset);
            py::gil_scoped_release release;
            RunManifest manifest;
            if (command == "verify") {
                manifest = cmd_verify(scenario, ctx);
            } else {
                const auto s = load_scenario(scenario);
                if (command == "simulate") {
                    manifest = cmd_simulate(s, ctx);
                } else if (command == "solve") {
                    manifest = cmd_solve(s, ctx);
                } else if (command == "reflect") {
                    manifest = cmd_reflect(s, ctx);
                } else if (command == "convergence") {
                    if (grids.empty()) {
                        grids = s.run.grids.empty() ? std::vector<std::size_t>{100, 1000, 10000} : s.run.grids;
                    }
                    manifest = cmd_convergence(s, grids, ctx);
                } else {
                    throw ValidationError("unknown command '" + command + "'");
                }
            }
            py::gil_scoped_acquire acquire;
            return manifest_dict(manifest);
        },
        py::arg("command"), py::arg("path"), py::arg("out"), py::arg("jobs") = 1, py::arg("seed_offset") = 0,
        py::arg("grids") = std::vector<std::size_t>{},
        "Runs simulate/solve/reflect/convergence on a scenario file, or verify on a suite manifest.");
}
