#include "mppbsde/scenario.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <map>
#include <sstream>
#include <string_view>

#include "mppbsde/errors.hpp"

namespace mppbsde {

using nlohmann::json;

// --- terminal expressions ------------------------------------------------------------

namespace {

using Node = std::function<double(std::span<const int>)>;

class ExpressionParser {
public:
    ExpressionParser(std::string text, std::size_t marks) : text_(std::move(text)), marks_(marks) {}

    Node parse() {
        Node n = parse_or();
        skip_space();
        if (pos_ != text_.size()) {
            fail("unexpected '" + std::string(1, text_[pos_]) + "'");
        }
        return n;
    }

private:
    [[noreturn]] void fail(const std::string& what) const {
        std::ostringstream msg;
        msg << "expression error at offset " << pos_ << ": " << what;
        throw ValidationError(msg.str());
    }

    void skip_space() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) {
            ++pos_;
        }
    }

    bool accept(std::string_view token) {
        skip_space();
        if (text_.compare(pos_, token.size(), token) == 0) {
            pos_ += token.size();
            return true;
        }
        return false;
    }

    void expect(std::string_view token) {
        if (!accept(token)) {
            fail("expected '" + std::string(token) + "'");
        }
    }

    struct Depth {
        explicit Depth(ExpressionParser& p) : p_(p) {
            if (++p_.depth_ > 200) {
                p_.fail("expression nested too deeply");
            }
        }
        ~Depth() { --p_.depth_; }
        ExpressionParser& p_;
    };

    Node parse_or() {
        Node lhs = parse_and();
        while (accept("||")) {
            Node rhs = parse_and();
            lhs = [lhs, rhs](std::span<const int> n) { return (lhs(n) != 0.0 || rhs(n) != 0.0) ? 1.0 : 0.0; };
        }
        return lhs;
    }

    Node parse_and() {
        Node lhs = parse_cmp();
        while (accept("&&")) {
            Node rhs = parse_cmp();
            lhs = [lhs, rhs](std::span<const int> n) { return (lhs(n) != 0.0 && rhs(n) != 0.0) ? 1.0 : 0.0; };
        }
        return lhs;
    }

    Node parse_cmp() {
        Node lhs = parse_add();
        static const std::pair<const char*, int> ops[] = {{"<=", 0}, {">=", 1}, {"==", 2}, {"!=", 3}, {"<", 4}, {">", 5}};
        for (const auto& [token, code] : ops) {
            if (accept(token)) {
                Node rhs = parse_add();
                const int op = code;
                return [lhs, rhs, op](std::span<const int> n) {
                    const double a = lhs(n);
                    const double b = rhs(n);
                    bool r = false;
                    switch (op) {
                    case 0: r = a <= b; break;
                    case 1: r = a >= b; break;
                    case 2: r = a == b; break;
                    case 3: r = a != b; break;
                    case 4: r = a < b; break;
                    default: r = a > b; break;
                    }
                    return r ? 1.0 : 0.0;
                };
            }
        }
        return lhs;
    }

    Node parse_add() {
        Node lhs = parse_mul();
        while (true) {
            if (accept("+")) {
                Node rhs = parse_mul();
                lhs = [lhs, rhs](std::span<const int> n) { return lhs(n) + rhs(n); };
            } else if (accept("-")) {
                Node rhs = parse_mul();
                lhs = [lhs, rhs](std::span<const int> n) { return lhs(n) - rhs(n); };
            } else {
                return lhs;
            }
        }
    }

    Node parse_mul() {
        Node lhs = parse_unary();
        while (true) {
            if (accept("*")) {
                Node rhs = parse_unary();
                lhs = [lhs, rhs](std::span<const int> n) { return lhs(n) * rhs(n); };
            } else if (accept("/")) {
                Node rhs = parse_unary();
                lhs = [lhs, rhs](std::span<const int> n) { return lhs(n) / rhs(n); };
            } else {
                return lhs;
            }
        }
    }

    Node parse_unary() {
        Depth guard(*this);
        if (accept("-")) {
            Node inner = parse_unary();
            return [inner](std::span<const int> n) { return -inner(n); };
        }
        if (accept("+")) {
            return parse_unary();
        }
        skip_space();
        if (pos_ < text_.size() && text_[pos_] == '!' && text_.compare(pos_, 2, "!=") != 0) {
            ++pos_;
            Node inner = parse_unary();
            return [inner](std::span<const int> n) { return inner(n) == 0.0 ? 1.0 : 0.0; };
        }
        Node base = parse_primary();
        if (accept("^")) {
            Node exponent = parse_unary();
            return [base, exponent](std::span<const int> n) { return std::pow(base(n), exponent(n)); };
        }
        return base;
    }

    Node parse_primary() {
        skip_space();
        if (pos_ >= text_.size()) {
            fail("unexpected end of expression");
        }
        const char c = text_[pos_];
        if (accept("(")) {
            Node inner = parse_or();
            expect(")");
            return inner;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            const char* begin = text_.c_str() + pos_;
            char* end = nullptr;
            const double value = std::strtod(begin, &end);
            if (end == begin) {
                fail("bad number");
            }
            pos_ += static_cast<std::size_t>(end - begin);
            return [value](std::span<const int>) { return value; };
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t end = pos_;
            while (end < text_.size() &&
                   (std::isalnum(static_cast<unsigned char>(text_[end])) || text_[end] == '_')) {
                ++end;
            }
            const std::string name = text_.substr(pos_, end - pos_);
            pos_ = end;
            skip_space();
            if (pos_ < text_.size() && text_[pos_] == '(') {
                return parse_call(name);
            }
            return variable(name);
        }
        fail("unexpected '" + std::string(1, c) + "'");
    }

    Node variable(const std::string& name) {
        if (name == "n") {
            return [](std::span<const int> n) {
                double total = 0.0;
                for (int v : n) {
                    total += v;
                }
                return total;
            };
        }
        if (name.size() > 1 && name[0] == 'n' &&
            name.find_first_not_of("0123456789", 1) == std::string::npos) {
            const std::size_t index = std::stoul(name.substr(1));
            if (index < 1 || index > marks_) {
                fail("variable '" + name + "' is outside n1..n" + std::to_string(marks_));
            }
            return [index](std::span<const int> n) { return static_cast<double>(n[index - 1]); };
        }
        if (name == "pi") {
            return [](std::span<const int>) { return M_PI; };
        }
        fail("unknown variable '" + name + "'");
    }

    Node parse_call(const std::string& name) {
        expect("(");
        std::vector<Node> args;
        if (!accept(")")) {
            do {
                args.push_back(parse_or());
            } while (accept(","));
            expect(")");
        }
        auto arity = [&](std::size_t want) {
            if (args.size() != want) {
                fail(name + "() takes " + std::to_string(want) + " argument(s)");
            }
        };
        using Unary = double (*)(double);
        static const std::map<std::string, Unary> unary = {
            {"abs", [](double x) { return std::abs(x); }},   {"exp", [](double x) { return std::exp(x); }},
            {"log", [](double x) { return std::log(x); }},   {"sqrt", [](double x) { return std::sqrt(x); }},
            {"floor", [](double x) { return std::floor(x); }}, {"ceil", [](double x) { return std::ceil(x); }},
        };
        if (const auto it = unary.find(name); it != unary.end()) {
            arity(1);
            const Unary fn = it->second;
            Node a = args[0];
            return [fn, a](std::span<const int> n) { return fn(a(n)); };
        }
        if (name == "min" || name == "max") {
            if (args.empty()) {
                fail(name + "() needs at least one argument");
            }
            const bool is_min = name == "min";
            return [args, is_min](std::span<const int> n) {
                double r = args[0](n);
                for (std::size_t k = 1; k < args.size(); ++k) {
                    const double v = args[k](n);
                    r = is_min ? std::min(r, v) : std::max(r, v);
                }
                return r;
            };
        }
        if (name == "if") {
            arity(3);
            return [args](std::span<const int> n) { return args[0](n) != 0.0 ? args[1](n) : args[2](n); };
        }
        fail("unknown function '" + name + "'");
    }

    std::string text_;
    std::size_t marks_;
    std::size_t pos_ = 0;
    int depth_ = 0;
};

} // namespace

std::function<double(std::span<const int>)> compile_expression(const std::string& text, std::size_t marks) {
    if (text.empty()) {
        throw ValidationError("empty expression");
    }
    return ExpressionParser(text, marks).parse();
}

// --- scenario parsing ----------------------------------------------------------------

namespace {

[[noreturn]] void fail(const std::string& ptr, const std::string& what) {
    throw ValidationError(ptr + ": " + what);
}

void require_object(const json& j, const std::string& ptr, std::initializer_list<std::string_view> allowed) {
    if (!j.is_object()) {
        fail(ptr.empty() ? "/" : ptr, "expected an object");
    }
    for (const auto& item : j.items()) {
        bool known = false;
        for (auto key : allowed) {
            known = known || item.key() == key;
        }
        if (!known) {
            fail(ptr + "/" + item.key(), "unknown key");
        }
    }
}

double number_at(const json& j, const std::string& ptr) {
    if (!j.is_number()) {
        fail(ptr, "expected a number");
    }
    return j.get<double>();
}

std::optional<double> optional_number(const json& obj, const std::string& key, const std::string& ptr) {
    if (!obj.contains(key)) {
        return std::nullopt;
    }
    return number_at(obj.at(key), ptr + "/" + key);
}

std::uint64_t unsigned_at(const json& j, const std::string& ptr) {
    if (!j.is_number_integer() || j.get<long long>() < 0) {
        fail(ptr, "expected a nonnegative integer");
    }
    return j.get<std::uint64_t>();
}

std::string string_at(const json& j, const std::string& ptr) {
    if (!j.is_string()) {
        fail(ptr, "expected a string");
    }
    return j.get<std::string>();
}

std::vector<std::pair<double, double>> breakpoints_at(const json& j, const std::string& ptr) {
    if (!j.is_array() || j.empty()) {
        fail(ptr, "expected a nonempty array of [t, value] pairs");
    }
    std::vector<std::pair<double, double>> out;
    for (std::size_t k = 0; k < j.size(); ++k) {
        const std::string at = ptr + "/" + std::to_string(k);
        if (!j[k].is_array() || j[k].size() != 2) {
            fail(at, "expected a [t, value] pair");
        }
        out.emplace_back(number_at(j[k][0], at + "/0"), number_at(j[k][1], at + "/1"));
    }
    return out;
}

CompensatorBlock parse_compensator(const json& j, const std::string& ptr) {
    require_object(j, ptr, {"marks", "labels", "phi", "clock", "rho", "horizon"});
    CompensatorBlock c;
    for (const char* key : {"marks", "phi", "clock", "horizon"}) {
        if (!j.contains(key)) {
            fail(ptr + "/" + key, "missing");
        }
    }
    const auto& marks = j.at("marks");
    if (marks.is_number_integer()) {
        const auto k = unsigned_at(marks, ptr + "/marks");
        if (k == 0) {
            fail(ptr + "/marks", "needs at least one mark");
        }
        c.marks = MarkSpace::with_size(k).ids();
    } else if (marks.is_array() && !marks.empty()) {
        for (std::size_t k = 0; k < marks.size(); ++k) {
            c.marks.push_back(string_at(marks[k], ptr + "/marks/" + std::to_string(k)));
        }
    } else {
        fail(ptr + "/marks", "expected a mark count or a nonempty array of ids");
    }
    if (j.contains("labels")) {
        const auto& labels = j.at("labels");
        if (!labels.is_array() || labels.size() != c.marks.size()) {
            fail(ptr + "/labels", "expected one label per mark");
        }
        for (std::size_t k = 0; k < labels.size(); ++k) {
            c.labels.push_back(string_at(labels[k], ptr + "/labels/" + std::to_string(k)));
        }
    }
    c.horizon = number_at(j.at("horizon"), ptr + "/horizon");
    if (!(c.horizon > 0.0)) {
        fail(ptr + "/horizon", "must be positive");
    }
    const auto& phi = j.at("phi");
    if (!phi.is_array() || phi.empty()) {
        fail(ptr + "/phi", "expected a nonempty array of segments");
    }
    for (std::size_t k = 0; k < phi.size(); ++k) {
        const std::string at = ptr + "/phi/" + std::to_string(k);
        require_object(phi[k], at, {"start", "probs"});
        PhiSegment seg;
        seg.start = phi[k].contains("start") ? number_at(phi[k].at("start"), at + "/start") : 0.0;
        if (!phi[k].contains("probs") || !phi[k].at("probs").is_array()) {
            fail(at + "/probs", "expected an array");
        }
        const auto& probs = phi[k].at("probs");
        if (probs.size() != c.marks.size()) {
            fail(at + "/probs", "expected " + std::to_string(c.marks.size()) + " probabilities");
        }
        double total = 0.0;
        for (std::size_t e = 0; e < probs.size(); ++e) {
            const double p = number_at(probs[e], at + "/probs/" + std::to_string(e));
            if (p < 0.0) {
                fail(at + "/probs/" + std::to_string(e), "must be nonnegative");
            }
            seg.probs.push_back(p);
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-12) {
            std::ostringstream msg;
            msg << "probabilities sum to " << total << ", expected 1";
            fail(at + "/probs", msg.str());
        }
        c.phi.push_back(std::move(seg));
    }
    c.clock = breakpoints_at(j.at("clock"), ptr + "/clock");
    if (j.contains("rho")) {
        c.rho = breakpoints_at(j.at("rho"), ptr + "/rho");
    }
    return c;
}

DriverBlock parse_driver(const json& j, const std::string& ptr) {
    DriverBlock d;
    if (j.is_string()) {
        d.name = j.get<std::string>();
        return d;
    }
    require_object(j, ptr, {"name", "growth"});
    if (!j.contains("name")) {
        fail(ptr + "/name", "missing");
    }
    d.name = string_at(j.at("name"), ptr + "/name");
    if (j.contains("growth")) {
        const std::string g = ptr + "/growth";
        require_object(j.at("growth"), g, {"alpha", "beta", "lambda", "c0"});
        d.growth.alpha = optional_number(j.at("growth"), "alpha", g);
        d.growth.beta = optional_number(j.at("growth"), "beta", g);
        d.growth.lambda = optional_number(j.at("growth"), "lambda", g);
        d.growth.c0 = optional_number(j.at("growth"), "c0", g);
    }
    return d;
}

TerminalBlock parse_terminal(const json& j, const std::string& ptr, std::size_t marks) {
    TerminalBlock t;
    if (j.is_string()) {
        t.expression = j.get<std::string>();
        return t;
    }
    require_object(j, ptr, {"expression", "table", "default", "bound"});
    if (j.contains("expression") == j.contains("table")) {
        fail(ptr, "give exactly one of 'expression' or 'table'");
    }
    if (j.contains("expression")) {
        t.expression = string_at(j.at("expression"), ptr + "/expression");
        if (j.contains("default")) {
            fail(ptr + "/default", "only valid with 'table'");
        }
    } else {
        const auto& table = j.at("table");
        if (!table.is_array()) {
            fail(ptr + "/table", "expected an array of {counts, value}");
        }
        for (std::size_t k = 0; k < table.size(); ++k) {
            const std::string at = ptr + "/table/" + std::to_string(k);
            require_object(table[k], at, {"counts", "value"});
            if (!table[k].contains("counts") || !table[k].at("counts").is_array() ||
                table[k].at("counts").size() != marks) {
                fail(at + "/counts", "expected " + std::to_string(marks) + " counts");
            }
            TableRow row;
            for (std::size_t e = 0; e < marks; ++e) {
                row.counts.push_back(static_cast<int>(unsigned_at(table[k]["counts"][e], at + "/counts/" + std::to_string(e))));
            }
            if (!table[k].contains("value")) {
                fail(at + "/value", "missing");
            }
            row.value = number_at(table[k].at("value"), at + "/value");
            t.table.push_back(std::move(row));
        }
        t.table_default = optional_number(j, "default", ptr).value_or(0.0);
    }
    t.bound = optional_number(j, "bound", ptr);
    return t;
}

GridBlock parse_grid(const json& j, const std::string& ptr) {
    require_object(j, ptr, {"steps", "dt", "n_max", "j_max", "tail_tol", "implicit", "scheme"});
    GridBlock g;
    if (j.contains("steps") && j.contains("dt")) {
        fail(ptr, "give at most one of 'steps' or 'dt'");
    }
    if (j.contains("steps")) {
        g.steps = unsigned_at(j.at("steps"), ptr + "/steps");
        if (*g.steps == 0) {
            fail(ptr + "/steps", "must be positive");
        }
    }
    if (j.contains("dt")) {
        g.dt = number_at(j.at("dt"), ptr + "/dt");
        if (!(*g.dt > 0.0)) {
            fail(ptr + "/dt", "must be positive");
        }
    }
    if (j.contains("n_max")) {
        g.n_max = static_cast<int>(unsigned_at(j.at("n_max"), ptr + "/n_max"));
    }
    if (j.contains("j_max")) {
        g.j_max = static_cast<unsigned>(unsigned_at(j.at("j_max"), ptr + "/j_max"));
        if (g.j_max < 1) {
            fail(ptr + "/j_max", "must be >= 1");
        }
    }
    if (j.contains("tail_tol")) {
        g.tail_tol = number_at(j.at("tail_tol"), ptr + "/tail_tol");
        if (!(g.tail_tol > 0.0)) {
            fail(ptr + "/tail_tol", "must be positive");
        }
    }
    if (j.contains("implicit")) {
        if (!j.at("implicit").is_boolean()) {
            fail(ptr + "/implicit", "expected a boolean");
        }
        g.implicit = j.at("implicit").get<bool>();
    }
    if (j.contains("scheme")) {
        const auto s = string_at(j.at("scheme"), ptr + "/scheme");
        if (s == "explicit") {
            g.scheme = Scheme::explicit_euler;
        } else if (s == "exponential") {
            g.scheme = Scheme::exponential;
        } else {
            fail(ptr + "/scheme", "expected 'explicit' or 'exponential'");
        }
    }
    return g;
}

RunBlock parse_run(const json& j, const std::string& ptr) {
    require_object(j, ptr, {"seed", "paths", "quad_step", "tol", "picard_tol", "max_iter", "grids"});
    RunBlock r;
    if (j.contains("seed")) {
        r.seed = unsigned_at(j.at("seed"), ptr + "/seed");
    }
    if (j.contains("paths")) {
        r.paths = unsigned_at(j.at("paths"), ptr + "/paths");
    }
    if (j.contains("quad_step")) {
        r.quad_step = number_at(j.at("quad_step"), ptr + "/quad_step");
        if (!(r.quad_step > 0.0)) {
            fail(ptr + "/quad_step", "must be positive");
        }
    }
    if (j.contains("tol")) {
        r.tol = number_at(j.at("tol"), ptr + "/tol");
    }
    if (j.contains("picard_tol")) {
        const auto& v = j.at("picard_tol");
        r.picard_tol = v.is_string() && v.get<std::string>() == "inf" ? std::numeric_limits<double>::infinity()
                                                                      : number_at(v, ptr + "/picard_tol");
    }
    if (j.contains("max_iter")) {
        r.max_iter = unsigned_at(j.at("max_iter"), ptr + "/max_iter");
        if (r.max_iter == 0) {
            fail(ptr + "/max_iter", "must be positive");
        }
    }
    if (j.contains("grids")) {
        const auto& g = j.at("grids");
        if (!g.is_array()) {
            fail(ptr + "/grids", "expected an array of step counts");
        }
        for (std::size_t k = 0; k < g.size(); ++k) {
            r.grids.push_back(unsigned_at(g[k], ptr + "/grids/" + std::to_string(k)));
        }
    }
    return r;
}

json breakpoints_json(const std::vector<std::pair<double, double>>& pts) {
    json out = json::array();
    for (const auto& [x, v] : pts) {
        out.push_back({x, v});
    }
    return out;
}

} // namespace

Scenario parse_scenario(const json& doc) {
    require_object(doc, "", {"name", "compensator", "driver", "terminal", "loss", "grid", "run"});
    Scenario s;
    for (const char* key : {"compensator", "driver", "terminal"}) {
        if (!doc.contains(key)) {
            fail(std::string("/") + key, "missing");
        }
    }
    s.name = doc.contains("name") ? string_at(doc.at("name"), "/name") : "scenario";
    s.compensator = parse_compensator(doc.at("compensator"), "/compensator");
    s.driver = parse_driver(doc.at("driver"), "/driver");
    s.terminal = parse_terminal(doc.at("terminal"), "/terminal", s.compensator.marks.size());
    if (doc.contains("loss")) {
        const auto& l = doc.at("loss");
        if (l.is_string()) {
            s.loss = LossBlock{l.get<std::string>()};
        } else {
            require_object(l, "/loss", {"name"});
            if (!l.contains("name")) {
                fail("/loss/name", "missing");
            }
            s.loss = LossBlock{string_at(l.at("name"), "/loss/name")};
        }
    }
    if (doc.contains("grid")) {
        s.grid = parse_grid(doc.at("grid"), "/grid");
    }
    if (doc.contains("run")) {
        s.run = parse_run(doc.at("run"), "/run");
    }

    // Semantic validation through the model constructors.
    try {
        (void)s.spec();
    } catch (const ValidationError& e) {
        fail("/compensator", e.what());
    }
    try {
        (void)s.make_driver();
    } catch (const ValidationError& e) {
        fail("/driver", e.what());
    } catch (const std::invalid_argument& e) {
        fail("/driver", e.what());
    }
    try {
        (void)s.make_terminal();
    } catch (const ValidationError& e) {
        fail(s.terminal.expression ? "/terminal/expression" : "/terminal", e.what());
    }
    if (s.loss) {
        try {
            (void)s.make_loss();
        } catch (const ValidationError& e) {
            fail("/loss/name", e.what());
        }
    }
    return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open scenario file '" + path.string() + "'");
    }
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    return parse_scenario(doc);
}

json to_json(const Scenario& s) {
    json doc;
    doc["name"] = s.name;
    json comp;
    comp["marks"] = s.compensator.marks;
    if (!s.compensator.labels.empty()) {
        comp["labels"] = s.compensator.labels;
    }
    comp["phi"] = json::array();
    for (const auto& seg : s.compensator.phi) {
        comp["phi"].push_back({{"start", seg.start}, {"probs", seg.probs}});
    }
    comp["clock"] = breakpoints_json(s.compensator.clock);
    if (s.compensator.rho) {
        comp["rho"] = breakpoints_json(*s.compensator.rho);
    }
    comp["horizon"] = s.compensator.horizon;
    doc["compensator"] = comp;

    json drv;
    drv["name"] = s.driver.name;
    json growth = json::object();
    if (s.driver.growth.alpha) growth["alpha"] = *s.driver.growth.alpha;
    if (s.driver.growth.beta) growth["beta"] = *s.driver.growth.beta;
    if (s.driver.growth.lambda) growth["lambda"] = *s.driver.growth.lambda;
    if (s.driver.growth.c0) growth["c0"] = *s.driver.growth.c0;
    if (!growth.empty()) {
        drv["growth"] = growth;
    }
    doc["driver"] = drv;

    json term;
    if (s.terminal.expression) {
        term["expression"] = *s.terminal.expression;
    } else {
        term["table"] = json::array();
        for (const auto& row : s.terminal.table) {
            term["table"].push_back({{"counts", row.counts}, {"value", row.value}});
        }
        term["default"] = s.terminal.table_default;
    }
    if (s.terminal.bound) {
        term["bound"] = *s.terminal.bound;
    }
    doc["terminal"] = term;
    if (s.loss) {
        doc["loss"] = {{"name", s.loss->name}};
    }

    json grid;
    if (s.grid.steps) grid["steps"] = *s.grid.steps;
    if (s.grid.dt) grid["dt"] = *s.grid.dt;
    grid["n_max"] = s.grid.n_max;
    grid["j_max"] = s.grid.j_max;
    grid["tail_tol"] = s.grid.tail_tol;
    grid["implicit"] = s.grid.implicit;
    grid["scheme"] = s.grid.scheme == Scheme::exponential ? "exponential" : "explicit";
    doc["grid"] = grid;

    json run;
    run["seed"] = s.run.seed;
    run["paths"] = s.run.paths;
    run["quad_step"] = s.run.quad_step;
    run["tol"] = s.run.tol;
    if (std::isinf(s.run.picard_tol)) {
        run["picard_tol"] = "inf";
    } else {
        run["picard_tol"] = s.run.picard_tol;
    }
    run["max_iter"] = s.run.max_iter;
    run["grids"] = s.run.grids;
    doc["run"] = run;
    return doc;
}

// --- model construction ---------------------------------------------------------------

CompensatorSpec Scenario::spec() const {
    std::optional<PiecewiseLinear> rho;
    if (compensator.rho) {
        rho = PiecewiseLinear(*compensator.rho);
    }
    return CompensatorSpec(MarkSpace(compensator.marks, compensator.labels), compensator.phi,
                           PiecewiseLinear(compensator.clock), compensator.horizon, rho);
}

Driver Scenario::make_driver() const {
    Driver d = mppbsde::make_driver(driver.name);
    GrowthParams g = d.growth();
    if (driver.growth.alpha) g.alpha = StepFunction(*driver.growth.alpha);
    if (driver.growth.beta) g.beta = *driver.growth.beta;
    if (driver.growth.lambda) g.lambda = *driver.growth.lambda;
    if (driver.growth.c0) g.c0 = *driver.growth.c0;
    g.validate();
    return d.with_growth(g);
}

TerminalCondition Scenario::make_terminal() const {
    TerminalCondition xi;
    xi.bound = terminal.bound;
    if (terminal.expression) {
        xi.g = compile_expression(*terminal.expression, compensator.marks.size());
        xi.description = *terminal.expression;
        return xi;
    }
    auto rows = std::make_shared<std::map<std::vector<int>, double>>();
    for (const auto& row : terminal.table) {
        (*rows)[row.counts] = row.value;
    }
    const double fallback = terminal.table_default;
    xi.g = [rows, fallback](std::span<const int> n) {
        const auto it = rows->find(std::vector<int>(n.begin(), n.end()));
        return it == rows->end() ? fallback : it->second;
    };
    xi.description = "table";
    return xi;
}

std::optional<LossFunction> Scenario::make_loss() const {
    if (!loss) {
        return std::nullopt;
    }
    return mppbsde::make_loss(loss->name);
}

TimeGrid Scenario::time_grid(std::optional<std::size_t> steps) const {
    const auto s = spec();
    if (steps) {
        return TimeGrid::uniform(s, *steps);
    }
    if (grid.steps) {
        return TimeGrid::uniform(s, *grid.steps);
    }
    if (grid.dt) {
        return TimeGrid::uniform(s, static_cast<std::size_t>(std::ceil(s.horizon() / *grid.dt - 1e-9)));
    }
    return TimeGrid::uniform(s, 1000);
}

SolverOptions Scenario::solver_options() const {
    SolverOptions o;
    o.implicit = grid.implicit;
    o.j_max = grid.j_max;
    o.tail_tol = grid.tail_tol;
    o.n_max = grid.n_max;
    o.scheme = grid.scheme;
    return o;
}

} // namespace mppbsde
