#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bdvar/bl_appendix.hpp"
#include "bdvar/convex.hpp"
#include "bdvar/drift_class.hpp"
#include "bdvar/errors.hpp"
#include "bdvar/estimate.hpp"
#include "bdvar/functional.hpp"
#include "bdvar/grid.hpp"
#include "bdvar/parallel.hpp"
#include "bdvar/prekopa.hpp"
#include "bdvar/random.hpp"
#include "bdvar/variational.hpp"
#include "bdvar/wiener_core.hpp"

namespace bdvar {

using json = nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";

// ============================================================================
// Run records
// ============================================================================

struct Quantity {
    std::string name;
    double value = 0.0;
    double std_error = 0.0;
    std::size_t n = 0;
    std::uint64_t seed = 0;
};

struct Check {
    std::string name;
    bool passed = false;
    std::string detail;
};

// Tidy table: one observation per row.
struct Series {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
};

struct RunRecord {
    std::string experiment_id;
    std::string kind;
    int criterion = 0;
    std::string config_hash;
    std::string version = kVersion;
    double wall_time_s = 0.0;
    std::uint64_t seed = 0;
    std::vector<Quantity> quantities;
    std::vector<Check> checks;
    std::map<std::string, Series> series;

    [[nodiscard]] bool passed() const {
        return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
    }

    void add(const std::string& name, const Estimate& e) {
        quantities.push_back({name, e.value, e.std_error, e.n_samples, e.seed});
    }
    void add(const std::string& name, double v) { quantities.push_back({name, v, 0.0, 0, seed}); }
    void check(const std::string& name, bool ok, const std::string& detail) { checks.push_back({name, ok, detail}); }
};

namespace detail {

inline json num(double x) {
    if (std::isfinite(x)) return x;
    if (std::isnan(x)) return "nan";
    return x > 0 ? "inf" : "-inf";
}

inline double from_num(const json& j) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    }
    throw ConfigError("expected a number in record");
}

inline std::string g17(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

}  // namespace detail

// Everything reproducible about a run: identical configs give identical bytes.
inline json payload_json(const RunRecord& r) {
    json q = json::array();
    for (const auto& x : r.quantities)
        q.push_back({{"name", x.name},
                     {"value", detail::num(x.value)},
                     {"stderr", detail::num(x.std_error)},
                     {"n", x.n},
                     {"seed", x.seed}});
    json c = json::array();
    for (const auto& x : r.checks) c.push_back({{"name", x.name}, {"passed", x.passed}, {"detail", x.detail}});
    json s = json::object();
    for (const auto& [name, ser] : r.series) {
        json rows = json::array();
        for (const auto& row : ser.rows) {
            json jr = json::array();
            for (double v : row) jr.push_back(detail::num(v));
            rows.push_back(std::move(jr));
        }
        s[name] = {{"columns", ser.columns}, {"rows", std::move(rows)}};
    }
    return {{"quantities", std::move(q)}, {"checks", std::move(c)}, {"series", std::move(s)}};
}

inline json to_json(const RunRecord& r) {
    return {{"meta",
             {{"experiment_id", r.experiment_id},
              {"kind", r.kind},
              {"criterion", r.criterion},
              {"config_hash", r.config_hash},
              {"version", r.version},
              {"wall_time_s", r.wall_time_s},
              {"threads", thread_count()}}},
            {"seed", r.seed},
            {"verdict", r.passed() ? "pass" : "fail"},
            {"payload", payload_json(r)}};
}

inline RunRecord record_from_json(const json& j) {
    try {
        RunRecord r;
        const auto& m = j.at("meta");
        r.experiment_id = m.at("experiment_id").get<std::string>();
        r.kind = m.at("kind").get<std::string>();
        r.criterion = m.at("criterion").get<int>();
        r.config_hash = m.at("config_hash").get<std::string>();
        r.version = m.at("version").get<std::string>();
        r.wall_time_s = m.at("wall_time_s").get<double>();
        r.seed = j.at("seed").get<std::uint64_t>();
        const auto& p = j.at("payload");
        for (const auto& q : p.at("quantities"))
            r.quantities.push_back({q.at("name").get<std::string>(), detail::from_num(q.at("value")),
                                    detail::from_num(q.at("stderr")), q.at("n").get<std::size_t>(),
                                    q.at("seed").get<std::uint64_t>()});
        for (const auto& c : p.at("checks"))
            r.checks.push_back({c.at("name").get<std::string>(), c.at("passed").get<bool>(),
                                c.at("detail").get<std::string>()});
        for (const auto& [name, s] : p.at("series").items()) {
            Series ser;
            ser.columns = s.at("columns").get<std::vector<std::string>>();
            for (const auto& row : s.at("rows")) {
                std::vector<double> v;
                for (const auto& x : row) v.push_back(detail::from_num(x));
                ser.rows.push_back(std::move(v));
            }
            r.series[name] = std::move(ser);
        }
        return r;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed run record: ") + e.what());
    }
}

// experiment_id,quantity,value,stderr,n,seed
inline std::string to_csv(const RunRecord& r) {
    std::string out = "experiment_id,quantity,value,stderr,n,seed\n";
    for (const auto& q : r.quantities)
        out += r.experiment_id + "," + q.name + "," + detail::g17(q.value) + "," + detail::g17(q.std_error) + "," +
               std::to_string(q.n) + "," + std::to_string(q.seed) + "\n";
    return out;
}

inline std::string series_csv(const Series& s) {
    std::string out;
    for (std::size_t i = 0; i < s.columns.size(); ++i) out += (i ? "," : "") + s.columns[i];
    out += "\n";
    for (const auto& row : s.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            out += i ? "," : "";
            if (!std::isnan(row[i])) out += detail::g17(row[i]);
        }
        out += "\n";
    }
    return out;
}

// 64-bit FNV-1a, hex encoded.
inline std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ============================================================================
// Strict JSON reading
// ============================================================================

namespace detail {

// Wraps a JSON object; every key must be read before finish(), so unknown
// fields surface as configuration errors.
class Obj {
public:
    Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    [[nodiscard]] bool has(const std::string& k) const { return j_.contains(k); }

    const json& raw(const std::string& k) {
        if (!has(k)) throw ConfigError(path_ + ": missing field '" + k + "'");
        used_.insert(k);
        return j_.at(k);
    }

    Obj child(const std::string& k) { return Obj(raw(k), path_ + "." + k); }

    double num(const std::string& k) {
        const json& v = raw(k);
        if (!v.is_number()) throw ConfigError(path_ + "." + k + ": expected a number");
        const double x = v.get<double>();
        if (!std::isfinite(x)) throw ConfigError(path_ + "." + k + ": expected a finite number");
        return x;
    }
    double num(const std::string& k, double def) { return has(k) ? num(k) : def; }

    std::size_t count(const std::string& k) {
        const json& v = raw(k);
        if (!v.is_number_unsigned()) throw ConfigError(path_ + "." + k + ": expected a nonnegative integer");
        return v.get<std::size_t>();
    }
    std::size_t count(const std::string& k, std::size_t def) { return has(k) ? count(k) : def; }

    std::size_t positive(const std::string& k, std::size_t def) {
        const std::size_t v = count(k, def);
        if (v == 0) throw ConfigError(path_ + "." + k + ": must be positive");
        return v;
    }

    std::string str(const std::string& k) {
        const json& v = raw(k);
        if (!v.is_string()) throw ConfigError(path_ + "." + k + ": expected a string");
        return v.get<std::string>();
    }
    std::string str(const std::string& k, const std::string& def) { return has(k) ? str(k) : def; }

    bool flag(const std::string& k, bool def) {
        if (!has(k)) return def;
        const json& v = raw(k);
        if (!v.is_boolean()) throw ConfigError(path_ + "." + k + ": expected a boolean");
        return v.get<bool>();
    }

    std::vector<double> nums(const std::string& k) {
        const json& v = raw(k);
        if (v.is_number()) return {num(k)};
        if (!v.is_array()) throw ConfigError(path_ + "." + k + ": expected an array of numbers");
        std::vector<double> out;
        for (const auto& x : v) {
            if (!x.is_number()) throw ConfigError(path_ + "." + k + ": expected an array of numbers");
            out.push_back(x.get<double>());
        }
        return out;
    }
    std::vector<double> nums(const std::string& k, std::vector<double> def) { return has(k) ? nums(k) : def; }

    std::vector<std::string> strs(const std::string& k) {
        const json& v = raw(k);
        if (!v.is_array()) throw ConfigError(path_ + "." + k + ": expected an array of strings");
        std::vector<std::string> out;
        for (const auto& x : v) {
            if (!x.is_string()) throw ConfigError(path_ + "." + k + ": expected an array of strings");
            out.push_back(x.get<std::string>());
        }
        return out;
    }

    std::vector<Obj> objs(const std::string& k) {
        const json& v = raw(k);
        if (!v.is_array()) throw ConfigError(path_ + "." + k + ": expected an array of objects");
        std::vector<Obj> out;
        for (std::size_t i = 0; i < v.size(); ++i) out.emplace_back(v[i], path_ + "." + k + "[" + std::to_string(i) + "]");
        return out;
    }

    void finish() const {
        for (const auto& [k, _] : j_.items())
            if (!used_.count(k)) throw ConfigError(path_ + ": unknown field '" + k + "'");
    }

    [[nodiscard]] const std::string& path() const { return path_; }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

// Optional +inf encoded as null in truncation lists.
inline double num_or_inf(const json& v, const std::string& where) {
    if (v.is_null()) return std::numeric_limits<double>::infinity();
    if (!v.is_number()) throw ConfigError(where + ": expected a number or null");
    return v.get<double>();
}

}  // namespace detail

// ============================================================================
// Builders from JSON
// ============================================================================

// F(w) = -exp(|w|_W).
inline FunctionalSpec neg_exp_sup() {
    FunctionalSpec F;
    F.name = "neg-exp-sup";
    F.delta = 1.0;
    F.upper_bound = -1.0;
    F.evaluator = [](const WienerPath& w) { return -std::exp(w.sup_norm()); };
    return F;
}

struct ParsedFunctional {
    FunctionalSpec spec;
    std::string kind;
    std::vector<double> coefficients;  // potential-terminal
    std::vector<double> params;        // kind-specific scalars in declaration order
};

inline ParsedFunctional parse_functional(detail::Obj o) {
    ParsedFunctional p;
    p.kind = o.str("kind");
    const std::string& k = p.kind;
    if (k == "linear-terminal") {
        auto c = o.nums("c");
        p.params = c;
        p.spec = linear_terminal(c);
    } else if (k == "quadratic-terminal") {
        const double a = o.num("a");
        p.params = {a};
        p.spec = quadratic_terminal(a);
    } else if (k == "constant") {
        const double b = o.num("b");
        p.params = {b};
        p.spec = constant_functional(b);
    } else if (k == "cylinder-linear") {
        const double t = o.num("t"), c = o.num("c");
        p.params = {t, c};
        p.spec = cylinder_linear(t, c);
    } else if (k == "cylinder-quadratic") {
        const double t = o.num("t"), a = o.num("a");
        p.params = {t, a};
        p.spec = cylinder_quadratic(t, a);
    } else if (k == "cylinder-two-point") {
        const double t1 = o.num("t1"), t2 = o.num("t2"), c1 = o.num("c1"), c2 = o.num("c2"), q = o.num("q");
        p.params = {t1, t2, c1, c2, q};
        p.spec = cylinder_two_point(t1, t2, c1, c2, q);
    } else if (k == "potential-terminal") {
        p.coefficients = o.nums("coefficients");
        const auto c = p.coefficients;
        p.spec = potential_terminal([c](double x) { return detail::horner(c, x); }, "potential-terminal");
    } else if (k == "running-max") {
        p.spec = running_max();
    } else if (k == "neg-exp-sup") {
        p.spec = neg_exp_sup();
    } else {
        throw ConfigError(o.path() + ": unknown functional kind '" + k + "'");
    }
    if (o.has("delta")) p.spec.delta = o.num("delta");
    if (o.has("growth")) {
        auto g = o.child("growth");
        p.spec.growth = GrowthConstants{g.num("c1"), g.num("alpha"), g.num("c2")};
        g.finish();
    }
    o.finish();
    return p;
}

inline DriftFamily parse_family(detail::Obj& o, const PathSpace& space) {
    const FamilyKind kind = family_kind_from_string(o.str("family"));
    const std::size_t m = kind == FamilyKind::constant ? 1 : o.positive("n_intervals", 1);
    if (kind == FamilyKind::constant && o.has("n_intervals") && o.count("n_intervals") != 1)
        throw ConfigError(o.path() + ": constant family has exactly one interval");
    std::optional<double> bound;
    if (o.has("bound")) bound = o.num("bound");
    DriftFamily f = DriftFamily::make(kind, space.grid, m, -10.0, 10.0, space.dim, bound);
    auto box = [&](const std::string& key, std::vector<double>& target) {
        if (!o.has(key)) return;
        auto v = o.nums(key);
        if (v.size() == 1) target.assign(f.n_params(), v[0]);
        else if (v.size() == f.n_params()) target = v;
        else throw ConfigError(o.path() + "." + key + ": expected a scalar or one entry per parameter");
    };
    box("lower", f.lower);
    box("upper", f.upper);
    f.validate();
    return f;
}

inline json family_to_json(const DriftFamily& f, std::span<const double> theta = {}) {
    json j = {{"family", to_string(f.kind)},
              {"n_intervals", f.n_intervals()},
              {"knots", f.knots},
              {"lower", f.lower},
              {"upper", f.upper}};
    if (f.bound) j["bound"] = *f.bound;
    if (!theta.empty()) j["theta"] = std::vector<double>(theta.begin(), theta.end());
    return j;
}

// A concrete drift: a family plus θ.
inline SimpleDrift parse_drift(detail::Obj o, const PathSpace& space) {
    DriftFamily f = parse_family(o, space);
    const auto theta = o.nums("theta");
    o.finish();
    return f.instantiate(theta);
}

inline Potential1D parse_potential(detail::Obj o) {
    const std::string kind = o.str("kind");
    Potential1D p;
    if (kind == "double_well") {
        const double a = o.num("alpha"), b = o.num("beta");
        p = double_well(a, b, o.num("sigma", 1.0));
    } else if (kind == "polynomial") {
        const auto c = o.nums("coefficients");
        const double sigma = o.num("sigma", 1.0);
        std::optional<LinearFloor> floor;
        const json& fl = o.raw("floor");
        if (!fl.is_null()) {
            detail::Obj fo(fl, o.path() + ".floor");
            floor = LinearFloor{fo.num("a"), fo.num("b")};
            fo.finish();
        }
        p = polynomial_potential(c, sigma, floor, o.num("half_width", 0.0), o.str("name", "polynomial"));
    } else {
        throw ConfigError(o.path() + ": unknown potential kind '" + kind + "'");
    }
    o.finish();
    return p;
}

inline std::vector<ConvexFn> parse_psi(detail::Obj& o, const std::string& key) {
    std::vector<ConvexFn> out;
    for (const auto& s : o.strs(key)) out.push_back(convex_from_name(s));
    if (out.empty()) throw ConfigError(o.path() + "." + key + ": needs at least one convex function");
    return out;
}

inline SpsaConfig parse_spsa(detail::Obj o) {
    SpsaConfig c;
    c.iterations = o.positive("iterations", c.iterations);
    c.a = o.num("a", c.a);
    c.A = o.num("A", c.A);
    c.c = o.num("c", c.c);
    c.alpha = o.num("alpha", c.alpha);
    c.gamma = o.num("gamma", c.gamma);
    c.n_paths = o.positive("n_paths", c.n_paths);
    c.final_n_paths = o.positive("final_n_paths", c.final_n_paths);
    c.tail_fraction = o.num("tail_fraction", c.tail_fraction);
    c.divergence_patience = o.positive("divergence_patience", c.divergence_patience);
    if (o.has("initial_theta")) c.initial_theta = o.nums("initial_theta");
    o.finish();
    return c;
}

// ============================================================================
// Experiments
// ============================================================================

struct RunContext {
    std::uint64_t seed = 0;
    std::size_t n_paths = 0;
    PathSpace space;
    RunRecord* record = nullptr;
};

namespace detail {

// Zero-variance estimators still carry rounding error in the last few ulps.
inline double rounding_floor(double a, double b) { return 1e-12 * std::max({1.0, std::abs(a), std::abs(b)}); }

inline void check_estimate(RunRecord& r, const std::string& name, const Estimate& e, double exact, double sigmas,
                           double allowance = 0.0) {
    const double diff = e.value - exact;
    const bool ok = std::abs(diff) <= sigmas * e.std_error + allowance + rounding_floor(e.value, exact);
    r.check(name, ok,
            "value " + fmt(e.value) + " vs " + fmt(exact) + ", |diff| " + fmt(std::abs(diff)) + " <= " +
                fmt(sigmas) + " * stderr " + fmt(e.std_error) + (allowance > 0 ? " + " + fmt(allowance) : ""));
}

inline void check_agree(RunRecord& r, const std::string& name, const Estimate& a, const Estimate& b, double sigmas,
                        double allowance = 0.0) {
    const double se = combined_stderr(a, b);
    const bool ok = std::abs(a.value - b.value) <= sigmas * se + allowance + rounding_floor(a.value, b.value);
    r.check(name, ok,
            fmt(a.value) + " vs " + fmt(b.value) + ", |diff| " + fmt(std::abs(a.value - b.value)) + " <= " +
                fmt(sigmas) + " * combined stderr " + fmt(se) + (allowance > 0 ? " + " + fmt(allowance) : ""));
}

inline void check_abs(RunRecord& r, const std::string& name, double value, double exact, double tol) {
    r.check(name, std::abs(value - exact) <= tol,
            "value " + g17(value) + " vs " + g17(exact) + ", tolerance " + fmt(tol));
}

}  // namespace detail

// log E[e^{F(W)}] for functionals of W(1) alone (d = 1) by adaptive
// Gauss-Kronrod and by 100-point Gauss-Hermite over the law of W(1).
struct TerminalOracle {
    double kronrod = 0.0;
    double hermite = 0.0;
};

inline std::optional<TerminalOracle> terminal_oracle(const ParsedFunctional& F, std::size_t dim) {
    const std::string& k = F.kind;
    if (dim != 1 || (k != "linear-terminal" && k != "quadratic-terminal" && k != "potential-terminal" && k != "constant"))
        return std::nullopt;
    const GridPtr g = make_uniform_grid(1);
    auto f = [&](double x) { return F.spec(WienerPath(g, 1, {0.0, x})); };
    auto integrand = [&](double x) { return std::exp(f(x)) * normal_pdf(x); };
    constexpr double L = 40.0;
    if (!(integrand(L) < 1e-30 && integrand(-L) < 1e-30))
        throw NumericError("e^F is not integrable enough for the quadrature oracle");
    std::vector<double> breaks;
    for (int i = -39; i <= 39; ++i) breaks.push_back(static_cast<double>(i));
    TerminalOracle o;
    o.kronrod = std::log(integrate_split(integrand, -L, L, breaks, 1e-13, 1e-20));
    o.hermite = std::log(gauss_hermite(100).expect([&](double z) { return std::exp(f(z)); }));
    return o;
}

inline void run_estimate_lhs(RunContext& ctx, detail::Obj& params, std::optional<detail::Obj>& expect) {
    RunRecord& r = *ctx.record;
    const ParsedFunctional F = parse_functional(params.child("functional"));
    const std::string method = params.str("method", "direct");
    if (method != "direct" && method != "importance" && method != "both")
        throw ConfigError("params.method must be direct, importance or both");
    std::optional<SimpleDrift> v;
    if (method != "direct") v = parse_drift(params.child("drift"), ctx.space);
    const bool diagnostics = params.flag("diagnostics", false);
    params.finish();

    std::optional<Estimate> direct, imp;
    if (method != "importance") {
        direct = estimate_lhs_direct(F.spec, ctx.space, ctx.n_paths, ctx.seed);
        r.add("lhs_direct", *direct);
    }
    if (v) {
        imp = estimate_lhs_importance(F.spec, *v, ctx.n_paths, ctx.seed);
        r.add("lhs_importance", *imp);
    }
    const std::optional<TerminalOracle> oracle = terminal_oracle(F, ctx.space.dim);
    if (oracle) {
        r.add("lhs_quadrature_kronrod", oracle->kronrod);
        r.add("lhs_quadrature_hermite", oracle->hermite);
    }
    if (diagnostics) {
        const AssumptionReport a = validate_assumptions(F.spec, ctx.space, ctx.n_paths, ctx.seed);
        r.add("max_summand_share", a.max_summand_share);
        r.add("negative_moment", a.negative_moment);
        r.add("rejected_paths", static_cast<double>(a.n_rejected));
        if (a.growth_holds) r.check("growth_condition", *a.growth_holds,
                                    std::to_string(a.growth_violations) + " sampled paths violate the growth bound");
    }
    if (expect) {
        const double sig = expect->num("sigmas", 3.0);
        const double allow = expect->num("allowance", 0.0);
        if (expect->has("value")) {
            const double x = expect->num("value");
            if (direct) detail::check_estimate(r, "direct_matches_oracle", *direct, x, sig, allow);
            if (imp) detail::check_estimate(r, "importance_matches_oracle", *imp, x, sig, allow);
            if (oracle) {
                const double tol = expect->num("quadrature_tol", 1e-9);
                detail::check_abs(r, "kronrod_matches_oracle", oracle->kronrod, x, tol);
                detail::check_abs(r, "hermite_matches_oracle", oracle->hermite, x, tol);
            }
        }
        if (expect->has("max_stderr") && direct) {
            const double m = expect->num("max_stderr");
            r.check("direct_stderr_small", direct->std_error <= m,
                    "stderr " + detail::fmt(direct->std_error) + " <= " + detail::fmt(m));
        }
        if (expect->flag("importance_reduces_variance", false)) {
            if (!direct || !imp) throw ConfigError("variance comparison needs method 'both'");
            r.check("importance_reduces_variance", imp->std_error < direct->std_error,
                    "importance stderr " + detail::fmt(imp->std_error) + " < direct stderr " +
                        detail::fmt(direct->std_error));
        }
    }
    if (direct && imp) detail::check_agree(r, "direct_agrees_with_importance", *direct, *imp, 3.0);
}

inline void run_optimize_drift(RunContext& ctx, detail::Obj& params, std::optional<detail::Obj>& expect) {
    RunRecord& r = *ctx.record;
    const ParsedFunctional F = parse_functional(params.child("functional"));
    auto fo = params.child("family");
    const DriftFamily family = parse_family(fo, ctx.space);
    fo.finish();
    const SpsaConfig cfg = params.has("spsa") ? parse_spsa(params.child("spsa")) : SpsaConfig{};
    const bool with_lhs = params.flag("estimate_lhs", true);
    params.finish();

    const OptimizationTrace tr = optimize_drift(F.spec, family, cfg, ctx.seed);
    r.add("best_objective", tr.best_objective);
    for (std::size_t i = 0; i < tr.best_theta.size(); ++i) r.add("best_theta_" + std::to_string(i), tr.best_theta[i]);
    for (std::size_t c = 0; c < tr.candidates.size(); ++c)
        r.add(c == 0 ? "candidate_last" : "candidate_tail_average", tr.candidates[c].objective);
    Series s;
    s.columns = {"iter"};
    for (std::size_t i = 0; i < family.n_params(); ++i) s.columns.push_back("theta_" + std::to_string(i));
    s.columns.push_back("objective");
    s.columns.push_back("stderr");
    for (std::size_t k = 0; k < tr.iterates.size(); ++k) {
        std::vector<double> row{static_cast<double>(k + 1)};
        row.insert(row.end(), tr.iterates[k].theta.begin(), tr.iterates[k].theta.end());
        row.push_back(tr.iterates[k].objective.value);
        row.push_back(tr.iterates[k].objective.std_error);
        s.rows.push_back(std::move(row));
    }
    r.series["optimizer-trace"] = std::move(s);

    std::optional<Estimate> lhs;
    if (with_lhs) {
        lhs = estimate_lhs_direct(F.spec, ctx.space, ctx.n_paths, ctx.seed);
        r.add("lhs_direct", *lhs);
        const double margin = lhs->value - tr.best_objective.value;
        r.add("duality_gap", margin);
        // Lower bound: the optimized objective never exceeds the LHS.
        r.check("objective_below_lhs", margin >= -3.0 * combined_stderr(*lhs, tr.best_objective),
                "gap " + detail::fmt(margin) + " >= -3 * " + detail::fmt(combined_stderr(*lhs, tr.best_objective)));
    }
    if (expect) {
        if (expect->has("objective")) {
            const double x = expect->num("objective");
            const double tol = expect->num("objective_tol");
            detail::check_abs(r, "objective_near_oracle", tr.best_objective.value, x, tol);
        }
        if (expect->has("theta")) {
            const auto th = expect->nums("theta");
            const double tol = expect->num("theta_tol");
            if (th.size() != tr.best_theta.size()) throw ConfigError("expect.theta has the wrong length");
            double worst = 0.0;
            for (std::size_t i = 0; i < th.size(); ++i) worst = std::max(worst, std::abs(th[i] - tr.best_theta[i]));
            r.check("theta_near_oracle", worst <= tol,
                    "max |theta - oracle| " + detail::fmt(worst) + " <= " + detail::fmt(tol));
        }
        if (expect->has("duality_allowance") && lhs) {
            const double allow = expect->num("duality_allowance");
            detail::check_agree(r, "duality_equality", *lhs, tr.best_objective, 3.0, allow);
        }
    }
}

inline void run_lower_bound_suite(RunContext& ctx, detail::Obj& params, std::optional<detail::Obj>&) {
    RunRecord& r = *ctx.record;
    std::vector<ParsedFunctional> fs;
    for (auto& o : params.objs("functionals")) fs.push_back(parse_functional(o));
    std::vector<DriftFamily> fams;
    for (auto& o : params.objs("families")) {
        fams.push_back(parse_family(o, ctx.space));
        o.finish();
    }
    const std::size_t n_drifts = params.positive("n_drifts", 100);
    params.finish();
    if (fs.empty() || fams.empty()) throw ConfigError("lower-bound suite needs functionals and families");

    std::vector<SimpleDrift> drifts;
    for (std::size_t i = 0; i < n_drifts; ++i) {
        const DriftFamily& f = fams[i % fams.size()];
        StreamRng rng(tagged_seed(ctx.seed, StreamTag::random_drifts), i);
        drifts.push_back(f.instantiate(f.sample_theta(rng)));
    }
    for (std::size_t k = 0; k < fs.size(); ++k) {
        const std::string tag = "fixture_" + std::to_string(k) + "_" + fs[k].kind;
        const LowerBoundReport rep = lower_bound_suite(fs[k].spec, ctx.space, drifts, ctx.n_paths, ctx.seed);
        r.add(tag + "_lhs", rep.lhs);
        r.add(tag + "_worst_margin", rep.worst_margin);
        r.add(tag + "_worst_z", rep.worst_z);
        r.add(tag + "_violations", static_cast<double>(rep.violations));
        r.check(tag + "_no_violations", rep.violations == 0,
                std::to_string(rep.violations) + " of " + std::to_string(drifts.size()) +
                    " drifts exceed the LHS by more than 3 combined stderr; worst z " + detail::fmt(rep.worst_z));
    }
}

inline void run_truncation_sweep(RunContext& ctx, detail::Obj& params, std::optional<detail::Obj>& expect) {
    RunRecord& r = *ctx.record;
    const ParsedFunctional F = parse_functional(params.child("functional"));
    const auto M = params.nums("M", {});
    const auto N = params.nums("N", {});
    params.finish();
    const TruncationTable t = truncation_sweep(F.spec, ctx.space, M, N, ctx.n_paths, ctx.seed);
    auto label = [](double x) { return std::isinf(x) ? std::string("inf") : detail::fmt(x); };
    Series s;
    s.columns = {"N", "M", "value", "stderr"};
    for (const auto& row : t.rows) {
        r.add("N=" + label(row.lower_n) + ";M=" + label(row.upper_m), row.estimate);
        s.rows.push_back({row.lower_n, row.upper_m, row.estimate.value, row.estimate.std_error});
    }
    r.series["truncation"] = std::move(s);
    std::string why;
    for (const auto& v : t.violations) why += v + "; ";
    r.check("monotone_in_M", t.monotone_in_m, t.monotone_in_m ? "nondecreasing within 3 combined stderr" : why);
    r.check("monotone_in_N", t.monotone_in_n, t.monotone_in_n ? "nonincreasing within 3 combined stderr" : why);
    if (expect && expect->has("rows")) {
        for (auto& o : expect->objs("rows")) {
            const double n = detail::num_or_inf(o.raw("N"), o.path() + ".N");
            const double m = detail::num_or_inf(o.raw("M"), o.path() + ".M");
            const double x = o.num("value");
            const double sig = o.num("sigmas", 3.0);
            o.finish();
            auto it = std::find_if(t.rows.begin(), t.rows.end(),
                                   [&](const TruncationRow& row) { return row.lower_n == n && row.upper_m == m; });
            if (it == t.rows.end()) throw ConfigError(o.path() + ": no such (N, M) row in the sweep");
            detail::check_estimate(r, "oracle_N=" + label(n) + ";M=" + label(m), it->estimate, x, sig);
        }
    }
}

namespace detail {

// Closed-form Clark-Ocone feedback for the single-time fixtures.
inline std::optional<std::function<double(double, double)>> clark_ocone_closed_form(const ParsedFunctional& F) {
    if (F.kind == "cylinder-linear") {
        const double t1 = F.params[0], c = F.params[1];
        return [t1, c](double t, double) { return t <= t1 ? c : 0.0; };
    }
    if (F.kind == "cylinder-quadratic") {
        const double t1 = F.params[0], a = F.params[1];
        return [t1, a](double t, double x) { return t <= t1 ? 2.0 * a * x / (1.0 - 2.0 * a * (t1 - t)) : 0.0; };
    }
    return std::nullopt;
}

}  // namespace detail

inline void run_clark_ocone(RunContext& ctx, detail::Obj& params, std::optional<detail::Obj>& expect) {
    RunRecord& r = *ctx.record;
    const ParsedFunctional F = parse_functional(params.child("functional"));
    QuadConfig q;
    if (params.has("quad")) {
        auto o = params.child("quad");
        if (o.has("orders")) {
            q.orders.clear();
            for (double x : o.nums("orders")) q.orders.push_back(static_cast<std::size_t>(x));
        }
        q.rel_tol = o.num("rel_tol", q.rel_tol);
        q.knot_stride = o.positive("knot_stride", q.knot_stride);
        o.finish();
    }
    std::vector<double> times, states;
    double point_tol = 1e-6;
    if (params.has("pointwise")) {
        auto o = params.child("pointwise");
        times = o.nums("times");
        states = o.nums("states");
        point_tol = o.num("tol", point_tol);
        o.finish();
    }
    const std::string lhs_method = params.str("lhs_method", "importance");
    if (lhs_method != "importance" && lhs_method != "direct") throw ConfigError("lhs_method must be importance or direct");
    params.finish();
    if (ctx.space.dim != 1) throw ConfigError("Clark-Ocone drift needs dim = 1");

    const ClarkOconeField field(F.spec, q);
    if (!times.empty()) {
        auto closed = detail::clark_ocone_closed_form(F);
        if (!closed) throw ConfigError("pointwise comparison needs a closed-form fixture");
        double worst = 0.0;
        Series s;
        s.columns = {"t", "x", "quadrature", "closed_form"};
        for (double t : times)
            for (double x : states) {
                const double a = field.value(t, x);
                const double b = (*closed)(t, x);
                worst = std::max(worst, std::abs(a - b));
                s.rows.push_back({t, x, a, b});
            }
        r.series["clark-ocone-pointwise"] = std::move(s);
        r.add("pointwise_max_error", worst);
        r.check("pointwise_matches_closed_form", worst <= point_tol,
                "max |quadrature - closed form| " + detail::fmt(worst) + " <= " + detail::fmt(point_tol));
    }
    const SimpleDrift v = clark_ocone_drift(F.spec, ctx.space.grid, q);
    const SimpleDrift vbar = bar_conjugate(v);
    const Estimate rhs = rhs_objective(F.spec, vbar, ctx.n_paths, ctx.seed);
    const Estimate lhs = lhs_method == "importance" ? estimate_lhs_importance(F.spec, vbar, ctx.n_paths, ctx.seed)
                                                    : estimate_lhs_direct(F.spec, ctx.space, ctx.n_paths, ctx.seed);
    r.add("rhs_objective", rhs);
    r.add("lhs_" + lhs_method, lhs);
    detail::check_agree(r, "rhs_matches_lhs", rhs, lhs, 3.0);
    if (expect && expect->has("value")) {
        const double x = expect->num("value");
        detail::check_estimate(r, "rhs_matches_oracle", rhs, x, expect->num("sigmas", 3.0));
        detail::check_estimate(r, "lhs_matches_oracle", lhs, x, expect->num("sigmas", 3.0));
    }
}

inline void run_entropy_check(RunContext& ctx, detail::Obj& params, std::optional<detail::Obj>& expect) {
    RunRecord& r = *ctx.record;
    const SimpleDrift v = parse_drift(params.child("drift"), ctx.space);
    params.finish();
    const EntropyReport e = entropy_identity_check(v, ctx.n_paths, ctx.seed);
    r.add("log_density_mean", e.lhs);
    r.add("half_energy_mean", e.rhs);
    r.check("entropy_identity", e.agrees,
            detail::fmt(e.lhs.value) + " vs " + detail::fmt(e.rhs.value) + " within 3 * " + detail::fmt(e.combined_se));
    if (expect && expect->has("value")) {
        const double x = expect->num("value");
        detail::check_estimate(r, "log_density_matches_oracle", e.lhs, x, 3.0);
        detail::check_estimate(r, "half_energy_matches_oracle", e.rhs, x, 3.0);
    }
}

namespace detail {

inline ParamFunctionalSpec parse_param_functional(Obj o) {
    const std::string kind = o.str("kind");
    const double lo = o.num("lambda_lower", -10.0), hi = o.num("lambda_upper", 10.0);
    ParamFunctionalSpec g;
    if (kind == "shifted-quadratic") g = shifted_quadratic_family(lo, hi);
    else if (kind == "linear-tilt") g = linear_tilt_family(lo, hi);
    else if (kind == "terminal-square") g = terminal_square_family(o.num("a"), lo, hi);
    else throw ConfigError(o.path() + ": unknown parameterized functional '" + kind + "'");
    o.finish();
    return g;
}

// Exact λ -> log E[e^{G(W, λ)}] for the built-in families on d = 1.
inline std::optional<std::function<double(double)>> exact_log_partition(const std::string& name) {
    if (name == "shifted-quadratic") return [](double l) { return -0.25 * l * l - 0.5 * std::log(2.0); };
    if (name == "linear-tilt") return [](double l) { return 0.5 * l * l; };
    return std::nullopt;
}

}  // namespace detail

inline void run_prekopa_scan(RunContext& ctx, detail::Obj& params, std::optional<detail::Obj>& expect) {
    RunRecord& r = *ctx.record;
    const ParamFunctionalSpec G = detail::parse_param_functional(params.child("param_functional"));
    auto lo = params.child("lambda");
    const auto grid = uniform_lambda_grid(lo.num("lo"), lo.num("hi"), lo.num("step"));
    lo.finish();
    std::size_t n_triples = 1000;
    double h_scale = 2.0;
    if (params.has("b2")) {
        auto b = params.child("b2");
        n_triples = b.positive("n_triples", n_triples);
        h_scale = b.num("h_scale", h_scale);
        b.finish();
    }
    params.finish();

    const ConcavityReport rep = scan_log_partition(G, ctx.space, grid, ctx.n_paths, ctx.seed);
    const B2Report b2 = check_b2_hypothesis(G, ctx.space, n_triples, ctx.seed, h_scale);
    for (std::size_t i = 0; i < grid.size(); ++i)
        if (rep.values[i]) r.add("g(" + detail::fmt(grid[i][0]) + ")", *rep.values[i]);
    for (const auto& d : rep.deficits)
        r.quantities.push_back({"deficit(" + detail::fmt(grid[d.i][0]) + "," + detail::fmt(grid[d.j][0]) + ")",
                                d.deficit, d.std_error, ctx.n_paths, ctx.seed});
    r.add("b2_checked", static_cast<double>(b2.n_checked));
    r.add("b2_violations", static_cast<double>(b2.n_violations));
    r.add("b2_worst_slack", b2.worst_slack);

    Series s;
    s.columns = {"lambda", "value", "stderr", "deficit", "deficit_stderr"};
    for (std::size_t i = 0; i < grid.size(); ++i) {
        double def = std::numeric_limits<double>::quiet_NaN(), dse = def;
        for (const auto& d : rep.deficits)
            if (d.j == d.i + 2 && d.i + 1 == i) {
                def = d.deficit;
                dse = d.std_error;
            }
        const double v = rep.values[i] ? rep.values[i]->value : std::numeric_limits<double>::quiet_NaN();
        const double se = rep.values[i] ? rep.values[i]->std_error : std::numeric_limits<double>::quiet_NaN();
        s.rows.push_back({grid[i][0], v, se, def, dse});
    }
    r.series["lambda-scan"] = std::move(s);

    const std::string want_scan = expect ? expect->str("verdict", "pass") : "pass";
    const std::string want_b2 = expect ? expect->str("b2", "pass") : "pass";
    r.check("scan_verdict", to_string(rep.verdict) == want_scan,
            "scan " + to_string(rep.verdict) + ", expected " + want_scan);
    r.check("b2_verdict", (b2.passed() ? "pass" : "fail") == want_b2,
            std::string("hypothesis ") + (b2.passed() ? "pass" : "fail") + " (" + std::to_string(b2.n_violations) +
                " of " + std::to_string(b2.n_checked) + " violated), expected " + want_b2);
    if (expect && expect->flag("closed_form", false)) {
        auto g = detail::exact_log_partition(G.name);
        if (!g) throw ConfigError("no closed form for '" + G.name + "'");
        std::size_t bad = 0;
        double worst = 0.0;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            if (!rep.values[i]) {
                ++bad;
                continue;
            }
            const double z = std::abs(rep.values[i]->value - (*g)(grid[i][0])) / rep.values[i]->std_error;
            worst = std::max(worst, z);
            if (z > 3.0) ++bad;
        }
        r.check("values_match_closed_form", bad == 0,
                std::to_string(bad) + " grid values outside 3 stderr; worst |z| " + detail::fmt(worst));
        bad = 0;
        worst = 0.0;
        for (const auto& d : rep.deficits) {
            const double li = grid[d.i][0], lj = grid[d.j][0];
            const double exact = (*g)(d.midpoint[0]) - 0.5 * (*g)(li) - 0.5 * (*g)(lj);
            const double z = std::abs(d.deficit - exact) / d.std_error;
            worst = std::max(worst, z);
            if (z > 3.0) ++bad;
        }
        r.check("deficits_match_closed_form", bad == 0,
                std::to_string(bad) + " deficits outside 3 stderr; worst |z| " + detail::fmt(worst));
    }
}

inline void run_bl_wiener(RunContext& ctx, detail::Obj& params, std::optional<detail::Obj>& expect) {
    RunRecord& r = *ctx.record;
    const ParsedFunctional F = parse_functional(params.child("functional"));
    const auto psi = parse_psi(params, "psi");
    const auto scales = params.nums("scales", {1.0});
    const bool cross = params.flag("quadrature_cross_check", false);
    params.finish();
    const bool equality = expect && expect->flag("equality", false);

    std::optional<bool> first_verdict;
    for (std::size_t si = 0; si < scales.size(); ++si) {
        const double c = scales[si];
        if (!(c > 0.0)) throw ConfigError("functional scales must be positive");
        const LinearFunctional l = LinearFunctional::identity_terminal(ctx.space.grid, ctx.space.dim).scaled(c);
        const WienerBLReport rep = wiener_bl_check(F.spec, l, psi, ctx.n_paths, ctx.seed);
        const std::string tag = "scale_" + detail::fmt(c) + "_";
        r.add(tag + "ess", rep.ess);
        r.add(tag + "tilted_mean", rep.tilted_mean);
        for (const auto& row : rep.rows) {
            r.add(tag + "tilted_" + row.psi, row.tilted);
            r.add(tag + "gaussian_" + row.psi, row.gaussian);
            r.check(tag + "inequality_" + row.psi, row.holds,
                    detail::fmt(row.tilted.value) + " <= " + detail::fmt(row.gaussian) + " + 3 * " +
                        detail::fmt(row.tilted.std_error));
            if (equality) detail::check_estimate(r, tag + "equality_" + row.psi, row.tilted, row.gaussian, 3.0);
        }
        if (!first_verdict) first_verdict = rep.holds;
        else r.check(tag + "verdict_invariant", rep.holds == *first_verdict, "verdict unchanged under l -> c l");

        if (cross) {
            if (F.kind != "potential-terminal" && F.kind != "constant")
                throw ConfigError("quadrature cross-check needs a potential-terminal or constant functional");
            // The law of <l, W> = c W(1) under the tilt has density ∝ e^{-V(x)} φ(x) in x = W(1).
            const std::vector<double> coef = F.kind == "constant" ? std::vector<double>{0.0} : F.coefficients;
            const Potential1D pot = custom_potential(
                "tilt", [coef](double x) { return detail::horner(coef, x); },
                [d = detail::poly_derivative(coef)](double x) { return detail::horner(d, x); },
                [d = detail::poly_derivative(detail::poly_derivative(coef))](double x) { return detail::horner(d, x); },
                1.0, std::nullopt, 12.0);
            std::vector<ConvexFn> scaled;
            for (const auto& p : psi) {
                ConvexFn s = p;
                s.fn = [f = p.fn, c](double z) { return f(c * z); };
                for (double& k : s.kinks) k /= c;
                scaled.push_back(std::move(s));
            }
            const MomentReport m = moment_inequality_check(pot, scaled);
            for (std::size_t i = 0; i < psi.size(); ++i) {
                r.add(tag + "quadrature_" + psi[i].name, m.rows[i].tilted);
                detail::check_estimate(r, tag + "quadrature_cross_check_" + psi[i].name, rep.rows[i].tilted,
                                       m.rows[i].tilted, 3.0);
            }
        }
    }
}

namespace detail {

inline void bass_checks(RunRecord& r, const Potential1D& p, bool certified) {
    const BassEmbedding emb(p);
    const BassTable t = bass_g(emb);
    const CapitalGReport g = capital_g_check(emb, default_xi_grid());
    const double var = bass_variance(emb);
    r.add("max_g_prime", t.max_g_prime);
    r.add("argmax_g_prime", t.argmax);
    r.add("min_capital_g", g.min_value);
    r.add("capital_g_at_1e-6", g.boundary_low);
    r.add("capital_g_at_1-1e-6", g.boundary_high);
    r.add("bass_variance", var);
    Series gs;
    gs.columns = {"x", "g", "gprime", "sigma"};
    for (std::size_t i = 0; i < t.x.size(); ++i) gs.rows.push_back({t.x[i], t.g[i], t.g_prime[i], p.sigma});
    r.series["g-curve"] = std::move(gs);
    Series cs;
    cs.columns = {"xi", "G"};
    for (std::size_t i = 0; i < g.xi.size(); ++i) cs.rows.push_back({g.xi[i], g.values[i]});
    r.series["G-curve"] = std::move(cs);
    r.check("capital_g_boundary_decay", g.boundary_decay,
            "|G(1e-6)| = " + fmt(std::abs(g.boundary_low)) + ", |G(1-1e-6)| = " + fmt(std::abs(g.boundary_high)) +
                " < 1e-4");
    // Both representations must agree on whether the embedding is 1-Lipschitz.
    const bool by_g = t.max_g_prime <= p.sigma + 1e-6;
    const bool by_cap = g.min_value >= -1e-6;
    r.check("g_prime_and_capital_g_consistent", by_g == by_cap,
            std::string("max g' <= sigma: ") + (by_g ? "yes" : "no") + ", min G >= 0: " + (by_cap ? "yes" : "no"));
    if (certified) {
        r.check("g_prime_below_sigma", by_g, "max g' " + g17(t.max_g_prime) + " <= sigma + 1e-6");
        r.check("capital_g_nonnegative", by_cap, "min G " + g17(g.min_value) + " >= -1e-6");
        r.check("bass_variance_below_sigma_sq", var <= p.sigma * p.sigma + 1e-6,
                "Var g(Z) " + g17(var) + " <= sigma^2 + 1e-6");
    }
}

}  // namespace detail

inline void run_bl_certify(RunContext& ctx, detail::Obj& params, std::optional<detail::Obj>& expect) {
    RunRecord& r = *ctx.record;
    const Potential1D p = parse_potential(params.child("potential"));
    const bool bass = params.flag("bass", false);
    params.finish();
    const BLConditionReport c = certify_conditions(p);
    r.add("log_z", c.log_z);
    r.add("inf_u_on_d", c.inf_u.value);
    r.add("argmin_u", c.inf_u.argmin);
    r.add("inf_h_on_d", c.inf_h.value);
    r.add("argmin_h", c.inf_h.argmin);
    r.add("nonconvex_intervals", static_cast<double>(c.region.intervals.size()));
    for (std::size_t i = 0; i < c.region.intervals.size(); ++i) {
        r.add("d_v_" + std::to_string(i) + "_lo", c.region.intervals[i].first);
        r.add("d_v_" + std::to_string(i) + "_hi", c.region.intervals[i].second);
    }
    r.add("cond_inf1", c.cond_inf1_holds ? 1.0 : 0.0);
    r.add("cond_inf2", c.cond_inf2_holds ? 1.0 : 0.0);
    r.add("inf1_marginal", c.inf1_marginal ? 1.0 : 0.0);
    r.add("inf2_marginal", c.inf2_marginal ? 1.0 : 0.0);
    r.check("inf2_implies_inf1", !c.cond_inf2_holds || c.cond_inf1_holds, "condition (inf2) implies (inf1)");
    r.check("u_dominates_h", c.inf_u.value >= c.inf_h.value - 1e-12,
            "inf U " + detail::g17(c.inf_u.value) + " >= inf h " + detail::g17(c.inf_h.value));
    if (expect) {
        const double tol = expect->num("tol", 1e-6);
        if (expect->has("inf_h")) detail::check_abs(r, "inf_h_matches", c.inf_h.value, expect->num("inf_h"), tol);
        if (expect->has("inf_u")) detail::check_abs(r, "inf_u_matches", c.inf_u.value, expect->num("inf_u"), tol);
        if (expect->has("log_z")) detail::check_abs(r, "log_z_matches", c.log_z, expect->num("log_z"), tol);
        if (expect->flag("log_z_negative", false)) r.check("log_z_negative", c.log_z < 0.0, "log Z " + detail::g17(c.log_z));
        if (expect->has("cond_inf1")) {
            const bool w = expect->flag("cond_inf1", false);
            r.check("cond_inf1_expected", c.cond_inf1_holds == w, std::string("inf1 ") + (c.cond_inf1_holds ? "holds" : "fails"));
        }
        if (expect->has("cond_inf2")) {
            const bool w = expect->flag("cond_inf2", false);
            r.check("cond_inf2_expected", c.cond_inf2_holds == w, std::string("inf2 ") + (c.cond_inf2_holds ? "holds" : "fails"));
        }
        if (expect->has("empty_region")) {
            const bool w = expect->flag("empty_region", false);
            r.check("region_emptiness_expected", c.region.empty() == w,
                    std::to_string(c.region.intervals.size()) + " nonconvex intervals");
        }
    }
    if (bass) detail::bass_checks(r, p, c.certified());
}

inline void run_bl_moments(RunContext& ctx, detail::Obj& params, std::optional<detail::Obj>& expect) {
    RunRecord& r = *ctx.record;
    const Potential1D p = parse_potential(params.child("potential"));
    const auto psi = parse_psi(params, "psi");
    params.finish();
    const MomentReport m = moment_inequality_check(p, psi);
    r.add("certified", m.certified ? 1.0 : 0.0);
    r.add("mean", m.mean);
    for (const auto& row : m.rows) {
        r.add("tilted_" + row.psi, row.tilted);
        r.add("gaussian_" + row.psi, row.gaussian);
        if (m.certified)
            r.check("inequality_" + row.psi, row.holds,
                    detail::g17(row.tilted) + " <= " + detail::g17(row.gaussian));
    }
    if (expect) {
        if (expect->has("certified")) {
            const bool w = expect->flag("certified", false);
            r.check("certification_expected", m.certified == w, std::string("certified: ") + (m.certified ? "yes" : "no"));
        }
        if (expect->has("rows")) {
            for (auto& o : expect->objs("rows")) {
                const std::string name = o.str("psi");
                const double x = o.num("tilted");
                const double tol = o.num("tol");
                o.finish();
                auto it = std::find_if(m.rows.begin(), m.rows.end(), [&](const MomentRow& row) { return row.psi == name; });
                if (it == m.rows.end()) throw ConfigError("expect.rows names a convex function not in params.psi");
                detail::check_abs(r, "tilted_" + name + "_matches", it->tilted, x, tol);
            }
        }
    }
}

inline void run_double_well_table(RunContext& ctx, detail::Obj& params, std::optional<detail::Obj>&) {
    RunRecord& r = *ctx.record;
    const auto alphas = params.nums("alpha");
    const auto betas = params.nums("beta");
    const double tol = params.num("tol", 1e-6);
    params.finish();
    Series s;
    s.columns = {"alpha", "beta", "inf_h", "closed_h", "inf_u", "closed_u"};
    double worst_h = 0.0, worst_u = 0.0;
    for (double a : alphas)
        for (double b : betas) {
            const BLConditionReport c = certify_conditions(double_well(a, b));
            const auto [ch, cu] = double_well_closed_forms(a, b);
            worst_h = std::max(worst_h, std::abs(c.inf_h.value - ch));
            worst_u = std::max(worst_u, std::abs(c.inf_u.value - cu));
            s.rows.push_back({a, b, c.inf_h.value, ch, c.inf_u.value, cu});
        }
    r.series["double-well"] = std::move(s);
    r.add("max_error_inf_h", worst_h);
    r.add("max_error_inf_u", worst_u);
    r.check("inf_h_matches_closed_form", worst_h <= tol, "max error " + detail::fmt(worst_h) + " <= " + detail::fmt(tol));
    r.check("inf_u_matches_closed_form", worst_u <= tol, "max error " + detail::fmt(worst_u) + " <= " + detail::fmt(tol));
}

namespace detail {

// Random path-dependent feedback for identity checks: mixes the current
// value, the running maximum and a nonlinearity.
inline SimpleDrift random_feedback_drift(const PathSpace& space, StreamRng& rng) {
    const std::size_t n = space.grid->n_steps();
    const std::size_t choices[4] = {1, 2, 4, 8};
    std::size_t m = choices[rng.next() % 4];
    while (n % m != 0) m /= 2;
    const auto knots = uniform_knots(*space.grid, m);
    const std::size_t d = space.dim;
    std::vector<double> c(m * 3 * d);
    for (double& x : c) x = rng.uniform(-2.0, 2.0);
    auto fn = [c, d](std::size_t k, const PathPast& past, std::span<double> out) {
        for (std::size_t i = 0; i < d; ++i) {
            double run_max = 0.0;
            for (std::size_t j = 0; j <= past.last_knot(); ++j) run_max = std::max(run_max, past.at(j, i));
            const double* ck = &c[(k * d + i) * 3];
            out[i] = ck[0] + ck[1] * std::tanh(past.current()[i]) + ck[2] * run_max;
        }
    };
    return feedback_drift(space.grid, d, knots, fn, 5.0);
}

inline double max_abs_diff(const WienerPath& a, const WienerPath& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.values().size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
    return m;
}

}  // namespace detail

inline void run_grid_identities(RunContext& ctx, detail::Obj& params, std::optional<detail::Obj>&) {
    RunRecord& r = *ctx.record;
    const std::size_t n = params.positive("n_fixtures", 100);
    const double tol = params.num("tol", 1e-12);
    const double dual_tol = params.num("duality_tol", 1e-10);
    params.finish();
    std::vector<double> e_tilde(n), e_bar(n), e_dual(n), e_adapt(n);
    parallel_for(n, [&](std::size_t i) {
        StreamRng rng(tagged_seed(ctx.seed, StreamTag::random_drifts), i);
        SimpleDrift v = [&] {
            const std::size_t which = i % 4;
            if (which == 3) return detail::random_feedback_drift(ctx.space, rng);
            const FamilyKind kinds[3] = {FamilyKind::constant, FamilyKind::piecewise_constant,
                                         FamilyKind::linear_state_feedback};
            const DriftFamily f = DriftFamily::make(kinds[which], ctx.space.grid, 8, -3.0, 3.0, ctx.space.dim);
            return f.instantiate(f.sample_theta(rng));
        }();
        const WienerPath w = sample_wiener(ctx.space, ctx.seed, i);
        const SimpleDrift vt = tilde_conjugate(v);
        const SimpleDrift vb = bar_conjugate(v);
        e_tilde[i] = detail::max_abs_diff(apply_drift_transform(apply_drift_transform(w, vt, -1), v, +1), w);
        e_bar[i] = detail::max_abs_diff(apply_drift_transform(apply_drift_transform(w, v, -1), vb, +1), w);
        const auto a = v.evaluate_along(w);
        const auto b = tilde_conjugate(vb).evaluate_along(w);
        double m = 0.0;
        for (std::size_t q = 0; q < a.size(); ++q) m = std::max(m, std::abs(a[q] - b[q]));
        e_dual[i] = m;
        // Perturb everything after each interval's left knot; the interval value must not move.
        double moved = 0.0;
        for (std::size_t k = 0; k < v.n_intervals(); ++k) {
            std::vector<double> vals(w.values().begin(), w.values().end());
            for (std::size_t q = (v.left_knot(k) + 1) * w.dim(); q < vals.size(); ++q) vals[q] += 1.0 + rng.uniform();
            const WienerPath pert(w.grid_ptr(), w.dim(), std::move(vals));
            const auto x = evaluate_drift(v, w, k);
            const auto y = evaluate_drift(v, pert, k);
            for (std::size_t q = 0; q < x.size(); ++q) moved = std::max(moved, std::abs(x[q] - y[q]));
        }
        e_adapt[i] = moved;
    });
    const double mt = *std::max_element(e_tilde.begin(), e_tilde.end());
    const double mb = *std::max_element(e_bar.begin(), e_bar.end());
    const double md = *std::max_element(e_dual.begin(), e_dual.end());
    const double ma = *std::max_element(e_adapt.begin(), e_adapt.end());
    r.add("max_error_tilde_round_trip", mt);
    r.add("max_error_bar_round_trip", mb);
    r.add("max_error_conjugate_duality", md);
    r.add("max_adaptedness_change", ma);
    r.check("tilde_round_trip", mt <= tol, "max |T^v T^{-tilde v} w - w| " + detail::fmt(mt) + " <= " + detail::fmt(tol));
    r.check("bar_round_trip", mb <= tol, "max |T^{bar v} T^{-v} w - w| " + detail::fmt(mb) + " <= " + detail::fmt(tol));
    r.check("conjugate_duality", md <= dual_tol, "max |tilde(bar v) - v| " + detail::fmt(md) + " <= " + detail::fmt(dual_tol));
    r.check("adaptedness", ma == 0.0, "future perturbations moved interval values by " + detail::fmt(ma));
}

inline void run_girsanov_check(RunContext& ctx, detail::Obj& params, std::optional<detail::Obj>&) {
    RunRecord& r = *ctx.record;
    std::vector<std::pair<ParsedFunctional, SimpleDrift>> pairs;
    for (auto& o : params.objs("pairs")) {
        pairs.emplace_back(parse_functional(o.child("functional")), parse_drift(o.child("drift"), ctx.space));
        o.finish();
    }
    std::vector<SimpleDrift> drifts;
    for (auto& o : params.objs("drifts")) drifts.push_back(parse_drift(o, ctx.space));
    const auto powers = params.nums("moment_p", {2.0, 3.0});
    params.finish();

    for (std::size_t i = 0; i < drifts.size(); ++i) {
        const std::string tag = "drift_" + std::to_string(i);
        std::vector<double> w(ctx.n_paths);
        parallel_for(ctx.n_paths, [&](std::size_t p) {
            w[p] = doleans_exponential(sample_wiener(ctx.space, ctx.seed, p), drifts[i]).value;
        });
        const Estimate m = mean_estimate(w, ctx.seed);
        r.add(tag + "_mean_weight", m);
        detail::check_estimate(r, tag + "_martingale_mean", m, 1.0, 3.0);
        if (drifts[i].declared_bound())
            for (double pw : powers) {
                const MomentBoundCheck mb = doleans_moment_check(drifts[i], pw, ctx.n_paths, ctx.seed);
                r.add(tag + "_moment_p" + detail::fmt(pw), mb.moment);
                r.add(tag + "_moment_bound_p" + detail::fmt(pw), mb.bound);
                r.check(tag + "_moment_bound_p" + detail::fmt(pw), mb.holds,
                        detail::fmt(mb.moment.value) + " <= " + detail::fmt(mb.bound) + " * (1 + 3 rel. stderr)");
            }
    }
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const std::string tag = "pair_" + std::to_string(i) + "_" + pairs[i].first.kind;
        const Estimate a = girsanov_reweighted_mean(pairs[i].first.spec, pairs[i].second, ctx.n_paths, ctx.seed);
        // An independent sample for the plain mean keeps the two estimates uncorrelated.
        const Estimate b = plain_mean(pairs[i].first.spec, ctx.space, ctx.n_paths, derive_seed(ctx.seed, 1));
        r.add(tag + "_reweighted", a);
        r.add(tag + "_plain", b);
        detail::check_agree(r, tag + "_reweighted_matches_plain", a, b, 3.0);
    }
}

// ============================================================================
// Dispatch
// ============================================================================

using ExperimentFn = std::function<void(RunContext&, detail::Obj&, std::optional<detail::Obj>&)>;

inline const std::map<std::string, ExperimentFn>& experiment_table() {
    static const std::map<std::string, ExperimentFn> t = {
        {"estimate-lhs", run_estimate_lhs},
        {"optimize-drift", run_optimize_drift},
        {"lower-bound-suite", run_lower_bound_suite},
        {"truncation-sweep", run_truncation_sweep},
        {"clark-ocone", run_clark_ocone},
        {"entropy-check", run_entropy_check},
        {"prekopa-scan", run_prekopa_scan},
        {"bl-wiener", run_bl_wiener},
        {"bl-certify", run_bl_certify},
        {"bl-moments", run_bl_moments},
        {"double-well-table", run_double_well_table},
        {"grid-identities", run_grid_identities},
        {"girsanov-check", run_girsanov_check},
    };
    return t;
}

inline bool valid_experiment_id(const std::string& id) {
    if (id.empty() || id.size() > 128 || id[0] == '.') return false;
    return std::all_of(id.begin(), id.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    });
}

// Validates and executes one config. Throws ConfigError (or a numeric error)
// before any result exists; violations are recorded as failed checks.
inline RunRecord run_experiment(const json& config, std::optional<std::uint64_t> seed_override = std::nullopt) {
    const auto t0 = std::chrono::steady_clock::now();
    json cfg = config;
    if (seed_override) {
        if (!cfg.is_object()) throw ConfigError("config: expected an object");
        cfg["seed"] = *seed_override;
    }
    detail::Obj top(cfg, "config");
    RunRecord r;
    r.experiment_id = top.str("experiment_id");
    if (!valid_experiment_id(r.experiment_id))
        throw ConfigError("experiment_id may only contain letters, digits, '-', '_' and '.'");
    r.kind = top.str("kind");
    const auto it = experiment_table().find(r.kind);
    if (it == experiment_table().end()) throw ConfigError("unknown experiment kind '" + r.kind + "'");
    if (top.has("criterion")) r.criterion = static_cast<int>(top.count("criterion"));
    top.str("description", "");
    top.str("output_dir", "");
    if (!top.raw("seed").is_number_unsigned()) throw ConfigError("config.seed: expected a nonnegative integer");
    r.seed = top.raw("seed").get<std::uint64_t>();

    RunContext ctx;
    ctx.seed = r.seed;
    ctx.n_paths = top.positive("n_paths", 10000);
    std::size_t n_steps = kDefaultSteps, dim = 1;
    if (top.has("grid")) {
        auto g = top.child("grid");
        n_steps = g.positive("n_steps", n_steps);
        dim = g.positive("dim", dim);
        g.finish();
    }
    ctx.space = PathSpace{make_uniform_grid(n_steps), dim};
    ctx.record = &r;
    auto params = top.child("params");
    std::optional<detail::Obj> expect;
    if (top.has("expect")) expect.emplace(top.child("expect"));
    top.finish();
    r.config_hash = fnv1a_hex(cfg.dump());

    it->second(ctx, params, expect);
    if (expect) expect->finish();
    r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

// ============================================================================
// File-level entry points
// ============================================================================

enum ExitCode : int { kExitPass = 0, kExitViolation = 1, kExitError = 2 };

struct RunOutcome {
    int exit_code = kExitError;
    std::optional<RunRecord> record;
    std::string error;
    std::filesystem::path json_path, csv_path;
};

inline json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

inline std::filesystem::path output_dir_for(const json& cfg, const std::optional<std::filesystem::path>& out) {
    if (out) return *out;
    if (cfg.is_object() && cfg.contains("output_dir") && cfg["output_dir"].is_string())
        return cfg["output_dir"].get<std::string>();
    return "results";
}

// Runs a config file and writes <out>/<id>.json and <out>/<id>.csv. Nothing
// is written when the config or the computation fails.
inline RunOutcome run_config_file(const std::filesystem::path& path, const std::optional<std::filesystem::path>& out,
                                  std::optional<std::uint64_t> seed_override = std::nullopt) {
    RunOutcome o;
    try {
        const json cfg = read_json_file(path);
        RunRecord r = run_experiment(cfg, seed_override);
        const auto dir = output_dir_for(cfg, out);
        std::filesystem::create_directories(dir);
        o.json_path = dir / (r.experiment_id + ".json");
        o.csv_path = dir / (r.experiment_id + ".csv");
        write_text(o.json_path, to_json(r).dump(2) + "\n");
        write_text(o.csv_path, to_csv(r));
        o.exit_code = r.passed() ? kExitPass : kExitViolation;
        o.record = std::move(r);
    } catch (const OptimizationError& e) {
        o.error = std::string("optimization error: ") + e.what();
    } catch (const ConfigError& e) {
        o.error = std::string("configuration error: ") + e.what();
    } catch (const Error& e) {
        o.error = std::string("numeric error: ") + e.what();
    } catch (const std::filesystem::filesystem_error& e) {
        o.error = std::string("filesystem error: ") + e.what();
    }
    return o;
}

// Writes <out>/<id>-<series>.csv from a stored record.
inline std::filesystem::path emit_plot_data(const RunRecord& r, const std::string& series,
                                            const std::filesystem::path& out) {
    const auto it = r.series.find(series);
    if (it == r.series.end()) {
        std::string have;
        for (const auto& [k, _] : r.series) have += (have.empty() ? "" : ", ") + k;
        throw ConfigError("record '" + r.experiment_id + "' has no series '" + series + "' (available: " +
                          (have.empty() ? "none" : have) + ")");
    }
    if (!valid_experiment_id(r.experiment_id)) throw ConfigError("record has an invalid experiment_id");
    std::filesystem::create_directories(out);
    const auto path = out / (r.experiment_id + "-" + series + ".csv");
    write_text(path, series_csv(it->second));
    return path;
}

struct SuiteEntry {
    std::string file;
    std::string experiment_id;
    int criterion = 0;
    int exit_code = kExitError;
    double wall_time_s = 0.0;
    std::string detail;
};

struct SuiteSummary {
    std::vector<SuiteEntry> entries;
    [[nodiscard]] bool all_passed() const {
        return !entries.empty() &&
               std::all_of(entries.begin(), entries.end(), [](const SuiteEntry& e) { return e.exit_code == 0; });
    }
};

// Runs every *.json config in `suite_dir` (sorted by name) into `out`.
inline SuiteSummary reproduce_all(const std::filesystem::path& suite_dir, const std::filesystem::path& out,
                                  std::ostream* log = nullptr, std::optional<std::uint64_t> seed_override = std::nullopt) {
    if (!std::filesystem::is_directory(suite_dir)) throw ConfigError("'" + suite_dir.string() + "' is not a directory");
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(suite_dir))
        if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    SuiteSummary s;
    for (const auto& f : files) {
        const auto t0 = std::chrono::steady_clock::now();
        const RunOutcome o = run_config_file(f, out, seed_override);
        SuiteEntry e;
        e.file = f.filename().string();
        e.exit_code = o.exit_code;
        e.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (o.record) {
            e.experiment_id = o.record->experiment_id;
            e.criterion = o.record->criterion;
            for (const auto& c : o.record->checks)
                if (!c.passed) e.detail += c.name + ": " + c.detail + "; ";
        } else {
            e.detail = o.error;
        }
        if (log) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%-6s %7.2fs  ", e.exit_code == 0 ? "PASS" : (e.exit_code == 1 ? "FAIL" : "ERROR"),
                          e.wall_time_s);
            *log << buf << e.file;
            if (!e.detail.empty()) *log << "  -- " << e.detail;
            *log << "\n";
            log->flush();
        }
        s.entries.push_back(std::move(e));
    }
    return s;
}

}  // namespace bdvar
