#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bdvar/errors.hpp"
#include "bdvar/grid.hpp"

namespace bdvar {

enum class FunctionalKind { linear_terminal, quadratic_terminal, cylinder, potential_terminal, custom };

inline std::string to_string(FunctionalKind k) {
    switch (k) {
        case FunctionalKind::linear_terminal: return "linear-terminal";
        case FunctionalKind::quadratic_terminal: return "quadratic-terminal";
        case FunctionalKind::cylinder: return "cylinder";
        case FunctionalKind::potential_terminal: return "potential-terminal";
        case FunctionalKind::custom: return "custom";
    }
    return "?";
}

inline constexpr double kRejected = -std::numeric_limits<double>::infinity();

inline bool is_rejected(double v) { return v == kRejected; }

// log(1 + F_-(w)) <= c2 (1 + |w|^alpha) + c1 |w|^2
struct GrowthConstants {
    double c1 = 0.0;
    double alpha = 1.0;
    double c2 = 0.0;
};

// F(w) = f(w(t_1), ..., w(t_m)) for d = 1, with gradient.
struct CylinderSpec {
    std::vector<double> times;
    std::function<double(std::span<const double>)> f;
    std::function<void(std::span<const double>, std::span<double>)> grad;
};

// An evaluable path functional with its integrability metadata. The
// evaluator may return kRejected (-inf) for paths it cannot handle.
struct FunctionalSpec {
    FunctionalKind kind = FunctionalKind::custom;
    std::string name;
    std::function<double(const WienerPath&)> evaluator;
    std::optional<double> delta;        // exponent δ with E[F_-^{1+δ}] < ∞
    std::optional<double> upper_bound;  // sup F, when known
    std::optional<GrowthConstants> growth;
    std::optional<CylinderSpec> cylinder;

    double operator()(const WienerPath& w) const {
        const double v = evaluator(w);
        if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
            throw EvaluationError("functional '" + name + "' returned a non-finite value");
        return v;
    }
};

// F(w) = c . w(1)
inline FunctionalSpec linear_terminal(std::vector<double> c) {
    FunctionalSpec F;
    F.kind = FunctionalKind::linear_terminal;
    F.name = "linear-terminal";
    F.delta = 1.0;
    F.evaluator = [c](const WienerPath& w) {
        double s = 0.0;
        for (std::size_t i = 0; i < c.size(); ++i) s += c[i] * w.terminal(i);
        return s;
    };
    return F;
}

inline FunctionalSpec linear_terminal(double c) { return linear_terminal(std::vector<double>{c}); }

// F(w) = a |w(1)|^2
inline FunctionalSpec quadratic_terminal(double a) {
    FunctionalSpec F;
    F.kind = FunctionalKind::quadratic_terminal;
    F.name = "quadratic-terminal";
    F.delta = 1.0;
    if (a <= 0.0) F.upper_bound = 0.0;
    F.evaluator = [a](const WienerPath& w) {
        double s = 0.0;
        for (double x : w.point(w.n_knots() - 1)) s += x * x;
        return a * s;
    };
    return F;
}

inline FunctionalSpec constant_functional(double b) {
    FunctionalSpec F;
    F.name = "constant";
    F.delta = 1.0;
    F.upper_bound = b;
    F.evaluator = [b](const WienerPath&) { return b; };
    return F;
}

// F(w) = -V(w(1)), d = 1.
inline FunctionalSpec potential_terminal(std::function<double(double)> V, std::string name = "potential-terminal") {
    FunctionalSpec F;
    F.kind = FunctionalKind::potential_terminal;
    F.name = std::move(name);
    F.delta = 1.0;
    F.evaluator = [V = std::move(V)](const WienerPath& w) { return -V(w.terminal(0)); };
    return F;
}

// F(w) = max_k w(t_k), d = 1.
inline FunctionalSpec running_max() {
    FunctionalSpec F;
    F.name = "running-max";
    F.delta = 1.0;
    F.evaluator = [](const WienerPath& w) {
        double m = 0.0;
        for (std::size_t k = 0; k < w.n_knots(); ++k) m = std::max(m, w(k, 0));
        return m;
    };
    return F;
}

inline FunctionalSpec cylinder_functional(CylinderSpec spec, std::string name = "cylinder") {
    if (spec.times.empty() || spec.times.size() > 8) throw ConfigError("cylinder functional needs 1..8 times");
    for (std::size_t i = 0; i < spec.times.size(); ++i) {
        if (!(spec.times[i] > 0.0 && spec.times[i] <= 1.0)) throw ConfigError("cylinder times must lie in (0, 1]");
        if (i > 0 && !(spec.times[i] > spec.times[i - 1])) throw ConfigError("cylinder times must increase");
    }
    if (!spec.f || !spec.grad) throw ConfigError("cylinder functional needs f and its gradient");
    FunctionalSpec F;
    F.kind = FunctionalKind::cylinder;
    F.name = std::move(name);
    F.delta = 1.0;
    F.evaluator = [times = spec.times, f = spec.f](const WienerPath& w) {
        double x[8];
        for (std::size_t i = 0; i < times.size(); ++i) x[i] = w(w.grid().require_index(times[i]), 0);
        return f(std::span<const double>(x, times.size()));
    };
    F.cylinder = std::move(spec);
    return F;
}

// f(x) = c x at time t.
inline FunctionalSpec cylinder_linear(double t, double c) {
    CylinderSpec s{{t},
                   [c](std::span<const double> x) { return c * x[0]; },
                   [c](std::span<const double>, std::span<double> g) { g[0] = c; }};
    return cylinder_functional(std::move(s), "cylinder-linear");
}

// f(x) = a x^2 at time t.
inline FunctionalSpec cylinder_quadratic(double t, double a) {
    CylinderSpec s{{t},
                   [a](std::span<const double> x) { return a * x[0] * x[0]; },
                   [a](std::span<const double> x, std::span<double> g) { g[0] = 2.0 * a * x[0]; }};
    return cylinder_functional(std::move(s), "cylinder-quadratic");
}

// f(x1, x2) = c1 x1 + c2 x2 + q (x2 - x1)^2 at times t1 < t2.
inline FunctionalSpec cylinder_two_point(double t1, double t2, double c1, double c2, double q) {
    CylinderSpec s{{t1, t2},
                   [=](std::span<const double> x) { return c1 * x[0] + c2 * x[1] + q * (x[1] - x[0]) * (x[1] - x[0]); },
                   [=](std::span<const double> x, std::span<double> g) {
                       g[0] = c1 - 2.0 * q * (x[1] - x[0]);
                       g[1] = c2 + 2.0 * q * (x[1] - x[0]);
                   }};
    return cylinder_functional(std::move(s), "cylinder-two-point");
}

// (F ∨ (-N)) ∧ M; either side may be infinite.
inline double truncate_value(double f, double lower_n, double upper_m) {
    if (is_rejected(f)) return std::isfinite(lower_n) ? -lower_n : f;
    return std::min(std::max(f, -lower_n), upper_m);
}

}  // namespace bdvar
