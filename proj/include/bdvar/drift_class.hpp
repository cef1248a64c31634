#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bdvar/errors.hpp"
#include "bdvar/estimate.hpp"
#include "bdvar/grid.hpp"
#include "bdvar/parallel.hpp"
#include "bdvar/random.hpp"

namespace bdvar {

class SimpleDrift;

// ξ_k of a simple process: maps the past of a path up to the left knot of
// drift interval k to a d-vector. Implementations must be pure.
class DriftRule {
public:
    virtual ~DriftRule() = default;
    virtual void evaluate(std::size_t interval, const PathPast& past, std::span<double> out) const = 0;

    // Optional fast path producing all interval values for one full path.
    // Returns false when not implemented.
    virtual bool evaluate_path(const SimpleDrift&, const WienerPath&, std::span<double>) const { return false; }
};

using FeedbackFn = std::function<void(std::size_t interval, const PathPast& past, std::span<double> out)>;

// ============================================================================
// SimpleDrift
// ============================================================================

// v_t(w) = ξ_0 on [t_0, t_1], ξ_k(w(s), s <= t_k) on (t_k, t_{k+1}], with knots
// stored as grid indices. When `clamp` is set, outputs are scaled back onto
// the ball of radius `declared_bound`.
class SimpleDrift {
public:
    SimpleDrift(GridPtr grid, std::size_t dim, std::vector<std::size_t> knots,
                std::shared_ptr<const DriftRule> rule, std::optional<double> declared_bound = std::nullopt,
                bool clamp = true)
        : grid_(std::move(grid)), dim_(dim), knots_(std::move(knots)), rule_(std::move(rule)),
          bound_(declared_bound), clamp_(clamp && declared_bound.has_value()) {
        if (!grid_) throw ConfigError("drift requires a grid");
        if (dim_ == 0) throw ConfigError("drift dimension must be >= 1");
        if (!rule_) throw ConfigError("drift requires a feedback rule");
        if (knots_.size() < 2 || knots_.front() != 0 || knots_.back() != grid_->n_steps())
            throw ConfigError("drift knots must start at grid index 0 and end at the last grid index");
        for (std::size_t k = 1; k < knots_.size(); ++k)
            if (knots_[k] <= knots_[k - 1]) throw ConfigError("drift knots must be strictly increasing");
        if (bound_ && !(*bound_ > 0.0)) throw ConfigError("declared drift bound must be positive");
        step_interval_.resize(grid_->n_steps());
        for (std::size_t k = 0; k + 1 < knots_.size(); ++k)
            for (std::size_t j = knots_[k]; j < knots_[k + 1]; ++j) step_interval_[j] = k;
    }

    [[nodiscard]] const GridPtr& grid_ptr() const { return grid_; }
    [[nodiscard]] const TimeGrid& grid() const { return *grid_; }
    [[nodiscard]] std::size_t dim() const { return dim_; }
    [[nodiscard]] std::span<const std::size_t> knots() const { return knots_; }
    [[nodiscard]] std::size_t n_intervals() const { return knots_.size() - 1; }
    [[nodiscard]] std::size_t left_knot(std::size_t k) const { return knots_[k]; }
    [[nodiscard]] std::size_t right_knot(std::size_t k) const { return knots_[k + 1]; }
    [[nodiscard]] std::size_t interval_of_step(std::size_t step) const { return step_interval_[step]; }
    [[nodiscard]] std::optional<double> declared_bound() const { return bound_; }
    [[nodiscard]] bool clamps() const { return clamp_; }
    [[nodiscard]] const std::shared_ptr<const DriftRule>& rule() const { return rule_; }

    // ξ_k on the given past; `past` must end at the interval's left knot or later.
    void evaluate(std::size_t k, const PathPast& past, std::span<double> out) const {
        rule_->evaluate(k, past.last_knot() == knots_[k] ? past : restrict(past, knots_[k]), out);
        finish(out);
    }

    // All interval values (n_intervals x dim, row-major) along an input path.
    [[nodiscard]] std::vector<double> evaluate_along(const WienerPath& path) const {
        check_path(path);
        std::vector<double> out(n_intervals() * dim_);
        if (rule_->evaluate_path(*this, path, out)) {
            for (std::size_t k = 0; k < n_intervals(); ++k) finish(std::span<double>(out).subspan(k * dim_, dim_));
            return out;
        }
        for (std::size_t k = 0; k < n_intervals(); ++k)
            evaluate(k, path.past(knots_[k]), std::span<double>(out).subspan(k * dim_, dim_));
        return out;
    }

    void check_path(const WienerPath& path) const {
        if (!same_grid(grid_, path.grid_ptr()))
            throw ConfigError("drift knots are not aligned with the path grid");
        if (path.dim() != dim_) throw ConfigError("drift and path dimensions differ");
    }

private:
    static PathPast restrict(const PathPast& past, std::size_t last) {
        if (last > past.last_knot()) throw std::out_of_range("past ends before the interval's left knot");
        return PathPast(&past.grid(), past.dim(), last, past.values());
    }

    void finish(std::span<double> out) const {
        double sq = 0.0;
        for (double x : out) {
            if (!std::isfinite(x)) throw EvaluationError("drift feedback returned a non-finite value");
            sq += x * x;
        }
        if (clamp_ && sq > (*bound_) * (*bound_)) {
            const double s = *bound_ / std::sqrt(sq);
            for (double& x : out) x *= s;
        }
    }

    GridPtr grid_;
    std::size_t dim_;
    std::vector<std::size_t> knots_;
    std::shared_ptr<const DriftRule> rule_;
    std::optional<double> bound_;
    bool clamp_;
    std::vector<std::size_t> step_interval_;
};

// ============================================================================
// Rules and builders
// ============================================================================

namespace detail {

class FunctionRule final : public DriftRule {
public:
    explicit FunctionRule(FeedbackFn fn) : fn_(std::move(fn)) {}
    void evaluate(std::size_t k, const PathPast& past, std::span<double> out) const override { fn_(k, past, out); }

private:
    FeedbackFn fn_;
};

// Piecewise-constant levels (path independent).
class LevelRule final : public DriftRule {
public:
    LevelRule(std::vector<double> levels, std::size_t dim) : levels_(std::move(levels)), dim_(dim) {}
    void evaluate(std::size_t k, const PathPast&, std::span<double> out) const override {
        for (std::size_t i = 0; i < dim_; ++i) out[i] = levels_[k * dim_ + i];
    }

private:
    std::vector<double> levels_;
    std::size_t dim_;
};

// v = intercept_k + gain_k * w(t_k), coordinatewise.
class LinearFeedbackRule final : public DriftRule {
public:
    LinearFeedbackRule(std::vector<double> intercepts, std::vector<double> gains, std::size_t dim)
        : intercepts_(std::move(intercepts)), gains_(std::move(gains)), dim_(dim) {}
    void evaluate(std::size_t k, const PathPast& past, std::span<double> out) const override {
        auto x = past.current();
        for (std::size_t i = 0; i < dim_; ++i) out[i] = intercepts_[k * dim_ + i] + gains_[k * dim_ + i] * x[i];
    }

private:
    std::vector<double> intercepts_, gains_;
    std::size_t dim_;
};

}  // namespace detail

inline std::vector<std::size_t> uniform_knots(const TimeGrid& grid, std::size_t n_intervals) {
    if (n_intervals == 0 || grid.n_steps() % n_intervals != 0)
        throw ConfigError("drift interval count must divide the number of grid steps");
    std::vector<std::size_t> k(n_intervals + 1);
    const std::size_t stride = grid.n_steps() / n_intervals;
    for (std::size_t i = 0; i <= n_intervals; ++i) k[i] = i * stride;
    return k;
}

inline std::vector<std::size_t> knots_from_times(const TimeGrid& grid, std::span<const double> times) {
    std::vector<std::size_t> k;
    k.reserve(times.size());
    for (double t : times) k.push_back(grid.require_index(t));
    return k;
}

inline SimpleDrift constant_drift(GridPtr grid, std::vector<double> c, std::optional<double> bound = std::nullopt) {
    const std::size_t d = c.size();
    const std::size_t n = grid->n_steps();
    return SimpleDrift(std::move(grid), d, {0, n}, std::make_shared<detail::LevelRule>(std::move(c), d), bound);
}

inline SimpleDrift constant_drift(GridPtr grid, double c) { return constant_drift(std::move(grid), std::vector<double>{c}); }

// levels: n_intervals x dim, row-major.
inline SimpleDrift piecewise_constant_drift(GridPtr grid, std::vector<std::size_t> knots, std::vector<double> levels,
                                            std::size_t dim = 1, std::optional<double> bound = std::nullopt) {
    if (levels.size() != (knots.size() - 1) * dim)
        throw ConfigError("piecewise-constant drift needs one level vector per interval");
    return SimpleDrift(std::move(grid), dim, std::move(knots),
                       std::make_shared<detail::LevelRule>(std::move(levels), dim), bound);
}

inline SimpleDrift linear_feedback_drift(GridPtr grid, std::vector<std::size_t> knots, std::vector<double> intercepts,
                                         std::vector<double> gains, std::size_t dim = 1,
                                         std::optional<double> bound = std::nullopt) {
    const std::size_t m = knots.size() - 1;
    if (intercepts.size() != m * dim || gains.size() != m * dim)
        throw ConfigError("linear feedback drift needs intercept and gain vectors per interval");
    return SimpleDrift(std::move(grid), dim, std::move(knots),
                       std::make_shared<detail::LinearFeedbackRule>(std::move(intercepts), std::move(gains), dim),
                       bound);
}

inline SimpleDrift feedback_drift(GridPtr grid, std::size_t dim, std::vector<std::size_t> knots, FeedbackFn fn,
                                  std::optional<double> bound = std::nullopt) {
    return SimpleDrift(std::move(grid), dim, std::move(knots),
                       std::make_shared<detail::FunctionRule>(std::move(fn)), bound);
}

// ξ_k applied to the path's past at the interval's left knot.
inline std::vector<double> evaluate_drift(const SimpleDrift& v, const WienerPath& path, std::size_t interval) {
    v.check_path(path);
    if (interval >= v.n_intervals()) throw ConfigError("drift interval index out of range");
    std::vector<double> out(v.dim());
    v.evaluate(interval, path.past(v.left_knot(interval)), out);
    return out;
}

// ============================================================================
// Path shift shared by T^v and the conjugate recursions
// ============================================================================

namespace detail {

// Adds sign * ∫_0^{t_j} (interval value) ds to `values` for every grid step of
// interval k, continuing the running integral `acc`.
inline void shift_interval(const SimpleDrift& v, std::size_t k, std::span<const double> xi, double sign,
                           std::span<const double> input, std::span<double> output, std::span<double> acc) {
    const std::size_t d = v.dim();
    const TimeGrid& g = v.grid();
    for (std::size_t j = v.left_knot(k); j < v.right_knot(k); ++j) {
        const double dt = g.dt(j);
        for (std::size_t i = 0; i < d; ++i) {
            acc[i] += sign * xi[i] * dt;
            output[(j + 1) * d + i] = input[(j + 1) * d + i] + acc[i];
        }
    }
}

// ṽ (sign = -1) or v̄ (sign = +1): ξ'_k(w) = ξ_k(w + sign ∫ v' ds). Intervals
// are processed forward in time, so no fixed-point iteration is needed.
class ConjugateRule final : public DriftRule {
public:
    ConjugateRule(SimpleDrift base, double sign) : base_(std::move(base)), sign_(sign) {}

    void evaluate(std::size_t k, const PathPast& past, std::span<double> out) const override {
        const std::size_t d = base_.dim();
        const std::size_t last = base_.left_knot(k);
        std::vector<double> input((last + 1) * d);
        for (std::size_t j = 0; j <= last; ++j)
            for (std::size_t i = 0; i < d; ++i) input[j * d + i] = past.at(j, i);
        std::vector<double> shifted(input);
        std::vector<double> acc(d, 0.0), xi(d);
        for (std::size_t q = 0; q < k; ++q) {
            base_.evaluate(q, PathPast(&base_.grid(), d, base_.left_knot(q), shifted), xi);
            shift_interval(base_, q, xi, sign_, input, shifted, acc);
        }
        base_.evaluate(k, PathPast(&base_.grid(), d, last, shifted), out);
    }

    bool evaluate_path(const SimpleDrift&, const WienerPath& path, std::span<double> out) const override {
        const std::size_t d = base_.dim();
        std::span<const double> input = path.values();
        std::vector<double> shifted(input.begin(), input.end());
        std::vector<double> acc(d, 0.0);
        for (std::size_t q = 0; q < base_.n_intervals(); ++q) {
            auto xi = out.subspan(q * d, d);
            base_.evaluate(q, PathPast(&base_.grid(), d, base_.left_knot(q), shifted), xi);
            shift_interval(base_, q, xi, sign_, input, shifted, acc);
        }
        return true;
    }

private:
    SimpleDrift base_;
    double sign_;
};

}  // namespace detail

// ṽ with ξ̃_k(w) = ξ_k(w - ∫ṽ ds); satisfies T^v ∘ T^{-ṽ} = id on the grid.
inline SimpleDrift tilde_conjugate(const SimpleDrift& v) {
    return SimpleDrift(v.grid_ptr(), v.dim(), std::vector<std::size_t>(v.knots().begin(), v.knots().end()),
                       std::make_shared<detail::ConjugateRule>(v, -1.0), v.declared_bound(), false);
}

// v̄ with ξ̄_k(w) = ξ_k(w + ∫v̄ ds); satisfies v(w) = v̄(T^{-v} w) and
// T^{v̄} ∘ T^{-v} = id on the grid.
inline SimpleDrift bar_conjugate(const SimpleDrift& v) {
    return SimpleDrift(v.grid_ptr(), v.dim(), std::vector<std::size_t>(v.knots().begin(), v.knots().end()),
                       std::make_shared<detail::ConjugateRule>(v, +1.0), v.declared_bound(), false);
}

// ============================================================================
// Path transform T^{±v}
// ============================================================================

// output(t_k) = path(t_k) + sign * Σ_{j<k} v_j dt_j, with v read from the input path.
inline WienerPath apply_drift_transform(const WienerPath& path, const SimpleDrift& v, int sign = +1) {
    if (sign != 1 && sign != -1) throw ConfigError("drift transform sign must be +1 or -1");
    const std::vector<double> xi = v.evaluate_along(path);
    std::vector<double> out(path.values().begin(), path.values().end());
    std::vector<double> acc(v.dim(), 0.0);
    for (std::size_t k = 0; k < v.n_intervals(); ++k)
        detail::shift_interval(v, k, std::span<const double>(xi).subspan(k * v.dim(), v.dim()),
                               static_cast<double>(sign), path.values(), out, acc);
    return WienerPath(path.grid_ptr(), path.dim(), std::move(out));
}

// ∫_0^1 |v_s|^2 ds by left-point quadrature from precomputed interval values.
inline double drift_energy(const SimpleDrift& v, std::span<const double> xi) {
    double e = 0.0;
    const std::size_t d = v.dim();
    for (std::size_t j = 0; j < v.grid().n_steps(); ++j) {
        const std::size_t k = v.interval_of_step(j);
        double sq = 0.0;
        for (std::size_t i = 0; i < d; ++i) sq += xi[k * d + i] * xi[k * d + i];
        e += sq * v.grid().dt(j);
    }
    return e;
}

// ============================================================================
// ‖v‖_A^2 = E ∫ |v_s|^2 ds
// ============================================================================

struct ANormSq {
    double value = 0.0;
    double std_error = 0.0;
};

inline ANormSq a_norm_sq(const SimpleDrift& v, std::size_t n_paths, std::uint64_t seed) {
    if (n_paths == 0) throw ConfigError("a_norm_sq needs n_paths >= 1");
    std::vector<double> energy(n_paths);
    parallel_for(n_paths, [&](std::size_t p) {
        WienerPath w = sample_wiener(v.grid_ptr(), v.dim(), seed, p);
        energy[p] = drift_energy(v, v.evaluate_along(w));
    });
    Estimate e = mean_estimate(energy, seed);
    return {e.value, e.std_error};
}

// ============================================================================
// DriftFamily: parameterized subsets of S for optimization
// ============================================================================

enum class FamilyKind { constant, piecewise_constant, linear_state_feedback };

inline std::string to_string(FamilyKind k) {
    switch (k) {
        case FamilyKind::constant: return "constant";
        case FamilyKind::piecewise_constant: return "piecewise-constant";
        case FamilyKind::linear_state_feedback: return "linear-state-feedback";
    }
    return "?";
}

inline FamilyKind family_kind_from_string(const std::string& s) {
    if (s == "constant") return FamilyKind::constant;
    if (s == "piecewise-constant") return FamilyKind::piecewise_constant;
    if (s == "linear-state-feedback") return FamilyKind::linear_state_feedback;
    throw ConfigError("unknown drift family kind '" + s + "'");
}

// Parameter layout:
//   constant               : d values
//   piecewise-constant     : m x d levels
//   linear-state-feedback  : m x (d intercepts, d gains);  v = θ_k,0 + θ_k,1 w(t_k)
struct DriftFamily {
    FamilyKind kind = FamilyKind::constant;
    GridPtr grid;
    std::size_t dim = 1;
    std::vector<std::size_t> knots;
    std::vector<double> lower;
    std::vector<double> upper;
    std::optional<double> bound;

    static DriftFamily make(FamilyKind kind, GridPtr grid, std::size_t n_intervals, double lo, double hi,
                            std::size_t dim = 1, std::optional<double> bound = std::nullopt) {
        DriftFamily f;
        f.kind = kind;
        f.dim = dim;
        f.knots = kind == FamilyKind::constant ? std::vector<std::size_t>{0, grid->n_steps()}
                                               : uniform_knots(*grid, n_intervals);
        f.grid = std::move(grid);
        f.lower.assign(f.n_params(), lo);
        f.upper.assign(f.n_params(), hi);
        f.bound = bound;
        f.validate();
        return f;
    }

    [[nodiscard]] std::size_t n_intervals() const { return knots.size() - 1; }

    [[nodiscard]] std::size_t n_params() const {
        switch (kind) {
            case FamilyKind::constant: return dim;
            case FamilyKind::piecewise_constant: return n_intervals() * dim;
            case FamilyKind::linear_state_feedback: return n_intervals() * 2 * dim;
        }
        return 0;
    }

    void validate() const {
        if (!grid) throw ConfigError("drift family needs a grid");
        if (dim == 0) throw ConfigError("drift family dimension must be >= 1");
        if (knots.size() < 2 || knots.front() != 0 || knots.back() != grid->n_steps())
            throw ConfigError("drift family knots must span the grid");
        if (kind == FamilyKind::constant && knots.size() != 2)
            throw ConfigError("constant family has a single interval");
        if (lower.size() != n_params() || upper.size() != n_params())
            throw ConfigError("drift family bounds must have one entry per parameter");
        for (std::size_t i = 0; i < lower.size(); ++i)
            if (!(lower[i] <= upper[i])) throw ConfigError("drift family box has lower > upper");
    }

    [[nodiscard]] bool in_box(std::span<const double> theta) const {
        if (theta.size() != n_params()) return false;
        for (std::size_t i = 0; i < theta.size(); ++i)
            if (!(theta[i] >= lower[i] && theta[i] <= upper[i])) return false;
        return true;
    }

    [[nodiscard]] std::vector<double> clip(std::span<const double> theta) const {
        std::vector<double> out(theta.begin(), theta.end());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], lower[i], upper[i]);
        return out;
    }

    [[nodiscard]] std::vector<double> center() const {
        std::vector<double> c(n_params());
        for (std::size_t i = 0; i < c.size(); ++i) c[i] = std::clamp(0.0, lower[i], upper[i]);
        return c;
    }

    [[nodiscard]] SimpleDrift instantiate(std::span<const double> theta) const {
        if (theta.size() != n_params()) throw ConfigError("parameter vector has the wrong length for this family");
        if (!in_box(theta)) throw ConfigError("parameter vector lies outside the family's box");
        const std::vector<std::size_t> k(knots);
        switch (kind) {
            case FamilyKind::constant:
                return SimpleDrift(grid, dim, k,
                                   std::make_shared<detail::LevelRule>(std::vector<double>(theta.begin(), theta.end()), dim),
                                   bound);
            case FamilyKind::piecewise_constant:
                return piecewise_constant_drift(grid, k, std::vector<double>(theta.begin(), theta.end()), dim, bound);
            case FamilyKind::linear_state_feedback: {
                const std::size_t m = n_intervals();
                std::vector<double> a(m * dim), b(m * dim);
                for (std::size_t q = 0; q < m; ++q)
                    for (std::size_t i = 0; i < dim; ++i) {
                        a[q * dim + i] = theta[q * 2 * dim + i];
                        b[q * dim + i] = theta[q * 2 * dim + dim + i];
                    }
                return linear_feedback_drift(grid, k, std::move(a), std::move(b), dim, bound);
            }
        }
        throw ConfigError("unknown drift family kind");
    }

    // Uniform draw from the box.
    [[nodiscard]] std::vector<double> sample_theta(StreamRng& rng) const {
        std::vector<double> t(n_params());
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lower[i], upper[i]);
        return t;
    }
};

}  // namespace bdvar
