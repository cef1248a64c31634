#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bdvar/drift_class.hpp"
#include "bdvar/errors.hpp"
#include "bdvar/estimate.hpp"
#include "bdvar/functional.hpp"
#include "bdvar/grid.hpp"
#include "bdvar/parallel.hpp"
#include "bdvar/quadrature.hpp"
#include "bdvar/random.hpp"
#include "bdvar/wiener_core.hpp"

namespace bdvar {

namespace detail {

inline WienerPath shifted_path(const WienerPath& path, const SimpleDrift& v, std::span<const double> xi, double sign) {
    std::vector<double> out(path.values().begin(), path.values().end());
    std::vector<double> acc(v.dim(), 0.0);
    for (std::size_t k = 0; k < v.n_intervals(); ++k)
        shift_interval(v, k, xi.subspan(k * v.dim(), v.dim()), sign, path.values(), out, acc);
    return WienerPath(path.grid_ptr(), path.dim(), std::move(out));
}

inline void require_paths(std::size_t n) {
    if (n == 0) throw ConfigError("n_paths must be >= 1");
}

}  // namespace detail

// ============================================================================
// Left-hand side: log E[e^{F(W)}]
// ============================================================================

inline Estimate estimate_lhs_direct(const FunctionalSpec& F, const PathSpace& space, std::size_t n_paths,
                                    std::uint64_t seed) {
    detail::require_paths(n_paths);
    std::vector<double> terms(n_paths);
    parallel_for(n_paths, [&](std::size_t p) { terms[p] = F(sample_wiener(space, seed, p)); });
    return log_mean_exp_estimate(terms, seed);
}

// Importance-sampled log E[e^{F(W)}]: paths are drawn from the drifted law
// T^v(W) and reweighted by E^{-v}_1(W) = exp(-∫v dW - ½∫|v|^2 ds). This is the
// Girsanov identity E^u[G(T^{-u} W)] = E[G(W)] applied with u = -v; the
// choice v ≡ c removes all variance for F(w) = c w(1).
inline Estimate estimate_lhs_importance(const FunctionalSpec& F, const SimpleDrift& v, std::size_t n_paths,
                                        std::uint64_t seed) {
    detail::require_paths(n_paths);
    std::vector<double> terms(n_paths);
    parallel_for(n_paths, [&](std::size_t p) {
        WienerPath w = sample_wiener(v.grid_ptr(), v.dim(), seed, p);
        const std::vector<double> xi = v.evaluate_along(w);
        const DoleansWeight dw = detail::doleans_from_values(w, v, xi);
        const double f = F(detail::shifted_path(w, v, xi, +1.0));
        terms[p] = is_rejected(f) ? f : f - dw.stochastic_integral - 0.5 * dw.energy;
    });
    return log_mean_exp_estimate(terms, seed);
}

// ============================================================================
// Right-hand side: E[F(T^v W) - ½ ∫ |v_s|^2 ds]
// ============================================================================

inline Estimate rhs_objective(const FunctionalSpec& F, const SimpleDrift& v, std::size_t n_paths,
                              std::uint64_t seed) {
    detail::require_paths(n_paths);
    std::vector<double> samples(n_paths);
    parallel_for(n_paths, [&](std::size_t p) {
        WienerPath w = sample_wiener(v.grid_ptr(), v.dim(), seed, p);
        const std::vector<double> xi = v.evaluate_along(w);
        const double f = F(detail::shifted_path(w, v, xi, +1.0));
        if (is_rejected(f))
            throw EvaluationError("rhs objective: functional rejected shifted path " + std::to_string(p));
        samples[p] = f - 0.5 * drift_energy(v, xi);
    });
    return mean_estimate(samples, seed);
}

// ============================================================================
// SPSA optimization over a drift family
// ============================================================================

struct SpsaConfig {
    std::size_t iterations = 500;
    double a = 0.1;
    double A = 10.0;
    double c = 0.1;
    double alpha = 0.602;
    double gamma = 0.101;
    std::size_t n_paths = 2000;         // per objective evaluation
    std::size_t final_n_paths = 100000;  // fresh re-evaluation of the candidates
    double tail_fraction = 0.2;         // share of iterates averaged into the second candidate
    std::size_t divergence_patience = 10;
    std::vector<double> initial_theta;  // empty: box point closest to 0
};

struct TraceEntry {
    std::vector<double> theta;
    Estimate objective;
};

// `iterates` holds (θ_k, mean of the two perturbed objectives). The
// candidates (last iterate, tail average) are re-evaluated on a fresh common
// sample; best_* is the better of the two.
struct OptimizationTrace {
    std::vector<TraceEntry> iterates;
    std::vector<TraceEntry> candidates;
    std::vector<double> best_theta;
    Estimate best_objective;
    SpsaConfig config;
};

class OptimizationError : public Error {
public:
    OptimizationError(const std::string& what, OptimizationTrace trace)
        : Error(what), trace_(std::make_shared<OptimizationTrace>(std::move(trace))) {}
    [[nodiscard]] const OptimizationTrace& trace() const { return *trace_; }

private:
    std::shared_ptr<OptimizationTrace> trace_;
};

inline OptimizationTrace optimize_drift(const FunctionalSpec& F, const DriftFamily& family, const SpsaConfig& cfg,
                                        std::uint64_t seed) {
    family.validate();
    if (cfg.iterations == 0 || cfg.n_paths == 0 || cfg.final_n_paths == 0)
        throw ConfigError("optimizer needs positive iteration and path budgets");
    if (!(cfg.a > 0.0 && cfg.c > 0.0)) throw ConfigError("SPSA gains a and c must be positive");
    const std::size_t p = family.n_params();
    std::vector<double> theta = cfg.initial_theta.empty() ? family.center() : family.clip(cfg.initial_theta);
    if (theta.size() != p) throw ConfigError("initial theta has the wrong length");

    OptimizationTrace trace;
    trace.config = cfg;
    std::size_t failures = 0;
    auto objective = [&](std::span<const double> t, std::size_t n, std::uint64_t s) -> std::optional<Estimate> {
        try {
            Estimate e = rhs_objective(F, family.instantiate(t), n, s);
            if (!std::isfinite(e.value)) return std::nullopt;
            return e;
        } catch (const EvaluationError&) {
            return std::nullopt;
        } catch (const EstimationError&) {
            return std::nullopt;
        }
    };

    for (std::size_t k = 1; k <= cfg.iterations; ++k) {
        const double kd = static_cast<double>(k);
        const double ak = cfg.a / std::pow(kd + cfg.A, cfg.alpha);
        const double ck = cfg.c / std::pow(kd, cfg.gamma);
        StreamRng prng(tagged_seed(seed, StreamTag::spsa_perturbation), k);
        std::vector<double> delta(p), tp(p), tm(p);
        for (std::size_t i = 0; i < p; ++i) {
            delta[i] = prng.rademacher();
            tp[i] = theta[i] + ck * delta[i];
            tm[i] = theta[i] - ck * delta[i];
        }
        tp = family.clip(tp);
        tm = family.clip(tm);
        const std::uint64_t eval_seed = tagged_seed(seed, StreamTag::spsa_evaluation, k);
        auto yp = objective(tp, cfg.n_paths, eval_seed);
        auto ym = objective(tm, cfg.n_paths, eval_seed);
        if (!yp || !ym) {
            trace.iterates.push_back({theta, {-std::numeric_limits<double>::infinity(), 0.0, cfg.n_paths, eval_seed}});
            if (++failures >= cfg.divergence_patience)
                throw OptimizationError("objective diverged for " + std::to_string(failures) +
                                            " consecutive iterations",
                                        std::move(trace));
            continue;
        }
        failures = 0;
        trace.iterates.push_back({theta,
                                  {0.5 * (yp->value + ym->value), 0.5 * combined_stderr(*yp, *ym), cfg.n_paths,
                                   eval_seed}});
        const double dy = yp->value - ym->value;
        for (std::size_t i = 0; i < p; ++i) {
            const double span = tp[i] - tm[i];
            const double g = span != 0.0 ? dy / span : 0.0;
            theta[i] += ak * g;
        }
        theta = family.clip(theta);
    }

    // Candidates: last iterate and the average over the tail of the run.
    const std::size_t n_it = trace.iterates.size();
    const std::size_t tail = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.tail_fraction * n_it));
    std::vector<double> avg(p, 0.0);
    std::size_t used = 0;
    for (std::size_t i = n_it - tail; i < n_it; ++i) {
        if (!std::isfinite(trace.iterates[i].objective.value)) continue;
        for (std::size_t j = 0; j < p; ++j) avg[j] += trace.iterates[i].theta[j];
        ++used;
    }
    if (used > 0)
        for (double& x : avg) x /= static_cast<double>(used);
    else
        avg = theta;

    const std::uint64_t final_seed = tagged_seed(seed, StreamTag::spsa_final);
    for (const auto& cand : {theta, family.clip(avg)}) {
        auto e = objective(cand, cfg.final_n_paths, final_seed);
        if (!e) throw OptimizationError("final re-evaluation of the optimizer output failed", std::move(trace));
        trace.candidates.push_back({cand, *e});
    }
    const auto best = std::max_element(trace.candidates.begin(), trace.candidates.end(),
                                       [](const TraceEntry& a, const TraceEntry& b) {
                                           return a.objective.value < b.objective.value;
                                       });
    trace.best_theta = best->theta;
    trace.best_objective = best->objective;
    return trace;
}

// ============================================================================
// Clark-Ocone drift for cylinder functionals
// ============================================================================

struct QuadConfig {
    std::vector<std::size_t> orders{16, 32, 64};
    double rel_tol = 1e-8;
    std::size_t knot_stride = 1;  // drift knots every `knot_stride` grid steps
};

// v_t = Σ_k 1{t <= t_k} E[e^f ∂_k f | F_t] / E[e^f | F_t] for a cylinder
// functional with m <= 2 times in d = 1, by nested Gauss-Hermite quadrature
// over the Gaussian law of the future cylinder values given W(t) = x.
class ClarkOconeField {
public:
    ClarkOconeField(const FunctionalSpec& F, QuadConfig cfg) : cfg_(std::move(cfg)) {
        if (F.kind != FunctionalKind::cylinder || !F.cylinder)
            throw ConfigError("Clark-Ocone drift requires a cylinder functional");
        spec_ = *F.cylinder;
        if (spec_.times.size() > 2) throw ConfigError("Clark-Ocone drift supports at most two cylinder times");
        if (cfg_.orders.size() < 2) throw ConfigError("quadrature escalation needs at least two orders");
        for (std::size_t n : cfg_.orders) rules_.push_back(gauss_hermite(n));
    }

    [[nodiscard]] const CylinderSpec& cylinder() const { return spec_; }

    // Drift at time t with W(t) = x. `known` holds w(t_i) for the cylinder
    // times t_i < t, in order. `horizon` decides which terms are active:
    // term k contributes iff horizon <= t_k (horizon = t for pointwise use,
    // the interval's right end for piecewise-constant use).
    [[nodiscard]] double value(double t, double x, std::span<const double> known, double horizon) const {
        double prev = 0.0;
        bool have_prev = false;
        for (std::size_t r = 0; r < rules_.size(); ++r) {
            const double v = evaluate(rules_[r], t, x, known, horizon);
            if (have_prev && std::abs(v - prev) <= cfg_.rel_tol * std::max(1.0, std::abs(v))) return v;
            prev = v;
            have_prev = true;
        }
        throw NumericError("Clark-Ocone quadrature did not converge at t = " + std::to_string(t) +
                           ", x = " + std::to_string(x));
    }

    [[nodiscard]] double value(double t, double x, std::span<const double> known = {}) const {
        return value(t, x, known, t);
    }

private:
    double evaluate(const GaussHermiteRule& rule, double t, double x, std::span<const double> known,
                    double horizon) const {
        const std::size_t m = spec_.times.size();
        std::size_t n_known = 0;
        while (n_known < m && spec_.times[n_known] <= t) ++n_known;
        double y[2] = {0.0, 0.0};
        for (std::size_t i = 0; i < n_known; ++i) {
            if (spec_.times[i] == t) y[i] = x;
            else if (i < known.size()) y[i] = known[i];
            else throw ConfigError("Clark-Ocone evaluation is missing known cylinder values");
        }

        std::vector<bool> active(m);
        for (std::size_t k = 0; k < m; ++k) active[k] = horizon <= spec_.times[k];

        // Enumerate quadrature nodes for the future values.
        const std::size_t n_future = m - n_known;
        const std::size_t q = rule.nodes.size();
        std::vector<double> wts, fvals, grads;
        const std::size_t total = n_future == 0 ? 1 : (n_future == 1 ? q : q * q);
        wts.reserve(total);
        fvals.reserve(total);
        grads.reserve(total);
        double g[2];
        auto visit = [&](double weight) {
            std::span<const double> ys(y, m);
            fvals.push_back(spec_.f(ys));
            spec_.grad(ys, std::span<double>(g, m));
            double s = 0.0;
            for (std::size_t k = 0; k < m; ++k)
                if (active[k]) s += g[k];
            grads.push_back(s);
            wts.push_back(weight);
        };
        if (n_future == 0) {
            visit(1.0);
        } else {
            const double s1 = std::sqrt(spec_.times[n_known] - t);
            for (std::size_t i = 0; i < q; ++i) {
                y[n_known] = x + s1 * rule.nodes[i];
                if (n_future == 1) {
                    visit(rule.weights[i]);
                } else {
                    const double s2 = std::sqrt(spec_.times[1] - spec_.times[0]);
                    for (std::size_t j = 0; j < q; ++j) {
                        y[1] = y[0] + s2 * rule.nodes[j];
                        visit(rule.weights[i] * rule.weights[j]);
                    }
                }
            }
        }
        const double shift = *std::max_element(fvals.begin(), fvals.end());
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < fvals.size(); ++i) {
            const double e = wts[i] * std::exp(fvals[i] - shift);
            num += e * grads[i];
            den += e;
        }
        if (!(den > 0.0) || !std::isfinite(num)) throw NumericError("Clark-Ocone quadrature underflow");
        return num / den;
    }

    CylinderSpec spec_;
    QuadConfig cfg_;
    std::vector<GaussHermiteRule> rules_;
};

// The Clark-Ocone drift as a simple process on `grid`: on each drift interval
// the feedback is the field at the left knot, with terms active while the
// interval lies inside [0, t_k]. Cylinder times are always drift knots.
inline SimpleDrift clark_ocone_drift(const FunctionalSpec& F, const GridPtr& grid, const QuadConfig& cfg = {}) {
    auto field = std::make_shared<const ClarkOconeField>(F, cfg);
    const auto& times = field->cylinder().times;
    std::vector<std::size_t> cyl_idx = knots_from_times(*grid, times);
    if (cfg.knot_stride == 0) throw ConfigError("knot stride must be >= 1");
    std::vector<std::size_t> knots;
    for (std::size_t j = 0; j < grid->n_steps(); j += cfg.knot_stride) knots.push_back(j);
    knots.push_back(grid->n_steps());
    knots.insert(knots.end(), cyl_idx.begin(), cyl_idx.end());
    std::sort(knots.begin(), knots.end());
    knots.erase(std::unique(knots.begin(), knots.end()), knots.end());

    auto fn = [field, cyl_idx, knots, grid](std::size_t k, const PathPast& past, std::span<double> out) {
        const std::size_t left = past.last_knot();
        const double t = grid->time(left);
        const double horizon = grid->time(knots[k + 1]);
        double known[2];
        std::size_t nk = 0;
        for (std::size_t i = 0; i < cyl_idx.size(); ++i)
            if (cyl_idx[i] <= left) known[nk++] = past.at(cyl_idx[i], 0);
        out[0] = field->value(t, past.at(left, 0), std::span<const double>(known, nk), horizon);
    };
    return feedback_drift(grid, 1, std::move(knots), std::move(fn));
}

// ============================================================================
// Truncation experiments
// ============================================================================

struct TruncationRow {
    double lower_n = std::numeric_limits<double>::infinity();  // F ∨ (-N); inf = inactive
    double upper_m = std::numeric_limits<double>::infinity();  // ∧ M; inf = inactive
    Estimate estimate;
};

struct TruncationTable {
    std::vector<TruncationRow> rows;
    bool monotone_in_m = true;
    bool monotone_in_n = true;
    std::vector<std::string> violations;
};

// log E[e^{(F ∨ (-N)) ∧ M}] over ({∞} ∪ N_list) x ({∞} ∪ M_list), all on one
// common path sample.
inline TruncationTable truncation_sweep(const FunctionalSpec& F, const PathSpace& space, std::vector<double> m_list,
                                        std::vector<double> n_list, std::size_t n_paths, std::uint64_t seed) {
    detail::require_paths(n_paths);
    std::vector<double> fvals(n_paths);
    parallel_for(n_paths, [&](std::size_t p) { fvals[p] = F(sample_wiener(space, seed, p)); });
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::sort(m_list.begin(), m_list.end());
    std::sort(n_list.begin(), n_list.end());
    m_list.push_back(inf);
    n_list.push_back(inf);

    TruncationTable table;
    std::vector<double> terms(n_paths);
    for (double nn : n_list)
        for (double mm : m_list) {
            for (std::size_t p = 0; p < n_paths; ++p) terms[p] = truncate_value(fvals[p], nn, mm);
            table.rows.push_back({nn, mm, log_mean_exp_estimate(terms, seed)});
        }
    const std::size_t nm = m_list.size();
    auto at = [&](std::size_t in, std::size_t im) -> const TruncationRow& { return table.rows[in * nm + im]; };
    for (std::size_t in = 0; in < n_list.size(); ++in)
        for (std::size_t im = 1; im < nm; ++im) {
            const auto& a = at(in, im - 1);
            const auto& b = at(in, im);
            if (b.estimate.value < a.estimate.value - 3.0 * combined_stderr(a.estimate, b.estimate)) {
                table.monotone_in_m = false;
                table.violations.push_back("not nondecreasing in M at N=" + std::to_string(a.lower_n) +
                                           ", M=" + std::to_string(b.upper_m));
            }
        }
    for (std::size_t im = 0; im < nm; ++im)
        for (std::size_t in = 1; in < n_list.size(); ++in) {
            const auto& a = at(in - 1, im);
            const auto& b = at(in, im);
            if (b.estimate.value > a.estimate.value + 3.0 * combined_stderr(a.estimate, b.estimate)) {
                table.monotone_in_n = false;
                table.violations.push_back("not nonincreasing in N at M=" + std::to_string(a.upper_m) +
                                           ", N=" + std::to_string(b.lower_n));
            }
        }
    return table;
}

// ============================================================================
// Integrability diagnostics
// ============================================================================

struct AssumptionReport {
    Estimate log_mgf;                // log E[e^F]
    double max_summand_share = 0.0;  // max_i e^{F_i} / Σ_j e^{F_j}
    Estimate negative_moment;        // E[F_-^{1+δ}]
    double delta = 0.0;
    std::optional<bool> growth_holds;
    std::size_t growth_violations = 0;
    std::size_t n_rejected = 0;
};

inline AssumptionReport validate_assumptions(const FunctionalSpec& F, const PathSpace& space, std::size_t n_paths,
                                             std::uint64_t seed) {
    detail::require_paths(n_paths);
    if (!F.delta || !(*F.delta > 0.0)) throw ConfigError("validate_assumptions needs a positive delta");
    std::vector<double> fvals(n_paths), sup(n_paths);
    parallel_for(n_paths, [&](std::size_t p) {
        WienerPath w = sample_wiener(space, seed, p);
        fvals[p] = F(w);
        sup[p] = w.sup_norm();
    });
    AssumptionReport r;
    r.delta = *F.delta;
    r.log_mgf = log_mean_exp_estimate(fvals, seed);
    const double shift = *std::max_element(fvals.begin(), fvals.end());
    std::vector<double> e(n_paths), neg(n_paths);
    for (std::size_t p = 0; p < n_paths; ++p) {
        e[p] = std::exp(fvals[p] - shift);
        if (is_rejected(fvals[p])) {
            ++r.n_rejected;
            neg[p] = std::numeric_limits<double>::infinity();
        } else {
            neg[p] = std::pow(std::max(-fvals[p], 0.0), 1.0 + r.delta);
        }
    }
    r.max_summand_share = *std::max_element(e.begin(), e.end()) / pairwise_sum(e);
    if (r.n_rejected == 0) r.negative_moment = mean_estimate(neg, seed);
    else r.negative_moment = {std::numeric_limits<double>::infinity(), 0.0, n_paths, seed};
    if (F.growth) {
        const auto& gc = *F.growth;
        for (std::size_t p = 0; p < n_paths; ++p) {
            const double lhs = is_rejected(fvals[p]) ? std::numeric_limits<double>::infinity()
                                                     : std::log1p(std::max(-fvals[p], 0.0));
            const double rhs = gc.c2 * (1.0 + std::pow(sup[p], gc.alpha)) + gc.c1 * sup[p] * sup[p];
            if (lhs > rhs * (1.0 + 1e-12) + 1e-12) ++r.growth_violations;
        }
        r.growth_holds = r.growth_violations == 0 && gc.c1 < 0.5 && gc.alpha < 2.0 && gc.c1 >= 0.0;
    }
    return r;
}

// ============================================================================
// Lower bound: E[F(T^v W) - ½∫|v|^2] <= log E[e^F]
// ============================================================================

struct LowerBoundEntry {
    Estimate rhs;
    double margin = 0.0;  // lhs - rhs
    double combined_se = 0.0;
    bool violation = false;
};

struct LowerBoundReport {
    Estimate lhs;
    std::vector<LowerBoundEntry> entries;
    double worst_margin = std::numeric_limits<double>::infinity();
    double worst_z = std::numeric_limits<double>::infinity();  // margin / combined_se
    std::size_t violations = 0;
};

inline LowerBoundReport lower_bound_suite(const FunctionalSpec& F, const PathSpace& space,
                                          const std::vector<SimpleDrift>& drifts, std::size_t n_paths,
                                          std::uint64_t seed) {
    LowerBoundReport r;
    r.lhs = estimate_lhs_direct(F, space, n_paths, seed);
    for (const auto& v : drifts) {
        if (!same_grid(v.grid_ptr(), space.grid) || v.dim() != space.dim)
            throw ConfigError("lower-bound suite drifts must live on the suite's path space");
        LowerBoundEntry e;
        e.rhs = rhs_objective(F, v, n_paths, seed);
        e.margin = r.lhs.value - e.rhs.value;
        e.combined_se = combined_stderr(r.lhs, e.rhs);
        e.violation = e.margin < -3.0 * e.combined_se;
        if (e.violation) ++r.violations;
        r.worst_margin = std::min(r.worst_margin, e.margin);
        if (e.combined_se > 0.0) r.worst_z = std::min(r.worst_z, e.margin / e.combined_se);
        else if (e.margin < 0.0) r.worst_z = -std::numeric_limits<double>::infinity();
        r.entries.push_back(e);
    }
    return r;
}

// ============================================================================
// Relative entropy identity E^v[log E^v_1] = ½ E^v[∫|v|^2]
// ============================================================================

struct EntropyReport {
    Estimate lhs;  // E^v[log E^v_1]
    Estimate rhs;  // ½ E^v[∫ |v_s|^2 ds]
    double combined_se = 0.0;
    bool agrees = false;
};

// Expectations under P^v are realized by the pullback E^v[G(W)] = E[G(T^{v̄} W)].
inline EntropyReport entropy_identity_check(const SimpleDrift& v, std::size_t n_paths, std::uint64_t seed) {
    detail::require_paths(n_paths);
    const SimpleDrift vbar = bar_conjugate(v);
    std::vector<double> log_e(n_paths), half_energy(n_paths);
    parallel_for(n_paths, [&](std::size_t p) {
        WienerPath w = sample_wiener(v.grid_ptr(), v.dim(), seed, p);
        const std::vector<double> xbar = vbar.evaluate_along(w);
        const WienerPath x = detail::shifted_path(w, vbar, xbar, +1.0);
        const DoleansWeight dw = doleans_exponential(x, v);
        log_e[p] = dw.log_value;
        half_energy[p] = 0.5 * dw.energy;
    });
    EntropyReport r;
    r.lhs = mean_estimate(log_e, seed);
    r.rhs = mean_estimate(half_energy, seed);
    r.combined_se = combined_stderr(r.lhs, r.rhs);
    r.agrees = std::abs(r.lhs.value - r.rhs.value) <= 3.0 * r.combined_se;
    return r;
}

}  // namespace bdvar
