#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bdvar/convex.hpp"
#include "bdvar/errors.hpp"
#include "bdvar/estimate.hpp"
#include "bdvar/functional.hpp"
#include "bdvar/grid.hpp"
#include "bdvar/parallel.hpp"
#include "bdvar/quadrature.hpp"
#include "bdvar/random.hpp"

namespace bdvar {

// ============================================================================
// Parameterized functionals G(w, λ)
// ============================================================================

struct ParamFunctionalSpec {
    std::string name;
    std::function<double(const WienerPath&, std::span<const double>)> evaluator;
    std::vector<double> lambda_lower;
    std::vector<double> lambda_upper;
    std::optional<double> delta;

    [[nodiscard]] std::size_t lambda_dim() const { return lambda_lower.size(); }

    [[nodiscard]] bool in_domain(std::span<const double> lambda) const {
        if (lambda.size() != lambda_dim()) return false;
        for (std::size_t i = 0; i < lambda.size(); ++i)
            if (!(lambda[i] >= lambda_lower[i] && lambda[i] <= lambda_upper[i])) return false;
        return true;
    }

    double operator()(const WienerPath& w, std::span<const double> lambda) const {
        const double v = evaluator(w, lambda);
        if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
            throw EvaluationError("parameterized functional '" + name + "' returned a non-finite value");
        return v;
    }
};

// G(w, λ) = -(w(1) - λ)^2 / 2, d = 1.
inline ParamFunctionalSpec shifted_quadratic_family(double lo = -10.0, double hi = 10.0) {
    return {"shifted-quadratic",
            [](const WienerPath& w, std::span<const double> l) {
                const double x = w.terminal(0) - l[0];
                return -0.5 * x * x;
            },
            {lo}, {hi}, 1.0};
}

// G(w, λ) = λ w(1), d = 1.
inline ParamFunctionalSpec linear_tilt_family(double lo = -10.0, double hi = 10.0) {
    return {"linear-tilt", [](const WienerPath& w, std::span<const double> l) { return l[0] * w.terminal(0); },
            {lo}, {hi}, 1.0};
}

// G(w, λ) = a w(1)^2, independent of λ.
inline ParamFunctionalSpec terminal_square_family(double a, double lo = -10.0, double hi = 10.0) {
    return {"terminal-square",
            [a](const WienerPath& w, std::span<const double>) { return a * w.terminal(0) * w.terminal(0); },
            {lo}, {hi}, 1.0};
}

// ============================================================================
// Midpoint-concavity scan of λ -> log E[e^{G(W, λ)}]
// ============================================================================

enum class Verdict { pass, fail, inconclusive };

inline std::string to_string(Verdict v) {
    switch (v) {
        case Verdict::pass: return "pass";
        case Verdict::fail: return "fail";
        case Verdict::inconclusive: return "inconclusive";
    }
    return "?";
}

struct MidpointDeficit {
    std::size_t i = 0;
    std::size_t j = 0;
    std::vector<double> midpoint;
    double deficit = 0.0;  // g(mid) - ½ g(λ_i) - ½ g(λ_j)
    double std_error = 0.0;
};

struct ConcavityReport {
    std::vector<std::vector<double>> lambda_grid;
    std::vector<std::optional<Estimate>> values;
    std::vector<MidpointDeficit> deficits;
    std::vector<std::string> failures;
    Verdict verdict = Verdict::pass;
};

// All λ (grid points and midpoints) share one path batch. The deficit
// standard error comes from the delta method applied jointly to the three
// correlated sample means.
inline ConcavityReport scan_log_partition(const ParamFunctionalSpec& G, const PathSpace& space,
                                          const std::vector<std::vector<double>>& lambda_grid, std::size_t n_paths,
                                          std::uint64_t seed) {
    if (n_paths < 2) throw ConfigError("concavity scan needs at least two paths");
    if (lambda_grid.empty()) throw ConfigError("concavity scan needs a nonempty lambda grid");
    for (const auto& l : lambda_grid)
        if (!G.in_domain(l)) throw ConfigError("lambda grid point outside the functional's domain");

    // Distinct evaluation points: the grid followed by any new midpoints.
    std::vector<std::vector<double>> points(lambda_grid);
    auto index_of = [&](const std::vector<double>& l) -> std::size_t {
        for (std::size_t q = 0; q < points.size(); ++q)
            if (points[q] == l) return q;
        points.push_back(l);
        return points.size() - 1;
    };
    struct Pair {
        std::size_t i, j, mid;
    };
    std::vector<Pair> pairs;
    for (std::size_t gap = 1; gap <= 2; ++gap)
        for (std::size_t i = 0; i + gap < lambda_grid.size(); ++i) {
            std::vector<double> m(lambda_grid[i].size());
            for (std::size_t c = 0; c < m.size(); ++c) m[c] = 0.5 * (lambda_grid[i][c] + lambda_grid[i + gap][c]);
            pairs.push_back({i, i + gap, index_of(m)});
        }

    const std::size_t np = points.size();
    std::vector<double> gv(n_paths * np);
    parallel_for(n_paths, [&](std::size_t p) {
        WienerPath w = sample_wiener(space, seed, p);
        for (std::size_t q = 0; q < np; ++q) gv[p * np + q] = G(w, points[q]);
    });

    ConcavityReport r;
    r.lambda_grid = lambda_grid;
    std::vector<std::optional<Estimate>> est(np);
    std::vector<double> shift(np), mean_scaled(np);
    std::vector<double> col(n_paths);
    for (std::size_t q = 0; q < np; ++q) {
        for (std::size_t p = 0; p < n_paths; ++p) col[p] = gv[p * np + q];
        try {
            est[q] = log_mean_exp_estimate(col, seed);
            shift[q] = *std::max_element(col.begin(), col.end());
            std::vector<double> s(n_paths);
            for (std::size_t p = 0; p < n_paths; ++p) s[p] = std::exp(col[p] - shift[q]);
            mean_scaled[q] = sample_mean(s);
        } catch (const EstimationError& e) {
            r.failures.push_back("lambda point " + std::to_string(q) + ": " + e.what());
        }
    }
    r.values.assign(est.begin(), est.begin() + static_cast<std::ptrdiff_t>(lambda_grid.size()));

    bool violated = false;
    std::vector<double> psi(n_paths);
    for (const Pair& pr : pairs) {
        if (!est[pr.i] || !est[pr.j] || !est[pr.mid]) continue;
        MidpointDeficit d;
        d.i = pr.i;
        d.j = pr.j;
        d.midpoint = points[pr.mid];
        d.deficit = est[pr.mid]->value - 0.5 * est[pr.i]->value - 0.5 * est[pr.j]->value;
        auto term = [&](std::size_t q, std::size_t p) {
            return std::exp(gv[p * np + q] - shift[q]) / mean_scaled[q];
        };
        for (std::size_t p = 0; p < n_paths; ++p)
            psi[p] = term(pr.mid, p) - 0.5 * term(pr.i, p) - 0.5 * term(pr.j, p);
        const double m = sample_mean(psi);
        d.std_error = std::sqrt(sample_variance(psi, m) / static_cast<double>(n_paths));
        if (d.deficit < -3.0 * d.std_error) violated = true;
        r.deficits.push_back(std::move(d));
    }
    if (!r.failures.empty()) r.verdict = Verdict::inconclusive;
    else r.verdict = violated ? Verdict::fail : Verdict::pass;
    return r;
}

// Uniform 1-D λ grid lo, lo + step, ..., hi.
inline std::vector<std::vector<double>> uniform_lambda_grid(double lo, double hi, double step) {
    if (!(step > 0.0) || !(hi >= lo)) throw ConfigError("lambda grid needs step > 0 and hi >= lo");
    std::vector<std::vector<double>> g;
    const auto n = static_cast<std::size_t>(std::llround((hi - lo) / step));
    for (std::size_t i = 0; i <= n; ++i) g.push_back({lo + static_cast<double>(i) * step});
    return g;
}

// ============================================================================
// Joint concavity hypothesis on sampled triples
// ============================================================================

struct B2Violation {
    std::size_t triple = 0;
    double theta = 0.0;
    double slack = 0.0;  // lhs - rhs; negative beyond tolerance means violation
    std::vector<double> lambda1, lambda2;
    double h_norm_sq = 0.0;
};

struct B2Report {
    std::size_t n_checked = 0;
    std::size_t n_violations = 0;
    double worst_slack = std::numeric_limits<double>::infinity();
    std::optional<B2Violation> first_violation;
    [[nodiscard]] bool passed() const { return n_violations == 0; }
};

// For each triple: w₂ Brownian, h piecewise linear with constant slope on 1,
// 2, 4 or 8 blocks, λ₁, λ₂ uniform in the domain, and θ ∈ {¼, ½, ¾}. Checks
//   G(w₂ + θh, θλ₁ + (1-θ)λ₂) >= θ G(w₂ + h, λ₁) + (1-θ) G(w₂, λ₂) - ½θ(1-θ)|h|²_H
// up to `tolerance`.
inline B2Report check_b2_hypothesis(const ParamFunctionalSpec& G, const PathSpace& space, std::size_t n_triples,
                                    std::uint64_t seed, double h_scale = 2.0, double tolerance = 1e-9) {
    if (n_triples == 0) throw ConfigError("hypothesis check needs at least one triple");
    for (std::size_t i = 0; i < G.lambda_dim(); ++i)
        if (!std::isfinite(G.lambda_lower[i]) || !std::isfinite(G.lambda_upper[i]))
            throw ConfigError("hypothesis check needs a bounded lambda domain");
    const TimeGrid& grid = *space.grid;
    const std::size_t d = space.dim;
    constexpr double thetas[3] = {0.25, 0.5, 0.75};
    const std::size_t blocks_choice[4] = {1, 2, 4, 8};

    struct Outcome {
        double slack[3];
        std::vector<double> l1, l2;
        double hn;
    };
    std::vector<Outcome> out(n_triples);
    parallel_for(n_triples, [&](std::size_t t) {
        StreamRng rng(tagged_seed(seed, StreamTag::b2_triples), t);
        WienerPath w2 = sample_wiener(space, tagged_seed(seed, StreamTag::paths), t);
        const std::size_t blocks = std::min(blocks_choice[t % 4], grid.n_steps());
        std::vector<double> block_slopes(blocks * d);
        for (double& s : block_slopes) s = h_scale * rng.gaussian();
        std::vector<double> slopes(grid.n_steps() * d);
        for (std::size_t j = 0; j < grid.n_steps(); ++j) {
            const std::size_t b = std::min(blocks - 1, j * blocks / grid.n_steps());
            for (std::size_t i = 0; i < d; ++i) slopes[j * d + i] = block_slopes[b * d + i];
        }
        const CameronMartinPath h(space.grid, d, std::move(slopes));
        const WienerPath hp = h.to_path();
        Outcome& o = out[t];
        o.hn = h_norm_sq(h);
        o.l1.resize(G.lambda_dim());
        o.l2.resize(G.lambda_dim());
        for (std::size_t i = 0; i < G.lambda_dim(); ++i) {
            o.l1[i] = rng.uniform(G.lambda_lower[i], G.lambda_upper[i]);
            o.l2[i] = rng.uniform(G.lambda_lower[i], G.lambda_upper[i]);
        }
        auto shifted = [&](double c) {
            std::vector<double> v(w2.values().begin(), w2.values().end());
            for (std::size_t q = 0; q < v.size(); ++q) v[q] += c * hp.values()[q];
            return WienerPath(space.grid, d, std::move(v));
        };
        const WienerPath w1 = shifted(1.0);
        const double g1 = G(w1, o.l1);
        const double g2 = G(w2, o.l2);
        for (std::size_t a = 0; a < 3; ++a) {
            const double th = thetas[a];
            std::vector<double> lm(G.lambda_dim());
            for (std::size_t i = 0; i < lm.size(); ++i) lm[i] = th * o.l1[i] + (1.0 - th) * o.l2[i];
            const double lhs = G(shifted(th), lm);
            const double rhs = th * g1 + (1.0 - th) * g2 - 0.5 * th * (1.0 - th) * o.hn;
            o.slack[a] = lhs - rhs;
        }
    });

    B2Report r;
    for (std::size_t t = 0; t < n_triples; ++t)
        for (std::size_t a = 0; a < 3; ++a) {
            ++r.n_checked;
            const double s = out[t].slack[a];
            r.worst_slack = std::min(r.worst_slack, s);
            if (s < -tolerance) {
                ++r.n_violations;
                if (!r.first_violation)
                    r.first_violation = B2Violation{t, thetas[a], s, out[t].l1, out[t].l2, out[t].hn};
            }
        }
    return r;
}

// ============================================================================
// Linear functionals with Cameron-Martin representers
// ============================================================================

// <l, w> = Σ_k l'_k . (w(t_{k+1}) - w(t_k)) for a piecewise-constant l'.
class LinearFunctional {
public:
    explicit LinearFunctional(CameronMartinPath representer)
        : rep_(std::move(representer)), h_norm_(std::sqrt(h_norm_sq(rep_))) {}

    // l(t) = t in coordinate 0.
    static LinearFunctional identity_terminal(GridPtr grid, std::size_t dim = 1) {
        std::vector<double> slope(dim, 0.0);
        slope[0] = 1.0;
        return LinearFunctional(CameronMartinPath::linear(std::move(grid), std::move(slope)));
    }

    [[nodiscard]] const CameronMartinPath& representer() const { return rep_; }
    [[nodiscard]] double h_norm() const { return h_norm_; }

    [[nodiscard]] double pair(const WienerPath& w) const {
        if (!same_grid(w.grid_ptr(), rep_.grid_ptr()) || w.dim() != rep_.dim())
            throw ConfigError("linear functional and path live on different grids");
        double s = 0.0;
        for (std::size_t j = 0; j < w.grid().n_steps(); ++j)
            for (std::size_t i = 0; i < w.dim(); ++i) s += rep_.slope(j, i) * (w(j + 1, i) - w(j, i));
        return s;
    }

    [[nodiscard]] LinearFunctional scaled(double c) const { return LinearFunctional(rep_.scaled(c)); }

    [[nodiscard]] LinearFunctional normalized() const {
        if (!(h_norm_ > 0.0)) throw DomainError("cannot normalize the zero functional");
        return scaled(1.0 / h_norm_);
    }

private:
    CameronMartinPath rep_;
    double h_norm_;
};

struct Decomposition {
    WienerPath residual;  // w^l(t) = w(t) - <l, w> l(t)
    double z = 0.0;       // <l, w>
};

inline Decomposition conditional_decompose(const WienerPath& path, const LinearFunctional& l) {
    if (!(l.h_norm() > 0.0)) throw DomainError("conditional decomposition needs a nonzero functional");
    if (std::abs(l.h_norm() - 1.0) > 1e-12) throw ConfigError("conditional decomposition needs |l|_H = 1");
    const double z = l.pair(path);
    const WienerPath lp = l.representer().to_path();
    std::vector<double> v(path.values().begin(), path.values().end());
    for (std::size_t q = 0; q < v.size(); ++q) v[q] -= z * lp.values()[q];
    return {WienerPath(path.grid_ptr(), path.dim(), std::move(v)), z};
}

// ============================================================================
// Brascamp-Lieb moment check on Wiener space
// ============================================================================

struct BLMomentRow {
    std::string psi;
    Estimate tilted;        // E_Q[ψ(<l,W> - E_Q<l,W>)], jackknife stderr
    double gaussian = 0.0;  // E[ψ(|l|_H Z)]
    bool holds = false;
};

struct WienerBLReport {
    std::vector<BLMomentRow> rows;
    double tilted_mean = 0.0;  // E_Q <l, W>
    double ess = 0.0;
    double weight_sum = 0.0;   // Σ normalized weights (1 up to rounding)
    bool holds = false;
};

inline constexpr std::size_t kJackknifeGroups = 100;

inline WienerBLReport wiener_bl_check(const FunctionalSpec& F, const LinearFunctional& l,
                                      const std::vector<ConvexFn>& psi_list, std::size_t n_paths,
                                      std::uint64_t seed) {
    if (n_paths < kJackknifeGroups) throw ConfigError("Brascamp-Lieb check needs at least 100 paths");
    if (!(l.h_norm() > 0.0)) throw DomainError("Brascamp-Lieb check needs a nonzero functional");
    if (psi_list.empty()) throw ConfigError("Brascamp-Lieb check needs at least one convex function");
    const PathSpace space{l.representer().grid_ptr(), l.representer().dim()};
    std::vector<double> logw(n_paths), z(n_paths);
    parallel_for(n_paths, [&](std::size_t p) {
        WienerPath w = sample_wiener(space, seed, p);
        logw[p] = F(w);
        z[p] = l.pair(w);
    });
    const double shift = *std::max_element(logw.begin(), logw.end());
    if (is_rejected(shift)) throw EstimationError("all paths rejected in the tilted expectation");
    std::vector<double> u(n_paths), u2(n_paths);
    for (std::size_t p = 0; p < n_paths; ++p) {
        u[p] = std::exp(logw[p] - shift);
        u2[p] = u[p] * u[p];
    }
    const double su = pairwise_sum(u);
    WienerBLReport r;
    r.ess = su * su / pairwise_sum(u2);
    if (r.ess < 0.01 * static_cast<double>(n_paths))
        throw EstimationError("importance weights degenerate: effective sample size " + std::to_string(r.ess) +
                              " of " + std::to_string(n_paths));
    std::vector<double> wn(n_paths);
    for (std::size_t p = 0; p < n_paths; ++p) wn[p] = u[p] / su;
    r.weight_sum = pairwise_sum(wn);

    // Weighted ψ-moment about the weighted mean with one jackknife group left
    // out (none when skip_group == G).
    const std::size_t G = kJackknifeGroups;
    auto group_of = [&](std::size_t p) { return p * G / n_paths; };
    auto moment = [&](const ConvexFn& psi, std::size_t skip_group, double* mean_out) {
        std::vector<double> a(n_paths), b(n_paths);
        for (std::size_t p = 0; p < n_paths; ++p) {
            const bool keep = group_of(p) != skip_group;
            a[p] = keep ? u[p] : 0.0;
            b[p] = keep ? u[p] * z[p] : 0.0;
        }
        const double sa = pairwise_sum(a);
        const double mu = pairwise_sum(b) / sa;
        for (std::size_t p = 0; p < n_paths; ++p) b[p] = a[p] * psi(z[p] - mu);
        if (mean_out) *mean_out = mu;
        return pairwise_sum(b) / sa;
    };

    r.holds = true;
    for (const auto& psi : psi_list) {
        BLMomentRow row;
        row.psi = psi.name;
        const double full = moment(psi, G, &r.tilted_mean);
        std::vector<double> loo(G);
        parallel_for(G, [&](std::size_t g) { loo[g] = moment(psi, g, nullptr); });
        const double lm = sample_mean(loo);
        std::vector<double> dev(G);
        for (std::size_t g = 0; g < G; ++g) dev[g] = (loo[g] - lm) * (loo[g] - lm);
        const double var = static_cast<double>(G - 1) / static_cast<double>(G) * pairwise_sum(dev);
        row.tilted = {full, std::sqrt(var), n_paths, seed};
        row.gaussian = gaussian_convex_moment(psi, l.h_norm());
        row.holds = row.tilted.value <= row.gaussian + 3.0 * row.tilted.std_error;
        r.holds = r.holds && row.holds;
        r.rows.push_back(std::move(row));
    }
    return r;
}

}  // namespace bdvar
