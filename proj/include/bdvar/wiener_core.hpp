#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bdvar/drift_class.hpp"
#include "bdvar/estimate.hpp"
#include "bdvar/functional.hpp"
#include "bdvar/grid.hpp"
#include "bdvar/parallel.hpp"

namespace bdvar {

// E^v_1 = exp(∫ v dW - ½ ∫ |v|^2 ds) with left-point Itô sums.
struct DoleansWeight {
    double value = 1.0;
    double log_value = 0.0;
    double stochastic_integral = 0.0;
    double energy = 0.0;
};

namespace detail {

inline DoleansWeight doleans_from_values(const WienerPath& path, const SimpleDrift& v, std::span<const double> xi) {
    const std::size_t d = v.dim();
    const TimeGrid& g = path.grid();
    double si = 0.0, energy = 0.0;
    for (std::size_t j = 0; j < g.n_steps(); ++j) {
        const std::size_t k = v.interval_of_step(j);
        double inc = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double x = xi[k * d + i];
            inc += x * (path(j + 1, i) - path(j, i));
            sq += x * x;
        }
        si += inc;
        energy += sq * g.dt(j);
    }
    DoleansWeight w;
    w.stochastic_integral = si;
    w.energy = energy;
    w.log_value = si - 0.5 * energy;
    w.value = std::exp(w.log_value);
    if (!std::isfinite(w.log_value)) throw EvaluationError("Doleans exponential is not finite");
    return w;
}

}  // namespace detail

inline DoleansWeight doleans_exponential(const WienerPath& path, const SimpleDrift& v) {
    const std::vector<double> xi = v.evaluate_along(path);
    return detail::doleans_from_values(path, v, xi);
}

// Monte Carlo mean of E^v_1(W) F(T^{-v} W), an unbiased estimate of E[F(W)].
inline Estimate girsanov_reweighted_mean(const FunctionalSpec& F, const SimpleDrift& v, std::size_t n_paths,
                                         std::uint64_t seed) {
    if (n_paths == 0) throw ConfigError("n_paths must be >= 1");
    std::vector<double> samples(n_paths);
    parallel_for(n_paths, [&](std::size_t p) {
        WienerPath w = sample_wiener(v.grid_ptr(), v.dim(), seed, p);
        const std::vector<double> xi = v.evaluate_along(w);
        const DoleansWeight weight = detail::doleans_from_values(w, v, xi);
        const double f = F(apply_drift_transform(w, v, -1));
        if (is_rejected(f)) throw EvaluationError("reweighted mean: path " + std::to_string(p) + " rejected");
        samples[p] = weight.value * f;
    });
    return mean_estimate(samples, seed);
}

// Plain Monte Carlo mean of F(W).
inline Estimate plain_mean(const FunctionalSpec& F, const PathSpace& space, std::size_t n_paths, std::uint64_t seed) {
    if (n_paths == 0) throw ConfigError("n_paths must be >= 1");
    std::vector<double> samples(n_paths);
    parallel_for(n_paths, [&](std::size_t p) {
        const double f = F(sample_wiener(space, seed, p));
        if (is_rejected(f)) throw EvaluationError("plain mean: path " + std::to_string(p) + " rejected");
        samples[p] = f;
    });
    return mean_estimate(samples, seed);
}

// Sample mean of (E^v_1)^p against exp(½ p (p - 1) K^2) for a drift with
// declared bound K.
struct MomentBoundCheck {
    double p = 2.0;
    Estimate moment;
    double bound = 0.0;
    bool holds = false;
};

inline MomentBoundCheck doleans_moment_check(const SimpleDrift& v, double p, std::size_t n_paths, std::uint64_t seed) {
    if (!v.declared_bound()) throw ConfigError("moment bound needs a drift with a declared bound");
    if (!(p > 1.0)) throw ConfigError("moment bound needs p > 1");
    if (n_paths == 0) throw ConfigError("n_paths must be >= 1");
    std::vector<double> samples(n_paths);
    parallel_for(n_paths, [&](std::size_t i) {
        samples[i] = std::exp(p * doleans_exponential(sample_wiener(v.grid_ptr(), v.dim(), seed, i), v).log_value);
    });
    MomentBoundCheck r;
    r.p = p;
    r.moment = mean_estimate(samples, seed);
    const double K = *v.declared_bound();
    r.bound = std::exp(0.5 * p * (p - 1.0) * K * K);
    r.holds = r.moment.value <= r.bound * (1.0 + 3.0 * r.moment.std_error / r.moment.value);
    return r;
}

}  // namespace bdvar
