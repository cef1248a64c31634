#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bdvar/errors.hpp"
#include "bdvar/parallel.hpp"

namespace bdvar {

// A Monte Carlo scalar. `std_error` is the standard error of `value`.
struct Estimate {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t n_samples = 0;
    std::uint64_t seed = 0;
};

inline double combined_stderr(double a, double b) { return std::hypot(a, b); }
inline double combined_stderr(const Estimate& a, const Estimate& b) {
    return combined_stderr(a.std_error, b.std_error);
}

// |a - b| <= sigmas * combined stderr (plus an optional absolute allowance).
inline bool agree_within(const Estimate& a, const Estimate& b, double sigmas, double allowance = 0.0) {
    return std::abs(a.value - b.value) <= sigmas * combined_stderr(a, b) + allowance;
}

inline bool agree_within(const Estimate& a, double exact, double sigmas, double allowance = 0.0) {
    return std::abs(a.value - exact) <= sigmas * a.std_error + allowance;
}

inline double sample_mean(std::span<const double> xs) {
    if (xs.empty()) throw EstimationError("mean of an empty sample");
    return pairwise_sum(xs) / static_cast<double>(xs.size());
}

// Unbiased two-pass sample variance.
inline double sample_variance(std::span<const double> xs, double mean) {
    if (xs.size() < 2) return 0.0;
    std::vector<double> sq(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double d = xs[i] - mean;
        sq[i] = d * d;
    }
    return pairwise_sum(sq) / static_cast<double>(xs.size() - 1);
}

inline Estimate mean_estimate(std::span<const double> xs, std::uint64_t seed = 0) {
    for (double x : xs)
        if (!std::isfinite(x)) throw EstimationError("non-finite Monte Carlo sample");
    const double m = sample_mean(xs);
    const double var = sample_variance(xs, m);
    return {m, std::sqrt(var / static_cast<double>(xs.size())), xs.size(), seed};
}

// log of the sample mean of exp(log_terms), shifted by the maximum for
// stability. Terms equal to -inf are rejected paths and contribute zero.
// The standard error follows the delta method: se(log m) = se(m) / m.
inline Estimate log_mean_exp_estimate(std::span<const double> log_terms, std::uint64_t seed = 0) {
    if (log_terms.empty()) throw EstimationError("log-mean-exp of an empty sample");
    double shift = -std::numeric_limits<double>::infinity();
    std::size_t rejected = 0;
    for (double t : log_terms) {
        if (std::isnan(t) || t == std::numeric_limits<double>::infinity())
            throw EstimationError("non-finite log term (NaN or +inf) in log-mean-exp");
        if (t == -std::numeric_limits<double>::infinity()) ++rejected;
        shift = std::max(shift, t);
    }
    if (rejected == log_terms.size())
        throw EstimationError("all " + std::to_string(rejected) + " paths rejected");
    std::vector<double> scaled(log_terms.size());
    for (std::size_t i = 0; i < log_terms.size(); ++i) scaled[i] = std::exp(log_terms[i] - shift);
    const double m = sample_mean(scaled);
    const double se = std::sqrt(sample_variance(scaled, m) / static_cast<double>(scaled.size()));
    return {std::log(m) + shift, se / m, log_terms.size(), seed};
}

}  // namespace bdvar
