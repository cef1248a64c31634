#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/erf.hpp>

#include "bdvar/errors.hpp"

namespace bdvar {

// ============================================================================
// Standard normal helpers
// ============================================================================

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }
inline double normal_pdf(double x, double sigma) { return normal_pdf(x / sigma) / sigma; }
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
inline double normal_sf(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

// Φ^{-1}(p) for p in (0, 1).
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("normal quantile needs p in (0, 1)");
    return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

// ============================================================================
// Gauss-Hermite rule for E[g(Z)], Z ~ N(0, 1)
// ============================================================================

struct GaussHermiteRule {
    std::vector<double> nodes;
    std::vector<double> weights;  // sum to 1

    template <class Fn>
    double expect(Fn&& g) const {
        double s = 0.0;
        for (std::size_t i = 0; i < nodes.size(); ++i) s += weights[i] * g(nodes[i]);
        return s;
    }
};

// Golub-Welsch eigenvalues of the Jacobi matrix give the nodes; each is then
// polished by Newton on the orthonormal Hermite recurrence, which also yields
// the weights with full relative accuracy. Everything is for the weight
// e^{-x^2} and rescaled to the standard normal density at the end.
inline GaussHermiteRule gauss_hermite(std::size_t n) {
    if (n == 0 || n > 200) throw ConfigError("Gauss-Hermite order must be in 1..200");
    const double pim4 = 0.7511255444649425;  // π^{-1/4}
    const double nd = static_cast<double>(n);

    Eigen::VectorXd diag = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    Eigen::VectorXd sub(static_cast<Eigen::Index>(n > 1 ? n - 1 : 0));
    for (Eigen::Index k = 0; k < sub.size(); ++k) sub[k] = std::sqrt(0.5 * static_cast<double>(k + 1));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig;
    eig.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success) throw NumericError("Gauss-Hermite eigenvalue solve failed");

    // Descending order: x[0] is the largest node.
    std::vector<double> x(n), w(n);
    const std::size_t m = (n + 1) / 2;
    for (std::size_t i = 0; i < m; ++i) {
        double z = eig.eigenvalues()[static_cast<Eigen::Index>(n - 1 - i)];
        if (2 * i + 1 == n) z = 0.0;
        double pp = 0.0, log_scale = 0.0;
        for (int it = 0; it < 3; ++it) {
            double p1 = pim4, p2 = 0.0;
            log_scale = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double p3 = p2;
                p2 = p1;
                const double jd = static_cast<double>(j);
                p1 = z * std::sqrt(2.0 / (jd + 1.0)) * p2 - std::sqrt(jd / (jd + 1.0)) * p3;
                if (std::abs(p1) > 1e100) {  // rescale; Newton ratios are scale free
                    p1 *= 1e-100;
                    p2 *= 1e-100;
                    log_scale += 100.0 * std::numbers::ln10;
                }
            }
            pp = std::sqrt(2.0 * nd) * p2;
            z -= p1 / pp;
        }
        if (!std::isfinite(z) || (i > 0 && !(z < x[i - 1])))
            throw NumericError("Gauss-Hermite nodes are not separated");
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp) * std::exp(-2.0 * log_scale);
        w[n - 1 - i] = w[i];
    }
    GaussHermiteRule r;
    r.nodes.resize(n);
    r.weights.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        r.nodes[i] = x[n - 1 - i] * std::numbers::sqrt2;
        r.weights[i] = w[n - 1 - i] / std::sqrt(std::numbers::pi);
    }
    return r;
}

// ============================================================================
// Adaptive Gauss-Kronrod on a finite interval
// ============================================================================

struct QuadResult {
    double value = 0.0;
    double error = 0.0;
};

// Adaptive 31-point Gauss-Kronrod by recursive bisection. A panel is
// accepted once its error estimate is below max(rel_tol * L1, its share of
// abs_tol); the absolute floor keeps negligible tails from being refined
// forever. Throws NumericError when the total error exceeds 10x the target.
inline QuadResult integrate(const std::function<double(double)>& f, double a, double b, double rel_tol = 1e-12,
                            double abs_tol = 1e-300, unsigned max_depth = 20) {
    if (a == b) return {};
    using gk = boost::math::quadrature::gauss_kronrod<double, 31>;
    double total_l1 = 0.0;
    std::function<QuadResult(double, double, double, unsigned)> panel = [&](double lo, double hi, double atol,
                                                                            unsigned depth) -> QuadResult {
        double err = 0.0, l1 = 0.0;
        const double v = gk::integrate(f, lo, hi, 0, 0.0, &err, &l1);
        err *= 0.5 * std::abs(hi - lo);  // boost reports the error on the reference panel [-1, 1]
        if (err <= std::max(rel_tol * l1, atol) || depth == 0) {
            total_l1 += l1;
            return {v, err};
        }
        const double mid = 0.5 * (lo + hi);
        const QuadResult left = panel(lo, mid, 0.5 * atol, depth - 1);
        const QuadResult right = panel(mid, hi, 0.5 * atol, depth - 1);
        return {left.value + right.value, left.error + right.error};
    };
    const QuadResult r = panel(a, b, abs_tol, max_depth);
    if (!std::isfinite(r.value)) throw NumericError("quadrature produced a non-finite value");
    if (r.error > std::max(rel_tol * total_l1, abs_tol) * 10.0)
        throw NumericError("quadrature did not converge on [" + std::to_string(a) + ", " + std::to_string(b) +
                           "]: error estimate " + std::to_string(r.error));
    return r;
}

// ∫ f over [a, b] split at the given interior break points.
inline double integrate_split(const std::function<double(double)>& f, double a, double b, std::vector<double> breaks,
                              double rel_tol = 1e-12, double abs_tol = 1e-300) {
    breaks.erase(std::remove_if(breaks.begin(), breaks.end(), [&](double x) { return !(x > a && x < b); }),
                 breaks.end());
    std::sort(breaks.begin(), breaks.end());
    double lo = a, total = 0.0;
    for (double x : breaks) {
        total += integrate(f, lo, x, rel_tol, abs_tol).value;
        lo = x;
    }
    return total + integrate(f, lo, b, rel_tol, abs_tol).value;
}

}  // namespace bdvar
