#pragma once

// Reference values computed independently of the library: closed forms and
// composite Simpson rules on fixed fine meshes.

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>

namespace oracle {

inline double simpson(const std::function<double(double)>& f, double a, double b, std::size_t n = 200000) {
    if (n % 2) ++n;
    const double h = (b - a) / static_cast<double>(n);
    double s = f(a) + f(b);
    for (std::size_t i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + h * static_cast<double>(i));
    return s * h / 3.0;
}

inline double phi(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

// E[g(Z)], Z ~ N(0, s^2).
inline double gaussian_expect(const std::function<double(double)>& g, double s = 1.0) {
    return simpson([&](double z) { return g(s * z) * phi(z); }, -12.0, 12.0);
}

// log E exp(c W(1)) = c^2 / 2.
inline double log_mgf_linear(double c) { return 0.5 * c * c; }

// log E exp(a W(1)^2) = -log(1 - 2a) / 2 for a < 1/2.
inline double log_mgf_quadratic(double a) { return -0.5 * std::log(1.0 - 2.0 * a); }

// E|Z|^p for Z ~ N(0, 1).
inline double abs_moment(double p) {
    return std::pow(2.0, p / 2.0) * std::tgamma((p + 1.0) / 2.0) / std::sqrt(std::numbers::pi);
}

// Density ∝ exp(-V(x)) φ(x / σ) on [-R, R]: returns E[ψ(X - EX)].
inline double tilted_central_moment(const std::function<double(double)>& V, double sigma,
                                    const std::function<double(double)>& psi, double R = 12.0) {
    auto w = [&](double x) { return std::exp(-V(x) - 0.5 * x * x / (sigma * sigma)); };
    const double z = simpson(w, -R, R);
    const double m = simpson([&](double x) { return x * w(x); }, -R, R) / z;
    return simpson([&](double x) { return psi(x - m) * w(x); }, -R, R) / z;
}

inline double log_partition(const std::function<double(double)>& V, double sigma, double R = 12.0) {
    return std::log(simpson([&](double x) { return std::exp(-V(x)) * phi(x / sigma) / sigma; }, -R, R));
}

// Double-well closed forms for the infima over {V'' <= 0}.
inline double dw_inf_h(double a, double b) { return std::min(b * (5.0 * b - 6.0) / (72.0 * a * a), 0.0); }
inline double dw_inf_u(double a, double b) { return std::min(b * b * (8.0 * b - 9.0) / (216.0 * a * a), 0.0); }

}  // namespace oracle
