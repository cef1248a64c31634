#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "bdvar/errors.hpp"
#include "bdvar/quadrature.hpp"

namespace bdvar {

// A convex ψ: R -> R with the points where it is not smooth (quadrature
// splits there) and its polynomial growth degree.
struct ConvexFn {
    std::string name;
    std::function<double(double)> fn;
    std::vector<double> kinks;
    double degree = 2.0;

    double operator()(double z) const { return fn(z); }
};

inline ConvexFn psi_square() { return {"z^2", [](double z) { return z * z; }, {}, 2.0}; }

inline ConvexFn psi_abs() { return {"|z|", [](double z) { return std::abs(z); }, {0.0}, 1.0}; }

inline ConvexFn psi_quartic() {
    return {"z^4", [](double z) { return z * z * z * z; }, {}, 4.0};
}

// |z|^p, p >= 1.
inline ConvexFn psi_abs_power(double p) {
    if (!(p >= 1.0)) throw ConfigError("|z|^p is convex only for p >= 1");
    if (p == 1.0) return psi_abs();
    std::string name = "|z|^" + (p == std::floor(p) ? std::to_string(static_cast<long>(p)) : std::to_string(p));
    return {name, [p](double z) { return std::pow(std::abs(z), p); }, {0.0}, p};
}

// Accepts "z^2", "|z|", "|z|^p", "z^4".
inline ConvexFn convex_from_name(const std::string& s) {
    if (s == "z^2") return psi_square();
    if (s == "|z|") return psi_abs();
    if (s == "z^4") return psi_quartic();
    if (s.rfind("|z|^", 0) == 0) {
        std::size_t used = 0;
        double p = 0.0;
        try {
            p = std::stod(s.substr(4), &used);
        } catch (const std::exception&) {
            throw ConfigError("cannot parse convex function '" + s + "'");
        }
        if (used != s.size() - 4) throw ConfigError("cannot parse convex function '" + s + "'");
        return psi_abs_power(p);
    }
    throw ConfigError("unknown convex function '" + s + "' (expected z^2, |z|, |z|^p, z^4)");
}

// E[ψ(σ Z)] for Z ~ N(0, 1) by adaptive quadrature split at the kinks.
inline double gaussian_convex_moment(const ConvexFn& psi, double sigma) {
    if (!(sigma > 0.0)) throw DomainError("Gaussian moment needs sigma > 0");
    const double R = 40.0 * sigma;
    std::vector<double> breaks(psi.kinks);
    for (double c : {2.0, 5.0, 10.0}) {
        breaks.push_back(c * sigma);
        breaks.push_back(-c * sigma);
    }
    return integrate_split([&](double z) { return psi(z) * normal_pdf(z, sigma); }, -R, R, breaks, 1e-12, 1e-30);
}

}  // namespace bdvar
