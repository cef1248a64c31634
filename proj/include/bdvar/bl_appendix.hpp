#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bdvar/convex.hpp"
#include "bdvar/errors.hpp"
#include "bdvar/quadrature.hpp"

namespace bdvar {

// ============================================================================
// Potentials on R
// ============================================================================

// V(x) >= a x + b for all x.
struct LinearFloor {
    double a = 0.0;
    double b = 0.0;
};

struct Potential1D {
    std::string name;
    std::function<double(double)> V, dV, d2V;
    double sigma = 1.0;
    std::optional<LinearFloor> floor;  // absent only for test fixtures
    double half_width = 0.0;           // R; 0 selects 12 σ
    std::vector<double> coefficients;  // c_0 + c_1 x + ..., when polynomial

    [[nodiscard]] double R() const { return half_width > 0.0 ? half_width : 12.0 * sigma; }

    // log of e^{-V(x)} φ_σ(x), computed without forming e^{-V} alone.
    [[nodiscard]] double log_weight(double x) const {
        return -V(x) - 0.5 * x * x / (sigma * sigma) - std::log(std::sqrt(2.0 * std::numbers::pi) * sigma);
    }
};

namespace detail {

inline void check_potential(const Potential1D& p) {
    if (!p.V || !p.dV || !p.d2V) throw ConfigError("potential needs V, V' and V''");
    if (!(p.sigma > 0.0) || !std::isfinite(p.sigma)) throw ConfigError("potential sigma must be positive");
    if (p.half_width < 0.0) throw ConfigError("potential half-width must be positive");
    const double R = p.R();
    constexpr std::size_t n = 4097;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = -R + 2.0 * R * static_cast<double>(i) / static_cast<double>(n - 1);
        const double v = p.V(x), d1 = p.dV(x), d2 = p.d2V(x);
        if (!std::isfinite(v) || !std::isfinite(d1) || !std::isfinite(d2))
            throw ConfigError("potential '" + p.name + "' is not finite at x = " + std::to_string(x));
        if (p.floor) {
            const double f = p.floor->a * x + p.floor->b;
            if (v < f - 1e-12 * std::max(1.0, std::abs(f)))
                throw ConfigError("potential '" + p.name + "' violates its declared linear floor at x = " +
                                  std::to_string(x));
        }
    }
    // Central differences against the supplied derivatives.
    constexpr double h = 1e-5;
    constexpr std::size_t m = 257;
    for (std::size_t i = 0; i < m; ++i) {
        const double x = -R + 2.0 * R * static_cast<double>(i) / static_cast<double>(m - 1);
        const double fd1 = (p.V(x + h) - p.V(x - h)) / (2.0 * h);
        const double fd2 = (p.dV(x + h) - p.dV(x - h)) / (2.0 * h);
        const double d1 = p.dV(x), d2 = p.d2V(x);
        if (std::abs(fd1 - d1) > 1e-4 * std::max(1.0, std::abs(d1)))
            throw ConfigError("V' of potential '" + p.name + "' disagrees with finite differences at x = " +
                              std::to_string(x));
        if (std::abs(fd2 - d2) > 1e-4 * std::max(1.0, std::abs(d2)))
            throw ConfigError("V'' of potential '" + p.name + "' disagrees with finite differences at x = " +
                              std::to_string(x));
    }
}

inline double horner(const std::vector<double>& c, double x) {
    double s = 0.0;
    for (std::size_t i = c.size(); i-- > 0;) s = s * x + c[i];
    return s;
}

inline std::vector<double> poly_derivative(const std::vector<double>& c) {
    std::vector<double> d;
    for (std::size_t i = 1; i < c.size(); ++i) d.push_back(static_cast<double>(i) * c[i]);
    return d;
}

}  // namespace detail

inline void validate(const Potential1D& p) { detail::check_potential(p); }

// V(x) = Σ c_i x^i with exact derivatives.
inline Potential1D polynomial_potential(std::vector<double> coefficients, double sigma,
                                        std::optional<LinearFloor> floor, double half_width = 0.0,
                                        std::string name = "polynomial") {
    Potential1D p;
    p.name = std::move(name);
    const auto c0 = coefficients;
    const auto c1 = detail::poly_derivative(c0);
    const auto c2 = detail::poly_derivative(c1);
    p.V = [c0](double x) { return detail::horner(c0, x); };
    p.dV = [c1](double x) { return detail::horner(c1, x); };
    p.d2V = [c2](double x) { return detail::horner(c2, x); };
    p.sigma = sigma;
    p.floor = floor;
    p.half_width = half_width;
    p.coefficients = std::move(coefficients);
    detail::check_potential(p);
    return p;
}

// V(x) = α² x⁴ / 2 - β x² / 2, so V'' = 6 α² x² - β; floor V >= -β² / (8 α²).
inline Potential1D double_well(double alpha, double beta, double sigma = 1.0) {
    if (!(alpha > 0.0 && beta > 0.0)) throw ConfigError("double well needs alpha, beta > 0");
    const double a2 = alpha * alpha;
    auto p = polynomial_potential({0.0, 0.0, -0.5 * beta, 0.0, 0.5 * a2}, sigma,
                                  LinearFloor{0.0, -beta * beta / (8.0 * a2)}, 0.0, "double-well");
    return p;
}

inline Potential1D custom_potential(std::string name, std::function<double(double)> V,
                                    std::function<double(double)> dV, std::function<double(double)> d2V,
                                    double sigma, std::optional<LinearFloor> floor, double half_width = 0.0) {
    Potential1D p;
    p.name = std::move(name);
    p.V = std::move(V);
    p.dV = std::move(dV);
    p.d2V = std::move(d2V);
    p.sigma = sigma;
    p.floor = floor;
    p.half_width = half_width;
    detail::check_potential(p);
    return p;
}

// ============================================================================
// Partition function Z = ∫ e^{-V} dN(0, σ²)
// ============================================================================

struct PartitionZ {
    double log_z = 0.0;
    double z = 0.0;           // ∫_{-R}^{R}; the outside mass is below tail_bound
    double tail_bound = 0.0;
    bool tail_certified = false;
};

inline constexpr double kTailBudget = 1e-12;
inline constexpr std::size_t kQuadPieces = 64;
inline constexpr double kQuadAbsTol = 1e-30;  // integrands here are O(1) densities

namespace detail {

// Mass of e^{-ax-b} φ_σ outside [-R, R]; dominates the true tails.
inline double floor_tail(const Potential1D& p, double R) {
    const double a = p.floor->a, b = p.floor->b, s = p.sigma;
    const double c = std::exp(-b + 0.5 * a * a * s * s);
    return c * (normal_sf((R + a * s * s) / s) + normal_cdf((-R + a * s * s) / s));
}

inline double integrate_pieces(const std::function<double(double)>& f, double lo, double hi,
                               std::vector<double> extra = {}) {
    std::vector<double> breaks = std::move(extra);
    for (std::size_t i = 1; i < kQuadPieces; ++i)
        breaks.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(kQuadPieces));
    return integrate_split(f, lo, hi, std::move(breaks), 1e-13, kQuadAbsTol);
}

}  // namespace detail

inline PartitionZ partition_z(const Potential1D& p) {
    const double R = p.R();
    PartitionZ r;
    r.z = detail::integrate_pieces([&](double x) { return std::exp(p.log_weight(x)); }, -R, R);
    if (p.floor) {
        r.tail_bound = detail::floor_tail(p, R);
        r.tail_certified = r.tail_bound <= kTailBudget;
        if (!r.tail_certified)
            throw NumericError("tail remainder " + std::to_string(r.tail_bound) +
                               " exceeds the budget; increase the half-width");
    }
    if (!(r.z > 0.0) || !std::isfinite(r.z)) throw NumericError("partition function is not positive and finite");
    r.log_z = std::log(r.z);
    return r;
}

// U_V(x) = ½ σ² V'(x)² + x V'(x) - V(x).
inline double u_potential(const Potential1D& p, double x) {
    const double d = p.dV(x);
    return 0.5 * p.sigma * p.sigma * d * d + x * d - p.V(x);
}

// h(x) = -x² / (2σ²) - V(x).
inline double h_potential(const Potential1D& p, double x) { return -0.5 * x * x / (p.sigma * p.sigma) - p.V(x); }

// ============================================================================
// D_V = {V'' <= 0}
// ============================================================================

struct NonconvexRegion {
    std::vector<std::pair<double, double>> intervals;
    [[nodiscard]] bool empty() const { return intervals.empty(); }
};

inline constexpr double kConvexityBand = 1e-12;

inline NonconvexRegion nonconvex_region(const Potential1D& p) {
    const double R = p.R();
    constexpr std::size_t n = 4097;  // odd, so x = 0 is a scan point
    auto inside = [&](double x) { return p.d2V(x) <= kConvexityBand; };
    auto refine = [&](double a, double b) {  // inside(a) != inside(b)
        const bool ia = inside(a);
        for (int it = 0; it < 200 && b - a > 1e-12; ++it) {
            const double m = 0.5 * (a + b);
            if (inside(m) == ia) a = m;
            else b = m;
        }
        return std::make_pair(a, b);
    };
    NonconvexRegion r;
    double open = -R;  // left end of the current run while prev_in holds
    double prev_x = -R;
    bool prev_in = inside(-R);
    for (std::size_t i = 1; i < n; ++i) {
        const double x = -R + 2.0 * R * static_cast<double>(i) / static_cast<double>(n - 1);
        const bool in = inside(x);
        if (in && !prev_in) open = refine(prev_x, x).second;
        if (!in && prev_in) {
            r.intervals.emplace_back(open, refine(prev_x, x).first);
        }
        prev_x = x;
        prev_in = in;
    }
    if (prev_in) r.intervals.emplace_back(open, R);
    return r;
}

// ============================================================================
// Infimum search and certification
// ============================================================================

struct Infimum {
    double value = std::numeric_limits<double>::infinity();
    double argmin = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline bool better(double v, double x, const Infimum& best) {
    if (v < best.value) return true;
    return v == best.value && std::abs(x) < std::abs(best.argmin);
}

inline void golden_section(const std::function<double(double)>& f, double a, double b, Infimum& best) {
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > 1e-10) {
        if (fc <= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    const double x = 0.5 * (a + b);
    const double v = f(x);
    if (better(v, x, best)) best = {v, x};
}

}  // namespace detail

// inf of f over a union of closed intervals: 2048-point scan per interval,
// golden-section refinement around the best scan point, endpoints included.
inline Infimum infimum_on(const std::function<double(double)>& f, const NonconvexRegion& region) {
    Infimum best;
    constexpr std::size_t n = 2048;
    for (const auto& [lo, hi] : region.intervals) {
        std::size_t bi = 0;
        Infimum local;
        for (std::size_t i = 0; i <= n; ++i) {
            const double x = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n);
            const double v = f(x);
            if (detail::better(v, x, local)) {
                local = {v, x};
                bi = i;
            }
        }
        const double step = (hi - lo) / static_cast<double>(n);
        if (step > 0.0) {
            const double a = lo + step * static_cast<double>(bi == 0 ? 0 : bi - 1);
            const double b = lo + step * static_cast<double>(std::min(bi + 1, n));
            detail::golden_section(f, a, b, local);
        }
        if (detail::better(local.value, local.argmin, best)) best = local;
    }
    return best;
}

inline constexpr double kMarginalBand = 1e-9;

struct BLConditionReport {
    double log_z = 0.0;
    NonconvexRegion region;
    Infimum inf_u;  // +inf on an empty region
    Infimum inf_h;
    bool cond_inf1_holds = false;  // inf_D U_V >= log Z
    bool cond_inf2_holds = false;  // inf_D h >= log Z
    bool inf1_marginal = false;    // |inf - log Z| within the band
    bool inf2_marginal = false;
    [[nodiscard]] bool certified() const { return cond_inf1_holds || cond_inf2_holds; }
};

inline BLConditionReport certify_conditions(const Potential1D& p) {
    BLConditionReport r;
    r.log_z = partition_z(p).log_z;
    r.region = nonconvex_region(p);
    r.inf_u = infimum_on([&](double x) { return u_potential(p, x); }, r.region);
    r.inf_h = infimum_on([&](double x) { return h_potential(p, x); }, r.region);
    r.cond_inf1_holds = r.inf_u.value >= r.log_z - kMarginalBand;
    r.cond_inf2_holds = r.inf_h.value >= r.log_z - kMarginalBand;
    r.inf1_marginal = std::abs(r.inf_u.value - r.log_z) <= kMarginalBand;
    r.inf2_marginal = std::abs(r.inf_h.value - r.log_z) <= kMarginalBand;
    return r;
}

// Closed-form infima over D_V of h and U_V for the double well with σ = 1.
inline std::pair<double, double> double_well_closed_forms(double alpha, double beta) {
    if (!(alpha > 0.0 && beta > 0.0)) throw ConfigError("double well needs alpha, beta > 0");
    const double a2 = alpha * alpha;
    return {std::min(beta * (5.0 * beta - 6.0) / (72.0 * a2), 0.0),
            std::min(beta * beta * (8.0 * beta - 9.0) / (216.0 * a2), 0.0)};
}

// ============================================================================
// Law of X: density e^{-V} φ_σ / Z, distribution function and Bass map
// ============================================================================

inline constexpr std::size_t kCdfCells = 4096;

class BassEmbedding {
public:
    explicit BassEmbedding(Potential1D p) : p_(std::move(p)) {
        const PartitionZ pz = partition_z(p_);
        log_z_ = pz.log_z;
        R_ = p_.R();
        x_.resize(kCdfCells + 1);
        for (std::size_t i = 0; i <= kCdfCells; ++i)
            x_[i] = -R_ + 2.0 * R_ * static_cast<double>(i) / static_cast<double>(kCdfCells);
        std::vector<double> cell(kCdfCells);
        for (std::size_t i = 0; i < kCdfCells; ++i) cell[i] = mass(x_[i], x_[i + 1]);
        left_.assign(kCdfCells + 1, 0.0);
        right_.assign(kCdfCells + 1, 0.0);
        for (std::size_t i = 0; i < kCdfCells; ++i) left_[i + 1] = left_[i] + cell[i];
        for (std::size_t i = kCdfCells; i-- > 0;) right_[i] = right_[i + 1] + cell[i];
        for (std::size_t i = 0; i < kCdfCells; ++i)
            if (!(left_[i + 1] >= left_[i]) || !(right_[i] >= right_[i + 1]))
                throw NumericError("distribution table is not monotone");
    }

    [[nodiscard]] const Potential1D& potential() const { return p_; }
    [[nodiscard]] double log_z() const { return log_z_; }
    [[nodiscard]] double half_width() const { return R_; }

    // F_X'(y) = e^{-V(y)} φ_σ(y) / Z.
    [[nodiscard]] double density(double y) const { return std::exp(p_.log_weight(y) - log_z_); }

    // F_X(x), clamped to the tabulated support.
    [[nodiscard]] double cdf(double x) const {
        if (x <= -R_) return left_.front();
        if (x >= R_) return left_.back();
        const std::size_t i = cell_of(x);
        return left_[i] + mass(x_[i], x);
    }

    // 1 - F_X(x), accumulated from the right for accuracy in the upper tail.
    [[nodiscard]] double sf(double x) const {
        if (x <= -R_) return right_.front();
        if (x >= R_) return right_.back();
        const std::size_t i = cell_of(x);
        return right_[i + 1] + mass(x, x_[i + 1]);
    }

    // F_X^{-1}(ξ) for ξ <= ½ from the left table, else via the survival table.
    [[nodiscard]] double quantile(double xi) const {
        if (!(xi > 0.0 && xi < 1.0)) throw DomainError("quantile needs xi in (0, 1)");
        return xi <= 0.5 ? invert(xi, false) : invert(1.0 - xi, true);
    }

    // g(x) = F_X^{-1}(Φ(x)).
    [[nodiscard]] double g(double x) const {
        return x <= 0.0 ? invert(normal_cdf(x), false) : invert(normal_sf(x), true);
    }

    // g'(x) = φ(x) / F_X'(g(x)); flags underflow of the density.
    [[nodiscard]] double g_prime(double x, bool* clamped = nullptr) const {
        const double f = density(g(x));
        if (!(f > 0.0)) {
            if (clamped) *clamped = true;
            return std::numeric_limits<double>::infinity();
        }
        return normal_pdf(x) / f;
    }

    // G(ξ) = σ F_X'(F_X^{-1}(ξ)) - φ(Φ^{-1}(ξ)).
    [[nodiscard]] double capital_g(double xi) const {
        return p_.sigma * density(quantile(xi)) - normal_pdf(normal_quantile(xi));
    }

private:
    [[nodiscard]] double mass(double a, double b) const {
        if (!(b > a)) return 0.0;
        return integrate([&](double y) { return density(y); }, a, b, 1e-13, kQuadAbsTol).value;
    }

    [[nodiscard]] std::size_t cell_of(double x) const {
        const auto it = std::upper_bound(x_.begin(), x_.end(), x);
        const auto i = static_cast<std::size_t>(std::distance(x_.begin(), it));
        return std::min(i == 0 ? 0 : i - 1, kCdfCells - 1);
    }

    // Solves cdf(y) = t (upper = false) or sf(y) = t (upper = true).
    [[nodiscard]] double invert(double t, bool upper) const {
        if (!upper) {
            if (t <= left_.front()) return -R_;
            if (t >= left_.back()) return R_;
            const auto it = std::upper_bound(left_.begin(), left_.end(), t);
            std::size_t i = static_cast<std::size_t>(std::distance(left_.begin(), it)) - 1;
            i = std::min(i, kCdfCells - 1);
            double a = x_[i], b = x_[i + 1];
            while (b - a > 1e-7 * std::max(1.0, std::abs(a))) {
                const double m = 0.5 * (a + b);
                if (left_[i] + mass(x_[i], m) < t) a = m;
                else b = m;
            }
            double y = 0.5 * (a + b);
            const double f = density(y);
            if (f > 0.0) y -= (cdf(y) - t) / f;
            return std::clamp(y, a - 1e-7, b + 1e-7);
        }
        if (t <= right_.back()) return R_;
        if (t >= right_.front()) return -R_;
        // right_ is decreasing: the cell i with right_[i+1] <= t < right_[i].
        const auto it = std::lower_bound(right_.begin(), right_.end(), t, std::greater<double>());
        std::size_t k = static_cast<std::size_t>(std::distance(right_.begin(), it));
        std::size_t i = k == 0 ? 0 : k - 1;
        i = std::min(i, kCdfCells - 1);
        double a = x_[i], b = x_[i + 1];
        while (b - a > 1e-7 * std::max(1.0, std::abs(a))) {
            const double m = 0.5 * (a + b);
            if (right_[i + 1] + mass(m, x_[i + 1]) > t) a = m;
            else b = m;
        }
        double y = 0.5 * (a + b);
        const double f = density(y);
        if (f > 0.0) y += (sf(y) - t) / f;
        return std::clamp(y, a - 1e-7, b + 1e-7);
    }

    Potential1D p_;
    double log_z_ = 0.0;
    double R_ = 0.0;
    std::vector<double> x_, left_, right_;
};

inline BassEmbedding distribution_fx(const Potential1D& p) { return BassEmbedding(p); }

struct BassTable {
    std::vector<double> x, g, g_prime;
    double max_g_prime = 0.0;
    double argmax = 0.0;
    bool clamped = false;  // density underflow somewhere on the table
};

// g and g' tabulated on [lo, hi] with n points.
inline BassTable bass_g(const BassEmbedding& emb, double lo = -6.0, double hi = 6.0, std::size_t n = 1201) {
    if (n < 2 || !(hi > lo)) throw ConfigError("Bass table needs n >= 2 and hi > lo");
    BassTable t;
    t.x.resize(n);
    t.g.resize(n);
    t.g_prime.resize(n);
    t.max_g_prime = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        const double x = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
        t.x[i] = x;
        t.g[i] = emb.g(x);
        bool c = false;
        t.g_prime[i] = emb.g_prime(x, &c);
        t.clamped = t.clamped || c;
        if (t.g_prime[i] > t.max_g_prime) {
            t.max_g_prime = t.g_prime[i];
            t.argmax = x;
        }
    }
    return t;
}

// Var(g(Z)) for Z ~ N(0, 1).
inline double bass_variance(const BassEmbedding& emb) {
    constexpr double L = 8.5;
    const double m = detail::integrate_pieces([&](double z) { return emb.g(z) * normal_pdf(z); }, -L, L);
    const double s = detail::integrate_pieces([&](double z) {
        const double d = emb.g(z) - m;
        return d * d * normal_pdf(z);
    }, -L, L);
    return s;
}

struct CapitalGReport {
    std::vector<double> xi, values;
    double min_value = std::numeric_limits<double>::infinity();
    double argmin = 0.0;
    double boundary_low = 0.0;   // G(1e-6)
    double boundary_high = 0.0;  // G(1 - 1e-6)
    bool boundary_decay = false;
};

inline std::vector<double> default_xi_grid(std::size_t n = 999) {
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i) g[i] = static_cast<double>(i + 1) / static_cast<double>(n + 1);
    return g;
}

inline CapitalGReport capital_g_check(const BassEmbedding& emb, const std::vector<double>& xi_grid) {
    CapitalGReport r;
    r.xi = xi_grid;
    for (double xi : xi_grid) {
        const double v = emb.capital_g(xi);
        r.values.push_back(v);
        if (v < r.min_value) {
            r.min_value = v;
            r.argmin = xi;
        }
    }
    r.boundary_low = emb.capital_g(1e-6);
    r.boundary_high = emb.capital_g(1.0 - 1e-6);
    r.boundary_decay = std::abs(r.boundary_low) < 1e-4 && std::abs(r.boundary_high) < 1e-4;
    return r;
}

// ============================================================================
// Moment inequality E[ψ(X - EX)] <= E[ψ(Y)], Y ~ N(0, σ²)
// ============================================================================

struct MomentRow {
    std::string psi;
    double tilted = 0.0;    // E[ψ(X - EX)]
    double gaussian = 0.0;  // E[ψ(Y)]
    bool holds = false;
};

struct MomentReport {
    double mean = 0.0;  // E[X]
    std::vector<MomentRow> rows;
    bool certified = false;  // the conditions were certified, so the inequality is asserted
    bool all_hold = false;
    [[nodiscard]] bool violation() const { return certified && !all_hold; }
};

inline MomentReport moment_inequality_check(const Potential1D& p, const std::vector<ConvexFn>& psi_list,
                                            double slack = 1e-10) {
    MomentReport r;
    const BLConditionReport cert = certify_conditions(p);
    r.certified = cert.certified();
    const double R = p.R();
    const double lz = cert.log_z;
    auto dens = [&](double x) { return std::exp(p.log_weight(x) - lz); };
    r.mean = detail::integrate_pieces([&](double x) { return x * dens(x); }, -R, R);
    r.all_hold = true;
    for (const auto& psi : psi_list) {
        MomentRow row;
        row.psi = psi.name;
        std::vector<double> kinks;
        for (double k : psi.kinks) kinks.push_back(k + r.mean);
        row.tilted = detail::integrate_pieces([&](double x) { return psi(x - r.mean) * dens(x); }, -R, R, kinks);
        row.gaussian = gaussian_convex_moment(psi, p.sigma);
        row.holds = row.tilted <= row.gaussian + slack;
        r.all_hold = r.all_hold && row.holds;
        r.rows.push_back(std::move(row));
    }
    return r;
}

}  // namespace bdvar
