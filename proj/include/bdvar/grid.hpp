#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bdvar/errors.hpp"
#include "bdvar/random.hpp"

namespace bdvar {

// ============================================================================
// TimeGrid: 0 = t_0 < t_1 < ... < t_n = 1
// ============================================================================

class TimeGrid {
public:
    explicit TimeGrid(std::vector<double> knots) : knots_(std::move(knots)) {
        if (knots_.size() < 2) throw ConfigError("time grid needs at least one step");
        if (knots_.front() != 0.0) throw ConfigError("time grid must start at 0");
        if (knots_.back() != 1.0) throw ConfigError("time grid must end at 1");
        for (std::size_t k = 1; k < knots_.size(); ++k)
            if (!(knots_[k] > knots_[k - 1]))
                throw ConfigError("time grid knots must be strictly increasing");
    }

    static TimeGrid uniform(std::size_t n_steps) {
        if (n_steps == 0) throw ConfigError("time grid needs n_steps >= 1");
        std::vector<double> t(n_steps + 1);
        for (std::size_t k = 0; k <= n_steps; ++k)
            t[k] = static_cast<double>(k) / static_cast<double>(n_steps);
        return TimeGrid(std::move(t));
    }

    [[nodiscard]] std::size_t n_steps() const { return knots_.size() - 1; }
    [[nodiscard]] std::size_t n_knots() const { return knots_.size(); }
    [[nodiscard]] double time(std::size_t k) const { return knots_[k]; }
    [[nodiscard]] double dt(std::size_t step) const { return knots_[step + 1] - knots_[step]; }
    [[nodiscard]] std::span<const double> knots() const { return knots_; }

    // Grid index of time t, if t is a knot (within tol).
    [[nodiscard]] std::optional<std::size_t> index_of(double t, double tol = 1e-12) const {
        std::size_t lo = 0, hi = knots_.size() - 1;
        while (hi - lo > 1) {
            std::size_t mid = (lo + hi) / 2;
            if (knots_[mid] <= t) lo = mid;
            else hi = mid;
        }
        if (std::abs(knots_[lo] - t) <= tol) return lo;
        if (std::abs(knots_[hi] - t) <= tol) return hi;
        return std::nullopt;
    }

    [[nodiscard]] std::size_t require_index(double t) const {
        auto k = index_of(t);
        if (!k) throw ConfigError("time " + std::to_string(t) + " is not a grid knot");
        return *k;
    }

    friend bool operator==(const TimeGrid& a, const TimeGrid& b) { return a.knots_ == b.knots_; }

private:
    std::vector<double> knots_;
};

using GridPtr = std::shared_ptr<const TimeGrid>;

inline GridPtr make_uniform_grid(std::size_t n_steps) {
    return std::make_shared<const TimeGrid>(TimeGrid::uniform(n_steps));
}

inline bool same_grid(const GridPtr& a, const GridPtr& b) { return a == b || (a && b && *a == *b); }

// Grid plus state dimension: everything needed to sample Brownian paths.
struct PathSpace {
    GridPtr grid;
    std::size_t dim = 1;
};

inline constexpr std::size_t kDefaultSteps = 256;

inline PathSpace default_space(std::size_t dim = 1) { return {make_uniform_grid(kDefaultSteps), dim}; }

// ============================================================================
// PathPast: read-only view of a path restricted to knots 0..last
// ============================================================================

// Handed to feedback rules. Reading a knot after `last` throws, so a rule
// cannot look into the future of the interval it is evaluated on.
class PathPast {
public:
    PathPast(const TimeGrid* grid, std::size_t dim, std::size_t last, std::span<const double> values)
        : grid_(grid), dim_(dim), last_(last), values_(values.first((last + 1) * dim)) {}

    [[nodiscard]] std::size_t dim() const { return dim_; }
    [[nodiscard]] std::size_t last_knot() const { return last_; }
    [[nodiscard]] double last_time() const { return grid_->time(last_); }
    [[nodiscard]] const TimeGrid& grid() const { return *grid_; }

    [[nodiscard]] double at(std::size_t knot, std::size_t coord = 0) const {
        if (knot > last_) throw std::out_of_range("feedback read a knot after its interval start");
        return values_[knot * dim_ + coord];
    }
    [[nodiscard]] std::span<const double> point(std::size_t knot) const {
        if (knot > last_) throw std::out_of_range("feedback read a knot after its interval start");
        return values_.subspan(knot * dim_, dim_);
    }
    [[nodiscard]] std::span<const double> current() const { return point(last_); }
    [[nodiscard]] std::span<const double> values() const { return values_; }

private:
    const TimeGrid* grid_;
    std::size_t dim_;
    std::size_t last_;
    std::span<const double> values_;
};

// ============================================================================
// WienerPath: d-dimensional path on a grid, vanishing at t = 0
// ============================================================================

class WienerPath {
public:
    WienerPath(GridPtr grid, std::size_t dim)
        : grid_(std::move(grid)), dim_(dim), values_(grid_->n_knots() * dim, 0.0) {
        check_dim();
    }

    WienerPath(GridPtr grid, std::size_t dim, std::vector<double> values)
        : grid_(std::move(grid)), dim_(dim), values_(std::move(values)) {
        check_dim();
        if (values_.size() != grid_->n_knots() * dim_)
            throw ConfigError("path values do not match grid size times dimension");
        for (std::size_t i = 0; i < dim_; ++i)
            if (values_[i] != 0.0) throw ConfigError("path must vanish at t = 0");
    }

    [[nodiscard]] const TimeGrid& grid() const { return *grid_; }
    [[nodiscard]] const GridPtr& grid_ptr() const { return grid_; }
    [[nodiscard]] std::size_t dim() const { return dim_; }
    [[nodiscard]] std::size_t n_knots() const { return grid_->n_knots(); }

    [[nodiscard]] double operator()(std::size_t knot, std::size_t coord = 0) const {
        return values_[knot * dim_ + coord];
    }
    [[nodiscard]] std::span<const double> point(std::size_t knot) const {
        return std::span<const double>(values_).subspan(knot * dim_, dim_);
    }
    [[nodiscard]] std::span<const double> values() const { return values_; }
    [[nodiscard]] double terminal(std::size_t coord = 0) const { return (*this)(n_knots() - 1, coord); }

    [[nodiscard]] PathPast past(std::size_t last_knot) const {
        return PathPast(grid_.get(), dim_, last_knot, values_);
    }

    // |w|_W = max over knots of the Euclidean norm.
    [[nodiscard]] double sup_norm() const {
        double best = 0.0;
        for (std::size_t k = 0; k < n_knots(); ++k) {
            double s = 0.0;
            for (double x : point(k)) s += x * x;
            best = std::max(best, s);
        }
        return std::sqrt(best);
    }

private:
    void check_dim() const {
        if (!grid_) throw ConfigError("path requires a grid");
        if (dim_ == 0) throw ConfigError("path dimension must be >= 1");
    }

    GridPtr grid_;
    std::size_t dim_;
    std::vector<double> values_;
};

// ============================================================================
// CameronMartinPath: piecewise-linear h with one slope vector per grid step
// ============================================================================

class CameronMartinPath {
public:
    CameronMartinPath(GridPtr grid, std::size_t dim, std::vector<double> slopes)
        : grid_(std::move(grid)), dim_(dim), slopes_(std::move(slopes)) {
        if (!grid_ || dim_ == 0) throw ConfigError("Cameron-Martin path needs a grid and dim >= 1");
        if (slopes_.size() != grid_->n_steps() * dim_)
            throw ConfigError("Cameron-Martin slopes must have one d-vector per grid step");
        for (double s : slopes_)
            if (!std::isfinite(s)) throw ConfigError("Cameron-Martin slopes must be finite");
    }

    // h(t) = slope * t in every coordinate given by `slope`.
    static CameronMartinPath linear(GridPtr grid, std::vector<double> slope) {
        const std::size_t d = slope.size();
        std::vector<double> s(grid->n_steps() * d);
        for (std::size_t j = 0; j < grid->n_steps(); ++j)
            for (std::size_t i = 0; i < d; ++i) s[j * d + i] = slope[i];
        return CameronMartinPath(std::move(grid), d, std::move(s));
    }

    [[nodiscard]] const TimeGrid& grid() const { return *grid_; }
    [[nodiscard]] const GridPtr& grid_ptr() const { return grid_; }
    [[nodiscard]] std::size_t dim() const { return dim_; }
    [[nodiscard]] double slope(std::size_t step, std::size_t coord = 0) const { return slopes_[step * dim_ + coord]; }
    [[nodiscard]] std::span<const double> slopes() const { return slopes_; }

    // Path values at every knot (continuous, starting at 0).
    [[nodiscard]] WienerPath to_path() const {
        std::vector<double> v(grid_->n_knots() * dim_, 0.0);
        for (std::size_t j = 0; j < grid_->n_steps(); ++j)
            for (std::size_t i = 0; i < dim_; ++i)
                v[(j + 1) * dim_ + i] = v[j * dim_ + i] + slopes_[j * dim_ + i] * grid_->dt(j);
        return WienerPath(grid_, dim_, std::move(v));
    }

    [[nodiscard]] CameronMartinPath scaled(double c) const {
        std::vector<double> s(slopes_);
        for (double& x : s) x *= c;
        return CameronMartinPath(grid_, dim_, std::move(s));
    }

private:
    GridPtr grid_;
    std::size_t dim_;
    std::vector<double> slopes_;
};

// <h1, h2>_H = sum_k slope1_k . slope2_k dt_k
inline double h_inner(const CameronMartinPath& a, const CameronMartinPath& b) {
    if (!same_grid(a.grid_ptr(), b.grid_ptr()) || a.dim() != b.dim())
        throw ConfigError("Cameron-Martin inner product of paths on different grids");
    double s = 0.0;
    for (std::size_t j = 0; j < a.grid().n_steps(); ++j) {
        double dot = 0.0;
        for (std::size_t i = 0; i < a.dim(); ++i) dot += a.slope(j, i) * b.slope(j, i);
        s += dot * a.grid().dt(j);
    }
    return s;
}

inline double h_norm_sq(const CameronMartinPath& h) { return h_inner(h, h); }

// ============================================================================
// Sampling
// ============================================================================

// Brownian path from the stream (seed, stream): increments over step k are
// independent N(0, dt_k I).
inline WienerPath sample_wiener(const GridPtr& grid, std::size_t dim, std::uint64_t seed,
                                std::uint64_t stream = 0) {
    if (!grid) throw ConfigError("sample_wiener requires a grid");
    if (dim == 0) throw ConfigError("sample_wiener requires dim >= 1");
    StreamRng rng(seed, stream);
    std::vector<double> v(grid->n_knots() * dim, 0.0);
    for (std::size_t j = 0; j < grid->n_steps(); ++j) {
        const double sd = std::sqrt(grid->dt(j));
        for (std::size_t i = 0; i < dim; ++i) v[(j + 1) * dim + i] = v[j * dim + i] + sd * rng.gaussian();
    }
    return WienerPath(grid, dim, std::move(v));
}

inline WienerPath sample_wiener(const PathSpace& space, std::uint64_t seed, std::uint64_t stream = 0) {
    return sample_wiener(space.grid, space.dim, seed, stream);
}

}  // namespace bdvar
