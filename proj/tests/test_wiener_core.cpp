#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "bdvar/functional.hpp"
#include "bdvar/wiener_core.hpp"
#include "oracles.hpp"

using namespace bdvar;

TEST(Doleans, ConstantDriftClosedForm) {
    auto g = make_uniform_grid(8);
    const SimpleDrift v = constant_drift(g, 1.5);
    const WienerPath w = sample_wiener(g, 1, 4, 0);
    const DoleansWeight d = doleans_exponential(w, v);
    EXPECT_NEAR(d.stochastic_integral, 1.5 * w.terminal(), 1e-14);
    EXPECT_NEAR(d.energy, 2.25, 1e-14);
    EXPECT_NEAR(d.log_value, 1.5 * w.terminal() - 1.125, 1e-14);
    EXPECT_NEAR(d.value, std::exp(d.log_value), 1e-14 * d.value);
}

TEST(Doleans, ItoSumIsLeftPoint) {
    auto g = make_uniform_grid(2);
    const SimpleDrift v = linear_feedback_drift(g, {0, 1, 2}, {0.0, 0.0}, {0.0, 1.0}, 1);
    const WienerPath w(g, 1, {0.0, 0.4, 1.0});
    const DoleansWeight d = doleans_exponential(w, v);
    EXPECT_NEAR(d.stochastic_integral, 0.4 * (1.0 - 0.4), 1e-15);
    EXPECT_NEAR(d.energy, 0.5 * 0.16, 1e-15);
}

TEST(Doleans, MartingaleMean) {
    auto g = make_uniform_grid(16);
    const SimpleDrift v = linear_feedback_drift(g, uniform_knots(*g, 4), {0.5, -0.2, 0.1, 0.3}, {1.0, -0.5, 0.7, 0.2}, 1,
                                                2.0);
    const std::size_t n = 40000;
    std::vector<double> x(n);
    for (std::size_t p = 0; p < n; ++p) x[p] = doleans_exponential(sample_wiener(g, 1, 12, p), v).value;
    const Estimate e = mean_estimate(x);
    EXPECT_LE(std::abs(e.value - 1.0), 4.0 * e.std_error);
}

TEST(Girsanov, ReweightedMatchesPlain) {
    auto g = make_uniform_grid(16);
    const PathSpace space{g, 1};
    const SimpleDrift v = piecewise_constant_drift(g, uniform_knots(*g, 2), {0.5, -0.5}, 1);
    const FunctionalSpec F = quadratic_terminal(0.5);
    const Estimate a = girsanov_reweighted_mean(F, v, 40000, 3);
    EXPECT_LE(std::abs(a.value - 0.5), 4.0 * a.std_error);
    const Estimate b = plain_mean(F, space, 40000, 4);
    EXPECT_LE(std::abs(b.value - 0.5), 4.0 * b.std_error);
}

TEST(Girsanov, RejectedPathThrows) {
    auto g = make_uniform_grid(4);
    FunctionalSpec F;
    F.name = "reject-all";
    F.evaluator = [](const WienerPath&) { return kRejected; };
    EXPECT_THROW((void)girsanov_reweighted_mean(F, constant_drift(g, 1.0), 10, 1), EvaluationError);
    EXPECT_THROW((void)plain_mean(F, PathSpace{g, 1}, 10, 1), EvaluationError);
}

TEST(MomentBound, ConstantDriftAttainsBound) {
    // For v ≡ K the p-th moment equals exp(p(p-1)K²/2) exactly.
    auto g = make_uniform_grid(4);
    const SimpleDrift v = constant_drift(g, std::vector<double>{0.5}, 0.5);
    const MomentBoundCheck m = doleans_moment_check(v, 2.0, 50000, 9);
    EXPECT_NEAR(m.bound, std::exp(0.25), 1e-14);
    EXPECT_LE(std::abs(m.moment.value - m.bound), 4.0 * m.moment.std_error);
    EXPECT_TRUE(m.holds);
}

TEST(MomentBound, StrictForFeedback) {
    auto g = make_uniform_grid(8);
    const SimpleDrift v = linear_feedback_drift(g, uniform_knots(*g, 4), {0.2, 0.0, -0.2, 0.1}, {0.5, 0.5, 0.5, 0.5},
                                                1, 1.0);
    for (double p : {2.0, 3.0}) {
        const MomentBoundCheck m = doleans_moment_check(v, p, 20000, 2);
        EXPECT_TRUE(m.holds) << p;
        EXPECT_LT(m.moment.value, m.bound);
    }
}

TEST(MomentBound, RequiresDeclaredBound) {
    auto g = make_uniform_grid(4);
    EXPECT_THROW((void)doleans_moment_check(constant_drift(g, 1.0), 2.0, 10, 1), ConfigError);
    EXPECT_THROW((void)doleans_moment_check(constant_drift(g, std::vector<double>{1.0}, 1.0), 1.0, 10, 1), ConfigError);
}

// ---------------------------------------------------------------------------
// Functionals
// ---------------------------------------------------------------------------

TEST(Functional, Builders) {
    auto g = make_uniform_grid(4);
    const WienerPath w(g, 1, {0.0, 0.5, -1.0, 2.0, 1.5});
    EXPECT_DOUBLE_EQ(linear_terminal(2.0)(w), 3.0);
    EXPECT_DOUBLE_EQ(quadratic_terminal(0.25)(w), 0.25 * 2.25);
    EXPECT_DOUBLE_EQ(constant_functional(-3.0)(w), -3.0);
    EXPECT_DOUBLE_EQ(running_max()(w), 2.0);
    EXPECT_DOUBLE_EQ(cylinder_linear(0.5, 2.0)(w), -2.0);
    EXPECT_DOUBLE_EQ(cylinder_quadratic(0.75, 1.0)(w), 4.0);
    EXPECT_DOUBLE_EQ(potential_terminal([](double x) { return x * x; })(w), -2.25);
}

TEST(Functional, CylinderTimeMustBeKnot) {
    auto g = make_uniform_grid(4);
    const WienerPath w(g, 1);
    EXPECT_THROW((void)cylinder_linear(0.3, 1.0)(w), ConfigError);
}

TEST(Functional, Truncation) {
    const double inf = std::numeric_limits<double>::infinity();
    EXPECT_EQ(truncate_value(5.0, 1.0, 3.0), 3.0);
    EXPECT_EQ(truncate_value(-5.0, 1.0, 3.0), -1.0);
    EXPECT_EQ(truncate_value(2.0, inf, inf), 2.0);
}
