#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "bdvar/prekopa.hpp"
#include "oracles.hpp"

using namespace bdvar;

namespace {

PathSpace space(std::size_t n_steps = 16) { return {make_uniform_grid(n_steps), 1}; }

double g_shifted(double l) { return -0.25 * l * l - 0.5 * std::log(2.0); }

}  // namespace

// ---------------------------------------------------------------------------
// Concavity scan
// ---------------------------------------------------------------------------

TEST(Scan, ShiftedQuadraticIsConcave) {
    const auto grid = uniform_lambda_grid(-2.0, 2.0, 0.5);
    ASSERT_EQ(grid.size(), 9u);
    const ConcavityReport r = scan_log_partition(shifted_quadratic_family(), space(), grid, 40000, 3);
    EXPECT_EQ(r.verdict, Verdict::pass);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        ASSERT_TRUE(r.values[i].has_value());
        EXPECT_LE(std::abs(r.values[i]->value - g_shifted(grid[i][0])), 4.0 * r.values[i]->std_error);
    }
    ASSERT_FALSE(r.deficits.empty());
    for (const auto& d : r.deficits) {
        const double dl = grid[d.j][0] - grid[d.i][0];
        EXPECT_LE(std::abs(d.deficit - dl * dl / 16.0), 4.0 * d.std_error + 1e-12);
    }
}

TEST(Scan, LinearTiltIsFlagged) {
    const auto grid = uniform_lambda_grid(-2.0, 2.0, 0.5);
    const ConcavityReport r = scan_log_partition(linear_tilt_family(), space(), grid, 40000, 4);
    EXPECT_EQ(r.verdict, Verdict::fail);
    EXPECT_TRUE(r.failures.empty());
    // log E e^{λ W(1)} = λ²/2, so every midpoint deficit is -(Δλ)²/8.
    for (const auto& d : r.deficits) {
        const double dl = grid[d.j][0] - grid[d.i][0];
        EXPECT_LE(std::abs(d.deficit + dl * dl / 8.0), 4.0 * d.std_error + 1e-12);
    }
}

TEST(Scan, ConstantInLambdaIsFlat) {
    // Zero deficits up to rounding: the verdict must not be "fail".
    const auto grid = uniform_lambda_grid(0.0, 1.0, 0.5);
    const ConcavityReport r = scan_log_partition(terminal_square_family(0.1), space(), grid, 5000, 5);
    EXPECT_NE(r.verdict, Verdict::fail);
    for (const auto& d : r.deficits) EXPECT_NEAR(d.deficit, 0.0, 1e-12);
}

TEST(Scan, LambdaGridValidation) {
    EXPECT_THROW((void)uniform_lambda_grid(0.0, 1.0, 0.0), ConfigError);
    EXPECT_THROW((void)uniform_lambda_grid(1.0, 0.0, 0.5), ConfigError);
    EXPECT_EQ(uniform_lambda_grid(-1.0, 1.0, 1.0).size(), 3u);
}

// ---------------------------------------------------------------------------
// Joint concavity hypothesis
// ---------------------------------------------------------------------------

TEST(B2, ShiftedQuadraticHolds) {
    const B2Report r = check_b2_hypothesis(shifted_quadratic_family(), space(), 500, 1);
    EXPECT_TRUE(r.passed());
    EXPECT_EQ(r.n_checked, 1500u);
    EXPECT_GE(r.worst_slack, -1e-9);
}

TEST(B2, LinearTiltAndTerminalSquareFail) {
    const B2Report a = check_b2_hypothesis(linear_tilt_family(), space(), 500, 2);
    EXPECT_FALSE(a.passed());
    ASSERT_TRUE(a.first_violation.has_value());
    EXPECT_LT(a.first_violation->slack, 0.0);
    // a w(1)² stays within the Gaussian budget up to a = 1/2 and breaks it above.
    EXPECT_TRUE(check_b2_hypothesis(terminal_square_family(0.5), space(), 500, 2).passed());
    EXPECT_FALSE(check_b2_hypothesis(terminal_square_family(1.0), space(), 500, 2).passed());
}

TEST(B2, LinearTiltSlackBound) {
    // For G = λ w(1) the slack is θ(1-θ)[(λ₂ - λ₁) h(1) + ½|h|²_H], and
    // |h(1)| <= |h|_H bounds it from below.
    const B2Report a = check_b2_hypothesis(linear_tilt_family(-1.0, 1.0), space(), 200, 7);
    ASSERT_TRUE(a.first_violation.has_value());
    const B2Violation& v = *a.first_violation;
    const double hn = std::sqrt(v.h_norm_sq);
    const double lower = v.theta * (1.0 - v.theta) * (-std::abs(v.lambda2[0] - v.lambda1[0]) * hn + 0.5 * v.h_norm_sq);
    EXPECT_LT(v.slack, -1e-9);
    EXPECT_GE(v.slack, lower - 1e-12);
    EXPECT_THROW((void)check_b2_hypothesis(linear_tilt_family(), space(), 0, 7), ConfigError);
}

// ---------------------------------------------------------------------------
// Linear functionals
// ---------------------------------------------------------------------------

TEST(LinearFunctional, PairingAndNorm) {
    auto g = make_uniform_grid(4);
    const LinearFunctional l = LinearFunctional::identity_terminal(g);
    const WienerPath w = sample_wiener(g, 1, 1, 0);
    EXPECT_NEAR(l.pair(w), w.terminal(), 1e-15);
    EXPECT_DOUBLE_EQ(l.h_norm(), 1.0);
    EXPECT_DOUBLE_EQ(l.scaled(3.0).h_norm(), 3.0);
    EXPECT_NEAR(l.scaled(3.0).normalized().h_norm(), 1.0, 1e-15);
    const LinearFunctional zero(CameronMartinPath(g, 1, {0.0, 0.0, 0.0, 0.0}));
    EXPECT_THROW((void)zero.normalized(), DomainError);
    EXPECT_THROW((void)l.pair(WienerPath(make_uniform_grid(8), 1)), ConfigError);
}

TEST(LinearFunctional, DecompositionIsOrthogonal) {
    auto g = make_uniform_grid(8);
    const LinearFunctional l(CameronMartinPath(g, 1, {2.0, 0.0, -1.0, 1.0, 0.5, 0.0, 0.0, -2.0}));
    const LinearFunctional u = l.normalized();
    const WienerPath w = sample_wiener(g, 1, 4, 2);
    const Decomposition d = conditional_decompose(w, u);
    EXPECT_NEAR(d.z, u.pair(w), 1e-15);
    EXPECT_NEAR(u.pair(d.residual), 0.0, 1e-13);
    EXPECT_THROW((void)conditional_decompose(w, l), ConfigError);
}

// ---------------------------------------------------------------------------
// Brascamp-Lieb on Wiener space
// ---------------------------------------------------------------------------

TEST(WienerBL, FlatMeasureEquality) {
    auto g = make_uniform_grid(8);
    const WienerBLReport r = wiener_bl_check(constant_functional(0.0), LinearFunctional::identity_terminal(g),
                                             {psi_square(), psi_abs()}, 40000, 1);
    EXPECT_NEAR(r.weight_sum, 1.0, 1e-12);
    EXPECT_NEAR(r.ess, 40000.0, 1e-6);
    for (const auto& row : r.rows) EXPECT_LE(std::abs(row.tilted.value - row.gaussian), 4.0 * row.tilted.std_error);
}

TEST(WienerBL, QuarticTiltAgainstSimpson) {
    auto g = make_uniform_grid(8);
    const auto V = [](double x) { return x * x * x * x; };
    const WienerBLReport r = wiener_bl_check(potential_terminal(V), LinearFunctional::identity_terminal(g),
                                             {psi_square(), psi_quartic()}, 40000, 2);
    EXPECT_TRUE(r.holds);
    const double m2 = oracle::tilted_central_moment(V, 1.0, [](double z) { return z * z; });
    const double m4 = oracle::tilted_central_moment(V, 1.0, [](double z) { return z * z * z * z; });
    EXPECT_LE(std::abs(r.rows[0].tilted.value - m2), 4.0 * r.rows[0].tilted.std_error);
    EXPECT_LE(std::abs(r.rows[1].tilted.value - m4), 4.0 * r.rows[1].tilted.std_error);
    EXPECT_LT(m2, 1.0);
}

TEST(WienerBL, DegenerateWeightsThrow) {
    auto g = make_uniform_grid(4);
    // e^{40 W(1)} concentrates the weight on a handful of paths.
    EXPECT_THROW((void)wiener_bl_check(linear_terminal(40.0), LinearFunctional::identity_terminal(g), {psi_square()},
                                       2000, 3),
                 EstimationError);
    EXPECT_THROW((void)wiener_bl_check(constant_functional(0.0), LinearFunctional::identity_terminal(g), {psi_square()},
                                       50, 3),
                 ConfigError);
}
