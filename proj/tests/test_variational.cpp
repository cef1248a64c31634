#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "bdvar/variational.hpp"
#include "oracles.hpp"

using namespace bdvar;

namespace {

PathSpace space(std::size_t n_steps, std::size_t dim = 1) { return {make_uniform_grid(n_steps), dim}; }

}  // namespace

// ---------------------------------------------------------------------------
// LHS estimators
// ---------------------------------------------------------------------------

TEST(Lhs, DirectLinearAndQuadratic) {
    const Estimate a = estimate_lhs_direct(linear_terminal(1.0), space(8), 50000, 7);
    EXPECT_LE(std::abs(a.value - oracle::log_mgf_linear(1.0)), 4.0 * a.std_error);
    const Estimate b = estimate_lhs_direct(quadratic_terminal(0.1), space(8), 50000, 8);
    EXPECT_LE(std::abs(b.value - oracle::log_mgf_quadratic(0.1)), 4.0 * b.std_error);
}

TEST(Lhs, MultiDimensionalLinear) {
    const Estimate a = estimate_lhs_direct(linear_terminal(std::vector<double>{1.0, -2.0}), space(4, 2), 50000, 9);
    EXPECT_LE(std::abs(a.value - 2.5), 4.0 * a.std_error);
}

TEST(Lhs, ImportanceWithOptimalDriftHasZeroVariance) {
    auto g = make_uniform_grid(8);
    const Estimate e = estimate_lhs_importance(linear_terminal(3.0), constant_drift(g, 3.0), 1000, 1);
    EXPECT_NEAR(e.value, 4.5, 1e-12);
    EXPECT_LT(e.std_error, 1e-12);
}

TEST(Lhs, ImportanceAgreesWithDirect) {
    auto g = make_uniform_grid(16);
    const FunctionalSpec F = quadratic_terminal(0.25);
    const SimpleDrift v = bar_conjugate(clark_ocone_drift(cylinder_quadratic(1.0, 0.25), g));
    const Estimate e = estimate_lhs_importance(F, v, 20000, 2);
    EXPECT_LE(std::abs(e.value - oracle::log_mgf_quadratic(0.25)), 4.0 * e.std_error + 1e-4);
    EXPECT_LT(e.std_error, 0.002);
}

TEST(Lhs, AllRejectedThrows) {
    FunctionalSpec F;
    F.name = "never";
    F.evaluator = [](const WienerPath&) { return kRejected; };
    EXPECT_THROW((void)estimate_lhs_direct(F, space(4), 100, 1), EstimationError);
    EXPECT_THROW((void)estimate_lhs_direct(linear_terminal(1.0), space(4), 0, 1), ConfigError);
}

// ---------------------------------------------------------------------------
// RHS objective and the lower bound
// ---------------------------------------------------------------------------

TEST(Rhs, ConstantDriftClosedForm) {
    // E[W(1) + θ] - θ²/2 with CRN noise only in E W(1).
    auto g = make_uniform_grid(4);
    for (double th : {-1.0, 0.0, 0.5, 2.0}) {
        const Estimate e = rhs_objective(linear_terminal(1.0), constant_drift(g, th), 40000, 3);
        EXPECT_LE(std::abs(e.value - (th - 0.5 * th * th)), 4.0 * e.std_error);
    }
}

TEST(Rhs, NeverExceedsLhs) {
    auto g = make_uniform_grid(16);
    const PathSpace s{g, 1};
    std::vector<SimpleDrift> drifts;
    for (double c : {-1.0, 0.3, 1.0, 2.0}) drifts.push_back(constant_drift(g, c));
    drifts.push_back(linear_feedback_drift(g, uniform_knots(*g, 4), {0, 0, 0, 0}, {0.5, 0.5, 0.5, 0.5}, 1));
    const LowerBoundReport r = lower_bound_suite(quadratic_terminal(0.1), s, drifts, 20000, 4);
    EXPECT_EQ(r.violations, 0u);
    EXPECT_EQ(r.entries.size(), drifts.size());
    for (const auto& e : r.entries) EXPECT_GT(e.margin, -3.0 * e.combined_se);
}

TEST(Rhs, RejectedPathThrows) {
    FunctionalSpec F;
    F.name = "never";
    F.evaluator = [](const WienerPath&) { return kRejected; };
    EXPECT_THROW((void)rhs_objective(F, constant_drift(make_uniform_grid(4), 1.0), 10, 1), EvaluationError);
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

TEST(Spsa, FindsConstantOptimum) {
    auto g = make_uniform_grid(4);
    const DriftFamily f = DriftFamily::make(FamilyKind::constant, g, 1, -5.0, 5.0);
    SpsaConfig cfg;
    cfg.iterations = 150;
    cfg.a = 1.0;
    cfg.n_paths = 500;
    cfg.final_n_paths = 20000;
    const OptimizationTrace t = optimize_drift(linear_terminal(2.0), f, cfg, 5);
    ASSERT_EQ(t.best_theta.size(), 1u);
    EXPECT_NEAR(t.best_theta[0], 2.0, 0.05);
    EXPECT_NEAR(t.best_objective.value, 2.0, 0.05);
    EXPECT_EQ(t.iterates.size(), 150u);
    EXPECT_EQ(t.candidates.size(), 2u);
}

TEST(Spsa, DeterministicForSeed) {
    auto g = make_uniform_grid(4);
    const DriftFamily f = DriftFamily::make(FamilyKind::piecewise_constant, g, 2, -2.0, 2.0);
    SpsaConfig cfg;
    cfg.iterations = 20;
    cfg.n_paths = 200;
    cfg.final_n_paths = 500;
    const auto a = optimize_drift(quadratic_terminal(0.2), f, cfg, 9);
    const auto b = optimize_drift(quadratic_terminal(0.2), f, cfg, 9);
    EXPECT_EQ(a.best_theta, b.best_theta);
    EXPECT_EQ(a.best_objective.value, b.best_objective.value);
}

TEST(Spsa, DivergenceRaisesWithTrace) {
    FunctionalSpec F;
    F.name = "never";
    F.evaluator = [](const WienerPath&) { return kRejected; };
    const DriftFamily f = DriftFamily::make(FamilyKind::constant, make_uniform_grid(4), 1, -1.0, 1.0);
    SpsaConfig cfg;
    cfg.iterations = 50;
    cfg.n_paths = 10;
    cfg.divergence_patience = 5;
    try {
        (void)optimize_drift(F, f, cfg, 1);
        FAIL() << "expected OptimizationError";
    } catch (const OptimizationError& e) {
        EXPECT_EQ(e.trace().iterates.size(), 5u);
    }
}

TEST(Spsa, BadConfig) {
    const DriftFamily f = DriftFamily::make(FamilyKind::constant, make_uniform_grid(4), 1, -1.0, 1.0);
    SpsaConfig cfg;
    cfg.a = 0.0;
    EXPECT_THROW((void)optimize_drift(linear_terminal(1.0), f, cfg, 1), ConfigError);
    cfg = SpsaConfig{};
    cfg.initial_theta = {0.0, 0.0};
    EXPECT_THROW((void)optimize_drift(linear_terminal(1.0), f, cfg, 1), ConfigError);
}

// ---------------------------------------------------------------------------
// Clark-Ocone
// ---------------------------------------------------------------------------

TEST(ClarkOcone, LinearAndQuadraticClosedForms) {
    const ClarkOconeField lin(cylinder_linear(1.0, 1.5), QuadConfig{});
    const ClarkOconeField quad(cylinder_quadratic(1.0, 0.25), QuadConfig{});
    for (double t : {0.0, 0.3, 0.9})
        for (double x : {-2.0, 0.0, 1.3}) {
            EXPECT_NEAR(lin.value(t, x), 1.5, 1e-10);
            EXPECT_NEAR(quad.value(t, x), 0.5 * x / (1.0 - 0.5 * (1.0 - t)), 1e-10);
        }
}

TEST(ClarkOcone, ExponentialCylinderAgainstSimpson) {
    // f(x) = sin(x): E[f'(x + √τ Z) e^{f}] / E[e^{f}] by an independent Simpson rule.
    CylinderSpec s{{0.5},
                   [](std::span<const double> x) { return std::sin(x[0]); },
                   [](std::span<const double> x, std::span<double> g) { g[0] = std::cos(x[0]); }};
    const ClarkOconeField field(cylinder_functional(s), QuadConfig{});
    const double t = 0.1, x = 0.4, tau = 0.4;
    const double num = oracle::gaussian_expect([&](double z) {
        const double y = x + std::sqrt(tau) * z;
        return std::cos(y) * std::exp(std::sin(y));
    });
    const double den = oracle::gaussian_expect([&](double z) { return std::exp(std::sin(x + std::sqrt(tau) * z)); });
    EXPECT_NEAR(field.value(t, x), num / den, 1e-8);
    const std::vector<double> known{0.9};
    EXPECT_EQ(field.value(0.7, x, known), 0.0);
    EXPECT_THROW((void)field.value(0.7, x), ConfigError);
}

TEST(ClarkOcone, TwoPointLinear) {
    // f = c1 x1 + c2 x2 with q = 0: drift c1 + c2 before t1, c2 after.
    const ClarkOconeField f(cylinder_two_point(0.5, 1.0, 0.7, -0.4, 0.0), QuadConfig{});
    EXPECT_NEAR(f.value(0.2, 1.0), 0.3, 1e-10);
    const std::vector<double> known{0.3};
    EXPECT_NEAR(f.value(0.6, 1.0, known), -0.4, 1e-10);
}

TEST(ClarkOcone, DriftAttainsLhs) {
    auto g = make_uniform_grid(32);
    const FunctionalSpec F = cylinder_linear(1.0, 1.0);
    const SimpleDrift v = bar_conjugate(clark_ocone_drift(F, g));
    const Estimate r = rhs_objective(F, v, 20000, 11);
    EXPECT_LE(std::abs(r.value - 0.5), 4.0 * r.std_error);
}

TEST(ClarkOcone, RejectsNonCylinder) {
    EXPECT_THROW(ClarkOconeField(linear_terminal(1.0), QuadConfig{}), ConfigError);
}

// ---------------------------------------------------------------------------
// Truncation, assumptions, entropy
// ---------------------------------------------------------------------------

TEST(Truncation, MonotoneTable) {
    const double inf = std::numeric_limits<double>::infinity();
    const TruncationTable t = truncation_sweep(quadratic_terminal(0.25), space(8), {0.5, 1.0, 2.0}, {0.5, 2.0}, 20000, 3);
    EXPECT_EQ(t.rows.size(), 12u);
    EXPECT_TRUE(t.monotone_in_m);
    EXPECT_TRUE(t.monotone_in_n);
    EXPECT_EQ(t.rows.back().lower_n, inf);
    EXPECT_EQ(t.rows.back().upper_m, inf);
    // M = 0.5 caps F at 1/2 and F >= 0, so the value is below 1/2.
    EXPECT_LE(t.rows.front().estimate.value, 0.5);
}

TEST(Assumptions, Diagnostics) {
    const AssumptionReport r = validate_assumptions(linear_terminal(1.0), space(8), 20000, 2);
    EXPECT_EQ(r.n_rejected, 0u);
    EXPECT_LT(r.max_summand_share, 0.01);
    FunctionalSpec F = linear_terminal(1.0);
    F.delta.reset();
    EXPECT_THROW((void)validate_assumptions(F, space(8), 100, 2), ConfigError);
}

TEST(Entropy, RelativeEntropyEqualsHalfEnergy) {
    auto g = make_uniform_grid(16);
    const SimpleDrift v = linear_feedback_drift(g, uniform_knots(*g, 4), {0.5, 0.0, -0.5, 0.2}, {0.3, -0.6, 0.8, 0.1}, 1);
    const EntropyReport e = entropy_identity_check(v, 20000, 6);
    EXPECT_TRUE(e.agrees);
    EXPECT_LE(std::abs(e.lhs.value - e.rhs.value), 4.0 * e.combined_se);
}

TEST(Entropy, ConstantDriftExact) {
    const EntropyReport e = entropy_identity_check(constant_drift(make_uniform_grid(4), 2.0), 5000, 1);
    EXPECT_NEAR(e.rhs.value, 2.0, 1e-12);
    EXPECT_LE(std::abs(e.lhs.value - 2.0), 4.0 * e.lhs.std_error);
}
