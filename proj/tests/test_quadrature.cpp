#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "bdvar/convex.hpp"
#include "bdvar/quadrature.hpp"
#include "oracles.hpp"

using namespace bdvar;

// ---------------------------------------------------------------------------
// Gauss-Hermite
// ---------------------------------------------------------------------------

class GaussHermiteOrder : public ::testing::TestWithParam<std::size_t> {};

TEST_P(GaussHermiteOrder, ExactForPolynomials) {
    const std::size_t n = GetParam();
    const GaussHermiteRule r = gauss_hermite(n);
    ASSERT_EQ(r.nodes.size(), n);
    for (std::size_t i = 1; i < n; ++i) ASSERT_LT(r.nodes[i - 1], r.nodes[i]);
    EXPECT_NEAR(r.nodes[n / 2] + r.nodes[n - 1 - n / 2], 0.0, 1e-14);
    double wsum = 0.0;
    for (double w : r.weights) wsum += w;
    EXPECT_NEAR(wsum, 1.0, 1e-14);
    // E Z^{2k} = (2k-1)!! for 2k <= 2n - 1.
    double dfact = 1.0;
    for (std::size_t k = 1; 2 * k <= std::min<std::size_t>(2 * n - 1, 16); ++k) {
        dfact *= static_cast<double>(2 * k - 1);
        const double m = r.expect([k](double z) { return std::pow(z, static_cast<double>(2 * k)); });
        EXPECT_NEAR(m / dfact, 1.0, 1e-12) << "k=" << k;
        EXPECT_NEAR(r.expect([k](double z) { return std::pow(z, static_cast<double>(2 * k - 1)); }), 0.0, 1e-12 * dfact);
    }
}

INSTANTIATE_TEST_SUITE_P(Orders, GaussHermiteOrder, ::testing::Values(8u, 16u, 32u, 64u, 150u, 200u));

TEST(GaussHermite, SmoothExpectation) {
    const GaussHermiteRule r = gauss_hermite(32);
    EXPECT_NEAR(r.expect([](double z) { return std::cos(z); }), std::exp(-0.5), 1e-14);
    EXPECT_NEAR(r.expect([](double z) { return std::exp(0.5 * z); }), std::exp(0.125), 1e-13);
}

// ---------------------------------------------------------------------------
// Adaptive Gauss-Kronrod
// ---------------------------------------------------------------------------

TEST(Integrate, Smooth) {
    const QuadResult r = integrate([](double x) { return std::exp(-x * x); }, -3.0, 5.0);
    EXPECT_NEAR(r.value, 0.5 * std::sqrt(std::numbers::pi) * (std::erf(5.0) + std::erf(3.0)), 1e-14);
    EXPECT_LT(r.error, 1e-12);
}

TEST(Integrate, SharpPeakAndKinkSplit) {
    const double eps = 1e-6;
    const QuadResult r = integrate([eps](double x) { return 1.0 / (x * x + eps * eps); }, -1.0, 1.0, 1e-10, 1e-300, 40);
    EXPECT_NEAR(r.value / (2.0 * std::atan(1.0 / eps) / eps), 1.0, 1e-9);
    const double s = integrate_split([](double x) { return std::abs(x - 0.3); }, -1.0, 1.0, {0.3});
    EXPECT_NEAR(s, 0.5 * (1.3 * 1.3 + 0.7 * 0.7), 1e-14);
}

TEST(Integrate, UnresolvedThrows) {
    EXPECT_THROW((void)integrate([](double x) { return 1.0 / (x * x + 1e-12); }, -1.0, 1.0, 1e-12, 1e-300, 2),
                 NumericError);
}

TEST(Normal, CdfQuantileRoundTrip) {
    for (double p : {1e-12, 1e-6, 0.01, 0.3, 0.5, 0.9, 1.0 - 1e-9}) EXPECT_NEAR(normal_cdf(normal_quantile(p)) / p, 1.0, 1e-10);
    EXPECT_NEAR(normal_quantile(0.975), 1.959963984540054, 1e-13);
    EXPECT_NEAR(normal_sf(3.0), 0.0013498980316301, 1e-15);
    EXPECT_NEAR(normal_pdf(1.0, 2.0), oracle::phi(0.5) / 2.0, 1e-16);
}

// ---------------------------------------------------------------------------
// Convex test functions
// ---------------------------------------------------------------------------

TEST(Convex, Parsing) {
    EXPECT_EQ(convex_from_name("z^2").name, "z^2");
    EXPECT_EQ(convex_from_name("|z|").name, "|z|");
    EXPECT_EQ(convex_from_name("|z|^3").name, "|z|^3");
    EXPECT_DOUBLE_EQ(convex_from_name("|z|^1.5")(-4.0), 8.0);
    EXPECT_THROW((void)convex_from_name("|z|^0.5"), ConfigError);
    EXPECT_THROW((void)convex_from_name("|z|^x"), ConfigError);
    EXPECT_THROW((void)convex_from_name("exp"), ConfigError);
}

TEST(Convex, GaussianMomentsMatchOracles) {
    for (double s : {0.3, 1.0, 2.5}) {
        EXPECT_NEAR(gaussian_convex_moment(psi_square(), s), s * s, 1e-13 * s * s);
        EXPECT_NEAR(gaussian_convex_moment(psi_quartic(), s), 3.0 * std::pow(s, 4), 1e-12 * std::pow(s, 4));
        EXPECT_NEAR(gaussian_convex_moment(psi_abs(), s), s * oracle::abs_moment(1.0), 1e-13 * s);
        EXPECT_NEAR(gaussian_convex_moment(psi_abs_power(3.0), s), std::pow(s, 3) * oracle::abs_moment(3.0),
                    1e-12 * std::pow(s, 3));
    }
    EXPECT_THROW((void)gaussian_convex_moment(psi_square(), 0.0), DomainError);
}
