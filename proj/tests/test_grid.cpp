#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "bdvar/estimate.hpp"
#include "bdvar/grid.hpp"
#include "bdvar/parallel.hpp"
#include "bdvar/random.hpp"

using namespace bdvar;

// ---------------------------------------------------------------------------
// Time grid
// ---------------------------------------------------------------------------

TEST(TimeGrid, UniformKnots) {
    const TimeGrid g = TimeGrid::uniform(8);
    EXPECT_EQ(g.n_steps(), 8u);
    EXPECT_EQ(g.n_knots(), 9u);
    EXPECT_EQ(g.time(0), 0.0);
    EXPECT_EQ(g.time(8), 1.0);
    EXPECT_DOUBLE_EQ(g.time(3), 0.375);
    EXPECT_DOUBLE_EQ(g.dt(5), 0.125);
}

TEST(TimeGrid, RejectsBadKnots) {
    EXPECT_THROW(TimeGrid::uniform(0), ConfigError);
    EXPECT_THROW(TimeGrid({0.0}), ConfigError);
    EXPECT_THROW(TimeGrid({0.1, 1.0}), ConfigError);
    EXPECT_THROW(TimeGrid({0.0, 0.9}), ConfigError);
    EXPECT_THROW(TimeGrid({0.0, 0.5, 0.5, 1.0}), ConfigError);
}

TEST(TimeGrid, IndexLookup) {
    const TimeGrid g = TimeGrid::uniform(4);
    EXPECT_EQ(g.index_of(0.5), 2u);
    EXPECT_EQ(g.index_of(1.0), 4u);
    EXPECT_FALSE(g.index_of(0.3).has_value());
    EXPECT_THROW((void)g.require_index(0.3), ConfigError);
}

TEST(TimeGrid, NonUniform) {
    const TimeGrid g({0.0, 0.1, 0.5, 1.0});
    EXPECT_DOUBLE_EQ(g.dt(1), 0.4);
    EXPECT_EQ(g.index_of(0.1), 1u);
}

// ---------------------------------------------------------------------------
// Paths
// ---------------------------------------------------------------------------

TEST(WienerPath, MustStartAtZero) {
    auto g = make_uniform_grid(2);
    EXPECT_THROW(WienerPath(g, 1, {0.1, 0.2, 0.3}), ConfigError);
    EXPECT_THROW(WienerPath(g, 1, {0.0, 0.2}), ConfigError);
    EXPECT_THROW(WienerPath(g, 0), ConfigError);
    const WienerPath w(g, 1, {0.0, -0.5, 0.25});
    EXPECT_DOUBLE_EQ(w.terminal(), 0.25);
    EXPECT_DOUBLE_EQ(w.sup_norm(), 0.5);
}

TEST(WienerPath, PastForbidsLookahead) {
    auto g = make_uniform_grid(4);
    const WienerPath w(g, 1, {0.0, 1.0, 2.0, 3.0, 4.0});
    const PathPast p = w.past(2);
    EXPECT_EQ(p.at(2), 2.0);
    EXPECT_EQ(p.current()[0], 2.0);
    EXPECT_THROW((void)p.at(3), std::out_of_range);
}

TEST(WienerPath, SamplingIsDeterministicPerStream) {
    auto g = make_uniform_grid(16);
    const WienerPath a = sample_wiener(g, 2, 42, 7);
    const WienerPath b = sample_wiener(g, 2, 42, 7);
    const WienerPath c = sample_wiener(g, 2, 42, 8);
    EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
    EXPECT_FALSE(std::equal(a.values().begin(), a.values().end(), c.values().begin()));
}

TEST(WienerPath, IncrementVariance) {
    auto g = make_uniform_grid(4);
    const std::size_t n = 40000;
    std::vector<double> x1(n), x2(n), cross(n);
    for (std::size_t p = 0; p < n; ++p) {
        const WienerPath w = sample_wiener(g, 1, 3, p);
        x1[p] = w.terminal() * w.terminal();
        x2[p] = w(2) * w(2);
        cross[p] = w(2) * (w.terminal() - w(2));
    }
    EXPECT_NEAR(sample_mean(x1), 1.0, 0.03);
    EXPECT_NEAR(sample_mean(x2), 0.5, 0.015);
    EXPECT_NEAR(sample_mean(cross), 0.0, 0.015);
}

TEST(CameronMartin, InnerProductAndPath) {
    auto g = make_uniform_grid(4);
    const CameronMartinPath h(g, 1, {1.0, 1.0, -2.0, 0.0});
    EXPECT_DOUBLE_EQ(h_norm_sq(h), 0.25 * (1 + 1 + 4));
    const WienerPath p = h.to_path();
    EXPECT_DOUBLE_EQ(p.terminal(), 0.0);
    EXPECT_DOUBLE_EQ(p(2), 0.5);
    const CameronMartinPath l = CameronMartinPath::linear(g, {3.0});
    EXPECT_DOUBLE_EQ(h_norm_sq(l), 9.0);
    EXPECT_DOUBLE_EQ(h_inner(h, l), 3.0 * 0.25 * 0.0);
    EXPECT_THROW(CameronMartinPath(g, 1, {1.0}), ConfigError);
}

// ---------------------------------------------------------------------------
// Randomness, reduction, estimates
// ---------------------------------------------------------------------------

TEST(Random, StreamsAreIndependentOfOrder) {
    StreamRng a(9, 5);
    const double first = a.gaussian();
    StreamRng b(9, 4);
    (void)b.gaussian();
    StreamRng c(9, 5);
    EXPECT_EQ(first, c.gaussian());
    EXPECT_NE(tagged_seed(9, StreamTag::paths), tagged_seed(9, StreamTag::spsa_evaluation));
}

TEST(Parallel, ResultsIndependentOfThreadCount) {
    const std::size_t n = 10007;
    auto run = [&](unsigned threads) {
        set_thread_count(threads);
        std::vector<double> out(n);
        parallel_for(n, [&](std::size_t i) { out[i] = StreamRng(1, i).gaussian() * 1e-3 + 1.0 / (1.0 + i); });
        return pairwise_sum(out);
    };
    const double s1 = run(1), s3 = run(3), s8 = run(8);
    set_thread_count(0);
    EXPECT_EQ(s1, s3);
    EXPECT_EQ(s1, s8);
}

TEST(Parallel, RethrowsSmallestFailingIndex) {
    set_thread_count(4);
    try {
        parallel_for(1000, [](std::size_t i) {
            if (i == 123 || i == 900) throw EvaluationError("index " + std::to_string(i));
        });
        FAIL() << "expected an exception";
    } catch (const EvaluationError& e) {
        EXPECT_STREQ(e.what(), "index 123");
    }
    set_thread_count(0);
}

TEST(Estimate, MeanAndStderr) {
    const std::vector<double> xs{1.0, 2.0, 3.0, 4.0};
    const Estimate e = mean_estimate(xs, 5);
    EXPECT_DOUBLE_EQ(e.value, 2.5);
    EXPECT_NEAR(e.std_error, std::sqrt((5.0 / 3.0) / 4.0), 1e-15);
    EXPECT_EQ(e.n_samples, 4u);
    EXPECT_EQ(e.seed, 5u);
    EXPECT_THROW((void)mean_estimate(std::vector<double>{1.0, NAN}), EstimationError);
}

TEST(Estimate, LogMeanExp) {
    const std::vector<double> t{std::log(1.0), std::log(3.0)};
    EXPECT_NEAR(log_mean_exp_estimate(t).value, std::log(2.0), 1e-15);
    const double ninf = -std::numeric_limits<double>::infinity();
    // A rejected path has e^F = 0 and still counts toward the sample size.
    const std::vector<double> r{ninf, 0.0};
    EXPECT_NEAR(log_mean_exp_estimate(r).value, std::log(0.5), 1e-15);
    EXPECT_THROW((void)log_mean_exp_estimate(std::vector<double>{ninf, ninf}), EstimationError);
    EXPECT_THROW((void)log_mean_exp_estimate(std::vector<double>{}), EstimationError);
}

TEST(Estimate, LogMeanExpHugeValues) {
    const std::vector<double> t{1000.0, 1000.0 + std::log(3.0)};
    EXPECT_NEAR(log_mean_exp_estimate(t).value, 1000.0 + std::log(2.0), 1e-12);
}
