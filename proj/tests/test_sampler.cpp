#include "support.hpp"

#include <gtest/gtest.h>

using namespace ctmc;
using namespace ctmc::testing;

TEST(SamplePath, ZeroRatesStayPut) {
    const auto q = constant_rates(Matrix::Zero(3, 3));
    const PathSample p = sample_path(q, 2, 0.0, 1.0, 42);
    EXPECT_TRUE(p.jump_times.empty());
    EXPECT_EQ(p.states, std::vector<std::size_t>{2});
    EXPECT_EQ(p.status, Terminal::alive);
}

TEST(SamplePath, SameSeedReplaysPath) {
    const auto q = three_state_breakpoint();
    const PathSample a = sample_path(q, 0, 0.0, 1.0, 9, 17);
    const PathSample b = sample_path(q, 0, 0.0, 1.0, 9, 17);
    EXPECT_EQ(a.jump_times, b.jump_times);
    EXPECT_EQ(a.states, b.states);
    EXPECT_EQ(a.status, b.status);
    const PathSample c = sample_path(q, 0, 0.0, 1.0, 9, 18);
    EXPECT_TRUE(c.jump_times != a.jump_times || c.states != a.states);
}

TEST(SamplePath, PathInvariants) {
    const auto q = quadratic_birth();
    for (std::uint64_t p = 0; p < 500; ++p) {
        const PathSample path = sample_path(q, 0, 0.1, 0.5, 3, p);
        ASSERT_EQ(path.states.size(), path.jump_times.size() + 1);
        for (std::size_t k = 0; k < path.jump_times.size(); ++k) {
            EXPECT_GT(path.jump_times[k], k ? path.jump_times[k - 1] : 0.1);
            EXPECT_LE(path.jump_times[k], 0.5);
            EXPECT_NE(path.states[k], path.states[k + 1]);
        }
        if (path.status == Terminal::killed) {
            EXPECT_EQ(path.final_state(), 11u);
            EXPECT_LE(path.kill_time, 0.5);
        }
    }
}

TEST(SamplePath, ArgumentErrors) {
    EXPECT_THROW(sample_path(two_state(), 2, 0.0, 1.0, 1), DimensionMismatch);
    EXPECT_THROW(sample_path(two_state(), 0, 0.5, 0.2, 1), OutOfHorizon);
    EXPECT_THROW(sample_path(two_state(), 0, 0.0, 1.5, 1), OutOfHorizon);
    EXPECT_THROW(empirical_transition(two_state(), 0, 0.0, 1.0, 0, 1), DimensionMismatch);
}

TEST(Empirical, ZeroRatesExact) {
    const auto est = empirical_transition(constant_rates(Matrix::Zero(2, 2)), 1, 0.0, 1.0, 1000, 5);
    EXPECT_EQ(est.counts[1], 1000u);
    EXPECT_EQ(est.probability[1], 1.0);
    EXPECT_EQ(est.std_error[1], 0.0);
    EXPECT_EQ(est.killed, 0u);
}

TEST(Empirical, SingleStateSurvival) {
    const auto est = empirical_transition(single_kill(), 0, 0.0, 1.0, 100000, 21);
    const double p = std::exp(-1.0);
    EXPECT_LE(std::abs(est.probability[0] - p), 3.0 * std::sqrt(p * (1 - p) / 1e5));
    EXPECT_EQ(est.counts[0] + est.killed, 100000u);
}

TEST(Empirical, TwoStateWithinBand) {
    const auto est = empirical_transition(two_state(1.0, 2.0), 0, 0.0, 1.0, 100000, 22);
    const double p = 2.0 / 3.0 + std::exp(-3.0) / 3.0;
    EXPECT_LE(std::abs(est.probability[0] - p), 3.0 * std::sqrt(p * (1 - p) / 1e5));
}

TEST(Empirical, KilledFractionMatchesKernelDefect) {
    const auto q = quadratic_birth();
    const MinimalSolution sol = minimal_solution(q, 0.0, 0.5);
    const double defect = regularity_defect(sol).defect.back()(0);
    const auto est = empirical_transition(q, 0, 0.0, 0.5, 100000, 23);
    EXPECT_LE(std::abs(est.killed_fraction - defect), 3.0 * std::sqrt(defect * (1 - defect) / 1e5));
}

TEST(Empirical, ThreadCountDoesNotChangeResults) {
    const auto q = three_state_breakpoint();
    const auto one = simulate_terminals(q, 1, 0.0, 1.0, 2001, 99, 1);
    const auto three = simulate_terminals(q, 1, 0.0, 1.0, 2001, 99, 3);
    EXPECT_EQ(one, three);
    const auto again = simulate_terminals(q, 1, 0.0, 1.0, 2001, 99, 2);
    EXPECT_EQ(one, again);
}

TEST(Empirical, ThinningMatchesKernelForCallableRates) {
    const RunConfig cfg = load_config(CTMC_SOURCE_DIR "/configs/affine_callable.json");
    const auto& q = std::get<CallableRates>(cfg.rates);
    const MinimalSolution sol = minimal_solution(q, 0.0, 1.0);
    const auto est = empirical_transition(q, 0, 0.0, 1.0, 100000, 24);
    for (const auto& c : compare_to_model(est, sol.final_value().row(0).transpose(), q.space()))
        EXPECT_TRUE(c.within) << c.outcome << " " << c.empirical << " vs " << c.expected;
}

TEST(Empirical, BandCoverageCalibration) {
    // 200 independent replications of 2000 paths; the 3 sigma band around the
    // kernel value must cover the estimate at least 99% of the time.
    const auto q = three_state_breakpoint();
    const MinimalSolution sol = minimal_solution(q, 0.0, 1.0);
    const Vector row = sol.final_value().row(0).transpose();
    int covered = 0;
    for (std::uint64_t rep = 0; rep < 200; ++rep) {
        const auto est = empirical_transition(q, 0, 0.0, 1.0, 2000, 1000 + rep);
        const auto checks = compare_to_model(est, row, q.space());
        if (checks.front().within) ++covered;
    }
    EXPECT_GE(covered, 198);
}

TEST(Empirical, TinyRunsStillProduceBands) {
    const auto est = empirical_transition(two_state(), 0, 0.0, 1.0, 10, 25);
    const auto checks = compare_to_model(est, minimal_solution(two_state(), 0.0, 1.0).final_value().row(0).transpose(),
                                         two_state().space());
    EXPECT_EQ(checks.size(), 3u);
    EXPECT_EQ(checks.back().outcome, "killed");
    EXPECT_TRUE(checks.back().within);
}

TEST(WorkerCount, EnvironmentOverride) {
    ::setenv("CTMC_THREADS", "3", 1);
    EXPECT_EQ(worker_count(), 3u);
    ::setenv("CTMC_THREADS", "zero", 1);
    EXPECT_GE(worker_count(), 1u);
    ::unsetenv("CTMC_THREADS");
}
