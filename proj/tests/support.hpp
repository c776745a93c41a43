#pragma once

// Shared fixtures for the unit and acceptance suites.

#include "ctmc/ctmc.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace ctmc::testing {

inline PiecewiseConstantRates constant_rates(const Matrix& q, double horizon = 1.0) {
    return PiecewiseConstantRates(StateSpace::numbered(static_cast<std::size_t>(q.rows())), q, horizon);
}

/// 0 -> 1 at rate a, 1 -> 0 at rate b.
inline PiecewiseConstantRates two_state(double a = 1.0, double b = 2.0, double horizon = 1.0) {
    Matrix q(2, 2);
    q << -a, a, b, -b;
    return constant_rates(q, horizon);
}

/// Closed form P_00(0, t) of the two-state chain.
inline double two_state_p00(double a, double b, double t) { return b / (a + b) + a / (a + b) * std::exp(-(a + b) * t); }

inline PiecewiseConstantRates single_kill(double rate = 1.0, double horizon = 1.0) {
    return constant_rates(Matrix::Constant(1, 1, -rate), horizon);
}

/// lambda(i) = (i+1)^2 on {0..n-1}, no deaths.
inline PiecewiseConstantRates quadratic_birth(std::size_t n = 12, double horizon = 0.5) {
    return truncate_birth_death([](std::size_t i) { return double((i + 1) * (i + 1)); }, [](std::size_t) { return 0.0; },
                                n, horizon);
}

/// 3 states, one breakpoint at 0.4, killing from "2" in the second block.
inline PiecewiseConstantRates three_state_breakpoint(double breakpoint = 0.4) {
    Matrix a(3, 3), b(3, 3);
    a << -1.5, 1.5, 0.0,
          0.7, -1.0, 0.3,
          0.2, 0.0, -0.2;
    b << -0.5, 0.5, 0.0,
          2.0, -2.0, 0.0,
          0.0, 1.0, -1.4;
    return PiecewiseConstantRates(StateSpace::numbered(3), {0.0, breakpoint, 1.0}, {a, b});
}

struct RandomInstance {
    PiecewiseConstantRates q;
    bool conservative;
};

/// Horizon 1, |S| in 1..8, up to 3 interior breakpoints; off-diagonal rates
/// U[0,1] with density 0.6. Odd-indexed instances kill at U[0.1,0.5] from
/// about half the states (at least one).
inline RandomInstance random_instance(std::uint64_t seed, std::size_t index) {
    std::mt19937_64 rng(seed * 1000003u + index);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t n = 1 + rng() % 8;
    const std::size_t interior = rng() % 4;
    std::vector<double> bp{0.0};
    for (std::size_t k = 0; k < interior; ++k) bp.push_back(0.05 + 0.9 * unit(rng));
    bp.push_back(1.0);
    std::sort(bp.begin(), bp.end());
    bp.erase(std::unique(bp.begin(), bp.end()), bp.end());

    const bool conservative = index % 2 == 0;
    const auto sz = static_cast<Eigen::Index>(n);
    std::vector<Matrix> blocks;
    for (std::size_t k = 0; k + 1 < bp.size(); ++k) {
        Matrix m = Matrix::Zero(sz, sz);
        for (Eigen::Index i = 0; i < sz; ++i)
            for (Eigen::Index j = 0; j < sz; ++j)
                if (i != j && unit(rng) < 0.6) m(i, j) = unit(rng);
        Vector kill = Vector::Zero(sz);
        if (!conservative) {
            const auto forced = static_cast<Eigen::Index>(rng() % n);
            for (Eigen::Index i = 0; i < sz; ++i)
                if (i == forced || unit(rng) < 0.5) kill(i) = 0.1 + 0.4 * unit(rng);
        }
        for (Eigen::Index i = 0; i < sz; ++i) m(i, i) = -(m.row(i).sum() + kill(i));
        blocks.push_back(std::move(m));
    }
    return {PiecewiseConstantRates(StateSpace::numbered(n), bp, blocks), conservative};
}

inline std::vector<RandomInstance> random_suite(std::uint64_t seed = 20240601, std::size_t count = 20) {
    std::vector<RandomInstance> out;
    for (std::size_t k = 0; k < count; ++k) out.push_back(random_instance(seed, k));
    return out;
}

inline double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace ctmc::testing
