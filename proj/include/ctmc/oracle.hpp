#pragma once

// Reference transition matrices for piecewise-constant rates, independent of
// the series kernel: the rate matrix is closed with an extra cemetery state
// so every block is conservative, and P(s,t) is the time-ordered product of
// block exponentials.

#include "ctmc/error.hpp"
#include "ctmc/rates.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

namespace ctmc {

/// Base chain on S embedded in S ∪ {cemetery}; the cemetery is the last index.
struct AugmentedChain {
    PiecewiseConstantRates chain;
    std::size_t cemetery = 0;
    std::size_t base_size() const noexcept { return cemetery; }
};

namespace detail {

inline StateSpace with_cemetery(const StateSpace& space) {
    std::vector<std::string> labels = space.labels();
    std::string name = "cemetery";
    while (space.index_of(name)) name += "'";
    labels.push_back(name);
    return StateSpace(std::move(labels));
}

inline Matrix augment_block(const Matrix& q) {
    const auto n = q.rows();
    Matrix out = Matrix::Zero(n + 1, n + 1);
    out.topLeftCorner(n, n) = q;
    // Kill rate is minus the row sum; clamp the round-off of conservative rows.
    out.col(n).head(n) = (-q.rowwise().sum()).cwiseMax(0.0);
    return out;
}

}  // namespace detail

/// Cemetery is absorbing; q(i, cemetery) = -Σ_j q_ij.
inline AugmentedChain conservativize(const PiecewiseConstantRates& q) {
    std::vector<Matrix> blocks;
    blocks.reserve(q.block_count());
    for (const auto& b : q.blocks()) blocks.push_back(detail::augment_block(b));
    return {PiecewiseConstantRates(detail::with_cemetery(q.space()), q.breakpoints(), std::move(blocks)), q.size()};
}

/// Like conservativize, but the cemetery returns mass to S at rate r with
/// entrance law nu. The restriction to S is another transition matrix for
/// the same Q, and it dominates the minimal one.
inline AugmentedChain resurrect(const PiecewiseConstantRates& q, const Vector& nu, double rate) {
    const auto n = static_cast<Eigen::Index>(q.size());
    if (nu.size() != n) throw InvalidDistribution("entrance law has the wrong length");
    if ((nu.array() < 0.0).any() || std::abs(nu.sum() - 1.0) > 1e-12)
        throw InvalidDistribution("entrance law must be nonnegative and sum to 1");
    if (!(rate > 0.0) || !std::isfinite(rate)) throw InvalidDistribution("resurrection rate must be positive");
    if (validate_q_matrix(q).conservative)
        throw VacuousResurrection("rates are conservative; no mass ever reaches the cemetery");

    AugmentedChain out = conservativize(q);
    std::vector<Matrix> blocks = out.chain.blocks();
    for (auto& b : blocks) {
        b.row(n).head(n) = rate * nu.transpose();
        b(n, n) = -rate;
    }
    out.chain = PiecewiseConstantRates(out.chain.space(), out.chain.breakpoints(), std::move(blocks));
    return out;
}

/// Scaling-and-squaring Padé exponential.
inline Matrix expm(const Matrix& a) { return a.exp(); }

/// Product of exp((t_{k+1}-t_k) Q_k) over the blocks meeting [s, t], earliest
/// factor on the left.
inline Matrix pc_exact(const PiecewiseConstantRates& q, double s, double t) {
    detail::check_in_horizon(s, q.horizon());
    detail::check_in_horizon(t, q.horizon());
    if (t < s) throw OutOfHorizon("pc_exact needs s <= t");
    const auto n = static_cast<Eigen::Index>(q.size());
    Matrix p = Matrix::Identity(n, n);
    const auto& bp = q.breakpoints();
    for (std::size_t k = 0; k < q.block_count(); ++k) {
        const double lo = std::max(s, bp[k]);
        const double hi = std::min(t, bp[k + 1]);
        if (hi > lo) p = p * expm((hi - lo) * q.blocks()[k]);
    }
    return p;
}

inline Matrix pc_exact(const AugmentedChain& chain, double s, double t) { return pc_exact(chain.chain, s, t); }

/// S x S corner of a matrix on S ∪ {cemetery}.
inline Matrix restrict_to_base(const Matrix& augmented, std::size_t base_size) {
    const auto n = static_cast<Eigen::Index>(base_size);
    return augmented.topLeftCorner(n, n);
}

inline Matrix restrict_to_base(const Matrix& augmented) { return restrict_to_base(augmented, augmented.rows() - 1); }

/// Reference minimal solution P(s,t) on S.
inline Matrix exact_minimal(const PiecewiseConstantRates& q, double s, double t) {
    return restrict_to_base(pc_exact(conservativize(q), s, t), q.size());
}

}  // namespace ctmc
