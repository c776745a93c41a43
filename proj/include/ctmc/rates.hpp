#pragma once

// Nonhomogeneous rate matrices Q(t) on a finite state window.
//
// Two concrete representations share one compile-time interface
// (RateMatrixFunction): piecewise-constant blocks, and an arbitrary pure
// callable with declared discontinuities and a diagonal bound. Both evaluate
// right-continuously: at a breakpoint the block that starts there is used.

#include "ctmc/error.hpp"

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace ctmc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class StateSpace {
public:
    StateSpace() = default;

    explicit StateSpace(std::vector<std::string> labels) : labels_(std::move(labels)) {
        if (labels_.empty()) throw DimensionMismatch("state space must contain at least one state");
        std::unordered_set<std::string> seen;
        for (const auto& l : labels_) {
            if (!seen.insert(l).second) throw DimensionMismatch("duplicate state label '" + l + "'");
        }
    }

    /// States labelled "0", "1", ..., "n-1".
    static StateSpace numbered(std::size_t n) {
        std::vector<std::string> labels;
        labels.reserve(n);
        for (std::size_t i = 0; i < n; ++i) labels.push_back(std::to_string(i));
        return StateSpace(std::move(labels));
    }

    std::size_t size() const noexcept { return labels_.size(); }
    const std::string& label(std::size_t i) const { return labels_.at(i); }
    const std::vector<std::string>& labels() const noexcept { return labels_; }

    std::optional<std::size_t> index_of(const std::string& label) const {
        auto it = std::find(labels_.begin(), labels_.end(), label);
        if (it == labels_.end()) return std::nullopt;
        return static_cast<std::size_t>(it - labels_.begin());
    }

private:
    std::vector<std::string> labels_;
};

namespace detail {

inline void check_in_horizon(double t, double horizon) {
    if (!(t >= 0.0) || t > horizon) {
        std::ostringstream os;
        os << "time " << t << " outside horizon [0, " << horizon << "]";
        throw OutOfHorizon(os.str());
    }
}

inline void check_square(const Matrix& m, std::size_t n, const std::string& what) {
    if (static_cast<std::size_t>(m.rows()) != n || static_cast<std::size_t>(m.cols()) != n) {
        std::ostringstream os;
        os << what << " is " << m.rows() << "x" << m.cols() << ", expected " << n << "x" << n;
        throw DimensionMismatch(os.str());
    }
}

}  // namespace detail

/// Q(t) = blocks[k] for t in [breakpoints[k], breakpoints[k+1]); the last
/// block also covers t = horizon.
class PiecewiseConstantRates {
public:
    PiecewiseConstantRates(StateSpace space, std::vector<double> breakpoints, std::vector<Matrix> blocks)
        : space_(std::move(space)), breakpoints_(std::move(breakpoints)), blocks_(std::move(blocks)) {
        if (breakpoints_.size() < 2) throw DimensionMismatch("need at least two breakpoints (0 and the horizon)");
        if (breakpoints_.front() != 0.0) throw DimensionMismatch("first breakpoint must be 0");
        for (std::size_t k = 1; k < breakpoints_.size(); ++k) {
            if (!(breakpoints_[k] > breakpoints_[k - 1]) || !std::isfinite(breakpoints_[k]))
                throw DimensionMismatch("breakpoints must be finite and strictly increasing");
        }
        if (blocks_.size() + 1 != breakpoints_.size()) {
            std::ostringstream os;
            os << blocks_.size() << " blocks for " << breakpoints_.size() << " breakpoints";
            throw DimensionMismatch(os.str());
        }
        for (std::size_t k = 0; k < blocks_.size(); ++k)
            detail::check_square(blocks_[k], space_.size(), "block " + std::to_string(k));
    }

    /// Single block on [0, horizon].
    PiecewiseConstantRates(StateSpace space, Matrix q, double horizon)
        : PiecewiseConstantRates(std::move(space), {0.0, horizon}, {std::move(q)}) {}

    std::size_t size() const noexcept { return space_.size(); }
    const StateSpace& space() const noexcept { return space_; }
    double horizon() const noexcept { return breakpoints_.back(); }
    const std::vector<double>& breakpoints() const noexcept { return breakpoints_; }
    const std::vector<Matrix>& blocks() const noexcept { return blocks_; }
    std::size_t block_count() const noexcept { return blocks_.size(); }

    std::size_t block_index(double t) const {
        detail::check_in_horizon(t, horizon());
        auto it = std::upper_bound(breakpoints_.begin(), breakpoints_.end(), t);
        auto k = static_cast<std::size_t>(it - breakpoints_.begin());
        return std::min(k == 0 ? 0 : k - 1, blocks_.size() - 1);
    }

    /// Block whose half-open interval (t_k, t_{k+1}] contains t.
    std::size_t left_block_index(double t) const {
        detail::check_in_horizon(t, horizon());
        auto it = std::lower_bound(breakpoints_.begin(), breakpoints_.end(), t);
        auto k = static_cast<std::size_t>(it - breakpoints_.begin());
        return std::min(k == 0 ? 0 : k - 1, blocks_.size() - 1);
    }

    const Matrix& eval(double t) const { return blocks_[block_index(t)]; }
    const Matrix& eval_left(double t) const { return blocks_[left_block_index(t)]; }

    /// Interior breakpoints, i.e. the times where Q may jump.
    std::vector<double> discontinuities() const {
        return {breakpoints_.begin() + 1, breakpoints_.end() - 1};
    }

    double diag_bound() const {
        double b = 0.0;
        for (const auto& q : blocks_) b = std::max(b, (-q.diagonal()).maxCoeff());
        return b;
    }

    /// Exact: sum of block length times block value.
    double integrate_diagonal(std::size_t i, double a, double b) const {
        detail::check_in_horizon(a, horizon());
        detail::check_in_horizon(b, horizon());
        if (b < a) throw OutOfHorizon("integration bounds reversed");
        double sum = 0.0;
        for (std::size_t k = 0; k < blocks_.size(); ++k) {
            double lo = std::max(a, breakpoints_[k]);
            double hi = std::min(b, breakpoints_[k + 1]);
            if (hi > lo) sum += (hi - lo) * blocks_[k](i, i);
        }
        return sum;
    }

private:
    StateSpace space_;
    std::vector<double> breakpoints_;
    std::vector<Matrix> blocks_;
};

/// Rates given by a pure function of time. The function must be smooth
/// between the declared discontinuities and right-continuous at them, and
/// |q_ii(t)| <= diag_bound on [0, horizon].
class CallableRates {
public:
    using Function = std::function<Matrix(double)>;

    CallableRates(StateSpace space, Function fn, std::vector<double> discontinuities, double diag_bound,
                  double horizon, double quad_tol = 1e-12)
        : space_(std::move(space)),
          fn_(std::move(fn)),
          discontinuities_(std::move(discontinuities)),
          diag_bound_(diag_bound),
          horizon_(horizon),
          quad_tol_(quad_tol) {
        if (!fn_) throw DimensionMismatch("callable rates need a function");
        if (!(horizon_ > 0.0) || !std::isfinite(horizon_)) throw DimensionMismatch("horizon must be positive");
        if (!(diag_bound_ >= 0.0) || !std::isfinite(diag_bound_))
            throw DimensionMismatch("diagonal bound must be finite and nonnegative");
        std::sort(discontinuities_.begin(), discontinuities_.end());
        discontinuities_.erase(std::unique(discontinuities_.begin(), discontinuities_.end()), discontinuities_.end());
        std::erase_if(discontinuities_, [&](double d) { return !(d > 0.0 && d < horizon_); });
    }

    std::size_t size() const noexcept { return space_.size(); }
    const StateSpace& space() const noexcept { return space_; }
    double horizon() const noexcept { return horizon_; }
    double diag_bound() const noexcept { return diag_bound_; }
    double quad_tol() const noexcept { return quad_tol_; }
    const std::vector<double>& discontinuities() const noexcept { return discontinuities_; }

    Matrix eval(double t) const {
        detail::check_in_horizon(t, horizon_);
        Matrix q = fn_(t);
        detail::check_square(q, size(), "rate function value");
        return q;
    }

    /// Left limit at declared discontinuities, plain value elsewhere.
    Matrix eval_left(double t) const {
        detail::check_in_horizon(t, horizon_);
        if (std::binary_search(discontinuities_.begin(), discontinuities_.end(), t))
            return eval(std::nextafter(t, -std::numeric_limits<double>::infinity()));
        return eval(t);
    }

    /// Adaptive Gauss-Kronrod on each smooth piece of [a, b].
    double integrate_diagonal(std::size_t i, double a, double b) const {
        detail::check_in_horizon(a, horizon_);
        detail::check_in_horizon(b, horizon_);
        if (b < a) throw OutOfHorizon("integration bounds reversed");
        if (b == a) return 0.0;
        std::vector<double> cuts{a};
        for (double d : discontinuities_)
            if (d > a && d < b) cuts.push_back(d);
        cuts.push_back(b);

        double total = 0.0;
        const std::size_t pieces = cuts.size() - 1;
        for (std::size_t p = 0; p < pieces; ++p) {
            const double lo = cuts[p];
            const double hi = cuts[p + 1];
            // Pull the right end just inside the piece so a jump at hi is not sampled.
            const double hi_in = (p + 1 < pieces) ? std::nextafter(hi, lo) : hi;
            auto f = [&](double t) { return fn_(std::clamp(t, lo, hi_in))(i, i); };
            double err = 0.0;
            const double tol = quad_tol_ / static_cast<double>(pieces);
            total += boost::math::quadrature::gauss_kronrod<double, 15>::integrate(
                f, lo, hi, 15, tol / std::max(1.0, std::abs(hi - lo) * (diag_bound_ + 1.0)), &err);
        }
        return total;
    }

private:
    StateSpace space_;
    Function fn_;
    std::vector<double> discontinuities_;
    double diag_bound_;
    double horizon_;
    double quad_tol_;
};

/// What the kernel, properties checker and sampler need from a rate model.
template <class R>
concept RateMatrixFunction = requires(const R& q, double t, std::size_t i) {
    { q.size() } -> std::convertible_to<std::size_t>;
    { q.horizon() } -> std::convertible_to<double>;
    { q.eval(t) } -> std::convertible_to<Matrix>;
    { q.eval_left(t) } -> std::convertible_to<Matrix>;
    { q.integrate_diagonal(i, t, t) } -> std::convertible_to<double>;
    { q.diag_bound() } -> std::convertible_to<double>;
    { q.discontinuities() } -> std::convertible_to<std::vector<double>>;
    { q.space() } -> std::convertible_to<const StateSpace&>;
};

struct Violation {
    double time = 0.0;
    std::size_t row = 0;
    std::string description;
};

struct ValidationReport {
    bool valid = true;
    bool conservative = true;
    std::vector<Violation> violations;
};

namespace detail {

inline void check_rate_matrix(const Matrix& q, double t, double tol, ValidationReport& report) {
    const auto n = q.rows();
    for (Eigen::Index i = 0; i < n; ++i) {
        double row_sum = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            const double v = q(i, j);
            std::ostringstream where;
            where << "(" << i << "," << j << ")";
            if (!std::isfinite(v)) {
                report.violations.push_back({t, static_cast<std::size_t>(i), "non-finite entry at " + where.str()});
                continue;
            }
            if (i != j && v < -tol)
                report.violations.push_back({t, static_cast<std::size_t>(i), "negative off-diagonal at " + where.str()});
            if (i == j && v > tol)
                report.violations.push_back({t, static_cast<std::size_t>(i), "positive diagonal at " + where.str()});
            row_sum += v;
        }
        if (row_sum > tol) {
            std::ostringstream os;
            os << "positive row sum " << row_sum << " in row " << i;
            report.violations.push_back({t, static_cast<std::size_t>(i), os.str()});
        }
        if (std::abs(row_sum) > tol) report.conservative = false;
    }
}

}  // namespace detail

inline ValidationReport validate_q_matrix(const PiecewiseConstantRates& q, double tol = 1e-12) {
    ValidationReport report;
    for (std::size_t k = 0; k < q.block_count(); ++k) detail::check_rate_matrix(q.blocks()[k], q.breakpoints()[k], tol, report);
    report.valid = report.violations.empty();
    return report;
}

/// Checks the callable at `samples` uniform nodes plus both sides of every
/// declared discontinuity.
inline ValidationReport validate_q_matrix(const CallableRates& q, double tol = 1e-9, std::size_t samples = 1024) {
    ValidationReport report;
    std::vector<double> nodes;
    for (std::size_t k = 0; k <= samples; ++k)
        nodes.push_back(q.horizon() * static_cast<double>(k) / static_cast<double>(samples));
    for (double d : q.discontinuities()) nodes.push_back(d);
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
    for (double t : nodes) {
        Matrix m = q.eval(t);
        detail::check_rate_matrix(m, t, tol, report);
        if (-m.diagonal().minCoeff() > q.diag_bound() + tol) {
            std::ostringstream os;
            os << "diagonal exceeds declared bound " << q.diag_bound();
            report.violations.push_back({t, 0, os.str()});
        }
    }
    for (double d : q.discontinuities()) detail::check_rate_matrix(q.eval_left(d), d, tol, report);
    report.valid = report.violations.empty();
    return report;
}

template <RateMatrixFunction R>
void require_valid(const R& q) {
    const auto report = validate_q_matrix(q);
    if (!report.valid) {
        const auto& v = report.violations.front();
        std::ostringstream os;
        os << "invalid rate matrix at t=" << v.time << ": " << v.description;
        throw InvalidRates(os.str());
    }
}

/// Always [0, horizon] clamped right-continuous evaluation; see class docs.
template <RateMatrixFunction R>
Matrix eval_rates(const R& q, double t) {
    return q.eval(t);
}

template <RateMatrixFunction R>
double integrate_diagonal(const R& q, std::size_t i, double a, double b) {
    return q.integrate_diagonal(i, a, b);
}

/// Birth-death chain restricted to states 0..window-1. Births out of the top
/// state are dropped, so that row leaks mass at rate birth(window-1).
inline PiecewiseConstantRates truncate_birth_death(const std::function<double(std::size_t)>& birth,
                                                   const std::function<double(std::size_t)>& death,
                                                   std::size_t window, double horizon) {
    if (window == 0) throw DimensionMismatch("window must contain at least one state");
    Matrix q = Matrix::Zero(static_cast<Eigen::Index>(window), static_cast<Eigen::Index>(window));
    for (std::size_t i = 0; i < window; ++i) {
        const double lam = birth(i);
        const double mu = i > 0 ? death(i) : 0.0;
        if (!(lam >= 0.0) || !(mu >= 0.0) || !std::isfinite(lam) || !std::isfinite(mu)) {
            std::ostringstream os;
            os << "negative or non-finite rate at state " << i << " (birth " << lam << ", death " << mu << ")";
            throw NonnegativityViolation(os.str());
        }
        const auto r = static_cast<Eigen::Index>(i);
        if (i + 1 < window) q(r, r + 1) = lam;
        if (i > 0) q(r, r - 1) = mu;
        q(r, r) = -(lam + mu);
    }
    return PiecewiseConstantRates(StateSpace::numbered(window), std::move(q), horizon);
}

}  // namespace ctmc
