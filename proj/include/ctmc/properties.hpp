#pragma once

// Numerical checks of the pretransition axioms and of the structural facts
// every transition matrix built from a Q(t)-matrix must satisfy, run over a
// two-parameter family P(u_a, u_b) sampled at grid nodes.

#include "ctmc/error.hpp"
#include "ctmc/kernel.hpp"
#include "ctmc/rates.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace ctmc {

struct PropertyOutcome {
    std::string name;
    bool passed = true;
    std::string location;
    double measured = 0.0;
    double bound = 0.0;
    double tolerance = 0.0;
};

/// P(u_a, u_b) for a <= b over a fixed set of nodes.
class TransitionFamily {
public:
    using Accessor = std::function<Matrix(std::size_t, std::size_t)>;

    /// `rate_bound` bounds -q_ii; it sizes the short-time continuity check.
    TransitionFamily(std::vector<double> nodes, Accessor at, double rate_bound)
        : nodes_(std::move(nodes)), at_(std::move(at)), rate_bound_(rate_bound) {
        if (nodes_.empty()) throw GridMismatch("family needs at least one node");
        if (!std::is_sorted(nodes_.begin(), nodes_.end())) throw GridMismatch("family nodes must be sorted");
    }

    const std::vector<double>& nodes() const noexcept { return nodes_; }
    std::size_t size() const noexcept { return nodes_.size(); }
    double rate_bound() const noexcept { return rate_bound_; }

    std::size_t index_of(double t) const {
        for (std::size_t k = 0; k < nodes_.size(); ++k)
            if (std::abs(nodes_[k] - t) <= 1e-12 * std::max(1.0, std::abs(t))) return k;
        std::ostringstream os;
        os << "time " << t << " is not a node of the family";
        throw OffGrid(os.str());
    }

    Matrix operator()(std::size_t a, std::size_t b) const {
        if (a > b || b >= nodes_.size()) throw OffGrid("family index out of range or reversed");
        return at_(a, b);
    }

    Matrix at_times(double s, double t) const { return (*this)(index_of(s), index_of(t)); }

    /// Same nodes, every value passed through `edit(a, b, value)`.
    TransitionFamily with_edit(std::function<void(std::size_t, std::size_t, Matrix&)> edit) const {
        auto inner = at_;
        return TransitionFamily(nodes_, [inner, edit](std::size_t a, std::size_t b) {
            Matrix m = inner(a, b);
            edit(a, b, m);
            return m;
        }, rate_bound_);
    }

private:
    std::vector<double> nodes_;
    Accessor at_;
    double rate_bound_;
};

/// Family whose P(u_a, ·) comes from minimal_solution started at u_a, solved
/// lazily on demand and cached. Every family node is a solver grid node.
template <RateMatrixFunction R>
TransitionFamily minimal_family(const R& q, std::vector<double> nodes, SolverOptions opt = {}) {
    struct Cache {
        std::mutex mutex;
        std::map<std::size_t, MinimalSolution> rows;
    };
    auto cache = std::make_shared<Cache>();
    opt.extra_nodes.insert(opt.extra_nodes.end(), nodes.begin(), nodes.end());
    const double end = nodes.back();
    auto shared_nodes = std::make_shared<std::vector<double>>(nodes);
    auto at = [q, opt, cache, shared_nodes, end](std::size_t a, std::size_t b) -> Matrix {
        std::lock_guard lock(cache->mutex);
        auto it = cache->rows.find(a);
        if (it == cache->rows.end())
            it = cache->rows.emplace(a, minimal_solution(q, (*shared_nodes)[a], end, opt)).first;
        return it->second.at((*shared_nodes)[b]);
    };
    return TransitionFamily(std::move(nodes), at, q.diag_bound());
}

/// `count` evenly spaced times on [s, t] (count >= 2).
inline std::vector<double> even_nodes(double s, double t, std::size_t count) {
    std::vector<double> out;
    for (std::size_t k = 0; k < count; ++k)
        out.push_back(k + 1 == count ? t : s + (t - s) * static_cast<double>(k) / static_cast<double>(count - 1));
    return out;
}

namespace detail {

inline std::string pair_location(const TransitionFamily& f, std::size_t a, std::size_t b, Eigen::Index i,
                                 Eigen::Index j) {
    std::ostringstream os;
    os << "P(" << f.nodes()[a] << "," << f.nodes()[b] << ")[" << i << "," << j << "]";
    return os.str();
}

inline void worst(PropertyOutcome& o, double measured, const std::string& where) {
    if (o.location.empty() || measured > o.measured) {
        o.measured = measured;
        o.location = where;
    }
}

inline void finish(PropertyOutcome& o) { o.passed = o.measured <= o.bound + o.tolerance; }

}  // namespace detail

/// Nonnegativity and row sums <= 1, P(s,s) = I, and short-time continuity of
/// P(s, s+h) towards I along consecutive nodes. One outcome per axiom.
inline std::vector<PropertyOutcome> validate_pretransition(const TransitionFamily& f, double tol = 1e-6) {
    PropertyOutcome nonneg{"nonnegativity", true, "", 0.0, 0.0, tol};
    PropertyOutcome substoch{"row_sum_at_most_one", true, "", -1.0, 1.0, tol};
    PropertyOutcome identity{"identity_at_zero_lag", true, "", 0.0, 0.0, tol};
    PropertyOutcome continuity{"continuity_at_zero_lag", true, "", -1.0, 0.0, tol};

    const std::size_t n = f.size();
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a; b < n; ++b) {
            const Matrix p = f(a, b);
            Eigen::Index i = 0, j = 0;
            const double neg = -p.minCoeff(&i, &j);
            detail::worst(nonneg, std::max(0.0, neg), detail::pair_location(f, a, b, i, j));
            const double rs = p.rowwise().sum().maxCoeff(&i);
            detail::worst(substoch, rs, detail::pair_location(f, a, b, i, 0));
            if (a == b) {
                const Matrix diff = p - Matrix::Identity(p.rows(), p.cols());
                detail::worst(identity, diff.cwiseAbs().maxCoeff(&i, &j), detail::pair_location(f, a, b, i, j));
            }
        }
        if (a + 1 < n) {
            const Matrix p = f(a, a + 1);
            const Matrix diff = p - Matrix::Identity(p.rows(), p.cols());
            Eigen::Index i = 0, j = 0;
            const double m = diff.cwiseAbs().maxCoeff(&i, &j);
            const double bound = 1.0 - std::exp(-f.rate_bound() * (f.nodes()[a + 1] - f.nodes()[a]));
            // Compare slack rather than raw value so the bound may vary per step.
            const double excess = m - bound;
            if (continuity.location.empty() || excess > continuity.measured - continuity.bound) {
                continuity.measured = m;
                continuity.bound = bound;
                continuity.location = detail::pair_location(f, a, a + 1, i, j);
            }
        }
    }
    if (continuity.location.empty()) continuity.measured = 0.0;
    for (auto* o : {&nonneg, &substoch, &identity, &continuity}) detail::finish(*o);
    return {nonneg, substoch, identity, continuity};
}

struct CkReport {
    double max = 0.0;
    std::size_t row = 0;
    std::size_t col = 0;
};

/// max_ij |P(s,t) - P(s,u) P(u,t)|.
inline CkReport ck_residual(const TransitionFamily& f, double s, double u, double t) {
    const std::size_t a = f.index_of(s), b = f.index_of(u), c = f.index_of(t);
    if (!(a <= b && b <= c)) throw OffGrid("ck_residual needs s <= u <= t");
    const Matrix diff = f(a, c) - f(a, b) * f(b, c);
    Eigen::Index i = 0, j = 0;
    const double m = diff.cwiseAbs().maxCoeff(&i, &j);
    return {m, static_cast<std::size_t>(i), static_cast<std::size_t>(j)};
}

struct ContinuityCheck {
    bool holds = true;
    double lhs = 0.0;
    double rhs = 0.0;
    double slack = 0.0;
};

/// |P_ij(u,t) - P_ij(v,t)| <= 1 - P_ii(u∧v, u∨v).
inline ContinuityCheck continuity_inequality(const TransitionFamily& f, std::size_t i, std::size_t j, double u,
                                             double v, double t, double tol = 1e-6) {
    const std::size_t iu = f.index_of(u), iv = f.index_of(v), it = f.index_of(t);
    if (iu > it || iv > it) throw OffGrid("continuity_inequality needs u, v <= t");
    const auto ri = static_cast<Eigen::Index>(i), rj = static_cast<Eigen::Index>(j);
    ContinuityCheck c;
    c.lhs = std::abs(f(iu, it)(ri, rj) - f(iv, it)(ri, rj));
    c.rhs = 1.0 - f(std::min(iu, iv), std::max(iu, iv))(ri, ri);
    c.slack = c.rhs - c.lhs;
    c.holds = c.lhs <= c.rhs + tol;
    return c;
}

/// Σ_{j≠i} q_ij(s) <= -q_ii(s) for every row.
template <RateMatrixFunction R>
bool rate_row_bound(const R& q, double s, double tol = 1e-12) {
    const Matrix m = q.eval(s);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double off = m.row(i).sum() - m(i, i);
        if (off > -m(i, i) + tol) return false;
    }
    return true;
}

/// Positive diagonal, the continuity inequality over every node triple, and
/// the one-step modulus of continuity in the end time. One outcome each.
inline std::vector<PropertyOutcome> continuity_suite(const TransitionFamily& f, double tol = 1e-6) {
    PropertyOutcome diag{"diagonal_positive", true, "", 0.0, 0.0, tol};
    PropertyOutcome cont{"continuity_inequality", true, "", -1.0, 0.0, tol};
    PropertyOutcome modulus{"end_time_modulus", true, "", -1.0, 0.0, tol};
    const std::size_t n = f.size();

    double min_diag = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a; b < n; ++b) {
            Eigen::Index i = 0;
            const double d = f(a, b).diagonal().minCoeff(&i);
            if (d < min_diag) {
                min_diag = d;
                diag.location = detail::pair_location(f, a, b, i, i);
            }
        }
    // Report -min so "measured <= bound" reads as min > 0.
    diag.measured = -min_diag;
    diag.passed = min_diag > 0.0;

    for (std::size_t c = 0; c < n; ++c)
        for (std::size_t a = 0; a <= c; ++a)
            for (std::size_t b = a; b <= c; ++b) {
                const Matrix pa = f(a, c), pb = f(b, c), between = f(a, b);
                for (Eigen::Index i = 0; i < pa.rows(); ++i) {
                    const double rhs = 1.0 - between(i, i);
                    for (Eigen::Index j = 0; j < pa.cols(); ++j) {
                        const double excess = std::abs(pa(i, j) - pb(i, j)) - rhs;
                        if (cont.location.empty() || excess > cont.measured) {
                            cont.measured = excess;
                            std::ostringstream os;
                            os << "u=" << f.nodes()[a] << " v=" << f.nodes()[b] << " t=" << f.nodes()[c] << " (" << i
                               << "," << j << ")";
                            cont.location = os.str();
                        }
                    }
                }
            }

    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a; b + 1 < n; ++b) {
            const Matrix now = f(a, b), next = f(a, b + 1), step = f(b, b + 1);
            const double rhs = 1.0 - step.diagonal().minCoeff();
            const double excess = (next - now).cwiseAbs().maxCoeff() - rhs;
            if (modulus.location.empty() || excess > modulus.measured) {
                modulus.measured = excess;
                std::ostringstream os;
                os << "s=" << f.nodes()[a] << " t=" << f.nodes()[b] << "->" << f.nodes()[b + 1];
                modulus.location = os.str();
            }
        }
    if (cont.location.empty()) cont.measured = 0.0;
    if (modulus.location.empty()) modulus.measured = 0.0;
    detail::finish(cont);
    detail::finish(modulus);
    return {diag, cont, modulus};
}

struct DerivativeEstimate {
    std::vector<double> steps;
    std::vector<double> quotients;  // (P_ij(s,s+h) - δ_ij)/h per step
    double estimate = 0.0;          // extrapolated to h = 0
    double rate = 0.0;              // q_ij(s)
    double error = 0.0;             // |estimate - rate|
};

namespace detail {

/// Neville extrapolation of (h_k, y_k) to h = 0.
inline double extrapolate_to_zero(std::vector<double> h, std::vector<double> y) {
    const std::size_t n = h.size();
    for (std::size_t level = 1; level < n; ++level)
        for (std::size_t k = 0; k + level < n; ++k)
            y[k] = (h[k] * y[k + 1] - h[k + level] * y[k]) / (h[k] - h[k + level]);
    return y[0];
}

template <RateMatrixFunction R>
void require_continuity_point(const R& q, double s) {
    for (double d : q.discontinuities())
        if (std::abs(d - s) <= 1e-12 * std::max(1.0, std::abs(s))) {
            std::ostringstream os;
            os << "s=" << s << " is a declared rate discontinuity";
            throw AtDiscontinuity(os.str());
        }
}

}  // namespace detail

/// One-sided difference quotients of P_ij(s, s+h) at the given steps,
/// extrapolated to h -> 0 and compared with q_ij(s).
template <RateMatrixFunction R>
DerivativeEstimate derivative_at_diagonal(const std::function<Matrix(double, double)>& p, const R& q, std::size_t i,
                                          std::size_t j, double s, std::vector<double> steps) {
    detail::require_continuity_point(q, s);
    if (steps.empty()) throw GridMismatch("need at least one step");
    DerivativeEstimate d;
    d.steps = std::move(steps);
    const auto ri = static_cast<Eigen::Index>(i), rj = static_cast<Eigen::Index>(j);
    for (double h : d.steps) {
        const Matrix m = p(s, s + h);
        d.quotients.push_back((m(ri, rj) - (i == j ? 1.0 : 0.0)) / h);
    }
    d.estimate = detail::extrapolate_to_zero(d.steps, d.quotients);
    d.rate = q.eval(s)(ri, rj);
    d.error = std::abs(d.estimate - d.rate);
    return d;
}

/// Same, with P(s, ·) from minimal_solution on a grid through every s + h.
template <RateMatrixFunction R>
DerivativeEstimate derivative_at_diagonal(const R& q, std::size_t i, std::size_t j, double s,
                                          std::vector<double> steps, SolverOptions opt = {}) {
    detail::require_continuity_point(q, s);
    const double longest = *std::max_element(steps.begin(), steps.end());
    const double shortest = *std::min_element(steps.begin(), steps.end());
    opt.step = std::min(opt.step, shortest / 20.0);
    for (double h : steps) opt.extra_nodes.push_back(s + h);
    const MinimalSolution sol = minimal_solution(q, s, s + longest, opt);
    auto p = [&sol](double, double t) { return sol.at(t); };
    return derivative_at_diagonal(std::function<Matrix(double, double)>(p), q, i, j, s, std::move(steps));
}

struct DerivativeSweep {
    double max_error = 0.0;
    double time = 0.0;
    std::size_t row = 0;
    std::size_t col = 0;
    std::size_t probes = 0;
    std::vector<double> skipped;  // starts sitting on a discontinuity or the horizon
};

/// derivative_at_diagonal for every entry at each start. Steps are shrunk so
/// that longest * diag_bound <= 0.05 and no discontinuity or the horizon lies
/// within reach of the longest one.
template <RateMatrixFunction R>
DerivativeSweep derivative_sweep(const R& q, const std::vector<double>& starts, const std::vector<double>& steps,
                                 const SolverOptions& opt = {}) {
    if (steps.empty()) throw GridMismatch("need at least one step");
    const double longest = *std::max_element(steps.begin(), steps.end());
    const auto disc = q.discontinuities();
    DerivativeSweep out;
    for (double s : starts) {
        double reach = q.horizon() - s;
        if (q.diag_bound() > 0.0) reach = std::min(reach, 0.05 / q.diag_bound());
        bool on_jump = false;
        for (double d : disc) {
            if (std::abs(d - s) <= 1e-12 * std::max(1.0, std::abs(s))) on_jump = true;
            else if (d > s) reach = std::min(reach, 0.5 * (d - s));
        }
        if (on_jump || reach <= 0.0) {
            out.skipped.push_back(s);
            continue;
        }
        const double scale = std::min(1.0, reach / longest);
        std::vector<double> h;
        for (double x : steps) h.push_back(x * scale);
        const double shortest = *std::min_element(h.begin(), h.end());
        SolverOptions o = opt;
        o.step = std::min(opt.step, shortest / 20.0);
        o.extra_nodes = h;
        for (double& x : o.extra_nodes) x += s;
        const MinimalSolution sol = minimal_solution(q, s, s + longest * scale, o);
        const std::function<Matrix(double, double)> p = [&sol](double, double t) { return sol.at(t); };
        ++out.probes;
        for (std::size_t i = 0; i < q.size(); ++i)
            for (std::size_t j = 0; j < q.size(); ++j) {
                const DerivativeEstimate d = derivative_at_diagonal(p, q, i, j, s, h);
                if (d.error >= out.max_error) {
                    out.max_error = d.error;
                    out.time = s;
                    out.row = i;
                    out.col = j;
                }
            }
    }
    return out;
}

}  // namespace ctmc
