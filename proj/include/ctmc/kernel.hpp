#pragma once

// Minimal transition matrix as a series of recursive convolution integrals.
//
// Two recursions build the same terms:
//   first-jump (fixed end t):   P(n+1)(u,t) = ∫_u^t diag(e^{∫_u^v q_ii}) J(v) P(n)(v,t) dv
//   last-jump  (fixed start s): P(n+1)(s,u) = ∫_s^u P(n)(s,v) J(v) diag(e^{∫_v^u q_jj}) dv
// where J is the off-diagonal part of Q. The minimal solution is the sum over
// n. Integrals are discretized on a TimeGrid whose nodes include every rate
// discontinuity, so each cell sees one smooth piece of Q.

#include "ctmc/error.hpp"
#include "ctmc/rates.hpp"

#include <boost/math/distributions/poisson.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <vector>

namespace ctmc {

struct TimeGrid {
    std::vector<double> nodes;
    double step = 0.0;

    std::size_t size() const noexcept { return nodes.size(); }
    std::size_t cells() const noexcept { return nodes.empty() ? 0 : nodes.size() - 1; }
    double start() const { return nodes.front(); }
    double end() const { return nodes.back(); }
    double cell_length(std::size_t c) const { return nodes[c + 1] - nodes[c]; }

    std::optional<std::size_t> find(double t) const {
        const double tol = 1e-9 * std::max(step, std::abs(t) * 1e-6);
        auto it = std::lower_bound(nodes.begin(), nodes.end(), t - tol);
        if (it != nodes.end() && std::abs(*it - t) <= tol) return static_cast<std::size_t>(it - nodes.begin());
        return std::nullopt;
    }

    std::size_t index_of(double t) const {
        if (auto k = find(t)) return *k;
        std::ostringstream os;
        os << "time " << t << " is not a grid node";
        throw OffGrid(os.str());
    }

    /// Nodes first..last inclusive.
    TimeGrid slice(std::size_t first, std::size_t last) const {
        return {{nodes.begin() + static_cast<std::ptrdiff_t>(first), nodes.begin() + static_cast<std::ptrdiff_t>(last) + 1},
                step};
    }
};

/// Uniform nodes s, s+h, ... plus t_end and every forced time in (s, t_end).
/// Uniform nodes closer than 1e-6 h to a forced node are dropped.
inline TimeGrid make_grid(double s, double t_end, double h, std::span<const double> forced = {}) {
    if (!(h > 0.0)) throw GridMismatch("grid step must be positive");
    if (!(t_end >= s)) throw GridMismatch("grid end precedes start");
    TimeGrid grid{{}, h};
    const double snap = 1e-6 * h;
    std::vector<double> fixed{s, t_end};
    for (double f : forced)
        if (f > s + snap && f < t_end - snap) fixed.push_back(f);
    std::sort(fixed.begin(), fixed.end());

    std::vector<double> nodes = fixed;
    for (std::size_t k = 1;; ++k) {
        const double u = s + static_cast<double>(k) * h;
        if (u >= t_end - snap) break;
        auto it = std::lower_bound(fixed.begin(), fixed.end(), u - snap);
        if (it != fixed.end() && std::abs(*it - u) <= snap) continue;
        nodes.push_back(u);
    }
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
    grid.nodes = std::move(nodes);
    return grid;
}

enum class QuadratureRule {
    /// Survival factor integrated exactly on each cell, the rest linearly
    /// interpolated. Keeps conservative first-jump rows at exactly 1.
    exponential_trapezoid,
    /// Plain composite trapezoid of the whole integrand.
    trapezoid,
};

enum class Layout {
    fixed_end,    ///< values[a] = P(u_a, t_end)
    fixed_start,  ///< values[b] = P(s, u_b)
};

namespace detail {

/// ∫_0^1 e^{-x r}(1-r) dr and ∫_0^1 e^{-x r} r dr, x >= 0.
inline std::pair<double, double> fitted_weights(double x) {
    if (x < 0.1) {
        // Alternating Taylor series; 14 terms are exact to round-off for x < 0.1.
        double near = 0.0, far = 0.0, pw = 1.0, fact = 2.0;  // fact = (m+2)!
        for (int m = 0; m < 14; ++m) {
            near += pw / fact;
            far += pw * (m + 1) / fact;
            pw *= -x;
            fact *= (m + 3);
        }
        return {near, far};
    }
    const double e = std::exp(-x);
    return {(x - 1.0 + e) / (x * x), (1.0 - (1.0 + x) * e) / (x * x)};
}

inline Matrix off_diagonal(const Matrix& q) {
    Matrix j = q;
    j.diagonal().setZero();
    return j;
}

}  // namespace detail

/// Everything the recursions need on one grid: off-diagonal jump rates on
/// each side of every node, per-cell survival factors, and per-cell
/// quadrature weights.
struct KernelWeights {
    TimeGrid grid;
    QuadratureRule rule = QuadratureRule::exponential_trapezoid;
    std::vector<Matrix> jump_right;      // J(u_b), right-continuous
    std::vector<Matrix> jump_left;       // J(u_b-)
    std::vector<Vector> diag_right;      // q_ii(u_b)
    std::vector<Vector> diag_left;       // q_ii(u_b-)
    std::vector<bool> jumps_at;          // Q differs across u_b
    std::vector<Vector> decay;           // e^{∫_cell q_ii}
    std::vector<Vector> near_weight;     // weight at the cell end where the survival factor is 1
    std::vector<Vector> far_weight;      // weight at the other end, survival factor included
    std::vector<Vector> log_survival;    // ∫_{u_0}^{u_b} q_ii

    std::size_t states() const { return static_cast<std::size_t>(jump_right.front().rows()); }

    /// K(s, u_b): e^{∫_s^{u_b} q_ii} [q_ik + d_ik](u_b), right-continuous.
    Matrix kernel_at(std::size_t b) const {
        Matrix k = jump_right[b];
        k.array().colwise() *= log_survival[b].array().exp();
        return k;
    }
};

template <RateMatrixFunction R>
KernelWeights make_kernel_weights(const R& q, TimeGrid grid, QuadratureRule rule = QuadratureRule::exponential_trapezoid) {
    const std::size_t m = grid.size();
    const std::size_t n = q.size();
    KernelWeights w;
    w.rule = rule;
    w.jump_right.resize(m);
    w.jump_left.resize(m);
    w.diag_right.resize(m);
    w.diag_left.resize(m);
    w.jumps_at.assign(m, false);
    for (std::size_t b = 0; b < m; ++b) {
        const double u = grid.nodes[b];
        Matrix right = q.eval(u);
        Matrix left = q.eval_left(u);
        w.jumps_at[b] = (right != left);
        w.diag_right[b] = right.diagonal();
        w.diag_left[b] = left.diagonal();
        w.jump_right[b] = detail::off_diagonal(right);
        w.jump_left[b] = detail::off_diagonal(left);
    }
    const std::size_t cells = grid.cells();
    w.decay.resize(cells);
    w.near_weight.resize(cells);
    w.far_weight.resize(cells);
    w.log_survival.assign(m, Vector::Zero(static_cast<Eigen::Index>(n)));
    for (std::size_t c = 0; c < cells; ++c) {
        const double h = grid.cell_length(c);
        Vector integral(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i)
            integral(static_cast<Eigen::Index>(i)) = q.integrate_diagonal(i, grid.nodes[c], grid.nodes[c + 1]);
        w.decay[c] = integral.array().exp();
        w.log_survival[c + 1] = w.log_survival[c] + integral;
        Vector near(integral.size()), far(integral.size());
        for (Eigen::Index i = 0; i < integral.size(); ++i) {
            if (rule == QuadratureRule::trapezoid) {
                near(i) = 0.5 * h;
                far(i) = 0.5 * h * w.decay[c](i);
            } else {
                auto [a, b] = detail::fitted_weights(std::max(0.0, -integral(i)));
                near(i) = h * a;
                far(i) = h * b;
            }
        }
        w.near_weight[c] = std::move(near);
        w.far_weight[c] = std::move(far);
    }
    grid.step = grid.step > 0.0 ? grid.step : (cells ? grid.cell_length(0) : 0.0);
    w.grid = std::move(grid);
    return w;
}

struct SeriesTerm {
    std::size_t order = 0;
    Layout layout = Layout::fixed_start;
    std::vector<Matrix> values;
    double sup_norm = 0.0;
};

namespace detail {

inline double sup_norm(const std::vector<Matrix>& values) {
    double m = 0.0;
    for (const auto& v : values) m = std::max(m, v.cwiseAbs().maxCoeff());
    return m;
}

inline void check_term(const KernelWeights& w, const SeriesTerm& prev, Layout expected) {
    if (prev.layout != expected) throw GridMismatch("series term has the wrong layout for this recursion");
    if (prev.values.size() != w.grid.size()) {
        std::ostringstream os;
        os << "series term has " << prev.values.size() << " nodes, grid has " << w.grid.size();
        throw GridMismatch(os.str());
    }
}

}  // namespace detail

/// Order-0 term: diagonal survival probabilities.
inline SeriesTerm initial_term(const KernelWeights& w, Layout layout) {
    SeriesTerm t{0, layout, {}, 0.0};
    const std::size_t m = w.grid.size();
    t.values.reserve(m);
    const Vector& total = w.log_survival.back();
    for (std::size_t b = 0; b < m; ++b) {
        Vector logs = layout == Layout::fixed_start ? w.log_survival[b] : Vector(total - w.log_survival[b]);
        t.values.push_back(logs.array().exp().matrix().asDiagonal());
    }
    t.sup_norm = detail::sup_norm(t.values);
    return t;
}

/// Next term of the first-jump recursion, P(n+1)(u_a, t_end) for every node.
inline SeriesTerm series_term_forward(const KernelWeights& w, const SeriesTerm& prev) {
    detail::check_term(w, prev, Layout::fixed_end);
    const std::size_t m = w.grid.size();
    const auto n = static_cast<Eigen::Index>(w.states());
    SeriesTerm next{prev.order + 1, Layout::fixed_end, std::vector<Matrix>(m), 0.0};
    next.values[m - 1] = Matrix::Zero(n, n);
    Matrix right_prod, left_prod = Matrix::Zero(n, n);
    if (m > 1) left_prod.noalias() = w.jump_left[m - 1] * prev.values[m - 1];
    for (std::size_t a = m - 1; a-- > 0;) {
        right_prod.noalias() = w.jump_right[a] * prev.values[a];
        Matrix acc = next.values[a + 1];
        acc.array().colwise() *= w.decay[a].array();
        Matrix far = left_prod;
        far.array().colwise() *= w.far_weight[a].array();
        Matrix near = right_prod;
        near.array().colwise() *= w.near_weight[a].array();
        next.values[a] = acc + near + far;
        // J(u_a-) P(n)(u_a) for the next cell to the left.
        if (a > 0) {
            if (w.jumps_at[a]) left_prod.noalias() = w.jump_left[a] * prev.values[a];
            else left_prod = right_prod;
        }
    }
    next.sup_norm = detail::sup_norm(next.values);
    return next;
}

/// Next term of the last-jump recursion, P(n+1)(s, u_b) for every node.
inline SeriesTerm series_term_backward(const KernelWeights& w, const SeriesTerm& prev) {
    detail::check_term(w, prev, Layout::fixed_start);
    const std::size_t m = w.grid.size();
    const auto n = static_cast<Eigen::Index>(w.states());
    SeriesTerm next{prev.order + 1, Layout::fixed_start, std::vector<Matrix>(m), 0.0};
    next.values[0] = Matrix::Zero(n, n);
    Matrix right_prod = Matrix::Zero(n, n), left_prod;
    if (m > 1) right_prod.noalias() = prev.values[0] * w.jump_right[0];
    for (std::size_t b = 0; b + 1 < m; ++b) {
        left_prod.noalias() = prev.values[b + 1] * w.jump_left[b + 1];
        Matrix acc = next.values[b];
        acc.array().rowwise() *= w.decay[b].transpose().array();
        Matrix far = right_prod;
        far.array().rowwise() *= w.far_weight[b].transpose().array();
        Matrix near = left_prod;
        near.array().rowwise() *= w.near_weight[b].transpose().array();
        next.values[b + 1] = acc + far + near;
        if (b + 2 < m) {
            if (w.jumps_at[b + 1]) right_prod.noalias() = prev.values[b + 1] * w.jump_right[b + 1];
            else right_prod = left_prod;
        }
    }
    next.sup_norm = detail::sup_norm(next.values);
    return next;
}

/// e^{∫_s^t q_ii(u) du}.
template <RateMatrixFunction R>
double survival(const R& q, std::size_t i, double s, double t) {
    if (t < s) throw OutOfHorizon("survival needs s <= t");
    return std::exp(q.integrate_diagonal(i, s, t));
}

struct SolverOptions {
    double step = 1e-3;
    double series_tol = 1e-10;
    std::size_t max_order = 200;
    /// Subintervals satisfy rate_bound * length <= chain_limit.
    double chain_limit = 4.0;
    QuadratureRule rule = QuadratureRule::exponential_trapezoid;
    /// Put a node on every rate discontinuity. Off only for regression tests.
    bool force_breakpoints = true;
    std::vector<double> extra_nodes;
    bool validate = true;
};

/// Per-subinterval series diagnostics.
struct SeriesReport {
    double start = 0.0;
    double end = 0.0;
    std::size_t order = 0;
    std::vector<double> term_norms;
    double last_term_norm = 0.0;
    double rate_bound = 0.0;
    /// P(Poisson(rate_bound * length) > order): bounds every row of the
    /// neglected tail of the exact series.
    double tail_bound = 0.0;
    double max_partial_row_sum = 0.0;
};

struct MinimalSolution {
    TimeGrid grid;
    std::vector<Matrix> field;           // P(s, u_b)
    std::vector<Matrix> backward_field;  // P(u_a, t_end)
    std::vector<SeriesReport> segments;
    std::size_t series_order = 0;
    double last_term_norm = 0.0;
    double tail_bound = 0.0;
    double quad_step = 0.0;
    QuadratureRule rule = QuadratureRule::exponential_trapezoid;

    double s() const { return grid.start(); }
    double t_end() const { return grid.end(); }
    std::size_t states() const { return static_cast<std::size_t>(field.front().rows()); }
    const Matrix& at(double u) const { return field[grid.index_of(u)]; }
    const Matrix& final_value() const { return field.back(); }
};

namespace detail {

struct SegmentResult {
    std::vector<Matrix> fixed_start_sum;      // P(u_first, u_b)
    std::vector<Matrix> fixed_end_sum;        // P(u_a, u_last)
    SeriesReport report;
};

inline double max_row_sum(const std::vector<Matrix>& values) {
    double m = 0.0;
    for (const auto& v : values) m = std::max(m, v.rowwise().sum().maxCoeff());
    return m;
}

inline double poisson_tail(double mean, std::size_t order) {
    if (mean <= 0.0) return 0.0;
    boost::math::poisson_distribution<double> dist(mean);
    return boost::math::cdf(boost::math::complement(dist, static_cast<double>(order)));
}

inline SegmentResult run_series(const KernelWeights& w, double rate_bound, const SolverOptions& opt) {
    SegmentResult out;
    SeriesTerm fwd = initial_term(w, Layout::fixed_end);
    SeriesTerm bwd = initial_term(w, Layout::fixed_start);
    out.fixed_end_sum = fwd.values;
    out.fixed_start_sum = bwd.values;
    auto& rep = out.report;
    rep.start = w.grid.start();
    rep.end = w.grid.end();
    rep.rate_bound = rate_bound;
    rep.term_norms.push_back(std::max(fwd.sup_norm, bwd.sup_norm));
    rep.max_partial_row_sum = max_row_sum(out.fixed_start_sum);

    const bool trivial = w.grid.size() < 2;
    double prev_norm = rep.term_norms.back();
    std::size_t order = 0;
    while (!trivial) {
        if (order >= opt.max_order) {
            std::ostringstream os;
            os << "series did not converge on [" << rep.start << ", " << rep.end << "] within " << opt.max_order
               << " terms (last term norm " << prev_norm << ")";
            throw NoConvergence(os.str());
        }
        fwd = series_term_forward(w, fwd);
        bwd = series_term_backward(w, bwd);
        ++order;
        for (std::size_t k = 0; k < w.grid.size(); ++k) {
            out.fixed_end_sum[k] += fwd.values[k];
            out.fixed_start_sum[k] += bwd.values[k];
        }
        const double norm = std::max(fwd.sup_norm, bwd.sup_norm);
        rep.term_norms.push_back(norm);
        rep.max_partial_row_sum = std::max(rep.max_partial_row_sum, max_row_sum(out.fixed_start_sum));
        const bool converged = norm <= opt.series_tol && (norm < prev_norm || norm == 0.0);
        prev_norm = norm;
        if (converged) break;
    }
    rep.order = order;
    rep.last_term_norm = rep.term_norms.back();
    rep.tail_bound = poisson_tail(rate_bound * (rep.end - rep.start), order);
    return out;
}

/// Node indices where the series is restarted.
inline std::vector<std::size_t> chain_cuts(const TimeGrid& grid, double rate_bound, double limit) {
    std::vector<std::size_t> cuts{0};
    const std::size_t last = grid.size() - 1;
    while (cuts.back() < last) {
        const std::size_t a = cuts.back();
        std::size_t b = a + 1;
        if (rate_bound <= 0.0) {
            b = last;
        } else {
            while (b < last && (grid.nodes[b + 1] - grid.nodes[a]) * rate_bound <= limit) ++b;
        }
        cuts.push_back(b);
    }
    return cuts;
}

}  // namespace detail

/// Minimal solution on [s, t_end]. Long horizons are split into subintervals
/// whose series are summed separately and composed by Chapman-Kolmogorov.
template <RateMatrixFunction R>
MinimalSolution minimal_solution(const R& q, double s, double t_end, const SolverOptions& opt = {}) {
    if (!(opt.series_tol > 0.0)) throw NoConvergence("series tolerance must be positive");
    if (opt.validate) require_valid(q);
    detail::check_in_horizon(s, q.horizon());
    detail::check_in_horizon(t_end, q.horizon());
    if (t_end < s) throw OutOfHorizon("minimal_solution needs s <= t_end");

    std::vector<double> forced = opt.extra_nodes;
    if (opt.force_breakpoints) {
        const auto d = q.discontinuities();
        forced.insert(forced.end(), d.begin(), d.end());
    }
    TimeGrid grid = make_grid(s, t_end, opt.step, forced);
    const double rate_bound = q.diag_bound();
    const auto cuts = detail::chain_cuts(grid, rate_bound, opt.chain_limit);
    const auto n = static_cast<Eigen::Index>(q.size());

    MinimalSolution sol;
    sol.quad_step = opt.step;
    sol.rule = opt.rule;
    sol.field.assign(grid.size(), Matrix::Identity(n, n));
    sol.backward_field.assign(grid.size(), Matrix::Identity(n, n));

    std::vector<detail::SegmentResult> segments;
    segments.reserve(cuts.size());
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
        const KernelWeights w = make_kernel_weights(q, grid.slice(cuts[k], cuts[k + 1]), opt.rule);
        segments.push_back(detail::run_series(w, rate_bound, opt));
    }

    // P(s, u) = P(s, c_k) P(c_k, u) on segment k.
    Matrix head = Matrix::Identity(n, n);
    for (std::size_t k = 0; k < segments.size(); ++k) {
        const auto& seg = segments[k].fixed_start_sum;
        for (std::size_t b = 0; b < seg.size(); ++b) sol.field[cuts[k] + b].noalias() = head * seg[b];
        head = sol.field[cuts[k + 1]];
    }
    // P(u, t_end) = P(u, c_{k+1}) P(c_{k+1}, t_end), segments taken from the right.
    Matrix tail = Matrix::Identity(n, n);
    for (std::size_t k = segments.size(); k-- > 0;) {
        const auto& seg = segments[k].fixed_end_sum;
        for (std::size_t a = 0; a < seg.size(); ++a) sol.backward_field[cuts[k] + a].noalias() = seg[a] * tail;
        tail = sol.backward_field[cuts[k]];
    }

    for (auto& seg : segments) {
        sol.series_order = std::max(sol.series_order, seg.report.order);
        sol.last_term_norm = std::max(sol.last_term_norm, seg.report.last_term_norm);
        sol.tail_bound += seg.report.tail_bound;
        sol.segments.push_back(std::move(seg.report));
    }
    sol.grid = std::move(grid);
    return sol;
}

struct ResidualReport {
    double max = 0.0;
    std::size_t node = 0;
    std::size_t row = 0;
    std::size_t col = 0;
    double time = 0.0;
};

namespace detail {

inline void track(ResidualReport& r, const Matrix& diff, std::size_t node, double time) {
    Eigen::Index i = 0, j = 0;
    const double m = diff.cwiseAbs().maxCoeff(&i, &j);
    if (m > r.max) r = {m, node, static_cast<std::size_t>(i), static_cast<std::size_t>(j), time};
}

}  // namespace detail

/// max |P(s,u) - I - ∫_s^u P(s,v) Q(v) dv| over nodes, trapezoid on the
/// solution grid with one-sided rate values in each cell.
template <RateMatrixFunction R>
ResidualReport forward_residual(const R& q, const MinimalSolution& sol) {
    const auto& g = sol.grid;
    if (sol.field.size() != g.size()) throw GridMismatch("solution field does not match its grid");
    const auto n = static_cast<Eigen::Index>(sol.states());
    ResidualReport rep;
    Matrix integral = Matrix::Zero(n, n);
    detail::track(rep, sol.field[0] - Matrix::Identity(n, n), 0, g.nodes[0]);
    for (std::size_t c = 0; c < g.cells(); ++c) {
        const double h = g.cell_length(c);
        integral += 0.5 * h * (sol.field[c] * q.eval(g.nodes[c]) + sol.field[c + 1] * q.eval_left(g.nodes[c + 1]));
        detail::track(rep, sol.field[c + 1] - Matrix::Identity(n, n) - integral, c + 1, g.nodes[c + 1]);
    }
    return rep;
}

/// max |P(u,t) - I - ∫_u^t Q(v) P(v,t) dv| over start nodes u, on the
/// fixed-end layout.
template <RateMatrixFunction R>
ResidualReport backward_residual(const R& q, const MinimalSolution& sol) {
    const auto& g = sol.grid;
    if (sol.backward_field.size() != g.size()) throw GridMismatch("solution field does not match its grid");
    const auto n = static_cast<Eigen::Index>(sol.states());
    ResidualReport rep;
    Matrix integral = Matrix::Zero(n, n);
    const std::size_t last = g.size() - 1;
    detail::track(rep, sol.backward_field[last] - Matrix::Identity(n, n), last, g.nodes[last]);
    for (std::size_t c = g.cells(); c-- > 0;) {
        const double h = g.cell_length(c);
        integral += 0.5 * h *
                    (q.eval(g.nodes[c]) * sol.backward_field[c] + q.eval_left(g.nodes[c + 1]) * sol.backward_field[c + 1]);
        detail::track(rep, sol.backward_field[c] - Matrix::Identity(n, n) - integral, c, g.nodes[c]);
    }
    return rep;
}

struct DefectReport {
    std::vector<Vector> raw;      // 1 - row sum, unclamped
    std::vector<Vector> defect;   // clamped at 0
    double max = 0.0;
    std::size_t node = 0;
    std::size_t row = 0;
    bool regular = true;
    double tolerance = 0.0;
};

/// 1 - Σ_j P_ij(s,u) at every node; the chain is regular on the window iff
/// this vanishes.
inline DefectReport regularity_defect(const MinimalSolution& sol, double tol = 1e-6) {
    DefectReport rep;
    rep.tolerance = tol;
    for (std::size_t b = 0; b < sol.field.size(); ++b) {
        Vector raw = Vector::Ones(sol.field[b].rows()) - sol.field[b].rowwise().sum();
        Vector clamped = raw.cwiseMax(0.0);
        Eigen::Index i = 0;
        const double m = clamped.maxCoeff(&i);
        if (m > rep.max) {
            rep.max = m;
            rep.node = b;
            rep.row = static_cast<std::size_t>(i);
        }
        rep.raw.push_back(std::move(raw));
        rep.defect.push_back(std::move(clamped));
    }
    rep.regular = rep.max <= tol;
    return rep;
}

struct PqReport {
    double max = 0.0;
    std::vector<double> per_order;  // max discrepancy for each n
    std::vector<double> probe_times;
};

/// Runs both recursions for orders 0..max_order on one grid (no chaining) and
/// compares P(n)(s, u) from each at the probe end nodes. Probes default to the
/// quarter points and the end of the grid.
template <RateMatrixFunction R>
PqReport pq_equality_check(const R& q, double s, double t_end, double step, std::size_t max_order,
                           QuadratureRule rule = QuadratureRule::exponential_trapezoid,
                           std::vector<double> probes = {}) {
    const auto d = q.discontinuities();
    const TimeGrid grid = make_grid(s, t_end, step, d);
    const std::size_t last = grid.size() - 1;
    std::vector<std::size_t> probe_nodes;
    if (probes.empty()) {
        for (std::size_t k = 1; k <= 4; ++k) probe_nodes.push_back(std::max<std::size_t>(1, last * k / 4));
    } else {
        for (double p : probes) probe_nodes.push_back(grid.index_of(p));
    }
    std::sort(probe_nodes.begin(), probe_nodes.end());
    probe_nodes.erase(std::unique(probe_nodes.begin(), probe_nodes.end()), probe_nodes.end());

    PqReport rep;
    rep.per_order.assign(max_order + 1, 0.0);
    const KernelWeights full = make_kernel_weights(q, grid, rule);
    std::vector<SeriesTerm> backward{initial_term(full, Layout::fixed_start)};
    for (std::size_t k = 0; k < max_order; ++k) backward.push_back(series_term_backward(full, backward.back()));

    for (std::size_t b : probe_nodes) {
        if (b == 0) continue;
        rep.probe_times.push_back(grid.nodes[b]);
        const KernelWeights sub = make_kernel_weights(q, grid.slice(0, b), rule);
        SeriesTerm fwd = initial_term(sub, Layout::fixed_end);
        for (std::size_t k = 0; k <= max_order; ++k) {
            if (k > 0) fwd = series_term_forward(sub, fwd);
            const double diff = (fwd.values[0] - backward[k].values[b]).cwiseAbs().maxCoeff();
            rep.per_order[k] = std::max(rep.per_order[k], diff);
            rep.max = std::max(rep.max, diff);
        }
    }
    return rep;
}

}  // namespace ctmc
