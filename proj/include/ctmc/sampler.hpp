#pragma once

// Monte Carlo paths of the minimal jump process. Piecewise-constant rates
// are simulated exactly (exponential holding times, redrawn at breakpoints);
// callable rates by thinning against the declared diagonal bound. A path is
// killed when it jumps to the implicit cemetery, i.e. uses the missing row
// mass -Σ_j q_ij.
//
// Path p of a run with seed s draws from its own engine seeded with (s, p),
// so results do not depend on how paths are split across threads.

#include "ctmc/error.hpp"
#include "ctmc/rates.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace ctmc {

enum class Terminal { alive, killed };

struct PathSample {
    std::vector<double> jump_times;    // strictly increasing, in (s, t_end]
    std::vector<std::size_t> states;   // states[0] is the initial state; one more than jump_times
    Terminal status = Terminal::alive;
    double kill_time = 0.0;            // set when killed

    std::size_t final_state() const { return states.back(); }
};

class PathRng {
public:
    PathRng(std::uint64_t seed, std::uint64_t path) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(path >> 32)};
        engine_.seed(seq);
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double exponential(double rate) { return -std::log1p(-uniform()) / rate; }

private:
    std::mt19937_64 engine_;
};

namespace detail {

/// Target of a jump from `state` given v uniform on [0, total rate):
/// an off-diagonal state, or nullopt for the cemetery.
inline std::optional<std::size_t> pick_target(const Matrix& q, std::size_t state, double v) {
    const auto i = static_cast<Eigen::Index>(state);
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
        if (j == i) continue;
        if (v < q(i, j)) return static_cast<std::size_t>(j);
        v -= q(i, j);
    }
    return std::nullopt;
}

inline void record_jump(PathSample& path, const Matrix& q, double t, double v) {
    if (auto j = pick_target(q, path.states.back(), v)) {
        path.jump_times.push_back(t);
        path.states.push_back(*j);
    } else {
        path.status = Terminal::killed;
        path.kill_time = t;
    }
}

inline void check_path_args(double horizon, std::size_t states, std::size_t i0, double s, double t_end) {
    if (i0 >= states) throw DimensionMismatch("initial state out of range");
    check_in_horizon(s, horizon);
    check_in_horizon(t_end, horizon);
    if (t_end < s) throw OutOfHorizon("sample_path needs s <= t_end");
}

}  // namespace detail

inline PathSample sample_path(const PiecewiseConstantRates& q, std::size_t i0, double s, double t_end, PathRng& rng) {
    detail::check_path_args(q.horizon(), q.size(), i0, s, t_end);
    PathSample path;
    path.states.push_back(i0);
    double t = s;
    const auto& bp = q.breakpoints();
    while (t < t_end) {
        const std::size_t k = q.block_index(t);
        const double block_end = std::min(t_end, bp[k + 1]);
        const Matrix& block = q.blocks()[k];
        const auto i = static_cast<Eigen::Index>(path.states.back());
        const double rate = -block(i, i);
        if (rate <= 0.0) {
            t = block_end;
            continue;
        }
        const double hold = rng.exponential(rate);
        if (t + hold >= block_end) {
            t = block_end;  // memoryless restart in the next block
            continue;
        }
        t += hold;
        detail::record_jump(path, block, t, rng.uniform() * rate);
        if (path.status == Terminal::killed) break;
    }
    return path;
}

/// Thinning: candidate times at rate diag_bound, accepted with probability
/// -q_ii(t) / diag_bound.
inline PathSample sample_path(const CallableRates& q, std::size_t i0, double s, double t_end, PathRng& rng) {
    detail::check_path_args(q.horizon(), q.size(), i0, s, t_end);
    PathSample path;
    path.states.push_back(i0);
    const double bound = q.diag_bound();
    if (bound <= 0.0) return path;
    double t = s;
    for (;;) {
        t += rng.exponential(bound);
        if (t >= t_end) break;
        const Matrix m = q.eval(t);
        const auto i = static_cast<Eigen::Index>(path.states.back());
        const double v = rng.uniform() * bound;
        if (v >= -m(i, i)) continue;  // rejected candidate
        detail::record_jump(path, m, t, v);
        if (path.status == Terminal::killed) break;
    }
    return path;
}

template <RateMatrixFunction R>
PathSample sample_path(const R& q, std::size_t i0, double s, double t_end, std::uint64_t seed,
                       std::uint64_t path_index = 0) {
    PathRng rng(seed, path_index);
    return sample_path(q, i0, s, t_end, rng);
}

struct EmpiricalEstimate {
    std::size_t paths = 0;
    std::vector<std::size_t> counts;  // terminal state counts among survivors
    std::size_t killed = 0;
    std::vector<double> probability;
    std::vector<double> std_error;    // sqrt(p(1-p)/n) from the point estimate
    double killed_fraction = 0.0;
    double killed_std_error = 0.0;
};

/// Worker count: CTMC_THREADS if set and positive, else hardware concurrency.
inline std::size_t worker_count() {
    if (const char* env = std::getenv("CTMC_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Terminal state of every path, -1 for killed.
template <RateMatrixFunction R>
std::vector<long> simulate_terminals(const R& q, std::size_t i0, double s, double t_end, std::size_t n_paths,
                                     std::uint64_t seed, std::size_t workers = 0) {
    if (n_paths == 0) throw DimensionMismatch("need at least one path");
    detail::check_path_args(q.horizon(), q.size(), i0, s, t_end);
    std::vector<long> terminal(n_paths, -1);
    workers = std::min(workers ? workers : worker_count(), n_paths);
    auto run = [&](std::size_t first, std::size_t last) {
        for (std::size_t p = first; p < last; ++p) {
            PathRng rng(seed, p);
            const PathSample path = sample_path(q, i0, s, t_end, rng);
            terminal[p] = path.status == Terminal::killed ? -1 : static_cast<long>(path.final_state());
        }
    };
    if (workers <= 1) {
        run(0, n_paths);
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (n_paths + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t first = w * chunk, last = std::min(n_paths, first + chunk);
            if (first < last) pool.emplace_back(run, first, last);
        }
        for (auto& th : pool) th.join();
    }
    return terminal;
}

inline EmpiricalEstimate summarize_terminals(const std::vector<long>& terminal, std::size_t states) {
    EmpiricalEstimate est;
    est.paths = terminal.size();
    est.counts.assign(states, 0);
    for (long t : terminal) {
        if (t < 0) ++est.killed;
        else ++est.counts[static_cast<std::size_t>(t)];
    }
    const double n = static_cast<double>(est.paths);
    for (std::size_t c : est.counts) {
        const double p = static_cast<double>(c) / n;
        est.probability.push_back(p);
        est.std_error.push_back(std::sqrt(p * (1.0 - p) / n));
    }
    est.killed_fraction = static_cast<double>(est.killed) / n;
    est.killed_std_error = std::sqrt(est.killed_fraction * (1.0 - est.killed_fraction) / n);
    return est;
}

template <RateMatrixFunction R>
EmpiricalEstimate empirical_transition(const R& q, std::size_t i0, double s, double t_end, std::size_t n_paths,
                                       std::uint64_t seed, std::size_t workers = 0) {
    return summarize_terminals(simulate_terminals(q, i0, s, t_end, n_paths, seed, workers), q.size());
}

struct BandCheck {
    std::string outcome;  // state label or "killed"
    double empirical = 0.0;
    double expected = 0.0;
    double std_error = 0.0;  // sqrt(p(1-p)/n) at the expected value
    bool within = true;
};

/// Compares each frequency with the model row `expected` (killed mass is
/// 1 - row sum). The band is sigmas * standard error at the model value plus
/// `model_tol` for the model's own numerical error.
inline std::vector<BandCheck> compare_to_model(const EmpiricalEstimate& est, const Vector& expected,
                                               const StateSpace& space, double sigmas = 3.0, double model_tol = 1e-6) {
    std::vector<BandCheck> out;
    const double n = static_cast<double>(est.paths);
    auto check = [&](std::string name, double emp, double p) {
        p = std::clamp(p, 0.0, 1.0);
        const double se = std::sqrt(p * (1.0 - p) / n);
        out.push_back({std::move(name), emp, p, se, std::abs(emp - p) <= sigmas * se + model_tol});
    };
    for (std::size_t j = 0; j < est.probability.size(); ++j)
        check(space.label(j), est.probability[j], expected(static_cast<Eigen::Index>(j)));
    check("killed", est.killed_fraction, 1.0 - expected.sum());
    return out;
}

}  // namespace ctmc
