#pragma once

// Piecewise-constant control policies: each state picks an action per unit
// epoch [k, k+1), each action fixes that state's rate row, and the result is
// a PiecewiseConstantRates with breakpoints at the epoch boundaries.

#include "ctmc/error.hpp"
#include "ctmc/kernel.hpp"
#include "ctmc/rates.hpp"

#include <cmath>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace ctmc {

struct Action {
    std::string name;
    Vector row;  // full rate row, diagonal included
};

class ActionModel {
public:
    /// actions[i] is the action set A(i); every row must be a valid Q-row.
    ActionModel(StateSpace space, std::vector<std::vector<Action>> actions)
        : space_(std::move(space)), actions_(std::move(actions)) {
        if (actions_.size() != space_.size()) throw DimensionMismatch("need one action set per state");
        const auto n = static_cast<Eigen::Index>(space_.size());
        for (std::size_t i = 0; i < actions_.size(); ++i) {
            if (actions_[i].empty()) throw DimensionMismatch("state " + space_.label(i) + " has no actions");
            for (const auto& a : actions_[i]) {
                if (a.row.size() != n)
                    throw DimensionMismatch("action '" + a.name + "' of state " + space_.label(i) + " has wrong length");
                check_row(i, a);
            }
        }
    }

    const StateSpace& space() const noexcept { return space_; }
    const std::vector<Action>& actions(std::size_t i) const { return actions_.at(i); }

    const Action* find(std::size_t i, const std::string& name) const {
        for (const auto& a : actions_.at(i))
            if (a.name == name) return &a;
        return nullptr;
    }

private:
    void check_row(std::size_t i, const Action& a) const {
        const auto ii = static_cast<Eigen::Index>(i);
        double sum = 0.0;
        for (Eigen::Index j = 0; j < a.row.size(); ++j) {
            const double v = a.row(j);
            const bool bad = !std::isfinite(v) || (j == ii ? v > 0.0 : v < 0.0);
            if (bad) {
                std::ostringstream os;
                os << "action '" << a.name << "' of state " << space_.label(i) << " has invalid rate " << v
                   << " at column " << j;
                throw InvalidRates(os.str());
            }
            sum += v;
        }
        if (sum > 1e-12) throw InvalidRates("action '" + a.name + "' of state " + space_.label(i) + " has positive row sum");
    }

    StateSpace space_;
    std::vector<std::vector<Action>> actions_;
};

/// choice[i][k]: action name used by state i during epoch k.
struct PiecewisePolicy {
    std::vector<std::vector<std::string>> choice;

    std::size_t epochs() const { return choice.empty() ? 0 : choice.front().size(); }

    /// The same action in every epoch.
    static PiecewisePolicy stationary(std::vector<std::string> per_state, std::size_t epochs) {
        PiecewisePolicy p;
        for (auto& name : per_state) p.choice.emplace_back(epochs, name);
        return p;
    }
};

/// Q^π(t) row i = row of action choice[i][k] for t in [k·epoch, (k+1)·epoch).
inline PiecewiseConstantRates compile_policy(const ActionModel& model, const PiecewisePolicy& policy,
                                             double epoch_length = 1.0) {
    const std::size_t n = model.space().size();
    if (policy.choice.size() != n) throw DimensionMismatch("policy must give an action sequence for every state");
    const std::size_t epochs = policy.epochs();
    if (epochs == 0) throw DimensionMismatch("policy covers no epochs");
    for (const auto& seq : policy.choice)
        if (seq.size() != epochs) throw DimensionMismatch("policy action sequences differ in length");

    std::vector<double> breakpoints;
    std::vector<Matrix> blocks;
    for (std::size_t k = 0; k <= epochs; ++k) breakpoints.push_back(static_cast<double>(k) * epoch_length);
    for (std::size_t k = 0; k < epochs; ++k) {
        Matrix q(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) {
            const Action* a = model.find(i, policy.choice[i][k]);
            if (!a) {
                std::ostringstream os;
                os << "action '" << policy.choice[i][k] << "' is not available in state " << model.space().label(i)
                   << " (epoch " << k << ")";
                throw ActionNotAvailable(os.str());
            }
            q.row(static_cast<Eigen::Index>(i)) = a->row.transpose();
        }
        blocks.push_back(std::move(q));
    }
    return PiecewiseConstantRates(model.space(), std::move(breakpoints), std::move(blocks));
}

/// Single-server queue on {0, ..., window-1}: arrivals at `arrival` (lost
/// from the top state, which makes the window leak), and one action per
/// entry of `service` giving the service rate. State 0 has the same actions
/// with no service.
inline ActionModel queue_action_model(std::size_t window, double arrival,
                                      const std::vector<std::pair<std::string, double>>& service) {
    if (window == 0) throw DimensionMismatch("queue window must be positive");
    if (arrival < 0.0) throw NonnegativityViolation("arrival rate must be nonnegative");
    const auto n = static_cast<Eigen::Index>(window);
    std::vector<std::vector<Action>> actions(window);
    for (std::size_t i = 0; i < window; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        for (const auto& [name, mu] : service) {
            if (mu < 0.0) throw NonnegativityViolation("service rate must be nonnegative");
            Vector row = Vector::Zero(n);
            const double down = i > 0 ? mu : 0.0;
            if (r + 1 < n) row(r + 1) = arrival;
            if (i > 0) row(r - 1) = down;
            row(r) = -(arrival + down);
            actions[i].push_back({name, std::move(row)});
        }
    }
    return ActionModel(StateSpace::numbered(window), std::move(actions));
}

struct QueueMetrics {
    std::vector<double> times;
    std::vector<double> survival;     // Σ_j P(i0, j)
    std::vector<double> mean_length;  // E[X_u | X_s = i0, still in the window]
};

/// `levels[j]` is the queue length of state j; defaults to the index.
inline QueueMetrics queue_metrics(const MinimalSolution& sol, std::size_t i0, std::vector<double> levels = {}) {
    const std::size_t n = sol.states();
    if (i0 >= n) throw DimensionMismatch("initial state out of range");
    if (levels.empty())
        for (std::size_t j = 0; j < n; ++j) levels.push_back(static_cast<double>(j));
    if (levels.size() != n) throw DimensionMismatch("need one level per state");
    const Eigen::Map<const Vector> lv(levels.data(), static_cast<Eigen::Index>(n));

    QueueMetrics m;
    const auto row = static_cast<Eigen::Index>(i0);
    for (std::size_t b = 0; b < sol.grid.size(); ++b) {
        const Vector p = sol.field[b].row(row).transpose();
        const double alive = p.sum();
        if (alive < 1e-12) {
            std::ostringstream os;
            os << "survival " << alive << " at t=" << sol.grid.nodes[b] << " is too small to condition on";
            throw DegenerateConditioning(os.str());
        }
        m.times.push_back(sol.grid.nodes[b]);
        m.survival.push_back(alive);
        m.mean_length.push_back(p.dot(lv) / alive);
    }
    return m;
}

}  // namespace ctmc
