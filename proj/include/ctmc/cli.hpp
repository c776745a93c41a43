#pragma once

// Batch subcommands. Each returns a process exit code:
// 0 ok, 1 config/validation, 2 no convergence, 3 property failure,
// 4 oracle mismatch, 5 statistical miss.

#include "ctmc/error.hpp"
#include "ctmc/io.hpp"
#include "ctmc/kernel.hpp"
#include "ctmc/oracle.hpp"
#include "ctmc/policy.hpp"
#include "ctmc/properties.hpp"
#include "ctmc/rates.hpp"
#include "ctmc/sampler.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <variant>
#include <vector>

namespace ctmc {

enum ExitCode : int {
    exit_ok = 0,
    exit_config = 1,
    exit_no_convergence = 2,
    exit_property = 3,
    exit_oracle = 4,
    exit_statistical = 5,
};

namespace detail {

inline int guarded(std::ostream& log, const std::function<int()>& body) {
    try {
        return body();
    } catch (const NoConvergence& e) {
        log << "error: " << e.what() << '\n';
        return exit_no_convergence;
    } catch (const Error& e) {
        log << "error: " << e.what() << '\n';
        return exit_config;
    }
}

inline std::filesystem::path prepare_out(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
    return dir;
}

inline MinimalSolution solve(const RunConfig& cfg) {
    return std::visit([&](const auto& q) { return minimal_solution(q, cfg.s, cfg.t_end, cfg.solver); }, cfg.rates);
}

inline void write_field(const std::filesystem::path& path, const StateSpace& space, const MinimalSolution& sol) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    write_field_csv(out, space, sol.grid.nodes, sol.field);
}

inline json outcome_json(const PropertyOutcome& o) {
    return {{"name", o.name},         {"passed", o.passed}, {"location", o.location},
            {"measured", o.measured}, {"bound", o.bound},   {"tolerance", o.tolerance}};
}

/// Every `stride`-th node plus the last one.
inline std::vector<std::size_t> thin_nodes(std::size_t count, std::size_t target = 101) {
    const std::size_t stride = std::max<std::size_t>(1, (count - 1) / (target - 1));
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < count; k += stride) out.push_back(k);
    if (out.back() != count - 1) out.push_back(count - 1);
    return out;
}

}  // namespace detail

/// P(s, u) at every node to field.csv and the series diagnostics to
/// series_report.json.
inline int cmd_build(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log = std::cerr) {
    return detail::guarded(log, [&] {
        const auto dir = detail::prepare_out(out_dir);
        const MinimalSolution sol = detail::solve(cfg);
        detail::write_field(dir / "field.csv", cfg.space(), sol);
        write_json(dir / "series_report.json", series_json(sol));
        log << "build: " << sol.grid.size() << " nodes, order " << sol.series_order << ", tail bound "
            << sol.tail_bound << '\n';
        return int(exit_ok);
    });
}

/// Residuals, pretransition axioms, C-K, the continuity suite and the
/// derivative condition on a family of probe nodes; the regularity verdict is
/// reported but is not a failure.
inline int cmd_verify(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log = std::cerr) {
    return detail::guarded(log, [&] {
        const auto dir = detail::prepare_out(out_dir);
        const MinimalSolution sol = detail::solve(cfg);
        std::vector<PropertyOutcome> outcomes;

        const auto [fwd, bwd] = std::visit(
            [&](const auto& q) { return std::pair{forward_residual(q, sol), backward_residual(q, sol)}; }, cfg.rates);
        auto residual_outcome = [&](const char* name, const ResidualReport& r) {
            std::ostringstream os;
            os << "u=" << r.time << " (" << r.row << "," << r.col << ")";
            outcomes.push_back({name, r.max <= cfg.residual_tol, os.str(), r.max, 0.0, cfg.residual_tol});
        };
        residual_outcome("forward_residual", fwd);
        residual_outcome("backward_residual", bwd);

        const std::vector<double> nodes = even_nodes(cfg.s, cfg.t_end, cfg.probe_count);
        TransitionFamily family =
            std::visit([&](const auto& q) { return minimal_family(q, nodes, cfg.solver); }, cfg.rates);
        if (cfg.corrupt) {
            const CorruptEntry c = *cfg.corrupt;
            const std::size_t a = family.index_of(c.s), b = family.index_of(c.t);
            if (c.row >= cfg.space().size() || c.col >= cfg.space().size())
                throw ConfigError("field 'test_hooks.corrupt_entry': state index out of range");
            family = family.with_edit([=](std::size_t x, std::size_t y, Matrix& m) {
                if (x == a && y == b) m(static_cast<Eigen::Index>(c.row), static_cast<Eigen::Index>(c.col)) = c.value;
            });
            log << "verify: test hook overwrote P(" << c.s << "," << c.t << ")[" << c.row << "," << c.col << "]\n";
        }

        for (auto& o : validate_pretransition(family, cfg.property_tol)) outcomes.push_back(o);
        for (auto& o : continuity_suite(family, cfg.property_tol)) outcomes.push_back(o);

        PropertyOutcome ck{"chapman_kolmogorov", true, "", 0.0, 0.0, cfg.ck_tol};
        for (std::size_t a = 0; a < nodes.size(); ++a)
            for (std::size_t b = a; b < nodes.size(); ++b)
                for (std::size_t c = b; c < nodes.size(); ++c) {
                    const CkReport r = ck_residual(family, nodes[a], nodes[b], nodes[c]);
                    if (ck.location.empty() || r.max > ck.measured) {
                        std::ostringstream os;
                        os << "s=" << nodes[a] << " u=" << nodes[b] << " t=" << nodes[c] << " (" << r.row << ","
                           << r.col << ")";
                        ck.measured = r.max;
                        ck.location = os.str();
                    }
                }
        ck.passed = ck.measured <= ck.tolerance;
        outcomes.push_back(ck);

        PropertyOutcome rows{"rate_row_bound", true, "", 0.0, 0.0, 1e-12};
        for (double t : nodes) {
            const bool ok = std::visit([&](const auto& q) { return rate_row_bound(q, t); }, cfg.rates);
            if (!ok && rows.passed) {
                rows.passed = false;
                rows.location = "s=" + format_number(t);
                rows.measured = 1.0;
            }
        }
        outcomes.push_back(rows);

        const std::vector<double> starts(nodes.begin(), nodes.end() - 1);
        const DerivativeSweep sweep = std::visit(
            [&](const auto& q) { return derivative_sweep(q, starts, cfg.derivative_steps, cfg.solver); }, cfg.rates);
        {
            std::ostringstream os;
            os << "s=" << sweep.time << " (" << sweep.row << "," << sweep.col << ")";
            outcomes.push_back({"derivative_at_diagonal", sweep.max_error <= cfg.derivative_tol, os.str(),
                                sweep.max_error, 0.0, cfg.derivative_tol});
        }

        const DefectReport defect = regularity_defect(sol, cfg.defect_tol);
        json curve = json::array();
        for (std::size_t b : detail::thin_nodes(sol.grid.size())) {
            std::vector<double> d(defect.defect[b].data(), defect.defect[b].data() + defect.defect[b].size());
            curve.push_back({{"t", sol.grid.nodes[b]}, {"defect", d}});
        }

        bool passed = true;
        json props = json::array();
        for (const auto& o : outcomes) {
            passed = passed && o.passed;
            props.push_back(detail::outcome_json(o));
            if (!o.passed) log << "verify: " << o.name << " failed at " << o.location << " (measured " << o.measured << ")\n";
        }
        json report = {{"passed", passed},
                       {"regular", defect.regular},
                       {"max_defect", defect.max},
                       {"max_defect_time", sol.grid.nodes[defect.node]},
                       {"max_defect_state", cfg.space().label(defect.row)},
                       {"defect_tolerance", defect.tolerance},
                       {"probe_nodes", nodes},
                       {"derivative_probes", sweep.probes},
                       {"derivative_skipped", sweep.skipped},
                       {"properties", props},
                       {"defect_curve", curve},
                       {"series", series_json(sol)}};
        write_json(dir / "verification_report.json", report);
        log << "verify: " << (passed ? "all properties hold" : "property failure") << ", regular="
            << (defect.regular ? "true" : "false") << '\n';
        return int(passed ? exit_ok : exit_property);
    });
}

/// max |P - restrict(pc_exact)| over every grid node, both layouts.
inline int cmd_oracle_compare(const RunConfig& cfg, const std::filesystem::path& out_dir,
                              std::ostream& log = std::cerr) {
    return detail::guarded(log, [&] {
        const auto* pc = std::get_if<PiecewiseConstantRates>(&cfg.rates);
        if (!pc) throw ConfigError("oracle requires piecewise-constant rates");
        const auto dir = detail::prepare_out(out_dir);
        const MinimalSolution sol = detail::solve(cfg);
        const AugmentedChain aug = conservativize(*pc);

        struct Worst {
            double max = 0.0, s = 0.0, t = 0.0;
            Eigen::Index row = 0, col = 0;
        } fwd, bwd;
        auto track = [](Worst& w, const Matrix& diff, double s, double t) {
            Eigen::Index i = 0, j = 0;
            const double m = diff.cwiseAbs().maxCoeff(&i, &j);
            if (m > w.max) w = {m, s, t, i, j};
        };
        const auto& nodes = sol.grid.nodes;
        for (std::size_t b = 0; b < nodes.size(); ++b) {
            track(fwd, sol.field[b] - restrict_to_base(pc_exact(aug, sol.s(), nodes[b]), pc->size()), sol.s(), nodes[b]);
            track(bwd, sol.backward_field[b] - restrict_to_base(pc_exact(aug, nodes[b], sol.t_end()), pc->size()),
                  nodes[b], sol.t_end());
        }
        const double worst = std::max(fwd.max, bwd.max);
        const bool passed = worst <= cfg.oracle_tol;
        auto worst_json = [&](const Worst& w) {
            return json{{"max", w.max}, {"s", w.s}, {"t", w.t}, {"row", w.row}, {"col", w.col}};
        };
        write_json(dir / "oracle_report.json", {{"passed", passed},
                                                {"max_discrepancy", worst},
                                                {"tolerance", cfg.oracle_tol},
                                                {"nodes", nodes.size()},
                                                {"fixed_start", worst_json(fwd)},
                                                {"fixed_end", worst_json(bwd)}});
        log << "oracle-compare: max discrepancy " << worst << " (tolerance " << cfg.oracle_tol << ")\n";
        return int(passed ? exit_ok : exit_oracle);
    });
}

/// Terminal states of n_paths simulated paths against row initial_state of
/// P(s, t_end).
inline int cmd_simulate(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log = std::cerr) {
    return detail::guarded(log, [&] {
        const auto dir = detail::prepare_out(out_dir);
        const StateSpace& space = cfg.space();
        if (cfg.initial_state >= space.size()) throw ConfigError("field 'run.initial_state': out of range");
        const MinimalSolution sol = detail::solve(cfg);
        const Vector expected = sol.final_value().row(static_cast<Eigen::Index>(cfg.initial_state)).transpose();
        const std::vector<long> terminal = std::visit(
            [&](const auto& q) { return simulate_terminals(q, cfg.initial_state, cfg.s, cfg.t_end, cfg.n_paths, cfg.seed); },
            cfg.rates);
        const EmpiricalEstimate est = summarize_terminals(terminal, space.size());
        const std::vector<BandCheck> checks = compare_to_model(est, expected, space, cfg.sigmas);

        bool passed = true;
        json rows = json::array();
        for (const auto& c : checks) {
            passed = passed && c.within;
            rows.push_back({{"outcome", c.outcome},
                            {"empirical", c.empirical},
                            {"expected", c.expected},
                            {"std_error", c.std_error},
                            {"within", c.within}});
            if (!c.within)
                log << "simulate: " << c.outcome << " frequency " << c.empirical << " misses " << c.expected << " +- "
                    << cfg.sigmas << " se\n";
        }
        write_json(dir / "estimate.json", {{"passed", passed},
                                           {"paths", est.paths},
                                           {"seed", cfg.seed},
                                           {"initial_state", space.label(cfg.initial_state)},
                                           {"s", cfg.s},
                                           {"t_end", cfg.t_end},
                                           {"sigmas", cfg.sigmas},
                                           {"counts", est.counts},
                                           {"killed", est.killed},
                                           {"probability", est.probability},
                                           {"std_error", est.std_error},
                                           {"killed_fraction", est.killed_fraction},
                                           {"killed_std_error", est.killed_std_error},
                                           {"checks", rows}});
        if (cfg.write_terminals) {
            std::ofstream out(dir / "terminals.csv");
            if (!out) throw ConfigError("cannot write terminals.csv");
            out << "path,terminal\n";
            for (std::size_t p = 0; p < terminal.size(); ++p)
                out << p << ',' << (terminal[p] < 0 ? std::string("killed") : space.label(static_cast<std::size_t>(terminal[p])))
                    << '\n';
        }
        log << "simulate: " << est.paths << " paths, killed fraction " << est.killed_fraction << ", "
            << (passed ? "within band" : "outside band") << '\n';
        return int(passed ? exit_ok : exit_statistical);
    });
}

/// Kernel for the compiled policy plus survival and conditional mean queue
/// length curves from initial_state.
inline int cmd_policy(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log = std::cerr) {
    return detail::guarded(log, [&] {
        const auto dir = detail::prepare_out(out_dir);
        const MinimalSolution sol = detail::solve(cfg);
        const QueueMetrics m = queue_metrics(sol, cfg.initial_state);
        detail::write_field(dir / "field.csv", cfg.space(), sol);
        write_json(dir / "series_report.json", series_json(sol));
        std::ofstream out(dir / "policy_curves.csv");
        if (!out) throw ConfigError("cannot write policy_curves.csv");
        out << "time,survival,mean_length\n";
        for (std::size_t k = 0; k < m.times.size(); ++k)
            out << format_number(m.times[k]) << ',' << format_number(m.survival[k]) << ','
                << format_number(m.mean_length[k]) << '\n';
        log << "policy: survival " << m.survival.back() << ", mean length " << m.mean_length.back() << " at t="
            << m.times.back() << '\n';
        return int(exit_ok);
    });
}

/// Loads the config (exit 1 on failure), applies the seed override and runs
/// the named subcommand.
inline int run_subcommand(const std::string& name, const std::filesystem::path& config,
                          const std::filesystem::path& out_dir, std::optional<std::uint64_t> seed,
                          std::ostream& log = std::cerr) {
    RunConfig cfg{PiecewiseConstantRates(StateSpace::numbered(1), Matrix::Zero(1, 1), 1.0)};
    const int loaded = detail::guarded(log, [&] {
        cfg = load_config(config);
        return int(exit_ok);
    });
    if (loaded != exit_ok) return loaded;
    if (seed) cfg.seed = *seed;
    if (name == "build") return cmd_build(cfg, out_dir, log);
    if (name == "verify") return cmd_verify(cfg, out_dir, log);
    if (name == "oracle-compare") return cmd_oracle_compare(cfg, out_dir, log);
    if (name == "simulate") return cmd_simulate(cfg, out_dir, log);
    if (name == "policy") return cmd_policy(cfg, out_dir, log);
    log << "error: unknown subcommand '" << name << "'\n";
    return exit_config;
}

}  // namespace ctmc
