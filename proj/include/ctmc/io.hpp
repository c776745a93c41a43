#pragma once

// Run configuration (JSON) and report writers. The schema is described in
// README.md.

#include "ctmc/error.hpp"
#include "ctmc/kernel.hpp"
#include "ctmc/policy.hpp"
#include "ctmc/rates.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace ctmc {

using json = nlohmann::json;
using AnyRates = std::variant<PiecewiseConstantRates, CallableRates>;

/// Test hook: overwrite one entry of P(s, t) before the property checks.
struct CorruptEntry {
    double s = 0.0;
    double t = 0.0;
    std::size_t row = 0;
    std::size_t col = 0;
    double value = 0.0;
};

struct RunConfig {
    AnyRates rates;
    std::string model_type;
    double s = 0.0;
    double t_end = 1.0;
    SolverOptions solver;
    std::size_t initial_state = 0;
    double property_tol = 1e-6;
    double residual_tol = 1e-4;
    double ck_tol = 2e-4;
    double derivative_tol = 1e-3;
    std::vector<double> derivative_steps{1e-2, 5e-3, 2.5e-3};
    double defect_tol = 1e-6;
    double oracle_tol = 1e-4;
    std::size_t probe_count = 6;
    std::size_t n_paths = 100000;
    std::uint64_t seed = 1;
    double sigmas = 3.0;
    bool write_terminals = false;
    std::optional<CorruptEntry> corrupt;

    const StateSpace& space() const {
        return std::visit([](const auto& r) -> const StateSpace& { return r.space(); }, rates);
    }
};

namespace detail {

class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {}

    [[noreturn]] void fail(const std::string& msg) const { throw ConfigError("field '" + path_ + "': " + msg); }

    bool has(const std::string& key) const { return j_.is_object() && j_.contains(key); }

    Reader at(const std::string& key) const {
        if (!j_.is_object()) fail("expected an object");
        if (!j_.contains(key)) throw ConfigError("field '" + join(key) + "': missing");
        return {j_.at(key), join(key)};
    }
    Reader at(std::size_t k) const {
        if (!j_.is_array() || k >= j_.size()) fail("index out of range");
        return {j_.at(k), path_ + "[" + std::to_string(k) + "]"};
    }

    std::size_t size() const {
        if (!j_.is_array()) fail("expected an array");
        return j_.size();
    }
    bool is_array() const { return j_.is_array(); }
    bool is_object() const { return j_.is_object(); }
    const json& raw() const { return j_; }
    const std::string& path() const { return path_; }

    double number() const {
        if (!j_.is_number()) fail("expected a number");
        return j_.get<double>();
    }
    double positive() const {
        const double v = number();
        if (!(v > 0.0)) fail("must be positive");
        return v;
    }
    double nonnegative() const {
        const double v = number();
        if (!(v >= 0.0)) fail("must be nonnegative");
        return v;
    }
    std::size_t index() const {
        if (!j_.is_number_integer() || j_.get<long long>() < 0) fail("expected a nonnegative integer");
        return j_.get<std::size_t>();
    }
    std::string string() const {
        if (!j_.is_string()) fail("expected a string");
        return j_.get<std::string>();
    }
    bool boolean() const {
        if (!j_.is_boolean()) fail("expected true or false");
        return j_.get<bool>();
    }
    std::vector<double> numbers() const {
        std::vector<double> out;
        for (std::size_t k = 0; k < size(); ++k) out.push_back(at(k).number());
        return out;
    }
    Matrix dense(std::size_t n) const {
        if (size() != n) fail("expected " + std::to_string(n) + " rows");
        Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) {
            const Reader row = at(i);
            if (row.size() != n) row.fail("expected " + std::to_string(n) + " entries");
            for (std::size_t j = 0; j < n; ++j)
                m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row.at(j).number();
        }
        return m;
    }

private:
    std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    const json& j_;
    std::string path_;
};

inline StateSpace read_space(const Reader& m) {
    if (m.has("states")) {
        const Reader s = m.at("states");
        std::vector<std::string> labels;
        for (std::size_t k = 0; k < s.size(); ++k) labels.push_back(s.at(k).string());
        try {
            return StateSpace(std::move(labels));
        } catch (const Error& e) {
            s.fail(e.what());
        }
    }
    if (m.has("size")) {
        const std::size_t n = m.at("size").index();
        if (n == 0) m.at("size").fail("must be at least 1");
        return StateSpace::numbered(n);
    }
    m.fail("needs 'states' or 'size'");
}

inline std::size_t state_ref(const Reader& r, const StateSpace& space) {
    if (r.raw().is_string()) {
        if (auto k = space.index_of(r.string())) return *k;
        r.fail("unknown state '" + r.string() + "'");
    }
    const std::size_t k = r.index();
    if (k >= space.size()) r.fail("state index out of range");
    return k;
}

/// {"dense": [[...]]} or {"entries": [[i, j, v], ...], "complete_diagonal": bool, "kill": {...}}.
inline Matrix read_block(const Reader& b, const StateSpace& space) {
    const std::size_t n = space.size();
    if (b.has("dense")) return b.at("dense").dense(n);
    if (!b.has("entries")) b.fail("block needs 'dense' or 'entries'");
    const auto sz = static_cast<Eigen::Index>(n);
    Matrix m = Matrix::Zero(sz, sz);
    const Reader entries = b.at("entries");
    for (std::size_t k = 0; k < entries.size(); ++k) {
        const Reader e = entries.at(k);
        if (e.size() != 3) e.fail("expected [row, col, value]");
        const auto i = static_cast<Eigen::Index>(state_ref(e.at(0), space));
        const auto j = static_cast<Eigen::Index>(state_ref(e.at(1), space));
        m(i, j) = e.at(2).number();
    }
    const bool complete = b.has("complete_diagonal") && b.at("complete_diagonal").boolean();
    if (complete) {
        Vector kill = Vector::Zero(sz);
        if (b.has("kill")) {
            const Reader k = b.at("kill");
            if (!k.is_object()) k.fail("expected an object of state: rate");
            for (const auto& [label, _] : k.raw().items()) {
                const Reader rate = k.at(label);
                auto idx = space.index_of(label);
                if (!idx) rate.fail("unknown state");
                kill(static_cast<Eigen::Index>(*idx)) = rate.nonnegative();
            }
        }
        for (Eigen::Index i = 0; i < sz; ++i) m(i, i) = -(m.row(i).sum() - m(i, i) + kill(i));
    }
    return m;
}

/// a + b i + c i^2 with kind constant / linear / quadratic.
inline std::function<double(std::size_t)> read_rate_formula(const Reader& f) {
    const std::string kind = f.at("kind").string();
    double a = f.has("a") ? f.at("a").number() : 0.0;
    double b = 0.0, c = 0.0;
    if (kind == "constant") {
    } else if (kind == "linear") {
        b = f.at("b").number();
    } else if (kind == "quadratic") {
        b = f.has("b") ? f.at("b").number() : 0.0;
        c = f.at("c").number();
    } else {
        f.at("kind").fail("unknown rate formula '" + kind + "' (constant, linear, quadratic)");
    }
    return [a, b, c](std::size_t i) {
        const double x = static_cast<double>(i);
        return a + b * x + c * x * x;
    };
}

inline PiecewiseConstantRates read_piecewise(const Reader& m) {
    const StateSpace space = read_space(m);
    const Reader bp = m.at("breakpoints");
    std::vector<double> breakpoints = bp.numbers();
    const Reader bl = m.at("blocks");
    std::vector<Matrix> blocks;
    for (std::size_t k = 0; k < bl.size(); ++k) blocks.push_back(read_block(bl.at(k), space));
    try {
        return PiecewiseConstantRates(space, std::move(breakpoints), std::move(blocks));
    } catch (const DimensionMismatch& e) {
        m.fail(e.what());
    }
}

inline PiecewiseConstantRates read_birth_death(const Reader& m) {
    const std::size_t n = m.at("size").index();
    if (n == 0) m.at("size").fail("must be at least 1");
    const double horizon = m.at("horizon").positive();
    auto birth = read_rate_formula(m.at("birth"));
    auto death = m.has("death") ? read_rate_formula(m.at("death")) : [](std::size_t) { return 0.0; };
    try {
        return truncate_birth_death(birth, death, n, horizon);
    } catch (const NonnegativityViolation& e) {
        m.fail(e.what());
    }
}

inline PiecewiseConstantRates read_policy(const Reader& m) {
    std::optional<ActionModel> model;
    if (m.has("queue")) {
        const Reader q = m.at("queue");
        const std::size_t window = q.at("window").index();
        const double arrival = q.at("arrival").nonnegative();
        std::vector<std::pair<std::string, double>> service;
        const Reader sv = q.at("service");
        if (!sv.is_object()) sv.fail("expected an object of action: rate");
        for (const auto& [name, _] : sv.raw().items()) service.emplace_back(name, sv.at(name).nonnegative());
        try {
            model.emplace(queue_action_model(window, arrival, service));
        } catch (const Error& e) {
            q.fail(e.what());
        }
    } else {
        const StateSpace space = read_space(m);
        const Reader acts = m.at("actions");
        std::vector<std::vector<Action>> actions(space.size());
        for (std::size_t i = 0; i < space.size(); ++i) {
            const Reader list = acts.at(space.label(i));
            for (std::size_t k = 0; k < list.size(); ++k) {
                const Reader a = list.at(k);
                const std::vector<double> row = a.at("row").numbers();
                if (row.size() != space.size()) a.at("row").fail("wrong length");
                actions[i].push_back({a.at("name").string(), Eigen::Map<const Vector>(row.data(), static_cast<Eigen::Index>(row.size()))});
            }
        }
        try {
            model.emplace(space, std::move(actions));
        } catch (const Error& e) {
            acts.fail(e.what());
        }
    }

    const Reader pol = m.at("policy");
    if (!pol.is_object()) pol.fail("expected an object of state: [action per epoch]");
    PiecewisePolicy policy;
    const StateSpace& space = model->space();
    for (std::size_t i = 0; i < space.size(); ++i) {
        const std::string& label = space.label(i);
        const Reader seq = pol.has(label) ? pol.at(label) : pol.at("default");
        std::vector<std::string> names;
        for (std::size_t k = 0; k < seq.size(); ++k) names.push_back(seq.at(k).string());
        policy.choice.push_back(std::move(names));
    }
    const double epoch = m.has("epoch_length") ? m.at("epoch_length").positive() : 1.0;
    try {
        return compile_policy(*model, policy, epoch);
    } catch (const Error& e) {
        pol.fail(e.what());
    }
}

/// Q(t) = intercept + t * slope + Σ_{jumps with at <= t} add.
inline CallableRates read_callable_affine(const Reader& m) {
    const StateSpace space = read_space(m);
    const std::size_t n = space.size();
    const double horizon = m.at("horizon").positive();
    const Matrix intercept = m.at("intercept").dense(n);
    const Matrix slope = m.has("slope") ? m.at("slope").dense(n) : Matrix::Zero(intercept.rows(), intercept.cols());
    std::vector<std::pair<double, Matrix>> jumps;
    if (m.has("jumps")) {
        const Reader js = m.at("jumps");
        for (std::size_t k = 0; k < js.size(); ++k) {
            const Reader j = js.at(k);
            const double at = j.at("at").number();
            if (!(at > 0.0 && at < horizon)) j.at("at").fail("must lie inside (0, horizon)");
            jumps.emplace_back(at, j.at("add").dense(n));
        }
    }
    std::sort(jumps.begin(), jumps.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
    auto fn = [intercept, slope, jumps](double t) {
        Matrix q = intercept + t * slope;
        for (const auto& [at, add] : jumps)
            if (t >= at) q += add;
        return q;
    };
    std::vector<double> disc;
    for (const auto& j : jumps) disc.push_back(j.first);
    // Affine pieces: extremes of -q_ii sit at piece endpoints.
    double bound = 0.0;
    std::vector<double> ends{0.0, horizon};
    ends.insert(ends.end(), disc.begin(), disc.end());
    for (double t : ends) {
        bound = std::max(bound, (-fn(t).diagonal()).maxCoeff());
        bound = std::max(bound, (-fn(std::nextafter(t, -1.0)).diagonal()).maxCoeff());
    }
    return CallableRates(space, fn, disc, bound, horizon);
}

inline std::pair<int, int> line_and_column(const std::string& text, std::size_t byte) {
    int line = 1, col = 1;
    for (std::size_t k = 0; k + 1 < byte && k < text.size(); ++k) {
        if (text[k] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        auto [line, col] = detail::line_and_column(text, e.byte);
        std::ostringstream os;
        os << "config parse error at line " << line << ", column " << col << ": " << e.what();
        throw ConfigError(os.str());
    }
    const detail::Reader top(root, "");
    if (!top.is_object()) top.fail("config must be a JSON object");

    RunConfig cfg{PiecewiseConstantRates(StateSpace::numbered(1), Matrix::Zero(1, 1), 1.0)};
    const detail::Reader model = top.at("model");
    cfg.model_type = model.at("type").string();
    if (cfg.model_type == "piecewise_constant") cfg.rates = detail::read_piecewise(model);
    else if (cfg.model_type == "birth_death") cfg.rates = detail::read_birth_death(model);
    else if (cfg.model_type == "policy") cfg.rates = detail::read_policy(model);
    else if (cfg.model_type == "callable_affine") cfg.rates = detail::read_callable_affine(model);
    else model.at("type").fail("unknown model type '" + cfg.model_type + "'");

    const double horizon = std::visit([](const auto& r) { return r.horizon(); }, cfg.rates);
    cfg.t_end = horizon;
    if (top.has("run")) {
        const detail::Reader run = top.at("run");
        auto opt_num = [&](const char* key, double& dst, bool positive) {
            if (run.has(key)) dst = positive ? run.at(key).positive() : run.at(key).nonnegative();
        };
        opt_num("s", cfg.s, false);
        opt_num("t_end", cfg.t_end, false);
        opt_num("step", cfg.solver.step, true);
        opt_num("series_tol", cfg.solver.series_tol, true);
        opt_num("chain_limit", cfg.solver.chain_limit, true);
        opt_num("property_tol", cfg.property_tol, true);
        opt_num("residual_tol", cfg.residual_tol, true);
        opt_num("ck_tol", cfg.ck_tol, true);
        opt_num("derivative_tol", cfg.derivative_tol, true);
        opt_num("defect_tol", cfg.defect_tol, true);
        opt_num("oracle_tol", cfg.oracle_tol, true);
        opt_num("sigmas", cfg.sigmas, true);
        if (run.has("max_order")) cfg.solver.max_order = run.at("max_order").index();
        if (run.has("initial_state")) cfg.initial_state = detail::state_ref(run.at("initial_state"), cfg.space());
        if (run.has("probe_count")) {
            cfg.probe_count = run.at("probe_count").index();
            if (cfg.probe_count < 2) run.at("probe_count").fail("must be at least 2");
        }
        if (run.has("n_paths")) {
            cfg.n_paths = run.at("n_paths").index();
            if (cfg.n_paths == 0) run.at("n_paths").fail("must be at least 1");
        }
        if (run.has("seed")) cfg.seed = run.at("seed").index();
        if (run.has("write_terminals")) cfg.write_terminals = run.at("write_terminals").boolean();
        if (run.has("derivative_steps")) {
            cfg.derivative_steps = run.at("derivative_steps").numbers();
            if (cfg.derivative_steps.empty()) run.at("derivative_steps").fail("must not be empty");
            for (double h : cfg.derivative_steps)
                if (!(h > 0.0)) run.at("derivative_steps").fail("steps must be positive");
        }
        if (run.has("quadrature")) {
            const std::string rule = run.at("quadrature").string();
            if (rule == "exponential_trapezoid") cfg.solver.rule = QuadratureRule::exponential_trapezoid;
            else if (rule == "trapezoid") cfg.solver.rule = QuadratureRule::trapezoid;
            else run.at("quadrature").fail("unknown rule '" + rule + "'");
        }
        if (cfg.s > cfg.t_end) run.fail("s must not exceed t_end");
        if (cfg.t_end > horizon) run.at("t_end").fail("exceeds the model horizon");
    }
    if (top.has("test_hooks")) {
        const detail::Reader hooks = top.at("test_hooks");
        if (hooks.has("corrupt_entry")) {
            const detail::Reader c = hooks.at("corrupt_entry");
            cfg.corrupt = CorruptEntry{c.at("s").number(), c.at("t").number(), c.at("row").index(), c.at("col").index(),
                                       c.at("value").number()};
        }
    }
    return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

/// %.17g, independent of the global C++ locale.
inline std::string format_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Header, then one line per node: time and the |S|^2 entries row-major.
inline void write_field_csv(std::ostream& os, const StateSpace& space, const std::vector<double>& times,
                            const std::vector<Matrix>& field) {
    if (times.size() != field.size()) throw GridMismatch("field and time list differ in length");
    os << "time";
    for (const auto& a : space.labels())
        for (const auto& b : space.labels()) os << ",P_" << a << "_" << b;
    os << '\n';
    for (std::size_t k = 0; k < times.size(); ++k) {
        os << format_number(times[k]);
        const Matrix& m = field[k];
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) os << ',' << format_number(m(i, j));
        os << '\n';
    }
}

/// Parses a file written by write_field_csv back into (times, matrices).
inline std::pair<std::vector<double>, std::vector<Matrix>> read_field_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw ConfigError("empty field CSV");
    const auto columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
    const auto n = static_cast<Eigen::Index>(std::llround(std::sqrt(static_cast<double>(columns))));
    if (static_cast<std::size_t>(n * n) != columns) throw ConfigError("field CSV header is not square");
    std::vector<double> times;
    std::vector<Matrix> field;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> values;
        while (std::getline(ss, cell, ',')) values.push_back(std::stod(cell));
        if (values.size() != columns + 1) throw ConfigError("field CSV row has the wrong width");
        times.push_back(values[0]);
        Matrix m(n, n);
        for (Eigen::Index k = 0; k < n * n; ++k) m(k / n, k % n) = values[static_cast<std::size_t>(k) + 1];
        field.push_back(std::move(m));
    }
    return {times, field};
}

inline json matrix_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json r = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
        rows.push_back(std::move(r));
    }
    return rows;
}

inline json series_json(const MinimalSolution& sol) {
    json segs = json::array();
    for (const auto& s : sol.segments) {
        segs.push_back({{"start", s.start},
                        {"end", s.end},
                        {"order", s.order},
                        {"last_term_norm", s.last_term_norm},
                        {"term_norms", s.term_norms},
                        {"rate_bound", s.rate_bound},
                        {"tail_bound", s.tail_bound},
                        {"max_partial_row_sum", s.max_partial_row_sum}});
    }
    return {{"s", sol.s()},
            {"t_end", sol.t_end()},
            {"quad_step", sol.quad_step},
            {"quadrature", sol.rule == QuadratureRule::trapezoid ? "trapezoid" : "exponential_trapezoid"},
            {"nodes", sol.grid.size()},
            {"series_order", sol.series_order},
            {"last_term_norm", sol.last_term_norm},
            {"tail_bound", sol.tail_bound},
            {"segments", segs}};
}

inline void write_json(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

}  // namespace ctmc
