#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tapinv/bilevel.hpp"
#include "tapinv/invvi.hpp"
#include "tapinv/io.hpp"

namespace tapinv::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

// Latency coefficients given as "bpr", a JSON file path, or an inline object.
struct CoefficientSource {
    enum class Kind { bpr, file, inline_value } kind = Kind::bpr;
    std::string path;
    json value;

    LatencyCoefficients resolve(int degree) const
    {
        switch (kind) {
        case Kind::bpr:
            return bpr_coefficients(degree);
        case Kind::file:
            return io::load_coefficients(path);
        case Kind::inline_value:
            return io::coefficients_from_json(value, "inline coefficients");
        }
        return bpr_coefficients(degree);
    }

    json to_json() const
    {
        switch (kind) {
        case Kind::bpr:
            return "bpr";
        case Kind::file:
            return path;
        case Kind::inline_value:
            return value;
        }
        return "bpr";
    }
};

struct SnapshotFiles {
    std::string network;
    std::string demand;
    std::string flows;
};

struct GenerationBlock {
    CoefficientSource beta;
    std::string demand;
};

struct CheckgradSettings {
    double central_rho = 0.01;
    double demand_step = 1e-3; // relative to max(1, g)
};

struct ExperimentConfig {
    std::string source = "<defaults>";
    std::string network;
    Connectivity connectivity = Connectivity::weak;
    std::string demand;
    std::string demand_init;
    std::string observed_flows;
    std::vector<SnapshotFiles> snapshots;
    CoefficientSource coefficients;
    CoefficientSource beta_init;
    std::optional<GenerationBlock> generate;
    CheckgradSettings checkgrad;
    std::string output_dir = "run";
    std::uint64_t seed = 0;
    JointConfig joint;
};

inline Error config_error(const std::string& source, const std::string& key, const std::string& what)
{
    return Error(ErrorCode::ConfigError, source + ": " + key + ": " + what);
}

// Object reader that rejects keys nobody asked for.
class Section {
public:
    Section(const json& j, std::string prefix, std::string source)
        : j_(j), prefix_(std::move(prefix)), source_(std::move(source))
    {
        if (!j_.is_object())
            throw config_error(source_, prefix_.empty() ? "<root>" : prefix_, "expected an object");
    }

    std::string key_path(const std::string& k) const { return prefix_.empty() ? k : prefix_ + "." + k; }
    const std::string& source() const { return source_; }

    const json* find(const std::string& k)
    {
        used_.insert(k);
        auto it = j_.find(k);
        return it == j_.end() ? nullptr : &*it;
    }

    void number(const std::string& k, double& out)
    {
        if (const json* v = find(k)) {
            if (!v->is_number())
                throw config_error(source_, key_path(k), "expected a number");
            out = v->get<double>();
        }
    }

    void integer(const std::string& k, int& out)
    {
        if (const json* v = find(k)) {
            if (!v->is_number_integer())
                throw config_error(source_, key_path(k), "expected an integer");
            out = v->get<int>();
        }
    }

    void unsigned_integer(const std::string& k, std::uint64_t& out)
    {
        if (const json* v = find(k)) {
            if (!v->is_number_unsigned())
                throw config_error(source_, key_path(k), "expected a nonnegative integer");
            out = v->get<std::uint64_t>();
        }
    }

    void boolean(const std::string& k, bool& out)
    {
        if (const json* v = find(k)) {
            if (!v->is_boolean())
                throw config_error(source_, key_path(k), "expected true or false");
            out = v->get<bool>();
        }
    }

    bool string(const std::string& k, std::string& out)
    {
        if (const json* v = find(k)) {
            if (!v->is_string())
                throw config_error(source_, key_path(k), "expected a string");
            out = v->get<std::string>();
            return true;
        }
        return false;
    }

    void finish() const
    {
        for (const auto& [k, v] : j_.items())
            if (!used_.count(k))
                throw config_error(source_, key_path(k), "unknown key");
    }

private:
    const json& j_;
    std::string prefix_;
    std::string source_;
    std::set<std::string> used_;
};

inline std::string resolve_path(const fs::path& base, const std::string& p)
{
    fs::path q(p);
    if (q.is_relative())
        q = base / q;
    return fs::absolute(q).lexically_normal().string();
}

inline void require_file(const std::string& source, const std::string& key, const std::string& path)
{
    if (!fs::is_regular_file(path))
        throw config_error(source, key, "file '" + path + "' does not exist");
}

inline CoefficientSource parse_coefficient_source(const json& v, const std::string& source, const std::string& key,
                                                  const fs::path& base)
{
    CoefficientSource c;
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        if (s == "bpr") {
            c.kind = CoefficientSource::Kind::bpr;
        } else {
            c.kind = CoefficientSource::Kind::file;
            c.path = resolve_path(base, s);
            require_file(source, key, c.path);
        }
    } else if (v.is_object()) {
        c.kind = CoefficientSource::Kind::inline_value;
        c.value = v;
        try {
            io::coefficients_from_json(v, key);
        } catch (const Error& e) {
            throw config_error(source, key, e.what());
        }
    } else {
        throw config_error(source, key, "expected \"bpr\", a file path or {\"degree\": n, \"beta\": [...]}");
    }
    return c;
}

inline void parse_joint(Section& s, JointConfig& j)
{
    s.number("lambda", j.lambda);
    s.number("c1", j.c1);
    s.number("c2", j.c2);
    s.number("c_beta", j.c_beta);
    s.number("rho", j.rho);
    s.integer("max_outer_iterations", j.max_outer_iterations);
    s.number("f_tolerance", j.f_tolerance);
    s.integer("stall_window", j.stall_window);
    s.integer("nondecreasing_window", j.nondecreasing_window);
    s.number("tie_tolerance", j.tie_tolerance);
    s.boolean("central_differences", j.central_differences);
    s.boolean("parallel", j.parallel);
    s.boolean("reject_increase", j.reject_increase);
    s.finish();
}

inline void parse_kernel(Section& s, KernelConfig& k)
{
    s.integer("degree", k.degree);
    s.number("offset", k.offset);
    s.number("gamma", k.gamma);
    std::string w;
    if (s.string("weighting", w)) {
        if (w == "binomial")
            k.weighting = NormWeighting::binomial;
        else if (w == "identity")
            k.weighting = NormWeighting::identity;
        else
            throw config_error(s.source(), s.key_path("weighting"), "expected \"binomial\" or \"identity\"");
    }
    s.finish();
}

inline void parse_tap(Section& s, TapConfig& t)
{
    s.integer("max_iterations", t.max_iterations);
    s.number("gap_tolerance", t.gap_tolerance);
    std::string rule;
    if (s.string("step_rule", rule)) {
        if (rule == "exact_line_search")
            t.step_rule = StepRule::exact_line_search;
        else if (rule == "msa")
            t.step_rule = StepRule::msa;
        else
            throw config_error(s.source(), s.key_path("step_rule"), "expected \"exact_line_search\" or \"msa\"");
    }
    s.finish();
}

inline void parse_solver(Section& s, SolverOptions& o)
{
    s.number("tol_primal", o.tol_primal);
    s.number("tol_dual", o.tol_dual);
    s.number("tol_gap", o.tol_gap);
    s.integer("max_iterations", o.max_iterations);
    s.finish();
}

// Relative paths resolve against `base` (the config file's directory).
inline ExperimentConfig parse_config(const json& root, const std::string& source, const fs::path& base)
{
    ExperimentConfig c;
    c.source = source;
    Section s(root, "", source);
    auto path_key = [&](const char* k, std::string& out) {
        if (s.string(k, out)) {
            out = resolve_path(base, out);
            require_file(source, k, out);
        }
    };
    path_key("network", c.network);
    path_key("demand", c.demand);
    path_key("demand_init", c.demand_init);
    path_key("observed_flows", c.observed_flows);
    std::string conn;
    if (s.string("connectivity", conn)) {
        if (conn == "weak")
            c.connectivity = Connectivity::weak;
        else if (conn == "strong")
            c.connectivity = Connectivity::strong;
        else
            throw config_error(source, "connectivity", "expected \"weak\" or \"strong\"");
    }
    if (const json* v = s.find("coefficients"))
        c.coefficients = parse_coefficient_source(*v, source, "coefficients", base);
    if (const json* v = s.find("beta_init"))
        c.beta_init = parse_coefficient_source(*v, source, "beta_init", base);
    if (const json* v = s.find("snapshots")) {
        if (!v->is_array())
            throw config_error(source, "snapshots", "expected an array");
        for (std::size_t i = 0; i < v->size(); ++i) {
            const std::string key = "snapshots[" + std::to_string(i) + "]";
            Section ss((*v)[i], key, source);
            SnapshotFiles f;
            for (auto [k, out] : {std::pair<const char*, std::string*>{"network", &f.network},
                                  {"demand", &f.demand},
                                  {"flows", &f.flows}}) {
                if (!ss.string(k, *out))
                    throw config_error(source, ss.key_path(k), "missing");
                *out = resolve_path(base, *out);
                require_file(source, ss.key_path(k), *out);
            }
            ss.finish();
            c.snapshots.push_back(f);
        }
    }
    if (const json* v = s.find("generate")) {
        Section g(*v, "generate", source);
        GenerationBlock gb;
        const json* b = g.find("beta");
        if (!b)
            throw config_error(source, "generate.beta", "missing");
        gb.beta = parse_coefficient_source(*b, source, "generate.beta", base);
        if (g.string("demand", gb.demand)) {
            gb.demand = resolve_path(base, gb.demand);
            require_file(source, "generate.demand", gb.demand);
        }
        g.finish();
        c.generate = gb;
    }
    if (const json* v = s.find("checkgrad")) {
        Section g(*v, "checkgrad", source);
        g.number("central_rho", c.checkgrad.central_rho);
        g.number("demand_step", c.checkgrad.demand_step);
        g.finish();
    }
    if (s.string("output_dir", c.output_dir))
        c.output_dir = resolve_path(base, c.output_dir);
    else
        c.output_dir = resolve_path(fs::current_path(), c.output_dir);
    s.unsigned_integer("seed", c.seed);
    if (const json* v = s.find("joint")) {
        Section j(*v, "joint", source);
        parse_joint(j, c.joint);
    }
    if (const json* v = s.find("kernel")) {
        Section k(*v, "kernel", source);
        parse_kernel(k, c.joint.kernel);
    }
    if (const json* v = s.find("tap")) {
        Section t(*v, "tap", source);
        parse_tap(t, c.joint.tap);
    }
    if (const json* v = s.find("solver")) {
        Section o(*v, "solver", source);
        parse_solver(o, c.joint.solver);
    }
    s.finish();
    return c;
}

inline ExperimentConfig load_config(const std::string& path)
{
    json root;
    try {
        root = io::read_json(path);
    } catch (const Error& e) {
        throw Error(ErrorCode::ConfigError, e.what());
    }
    const fs::path base = fs::absolute(fs::path(path)).parent_path();
    return parse_config(root, path, base);
}

inline void validate(const ExperimentConfig& c)
{
    try {
        c.joint.validate();
        const SolverOptions& o = c.joint.solver;
        if (!(o.tol_primal > 0.0) || !(o.tol_dual > 0.0) || !(o.tol_gap > 0.0))
            throw Error(ErrorCode::NonpositiveParameter, "solver tolerances must be > 0");
        if (c.joint.solver.max_iterations < 1)
            throw Error(ErrorCode::InvalidArgument, "solver max_iterations must be >= 1");
        if (!(c.checkgrad.central_rho > 0.0) || !(c.checkgrad.demand_step > 0.0))
            throw Error(ErrorCode::NonpositiveParameter, "checkgrad steps must be > 0");
    } catch (const Error& e) {
        throw Error(ErrorCode::ConfigError, c.source + ": " + e.what());
    }
}

inline json to_json(const ExperimentConfig& c)
{
    json j;
    auto opt = [&](const char* k, const std::string& v) {
        if (!v.empty())
            j[k] = v;
    };
    opt("network", c.network);
    j["connectivity"] = c.connectivity == Connectivity::strong ? "strong" : "weak";
    opt("demand", c.demand);
    opt("demand_init", c.demand_init);
    opt("observed_flows", c.observed_flows);
    j["coefficients"] = c.coefficients.to_json();
    j["beta_init"] = c.beta_init.to_json();
    if (!c.snapshots.empty()) {
        j["snapshots"] = json::array();
        for (const auto& s : c.snapshots)
            j["snapshots"].push_back({{"network", s.network}, {"demand", s.demand}, {"flows", s.flows}});
    }
    if (c.generate) {
        j["generate"]["beta"] = c.generate->beta.to_json();
        if (!c.generate->demand.empty())
            j["generate"]["demand"] = c.generate->demand;
    }
    j["checkgrad"] = {{"central_rho", c.checkgrad.central_rho}, {"demand_step", c.checkgrad.demand_step}};
    j["output_dir"] = c.output_dir;
    j["seed"] = c.seed;
    const JointConfig& p = c.joint;
    j["joint"] = {{"lambda", p.lambda},
                  {"c1", p.c1},
                  {"c2", p.c2},
                  {"c_beta", p.c_beta},
                  {"rho", p.rho},
                  {"max_outer_iterations", p.max_outer_iterations},
                  {"f_tolerance", p.f_tolerance},
                  {"stall_window", p.stall_window},
                  {"nondecreasing_window", p.nondecreasing_window},
                  {"tie_tolerance", p.tie_tolerance},
                  {"central_differences", p.central_differences},
                  {"parallel", p.parallel},
                  {"reject_increase", p.reject_increase}};
    j["kernel"] = {{"degree", p.kernel.degree},
                   {"offset", p.kernel.offset},
                   {"gamma", p.kernel.gamma},
                   {"weighting", p.kernel.weighting == NormWeighting::identity ? "identity" : "binomial"}};
    j["tap"] = {{"max_iterations", p.tap.max_iterations},
                {"gap_tolerance", p.tap.gap_tolerance},
                {"step_rule", p.tap.step_rule == StepRule::msa ? "msa" : "exact_line_search"}};
    j["solver"] = {{"tol_primal", p.solver.tol_primal},
                   {"tol_dual", p.solver.tol_dual},
                   {"tol_gap", p.solver.tol_gap},
                   {"max_iterations", p.solver.max_iterations}};
    return j;
}

inline const std::string& require_key(const ExperimentConfig& c, const std::string& value, const char* key,
                                      const char* command)
{
    if (value.empty())
        throw config_error(c.source, key, std::string("required by '") + command + "'");
    return value;
}

// Output directory holding result.json, trace.csv, resolved_config.json and run.log.
class RunDirectory {
public:
    RunDirectory(const ExperimentConfig& cfg, const std::string& command, std::ostream* echo = nullptr)
        : dir_(cfg.output_dir), echo_(echo), start_(std::chrono::steady_clock::now())
    {
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec || !fs::is_directory(dir_))
            throw config_error(cfg.source, "output_dir", "cannot create directory '" + dir_.string() + "'");
        log_.open(dir_ / "run.log", std::ios::trunc);
        trace_.open(dir_ / "trace.csv", std::ios::trunc);
        if (!log_ || !trace_)
            throw config_error(cfg.source, "output_dir", "cannot write into '" + dir_.string() + "'");
        write_file("resolved_config.json", to_json(cfg).dump(2) + "\n");
        log("command " + command + ", seed " + std::to_string(cfg.seed));
    }

    void log(const std::string& msg)
    {
        const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        std::ostringstream line;
        line << "[" << std::fixed << std::setprecision(3) << t << "s] " << msg;
        log_ << line.str() << "\n";
        log_.flush();
        if (echo_)
            *echo_ << msg << "\n";
    }

    void trace_row(const std::vector<std::string>& cells)
    {
        for (std::size_t i = 0; i < cells.size(); ++i)
            trace_ << (i ? "," : "") << cells[i];
        trace_ << "\n";
        trace_.flush();
    }

    void trace_row(const std::vector<double>& values, const std::string& lead = "")
    {
        std::vector<std::string> cells;
        if (!lead.empty())
            cells.push_back(lead);
        for (double v : values)
            cells.push_back(io::format_number(v));
        trace_row(cells);
    }

    void result(const json& j) { write_file("result.json", j.dump(2) + "\n"); }

    void write_file(const std::string& name, const std::string& content)
    {
        std::ofstream out(dir_ / name, std::ios::trunc);
        out << content;
        if (!out)
            throw Error(ErrorCode::ConfigError, (dir_ / name).string() + ": write failed");
    }

    const fs::path& path() const { return dir_; }

private:
    fs::path dir_;
    std::ostream* echo_;
    std::ofstream log_;
    std::ofstream trace_;
    std::chrono::steady_clock::time_point start_;
};

enum ExitCode : int { exit_ok = 0, exit_hard = 1, exit_soft = 2 };

struct DemandInput {
    io::DemandTable table;
    std::vector<ODPair> ods;
    DemandVector demand;
};

inline DemandInput load_demand_input(const Network& net, const std::string& path)
{
    DemandInput d;
    d.table = io::load_demand(path);
    d.ods = io::od_pairs(net, d.table, path);
    d.demand = io::demand_vector(d.table);
    return d;
}

inline json demand_json(const DemandInput& d, const Vector& values)
{
    json a = json::array();
    for (std::size_t w = 0; w < d.ods.size(); ++w)
        a.push_back({{"origin", d.ods[w].origin},
                     {"destination", d.ods[w].destination},
                     {"demand", values[static_cast<Eigen::Index>(w)]}});
    return a;
}

inline json flows_json(const Network& net, const FlowVector& x)
{
    json a = json::array();
    for (std::size_t l = 0; l < net.num_links(); ++l)
        a.push_back({{"link_id", net.link(l).id}, {"flow", x[static_cast<Eigen::Index>(l)]}});
    return a;
}

inline LatencyCoefficients resolve_coefficients(const ExperimentConfig& c, const CoefficientSource& src,
                                                const char* key)
{
    try {
        return src.resolve(c.joint.kernel.degree);
    } catch (const Error& e) {
        throw config_error(c.source, key, e.what());
    }
}

inline TapSolution run_tap(RunDirectory& run, const Network& net, const DemandInput& d,
                           const LatencyCoefficients& beta, TapConfig tc)
{
    tc.record_potential = true;
    const TapSolution sol = solve_tap(net, d.ods, beta, d.demand, tc);
    run.trace_row(std::vector<std::string>{"iter", "potential"});
    for (std::size_t i = 0; i < sol.potential_history.size(); ++i)
        run.trace_row({sol.potential_history[i]}, std::to_string(i + 1));
    return sol;
}

inline int cmd_generate(const ExperimentConfig& c, std::ostream* echo = nullptr)
{
    if (!c.generate)
        throw config_error(c.source, "generate", "required by 'generate'");
    const std::string& demand_path = c.generate->demand.empty() ? c.demand : c.generate->demand;
    require_key(c, demand_path, "generate.demand", "generate");
    const Network net = io::load_network(require_key(c, c.network, "network", "generate"), c.connectivity);
    const DemandInput d = load_demand_input(net, demand_path);
    const LatencyCoefficients beta = resolve_coefficients(c, c.generate->beta, "generate.beta");
    RunDirectory run(c, "generate", echo);
    const TapSolution sol = run_tap(run, net, d, beta, c.joint.tap);
    if (!sol.converged)
        throw Error(ErrorCode::NotConverged, "generate: TAP stopped at relative gap " +
                                                 io::format_number(sol.relative_gap) + " after " +
                                                 std::to_string(sol.iterations) + " iterations");
    std::vector<std::string> header{"generated equilibrium flows",
                                    "network: " + c.network,
                                    "demand: " + demand_path,
                                    "true coefficients: " + io::coefficients_to_json(beta).dump()};
    for (std::size_t w = 0; w < d.ods.size(); ++w)
        header.push_back("true demand " + std::to_string(d.ods[w].origin) + " -> " +
                         std::to_string(d.ods[w].destination) + ": " + io::format_number(d.demand[w]));
    header.push_back("tap relative gap: " + io::format_number(sol.relative_gap) +
                     ", iterations: " + std::to_string(sol.iterations));
    std::ostringstream flows;
    io::write_flows(flows, net, sol.flow, header);
    run.write_file("flows.txt", flows.str());
    run.result({{"flows", flows_json(net, sol.flow)},
                {"flows_file", (run.path() / "flows.txt").string()},
                {"coefficients", io::coefficients_to_json(beta)},
                {"demand", demand_json(d, d.demand.values())},
                {"gap", sol.relative_gap},
                {"iterations", sol.iterations},
                {"potential", sol.potential_value}});
    run.log("generated flows at relative gap " + io::format_number(sol.relative_gap) + " in " +
            std::to_string(sol.iterations) + " iterations");
    return exit_ok;
}

inline int cmd_tap(const ExperimentConfig& c, std::ostream* echo = nullptr)
{
    const Network net = io::load_network(require_key(c, c.network, "network", "tap"), c.connectivity);
    const DemandInput d = load_demand_input(net, require_key(c, c.demand, "demand", "tap"));
    const LatencyCoefficients beta = resolve_coefficients(c, c.coefficients, "coefficients");
    RunDirectory run(c, "tap", echo);
    const TapSolution sol = run_tap(run, net, d, beta, c.joint.tap);
    json flows = json::array();
    for (Eigen::Index a = 0; a < sol.flow.size(); ++a)
        flows.push_back(sol.flow[a]);
    std::vector<int> ids;
    for (std::size_t a = 0; a < net.num_links(); ++a)
        ids.push_back(net.link(a).id);
    run.result({{"flows", flows},
                {"link_ids", ids},
                {"gap", sol.relative_gap},
                {"iterations", sol.iterations},
                {"potential", sol.potential_value},
                {"converged", sol.converged},
                {"unique_flows", sol.unique_flows}});
    run.log(std::string(sol.converged ? "converged" : "not converged") + ": relative gap " +
            io::format_number(sol.relative_gap) + " after " + std::to_string(sol.iterations) + " iterations");
    return sol.converged ? exit_ok : exit_soft;
}

inline Snapshot load_snapshot(int id, const SnapshotFiles& f, Connectivity conn)
{
    auto net = std::make_shared<const Network>(io::load_network(f.network, conn));
    const DemandInput d = load_demand_input(*net, f.demand);
    const io::FlowTable ft = io::load_flows(f.flows, *net);
    Snapshot s;
    s.id = id;
    s.network = net;
    s.observed_links = ft.measured;
    s.flows.resize(static_cast<Eigen::Index>(ft.measured.size()));
    for (std::size_t j = 0; j < ft.measured.size(); ++j)
        s.flows[static_cast<Eigen::Index>(j)] = ft.flows[static_cast<Eigen::Index>(ft.measured[j])];
    s.od_pairs = d.ods;
    s.demands = d.demand;
    return s;
}

inline int cmd_invvi(const ExperimentConfig& c, std::ostream* echo = nullptr)
{
    std::vector<SnapshotFiles> files = c.snapshots;
    if (files.empty())
        files.push_back({require_key(c, c.network, "network", "invvi"), require_key(c, c.demand, "demand", "invvi"),
                         require_key(c, c.observed_flows, "observed_flows", "invvi")});
    std::vector<Snapshot> snaps;
    for (std::size_t k = 0; k < files.size(); ++k)
        snaps.push_back(load_snapshot(static_cast<int>(k), files[k], c.connectivity));
    RunDirectory run(c, "invvi", echo);
    const CompactQP qp = assemble_qp(snaps, c.joint.kernel);
    run.log("assembled " + std::to_string(qp.num_rows()) + " rows over " + std::to_string(snaps.size()) +
            " snapshot(s)");
    SolverOptions opt = c.joint.solver;
    opt.record_history = true;
    const InvViSolution sol = solve_inverse_vi(qp, opt);
    run.trace_row(std::vector<std::string>{"iter", "primal_objective", "dual_objective", "primal_residual",
                                           "dual_residual", "mu", "step"});
    for (const auto& r : sol.report.history)
        run.trace_row({r.primal_objective, r.dual_objective, r.primal_residual, r.dual_residual, r.mu, r.step},
                      std::to_string(r.iteration));

    const Vector rows = qp.row_values(sol.beta_tail, sol.y, sol.epsilons);
    const double row_tol = 1e-7 * (1.0 + qp.h_vec.cwiseAbs().maxCoeff());
    const double nu_tol = 1e-7 * (1.0 + sol.nu.cwiseAbs().maxCoeff());
    json active = json::array();
    for (Eigen::Index r = 0; r < qp.num_rows(); ++r) {
        if (rows[r] < -row_tol && sol.nu[r] <= nu_tol)
            continue;
        const RowTag& t = qp.rows[static_cast<std::size_t>(r)];
        json e{{"row", r}, {"kind", std::string(to_string(t.kind))}, {"value", rows[r]}, {"multiplier", sol.nu[r]}};
        const auto snap = std::find_if(qp.snapshots.begin(), qp.snapshots.end(),
                                       [&](const Snapshot& x) { return x.id == t.snapshot; });
        if (t.snapshot >= 0)
            e["snapshot"] = t.snapshot;
        if (t.od >= 0 && snap != qp.snapshots.end()) {
            const auto& od = snap->od_pairs[static_cast<std::size_t>(t.od)];
            e["od"] = {od.origin, od.destination};
        }
        if (t.link >= 0)
            e["link_id"] = t.link;
        if (t.link_upper >= 0) {
            e["link_id_upper"] = t.link_upper;
            e["snapshot_upper"] = t.snapshot_upper;
        }
        if (t.node >= 0)
            e["node"] = t.node;
        if (t.coefficient >= 0)
            e["coefficient"] = t.coefficient;
        active.push_back(e);
    }

    // Forward check: equilibrium flows under the recovered coefficients.
    json roundtrip = json::array();
    double worst = 0.0;
    for (const auto& s : snaps) {
        const TapSolution t = solve_tap(*s.network, s.od_pairs, sol.beta, s.demands, c.joint.tap);
        double e = 0.0;
        for (std::size_t j = 0; j < s.observed_links.size(); ++j) {
            const double obs = s.flows[static_cast<Eigen::Index>(j)];
            const double x = t.flow[static_cast<Eigen::Index>(s.observed_links[j])];
            e = std::max(e, std::abs(x - obs) / std::max(obs, 1e-9 * std::max(1.0, s.demands.total())));
        }
        worst = std::max(worst, e);
        roundtrip.push_back({{"snapshot", s.id}, {"max_relative_flow_error", e}, {"tap_gap", t.relative_gap}});
    }
    run.result({{"coefficients", io::coefficients_to_json(sol.beta)},
                {"beta_tail", io::to_std(sol.beta_tail)},
                {"epsilons", io::to_std(sol.epsilons)},
                {"epsilons_raw", io::to_std(sol.epsilons_raw)},
                {"objective", sol.objective_value},
                {"kkt_residual", sol.kkt_residual},
                {"solver_status", std::string(to_string(sol.report.status))},
                {"solver_iterations", sol.report.iterations},
                {"active_constraints", active},
                {"roundtrip", roundtrip}});
    run.log("recovered " + io::coefficients_to_json(sol.beta).dump() + ", objective " +
            io::format_number(sol.objective_value) + ", worst forward flow error " + io::format_number(worst));
    return exit_ok;
}

struct JointInputs {
    std::shared_ptr<const Network> net;
    DemandInput init;
    std::vector<Observation> obs;
    LatencyCoefficients beta;
};

inline JointInputs load_joint_inputs(const ExperimentConfig& c, const char* command)
{
    JointInputs in;
    in.net = std::make_shared<const Network>(
        io::load_network(require_key(c, c.network, "network", command), c.connectivity));
    const std::string& dpath = c.demand_init.empty() ? c.demand : c.demand_init;
    in.init = load_demand_input(*in.net, require_key(c, dpath, "demand_init", command));
    const io::FlowTable ft = io::load_flows(require_key(c, c.observed_flows, "observed_flows", command), *in.net);
    std::vector<std::size_t> measured = ft.measured;
    if (measured.size() == in.net->num_links())
        measured.clear();
    in.obs.push_back(Observation{in.init.ods, ft.flows, measured});
    in.beta = resolve_coefficients(c, c.beta_init, "beta_init");
    if (in.beta.degree() != c.joint.kernel.degree)
        throw config_error(c.source, "beta_init",
                           "degree " + std::to_string(in.beta.degree()) + " differs from kernel.degree " +
                               std::to_string(c.joint.kernel.degree));
    return in;
}

inline json state_json(const JointInputs& in, const JointState& st, const Evaluation& ev)
{
    return {{"iteration", st.iteration},
            {"coefficients", io::coefficients_to_json(st.beta)},
            {"demand", demand_json(in.init, st.g[0].values())},
            {"xi", st.xi},
            {"F", ev.F},
            {"mismatch", ev.mismatch},
            {"flows", flows_json(*in.net, ev.tap[0].flow)}};
}

inline int cmd_joint(const ExperimentConfig& c, std::ostream* echo = nullptr)
{
    const JointInputs in = load_joint_inputs(c, "joint");
    RunDirectory run(c, "joint", echo);
    const int n = c.joint.kernel.degree;
    std::vector<std::string> head{"iter", "F", "xi"};
    for (std::size_t w = 0; w < in.init.ods.size(); ++w)
        head.push_back("g" + std::to_string(w + 1));
    for (int i = 1; i <= n; ++i)
        head.push_back("beta" + std::to_string(i));
    run.trace_row(head);
    auto observer = [&](const IterationRecord& r) {
        std::vector<double> v{r.F, r.xi};
        for (Eigen::Index i = 0; i < r.g.size(); ++i)
            v.push_back(r.g[i]);
        for (Eigen::Index i = 0; i < r.beta.size(); ++i)
            v.push_back(r.beta[i]);
        run.trace_row(v, std::to_string(r.iteration));
    };
    const JointResult res = joint_estimate(in.net, in.obs, in.beta, {in.init.demand}, c.joint, observer);
    const Evaluation best = evaluate(*in.net, in.obs, res.best, c.joint);
    const Evaluation last = evaluate(*in.net, in.obs, res.last, c.joint);
    run.result({{"stop_reason", res.stop_reason},
                {"converged", res.converged},
                {"iterations", res.trace.records.size()},
                {"initial_F", res.initial_F},
                {"best_F", res.best_F},
                {"best", state_json(in, res.best, best)},
                {"last", state_json(in, res.last, last)},
                {"warnings", res.warnings}});
    for (const auto& w : res.warnings)
        run.log("warning: " + w);
    run.log("stop: " + res.stop_reason + " after " + std::to_string(res.trace.records.size()) +
            " records; best F " + io::format_number(res.best_F) + " (initial " + io::format_number(res.initial_F) +
            "), demand " + io::format_number(res.best.g[0][0]));
    return res.converged ? exit_ok : exit_soft;
}

struct GradientCheck {
    std::string check;
    std::string entry;
    double analytic = 0.0;
    double numeric = 0.0;
    double error = 0.0;
    double bound = 0.0;
    bool flagged = false;
};

struct CheckgradReport {
    std::vector<GradientCheck> rows;
    bool equilibrium_matching = false;
    bool passed = true;
    double mismatch = 0.0;
};

inline constexpr double potential_bound = 1e-6;
inline constexpr double beta_bound = 0.15;
inline constexpr double demand_bound = 0.2;
inline constexpr double equilibrium_bound = 1e-6;

inline CheckgradReport checkgrad(const std::shared_ptr<const Network>& net, const std::vector<Observation>& obs,
                                 const JointState& st, const JointConfig& cfg, const CheckgradSettings& cs)
{
    CheckgradReport rep;
    const Evaluation ev = evaluate(*net, obs, st, cfg);
    rep.mismatch = ev.mismatch;
    const int n = st.beta.degree();

    // Potential gradient against finite differences of the potential.
    for (std::size_t k = 0; k < obs.size(); ++k) {
        const FlowVector& x = ev.tap[k].flow;
        const CostVector t = link_travel_time(*net, st.beta, x);
        for (Eigen::Index a = 0; a < x.size(); ++a) {
            const double h = 1e-4 * std::max(1.0, x[a]);
            auto phi = [&](double v) {
                FlowVector y = x;
                y[a] = v;
                return potential(*net, st.beta, y);
            };
            const double fd = x[a] >= 2.0 * h ? (phi(x[a] + h) - phi(x[a] - h)) / (2.0 * h)
                                              : (-3.0 * phi(x[a]) + 4.0 * phi(x[a] + h) - phi(x[a] + 2.0 * h)) / (2.0 * h);
            GradientCheck r{"potential", "obs" + std::to_string(k) + ".link" +
                                             std::to_string(net->link(static_cast<std::size_t>(a)).id),
                            t[a], fd, std::abs(t[a] - fd) / std::max(std::abs(t[a]), 1e-12), potential_bound};
            r.flagged = r.error > r.bound;
            rep.rows.push_back(r);
        }
    }

    // Equilibrium-flow derivatives in beta: forward at rho vs central at a small step.
    JointConfig fwd = cfg;
    fwd.central_differences = false;
    JointConfig cen = cfg;
    cen.central_differences = true;
    cen.rho = cs.central_rho;
    for (std::size_t k = 0; k < obs.size(); ++k) {
        const FlowVector& x = ev.tap[k].flow;
        const Matrix Jf = grad_wrt_beta(*net, obs[k].od_pairs, st.beta, st.g[k], x, fwd);
        const Matrix Jc = grad_wrt_beta(*net, obs[k].od_pairs, st.beta, st.g[k], x, cen);
        const double floor = 1e-6 * std::max(1.0, st.g[k].total());
        for (Eigen::Index i = 0; i < Jf.cols(); ++i) {
            const double scale = Jc.col(i).lpNorm<Eigen::Infinity>();
            const double diff = (Jf.col(i) - Jc.col(i)).lpNorm<Eigen::Infinity>();
            const double err = diff <= floor ? 0.0 : diff / std::max(scale, floor);
            for (Eigen::Index a = 0; a < Jf.rows(); ++a) {
                GradientCheck r{"beta_flow",
                                "obs" + std::to_string(k) + ".link" +
                                    std::to_string(net->link(static_cast<std::size_t>(a)).id) + ".beta" +
                                    std::to_string(i + 1),
                                Jf(a, i), Jc(a, i), err, beta_bound};
                r.flagged = err > beta_bound;
                rep.rows.push_back(r);
            }
        }
    }

    // Demand entries of grad F against central differences of F (report only).
    const Vector grad = grad_F(*net, obs, st, ev, cfg);
    Eigen::Index off = n;
    for (std::size_t k = 0; k < obs.size(); ++k)
        for (std::size_t w = 0; w < st.g[k].size(); ++w, ++off) {
            const double h = cs.demand_step * std::max(1.0, st.g[k][w]);
            auto F_at = [&](double v) {
                JointState s = st;
                Vector g = s.g[k].values();
                g[static_cast<Eigen::Index>(w)] = v;
                s.g[k] = DemandVector(g);
                return objective_F(*net, obs, s, cfg);
            };
            const double g0 = st.g[k][w];
            const double fd = g0 >= h ? (F_at(g0 + h) - F_at(g0 - h)) / (2.0 * h) : (F_at(g0 + h) - F_at(g0)) / h;
            const double floor = 1e-6 * std::max(1.0, std::abs(ev.F));
            const double diff = std::abs(grad[off] - fd);
            GradientCheck r{"demand_F", "obs" + std::to_string(k) + ".od" + std::to_string(w + 1), grad[off], fd,
                            diff <= floor ? 0.0 : diff / std::max(std::abs(fd), floor), demand_bound};
            r.flagged = r.error > r.bound;
            rep.rows.push_back(r);
        }

    // At a state that reproduces the observations, every entry but xi vanishes.
    double obs_scale = 1.0;
    for (const auto& o : obs)
        obs_scale = std::max(obs_scale, o.flows.squaredNorm());
    rep.equilibrium_matching = ev.mismatch <= 1e-12 * obs_scale;
    if (rep.equilibrium_matching)
        for (Eigen::Index i = 0; i < grad.size(); ++i) {
            const bool xi_row = i == grad.size() - 1;
            const double want = xi_row ? cfg.lambda : 0.0;
            GradientCheck r{"equilibrium_F",
                            xi_row ? "xi" : (i < n ? "beta" + std::to_string(i + 1) : "g" + std::to_string(i - n + 1)),
                            grad[i], want, std::abs(grad[i] - want), equilibrium_bound};
            r.flagged = r.error > r.bound;
            rep.rows.push_back(r);
        }

    for (const auto& r : rep.rows)
        if (r.flagged && r.check != "demand_F")
            rep.passed = false;
    return rep;
}

inline int cmd_checkgrad(const ExperimentConfig& c, std::ostream* echo = nullptr)
{
    const JointInputs in = load_joint_inputs(c, "checkgrad");
    RunDirectory run(c, "checkgrad", echo);
    JointState st;
    st.beta = in.beta;
    st.g = {in.init.demand};
    const CheckgradReport rep = checkgrad(in.net, in.obs, st, c.joint, c.checkgrad);
    run.trace_row(std::vector<std::string>{"check", "entry", "analytic", "numeric", "error", "bound", "flagged"});
    json rows = json::array();
    int flagged = 0;
    for (const auto& r : rep.rows) {
        run.trace_row({r.check, r.entry, io::format_number(r.analytic), io::format_number(r.numeric),
                       io::format_number(r.error), io::format_number(r.bound), r.flagged ? "1" : "0"});
        rows.push_back({{"check", r.check},
                        {"entry", r.entry},
                        {"analytic", r.analytic},
                        {"numeric", r.numeric},
                        {"error", r.error},
                        {"bound", r.bound},
                        {"flagged", r.flagged}});
        if (r.flagged) {
            ++flagged;
            run.log("flagged " + r.check + " " + r.entry + ": " + io::format_number(r.analytic) + " vs " +
                    io::format_number(r.numeric));
        }
    }
    run.result({{"passed", rep.passed},
                {"equilibrium_matching", rep.equilibrium_matching},
                {"mismatch", rep.mismatch},
                {"flagged", flagged},
                {"rows", rows}});
    run.log(std::string(rep.passed ? "PASS" : "FAIL") + ": " + std::to_string(flagged) + " of " +
            std::to_string(rep.rows.size()) + " entries flagged" +
            (rep.equilibrium_matching ? ", state reproduces the observations" : ""));
    return exit_ok;
}

} // namespace tapinv::cli
