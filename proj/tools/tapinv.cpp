#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "oracles/active_set_qp.hpp"
#include "oracles/random_qp.hpp"
#include "tapinv/cli.hpp"

namespace {

using namespace tapinv;
using namespace tapinv::cli;

struct Overrides {
    std::string config;
    std::string network, demand, demand_init, observed_flows, coefficients, beta_init, output;
    std::optional<double> lambda, c1, c2, rho, kernel_c, gamma, tap_gap;
    std::optional<int> degree, max_iters;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Overrides& o)
{
    cmd->add_option("--config", o.config, "JSON experiment config")->check(CLI::ExistingFile);
    cmd->add_option("--network", o.network, "network file (link_id, tail, head, t0, capacity)");
    cmd->add_option("--output", o.output, "output directory");
    cmd->add_option("--seed", o.seed, "seed recorded with the run");
    cmd->add_option("--degree", o.degree, "polynomial degree n")->check(CLI::PositiveNumber);
    cmd->add_option("--tap-gap", o.tap_gap, "TAP relative gap tolerance")->check(CLI::PositiveNumber);
}

void add_demand(CLI::App* cmd, Overrides& o)
{
    cmd->add_option("--demand", o.demand, "demand file (origin, destination, demand)");
}

void add_joint(CLI::App* cmd, Overrides& o)
{
    cmd->add_option("--demand-init", o.demand_init, "initial demand file");
    cmd->add_option("--observed-flows", o.observed_flows, "observed flows file (link_id, flow)");
    cmd->add_option("--beta-init", o.beta_init, "initial coefficients: bpr or a JSON file");
    cmd->add_option("--lambda", o.lambda, "duality-gap penalty")->check(CLI::PositiveNumber);
    cmd->add_option("--c1", o.c1, "lower demand box half-width")->check(CLI::PositiveNumber);
    cmd->add_option("--c2", o.c2, "upper demand box half-width")->check(CLI::PositiveNumber);
    cmd->add_option("--rho", o.rho, "finite-difference step for beta")->check(CLI::PositiveNumber);
    cmd->add_option("--kernel-c", o.kernel_c, "kernel offset c")->check(CLI::PositiveNumber);
    cmd->add_option("--gamma", o.gamma, "regularization weight")->check(CLI::PositiveNumber);
    cmd->add_option("--max-iters", o.max_iters, "maximum outer iterations")->check(CLI::PositiveNumber);
}

std::string flag_path(const std::string& flag, const std::string& p)
{
    const std::string abs = resolve_path(fs::current_path(), p);
    if (!fs::is_regular_file(abs))
        throw Error(ErrorCode::ConfigError, flag + ": file '" + p + "' does not exist");
    return abs;
}

ExperimentConfig resolve(const Overrides& o)
{
    ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
    if (o.config.empty())
        c.output_dir = resolve_path(fs::current_path(), c.output_dir);
    if (!o.network.empty())
        c.network = flag_path("--network", o.network);
    if (!o.demand.empty())
        c.demand = flag_path("--demand", o.demand);
    if (!o.demand_init.empty())
        c.demand_init = flag_path("--demand-init", o.demand_init);
    if (!o.observed_flows.empty())
        c.observed_flows = flag_path("--observed-flows", o.observed_flows);
    auto coef = [](const std::string& flag, const std::string& v) {
        CoefficientSource s;
        if (v != "bpr") {
            s.kind = CoefficientSource::Kind::file;
            s.path = flag_path(flag, v);
        }
        return s;
    };
    if (!o.coefficients.empty())
        c.coefficients = coef("--coefficients", o.coefficients);
    if (!o.beta_init.empty())
        c.beta_init = coef("--beta-init", o.beta_init);
    if (!o.output.empty())
        c.output_dir = resolve_path(fs::current_path(), o.output);
    if (o.seed)
        c.seed = *o.seed;
    if (o.lambda)
        c.joint.lambda = *o.lambda;
    if (o.c1)
        c.joint.c1 = *o.c1;
    if (o.c2)
        c.joint.c2 = *o.c2;
    if (o.rho)
        c.joint.rho = *o.rho;
    if (o.kernel_c)
        c.joint.kernel.offset = *o.kernel_c;
    if (o.gamma)
        c.joint.kernel.gamma = *o.gamma;
    if (o.degree)
        c.joint.kernel.degree = *o.degree;
    if (o.max_iters)
        c.joint.max_outer_iterations = *o.max_iters;
    if (o.tap_gap)
        c.joint.tap.gap_tolerance = *o.tap_gap;
    validate(c);
    return c;
}

int selftest(int count, std::uint64_t seed)
{
    int failed = 0;
    double worst = 0.0;
    for (int i = 0; i < count; ++i) {
        const ConicProblem p = oracle::random_qp(seed + static_cast<std::uint64_t>(i));
        Eigen::MatrixXd G;
        Eigen::VectorXd h;
        oracle::as_rows(p, G, h);
        const auto ref = oracle::enumerate_active_sets(p.P, p.q, G, h, p.A, p.b);
        const SolveReport r = solve(p);
        bool ok = ref && r.status == SolveStatus::optimal;
        double rel = 0.0;
        if (ref) {
            rel = std::abs(r.objective - ref->objective) / std::max(1.0, std::abs(ref->objective));
            ok = ok && rel <= 1e-7;
            for (const auto& it : r.history)
                if (std::isfinite(it.dual_objective) &&
                    it.dual_objective > ref->objective + 1e-9 * std::max(1.0, std::abs(ref->objective)))
                    ok = false;
        }
        worst = std::max(worst, rel);
        if (!ok) {
            ++failed;
            std::cout << "FAIL seed " << seed + static_cast<std::uint64_t>(i) << ": status "
                      << to_string(r.status) << ", relative objective error " << rel << "\n";
        }
    }
    std::cout << (failed ? "FAIL" : "PASS") << ": " << count - failed << "/" << count
              << " random QPs match the active-set enumeration (worst relative error " << worst << ")\n";
    return failed ? exit_hard : exit_ok;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Joint OD-demand and latency-function estimation from equilibrium flows"};
    app.require_subcommand(1);
    app.fallthrough();
    Overrides o;
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "do not echo log lines");

    auto* gen = app.add_subcommand("generate", "solve TAP at true parameters and write a flows file");
    add_common(gen, o);
    add_demand(gen, o);

    auto* tap = app.add_subcommand("tap", "solve the traffic assignment problem");
    add_common(tap, o);
    add_demand(tap, o);
    tap->add_option("--coefficients", o.coefficients, "coefficients: bpr or a JSON file");

    auto* inv = app.add_subcommand("invvi", "recover latency coefficients from observed equilibria");
    add_common(inv, o);
    add_demand(inv, o);
    inv->add_option("--observed-flows", o.observed_flows, "observed flows file (link_id, flow)");
    inv->add_option("--gamma", o.gamma, "regularization weight")->check(CLI::PositiveNumber);
    inv->add_option("--kernel-c", o.kernel_c, "kernel offset c")->check(CLI::PositiveNumber);

    auto* joint = app.add_subcommand("joint", "jointly estimate OD demand and latency coefficients");
    add_common(joint, o);
    add_joint(joint, o);

    auto* cg = app.add_subcommand("checkgrad", "audit derivative approximations at a state");
    add_common(cg, o);
    add_joint(cg, o);

    auto* solver = app.add_subcommand("solver", "solver utilities");
    auto* st = solver->add_subcommand("selftest", "compare the solver with the active-set oracle");
    solver->require_subcommand(1);
    int count = 200;
    std::uint64_t st_seed = 0;
    st->add_option("--count", count, "number of random problems")->check(CLI::PositiveNumber);
    st->add_option("--seed", st_seed, "first seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_hard;
    }

    try {
        if (st->parsed())
            return selftest(count, st_seed);
        const ExperimentConfig cfg = resolve(o);
        std::ostream* echo = quiet ? nullptr : &std::cout;
        if (gen->parsed())
            return cmd_generate(cfg, echo);
        if (tap->parsed())
            return cmd_tap(cfg, echo);
        if (inv->parsed())
            return cmd_invvi(cfg, echo);
        if (joint->parsed())
            return cmd_joint(cfg, echo);
        if (cg->parsed())
            return cmd_checkgrad(cfg, echo);
    } catch (const Error& e) {
        std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
        return exit_hard;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_hard;
    }
    return exit_hard;
}
