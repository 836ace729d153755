#pragma once

#include <cmath>
#include <functional>
#include <future>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "tapinv/invvi.hpp"
#include "tapinv/latency.hpp"
#include "tapinv/netcore.hpp"
#include "tapinv/solver.hpp"
#include "tapinv/tap.hpp"

namespace tapinv {

// Observed equilibrium flows for one OD set. Only links listed in `measured`
// enter the mismatch; an empty list means every link is measured.
struct Observation {
    std::vector<ODPair> od_pairs;
    FlowVector flows;
    std::vector<std::size_t> measured;

    std::vector<std::size_t> measured_links(const Network& net) const
    {
        if (!measured.empty())
            return measured;
        std::vector<std::size_t> all(net.num_links());
        for (std::size_t a = 0; a < all.size(); ++a)
            all[a] = a;
        return all;
    }
};

struct JointState {
    LatencyCoefficients beta;
    std::vector<DemandVector> g; // one demand vector per observation
    double xi = 0.0;
    int iteration = 0;
    Vector nu; // multipliers of the frozen QP rows

    Vector g_flat() const
    {
        Eigen::Index n = 0;
        for (const auto& d : g)
            n += static_cast<Eigen::Index>(d.size());
        Vector v(n);
        Eigen::Index k = 0;
        for (const auto& d : g)
            for (std::size_t i = 0; i < d.size(); ++i)
                v[k++] = d[i];
        return v;
    }
};

struct JointConfig {
    double lambda = 1e3;
    double c1 = 5.0;
    double c2 = 5.0;
    double c_beta = 0.5;
    double rho = 0.5;
    int max_outer_iterations = 500;
    double f_tolerance = 1e-3;
    int stall_window = 5;
    int nondecreasing_window = 20;
    double tie_tolerance = 1e-6;
    bool central_differences = false;
    bool parallel = false;
    // Keep the previous state when a step raises F and halve the boxes
    // (c1, c2, c_beta) for the next attempt; full boxes again after a success.
    bool reject_increase = true;
    TapConfig tap;
    KernelConfig kernel;
    SolverOptions solver;

    void validate() const
    {
        auto pos = [](double v, const char* name) {
            if (!(v > 0.0) || !std::isfinite(v))
                throw Error(ErrorCode::NonpositiveParameter, std::string(name) + " must be > 0");
        };
        pos(lambda, "lambda");
        pos(c1, "c1");
        pos(c2, "c2");
        pos(c_beta, "c_beta");
        pos(rho, "rho");
        pos(f_tolerance, "f_tolerance");
        if (max_outer_iterations < 1 || stall_window < 1 || nondecreasing_window < 1)
            throw Error(ErrorCode::NonpositiveParameter, "iteration counts must be >= 1");
        if (tie_tolerance < 0.0)
            throw Error(ErrorCode::InvalidArgument, "tie_tolerance must be >= 0");
        tap.validate();
        kernel.validate();
    }
};

struct IterationRecord {
    int iteration = 0;
    double F = 0.0;
    double mismatch = 0.0;
    double xi = 0.0;
    Vector g;
    Vector beta; // beta_1..beta_n
    double tap_gap = 0.0;
    int tap_iterations = 0;
    double predicted_decrease = 0.0;
    double beta_step = 0.0;
    double g_step = 0.0;
    bool accepted = true;
};

struct IterationTrace {
    std::vector<IterationRecord> records;
};

// Equilibrium flows at a state and the resulting objective value.
struct Evaluation {
    std::vector<TapSolution> tap;
    double mismatch = 0.0;
    double F = 0.0;

    double max_gap() const
    {
        double g = 0.0;
        for (const auto& t : tap)
            g = std::max(g, t.relative_gap);
        return g;
    }
    int total_iterations() const
    {
        int s = 0;
        for (const auto& t : tap)
            s += t.iterations;
        return s;
    }
};

namespace detail {

inline void check_state(const Network& net, const std::vector<Observation>& obs, const JointState& st)
{
    if (st.g.size() != obs.size())
        throw Error(ErrorCode::DimensionMismatch, "state has " + std::to_string(st.g.size()) +
                                                      " demand vectors for " + std::to_string(obs.size()) +
                                                      " observations");
    for (std::size_t k = 0; k < obs.size(); ++k) {
        if (st.g[k].size() != obs[k].od_pairs.size())
            throw Error(ErrorCode::DimensionMismatch, "demand vector does not match its OD set");
        if (static_cast<std::size_t>(obs[k].flows.size()) != net.num_links())
            throw Error(ErrorCode::DimensionMismatch, "observed flow vector length != number of links");
    }
    if (!(st.xi >= 0.0))
        throw Error(ErrorCode::InvalidArgument, "xi must be >= 0");
}

inline double squared_mismatch(const Network& net, const Observation& ob, const FlowVector& x)
{
    double s = 0.0;
    for (auto a : ob.measured_links(net)) {
        double d = x[static_cast<Eigen::Index>(a)] - ob.flows[static_cast<Eigen::Index>(a)];
        s += d * d;
    }
    return s;
}

} // namespace detail

inline Evaluation evaluate(const Network& net, const std::vector<Observation>& obs, const JointState& st,
                           const JointConfig& cfg)
{
    detail::check_state(net, obs, st);
    Evaluation ev;
    for (std::size_t k = 0; k < obs.size(); ++k) {
        ev.tap.push_back(solve_tap(net, obs[k].od_pairs, st.beta, st.g[k], cfg.tap));
        ev.mismatch += detail::squared_mismatch(net, obs[k], ev.tap.back().flow);
    }
    ev.F = ev.mismatch + cfg.lambda * st.xi;
    return ev;
}

// Squared flow mismatch at x(beta, g) plus lambda * xi.
inline double objective_F(const Network& net, const std::vector<Observation>& obs, const JointState& st,
                          const JointConfig& cfg)
{
    return evaluate(net, obs, st, cfg).F;
}

// Column i: 0/1 indicator of OD pair i's shortest route at the given link costs.
inline Matrix grad_wrt_demand(const Network& net, const std::vector<ODPair>& ods, const CostVector& costs,
                              double tie_tolerance)
{
    Matrix d = Matrix::Zero(static_cast<Eigen::Index>(net.num_links()), static_cast<Eigen::Index>(ods.size()));
    for (std::size_t i = 0; i < ods.size(); ++i)
        d.col(static_cast<Eigen::Index>(i)) = route_indicator(net, shortest_route(net, costs, ods[i], tie_tolerance));
    return d;
}

inline Matrix grad_wrt_demand(const Network& net, const std::vector<ODPair>& ods, const LatencyCoefficients& beta,
                              const FlowVector& equilibrium, const JointConfig& cfg)
{
    return grad_wrt_demand(net, ods, link_travel_time(net, beta, equilibrium), cfg.tie_tolerance);
}

// Difference quotients of the equilibrium flows in beta_1..beta_n. Forward
// differences by default; central differences (one-sided second order where
// beta_l < rho) when cfg.central_differences is set.
inline Matrix grad_wrt_beta(const Network& net, const std::vector<ODPair>& ods, const LatencyCoefficients& beta,
                            const DemandVector& g, const FlowVector& base, const JointConfig& cfg)
{
    const int n = beta.degree();
    const double rho = cfg.rho;
    auto flows_at = [&](int l, double delta) {
        Vector b = beta.beta();
        b[l] += delta;
        return FlowVector(require_converged(solve_tap(net, ods, LatencyCoefficients(b), g, cfg.tap)).flow);
    };
    auto column = [&](int l) -> Vector {
        if (!cfg.central_differences)
            return (flows_at(l, rho) - base) / rho;
        if (beta[l] >= rho)
            return (flows_at(l, rho) - flows_at(l, -rho)) / (2.0 * rho);
        return (-3.0 * base + 4.0 * flows_at(l, rho) - flows_at(l, 2.0 * rho)) / (2.0 * rho);
    };
    Matrix d(static_cast<Eigen::Index>(net.num_links()), n);
    if (cfg.parallel) {
        std::vector<std::future<Vector>> jobs;
        for (int l = 1; l <= n; ++l)
            jobs.push_back(std::async(std::launch::async, column, l));
        for (int l = 1; l <= n; ++l)
            d.col(l - 1) = jobs[static_cast<std::size_t>(l - 1)].get();
    } else {
        for (int l = 1; l <= n; ++l)
            d.col(l - 1) = column(l);
    }
    return d;
}

// Gradient over (beta_1..beta_n, g of every observation, xi).
inline Vector grad_F(const Network& net, const std::vector<Observation>& obs, const JointState& st,
                     const Evaluation& ev, const JointConfig& cfg)
{
    detail::check_state(net, obs, st);
    const int n = st.beta.degree();
    const Eigen::Index ng = st.g_flat().size();
    Vector grad = Vector::Zero(n + ng + 1);
    Eigen::Index off = n;
    for (std::size_t k = 0; k < obs.size(); ++k) {
        const FlowVector& x = ev.tap[k].flow;
        Vector r = Vector::Zero(x.size());
        for (auto a : obs[k].measured_links(net)) {
            const auto ai = static_cast<Eigen::Index>(a);
            r[ai] = 2.0 * (x[ai] - obs[k].flows[ai]);
        }
        Matrix dg = grad_wrt_demand(net, obs[k].od_pairs, st.beta, x, cfg);
        Matrix db = grad_wrt_beta(net, obs[k].od_pairs, st.beta, st.g[k], x, cfg);
        grad.head(n) += db.transpose() * r;
        grad.segment(off, dg.cols()) = dg.transpose() * r;
        off += dg.cols();
    }
    grad[n + ng] = cfg.lambda;
    return grad;
}

inline Vector grad_F(const Network& net, const std::vector<Observation>& obs, const JointState& st,
                     const JointConfig& cfg)
{
    return grad_F(net, obs, st, evaluate(net, obs, st, cfg), cfg);
}

// Inverse-VI snapshots built from model flows on the measured links; these
// freeze A and B at the given state.
inline std::vector<Snapshot> frozen_snapshots(std::shared_ptr<const Network> net, const std::vector<Observation>& obs,
                                              const JointState& st, const Evaluation& ev)
{
    std::vector<Snapshot> snaps;
    for (std::size_t k = 0; k < obs.size(); ++k) {
        Snapshot s;
        s.id = static_cast<int>(k);
        s.network = net;
        s.observed_links = obs[k].measured_links(*net);
        s.flows.resize(static_cast<Eigen::Index>(s.observed_links.size()));
        for (std::size_t j = 0; j < s.observed_links.size(); ++j)
            s.flows[static_cast<Eigen::Index>(j)] = ev.tap[k].flow[static_cast<Eigen::Index>(s.observed_links[j])];
        s.od_pairs = obs[k].od_pairs;
        s.demands = st.g[k];
        snaps.push_back(std::move(s));
    }
    return snaps;
}

// Smallest feasible eps for fixed beta: node potentials are shortest-path
// distances over the measured links at the frozen travel times.
inline Vector minimal_epsilons(const CompactQP& qp, const Vector& beta_tail)
{
    LatencyCoefficients b = LatencyCoefficients::from_tail(beta_tail);
    Vector eps(static_cast<Eigen::Index>(qp.snapshots.size()));
    for (std::size_t k = 0; k < qp.snapshots.size(); ++k) {
        const auto& s = qp.snapshots[k];
        const Network& net = *s.network;
        const Vector& t0 = net.free_flow_times();
        const Vector& m = net.capacities();
        CostVector cost = CostVector::Constant(static_cast<Eigen::Index>(net.num_links()),
                                               std::numeric_limits<double>::infinity());
        double total_time = 0.0;
        for (std::size_t j = 0; j < s.observed_links.size(); ++j) {
            const auto a = static_cast<Eigen::Index>(s.observed_links[j]);
            const double x = s.flows[static_cast<Eigen::Index>(j)];
            cost[a] = t0[a] * f_eval(b, x / m[a]);
            total_time += cost[a] * x;
        }
        double best = 0.0;
        for (std::size_t w = 0; w < s.od_pairs.size(); ++w) {
            if (s.demands[w] == 0.0)
                continue;
            auto dist = detail::dijkstra(net, cost, net.node_index(s.od_pairs[w].origin), true);
            best += s.demands[w] * dist[net.node_index(s.od_pairs[w].destination)];
        }
        eps[static_cast<Eigen::Index>(k)] = std::max(0.0, (total_time - best) / qp.gap_scale[k]);
    }
    return eps;
}

struct FwStepResult {
    JointState state;
    double predicted_decrease = 0.0;
    double dual_value = 0.0;  // D(nu) of the frozen QP
    Vector epsilons;          // eps of the step QP
    bool widened = false;
};

namespace detail {

inline SolveReport beta_step_solve(const CompactQP& qp, const Vector& grad_beta, const Vector& beta_prev,
                                   double c_beta, double lambda, const SolverOptions& opt)
{
    ConicProblem p = qp.to_conic();
    const Eigen::Index nb = qp.num_beta(), n = p.num_variables();
    p.P *= lambda;
    p.q.head(nb) = grad_beta;
    const double inf = std::numeric_limits<double>::infinity();
    p.lower = Vector::Constant(n, -inf);
    p.upper = Vector::Constant(n, inf);
    p.lower.head(nb) = (beta_prev.array() - c_beta).cwiseMax(0.0).matrix();
    p.upper.head(nb) = beta_prev.array() + c_beta;
    return solve(p, opt);
}

} // namespace detail

// One relaxed Frank-Wolfe step. A, B are frozen at the previous state
// (model flows x(beta_prev, g_prev), demands g_prev). Because the objective
// is linear in xi with weight lambda and xi only enters the duality row,
// the subproblem splits into: the frozen QP's dual maximum over
// {nu >= 0, A'nu = 0}; the beta/eps QP
//   min grad_beta' beta + lambda (eps'eps + beta'H beta)
// over the frozen rows and the beta box; and the demand vertex of the
// trust region selected by the sign of the demand gradient.
inline FwStepResult fw_step(std::shared_ptr<const Network> net, const std::vector<Observation>& obs,
                            const JointState& prev, const Vector& gradient, const Evaluation& ev_prev,
                            const JointConfig& cfg)
{
    const int n = prev.beta.degree();
    const Vector g_prev = prev.g_flat();
    const Eigen::Index ng = g_prev.size();
    if (gradient.size() != n + ng + 1)
        throw Error(ErrorCode::DimensionMismatch, "gradient length does not match the state");
    if (n != cfg.kernel.degree)
        throw Error(ErrorCode::DimensionMismatch, "state degree != kernel degree");

    const CompactQP qp = assemble_qp(frozen_snapshots(net, obs, prev, ev_prev), cfg.kernel);
    const SolveReport dual_rep = solve(qp.to_conic(), cfg.solver);
    if (dual_rep.status == SolveStatus::infeasible)
        throw Error(ErrorCode::SubproblemInfeasible, "frozen inverse-VI QP reported infeasible");
    if (dual_rep.status != SolveStatus::optimal)
        throw Error(ErrorCode::SolverStalled, "frozen inverse-VI QP did not converge");
    Vector nu = dual_rep.z_ineq.cwiseMax(0.0);
    const double dual = detail::dual_value(qp, nu);

    FwStepResult out;
    const Vector beta_prev = prev.beta.tail();
    double c_beta = cfg.c_beta;
    SolveReport rep = detail::beta_step_solve(qp, gradient.head(n), beta_prev, c_beta, cfg.lambda, cfg.solver);
    if (rep.status == SolveStatus::infeasible) {
        out.widened = true;
        c_beta *= 2.0;
        rep = detail::beta_step_solve(qp, gradient.head(n), beta_prev, c_beta, cfg.lambda, cfg.solver);
        if (rep.status == SolveStatus::infeasible)
            throw Error(ErrorCode::SubproblemInfeasible, "beta step infeasible after widening the box");
    }
    if (rep.status != SolveStatus::optimal)
        throw Error(ErrorCode::SolverStalled, "beta step QP did not converge");

    Vector beta = rep.x.head(n);
    beta = beta.cwiseMax((beta_prev.array() - c_beta).cwiseMax(0.0).matrix())
               .cwiseMin((beta_prev.array() + c_beta).matrix());
    const Vector eps = rep.x.tail(qp.num_eps()).cwiseMax(0.0);

    // Demands: linear objective over the box [g - c1, g + c2] intersected with g >= 0.
    // Coordinates whose best possible gain is below the stopping tolerance stay put.
    Vector g_new = g_prev;
    const double dead = 0.1 * cfg.f_tolerance * std::max(1.0, ev_prev.F) / static_cast<double>(std::max<Eigen::Index>(ng, 1));
    for (Eigen::Index i = 0; i < ng; ++i) {
        const double gi = gradient[n + i];
        if (gi > 0.0 && gi * std::min(cfg.c1, g_prev[i]) > dead)
            g_new[i] = std::max(0.0, g_prev[i] - cfg.c1);
        else if (gi < 0.0 && -gi * cfg.c2 > dead)
            g_new[i] = g_prev[i] + cfg.c2;
    }

    const double primal = primal_objective(qp, beta, eps);
    const double xi = std::max(0.0, primal - dual);

    JointState next;
    next.beta = LatencyCoefficients::from_tail_clamped(beta);
    Eigen::Index off = 0;
    for (const auto& d : prev.g) {
        const auto len = static_cast<Eigen::Index>(d.size());
        next.g.emplace_back(Vector(g_new.segment(off, len)));
        off += len;
    }
    next.xi = xi;
    next.iteration = prev.iteration + 1;
    next.nu = nu;

    out.predicted_decrease = gradient.head(n).dot(beta_prev - next.beta.tail()) +
                             gradient.segment(n, ng).dot(g_prev - g_new) + cfg.lambda * (prev.xi - xi);
    out.dual_value = dual;
    out.epsilons = eps;
    out.state = std::move(next);
    return out;
}

// xi at the start: duality gap of the frozen QP with beta fixed to the
// initial coefficients (eps at its smallest feasible value).
inline double initial_gap(std::shared_ptr<const Network> net, const std::vector<Observation>& obs,
                          const JointState& st, const Evaluation& ev, const JointConfig& cfg, Vector* nu_out = nullptr)
{
    const CompactQP qp = assemble_qp(frozen_snapshots(net, obs, st, ev), cfg.kernel);
    const SolveReport rep = solve(qp.to_conic(), cfg.solver);
    if (rep.status != SolveStatus::optimal)
        throw Error(ErrorCode::SolverStalled, "initial inverse-VI QP did not converge");
    Vector nu = rep.z_ineq.cwiseMax(0.0);
    const Vector b = st.beta.tail();
    const double gap = primal_objective(qp, b, minimal_epsilons(qp, b)) - detail::dual_value(qp, nu);
    if (nu_out)
        *nu_out = nu;
    return std::max(0.0, gap);
}

struct JointResult {
    JointState best;
    JointState last;
    IterationTrace trace;
    std::string stop_reason;
    bool converged = false;
    std::vector<std::string> warnings;
    double initial_F = 0.0;
    double best_F = 0.0;
};

using IterationObserver = std::function<void(const IterationRecord&)>;

inline JointResult joint_estimate(std::shared_ptr<const Network> net, const std::vector<Observation>& obs,
                                  const LatencyCoefficients& init_beta, const std::vector<DemandVector>& init_g,
                                  const JointConfig& cfg, const IterationObserver& observer = {})
{
    cfg.validate();
    if (init_beta.degree() != cfg.kernel.degree)
        throw Error(ErrorCode::DimensionMismatch, "initial coefficients degree != kernel degree");
    JointState st;
    st.beta = init_beta;
    st.g = init_g;
    for (const auto& g : st.g)
        if (!(g.total() > 0.0))
            throw Error(ErrorCode::InvalidArgument, "initial demand must be positive");
    Evaluation ev = evaluate(*net, obs, st, cfg);
    for (const auto& t : ev.tap)
        require_converged(t);
    st.xi = initial_gap(net, obs, st, ev, cfg, &st.nu);
    ev.F = ev.mismatch + cfg.lambda * st.xi;

    JointResult res;
    auto record = [&](const JointState& s, const Evaluation& e, double predicted, double bstep, double gstep) {
        IterationRecord r;
        r.iteration = s.iteration;
        r.F = e.F;
        r.mismatch = e.mismatch;
        r.xi = s.xi;
        r.g = s.g_flat();
        r.beta = s.beta.tail();
        r.tap_gap = e.max_gap();
        r.tap_iterations = e.total_iterations();
        r.predicted_decrease = predicted;
        r.beta_step = bstep;
        r.g_step = gstep;
        res.trace.records.push_back(r);
        if (observer)
            observer(r);
    };
    record(st, ev, 0.0, 0.0, 0.0);
    res.initial_F = ev.F;
    res.best = st;
    res.best_F = ev.F;

    int stall = 0;
    int no_improve = 0;
    double radius = 1.0;
    Vector grad = grad_F(*net, obs, st, ev, cfg);
    res.stop_reason = "max_outer_iterations";
    for (int j = 1; j <= cfg.max_outer_iterations; ++j) {
        JointConfig step_cfg = cfg;
        step_cfg.c1 *= radius;
        step_cfg.c2 *= radius;
        step_cfg.c_beta *= radius;
        FwStepResult step = fw_step(net, obs, st, grad, ev, step_cfg);
        if (step.widened)
            res.warnings.push_back("iteration " + std::to_string(j) + ": beta box widened");
        Evaluation ev_new = evaluate(*net, obs, step.state, cfg);
        for (const auto& t : ev_new.tap)
            require_converged(t);
        const double scale = cfg.f_tolerance * std::max(1.0, ev.F);
        const bool fw_small = step.predicted_decrease <= scale;
        const bool rejected = cfg.reject_increase && ev_new.F > ev.F;
        if (rejected) {
            st.iteration = step.state.iteration;
            record(st, ev, step.predicted_decrease, 0.0, 0.0);
            res.trace.records.back().accepted = false;
            radius *= 0.5;
            ++stall;
        } else {
            const double bstep = (step.state.beta.tail() - st.beta.tail()).lpNorm<Eigen::Infinity>();
            const double gstep = (step.state.g_flat() - st.g_flat()).lpNorm<Eigen::Infinity>();
            record(step.state, ev_new, step.predicted_decrease, bstep, gstep);
            stall = std::abs(ev_new.F - ev.F) <= scale ? stall + 1 : 0;
            radius = 1.0;
        }
        if (!rejected && ev_new.F < res.best_F) {
            res.best_F = ev_new.F;
            res.best = step.state;
            no_improve = 0;
        } else if (++no_improve == cfg.nondecreasing_window) {
            res.warnings.push_back("NonDecreasingF: no improvement for " + std::to_string(no_improve) +
                                   " iterations at iteration " + std::to_string(j));
        }
        if (!rejected) {
            st = std::move(step.state);
            ev = std::move(ev_new);
        }
        if (fw_small) {
            res.stop_reason = "fw_gap";
            res.converged = true;
            break;
        }
        if (stall >= cfg.stall_window) {
            res.stop_reason = "f_stationary";
            res.converged = true;
            break;
        }
        if (!rejected && j < cfg.max_outer_iterations)
            grad = grad_F(*net, obs, st, ev, cfg);
    }
    res.last = st;
    return res;
}

// Feasible-direction subproblem solved as a single problem over
// [beta | g | xi | y | eps | nu] with the duality row as the quadratic row.
// Used to cross-check fw_step's decomposition.
struct MonolithicStep {
    SolveReport report;
    Vector beta;
    Vector g;
    double xi = 0.0;
    double objective = 0.0; // gradient'(z - z_prev)
};

inline MonolithicStep fw_subproblem_monolithic(std::shared_ptr<const Network> net, const std::vector<Observation>& obs,
                                               const JointState& prev, const Vector& gradient,
                                               const Evaluation& ev_prev, const JointConfig& cfg)
{
    const CompactQP qp = assemble_qp(frozen_snapshots(net, obs, prev, ev_prev), cfg.kernel);
    const Eigen::Index nb = qp.num_beta(), ny = qp.num_y(), ne = qp.num_eps(), R = qp.num_rows();
    const Vector g_prev = prev.g_flat();
    const Eigen::Index ng = g_prev.size();
    const Eigen::Index ib = 0, ig = nb, ix = nb + ng, iy = ix + 1, ie = iy + ny, inu = ie + ne;
    const Eigen::Index n = inu + R;
    const double inf = std::numeric_limits<double>::infinity();

    ConicProblem p(n);
    p.q.segment(ib, nb) = gradient.head(nb);
    p.q.segment(ig, ng) = gradient.segment(nb, ng);
    p.q[ix] = cfg.lambda;

    p.G = Matrix::Zero(R, n);
    p.G.block(0, ib, R, nb) = qp.B_mat;
    p.G.block(0, iy, R, ny) = qp.A_mat;
    p.G.block(0, ie, R, ne) = qp.C_mat;
    p.h = -qp.h_vec;
    p.A = Matrix::Zero(ny, n);
    p.A.block(0, inu, ny, R) = qp.A_mat.transpose();
    p.b = Vector::Zero(ny);

    QuadraticRow row;
    row.Q = Matrix::Zero(n, n);
    row.Q.block(ib, ib, nb, nb) = 2.0 * qp.H;
    row.Q.block(ie, ie, ne, ne) = 2.0 * Matrix::Identity(ne, ne);
    row.Q.block(inu, inu, R, R) = 0.5 * (qp.C_mat * qp.C_mat.transpose() +
                                         qp.B_mat * qp.H.ldlt().solve(qp.B_mat.transpose()));
    row.Q = 0.5 * (row.Q + row.Q.transpose());
    row.c = Vector::Zero(n);
    row.c.segment(inu, R) = -qp.h_vec;
    row.c[ix] = -1.0;
    p.quad = row;

    p.lower = Vector::Constant(n, -inf);
    p.upper = Vector::Constant(n, inf);
    const Vector beta_prev = prev.beta.tail();
    p.lower.segment(ib, nb) = (beta_prev.array() - cfg.c_beta).cwiseMax(0.0).matrix();
    p.upper.segment(ib, nb) = beta_prev.array() + cfg.c_beta;
    p.lower.segment(ig, ng) = (g_prev.array() - cfg.c1).cwiseMax(0.0).matrix();
    p.upper.segment(ig, ng) = g_prev.array() + cfg.c2;
    p.lower[ix] = 0.0;
    p.lower.segment(inu, R).setZero();

    MonolithicStep out;
    out.report = solve(p, cfg.solver);
    out.beta = out.report.x.segment(ib, nb);
    out.g = out.report.x.segment(ig, ng);
    out.xi = out.report.x[ix];
    Vector z_prev = Vector::Zero(nb + ng + 1);
    z_prev << beta_prev, g_prev, prev.xi;
    Vector z(nb + ng + 1);
    z << out.beta, out.g, out.xi;
    out.objective = gradient.dot(z - z_prev);
    return out;
}

} // namespace tapinv
