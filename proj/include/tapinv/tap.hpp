#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "tapinv/latency.hpp"
#include "tapinv/netcore.hpp"

namespace tapinv {

enum class StepRule { msa, exact_line_search };

struct TapConfig {
    int max_iterations = 100000;
    double gap_tolerance = 1e-6;
    StepRule step_rule = StepRule::exact_line_search;
    // Costs used for the initial all-or-nothing load; free-flow times when unset.
    std::optional<CostVector> initial_costs;
    bool record_potential = false;

    void validate() const
    {
        if (max_iterations < 1)
            throw Error(ErrorCode::InvalidArgument, "TAP max_iterations must be >= 1");
        if (!(gap_tolerance > 0.0))
            throw Error(ErrorCode::NonpositiveParameter, "TAP gap_tolerance must be > 0");
    }
};

struct TapSolution {
    FlowVector flow;
    std::vector<FlowVector> od_flows;
    int iterations = 0;
    double relative_gap = 0.0;
    double potential_value = 0.0;
    bool converged = false;
    // False when f is flat (all beta_i = 0): link costs no longer pin down flows.
    bool unique_flows = true;
    std::vector<double> potential_history;
};

namespace detail {

inline double directional_derivative(const Network& net, const LatencyCoefficients& coeffs, const FlowVector& x,
                                     const FlowVector& d, double alpha)
{
    const Vector& t0 = net.free_flow_times();
    const Vector& m = net.capacities();
    double s = 0.0;
    for (Eigen::Index a = 0; a < x.size(); ++a) {
        if (d[a] == 0.0)
            continue;
        double xa = std::max(x[a] + alpha * d[a], 0.0);
        s += t0[a] * f_eval(coeffs, xa / m[a]) * d[a];
    }
    return s;
}

// Minimizer of the potential on [x, x + d]; the derivative is nondecreasing in alpha.
inline double line_search(const Network& net, const LatencyCoefficients& coeffs, const FlowVector& x,
                          const FlowVector& d)
{
    if (directional_derivative(net, coeffs, x, d, 1.0) <= 0.0)
        return 1.0;
    if (directional_derivative(net, coeffs, x, d, 0.0) >= 0.0)
        return 0.0;
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 200 && hi - lo > 1e-16; ++it) {
        double mid = 0.5 * (lo + hi);
        if (directional_derivative(net, coeffs, x, d, mid) > 0.0)
            hi = mid;
        else
            lo = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace detail

// Link-based Frank-Wolfe for the equilibrium: all-or-nothing direction,
// step by exact line search on the potential or 1/(j+1). The line-search
// rule also takes away steps from previously loaded all-or-nothing vertices.
inline TapSolution solve_tap(const Network& net, const std::vector<ODPair>& ods, const LatencyCoefficients& coeffs,
                             const DemandVector& demands, const TapConfig& cfg = {})
{
    cfg.validate();
    if (demands.size() != ods.size())
        throw Error(ErrorCode::DimensionMismatch, "demand vector length != number of OD pairs");
    const auto nl = static_cast<Eigen::Index>(net.num_links());
    for (std::size_t w = 0; w < ods.size(); ++w)
        if (demands[w] > 0.0 && !reachable(net, ods[w]))
            throw Error(ErrorCode::InfeasibleDemand, "OD pair " + std::to_string(w) + " (" +
                                                         std::to_string(ods[w].origin) + " -> " +
                                                         std::to_string(ods[w].destination) +
                                                         ") has demand but no path");

    TapSolution sol;
    sol.unique_flows = (coeffs.tail().array() > 0.0).any();
    sol.od_flows.assign(ods.size(), FlowVector::Zero(nl));
    sol.flow = FlowVector::Zero(nl);
    if (demands.total() == 0.0) {
        sol.iterations = 1;
        sol.converged = true;
        if (cfg.record_potential)
            sol.potential_history.push_back(0.0);
        return sol;
    }

    CostVector start = cfg.initial_costs ? *cfg.initial_costs : net.free_flow_times();
    sol.od_flows = all_or_nothing_by_od(net, ods, start, demands);
    for (const auto& xw : sol.od_flows)
        sol.flow += xw;

    // Loads visited by the all-or-nothing step; the flow is their convex combination.
    struct Vertex {
        std::vector<FlowVector> od;
        FlowVector total;
        double weight;
    };
    std::vector<Vertex> verts{Vertex{sol.od_flows, sol.flow, 1.0}};

    int j = 0;
    for (;;) {
        CostVector t = link_travel_time(net, coeffs, sol.flow);
        std::vector<FlowVector> aon = all_or_nothing_by_od(net, ods, t, demands);
        FlowVector y = FlowVector::Zero(nl);
        for (const auto& yw : aon)
            y += yw;
        const double txx = t.dot(sol.flow);
        sol.relative_gap = txx > 0.0 ? std::max(0.0, (txx - t.dot(y)) / txx) : 0.0;
        if (cfg.record_potential)
            sol.potential_history.push_back(potential(net, coeffs, sol.flow));
        ++j;
        sol.iterations = j;
        if (sol.relative_gap <= cfg.gap_tolerance) {
            sol.converged = true;
            break;
        }
        if (j >= cfg.max_iterations)
            break;

        if (cfg.step_rule == StepRule::msa) {
            const double alpha = 1.0 / (j + 1.0);
            sol.flow = (sol.flow + alpha * (y - sol.flow)).cwiseMax(0.0);
            for (std::size_t w = 0; w < ods.size(); ++w)
                sol.od_flows[w] = (sol.od_flows[w] + alpha * (aon[w] - sol.od_flows[w])).cwiseMax(0.0);
            continue;
        }

        // Away direction: drop weight from the stored vertex with the highest cost.
        std::size_t away = 0;
        for (std::size_t v = 1; v < verts.size(); ++v)
            if (t.dot(verts[v].total) > t.dot(verts[away].total))
                away = v;
        const double fw_slope = txx - t.dot(y);
        const double away_slope = t.dot(verts[away].total) - txx;
        const double wa = verts[away].weight;
        if (away_slope > fw_slope && wa < 1.0) {
            const double gmax = wa / (1.0 - wa);
            const FlowVector d = sol.flow - verts[away].total;
            const double alpha = gmax * detail::line_search(net, coeffs, sol.flow, gmax * d);
            sol.flow = (sol.flow + alpha * d).cwiseMax(0.0);
            for (std::size_t w = 0; w < ods.size(); ++w)
                sol.od_flows[w] = (sol.od_flows[w] + alpha * (sol.od_flows[w] - verts[away].od[w])).cwiseMax(0.0);
            for (auto& v : verts)
                v.weight *= 1.0 + alpha;
            verts[away].weight -= alpha;
            if (alpha >= gmax || verts[away].weight <= 0.0)
                verts.erase(verts.begin() + static_cast<std::ptrdiff_t>(away));
            continue;
        }

        const FlowVector d = y - sol.flow;
        const double alpha = detail::line_search(net, coeffs, sol.flow, d);
        sol.flow = (sol.flow + alpha * d).cwiseMax(0.0);
        for (std::size_t w = 0; w < ods.size(); ++w)
            sol.od_flows[w] = (sol.od_flows[w] + alpha * (aon[w] - sol.od_flows[w])).cwiseMax(0.0);
        if (alpha >= 1.0) {
            verts.assign(1, Vertex{aon, y, 1.0});
            continue;
        }
        for (auto& v : verts)
            v.weight *= 1.0 - alpha;
        auto same = std::find_if(verts.begin(), verts.end(), [&](const Vertex& v) {
            for (std::size_t w = 0; w < ods.size(); ++w)
                if (v.od[w] != aon[w])
                    return false;
            return true;
        });
        if (same != verts.end())
            same->weight += alpha;
        else
            verts.push_back(Vertex{aon, y, alpha});
    }
    sol.potential_value = potential(net, coeffs, sol.flow);
    return sol;
}

inline const TapSolution& require_converged(const TapSolution& sol)
{
    if (!sol.converged)
        throw Error(ErrorCode::NotConverged, "TAP stopped after " + std::to_string(sol.iterations) +
                                                 " iterations at relative gap " +
                                                 std::to_string(sol.relative_gap));
    return sol;
}

// Smallest eps with t(x)'(x' - x) >= -eps for every feasible x'.
inline double vi_gap(const Network& net, const std::vector<ODPair>& ods, const LatencyCoefficients& coeffs,
                     const FlowVector& flow, const DemandVector& demands)
{
    CostVector t = link_travel_time(net, coeffs, flow);
    FlowVector y = all_or_nothing(net, ods, t, demands);
    return std::max(0.0, t.dot(flow) - t.dot(y));
}

struct RouteFlow {
    Route route;
    double flow;
};

// Path decomposition of one OD pair's link flows, following the heaviest
// remaining link out of each node and cancelling any cycle met on the way.
inline std::vector<RouteFlow> decompose_od_flow(const Network& net, const ODPair& od, const FlowVector& od_flow,
                                                double threshold, std::size_t max_routes)
{
    FlowVector rem = od_flow;
    const std::size_t o = net.node_index(od.origin);
    const std::size_t t = net.node_index(od.destination);
    std::vector<RouteFlow> out;
    auto outflow = [&] {
        double s = 0.0;
        for (auto a : net.out_links(o))
            s += rem[static_cast<Eigen::Index>(a)];
        for (auto a : net.in_links(o))
            s -= rem[static_cast<Eigen::Index>(a)];
        return s;
    };
    for (int guard = 0; outflow() > threshold && guard < 100000; ++guard) {
        std::vector<std::size_t> path;
        std::vector<std::size_t> nodes{o};
        std::size_t at = o;
        bool stuck = false;
        while (at != t) {
            std::size_t best = net.num_links();
            double best_flow = 0.0;
            for (auto a : net.out_links(at)) {
                double r = rem[static_cast<Eigen::Index>(a)];
                if (r > best_flow) {
                    best_flow = r;
                    best = a;
                }
            }
            if (best == net.num_links() || best_flow <= 0.0) {
                stuck = true;
                break;
            }
            path.push_back(best);
            at = net.link(best).head_index;
            auto seen = std::find(nodes.begin(), nodes.end(), at);
            if (seen != nodes.end()) {
                std::size_t start = static_cast<std::size_t>(seen - nodes.begin());
                double c = std::numeric_limits<double>::infinity();
                for (std::size_t k = start; k < path.size(); ++k)
                    c = std::min(c, rem[static_cast<Eigen::Index>(path[k])]);
                for (std::size_t k = start; k < path.size(); ++k)
                    rem[static_cast<Eigen::Index>(path[k])] -= c;
                path.resize(start);
                nodes.resize(start + 1);
                continue;
            }
            nodes.push_back(at);
        }
        if (stuck)
            break;
        double f = std::numeric_limits<double>::infinity();
        for (auto a : path)
            f = std::min(f, rem[static_cast<Eigen::Index>(a)]);
        for (auto a : path)
            rem[static_cast<Eigen::Index>(a)] -= f;
        out.push_back({Route{od.index, path}, f});
        if (out.size() > max_routes)
            throw Error(ErrorCode::RouteEnumerationExceeded,
                        "flow decomposition needs more than " + std::to_string(max_routes) + " routes");
    }
    return out;
}

// Every route carrying more than tol * demand costs at most (1 + tol) times
// the cheapest route of its OD pair.
inline bool wardrop_route_check(const Network& net, const std::vector<ODPair>& ods, const LatencyCoefficients& coeffs,
                                const std::vector<FlowVector>& od_flows, const DemandVector& demands, double tol,
                                std::size_t max_routes = 10000)
{
    if (od_flows.size() != ods.size() || demands.size() != ods.size())
        throw Error(ErrorCode::DimensionMismatch, "per-OD flows / demands do not match OD set");
    FlowVector total = FlowVector::Zero(static_cast<Eigen::Index>(net.num_links()));
    for (const auto& xw : od_flows)
        total += xw;
    CostVector t = link_travel_time(net, coeffs, total);
    for (std::size_t w = 0; w < ods.size(); ++w) {
        const double threshold = tol * std::max(demands[w], 1e-12);
        const double cheapest = route_cost(shortest_route(net, t, ods[w]), t);
        for (const auto& rf : decompose_od_flow(net, ods[w], od_flows[w], threshold, max_routes))
            if (rf.flow > threshold && route_cost(rf.route, t) > (1.0 + tol) * cheapest)
                return false;
    }
    return true;
}

inline bool wardrop_route_check(const Network& net, const std::vector<ODPair>& ods, const LatencyCoefficients& coeffs,
                                const FlowVector& flow, const DemandVector& demands, double tol,
                                std::size_t max_routes = 10000)
{
    if (ods.size() != 1)
        throw Error(ErrorCode::InvalidArgument, "aggregate link flows identify routes only for a single OD pair");
    return wardrop_route_check(net, ods, coeffs, std::vector<FlowVector>{flow}, demands, tol, max_routes);
}

} // namespace tapinv
