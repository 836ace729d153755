#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "tapinv/error.hpp"

namespace tapinv {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using FlowVector = Eigen::VectorXd;
using CostVector = Eigen::VectorXd;

struct LinkSpec {
    int id = 0;
    int tail = 0;
    int head = 0;
    double free_flow_time = 1.0;
    double capacity = 1.0;
};

struct Link {
    int id;
    int tail;
    int head;
    std::size_t tail_index;
    std::size_t head_index;
    double free_flow_time;
    double capacity;
};

// weak: one connected piece when directions are ignored; strong: every node
// reaches every other node.
enum class Connectivity { weak, strong };

class Network {
public:
    // Links keep insertion order; that order indexes every per-link vector.
    explicit Network(const std::vector<LinkSpec>& specs, Connectivity check = Connectivity::weak)
    {
        if (specs.empty())
            throw Error(ErrorCode::InvalidArgument, "network needs at least one link");

        std::vector<int> ids;
        for (const auto& s : specs) {
            if (!(s.free_flow_time > 0.0) || !std::isfinite(s.free_flow_time))
                throw Error(ErrorCode::NonpositiveParameter,
                            "link " + std::to_string(s.id) + ": free-flow time must be > 0");
            if (!(s.capacity > 0.0) || !std::isfinite(s.capacity))
                throw Error(ErrorCode::NonpositiveParameter,
                            "link " + std::to_string(s.id) + ": capacity must be > 0");
            if (s.tail == s.head)
                throw Error(ErrorCode::InvalidArgument,
                            "link " + std::to_string(s.id) + " is a self-loop");
            if (std::find(ids.begin(), ids.end(), s.id) != ids.end())
                throw Error(ErrorCode::DuplicateLink, "link id " + std::to_string(s.id) + " repeated");
            ids.push_back(s.id);
            node_ids_.push_back(s.tail);
            node_ids_.push_back(s.head);
        }
        std::sort(node_ids_.begin(), node_ids_.end());
        node_ids_.erase(std::unique(node_ids_.begin(), node_ids_.end()), node_ids_.end());
        for (std::size_t i = 0; i < node_ids_.size(); ++i)
            node_lookup_[node_ids_[i]] = i;

        t0_.resize(static_cast<Eigen::Index>(specs.size()));
        cap_.resize(static_cast<Eigen::Index>(specs.size()));
        out_.assign(node_ids_.size(), {});
        in_.assign(node_ids_.size(), {});
        std::vector<Eigen::Triplet<double>> trip;
        for (std::size_t a = 0; a < specs.size(); ++a) {
            const auto& s = specs[a];
            Link l{s.id, s.tail, s.head, node_lookup_.at(s.tail), node_lookup_.at(s.head),
                   s.free_flow_time, s.capacity};
            links_.push_back(l);
            link_lookup_[s.id] = a;
            t0_[static_cast<Eigen::Index>(a)] = s.free_flow_time;
            cap_[static_cast<Eigen::Index>(a)] = s.capacity;
            out_[l.tail_index].push_back(a);
            in_[l.head_index].push_back(a);
            trip.emplace_back(static_cast<int>(l.head_index), static_cast<int>(a), 1.0);
            trip.emplace_back(static_cast<int>(l.tail_index), static_cast<int>(a), -1.0);
        }
        auto by_id = [this](std::size_t x, std::size_t y) { return links_[x].id < links_[y].id; };
        for (auto& v : out_)
            std::sort(v.begin(), v.end(), by_id);
        for (auto& v : in_)
            std::sort(v.begin(), v.end(), by_id);
        incidence_.resize(static_cast<Eigen::Index>(node_ids_.size()),
                          static_cast<Eigen::Index>(links_.size()));
        incidence_.setFromTriplets(trip.begin(), trip.end());

        if (check == Connectivity::strong && (!reaches_all(true) || !reaches_all(false)))
            throw Error(ErrorCode::DisconnectedGraph, "network is not strongly connected");
        if (check == Connectivity::weak && !reaches_all_undirected())
            throw Error(ErrorCode::DisconnectedGraph, "network has more than one connected component");
    }

    std::size_t num_nodes() const { return node_ids_.size(); }
    std::size_t num_links() const { return links_.size(); }
    const std::vector<int>& node_ids() const { return node_ids_; }
    const std::vector<Link>& links() const { return links_; }
    const Link& link(std::size_t a) const { return links_.at(a); }
    const Vector& free_flow_times() const { return t0_; }
    const Vector& capacities() const { return cap_; }
    const Eigen::SparseMatrix<double>& incidence() const { return incidence_; }
    const std::vector<std::size_t>& out_links(std::size_t node) const { return out_.at(node); }
    const std::vector<std::size_t>& in_links(std::size_t node) const { return in_.at(node); }

    bool has_node(int id) const { return node_lookup_.count(id) > 0; }

    std::size_t node_index(int id) const
    {
        auto it = node_lookup_.find(id);
        if (it == node_lookup_.end())
            throw Error(ErrorCode::UnknownNode, "node " + std::to_string(id) + " not in network");
        return it->second;
    }

    std::optional<std::size_t> link_index(int id) const
    {
        auto it = link_lookup_.find(id);
        if (it == link_lookup_.end())
            return std::nullopt;
        return it->second;
    }

private:
    bool reaches_all(bool forward) const
    {
        std::vector<char> seen(node_ids_.size(), 0);
        std::vector<std::size_t> stack{0};
        seen[0] = 1;
        while (!stack.empty()) {
            std::size_t u = stack.back();
            stack.pop_back();
            for (std::size_t a : forward ? out_[u] : in_[u]) {
                std::size_t v = forward ? links_[a].head_index : links_[a].tail_index;
                if (!seen[v]) {
                    seen[v] = 1;
                    stack.push_back(v);
                }
            }
        }
        return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
    }

    bool reaches_all_undirected() const
    {
        std::vector<char> seen(node_ids_.size(), 0);
        std::vector<std::size_t> stack{0};
        seen[0] = 1;
        while (!stack.empty()) {
            std::size_t u = stack.back();
            stack.pop_back();
            for (const auto* adj : {&out_[u], &in_[u]})
                for (std::size_t a : *adj)
                    for (std::size_t v : {links_[a].head_index, links_[a].tail_index})
                        if (!seen[v]) {
                            seen[v] = 1;
                            stack.push_back(v);
                        }
        }
        return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
    }

    std::vector<int> node_ids_;
    std::map<int, std::size_t> node_lookup_;
    std::vector<Link> links_;
    std::map<int, std::size_t> link_lookup_;
    Vector t0_;
    Vector cap_;
    std::vector<std::vector<std::size_t>> out_;
    std::vector<std::vector<std::size_t>> in_;
    Eigen::SparseMatrix<double> incidence_;
};

inline Network build_network(const std::vector<LinkSpec>& specs, Connectivity check = Connectivity::weak)
{
    return Network(specs, check);
}

// Link ids default to 1..|A| in the given order.
struct LinkParams {
    int tail;
    int head;
    double free_flow_time;
    double capacity;
};

inline Network build_network(const std::vector<LinkParams>& links, Connectivity check = Connectivity::weak)
{
    std::vector<LinkSpec> specs;
    specs.reserve(links.size());
    for (std::size_t i = 0; i < links.size(); ++i)
        specs.push_back({static_cast<int>(i) + 1, links[i].tail, links[i].head,
                         links[i].free_flow_time, links[i].capacity});
    return Network(specs, check);
}

struct ODPair {
    int origin = 0;
    int destination = 0;
    std::size_t index = 0;
};

inline std::vector<ODPair> make_od_pairs(const Network& net, const std::vector<std::pair<int, int>>& pairs)
{
    std::vector<ODPair> out;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        auto [o, d] = pairs[i];
        if (o == d)
            throw Error(ErrorCode::InvalidArgument,
                        "OD pair " + std::to_string(i) + " has origin == destination");
        net.node_index(o);
        net.node_index(d);
        out.push_back({o, d, i});
    }
    return out;
}

class DemandVector {
public:
    DemandVector() = default;

    explicit DemandVector(Vector values) : values_(std::move(values))
    {
        for (Eigen::Index i = 0; i < values_.size(); ++i)
            if (!(values_[i] >= 0.0) || !std::isfinite(values_[i]))
                throw Error(ErrorCode::InvalidArgument,
                            "demand " + std::to_string(i) + " must be finite and >= 0");
    }

    DemandVector(std::initializer_list<double> values)
        : DemandVector(Vector(Eigen::Map<const Vector>(values.begin(), static_cast<Eigen::Index>(values.size()))))
    {
    }

    std::size_t size() const { return static_cast<std::size_t>(values_.size()); }
    double operator[](std::size_t i) const { return values_[static_cast<Eigen::Index>(i)]; }
    const Vector& values() const { return values_; }
    double total() const { return values_.sum(); }

private:
    Vector values_;
};

struct Route {
    std::size_t od_index = 0;
    std::vector<std::size_t> links;
};

inline std::vector<int> route_link_ids(const Network& net, const Route& r)
{
    std::vector<int> ids;
    for (auto a : r.links)
        ids.push_back(net.link(a).id);
    return ids;
}

inline double route_cost(const Route& r, const CostVector& costs)
{
    double s = 0.0;
    for (auto a : r.links)
        s += costs[static_cast<Eigen::Index>(a)];
    return s;
}

// Sum of unit vectors e_a over the route's links.
inline Vector route_indicator(const Network& net, const Route& r)
{
    Vector v = Vector::Zero(static_cast<Eigen::Index>(net.num_links()));
    for (auto a : r.links)
        v[static_cast<Eigen::Index>(a)] = 1.0;
    return v;
}

// Node-expanded demand: -d at the origin, +d at the destination.
inline Vector node_demand(const Network& net, const ODPair& od, double demand)
{
    Vector v = Vector::Zero(static_cast<Eigen::Index>(net.num_nodes()));
    v[static_cast<Eigen::Index>(net.node_index(od.origin))] -= demand;
    v[static_cast<Eigen::Index>(net.node_index(od.destination))] += demand;
    return v;
}

inline bool is_simple_route(const Network& net, const ODPair& od, const Route& r)
{
    if (r.links.empty())
        return false;
    std::vector<char> seen(net.num_nodes(), 0);
    std::size_t at = net.node_index(od.origin);
    seen[at] = 1;
    for (auto a : r.links) {
        const auto& l = net.link(a);
        if (l.tail_index != at || seen[l.head_index])
            return false;
        at = l.head_index;
        seen[at] = 1;
    }
    return at == net.node_index(od.destination);
}

namespace detail {

inline std::vector<double> dijkstra(const Network& net, const CostVector& costs, std::size_t source, bool forward)
{
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(net.num_nodes(), inf);
    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<Item>> pq;
    dist[source] = 0.0;
    pq.push({0.0, source});
    while (!pq.empty()) {
        auto [d, u] = pq.top();
        pq.pop();
        if (d > dist[u])
            continue;
        for (std::size_t a : forward ? net.out_links(u) : net.in_links(u)) {
            const auto& l = net.link(a);
            std::size_t v = forward ? l.head_index : l.tail_index;
            double nd = d + costs[static_cast<Eigen::Index>(a)];
            if (nd < dist[v]) {
                dist[v] = nd;
                pq.push({nd, v});
            }
        }
    }
    return dist;
}

inline void check_costs(const Network& net, const CostVector& costs)
{
    if (static_cast<std::size_t>(costs.size()) != net.num_links())
        throw Error(ErrorCode::DimensionMismatch, "cost vector length != number of links");
    for (Eigen::Index a = 0; a < costs.size(); ++a)
        if (!(costs[a] >= 0.0) || !std::isfinite(costs[a]))
            throw Error(ErrorCode::InvalidArgument, "link costs must be finite and >= 0");
}

} // namespace detail

// Minimum-cost route; among routes whose cost is within tie_tolerance
// (relative) of the minimum, the lexicographically smallest link-id
// sequence is returned.
inline Route shortest_route(const Network& net, const CostVector& costs, const ODPair& od,
                            double tie_tolerance = 1e-12)
{
    detail::check_costs(net, costs);
    const std::size_t o = net.node_index(od.origin);
    const std::size_t t = net.node_index(od.destination);
    auto from_o = detail::dijkstra(net, costs, o, true);
    auto to_t = detail::dijkstra(net, costs, t, false);
    const double best = from_o[t];
    if (!std::isfinite(best))
        throw Error(ErrorCode::NoPath, "no path from " + std::to_string(od.origin) + " to " +
                                           std::to_string(od.destination));
    const double slack = tie_tolerance * std::max(best, 0.0) + 1e-300;

    std::vector<char> tight(net.num_links(), 0);
    for (std::size_t a = 0; a < net.num_links(); ++a) {
        const auto& l = net.link(a);
        double through = from_o[l.tail_index] + costs[static_cast<Eigen::Index>(a)] + to_t[l.head_index];
        tight[a] = std::isfinite(through) && through <= best + slack;
    }

    std::vector<char> visited(net.num_nodes(), 0);
    auto reaches_target = [&](std::size_t start) {
        if (start == t)
            return true;
        std::vector<char> seen = visited;
        std::vector<std::size_t> stack{start};
        seen[start] = 1;
        while (!stack.empty()) {
            std::size_t u = stack.back();
            stack.pop_back();
            for (std::size_t a : net.out_links(u)) {
                if (!tight[a])
                    continue;
                std::size_t v = net.link(a).head_index;
                if (v == t)
                    return true;
                if (!seen[v]) {
                    seen[v] = 1;
                    stack.push_back(v);
                }
            }
        }
        return false;
    };

    Route r{od.index, {}};
    std::size_t at = o;
    visited[o] = 1;
    while (at != t) {
        bool moved = false;
        for (std::size_t a : net.out_links(at)) {
            if (!tight[a])
                continue;
            std::size_t v = net.link(a).head_index;
            if (visited[v])
                continue;
            visited[v] = 1;
            if (reaches_target(v)) {
                r.links.push_back(a);
                at = v;
                moved = true;
                break;
            }
            visited[v] = 0;
        }
        if (!moved)
            throw Error(ErrorCode::NoPath, "tie-break walk failed to reach destination");
    }
    return r;
}

inline bool reachable(const Network& net, const ODPair& od)
{
    std::vector<char> seen(net.num_nodes(), 0);
    const std::size_t o = net.node_index(od.origin), t = net.node_index(od.destination);
    std::vector<std::size_t> stack{o};
    seen[o] = 1;
    while (!stack.empty()) {
        std::size_t u = stack.back();
        stack.pop_back();
        for (auto a : net.out_links(u)) {
            std::size_t v = net.link(a).head_index;
            if (!seen[v]) {
                seen[v] = 1;
                stack.push_back(v);
            }
        }
    }
    return seen[t] != 0;
}

inline std::vector<FlowVector> all_or_nothing_by_od(const Network& net, const std::vector<ODPair>& ods,
                                                    const CostVector& costs, const DemandVector& demands)
{
    if (demands.size() != ods.size())
        throw Error(ErrorCode::DimensionMismatch, "demand vector length != number of OD pairs");
    std::vector<FlowVector> out;
    for (std::size_t w = 0; w < ods.size(); ++w) {
        FlowVector x = FlowVector::Zero(static_cast<Eigen::Index>(net.num_links()));
        if (demands[w] > 0.0) {
            Route r = shortest_route(net, costs, ods[w]);
            for (auto a : r.links)
                x[static_cast<Eigen::Index>(a)] += demands[w];
        }
        out.push_back(std::move(x));
    }
    return out;
}

inline FlowVector all_or_nothing(const Network& net, const std::vector<ODPair>& ods, const CostVector& costs,
                                 const DemandVector& demands)
{
    FlowVector x = FlowVector::Zero(static_cast<Eigen::Index>(net.num_links()));
    for (const auto& xw : all_or_nothing_by_od(net, ods, costs, demands))
        x += xw;
    return x;
}

// Simple routes ordered by free-flow time, ties by link-id sequence.
inline std::vector<Route> enumerate_routes(const Network& net, const ODPair& od, std::size_t max_routes,
                                           std::size_t enumeration_limit = 1000000)
{
    if (max_routes < 1)
        throw Error(ErrorCode::InvalidArgument, "max_routes must be >= 1");
    const std::size_t o = net.node_index(od.origin);
    const std::size_t t = net.node_index(od.destination);
    std::vector<Route> found;
    std::vector<char> on_path(net.num_nodes(), 0);
    std::vector<std::size_t> path;

    auto dfs = [&](auto&& self, std::size_t u) -> void {
        if (u == t) {
            if (found.size() >= enumeration_limit)
                throw Error(ErrorCode::RouteEnumerationExceeded,
                            "more than " + std::to_string(enumeration_limit) + " simple routes");
            found.push_back({od.index, path});
            return;
        }
        for (std::size_t a : net.out_links(u)) {
            std::size_t v = net.link(a).head_index;
            if (on_path[v])
                continue;
            on_path[v] = 1;
            path.push_back(a);
            self(self, v);
            path.pop_back();
            on_path[v] = 0;
        }
    };
    on_path[o] = 1;
    dfs(dfs, o);

    const Vector& t0 = net.free_flow_times();
    std::stable_sort(found.begin(), found.end(), [&](const Route& x, const Route& y) {
        double cx = route_cost(x, t0), cy = route_cost(y, t0);
        if (cx != cy)
            return cx < cy;
        return route_link_ids(net, x) < route_link_ids(net, y);
    });
    if (found.size() > max_routes)
        found.resize(max_routes);
    return found;
}

// x = sum_w x^w, N x^w = d^w, x >= 0, all within tol.
inline bool assert_feasible(const Network& net, const std::vector<ODPair>& ods, const DemandVector& demands,
                            const FlowVector& flow, const std::vector<FlowVector>& per_od_flows, double tol)
{
    const auto nl = static_cast<Eigen::Index>(net.num_links());
    if (demands.size() != ods.size() || per_od_flows.size() != ods.size() || flow.size() != nl)
        throw Error(ErrorCode::DimensionMismatch, "feasibility check: inconsistent dimensions");
    FlowVector sum = FlowVector::Zero(nl);
    for (std::size_t w = 0; w < ods.size(); ++w) {
        const auto& xw = per_od_flows[w];
        if (xw.size() != nl)
            throw Error(ErrorCode::DimensionMismatch, "per-OD flow length != number of links");
        if ((xw.array() < -tol).any())
            return false;
        Vector residual = net.incidence() * xw - node_demand(net, ods[w], demands[w]);
        if (residual.lpNorm<Eigen::Infinity>() > tol)
            return false;
        sum += xw;
    }
    if ((flow.array() < -tol).any())
        return false;
    return (flow - sum).lpNorm<Eigen::Infinity>() <= tol;
}

} // namespace tapinv
