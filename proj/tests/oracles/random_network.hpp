#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <set>

#include "route_simplex.hpp"
#include "tapinv/latency.hpp"
#include "tapinv/netcore.hpp"

namespace oracle {

struct RandomInstance {
    std::shared_ptr<tapinv::Network> net;
    std::vector<std::pair<int, int>> od;
    std::vector<double> demand;
    tapinv::LatencyCoefficients beta;
};

// Up to 8 nodes; every OD pair has between 1 and 3 simple routes.
inline RandomInstance random_instance(std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    for (;;) {
        const int nodes = std::uniform_int_distribution<int>(3, 8)(rng);
        std::set<std::pair<int, int>> arcs;
        auto add_path = [&](int o, int d) {
            const int hops = std::uniform_int_distribution<int>(0, std::min(3, nodes - 2))(rng);
            int u = o;
            std::set<int> used{o, d};
            for (int k = 0; k < hops; ++k) {
                int v = std::uniform_int_distribution<int>(1, nodes)(rng);
                if (used.count(v))
                    continue;
                used.insert(v);
                arcs.insert({u, v});
                u = v;
            }
            arcs.insert({u, d});
        };
        const int num_od = ud(rng) < 0.3 ? 2 : 1;
        std::vector<std::pair<int, int>> od;
        while (static_cast<int>(od.size()) < num_od) {
            const int o = std::uniform_int_distribution<int>(1, nodes)(rng);
            const int d = std::uniform_int_distribution<int>(1, nodes)(rng);
            if (o == d || std::find(od.begin(), od.end(), std::make_pair(o, d)) != od.end())
                continue;
            od.emplace_back(o, d);
        }
        for (auto [o, d] : od) {
            const int paths = std::uniform_int_distribution<int>(1, 3)(rng);
            for (int p = 0; p < paths; ++p)
                add_path(o, d);
        }
        std::vector<tapinv::LinkParams> links;
        for (auto [t, h] : arcs)
            links.push_back({t, h, 1.0 + 19.0 * ud(rng), 100.0 + 900.0 * ud(rng)});
        std::shared_ptr<tapinv::Network> net;
        try {
            net = std::make_shared<tapinv::Network>(tapinv::build_network(links));
        } catch (const tapinv::Error&) {
            continue;
        }
        bool ok = true;
        for (auto [o, d] : od) {
            const auto n = simple_paths(*net, net->node_index(o), net->node_index(d)).size();
            ok = ok && n >= 1 && n <= 3;
        }
        if (!ok)
            continue;
        const int degree = std::uniform_int_distribution<int>(1, 4)(rng);
        Eigen::VectorXd b(degree + 1);
        b[0] = 1.0;
        for (int i = 1; i <= degree; ++i)
            b[i] = 0.05 + 1.5 * ud(rng);
        std::vector<double> demand;
        for (std::size_t w = 0; w < od.size(); ++w)
            demand.push_back(100.0 + 1400.0 * ud(rng));
        return {net, od, demand, tapinv::LatencyCoefficients(b)};
    }
}

} // namespace oracle
