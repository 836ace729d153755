#pragma once

#include <memory>
#include <vector>

#include "tapinv/netcore.hpp"

namespace fixture {

// Calibrated Braess links: f(r) = 1 + r and demand 4000 give (2080, 2080, 0, 1920, 1920).
inline tapinv::Network braess()
{
    return tapinv::build_network(std::vector<tapinv::LinkParams>{
        {1, 3, 96, 2000}, {3, 2, 100, 2000}, {3, 4, 20, 1000}, {1, 4, 100, 2000}, {4, 2, 104, 2000}});
}

inline std::shared_ptr<const tapinv::Network> braess_ptr()
{
    return std::make_shared<const tapinv::Network>(braess());
}

inline tapinv::Network parallel_links(double t0 = 10.0, double cap = 100.0)
{
    return tapinv::build_network(std::vector<tapinv::LinkParams>{{1, 2, t0, cap}, {1, 2, t0, cap}});
}

inline const tapinv::FlowVector& braess_truth()
{
    static const tapinv::FlowVector x = (tapinv::FlowVector(5) << 2080, 2080, 0, 1920, 1920).finished();
    return x;
}

} // namespace fixture
