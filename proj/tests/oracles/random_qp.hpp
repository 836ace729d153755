#pragma once

#include <cstdint>
#include <random>

#include "tapinv/solver.hpp"

namespace oracle {

// Strictly convex QP with a strictly feasible point; bounds on some variables.
// At most 12 inequality rows once bounds are counted. size > 0 fixes n.
inline tapinv::ConicProblem random_qp(std::uint64_t seed, int size = 0)
{
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> dn(2, 7);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    const int drawn = dn(rng);
    const int n = size > 0 ? size : drawn;
    const int me = std::uniform_int_distribution<int>(0, std::min(2, n - 1))(rng);
    const int nb = std::uniform_int_distribution<int>(0, std::min(n, 4))(rng);
    const int m = std::uniform_int_distribution<int>(1, 12 - 2 * nb)(rng);

    tapinv::ConicProblem p(n);
    Eigen::MatrixXd M(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            M(i, j) = nd(rng);
    const double mag = std::pow(10.0, 2.0 * ud(rng) - 1.0);
    p.P = mag * (M.transpose() * M + 0.05 * Eigen::MatrixXd::Identity(n, n));
    for (int i = 0; i < n; ++i)
        p.q[i] = 3.0 * mag * nd(rng);
    Eigen::VectorXd x0(n);
    for (int i = 0; i < n; ++i)
        x0[i] = nd(rng);
    p.G.resize(m, n);
    p.h.resize(m);
    for (int r = 0; r < m; ++r) {
        for (int j = 0; j < n; ++j)
            p.G(r, j) = nd(rng);
        p.h[r] = p.G.row(r).dot(x0) + 0.05 + ud(rng);
    }
    p.A.resize(me, n);
    p.b.resize(me);
    for (int r = 0; r < me; ++r) {
        for (int j = 0; j < n; ++j)
            p.A(r, j) = nd(rng);
        p.b[r] = p.A.row(r).dot(x0);
    }
    if (nb > 0) {
        const double inf = std::numeric_limits<double>::infinity();
        p.lower = Eigen::VectorXd::Constant(n, -inf);
        p.upper = Eigen::VectorXd::Constant(n, inf);
        for (int i = 0; i < nb; ++i) {
            p.lower[i] = x0[i] - 0.05 - 0.5 * ud(rng);
            p.upper[i] = x0[i] + 0.05 + 0.5 * ud(rng);
        }
    }
    return p;
}

// Bounds folded into G x <= h so the enumeration oracle sees plain rows.
inline void as_rows(const tapinv::ConicProblem& p, Eigen::MatrixXd& G, Eigen::VectorXd& h)
{
    const Eigen::Index n = p.num_variables();
    std::vector<std::pair<Eigen::RowVectorXd, double>> rows;
    for (Eigen::Index r = 0; r < p.G.rows(); ++r)
        rows.emplace_back(p.G.row(r), p.h[r]);
    for (Eigen::Index i = 0; i < p.lower.size(); ++i)
        if (std::isfinite(p.lower[i])) {
            Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(n);
            e[i] = -1.0;
            rows.emplace_back(e, -p.lower[i]);
        }
    for (Eigen::Index i = 0; i < p.upper.size(); ++i)
        if (std::isfinite(p.upper[i])) {
            Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(n);
            e[i] = 1.0;
            rows.emplace_back(e, p.upper[i]);
        }
    G.resize(static_cast<Eigen::Index>(rows.size()), n);
    h.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        G.row(static_cast<Eigen::Index>(r)) = rows[r].first;
        h[static_cast<Eigen::Index>(r)] = rows[r].second;
    }
}

} // namespace oracle
