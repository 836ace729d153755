#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "tapinv/latency.hpp"
#include "tapinv/netcore.hpp"
#include "tapinv/solver.hpp"

namespace tapinv {

// One observed equilibrium: flows on a measured subset of links together with
// the OD set and demands that produced them.
struct Snapshot {
    int id = 0;
    std::shared_ptr<const Network> network;
    std::vector<std::size_t> observed_links; // link indices into *network
    Vector flows;                            // aligned with observed_links
    std::vector<ODPair> od_pairs;
    DemandVector demands;

    void validate() const
    {
        if (!network)
            throw Error(ErrorCode::InvalidArgument, "snapshot " + std::to_string(id) + " has no network");
        if (observed_links.empty())
            throw Error(ErrorCode::EmptySnapshot, "snapshot " + std::to_string(id) + " has no measured links");
        if (static_cast<std::size_t>(flows.size()) != observed_links.size())
            throw Error(ErrorCode::InconsistentDimensions,
                        "snapshot " + std::to_string(id) + ": flows do not match measured links");
        if (demands.size() != od_pairs.size())
            throw Error(ErrorCode::InconsistentDimensions,
                        "snapshot " + std::to_string(id) + ": demands do not match OD pairs");
        std::vector<std::size_t> sorted = observed_links;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw Error(ErrorCode::InconsistentDimensions,
                        "snapshot " + std::to_string(id) + ": repeated measured link");
        for (auto a : observed_links)
            if (a >= network->num_links())
                throw Error(ErrorCode::InconsistentDimensions,
                            "snapshot " + std::to_string(id) + ": link index out of range");
        for (Eigen::Index i = 0; i < flows.size(); ++i)
            if (!(flows[i] >= 0.0) || !std::isfinite(flows[i]))
                throw Error(ErrorCode::InvalidArgument,
                            "snapshot " + std::to_string(id) + ": flows must be finite and >= 0");
    }
};

// Snapshot measuring every link of the network.
inline Snapshot full_snapshot(int id, std::shared_ptr<const Network> net, const FlowVector& flow,
                              std::vector<ODPair> ods, DemandVector demands)
{
    Snapshot s;
    s.id = id;
    s.network = std::move(net);
    for (std::size_t a = 0; a < s.network->num_links(); ++a)
        s.observed_links.push_back(a);
    s.flows = flow;
    s.od_pairs = std::move(ods);
    s.demands = std::move(demands);
    return s;
}

enum class RowKind { dual_feasibility, gap, monotonicity, epsilon_nonneg, beta_nonneg, potential_nonneg };

inline std::string_view to_string(RowKind k)
{
    switch (k) {
    case RowKind::dual_feasibility: return "dual_feasibility";
    case RowKind::gap: return "gap";
    case RowKind::monotonicity: return "monotonicity";
    case RowKind::epsilon_nonneg: return "epsilon_nonneg";
    case RowKind::beta_nonneg: return "beta_nonneg";
    case RowKind::potential_nonneg: return "potential_nonneg";
    }
    return "unknown";
}

// Row provenance. Link fields hold link ids; -1 where not applicable.
struct RowTag {
    RowKind kind;
    int snapshot = -1;
    int od = -1;
    int link = -1;
    int link_upper = -1;       // monotonicity: the link with the larger ratio
    int snapshot_upper = -1;   // monotonicity: its snapshot
    int node = -1;             // potential_nonneg: node id
    int coefficient = -1;      // beta_nonneg: i in beta_i
};

// Node potentials of one OD pair in one snapshot. The origin is pinned to 0
// and omitted; only nodes reachable from it over measured links get a variable.
struct PotentialBlock {
    int snapshot;
    std::size_t od;
    std::vector<std::size_t> nodes; // node indices
    Eigen::Index offset;            // first column in the y block
};

// Rows A y + B beta + C eps + h <= 0 with objective eps'eps + beta'H beta.
// Variable order in to_conic(): [beta_1..beta_n | y | eps].
struct CompactQP {
    int degree = 0;
    Matrix H;
    Matrix A_mat;
    Matrix B_mat;
    Matrix C_mat;
    Vector h_vec;
    std::vector<RowTag> rows;
    std::vector<PotentialBlock> blocks;
    std::vector<double> gap_scale; // per snapshot: total demand (1 when zero)
    std::vector<Snapshot> snapshots;

    Eigen::Index num_rows() const { return h_vec.size(); }
    Eigen::Index num_beta() const { return B_mat.cols(); }
    Eigen::Index num_y() const { return A_mat.cols(); }
    Eigen::Index num_eps() const { return C_mat.cols(); }

    std::size_t count(RowKind k) const
    {
        return static_cast<std::size_t>(
            std::count_if(rows.begin(), rows.end(), [k](const RowTag& t) { return t.kind == k; }));
    }

    Vector row_values(const Vector& beta_tail, const Vector& y, const Vector& eps) const
    {
        return A_mat * y + B_mat * beta_tail + C_mat * eps + h_vec;
    }

    ConicProblem to_conic() const
    {
        const Eigen::Index nb = num_beta(), ny = num_y(), ne = num_eps(), n = nb + ny + ne;
        ConicProblem p(n);
        p.P.topLeftCorner(nb, nb) = 2.0 * H;
        p.P.bottomRightCorner(ne, ne) = 2.0 * Matrix::Identity(ne, ne);
        p.G.resize(num_rows(), n);
        p.G << B_mat, A_mat, C_mat;
        p.h = -h_vec;
        return p;
    }
};

inline CompactQP assemble_qp(const std::vector<Snapshot>& snapshots, const KernelConfig& cfg)
{
    cfg.validate();
    if (snapshots.empty())
        throw Error(ErrorCode::EmptySnapshot, "no snapshots given");
    for (const auto& s : snapshots)
        s.validate();

    const int n = cfg.degree;
    CompactQP qp;
    qp.degree = n;
    qp.H = rkhs_norm_matrix(cfg);
    qp.snapshots = snapshots;
    const auto K = static_cast<Eigen::Index>(snapshots.size());

    // Potential variables per (snapshot, OD).
    Eigen::Index ny = 0;
    for (std::size_t k = 0; k < snapshots.size(); ++k) {
        const auto& s = snapshots[k];
        const Network& net = *s.network;
        std::vector<char> measured(net.num_links(), 0);
        for (auto a : s.observed_links)
            measured[a] = 1;
        for (std::size_t w = 0; w < s.od_pairs.size(); ++w) {
            const std::size_t o = net.node_index(s.od_pairs[w].origin);
            std::vector<char> seen(net.num_nodes(), 0);
            std::vector<std::size_t> stack{o};
            seen[o] = 1;
            while (!stack.empty()) {
                std::size_t u = stack.back();
                stack.pop_back();
                for (auto a : net.out_links(u))
                    if (measured[a] && !seen[net.link(a).head_index]) {
                        seen[net.link(a).head_index] = 1;
                        stack.push_back(net.link(a).head_index);
                    }
            }
            const std::size_t dest = net.node_index(s.od_pairs[w].destination);
            if (!seen[dest] && s.demands[w] > 0.0)
                throw Error(ErrorCode::InconsistentDimensions,
                            "snapshot " + std::to_string(s.id) + ": OD pair " + std::to_string(w) +
                                " has demand but its destination is unreachable over measured links");
            PotentialBlock blk{static_cast<int>(k), w, {}, ny};
            for (std::size_t v = 0; v < net.num_nodes(); ++v)
                if (seen[v] && v != o)
                    blk.nodes.push_back(v);
            ny += static_cast<Eigen::Index>(blk.nodes.size());
            qp.blocks.push_back(std::move(blk));
        }
    }

    struct Row {
        Vector a, b, c;
        double h;
        RowTag tag;
    };
    std::vector<Row> rows;
    auto blank = [&](RowTag tag) {
        return Row{Vector::Zero(ny), Vector::Zero(n), Vector::Zero(K), 0.0, tag};
    };
    auto y_col = [](const PotentialBlock& blk, std::size_t node) -> Eigen::Index {
        auto it = std::find(blk.nodes.begin(), blk.nodes.end(), node);
        if (it == blk.nodes.end())
            return -1;
        return blk.offset + static_cast<Eigen::Index>(it - blk.nodes.begin());
    };

    std::size_t bi = 0;
    for (std::size_t k = 0; k < snapshots.size(); ++k) {
        const auto& s = snapshots[k];
        const Network& net = *s.network;
        const Vector& t0 = net.free_flow_times();
        const Vector& m = net.capacities();
        const std::size_t first_block = bi;

        // y_head - y_tail - t0 sum_i beta_i r^i - t0 <= 0
        for (std::size_t w = 0; w < s.od_pairs.size(); ++w, ++bi) {
            const auto& blk = qp.blocks[bi];
            for (std::size_t j = 0; j < s.observed_links.size(); ++j) {
                const std::size_t a = s.observed_links[j];
                const auto ai = static_cast<Eigen::Index>(a);
                const Link& l = net.link(a);
                Row r = blank({RowKind::dual_feasibility, s.id, static_cast<int>(w), l.id});
                Eigen::Index ct = y_col(blk, l.tail_index);
                Eigen::Index ch = y_col(blk, l.head_index);
                const bool tail_free = ct < 0 && l.tail_index != net.node_index(s.od_pairs[w].origin);
                if (!tail_free) {
                    if (ch >= 0)
                        r.a[ch] += 1.0;
                    if (ct >= 0)
                        r.a[ct] -= 1.0;
                }
                const double ratio = s.flows[static_cast<Eigen::Index>(j)] / m[ai];
                double p = 1.0;
                for (int i = 1; i <= n; ++i) {
                    p *= ratio;
                    r.b[i - 1] = -t0[ai] * p;
                }
                r.h = -t0[ai];
                rows.push_back(std::move(r));
            }
        }

        // (sum_a t0 x f(r) - sum_w d_w y_dest) / s_k - eps_k <= 0
        const double total = s.demands.total();
        const double scale = total > 0.0 ? total : 1.0;
        qp.gap_scale.push_back(scale);
        Row g = blank({RowKind::gap, s.id});
        for (std::size_t j = 0; j < s.observed_links.size(); ++j) {
            const auto ai = static_cast<Eigen::Index>(s.observed_links[j]);
            const double x = s.flows[static_cast<Eigen::Index>(j)];
            const double ratio = x / m[ai];
            double p = 1.0;
            for (int i = 1; i <= n; ++i) {
                p *= ratio;
                g.b[i - 1] += t0[ai] * x * p / scale;
            }
            g.h += t0[ai] * x / scale;
        }
        for (std::size_t w = 0; w < s.od_pairs.size(); ++w) {
            const auto& blk = qp.blocks[first_block + w];
            Eigen::Index cd = y_col(blk, net.node_index(s.od_pairs[w].destination));
            if (cd >= 0)
                g.a[cd] -= s.demands[w] / scale;
        }
        g.c[static_cast<Eigen::Index>(k)] = -1.0;
        rows.push_back(std::move(g));
    }

    // f(r_j) - f(r_{j+1}) <= 0 for consecutive ratios over all snapshots.
    struct Point {
        double ratio;
        int snapshot;
        int link;
    };
    std::vector<Point> pts;
    for (const auto& s : snapshots)
        for (std::size_t j = 0; j < s.observed_links.size(); ++j) {
            const auto a = s.observed_links[j];
            pts.push_back({s.flows[static_cast<Eigen::Index>(j)] / s.network->capacities()[static_cast<Eigen::Index>(a)],
                           s.id, s.network->link(a).id});
        }
    std::stable_sort(pts.begin(), pts.end(), [](const Point& x, const Point& y) { return x.ratio < y.ratio; });
    for (std::size_t j = 0; j + 1 < pts.size(); ++j) {
        RowTag tag{RowKind::monotonicity, pts[j].snapshot, -1, pts[j].link, pts[j + 1].link, pts[j + 1].snapshot};
        Row r = blank(tag);
        double lo = 1.0, hi = 1.0;
        for (int i = 1; i <= n; ++i) {
            lo *= pts[j].ratio;
            hi *= pts[j + 1].ratio;
            r.b[i - 1] = lo - hi;
        }
        rows.push_back(std::move(r));
    }

    for (Eigen::Index k = 0; k < K; ++k) {
        Row r = blank({RowKind::epsilon_nonneg, snapshots[static_cast<std::size_t>(k)].id});
        r.c[k] = -1.0;
        rows.push_back(std::move(r));
    }
    for (int i = 1; i <= n; ++i) {
        RowTag tag{RowKind::beta_nonneg};
        tag.coefficient = i;
        Row r = blank(tag);
        r.b[i - 1] = -1.0;
        rows.push_back(std::move(r));
    }
    for (const auto& blk : qp.blocks) {
        const auto& s = snapshots[static_cast<std::size_t>(blk.snapshot)];
        for (std::size_t j = 0; j < blk.nodes.size(); ++j) {
            RowTag tag{RowKind::potential_nonneg, s.id, static_cast<int>(blk.od)};
            tag.node = s.network->node_ids()[blk.nodes[j]];
            Row r = blank(tag);
            r.a[blk.offset + static_cast<Eigen::Index>(j)] = -1.0;
            rows.push_back(std::move(r));
        }
    }

    const auto R = static_cast<Eigen::Index>(rows.size());
    qp.A_mat.resize(R, ny);
    qp.B_mat.resize(R, n);
    qp.C_mat.resize(R, K);
    qp.h_vec.resize(R);
    for (Eigen::Index i = 0; i < R; ++i) {
        auto& r = rows[static_cast<std::size_t>(i)];
        qp.A_mat.row(i) = r.a.transpose();
        qp.B_mat.row(i) = r.b.transpose();
        qp.C_mat.row(i) = r.c.transpose();
        qp.h_vec[i] = r.h;
        qp.rows.push_back(r.tag);
    }
    return qp;
}

struct InvViSolution {
    LatencyCoefficients beta;
    Vector beta_tail;                              // unclamped solver values
    Vector y;                                      // stacked potential variables
    std::vector<std::vector<Vector>> duals_y;      // [snapshot][od] over all network nodes
    Vector epsilons;                               // per-vehicle (row-normalized) gaps
    Vector epsilons_raw;                           // total excess time, epsilons * total demand
    Vector nu;                                     // row multipliers
    double objective_value = 0.0;
    double kkt_residual = 0.0;
    SolveReport report;
};

struct KktReport {
    double eps_stationarity = 0.0;  // |2 eps + C' nu|
    double beta_stationarity = 0.0; // |2 H beta + B' nu|
    double y_stationarity = 0.0;    // |A' nu|
    double complementarity = 0.0;   // max |nu_i row_i|
    double primal_feasibility = 0.0;
    double dual_sign = 0.0;
    double strong_duality_gap = 0.0;

    double max_stationarity() const { return std::max({eps_stationarity, beta_stationarity, y_stationarity}); }
};

inline double primal_objective(const CompactQP& qp, const Vector& beta_tail, const Vector& eps)
{
    return eps.squaredNorm() + beta_tail.dot(qp.H * beta_tail);
}

namespace detail {

inline double dual_value(const CompactQP& qp, const Vector& nu)
{
    Vector cn = qp.C_mat.transpose() * nu;
    Vector bn = qp.B_mat.transpose() * nu;
    return -0.25 * cn.squaredNorm() - 0.25 * bn.dot(qp.H.ldlt().solve(bn)) + qp.h_vec.dot(nu);
}

} // namespace detail

// D(nu) = -1/4 nu'CC'nu - 1/4 nu'B H^-1 B'nu + h'nu, for nu >= 0 with A'nu = 0.
inline double dual_objective(const CompactQP& qp, const Vector& nu, double tol = 1e-6)
{
    if (nu.size() != qp.num_rows())
        throw Error(ErrorCode::DimensionMismatch, "multiplier vector length != number of rows");
    const double scale = std::max(1.0, nu.size() ? nu.cwiseAbs().maxCoeff() : 0.0);
    if (nu.size() && nu.minCoeff() < -tol * scale)
        throw Error(ErrorCode::InfeasibleDual, "multipliers must be >= 0");
    if (qp.num_y() && (qp.A_mat.transpose() * nu).cwiseAbs().maxCoeff() > tol * scale)
        throw Error(ErrorCode::InfeasibleDual, "A'nu != 0");
    return detail::dual_value(qp, nu);
}

inline KktReport kkt_residuals(const CompactQP& qp, const Vector& beta_tail, const Vector& y, const Vector& eps,
                               const Vector& nu)
{
    if (beta_tail.size() != qp.num_beta() || y.size() != qp.num_y() || eps.size() != qp.num_eps() ||
        nu.size() != qp.num_rows())
        throw Error(ErrorCode::DimensionMismatch, "KKT candidate does not match the QP");
    KktReport r;
    auto nrm = [](const Vector& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; };
    r.eps_stationarity = nrm(2.0 * eps + qp.C_mat.transpose() * nu);
    r.beta_stationarity = nrm(2.0 * qp.H * beta_tail + qp.B_mat.transpose() * nu);
    r.y_stationarity = nrm(qp.A_mat.transpose() * nu);
    Vector rows = qp.row_values(beta_tail, y, eps);
    r.complementarity = nrm(rows.cwiseProduct(nu));
    r.primal_feasibility = rows.size() ? std::max(0.0, rows.maxCoeff()) : 0.0;
    r.dual_sign = nu.size() ? std::max(0.0, -nu.minCoeff()) : 0.0;
    r.strong_duality_gap = primal_objective(qp, beta_tail, eps) - detail::dual_value(qp, nu);
    return r;
}

inline KktReport kkt_residuals(const CompactQP& qp, const InvViSolution& sol, const Vector& nu)
{
    return kkt_residuals(qp, sol.beta_tail, sol.y, sol.epsilons, nu);
}

inline InvViSolution solve_inverse_vi(const CompactQP& qp, const SolverOptions& opt = {})
{
    ConicProblem prob = qp.to_conic();
    auto run = [&] {
        SolveReport r = solve(prob, opt);
        if (r.status == SolveStatus::infeasible)
            throw Error(ErrorCode::Infeasible, "inverse-VI QP reported infeasible");
        if (r.status != SolveStatus::optimal)
            throw Error(ErrorCode::SolverStalled, "inverse-VI QP did not converge in " +
                                                      std::to_string(r.iterations) + " iterations");
        return r;
    };
    SolveReport rep = run();
    // Small objectives sit under the absolute solver tolerances, leaving eps
    // well above its optimum. Re-solve with the objective scaled to order one.
    const double obj = 0.5 * rep.x.dot(prob.P * rep.x);
    if (obj > 0.0 && obj < 1e-2) {
        const double sigma = std::min(1.0 / obj, 1e10);
        prob.P *= sigma;
        rep = run();
        rep.z_ineq /= sigma;
        rep.y_eq /= sigma;
        rep.z_lower /= sigma;
        rep.z_upper /= sigma;
        rep.z_quad /= sigma;
        rep.objective /= sigma;
        rep.dual_residual /= sigma;
        rep.duality_gap /= sigma;
        for (auto& it : rep.history) {
            it.primal_objective /= sigma;
            it.dual_objective /= sigma;
            it.dual_residual /= sigma;
        }
    }
    const Eigen::Index nb = qp.num_beta(), ny = qp.num_y(), ne = qp.num_eps();
    InvViSolution sol;
    sol.beta_tail = rep.x.head(nb);
    sol.y = rep.x.segment(nb, ny);
    sol.epsilons = rep.x.tail(ne);
    sol.beta = LatencyCoefficients::from_tail_clamped(sol.beta_tail);
    sol.nu = rep.z_ineq;
    sol.epsilons_raw = sol.epsilons;
    for (Eigen::Index k = 0; k < ne; ++k)
        sol.epsilons_raw[k] *= qp.gap_scale[static_cast<std::size_t>(k)];
    sol.objective_value = primal_objective(qp, sol.beta_tail, sol.epsilons);

    sol.duals_y.resize(qp.snapshots.size());
    for (const auto& blk : qp.blocks) {
        const auto& s = qp.snapshots[static_cast<std::size_t>(blk.snapshot)];
        Vector v = Vector::Zero(static_cast<Eigen::Index>(s.network->num_nodes()));
        for (std::size_t j = 0; j < blk.nodes.size(); ++j)
            v[static_cast<Eigen::Index>(blk.nodes[j])] = sol.y[blk.offset + static_cast<Eigen::Index>(j)];
        sol.duals_y[static_cast<std::size_t>(blk.snapshot)].push_back(std::move(v));
    }
    KktReport kkt = kkt_residuals(qp, sol, sol.nu);
    sol.kkt_residual = std::max({kkt.max_stationarity(), kkt.primal_feasibility, kkt.dual_sign});
    sol.report = std::move(rep);
    return sol;
}

} // namespace tapinv
