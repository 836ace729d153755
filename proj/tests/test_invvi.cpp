#include <random>

#include <gtest/gtest.h>

#include "oracles/random_network.hpp"
#include "support.hpp"
#include "tapinv/invvi.hpp"
#include "tapinv/tap.hpp"

using namespace tapinv;

namespace {

TapConfig tight(double gap = 1e-10)
{
    TapConfig c;
    c.gap_tolerance = gap;
    return c;
}

Snapshot braess_snapshot(int id = 0, double demand = 4000.0)
{
    auto net = fixture::braess_ptr();
    auto ods = make_od_pairs(*net, {{1, 2}});
    const TapSolution s = solve_tap(*net, ods, LatencyCoefficients{1.0, 1.0}, DemandVector{demand}, tight());
    return full_snapshot(id, net, s.flow, ods, DemandVector{demand});
}

KernelConfig kernel(int degree, double gamma)
{
    KernelConfig k;
    k.degree = degree;
    k.gamma = gamma;
    return k;
}

struct RoundTrip {
    std::shared_ptr<const Network> net;
    std::vector<ODPair> ods;
    LatencyCoefficients truth;
    std::vector<Snapshot> snaps;
};

// Snapshots at scaled demands of a random instance with a random monotone f.
RoundTrip round_trip_case(std::uint64_t seed, int degree, int count)
{
    auto in = oracle::random_instance(seed);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> coef(0.1, 2.0);
    Vector b(degree + 1);
    b[0] = 1.0;
    for (int i = 1; i <= degree; ++i)
        b[i] = coef(rng);
    RoundTrip r{in.net, make_od_pairs(*in.net, in.od), LatencyCoefficients(b), {}};
    for (int k = 0; k < count; ++k) {
        Vector d(static_cast<Eigen::Index>(in.demand.size()));
        for (std::size_t w = 0; w < in.demand.size(); ++w)
            d[static_cast<Eigen::Index>(w)] = in.demand[w] * (1.0 + 0.5 * k);
        const TapSolution s = solve_tap(*r.net, r.ods, r.truth, DemandVector(d), tight());
        r.snaps.push_back(full_snapshot(k, r.net, s.flow, r.ods, DemandVector(d)));
    }
    return r;
}

double max_relative_flow_error(const Network& net, const std::vector<ODPair>& ods, const LatencyCoefficients& beta,
                               const Snapshot& s)
{
    const TapSolution t = solve_tap(net, ods, beta, s.demands, tight());
    double worst = 0.0;
    for (Eigen::Index a = 0; a < s.flows.size(); ++a) {
        const double floor = 1e-3 * s.demands.total();
        worst = std::max(worst, std::abs(t.flow[a] - s.flows[a]) / std::max(s.flows[a], floor));
    }
    return worst;
}

// Potentials from shortest-route distances over all links under the true f.
Vector truth_potentials(const CompactQP& qp, const Snapshot& s)
{
    const Network& net = *s.network;
    const CostVector t = link_travel_time(net, LatencyCoefficients{1.0, 1.0}, s.flows);
    Vector y(qp.num_y());
    for (const auto& blk : qp.blocks)
        for (std::size_t j = 0; j < blk.nodes.size(); ++j) {
            const int node = net.node_ids()[blk.nodes[j]];
            const ODPair od = make_od_pairs(net, {{s.od_pairs[blk.od].origin, node}})[0];
            y[blk.offset + static_cast<Eigen::Index>(j)] = route_cost(shortest_route(net, t, od), t);
        }
    return y;
}

} // namespace

TEST(AssembleQp, BraessRowCounts)
{
    const CompactQP qp = assemble_qp({braess_snapshot()}, kernel(5, 1.0));
    EXPECT_EQ(qp.count(RowKind::dual_feasibility), 5u);
    EXPECT_EQ(qp.count(RowKind::gap), 1u);
    EXPECT_EQ(qp.count(RowKind::monotonicity), 4u);
    EXPECT_EQ(qp.count(RowKind::epsilon_nonneg), 1u);
    EXPECT_EQ(qp.num_beta(), 5);
    EXPECT_EQ(qp.num_eps(), 1);
    EXPECT_EQ(qp.A_mat.rows(), qp.num_rows());
    EXPECT_EQ(qp.B_mat.rows(), qp.num_rows());
    EXPECT_EQ(qp.C_mat.rows(), qp.num_rows());
    EXPECT_EQ(qp.rows.size(), static_cast<std::size_t>(qp.num_rows()));
}

TEST(AssembleQp, TwoSnapshotsUseTheUnionForMonotonicity)
{
    const Snapshot s = braess_snapshot();
    Snapshot t = s;
    t.id = 1;
    const CompactQP qp = assemble_qp({s, t}, kernel(5, 1.0));
    EXPECT_EQ(qp.count(RowKind::dual_feasibility), 10u);
    EXPECT_EQ(qp.count(RowKind::gap), 2u);
    EXPECT_EQ(qp.count(RowKind::monotonicity), 9u);
    EXPECT_EQ(qp.count(RowKind::epsilon_nonneg), 2u);
}

TEST(AssembleQp, ZeroFlowRowsAreTrivial)
{
    Snapshot s = braess_snapshot();
    s.flows.setZero();
    const CompactQP qp = assemble_qp({s}, kernel(3, 1.0));
    for (Eigen::Index i = 0; i < qp.num_rows(); ++i)
        if (qp.rows[static_cast<std::size_t>(i)].kind == RowKind::monotonicity) {
            EXPECT_EQ(qp.B_mat.row(i).cwiseAbs().maxCoeff(), 0.0);
            EXPECT_EQ(qp.h_vec[i], 0.0);
        }
    EXPECT_EQ(qp.count(RowKind::monotonicity), 4u);
}

TEST(AssembleQp, HIsSymmetricPositiveDefinite)
{
    const CompactQP qp = assemble_qp({braess_snapshot()}, kernel(5, 10.0));
    EXPECT_EQ((qp.H - qp.H.transpose()).cwiseAbs().maxCoeff(), 0.0);
    Eigen::SelfAdjointEigenSolver<Matrix> es(qp.H);
    EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
}

TEST(AssembleQp, Errors)
{
    EXPECT_THROW(assemble_qp({}, kernel(3, 1.0)), Error);
    Snapshot s = braess_snapshot();
    s.flows.conservativeResize(3);
    try {
        assemble_qp({s}, kernel(3, 1.0));
        FAIL() << "expected InconsistentDimensions";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InconsistentDimensions);
    }
}

TEST(AssembleQp, TruthIsFeasibleWithZeroEpsilon)
{
    const Snapshot s = braess_snapshot();
    const CompactQP qp = assemble_qp({s}, kernel(1, 1.0));
    const Vector v = qp.row_values((Vector(1) << 1.0).finished(), truth_potentials(qp, s), Vector::Zero(1));
    EXPECT_LE(v.maxCoeff(), 1e-6);
}

TEST(SolveInverseVi, BraessRoundTrip)
{
    const Snapshot s = braess_snapshot();
    const CompactQP qp = assemble_qp({s}, kernel(5, 1.0));
    const InvViSolution sol = solve_inverse_vi(qp);
    EXPECT_EQ(sol.beta.beta()[0], 1.0);
    EXPECT_GE(sol.beta.beta().minCoeff(), 0.0);
    EXPECT_GE(sol.epsilons.minCoeff(), 0.0);
    EXPECT_LE(sol.kkt_residual, 1e-6);
    const auto ods = make_od_pairs(*s.network, {{1, 2}});
    EXPECT_LE(max_relative_flow_error(*s.network, ods, sol.beta, s), 0.01);
}

TEST(SolveInverseVi, ZeroDemandGivesZeroTail)
{
    Snapshot s = braess_snapshot();
    s.flows.setZero();
    s.demands = DemandVector{0.0};
    const InvViSolution sol = solve_inverse_vi(assemble_qp({s}, kernel(4, 1.0)));
    // Only the norm term remains, with weights down to 1/c^4.
    EXPECT_LE(sol.beta_tail.cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LE(sol.epsilons.cwiseAbs().maxCoeff(), 1e-8);
}

TEST(SolveInverseVi, DuplicatedSnapshotGivesTheSameBeta)
{
    const Snapshot s = braess_snapshot();
    Snapshot t = s;
    t.id = 1;
    const KernelConfig k = kernel(3, 1e-2);
    const InvViSolution one = solve_inverse_vi(assemble_qp({s}, k));
    const InvViSolution two = solve_inverse_vi(assemble_qp({s, t}, k));
    // Two equal epsilons weigh the gap twice, which acts like halving gamma.
    const InvViSolution half = solve_inverse_vi(assemble_qp({s}, kernel(3, 0.5e-2)));
    EXPECT_LE((two.beta.beta() - half.beta.beta()).cwiseAbs().maxCoeff(), 1e-5 * (1.0 + half.beta.beta().norm()));
    EXPECT_NEAR(two.epsilons[0], two.epsilons[1], 1e-8);
    const auto ods = make_od_pairs(*s.network, {{1, 2}});
    EXPECT_LE(max_relative_flow_error(*s.network, ods, one.beta, s), 0.01);
    EXPECT_LE(max_relative_flow_error(*s.network, ods, two.beta, s), 0.01);
}

TEST(SolveInverseVi, RandomRoundTrips)
{
    for (int i = 0; i < 16; ++i) {
        const int degree = 1 + i % 4;
        const RoundTrip rt = round_trip_case(7000 + static_cast<std::uint64_t>(i), degree, 2);
        const InvViSolution sol = solve_inverse_vi(assemble_qp(rt.snaps, kernel(4, 1e-8)));
        for (const auto& s : rt.snaps) {
            EXPECT_LE(max_relative_flow_error(*rt.net, rt.ods, sol.beta, s), 0.01) << "seed " << 7000 + i;
            const CostVector t = link_travel_time(*rt.net, sol.beta, s.flows);
            EXPECT_LE(sol.epsilons_raw[s.id], 1e-6 * t.dot(s.flows)) << "seed " << 7000 + i;
            EXPECT_LE(vi_gap(*rt.net, rt.ods, sol.beta, s.flows, s.demands), 1e-3 * t.dot(s.flows));
        }
    }
}

TEST(SolveInverseVi, EpsilonTakesNoSlack)
{
    for (int i = 0; i < 8; ++i) {
        const RoundTrip rt = round_trip_case(7100 + static_cast<std::uint64_t>(i), 1 + i % 3, 2);
        const CompactQP qp = assemble_qp(rt.snaps, kernel(3, 1.0));
        const InvViSolution sol = solve_inverse_vi(qp);
        const Vector rows = qp.row_values(sol.beta_tail, sol.y, Vector::Zero(qp.num_eps()));
        for (Eigen::Index r = 0; r < qp.num_rows(); ++r) {
            const RowTag& tag = qp.rows[static_cast<std::size_t>(r)];
            if (tag.kind == RowKind::gap) {
                EXPECT_NEAR(sol.epsilons[tag.snapshot], std::max(0.0, rows[r]), 1e-6);
            }
        }
    }
}

TEST(SolveInverseVi, RecoveredFunctionIsMonotoneAtData)
{
    for (int i = 0; i < 8; ++i) {
        const RoundTrip rt = round_trip_case(7200 + static_cast<std::uint64_t>(i), 1 + i % 4, 3);
        const InvViSolution sol = solve_inverse_vi(assemble_qp(rt.snaps, kernel(5, 1.0)));
        std::vector<double> ratios;
        for (const auto& s : rt.snaps)
            for (Eigen::Index a = 0; a < s.flows.size(); ++a)
                ratios.push_back(s.flows[a] / rt.net->capacities()[a]);
        std::sort(ratios.begin(), ratios.end());
        for (std::size_t j = 0; j + 1 < ratios.size(); ++j)
            EXPECT_LE(f_eval(sol.beta, ratios[j]), f_eval(sol.beta, ratios[j + 1]) + 1e-9);
    }
}

TEST(SolveInverseVi, LargerGammaShrinksTheNorm)
{
    const RoundTrip rt = round_trip_case(7301, 3, 2);
    double prev = std::numeric_limits<double>::infinity();
    for (double gamma : {1e-4, 1e-2, 1.0, 1e2, 1e4}) {
        const KernelConfig k = kernel(4, gamma);
        const InvViSolution sol = solve_inverse_vi(assemble_qp(rt.snaps, k));
        const Vector& b = sol.beta_tail;
        const double norm = b.dot(rkhs_norm_matrix(kernel(4, 1.0)) * b);
        EXPECT_LE(norm, prev * (1.0 + 1e-6) + 1e-12) << "gamma " << gamma;
        prev = norm;
    }
}

TEST(KktResiduals, ConvergedSolutionIsSmall)
{
    const CompactQP qp = assemble_qp({braess_snapshot()}, kernel(5, 1.0));
    const InvViSolution sol = solve_inverse_vi(qp);
    const KktReport r = kkt_residuals(qp, sol, sol.nu);
    EXPECT_LE(r.max_stationarity(), 1e-6);
    EXPECT_LE(r.primal_feasibility, 1e-6);
    EXPECT_LE(r.complementarity, 1e-6);
    EXPECT_LE(std::abs(r.strong_duality_gap), 1e-6 * std::max(1.0, sol.objective_value));
}

TEST(KktResiduals, ZeroMultipliersLeaveTwoHBeta)
{
    const CompactQP qp = assemble_qp({braess_snapshot()}, kernel(5, 1.0));
    const InvViSolution sol = solve_inverse_vi(qp);
    const KktReport r = kkt_residuals(qp, sol, Vector::Zero(qp.num_rows()));
    EXPECT_DOUBLE_EQ(r.beta_stationarity, (2.0 * qp.H * sol.beta_tail).cwiseAbs().maxCoeff());
    EXPECT_DOUBLE_EQ(r.eps_stationarity, (2.0 * sol.epsilons).cwiseAbs().maxCoeff());
    EXPECT_EQ(r.y_stationarity, 0.0);
}

TEST(KktResiduals, PerturbationIsLinearInAy)
{
    const CompactQP qp = assemble_qp({braess_snapshot()}, kernel(5, 1.0));
    const InvViSolution sol = solve_inverse_vi(qp);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 5; ++trial) {
        Vector delta(qp.num_rows());
        for (auto& v : delta)
            v = nd(rng);
        const KktReport base = kkt_residuals(qp, sol, sol.nu);
        const KktReport r = kkt_residuals(qp, sol, sol.nu + delta);
        const double want = (qp.A_mat.transpose() * delta).cwiseAbs().maxCoeff();
        EXPECT_NEAR(r.y_stationarity, want, base.y_stationarity + 1e-9 * (1.0 + want));
    }
}

TEST(KktResiduals, DimensionMismatch)
{
    const CompactQP qp = assemble_qp({braess_snapshot()}, kernel(5, 1.0));
    const InvViSolution sol = solve_inverse_vi(qp);
    try {
        kkt_residuals(qp, sol, Vector::Zero(qp.num_rows() + 1));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
    }
}

TEST(DualObjective, ZeroMultipliers)
{
    const CompactQP qp = assemble_qp({braess_snapshot()}, kernel(5, 1.0));
    EXPECT_EQ(dual_objective(qp, Vector::Zero(qp.num_rows())), 0.0);
}

TEST(DualObjective, StrongDualityAtTheOptimum)
{
    for (double gamma : {1.0, 1e-2, 1e2}) {
        const CompactQP qp = assemble_qp({braess_snapshot()}, kernel(5, gamma));
        const InvViSolution sol = solve_inverse_vi(qp);
        const double d = dual_objective(qp, sol.nu);
        EXPECT_NEAR(d, sol.objective_value, 1e-8 * std::max(1.0, sol.objective_value)) << "gamma " << gamma;
    }
}

TEST(DualObjective, WeakDualityForFeasiblePairs)
{
    const Snapshot s = braess_snapshot();
    const CompactQP qp = assemble_qp({s}, kernel(5, 1.0));
    const InvViSolution sol = solve_inverse_vi(qp);
    // Feasible primal point: the true tail padded with zeros and shortest-route potentials.
    Vector beta = Vector::Zero(5);
    beta[0] = 1.0;
    const Vector y = truth_potentials(qp, s);
    const Vector rows = qp.row_values(beta, y, Vector::Zero(1));
    double gap = 0.0;
    for (Eigen::Index i = 0; i < qp.num_rows(); ++i)
        if (qp.rows[static_cast<std::size_t>(i)].kind == RowKind::gap)
            gap = std::max(0.0, rows[i]);
    const Vector eps = Vector::Constant(1, gap);
    ASSERT_LE(qp.row_values(beta, y, eps).maxCoeff(), 1e-6);
    const double primal = primal_objective(qp, beta, eps);
    EXPECT_LE(dual_objective(qp, sol.nu), primal + 1e-9);
    // Scaled optimal multipliers stay dual feasible and below the optimum.
    for (double scale : {0.0, 0.25, 0.5, 2.0}) {
        const double d = dual_objective(qp, scale * sol.nu.cwiseMax(0.0), 1e-5);
        EXPECT_LE(d, sol.objective_value + 1e-8 * std::max(1.0, sol.objective_value));
        EXPECT_LE(d, primal + 1e-9);
    }
}

TEST(DualObjective, RejectsInfeasibleMultipliers)
{
    const CompactQP qp = assemble_qp({braess_snapshot()}, kernel(5, 1.0));
    Vector nu = Vector::Zero(qp.num_rows());
    nu[0] = -1.0;
    try {
        dual_objective(qp, nu);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InfeasibleDual);
    }
    nu.setZero();
    nu[0] = 1.0; // a lone dual-feasibility row leaves A'nu != 0
    EXPECT_THROW(dual_objective(qp, nu), Error);
}
