#include <gtest/gtest.h>

#include "oracles/active_set_qp.hpp"
#include "oracles/random_qp.hpp"
#include "tapinv/solver.hpp"

using namespace tapinv;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

std::optional<oracle::EnumerationResult> reference(const ConicProblem& p)
{
    MatrixXd G;
    VectorXd h;
    oracle::as_rows(p, G, h);
    return oracle::enumerate_active_sets(p.P, p.q, G, h, p.A, p.b);
}

void check_against_oracle(std::uint64_t seed, int size)
{
    const ConicProblem p = oracle::random_qp(seed, size);
    const auto ref = reference(p);
    ASSERT_TRUE(ref) << "seed " << seed;
    const SolveReport r = solve(p);
    ASSERT_EQ(r.status, SolveStatus::optimal) << "seed " << seed;
    const double scale = std::max(1.0, std::abs(ref->objective));
    EXPECT_LE(std::abs(r.objective - ref->objective) / scale, 1e-7) << "seed " << seed;
    for (const auto& it : r.history) {
        if (!std::isfinite(it.dual_objective))
            continue;
        EXPECT_LE(it.dual_objective, ref->objective + 1e-9 * scale) << "seed " << seed << " iter " << it.iteration;
        if (it.primal_residual <= 1e-8) {
            EXPECT_LE(it.dual_objective, it.primal_objective + 1e-9 * scale) << "seed " << seed;
        }
    }
    const CertificateSummary c = certify(p, r);
    EXPECT_LE(c.dual_residual, 1e-6) << "seed " << seed;
    EXPECT_LE(c.duality_gap, 1e-6) << "seed " << seed;
}

} // namespace

TEST(Solve, SquareAboveOne)
{
    ConicProblem p(1);
    p.P(0, 0) = 2.0;
    p.G = MatrixXd::Constant(1, 1, -1.0);
    p.h = VectorXd::Constant(1, -1.0);
    const SolveReport r = solve(p);
    ASSERT_EQ(r.status, SolveStatus::optimal);
    EXPECT_NEAR(r.x[0], 1.0, 1e-8);
    EXPECT_NEAR(r.z_ineq[0], 2.0, 1e-6);
}

TEST(Solve, QuadraticRowActive)
{
    // min -x  s.t.  x^2 <= 4, x >= 0
    ConicProblem p(1);
    p.q[0] = -1.0;
    p.quad = QuadraticRow{MatrixXd::Constant(1, 1, 2.0), VectorXd::Zero(1), 0.0, 4.0};
    p.lower = VectorXd::Zero(1);
    const SolveReport r = solve(p);
    ASSERT_EQ(r.status, SolveStatus::optimal);
    EXPECT_NEAR(r.x[0], 2.0, 1e-7);
    EXPECT_NEAR(r.z_quad, 0.25, 1e-6);
}

TEST(Solve, LinearObjectiveOverABall)
{
    // min c'x  s.t.  |x - x0|^2 <= r^2  gives  x0 - r c / |c|
    const VectorXd c = (VectorXd(3) << 1.0, -2.0, 0.5).finished();
    const VectorXd x0 = (VectorXd(3) << 0.3, 0.1, -0.7).finished();
    const double radius = 1.5;
    ConicProblem p(3);
    p.q = c;
    p.quad = QuadraticRow{2.0 * MatrixXd::Identity(3, 3), -2.0 * x0, x0.squaredNorm(), radius * radius};
    const SolveReport r = solve(p);
    ASSERT_EQ(r.status, SolveStatus::optimal);
    const VectorXd want = x0 - radius * c / c.norm();
    EXPECT_LE((r.x - want).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Solve, QuadraticRowWithLinearRows)
{
    // min -x - y  s.t.  x^2 + y^2 <= 2, x <= 0.5  gives  (0.5, sqrt(1.75))
    ConicProblem p(2);
    p.q << -1.0, -1.0;
    p.quad = QuadraticRow{2.0 * MatrixXd::Identity(2, 2), VectorXd::Zero(2), 0.0, 2.0};
    p.G = (MatrixXd(1, 2) << 1.0, 0.0).finished();
    p.h = VectorXd::Constant(1, 0.5);
    const SolveReport r = solve(p);
    ASSERT_EQ(r.status, SolveStatus::optimal);
    EXPECT_NEAR(r.x[0], 0.5, 1e-6);
    EXPECT_NEAR(r.x[1], std::sqrt(1.75), 1e-6);
}

TEST(Solve, TenVariableQpsMatchEnumeration)
{
    for (std::uint64_t s = 0; s < 200; ++s)
        check_against_oracle(1000 + s, 10);
}

TEST(Solve, MixedSizeQpsMatchEnumeration)
{
    for (std::uint64_t s = 0; s < 200; ++s)
        check_against_oracle(s, 0);
}

TEST(Solve, EqualityConstrained)
{
    // min |x|^2  s.t.  x1 + x2 + x3 = 3
    ConicProblem p(3);
    p.P = 2.0 * MatrixXd::Identity(3, 3);
    p.A = MatrixXd::Ones(1, 3);
    p.b = VectorXd::Constant(1, 3.0);
    const SolveReport r = solve(p);
    ASSERT_EQ(r.status, SolveStatus::optimal);
    EXPECT_LE((r.x - VectorXd::Ones(3)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Solve, Infeasible)
{
    ConicProblem p(1);
    p.P(0, 0) = 1.0;
    p.G = (MatrixXd(2, 1) << 1.0, -1.0).finished();
    p.h = (VectorXd(2) << -1.0, -1.0).finished();
    const SolveReport r = solve(p);
    EXPECT_EQ(r.status, SolveStatus::infeasible);
    const CertificateSummary c = certify(p, r);
    EXPECT_FALSE(c.checked);
    EXPECT_TRUE(c.farkas_evidence);
}

TEST(Solve, Deterministic)
{
    const ConicProblem p = oracle::random_qp(77, 10);
    const SolveReport a = solve(p);
    const SolveReport b = solve(p);
    ASSERT_EQ(a.x.size(), b.x.size());
    for (Eigen::Index i = 0; i < a.x.size(); ++i)
        EXPECT_EQ(a.x[i], b.x[i]);
    EXPECT_EQ(a.iterations, b.iterations);
    ASSERT_EQ(a.history.size(), b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i)
        EXPECT_EQ(a.history[i].primal_objective, b.history[i].primal_objective);
}

// Complementarity is measured against max(1, |objective|), so only scalings
// that keep the objective at or above one leave the stopping point unchanged.
TEST(Solve, ObjectiveScalingKeepsTheArgmin)
{
    for (std::uint64_t s = 0; s < 20; ++s) {
        ConicProblem p = oracle::random_qp(300 + s, 6);
        const SolveReport base = solve(p);
        ASSERT_EQ(base.status, SolveStatus::optimal);
        for (double kappa : {10.0, 1e3}) {
            ConicProblem q = p;
            q.P *= kappa;
            q.q *= kappa;
            const SolveReport r = solve(q);
            ASSERT_EQ(r.status, SolveStatus::optimal);
            EXPECT_LE((r.x - base.x).cwiseAbs().maxCoeff(), 1e-6 * std::max(1.0, base.x.cwiseAbs().maxCoeff()))
                << "seed " << 300 + s << " kappa " << kappa;
        }
    }
}

TEST(Solve, RejectsInvalidProblems)
{
    ConicProblem p(2);
    p.P << 1.0, 0.0, 0.0, -1.0;
    try {
        solve(p);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InvalidArgument);
    }
    ConicProblem q(2);
    q.G = MatrixXd::Zero(1, 3);
    q.h = VectorXd::Zero(1);
    try {
        solve(q);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
    }
}

TEST(Certify, OptimalReportIsWithinTolerance)
{
    const ConicProblem p = oracle::random_qp(11, 8);
    const SolveReport r = solve(p);
    ASSERT_EQ(r.status, SolveStatus::optimal);
    const CertificateSummary c = certify(p, r);
    EXPECT_TRUE(c.checked);
    EXPECT_LE(c.primal_residual, 1e-8);
    EXPECT_LE(c.dual_residual, 1e-8);
    EXPECT_LE(c.duality_gap, 1e-8);
}

TEST(Certify, PerturbationGrowsStationarityLinearly)
{
    const ConicProblem p = oracle::random_qp(12, 6);
    const SolveReport r = solve(p);
    ASSERT_EQ(r.status, SolveStatus::optimal);
    SolveReport a = r, b = r;
    a.x[0] += 1e-3;
    b.x[0] += 2e-3;
    EXPECT_THROW(certify(p, a), Error);
    SolverOptions loose;
    loose.tol_primal = loose.tol_dual = loose.tol_gap = 1.0;
    const double ra = certify(p, a, loose).dual_residual;
    const double rb = certify(p, b, loose).dual_residual;
    const double base = certify(p, r, loose).dual_residual;
    EXPECT_GT(ra, 10.0 * base);
    EXPECT_NEAR(rb / ra, 2.0, 0.01);
}
