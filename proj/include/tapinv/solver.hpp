#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tapinv/error.hpp"

namespace tapinv {

// 0.5 x'Qx + c'x + d <= bound
struct QuadraticRow {
    Eigen::MatrixXd Q;
    Eigen::VectorXd c;
    double d = 0.0;
    double bound = 0.0;
};

// minimize 0.5 x'Px + q'x  s.t.  Gx <= h,  Ax = b,  optional quadratic row,
// lower <= x <= upper (empty bound vectors mean unbounded; entries may be +-inf).
struct ConicProblem {
    Eigen::MatrixXd P;
    Eigen::VectorXd q;
    Eigen::MatrixXd G;
    Eigen::VectorXd h;
    Eigen::MatrixXd A;
    Eigen::VectorXd b;
    std::optional<QuadraticRow> quad;
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;

    Eigen::Index num_variables() const { return q.size(); }

    explicit ConicProblem(Eigen::Index n = 0)
        : P(Eigen::MatrixXd::Zero(n, n)), q(Eigen::VectorXd::Zero(n)), G(0, n), h(0), A(0, n), b(0)
    {
    }

    double objective(const Eigen::VectorXd& x) const { return 0.5 * x.dot(P * x) + q.dot(x); }

    void validate() const
    {
        const Eigen::Index n = q.size();
        auto fail = [](const std::string& m) { throw Error(ErrorCode::DimensionMismatch, m); };
        if (P.rows() != n || P.cols() != n)
            fail("objective matrix must be n x n");
        if (G.cols() != n || G.rows() != h.size())
            fail("inequality block dimensions");
        if (A.cols() != n || A.rows() != b.size())
            fail("equality block dimensions");
        if (lower.size() != 0 && lower.size() != n)
            fail("lower bound length");
        if (upper.size() != 0 && upper.size() != n)
            fail("upper bound length");
        if (quad && (quad->Q.rows() != n || quad->Q.cols() != n || quad->c.size() != n))
            fail("quadratic row dimensions");
        auto finite = [](const auto& m) { return m.allFinite(); };
        if (!finite(P) || !finite(q) || !finite(G) || !finite(h) || !finite(A) || !finite(b))
            throw Error(ErrorCode::InvalidArgument, "problem data must be finite");
        auto psd = [](const Eigen::MatrixXd& m) {
            if (m.size() == 0)
                return true;
            if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + m.cwiseAbs().maxCoeff()))
                return false;
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
            return es.eigenvalues().minCoeff() >= -1e-9 * (1.0 + m.cwiseAbs().maxCoeff());
        };
        if (!psd(P))
            throw Error(ErrorCode::InvalidArgument, "objective matrix is not symmetric PSD");
        if (quad && !psd(quad->Q))
            throw Error(ErrorCode::InvalidArgument, "quadratic row matrix is not symmetric PSD");
        for (Eigen::Index i = 0; i < lower.size() && i < upper.size(); ++i)
            if (lower[i] > upper[i])
                throw Error(ErrorCode::InvalidArgument, "lower bound exceeds upper bound");
    }
};

enum class SolveStatus { optimal, infeasible, stalled };

inline std::string_view to_string(SolveStatus s)
{
    switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::stalled: return "stalled";
    }
    return "unknown";
}

struct SolverOptions {
    double tol_primal = 1e-8;
    double tol_dual = 1e-8;
    double tol_gap = 1e-8;
    int max_iterations = 200;
    bool record_history = true;
};

struct IterateRecord {
    int iteration;
    double primal_objective;
    // Lagrangian dual function value; NaN when it is -inf or not computable.
    double dual_objective;
    double primal_residual;
    double dual_residual;
    double mu;
    double step;
};

struct SolveReport {
    SolveStatus status = SolveStatus::stalled;
    Eigen::VectorXd x;
    Eigen::VectorXd z_ineq;  // multipliers of G x <= h
    Eigen::VectorXd y_eq;    // multipliers of A x = b
    double z_quad = 0.0;     // multiplier of the quadratic row
    Eigen::VectorXd z_lower; // multipliers of x >= lower
    Eigen::VectorXd z_upper; // multipliers of x <= upper
    double objective = 0.0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double duality_gap = 0.0;
    int iterations = 0;
    bool jitter_applied = false;
    std::vector<IterateRecord> history;
};

namespace detail {

inline double max_abs(const Eigen::MatrixXd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }
inline double max_abs(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

// Lawson-Hanson least squares min |J u - rhs| with u_j >= 0 where sign[j],
// the remaining entries free.
inline Eigen::VectorXd nnls(const Eigen::MatrixXd& J, const Eigen::VectorXd& rhs, const std::vector<bool>& sign)
{
    using Eigen::Index;
    const Index k = J.cols();
    Eigen::VectorXd cs(k);
    for (Index j = 0; j < k; ++j) {
        const double c = J.col(j).norm();
        cs[j] = c > 0.0 ? 1.0 / c : 1.0;
    }
    const Eigen::MatrixXd Js = J * cs.asDiagonal();
    std::vector<bool> in(static_cast<std::size_t>(k));
    for (Index j = 0; j < k; ++j)
        in[static_cast<std::size_t>(j)] = !sign[static_cast<std::size_t>(j)];
    auto solve_on = [&]() {
        std::vector<Index> idx;
        for (Index j = 0; j < k; ++j)
            if (in[static_cast<std::size_t>(j)])
                idx.push_back(j);
        Eigen::VectorXd u = Eigen::VectorXd::Zero(k);
        if (idx.empty() || Js.rows() == 0)
            return u;
        Eigen::MatrixXd S(Js.rows(), static_cast<Index>(idx.size()));
        for (std::size_t c = 0; c < idx.size(); ++c)
            S.col(static_cast<Index>(c)) = Js.col(idx[c]);
        const Eigen::VectorXd v = S.completeOrthogonalDecomposition().solve(rhs);
        for (std::size_t c = 0; c < idx.size(); ++c)
            u[idx[c]] = v[static_cast<Index>(c)];
        return u;
    };
    Eigen::VectorXd u = solve_on();
    const double tol = 1e-12 * std::max(1.0, rhs.norm());
    for (int outer = 0; outer < 3 * k + 10; ++outer) {
        const Eigen::VectorXd w = Js.transpose() * (rhs - Js * u);
        Index best = -1;
        double wb = tol;
        for (Index j = 0; j < k; ++j)
            if (!in[static_cast<std::size_t>(j)] && w[j] > wb) {
                wb = w[j];
                best = j;
            }
        if (best < 0)
            break;
        in[static_cast<std::size_t>(best)] = true;
        for (int inner = 0; inner <= k; ++inner) {
            const Eigen::VectorXd t = solve_on();
            double alpha = 1.0;
            Index hit = -1;
            for (Index j = 0; j < k; ++j)
                if (sign[static_cast<std::size_t>(j)] && in[static_cast<std::size_t>(j)] && t[j] <= 0.0) {
                    const double a = u[j] / (u[j] - t[j]);
                    if (a < alpha) {
                        alpha = a;
                        hit = j;
                    }
                }
            if (hit < 0) {
                u = t;
                break;
            }
            u += alpha * (t - u);
            for (Index j = 0; j < k; ++j)
                if (sign[static_cast<std::size_t>(j)] && in[static_cast<std::size_t>(j)] && u[j] <= 1e-15) {
                    in[static_cast<std::size_t>(j)] = false;
                    u[j] = 0.0;
                }
        }
    }
    return cs.cwiseProduct(u);
}

inline double objective_scale(const ConicProblem& p)
{
    double s = std::max(max_abs(p.P), max_abs(p.q));
    return s > 0.0 ? s : 1.0;
}

// Largest alpha in (0, 1] keeping v + alpha dv >= 0.
inline double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv)
{
    double a = 1.0;
    for (Eigen::Index i = 0; i < v.size(); ++i)
        if (dv[i] < 0.0)
            a = std::min(a, -v[i] / dv[i]);
    return a;
}

} // namespace detail

namespace detail {

// Second-order cone helpers; a cone vector is (v0, v1) with v0 >= |v1|.
inline double soc_det(const Eigen::VectorXd& v)
{
    const double r = v.tail(v.size() - 1).norm();
    return (v[0] - r) * (v[0] + r);
}

inline Eigen::VectorXd soc_product(const Eigen::VectorXd& u, const Eigen::VectorXd& v)
{
    Eigen::VectorXd w(u.size());
    w[0] = u.dot(v);
    w.tail(u.size() - 1) = u[0] * v.tail(v.size() - 1) + v[0] * u.tail(u.size() - 1);
    return w;
}

// Solves l o u = r.
inline Eigen::VectorXd soc_divide(const Eigen::VectorXd& l, const Eigen::VectorXd& r)
{
    const Eigen::Index k = l.size() - 1;
    Eigen::VectorXd u(l.size());
    u[0] = (l[0] * r[0] - l.tail(k).dot(r.tail(k))) / soc_det(l);
    u.tail(k) = (r.tail(k) - u[0] * l.tail(k)) / l[0];
    return u;
}

// Largest alpha in (0, 1] keeping v + alpha dv inside the cone (v interior).
inline double soc_max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv)
{
    const Eigen::Index k = v.size() - 1;
    const double nv = std::sqrt(soc_det(v));
    const Eigen::VectorXd vb = v / nv;
    const double a = vb[0] * dv[0] - vb.tail(k).dot(dv.tail(k));
    const double rho0 = a / nv;
    const Eigen::VectorXd rho1 = (dv.tail(k) - (a + dv[0]) / (vb[0] + 1.0) * vb.tail(k)) / nv;
    const double t = rho1.norm() - rho0;
    return t > 1.0 ? 1.0 / t : 1.0;
}

// Nesterov-Todd scaling of one cone: W z = W^-1 s, with
//   W = eta [w0, w1'; w1, I + w1 w1' / (1 + w0)],  w'Jw = 1.
struct SocScaling {
    double eta = 1.0;
    Eigen::VectorXd w;

    SocScaling(const Eigen::VectorXd& s, const Eigen::VectorXd& z)
    {
        const double ns = std::sqrt(soc_det(s)), nz = std::sqrt(soc_det(z));
        Eigen::VectorXd sb = s / ns, zb = z / nz;
        const double gam = std::sqrt(0.5 * (1.0 + sb.dot(zb)));
        Eigen::VectorXd jz = -zb;
        jz[0] = zb[0];
        w = (sb + jz) / (2.0 * gam);
        eta = std::sqrt(ns / nz);
    }
    Eigen::MatrixXd build(double sign, double scale) const
    {
        const Eigen::Index k = w.size() - 1;
        Eigen::MatrixXd W(w.size(), w.size());
        W(0, 0) = w[0];
        W.block(0, 1, 1, k) = sign * w.tail(k).transpose();
        W.block(1, 0, k, 1) = sign * w.tail(k);
        W.block(1, 1, k, k) = Eigen::MatrixXd::Identity(k, k) + w.tail(k) * w.tail(k).transpose() / (1.0 + w[0]);
        return scale * W;
    }
    Eigen::MatrixXd matrix() const { return build(1.0, eta); }
    Eigen::MatrixXd inverse() const { return build(-1.0, 1.0 / eta); }
};

} // namespace detail

// Dense primal-dual interior point method (Mehrotra predictor-corrector,
// Nesterov-Todd scaling). Bounds become rows; the quadratic row is posed as
// a second-order cone. The data are equilibrated (Ruiz) before iterating and
// every stopping test is evaluated on the original problem: row violations
// relative to each row's max-abs coefficient (the quadratic row relative to
// the magnitude of its terms), stationarity relative to the max-abs entry of
// (P, q), complementarity relative to max(1, |objective|). Reported
// multipliers refer to the original problem.
inline SolveReport solve(const ConicProblem& prob, const SolverOptions& opt = {})
{
    using Eigen::Index;
    using Eigen::MatrixXd;
    using Eigen::VectorXd;
    prob.validate();
    const Index n = prob.num_variables();
    const double inf = std::numeric_limits<double>::infinity();

    SolveReport rep;
    rep.z_ineq = VectorXd::Zero(prob.G.rows());
    rep.y_eq = VectorXd::Zero(prob.A.rows());
    rep.z_lower = VectorXd::Zero(n);
    rep.z_upper = VectorXd::Zero(n);
    auto infeasible_early = [&]() {
        rep.status = SolveStatus::infeasible;
        rep.x = VectorXd::Zero(n);
        return rep;
    };

    // Linear inequality rows: G rows with a nonzero coefficient, then finite bounds.
    struct RowRef {
        int kind; // 0 = G row, 1 = lower bound, 2 = upper bound
        Index index;
    };
    std::vector<RowRef> refs;
    for (Index i = 0; i < prob.G.rows(); ++i) {
        if (prob.G.row(i).cwiseAbs().maxCoeff() == 0.0) {
            if (prob.h[i] < -opt.tol_primal)
                return infeasible_early();
            continue;
        }
        refs.push_back({0, i});
    }
    for (Index j = 0; j < prob.lower.size(); ++j)
        if (prob.lower[j] > -inf)
            refs.push_back({1, j});
    for (Index j = 0; j < prob.upper.size(); ++j)
        if (prob.upper[j] < inf)
            refs.push_back({2, j});
    const Index ml = static_cast<Index>(refs.size());
    MatrixXd G0 = MatrixXd::Zero(ml, n);
    VectorXd h0(ml), rn(ml);
    for (Index i = 0; i < ml; ++i) {
        const auto& ref = refs[static_cast<std::size_t>(i)];
        if (ref.kind == 0) {
            G0.row(i) = prob.G.row(ref.index);
            h0[i] = prob.h[ref.index];
        } else if (ref.kind == 1) {
            G0(i, ref.index) = -1.0;
            h0[i] = -prob.lower[ref.index];
        } else {
            G0(i, ref.index) = 1.0;
            h0[i] = prob.upper[ref.index];
        }
        rn[i] = G0.row(i).cwiseAbs().maxCoeff();
    }

    std::vector<Index> eq_keep;
    for (Index i = 0; i < prob.A.rows(); ++i) {
        if (prob.A.row(i).cwiseAbs().maxCoeff() == 0.0) {
            if (std::abs(prob.b[i]) > opt.tol_primal)
                return infeasible_early();
            continue;
        }
        eq_keep.push_back(i);
    }
    const Index me = static_cast<Index>(eq_keep.size());
    MatrixXd A0(me, n);
    VectorXd b0(me), en(me);
    for (Index k = 0; k < me; ++k) {
        Index i = eq_keep[static_cast<std::size_t>(k)];
        A0.row(k) = prob.A.row(i);
        b0[k] = prob.b[i];
        en[k] = A0.row(k).cwiseAbs().maxCoeff();
    }

    bool has_quad = prob.quad.has_value();
    MatrixXd Q0 = MatrixXd::Zero(n, n);
    VectorXd c0 = VectorXd::Zero(n);
    double d0 = 0.0;
    if (has_quad) {
        Q0 = 0.5 * (prob.quad->Q + prob.quad->Q.transpose());
        c0 = prob.quad->c;
        d0 = prob.quad->d - prob.quad->bound;
        if (std::max(detail::max_abs(Q0), detail::max_abs(c0)) == 0.0) {
            if (d0 > opt.tol_primal)
                return infeasible_early();
            has_quad = false;
        }
    }
    const double so = detail::objective_scale(prob);

    // Ruiz equilibration of [P G' A'; G; A] and the quadratic row.
    VectorXd D = VectorXd::Ones(n), El = VectorXd::Ones(ml), Ee = VectorXd::Ones(me);
    double Eq = 1.0;
    MatrixXd P = prob.P, G = G0, A = A0, Qs = Q0;
    VectorXd q = prob.q, cq = c0;
    auto col_max = [](const MatrixXd& M, Index j) { return M.rows() ? M.col(j).cwiseAbs().maxCoeff() : 0.0; };
    auto quad_scale = [&]() {
        const double v = std::max(detail::max_abs(Qs), detail::max_abs(cq));
        if (v > 0.0) {
            Qs /= v;
            cq /= v;
            Eq /= v;
        }
    };
    if (has_quad)
        quad_scale();
    for (int pass = 0; pass < 25; ++pass) {
        VectorXd cs(n);
        for (Index j = 0; j < n; ++j) {
            double v = std::max({col_max(P, j), col_max(G, j), col_max(A, j)});
            if (has_quad)
                v = std::max({v, col_max(Qs, j), std::abs(cq[j])});
            cs[j] = v > 0.0 ? 1.0 / std::sqrt(v) : 1.0;
        }
        VectorXd gr(ml), ar(me);
        for (Index i = 0; i < ml; ++i)
            gr[i] = 1.0 / std::sqrt(G.row(i).cwiseAbs().maxCoeff());
        for (Index i = 0; i < me; ++i)
            ar[i] = 1.0 / std::sqrt(A.row(i).cwiseAbs().maxCoeff());
        double dev = 0.0;
        if (n)
            dev = std::max(dev, (cs.array() - 1.0).abs().maxCoeff());
        if (ml)
            dev = std::max(dev, (gr.array() - 1.0).abs().maxCoeff());
        if (me)
            dev = std::max(dev, (ar.array() - 1.0).abs().maxCoeff());
        P = cs.asDiagonal() * P * cs.asDiagonal();
        q = cs.cwiseProduct(q);
        G = gr.asDiagonal() * G * cs.asDiagonal();
        A = ar.asDiagonal() * A * cs.asDiagonal();
        if (has_quad) {
            Qs = cs.asDiagonal() * Qs * cs.asDiagonal();
            cq = cs.cwiseProduct(cq);
            quad_scale();
        }
        D = D.cwiseProduct(cs);
        El = El.cwiseProduct(gr);
        Ee = Ee.cwiseProduct(ar);
        if (dev < 1e-3)
            break;
    }
    double co = std::max(detail::max_abs(P), detail::max_abs(q));
    co = co > 0.0 ? 1.0 / co : 1.0;
    P *= co;
    q *= co;

    // zc: cone multipliers; zq: the scalar multiplier of the quadratic row,
    // fitted to stationarity by least squares.
    struct Original {
        VectorXd x, zl, y, zc;
        double zq = 0.0;
    };
    struct Metrics {
        double pres, dres, gap, obj;
    };
    // The scaled quadratic row, multiplied by qsig, 0.5 x'Qx + c'x + d <= 0 as the cone
    //   ((1 + t)/sqrt2, L'x, (t - 1)/sqrt2),  t = -(c'x + d),  Q = L L'.
    // qsig is refitted between rounds so that t is of order one at the solution.
    const double dq = d0 * Eq;
    // Lt'Lt = Q over the variables the quadratic row involves.
    MatrixXd Lt(0, n);
    if (has_quad) {
        std::vector<Index> sup;
        for (Index j = 0; j < n; ++j)
            if (Qs.col(j).cwiseAbs().maxCoeff() > 0.0)
                sup.push_back(j);
        const Index ns = static_cast<Index>(sup.size());
        MatrixXd Qsub(ns, ns);
        for (Index a = 0; a < ns; ++a)
            for (Index c = 0; c < ns; ++c)
                Qsub(a, c) = Qs(sup[static_cast<std::size_t>(a)], sup[static_cast<std::size_t>(c)]);
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(Qsub);
        const double top = ns ? std::max(es.eigenvalues().maxCoeff(), 0.0) : 0.0;
        std::vector<Index> keep;
        for (Index i = 0; i < ns; ++i)
            if (es.eigenvalues()[i] > 1e-15 * top)
                keep.push_back(i);
        Lt = MatrixXd::Zero(static_cast<Index>(keep.size()), n);
        for (std::size_t k = 0; k < keep.size(); ++k)
            for (Index a = 0; a < ns; ++a)
                Lt(static_cast<Index>(k), sup[static_cast<std::size_t>(a)]) =
                    std::sqrt(es.eigenvalues()[keep[k]]) * es.eigenvectors()(a, keep[k]);
    }
    double qsig = 1.0;
    SolveStatus status = SolveStatus::stalled;
    Original fin;
    Metrics fm{inf, inf, inf, 0.0};
    double fin_merit = inf;
    int total_its = 0;
    std::vector<IterateRecord> fin_history;
    for (int round = 0;; ++round) {
        Index kc = 0;
        MatrixXd Gc(0, n);
        VectorXd hc(0);
        if (has_quad) {
            const Index r = Lt.rows();
            kc = r + 2;
            Gc = MatrixXd::Zero(kc, n);
            hc = VectorXd::Zero(kc);
            const double rt = std::sqrt(0.5);
            Gc.row(0) = rt * qsig * cq.transpose();
            hc[0] = rt * (1.0 - qsig * dq);
            for (Index i = 0; i < r; ++i) {
                Gc.row(1 + i) = -std::sqrt(qsig) * Lt.row(i);
            }
            Gc.row(kc - 1) = rt * qsig * cq.transpose();
            hc[kc - 1] = rt * (-qsig * dq - 1.0);
        }
        const Index m = ml + kc;
        MatrixXd Gs(m, n);
        VectorXd hs(m);
        Gs.topRows(ml) = G;
        hs.head(ml) = El.cwiseProduct(h0);
        if (kc) {
            Gs.bottomRows(kc) = Gc;
            hs.tail(kc) = hc;
        }
        const VectorXd b = Ee.cwiseProduct(b0);

        auto to_original = [&](const VectorXd& xs, const VectorXd& zs, const VectorXd& ys) {
            Original o;
            o.x = D.cwiseProduct(xs);
            o.zl = El.cwiseProduct(zs.head(ml)) / co;
            o.y = Ee.cwiseProduct(ys) / co;
            o.zc = zs.tail(kc) / co;
            if (kc) {
                const VectorXd v = Q0 * o.x + c0;
                const VectorXd r = prob.P * o.x + prob.q + G0.transpose() * o.zl + A0.transpose() * o.y;
                const double vv = v.squaredNorm();
                const double fit = vv > 0.0 ? std::max(0.0, -r.dot(v) / vv) : 0.0;
                const double direct = std::max(0.0, std::sqrt(0.5) * (o.zc[0] + o.zc[kc - 1]) * qsig * Eq);
                o.zq = (r + direct * v).cwiseAbs().maxCoeff() < (r + fit * v).cwiseAbs().maxCoeff() ? direct : fit;
            }
            return o;
        };
        // With cone = true the quadratic row enters through its cone multipliers
        // (used for stopping); otherwise through the scalar multiplier (reported).
        auto metrics = [&](const Original& o, bool cone) {
            Metrics mt{0.0, 0.0, 0.0, prob.objective(o.x)};
            VectorXd grad = prob.P * o.x + prob.q + G0.transpose() * o.zl + A0.transpose() * o.y;
            double comp_pos = 0.0, comp = 0.0;
            for (Index i = 0; i < ml; ++i) {
                double gi = G0.row(i).dot(o.x) - h0[i];
                mt.pres = std::max(mt.pres, std::max(gi, 0.0) / rn[i]);
                comp += o.zl[i] * gi;
                comp_pos += o.zl[i] * std::max(-gi, 0.0);
            }
            for (Index k = 0; k < me; ++k) {
                double ri = A0.row(k).dot(o.x) - b0[k];
                mt.pres = std::max(mt.pres, std::abs(ri) / en[k]);
                comp += o.y[k] * ri;
            }
            if (kc) {
                const double quad = 0.5 * o.x.dot(Q0 * o.x), lin = c0.dot(o.x);
                const double gq = quad + lin + d0;
                mt.pres = std::max(mt.pres, std::max(gq, 0.0) / std::max(1.0, std::abs(quad) + std::abs(lin) + std::abs(d0)));
                if (cone) {
                    const VectorXd xs = o.x.cwiseQuotient(D);
                    const double gc = o.zc.dot(Gc * xs - hc);
                    comp += gc;
                    comp_pos += std::max(-gc, 0.0);
                    grad += (Gc.transpose() * o.zc).cwiseQuotient(D);
                } else {
                    comp += o.zq * gq;
                    comp_pos += o.zq * std::max(-gq, 0.0);
                    grad += o.zq * (Q0 * o.x + c0);
                }
            }
            mt.dres = n ? grad.cwiseAbs().maxCoeff() / so : 0.0;
            mt.gap = std::max(std::abs(comp), comp_pos) / std::max(1.0, std::abs(mt.obj));
            return mt;
        };

        // Cone algebra over R+^ml x SOC^kc.
        auto identity = [&]() {
            VectorXd e = VectorXd::Zero(m);
            e.head(ml).setOnes();
            if (kc)
                e[ml] = 1.0;
            return e;
        };
        auto product = [&](const VectorXd& u, const VectorXd& v) {
            VectorXd w(m);
            w.head(ml) = u.head(ml).cwiseProduct(v.head(ml));
            if (kc)
                w.tail(kc) = detail::soc_product(u.tail(kc), v.tail(kc));
            return w;
        };
        auto divide = [&](const VectorXd& l, const VectorXd& r) {
            VectorXd w(m);
            w.head(ml) = r.head(ml).cwiseQuotient(l.head(ml));
            if (kc)
                w.tail(kc) = detail::soc_divide(l.tail(kc), r.tail(kc));
            return w;
        };
        auto max_step = [&](const VectorXd& v, const VectorXd& dv) {
            double a = detail::max_step(v.head(ml), dv.head(ml));
            if (kc)
                a = std::min(a, detail::soc_max_step(v.tail(kc), dv.tail(kc)));
            return a;
        };
        auto push_inside = [&](VectorXd& v) {
            double shift = ml ? -v.head(ml).minCoeff() : -inf;
            if (kc)
                shift = std::max(shift, v.tail(kc - 1).norm() - v[ml]);
            if (shift >= -1e-8)
                v += (1.0 + std::max(shift, 0.0)) * identity();
        };
        const double degree = static_cast<double>(ml + (kc ? 1 : 0));

        // Starting point: regularized least-squares fit of the constraints.
        VectorXd x;
        {
            MatrixXd M = P + Gs.transpose() * Gs + A.transpose() * A + MatrixXd::Identity(n, n);
            x = M.ldlt().solve(-q + Gs.transpose() * hs + A.transpose() * b);
            if (!x.allFinite())
                x = VectorXd::Zero(n);
        }
        VectorXd s = hs - Gs * x;
        push_inside(s);
        VectorXd z = identity();
        VectorXd y = VectorXd::Zero(me);

        status = SolveStatus::stalled;
        rep.history.clear();
        int small_steps = 0;
        int it = 0;
        double last_step = 0.0;
        Metrics best_mt{inf, inf, inf, 0.0};
        Original best_pt = to_original(x, z, y);
        auto merit = [&](const Metrics& mt) {
            return std::max({mt.pres / opt.tol_primal, mt.dres / opt.tol_dual, mt.gap / opt.tol_gap});
        };
        // Multipliers refitted at a given point: nonnegative on the nearly
        // active inequalities, free on the equalities.
        auto polish = [&](Original& cand, Metrics& cm) {
            const double xscale = std::max(1.0, detail::max_abs(cand.x));
            for (double tol_act : {1e-10, 1e-9, 1e-8, 1e-7, 1e-6}) {
                std::vector<Index> act;
                for (Index i = 0; i < ml; ++i)
                    if (G0.row(i).dot(cand.x) - h0[i] > -tol_act * xscale * rn[i])
                        act.push_back(i);
                bool quad_act = false;
                VectorXd v;
                if (kc) {
                    const double quad = 0.5 * cand.x.dot(Q0 * cand.x), lin = c0.dot(cand.x);
                    v = Q0 * cand.x + c0;
                    quad_act = quad + lin + d0 > -tol_act * std::max(1.0, detail::max_abs(v) * xscale);
                }
                const Index na = static_cast<Index>(act.size()), nq = quad_act ? 1 : 0;
                MatrixXd J(n, na + me + nq);
                std::vector<bool> sign(static_cast<std::size_t>(na + me + nq), true);
                for (Index k = 0; k < na; ++k)
                    J.col(k) = G0.row(act[static_cast<std::size_t>(k)]).transpose();
                J.middleCols(na, me) = A0.transpose();
                for (Index k = 0; k < me; ++k)
                    sign[static_cast<std::size_t>(na + k)] = false;
                if (quad_act)
                    J.col(na + me) = v;
                const VectorXd u = detail::nnls(J, -(prob.P * cand.x + prob.q), sign);
                Original pol = cand;
                pol.zl.setZero();
                for (Index k = 0; k < na; ++k)
                    pol.zl[act[static_cast<std::size_t>(k)]] = u[k];
                pol.y = u.segment(na, me);
                pol.zq = quad_act ? u[na + me] : 0.0;
                if (!u.allFinite())
                    continue;
                const Metrics pm = metrics(pol, false);
                if (merit(pm) < merit(cm)) {
                    cand = pol;
                    cm = pm;
                }
                if (!quad_act)
                    continue;
                // The cone pins the direction of x only to sqrt(mu); Newton on
                // the KKT equations of this active set recovers full accuracy.
                Original nt = pol;
                const Index dim = n + na + me + 1;
                for (int k = 0; k < 8; ++k) {
                    const VectorXd w = Q0 * nt.x + c0;
                    VectorXd mult(na + me + 1);
                    for (Index a = 0; a < na; ++a)
                        mult[a] = nt.zl[act[static_cast<std::size_t>(a)]];
                    mult.segment(na, me) = nt.y;
                    mult[na + me] = nt.zq;
                    MatrixXd Jk = J;
                    Jk.col(na + me) = w;
                    VectorXd F(dim);
                    F.head(n) = prob.P * nt.x + prob.q + Jk * mult;
                    for (Index a = 0; a < na; ++a) {
                        const Index i = act[static_cast<std::size_t>(a)];
                        F[n + a] = G0.row(i).dot(nt.x) - h0[i];
                    }
                    F.segment(n + na, me) = A0 * nt.x - b0;
                    F[dim - 1] = 0.5 * nt.x.dot(Q0 * nt.x) + c0.dot(nt.x) + d0;
                    MatrixXd K = MatrixXd::Zero(dim, dim);
                    K.topLeftCorner(n, n) = prob.P + nt.zq * Q0;
                    K.topRightCorner(n, na + me + 1) = Jk;
                    K.bottomLeftCorner(na + me + 1, n) = Jk.transpose();
                    Eigen::FullPivLU<MatrixXd> lu(K);
                    if (!lu.isInvertible())
                        break;
                    const VectorXd d = lu.solve(-F);
                    if (!d.allFinite())
                        break;
                    nt.x += d.head(n);
                    mult += d.tail(na + me + 1);
                    for (Index a = 0; a < na; ++a)
                        nt.zl[act[static_cast<std::size_t>(a)]] = mult[a];
                    nt.y = mult.segment(na, me);
                    nt.zq = mult[na + me];
                }
                if (!nt.x.allFinite() || nt.zq < 0.0 || (nt.zl.size() && nt.zl.minCoeff() < 0.0))
                    continue;
                const Metrics nm = metrics(nt, false);
                if (merit(nm) < merit(cm)) {
                    cand = nt;
                    cm = nm;
                }
            }
        };
        // With a cone the iteration runs on past the conic tolerances until the
        // refitted scalar multipliers also meet them.
        bool met = false;
        int extra = 0;
        Original met_pt;
        Metrics met_mt{inf, inf, inf, 0.0};
        for (; it <= opt.max_iterations; ++it) {
            if (!x.allFinite() || !s.allFinite() || !z.allFinite() || !y.allFinite())
                break;
            const VectorXd rx = P * x + q + Gs.transpose() * z + A.transpose() * y;
            const VectorXd ry = A * x - b;
            const VectorXd rz = Gs * x + s - hs;
            const double mu = m > 0 ? s.dot(z) / degree : 0.0;

            const Original orig = to_original(x, z, y);
            const Metrics mt = metrics(orig, true);
            if (merit(mt) < merit(best_mt)) {
                best_mt = mt;
                best_pt = orig;
            }
            if (opt.record_history) {
                double dual_val = std::numeric_limits<double>::quiet_NaN();
                MatrixXd W = prob.P;
                if (kc)
                    W += orig.zq * Q0;
                Eigen::LLT<MatrixXd> llt(W);
                if (n > 0 && llt.info() == Eigen::Success && W.diagonal().minCoeff() > 0.0) {
                    VectorXd lin = prob.q + G0.transpose() * orig.zl + A0.transpose() * orig.y;
                    double cst = -h0.dot(orig.zl) - b0.dot(orig.y);
                    if (kc) {
                        lin += orig.zq * c0;
                        cst += orig.zq * d0;
                    }
                    VectorXd xs = llt.solve(-lin);
                    double v = 0.5 * xs.dot(W * xs) + lin.dot(xs) + cst;
                    if (std::isfinite(v))
                        dual_val = v;
                }
                rep.history.push_back({it, mt.obj, dual_val, mt.pres, mt.dres, mu, last_step});
            }
            if (mt.pres <= opt.tol_primal && mt.dres <= opt.tol_dual && mt.gap <= opt.tol_gap) {
                status = SolveStatus::optimal;
                if (!kc)
                    break;
                Original pc = orig;
                Metrics pm = metrics(pc, false);
                polish(pc, pm);
                if (merit(pm) < merit(met_mt)) {
                    met_pt = pc;
                    met_mt = pm;
                }
                met = true;
                if (merit(met_mt) <= 1.0 || ++extra > 10)
                    break;
            }
            if (it == opt.max_iterations)
                break;

            // Farkas ray for the linear part: G'z + A'y ~ 0 with h'z + b'y < 0.
            if (!kc && it > 5 && ml + me > 0) {
                double nrm = z.head(ml).lpNorm<1>() + y.lpNorm<1>();
                if (nrm > 1e8) {
                    VectorXd zz = z.head(ml) / nrm;
                    VectorXd yy = y / nrm;
                    double lin = (Gs.transpose() * zz + A.transpose() * yy).cwiseAbs().maxCoeff();
                    double val = hs.dot(zz) + b.dot(yy);
                    if (val < -1e-9 && lin <= 1e-6 * std::abs(val)) {
                        status = SolveStatus::infeasible;
                        break;
                    }
                }
            }

            // Scaling W (diagonal on R+, NT block on the cone) and lambda = W z.
            VectorXd wl = (s.head(ml).array() / z.head(ml).array()).sqrt().matrix();
            MatrixXd Wc, Wci;
            if (kc) {
                detail::SocScaling sc(s.tail(kc), z.tail(kc));
                Wc = sc.matrix();
                Wci = sc.inverse();
            }
            auto apply_w = [&](const VectorXd& v) {
                VectorXd r(m);
                r.head(ml) = wl.cwiseProduct(v.head(ml));
                if (kc)
                    r.tail(kc) = Wc * v.tail(kc);
                return r;
            };
            auto apply_winv = [&](const VectorXd& v) {
                VectorXd r(m);
                r.head(ml) = v.head(ml).cwiseQuotient(wl);
                if (kc)
                    r.tail(kc) = Wci * v.tail(kc);
                return r;
            };
            const VectorXd lam = apply_w(z);
            // Scaled KKT matrix [P A' Gt'; A 0 0; Gt 0 -I] with Gt = W^-1 G.
            MatrixXd Gt(m, n);
            Gt.topRows(ml) = wl.cwiseInverse().asDiagonal() * Gs.topRows(ml);
            if (kc)
                Gt.bottomRows(kc) = Wci * Gs.bottomRows(kc);
            const Index dim = n + me + m;
            MatrixXd K = MatrixXd::Zero(dim, dim);
            K.topLeftCorner(n, n) = P;
            K.block(0, n, n, me) = A.transpose();
            K.block(0, n + me, n, m) = Gt.transpose();
            K.block(n, 0, me, n) = A;
            K.block(n + me, 0, m, n) = Gt;
            K.bottomRightCorner(m, m).diagonal().setConstant(-1.0);
            Eigen::PartialPivLU<MatrixXd> lu;
            auto factor = [&]() {
                lu.compute(K);
                const double piv = lu.matrixLU().diagonal().cwiseAbs().minCoeff();
                return dim == 0 || (std::isfinite(piv) && piv > 1e-14 * std::max(1.0, detail::max_abs(K)));
            };
            const double kscale = std::max(1.0, detail::max_abs(P));
            double jitter = 0.0;
            while (!factor()) {
                jitter = jitter == 0.0 ? 1e-12 * kscale : jitter * 100.0;
                if (jitter > 1e-2 * kscale)
                    break;
                rep.jitter_applied = true;
                K.topLeftCorner(n, n).diagonal().array() += jitter;
                if (me)
                    K.block(n, n, me, me).diagonal().array() -= jitter;
            }

            // Linearized system
            //   P dx + A'dy + G'dz = b1,  A dx = b2,  G dx + ds = b3,  lam o (W dz + W^-1 ds) = b4,
            // solved through the scaled KKT matrix and refined against the unreduced equations.
            struct Step {
                VectorXd dx, dy, dz, ds;
            };
            auto kkt_solve = [&](const VectorXd& b1, const VectorXd& b2, const VectorXd& b3, const VectorXd& b4) {
                const VectorXd u = divide(lam, b4);
                VectorXd rhs(dim);
                rhs.head(n) = b1;
                rhs.segment(n, me) = b2;
                rhs.tail(m) = apply_winv(b3) - u;
                const VectorXd sol = lu.solve(rhs);
                Step st;
                st.dx = sol.head(n);
                st.dy = sol.segment(n, me);
                st.dz = apply_winv(sol.tail(m));
                st.ds = b3 - Gs * st.dx;
                return st;
            };
            struct Residual {
                VectorXd e1, e2, e3, e4;
                double norm;
            };
            auto residual = [&](const Step& st, const VectorXd& b1, const VectorXd& b2, const VectorXd& b3,
                                const VectorXd& b4) {
                Residual r;
                r.e1 = b1 - (P * st.dx + Gs.transpose() * st.dz + A.transpose() * st.dy);
                r.e2 = b2 - A * st.dx;
                r.e3 = b3 - (Gs * st.dx + st.ds);
                r.e4 = b4 - product(lam, apply_w(st.dz) + apply_winv(st.ds));
                r.norm = std::max({detail::max_abs(r.e1), detail::max_abs(r.e2), detail::max_abs(r.e3),
                                   detail::max_abs(r.e4)});
                return r;
            };
            auto newton = [&](const VectorXd& b4) {
                const VectorXd b1 = -rx, b2 = -ry, b3 = -rz;
                Step st = kkt_solve(b1, b2, b3, b4);
                Residual res = residual(st, b1, b2, b3, b4);
                for (int r = 0; r < 3 && res.norm > 0.0; ++r) {
                    Step c = kkt_solve(res.e1, res.e2, res.e3, res.e4);
                    Step trial{st.dx + c.dx, st.dy + c.dy, st.dz + c.dz, st.ds + c.ds};
                    Residual tr = residual(trial, b1, b2, b3, b4);
                    if (!(tr.norm < res.norm))
                        break;
                    st = std::move(trial);
                    res = std::move(tr);
                }
                return st;
            };

            const VectorXd ll = product(lam, lam);
            Step aff = newton(-ll);
            // Step lengths in the scaled space, where s and z both map to lam.
            auto cone_step = [&](const Step& d) {
                return std::min(max_step(lam, apply_winv(d.ds)), max_step(lam, apply_w(d.dz)));
            };
            double a_aff = cone_step(aff);
            double sigma = 0.0;
            if (m > 0 && mu > 0.0) {
                double mu_aff = (s + a_aff * aff.ds).dot(z + a_aff * aff.dz) / degree;
                sigma = std::min(1.0, std::pow(std::max(mu_aff, 0.0) / mu, 3));
            }
            const VectorXd corr = product(apply_winv(aff.ds), apply_w(aff.dz));
            Step st = newton(-ll - corr + sigma * mu * identity());
            if (!st.dx.allFinite() || !st.dz.allFinite() || !st.ds.allFinite() || !st.dy.allFinite())
                break;
            double alpha = m > 0 ? std::min(1.0, 0.99 * cone_step(st)) : 1.0;
            x += alpha * st.dx;
            y += alpha * st.dy;
            s += alpha * st.ds;
            z += alpha * st.dz;
            s.head(ml) = s.head(ml).cwiseMax(1e-300);
            z.head(ml) = z.head(ml).cwiseMax(1e-300);
            if (kc && (detail::soc_det(s.tail(kc)) <= 0.0 || detail::soc_det(z.tail(kc)) <= 0.0 || s[ml] <= 0.0 ||
                       z[ml] <= 0.0))
                break;
            last_step = alpha;
            small_steps = alpha < 1e-8 ? small_steps + 1 : 0;
            if (small_steps >= 5)
                break;
        }

        // On failure keep the iterate that came closest to the tolerances.
        total_its += it;
        Original cand = status == SolveStatus::stalled ? best_pt : to_original(x, z, y);
        Metrics cm = metrics(cand, false);
        if (met) {
            status = SolveStatus::optimal;
            cand = met_pt;
            cm = met_mt;
        } else if (status == SolveStatus::infeasible) {
            // Report the Farkas ray itself, normalized to unit 1-norm.
            const double nrm = cand.zl.lpNorm<1>() + cand.y.lpNorm<1>();
            if (nrm > 0.0) {
                cand.zl /= nrm;
                cand.y /= nrm;
            }
        } else {
            polish(cand, cm);
        }
        if (round == 0 || status == SolveStatus::optimal || merit(cm) < fin_merit) {
            fin = cand;
            fm = cm;
            fin_merit = merit(cm);
            fin_history = rep.history;
            rep.status = status;
        }
        if (!kc || status != SolveStatus::stalled || round >= 3)
            break;
        const VectorXd xs = cand.x.cwiseQuotient(D);
        const double mag = std::max(std::abs(qsig * (cq.dot(xs) + dq)), 0.5 * qsig * xs.dot(Qs * xs));
        if (!std::isfinite(mag) || !(mag > 0.0) || (mag > 0.1 && mag < 10.0))
            break;
        qsig /= mag;
    }
    rep.history = std::move(fin_history);
    // The reported residuals use the scalar multiplier of the quadratic row.
    if (rep.status == SolveStatus::optimal &&
        !(fm.pres <= opt.tol_primal && fm.dres <= opt.tol_dual && fm.gap <= opt.tol_gap))
        rep.status = SolveStatus::stalled;
    rep.iterations = total_its;
    rep.x = fin.x;
    rep.objective = prob.objective(fin.x);
    rep.primal_residual = fm.pres;
    rep.dual_residual = fm.dres;
    rep.duality_gap = fm.gap;
    for (Index i = 0; i < ml; ++i) {
        const auto& ref = refs[static_cast<std::size_t>(i)];
        if (ref.kind == 0)
            rep.z_ineq[ref.index] = fin.zl[i];
        else if (ref.kind == 1)
            rep.z_lower[ref.index] = fin.zl[i];
        else
            rep.z_upper[ref.index] = fin.zl[i];
    }
    for (Index k = 0; k < me; ++k)
        rep.y_eq[eq_keep[static_cast<std::size_t>(k)]] = fin.y[k];
    rep.z_quad = fin.zq;
    return rep;
}

inline SolveReport solve(const ConicProblem& prob, double tol_primal, double tol_gap, int max_iters)
{
    SolverOptions o;
    o.tol_primal = tol_primal;
    o.tol_dual = tol_primal;
    o.tol_gap = tol_gap;
    o.max_iterations = max_iters;
    return solve(prob, o);
}

struct CertificateSummary {
    bool checked = false; // false for non-optimal reports
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double complementarity = 0.0;
    double duality_gap = 0.0;
    double dual_sign_violation = 0.0;
    // Infeasible reports: whether the multipliers form a Farkas ray.
    bool farkas_evidence = false;
    double farkas_value = 0.0;
};

// Recomputes feasibility, stationarity and complementarity from the
// original problem data and the reported primal/dual point.
inline CertificateSummary certify(const ConicProblem& prob, const SolveReport& rep, const SolverOptions& opt = {})
{
    using Eigen::Index;
    using Eigen::VectorXd;
    prob.validate();
    const Index n = prob.num_variables();
    if (rep.x.size() != n || rep.z_ineq.size() != prob.G.rows() || rep.y_eq.size() != prob.A.rows())
        throw Error(ErrorCode::DimensionMismatch, "report does not match problem dimensions");
    CertificateSummary out;

    if (rep.status == SolveStatus::infeasible) {
        VectorXd ray = prob.G.transpose() * rep.z_ineq + prob.A.transpose() * rep.y_eq;
        double val = prob.h.dot(rep.z_ineq) + prob.b.dot(rep.y_eq);
        double scale = rep.z_ineq.lpNorm<1>() + rep.y_eq.lpNorm<1>();
        out.farkas_value = val;
        out.farkas_evidence = scale > 0.0 && (rep.z_ineq.array() >= 0.0).all() && val < 0.0 &&
                              (ray.size() == 0 || ray.cwiseAbs().maxCoeff() <= 1e-6 * std::abs(val));
        if (scale == 0.0) {
            // Presolve rejection: an all-zero row with an unsatisfiable right-hand side.
            for (Index i = 0; i < prob.G.rows(); ++i)
                if (prob.G.row(i).cwiseAbs().maxCoeff() == 0.0 && prob.h[i] < 0.0)
                    out.farkas_evidence = true;
            for (Index i = 0; i < prob.A.rows(); ++i)
                if (prob.A.row(i).cwiseAbs().maxCoeff() == 0.0 && prob.b[i] != 0.0)
                    out.farkas_evidence = true;
        }
        return out;
    }
    if (rep.status != SolveStatus::optimal)
        return out;
    out.checked = true;

    const VectorXd& x = rep.x;
    double pres = 0.0, comp = 0.0, comp_abs = 0.0;
    VectorXd grad = prob.P * x + prob.q + prob.G.transpose() * rep.z_ineq + prob.A.transpose() * rep.y_eq;
    for (Index i = 0; i < prob.G.rows(); ++i) {
        double nrm = prob.G.row(i).cwiseAbs().maxCoeff();
        double gi = prob.G.row(i).dot(x) - prob.h[i];
        pres = std::max(pres, std::max(gi, 0.0) / (nrm > 0.0 ? nrm : 1.0));
        comp += rep.z_ineq[i] * gi;
        comp_abs += std::abs(rep.z_ineq[i] * gi);
    }
    for (Index i = 0; i < prob.A.rows(); ++i) {
        double nrm = prob.A.row(i).cwiseAbs().maxCoeff();
        double ri = prob.A.row(i).dot(x) - prob.b[i];
        pres = std::max(pres, std::abs(ri) / (nrm > 0.0 ? nrm : 1.0));
        comp += rep.y_eq[i] * ri;
    }
    const double inf = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < prob.lower.size(); ++j)
        if (prob.lower[j] > -inf) {
            double gi = prob.lower[j] - x[j];
            pres = std::max(pres, std::max(gi, 0.0));
            comp += rep.z_lower[j] * gi;
            comp_abs += std::abs(rep.z_lower[j] * gi);
            grad[j] -= rep.z_lower[j];
        }
    for (Index j = 0; j < prob.upper.size(); ++j)
        if (prob.upper[j] < inf) {
            double gi = x[j] - prob.upper[j];
            pres = std::max(pres, std::max(gi, 0.0));
            comp += rep.z_upper[j] * gi;
            comp_abs += std::abs(rep.z_upper[j] * gi);
            grad[j] += rep.z_upper[j];
        }
    if (prob.quad) {
        const auto& qr = *prob.quad;
        const double quad = 0.5 * x.dot(qr.Q * x), lin = qr.c.dot(x), cst = qr.d - qr.bound;
        const double gi = quad + lin + cst;
        pres = std::max(pres, std::max(gi, 0.0) / std::max(1.0, std::abs(quad) + std::abs(lin) + std::abs(cst)));
        comp += rep.z_quad * gi;
        comp_abs += std::abs(rep.z_quad * gi);
        grad += rep.z_quad * (qr.Q * x + qr.c);
    }
    double neg = 0.0;
    auto sign = [&](const VectorXd& v) {
        if (v.size())
            neg = std::max(neg, -v.minCoeff());
    };
    sign(rep.z_ineq);
    sign(rep.z_lower);
    sign(rep.z_upper);
    neg = std::max(neg, -rep.z_quad);

    const double obj = prob.objective(x);
    out.primal_residual = pres;
    out.dual_residual = n ? grad.cwiseAbs().maxCoeff() / detail::objective_scale(prob) : 0.0;
    out.complementarity = comp_abs / std::max(1.0, std::abs(obj));
    out.duality_gap = std::abs(comp) / std::max(1.0, std::abs(obj));
    out.dual_sign_violation = neg;

    auto mismatch = [](double mine, double theirs, double tol) { return std::abs(mine - theirs) > 10.0 * tol; };
    if (mismatch(out.primal_residual, rep.primal_residual, opt.tol_primal) ||
        mismatch(out.dual_residual, rep.dual_residual, opt.tol_dual) ||
        mismatch(out.duality_gap, rep.duality_gap, opt.tol_gap) || neg > 10.0 * opt.tol_dual)
        throw Error(ErrorCode::CertificationMismatch,
                    "recomputed residuals disagree with the report (primal " + std::to_string(out.primal_residual) +
                        " vs " + std::to_string(rep.primal_residual) + ", dual " +
                        std::to_string(out.dual_residual) + " vs " + std::to_string(rep.dual_residual) + ")");
    return out;
}

} // namespace tapinv
