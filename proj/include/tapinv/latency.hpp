#pragma once

#include <cmath>
#include <string>

#include "tapinv/netcore.hpp"

namespace tapinv {

// f(r) = 1 + sum_{i=1..n} beta_i r^i with beta_0 fixed at 1 and beta_i >= 0.
class LatencyCoefficients {
public:
    LatencyCoefficients() : beta_(Vector::Ones(2)) { beta_[1] = 0.0; }

    explicit LatencyCoefficients(Vector beta) : beta_(std::move(beta))
    {
        if (beta_.size() < 2)
            throw Error(ErrorCode::InvalidArgument, "latency coefficients need degree >= 1");
        if (beta_[0] != 1.0)
            throw Error(ErrorCode::InvalidArgument, "beta_0 must equal 1");
        for (Eigen::Index i = 1; i < beta_.size(); ++i)
            if (!(beta_[i] >= 0.0) || !std::isfinite(beta_[i]))
                throw Error(ErrorCode::InvalidArgument,
                            "beta_" + std::to_string(i) + " must be finite and >= 0");
    }

    LatencyCoefficients(std::initializer_list<double> beta)
        : LatencyCoefficients(Vector(Eigen::Map<const Vector>(beta.begin(), static_cast<Eigen::Index>(beta.size()))))
    {
    }

    // Builds from beta_1..beta_n.
    static LatencyCoefficients from_tail(const Vector& tail)
    {
        Vector b(tail.size() + 1);
        b[0] = 1.0;
        b.tail(tail.size()) = tail;
        return LatencyCoefficients(b);
    }

    // Like from_tail, but negative round-off entries are set to zero.
    static LatencyCoefficients from_tail_clamped(const Vector& tail)
    {
        return from_tail(tail.cwiseMax(0.0));
    }

    int degree() const { return static_cast<int>(beta_.size()) - 1; }
    const Vector& beta() const { return beta_; }
    Vector tail() const { return beta_.tail(beta_.size() - 1); }
    double operator[](int i) const { return beta_[i]; }

private:
    Vector beta_;
};

enum class NormWeighting { binomial, identity };

struct KernelConfig {
    int degree = 5;
    double offset = 30.0;
    double gamma = 1.0;
    NormWeighting weighting = NormWeighting::binomial;

    void validate() const
    {
        if (degree < 1)
            throw Error(ErrorCode::InvalidArgument, "kernel degree must be >= 1");
        if (!(offset > 0.0))
            throw Error(ErrorCode::NonpositiveParameter, "kernel offset c must be > 0");
        if (!(gamma > 0.0))
            throw Error(ErrorCode::NonpositiveParameter, "regularization gamma must be > 0");
    }
};

inline double f_eval(const LatencyCoefficients& coeffs, double ratio)
{
    if (!(ratio >= 0.0))
        throw Error(ErrorCode::NegativeRatio, "flow/capacity ratio must be >= 0");
    const Vector& b = coeffs.beta();
    double v = 0.0;
    for (Eigen::Index i = b.size() - 1; i >= 0; --i)
        v = v * ratio + b[i];
    return v;
}

inline double f_derivative(const LatencyCoefficients& coeffs, double ratio)
{
    if (!(ratio >= 0.0))
        throw Error(ErrorCode::NegativeRatio, "flow/capacity ratio must be >= 0");
    const Vector& b = coeffs.beta();
    double v = 0.0;
    for (Eigen::Index i = b.size() - 1; i >= 1; --i)
        v = v * ratio + static_cast<double>(i) * b[i];
    return v;
}

inline CostVector link_travel_time(const Network& net, const LatencyCoefficients& coeffs, const FlowVector& flow)
{
    if (static_cast<std::size_t>(flow.size()) != net.num_links())
        throw Error(ErrorCode::DimensionMismatch, "flow length != number of links");
    const Vector& t0 = net.free_flow_times();
    const Vector& m = net.capacities();
    CostVector t(flow.size());
    for (Eigen::Index a = 0; a < flow.size(); ++a)
        t[a] = t0[a] * f_eval(coeffs, flow[a] / m[a]);
    return t;
}

// Closed-form sum over links of the integral of t_a from 0 to x_a.
inline double potential(const Network& net, const LatencyCoefficients& coeffs, const FlowVector& flow)
{
    if (static_cast<std::size_t>(flow.size()) != net.num_links())
        throw Error(ErrorCode::DimensionMismatch, "flow length != number of links");
    const Vector& t0 = net.free_flow_times();
    const Vector& m = net.capacities();
    const Vector& b = coeffs.beta();
    double total = 0.0;
    for (Eigen::Index a = 0; a < flow.size(); ++a) {
        const double x = flow[a];
        if (!(x >= 0.0))
            throw Error(ErrorCode::NegativeRatio, "flow must be >= 0");
        const double r = x / m[a];
        // integral of f(s/m) ds over [0, x] = x * sum_i b_i r^i / (i + 1)
        double s = 0.0;
        for (Eigen::Index i = b.size() - 1; i >= 0; --i)
            s = s * r + b[i] / static_cast<double>(i + 1);
        total += t0[a] * x * s;
    }
    return total;
}

inline LatencyCoefficients bpr_coefficients(int degree)
{
    if (degree < 4)
        throw Error(ErrorCode::DegreeTooSmall, "BPR coefficients need degree >= 4");
    Vector b = Vector::Zero(degree + 1);
    b[0] = 1.0;
    b[4] = 0.15;
    return LatencyCoefficients(b);
}

inline double binomial(int n, int k)
{
    double v = 1.0;
    for (int i = 1; i <= k; ++i)
        v = v * static_cast<double>(n - k + i) / static_cast<double>(i);
    return v;
}

// H over beta_1..beta_n: gamma * diag(1 / (C(n,i) c^(n-i))) for the binomial
// weighting, gamma * I otherwise.
inline Matrix rkhs_norm_matrix(const KernelConfig& cfg)
{
    cfg.validate();
    const int n = cfg.degree;
    Matrix h = Matrix::Zero(n, n);
    for (int i = 1; i <= n; ++i) {
        double w = 1.0;
        if (cfg.weighting == NormWeighting::binomial)
            w = 1.0 / (binomial(n, i) * std::pow(cfg.offset, n - i));
        h(i - 1, i - 1) = cfg.gamma * w;
    }
    return h;
}

} // namespace tapinv
