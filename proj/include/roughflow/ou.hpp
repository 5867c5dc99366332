#pragma once

#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "roughflow/errors.hpp"
#include "roughflow/linops.hpp"
#include "roughflow/rng.hpp"

namespace roughflow {

struct NoiseConfig {
    LinearOperator Q;
    std::uint64_t seed = 0;
    std::uint64_t replica = 0;
};

/// Sampled fast path: grid times, states, and the Q^{1/2} dW increment of
/// each interval (the same Wiener increments drive every epsilon when paths
/// are coupled across a ladder).
struct FastPath {
    double epsilon = 1.0;
    Eigen::VectorXd times;
    std::vector<Eigen::VectorXd> w;
    std::vector<Eigen::VectorXd> dW;

    void validate() const {
        if (times.size() < 1) throw InputError("FastPath: empty grid");
        for (int i = 0; i + 1 < times.size(); ++i)
            if (!(times[i] < times[i + 1])) throw GridError("FastPath: grid must be strictly increasing");
        if (w.size() != static_cast<size_t>(times.size()) || dW.size() + 1 != w.size())
            throw InputError("FastPath: inconsistent array lengths");
    }
};

/// Exact Gaussian one-step kernel of dw = eps^{-1} C w dt + eps^{-1/2} Q^{1/2} dW
/// over a step h:
///   w' = E w + xi,  E = e^{Ch/eps},  xi ~ N(0, Sigma_h),
///   Sigma_h = Q_inf - E Q_inf E^T.
/// The returned Wiener increment I = Q^{1/2} dW is drawn jointly with xi from
/// their exact Gaussian law: I = sqrt(h) Q^{1/2} z1 and
/// xi = P z1 + R z2 with P = Phi Q^{1/2} / sqrt(eps h), Phi = int_0^h e^{Cv/eps} dv,
/// so that Cov(xi, I) = Phi Q / sqrt(eps). Keying z1 by (step, slot) alone makes
/// the Wiener path identical across epsilon values for a fixed (seed, replica).
class OuStepKernel {
public:
    OuStepKernel(const LinearOperator& c, const LinearOperator& q, double epsilon, double h) {
        c.validate();
        q.validate();
        if (!(h > 0.0)) throw InputError("ou step: h must be positive");
        if (!(epsilon > 0.0) || epsilon > 1.0) throw InputError("ou step: epsilon must lie in (0,1]");
        require_symmetric(q.m, "ou step: Q");
        n_ = c.dim();
        h_ = h;
        epsilon_ = epsilon;
        qinf_ = solve_lyapunov(c, q).m; // throws StabilityError for unstable C
        e_ = Eigen::MatrixXd((c.m * (h / epsilon)).exp());
        sigma_ = qinf_ - e_ * qinf_ * e_.transpose();
        sigma_ = 0.5 * (sigma_ + sigma_.transpose());
        qsqrt_ = psd_sqrt(q.m);
        s_ = std::sqrt(h) * qsqrt_;
        Eigen::MatrixXd phi = van_loan_integral(c.m / epsilon, Eigen::MatrixXd::Identity(n_, n_), h);
        p_ = phi * qsqrt_ / std::sqrt(epsilon * h);
        Eigen::MatrixXd cond = sigma_ - p_ * p_.transpose();
        r_ = psd_factor(cond, 1e-10);
    }

    int dim() const { return n_; }
    double step_size() const { return h_; }
    double epsilon() const { return epsilon_; }
    const Eigen::MatrixXd& propagator() const { return e_; }
    const Eigen::MatrixXd& step_covariance() const { return sigma_; }
    const Eigen::MatrixXd& stationary_covariance() const { return qinf_; }

    /// Cov(xi, Q^{1/2} dW) of the joint draw.
    Eigen::MatrixXd cross_covariance() const { return p_ * s_.transpose(); }

    std::pair<Eigen::VectorXd, Eigen::VectorXd>
    step(const Eigen::VectorXd& state, const Eigen::VectorXd& z1, const Eigen::VectorXd& z2) const {
        Eigen::VectorXd incr = s_ * z1;
        Eigen::VectorXd next = e_ * state + p_ * z1 + r_ * z2;
        return {std::move(next), std::move(incr)};
    }

private:
    int n_ = 0;
    double h_ = 0.0;
    double epsilon_ = 1.0;
    Eigen::MatrixXd e_, sigma_, qinf_, qsqrt_, s_, p_, r_;
};

/// Single exact step; draws 2n normals from the stream at (step_index, 0..2n-1).
inline std::pair<Eigen::VectorXd, Eigen::VectorXd>
ou_exact_step(const Eigen::VectorXd& state, const LinearOperator& c, const LinearOperator& q,
              double epsilon, double h, const GaussianStream& stream, std::uint64_t step_index = 0) {
    OuStepKernel k(c, q, epsilon, h);
    const int n = k.dim();
    Eigen::VectorXd z1 = stream.normal_vector(step_index, 0, n);
    Eigen::VectorXd z2 = stream.normal_vector(step_index, static_cast<std::uint64_t>(n), n);
    return k.step(state, z1, z2);
}

/// Iterates the exact kernel over the grid. Deterministic given
/// (seed, replica); the Wiener increments do not depend on epsilon.
inline FastPath simulate_fast_path(const LinearOperator& c, const LinearOperator& q, double epsilon,
                                   const Eigen::VectorXd& times, std::uint64_t seed,
                                   std::uint64_t replica = 0,
                                   const Eigen::VectorXd* w0 = nullptr) {
    if (times.size() < 2) throw GridError("simulate_fast_path: need at least two grid points");
    for (int i = 0; i + 1 < times.size(); ++i)
        if (!(times[i] < times[i + 1])) throw GridError("simulate_fast_path: grid must be strictly increasing");

    const int n = c.dim();
    GaussianStream stream(seed, replica);
    FastPath path;
    path.epsilon = epsilon;
    path.times = times;
    path.w.reserve(times.size());
    path.dW.reserve(times.size() - 1);
    Eigen::VectorXd state = w0 ? *w0 : Eigen::VectorXd::Zero(n);
    if (state.size() != n) throw InputError("simulate_fast_path: w0 dimension mismatch");
    path.w.push_back(state);

    std::map<double, OuStepKernel> kernels;
    for (int i = 0; i + 1 < times.size(); ++i) {
        const double h = times[i + 1] - times[i];
        auto it = kernels.find(h);
        if (it == kernels.end()) it = kernels.emplace(h, OuStepKernel(c, q, epsilon, h)).first;
        Eigen::VectorXd z1 = stream.normal_vector(static_cast<std::uint64_t>(i), 0, n);
        Eigen::VectorXd z2 = stream.normal_vector(static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(n), n);
        auto [next, incr] = it->second.step(state, z1, z2);
        state = next;
        path.w.push_back(state);
        path.dW.push_back(std::move(incr));
    }
    return path;
}

inline FastPath simulate_fast_path(const LinearOperator& c, const NoiseConfig& noise, double epsilon,
                                   const Eigen::VectorXd& times, const Eigen::VectorXd* w0 = nullptr) {
    return simulate_fast_path(c, noise.Q, epsilon, times, noise.seed, noise.replica, w0);
}

/// Draw from the invariant measure N(0, Q_inf) through the symmetric PSD
/// square root of Q_inf (eigenvalues in [-1e-12, 0] are clamped, below that
/// it is an error).
inline Eigen::VectorXd sample_invariant(const LinearOperator& c, const LinearOperator& q, DrawCursor& cursor) {
    Eigen::MatrixXd qinf = solve_lyapunov(c, q).m;
    Eigen::MatrixXd f = psd_factor(qinf, 1e-12);
    return f * cursor.next_vector(c.dim());
}

/// Exact grid values of y^eps and B from one stored path:
///   B_t = (-C)^{-1} Q^{1/2} W_t  (cumulative increments),
///   y_t = B_t - sqrt(eps) (-C)^{-1} w_t   (pathwise identity, no quadrature).
struct CoupledPaths {
    std::vector<Eigen::VectorXd> y;
    std::vector<Eigen::VectorXd> B;
};

inline CoupledPaths derive_y_and_B(const FastPath& path, const LinearOperator& c) {
    path.validate();
    const int n = c.dim();
    Eigen::PartialPivLU<Eigen::MatrixXd> lu((-c.m).eval());
    CoupledPaths out;
    out.B.reserve(path.w.size());
    out.y.reserve(path.w.size());
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
    const double se = std::sqrt(path.epsilon);
    out.B.push_back(b);
    out.y.push_back(Eigen::VectorXd::Zero(n)); // y_0 = 0 by definition
    for (size_t i = 0; i < path.dW.size(); ++i) {
        b += lu.solve(path.dW[i]);
        out.B.push_back(b);
        out.y.push_back(b - se * lu.solve((path.w[i + 1] - path.w[0]).eval()));
    }
    return out;
}

} // namespace roughflow
