#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "roughflow/driver.hpp"
#include "roughflow/dyadic.hpp"
#include "roughflow/errors.hpp"
#include "roughflow/limitlift.hpp"
#include "roughflow/linops.hpp"
#include "roughflow/ou.hpp"
#include "roughflow/roughpath.hpp"
#include "roughflow/stats.hpp"
#include "roughflow/torus.hpp"

namespace roughflow {

/// Snapshot of the coupled system; the original fast variable is recovered
/// through v = eps^{-1/2} w + r.
struct FastSlowState {
    double time = 0.0;
    double epsilon = 1.0;
    VelocityField u, w, r;

    VelocityField v() const {
        VelocityField out = w;
        out.c = w.c / std::sqrt(epsilon) + r.c;
        return out;
    }
};

struct SlowFastTrajectory {
    BasisPtr basis;
    double epsilon = 1.0;
    double nu = 1.0;
    bool nonlinearity = true;
    Eigen::VectorXd times;
    std::vector<Eigen::VectorXd> u, w, r;
    std::vector<Eigen::VectorXd> dW;

    FastSlowState state_at(int i) const {
        return FastSlowState{times[i], epsilon, VelocityField(basis, u[i]), VelocityField(basis, w[i]),
                             VelocityField(basis, r[i])};
    }

    FastPath fast_path() const {
        FastPath p;
        p.epsilon = epsilon;
        p.times = times;
        p.w = w;
        p.dW = dW;
        return p;
    }
};

struct SlowFastOptions {
    double nu = 1.0;
    bool nonlinearity = true;
    double blowup_factor = 1e3;
    Eigen::VectorXd w0; // empty = zero start per the fast equation
};

/// Time integration of the coupled system on a uniform grid of 2^fine_level
/// steps. The fast component w uses the exact Gaussian one-step kernel; the
/// stiff linear parts are integrated exactly (exponential step for A on u,
/// e^{Ch/eps} plus its integrated factor for eps^{-1} C on r); the
/// nonlinearity is explicit, which keeps <b(.,u), u> = 0 exact in the energy
/// budget. Wiener increments are recorded for lift construction.
inline SlowFastTrajectory integrate_slow_fast(const BasisPtr& basis, const Eigen::VectorXd& u0,
                                              const Eigen::VectorXd& r0, const LinearOperator& c,
                                              const LinearOperator& q, double epsilon, double T,
                                              int fine_level, std::uint64_t seed, std::uint64_t replica = 0,
                                              const SlowFastOptions& opts = {}) {
    validate_generator(c, q);
    if (!(epsilon > 0.0) || epsilon > 1.0) throw InputError("integrate_slow_fast: epsilon must lie in (0,1]");
    if (epsilon < std::pow(2.0, -12))
        throw InputError("integrate_slow_fast: epsilon below 2^-12 risks step-covariance underflow");
    const int n = basis->size();
    if (u0.size() != n || r0.size() != n || c.dim() != n)
        throw InputError("integrate_slow_fast: dimension mismatch");

    const int nsteps = 1 << fine_level;
    const double h = T / nsteps;
    OuStepKernel kernel(c, q, epsilon, h);
    Eigen::MatrixXd phi_r = van_loan_integral(c.m / epsilon, Eigen::MatrixXd::Identity(n, n), h);

    Eigen::VectorXd stokes = stokes_diagonal(*basis, opts.nu);
    Eigen::VectorXd eu(n), phi1(n);
    for (int i = 0; i < n; ++i) {
        const double z = h * stokes[i];
        eu[i] = std::exp(z);
        phi1[i] = (std::abs(z) > 1e-12) ? (std::exp(z) - 1.0) / z : 1.0 + 0.5 * z;
    }

    GaussianStream stream(seed, replica);
    const double inv_se = 1.0 / std::sqrt(epsilon);
    const double blow = opts.blowup_factor * std::max(1.0, u0.norm());

    SlowFastTrajectory traj;
    traj.basis = basis;
    traj.epsilon = epsilon;
    traj.nu = opts.nu;
    traj.nonlinearity = opts.nonlinearity;
    traj.times = Eigen::VectorXd::LinSpaced(nsteps + 1, 0.0, T);
    traj.u.reserve(nsteps + 1);
    traj.w.reserve(nsteps + 1);
    traj.r.reserve(nsteps + 1);
    traj.dW.reserve(nsteps);

    Eigen::VectorXd u = u0;
    Eigen::VectorXd r = r0;
    Eigen::VectorXd w = opts.w0.size() ? opts.w0 : Eigen::VectorXd::Zero(n);
    if (w.size() != n) throw InputError("integrate_slow_fast: w0 dimension mismatch");
    traj.u.push_back(u);
    traj.w.push_back(w);
    traj.r.push_back(r);

    for (int step = 0; step < nsteps; ++step) {
        Eigen::VectorXd v = inv_se * w + r;
        Eigen::VectorXd b_u = Eigen::VectorXd::Zero(n);
        Eigen::VectorXd b_v = Eigen::VectorXd::Zero(n);
        if (opts.nonlinearity) {
            VelocityField total(basis, (u + v).eval());
            b_u = nonlinearity_b(total, VelocityField(basis, u)).c;
            b_v = nonlinearity_b(total, VelocityField(basis, v)).c;
        }
        Eigen::VectorXd g_r = stokes.cwiseProduct(v) + b_v;

        u = eu.cwiseProduct(u) + h * phi1.cwiseProduct(b_u);
        r = kernel.propagator() * r + phi_r * g_r;
        Eigen::VectorXd z1 = stream.normal_vector(step, 0, n);
        Eigen::VectorXd z2 = stream.normal_vector(step, static_cast<std::uint64_t>(n), n);
        auto [wn, incr] = kernel.step(w, z1, z2);
        w = wn;

        traj.u.push_back(u);
        traj.w.push_back(w);
        traj.r.push_back(r);
        traj.dW.push_back(std::move(incr));
        if (u.norm() > blow)
            throw BlowUpError(traj.times[step + 1],
                              "integrate_slow_fast: slow component exceeded the blow-up threshold at t = " +
                                  std::to_string(traj.times[step + 1]));
    }
    return traj;
}

/// Discrete energy budget of the slow component:
///   max_n [ ||u_n||^2 + 2 nu int_0^{t_n} ||grad u||^2 - ||u_0||^2 ]_+ .
struct EnergyReport {
    double max_violation = 0.0;
    double relative = 0.0;
};

inline EnergyReport energy_report(const SlowFastTrajectory& traj) {
    const TorusBasis& b = *traj.basis;
    const double h = traj.times[1] - traj.times[0];
    Eigen::VectorXd grad_w(b.size());
    for (int i = 0; i < b.size(); ++i) grad_w[i] = b.k_norm2(b.mode_of_coeff(i));
    const double e0 = traj.u.front().squaredNorm();
    double dissip = 0.0;
    EnergyReport rep;
    for (size_t i = 1; i < traj.u.size(); ++i) {
        const double gprev = grad_w.dot(traj.u[i - 1].cwiseAbs2());
        const double gcur = grad_w.dot(traj.u[i].cwiseAbs2());
        dissip += 0.5 * h * (gprev + gcur);
        const double lhs = traj.u[i].squaredNorm() + 2.0 * traj.nu * dissip;
        rep.max_violation = std::max(rep.max_violation, lhs - e0);
    }
    rep.relative = rep.max_violation / std::max(e0, 1e-300);
    return rep;
}

/// Canonical lift of y^eps = int eps^{-1/2} w dt from the stored trajectory,
/// through the pathwise identity y = B - sqrt(eps)(-C)^{-1}(w - w_0).
inline RoughPath build_coupled_lift(const SlowFastTrajectory& traj, const LinearOperator& c,
                                    int coarse_level, double alpha = 0.4) {
    FastPath p = traj.fast_path();
    CoupledPaths cp = derive_y_and_B(p, c);
    return canonical_lift(cp.y, traj.times[traj.times.size() - 1], coarse_level, alpha);
}

/// Remainder u^nat_{st} = delta u_{st} - delta mu_{st} - A^1_{st} u_s - A^2_{st} u_s
/// on all pairs of the coarse dyadic grid; the drift mu is the time integral
/// of A u + b(u,u) + b(r,u) accumulated by trapezoid over the fine grid.
inline TwoIndexMap<Eigen::VectorXd> compute_remainder(const SlowFastTrajectory& traj,
                                                      const DriverPair& driver, int coarse_level) {
    const int nfine = static_cast<int>(traj.times.size()) - 1;
    const int ncoarse = 1 << coarse_level;
    if (nfine % ncoarse != 0) throw GridError("compute_remainder: trajectory does not refine the coarse grid");
    if (driver.lift->grid.level != coarse_level)
        throw GridError("compute_remainder: driver lift level mismatch");
    const int stride = nfine / ncoarse;
    const int n = traj.basis->size();
    const double h = traj.times[1] - traj.times[0];
    const double T = traj.times[traj.times.size() - 1];

    Eigen::VectorXd stokes = stokes_diagonal(*traj.basis, traj.nu);
    std::vector<Eigen::VectorXd> g(nfine + 1);
    for (int i = 0; i <= nfine; ++i) {
        g[i] = stokes.cwiseProduct(traj.u[i]);
        if (traj.nonlinearity) {
            VelocityField ui(traj.basis, traj.u[i]);
            g[i] += nonlinearity_b(ui, ui).c + nonlinearity_b(VelocityField(traj.basis, traj.r[i]), ui).c;
        }
    }
    std::vector<Eigen::VectorXd> prefix(nfine + 1, Eigen::VectorXd::Zero(n));
    for (int i = 0; i < nfine; ++i) prefix[i + 1] = prefix[i] + 0.5 * h * (g[i] + g[i + 1]);

    TwoIndexMap<Eigen::VectorXd> rem(DyadicGrid(T, coarse_level), Eigen::VectorXd::Zero(n));
    for (int i = 0; i < ncoarse + 1; ++i) {
        for (int j = i + 1; j < ncoarse + 1; ++j) {
            const int fi = i * stride, fj = j * stride;
            Eigen::VectorXd val = traj.u[fj] - traj.u[fi] - (prefix[fj] - prefix[fi]) -
                                  driver.apply1(i, j, traj.u[fi]) - driver.apply2(i, j, traj.u[fi]);
            rem.ref(i, j) = std::move(val);
        }
    }
    return rem;
}

/// Scaling diagnostic: log-log fit of sup_s ||u^nat_{s,s+h}||_{H^{-3}}
/// against h over the deepest dyadic levels.
struct RemainderScalingReport {
    double exponent = 0.0;
    double r2 = 0.0;
    std::vector<double> level_h;
    std::vector<double> level_sup;
    double p3var = 0.0;
};

inline RemainderScalingReport remainder_scaling(const TwoIndexMap<Eigen::VectorXd>& rem,
                                                const TorusBasis& basis, double nu, double p,
                                                int n_levels = 3) {
    const DyadicGrid& g = rem.grid();
    Eigen::VectorXd w(basis.size());
    for (int i = 0; i < basis.size(); ++i)
        w[i] = std::pow(std::sqrt(nu * basis.k_norm2(basis.mode_of_coeff(i))), -3.0);
    auto wnorm = [&](const Eigen::VectorXd& x) { return w.cwiseProduct(x).norm(); };

    RemainderScalingReport rep;
    std::vector<double> xs, ys;
    for (int lvl = 0; lvl < n_levels; ++lvl) {
        const int stride = 1 << lvl;
        double sup = 0.0;
        for (int i = 0; i + stride <= g.n_intervals(); i += stride)
            sup = std::max(sup, wnorm(rem.at(i, i + stride)));
        rep.level_h.push_back(stride * g.dt());
        rep.level_sup.push_back(sup);
        if (sup > 0.0) {
            xs.push_back(std::log(stride * g.dt()));
            ys.push_back(std::log(sup));
        }
    }
    if (xs.size() >= 2) {
        auto fit = ols_fit(xs, ys);
        rep.exponent = fit.slope;
        rep.r2 = fit.r2;
    }

    // p/3-variation of the weighted remainder over the dyadic grid
    const int npts = g.n_points();
    std::vector<double> best(npts, 0.0);
    const double pv = p / 3.0;
    for (int j = 1; j < npts; ++j) {
        double v = 0.0;
        for (int i = 0; i < j; ++i) v = std::max(v, best[i] + std::pow(wnorm(rem.at(i, j)), pv));
        best[j] = v;
    }
    rep.p3var = std::pow(best[npts - 1], 1.0 / pv);
    return rep;
}

/// One-step rough-driver Euler scheme for the limit equation:
///   delta u = [A u + b(u,u) + b(rbar, u)] (t-s) + A^1_{st} u + A^2_{st} u.
inline SlowFastTrajectory rough_euler_limit(const BasisPtr& basis, const Eigen::VectorXd& u0,
                                            const DriverPair& driver, const Eigen::VectorXd& rbar,
                                            double nu = 1.0, bool nonlinearity = true,
                                            double blowup_factor = 1e3) {
    const RoughPath& rp = *driver.lift;
    const int n = basis->size();
    if (u0.size() != n || rbar.size() != n) throw InputError("rough_euler_limit: dimension mismatch");
    const int nsteps = rp.grid.n_intervals();
    const double h = rp.grid.dt();
    Eigen::VectorXd stokes = stokes_diagonal(*basis, nu);
    VelocityField rbar_f(basis, rbar);

    SlowFastTrajectory traj;
    traj.basis = basis;
    traj.epsilon = 1.0;
    traj.nu = nu;
    traj.times = Eigen::VectorXd::LinSpaced(nsteps + 1, 0.0, rp.grid.T);
    Eigen::VectorXd u = u0;
    traj.u.push_back(u);
    const double blow = blowup_factor * std::max(1.0, u0.norm());
    for (int j = 0; j < nsteps; ++j) {
        Eigen::VectorXd drift = stokes.cwiseProduct(u);
        if (nonlinearity) {
            VelocityField uf(basis, u);
            drift += nonlinearity_b(uf, uf).c + nonlinearity_b(rbar_f, uf).c;
        }
        u += h * drift + driver.apply1(j, j + 1, u) + driver.apply2(j, j + 1, u);
        traj.u.push_back(u);
        if (u.norm() > blow)
            throw BlowUpError(traj.times[j + 1], "rough_euler_limit: blow-up at t = " +
                                                     std::to_string(traj.times[j + 1]));
    }
    return traj;
}

/// Time average (1/T) int_0^T (-C)^{-1} b(w_s, w_s) ds over the stored path,
/// by trapezoid quadrature.
inline VelocityField ito_stokes_estimate(const FastPath& path, const LinearOperator& c,
                                         const BasisPtr& basis) {
    path.validate();
    const int n = basis->size();
    if (c.dim() != n || path.w.front().size() != n) throw InputError("ito_stokes_estimate: dimension mismatch");
    Eigen::PartialPivLU<Eigen::MatrixXd> lu((-c.m).eval());
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(n);
    std::vector<Eigen::VectorXd> vals(path.w.size());
    for (size_t i = 0; i < path.w.size(); ++i) {
        VelocityField wf(basis, path.w[i]);
        vals[i] = lu.solve(nonlinearity_b(wf, wf).c);
    }
    for (size_t i = 0; i + 1 < vals.size(); ++i) {
        const double h = path.times[i + 1] - path.times[i];
        acc += 0.5 * h * (vals[i] + vals[i + 1]);
    }
    const double T = path.times[path.times.size() - 1] - path.times[0];
    return VelocityField(basis, Eigen::VectorXd(acc / T));
}

/// Closed-form Gaussian average: rbar = int (-C)^{-1} b(w, w) dmu(w) with
/// mu = N(0, Q_inf), reduced through the eigendecomposition of Q_inf to
/// sum_j lambda_j (-C)^{-1} b(f_j, f_j).
inline VelocityField ito_stokes_oracle(const LinearOperator& c, const LinearOperator& q,
                                       const BasisPtr& basis) {
    const int n = basis->size();
    if (c.dim() != n) throw InputError("ito_stokes_oracle: dimension mismatch");
    Eigen::MatrixXd qinf = solve_lyapunov(c, q).m;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(qinf);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu((-c.m).eval());
    const double lmax = std::max(es.eigenvalues().maxCoeff(), 0.0);
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(n);
    for (int j = 0; j < n; ++j) {
        const double lam = es.eigenvalues()[j];
        if (lam <= 1e-14 * std::max(1.0, lmax)) continue;
        VelocityField fj(basis, es.eigenvectors().col(j));
        acc += lam * lu.solve(nonlinearity_b(fj, fj).c);
    }
    return VelocityField(basis, std::move(acc));
}

} // namespace roughflow
