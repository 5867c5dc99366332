#include <catch2/catch_amalgamated.hpp>

#include "roughflow/slowfast.hpp"

using namespace roughflow;
using Eigen::MatrixXd;
using Eigen::Vector3i;
using Eigen::VectorXd;

namespace {

VectorXd smooth_initial(const BasisPtr& b, double amp) {
    VectorXd c = VectorXd::Zero(b->size());
    int placed = 0;
    for (int im = 0; im < b->n_modes() && placed < 4; ++im) {
        if (!b->is_positive(im) || b->k_norm2(im) > 2.5) continue;
        c[b->coeff_index(im, 0)] = amp / (1.0 + placed);
        ++placed;
    }
    return c;
}

LinearOperator fluid_identity_C(const BasisPtr& b) { return build_C_operator(b, 1.0, 0.0); }

LinearOperator mixing_Q(const BasisPtr& b, double amp, double coupling) {
    // correlated noise on two interacting modes with k1 + k2 inside the box;
    // the polarizations are crossed so the symmetrized interaction is not a
    // pure gradient (a same-polarization mix of (1,0,0) and (0,1,0) shears
    // advects itself into a gradient, which Leray removes)
    const int i1 = b->find_mode(Vector3i(1, 0, 0));
    const int i2 = b->find_mode(Vector3i(0, 1, 0));
    VectorXd g1 = VectorXd::Zero(b->size());
    g1[b->coeff_index(i1, 1)] = 1.0;
    g1[b->coeff_index(i2, 0)] = coupling;
    g1.normalize();
    VectorXd g2 = VectorXd::Zero(b->size());
    g2[b->coeff_index(i1, 0)] = coupling;
    g2[b->coeff_index(i2, 1)] = -1.0;
    g2.normalize();
    MatrixXd q = amp * (g1 * g1.transpose() + 0.7 * amp * (g2 * g2.transpose()));
    return LinearOperator(std::move(q));
}

} // namespace

TEST_CASE("slow-fast: noiseless linear dynamics are exact", "[slowfast]") {
    auto b = make_basis(3, 1);
    LinearOperator c = fluid_identity_C(b);
    LinearOperator q(MatrixXd::Zero(b->size(), b->size()));
    VectorXd u0 = smooth_initial(b, 0.8);
    SlowFastOptions opts;
    opts.nonlinearity = false;
    auto traj = integrate_slow_fast(b, u0, VectorXd::Zero(b->size()), c, q, 0.5, 1.0, 5, 1, 0, opts);
    VectorXd stokes = stokes_diagonal(*b, opts.nu);
    for (int i = 0; i < traj.times.size(); ++i) {
        VectorXd want = (stokes.array() * traj.times[i]).exp().matrix().cwiseProduct(u0);
        CHECK((traj.u[i] - want).norm() < 1e-12 * std::max(1.0, want.norm()));
        CHECK(traj.w[i].norm() == 0.0);
        CHECK(traj.r[i].norm() == 0.0);
    }
}

TEST_CASE("slow-fast: state reconstruction v = eps^{-1/2} w + r", "[slowfast]") {
    auto b = make_basis(2, 1);
    LinearOperator c = fluid_identity_C(b);
    LinearOperator q(Eigen::MatrixXd(0.2 * MatrixXd::Identity(b->size(), b->size())));
    auto traj = integrate_slow_fast(b, smooth_initial(b, 0.5), VectorXd::Zero(b->size()), c, q,
                                    0.25, 0.5, 6, 3, 0);
    FastSlowState st = traj.state_at(10);
    CHECK((st.v().c - (traj.w[10] / std::sqrt(0.25) + traj.r[10])).norm() < 1e-15);
}

TEST_CASE("slow-fast: discrete energy inequality violation is O(h)", "[slowfast]") {
    auto b = make_basis(3, 1);
    LinearOperator c = fluid_identity_C(b);
    LinearOperator q = mixing_Q(b, 0.4, 0.8);
    VectorXd u0 = smooth_initial(b, 1.0);
    double viol[2];
    for (int l = 0; l < 2; ++l) {
        auto traj = integrate_slow_fast(b, u0, VectorXd::Zero(b->size()), c, q, 0.25, 0.5, 6 + l, 5, 0);
        viol[l] = energy_report(traj).max_violation;
    }
    CHECK(viol[0] < 0.05 * u0.squaredNorm());
    if (viol[0] > 1e-12) CHECK(viol[0] / viol[1] > 1.8); // at least first order in h
}

TEST_CASE("slow-fast: int E||r||^2 stays bounded across the eps ladder", "[slowfast]") {
    auto b = make_basis(2, 1);
    LinearOperator c = fluid_identity_C(b);
    LinearOperator q = mixing_Q(b, 0.5, 0.6);
    VectorXd u0 = smooth_initial(b, 0.7);
    std::vector<double> integrals;
    for (double eps : {0.25, 0.125, 0.0625}) {
        double acc = 0.0;
        const int nrep = 6;
        for (int r = 0; r < nrep; ++r) {
            auto traj = integrate_slow_fast(b, u0, VectorXd::Zero(b->size()), c, q, eps, 0.5, 7, 17, r);
            double integral = 0.0;
            const double h = traj.times[1] - traj.times[0];
            for (size_t i = 0; i + 1 < traj.r.size(); ++i)
                integral += 0.5 * h * (traj.r[i].squaredNorm() + traj.r[i + 1].squaredNorm());
            acc += integral;
        }
        integrals.push_back(acc / 6.0);
    }
    for (double v : integrals) CHECK(std::isfinite(v));
    CHECK(integrals.back() < 3.0 * (integrals.front() + 0.1));
}

TEST_CASE("remainder: zero lift and linear dynamics leave only quadrature error", "[slowfast]") {
    auto b = make_basis(2, 1);
    LinearOperator c = fluid_identity_C(b);
    LinearOperator q(MatrixXd::Zero(b->size(), b->size()));
    VectorXd u0 = smooth_initial(b, 0.9);
    SlowFastOptions opts;
    opts.nonlinearity = false;
    auto adv = AdvectionTable::build(b);

    double sup[2];
    for (int l = 0; l < 2; ++l) {
        auto traj = integrate_slow_fast(b, u0, VectorXd::Zero(b->size()), c, q, 0.5, 1.0, 6 + l, 7, 0, opts);
        std::vector<VectorXd> zero(traj.u.size(), VectorXd::Zero(b->size()));
        auto lift = std::make_shared<RoughPath>(canonical_lift(zero, 1.0, 4));
        DriverPair d = assemble_driver(lift, b, adv);
        auto rem = compute_remainder(traj, d, 4);
        double s = 0.0;
        for (int i = 0; i < rem.grid().n_points(); ++i)
            for (int j = i + 1; j < rem.grid().n_points(); ++j) s = std::max(s, rem.at(i, j).norm());
        sup[l] = s;
    }
    CHECK(sup[0] < 1e-4);
    CHECK(sup[0] / sup[1] > 3.0); // trapezoid quadrature: O(h^2) in the fine step
}

TEST_CASE("remainder: scaling exponent, cross-identity, p/3-variation", "[slowfast]") {
    auto b = make_basis(2, 1);
    LinearOperator c = fluid_identity_C(b);
    LinearOperator q = mixing_Q(b, 0.5, 0.7);
    VectorXd u0 = smooth_initial(b, 0.8);
    auto adv = AdvectionTable::build(b);

    std::vector<double> p3vars;
    for (double eps : {0.25, 0.0625}) {
        auto traj = integrate_slow_fast(b, u0, VectorXd::Zero(b->size()), c, q, eps, 1.0, 11, 23, 0);
        auto lift = std::make_shared<RoughPath>(build_coupled_lift(traj, c, 5));
        DriverPair d = assemble_driver(lift, b, adv);
        auto rem = compute_remainder(traj, d, 5);
        auto rep = remainder_scaling(rem, *b, 1.0, 1.0 / 0.4, 3);
        CHECK(rep.exponent > 1.0);
        CHECK(rep.r2 >= 0.9);
        p3vars.push_back(rep.p3var);

        // delta u^nat_{s,theta,t} = A^2_{theta t} delta u_{s theta} + A^1_{theta t} u^sharp_{s theta}
        const int stride = (1 << 11) / (1 << 5);
        for (auto [i, j, k] : std::vector<std::array<int, 3>>{{0, 2, 5}, {1, 8, 16}, {4, 12, 30}}) {
            VectorXd lhs = rem.delta(i, j, k);
            VectorXd du = traj.u[static_cast<size_t>(j) * stride] - traj.u[static_cast<size_t>(i) * stride];
            VectorXd usharp = du - d.apply1(i, j, traj.u[static_cast<size_t>(i) * stride]);
            VectorXd rhs = d.apply2_tensor(d.lift->level2_pair(j, k), du) + d.apply1(j, k, usharp);
            CHECK((lhs - rhs).norm() < 1e-9 * std::max(1.0, rhs.norm()));
        }
    }
    // p/3-variation of the remainder does not explode down the ladder
    CHECK(p3vars[1] < 5.0 * (p3vars[0] + 1e-6));
}

TEST_CASE("rough Euler: degenerate noise reduces to the deterministic solver", "[slowfast]") {
    auto b = make_basis(2, 1);
    LinearOperator c = fluid_identity_C(b);
    VectorXd u0 = smooth_initial(b, 0.8);
    auto adv = AdvectionTable::build(b);

    // reference: slow-fast integrator with Q = 0 (w = r = 0) and b enabled
    LinearOperator q0(MatrixXd::Zero(b->size(), b->size()));
    auto ref = integrate_slow_fast(b, u0, VectorXd::Zero(b->size()), c, q0, 1.0, 1.0, 10, 1, 0);

    double err[2];
    for (int l = 0; l < 2; ++l) {
        const int lvl = 5 + l;
        std::vector<VectorXd> zero(static_cast<size_t>(1 << lvl) + 1, VectorXd::Zero(b->size()));
        auto lift = std::make_shared<RoughPath>(canonical_lift(zero, 1.0, lvl));
        DriverPair d = assemble_driver(lift, b, adv);
        auto traj = rough_euler_limit(b, u0, d, VectorXd::Zero(b->size()));
        err[l] = (traj.u.back() - ref.u.back()).norm();
    }
    CHECK(err[0] < 0.05 * u0.norm());
    CHECK(err[0] / err[1] > 1.8); // first-order self-convergence under halving
}

TEST_CASE("rough Euler: driven by a limit lift stays stable and refines", "[slowfast]") {
    auto b = make_basis(2, 1);
    const int n = b->size();
    LinearOperator c = fluid_identity_C(b);
    LinearOperator q = mixing_Q(b, 0.3, 0.5);
    VectorXd u0 = smooth_initial(b, 0.6);
    auto adv = AdvectionTable::build(b);

    GaussianStream stream(314, 0);
    MatrixXd qs = psd_sqrt(q.m);
    const int nfine = 1 << 9;
    std::vector<VectorXd> dw;
    for (int i = 0; i < nfine; ++i)
        dw.push_back(std::sqrt(1.0 / nfine) * (qs * stream.normal_vector(i, 0, n)));

    VectorXd rbar = ito_stokes_oracle(c, q, b).c;
    std::vector<VectorXd> ends;
    for (int lvl : {3, 4, 5}) {
        LimitLift lift = limit_lift(dw, 1.0, c, q, lvl, LiftForm::ito);
        DriverPair d = assemble_driver(std::make_shared<RoughPath>(lift.rp), b, adv);
        auto traj = rough_euler_limit(b, u0, d, rbar);
        ends.push_back(traj.u.back());
    }
    const double e34 = (ends[0] - ends[2]).norm();
    const double e45 = (ends[1] - ends[2]).norm();
    CHECK(std::isfinite(e34));
    CHECK(e45 <= e34 + 1e-12); // step refinement moves the answer less and less
}

TEST_CASE("slow-fast: blow-up detection and epsilon floor", "[slowfast]") {
    auto b = make_basis(2, 1);
    LinearOperator c = fluid_identity_C(b);
    LinearOperator q(MatrixXd::Zero(b->size(), b->size()));
    VectorXd u0 = smooth_initial(b, 1.0);

    SlowFastOptions opts;
    opts.blowup_factor = 1e-3; // any state trips the detector
    try {
        integrate_slow_fast(b, u0, VectorXd::Zero(b->size()), c, q, 0.5, 1.0, 4, 1, 0, opts);
        FAIL("expected BlowUpError");
    } catch (const BlowUpError& e) {
        CHECK(e.time > 0.0);
        CHECK(e.time <= 1.0);
    }

    CHECK_THROWS_AS(integrate_slow_fast(b, u0, VectorXd::Zero(b->size()), c, q, 1e-5, 1.0, 4, 1, 0),
                    InputError); // eps below 2^-12 rejected
}

TEST_CASE("Ito-Stokes: single shear noise gives zero drift; scaling is linear", "[slowfast]") {
    auto b = make_basis(3, 1);
    const int i1 = b->find_mode(Vector3i(1, 0, 0));
    VectorXd g = VectorXd::Zero(b->size());
    g[b->coeff_index(i1, 0)] = 1.0;
    LinearOperator c = fluid_identity_C(b);
    LinearOperator qshear(Eigen::MatrixXd(0.7 * g * g.transpose()));
    CHECK(ito_stokes_oracle(c, qshear, b).h_norm() < 1e-13);

    LinearOperator q = mixing_Q(b, 0.5, 0.7);
    VectorXd r1 = ito_stokes_oracle(c, q, b).c;
    LinearOperator q3(Eigen::MatrixXd(3.0 * q.m));
    VectorXd r3 = ito_stokes_oracle(c, q3, b).c;
    CHECK((r3 - 3.0 * r1).norm() < 1e-12 * std::max(1.0, r1.norm()));
    CHECK(r1.norm() > 1e-4); // mode-mixing noise produces a genuine drift
}

TEST_CASE("Ito-Stokes: oracle matches Monte Carlo over the invariant measure", "[slowfast]") {
    auto b = make_basis(3, 1);
    LinearOperator c = fluid_identity_C(b);
    LinearOperator q = mixing_Q(b, 0.5, 0.7);
    VectorXd want = ito_stokes_oracle(c, q, b).c;

    MatrixXd qinf = solve_lyapunov(c, q).m;
    MatrixXd f = psd_factor(qinf);
    Eigen::PartialPivLU<MatrixXd> lu((-c.m).eval());
    const int nsamp = 30000;
    VectorXd acc = VectorXd::Zero(b->size());
    VectorXd acc2 = VectorXd::Zero(b->size());
    DrawCursor cur{GaussianStream(515, 0)};
    for (int s = 0; s < nsamp; ++s) {
        VectorXd w = f * cur.next_vector(b->size());
        VelocityField wf(b, w);
        VectorXd val = lu.solve(nonlinearity_b(wf, wf).c);
        acc += val;
        acc2 += val.cwiseAbs2();
    }
    VectorXd mean = acc / nsamp;
    VectorXd var = acc2 / nsamp - mean.cwiseAbs2();
    const double sigma = std::sqrt(var.maxCoeff() / nsamp) * std::sqrt(double(b->size()));
    CHECK((mean - want).norm() < 3.0 * std::max(sigma, 1e-12));
}

TEST_CASE("Ito-Stokes: estimator converges to the oracle with 1/(T/eps) variance", "[slowfast]") {
    auto b = make_basis(3, 1);
    LinearOperator c = fluid_identity_C(b);
    LinearOperator q = mixing_Q(b, 0.5, 0.7);
    VectorXd want = ito_stokes_oracle(c, q, b).c;

    std::vector<double> eps_list{1.0 / 8, 1.0 / 32, 1.0 / 128};
    std::vector<double> log_eps, log_var;
    for (double eps : eps_list) {
        const int nsteps = static_cast<int>(8.0 / eps);
        VectorXd times = VectorXd::LinSpaced(nsteps + 1, 0.0, 1.0);
        const int nrep = 24;
        std::vector<double> sq;
        for (int r = 0; r < nrep; ++r) {
            FastPath p = simulate_fast_path(c, q, eps, times, 90210, r);
            VectorXd est = ito_stokes_estimate(p, c, b).c;
            sq.push_back((est - want).squaredNorm());
        }
        auto ms = mean_stderr(sq);
        log_eps.push_back(std::log(eps));
        log_var.push_back(std::log(ms.mean));
    }
    auto fit = ols_fit(log_eps, log_var);
    CHECK(fit.slope == Catch::Approx(1.0).margin(0.35)); // variance ~ eps/T
    // small-eps estimate is close in relative error
    FastPath p = simulate_fast_path(c, q, 1.0 / 128, VectorXd::LinSpaced(1025, 0.0, 1.0), 7, 0);
    CHECK((ito_stokes_estimate(p, c, b).c - want).norm() < 0.35 * want.norm());
}
