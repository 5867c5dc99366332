#include <catch2/catch_amalgamated.hpp>

#include "roughflow/ou.hpp"

using namespace roughflow;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd empirical_cov(const std::vector<VectorXd>& xs) {
    const int n = static_cast<int>(xs.front().size());
    VectorXd mean = VectorXd::Zero(n);
    for (const auto& x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    MatrixXd cov = MatrixXd::Zero(n, n);
    for (const auto& x : xs) cov += (x - mean) * (x - mean).transpose();
    return cov / static_cast<double>(xs.size() - 1);
}

} // namespace

TEST_CASE("one-step law exactness: scalar closed form to 1e-12", "[ou]") {
    LinearOperator c(-MatrixXd::Identity(3, 3));
    LinearOperator q(MatrixXd::Identity(3, 3));
    const double h = 0.37, eps = 1.0;
    OuStepKernel k(c, q, eps, h);
    CHECK((k.propagator() - std::exp(-h) * MatrixXd::Identity(3, 3)).norm() < 1e-12);
    const double var = 0.5 * (1.0 - std::exp(-2.0 * h)); // 1-D OU integral
    CHECK((k.step_covariance() - var * MatrixXd::Identity(3, 3)).norm() < 1e-12);
    // cross covariance with the Wiener increment: int_0^h e^{-s} ds / sqrt(eps)
    const double cross = 1.0 - std::exp(-h);
    CHECK((k.cross_covariance() - cross * MatrixXd::Identity(3, 3)).norm() < 1e-12);
}

TEST_CASE("degenerate cases: Q = 0 deterministic decay, h -> 0 continuity", "[ou]") {
    LinearOperator c(-MatrixXd::Identity(2, 2));
    LinearOperator q0(MatrixXd::Zero(2, 2));
    GaussianStream stream(11, 0);
    VectorXd v(2);
    v << 1.0, -2.0;
    auto [next, incr] = ou_exact_step(v, c, q0, 0.5, 0.25, stream);
    CHECK((next - std::exp(-0.5) * v).norm() < 1e-14);
    CHECK(incr.norm() == 0.0);

    OuStepKernel ktiny(c, LinearOperator::identity(2), 1.0, 1e-10);
    CHECK(ktiny.step_covariance().norm() < 1e-9);
    CHECK((ktiny.propagator() - MatrixXd::Identity(2, 2)).norm() < 1e-9);

    CHECK_THROWS_AS(OuStepKernel(c, LinearOperator::identity(2), 1.0, -0.1), InputError);
    CHECK_THROWS_AS(OuStepKernel(LinearOperator::identity(2), LinearOperator::identity(2), 1.0, 0.1),
                    StabilityError);
}

TEST_CASE("joint law of (state, Wiener increment) matches its exact covariance", "[ou]") {
    MatrixXd cm(2, 2);
    cm << -1.0, 0.4, -0.2, -2.0;
    MatrixXd qm(2, 2);
    qm << 1.0, 0.3, 0.3, 0.8;
    LinearOperator c(cm), q(qm);
    const double eps = 0.25, h = 0.1;
    OuStepKernel k(c, q, eps, h);

    const int nrep = 60000;
    std::vector<VectorXd> joint;
    joint.reserve(nrep);
    for (int r = 0; r < nrep; ++r) {
        GaussianStream stream(77, r);
        VectorXd z1 = stream.normal_vector(0, 0, 2);
        VectorXd z2 = stream.normal_vector(0, 2, 2);
        auto [x, iw] = k.step(VectorXd::Zero(2), z1, z2);
        VectorXd j(4);
        j << x, iw;
        joint.push_back(j);
    }
    MatrixXd cov = empirical_cov(joint);
    MatrixXd want(4, 4);
    want.topLeftCorner(2, 2) = k.step_covariance();
    want.topRightCorner(2, 2) = k.cross_covariance();
    want.bottomLeftCorner(2, 2) = k.cross_covariance().transpose();
    want.bottomRightCorner(2, 2) = h * qm;
    CHECK((cov - want).norm() < 4.0 / std::sqrt(double(nrep)));
}

TEST_CASE("Markov consistency: one step of 2h equals two steps of h in law", "[ou]") {
    MatrixXd cm(2, 2);
    cm << -1.0, 0.5, 0.0, -1.5;
    LinearOperator c(cm), q(LinearOperator::identity(2));
    const double eps = 0.5, h = 0.2;
    OuStepKernel kh(c, q, eps, h);
    OuStepKernel k2h(c, q, eps, 2.0 * h);
    // exact kernel identities
    CHECK((k2h.propagator() - kh.propagator() * kh.propagator()).norm() < 1e-12);
    MatrixXd sig2 = kh.step_covariance() +
                    kh.propagator() * kh.step_covariance() * kh.propagator().transpose();
    CHECK((k2h.step_covariance() - sig2).norm() < 1e-12);

    // distributional check over replicas
    const int nrep = 40000;
    std::vector<VectorXd> one, two;
    for (int r = 0; r < nrep; ++r) {
        GaussianStream s(5150, r);
        auto [a, iw1] = k2h.step(VectorXd::Zero(2), s.normal_vector(0, 0, 2), s.normal_vector(0, 2, 2));
        one.push_back(a);
        auto [b1, iwa] = kh.step(VectorXd::Zero(2), s.normal_vector(1, 0, 2), s.normal_vector(1, 2, 2));
        auto [b2, iwb] = kh.step(b1, s.normal_vector(2, 0, 2), s.normal_vector(2, 2, 2));
        two.push_back(b2);
    }
    const double tol = 5.0 / std::sqrt(double(nrep));
    CHECK((empirical_cov(one) - empirical_cov(two)).norm() < tol);
}

TEST_CASE("simulate_fast_path: determinism, Q=0 decay, stationary covariance", "[ou]") {
    LinearOperator c(-MatrixXd::Identity(2, 2));
    LinearOperator q(MatrixXd::Identity(2, 2));
    VectorXd times = VectorXd::LinSpaced(21, 0.0, 1.0);

    FastPath p1 = simulate_fast_path(c, q, 0.05, times, 42, 3);
    FastPath p2 = simulate_fast_path(c, q, 0.05, times, 42, 3);
    REQUIRE(p1.w.size() == p2.w.size());
    for (size_t i = 0; i < p1.w.size(); ++i) CHECK(p1.w[i] == p2.w[i]); // bit identical

    VectorXd v(2);
    v << 0.7, -0.1;
    FastPath pd = simulate_fast_path(c, LinearOperator(MatrixXd::Zero(2, 2)), 0.1, times, 1, 0, &v);
    for (int i = 0; i < times.size(); ++i)
        CHECK((pd.w[i] - std::exp(-times[i] / 0.1) * v).norm() < 1e-12);

    // empirical covariance at t = 1 >> eps matches Q_inf = I/2 within MC error
    const int nrep = 10000;
    std::vector<VectorXd> ends;
    for (int r = 0; r < nrep; ++r)
        ends.push_back(simulate_fast_path(c, q, 0.05, times, 7, r).w.back());
    MatrixXd cov = empirical_cov(ends);
    // 3 x MC stderr of the Frobenius deviation for 10^4 samples of a 2x2 cov
    CHECK((cov - 0.5 * MatrixXd::Identity(2, 2)).norm() < 0.03);
}

TEST_CASE("Wiener increments are identical across epsilon (coupling)", "[ou]") {
    MatrixXd cm(2, 2);
    cm << -1.0, 0.2, -0.1, -1.4;
    LinearOperator c(cm), q(LinearOperator::identity(2));
    VectorXd times = VectorXd::LinSpaced(17, 0.0, 0.5);
    FastPath pa = simulate_fast_path(c, q, 0.5, times, 99, 1);
    FastPath pb = simulate_fast_path(c, q, 0.125, times, 99, 1);
    for (size_t i = 0; i < pa.dW.size(); ++i) CHECK(pa.dW[i] == pb.dW[i]);
    // but the fast states differ
    CHECK((pa.w.back() - pb.w.back()).norm() > 1e-6);
}

TEST_CASE("stationarity: invariant start keeps covariance Q_inf at all grid times", "[ou]") {
    MatrixXd cm(2, 2);
    cm << -1.0, 0.5, -0.5, -2.0;
    MatrixXd qm(2, 2);
    qm << 1.0, 0.2, 0.2, 0.5;
    LinearOperator c(cm), q(qm);
    MatrixXd qinf = solve_lyapunov(c, q).m;
    VectorXd times = VectorXd::LinSpaced(5, 0.0, 0.2);

    const int nrep = 30000;
    std::vector<std::vector<VectorXd>> samples(times.size());
    for (int r = 0; r < nrep; ++r) {
        DrawCursor cur{GaussianStream(1234, r), 1u << 20};
        VectorXd w0 = sample_invariant(c, q, cur);
        FastPath p = simulate_fast_path(c, q, 0.3, times, 1234, r, &w0);
        for (int i = 0; i < times.size(); ++i) samples[i].push_back(p.w[i]);
    }
    for (int i = 0; i < times.size(); ++i)
        CHECK((empirical_cov(samples[i]) - qinf).norm() < 5.0 * qinf.norm() / std::sqrt(double(nrep)) * 4.0);
}

TEST_CASE("sample_invariant: degenerate covariance and scaling", "[ou]") {
    LinearOperator c(-MatrixXd::Identity(2, 2));
    DrawCursor cur{GaussianStream(3, 0)};
    CHECK(sample_invariant(c, LinearOperator(MatrixXd::Zero(2, 2)), cur).norm() == 0.0);

    // linearity of the Lyapunov solution: Q -> cQ scales Q_inf by c exactly
    MatrixXd qm(2, 2);
    qm << 1.0, 0.4, 0.4, 2.0;
    MatrixXd q1 = solve_lyapunov(c, LinearOperator(qm)).m;
    MatrixXd q3 = solve_lyapunov(c, LinearOperator(Eigen::MatrixXd(3.0 * qm))).m;
    CHECK((q3 - 3.0 * q1).norm() < 1e-14);
}

TEST_CASE("sup_t E||w_t||^2 bounded uniformly in eps (exact second moments)", "[ou]") {
    MatrixXd cm(2, 2);
    cm << -1.0, 0.3, -0.3, -1.2;
    LinearOperator c(cm), q(LinearOperator::identity(2));
    MatrixXd qinf = solve_lyapunov(c, q).m;
    const double bound = qinf.trace();
    VectorXd times = VectorXd::LinSpaced(33, 0.0, 1.0);
    for (double eps : {0.5, 0.25, 0.125, 0.0625, 0.03125}) {
        // from w_0 = 0 the exact marginal covariance is Q_inf - E_t Q_inf E_t^T
        for (int i = 1; i < times.size(); ++i) {
            MatrixXd et = Eigen::MatrixXd((cm * (times[i] / eps)).exp());
            const double m2 = (qinf - et * qinf * et.transpose()).trace();
            CHECK(m2 <= bound * (1.0 + 1e-12));
        }
    }
}

TEST_CASE("derive_y_and_B: pathwise identity and coupling", "[ou]") {
    MatrixXd cm(2, 2);
    cm << -1.0, 0.2, 0.1, -1.5;
    LinearOperator c(cm), q(LinearOperator::identity(2));
    const double eps = 0.25;
    VectorXd times = VectorXd::LinSpaced(65, 0.0, 1.0);
    FastPath p = simulate_fast_path(c, q, eps, times, 2024, 0);
    CoupledPaths cp = derive_y_and_B(p, c);
    REQUIRE(cp.y.size() == p.w.size());
    CHECK(cp.y[0].norm() == 0.0);
    CHECK(cp.B[0].norm() == 0.0);
    // y' = w/sqrt(eps): check midpoint quadrature of w against y increments, O(h^2)
    double worst = 0.0;
    for (size_t i = 0; i + 1 < cp.y.size(); ++i) {
        const double h = times[1] - times[0];
        VectorXd lhs = cp.y[i + 1] - cp.y[i];
        VectorXd rhs = 0.5 * h * (p.w[i] + p.w[i + 1]) / std::sqrt(eps);
        worst = std::max(worst, (lhs - rhs).norm());
    }
    CHECK(worst < 0.05); // trapezoid error of a rough integrand, small but nonzero
    // sup_t ||y - B||^2 = eps ||(-C)^{-1} (w - w0)||^2 pathwise
    for (size_t i = 0; i < cp.y.size(); ++i) {
        VectorXd want = cp.B[i] - std::sqrt(eps) * (-cm).partialPivLu().solve(p.w[i] - p.w[0]);
        CHECK((cp.y[i] - want).norm() < 1e-13);
    }
}
