#pragma once

#include <cmath>
#include <complex>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

#include "roughflow/errors.hpp"

namespace roughflow {

/// Dense operator on the finite state space. Entries must be finite and square.
struct LinearOperator {
    Eigen::MatrixXd m;

    LinearOperator() = default;
    explicit LinearOperator(Eigen::MatrixXd mat) : m(std::move(mat)) { validate(); }

    int dim() const { return static_cast<int>(m.rows()); }

    void validate() const {
        if (m.rows() != m.cols() || m.rows() == 0)
            throw InvalidOperatorError("operator must be square and non-empty");
        if (!m.allFinite())
            throw InvalidOperatorError("operator has non-finite entries");
    }

    static LinearOperator identity(int n) { return LinearOperator(Eigen::MatrixXd::Identity(n, n)); }
    static LinearOperator zero(int n) { return LinearOperator(Eigen::MatrixXd::Zero(n, n)); }
};

/// Generator metadata: exponential decay rate iota, coercivity proxy gamma
/// (smallest eigenvalue of Sym(-C)) and the interpolation exponent vartheta.
/// vartheta has no runtime role; it is carried so configurations can declare it.
struct GeneratorAssumptions {
    double iota = 0.0;
    double gamma = 0.0;
    double vartheta = 1.0;
};

/// Element of E (x) E, stored in pairing orientation: the stored matrix X
/// satisfies <T, e_k (x) e_l> = X(l,k), so a tensor defined by an operator
/// pairing <Op e_k, e_l> is stored as Op itself, and a rank-one a (x) b is
/// stored as b * a^T. Hilbert-Schmidt norms and Chen algebra are unaffected
/// by the orientation; it is fixed here once for the whole library.
struct Tensor2 {
    Eigen::MatrixXd x;

    Tensor2() = default;
    explicit Tensor2(Eigen::MatrixXd mat) : x(std::move(mat)) {}

    int dim() const { return static_cast<int>(x.rows()); }
    double hs_norm() const { return x.norm(); }

    Tensor2 sym() const { return Tensor2(0.5 * (x + x.transpose())); }
    Tensor2 ant() const { return Tensor2(0.5 * (x - x.transpose())); }
};

/// Rank-one tensor a (x) b in the library-wide storage orientation.
inline Eigen::MatrixXd outer_tensor(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return b * a.transpose();
}

inline double spectral_abscissa(const Eigen::MatrixXd& c) {
    Eigen::EigenSolver<Eigen::MatrixXd> es(c, /*computeEigenvectors=*/false);
    return es.eigenvalues().real().maxCoeff();
}

inline void require_symmetric(const Eigen::MatrixXd& q, const char* name) {
    const double scale = std::max(1.0, q.norm());
    if ((q - q.transpose()).norm() > 1e-12 * scale)
        throw InputError(std::string(name) + " must be symmetric");
}

/// e^{C t} for t >= 0 (Pade scaling-and-squaring via Eigen).
inline LinearOperator matrix_exponential(const LinearOperator& c, double t) {
    c.validate();
    if (!(t >= 0.0)) throw InputError("matrix_exponential: t must be >= 0");
    return LinearOperator(Eigen::MatrixXd((c.m * t).exp()));
}

/// Unique solution Q_inf of C X + X C^T + Q = 0 for stable C and symmetric
/// PSD Q, i.e. Q_inf = int_0^inf e^{Ct} Q e^{C^T t} dt. Solved in complex
/// Schur form, column back-substitution; O(n^3), exact up to roundoff.
inline LinearOperator solve_lyapunov(const LinearOperator& c, const LinearOperator& q) {
    c.validate();
    q.validate();
    if (c.dim() != q.dim()) throw InputError("solve_lyapunov: dimension mismatch");
    require_symmetric(q.m, "solve_lyapunov: Q");
    if (spectral_abscissa(c.m) >= 0.0)
        throw StabilityError("solve_lyapunov: C has an eigenvalue with nonnegative real part");

    using CMat = Eigen::MatrixXcd;
    const int n = c.dim();
    Eigen::ComplexSchur<CMat> schur(c.m.cast<std::complex<double>>());
    const CMat& t = schur.matrixT();
    const CMat& u = schur.matrixU();

    // T Y + Y T^H = W with W = -U^H Q U; columns solved last-to-first.
    CMat w = -(u.adjoint() * q.m.cast<std::complex<double>>() * u);
    CMat y = CMat::Zero(n, n);
    for (int j = n - 1; j >= 0; --j) {
        Eigen::VectorXcd rhs = w.col(j);
        for (int k = j + 1; k < n; ++k) rhs -= y.col(k) * std::conj(t(j, k));
        CMat tj = t;
        tj.diagonal().array() += std::conj(t(j, j));
        y.col(j) = tj.triangularView<Eigen::Upper>().solve(rhs);
    }
    Eigen::MatrixXd x = (u * y * u.adjoint()).real();
    x = 0.5 * (x + x.transpose());
    return LinearOperator(std::move(x));
}

/// Drift tensor D of the Ito-form level-2 limit: the stationary second moment
/// int w (x) (-C)^{-1} w dmu(w), whose stored matrix is (-C)^{-1} Q_inf.
inline Tensor2 drift_tensor_D(const LinearOperator& c, const LinearOperator& q) {
    const LinearOperator qinf = solve_lyapunov(c, q);
    Eigen::MatrixXd g = (-c.m).partialPivLu().solve(qinf.m);
    return Tensor2(std::move(g));
}

/// Antisymmetric correction M = Ant((-C)^{-1} Q_inf); antisymmetrized after
/// computation so M + M^T = 0 holds exactly.
inline Tensor2 correction_M(const LinearOperator& c, const LinearOperator& q) {
    return drift_tensor_D(c, q).ant();
}

/// Checks the decay and coercivity assumptions on C and symmetry/PSD of Q;
/// returns iota = -(spectral abscissa of C) and the coercivity proxy
/// lambda_min(Sym(-C)).
inline GeneratorAssumptions validate_generator(const LinearOperator& c, const LinearOperator& q) {
    c.validate();
    q.validate();
    require_symmetric(q.m, "validate_generator: Q");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> qe(q.m);
    if (qe.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, q.m.norm()))
        throw InputError("validate_generator: Q must be positive semidefinite");

    GeneratorAssumptions a;
    a.iota = -spectral_abscissa(c.m);
    Eigen::MatrixXd symNegC = -0.5 * (c.m + c.m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> se(symNegC);
    a.gamma = se.eigenvalues().minCoeff();
    if (a.iota <= 0.0)
        throw AssumptionViolationError("generator assumption violated: ||e^{Ct}|| <~ e^{-iota t} requires iota > 0, got iota = " + std::to_string(a.iota));
    if (a.gamma <= 0.0)
        throw AssumptionViolationError("generator assumption violated: -<w, Cw> >~ ||w||^2 requires lambda_min(Sym(-C)) > 0, got " + std::to_string(a.gamma));
    return a;
}

/// int_0^t e^{Av} B dv via the Van Loan block exponential
/// exp([[A, B],[0, 0]] t) = [[e^{At}, int_0^t e^{Av} B dv],[0, I]].
inline Eigen::MatrixXd van_loan_integral(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double t) {
    const int n = static_cast<int>(a.rows());
    Eigen::MatrixXd blk = Eigen::MatrixXd::Zero(2 * n, 2 * n);
    blk.topLeftCorner(n, n) = a;
    blk.topRightCorner(n, n) = b;
    Eigen::MatrixXd e = (blk * t).exp();
    return e.topRightCorner(n, n);
}

/// Symmetric PSD factor F with F F^T = M. Eigenvalues in [-tol, 0] are
/// clamped to zero; anything below -tol is an error.
inline Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& m, double tol = 1e-12) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    Eigen::VectorXd ev = es.eigenvalues();
    const double floor = -tol * std::max(1.0, std::abs(ev.maxCoeff()));
    for (int i = 0; i < ev.size(); ++i) {
        if (ev[i] < floor)
            throw InputError("psd_factor: matrix is indefinite (eigenvalue " + std::to_string(ev[i]) + ")");
        if (ev[i] < 0.0) ev[i] = 0.0;
    }
    return es.eigenvectors() * ev.cwiseSqrt().asDiagonal();
}

/// Symmetric PSD square root (same clamping policy as psd_factor).
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, double tol = 1e-12) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    Eigen::VectorXd ev = es.eigenvalues();
    const double floor = -tol * std::max(1.0, std::abs(ev.maxCoeff()));
    for (int i = 0; i < ev.size(); ++i) {
        if (ev[i] < floor)
            throw InputError("psd_sqrt: matrix is indefinite (eigenvalue " + std::to_string(ev[i]) + ")");
        if (ev[i] < 0.0) ev[i] = 0.0;
    }
    return es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

} // namespace roughflow
