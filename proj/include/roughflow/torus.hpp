#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "roughflow/errors.hpp"
#include "roughflow/linops.hpp"

namespace roughflow {

/// Truncated Fourier basis of zero-mean divergence-free real fields on the
/// torus. Modes are all k in Z^d \ {0} with |k|_inf <= K (closed under
/// negation); each +-k pair shares d-1 orthonormal polarization vectors
/// perpendicular to k. Real coefficients live per (mode, polarization): the
/// scalar factor is sqrt(2) cos(k.x) on the lexicographically positive mode
/// of a pair and sqrt(2) sin(k+.x) on its negation, which makes
/// divergence-freeness and reality structural.
class TorusBasis {
public:
    TorusBasis(int dimension, int cutoff) : d_(dimension), K_(cutoff) {
        if (d_ != 2 && d_ != 3) throw InputError("TorusBasis: dimension must be 2 or 3");
        if (K_ < 1) throw InputError("TorusBasis: cutoff must be >= 1");
        build();
    }

    int dimension() const { return d_; }
    int cutoff() const { return K_; }
    int n_modes() const { return static_cast<int>(modes_.size()); }
    int pols_per_mode() const { return d_ - 1; }
    int size() const { return n_modes() * pols_per_mode(); }

    const Eigen::Vector3i& mode(int im) const { return modes_[im]; }
    int partner(int im) const { return partner_[im]; }
    bool is_positive(int im) const { return positive_[im]; }
    const Eigen::Vector3d& polarization(int im, int a) const { return pol_[im][a]; }
    double k_norm2(int im) const { return modes_[im].cast<double>().squaredNorm(); }

    int coeff_index(int im, int a) const { return im * pols_per_mode() + a; }
    int mode_of_coeff(int idx) const { return idx / pols_per_mode(); }
    int pol_of_coeff(int idx) const { return idx % pols_per_mode(); }

    /// Index of lattice vector k in the mode list, or -1 if outside the
    /// truncation (or zero).
    int find_mode(const Eigen::Vector3i& k) const {
        for (int c = 0; c < 3; ++c)
            if (k[c] < -K_ || k[c] > K_) return -1;
        if (d_ == 2 && k[2] != 0) return -1;
        return lookup_[box_index(k)];
    }

private:
    void build() {
        const int side = 2 * K_ + 1;
        const int box = (d_ == 3) ? side * side * side : side * side;
        lookup_.assign(box, -1);
        const int kz_max = (d_ == 3) ? K_ : 0;
        for (int kx = -K_; kx <= K_; ++kx)
            for (int ky = -K_; ky <= K_; ++ky)
                for (int kz = -kz_max; kz <= kz_max; ++kz) {
                    if (kx == 0 && ky == 0 && kz == 0) continue;
                    Eigen::Vector3i k(kx, ky, kz);
                    lookup_[box_index(k)] = static_cast<int>(modes_.size());
                    modes_.push_back(k);
                }
        partner_.resize(modes_.size());
        positive_.resize(modes_.size());
        pol_.resize(modes_.size());
        for (int im = 0; im < n_modes(); ++im) {
            const Eigen::Vector3i& k = modes_[im];
            partner_[im] = find_mode(-k);
            positive_[im] = lex_positive(k);
            const Eigen::Vector3i kp = positive_[im] ? k : Eigen::Vector3i(-k);
            pol_[im] = polarizations_for(kp);
        }
    }

    int box_index(const Eigen::Vector3i& k) const {
        const int side = 2 * K_ + 1;
        int idx = (k[0] + K_) * side + (k[1] + K_);
        if (d_ == 3) idx = idx * side + (k[2] + K_);
        return idx;
    }

    static bool lex_positive(const Eigen::Vector3i& k) {
        for (int c = 0; c < 3; ++c) {
            if (k[c] > 0) return true;
            if (k[c] < 0) return false;
        }
        return false;
    }

    std::vector<Eigen::Vector3d> polarizations_for(const Eigen::Vector3i& kp) const {
        Eigen::Vector3d kd = kp.cast<double>();
        if (d_ == 2) {
            Eigen::Vector3d s(-kd[1], kd[0], 0.0);
            return {s / s.norm()};
        }
        int axis = 0;
        for (int c = 1; c < 3; ++c)
            if (std::abs(kd[c]) < std::abs(kd[axis])) axis = c;
        Eigen::Vector3d e = Eigen::Vector3d::Zero();
        e[axis] = 1.0;
        Eigen::Vector3d s1 = kd.cross(e);
        s1 /= s1.norm();
        Eigen::Vector3d s2 = kd.cross(s1);
        s2 /= s2.norm();
        return {s1, s2};
    }

    int d_;
    int K_;
    std::vector<Eigen::Vector3i> modes_;
    std::vector<int> partner_;
    std::vector<char> positive_;
    std::vector<std::vector<Eigen::Vector3d>> pol_;
    std::vector<int> lookup_;
};

using BasisPtr = std::shared_ptr<const TorusBasis>;

inline BasisPtr make_basis(int dimension, int cutoff) {
    return std::make_shared<TorusBasis>(dimension, cutoff);
}

/// Divergence-free zero-mean velocity field in polarization coordinates.
struct VelocityField {
    BasisPtr basis;
    Eigen::VectorXd c;

    VelocityField() = default;
    VelocityField(BasisPtr b, Eigen::VectorXd coeffs) : basis(std::move(b)), c(std::move(coeffs)) {
        if (!basis) throw InputError("VelocityField: null basis");
        if (c.size() != basis->size()) throw InputError("VelocityField: coefficient length mismatch");
        if (!c.allFinite()) throw InputError("VelocityField: non-finite coefficients");
    }

    static VelocityField zero(BasisPtr b) {
        Eigen::VectorXd z = Eigen::VectorXd::Zero(b->size());
        return VelocityField(std::move(b), std::move(z));
    }

    double h_norm() const { return c.norm(); }
};

inline void require_same_basis(const VelocityField& u, const VelocityField& v) {
    if (u.basis.get() != v.basis.get() &&
        (u.basis->dimension() != v.basis->dimension() || u.basis->cutoff() != v.basis->cutoff()))
        throw InputError("velocity fields live on different bases");
}

struct FluidConfig {
    double nu = 1.0;
    double sobolev_index = 0.0;
    double theta0 = 2.6; // metadata; the continuity bounds for b assume theta0 > 1 + d/2

    std::vector<std::string> validate(int dimension) const {
        if (!(nu > 0.0)) throw InputError("FluidConfig: viscosity must be positive");
        std::vector<std::string> warnings;
        if (!(theta0 > 1.0 + dimension / 2.0))
            warnings.push_back("theta0 <= 1 + d/2: outside the embedding range (metadata only)");
        return warnings;
    }
};

namespace fourier {

/// Complex per-mode coefficients u_hat[im] with reality u_hat[-k] = conj(u_hat[k]).
inline std::vector<Eigen::Vector3cd> to_complex(const VelocityField& u) {
    const TorusBasis& b = *u.basis;
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    std::vector<Eigen::Vector3cd> uh(b.n_modes(), Eigen::Vector3cd::Zero());
    for (int im = 0; im < b.n_modes(); ++im) {
        if (!b.is_positive(im)) continue;
        const int in = b.partner(im);
        Eigen::Vector3cd acc = Eigen::Vector3cd::Zero();
        for (int a = 0; a < b.pols_per_mode(); ++a) {
            const std::complex<double> amp(u.c[b.coeff_index(im, a)], -u.c[b.coeff_index(in, a)]);
            acc += b.polarization(im, a).cast<std::complex<double>>() * (amp * inv_sqrt2);
        }
        uh[im] = acc;
        uh[in] = acc.conjugate();
    }
    return uh;
}

/// Back to real polarization coordinates; input is Leray-projected per mode.
inline VelocityField from_complex(const BasisPtr& basis, const std::vector<Eigen::Vector3cd>& uh) {
    const TorusBasis& b = *basis;
    const double sqrt2 = std::sqrt(2.0);
    Eigen::VectorXd c = Eigen::VectorXd::Zero(b.size());
    for (int im = 0; im < b.n_modes(); ++im) {
        if (!b.is_positive(im)) continue;
        const int in = b.partner(im);
        for (int a = 0; a < b.pols_per_mode(); ++a) {
            const std::complex<double> p = b.polarization(im, a).cast<std::complex<double>>().dot(uh[im]);
            c[b.coeff_index(im, a)] = sqrt2 * p.real();
            c[b.coeff_index(in, a)] = -sqrt2 * p.imag();
        }
    }
    return VelocityField(basis, std::move(c));
}

} // namespace fourier

/// Leray projection of raw per-mode coefficients (one real Cartesian vector
/// per scalar basis function) onto the divergence-free polarization span:
/// per mode, P_k = I - k k^T / |k|^2, which is exactly the projection onto
/// the polarization vectors.
inline VelocityField leray_project(const BasisPtr& basis, const std::vector<Eigen::Vector3d>& raw) {
    const TorusBasis& b = *basis;
    if (static_cast<int>(raw.size()) != b.n_modes())
        throw InputError("leray_project: raw coefficient count must match mode count");
    Eigen::VectorXd c(b.size());
    for (int im = 0; im < b.n_modes(); ++im)
        for (int a = 0; a < b.pols_per_mode(); ++a)
            c[b.coeff_index(im, a)] = b.polarization(im, a).dot(raw[im]);
    return VelocityField(basis, std::move(c));
}

/// Expand a velocity field back to raw per-mode Cartesian coefficients.
inline std::vector<Eigen::Vector3d> to_raw(const VelocityField& u) {
    const TorusBasis& b = *u.basis;
    std::vector<Eigen::Vector3d> raw(b.n_modes(), Eigen::Vector3d::Zero());
    for (int im = 0; im < b.n_modes(); ++im)
        for (int a = 0; a < b.pols_per_mode(); ++a)
            raw[im] += u.c[b.coeff_index(im, a)] * b.polarization(im, a);
    return raw;
}

/// Navier-Stokes nonlinearity b(u, v) = -P(u . grad v), computed as a direct
/// truncated mode convolution followed by the per-mode Leray projection.
/// Modes with exactly zero coefficients are skipped; the result is unchanged.
inline VelocityField nonlinearity_b(const VelocityField& u, const VelocityField& v) {
    require_same_basis(u, v);
    const TorusBasis& b = *u.basis;
    const auto uh = fourier::to_complex(u);
    const auto vh = fourier::to_complex(v);

    std::vector<int> unz, vnz;
    unz.reserve(uh.size());
    vnz.reserve(vh.size());
    for (int im = 0; im < b.n_modes(); ++im) {
        if (uh[im].squaredNorm() != 0.0) unz.push_back(im);
        if (vh[im].squaredNorm() != 0.0) vnz.push_back(im);
    }

    std::vector<Eigen::Vector3cd> wh(b.n_modes(), Eigen::Vector3cd::Zero());
    const std::complex<double> iunit(0.0, 1.0);
    for (int ip : unz) {
        const Eigen::Vector3i& p = b.mode(ip);
        const Eigen::Vector3cd& up = uh[ip];
        for (int iq : vnz) {
            const Eigen::Vector3i& q = b.mode(iq);
            const int ik = b.find_mode(p + q);
            if (ik < 0) continue;
            const Eigen::Vector3cd& vq = vh[iq];
            // (u . grad v)^(k) accumulates i (u_p . q) v_q over p + q = k
            const std::complex<double> fac = iunit * (up[0] * double(q[0]) + up[1] * double(q[1]) + up[2] * double(q[2]));
            wh[ik] += fac * vq;
        }
    }
    for (int ik = 0; ik < b.n_modes(); ++ik) {
        if (wh[ik].squaredNorm() == 0.0) continue;
        const Eigen::Vector3d kd = b.mode(ik).cast<double>();
        const Eigen::Vector3cd proj = wh[ik] - kd.cast<std::complex<double>>() * (kd.cast<std::complex<double>>().dot(wh[ik]) / kd.squaredNorm());
        wh[ik] = -proj;
    }
    return fourier::from_complex(u.basis, wh);
}

/// || u ||_{H^n} = ( sum_k (nu |k|^2)^n |u_hat_k|^2 )^{1/2}; the weight uses
/// the Stokes operator exactly as the norm is defined, default nu = 1.
inline double sobolev_norm(const VelocityField& u, double n, double nu = 1.0) {
    const TorusBasis& b = *u.basis;
    if (n == 0.0) return u.c.norm();
    double acc = 0.0;
    for (int im = 0; im < b.n_modes(); ++im) {
        const double w = std::pow(nu * b.k_norm2(im), n);
        for (int a = 0; a < b.pols_per_mode(); ++a) {
            const double x = u.c[b.coeff_index(im, a)];
            acc += w * x * x;
        }
    }
    return std::sqrt(acc);
}

/// Diagonal of the Stokes operator A = nu Delta P in polarization coordinates.
inline Eigen::VectorXd stokes_diagonal(const TorusBasis& b, double nu) {
    Eigen::VectorXd d(b.size());
    for (int im = 0; im < b.n_modes(); ++im)
        for (int a = 0; a < b.pols_per_mode(); ++a)
            d[b.coeff_index(im, a)] = -nu * b.k_norm2(im);
    return d;
}

/// C = -rho (-A)^varsigma + K on the coefficient space; the result must pass
/// validate_generator, otherwise the assumption-violation error propagates.
inline LinearOperator build_C_operator(const BasisPtr& basis, double rho, double varsigma,
                                       const LinearOperator* perturbation = nullptr, double nu = 1.0) {
    if (!(rho > 0.0)) throw InputError("build_C_operator: rho must be positive");
    if (varsigma < 0.0) throw InputError("build_C_operator: varsigma must be >= 0");
    const TorusBasis& b = *basis;
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(b.size(), b.size());
    for (int im = 0; im < b.n_modes(); ++im) {
        const double lam = std::pow(nu * b.k_norm2(im), varsigma);
        for (int a = 0; a < b.pols_per_mode(); ++a) {
            const int i = b.coeff_index(im, a);
            c(i, i) = -rho * lam;
        }
    }
    if (perturbation) {
        if (perturbation->dim() != b.size())
            throw InputError("build_C_operator: perturbation dimension mismatch");
        c += perturbation->m;
    }
    LinearOperator op(std::move(c));
    validate_generator(op, LinearOperator::identity(b.size()));
    return op;
}

/// Point evaluation of the real field at x (for quadrature oracles).
inline Eigen::Vector3d evaluate_field(const VelocityField& u, const Eigen::Vector3d& x) {
    const TorusBasis& b = *u.basis;
    const double sqrt2 = std::sqrt(2.0);
    Eigen::Vector3d val = Eigen::Vector3d::Zero();
    for (int im = 0; im < b.n_modes(); ++im) {
        const Eigen::Vector3i& k = b.mode(im);
        const double phase = k[0] * x[0] + k[1] * x[1] + k[2] * x[2];
        const double scal = b.is_positive(im) ? sqrt2 * std::cos(phase) : sqrt2 * std::sin(-phase);
        for (int a = 0; a < b.pols_per_mode(); ++a)
            val += u.c[b.coeff_index(im, a)] * scal * b.polarization(im, a);
    }
    return val;
}

} // namespace roughflow
