#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "roughflow/errors.hpp"
#include "roughflow/roughpath.hpp"
#include "roughflow/stats.hpp"
#include "roughflow/torus.hpp"

namespace roughflow {

/// Galerkin matrices of the single-basis advections phi -> b(e_f, phi).
/// They are sparse (a single mode couples each mode to at most two others)
/// and skew-symmetric; everything the rough driver does is assembled from
/// them. Depends only on the basis, so build once and share.
struct AdvectionTable {
    BasisPtr basis;
    std::vector<Eigen::SparseMatrix<double>> B;

    static std::shared_ptr<const AdvectionTable> build(const BasisPtr& basis) {
        auto table = std::make_shared<AdvectionTable>();
        table->basis = basis;
        const int n = basis->size();
        table->B.resize(n);
        for (int f = 0; f < n; ++f) {
            Eigen::VectorXd ef = Eigen::VectorXd::Zero(n);
            ef[f] = 1.0;
            VelocityField fe(basis, ef);
            std::vector<Eigen::Triplet<double>> trip;
            for (int j = 0; j < n; ++j) {
                Eigen::VectorXd ej = Eigen::VectorXd::Zero(n);
                ej[j] = 1.0;
                Eigen::VectorXd col = nonlinearity_b(fe, VelocityField(basis, ej)).c;
                for (int i = 0; i < n; ++i)
                    if (col[i] != 0.0) trip.emplace_back(i, j, col[i]);
            }
            table->B[f].resize(n, n);
            table->B[f].setFromTriplets(trip.begin(), trip.end());
        }
        return table;
    }
};

/// Unbounded rough driver (A^1, A^2) induced by a rough path of velocity
/// fields:
///   A^1_{st} phi = -P[Y^1_{st} . grad phi] = b(Y^1_{st}, phi),
///   A^2_{st} phi = A^2(Y^2_{st}, phi), bilinear in the level-2 tensor,
/// with A^2(f (x) g, phi) = b(g, b(f, phi)). Operators are materialized
/// lazily from the lift; Chen's relation for the pair is inherited from the
/// lift's Chen relation by bilinearity.
struct DriverPair {
    BasisPtr basis;
    std::shared_ptr<const RoughPath> lift;
    std::shared_ptr<const AdvectionTable> adv;

    int dim() const { return basis->size(); }

    Eigen::MatrixXd dense1(int i, int j) const {
        const Eigen::VectorXd y = lift->level1(i, j);
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(dim(), dim());
        for (int f = 0; f < dim(); ++f)
            if (y[f] != 0.0) a += y[f] * adv->B[f];
        return a;
    }

    Eigen::VectorXd apply1(int i, int j, const Eigen::VectorXd& phi) const {
        const Eigen::VectorXd y = lift->level1(i, j);
        Eigen::VectorXd out = Eigen::VectorXd::Zero(dim());
        for (int f = 0; f < dim(); ++f)
            if (y[f] != 0.0) out += y[f] * (adv->B[f] * phi);
        return out;
    }

    /// A^2 with an explicit level-2 tensor (stored orientation): the stored
    /// matrix X represents sum_{f,g} X(g,f) b(e_g, b(e_f, .)).
    Eigen::VectorXd apply2_tensor(const Eigen::MatrixXd& x, const Eigen::VectorXd& phi) const {
        const int n = dim();
        Eigen::MatrixXd inner(n, n);
        for (int f = 0; f < n; ++f) inner.col(f) = adv->B[f] * phi;
        Eigen::MatrixXd psi = inner * x.transpose(); // psi.col(g) = sum_f X(g,f) b(e_f, phi)
        Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
        for (int g = 0; g < n; ++g) out += adv->B[g] * psi.col(g);
        return out;
    }

    Eigen::VectorXd apply2(int i, int j, const Eigen::VectorXd& phi) const {
        return apply2_tensor(lift->level2_pair(i, j), phi);
    }

    /// Adjoints: b(e_f, .) is skew, so A^{1,*} = -A^1 and A^{2,*} swaps the
    /// tensor's stored orientation.
    Eigen::VectorXd apply1_adjoint(int i, int j, const Eigen::VectorXd& phi) const {
        return -apply1(i, j, phi);
    }

    Eigen::VectorXd apply2_adjoint(int i, int j, const Eigen::VectorXd& phi) const {
        return apply2_tensor(lift->level2_pair(i, j).transpose(), phi);
    }
};

inline DriverPair assemble_driver(std::shared_ptr<const RoughPath> lift, const BasisPtr& basis,
                                  std::shared_ptr<const AdvectionTable> adv = nullptr) {
    if (!lift) throw InputError("assemble_driver: null lift");
    if (lift->state_dim() != basis->size())
        throw InputError("assemble_driver: lift dimension does not match the basis");
    DriverPair d;
    d.basis = basis;
    d.lift = std::move(lift);
    d.adv = adv ? std::move(adv) : AdvectionTable::build(basis);
    return d;
}

/// Operator norms of A^1 (H^{-m} -> H^{-(m+1)}, m in {0,1,2}) and A^2
/// (H^{-m} -> H^{-(m+2)}, m in {0,1}) over a family of dyadic pairs, with
/// the smallest Hoelder constants (norm <= c |t-s|^alpha resp. |t-s|^{2 alpha})
/// and the regression-fitted exponents.
struct DriverNormReport {
    struct Entry {
        int m = 0;
        double holder_constant = 0.0; // max norm / |t-s|^(level * alpha)
        double fitted_exponent = 0.0;
        double fitted_r2 = 0.0;
    };
    std::vector<Entry> level1;
    std::vector<Entry> level2;
    double alpha = 0.4;
};

namespace detail {

/// Largest singular value of the weighted operator by power iteration on
/// A^T A with a deterministic start.
template <typename Apply, typename ApplyAdj>
double weighted_op_norm(int n, const Eigen::VectorXd& w_out, const Eigen::VectorXd& w_in,
                        Apply&& apply, ApplyAdj&& apply_adj, int iters = 30) {
    Eigen::VectorXd v = Eigen::VectorXd::Ones(n);
    v /= v.norm();
    double sigma = 0.0;
    for (int it = 0; it < iters; ++it) {
        Eigen::VectorXd av = w_out.cwiseProduct(apply(w_in.cwiseProduct(v)));
        Eigen::VectorXd atav = w_in.cwiseProduct(apply_adj(w_out.cwiseProduct(av)));
        const double nrm = atav.norm();
        if (nrm == 0.0) return 0.0;
        v = atav / nrm;
        sigma = std::sqrt(nrm);
    }
    return sigma;
}

} // namespace detail

inline DriverNormReport driver_norm_bounds(const DriverPair& d, double nu = 1.0,
                                           int deepest_levels = 3, int power_iters = 30) {
    const RoughPath& rp = *d.lift;
    const int n = d.dim();
    const TorusBasis& b = *d.basis;
    Eigen::VectorXd w(n);
    for (int i = 0; i < n; ++i) w[i] = std::sqrt(nu * b.k_norm2(b.mode_of_coeff(i)));

    auto weight = [&](double s) { return Eigen::VectorXd(w.array().pow(s).matrix()); };

    std::vector<std::pair<int, int>> pairs;
    for (int lvl = rp.grid.level; lvl > rp.grid.level - deepest_levels && lvl >= 1; --lvl) {
        const int stride = 1 << (rp.grid.level - lvl);
        for (int i = 0; i + stride <= rp.grid.n_intervals(); i += stride) pairs.emplace_back(i, i + stride);
    }

    DriverNormReport rep;
    rep.alpha = rp.alpha;
    for (int m = 0; m <= 2; ++m) {
        Eigen::VectorXd win = weight(static_cast<double>(m));      // phi = diag(w^m) psi
        Eigen::VectorXd wout = weight(-(static_cast<double>(m) + 1.0));
        std::vector<double> xs, ys;
        double cmax = 0.0;
        for (auto [i, j] : pairs) {
            const double nrm = detail::weighted_op_norm(
                n, wout, win, [&](const Eigen::VectorXd& p) { return d.apply1(i, j, p); },
                [&](const Eigen::VectorXd& p) { return d.apply1_adjoint(i, j, p); }, power_iters);
            const double dt = rp.grid.t(j) - rp.grid.t(i);
            cmax = std::max(cmax, nrm / std::pow(dt, rp.alpha));
            if (nrm > 0.0) {
                xs.push_back(std::log(dt));
                ys.push_back(std::log(nrm));
            }
        }
        DriverNormReport::Entry e;
        e.m = m;
        e.holder_constant = cmax;
        if (xs.size() >= 2) {
            auto fit = ols_fit(xs, ys);
            e.fitted_exponent = fit.slope;
            e.fitted_r2 = fit.r2;
        }
        rep.level1.push_back(e);
    }
    for (int m = 0; m <= 1; ++m) {
        Eigen::VectorXd win = weight(static_cast<double>(m));
        Eigen::VectorXd wout = weight(-(static_cast<double>(m) + 2.0));
        std::vector<double> xs, ys;
        double cmax = 0.0;
        for (auto [i, j] : pairs) {
            const double nrm = detail::weighted_op_norm(
                n, wout, win, [&](const Eigen::VectorXd& p) { return d.apply2(i, j, p); },
                [&](const Eigen::VectorXd& p) { return d.apply2_adjoint(i, j, p); }, power_iters);
            const double dt = rp.grid.t(j) - rp.grid.t(i);
            cmax = std::max(cmax, nrm / std::pow(dt, 2.0 * rp.alpha));
            if (nrm > 0.0) {
                xs.push_back(std::log(dt));
                ys.push_back(std::log(nrm));
            }
        }
        DriverNormReport::Entry e;
        e.m = m;
        e.holder_constant = cmax;
        if (xs.size() >= 2) {
            auto fit = ols_fit(xs, ys);
            e.fitted_exponent = fit.slope;
            e.fitted_r2 = fit.r2;
        }
        rep.level2.push_back(e);
    }
    return rep;
}

} // namespace roughflow
