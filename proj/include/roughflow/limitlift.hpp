#pragma once

#include <vector>

#include <Eigen/Dense>

#include "roughflow/errors.hpp"
#include "roughflow/linops.hpp"
#include "roughflow/roughpath.hpp"

namespace roughflow {

enum class LiftForm { ito, stratonovich };

/// Rough path lift of B = (-C)^{-1} Q^{1/2} W built from stored Wiener
/// increments, in Ito form (left-point sums + (t-s) D) or Stratonovich form
/// (midpoint sums + (t-s) M).
struct LimitLift {
    RoughPath rp;
    LiftForm form = LiftForm::ito;
    Tensor2 D;
    Tensor2 M;
};

/// Sum consecutive groups of Wiener increments (coarsening the fine grid).
inline std::vector<Eigen::VectorXd> downsample_increments(const std::vector<Eigen::VectorXd>& dw, int factor) {
    if (factor < 1 || dw.size() % static_cast<size_t>(factor) != 0)
        throw GridError("downsample_increments: factor must divide the increment count");
    std::vector<Eigen::VectorXd> out;
    out.reserve(dw.size() / factor);
    for (size_t i = 0; i < dw.size(); i += factor) {
        Eigen::VectorXd acc = dw[i];
        for (int j = 1; j < factor; ++j) acc += dw[i + j];
        out.push_back(std::move(acc));
    }
    return out;
}

inline LimitLift limit_lift(const std::vector<Eigen::VectorXd>& dW, double T,
                            const LinearOperator& c, const LinearOperator& q,
                            int coarse_level, LiftForm form, double alpha = 0.4) {
    if (dW.empty()) throw GridError("limit_lift: no increments");
    if (!(alpha > 1.0 / 3.0 && alpha < 0.5)) throw InputError("limit_lift: alpha must lie in (1/3, 1/2)");
    const int nfine = static_cast<int>(dW.size());
    const int ncoarse = 1 << coarse_level;
    if (nfine % ncoarse != 0) throw GridError("limit_lift: fine grid does not refine the coarse dyadic grid");
    const int ratio = nfine / ncoarse;
    if (form == LiftForm::stratonovich && ratio % 2 != 0)
        throw GridError("limit_lift: Stratonovich midpoints need an even fine/coarse ratio");

    const int d = c.dim();
    Eigen::PartialPivLU<Eigen::MatrixXd> lu((-c.m).eval());
    std::vector<Eigen::VectorXd> b;
    b.reserve(nfine + 1);
    b.push_back(Eigen::VectorXd::Zero(d));
    for (const auto& inc : dW) {
        if (inc.size() != d) throw InputError("limit_lift: increment dimension mismatch");
        b.push_back(b.back() + lu.solve(inc));
    }

    LimitLift out;
    out.form = form;
    out.D = drift_tensor_D(c, q);
    out.M = correction_M(c, q);

    RoughPath rp;
    rp.grid = DyadicGrid(T, coarse_level);
    rp.alpha = alpha;
    rp.points.reserve(ncoarse + 1);
    for (int i = 0; i <= ncoarse; ++i) rp.points.push_back(b[static_cast<size_t>(i) * ratio]);

    const double hc = T / ncoarse;
    const Eigen::MatrixXd drift = (form == LiftForm::ito) ? out.D.x : out.M.x;
    rp.level2.assign(coarse_level + 1, {});
    auto& finest = rp.level2[coarse_level];
    finest.assign(ncoarse, Eigen::MatrixXd::Zero(d, d));
    for (int ci = 0; ci < ncoarse; ++ci) {
        const Eigen::VectorXd& start = b[static_cast<size_t>(ci) * ratio];
        Eigen::MatrixXd acc = hc * drift;
        if (form == LiftForm::ito) {
            for (int j = ci * ratio; j < (ci + 1) * ratio; ++j)
                acc += outer_tensor(b[j] - start, b[j + 1] - b[j]);
        } else {
            for (int j = ci * ratio; j < (ci + 1) * ratio; j += 2)
                acc += outer_tensor(b[j + 1] - start, b[j + 2] - b[j]);
        }
        finest[ci] = acc;
    }
    for (int m = coarse_level - 1; m >= 0; --m) {
        const int stride = 1 << (coarse_level - m);
        auto& lvl = rp.level2[m];
        const auto& sub = rp.level2[m + 1];
        lvl.assign(1 << m, Eigen::MatrixXd::Zero(d, d));
        for (int i = 0; i < (1 << m); ++i) {
            const int a = i * stride, mid = i * stride + stride / 2, bb = (i + 1) * stride;
            lvl[i] = sub[2 * i] + sub[2 * i + 1] +
                     outer_tensor(rp.points[mid] - rp.points[a], rp.points[bb] - rp.points[mid]);
        }
    }
    out.rp = std::move(rp);
    return out;
}

/// Max over grid pairs of || B^2(ito) - B^2(strat) || for two lifts of the
/// same Brownian path; tends to zero under fine-grid refinement (the
/// difference is a realized-quadratic-variation discretization error).
inline double strat_consistency_check(const LimitLift& ito, const LimitLift& strat) {
    if (ito.form != LiftForm::ito || strat.form != LiftForm::stratonovich)
        throw InputError("strat_consistency_check: expects one Ito-form and one Stratonovich-form lift");
    if (!(ito.rp.grid == strat.rp.grid)) throw GridError("strat_consistency_check: grids differ");
    for (size_t i = 0; i < ito.rp.points.size(); ++i)
        if (ito.rp.points[i] != strat.rp.points[i])
            throw InputError("strat_consistency_check: lifts were built from different paths");
    const int n = ito.rp.grid.n_points();
    double worst = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            worst = std::max(worst, (ito.rp.level2_pair(i, j) - strat.rp.level2_pair(i, j)).norm());
    return worst;
}

} // namespace roughflow
