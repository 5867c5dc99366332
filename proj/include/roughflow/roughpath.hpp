#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "roughflow/dyadic.hpp"
#include "roughflow/errors.hpp"
#include "roughflow/linops.hpp"

namespace roughflow {

/// Canonical rough path over a dyadic grid. Level 1 is stored as the path
/// itself (so delta Y^1 = 0 is structural); level 2 is stored per dyadic
/// interval at every level, built fine-to-coarse through Chen's relation so
/// that the relation is exact by construction and arbitrary pairs can be
/// composed from dyadic blocks.
struct RoughPath {
    DyadicGrid grid;
    std::vector<Eigen::VectorXd> points;              // y at grid nodes
    std::vector<std::vector<Eigen::MatrixXd>> level2; // level2[m][i], m = 0..grid.level
    double alpha = 0.4;

    int state_dim() const { return points.empty() ? 0 : static_cast<int>(points.front().size()); }

    Eigen::VectorXd level1(int i, int j) const { return points[j] - points[i]; }

    /// Y^2 over [t_i, t_j] by left-to-right Chen composition of maximal
    /// dyadic blocks.
    Eigen::MatrixXd level2_pair(int i, int j) const {
        if (i < 0 || j < i || j >= grid.n_points()) throw GridError("RoughPath: pair out of range");
        const int d = state_dim();
        Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(d, d);
        int pos = i;
        while (pos < j) {
            int s = 0;
            while (s < grid.level && pos % (1 << (s + 1)) == 0 && pos + (1 << (s + 1)) <= j) ++s;
            const int len = 1 << s;
            const int m = grid.level - s;
            const Eigen::MatrixXd& block = level2[m][pos >> s];
            if (pos > i) acc += block + outer_tensor(level1(i, pos), level1(pos, pos + len));
            else acc += block;
            pos += len;
        }
        return acc;
    }
};

/// Canonical level-2 lift of a sampled path: exact level-1 increments; level-2
/// accumulated on the finest coarse intervals by trapezoid quadrature of
/// int delta y (x) dy over the fine samples, then aggregated upward by Chen.
inline RoughPath canonical_lift(const std::vector<Eigen::VectorXd>& samples, double T,
                                int coarse_level, double alpha = 0.4) {
    if (samples.size() < 2) throw GridError("canonical_lift: need at least two samples");
    if (!(alpha > 1.0 / 3.0 && alpha < 0.5)) throw InputError("canonical_lift: alpha must lie in (1/3, 1/2)");
    const int nfine = static_cast<int>(samples.size()) - 1;
    const int ncoarse = 1 << coarse_level;
    if (nfine % ncoarse != 0) throw GridError("canonical_lift: fine grid does not refine the coarse dyadic grid");
    const int ratio = nfine / ncoarse;
    const int d = static_cast<int>(samples.front().size());

    RoughPath rp;
    rp.grid = DyadicGrid(T, coarse_level);
    rp.alpha = alpha;
    rp.points.reserve(ncoarse + 1);
    for (int i = 0; i <= ncoarse; ++i) rp.points.push_back(samples[static_cast<size_t>(i) * ratio]);

    rp.level2.assign(coarse_level + 1, {});
    auto& finest = rp.level2[coarse_level];
    finest.assign(ncoarse, Eigen::MatrixXd::Zero(d, d));
    for (int ci = 0; ci < ncoarse; ++ci) {
        const Eigen::VectorXd& start = samples[static_cast<size_t>(ci) * ratio];
        Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(d, d);
        for (int j = ci * ratio; j < (ci + 1) * ratio; ++j) {
            const Eigen::VectorXd mid = 0.5 * (samples[j] + samples[j + 1]) - start;
            acc += outer_tensor(mid, samples[j + 1] - samples[j]);
        }
        finest[ci] = acc;
    }
    for (int m = coarse_level - 1; m >= 0; --m) {
        const int stride = 1 << (coarse_level - m);
        auto& lvl = rp.level2[m];
        const auto& sub = rp.level2[m + 1];
        lvl.assign(1 << m, Eigen::MatrixXd::Zero(d, d));
        for (int i = 0; i < (1 << m); ++i) {
            const int a = i * stride, mid = i * stride + stride / 2, b = (i + 1) * stride;
            lvl[i] = sub[2 * i] + sub[2 * i + 1] +
                     outer_tensor(rp.points[mid] - rp.points[a], rp.points[b] - rp.points[mid]);
        }
    }
    return rp;
}

/// Max over grid triples of || delta Y^2_{srt} - Y^1_{sr} (x) Y^1_{rt} ||_HS.
/// All triples when the grid is small; dyadic midpoint triples otherwise.
inline double chen_defect(const RoughPath& rp) {
    const int n = rp.grid.n_points();
    double worst = 0.0;
    auto probe = [&](int i, int j, int k) {
        Eigen::MatrixXd d = rp.level2_pair(i, k) - rp.level2_pair(i, j) - rp.level2_pair(j, k) -
                            outer_tensor(rp.level1(i, j), rp.level1(j, k));
        worst = std::max(worst, d.norm());
    };
    if (n <= 65) {
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                for (int k = j + 1; k < n; ++k) probe(i, j, k);
    } else {
        for (int m = 1; m <= rp.grid.level; ++m) {
            const int stride = 1 << (rp.grid.level - m);
            for (int i = 0; i + 2 * stride <= rp.grid.n_intervals(); i += 2 * stride)
                probe(i, i + stride, i + 2 * stride);
        }
    }
    return worst;
}

/// Same defect for explicitly tabulated two-index data.
inline double chen_defect(const TwoIndexMap<Eigen::VectorXd>& y1, const TwoIndexMap<Eigen::MatrixXd>& y2) {
    if (!(y1.grid() == y2.grid())) throw GridError("chen_defect: level grids differ");
    const int n = y1.grid().n_points();
    double worst = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            for (int k = j + 1; k < n; ++k) {
                Eigen::MatrixXd d = y2.delta(i, j, k) - outer_tensor(y1.at(i, j), y1.at(j, k));
                worst = std::max(worst, d.norm());
            }
    return worst;
}

enum class SeminormMode { holder, p_variation };

/// Hoelder mode: sup over grid pairs of ||G_st|| / |t-s|^alpha.
/// p-variation mode (exponent = p >= 1): sup over partitions of grid points of
/// (sum ||G||^p)^{1/p}, by dynamic programming over the grid.
template <typename V>
double holder_seminorm(const TwoIndexMap<V>& g, double exponent, SeminormMode mode) {
    const int n = g.grid().n_points();
    if (mode == SeminormMode::holder) {
        if (!(exponent > 0.0)) throw InputError("holder_seminorm: exponent must be positive");
        double worst = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                worst = std::max(worst, g.at(i, j).norm() / std::pow(g.grid().t(j) - g.grid().t(i), exponent));
        return worst;
    }
    if (!(exponent >= 1.0)) throw InputError("holder_seminorm: p-variation needs p >= 1");
    std::vector<double> best(n, 0.0);
    for (int j = 1; j < n; ++j) {
        double v = 0.0;
        for (int i = 0; i < j; ++i)
            v = std::max(v, best[i] + std::pow(g.at(i, j).norm(), exponent));
        best[j] = v;
    }
    return std::pow(best[n - 1], 1.0 / exponent);
}

/// Materialize the level maps of a rough path (dyadic point pairs).
inline TwoIndexMap<Eigen::VectorXd> level1_map(const RoughPath& rp) {
    Eigen::VectorXd zero = Eigen::VectorXd::Zero(rp.state_dim());
    return TwoIndexMap<Eigen::VectorXd>::fill(rp.grid, zero, [&](int i, int j) { return rp.level1(i, j); });
}

inline TwoIndexMap<Eigen::MatrixXd> level2_map(const RoughPath& rp) {
    Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(rp.state_dim(), rp.state_dim());
    return TwoIndexMap<Eigen::MatrixXd>::fill(rp.grid, zero, [&](int i, int j) { return rp.level2_pair(i, j); });
}

/// Inhomogeneous rough-path distance
/// ||X^1 - Y^1||_{alpha} + ||X^2 - Y^2||_{2 alpha} over grid pairs.
inline double rough_distance(const RoughPath& x, const RoughPath& y, double alpha) {
    if (!(x.grid == y.grid)) throw GridError("rough_distance: grids differ");
    if (x.state_dim() != y.state_dim()) throw GridError("rough_distance: state dimensions differ");
    const int n = x.grid.n_points();
    double l1 = 0.0, l2 = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double dt = x.grid.t(j) - x.grid.t(i);
            l1 = std::max(l1, (x.level1(i, j) - y.level1(i, j)).norm() / std::pow(dt, alpha));
            l2 = std::max(l2, (x.level2_pair(i, j) - y.level2_pair(i, j)).norm() / std::pow(dt, 2.0 * alpha));
        }
    return l1 + l2;
}

/// Sewing map: dyadic-refinement limit of a germ with superlinear defect.
/// Replaces Xi_{st} by Xi_{sm} + Xi_{mt} at midpoints down to the germ's
/// finest level, stopping once successive refinements move every target
/// entry by less than the tolerance. The defect exponent is estimated on the
/// finest two scales first; exponent <= 1 is a divergence error.
template <typename V>
TwoIndexMap<V> sewing_integrate(const TwoIndexMap<V>& germ, int target_level, double tol = 1e-10) {
    const DyadicGrid& g = germ.grid();
    if (target_level < 0 || target_level > g.level)
        throw GridError("sewing_integrate: target level must not exceed the germ's level");

    // empirical defect decay between the two finest scales
    auto mean_defect = [&](int stride) {
        double acc = 0.0;
        int cnt = 0;
        for (int i = 0; i + 2 * stride <= g.n_intervals(); i += 2 * stride) {
            acc += germ.delta(i, i + stride, i + 2 * stride).norm();
            ++cnt;
        }
        return cnt ? acc / cnt : 0.0;
    };
    if (g.level >= 2) {
        const double d1 = mean_defect(1);
        const double d2 = mean_defect(2);
        const double floor = tol * std::max(1.0, germ.at(0, g.n_points() - 1).norm());
        if (d1 > floor) {
            const double z = std::log2(d2 / d1);
            if (!(z > 1.0))
                throw SewingDivergenceError("sewing_integrate: germ defect exponent " + std::to_string(z) +
                                            " <= 1, refinement does not contract");
        }
    }

    const int tgt_n = 1 << target_level;
    const int tgt_stride = g.n_intervals() / tgt_n;
    auto compose = [&](int m) {
        // sum of germ over level-m subintervals, for every target pair
        const int stride = g.n_intervals() >> m;
        TwoIndexMap<V> out(DyadicGrid(g.T, target_level), germ.zero_value());
        for (int i = 0; i < tgt_n; ++i) {
            V run = germ.zero_value();
            for (int j = i + 1; j <= tgt_n; ++j) {
                for (int p = (j - 1) * tgt_stride; p < j * tgt_stride; p += stride) run += germ.at(p, p + stride);
                out.ref(i, j) = run;
            }
        }
        return out;
    };

    // coarsest admissible composition level is the target level itself
    int m = target_level;
    TwoIndexMap<V> prev = compose(m);
    for (++m; (g.n_intervals() >> m) >= 1; ++m) {
        TwoIndexMap<V> next = compose(m);
        double change = 0.0;
        for (int i = 0; i <= tgt_n; ++i)
            for (int j = i + 1; j <= tgt_n; ++j)
                change = std::max(change, (next.at(i, j) - prev.at(i, j)).norm());
        prev = std::move(next);
        if (change < tol) break;
    }
    return prev;
}

} // namespace roughflow
