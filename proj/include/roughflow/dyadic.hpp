#pragma once

#include <vector>

#include <Eigen/Dense>

#include "roughflow/errors.hpp"

namespace roughflow {

/// Uniform dyadic grid over [0, T]: 2^level intervals, 2^level + 1 nodes.
struct DyadicGrid {
    double T = 1.0;
    int level = 0;

    DyadicGrid() = default;
    DyadicGrid(double horizon, int lvl) : T(horizon), level(lvl) {
        if (!(T > 0.0)) throw GridError("DyadicGrid: T must be positive");
        if (level < 0 || level > 30) throw GridError("DyadicGrid: level out of range");
    }

    int n_intervals() const { return 1 << level; }
    int n_points() const { return n_intervals() + 1; }
    double dt() const { return T / n_intervals(); }
    double t(int i) const { return T * static_cast<double>(i) / n_intervals(); }

    bool operator==(const DyadicGrid& o) const { return T == o.T && level == o.level; }
};

/// Two-index map over a dyadic grid: one value G_{st} per node pair s <= t,
/// stored densely. G_{ss} = 0 by construction.
template <typename V>
class TwoIndexMap {
public:
    TwoIndexMap(DyadicGrid grid, V zero)
        : grid_(grid), zero_(std::move(zero)),
          vals_(static_cast<size_t>(grid.n_points()) * (grid.n_points() - 1) / 2, zero_) {}

    const DyadicGrid& grid() const { return grid_; }
    const V& zero_value() const { return zero_; }

    const V& at(int i, int j) const {
        check(i, j);
        if (i == j) return zero_;
        return vals_[offset(i, j)];
    }

    V& ref(int i, int j) {
        check(i, j);
        if (i == j) throw GridError("TwoIndexMap: diagonal entries are identically zero");
        return vals_[offset(i, j)];
    }

    /// delta G_{srt} = G_{st} - G_{sr} - G_{rt}
    V delta(int i, int j, int k) const { return at(i, k) - at(i, j) - at(j, k); }

    template <typename F>
    static TwoIndexMap fill(DyadicGrid grid, V zero, F&& fn) {
        TwoIndexMap m(grid, std::move(zero));
        for (int i = 0; i < grid.n_points(); ++i)
            for (int j = i + 1; j < grid.n_points(); ++j) m.ref(i, j) = fn(i, j);
        return m;
    }

private:
    void check(int i, int j) const {
        if (i < 0 || j < i || j >= grid_.n_points()) throw GridError("TwoIndexMap: pair out of range");
    }

    size_t offset(int i, int j) const {
        // pairs (i, j), i < j, row-major in i
        const size_t n = static_cast<size_t>(grid_.n_points());
        const size_t si = static_cast<size_t>(i);
        return si * n - si * (si + 1) / 2 + static_cast<size_t>(j - i - 1);
    }

    DyadicGrid grid_;
    V zero_;
    std::vector<V> vals_;
};

} // namespace roughflow
