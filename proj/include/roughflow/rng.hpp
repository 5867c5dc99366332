#pragma once

#include <cmath>
#include <cstdint>

#include <Eigen/Dense>

namespace roughflow {

namespace detail {

// splitmix64 finalizer; full-avalanche 64-bit mix.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline double to_unit_open(std::uint64_t h) {
    // (0,1): 53 mantissa bits, offset away from 0
    return static_cast<double>(h >> 11) * 0x1.0p-53 + 0x1.0p-54;
}

} // namespace detail

/// Counter-based Gaussian stream keyed by (seed, replica). Every draw is a pure
/// function of (seed, replica, step, slot), so replicas are reproducible and
/// independent of thread scheduling, and the same (step, slot) draw can be
/// shared across coupled simulations (one Wiener path per replica).
class GaussianStream {
public:
    GaussianStream(std::uint64_t seed, std::uint64_t replica)
        : key_(detail::mix64(detail::mix64(seed ^ 0x8f1bbcdcbfa53e0bULL) ^
                             detail::mix64(replica ^ 0x2545f4914f6cdd1dULL))) {}

    double normal(std::uint64_t step, std::uint64_t slot) const {
        const std::uint64_t c = detail::mix64(key_ ^ detail::mix64(step * 0xd6e8feb86659fd93ULL + slot));
        const std::uint64_t c2 = detail::mix64(c ^ 0x94d049bb133111ebULL);
        const double u1 = detail::to_unit_open(c);
        const double u2 = detail::to_unit_open(c2);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    Eigen::VectorXd normal_vector(std::uint64_t step, std::uint64_t slot0, int n) const {
        Eigen::VectorXd z(n);
        for (int i = 0; i < n; ++i) z[i] = normal(step, slot0 + static_cast<std::uint64_t>(i));
        return z;
    }

    std::uint64_t key() const { return key_; }

private:
    std::uint64_t key_;
};

/// Sequential cursor over a GaussianStream for call sites that just need
/// "the next few normals" (invariant-measure sampling, MC oracles).
class DrawCursor {
public:
    explicit DrawCursor(GaussianStream stream, std::uint64_t step = 0)
        : stream_(stream), step_(step), slot_(0) {}

    double next() { return stream_.normal(step_, slot_++); }

    Eigen::VectorXd next_vector(int n) {
        Eigen::VectorXd z = stream_.normal_vector(step_, slot_, n);
        slot_ += static_cast<std::uint64_t>(n);
        return z;
    }

private:
    GaussianStream stream_;
    std::uint64_t step_;
    std::uint64_t slot_;
};

} // namespace roughflow
