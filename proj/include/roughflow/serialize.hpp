#pragma once

#include <cstdint>
#include <cstring>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "roughflow/driver.hpp"
#include "roughflow/errors.hpp"
#include "roughflow/limitlift.hpp"
#include "roughflow/linops.hpp"
#include "roughflow/ou.hpp"
#include "roughflow/roughpath.hpp"
#include "roughflow/slowfast.hpp"
#include "roughflow/torus.hpp"

namespace roughflow {

using json = nlohmann::json;

namespace detail {

inline const char* b64_alphabet() {
    return "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

inline std::string base64_encode(const unsigned char* data, size_t len) {
    const char* tab = b64_alphabet();
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    for (size_t i = 0; i < len; i += 3) {
        std::uint32_t v = data[i] << 16;
        if (i + 1 < len) v |= data[i + 1] << 8;
        if (i + 2 < len) v |= data[i + 2];
        out.push_back(tab[(v >> 18) & 63]);
        out.push_back(tab[(v >> 12) & 63]);
        out.push_back(i + 1 < len ? tab[(v >> 6) & 63] : '=');
        out.push_back(i + 2 < len ? tab[v & 63] : '=');
    }
    return out;
}

inline std::vector<unsigned char> base64_decode(const std::string& s) {
    int rev[256];
    std::memset(rev, -1, sizeof(rev));
    const char* tab = b64_alphabet();
    for (int i = 0; i < 64; ++i) rev[static_cast<unsigned char>(tab[i])] = i;
    std::vector<unsigned char> out;
    out.reserve(s.size() / 4 * 3);
    std::uint32_t buf = 0;
    int bits = 0;
    for (char ch : s) {
        if (ch == '=' || ch == '\n') continue;
        const int v = rev[static_cast<unsigned char>(ch)];
        if (v < 0) throw IoError("base64: invalid character");
        buf = (buf << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<unsigned char>((buf >> bits) & 0xff));
        }
    }
    return out;
}

} // namespace detail

inline std::string doubles_to_base64(const std::vector<double>& xs) {
    return detail::base64_encode(reinterpret_cast<const unsigned char*>(xs.data()), xs.size() * sizeof(double));
}

inline std::vector<double> doubles_from_base64(const std::string& s) {
    auto bytes = detail::base64_decode(s);
    if (bytes.size() % sizeof(double) != 0) throw IoError("base64: payload is not a double array");
    std::vector<double> xs(bytes.size() / sizeof(double));
    std::memcpy(xs.data(), bytes.data(), bytes.size());
    return xs;
}

// ---- linear operators and tensors: {dim, row-major entries} ----

inline json to_json(const LinearOperator& op) {
    std::vector<double> entries;
    entries.reserve(static_cast<size_t>(op.dim()) * op.dim());
    for (int i = 0; i < op.dim(); ++i)
        for (int j = 0; j < op.dim(); ++j) entries.push_back(op.m(i, j));
    return json{{"dim", op.dim()}, {"entries", entries}};
}

inline LinearOperator linear_operator_from_json(const json& j) {
    const int n = j.at("dim").get<int>();
    const auto entries = j.at("entries").get<std::vector<double>>();
    if (static_cast<int>(entries.size()) != n * n) throw IoError("operator JSON: entry count != dim^2");
    Eigen::MatrixXd m(n, n);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k) m(i, k) = entries[static_cast<size_t>(i) * n + k];
    return LinearOperator(std::move(m));
}

inline json to_json(const Tensor2& t) {
    std::vector<double> entries;
    const int n = t.dim();
    entries.reserve(static_cast<size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) entries.push_back(t.x(i, j));
    return json{{"dim", n}, {"entries", entries}};
}

// ---- basis and fields ----

inline json to_json(const TorusBasis& b) {
    json modes = json::array();
    for (int im = 0; im < b.n_modes(); ++im)
        modes.push_back({b.mode(im)[0], b.mode(im)[1], b.mode(im)[2]});
    return json{{"dimension", b.dimension()}, {"cutoff", b.cutoff()}, {"modes", modes}};
}

inline BasisPtr basis_from_json(const json& j) {
    auto basis = make_basis(j.at("dimension").get<int>(), j.at("cutoff").get<int>());
    if (j.contains("modes") && j["modes"].size() != static_cast<size_t>(basis->n_modes()))
        throw IoError("basis JSON: mode list does not match (dimension, cutoff)");
    return basis;
}

inline json to_json(const VelocityField& u) {
    return json{{"basis", to_json(*u.basis)},
                {"coefficients", std::vector<double>(u.c.data(), u.c.data() + u.c.size())}};
}

inline VelocityField velocity_field_from_json(const json& j) {
    BasisPtr basis = basis_from_json(j.at("basis"));
    auto coeffs = j.at("coefficients").get<std::vector<double>>();
    return VelocityField(basis, Eigen::Map<const Eigen::VectorXd>(coeffs.data(), coeffs.size()));
}

inline std::string velocity_field_to_csv(const VelocityField& u) {
    std::ostringstream os;
    os << "kx,ky,kz,polarization,coefficient\n";
    const TorusBasis& b = *u.basis;
    char buf[64];
    for (int im = 0; im < b.n_modes(); ++im)
        for (int a = 0; a < b.pols_per_mode(); ++a) {
            std::snprintf(buf, sizeof(buf), "%.17g", u.c[b.coeff_index(im, a)]);
            os << b.mode(im)[0] << ',' << b.mode(im)[1] << ',' << b.mode(im)[2] << ',' << a << ',' << buf
               << '\n';
        }
    return os.str();
}

// ---- fast paths: CSV for inspection, base64 JSON for bit-exact replay ----

inline std::string fast_path_to_csv(const FastPath& p) {
    const int n = static_cast<int>(p.w.front().size());
    std::ostringstream os;
    os << "t";
    for (int i = 0; i < n; ++i) os << ",w" << i;
    for (int i = 0; i < n; ++i) os << ",dW" << i;
    os << '\n';
    char buf[64];
    for (int row = 0; row < p.times.size(); ++row) {
        std::snprintf(buf, sizeof(buf), "%.17g", p.times[row]);
        os << buf;
        for (int i = 0; i < n; ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", p.w[row][i]);
            os << ',' << buf;
        }
        for (int i = 0; i < n; ++i) {
            const double v = (row + 1 < p.times.size()) ? p.dW[row][i] : 0.0;
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            os << ',' << buf;
        }
        os << '\n';
    }
    return os.str();
}

inline json to_json(const FastPath& p) {
    const int n = static_cast<int>(p.w.front().size());
    std::vector<double> times(p.times.data(), p.times.data() + p.times.size());
    std::vector<double> w, dw;
    for (const auto& x : p.w) w.insert(w.end(), x.data(), x.data() + x.size());
    for (const auto& x : p.dW) dw.insert(dw.end(), x.data(), x.data() + x.size());
    return json{{"epsilon", p.epsilon}, {"dim", n},      {"times", doubles_to_base64(times)},
                {"w", doubles_to_base64(w)},             {"dW", doubles_to_base64(dw)}};
}

inline FastPath fast_path_from_json(const json& j) {
    FastPath p;
    p.epsilon = j.at("epsilon").get<double>();
    const int n = j.at("dim").get<int>();
    auto times = doubles_from_base64(j.at("times").get<std::string>());
    auto w = doubles_from_base64(j.at("w").get<std::string>());
    auto dw = doubles_from_base64(j.at("dW").get<std::string>());
    p.times = Eigen::Map<const Eigen::VectorXd>(times.data(), times.size());
    if (w.size() != times.size() * n || dw.size() != (times.size() - 1) * n)
        throw IoError("fast path JSON: inconsistent array sizes");
    for (size_t i = 0; i < times.size(); ++i)
        p.w.push_back(Eigen::Map<const Eigen::VectorXd>(w.data() + i * n, n));
    for (size_t i = 0; i + 1 < times.size(); ++i)
        p.dW.push_back(Eigen::Map<const Eigen::VectorXd>(dw.data() + i * n, n));
    p.validate();
    return p;
}

// ---- rough paths and lifts ----

inline json to_json(const RoughPath& rp) {
    std::vector<double> pts;
    for (const auto& p : rp.points) pts.insert(pts.end(), p.data(), p.data() + p.size());
    json lvl2 = json::array();
    for (const auto& level : rp.level2) {
        std::vector<double> flat;
        for (const auto& t : level) flat.insert(flat.end(), t.data(), t.data() + t.size());
        lvl2.push_back(doubles_to_base64(flat));
    }
    return json{{"grid", {{"T", rp.grid.T}, {"level", rp.grid.level}}},
                {"alpha", rp.alpha},
                {"dim", rp.state_dim()},
                {"level1_points", doubles_to_base64(pts)},
                {"level2_dyadic", lvl2}};
}

inline RoughPath rough_path_from_json(const json& j) {
    RoughPath rp;
    rp.grid = DyadicGrid(j.at("grid").at("T").get<double>(), j.at("grid").at("level").get<int>());
    rp.alpha = j.at("alpha").get<double>();
    const int d = j.at("dim").get<int>();
    auto pts = doubles_from_base64(j.at("level1_points").get<std::string>());
    if (pts.size() != static_cast<size_t>(rp.grid.n_points()) * d) throw IoError("rough path JSON: bad points");
    for (int i = 0; i < rp.grid.n_points(); ++i)
        rp.points.push_back(Eigen::Map<const Eigen::VectorXd>(pts.data() + static_cast<size_t>(i) * d, d));
    const auto& lvl2 = j.at("level2_dyadic");
    for (int m = 0; m < static_cast<int>(lvl2.size()); ++m) {
        auto flat = doubles_from_base64(lvl2[m].get<std::string>());
        const int cnt = 1 << m;
        if (flat.size() != static_cast<size_t>(cnt) * d * d) throw IoError("rough path JSON: bad level2");
        std::vector<Eigen::MatrixXd> level;
        for (int i = 0; i < cnt; ++i)
            level.push_back(Eigen::Map<const Eigen::MatrixXd>(flat.data() + static_cast<size_t>(i) * d * d, d, d));
        rp.level2.push_back(std::move(level));
    }
    return rp;
}

inline std::string rough_path_to_csv(const RoughPath& rp) {
    std::ostringstream os;
    os << "s,t,values\n";
    char buf[64];
    for (int m = static_cast<int>(rp.level2.size()) - 1; m >= 0; --m) {
        const int stride = 1 << (rp.grid.level - m);
        for (int i = 0; i + stride <= rp.grid.n_intervals(); i += stride) {
            os << rp.grid.t(i) << ',' << rp.grid.t(i + stride);
            Eigen::VectorXd l1 = rp.level1(i, i + stride);
            for (int k = 0; k < l1.size(); ++k) {
                std::snprintf(buf, sizeof(buf), "%.17g", l1[k]);
                os << ',' << buf;
            }
            const Eigen::MatrixXd& l2 = rp.level2[m][i / stride];
            for (int r = 0; r < l2.rows(); ++r)
                for (int c = 0; c < l2.cols(); ++c) {
                    std::snprintf(buf, sizeof(buf), "%.17g", l2(r, c));
                    os << ',' << buf;
                }
            os << '\n';
        }
    }
    return os.str();
}

inline json to_json(const LimitLift& l) {
    return json{{"rough_path", to_json(l.rp)},
                {"form", l.form == LiftForm::ito ? "ito" : "stratonovich"},
                {"D", to_json(l.D)},
                {"M", to_json(l.M)}};
}

// ---- trajectories and reports ----

inline std::string trajectory_to_csv(const SlowFastTrajectory& traj) {
    const int n = traj.basis->size();
    std::ostringstream os;
    os << "t";
    for (int i = 0; i < n; ++i) os << ",u" << i;
    for (int i = 0; i < n; ++i) os << ",w" << i;
    for (int i = 0; i < n; ++i) os << ",r" << i;
    os << '\n';
    char buf[64];
    for (int row = 0; row < traj.times.size(); ++row) {
        std::snprintf(buf, sizeof(buf), "%.17g", traj.times[row]);
        os << buf;
        for (const auto* arr : {&traj.u, &traj.w, &traj.r})
            for (int i = 0; i < n; ++i) {
                std::snprintf(buf, sizeof(buf), "%.17g", (*arr)[row][i]);
                os << ',' << buf;
            }
        os << '\n';
    }
    return os.str();
}

inline json to_json(const DriverNormReport& rep) {
    auto entry = [](const DriverNormReport::Entry& e) {
        return json{{"m", e.m},
                    {"holder_constant", e.holder_constant},
                    {"fitted_exponent", e.fitted_exponent},
                    {"fitted_r2", e.fitted_r2}};
    };
    json l1 = json::array(), l2 = json::array();
    for (const auto& e : rep.level1) l1.push_back(entry(e));
    for (const auto& e : rep.level2) l2.push_back(entry(e));
    return json{{"alpha", rep.alpha}, {"level1", l1}, {"level2", l2}};
}

inline json to_json(const RemainderScalingReport& rep) {
    return json{{"exponent", rep.exponent},
                {"r2", rep.r2},
                {"level_h", rep.level_h},
                {"level_sup", rep.level_sup},
                {"p3_variation", rep.p3var}};
}

} // namespace roughflow
