#pragma once

#include <cmath>
#include <vector>

#include "roughflow/errors.hpp"

namespace roughflow {

struct MeanStderr {
    double mean = 0.0;
    double stderr_ = 0.0;
    int n = 0;
};

inline MeanStderr mean_stderr(const std::vector<double>& xs) {
    MeanStderr out;
    out.n = static_cast<int>(xs.size());
    if (out.n == 0) return out;
    double acc = 0.0;
    for (double x : xs) acc += x;
    out.mean = acc / out.n;
    if (out.n > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - out.mean) * (x - out.mean);
        out.stderr_ = std::sqrt(ss / (out.n - 1) / out.n);
    }
    return out;
}

struct OlsFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_stderr = 0.0;
    double half_width = 0.0; // ~95% confidence half-width (2 sigma)
    double r2 = 0.0;
};

/// Ordinary least squares y = a + b x, with optional per-point weights
/// (inverse-variance style). Used for log-log rate fits.
inline OlsFit ols_fit(const std::vector<double>& xs, const std::vector<double>& ys,
                      const std::vector<double>* weights = nullptr) {
    if (xs.size() != ys.size() || xs.size() < 2) throw InputError("ols_fit: need >= 2 points");
    const size_t n = xs.size();
    double sw = 0.0, sx = 0.0, sy = 0.0;
    auto wgt = [&](size_t i) { return weights ? (*weights)[i] : 1.0; };
    for (size_t i = 0; i < n; ++i) {
        sw += wgt(i);
        sx += wgt(i) * xs[i];
        sy += wgt(i) * ys[i];
    }
    const double xbar = sx / sw, ybar = sy / sw;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        sxx += wgt(i) * (xs[i] - xbar) * (xs[i] - xbar);
        sxy += wgt(i) * (xs[i] - xbar) * (ys[i] - ybar);
        syy += wgt(i) * (ys[i] - ybar) * (ys[i] - ybar);
    }
    if (sxx == 0.0) throw InputError("ols_fit: degenerate abscissae");
    OlsFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = ybar - fit.slope * xbar;
    double rss = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double resid = ys[i] - fit.intercept - fit.slope * xs[i];
        rss += wgt(i) * resid * resid;
    }
    fit.r2 = (syy > 0.0) ? 1.0 - rss / syy : 1.0;
    if (n > 2) fit.slope_stderr = std::sqrt(rss / (sw * (1.0 - 2.0 / n)) / sxx);
    fit.half_width = 2.0 * fit.slope_stderr;
    return fit;
}

} // namespace roughflow
