#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "terraphys/common.hpp"

namespace terraphys::numkit {

// Two-component univariate Gaussian mixture, canonical order m1 <= m2.
struct Gmm2 {
    double w1 = 0.5, w2 = 0.5;
    double m1 = 0.0, m2 = 0.0;
    double v1 = 1.0, v2 = 1.0;

    // Posterior probability that x came from component 1 (the low mean).
    double posterior1(double x) const {
        const double l1 = std::log(w1) - 0.5 * std::log(v1) - (x - m1) * (x - m1) / (2.0 * v1);
        const double l2 = std::log(w2) - 0.5 * std::log(v2) - (x - m2) * (x - m2) / (2.0 * v2);
        const double m = std::max(l1, l2);
        const double e1 = std::exp(l1 - m), e2 = std::exp(l2 - m);
        return e1 / (e1 + e2);
    }
};

struct Gmm2Fit {
    Gmm2 model;
    std::vector<double> loglik_history; // one entry per EM iteration
    int iterations = 0;
};

constexpr double kGmmVarianceFloor = 1e-12;

namespace detail {

inline double quantile_sorted(const std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

} // namespace detail

// EM fit with deterministic quantile initialization: means at the 25th/75th
// percentiles, equal weights, pooled variance. Stops when the log-likelihood
// improvement drops below tol. Variance collapse is handled by the floor.
inline Gmm2Fit fit_gmm2_detailed(const std::vector<double>& samples,
                                 int max_iters = 100, double tol = 1e-6) {
    const std::size_t n = samples.size();
    if (n < 8) fail("fit-gmm2: need at least 8 samples, got ", n);
    for (double x : samples)
        if (!std::isfinite(x)) fail("fit-gmm2: non-finite sample");

    std::vector<double> sorted = samples;
    std::sort(sorted.begin(), sorted.end());
    double mean = 0.0;
    for (double x : sorted) mean += x;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double x : sorted) var += (x - mean) * (x - mean);
    var = std::max(var / static_cast<double>(n), kGmmVarianceFloor);

    Gmm2 g;
    g.m1 = detail::quantile_sorted(sorted, 0.25);
    g.m2 = detail::quantile_sorted(sorted, 0.75);
    g.v1 = g.v2 = var;
    g.w1 = g.w2 = 0.5;

    Gmm2Fit fit;
    std::vector<double> r1(n); // responsibility of component 1
    double prev_ll = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < max_iters; ++iter) {
        // E step (log space)
        const double lw1 = std::log(g.w1), lw2 = std::log(g.w2);
        const double lv1 = 0.5 * std::log(2.0 * 3.14159265358979323846 * g.v1);
        const double lv2 = 0.5 * std::log(2.0 * 3.14159265358979323846 * g.v2);
        double ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double x = samples[i];
            const double l1 = lw1 - lv1 - (x - g.m1) * (x - g.m1) / (2.0 * g.v1);
            const double l2 = lw2 - lv2 - (x - g.m2) * (x - g.m2) / (2.0 * g.v2);
            const double m = std::max(l1, l2);
            const double e1 = std::exp(l1 - m), e2 = std::exp(l2 - m);
            const double denom = e1 + e2;
            r1[i] = e1 / denom;
            ll += m + std::log(denom);
        }
        fit.loglik_history.push_back(ll);
        fit.iterations = iter + 1;
        if (iter > 0 && ll - prev_ll < tol) break;
        prev_ll = ll;

        // M step
        double s1 = 0.0, s2 = 0.0, sx1 = 0.0, sx2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            s1 += r1[i];
            s2 += 1.0 - r1[i];
            sx1 += r1[i] * samples[i];
            sx2 += (1.0 - r1[i]) * samples[i];
        }
        const double eps = 1e-300;
        g.w1 = s1 / static_cast<double>(n);
        g.w2 = s2 / static_cast<double>(n);
        g.m1 = sx1 / std::max(s1, eps);
        g.m2 = sx2 / std::max(s2, eps);
        double sv1 = 0.0, sv2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d1 = samples[i] - g.m1;
            const double d2 = samples[i] - g.m2;
            sv1 += r1[i] * d1 * d1;
            sv2 += (1.0 - r1[i]) * d2 * d2;
        }
        g.v1 = std::max(sv1 / std::max(s1, eps), kGmmVarianceFloor);
        g.v2 = std::max(sv2 / std::max(s2, eps), kGmmVarianceFloor);
    }

    if (g.m1 > g.m2) {
        std::swap(g.m1, g.m2);
        std::swap(g.v1, g.v2);
        std::swap(g.w1, g.w2);
    }
    fit.model = g;
    return fit;
}

inline Gmm2 fit_gmm2(const std::vector<double>& samples, int max_iters = 100, double tol = 1e-6) {
    return fit_gmm2_detailed(samples, max_iters, tol).model;
}

// Decision threshold between the two components: the root of
// w1*N(x;m1,v1) = w2*N(x;m2,v2) inside (m1,m2), quadratic in x. Falls back to
// the midpoint when no root lies in the open interval; returns nullopt when
// the fit is degenerate (components merged or one nearly empty).
inline std::optional<double> gmm2_threshold(const Gmm2& g) {
    if (std::abs(g.m2 - g.m1) < 1e-9) return std::nullopt;
    if (std::min(g.w1, g.w2) < 0.05) return std::nullopt;

    const double mid = 0.5 * (g.m1 + g.m2);
    const double a = 1.0 / g.v2 - 1.0 / g.v1;
    const double b = -2.0 * (g.m2 / g.v2 - g.m1 / g.v1);
    const double c = g.m2 * g.m2 / g.v2 - g.m1 * g.m1 / g.v1
                     + 2.0 * std::log(g.w1 / g.w2) + std::log(g.v2 / g.v1);

    auto in_interval = [&](double x) { return x > g.m1 && x < g.m2; };

    if (std::abs(a) < 1e-14) {
        if (std::abs(b) < 1e-300) return mid;
        const double x = -c / b;
        return in_interval(x) ? x : mid;
    }
    const double disc = b * b - 4.0 * a * c;
    if (disc < 0.0) return mid;
    const double sq = std::sqrt(disc);
    const double x1 = (-b - sq) / (2.0 * a);
    const double x2 = (-b + sq) / (2.0 * a);
    const bool ok1 = in_interval(x1), ok2 = in_interval(x2);
    if (ok1 && ok2) return std::abs(x1 - mid) <= std::abs(x2 - mid) ? x1 : x2;
    if (ok1) return x1;
    if (ok2) return x2;
    return mid;
}

} // namespace terraphys::numkit
