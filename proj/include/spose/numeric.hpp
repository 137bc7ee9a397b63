#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "spose/error.hpp"

namespace spose {

// Pairwise (cascade) summation: deterministic and better conditioned than a
// running sum. Used everywhere a float reduction must be reproducible.
inline double pairwise_sum(std::span<const double> v) {
    if (v.size() <= 8) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    const std::size_t half = v.size() / 2;
    return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() <= 16) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
        return s;
    }
    const std::size_t half = a.size() / 2;
    return dot(a.first(half), b.first(half)) + dot(a.subspan(half), b.subspan(half));
}

inline double mean(std::span<const double> v) {
    return v.empty() ? 0.0 : pairwise_sum(v) / static_cast<double>(v.size());
}

// Pearson correlation. Zero variance on either side yields NaN; callers that
// promise r=0 in that case check std::isnan.
inline double pearson(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    const double mx = mean(x);
    const double my = mean(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return std::nan("");
    return sxy / std::sqrt(sxx * syy);
}

// Ranks with average-rank tie handling (1-based, as in the classical formula).
inline std::vector<double> average_ranks(std::span<const double> v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

// Spearman rho = Pearson on average ranks. Throws on a constant input.
inline double spearman(std::span<const double> x, std::span<const double> y) {
    const std::vector<double> rx = average_ranks(x);
    const std::vector<double> ry = average_ranks(y);
    const double rho = pearson(rx, ry);
    if (std::isnan(rho)) throw DomainError("spearman: constant input has no rank ordering");
    return rho;
}

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

// Wilson score interval for a binomial proportion.
inline Interval wilson_interval(double p_hat, std::size_t n, double z = 1.959963984540054) {
    const double nn = static_cast<double>(n);
    const double z2 = z * z;
    const double denom = 1.0 + z2 / nn;
    const double center = (p_hat + z2 / (2.0 * nn)) / denom;
    const double half =
        z * std::sqrt(p_hat * (1.0 - p_hat) / nn + z2 / (4.0 * nn * nn)) / denom;
    Interval iv{center - half, center + half};
    if (iv.lo < 0.0) iv.lo = 0.0;
    if (iv.hi > 1.0) iv.hi = 1.0;
    return iv;
}

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace spose
