#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace mogen {

inline double mean_of(const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("mean_of: empty");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// sample standard deviation (n-1 denominator)
inline double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Inverse standard-normal CDF: Acklam's rational approximation plus one
// Halley refinement, giving ~1e-15 relative accuracy on (0,1).
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("normal_quantile: p outside (0,1)");
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425;
    double x;
    if (p < plow) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - plow) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double e = normal_cdf(x) - p;
    const double u = e * std::sqrt(2.0 * 3.14159265358979323846) * std::exp(x * x / 2.0);
    return x - u / (1.0 + x * u / 2.0);
}

// type-7 quantile (linear interpolation) on an already sorted vector
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw std::invalid_argument("quantile_sorted: empty");
    if (q <= 0.0) return sorted.front();
    if (q >= 1.0) return sorted.back();
    const double h = q * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(h);
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

// Empirical CDF position of `value` within `sorted` population: min -> 0,
// max -> 1, ties get their midrank, off-grid values interpolate linearly.
inline double rank_normalize(double value, const std::vector<double>& sorted) {
    if (sorted.empty()) throw std::invalid_argument("rank_normalize: empty population");
    const std::size_t n = sorted.size();
    if (n == 1) return 0.5;
    const auto lo_it = std::lower_bound(sorted.begin(), sorted.end(), value);
    const auto hi_it = std::upper_bound(sorted.begin(), sorted.end(), value);
    const std::size_t below = static_cast<std::size_t>(lo_it - sorted.begin());
    const std::size_t equal = static_cast<std::size_t>(hi_it - lo_it);
    const double denom = static_cast<double>(n - 1);
    if (equal > 0) {
        return (static_cast<double>(below) + static_cast<double>(equal - 1) / 2.0) / denom;
    }
    if (below == 0) return 0.0;
    if (below == n) return 1.0;
    const double a = sorted[below - 1], b = sorted[below];
    const double frac = (value - a) / (b - a);
    return (static_cast<double>(below - 1) + frac) / denom;
}

// average ranks (1-based, ties get the mean of their positions)
inline std::vector<double> average_ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
        i = j + 1;
    }
    return ranks;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("pearson: bad sizes");
    const double mx = mean_of(x), my = mean_of(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

// Rank correlation with average-rank ties. Undefined (and so an error) when
// either input is constant.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
    if (x.size() < 2) throw std::invalid_argument("spearman: need at least 2 points");
    const auto constant = [](const std::vector<double>& v) {
        for (double e : v)
            if (e != v.front()) return false;
        return true;
    };
    if (constant(x) || constant(y))
        throw std::invalid_argument("spearman: constant input, rank correlation undefined");
    return pearson(average_ranks(x), average_ranks(y));
}

// Mann-Kendall trend statistic with tie-corrected variance. Independent
// series (e.g. across seeds) combine by summing S and variances before the
// continuity-corrected normal approximation.
struct MannKendall {
    long long s = 0;
    double var = 0.0;
};

inline MannKendall mann_kendall(const std::vector<double>& series) {
    const std::size_t n = series.size();
    if (n < 2) throw std::invalid_argument("mann_kendall: need at least 2 points");
    MannKendall mk;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            if (series[j] > series[i]) ++mk.s;
            else if (series[j] < series[i]) --mk.s;
        }
    std::vector<double> sorted(series);
    std::sort(sorted.begin(), sorted.end());
    double tie_term = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && sorted[j + 1] == sorted[i]) ++j;
        const double t = static_cast<double>(j - i + 1);
        if (t > 1.0) tie_term += t * (t - 1.0) * (2.0 * t + 5.0);
        i = j + 1;
    }
    const double nn = static_cast<double>(n);
    mk.var = (nn * (nn - 1.0) * (2.0 * nn + 5.0) - tie_term) / 18.0;
    return mk;
}

// one-sided p-value for an increasing trend
inline double mann_kendall_p_increasing(long long s_total, double var_total) {
    if (var_total <= 0.0) return s_total > 0 ? 0.0 : 1.0;
    double z;
    if (s_total > 0) z = (static_cast<double>(s_total) - 1.0) / std::sqrt(var_total);
    else if (s_total < 0) z = (static_cast<double>(s_total) + 1.0) / std::sqrt(var_total);
    else z = 0.0;
    return 1.0 - normal_cdf(z);
}

} // namespace mogen
