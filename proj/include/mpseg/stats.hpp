#pragma once
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "mpseg/errors.hpp"

namespace mpseg {

/// Percentile by linear interpolation between order statistics (inclusive
/// method): rank = p/100 * (n-1), value interpolated between the two
/// bracketing sorted samples. Input must already be sorted ascending.
inline double percentile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw DataError("percentile of empty range");
    if (sorted.size() == 1) return sorted[0];
    double rank = std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(sorted.size() - 1);
    auto lo = static_cast<std::size_t>(rank);
    double frac = rank - static_cast<double>(lo);
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

/// Copying convenience over unsorted data.
inline double percentile(std::vector<double> values, double p) {
    std::sort(values.begin(), values.end());
    return percentile_sorted(values, p);
}

inline double mean(std::span<const double> values) {
    if (values.empty()) throw DataError("mean of empty range");
    double s = 0.0;
    for (double v : values) s += v;
    return s / static_cast<double>(values.size());
}

/// Unbiased sample variance (n-1 denominator).
inline double sample_variance(std::span<const double> values) {
    if (values.size() < 2) throw DataError("variance needs at least two samples");
    double mu = mean(values);
    double s = 0.0;
    for (double v : values) s += (v - mu) * (v - mu);
    return s / static_cast<double>(values.size() - 1);
}

}  // namespace mpseg
