#pragma once
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "mpseg/errors.hpp"

namespace mpseg::detail {

/// Mirror-101 index folding (reflection without repeating the edge sample),
/// valid for arbitrarily large |i| via the period 2*(n-1).
inline int mirror_index(int i, int n) noexcept {
    if (n == 1) return 0;
    int period = 2 * (n - 1);
    int m = i % period;
    if (m < 0) m += period;
    return m < n ? m : period - m;
}

/// Truncated, normalized 1D Gaussian kernel (radius = ceil(4*sigma)).
inline std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma > 0.0)) throw DataError("gaussian_kernel requires sigma > 0");
    int radius = static_cast<int>(std::ceil(4.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double inv = 1.0 / (2.0 * sigma * sigma);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        double w = std::exp(-static_cast<double>(i) * static_cast<double>(i) * inv);
        k[static_cast<std::size_t>(i + radius)] = w;
        sum += w;
    }
    for (double& w : k) w /= sum;
    return k;
}

/// Separable Gaussian blur of a rows x cols image (row-major), reflective
/// (mirror-101) border handling. No-op when sigma == 0.
inline void gaussian_blur_2d(std::vector<double>& image, int rows, int cols, double sigma) {
    if (sigma == 0.0) return;
    if (static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) != image.size())
        throw DataError("gaussian_blur_2d: shape mismatch");
    std::vector<double> kernel = gaussian_kernel(sigma);
    int radius = static_cast<int>(kernel.size() / 2);
    std::vector<double> tmp(image.size());

    // rows pass
    for (int a = 0; a < rows; ++a) {
        for (int b = 0; b < cols; ++b) {
            double acc = 0.0;
            for (int t = -radius; t <= radius; ++t) {
                int bb = mirror_index(b + t, cols);
                acc += kernel[static_cast<std::size_t>(t + radius)] *
                       image[static_cast<std::size_t>(a) * cols + bb];
            }
            tmp[static_cast<std::size_t>(a) * cols + b] = acc;
        }
    }
    // columns pass
    for (int a = 0; a < rows; ++a) {
        for (int b = 0; b < cols; ++b) {
            double acc = 0.0;
            for (int t = -radius; t <= radius; ++t) {
                int aa = mirror_index(a + t, rows);
                acc += kernel[static_cast<std::size_t>(t + radius)] *
                       tmp[static_cast<std::size_t>(aa) * cols + b];
            }
            image[static_cast<std::size_t>(a) * cols + b] = acc;
        }
    }
}

/// Bilinear lookup at fractional position (a, b) in a rows x cols x channels
/// image (channel-fastest layout). Out-of-bounds positions return `fill`.
inline void bilinear_sample_2d(const std::vector<double>& image, int rows, int cols,
                               int channels, double a, double b, double fill,
                               double* out) {
    if (a < 0.0 || a > rows - 1 || b < 0.0 || b > cols - 1) {
        for (int c = 0; c < channels; ++c) out[c] = fill;
        return;
    }
    int a0 = static_cast<int>(a);
    int b0 = static_cast<int>(b);
    if (a0 == rows - 1) a0 = rows - 2;
    if (b0 == cols - 1) b0 = cols - 2;
    if (rows == 1) a0 = 0;
    if (cols == 1) b0 = 0;
    double fa = a - a0;
    double fb = b - b0;
    int a1 = std::min(a0 + 1, rows - 1);
    int b1 = std::min(b0 + 1, cols - 1);
    auto idx = [cols, channels](int r, int c) {
        return (static_cast<std::size_t>(r) * cols + c) * channels;
    };
    for (int c = 0; c < channels; ++c) {
        double v00 = image[idx(a0, b0) + c];
        double v01 = image[idx(a0, b1) + c];
        double v10 = image[idx(a1, b0) + c];
        double v11 = image[idx(a1, b1) + c];
        out[c] = v00 * (1 - fa) * (1 - fb) + v01 * (1 - fa) * fb +
                 v10 * fa * (1 - fb) + v11 * fa * fb;
    }
}

/// Nearest-neighbour label lookup at fractional (a, b); ties round half away
/// from zero per axis. Out-of-bounds returns 0 (background).
inline std::int32_t nearest_sample_2d(const std::vector<std::int32_t>& labels, int rows,
                                      int cols, double a, double b) noexcept {
    int ra = static_cast<int>(std::round(a));
    int rb = static_cast<int>(std::round(b));
    if (ra < 0 || ra >= rows || rb < 0 || rb >= cols) return 0;
    return labels[static_cast<std::size_t>(ra) * cols + rb];
}

}  // namespace mpseg::detail
