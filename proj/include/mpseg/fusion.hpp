#pragma once
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mpseg/errors.hpp"
#include "mpseg/geometry.hpp"
#include "mpseg/parallel.hpp"
#include "mpseg/views.hpp"
#include "mpseg/volume.hpp"

namespace mpseg {

// ---------------------------------------------------------------------------
// ViewPrediction -- per-view 2D probability slices awaiting fusion
// ---------------------------------------------------------------------------

struct ViewPrediction {
    std::vector<std::vector<double>> prob_slices;  // per offset, q*q*L (class fastest)
    ViewAxis view;
    SamplingParams params;
    Vec3 center_mm{0, 0, 0};
    std::int32_t num_classes = 0;

    void validate() const {
        params.validate();
        std::size_t expected = slice_offsets(params).size();
        if (prob_slices.size() != expected)
            throw DataError("slice count inconsistent with sampling params");
        std::size_t per_slice = static_cast<std::size_t>(params.grid_size) *
                                params.grid_size * static_cast<std::size_t>(num_classes);
        for (const auto& s : prob_slices) {
            if (s.size() != per_slice) throw DataError("probability slice shape mismatch");
            for (std::size_t p = 0; p < s.size(); p += static_cast<std::size_t>(num_classes)) {
                double sum = 0.0;
                for (std::int32_t l = 0; l < num_classes; ++l) {
                    if (s[p + static_cast<std::size_t>(l)] < 0.0)
                        throw DataError("negative probability in view prediction");
                    sum += s[p + static_cast<std::size_t>(l)];
                }
                if (std::abs(sum - 1.0) > 1e-5)
                    throw DataError("view prediction pixel not normalized: sum=" +
                                    std::to_string(sum));
            }
        }
    }
};

/// Shape + affine of the original volume that reconstruction targets.
struct TargetGeometry {
    std::size_t dim_x = 0, dim_y = 0, dim_z = 0;
    Affine4 affine;
};

// ---------------------------------------------------------------------------
// reconstruct_view -- 2D slice stack back to the 3D voxel grid
// ---------------------------------------------------------------------------

/// Maps per-view probability slices back onto the target voxel grid. For
/// each voxel center x the in-view coordinates are
///   s = (x-c).u / r + (q-1)/2,  t = (x-c).v / r + (q-1)/2,
///   w = ((x-c).n + m/2) / r,
/// interpolated trilinearly across the stack when inside its box
/// (coverage 1), else left at zero with coverage 0.
inline ProbVolume reconstruct_view(const ViewPrediction& pred,
                                   const TargetGeometry& target, unsigned threads = 1) {
    pred.validate();
    if (!target.affine.valid()) throw GeometryError("target affine invalid");
    if (target.dim_x < 2 || target.dim_y < 2 || target.dim_z < 2)
        throw GeometryError("target shape too small");

    int q = pred.params.grid_size;
    double r = pred.params.spacing_mm;
    double half_extent = pred.params.extent_mm / 2.0;
    double half_grid = (q - 1) / 2.0;
    std::int32_t L = pred.num_classes;
    int n_slices = static_cast<int>(pred.prob_slices.size());

    ProbVolume out(target.dim_x, target.dim_y, target.dim_z, L, target.affine);

    auto slice_value = [&](int w, int a, int b, std::int32_t l) {
        return pred.prob_slices[static_cast<std::size_t>(w)]
                               [(static_cast<std::size_t>(a) * q + b) * L + l];
    };

    parallel_for(target.dim_x, threads, [&](std::size_t x) {
        std::vector<double> row_buf(static_cast<std::size_t>(L));
        for (std::size_t y = 0; y < target.dim_y; ++y) {
            for (std::size_t z = 0; z < target.dim_z; ++z) {
                Vec3 p = target.affine.apply({static_cast<double>(x), static_cast<double>(y),
                                              static_cast<double>(z)});
                Vec3 d = p - pred.center_mm;
                double s = dot(d, pred.view.u) / r + half_grid;
                double t = dot(d, pred.view.v) / r + half_grid;
                double w = (dot(d, pred.view.normal) + half_extent) / r;

                if (s < 0.0 || s > q - 1 || t < 0.0 || t > q - 1 || w < 0.0 ||
                    w > n_slices - 1)
                    continue;  // outside the sampled box: coverage stays 0

                int s0 = std::min(static_cast<int>(s), q - 2);
                int t0 = std::min(static_cast<int>(t), q - 2);
                int w0 = std::min(static_cast<int>(w), n_slices - 2);
                if (n_slices == 1) w0 = 0;
                double fs = s - s0;
                double ft = t - t0;
                double fw = w - w0;
                int w1 = std::min(w0 + 1, n_slices - 1);

                double sum = 0.0;
                for (std::int32_t l = 0; l < L; ++l) {
                    double c00 = slice_value(w0, s0, t0, l) * (1 - fw) +
                                 slice_value(w1, s0, t0, l) * fw;
                    double c01 = slice_value(w0, s0, t0 + 1, l) * (1 - fw) +
                                 slice_value(w1, s0, t0 + 1, l) * fw;
                    double c10 = slice_value(w0, s0 + 1, t0, l) * (1 - fw) +
                                 slice_value(w1, s0 + 1, t0, l) * fw;
                    double c11 = slice_value(w0, s0 + 1, t0 + 1, l) * (1 - fw) +
                                 slice_value(w1, s0 + 1, t0 + 1, l) * fw;
                    double c0 = c00 * (1 - ft) + c01 * ft;
                    double c1 = c10 * (1 - ft) + c11 * ft;
                    row_buf[static_cast<std::size_t>(l)] = c0 * (1 - fs) + c1 * fs;
                    sum += row_buf[static_cast<std::size_t>(l)];
                }
                if (sum <= 0.0) continue;

                std::size_t voxel = out.voxel_index(x, y, z);
                double* row = out.row(voxel);
                for (std::int32_t l = 0; l < L; ++l)
                    row[l] = row_buf[static_cast<std::size_t>(l)] / sum;
                out.coverage[voxel] = 1;
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// fuse_views -- average per-view probability volumes
// ---------------------------------------------------------------------------

/// Unweighted per-voxel mean of the probability rows of covering views,
/// summed in ascending view order with compensated summation so parallel
/// execution is bit-identical to sequential. Fused coverage is the count of
/// covering views; voxels no view covers keep a zero row and coverage 0
/// (argmax maps them to background).
inline ProbVolume fuse_views(std::span<const ProbVolume> views, unsigned threads = 1) {
    if (views.empty()) throw DataError("fuse_views: empty view list");
    const ProbVolume& first = views.front();
    for (const ProbVolume& v : views) {
        if (v.dim_x != first.dim_x || v.dim_y != first.dim_y || v.dim_z != first.dim_z ||
            v.num_classes != first.num_classes)
            throw GeometryError("fuse_views: volume shapes differ");
        if (!same_grid(v.affine, first.affine))
            throw GeometryError("fuse_views: volume affines differ");
    }

    std::int32_t L = first.num_classes;
    ProbVolume out(first.dim_x, first.dim_y, first.dim_z, L, first.affine);

    parallel_for(out.voxel_count(), threads, [&](std::size_t voxel) {
        std::int32_t count = 0;
        double* row = out.row(voxel);
        std::vector<double> comp(static_cast<std::size_t>(L), 0.0);  // Kahan carry
        for (const ProbVolume& v : views) {
            if (v.coverage[voxel] <= 0) continue;
            ++count;
            const double* src = v.row(voxel);
            for (std::int32_t l = 0; l < L; ++l) {
                double y = src[l] - comp[static_cast<std::size_t>(l)];
                double t = row[l] + y;
                comp[static_cast<std::size_t>(l)] = (t - row[l]) - y;
                row[l] = t;
            }
        }
        out.coverage[voxel] = count;
        if (count == 0) return;
        double sum = 0.0;
        for (std::int32_t l = 0; l < L; ++l) {
            row[l] /= count;
            sum += row[l];
        }
        if (sum > 0.0)
            for (std::int32_t l = 0; l < L; ++l) row[l] /= sum;
    });
    return out;
}

// ---------------------------------------------------------------------------
// argmax_labels -- hard segmentation
// ---------------------------------------------------------------------------

/// Per-voxel class of maximal probability; ties break toward the lowest
/// class index, so uncovered (all-zero) voxels map to background.
inline LabelMap argmax_labels(const ProbVolume& fused) {
    LabelMap out(fused.dim_x, fused.dim_y, fused.dim_z, fused.num_classes, fused.affine);
    for (std::size_t voxel = 0; voxel < fused.voxel_count(); ++voxel) {
        const double* row = fused.row(voxel);
        std::int32_t best = 0;
        double best_p = row[0];
        for (std::int32_t l = 1; l < fused.num_classes; ++l) {
            if (row[l] > best_p) {
                best_p = row[l];
                best = l;
            }
        }
        out.labels[voxel] = best;
    }
    return out;
}

}  // namespace mpseg
