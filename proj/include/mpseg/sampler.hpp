#pragma once
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "mpseg/errors.hpp"
#include "mpseg/geometry.hpp"
#include "mpseg/parallel.hpp"
#include "mpseg/views.hpp"
#include "mpseg/volume.hpp"

namespace mpseg {

// ---------------------------------------------------------------------------
// Interpolating samplers
// ---------------------------------------------------------------------------

/// Trilinear interpolation of all channels at a scanner-space point. Points
/// whose fractional voxel index leaves [0,X-1]x[0,Y-1]x[0,Z-1] yield the
/// volume's background_fill in every channel. `out` must hold C doubles.
inline void trilinear_sample(const Volume& volume, const Affine4& inverse_affine,
                             const Vec3& point_mm, double* out) noexcept {
    Vec3 f = inverse_affine.apply(point_mm);
    double max_x = static_cast<double>(volume.dim_x - 1);
    double max_y = static_cast<double>(volume.dim_y - 1);
    double max_z = static_cast<double>(volume.dim_z - 1);
    if (f.x < 0.0 || f.x > max_x || f.y < 0.0 || f.y > max_y || f.z < 0.0 || f.z > max_z) {
        for (std::size_t c = 0; c < volume.channels; ++c) out[c] = volume.background_fill;
        return;
    }
    auto x0 = static_cast<std::size_t>(f.x);
    auto y0 = static_cast<std::size_t>(f.y);
    auto z0 = static_cast<std::size_t>(f.z);
    if (x0 >= volume.dim_x - 1) x0 = volume.dim_x - 2;
    if (y0 >= volume.dim_y - 1) y0 = volume.dim_y - 2;
    if (z0 >= volume.dim_z - 1) z0 = volume.dim_z - 2;
    double fx = f.x - static_cast<double>(x0);
    double fy = f.y - static_cast<double>(y0);
    double fz = f.z - static_cast<double>(z0);

    for (std::size_t c = 0; c < volume.channels; ++c) {
        double v000 = volume.at(x0, y0, z0, c);
        double v001 = volume.at(x0, y0, z0 + 1, c);
        double v010 = volume.at(x0, y0 + 1, z0, c);
        double v011 = volume.at(x0, y0 + 1, z0 + 1, c);
        double v100 = volume.at(x0 + 1, y0, z0, c);
        double v101 = volume.at(x0 + 1, y0, z0 + 1, c);
        double v110 = volume.at(x0 + 1, y0 + 1, z0, c);
        double v111 = volume.at(x0 + 1, y0 + 1, z0 + 1, c);
        double c00 = v000 * (1 - fz) + v001 * fz;
        double c01 = v010 * (1 - fz) + v011 * fz;
        double c10 = v100 * (1 - fz) + v101 * fz;
        double c11 = v110 * (1 - fz) + v111 * fz;
        double c0 = c00 * (1 - fy) + c01 * fy;
        double c1 = c10 * (1 - fy) + c11 * fy;
        out[c] = c0 * (1 - fx) + c1 * fx;
    }
}

/// Convenience overload computing the inverse affine per call.
inline std::vector<double> trilinear_sample(const Volume& volume, const Vec3& point_mm) {
    std::vector<double> out(volume.channels);
    trilinear_sample(volume, volume.affine.inverse(), point_mm, out.data());
    return out;
}

/// Nearest-neighbour label lookup at a scanner-space point. The fractional
/// index is rounded half away from zero per axis; out-of-bounds points map
/// to label 0.
inline std::int32_t nearest_label_sample(const LabelMap& labelmap,
                                         const Affine4& inverse_affine,
                                         const Vec3& point_mm) noexcept {
    Vec3 f = inverse_affine.apply(point_mm);
    double rx = std::round(f.x);
    double ry = std::round(f.y);
    double rz = std::round(f.z);
    if (rx < 0.0 || rx >= static_cast<double>(labelmap.dim_x) || ry < 0.0 ||
        ry >= static_cast<double>(labelmap.dim_y) || rz < 0.0 ||
        rz >= static_cast<double>(labelmap.dim_z))
        return 0;
    return labelmap.at(static_cast<std::size_t>(rx), static_cast<std::size_t>(ry),
                       static_cast<std::size_t>(rz));
}

inline std::int32_t nearest_label_sample(const LabelMap& labelmap, const Vec3& point_mm) {
    return nearest_label_sample(labelmap, labelmap.affine.inverse(), point_mm);
}

// ---------------------------------------------------------------------------
// Slice / SliceStack
// ---------------------------------------------------------------------------

/// One sampled 2D image (q x q x C, channel fastest, row index a along u)
/// with optional labels and its loss weight. Under the default augmentation
/// policy the weight is 1 for raw slices and 1/3 for deformed ones.
struct Slice {
    int grid_size = 0;
    int channels = 0;
    std::vector<double> image;                         // q*q*C
    std::optional<std::vector<std::int32_t>> labels;   // q*q
    ViewAxis view;
    double offset_mm = 0.0;
    double loss_weight = 1.0;
    double background_fill = 0.0;
    std::int32_t num_classes = 0;

    std::size_t pixel_index(int a, int b) const noexcept {
        return static_cast<std::size_t>(a) * grid_size + b;
    }
};

/// Per-view container: slices ordered by strictly increasing offset with
/// spacing r.
struct SliceStack {
    ViewAxis view;
    SamplingParams params;
    Vec3 center_mm{0, 0, 0};
    std::vector<Slice> slices;
};

/// Samples one slice: trilinear image values and nearest-neighbour labels at
/// every plane-grid point.
inline Slice sample_slice(const Volume& volume, const LabelMap* labelmap,
                          const ViewAxis& view, double offset_mm,
                          const SamplingParams& params, const Vec3& center_mm = {0, 0, 0}) {
    params.validate();
    if (std::abs(offset_mm) > params.extent_mm / 2.0 + 1e-9)
        throw GeometryError("slice offset outside the sampling sphere");
    if (labelmap && !same_grid(labelmap->affine, volume.affine))
        throw GeometryError("label map affine differs from volume affine");

    Affine4 inv = volume.affine.inverse();
    int q = params.grid_size;
    Slice slice;
    slice.grid_size = q;
    slice.channels = static_cast<int>(volume.channels);
    slice.view = view;
    slice.offset_mm = offset_mm;
    slice.background_fill = volume.background_fill;
    slice.image.resize(static_cast<std::size_t>(q) * q * volume.channels);
    if (labelmap) {
        slice.labels.emplace(static_cast<std::size_t>(q) * q, 0);
        slice.num_classes = labelmap->num_classes;
    }

    for (int a = 0; a < q; ++a) {
        for (int b = 0; b < q; ++b) {
            Vec3 p = plane_point(view, offset_mm, params, center_mm, a, b);
            trilinear_sample(volume, inv, p,
                             slice.image.data() + slice.pixel_index(a, b) * volume.channels);
            if (labelmap)
                (*slice.labels)[slice.pixel_index(a, b)] = nearest_label_sample(*labelmap, inv, p);
        }
    }
    return slice;
}

/// Samples the full stack at every slice_offsets value. Slices are
/// independent, so they may be computed on several threads; the result is
/// identical for any thread count.
inline SliceStack sample_stack(const Volume& volume, const LabelMap* labelmap,
                               const ViewAxis& view, const SamplingParams& params,
                               const Vec3& center_mm = {0, 0, 0}, unsigned threads = 1) {
    std::vector<double> offsets = slice_offsets(params);
    SliceStack stack;
    stack.view = view;
    stack.params = params;
    stack.center_mm = center_mm;
    stack.slices.resize(offsets.size());
    parallel_for(offsets.size(), threads, [&](std::size_t i) {
        stack.slices[i] = sample_slice(volume, labelmap, view, offsets[i], params, center_mm);
    });
    return stack;
}

}  // namespace mpseg
