#pragma once
#include <cmath>
#include <cstdint>
#include <cstddef>
#include <string>
#include <vector>

#include "mpseg/errors.hpp"
#include "mpseg/geometry.hpp"

namespace mpseg {

// ---------------------------------------------------------------------------
// Volume -- multi-channel scalar grid with voxel->mm affine
// ---------------------------------------------------------------------------

/// 3D multi-channel scalar grid. Data layout is C-order with the channel
/// fastest: index = ((x*Y + y)*Z + z)*C + c. Immutable by convention after
/// construction; safe to share read-only across workers.
struct Volume {
    std::size_t dim_x = 0, dim_y = 0, dim_z = 0, channels = 1;
    std::vector<double> data;
    Affine4 affine;
    double background_fill = 0.0;  // value returned for out-of-bounds sampling

    Volume() = default;

    Volume(std::size_t x, std::size_t y, std::size_t z, std::size_t c,
           Affine4 a = Affine4::identity())
        : dim_x(x), dim_y(y), dim_z(z), channels(c), data(x * y * z * c, 0.0), affine(a) {
        if (x < 2 || y < 2 || z < 2) throw DataError("Volume dimensions must be >= 2");
        if (c < 1) throw DataError("Volume needs at least one channel");
    }

    std::size_t voxel_count() const noexcept { return dim_x * dim_y * dim_z; }

    std::size_t index(std::size_t x, std::size_t y, std::size_t z,
                      std::size_t c = 0) const noexcept {
        return ((x * dim_y + y) * dim_z + z) * channels + c;
    }

    double at(std::size_t x, std::size_t y, std::size_t z, std::size_t c = 0) const {
        return data[index(x, y, z, c)];
    }
    double& at(std::size_t x, std::size_t y, std::size_t z, std::size_t c = 0) {
        return data[index(x, y, z, c)];
    }

    bool all_finite() const noexcept {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

// ---------------------------------------------------------------------------
// LabelMap -- integer segmentation sharing a Volume's geometry
// ---------------------------------------------------------------------------

/// Integer label grid; label 0 is background by convention and every label
/// lies in [0, num_classes).
struct LabelMap {
    std::size_t dim_x = 0, dim_y = 0, dim_z = 0;
    std::vector<std::int32_t> labels;
    Affine4 affine;
    std::int32_t num_classes = 1;

    LabelMap() = default;

    LabelMap(std::size_t x, std::size_t y, std::size_t z, std::int32_t classes,
             Affine4 a = Affine4::identity())
        : dim_x(x), dim_y(y), dim_z(z), labels(x * y * z, 0), affine(a), num_classes(classes) {
        if (classes < 1) throw DataError("LabelMap needs at least one class");
    }

    std::size_t voxel_count() const noexcept { return dim_x * dim_y * dim_z; }

    std::size_t index(std::size_t x, std::size_t y, std::size_t z) const noexcept {
        return (x * dim_y + y) * dim_z + z;
    }

    std::int32_t at(std::size_t x, std::size_t y, std::size_t z) const {
        return labels[index(x, y, z)];
    }
    std::int32_t& at(std::size_t x, std::size_t y, std::size_t z) {
        return labels[index(x, y, z)];
    }

    void validate_labels() const {
        for (std::int32_t v : labels)
            if (v < 0 || v >= num_classes)
                throw DataError("label " + std::to_string(v) + " outside [0, " +
                                std::to_string(num_classes) + ")");
    }
};

// ---------------------------------------------------------------------------
// ProbVolume -- per-voxel class probabilities with view-coverage counts
// ---------------------------------------------------------------------------

/// Per-voxel class-probability accumulator. Rows with coverage > 0 are
/// normalized to sum 1 (within 1e-5); rows with coverage 0 are all zero.
struct ProbVolume {
    std::size_t dim_x = 0, dim_y = 0, dim_z = 0;
    std::int32_t num_classes = 0;
    std::vector<double> probs;            // ((x*Y+y)*Z+z)*L + l
    std::vector<std::int32_t> coverage;   // (x*Y+y)*Z + z
    Affine4 affine;

    ProbVolume() = default;

    ProbVolume(std::size_t x, std::size_t y, std::size_t z, std::int32_t classes,
               Affine4 a = Affine4::identity())
        : dim_x(x), dim_y(y), dim_z(z), num_classes(classes),
          probs(x * y * z * static_cast<std::size_t>(classes), 0.0),
          coverage(x * y * z, 0), affine(a) {
        if (classes < 1) throw DataError("ProbVolume needs at least one class");
    }

    std::size_t voxel_count() const noexcept { return dim_x * dim_y * dim_z; }

    std::size_t voxel_index(std::size_t x, std::size_t y, std::size_t z) const noexcept {
        return (x * dim_y + y) * dim_z + z;
    }

    const double* row(std::size_t voxel) const noexcept {
        return probs.data() + voxel * static_cast<std::size_t>(num_classes);
    }
    double* row(std::size_t voxel) noexcept {
        return probs.data() + voxel * static_cast<std::size_t>(num_classes);
    }

    /// Checks the normalization invariant; throws DataError on violation.
    void check_normalized(double tol = 1e-5) const {
        for (std::size_t v = 0; v < voxel_count(); ++v) {
            const double* r = row(v);
            double sum = 0.0;
            for (std::int32_t l = 0; l < num_classes; ++l) {
                if (r[l] < 0.0) throw DataError("negative probability");
                sum += r[l];
            }
            if (coverage[v] > 0) {
                if (std::abs(sum - 1.0) > tol)
                    throw DataError("covered voxel not normalized: sum=" + std::to_string(sum));
            } else if (sum != 0.0) {
                throw DataError("uncovered voxel has nonzero probability row");
            }
        }
    }
};

inline bool same_grid(const Affine4& a, const Affine4& b, double tol = 1e-6) noexcept {
    for (std::size_t i = 0; i < 16; ++i)
        if (std::abs(a.m[i] - b.m[i]) > tol) return false;
    return true;
}

}  // namespace mpseg
