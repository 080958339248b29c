#pragma once
#include <array>
#include <cmath>
#include <cstddef>

#include "mpseg/errors.hpp"

namespace mpseg {

// ---------------------------------------------------------------------------
// Vec3 -- millimetre-frame 3-vector
// ---------------------------------------------------------------------------

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    constexpr Vec3 operator+(const Vec3& o) const noexcept { return {x + o.x, y + o.y, z + o.z}; }
    constexpr Vec3 operator-(const Vec3& o) const noexcept { return {x - o.x, y - o.y, z - o.z}; }
    constexpr Vec3 operator*(double s) const noexcept { return {x * s, y * s, z * s}; }
    constexpr Vec3 operator-() const noexcept { return {-x, -y, -z}; }
    constexpr bool operator==(const Vec3&) const noexcept = default;

    constexpr double operator[](std::size_t i) const noexcept {
        return i == 0 ? x : (i == 1 ? y : z);
    }
};

constexpr Vec3 operator*(double s, const Vec3& v) noexcept { return v * s; }

constexpr double dot(const Vec3& a, const Vec3& b) noexcept {
    return a.x * b.x + a.y * b.y + a.z * b.z;
}

constexpr Vec3 cross(const Vec3& a, const Vec3& b) noexcept {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

inline double norm(const Vec3& v) noexcept { return std::sqrt(dot(v, v)); }

inline Vec3 normalized(const Vec3& v) {
    double n = norm(v);
    if (n < 1e-300) throw GeometryError("cannot normalize near-zero vector");
    return v * (1.0 / n);
}

// ---------------------------------------------------------------------------
// Affine4 -- homogeneous voxel-index -> scanner-mm map
// ---------------------------------------------------------------------------

/// 4x4 affine, row-major. Maps homogeneous voxel index (i,j,k,1) to scanner
/// space millimetres. Bottom row must be (0,0,0,1) and the upper-left 3x3
/// block invertible.
struct Affine4 {
    std::array<double, 16> m{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};

    static constexpr Affine4 identity() noexcept { return {}; }

    static constexpr Affine4 diagonal(double sx, double sy, double sz) noexcept {
        Affine4 a;
        a.m[0] = sx;
        a.m[5] = sy;
        a.m[10] = sz;
        return a;
    }

    constexpr double at(std::size_t row, std::size_t col) const noexcept { return m[row * 4 + col]; }
    constexpr double& at(std::size_t row, std::size_t col) noexcept { return m[row * 4 + col]; }

    constexpr Vec3 translation() const noexcept { return {m[3], m[7], m[11]}; }

    constexpr void set_translation(const Vec3& t) noexcept {
        m[3] = t.x;
        m[7] = t.y;
        m[11] = t.z;
    }

    constexpr bool operator==(const Affine4&) const noexcept = default;

    /// Determinant of the upper-left 3x3 block.
    constexpr double det3() const noexcept {
        return m[0] * (m[5] * m[10] - m[6] * m[9]) -
               m[1] * (m[4] * m[10] - m[6] * m[8]) +
               m[2] * (m[4] * m[9] - m[5] * m[8]);
    }

    constexpr bool bottom_row_valid() const noexcept {
        return m[12] == 0.0 && m[13] == 0.0 && m[14] == 0.0 && m[15] == 1.0;
    }

    bool valid() const noexcept {
        if (!bottom_row_valid()) return false;
        for (double v : m)
            if (!std::isfinite(v)) return false;
        return det3() != 0.0;
    }

    /// Applies the affine to a point (includes translation).
    constexpr Vec3 apply(const Vec3& p) const noexcept {
        return {m[0] * p.x + m[1] * p.y + m[2] * p.z + m[3],
                m[4] * p.x + m[5] * p.y + m[6] * p.z + m[7],
                m[8] * p.x + m[9] * p.y + m[10] * p.z + m[11]};
    }

    /// Applies only the linear 3x3 block (directions, no translation).
    constexpr Vec3 apply_direction(const Vec3& v) const noexcept {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[4] * v.x + m[5] * v.y + m[6] * v.z,
                m[8] * v.x + m[9] * v.y + m[10] * v.z};
    }

    /// Inverse via the 3x3 adjugate; throws GeometryError when singular.
    Affine4 inverse() const {
        double d = det3();
        double scale = 0.0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) scale = std::max(scale, std::abs(at(i, j)));
        if (!std::isfinite(d) || std::abs(d) <= 1e-14 * scale * scale * scale)
            throw GeometryError("affine is singular or near-singular");

        Affine4 inv;
        double r = 1.0 / d;
        inv.m[0] = (m[5] * m[10] - m[6] * m[9]) * r;
        inv.m[1] = (m[2] * m[9] - m[1] * m[10]) * r;
        inv.m[2] = (m[1] * m[6] - m[2] * m[5]) * r;
        inv.m[4] = (m[6] * m[8] - m[4] * m[10]) * r;
        inv.m[5] = (m[0] * m[10] - m[2] * m[8]) * r;
        inv.m[6] = (m[2] * m[4] - m[0] * m[6]) * r;
        inv.m[8] = (m[4] * m[9] - m[5] * m[8]) * r;
        inv.m[9] = (m[1] * m[8] - m[0] * m[9]) * r;
        inv.m[10] = (m[0] * m[5] - m[1] * m[4]) * r;

        Vec3 t = translation();
        inv.m[3] = -(inv.m[0] * t.x + inv.m[1] * t.y + inv.m[2] * t.z);
        inv.m[7] = -(inv.m[4] * t.x + inv.m[5] * t.y + inv.m[6] * t.z);
        inv.m[11] = -(inv.m[8] * t.x + inv.m[9] * t.y + inv.m[10] * t.z);
        return inv;
    }
};

// ---------------------------------------------------------------------------
// Coordinate transforms
// ---------------------------------------------------------------------------

/// Fractional voxel index -> scanner mm. Integer index i lies at the voxel
/// center.
inline Vec3 voxel_to_scanner(const Affine4& affine, const Vec3& index) noexcept {
    return affine.apply(index);
}

/// Scanner mm -> fractional voxel index. Throws GeometryError when the
/// affine is singular.
inline Vec3 scanner_to_voxel(const Affine4& affine, const Vec3& point_mm) {
    return affine.inverse().apply(point_mm);
}

}  // namespace mpseg
