#pragma once
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mpseg/errors.hpp"
#include "mpseg/geometry.hpp"
#include "mpseg/rng.hpp"

namespace mpseg {

// ---------------------------------------------------------------------------
// ViewAxis / ViewSet
// ---------------------------------------------------------------------------

/// One sampling plane orientation: unit normal plus the right-handed
/// orthonormal in-plane basis (u, v, normal), u x v = normal.
struct ViewAxis {
    Vec3 normal{0, 0, 1};
    Vec3 u{1, 0, 0};
    Vec3 v{0, 1, 0};

    bool orthonormal(double tol = 1e-9) const noexcept {
        return std::abs(norm(normal) - 1.0) <= tol && std::abs(norm(u) - 1.0) <= tol &&
               std::abs(norm(v) - 1.0) <= tol && std::abs(dot(u, v)) <= tol &&
               std::abs(dot(u, normal)) <= tol && std::abs(dot(v, normal)) <= tol &&
               norm(cross(u, v) - normal) <= tol;
    }
};

struct ViewSet {
    std::vector<ViewAxis> axes;
    std::uint64_t seed = 0;

    std::size_t size() const noexcept { return axes.size(); }
};

/// Angle in degrees between two view normals with antipodal views
/// identified (a plane and its flip carry the same information).
inline double view_angle_deg(const Vec3& a, const Vec3& b) noexcept {
    double d = std::min(1.0, std::abs(dot(a, b)));
    return std::acos(d) * 180.0 / std::numbers::pi;
}

/// Builds the in-plane basis for a normal: u is the normalized projection of
/// the scanner x-axis onto the plane (y-axis when the normal is nearly
/// parallel to x), v = normal x u.
inline ViewAxis view_axis_from_normal(const Vec3& normal) {
    Vec3 n = normalized(normal);
    Vec3 ref{1, 0, 0};
    if (std::abs(dot(n, ref)) > 0.99) ref = {0, 1, 0};
    Vec3 u = normalized(ref - n * dot(ref, n));
    Vec3 v = cross(n, u);
    return {n, u, v};
}

inline constexpr int kMaxAxisAttempts = 10000;

/// Samples k view axes with normals uniform on the unit hemisphere (z >= 0)
/// via normalized Gaussian triples. Candidates closer than min_angle_deg to
/// an already accepted normal are rejection-resampled, up to 10,000 attempts
/// per axis. Deterministic given the seed; the first j axes of a k-axis set
/// equal the j-axis set for the same seed.
inline ViewSet sample_view_axes(int k, std::uint64_t seed, double min_angle_deg = 20.0) {
    if (k < 1) throw ConfigError("view count must be >= 1");
    if (min_angle_deg < 0.0 || min_angle_deg > 90.0)
        throw ConfigError("min_angle_deg must lie in [0, 90]");

    Rng rng(stream_seed(seed, 0x76696577));  // dedicated axis stream
    ViewSet set;
    set.seed = seed;
    set.axes.reserve(static_cast<std::size_t>(k));

    for (int i = 0; i < k; ++i) {
        bool accepted = false;
        for (int attempt = 0; attempt < kMaxAxisAttempts; ++attempt) {
            Vec3 g{rng.gaussian(), rng.gaussian(), rng.gaussian()};
            double len = norm(g);
            if (len < 1e-12) continue;
            Vec3 n = g * (1.0 / len);
            if (n.z < 0.0) n = -n;  // antipodal identification

            bool clear = true;
            for (const ViewAxis& existing : set.axes) {
                if (view_angle_deg(n, existing.normal) < min_angle_deg) {
                    clear = false;
                    break;
                }
            }
            if (clear) {
                set.axes.push_back(view_axis_from_normal(n));
                accepted = true;
                break;
            }
        }
        if (!accepted)
            throw GeometryError("cannot place view " + std::to_string(i + 1) + " of " +
                                std::to_string(k) + " with min angle " +
                                std::to_string(min_angle_deg) + " deg");
    }
    return set;
}

// ---------------------------------------------------------------------------
// SamplingParams -- the (q, m, r) triple
// ---------------------------------------------------------------------------

/// Isotropic plane-grid parameters: grid_size pixels per image side (q),
/// extent_mm of the image in real space (m), spacing_mm between consecutive
/// samples (r), with extent = (grid_size - 1) * spacing.
struct SamplingParams {
    int grid_size = 0;
    double extent_mm = 0.0;
    double spacing_mm = 0.0;

    static SamplingParams from_grid(int grid_size, double spacing_mm) {
        SamplingParams p{grid_size, (grid_size - 1) * spacing_mm, spacing_mm};
        p.validate();
        return p;
    }

    void validate() const {
        if (grid_size < 8) throw ConfigError("grid size q must be >= 8");
        if (!(spacing_mm > 0.0)) throw ConfigError("spacing r must be > 0");
        if (std::abs(extent_mm - (grid_size - 1) * spacing_mm) > 1e-9)
            throw ConfigError("extent m must equal (q - 1) * r");
    }
};

// ---------------------------------------------------------------------------
// fit_sampling_params -- the (q, m, r) fitting heuristic
// ---------------------------------------------------------------------------

/// Per-volume geometry summary consumed by the fitting heuristic.
struct VolumeGeometry {
    std::array<std::size_t, 3> dims{};
    Vec3 spacing_mm{1, 1, 1};
    std::size_t channels = 1;

    double diameter_mm() const noexcept {
        double ex = static_cast<double>(dims[0]) * spacing_mm.x;
        double ey = static_cast<double>(dims[1]) * spacing_mm.y;
        double ez = static_cast<double>(dims[2]) * spacing_mm.z;
        return std::sqrt(ex * ex + ey * ey + ez * ez);
    }
};

struct FitResult {
    SamplingParams params;
    bool resolution_violated = false;  // r above the finest native spacing
    bool coverage_violated = false;    // m below the maximal volume diameter
};

// Estimated training memory: batch * q^2 * C * 4 bytes, times a fixed
// activation multiplier standing in for the network's working set.
inline constexpr double kActivationMultiplier = 16.0;
inline constexpr int kMinGridSize = 8;

/// Picks (q, m, r) so that, in priority order, (1) a training batch of at
/// least batch_size_min q x q x C float images fits the memory budget,
/// (2) r matches the finest native voxel spacing across the dataset, and
/// (3) m spans the largest volume diameter. When the budget forces a
/// conflict, coverage (3) is sacrificed before resolution (2): q is capped
/// and m shrinks while r stays native.
inline FitResult fit_sampling_params(std::span<const VolumeGeometry> volumes,
                                     std::uint64_t memory_budget_bytes,
                                     int batch_size_min = 8, double r_min = 0.1) {
    if (volumes.empty()) throw ConfigError("fit_sampling_params needs at least one volume");
    if (batch_size_min < 1) throw ConfigError("batch size must be >= 1");

    std::size_t channels = 1;
    double finest = std::numeric_limits<double>::infinity();
    double diameter = 0.0;
    for (const VolumeGeometry& g : volumes) {
        channels = std::max(channels, g.channels);
        for (int a = 0; a < 3; ++a) {
            double s = g.spacing_mm[static_cast<std::size_t>(a)];
            if (!(s > 0.0)) throw ConfigError("volume spacing must be positive");
            finest = std::min(finest, s);
        }
        diameter = std::max(diameter, g.diameter_mm());
    }

    FitResult result;
    double r = std::max(finest, r_min);
    result.resolution_violated = r > finest + 1e-12;

    double per_pixel = static_cast<double>(batch_size_min) *
                       static_cast<double>(channels) * 4.0 * kActivationMultiplier;
    int q_budget = static_cast<int>(
        std::floor(std::sqrt(static_cast<double>(memory_budget_bytes) / per_pixel)));
    if (q_budget < kMinGridSize)
        throw ConfigError("memory budget too small for the minimum (" +
                          std::to_string(kMinGridSize) + "px) grid");

    int q_needed =
        std::max(kMinGridSize, static_cast<int>(std::ceil(diameter / r - 1e-9)) + 1);
    int q = q_needed;
    if (q > q_budget) {
        q = q_budget;  // coverage gives way; r stays at native resolution
    }
    result.params = SamplingParams::from_grid(q, r);
    result.coverage_violated = result.params.extent_mm < diameter - 1e-9;
    return result;
}

// ---------------------------------------------------------------------------
// Plane grids and offsets
// ---------------------------------------------------------------------------

/// Grid point (a, b) of the q x q plane at the given offset along the view
/// normal: center + (a - (q-1)/2) r u + (b - (q-1)/2) r v + offset * normal.
inline Vec3 plane_point(const ViewAxis& view, double offset_mm,
                        const SamplingParams& params, const Vec3& center_mm, int a,
                        int b) noexcept {
    double half = (params.grid_size - 1) / 2.0;
    return center_mm + (a - half) * params.spacing_mm * view.u +
           (b - half) * params.spacing_mm * view.v + offset_mm * view.normal;
}

/// Materializes the full q x q grid of mm points (row-major, a slowest).
/// Throws when |offset| exceeds the sampling sphere radius m/2.
inline std::vector<Vec3> plane_grid(const ViewAxis& view, double offset_mm,
                                    const SamplingParams& params,
                                    const Vec3& center_mm = {0, 0, 0}) {
    params.validate();
    if (std::abs(offset_mm) > params.extent_mm / 2.0 + 1e-9)
        throw GeometryError("slice offset " + std::to_string(offset_mm) +
                            " outside the sampling sphere of extent " +
                            std::to_string(params.extent_mm));
    std::vector<Vec3> grid;
    grid.reserve(static_cast<std::size_t>(params.grid_size) * params.grid_size);
    for (int a = 0; a < params.grid_size; ++a)
        for (int b = 0; b < params.grid_size; ++b)
            grid.push_back(plane_point(view, offset_mm, params, center_mm, a, b));
    return grid;
}

/// Slice offsets sweeping the sphere along the normal:
/// {-m/2 + t*r : t = 0..floor(m/r)}, spacing exactly r.
inline std::vector<double> slice_offsets(const SamplingParams& params) {
    params.validate();
    int count = static_cast<int>(std::floor(params.extent_mm / params.spacing_mm + 1e-9)) + 1;
    std::vector<double> offsets(static_cast<std::size_t>(count));
    for (int t = 0; t < count; ++t)
        offsets[static_cast<std::size_t>(t)] = -params.extent_mm / 2.0 + t * params.spacing_mm;
    return offsets;
}

}  // namespace mpseg
