#pragma once
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "mpseg/errors.hpp"
#include "mpseg/geometry.hpp"
#include "mpseg/parallel.hpp"
#include "mpseg/rng.hpp"
#include "mpseg/stats.hpp"
#include "mpseg/volume.hpp"

namespace mpseg {

// ---------------------------------------------------------------------------
// PhantomSpec -- analytic ellipsoid phantoms
// ---------------------------------------------------------------------------

struct Ellipsoid {
    Vec3 center_mm{0, 0, 0};
    Vec3 semi_axes_mm{1, 1, 1};
    std::int32_t label = 1;
    double intensity = 1.0;

    /// Membership test; boundary points (equation == 1) count as inside.
    bool contains(const Vec3& p) const noexcept {
        double dx = (p.x - center_mm.x) / semi_axes_mm.x;
        double dy = (p.y - center_mm.y) / semi_axes_mm.y;
        double dz = (p.z - center_mm.z) / semi_axes_mm.z;
        return dx * dx + dy * dy + dz * dz <= 1.0;
    }
};

/// Synthetic volume description: bodies are ordered and later bodies
/// overwrite earlier ones on overlap (nesting convention). Labels must lie
/// in [1, L).
struct PhantomSpec {
    std::array<std::size_t, 3> shape{64, 64, 64};
    Vec3 spacing_mm{1, 1, 1};
    std::vector<Ellipsoid> bodies;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (shape[0] < 2 || shape[1] < 2 || shape[2] < 2)
            throw ConfigError("phantom shape must be >= 2 per axis");
        if (!(spacing_mm.x > 0 && spacing_mm.y > 0 && spacing_mm.z > 0))
            throw ConfigError("phantom spacing must be positive");
        if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
        for (const Ellipsoid& e : bodies) {
            if (e.label < 1) throw ConfigError("phantom body labels must be >= 1");
            if (!(e.semi_axes_mm.x > 0 && e.semi_axes_mm.y > 0 && e.semi_axes_mm.z > 0))
                throw ConfigError("phantom semi-axes must be positive");
        }
    }

    std::int32_t num_classes() const noexcept {
        std::int32_t max_label = 0;
        for (const Ellipsoid& e : bodies) max_label = std::max(max_label, e.label);
        return max_label + 1;
    }

    /// Voxel-grid affine: diag(spacing) shifted so the volume center sits at
    /// the scanner origin.
    Affine4 affine() const noexcept {
        Affine4 a = Affine4::diagonal(spacing_mm.x, spacing_mm.y, spacing_mm.z);
        a.set_translation({-spacing_mm.x * (static_cast<double>(shape[0]) - 1) / 2.0,
                           -spacing_mm.y * (static_cast<double>(shape[1]) - 1) / 2.0,
                           -spacing_mm.z * (static_cast<double>(shape[2]) - 1) / 2.0});
        return a;
    }

    nlohmann::json to_json() const {
        nlohmann::json bodies_json = nlohmann::json::array();
        for (const Ellipsoid& e : bodies)
            bodies_json.push_back(
                {{"center", {e.center_mm.x, e.center_mm.y, e.center_mm.z}},
                 {"semi_axes", {e.semi_axes_mm.x, e.semi_axes_mm.y, e.semi_axes_mm.z}},
                 {"label", e.label},
                 {"intensity", e.intensity}});
        return {{"shape", shape},
                {"spacing", {spacing_mm.x, spacing_mm.y, spacing_mm.z}},
                {"bodies", bodies_json},
                {"noise_sigma", noise_sigma},
                {"seed", seed}};
    }

    static PhantomSpec from_json(const nlohmann::json& j) {
        PhantomSpec spec;
        try {
            if (j.contains("shape"))
                for (std::size_t i = 0; i < 3; ++i) spec.shape[i] = j["shape"].at(i).get<std::size_t>();
            if (j.contains("spacing")) {
                spec.spacing_mm = {j["spacing"].at(0).get<double>(),
                                   j["spacing"].at(1).get<double>(),
                                   j["spacing"].at(2).get<double>()};
            }
            spec.noise_sigma = j.value("noise_sigma", 0.0);
            spec.seed = j.value("seed", std::uint64_t{0});
            for (const auto& b : j.value("bodies", nlohmann::json::array())) {
                Ellipsoid e;
                e.center_mm = {b.at("center").at(0).get<double>(),
                               b.at("center").at(1).get<double>(),
                               b.at("center").at(2).get<double>()};
                e.semi_axes_mm = {b.at("semi_axes").at(0).get<double>(),
                                  b.at("semi_axes").at(1).get<double>(),
                                  b.at("semi_axes").at(2).get<double>()};
                e.label = b.at("label").get<std::int32_t>();
                e.intensity = b.at("intensity").get<double>();
                spec.bodies.push_back(e);
            }
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("invalid phantom spec: " + std::string(e.what()));
        }
        spec.validate();
        return spec;
    }
};

/// Exact membership test at an arbitrary mm point: label of the last body
/// containing it, else 0. Continuous ground truth bypassing the voxel grid.
inline std::int32_t analytic_label_at(const PhantomSpec& spec, const Vec3& point_mm) noexcept {
    std::int32_t label = 0;
    for (const Ellipsoid& e : spec.bodies)
        if (e.contains(point_mm)) label = e.label;
    return label;
}

struct Phantom {
    Volume volume;
    LabelMap labels;
    std::vector<std::string> warnings;  // e.g. bodies outside the volume
};

/// Rasterizes the spec: voxel label from the analytic membership test at the
/// voxel center, intensity = containing body's mean (background 0) plus
/// seeded Gaussian noise. Noise is keyed per voxel, so parallel generation
/// is bit-identical to sequential.
inline Phantom make_phantom(const PhantomSpec& spec, unsigned threads = 1) {
    spec.validate();
    auto [X, Y, Z] = spec.shape;
    Affine4 affine = spec.affine();

    Phantom out{Volume(X, Y, Z, 1, affine), LabelMap(X, Y, Z, spec.num_classes(), affine), {}};

    // volume mm bounds (voxel centers)
    Vec3 lo = affine.apply({0, 0, 0});
    Vec3 hi = affine.apply({static_cast<double>(X - 1), static_cast<double>(Y - 1),
                            static_cast<double>(Z - 1)});
    for (std::size_t i = 0; i < spec.bodies.size(); ++i) {
        const Ellipsoid& e = spec.bodies[i];
        if (e.center_mm.x + e.semi_axes_mm.x < lo.x || e.center_mm.x - e.semi_axes_mm.x > hi.x ||
            e.center_mm.y + e.semi_axes_mm.y < lo.y || e.center_mm.y - e.semi_axes_mm.y > hi.y ||
            e.center_mm.z + e.semi_axes_mm.z < lo.z || e.center_mm.z - e.semi_axes_mm.z > hi.z)
            out.warnings.push_back("body " + std::to_string(i) + " lies outside the volume");
    }

    parallel_for(X, threads, [&](std::size_t x) {
        for (std::size_t y = 0; y < Y; ++y) {
            for (std::size_t z = 0; z < Z; ++z) {
                Vec3 p = affine.apply(
                    {static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)});
                std::int32_t label = 0;
                double intensity = 0.0;
                for (const Ellipsoid& e : spec.bodies) {
                    if (e.contains(p)) {
                        label = e.label;
                        intensity = e.intensity;
                    }
                }
                std::size_t voxel = out.labels.index(x, y, z);
                out.labels.labels[voxel] = label;
                if (spec.noise_sigma > 0.0) {
                    Rng noise(stream_seed(spec.seed, 0x7068616e, voxel));
                    intensity += spec.noise_sigma * noise.gaussian();
                }
                out.volume.data[voxel] = intensity;
            }
        }
    });

    std::vector<double> sorted = out.volume.data;
    std::sort(sorted.begin(), sorted.end());
    out.volume.background_fill = percentile_sorted(sorted, 1.0);
    return out;
}

}  // namespace mpseg
