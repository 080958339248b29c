#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>
#include <vector>

#include "mpseg/rng.hpp"
#include "mpseg/views.hpp"

using namespace mpseg;

namespace {

// independent pairwise-angle oracle
double oracle_angle_deg(const Vec3& a, const Vec3& b) {
    double d = std::abs(a.x * b.x + a.y * b.y + a.z * b.z);
    return std::acos(std::min(1.0, d)) * 180.0 / std::numbers::pi;
}

}  // namespace

TEST_CASE("single view is orthonormal and reproducible") {
    ViewSet first = sample_view_axes(1, 42);
    ViewSet second = sample_view_axes(1, 42);
    REQUIRE(first.size() == 1);
    CHECK(first.axes[0].normal == second.axes[0].normal);
    CHECK(first.axes[0].u == second.axes[0].u);
    CHECK(first.axes[0].v == second.axes[0].v);
    CHECK(first.axes[0].orthonormal());
    CHECK(first.axes[0].normal.z >= 0.0);
}

TEST_CASE("six views keep all fifteen pairwise angles above the minimum") {
    ViewSet set = sample_view_axes(6, 7, 30.0);
    REQUIRE(set.size() == 6);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = i + 1; j < 6; ++j)
            CHECK(oracle_angle_deg(set.axes[i].normal, set.axes[j].normal) >= 30.0);
}

TEST_CASE("infeasible packing raises a geometry error") {
    CHECK_THROWS_AS(sample_view_axes(100, 3, 60.0), GeometryError);
}

TEST_CASE("orthonormality holds to 1e-9 across many seeds") {
    for (std::uint64_t seed = 0; seed < 16; ++seed) {
        ViewSet set = sample_view_axes(5, seed);
        for (const ViewAxis& axis : set.axes) {
            CHECK(axis.orthonormal(1e-9));
            CHECK(norm(cross(axis.u, axis.v) - axis.normal) <= 1e-9);
        }
    }
}

TEST_CASE("smaller view sets are prefixes of larger ones for the same seed") {
    ViewSet small = sample_view_axes(2, 11);
    ViewSet large = sample_view_axes(6, 11);
    for (std::size_t i = 0; i < 2; ++i)
        CHECK(small.axes[i].normal == large.axes[i].normal);
}

TEST_CASE("invalid view parameters raise config errors") {
    CHECK_THROWS_AS(sample_view_axes(0, 1), ConfigError);
    CHECK_THROWS_AS(sample_view_axes(2, 1, -5.0), ConfigError);
    CHECK_THROWS_AS(sample_view_axes(2, 1, 95.0), ConfigError);
}

TEST_CASE("sampling params validate the (q, m, r) coupling") {
    SamplingParams p = SamplingParams::from_grid(9, 0.5);
    CHECK(p.extent_mm == doctest::Approx(4.0));
    CHECK_THROWS_AS(SamplingParams::from_grid(4, 1.0), ConfigError);
    CHECK_THROWS_AS(SamplingParams::from_grid(9, -1.0), ConfigError);
    SamplingParams bad{9, 5.0, 0.5};  // m != (q-1)*r
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("heuristic on a 64-cube at 1 mm with a generous budget") {
    VolumeGeometry g{{64, 64, 64}, {1, 1, 1}, 1};
    FitResult fit = fit_sampling_params(std::span{&g, 1}, 1ull << 40);
    // hand-derived: diagonal 64*sqrt(3) = 110.851..., q = ceil(m/r) + 1 = 112
    CHECK(fit.params.spacing_mm == doctest::Approx(1.0));
    CHECK(fit.params.grid_size == 112);
    CHECK(fit.params.extent_mm == doctest::Approx(111.0));
    CHECK(fit.params.extent_mm >= 64.0 * std::sqrt(3.0));
    CHECK_FALSE(fit.resolution_violated);
    CHECK_FALSE(fit.coverage_violated);
}

TEST_CASE("heuristic picks the finest spacing across volumes") {
    std::vector<VolumeGeometry> gs = {{{32, 32, 16}, {1, 1, 3}, 1},
                                      {{48, 48, 48}, {0.5, 0.5, 0.5}, 1}};
    FitResult fit = fit_sampling_params(gs, 1ull << 40);
    CHECK(fit.params.spacing_mm == doctest::Approx(0.5));
}

TEST_CASE("tight budget sacrifices coverage before resolution") {
    VolumeGeometry g{{64, 64, 64}, {1, 1, 1}, 1};
    // hand-derived: bytes = 8 * q^2 * 1 * 4 * 16 = 512 q^2; budget for q = 96
    std::uint64_t budget = 512ull * 96 * 96;
    FitResult fit = fit_sampling_params(std::span{&g, 1}, budget);
    CHECK(fit.params.grid_size == 96);
    CHECK(fit.params.spacing_mm == doctest::Approx(1.0));  // resolution kept
    CHECK(fit.params.extent_mm == doctest::Approx(95.0));
    CHECK(fit.coverage_violated);
    CHECK_FALSE(fit.resolution_violated);
    // memory constraint never violated
    CHECK(512.0 * fit.params.grid_size * fit.params.grid_size <=
          static_cast<double>(budget));
}

TEST_CASE("budget below the minimum grid raises a config error") {
    VolumeGeometry g{{64, 64, 64}, {1, 1, 1}, 1};
    CHECK_THROWS_AS(fit_sampling_params(std::span{&g, 1}, 512ull * 7 * 7), ConfigError);
}

TEST_CASE("r_min clamp flags a resolution violation") {
    VolumeGeometry g{{32, 32, 32}, {0.05, 0.05, 0.05}, 1};
    FitResult fit = fit_sampling_params(std::span{&g, 1}, 1ull << 40, 8, 0.1);
    CHECK(fit.params.spacing_mm == doctest::Approx(0.1));
    CHECK(fit.resolution_violated);
}

TEST_CASE("plane grid matches the closed form") {
    SamplingParams p = SamplingParams::from_grid(9, 1.0);
    ViewAxis axial;  // normal z, u = x, v = y
    std::vector<Vec3> grid = plane_grid(axial, 0.0, p);
    REQUIRE(grid.size() == 81);
    // point(a, b) = ((a - 4), (b - 4), 0)
    CHECK(grid[0].x == doctest::Approx(-4.0));
    CHECK(grid[0].y == doctest::Approx(-4.0));
    CHECK(grid[0].z == doctest::Approx(0.0));
    CHECK(grid[4 * 9 + 4].x == doctest::Approx(0.0));
    CHECK(grid[8 * 9 + 8].x == doctest::Approx(4.0));

    // translation along the normal
    std::vector<Vec3> shifted = plane_grid(axial, 2.0, p);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        CHECK(shifted[i].x == doctest::Approx(grid[i].x));
        CHECK(shifted[i].y == doctest::Approx(grid[i].y));
        CHECK(shifted[i].z == doctest::Approx(grid[i].z + 2.0));
    }

    CHECK_THROWS_AS(plane_grid(axial, p.extent_mm / 2.0 + 1.0, p), GeometryError);
}

TEST_CASE("grid points stay within the analytic corner bound") {
    SamplingParams p = SamplingParams::from_grid(11, 1.0);
    ViewSet set = sample_view_axes(3, 5);
    double offset = 3.0;
    double half = p.extent_mm / 2.0;
    double bound = std::sqrt(2.0 * half * half + offset * offset) + 1e-9;
    for (const ViewAxis& axis : set.axes)
        for (const Vec3& point : plane_grid(axis, offset, p)) CHECK(norm(point) <= bound);
}

TEST_CASE("grid spacing is exactly r between all adjacent points") {
    SamplingParams p = SamplingParams::from_grid(9, 0.7);
    ViewSet set = sample_view_axes(4, 13);
    for (const ViewAxis& axis : set.axes) {
        std::vector<Vec3> grid = plane_grid(axis, 1.3, p);
        int q = p.grid_size;
        for (int a = 0; a < q; ++a)
            for (int b = 0; b + 1 < q; ++b) {
                CHECK(norm(grid[a * q + b + 1] - grid[a * q + b]) ==
                      doctest::Approx(p.spacing_mm).epsilon(1e-9));
                CHECK(norm(grid[(b + 1) * q + a] - grid[b * q + a]) ==
                      doctest::Approx(p.spacing_mm).epsilon(1e-9));
            }
    }
}

TEST_CASE("slice offsets sweep the sphere symmetrically with spacing r") {
    SamplingParams p = SamplingParams::from_grid(9, 1.0);  // m = 8
    std::vector<double> offsets = slice_offsets(p);
    REQUIRE(offsets.size() == 9);
    for (int t = 0; t < 9; ++t) CHECK(offsets[t] == doctest::Approx(-4.0 + t));
    CHECK(offsets.front() == doctest::Approx(-p.extent_mm / 2.0));
    CHECK(offsets.back() == doctest::Approx(p.extent_mm / 2.0));
}

TEST_CASE("offset count follows floor(m/r) + 1 over random parameters") {
    Rng rng(31);
    for (int i = 0; i < 50; ++i) {
        int q = 8 + static_cast<int>(rng.uniform_int(120));
        double r = rng.uniform(0.1, 3.0);
        SamplingParams p = SamplingParams::from_grid(q, r);
        std::vector<double> offsets = slice_offsets(p);
        CHECK(offsets.size() ==
              static_cast<std::size_t>(std::floor(p.extent_mm / p.spacing_mm + 1e-9)) + 1);
        for (std::size_t t = 0; t + 1 < offsets.size(); ++t)
            CHECK(offsets[t + 1] - offsets[t] == doctest::Approx(r).epsilon(1e-9));
    }
}
