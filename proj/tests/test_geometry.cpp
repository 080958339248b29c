#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mpseg/geometry.hpp"
#include "mpseg/rng.hpp"

using namespace mpseg;

TEST_CASE("identity affine maps indices to themselves") {
    Affine4 id = Affine4::identity();
    Vec3 p = voxel_to_scanner(id, {3, 4, 5});
    CHECK(p.x == doctest::Approx(3.0));
    CHECK(p.y == doctest::Approx(4.0));
    CHECK(p.z == doctest::Approx(5.0));

    Vec3 back = scanner_to_voxel(id, {3, 4, 5});
    CHECK(back.x == doctest::Approx(3.0));
    CHECK(back.y == doctest::Approx(4.0));
    CHECK(back.z == doctest::Approx(5.0));
}

TEST_CASE("scaled affine with translation") {
    Affine4 a = Affine4::diagonal(2, 2, 2);
    a.set_translation({-10, 0, 0});
    Vec3 p = voxel_to_scanner(a, {5, 0, 0});
    CHECK(p.x == doctest::Approx(0.0));
    CHECK(p.y == doctest::Approx(0.0));
    CHECK(p.z == doctest::Approx(0.0));
}

TEST_CASE("90 degree rotation about z") {
    // hand-built rotation matrix: x -> y, y -> -x
    Affine4 rot;
    rot.at(0, 0) = 0;
    rot.at(0, 1) = -1;
    rot.at(1, 0) = 1;
    rot.at(1, 1) = 0;
    Vec3 p = voxel_to_scanner(rot, {1, 0, 0});
    CHECK(p.x == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(p.y == doctest::Approx(1.0));
    CHECK(p.z == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("round trip over random invertible affines") {
    Rng rng(1234);
    int tested = 0;
    while (tested < 100) {
        Affine4 a;
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t c = 0; c < 4; ++c) a.at(r, c) = rng.uniform(-3.0, 3.0);
        if (std::abs(a.det3()) < 0.1) continue;  // keep the case well-conditioned
        ++tested;

        Vec3 p{rng.uniform(-100.0, 100.0), rng.uniform(-100.0, 100.0),
               rng.uniform(-100.0, 100.0)};
        Vec3 round = voxel_to_scanner(a, scanner_to_voxel(a, p));
        double scale = std::max(1.0, norm(p));
        CHECK(norm(round - p) / scale < 1e-9);
    }
}

TEST_CASE("singular affine raises a geometry error") {
    Affine4 a;
    a.at(2, 2) = 0.0;  // rank-deficient 3x3 block
    CHECK_THROWS_AS(scanner_to_voxel(a, {1, 2, 3}), GeometryError);
}

TEST_CASE("affine validity checks") {
    Affine4 a;
    CHECK(a.valid());
    a.m[15] = 2.0;  // bottom row corrupted
    CHECK_FALSE(a.valid());

    Affine4 b = Affine4::diagonal(1, 1, 0);
    CHECK_FALSE(b.valid());
}

TEST_CASE("vector helpers") {
    Vec3 x{1, 0, 0}, y{0, 1, 0};
    Vec3 z = cross(x, y);
    CHECK(z.z == doctest::Approx(1.0));
    CHECK(dot(x, y) == doctest::Approx(0.0));
    CHECK(norm(normalized({3, 4, 0})) == doctest::Approx(1.0));
    CHECK_THROWS_AS(normalized({0, 0, 0}), GeometryError);
}
