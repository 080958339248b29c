#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>

#include "mpseg/phantom.hpp"

using namespace mpseg;

TEST_CASE("sphere voxel count matches the analytic volume within 2%") {
    PhantomSpec spec;
    spec.shape = {64, 64, 64};
    spec.spacing_mm = {1, 1, 1};
    spec.bodies = {{{0, 0, 0}, {10, 10, 10}, 1, 1.0}};
    Phantom phantom = make_phantom(spec);

    std::size_t count = 0;
    for (std::int32_t l : phantom.labels.labels)
        if (l == 1) ++count;
    double analytic = 4.0 / 3.0 * std::numbers::pi * 1000.0;
    CHECK(std::abs(static_cast<double>(count) - analytic) / analytic < 0.02);
}

TEST_CASE("noise-free intensities equal the class means exactly") {
    PhantomSpec spec;
    spec.shape = {32, 32, 32};
    spec.spacing_mm = {1, 1, 1};
    spec.bodies = {{{0, 0, 0}, {8, 8, 8}, 1, 2.5}};
    Phantom phantom = make_phantom(spec);
    for (std::size_t i = 0; i < phantom.labels.labels.size(); ++i) {
        double expected = phantom.labels.labels[i] == 1 ? 2.5 : 0.0;
        CHECK(phantom.volume.data[i] == expected);
    }
}

TEST_CASE("later bodies overwrite earlier ones where they overlap") {
    PhantomSpec spec;
    spec.shape = {32, 32, 32};
    spec.spacing_mm = {1, 1, 1};
    spec.bodies = {{{0, 0, 0}, {10, 10, 10}, 1, 1.0}, {{0, 0, 0}, {4, 4, 4}, 2, 2.0}};
    Phantom phantom = make_phantom(spec);
    // voxels near the center lie inside both bodies; the inner one wins
    CHECK(phantom.labels.at(15, 15, 15) == 2);
    CHECK(analytic_label_at(spec, {0, 0, 0}) == 2);
    CHECK(analytic_label_at(spec, {0, 0, 7.0}) == 1);
}

TEST_CASE("analytic membership agrees with the rasterized labels everywhere") {
    PhantomSpec spec;
    spec.shape = {24, 20, 28};
    spec.spacing_mm = {1.0, 1.5, 0.8};
    spec.bodies = {{{2, -3, 1}, {8, 6, 7}, 1, 1.0}, {{0, 0, 0}, {3, 4, 5}, 2, 2.0}};
    Phantom phantom = make_phantom(spec);
    for (std::size_t x = 0; x < 24; ++x)
        for (std::size_t y = 0; y < 20; ++y)
            for (std::size_t z = 0; z < 28; ++z) {
                Vec3 p = phantom.volume.affine.apply(
                    {static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)});
                CHECK(phantom.labels.at(x, y, z) == analytic_label_at(spec, p));
            }
}

TEST_CASE("boundary points count as inside, far points as outside") {
    PhantomSpec spec;
    spec.bodies = {{{0, 0, 0}, {5, 4, 3}, 2, 1.0}};
    CHECK(analytic_label_at(spec, {5.0, 0, 0}) == 2);   // equation exactly 1
    CHECK(analytic_label_at(spec, {5.001, 0, 0}) == 0);
    CHECK(analytic_label_at(spec, {0, 0, 0}) == 2);
    CHECK(analytic_label_at(spec, {100, 100, 100}) == 0);
}

TEST_CASE("bodies outside the volume produce a warning, not an error") {
    PhantomSpec spec;
    spec.shape = {16, 16, 16};
    spec.spacing_mm = {1, 1, 1};
    spec.bodies = {{{100, 100, 100}, {3, 3, 3}, 1, 1.0}};
    Phantom phantom = make_phantom(spec);
    CHECK(phantom.warnings.size() == 1);
    for (std::int32_t l : phantom.labels.labels) CHECK(l == 0);
}

TEST_CASE("the volume center sits at the scanner origin") {
    PhantomSpec spec;
    spec.shape = {32, 48, 20};
    spec.spacing_mm = {0.5, 1.0, 2.0};
    Vec3 center = spec.affine().apply({15.5, 23.5, 9.5});
    CHECK(center.x == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(center.y == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(center.z == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("phantoms are deterministic and thread-count independent") {
    PhantomSpec spec;
    spec.shape = {24, 24, 24};
    spec.spacing_mm = {1, 1, 1};
    spec.noise_sigma = 0.1;
    spec.seed = 4242;
    spec.bodies = {{{0, 0, 0}, {8, 7, 6}, 1, 1.0}};

    Phantom serial = make_phantom(spec, 1);
    Phantom again = make_phantom(spec, 1);
    Phantom threaded = make_phantom(spec, 4);
    CHECK(serial.volume.data == again.volume.data);
    CHECK(serial.volume.data == threaded.volume.data);
    CHECK(serial.labels.labels == threaded.labels.labels);
}

TEST_CASE("phantom spec JSON round trip") {
    PhantomSpec spec;
    spec.shape = {20, 22, 24};
    spec.spacing_mm = {1, 0.5, 2};
    spec.noise_sigma = 0.07;
    spec.seed = 9;
    spec.bodies = {{{1, 2, 3}, {4, 5, 6}, 1, 1.5}, {{0, 0, 0}, {2, 2, 2}, 2, 3.0}};

    PhantomSpec back = PhantomSpec::from_json(spec.to_json());
    CHECK(back.shape == spec.shape);
    CHECK(back.spacing_mm == spec.spacing_mm);
    CHECK(back.noise_sigma == spec.noise_sigma);
    CHECK(back.seed == spec.seed);
    REQUIRE(back.bodies.size() == 2);
    CHECK(back.bodies[1].label == 2);
    CHECK(back.bodies[0].intensity == 1.5);
}

TEST_CASE("invalid specs are rejected") {
    PhantomSpec spec;
    spec.bodies = {{{0, 0, 0}, {1, 1, 1}, 0, 1.0}};  // label 0 reserved
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = PhantomSpec{};
    spec.spacing_mm = {0, 1, 1};
    CHECK_THROWS_AS(spec.validate(), ConfigError);
}
