#include <doctest.h>

#include <cmath>
#include <numbers>

#include "slicerecon/metrics.hpp"
#include "slicerecon/phantom.hpp"
#include "slicerecon/volume.hpp"

using namespace slicerecon;

namespace {

PhantomConfig small_config() {
    PhantomConfig c;
    c.width = c.height = 64;
    c.slices = 4;
    c.spacing = {1.0, 1.0};
    c.perturbation = PhantomConfig::default_perturbation(64, 64);
    return c;
}

} // namespace

TEST_CASE("identity perturbation leaves the stack untouched") {
    PhantomConfig c = small_config();
    c.perturbation = ParameterBounds::identity();
    c.nonrigid_amplitude = 0.0;
    const Phantom ph = generate_phantom(c);
    REQUIRE(ph.truth.size() == 4);
    for (std::size_t i = 0; i < ph.truth.size(); ++i) {
        CHECK(ph.perturbed[i] == ph.truth[i]);
        CHECK(dice(ph.perturbed[i], ph.truth[i]) == 1.0);
    }
}

TEST_CASE("phantom generation is deterministic per seed") {
    PhantomConfig c = small_config();
    c.nonrigid_amplitude = 2.0;
    c.field_control_spacing = 16;
    const Phantom a = generate_phantom(c), b = generate_phantom(c);
    for (std::size_t i = 0; i < a.truth.size(); ++i) {
        CHECK(a.perturbed[i] == b.perturbed[i]);
        CHECK(a.perturbed_intensity[i] == b.perturbed_intensity[i]);
        CHECK(a.gt_fields[i] == b.gt_fields[i]);
        CHECK(a.gt_transforms[i] == b.gt_transforms[i]);
    }
    c.seed = 2;
    const Phantom d = generate_phantom(c);
    CHECK_FALSE(d.gt_transforms[1] == a.gt_transforms[1]);
}

TEST_CASE("sampled transforms stay inside the perturbation bounds") {
    const auto bounds = PhantomConfig::default_perturbation(128, 128);
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        const auto t = sample_transform(bounds, seed);
        REQUIRE(bounds.contains(t));
        CHECK(t.s >= 0.8);
        CHECK(t.s <= 1.2);
        CHECK(std::abs(t.theta) <= std::numbers::pi / 4);
    }
    PhantomConfig c = small_config();
    c.slices = 6;
    const Phantom ph = generate_phantom(c);
    CHECK(ph.gt_transforms[0].is_identity());
    for (const auto &t : ph.gt_transforms) CHECK(c.perturbation.contains(t));
}

TEST_CASE("smooth field amplitude") {
    const auto zero = sample_smooth_field(32, 32, 0.0, 4);
    CHECK(zero.max_magnitude() == 0.0);
    const auto f = sample_smooth_field(48, 40, 3.0, 4, 16);
    CHECK(f.max_magnitude() <= 3.0 + 1e-5);
    CHECK(f.max_magnitude() >= 3.0 - 1e-3);
    CHECK(sample_smooth_field(48, 40, 3.0, 4, 16) == f);
    CHECK_FALSE(sample_smooth_field(48, 40, 3.0, 5, 16) == f);
}

TEST_CASE("invalid phantom configs are rejected") {
    PhantomConfig c = small_config();
    c.semi_a = 0.0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = small_config();
    c.perturbation.s = {0.5, 1.5};
    CHECK_THROWS_AS(c.validate(), Error);
    c = small_config();
    c.perturbation.tx = Bound{std::nullopt, 3.0};
    CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("phantom pairs share geometry up to a smooth field") {
    PhantomConfig c = small_config();
    c.nonrigid_amplitude = 3.0;
    c.field_control_spacing = 16;
    const auto pairs = phantom_pairs(c, 3);
    REQUIRE(pairs.size() == 3);
    for (const auto &p : pairs) {
        CHECK(p.fixed.width() == 64);
        CHECK(p.field.max_magnitude() <= 3.0 + 1e-5);
        CHECK(dice(p.fixed_mask, p.moving_mask) > 0.7);
        CHECK(dice(p.fixed_mask, p.moving_mask) < 1.0);
    }
    CHECK_FALSE(pairs[0].fixed == pairs[1].fixed);
}

TEST_CASE("superellipsoid voxelisation matches the closed form") {
    const Vec3 semi{30.0, 20.0, 25.0};
    const Volume3D v = superellipsoid_volume({64, 64, 64}, {1.0, 1.0, 1.0}, semi, 2.0);
    const double analytic = superellipsoid_volume_mm3(semi, 2.0);
    CHECK(analytic == doctest::Approx(4.0 / 3.0 * std::numbers::pi * 30 * 20 * 25).epsilon(1e-12));
    CHECK(std::abs(volume_cm3(v) * 1000.0 / analytic - 1.0) < 0.03);
}

TEST_CASE("calibration sheet has dark one-pixel lines") {
    GridImageConfig g;
    g.width = g.height = 64;
    g.line_spacing = 20.0;
    g.offset_x = 3.0;
    g.offset_y = 5.0;
    g.noise_fraction = 0.0;
    const Image2D img = calibration_grid(g);
    CHECK(img(3, 0) == doctest::Approx(g.line));
    CHECK(img(23, 1) == doctest::Approx(g.line));
    CHECK(img(10, 5) == doctest::Approx(g.line));
    CHECK(img(10, 10) == doctest::Approx(g.background));
}
