#include <doctest.h>

#include <cmath>
#include <numbers>

#include "fixtures.hpp"
#include "slicerecon/volume.hpp"

using namespace slicerecon;

namespace {

// box of lx x ly x lz mm centred in the canvas, rotated by `deg` about z
Volume3D box(double lx, double ly, double lz, double deg, int n = 64) {
    Volume3D v(n, n, n, {1.0, 1.0, 1.0});
    const double c = (n - 1) / 2.0, a = deg * std::numbers::pi / 180.0;
    for (int z = 0; z < n; ++z)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const double dx = x - c, dy = y - c, dz = z - c;
                const double u = std::cos(a) * dx + std::sin(a) * dy;
                const double w = -std::sin(a) * dx + std::cos(a) * dy;
                if (std::abs(u) < lx / 2 && std::abs(w) < ly / 2 && std::abs(dz) < lz / 2) v(x, y, z) = 1;
            }
    return v;
}

double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

} // namespace

TEST_CASE("stack_to_volume") {
    MaskStack s;
    s.slices.assign(5, fixtures::block(10, 10, 2, 2, 4, 4));
    s.slice_thickness = 10.0;
    auto v = stack_to_volume(s, 1.0);
    CHECK(v.dims == std::array<int, 3>{10, 10, 5});
    CHECK(v.spacing.x == 1.0);
    CHECK(v.spacing.y == 1.0);
    CHECK(v.spacing.z == 10.0);
    CHECK(v(3, 3, 4) == 1);

    v = stack_to_volume(s, 0.2);
    CHECK(v.dims[0] * v.spacing.x == doctest::Approx(2.0));

    CHECK_THROWS_AS(stack_to_volume(s), Error);
    s.scale = 0.5;
    CHECK(stack_to_volume(s).spacing.x == 0.5);
    CHECK_THROWS_AS(stack_to_volume(MaskStack{}, 1.0), Error);
}

TEST_CASE("axis-aligned box") {
    const Volume3D v = box(40, 20, 10, 0.0);
    const auto ax = pca_axes(v);
    CHECK_FALSE(ax.degenerate);
    CHECK(ax.axes[0].x == doctest::Approx(1.0));
    CHECK(ax.axes[1].y == doctest::Approx(1.0));
    CHECK(ax.axes[2].z == doctest::Approx(1.0));
    const auto e = extents(v, ax);
    CHECK(std::abs(e.L - 40) <= 1.0);
    CHECK(std::abs(e.W - 20) <= 1.0);
    CHECK(std::abs(e.T - 10) <= 1.0);
}

TEST_CASE("rotated box") {
    const Volume3D v = box(40, 20, 10, 30.0);
    const auto ax = pca_axes(v);
    const Vec3 expect{std::cos(std::numbers::pi / 6), std::sin(std::numbers::pi / 6), 0.0};
    const double angle = std::acos(std::min(1.0, std::abs(dot(ax.axes[0], expect)))) * 180.0 / std::numbers::pi;
    CHECK(angle <= 1.0);
    const auto e = extents(v, ax);
    const auto e0 = extents(box(40, 20, 10, 0.0), pca_axes(box(40, 20, 10, 0.0)));
    CHECK(std::abs(e.L - e0.L) <= 1.0);
    CHECK(std::abs(e.W - e0.W) <= 1.0);
    CHECK(std::abs(e.T - e0.T) <= 1.0);
}

TEST_CASE("axes are orthonormal and right-handed") {
    for (double deg : {0.0, 17.0, 45.0, 71.0}) {
        const auto ax = pca_axes(box(36, 22, 12, deg, 48));
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) CHECK(dot(ax.axes[i], ax.axes[j]) == doctest::Approx(i == j ? 1.0 : 0.0));
        const Vec3 a = ax.axes[0], b = ax.axes[1];
        const Vec3 c{a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
        CHECK(dot(c, ax.axes[2]) == doctest::Approx(1.0));
        CHECK(ax.variances[0] >= ax.variances[1]);
        CHECK(ax.variances[1] >= ax.variances[2]);
    }
}

TEST_CASE("degenerate volumes") {
    Volume3D v(5, 5, 5, {1, 1, 1});
    CHECK_THROWS_AS(extents(v, PrincipalAxes{}), Error);
    CHECK(volume_cm3(v) == 0.0);
    v(2, 2, 2) = 1;
    const auto ax = pca_axes(v);
    CHECK(ax.degenerate);
    CHECK(ax.axes[0].x == 1.0);
    const auto e = extents(v, ax);
    CHECK(e.L == 0.0);
    CHECK(e.T == 0.0);
}

TEST_CASE("voxel volume") {
    Volume3D v(10, 10, 10, {1, 1, 1});
    std::fill(v.data.begin(), v.data.end(), 1);
    CHECK(volume_cm3(v) == doctest::Approx(1.0));
    CHECK(voxel_count(v) == 1000);
    v.spacing = {2.0, 1.0, 1.0};
    CHECK(volume_cm3(v) == doctest::Approx(2.0));
    v.spacing = {2.0, 3.0, 0.5};
    CHECK(volume_cm3(v) == doctest::Approx(3.0));
}

TEST_CASE("jacobi on a diagonal matrix") {
    std::array<double, 3> vals{};
    std::array<std::array<double, 3>, 3> vecs{};
    jacobi_eigen({{{1, 0, 0}, {0, 5, 0}, {0, 0, 3}}}, vals, vecs);
    CHECK(vals[0] == doctest::Approx(5));
    CHECK(vals[1] == doctest::Approx(3));
    CHECK(vals[2] == doctest::Approx(1));
    CHECK(std::abs(vecs[1][0]) == doctest::Approx(1));
}
