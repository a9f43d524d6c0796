#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fixtures.hpp"
#include "slicerecon/contour.hpp"
#include "slicerecon/mask_ops.hpp"
#include "slicerecon/metrics.hpp"
#include "slicerecon/phantom.hpp"

using namespace slicerecon;

namespace {

Contour circle(double cx, double cy, double r, int n) {
    Contour c;
    for (int i = 0; i < n; ++i) {
        const double a = 2 * std::numbers::pi * i / n;
        c.points.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
    }
    return c;
}

double cross(Point2 o, Point2 a, Point2 b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

// monotone chain hull, counter-clockwise in the math sense
std::vector<Point2> hull(std::vector<Point2> p) {
    std::sort(p.begin(), p.end(), [](Point2 a, Point2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
    std::vector<Point2> h(2 * p.size());
    std::size_t k = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        while (k >= 2 && cross(h[k - 2], h[k - 1], p[i]) <= 0) --k;
        h[k++] = p[i];
    }
    for (std::size_t i = p.size() - 1, t = k + 1; i-- > 0;) {
        while (k >= t && cross(h[k - 2], h[k - 1], p[i]) <= 0) --k;
        h[k++] = p[i];
    }
    h.resize(k > 1 ? k - 1 : k);
    return h;
}

bool inside_hull(const std::vector<Point2> &h, Point2 q, double tol) {
    if (h.size() < 3) {
        // degenerate hull: distance to the segment
        const Point2 a = h.front(), b = h.back();
        const double len2 = (b.x - a.x) * (b.x - a.x) + (b.y - a.y) * (b.y - a.y);
        double t = len2 > 0 ? ((q.x - a.x) * (b.x - a.x) + (q.y - a.y) * (b.y - a.y)) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        return std::hypot(q.x - a.x - t * (b.x - a.x), q.y - a.y - t * (b.y - a.y)) <= tol;
    }
    for (std::size_t i = 0; i < h.size(); ++i) {
        const Point2 a = h[i], b = h[(i + 1) % h.size()];
        const double len = std::hypot(b.x - a.x, b.y - a.y);
        if (cross(a, b, q) < -tol * len) return false;
    }
    return true;
}

} // namespace

TEST_CASE("contour extraction fixtures") {
    Mask2D one(5, 5);
    one(2, 2) = 1;
    auto e = extract_contour(one);
    CHECK(e.contour.points.size() == 1);
    CHECK(e.degenerate);

    e = extract_contour(fixtures::block(7, 7, 2, 2, 3, 3));
    CHECK(e.contour.points.size() == 8);
    CHECK_FALSE(e.degenerate);
    CHECK(e.contour.points.front() == Point2{2, 2});
    // clockwise on screen: the second point is to the right of the first
    CHECK(e.contour.points[1] == Point2{3, 2});

    Mask2D two = fixtures::block(20, 10, 1, 1, 5, 2);
    two(15, 5) = two(16, 5) = two(17, 5) = 1;
    e = extract_contour(two);
    CHECK(e.components == 2);
    CHECK(e.multiple_components);
    for (const auto &p : e.contour.points) CHECK(p.x < 10);

    CHECK_THROWS_AS(extract_contour(Mask2D(4, 4)), Error);
}

TEST_CASE("Bernstein basis") {
    CHECK(bernstein(0, 2, 0.5) == doctest::Approx(0.25));
    for (int n = 0; n <= 10; ++n) {
        for (int i = 0; i <= n; ++i) CHECK(bernstein(i, n, 0.0) == (i == 0 ? 1.0 : 0.0));
    }
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 1 + trial % 10;
        const double t = u(rng);
        double sum = 0.0;
        for (int i = 0; i <= n; ++i) sum += bernstein(i, n, t);
        REQUIRE(std::abs(sum - 1.0) <= 1e-12);
    }
    CHECK_THROWS_AS(bernstein(3, 2, 0.5), Error);
    CHECK_THROWS_AS(bernstein(-1, 2, 0.5), Error);
}

TEST_CASE("Bezier evaluation") {
    const BezierSegment q{{{0, 0}, {1, 2}, {2, 0}}};
    const Point2 mid = bezier_eval(q, 0.5);
    CHECK(mid.x == doctest::Approx(1.0));
    CHECK(mid.y == doctest::Approx(1.0));
    CHECK(bezier_eval(q, 0.0) == q.control.front());
    CHECK(bezier_eval(q, 1.0) == q.control.back());
    const BezierSegment lin{{{0, 0}, {4, 8}}};
    CHECK(bezier_eval(lin, 0.25).x == doctest::Approx(1.0));
    CHECK(bezier_eval(lin, 0.25).y == doctest::Approx(2.0));
    CHECK_THROWS_AS(bezier_eval(q, 1.5), Error);
    CHECK_THROWS_AS(bezier_eval(BezierSegment{{{0, 0}}}, 0.5), Error);
}

TEST_CASE("convex hull property on random segments") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-50.0, 50.0), t01(0.0, 1.0);
    for (int trial = 0; trial < 300; ++trial) {
        BezierSegment s;
        const int n = 2 + trial % 5;
        for (int i = 0; i < n; ++i) s.control.push_back({u(rng), u(rng)});
        const auto h = hull(s.control);
        for (int k = 0; k < 10; ++k) REQUIRE(inside_hull(h, bezier_eval(s, t01(rng)), 1e-9));
    }
}

TEST_CASE("smoothing fixtures") {
    Contour line;
    for (int i = 0; i < 20; ++i) line.points.push_back({2.0 + i, 3.0 + 0.5 * i});
    line.closed = false;
    const auto sl = smooth_contour(line, 8, 16);
    for (const auto &p : sl.contour.points) CHECK(std::abs(p.y - (3.0 + 0.5 * (p.x - 2.0))) <= 1e-6);

    const auto sc = smooth_contour(circle(40, 40, 20, 64), 8, 16);
    double worst = 0.0;
    for (const auto &p : sc.contour.points) worst = std::max(worst, std::abs(std::hypot(p.x - 40, p.y - 40) - 20));
    CHECK(worst <= 0.5);

    const auto one = smooth_contour(circle(10, 10, 5, 12), 40, 16);
    CHECK(one.segments.size() == 1);

    Contour tiny;
    tiny.points = {{0, 0}, {1, 0}, {1, 1}};
    CHECK(smooth_contour(tiny).unchanged);
}

TEST_CASE("rasterization fixtures") {
    Contour tri;
    tri.points = {{0, 0}, {10, 0}, {0, 10}};
    const auto r = rasterize_contour(tri, 16, 16);
    CHECK(polygon_area(tri) == doctest::Approx(50.0));
    CHECK_FALSE(r.self_intersecting);
    CHECK(mask_area(r.mask) > 0);

    Contour seg;
    seg.points = {{0, 0}, {5, 5}};
    const auto d = rasterize_contour(seg, 8, 8);
    CHECK(d.degenerate);
    CHECK(mask_area(d.mask) == 0);

    Contour bow;
    bow.points = {{0, 0}, {6, 6}, {6, 0}, {0, 6}};
    CHECK(rasterize_contour(bow, 8, 8).self_intersecting);
}

TEST_CASE("extract then rasterize recovers convex masks") {
    for (double r : {6.0, 9.5, 15.0}) {
        const Mask2D m = fixtures::disk(48, 48, 23.3, 24.1, r);
        const auto back = rasterize_contour(extract_contour(m).contour, 48, 48);
        CHECK(dice(back.mask, m) >= 0.98);
    }
    const Mask2D b = fixtures::block(40, 40, 5, 8, 20, 12);
    CHECK(dice(rasterize_contour(extract_contour(b).contour, 40, 40).mask, b) >= 0.98);
}

TEST_CASE("smoothing is area-stable on phantom slices") {
    PhantomConfig pc;
    pc.slices = 3;
    const Phantom ph = generate_phantom(pc);
    for (const auto &slice : ph.truth.slices) {
        const auto once = smooth_contour(extract_contour(slice).contour);
        const auto twice = smooth_contour(once.contour);
        const double a1 = polygon_area(once.contour), a2 = polygon_area(twice.contour);
        CHECK(std::abs(a1 - a2) / a1 <= 0.02);
    }
}

TEST_CASE("smooth_stack keeps empty slices") {
    MaskStack s;
    s.slices = {fixtures::disk(32, 32, 15, 15, 8), Mask2D(32, 32)};
    std::vector<std::string> warnings;
    const auto out = smooth_stack(s, 8, 16, &warnings);
    CHECK(mask_area(out[1]) == 0);
    CHECK(dice(out[0], s[0]) > 0.95);
}
