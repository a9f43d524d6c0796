#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "slicerecon/calibrate.hpp"
#include "slicerecon/phantom.hpp"

using namespace slicerecon;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDegree = kPi / 180.0;

struct Cell {
    int rho_bin, theta_bin;
    std::uint32_t count;
};

Cell argmax(const HoughAccumulator &H) {
    Cell best{0, 0, 0};
    for (int r = 0; r < H.rho_bins; ++r)
        for (int t = 0; t < H.theta_bins; ++t)
            if (H.at(r, t) > best.count) best = {r, t, H.at(r, t)};
    return best;
}

// votes for (rho, theta) recomputed point by point
std::uint32_t brute_votes(const Mask2D &edges, double rho, double theta, double rho_res) {
    std::uint32_t n = 0;
    for (int y = 0; y < edges.height(); ++y)
        for (int x = 0; x < edges.width(); ++x)
            if (edges(x, y) && std::lround((x * std::cos(theta) + y * std::sin(theta)) / rho_res) ==
                                   std::lround(rho / rho_res))
                ++n;
    return n;
}

DetectedLine vline(double rho) { return {rho, 0.0, {rho, 0}, {rho, 10}}; }

} // namespace

TEST_CASE("Hough accumulator on axis-aligned and diagonal lines") {
    Mask2D v(16, 16);
    for (int y = 0; y < 10; ++y) v(5, y) = 1;
    auto H = hough_accumulate(v, 1.0, kDegree);
    CHECK(H.theta_bins == 180);
    auto c = argmax(H);
    CHECK(c.count == 10);
    auto peak = hough_argmax(H);
    CHECK(peak.rho == 5.0);
    CHECK(peak.theta_bin == 0);
    CHECK(peak.votes == 10);

    Mask2D h(16, 16);
    for (int x = 0; x < 16; ++x) h(x, 7) = 1;
    H = hough_accumulate(h, 1.0, kDegree);
    peak = hough_argmax(H);
    CHECK(peak.rho == 7.0);
    CHECK(peak.theta == doctest::Approx(kPi / 2));
    CHECK(peak.votes == 16);

    Mask2D d(16, 16);
    for (int i = 0; i < 16; ++i) d(i, i) = 1;
    H = hough_accumulate(d, 1.0, kDegree);
    peak = hough_argmax(H);
    CHECK(peak.rho == 0.0);
    CHECK(peak.theta == doctest::Approx(3 * kPi / 4));
    CHECK(argmax(H).count == peak.votes);
    // every cell agrees with direct accumulation
    for (int t = 0; t < H.theta_bins; t += 17)
        for (int r = 0; r < H.rho_bins; r += 3)
            REQUIRE(H.at(r, t) == brute_votes(d, H.rho_of(r), H.theta_of(t), 1.0));
}

TEST_CASE("Hough argmax tracks a noisy line") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int tried = 0;
    for (int trial = 0; trial < 60; ++trial) {
        // pixels within half a pixel of a line through bin centres
        const double theta = std::floor(u(rng) * 180.0) * kDegree;
        const double rho = std::round(15.0 + 25.0 * u(rng));
        Mask2D m(96, 96);
        int on = 0;
        for (int y = 0; y < 96; ++y)
            for (int x = 0; x < 96; ++x)
                if (std::abs(x * std::cos(theta) + y * std::sin(theta) - rho) <= 0.5) {
                    m(x, y) = 1;
                    ++on;
                }
        if (on < 30) continue;
        ++tried;
        for (int k = 0; k < on / 20; ++k) m(int(u(rng) * 96), int(u(rng) * 96)) = 1;
        const auto c = hough_argmax(hough_accumulate(m, 1.0, kDegree));
        double dt = std::abs(c.theta - theta), dr = std::abs(c.rho - rho);
        if (dt > kPi / 2) {
            dt = kPi - dt;
            dr = std::abs(c.rho + rho);
        }
        CHECK(dt <= kDegree + 1e-9);
        CHECK(dr <= 1.0 + 1e-9);
    }
    CHECK(tried >= 30);
}

TEST_CASE("Hough peaks") {
    Mask2D one(32, 32);
    for (int y = 2; y < 30; ++y) one(9, y) = 1;
    auto H = hough_accumulate(one, 1.0, kDegree);
    auto peaks = hough_peaks(H, 5, 0.3);
    CHECK(peaks.size() == 1);
    CHECK(peaks[0].rho == doctest::Approx(9.0));

    Mask2D two(32, 32);
    for (int y = 0; y < 32; ++y) two(6, y) = two(20, y) = 1;
    H = hough_accumulate(two, 1.0, kDegree);
    peaks = hough_peaks(H, 5, 0.3);
    REQUIRE(peaks.size() == 2);
    CHECK(peaks[0].theta_bin == peaks[1].theta_bin);

    Mask2D unequal(32, 32);
    for (int y = 0; y < 32; ++y) unequal(6, y) = 1;
    for (int y = 0; y < 16; ++y) unequal(20, y) = 1;
    H = hough_accumulate(unequal, 1.0, kDegree);
    peaks = hough_peaks(H, 5, 1.0);
    REQUIRE(peaks.size() == 1);
    CHECK(peaks[0].rho == doctest::Approx(6.0));

    HoughAccumulator empty = H;
    std::fill(empty.counts.begin(), empty.counts.end(), 0u);
    CHECK_THROWS_AS(hough_peaks(empty, 5, 0.3), Error);
    CHECK_THROWS_AS(hough_argmax(empty), Error);
}

TEST_CASE("line extraction endpoints") {
    Mask2D m(16, 16);
    for (int y = 2; y <= 9; ++y) m(5, y) = 1;
    HoughPeak p;
    p.rho = 5.0;
    p.theta = 0.0;
    auto lines = extract_lines(m, {p});
    REQUIRE(lines.lines.size() == 1);
    CHECK(lines.lines[0].p0 == Point2{5, 2});
    CHECK(lines.lines[0].p1 == Point2{5, 9});

    m(12, 14) = 1;
    lines = extract_lines(m, {p});
    CHECK(lines.lines[0].p0 == Point2{5, 2});
    CHECK(lines.lines[0].p1 == Point2{5, 9});

    HoughPeak far;
    far.rho = 14.5;
    far.theta = 0.0;
    lines = extract_lines(m, {p, far});
    CHECK(lines.lines.size() == 1);
    CHECK(lines.diagnostics.size() == 1);
}

TEST_CASE("grid scale from line spacing") {
    CHECK(grid_scale({vline(10), vline(60), vline(110)}, 10.0).S == doctest::Approx(0.2));
    // median of {49, 51} is 50
    CHECK(grid_scale({vline(10), vline(59), vline(110)}, 10.0).S == doctest::Approx(0.2));
    // a missed line doubles one spacing without moving the median
    CHECK(grid_scale({vline(0), vline(50), vline(150), vline(200)}, 10.0).S == doctest::Approx(0.2));
    CHECK_THROWS_AS(grid_scale({vline(10)}, 10.0), Error);
    CHECK_THROWS_AS(grid_scale({vline(10), vline(60)}, 0.0), Error);
    // near-duplicates of a stronger line do not count as grid lines
    CHECK(grid_scale({vline(10), vline(60), vline(110), vline(61.5)}, 10.0).S == doctest::Approx(0.2));
}

TEST_CASE("grid scale ignores translation of the grid") {
    std::vector<DetectedLine> base{vline(10), vline(57), vline(110), vline(163)};
    const double s0 = grid_scale(base, 10.0).S;
    for (double shift : {-7.0, 3.25, 40.0}) {
        auto moved = base;
        for (auto &l : moved) l.rho += shift;
        CHECK(grid_scale(moved, 10.0).S == doctest::Approx(s0).epsilon(1e-12));
    }
}

TEST_CASE("synthetic grid calibration") {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        GridImageConfig g;
        g.seed = seed;
        const auto r = calibrate_image(calibration_grid(g), 10.0);
        CHECK(std::abs(r.scale.S / 0.2 - 1.0) < 0.01);
        CHECK(r.grid.family_size >= 4);
    }
}

TEST_CASE("stack scale is the median of per-image factors") {
    const auto s = combine_scales({0.21, 0.19, 0.2});
    CHECK(s.S == 0.2);
    CHECK(s.relative_deviation[0] == doctest::Approx(0.05));
    CHECK_THROWS_AS(combine_scales({}), Error);
}

TEST_CASE("Otsu separates two clusters") {
    std::vector<double> v;
    for (int i = 0; i < 50; ++i) v.push_back(0.1 + 0.001 * i);
    for (int i = 0; i < 50; ++i) v.push_back(0.9 - 0.001 * i);
    const double t = otsu_threshold(v);
    CHECK(t > 0.15);
    CHECK(t < 0.85);
}
