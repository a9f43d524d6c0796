#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "fixtures.hpp"
#include "slicerecon/metrics.hpp"

using namespace slicerecon;

TEST_CASE("dice and iou fixtures") {
    const Mask2D a = fixtures::block(6, 6, 1, 1, 2, 2), b = fixtures::block(6, 6, 2, 1, 2, 2);
    CHECK(dice(a, a) == 1.0);
    CHECK(dice(a, fixtures::block(6, 6, 4, 4, 2, 2)) == 0.0);
    CHECK(dice(a, b) == doctest::Approx(0.5));
    CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0));
    bool both = false;
    CHECK(dice(Mask2D(4, 4), Mask2D(4, 4), &both) == 1.0);
    CHECK(both);
    CHECK(iou(Mask2D(4, 4), Mask2D(4, 4)) == 1.0);
    CHECK_THROWS_AS(dice(a, Mask2D(5, 6)), Error);
}

TEST_CASE("iou from dice") {
    CHECK(iou_from_dice(0.90) == doctest::Approx(0.8182).epsilon(1e-4));
    CHECK(iou_from_dice(1.0) == 1.0);
    CHECK(iou_from_dice(0.0) == 0.0);
    CHECK_THROWS_AS(iou_from_dice(1.1), Error);
    CHECK_THROWS_AS(iou_from_dice(-0.1), Error);
    std::mt19937_64 rng(3);
    for (int i = 0; i < 200; ++i) {
        const Mask2D x = fixtures::random_mask(12, 12, 0.4, rng), y = fixtures::random_mask(12, 12, 0.4, rng);
        REQUIRE(std::abs(iou(x, y) - iou_from_dice(dice(x, y))) <= 1e-12);
    }
}

TEST_CASE("hd95 fixtures") {
    const Mask2D d = fixtures::disk(30, 30, 15, 15, 8);
    CHECK(hd95(d, d) == 0.0);
    Mask2D p(8, 8), q(8, 8);
    p(0, 0) = 1;
    q(3, 4) = 1;
    CHECK(hd95(p, q) == doctest::Approx(5.0));
    const Mask2D inner = fixtures::block(20, 20, 5, 5, 10, 10), outer = fixtures::block(20, 20, 4, 4, 12, 12);
    CHECK(std::abs(hd95(inner, outer) - 1.0) <= 0.05);
    CHECK_THROWS_AS(hd95(Mask2D(8, 8), q), Error);

    Mask2D ps(8, 8, Spacing{2.0, 2.0}), qs(8, 8, Spacing{2.0, 2.0});
    ps(0, 0) = 1;
    qs(3, 4) = 1;
    CHECK(hd95(ps, qs) == doctest::Approx(10.0));
}

TEST_CASE("hd95 is symmetric") {
    std::mt19937_64 rng(8);
    for (int i = 0; i < 30; ++i) {
        const Mask2D x = fixtures::random_mask(16, 16, 0.3, rng), y = fixtures::random_mask(16, 16, 0.3, rng);
        CHECK(hd95(x, y) == doctest::Approx(hd95(y, x)));
    }
}

TEST_CASE("global ncc") {
    const Image2D a = fixtures::random_image(16, 16, 1);
    Image2D b = a, c = a;
    for (std::size_t i = 0; i < a.size(); ++i) {
        b.data()[i] = 2 * a.data()[i] + 0.1f;
        c.data()[i] = 1 - a.data()[i];
    }
    CHECK(ncc_global(a, a) == doctest::Approx(1.0));
    CHECK(std::abs(ncc_global(a, b) - 1.0) <= 1e-6);
    CHECK(ncc_global(a, c) == doctest::Approx(-1.0));
    CHECK_THROWS_AS(ncc_global(Image2D(8, 8, {}, 0.5f), fixtures::random_image(8, 8, 2)), Error);
}

TEST_CASE("ssim") {
    const Image2D a = fixtures::random_image(32, 32, 1);
    CHECK(ssim(a, a) == doctest::Approx(1.0));
    Image2D b = a;
    for (auto &v : b.data()) v = v * 0.8f + 0.1f;
    Image2D shifted = b;
    for (auto &v : shifted.data()) v += 0.1f;
    CHECK(ssim(b, shifted) < 1.0);
    CHECK(std::abs(ssim(fixtures::random_image(64, 64, 5), fixtures::random_image(64, 64, 6))) <= 0.1);
}

TEST_CASE("difference coefficient") {
    CHECK(dc(6.75, 9.45).value == doctest::Approx(0.2857).epsilon(1e-3));
    CHECK(dc(2.87, 3.54).value == doctest::Approx(0.189).epsilon(1e-2));
    CHECK(dc(5.0, 5.0).value == 0.0);
    CHECK(dc(12.0, 10.0).value == doctest::Approx(-0.2));
    CHECK(dc(12.0, 10.0).magnitude == doctest::Approx(0.2));
    CHECK_THROWS_AS(dc(1.0, 0.0), Error);
}

TEST_CASE("wilcoxon signed rank") {
    const std::vector<double> x{5, 6, 7, 8, 9, 10}, y{1, 2, 3, 4, 5, 6.5};
    const auto r = wilcoxon_signed_rank(x, y);
    CHECK(r.exact);
    CHECK(r.n == 6);
    CHECK(r.p_value == doctest::Approx(0.03125));
    CHECK(r.statistic == doctest::Approx(21.0));

    const std::vector<double> p{1.0, -2.0, 3.5, 0.5, -1.5, 2.5, 4.0}, zero(7, 0.0);
    const auto f = wilcoxon_signed_rank(p, zero), g = wilcoxon_signed_rank(zero, p);
    CHECK(f.statistic + g.statistic == doctest::Approx(28.0));
    CHECK(f.p_value == doctest::Approx(g.p_value));

    const auto d = wilcoxon_signed_rank(x, x);
    CHECK(d.degenerate);
    CHECK(d.p_value == 1.0);
    CHECK_THROWS_AS(wilcoxon_signed_rank(x, std::vector<double>{1.0}), Error);

    std::vector<double> big(40), base(40, 0.0);
    for (int i = 0; i < 40; ++i) big[i] = (i % 3 == 0 ? -1.0 : 1.0) * (i + 1);
    const auto n = wilcoxon_signed_rank(big, base);
    CHECK_FALSE(n.exact);
    CHECK(n.p_value > 0.0);
    CHECK(n.p_value < 1.0);
}

TEST_CASE("k-fold splits") {
    std::vector<std::string> ids;
    for (int i = 0; i < 40; ++i) ids.push_back("P" + std::to_string(i));
    const auto folds = kfold_split(ids, 5, 7);
    REQUIRE(folds.size() == 5);
    std::set<std::string> seen;
    for (const auto &f : folds) {
        CHECK(f.test.size() == 8);
        CHECK(f.train.size() == 32);
        for (const auto &id : f.test) {
            CHECK(seen.insert(id).second);
            CHECK(std::find(f.train.begin(), f.train.end(), id) == f.train.end());
        }
    }
    CHECK(seen.size() == 40);
    CHECK(kfold_split(ids, 5, 7)[2].test == folds[2].test);

    const auto loo = kfold_split({"a", "b", "c"}, 3, 1);
    for (const auto &f : loo) CHECK(f.test.size() == 1);
    CHECK_THROWS_AS(kfold_split({"a", "b"}, 3, 1), Error);
    CHECK_THROWS_AS(kfold_split({"a", "a", "b"}, 2, 1), Error);
    CHECK_THROWS_AS(kfold_split({"a", "b"}, 1, 1), Error);
}

TEST_CASE("evaluate_all on identical volumes") {
    Volume3D v(24, 24, 6, {0.5, 0.5, 2.0});
    for (int z = 1; z < 5; ++z)
        for (int y = 4; y < 20; ++y)
            for (int x = 6; x < 16; ++x) v(x, y, z) = 1;
    const auto r = evaluate_all(v, v);
    CHECK(r.dice == 1.0);
    CHECK(r.iou == 1.0);
    CHECK(r.hd95 == 0.0);
    CHECK(r.slices.size() == 6);
    CHECK(r.slices[0].both_empty);
    for (const auto &[k, d] : r.dc) CHECK(d.value == doctest::Approx(0.0));
    CHECK(r.dc.count("Vol") == 1);
}
