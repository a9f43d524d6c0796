#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "fixtures.hpp"
#include "slicerecon/phantom.hpp"
#include "slicerecon/predictor.hpp"
#include "slicerecon/refine.hpp"

using namespace slicerecon;
namespace fs = std::filesystem;

TEST_CASE("default architecture size") {
    const auto p = PredictorParams::initialize(0);
    CHECK(p.widths() == std::vector<int>{16, 32, 64, 128});
    CHECK(p.stride() == 16);
    const double n = double(p.parameter_count());
    CHECK(std::abs(n / 1.2e6 - 1.0) <= 0.10);
    CHECK(p.finite());
}

TEST_CASE("zero head predicts a zero field") {
    const auto p = PredictorParams::initialize(3);
    const auto phi = predictor_apply(p, fixtures::random_image(32, 32, 1), fixtures::random_image(32, 32, 2));
    CHECK(phi.width == 32);
    CHECK(phi.max_magnitude() == 0.0);
}

TEST_CASE("forward pass is deterministic and keeps odd dims") {
    auto p = PredictorParams::initialize(5);
    // give the head some weight so the output is not trivially zero
    for (auto &w : p.layers().back().weight) w = 0.01f;
    const Image2D f = fixtures::random_image(37, 21, 1), m = fixtures::random_image(37, 21, 2);
    const auto a = predictor_apply(p, f, m), b = predictor_apply(p, f, m);
    CHECK(a == b);
    CHECK(a.width == 37);
    CHECK(a.height == 21);
    CHECK(a.max_magnitude() > 0.0);
    CHECK_THROWS_AS(predictor_apply(p, f, fixtures::random_image(36, 21, 2)), Error);
}

TEST_CASE("nonfinite weights are rejected") {
    auto p = PredictorParams::initialize(1);
    p.layers()[2].weight[7] = std::numeric_limits<float>::infinity();
    try {
        predictor_apply(p, fixtures::random_image(16, 16, 1), fixtures::random_image(16, 16, 2));
        FAIL("expected InvalidParams");
    } catch (const Error &e) {
        CHECK(e.code() == ErrorCode::InvalidParams);
    }
}

TEST_CASE("training edge cases") {
    const Image2D f = fixtures::blob_image(32, 32, 15, 15, 6);
    TrainConfig tc;
    tc.epochs = 0;
    tc.seed = 4;
    const auto r0 = train_amortized({{f, f}}, RefineConfig{}, tc);
    CHECK(r0.params == PredictorParams::initialize(4));
    CHECK(r0.loss_curve.empty());

    CHECK_THROWS_AS(train_amortized({}, RefineConfig{}, tc), Error);
    tc.batch = 0;
    CHECK_THROWS_AS(train_amortized({{f, f}}, RefineConfig{}, tc), Error);
}

TEST_CASE("an identical pair trains to perfect similarity") {
    const Image2D f = fixtures::blob_image(64, 64, 30, 33, 10);
    TrainConfig tc;
    tc.epochs = 3;
    const auto r = train_amortized({{f, f}}, RefineConfig{}, tc);
    REQUIRE(r.loss_curve.size() == 3);
    CHECK(r.loss_curve.back() <= -0.99);
}

TEST_CASE("training is deterministic per seed and lowers the loss") {
    PhantomConfig pc;
    pc.width = pc.height = 32;
    pc.spacing = {0.5, 0.5};
    pc.semi_a = 6.0;
    pc.semi_b = 4.0;
    pc.perturbation = PhantomConfig::default_perturbation(32, 32);
    pc.nonrigid_amplitude = 2.0;
    pc.field_control_spacing = 8;
    std::vector<ImagePair> pairs;
    for (auto &p : phantom_pairs(pc, 3)) pairs.emplace_back(p.fixed, p.moving);
    TrainConfig tc;
    tc.epochs = 6;
    tc.learning_rate = 1e-3;
    tc.batch = 2;
    tc.seed = 9;
    const auto a = train_amortized(pairs, RefineConfig{}, tc);
    const auto b = train_amortized(pairs, RefineConfig{}, tc);
    CHECK(a.params == b.params);
    CHECK(a.loss_curve == b.loss_curve);
    CHECK(a.loss_curve.back() < a.loss_curve.front());
}

TEST_CASE("predictor files round-trip") {
    const fs::path dir = fs::temp_directory_path() / "slicerecon_predictor_io";
    fs::remove_all(dir);
    auto p = PredictorParams::initialize(2, {4, 8});
    p.layers().back().weight[0] = 0.25f;
    save_predictor(p, dir / "p.bin");
    CHECK(load_predictor(dir / "p.bin") == p);
    fs::resize_file(dir / "p.bin", fs::file_size(dir / "p.bin") - 3);
    CHECK_THROWS_AS(load_predictor(dir / "p.bin"), Error);
    CHECK_THROWS_AS(load_predictor(dir / "none.bin"), Error);
    fs::remove_all(dir);
}
