#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "fixtures.hpp"
#include "slicerecon/field.hpp"
#include "slicerecon/mask_ops.hpp"
#include "slicerecon/metrics.hpp"
#include "slicerecon/ocm.hpp"
#include "slicerecon/phantom.hpp"
#include "slicerecon/refine.hpp"

using namespace slicerecon;

namespace {

DisplacementField constant_field(int w, int h, float u, float v) {
    DisplacementField f(w, h);
    std::fill(f.u.begin(), f.u.end(), u);
    std::fill(f.v.begin(), f.v.end(), v);
    return f;
}

struct GradCheck {
    double rel_error = 0.0;
};

// central differences on every component, relative error in the max norm
GradCheck check_gradient(std::uint64_t seed, double lambda) {
    const int w = 16, h = 16;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-1.5, 1.5);
    const LossKernel k(fixtures::random_image(w, h, seed * 2 + 1), fixtures::random_image(w, h, seed * 2 + 2), lambda,
                       5);
    std::vector<double> u(w * h), v(w * h), gu(w * h), gv(w * h);
    for (auto &x : u) x = d(rng);
    for (auto &x : v) x = d(rng);
    k.evaluate(u, v, gu, gv);
    const double eps = 1e-6;
    double worst = 0.0, scale = 0.0;
    for (int c = 0; c < 2; ++c) {
        auto &p = c == 0 ? u : v;
        const auto &g = c == 0 ? gu : gv;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double keep = p[i];
            p[i] = keep + eps;
            const double fp = k.evaluate(u, v).loss;
            p[i] = keep - eps;
            const double fm = k.evaluate(u, v).loss;
            p[i] = keep;
            const double fd = (fp - fm) / (2 * eps);
            worst = std::max(worst, std::abs(fd - g[i]));
            scale = std::max({scale, std::abs(fd), std::abs(g[i])});
        }
    }
    return {worst / scale};
}

} // namespace

TEST_CASE("warp_dense fixtures") {
    const Image2D img = fixtures::random_image(10, 8, 1);
    CHECK(warp_dense(img, DisplacementField(10, 8)) == img);
    std::mt19937_64 rng(2);
    const Mask2D m = fixtures::random_mask(10, 8, 0.5, rng);
    CHECK(warp_dense(m, DisplacementField(10, 8)) == m);

    const Image2D shifted = warp_dense(img, constant_field(10, 8, 2.0f, 0.0f));
    for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) CHECK(shifted(x, y) == doctest::Approx(img(x + 2, y)));
        CHECK(shifted(8, y) == 0.0f);
        CHECK(shifted(9, y) == 0.0f);
    }
    const Image2D gone = warp_dense(img, constant_field(10, 8, 50.0f, -50.0f));
    for (float v : gone.data()) CHECK(v == 0.0f);
    CHECK_THROWS_AS(warp_dense(img, DisplacementField(9, 8)), Error);
}

TEST_CASE("local NCC identities") {
    const Image2D a = fixtures::random_image(20, 18, 3);
    CHECK(local_ncc(a, a, 9) == doctest::Approx(1.0).epsilon(1e-9));
    Image2D affine(20, 18), inverted(20, 18);
    for (std::size_t i = 0; i < a.size(); ++i) {
        affine.data()[i] = 0.5f * a.data()[i] + 0.2f;
        inverted.data()[i] = 1.0f - a.data()[i];
    }
    CHECK(local_ncc(a, affine, 9) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(local_ncc(a, inverted, 9) == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(local_ncc(Image2D(8, 8, {}, 0.3f), fixtures::random_image(8, 8, 1), 3) == 0.0);
}

TEST_CASE("smoothness fixtures") {
    CHECK(smoothness(DisplacementField(6, 5)) == 0.0);
    CHECK(smoothness(constant_field(6, 5, 1.5f, -2.0f)) == 0.0);
    DisplacementField ramp(7, 6);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 7; ++x) ramp.u[ramp.index(x, y)] = float(x);
    CHECK(smoothness(ramp) == doctest::Approx(0.5));
}

TEST_CASE("loss_us fixtures") {
    const Image2D f = fixtures::blob_image(24, 24, 11, 12, 5);
    CHECK(loss_us(f, f, DisplacementField(24, 24), 0.01) == doctest::Approx(-1.0).epsilon(1e-9));

    const Image2D m = fixtures::blob_image(24, 24, 12, 12, 5);
    DisplacementField rough(24, 24);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<float> d(-1.0f, 1.0f);
    for (auto &x : rough.u) x = d(rng);
    for (auto &x : rough.v) x = d(rng);
    CHECK(loss_us(f, m, rough, 0.0) == -local_ncc(f, warp_dense(m, rough), 9));
    CHECK(loss_us(f, m, rough, 0.1) > loss_us(f, m, rough, 0.01));
}

TEST_CASE("analytic gradient matches finite differences") {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        CHECK(check_gradient(seed, 0.01).rel_error <= 1e-4);
    }
    CHECK(check_gradient(9, 0.0).rel_error <= 1e-4);
    CHECK(check_gradient(10, 1.0).rel_error <= 1e-4);
}

TEST_CASE("refine config validation") {
    RefineConfig c;
    CHECK_NOTHROW(c.validate());
    c.lambda = 0.0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = {};
    c.window = 8;
    CHECK_THROWS_AS(c.validate(), Error);
    c = {};
    c.window = 1;
    CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("variational refinement of identical images") {
    const Image2D f = fixtures::blob_image(32, 32, 15, 16, 6);
    RefineConfig c;
    c.steps = 30;
    const auto r = refine_variational(f, f, c);
    CHECK(r.final_loss <= -1.0 + 1e-6);
    CHECK(r.phi.max_magnitude() <= 1e-6);
}

TEST_CASE("variational refinement undoes a smooth shift") {
    PhantomConfig pc;
    pc.width = pc.height = 64;
    pc.spacing = {1.0, 1.0};
    pc.perturbation = PhantomConfig::default_perturbation(64, 64);
    pc.nonrigid_amplitude = 4.0;
    pc.field_control_spacing = 16;
    pc.seed = 4;
    const auto pairs = phantom_pairs(pc, 1);
    const auto &p = pairs[0];
    RefineConfig c;
    const auto r = refine_variational(p.fixed, p.moving, c);
    const double pre = dice(threshold(p.fixed), threshold(p.moving));
    const double post = dice(threshold(p.fixed), threshold(warp_dense(p.moving, r.phi)));
    CHECK(post >= pre + 0.02);
    for (std::size_t i = 1; i < r.trace.size(); ++i) REQUIRE(r.trace[i] <= r.trace[i - 1]);
    CHECK(r.final_loss == doctest::Approx(loss_us(p.fixed, p.moving, r.phi, c.lambda)).epsilon(1e-5));
}

TEST_CASE("nonfinite input diverges with the iteration index") {
    Image2D f = fixtures::blob_image(16, 16, 8, 8, 4);
    Image2D m = f;
    m(3, 3) = std::numeric_limits<float>::quiet_NaN();
    try {
        refine_variational(f, m, RefineConfig{});
        FAIL("expected NumericalDivergence");
    } catch (const Error &e) {
        CHECK(e.code() == ErrorCode::NumericalDivergence);
        CHECK(std::string(e.what()).find("iteration") != std::string::npos);
    }
}

TEST_CASE("refine_stack") {
    ImageStack same;
    same.slices.assign(3, fixtures::blob_image(32, 32, 15, 15, 6));
    RefineConfig c;
    c.steps = 40;
    const auto r = refine_stack(same, c);
    REQUIRE(r.fields.size() == 3);
    for (const auto &f : r.fields) CHECK(f.max_magnitude() <= 0.1);

    ImageStack one;
    one.slices = {same[0]};
    const auto r1 = refine_stack(one, c);
    REQUIRE(r1.fields.size() == 1);
    CHECK(r1.fields[0].max_magnitude() == 0.0);
    CHECK(r1.refined[0] == one[0]);
    CHECK_THROWS_AS(refine_stack(ImageStack{}, c), Error);

    RefineConfig amortized = c;
    amortized.backend = RefineBackend::Amortized;
    CHECK_THROWS_AS(refine_stack(same, amortized), Error);
}

TEST_CASE("larger lambda gives smoother fields") {
    PhantomConfig pc;
    pc.width = pc.height = 64;
    pc.spacing = {1.0, 1.0};
    pc.perturbation = PhantomConfig::default_perturbation(64, 64);
    pc.nonrigid_amplitude = 3.0;
    pc.field_control_spacing = 16;
    const auto p = phantom_pairs(pc, 1)[0];
    RefineConfig lo, hi;
    lo.lambda = 0.001;
    hi.lambda = 0.1;
    lo.steps = hi.steps = 100;
    CHECK(smoothness(refine_variational(p.fixed, p.moving, hi).phi) <
          smoothness(refine_variational(p.fixed, p.moving, lo).phi));
}

TEST_CASE("fields compose after the similarity alignment") {
    PhantomConfig pc;
    pc.width = pc.height = 64;
    pc.spacing = {1.0, 1.0};
    pc.slices = 3;
    pc.perturbation = PhantomConfig::default_perturbation(64, 64);
    pc.nonrigid_amplitude = 2.0;
    pc.field_control_spacing = 16;
    const Phantom ph = generate_phantom(pc);
    const auto ocm = register_stack(ph.perturbed, ParameterBounds::standard(64, 64));
    RefineConfig c;
    c.steps = 30;
    const auto r = refine_stack(ocm.aligned, c);
    for (std::size_t i = 0; i < ph.perturbed.size(); ++i) {
        CHECK(r.refined[i] == warp_dense(warp_similarity(ph.perturbed[i], ocm.transforms[i]), r.fields[i]));
    }
}

TEST_CASE("fold fraction") {
    CHECK(fold_fraction(DisplacementField(8, 8)) == 0.0);
    DisplacementField flip(8, 8);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) flip.u[flip.index(x, y)] = -2.0f * x;
    CHECK(fold_fraction(flip) == 1.0);
}
