#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "slicerecon/ocm.hpp"
#include "slicerecon/phantom.hpp"
#include "slicerecon/predictor.hpp"
#include "slicerecon/refine.hpp"

using namespace slicerecon;

namespace {

Image2D noise(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Image2D img(n, n);
    for (auto &x : img.data()) x = u(rng);
    return img;
}

void BM_SsdObjective(benchmark::State &state) {
    PhantomConfig cfg;
    cfg.width = cfg.height = int(state.range(0));
    cfg.slices = 2;
    const Phantom ph = generate_phantom(cfg);
    SimilarityTransform t;
    t.s = 1.02;
    t.theta = 0.05;
    t.tx = 1.5;
    for (auto _ : state) benchmark::DoNotOptimize(ssd_objective(ph.perturbed_intensity[0], ph.perturbed_intensity[1], t));
    state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(0));
}
BENCHMARK(BM_SsdObjective)->Arg(64)->Arg(128)->Arg(256);

void BM_LossGradient(benchmark::State &state) {
    const int n = int(state.range(0));
    const LossKernel k(noise(n, 1), noise(n, 2), 0.01, 9);
    const std::size_t m = std::size_t(n) * n;
    std::vector<double> u(m, 0.3), v(m, -0.2), gu(m), gv(m);
    for (auto _ : state) benchmark::DoNotOptimize(k.evaluate(u, v, gu, gv).loss);
    state.SetItemsProcessed(state.iterations() * n * n);
}
BENCHMARK(BM_LossGradient)->Arg(64)->Arg(128);

void BM_PredictorForward(benchmark::State &state) {
    const int n = int(state.range(0));
    const auto params = PredictorParams::initialize(3);
    const Image2D a = noise(n, 4), b = noise(n, 5);
    for (auto _ : state) benchmark::DoNotOptimize(predictor_apply(params, a, b));
}
BENCHMARK(BM_PredictorForward)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
