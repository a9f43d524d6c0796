#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "slicerecon/field.hpp"
#include "slicerecon/refine.hpp"
#include "slicerecon/types.hpp"

namespace slicerecon {

/// 3x3 convolution, weights laid out [out][in][ky][kx].
struct ConvLayer {
    int in = 0;
    int out = 0;
    std::vector<float> weight;
    std::vector<float> bias;

    bool operator==(const ConvLayer &) const = default;
};

/// U-shaped encoder/decoder: two 3x3 convolutions per level, 2x2 max pooling,
/// nearest upsampling with skip concatenation, LeakyReLU(0.2), and a linear
/// 3x3 head producing (u, v). Input channels are (fixed, moving).
class PredictorParams {
public:
    PredictorParams() = default;

    /// He-initialised weights, zero biases and a zero head.
    static PredictorParams initialize(std::uint64_t seed, std::vector<int> widths = {16, 32, 64, 128});
    /// Empty layers of the right shapes (used by loaders).
    static PredictorParams with_shape(std::vector<int> widths);

    const std::vector<int> &widths() const noexcept { return widths_; }
    int levels() const noexcept { return static_cast<int>(widths_.size()); }
    /// Input dims are padded up to a multiple of this.
    int stride() const noexcept { return 1 << levels(); }

    std::vector<ConvLayer> &layers() noexcept { return layers_; }
    const std::vector<ConvLayer> &layers() const noexcept { return layers_; }

    std::size_t parameter_count() const;
    bool finite() const;

    bool operator==(const PredictorParams &) const = default;

private:
    std::vector<int> widths_;
    std::vector<ConvLayer> layers_;
};

/// Deterministic forward pass. Inputs are reflect-padded to a multiple of the
/// network stride and the output cropped back. Throws InvalidParams on
/// nonfinite weights.
DisplacementField predictor_apply(const PredictorParams &params, const Image2D &fixed, const Image2D &moving);

struct TrainConfig {
    int epochs = 100;
    double learning_rate = 1e-4;
    int batch = 8;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    /// Draw each pair in a random flip/transpose of the canvas per step.
    bool augment = true;

    void validate() const;
};

struct TrainResult {
    PredictorParams params;
    std::vector<double> loss_curve; // mean training loss per epoch
};

using ImagePair = std::pair<Image2D, Image2D>; // (fixed, moving)

/// Minimises the mean loss_us of the predicted field over the pairs with Adam.
/// Pairs are pre-smoothed per refine.presmooth_sigma. Starts from `init` when
/// given, otherwise from initialize(train.seed). Throws NumericalDivergence
/// with the epoch index if the loss turns nonfinite.
TrainResult train_amortized(const std::vector<ImagePair> &pairs, const RefineConfig &refine, const TrainConfig &train,
                            const PredictorParams *init = nullptr);

void save_predictor(const PredictorParams &params, const std::filesystem::path &path);
PredictorParams load_predictor(const std::filesystem::path &path);

} // namespace slicerecon
