#pragma once

#include <span>
#include <vector>

#include "slicerecon/field.hpp"
#include "slicerecon/types.hpp"

namespace slicerecon {

class PredictorParams;

enum class RefineBackend { Variational, Amortized };

struct RefineConfig {
    double lambda = 0.01; // smoothness weight
    int window = 9;       // local NCC window (odd)
    int steps = 300;      // iteration cap of the variational solver
    double step_size = 0.5; // initial max per-pixel update, px
    /// Gaussian pre-smoothing of both inputs before the similarity term (0 = off).
    double presmooth_sigma = 0.0;
    /// Gaussian smoothing of the descent direction in the variational solver (0 = plain gradient).
    double gradient_sigma = 2.0;
    RefineBackend backend = RefineBackend::Variational;
    /// Register each slice to its refined predecessor; when false the
    /// unrefined predecessor is used and pairs become independent.
    bool chained = true;

    void validate() const;
};

/// Mean of windowed zero-mean NCC over the windows where `a` is not flat
/// (variance >= 1e-10). Windows are clipped to the canvas; a window where only
/// `b` is flat contributes 0. Returns 0 when `a` is flat everywhere.
double local_ncc(const Image2D &a, const Image2D &b, int window);

/// 1/2 * sum over {u, v} of mean squared forward differences along x and y.
double smoothness(const DisplacementField &phi);

/// -local_ncc(fixed, warp_dense(moving, phi)) + lambda * smoothness(phi).
double loss_us(const Image2D &fixed, const Image2D &moving, const DisplacementField &phi, double lambda,
               int window = 9);

struct LossTerms {
    double loss = 0.0;
    double ncc = 0.0;
    double smooth = 0.0;
};

/// Loss and analytic gradient on a double-precision field; shared by the
/// variational solver and predictor training.
class LossKernel {
public:
    LossKernel(Image2D fixed, Image2D moving, double lambda, int window);

    int width() const noexcept { return fixed_.width(); }
    int height() const noexcept { return fixed_.height(); }

    /// Gradient spans may be empty when only the value is needed.
    LossTerms evaluate(std::span<const double> u, std::span<const double> v, std::span<double> grad_u = {},
                       std::span<double> grad_v = {}) const;

private:
    Image2D fixed_;
    Image2D moving_;
    double lambda_;
    int window_;
};

Image2D gaussian_blur(const Image2D &img, double sigma);

struct VariationalResult {
    DisplacementField phi;
    std::vector<double> trace; // accepted loss per iteration, non-increasing
    double final_loss = 0.0;
};

/// Gradient descent from phi = 0 with backtracking on the step length.
/// Throws NumericalDivergence if the loss becomes nonfinite.
VariationalResult refine_variational(const Image2D &fixed, const Image2D &moving, const RefineConfig &cfg);

/// The inputs actually fed to the loss (pre-smoothed per cfg).
Image2D refine_input(const Image2D &img, const RefineConfig &cfg);

template <class R>
struct RefineStackResult {
    SliceStack<R> refined;
    std::vector<DisplacementField> fields; // fields[0] is zero
};

/// Residual refinement of an already globally aligned stack. The amortized
/// backend requires trained predictor parameters.
RefineStackResult<Mask2D> refine_stack(const MaskStack &aligned, const RefineConfig &cfg,
                                       const PredictorParams *params = nullptr);
RefineStackResult<Image2D> refine_stack(const ImageStack &aligned, const RefineConfig &cfg,
                                        const PredictorParams *params = nullptr);

/// Applies per-slice fields to another stack of the same geometry.
ImageStack apply_fields(const ImageStack &stack, const std::vector<DisplacementField> &fields);

} // namespace slicerecon
