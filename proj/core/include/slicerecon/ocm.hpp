#pragma once

#include <optional>
#include <vector>

#include "slicerecon/nelder_mead.hpp"
#include "slicerecon/types.hpp"

namespace slicerecon {

// ---------------------------------------------------------------------------
// Similarity warping

/// Resamples `img` so that content at p lands at s R(theta)(p - c) + c + t,
/// with c the image centre. Bilinear for images, nearest neighbour for masks;
/// samples that fall off the canvas are background.
Image2D warp_similarity(const Image2D &img, const SimilarityTransform &t);
Mask2D warp_similarity(const Mask2D &m, const SimilarityTransform &t);

enum class SsdRegion {
    FullCanvas,
    /// Union of the foreground bounding boxes of both inputs (after warping).
    ForegroundBoxes,
};

/// Sum over pixels of (prev - warp_similarity(cur, t))^2.
double ssd_objective(const Image2D &prev, const Image2D &cur, const SimilarityTransform &t,
                     SsdRegion region = SsdRegion::FullCanvas);

// ---------------------------------------------------------------------------
// Bounded <-> unbounded parameter maps

/// sqrt(x - LB), sqrt(UB - x) or asin(2 (x - LB)/(UB - LB) - 1) depending on
/// which bounds are present; identity when unbounded. Throws OutOfBounds.
double bound_to_unbounded(double x, const Bound &b);
/// Inverse of bound_to_unbounded; the result always lies inside the bounds.
double unbounded_to_bound(double x_trans, const Bound &b);

// ---------------------------------------------------------------------------
// Pairwise and stack registration

enum class MorphMode { Erode, Dilate };

/// Binary erosion/dilation with a disk of the given radius (0 = identity).
/// Pixels outside the canvas count as background.
Mask2D local_mask_scaling(const Mask2D &m, int radius, MorphMode mode);

struct MaskScalingHook {
    int radius = 0;
    MorphMode mode = MorphMode::Dilate;
};

struct OcmOptions {
    NelderMeadOptions simplex{};
    /// Initial simplex steps in parameter units: scale, radians, fraction of
    /// width/height for the translations.
    double step_s = 0.05;
    double step_theta = 5.0 * 3.14159265358979323846 / 180.0;
    double step_translation = 0.05;
    /// Identity start plus (restarts - 1) deterministic perturbed starts.
    int restarts = 5;
    SsdRegion region = SsdRegion::FullCanvas;
    /// Index of the anchor slice that stays untransformed.
    int reference_index = 0;
    /// Optional morphological adjustment applied to each warped mask slice.
    std::optional<MaskScalingHook> mask_scaling;
};

struct PairResult {
    SimilarityTransform transform;
    double objective = 0.0;
    double initial_objective = 0.0;
    bool converged = false;
    int evaluations = 0;
};

/// Bounded SSD minimisation of `cur` against `prev` with multi-start simplex
/// search in the unbounded parameter space. Fixed parameters (LB == UB) are
/// held constant and excluded from the search.
PairResult optimize_pair(const Image2D &prev, const Image2D &cur, const ParameterBounds &bounds,
                         const OcmOptions &opts = {});

template <class R>
struct OcmResult {
    std::vector<SimilarityTransform> transforms;
    std::vector<double> objective_trace;
    std::vector<bool> converged;
    SliceStack<R> aligned;
};

/// Chained registration: each slice is matched to the already aligned
/// neighbour on the anchor side; the anchor slice is left untouched.
OcmResult<Image2D> register_stack(const ImageStack &stack, const ParameterBounds &bounds,
                                  const OcmOptions &opts = {});
OcmResult<Mask2D> register_stack(const MaskStack &stack, const ParameterBounds &bounds,
                                 const OcmOptions &opts = {});

} // namespace slicerecon
