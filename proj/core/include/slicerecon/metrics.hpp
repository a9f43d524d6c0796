#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slicerecon/types.hpp"

namespace slicerecon {

/// 2|A n B| / (|A| + |B|); two empty inputs give 1 and set *both_empty.
double dice(const Mask2D &a, const Mask2D &b, bool *both_empty = nullptr);
double dice(const Volume3D &a, const Volume3D &b, bool *both_empty = nullptr);

/// |A n B| / |A u B|; two empty inputs give 1.
double iou(const Mask2D &a, const Mask2D &b);
double iou(const Volume3D &a, const Volume3D &b);

/// d / (2 - d). Throws DomainError outside [0, 1].
double iou_from_dice(double d);

/// Pooled 95th percentile (linear interpolation) of boundary-to-boundary
/// nearest distances in both directions, in physical units. Boundary pixels
/// are foreground pixels 4-adjacent (6-adjacent in 3D) to background or the
/// canvas edge. Throws EmptyMask for an empty input.
double hd95(const Mask2D &a, const Mask2D &b);
double hd95(const Volume3D &a, const Volume3D &b);

/// Zero-mean NCC over `region`, or over the union of positive pixels when no
/// region is given (all pixels if that union is empty). Throws
/// UndefinedCorrelation when either image is constant over the region.
double ncc_global(const Image2D &a, const Image2D &b, const Mask2D *region = nullptr);

/// Mean SSIM over all 8x8 windows (stride 1) that lie inside the canvas,
/// C1 = 0.01^2, C2 = 0.03^2. With a region, only windows whose centre pixel
/// (x+4, y+4) is in the region are averaged.
double ssim(const Image2D &a, const Image2D &b, const Mask2D *region = nullptr);

struct DifferenceCoefficient {
    double value = 0.0;     // 1 - q_candidate / q_reference
    double magnitude = 0.0; // |value|
};

/// Throws DomainError unless q_reference > 0.
DifferenceCoefficient dc(double q_candidate, double q_reference);

struct WilcoxonResult {
    double statistic = 0.0; // W+ (sum of ranks of positive differences)
    double w_minus = 0.0;
    double p_value = 1.0; // two-sided
    int n = 0;            // nonzero differences
    bool exact = false;
    bool degenerate = false; // all differences zero
};

/// Signed-rank test on x - y with zero differences dropped and average ranks
/// for ties. Exact null distribution for n <= 25, otherwise a normal
/// approximation with tie correction. Throws ShapeError on length mismatch.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y);

struct Fold {
    std::vector<std::string> train;
    std::vector<std::string> test;
};

/// Seeded shuffle then round-robin assignment to k folds. Throws DomainError
/// for k < 2, k > |ids| or duplicate ids.
std::vector<Fold> kfold_split(const std::vector<std::string> &ids, int k, std::uint64_t seed);

struct SliceMetrics {
    double dice = 0.0;
    double iou = 0.0;
    std::optional<double> hd95; // absent when either slice is empty
    bool both_empty = false;
};

struct EvaluationReport {
    double dice = 0.0;
    double iou = 0.0;
    double hd95 = 0.0; // mm
    std::optional<double> ncc;
    std::optional<double> ssim;
    std::map<std::string, DifferenceCoefficient> dc; // L, W, T, Vol
    std::map<std::string, double> candidate_quantities;
    std::map<std::string, double> reference_quantities;
    std::vector<SliceMetrics> slices;
    std::vector<std::string> flags;
};

/// Intensity stacks compared slice by slice for NCC/SSIM.
struct IntensityPair {
    const ImageStack *candidate = nullptr;
    const ImageStack *reference = nullptr;
};

/// Overlap and boundary metrics on the volumes, per-slice breakdown, DC for
/// L, W, T (measured along the reference's principal axes) and volume, and
/// NCC/SSIM averaged over slices when an intensity pair is given. Volumes must
/// share dims; spacings may differ (physical quantities use each one's own).
EvaluationReport evaluate_all(const Volume3D &candidate, const Volume3D &reference,
                              const IntensityPair *intensity = nullptr);

} // namespace slicerecon
