#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "slicerecon/mask_ops.hpp"
#include "slicerecon/types.hpp"

namespace slicerecon {

/// Vote matrix over (rho, theta): rho = x cos(theta) + y sin(theta).
/// Rho bins are symmetric about zero, theta bins cover [0, pi).
struct HoughAccumulator {
    int rho_bins = 0;
    int theta_bins = 0;
    double rho_res = 1.0;
    double theta_res = 0.0;
    int rho_offset = 0; // bin index of rho == 0
    std::vector<std::uint32_t> counts; // [rho_bin * theta_bins + theta_bin]

    std::uint32_t at(int rho_bin, int theta_bin) const {
        return counts[std::size_t(rho_bin) * theta_bins + theta_bin];
    }
    double rho_of(int rho_bin) const { return (rho_bin - rho_offset) * rho_res; }
    double theta_of(int theta_bin) const { return theta_bin * theta_res; }
    int rho_bin_of(double rho) const;
    std::uint32_t max_count() const;
};

struct HoughPeak {
    int rho_bin = 0;
    int theta_bin = 0;
    double rho = 0.0;   // sub-bin estimate
    double theta = 0.0;
    std::uint32_t votes = 0;
};

struct DetectedLine {
    double rho = 0.0;
    double theta = 0.0;
    Point2 p0;
    Point2 p1;
};

struct ScaleFactor {
    double S = 0.0; // mm / pixel
};

struct HoughOptions {
    double rho_res = 1.0;
    double theta_res = 3.14159265358979323846 / 180.0;
    int max_peaks = 40;
    double threshold = 0.3; // fraction of the accumulator maximum
    int neighborhood = 5;   // odd suppression window, in bins, along both axes
    double parallel_tolerance = 2.0 * 3.14159265358979323846 / 180.0;
    double min_separation = 3.0; // px; closer parallel lines count as one
};

/// Sobel gradient magnitude thresholded with Otsu's method.
Mask2D sobel_edges(const Image2D &img);
/// Otsu threshold for values in [lo, hi] using a 256-bin histogram.
double otsu_threshold(std::span<const double> values);

HoughAccumulator hough_accumulate(const Mask2D &edges, double rho_res, double theta_res);

/// Global maximum of the accumulator. Short lines leave a plateau of tied
/// cells; the result is the middle of the plateau holding the first maximal
/// cell in (rho bin, theta bin) order, with theta wrapping at 0 / pi. The
/// returned theta is in [0, pi) and rho is signed accordingly. Throws NoPeaks
/// on an all-zero accumulator.
HoughPeak hough_argmax(const HoughAccumulator &H);

/// Greedy peak picking. Each pick suppresses a `neighborhood` window in rho
/// and the side lobes a line through the peak leaves at nearby angles
/// (theta wraps at 0 / pi with rho mirrored). Ties resolve by
/// (rho bin, theta bin) ascending. Throws NoPeaks on an all-zero accumulator.
std::vector<HoughPeak> hough_peaks(const HoughAccumulator &H, int max_peaks, double threshold,
                                   int neighborhood = 5);

struct LineExtraction {
    std::vector<DetectedLine> lines;
    std::vector<std::string> diagnostics;
};

/// Endpoints are the extreme edge pixels within rho_tolerance of each peak.
/// Peaks without support are dropped and reported.
LineExtraction extract_lines(const Mask2D &edges, const std::vector<HoughPeak> &peaks,
                             double rho_tolerance = 1.0);

struct GridSpacing {
    double median_spacing = 0.0;      // px
    std::vector<double> spacings;     // adjacent spacings of the dominant family
    std::size_t family_size = 0;
    double family_theta = 0.0;
};

/// Median adjacent spacing within the dominant family of parallel lines.
/// Lines are expected strongest first. The family is the parallel cluster
/// containing the first line; a line closer than min_separation to an
/// earlier one of the same family is ignored.
GridSpacing grid_spacing(const std::vector<DetectedLine> &lines, double angle_tolerance, double min_separation = 3.0);

/// S = grid_pitch_mm / median spacing. Throws InsufficientGrid with fewer
/// than two parallel lines.
ScaleFactor grid_scale(const std::vector<DetectedLine> &lines, double grid_pitch_mm,
                       double angle_tolerance = 2.0 * 3.14159265358979323846 / 180.0, double min_separation = 3.0);

struct CalibrationResult {
    ScaleFactor scale;
    std::vector<DetectedLine> lines;
    GridSpacing grid;
    std::vector<std::string> diagnostics;
};

/// edges -> accumulator -> peaks -> lines -> scale for one grid photograph.
CalibrationResult calibrate_image(const Image2D &img, double grid_pitch_mm, const HoughOptions &opts = {});

struct StackScale {
    double S = 0.0;                   // median of the per-image factors
    std::vector<double> per_image;
    std::vector<double> relative_deviation; // per_image / S - 1
};

StackScale combine_scales(const std::vector<double> &per_image);

} // namespace slicerecon
