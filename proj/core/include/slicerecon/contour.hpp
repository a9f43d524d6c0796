#pragma once

#include <string>
#include <vector>

#include "slicerecon/mask_ops.hpp"
#include "slicerecon/types.hpp"

namespace slicerecon {

struct Contour {
    std::vector<Point2> points; // pixel coordinates
    bool closed = true;
};

struct ContourExtraction {
    Contour contour;
    int components = 0;
    bool degenerate = false;          // fewer than 3 boundary points
    bool multiple_components = false; // the largest component was kept
};

/// Outer boundary of the largest 8-connected component, traced clockwise
/// (y down) with Moore-neighbour following from the topmost-leftmost pixel.
/// Throws EmptyMask when there is no foreground.
ContourExtraction extract_contour(const Mask2D &m);

/// C(n, i) t^i (1 - t)^(n - i). Throws DomainError unless 0 <= i <= n.
double bernstein(int i, int n, double t);

struct BezierSegment {
    std::vector<Point2> control;

    int degree() const noexcept { return static_cast<int>(control.size()) - 1; }
};

/// Sum of P_i B_{i,n}(t). Throws DomainError for t outside [0, 1] or fewer
/// than two control points.
Point2 bezier_eval(const BezierSegment &seg, double t);

struct SmoothedContour {
    Contour contour;
    std::vector<BezierSegment> segments;
    bool unchanged = false; // too few points, input returned as is
};

/// Cubic least-squares fit per run of `segment_len` points (runs share their
/// end points, closing the loop), chord-length parameterised, sampled at
/// `samples_per_segment` uniform t values per segment.
SmoothedContour smooth_contour(const Contour &c, int segment_len = 8, int samples_per_segment = 16);

struct Rasterized {
    Mask2D mask;
    bool degenerate = false;
    bool self_intersecting = false;
};

/// Even-odd scanline fill of a closed polygon; pixel centres on the boundary
/// are included.
Rasterized rasterize_contour(const Contour &c, int width, int height, Spacing spacing = {});

/// Shoelace area in square pixels (absolute value).
double polygon_area(const Contour &c);

/// Per-slice contour smoothing: extract, smooth, rasterize. Empty slices pass
/// through unchanged.
MaskStack smooth_stack(const MaskStack &stack, int segment_len = 8, int samples_per_segment = 16,
                       std::vector<std::string> *warnings = nullptr);

} // namespace slicerecon
