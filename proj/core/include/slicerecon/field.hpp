#pragma once

#include <cstddef>
#include <vector>

#include "slicerecon/types.hpp"

namespace slicerecon {

/// Dense per-pixel displacement (pixels). Warping pulls back:
/// out(p) = in(p + phi(p)).
struct DisplacementField {
    int width = 0;
    int height = 0;
    std::vector<float> u;
    std::vector<float> v;

    DisplacementField() = default;
    DisplacementField(int w, int h) : width(w), height(h), u(std::size_t(w) * h, 0.0f), v(u) {}

    std::size_t size() const noexcept { return u.size(); }
    std::size_t index(int x, int y) const noexcept { return std::size_t(y) * width + x; }

    /// Largest |phi(p)| over the field.
    double max_magnitude() const;
    bool finite() const;
    void validate() const;

    bool operator==(const DisplacementField &) const = default;
};

/// Bilinear pull-back warp; out-of-canvas samples read as background.
Image2D warp_dense(const Image2D &img, const DisplacementField &phi);
/// Masks are sampled as reals and re-thresholded at 0.5.
Mask2D warp_dense(const Mask2D &m, const DisplacementField &phi);

/// Fraction of interior pixels where det(I + grad phi) < 0.
double fold_fraction(const DisplacementField &phi);

} // namespace slicerecon
