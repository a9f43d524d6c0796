#pragma once

#include <cstddef>

#include "slicerecon/types.hpp"

namespace slicerecon {

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    bool operator==(const Point2 &) const = default;
};

std::size_t mask_area(const Mask2D &m);

/// Mean of the true-pixel coordinates; throws EmptyMask for an empty mask.
Point2 centroid(const Mask2D &m);

Image2D to_image(const Mask2D &m);
/// value > threshold -> true.
Mask2D threshold(const Image2D &img, float level = 0.5f);

/// (w-1)/2, (h-1)/2: the pivot for similarity warps.
template <class T>
Point2 image_center(const Raster<T> &r) {
    return {(r.width() - 1) * 0.5, (r.height() - 1) * 0.5};
}

} // namespace slicerecon
