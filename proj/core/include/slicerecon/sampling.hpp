#pragma once

#include <cmath>

#include "slicerecon/types.hpp"

namespace slicerecon::detail {

/// Bilinear sample at a real position; neighbours outside the canvas count as 0.
inline double bilinear(const Image2D &img, double x, double y) {
    const double xf = std::floor(x), yf = std::floor(y);
    const int x0 = static_cast<int>(xf), y0 = static_cast<int>(yf);
    if (x0 < -1 || y0 < -1 || x0 >= img.width() || y0 >= img.height()) return 0.0;
    const double fx = x - xf, fy = y - yf;
    const double a = img.at_or(x0, y0), b = img.at_or(x0 + 1, y0);
    const double c = img.at_or(x0, y0 + 1), d = img.at_or(x0 + 1, y0 + 1);
    return (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * c + fx * d);
}

struct SampleWithGradient {
    double value = 0.0;
    double dx = 0.0;
    double dy = 0.0;
};

/// Bilinear sample plus its partial derivatives with respect to the position.
inline SampleWithGradient bilinear_grad(const Image2D &img, double x, double y) {
    const double xf = std::floor(x), yf = std::floor(y);
    const int x0 = static_cast<int>(xf), y0 = static_cast<int>(yf);
    if (x0 < -1 || y0 < -1 || x0 >= img.width() || y0 >= img.height()) return {};
    const double fx = x - xf, fy = y - yf;
    const double a = img.at_or(x0, y0), b = img.at_or(x0 + 1, y0);
    const double c = img.at_or(x0, y0 + 1), d = img.at_or(x0 + 1, y0 + 1);
    SampleWithGradient s;
    s.value = (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * c + fx * d);
    s.dx = (1.0 - fy) * (b - a) + fy * (d - c);
    s.dy = (1.0 - fx) * (c - a) + fx * (d - b);
    return s;
}

inline int round_half_up(double v) { return static_cast<int>(std::floor(v + 0.5)); }

} // namespace slicerecon::detail
