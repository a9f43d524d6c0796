#include "slicerecon/field.hpp"

#include <algorithm>
#include <cmath>

#include "slicerecon/mask_ops.hpp"
#include "slicerecon/sampling.hpp"

namespace slicerecon {

double DisplacementField::max_magnitude() const {
    double m = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        m = std::max(m, std::hypot(double(u[i]), double(v[i])));
    }
    return m;
}

bool DisplacementField::finite() const {
    return std::all_of(u.begin(), u.end(), [](float x) { return std::isfinite(x); }) &&
           std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

void DisplacementField::validate() const {
    if (width < 0 || height < 0 || u.size() != std::size_t(width) * height || v.size() != u.size()) {
        throw Error(ErrorCode::ShapeError, "displacement field planes do not match its dimensions");
    }
    if (!finite()) {
        throw Error(ErrorCode::InvalidParams, "displacement field has nonfinite entries");
    }
}

namespace {

template <class T>
void require_field_shape(const Raster<T> &r, const DisplacementField &phi) {
    if (r.width() != phi.width || r.height() != phi.height) {
        throw Error(ErrorCode::ShapeError, "field and raster dimensions differ");
    }
}

} // namespace

Image2D warp_dense(const Image2D &img, const DisplacementField &phi) {
    require_field_shape(img, phi);
    Image2D out(img.width(), img.height(), img.spacing());
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            const std::size_t i = phi.index(x, y);
            out(x, y) = static_cast<float>(detail::bilinear(img, x + double(phi.u[i]), y + double(phi.v[i])));
        }
    }
    return out;
}

Mask2D warp_dense(const Mask2D &m, const DisplacementField &phi) {
    require_field_shape(m, phi);
    const Image2D real = to_image(m);
    Mask2D out(m.width(), m.height(), m.spacing());
    for (int y = 0; y < m.height(); ++y) {
        for (int x = 0; x < m.width(); ++x) {
            const std::size_t i = phi.index(x, y);
            out(x, y) = detail::bilinear(real, x + double(phi.u[i]), y + double(phi.v[i])) >= 0.5 ? 1 : 0;
        }
    }
    return out;
}

double fold_fraction(const DisplacementField &phi) {
    if (phi.width < 3 || phi.height < 3) return 0.0;
    std::size_t folded = 0, total = 0;
    for (int y = 1; y + 1 < phi.height; ++y) {
        for (int x = 1; x + 1 < phi.width; ++x) {
            const double ux = 0.5 * (phi.u[phi.index(x + 1, y)] - phi.u[phi.index(x - 1, y)]);
            const double uy = 0.5 * (phi.u[phi.index(x, y + 1)] - phi.u[phi.index(x, y - 1)]);
            const double vx = 0.5 * (phi.v[phi.index(x + 1, y)] - phi.v[phi.index(x - 1, y)]);
            const double vy = 0.5 * (phi.v[phi.index(x, y + 1)] - phi.v[phi.index(x, y - 1)]);
            const double det = (1.0 + ux) * (1.0 + vy) - uy * vx;
            folded += det < 0.0;
            ++total;
        }
    }
    return static_cast<double>(folded) / static_cast<double>(total);
}

} // namespace slicerecon
