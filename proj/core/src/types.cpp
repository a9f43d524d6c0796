#include "slicerecon/types.hpp"

#include <numbers>

#include "slicerecon/mask_ops.hpp"

namespace slicerecon {

void validate_intensities(const Image2D &img) {
    for (float v : img.data()) {
        if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
            throw Error(ErrorCode::ShapeError, "image intensity outside [0, 1]");
        }
    }
}

void SimilarityTransform::validate() const {
    if (!valid()) {
        throw Error(ErrorCode::InvalidTransform, "similarity parameters must be finite with s > 0");
    }
}

SimilarityTransform SimilarityTransform::inverse() const {
    validate();
    // p = (1/s) R(-theta) (p' - c - t) + c
    const double c = std::cos(theta), sn = std::sin(theta);
    const double inv_s = 1.0 / s;
    const double rx = c * tx + sn * ty;
    const double ry = -sn * tx + c * ty;
    return {inv_s, -theta, -inv_s * rx, -inv_s * ry};
}

ParameterBounds ParameterBounds::standard(int width, int height) {
    constexpr double quarter_pi = std::numbers::pi / 4.0;
    ParameterBounds b;
    b.s = {0.8, 1.2};
    b.theta = {-quarter_pi, quarter_pi};
    b.tx = {-width / 2.0, width / 2.0};
    b.ty = {-height / 2.0, height / 2.0};
    return b;
}

ParameterBounds ParameterBounds::identity() {
    ParameterBounds b;
    b.s = {1.0, 1.0};
    b.theta = {0.0, 0.0};
    b.tx = {0.0, 0.0};
    b.ty = {0.0, 0.0};
    return b;
}

void ParameterBounds::validate() const {
    for (const Bound *b : as_array()) {
        if ((b->lower && !std::isfinite(*b->lower)) || (b->upper && !std::isfinite(*b->upper))) {
            throw Error(ErrorCode::InvalidConfig, "bounds must be finite");
        }
        if (b->lower && b->upper && *b->lower > *b->upper) {
            throw Error(ErrorCode::InvalidConfig, "lower bound exceeds upper bound");
        }
    }
    if (s.lower && *s.lower <= 0.0) {
        throw Error(ErrorCode::InvalidConfig, "scale lower bound must be positive");
    }
}

bool ParameterBounds::contains(const SimilarityTransform &t, double tol) const {
    const double v[4] = {t.s, t.theta, t.tx, t.ty};
    auto arr = as_array();
    for (int i = 0; i < 4; ++i) {
        const Bound &b = *arr[i];
        if (b.lower && v[i] < *b.lower - tol) return false;
        if (b.upper && v[i] > *b.upper + tol) return false;
    }
    return true;
}

Volume3D::Volume3D(int nx, int ny, int nz, Vec3 sp) : dims{nx, ny, nz}, spacing(sp) {
    if (nx < 0 || ny < 0 || nz < 0) {
        throw Error(ErrorCode::ShapeError, "negative volume dimensions");
    }
    data.assign(static_cast<std::size_t>(nx) * ny * nz, 0);
    validate();
}

Mask2D Volume3D::slice(int z) const {
    Mask2D m(dims[0], dims[1], Spacing{spacing.x, spacing.y});
    const std::size_t plane = static_cast<std::size_t>(dims[0]) * dims[1];
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(plane * z), plane, m.data().begin());
    return m;
}

void Volume3D::validate() const {
    if (data.size() != static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]) {
        throw Error(ErrorCode::ShapeError, "volume data length does not match dims");
    }
    for (double s : {spacing.x, spacing.y, spacing.z}) {
        if (!(s > 0.0) || !std::isfinite(s)) {
            throw Error(ErrorCode::ShapeError, "voxel spacing must be positive");
        }
    }
}

std::size_t mask_area(const Mask2D &m) {
    std::size_t n = 0;
    for (auto v : m.data()) n += v != 0;
    return n;
}

Point2 centroid(const Mask2D &m) {
    double sx = 0.0, sy = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < m.height(); ++y) {
        for (int x = 0; x < m.width(); ++x) {
            if (m(x, y)) {
                sx += x;
                sy += y;
                ++n;
            }
        }
    }
    if (n == 0) {
        throw Error(ErrorCode::EmptyMask, "centroid of an empty mask");
    }
    return {sx / static_cast<double>(n), sy / static_cast<double>(n)};
}

Image2D to_image(const Mask2D &m) {
    Image2D img(m.width(), m.height(), m.spacing());
    auto dst = img.data();
    auto src = m.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] ? 1.0f : 0.0f;
    return img;
}

Mask2D threshold(const Image2D &img, float level) {
    Mask2D m(img.width(), img.height(), img.spacing());
    auto dst = m.data();
    auto src = img.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > level ? 1 : 0;
    return m;
}

} // namespace slicerecon
