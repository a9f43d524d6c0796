#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slicerecon/error.hpp"

namespace slicerecon {

// Pixel convention: origin top-left, x to the right, y downward, pixel centres
// at integer coordinates.

struct Spacing {
    double x = 1.0; // mm / pixel
    double y = 1.0;

    bool operator==(const Spacing &) const = default;
};

template <class T>
class Raster {
public:
    using value_type = T;

    Raster() = default;

    Raster(int width, int height, Spacing spacing = {}, T fill = T{})
        : width_(width), height_(height), spacing_(spacing),
          data_(checked_size(width, height), fill) {
        check_spacing();
    }

    Raster(int width, int height, std::vector<T> data, Spacing spacing = {})
        : width_(width), height_(height), spacing_(spacing), data_(std::move(data)) {
        if (data_.size() != checked_size(width, height)) {
            throw Error(ErrorCode::ShapeError, "raster data length does not match width*height");
        }
        check_spacing();
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }
    Spacing spacing() const noexcept { return spacing_; }
    void set_spacing(Spacing s) {
        spacing_ = s;
        check_spacing();
    }

    T operator()(int x, int y) const { return data_[index(x, y)]; }
    T &operator()(int x, int y) { return data_[index(x, y)]; }

    bool contains(int x, int y) const noexcept {
        return x >= 0 && y >= 0 && x < width_ && y < height_;
    }
    /// Out-of-canvas reads return background.
    T at_or(int x, int y, T background = T{}) const noexcept {
        return contains(x, y) ? data_[index(x, y)] : background;
    }

    std::size_t index(int x, int y) const noexcept {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(x);
    }

    std::span<const T> data() const noexcept { return data_; }
    std::span<T> data() noexcept { return data_; }
    const std::vector<T> &values() const noexcept { return data_; }

    template <class U>
    bool same_shape(const Raster<U> &o) const noexcept {
        return width_ == o.width() && height_ == o.height();
    }

    bool operator==(const Raster &) const = default;

private:
    static std::size_t checked_size(int w, int h) {
        if (w < 0 || h < 0) {
            throw Error(ErrorCode::ShapeError, "negative raster dimensions");
        }
        return static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    }
    void check_spacing() const {
        if (!(spacing_.x > 0.0) || !(spacing_.y > 0.0) || !std::isfinite(spacing_.x) ||
            !std::isfinite(spacing_.y)) {
            throw Error(ErrorCode::ShapeError, "pixel spacing must be positive and finite");
        }
    }

    int width_ = 0;
    int height_ = 0;
    Spacing spacing_{};
    std::vector<T> data_;
};

/// Scalar raster, intensities in [0, 1].
using Image2D = Raster<float>;
/// Binary raster stored one byte per pixel (0 or 1).
using Mask2D = Raster<std::uint8_t>;

/// Throws ShapeError if any intensity is nonfinite or outside [0, 1].
void validate_intensities(const Image2D &img);

template <class T>
void require_same_shape(const Raster<T> &a, const Raster<T> &b, const char *what) {
    if (!a.same_shape(b)) {
        throw Error(ErrorCode::ShapeError, std::string(what) + ": raster dimensions differ");
    }
}

/// Uniform scale, rotation (radians) and translation (pixels) about the image
/// centre: p' = s R(theta) (p - c) + c + t.
struct SimilarityTransform {
    double s = 1.0;
    double theta = 0.0;
    double tx = 0.0;
    double ty = 0.0;

    static SimilarityTransform identity() { return {}; }

    bool is_identity() const noexcept { return s == 1.0 && theta == 0.0 && tx == 0.0 && ty == 0.0; }
    bool valid() const noexcept {
        return std::isfinite(s) && std::isfinite(theta) && std::isfinite(tx) && std::isfinite(ty) &&
               s > 0.0;
    }
    /// Throws InvalidTransform unless valid().
    void validate() const;

    /// Inverse map about the same centre.
    SimilarityTransform inverse() const;

    bool operator==(const SimilarityTransform &) const = default;
};

struct Bound {
    std::optional<double> lower;
    std::optional<double> upper;

    bool fixed() const noexcept { return lower && upper && *lower == *upper; }
    bool contains(double x) const noexcept {
        return (!lower || x >= *lower) && (!upper || x <= *upper);
    }
    double clamp(double x) const noexcept {
        if (lower && x < *lower) return *lower;
        if (upper && x > *upper) return *upper;
        return x;
    }
};

/// Optional lower/upper bounds for {s, theta, tx, ty}; theta in radians.
struct ParameterBounds {
    Bound s;
    Bound theta;
    Bound tx;
    Bound ty;

    /// s in [0.8, 1.2], theta in [-45, 45] degrees, tx in [-w/2, w/2], ty in [-h/2, h/2].
    static ParameterBounds standard(int width, int height);
    /// All four parameters pinned to the identity.
    static ParameterBounds identity();

    void validate() const;
    bool contains(const SimilarityTransform &t, double tol = 0.0) const;
    std::array<const Bound *, 4> as_array() const { return {&s, &theta, &tx, &ty}; }
};

template <class R>
struct SliceStack {
    std::vector<R> slices;
    double slice_thickness = 1.0;     // mm
    std::optional<double> scale;      // calibrated mm / pixel (S)

    std::size_t size() const noexcept { return slices.size(); }
    const R &operator[](std::size_t i) const { return slices[i]; }

    /// Non-empty, uniform dimensions and spacing, positive thickness.
    void validate() const {
        if (slices.empty()) {
            throw Error(ErrorCode::InsufficientSlices, "slice stack is empty");
        }
        if (!(slice_thickness > 0.0) || !std::isfinite(slice_thickness)) {
            throw Error(ErrorCode::ShapeError, "slice thickness must be positive");
        }
        if (scale && !(*scale > 0.0 && std::isfinite(*scale))) {
            throw Error(ErrorCode::ShapeError, "scale factor must be positive");
        }
        for (const auto &sl : slices) {
            if (!sl.same_shape(slices.front()) || !(sl.spacing() == slices.front().spacing())) {
                throw Error(ErrorCode::ShapeError, "slices differ in dimensions or spacing");
            }
        }
    }
};

using ImageStack = SliceStack<Image2D>;
using MaskStack = SliceStack<Mask2D>;

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;
};

struct Volume3D {
    std::array<int, 3> dims{0, 0, 0};
    Vec3 spacing{1.0, 1.0, 1.0}; // (p_x, p_y, d) in mm
    std::vector<std::uint8_t> data; // x fastest, then y, then z

    Volume3D() = default;
    Volume3D(int nx, int ny, int nz, Vec3 sp);

    std::size_t index(int x, int y, int z) const noexcept {
        return (static_cast<std::size_t>(z) * static_cast<std::size_t>(dims[1]) +
                static_cast<std::size_t>(y)) *
                   static_cast<std::size_t>(dims[0]) +
               static_cast<std::size_t>(x);
    }
    bool contains(int x, int y, int z) const noexcept {
        return x >= 0 && y >= 0 && z >= 0 && x < dims[0] && y < dims[1] && z < dims[2];
    }
    std::uint8_t operator()(int x, int y, int z) const { return data[index(x, y, z)]; }
    std::uint8_t &operator()(int x, int y, int z) { return data[index(x, y, z)]; }

    Mask2D slice(int z) const;
    void validate() const;
};

} // namespace slicerecon
