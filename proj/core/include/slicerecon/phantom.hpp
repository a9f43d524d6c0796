#pragma once

#include <cstdint>
#include <vector>

#include "slicerecon/field.hpp"
#include "slicerecon/types.hpp"

namespace slicerecon {

/// Stack of superellipse cross-sections of a superellipsoid
/// |x/a|^r + |y/b|^r + |z/c|^r <= 1, sampled at slice centres, plus random
/// similarity and smooth nonrigid perturbations of every slice but the first.
struct PhantomConfig {
    int width = 128;
    int height = 128;
    int slices = 10;
    Spacing spacing{0.5, 0.5};   // mm / px
    double slice_thickness = 10.0; // mm
    double semi_a = 16.0;          // mm, along x
    double semi_b = 10.0;          // mm, along y
    double semi_c = 200.0;         // mm, axial half length
    double exponent = 2.5;
    /// Sampled correcting transforms (the slice is perturbed by the inverse).
    ParameterBounds perturbation = default_perturbation(128, 128);
    double nonrigid_amplitude = 0.0; // px
    int field_control_spacing = 32;  // px between B-spline control points
    std::uint64_t seed = 1;

    /// s in [0.8, 1.2], theta in [-45, 45] degrees, translations within 10% of the canvas.
    static ParameterBounds default_perturbation(int width, int height);
    void validate() const;
};

struct Phantom {
    MaskStack truth;
    MaskStack perturbed;
    /// Continuous renderings of the same geometry (for intensity metrics).
    ImageStack truth_intensity;
    ImageStack perturbed_intensity;
    std::vector<SimilarityTransform> gt_transforms; // [0] is identity
    std::vector<DisplacementField> gt_fields;       // [0] is zero
};

Phantom generate_phantom(const PhantomConfig &config);

/// Cubic B-spline interpolated random field rescaled so max |phi| equals the
/// amplitude (all zeros for amplitude 0).
DisplacementField sample_smooth_field(int width, int height, double amplitude, std::uint64_t seed,
                                      int control_spacing = 32);

/// Uniform sample inside fully two-sided bounds.
SimilarityTransform sample_transform(const ParameterBounds &bounds, std::uint64_t seed);

struct PhantomPair {
    Image2D fixed;
    Image2D moving;
    Mask2D fixed_mask;
    Mask2D moving_mask;
    DisplacementField field; // moving(p) = fixed-geometry(p + field(p))
};

/// Pre-aligned pairs: a cross-section and a copy deformed by a smooth field
/// only. Shape axes and exponent vary per pair by up to +-20%.
std::vector<PhantomPair> phantom_pairs(const PhantomConfig &config, int count);

/// Superellipsoid rendered on a voxel grid centred in the volume.
Volume3D superellipsoid_volume(std::array<int, 3> dims, Vec3 spacing, Vec3 semi_axes, double exponent);

/// Closed-form volume in mm^3: 8abc Gamma(1 + 1/r)^3 / Gamma(1 + 3/r).
double superellipsoid_volume_mm3(Vec3 semi_axes, double exponent);

struct GridImageConfig {
    int width = 256;
    int height = 256;
    double line_spacing = 50.0; // px
    double offset_x = 13.0;     // px position of the first vertical line
    double offset_y = 21.0;
    float background = 0.85f;
    float line = 0.15f;
    double noise_fraction = 0.02; // pixels replaced with uniform noise
    std::uint64_t seed = 7;
};

/// Synthetic calibration sheet: one-pixel dark lines on a bright background.
Image2D calibration_grid(const GridImageConfig &config);

/// Stateless 64-bit mixer used to derive per-slice seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

} // namespace slicerecon
