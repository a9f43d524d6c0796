#pragma once

#include <array>
#include <optional>

#include "slicerecon/types.hpp"

namespace slicerecon {

struct PrincipalAxes {
    std::array<Vec3, 3> axes{Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}}; // descending variance
    std::array<double, 3> variances{0.0, 0.0, 0.0};
    bool degenerate = false; // rank < 3, missing axes padded canonically
};

struct Extents {
    double L = 0.0, W = 0.0, T = 0.0; // mm, L >= W >= T
    bool degenerate = false;
};

/// Stacks slices without interpolation. Voxel spacing is (S, S, thickness)
/// with S taken from the argument or else from stack.scale; throws
/// UncalibratedStack when neither is available.
Volume3D stack_to_volume(const MaskStack &stack, std::optional<double> scale = std::nullopt);

/// Eigenvectors of the covariance of foreground voxel positions (mm), by
/// cyclic Jacobi. Each axis points along the positive direction of its
/// largest component; o3 = o1 x o2 keeps the frame right-handed.
PrincipalAxes pca_axes(const Volume3D &v);

/// max - min of foreground projections onto each axis, in axis order.
std::array<double, 3> axis_extents(const Volume3D &v, const PrincipalAxes &axes);

/// axis_extents sorted descending. Throws EmptyVolume.
Extents extents(const Volume3D &v, const PrincipalAxes &axes);

/// Foreground count * px * py * d / 1000.
double volume_cm3(const Volume3D &v);

std::size_t voxel_count(const Volume3D &v);

/// Symmetric 3x3 eigen-decomposition; eigenvalues descending, eigenvectors as
/// columns of `vectors` (vectors[row][col]).
void jacobi_eigen(std::array<std::array<double, 3>, 3> a, std::array<double, 3> &values,
                  std::array<std::array<double, 3>, 3> &vectors);

} // namespace slicerecon
