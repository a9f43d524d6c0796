#include "slicerecon/volume.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace slicerecon {

namespace {

Vec3 cross(Vec3 a, Vec3 b) { return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x}; }
double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
Vec3 scaled(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
Vec3 minus(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 normalized(Vec3 a) { return scaled(a, 1.0 / std::sqrt(dot(a, a))); }

Vec3 canonical(int k) { return k == 0 ? Vec3{1, 0, 0} : k == 1 ? Vec3{0, 1, 0} : Vec3{0, 0, 1}; }

void fix_sign(Vec3 &a) {
    const double c[3] = {a.x, a.y, a.z};
    int k = 0;
    for (int i = 1; i < 3; ++i) {
        if (std::abs(c[i]) > std::abs(c[k]) + 1e-12) k = i;
    }
    if (c[k] < 0) a = scaled(a, -1.0);
}

template <class F>
void for_each_voxel(const Volume3D &v, F &&f) {
    for (int z = 0; z < v.dims[2]; ++z) {
        for (int y = 0; y < v.dims[1]; ++y) {
            for (int x = 0; x < v.dims[0]; ++x) {
                if (v(x, y, z)) f(Vec3{x * v.spacing.x, y * v.spacing.y, z * v.spacing.z});
            }
        }
    }
}

} // namespace

Volume3D stack_to_volume(const MaskStack &stack, std::optional<double> scale) {
    stack.validate();
    const std::optional<double> s = scale ? scale : stack.scale;
    if (!s) {
        throw Error(ErrorCode::UncalibratedStack, "no scale factor available for the stack");
    }
    if (!(*s > 0.0) || !std::isfinite(*s)) {
        throw Error(ErrorCode::UncalibratedStack, "scale factor must be positive");
    }
    const int w = stack[0].width(), h = stack[0].height(), n = static_cast<int>(stack.size());
    Volume3D v(w, h, n, Vec3{*s, *s, stack.slice_thickness});
    for (int z = 0; z < n; ++z) {
        const auto src = stack[z].data();
        std::copy(src.begin(), src.end(), v.data.begin() + std::ptrdiff_t(z) * w * h);
    }
    return v;
}

void jacobi_eigen(std::array<std::array<double, 3>, 3> a, std::array<double, 3> &values,
                  std::array<std::array<double, 3>, 3> &vectors) {
    std::array<std::array<double, 3>, 3> V{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
    const double scale = std::max({std::abs(a[0][0]), std::abs(a[1][1]), std::abs(a[2][2]), 1e-300});
    for (int sweep = 0; sweep < 100; ++sweep) {
        const double off = std::abs(a[0][1]) + std::abs(a[0][2]) + std::abs(a[1][2]);
        if (off <= 1e-12 * scale) break;
        for (int p = 0; p < 2; ++p) {
            for (int q = p + 1; q < 3; ++q) {
                if (a[p][q] == 0.0) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (int k = 0; k < 3; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (int k = 0; k < 3; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (int k = 0; k < 3; ++k) {
                    const double vkp = V[k][p], vkq = V[k][q];
                    V[k][p] = c * vkp - s * vkq;
                    V[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return a[i][i] > a[j][j]; });
    for (int c = 0; c < 3; ++c) {
        values[c] = a[order[c]][order[c]];
        for (int r = 0; r < 3; ++r) vectors[r][c] = V[r][order[c]];
    }
}

PrincipalAxes pca_axes(const Volume3D &v) {
    v.validate();
    std::size_t n = 0;
    Vec3 mean;
    for_each_voxel(v, [&](Vec3 p) {
        ++n;
        mean = {mean.x + p.x, mean.y + p.y, mean.z + p.z};
    });
    PrincipalAxes out;
    if (n == 0) {
        throw Error(ErrorCode::EmptyVolume, "PCA of an empty volume");
    }
    mean = scaled(mean, 1.0 / double(n));
    std::array<std::array<double, 3>, 3> cov{};
    for_each_voxel(v, [&](Vec3 p) {
        const double d[3] = {p.x - mean.x, p.y - mean.y, p.z - mean.z};
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) cov[r][c] += d[r] * d[c];
        }
    });
    for (auto &row : cov) {
        for (auto &x : row) x /= double(n);
    }
    std::array<double, 3> values;
    std::array<std::array<double, 3>, 3> vec;
    jacobi_eigen(cov, values, vec);
    out.variances = values;

    const double tol = 1e-9 * std::max(values[0], 1e-300);
    const int rank = n < 2 ? 0 : static_cast<int>(std::count_if(values.begin(), values.end(), [&](double e) {
        return e > tol;
    }));
    for (int c = 0; c < 3; ++c) out.axes[c] = Vec3{vec[0][c], vec[1][c], vec[2][c]};
    if (rank < 3) {
        out.degenerate = true;
        // keep the well-defined axes, pad the rest from the canonical basis
        std::array<Vec3, 3> basis;
        int have = 0;
        for (int c = 0; c < rank; ++c) basis[have++] = normalized(out.axes[c]);
        for (int k = 0; k < 3 && have < 2; ++k) {
            Vec3 cand = canonical(k);
            for (int j = 0; j < have; ++j) cand = minus(cand, scaled(basis[j], dot(cand, basis[j])));
            if (dot(cand, cand) > 1e-6) basis[have++] = normalized(cand);
        }
        out.axes[0] = basis[0];
        out.axes[1] = basis[1];
        for (int c = rank; c < 3; ++c) out.variances[c] = std::max(0.0, out.variances[c]);
    }
    fix_sign(out.axes[0]);
    fix_sign(out.axes[1]);
    out.axes[2] = normalized(cross(out.axes[0], out.axes[1]));
    return out;
}

std::array<double, 3> axis_extents(const Volume3D &v, const PrincipalAxes &axes) {
    std::array<double, 3> lo, hi;
    lo.fill(std::numeric_limits<double>::infinity());
    hi.fill(-std::numeric_limits<double>::infinity());
    bool any = false;
    for_each_voxel(v, [&](Vec3 p) {
        any = true;
        for (int k = 0; k < 3; ++k) {
            const double d = dot(p, axes.axes[k]);
            lo[k] = std::min(lo[k], d);
            hi[k] = std::max(hi[k], d);
        }
    });
    if (!any) {
        throw Error(ErrorCode::EmptyVolume, "extents of an empty volume");
    }
    return {hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]};
}

Extents extents(const Volume3D &v, const PrincipalAxes &axes) {
    auto e = axis_extents(v, axes);
    std::sort(e.begin(), e.end(), std::greater<>());
    Extents out{e[0], e[1], e[2], axes.degenerate || e[2] <= 0.0};
    return out;
}

std::size_t voxel_count(const Volume3D &v) {
    return static_cast<std::size_t>(std::count_if(v.data.begin(), v.data.end(), [](std::uint8_t b) { return b != 0; }));
}

double volume_cm3(const Volume3D &v) {
    return static_cast<double>(voxel_count(v)) * v.spacing.x * v.spacing.y * v.spacing.z / 1000.0;
}

} // namespace slicerecon
