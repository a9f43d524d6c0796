#include "slicerecon/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "slicerecon/mask_ops.hpp"
#include "slicerecon/ocm.hpp"

namespace slicerecon {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finaliser over the combined word
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

ParameterBounds PhantomConfig::default_perturbation(int width, int height) {
    ParameterBounds b = ParameterBounds::standard(width, height);
    b.tx = {-0.1 * width, 0.1 * width};
    b.ty = {-0.1 * height, 0.1 * height};
    return b;
}

void PhantomConfig::validate() const {
    if (width < 4 || height < 4 || slices < 1) {
        throw Error(ErrorCode::InvalidConfig, "phantom needs at least a 4x4 canvas and one slice");
    }
    if (!(semi_a > 0.0) || !(semi_b > 0.0) || !(semi_c > 0.0)) {
        throw Error(ErrorCode::InvalidConfig, "degenerate phantom shape: semi-axes must be positive");
    }
    if (!(exponent > 0.0) || !(slice_thickness > 0.0) || !(spacing.x > 0.0) || !(spacing.y > 0.0)) {
        throw Error(ErrorCode::InvalidConfig, "phantom exponent, thickness and spacing must be positive");
    }
    if (!(nonrigid_amplitude >= 0.0) || field_control_spacing < 2) {
        throw Error(ErrorCode::InvalidConfig, "invalid nonrigid perturbation settings");
    }
    perturbation.validate();
    const ParameterBounds outer = ParameterBounds::standard(width, height);
    const auto inner = perturbation.as_array();
    const auto lim = outer.as_array();
    for (int k = 0; k < 4; ++k) {
        if (!inner[k]->lower || !inner[k]->upper) {
            throw Error(ErrorCode::InvalidConfig, "phantom perturbation bounds must be two-sided");
        }
        if (*inner[k]->lower < *lim[k]->lower - 1e-12 || *inner[k]->upper > *lim[k]->upper + 1e-12) {
            throw Error(ErrorCode::InvalidConfig, "phantom perturbation bounds exceed the registration bounds");
        }
    }
}

SimilarityTransform sample_transform(const ParameterBounds &bounds, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto draw = [&](const Bound &b) {
        if (!b.lower || !b.upper) {
            throw Error(ErrorCode::InvalidConfig, "sampling requires two-sided bounds");
        }
        if (b.fixed()) return *b.lower;
        std::uniform_real_distribution<double> d(*b.lower, *b.upper);
        return std::clamp(d(rng), *b.lower, *b.upper);
    };
    SimilarityTransform t;
    t.s = draw(bounds.s);
    t.theta = draw(bounds.theta);
    t.tx = draw(bounds.tx);
    t.ty = draw(bounds.ty);
    return t;
}

namespace {

double cubic_bspline(double t) {
    t = std::abs(t);
    if (t < 1.0) return (4.0 - 6.0 * t * t + 3.0 * t * t * t) / 6.0;
    if (t < 2.0) {
        const double r = 2.0 - t;
        return r * r * r / 6.0;
    }
    return 0.0;
}

/// Normalised superellipse radius of a physical offset; <= 1 means inside.
struct SliceShape {
    double a = 0.0, b = 0.0, r = 2.0;
    bool empty() const { return a <= 0.0 || b <= 0.0; }
    double radius(double X, double Y) const {
        if (empty()) return 2.0;
        return std::pow(std::pow(std::abs(X / a), r) + std::pow(std::abs(Y / b), r), 1.0 / r);
    }
};

SliceShape shape_at(const PhantomConfig &cfg, double z) {
    const double q = std::pow(std::abs(z / cfg.semi_c), cfg.exponent);
    if (q >= 1.0) return {0.0, 0.0, cfg.exponent};
    const double f = std::pow(1.0 - q, 1.0 / cfg.exponent);
    return {cfg.semi_a * f, cfg.semi_b * f, cfg.exponent};
}

float intensity_of(double rho) {
    if (rho > 1.0) return 0.0f;
    return static_cast<float>(0.3 + 0.6 * (1.0 - rho));
}

} // namespace

DisplacementField sample_smooth_field(int width, int height, double amplitude, std::uint64_t seed,
                                      int control_spacing) {
    if (!(amplitude >= 0.0)) {
        throw Error(ErrorCode::DomainError, "field amplitude must be nonnegative");
    }
    if (control_spacing < 1) {
        throw Error(ErrorCode::DomainError, "control spacing must be positive");
    }
    DisplacementField phi(width, height);
    if (amplitude == 0.0 || width == 0 || height == 0) return phi;

    const int nx = width / control_spacing + 4, ny = height / control_spacing + 4;
    std::vector<double> cu(std::size_t(nx) * ny), cv(cu.size());
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    for (std::size_t i = 0; i < cu.size(); ++i) {
        cu[i] = d(rng);
        cv[i] = d(rng);
    }
    double max_mag = 0.0;
    std::vector<double> fu(phi.size()), fv(phi.size());
    for (int y = 0; y < height; ++y) {
        const double gy = double(y) / control_spacing + 1.0;
        const int iy = static_cast<int>(std::floor(gy));
        for (int x = 0; x < width; ++x) {
            const double gx = double(x) / control_spacing + 1.0;
            const int ix = static_cast<int>(std::floor(gx));
            double su = 0.0, sv = 0.0;
            for (int j = iy - 1; j <= iy + 2; ++j) {
                const double wy = cubic_bspline(gy - j);
                for (int i = ix - 1; i <= ix + 2; ++i) {
                    const double w = wy * cubic_bspline(gx - i);
                    const std::size_t k = std::size_t(j) * nx + i;
                    su += w * cu[k];
                    sv += w * cv[k];
                }
            }
            fu[phi.index(x, y)] = su;
            fv[phi.index(x, y)] = sv;
            max_mag = std::max(max_mag, std::hypot(su, sv));
        }
    }
    const double scale = max_mag > 0.0 ? amplitude / max_mag : 0.0;
    for (std::size_t i = 0; i < phi.size(); ++i) {
        phi.u[i] = static_cast<float>(fu[i] * scale);
        phi.v[i] = static_cast<float>(fv[i] * scale);
    }
    // float rounding can nudge the largest vector a hair above the amplitude
    const double m = phi.max_magnitude();
    if (m > amplitude) {
        const float shrink = static_cast<float>(amplitude / m) * (1.0f - 1e-6f);
        for (std::size_t i = 0; i < phi.size(); ++i) {
            phi.u[i] *= shrink;
            phi.v[i] *= shrink;
        }
    }
    return phi;
}

Phantom generate_phantom(const PhantomConfig &cfg) {
    cfg.validate();
    Phantom ph;
    const int w = cfg.width, h = cfg.height;
    const Point2 c{(w - 1) * 0.5, (h - 1) * 0.5};
    for (MaskStack *s : {&ph.truth, &ph.perturbed}) {
        s->slice_thickness = cfg.slice_thickness;
        s->scale = std::nullopt;
    }
    ph.truth_intensity.slice_thickness = ph.perturbed_intensity.slice_thickness = cfg.slice_thickness;

    for (int k = 0; k < cfg.slices; ++k) {
        const double z = (k - (cfg.slices - 1) * 0.5) * cfg.slice_thickness;
        const SliceShape shape = shape_at(cfg, z);

        const SimilarityTransform gt =
            k == 0 ? SimilarityTransform::identity() : sample_transform(cfg.perturbation, mix_seed(cfg.seed, 2 * k));
        DisplacementField field = k == 0 ? DisplacementField(w, h)
                                         : sample_smooth_field(w, h, cfg.nonrigid_amplitude,
                                                               mix_seed(cfg.seed, 2 * k + 1), cfg.field_control_spacing);

        Mask2D truth(w, h, cfg.spacing), pert(w, h, cfg.spacing);
        Image2D truth_i(w, h, cfg.spacing), pert_i(w, h, cfg.spacing);
        const double cs = std::cos(gt.theta) * gt.s, sn = std::sin(gt.theta) * gt.s;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double rt = shape.radius((x - c.x) * cfg.spacing.x, (y - c.y) * cfg.spacing.y);
                truth(x, y) = rt <= 1.0;
                truth_i(x, y) = intensity_of(rt);

                // perturbed(p) = truth(gt(p + phi(p)))
                const std::size_t i = field.index(x, y);
                const double px = x + double(field.u[i]) - c.x, py = y + double(field.v[i]) - c.y;
                const double gx = cs * px - sn * py + gt.tx, gy = sn * px + cs * py + gt.ty;
                const double rp = shape.radius(gx * cfg.spacing.x, gy * cfg.spacing.y);
                pert(x, y) = rp <= 1.0;
                pert_i(x, y) = intensity_of(rp);
            }
        }
        ph.truth.slices.push_back(std::move(truth));
        ph.perturbed.slices.push_back(std::move(pert));
        ph.truth_intensity.slices.push_back(std::move(truth_i));
        ph.perturbed_intensity.slices.push_back(std::move(pert_i));
        ph.gt_transforms.push_back(gt);
        ph.gt_fields.push_back(std::move(field));
    }
    return ph;
}

std::vector<PhantomPair> phantom_pairs(const PhantomConfig &config, int count) {
    config.validate();
    if (count < 0) {
        throw Error(ErrorCode::InvalidConfig, "pair count must be nonnegative");
    }
    std::vector<PhantomPair> out;
    for (int i = 0; i < count; ++i) {
        std::mt19937_64 rng(mix_seed(config.seed, 1000 + i));
        std::uniform_real_distribution<double> jitter(0.8, 1.2);
        PhantomConfig c = config;
        c.seed = mix_seed(config.seed, 2000 + i);
        c.slices = 2;
        c.perturbation = ParameterBounds::identity();
        c.semi_a *= jitter(rng);
        c.semi_b *= jitter(rng);
        c.exponent *= jitter(rng);
        Phantom ph = generate_phantom(c);
        out.push_back({std::move(ph.truth_intensity.slices[1]), std::move(ph.perturbed_intensity.slices[1]),
                       std::move(ph.truth.slices[1]), std::move(ph.perturbed.slices[1]),
                       std::move(ph.gt_fields[1])});
    }
    return out;
}

Volume3D superellipsoid_volume(std::array<int, 3> dims, Vec3 spacing, Vec3 semi, double exponent) {
    if (!(semi.x > 0.0) || !(semi.y > 0.0) || !(semi.z > 0.0) || !(exponent > 0.0)) {
        throw Error(ErrorCode::InvalidConfig, "degenerate superellipsoid");
    }
    Volume3D v(dims[0], dims[1], dims[2], spacing);
    const double cx = (dims[0] - 1) * 0.5, cy = (dims[1] - 1) * 0.5, cz = (dims[2] - 1) * 0.5;
    for (int z = 0; z < dims[2]; ++z) {
        const double qz = std::pow(std::abs((z - cz) * spacing.z / semi.z), exponent);
        for (int y = 0; y < dims[1]; ++y) {
            const double qy = std::pow(std::abs((y - cy) * spacing.y / semi.y), exponent);
            for (int x = 0; x < dims[0]; ++x) {
                const double qx = std::pow(std::abs((x - cx) * spacing.x / semi.x), exponent);
                v(x, y, z) = qx + qy + qz <= 1.0;
            }
        }
    }
    return v;
}

double superellipsoid_volume_mm3(Vec3 semi, double exponent) {
    if (!(exponent > 0.0)) {
        throw Error(ErrorCode::InvalidConfig, "superellipsoid exponent must be positive");
    }
    const double g = std::tgamma(1.0 + 1.0 / exponent);
    return 8.0 * semi.x * semi.y * semi.z * g * g * g / std::tgamma(1.0 + 3.0 / exponent);
}

Image2D calibration_grid(const GridImageConfig &cfg) {
    if (cfg.width < 1 || cfg.height < 1 || !(cfg.line_spacing > 1.0)) {
        throw Error(ErrorCode::InvalidConfig, "invalid calibration grid settings");
    }
    Image2D img(cfg.width, cfg.height, Spacing{}, cfg.background);
    for (double gx = cfg.offset_x; gx < cfg.width; gx += cfg.line_spacing) {
        const int x = static_cast<int>(std::lround(gx));
        if (x < 0 || x >= cfg.width) continue;
        for (int y = 0; y < cfg.height; ++y) img(x, y) = cfg.line;
    }
    for (double gy = cfg.offset_y; gy < cfg.height; gy += cfg.line_spacing) {
        const int y = static_cast<int>(std::lround(gy));
        if (y < 0 || y >= cfg.height) continue;
        for (int x = 0; x < cfg.width; ++x) img(x, y) = cfg.line;
    }
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (auto &v : img.data()) {
        if (u01(rng) < cfg.noise_fraction) v = static_cast<float>(u01(rng));
    }
    return img;
}

} // namespace slicerecon
