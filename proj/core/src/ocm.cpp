#include "slicerecon/ocm.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "slicerecon/mask_ops.hpp"
#include "slicerecon/sampling.hpp"

namespace slicerecon {

namespace {

/// Inverse similarity map q -> source position, precomputed as an affine map.
struct PullBack {
    double a, b, cx, cy, tx, ty;

    PullBack(const SimilarityTransform &t, Point2 c)
        : a(std::cos(t.theta) / t.s), b(std::sin(t.theta) / t.s), cx(c.x), cy(c.y), tx(t.tx), ty(t.ty) {}

    Point2 operator()(double qx, double qy) const {
        const double dx = qx - cx - tx, dy = qy - cy - ty;
        return {a * dx + b * dy + cx, -b * dx + a * dy + cy};
    }
};

struct Box {
    int x0, y0, x1, y1; // inclusive; empty when x0 > x1
    bool empty() const { return x0 > x1 || y0 > y1; }
};

Box foreground_box(const Image2D &img) {
    Box b{img.width(), img.height(), -1, -1};
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            if (img(x, y) != 0.0f) {
                b.x0 = std::min(b.x0, x);
                b.y0 = std::min(b.y0, y);
                b.x1 = std::max(b.x1, x);
                b.y1 = std::max(b.y1, y);
            }
        }
    }
    return b;
}

Box forward_box(const Box &src, const SimilarityTransform &t, Point2 c, int w, int h) {
    if (src.empty()) return src;
    const double cs = std::cos(t.theta) * t.s, sn = std::sin(t.theta) * t.s;
    double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
    // bilinear support reaches one pixel beyond the foreground
    for (double px : {src.x0 - 1.0, src.x1 + 1.0}) {
        for (double py : {src.y0 - 1.0, src.y1 + 1.0}) {
            const double dx = px - c.x, dy = py - c.y;
            const double qx = cs * dx - sn * dy + c.x + t.tx;
            const double qy = sn * dx + cs * dy + c.y + t.ty;
            x0 = std::min(x0, qx);
            y0 = std::min(y0, qy);
            x1 = std::max(x1, qx);
            y1 = std::max(y1, qy);
        }
    }
    return {std::max(0, int(std::floor(x0))), std::max(0, int(std::floor(y0))),
            std::min(w - 1, int(std::ceil(x1))), std::min(h - 1, int(std::ceil(y1)))};
}

double ssd_over(const Image2D &prev, const Image2D &cur, const SimilarityTransform &t, const Box &box) {
    const PullBack map(t, image_center(cur));
    double sum = 0.0;
    for (int y = box.y0; y <= box.y1; ++y) {
        for (int x = box.x0; x <= box.x1; ++x) {
            const Point2 p = map(x, y);
            const double d = double(prev(x, y)) - detail::bilinear(cur, p.x, p.y);
            sum += d * d;
        }
    }
    return sum;
}

double ssd_impl(const Image2D &prev, const Image2D &cur, const SimilarityTransform &t, SsdRegion region,
                const Box &prev_box, const Box &cur_box) {
    const int w = prev.width(), h = prev.height();
    if (region == SsdRegion::FullCanvas) {
        return ssd_over(prev, cur, t, Box{0, 0, w - 1, h - 1});
    }
    const Box fb = forward_box(cur_box, t, image_center(cur), w, h);
    Box u = prev_box;
    if (u.empty()) {
        u = fb;
    } else if (!fb.empty()) {
        u = {std::min(u.x0, fb.x0), std::min(u.y0, fb.y0), std::max(u.x1, fb.x1), std::max(u.y1, fb.y1)};
    }
    if (u.empty()) return 0.0;
    return ssd_over(prev, cur, t, u);
}

constexpr int kParams = 4;

std::array<double, kParams> as_params(const SimilarityTransform &t) { return {t.s, t.theta, t.tx, t.ty}; }
SimilarityTransform from_params(const std::array<double, kParams> &p) { return {p[0], p[1], p[2], p[3]}; }

} // namespace

// ---------------------------------------------------------------------------

Image2D warp_similarity(const Image2D &img, const SimilarityTransform &t) {
    t.validate();
    if (t.is_identity()) return img;
    Image2D out(img.width(), img.height(), img.spacing());
    const PullBack map(t, image_center(img));
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            const Point2 p = map(x, y);
            out(x, y) = static_cast<float>(std::clamp(detail::bilinear(img, p.x, p.y), 0.0, 1.0));
        }
    }
    return out;
}

Mask2D warp_similarity(const Mask2D &m, const SimilarityTransform &t) {
    t.validate();
    if (t.is_identity()) return m;
    Mask2D out(m.width(), m.height(), m.spacing());
    const PullBack map(t, image_center(m));
    for (int y = 0; y < m.height(); ++y) {
        for (int x = 0; x < m.width(); ++x) {
            const Point2 p = map(x, y);
            out(x, y) = m.at_or(detail::round_half_up(p.x), detail::round_half_up(p.y));
        }
    }
    return out;
}

double ssd_objective(const Image2D &prev, const Image2D &cur, const SimilarityTransform &t, SsdRegion region) {
    require_same_shape(prev, cur, "ssd_objective");
    t.validate();
    const Box pb = region == SsdRegion::ForegroundBoxes ? foreground_box(prev) : Box{};
    const Box cb = region == SsdRegion::ForegroundBoxes ? foreground_box(cur) : Box{};
    return ssd_impl(prev, cur, t, region, pb, cb);
}

// ---------------------------------------------------------------------------

double bound_to_unbounded(double x, const Bound &b) {
    if (!std::isfinite(x) || !b.contains(x)) {
        throw Error(ErrorCode::OutOfBounds, "parameter value " + std::to_string(x) + " lies outside its bounds");
    }
    if (b.lower && b.upper) {
        const double span = *b.upper - *b.lower;
        if (span == 0.0) return 0.0;
        const double r = std::clamp(2.0 * (x - *b.lower) / span - 1.0, -1.0, 1.0);
        return std::asin(r);
    }
    if (b.lower) return std::sqrt(x - *b.lower);
    if (b.upper) return std::sqrt(*b.upper - x);
    return x;
}

double unbounded_to_bound(double x_trans, const Bound &b) {
    if (b.lower && b.upper) {
        const double span = *b.upper - *b.lower;
        const double x = *b.lower + span * (std::sin(x_trans) + 1.0) * 0.5;
        return std::clamp(x, *b.lower, *b.upper);
    }
    if (b.lower) return *b.lower + x_trans * x_trans;
    if (b.upper) return *b.upper - x_trans * x_trans;
    return x_trans;
}

// ---------------------------------------------------------------------------

Mask2D local_mask_scaling(const Mask2D &m, int radius, MorphMode mode) {
    if (radius < 0) {
        throw Error(ErrorCode::DomainError, "structuring element radius must be nonnegative");
    }
    if (radius == 0) return m;
    std::vector<std::pair<int, int>> disk;
    for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
            if (dx * dx + dy * dy <= radius * radius) disk.emplace_back(dx, dy);
        }
    }
    Mask2D out(m.width(), m.height(), m.spacing());
    for (int y = 0; y < m.height(); ++y) {
        for (int x = 0; x < m.width(); ++x) {
            if (mode == MorphMode::Erode) {
                bool all = true;
                for (auto [dx, dy] : disk) {
                    if (!m.at_or(x + dx, y + dy)) {
                        all = false;
                        break;
                    }
                }
                out(x, y) = all;
            } else {
                bool any = false;
                for (auto [dx, dy] : disk) {
                    if (m.at_or(x + dx, y + dy)) {
                        any = true;
                        break;
                    }
                }
                out(x, y) = any;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

PairResult optimize_pair(const Image2D &prev, const Image2D &cur, const ParameterBounds &bounds,
                         const OcmOptions &opts) {
    require_same_shape(prev, cur, "optimize_pair");
    bounds.validate();
    if (opts.restarts < 1) {
        throw Error(ErrorCode::InvalidConfig, "at least one optimizer start is required");
    }

    const auto barr = bounds.as_array();
    const Box pb = opts.region == SsdRegion::ForegroundBoxes ? foreground_box(prev) : Box{};
    const Box cb = opts.region == SsdRegion::ForegroundBoxes ? foreground_box(cur) : Box{};
    auto objective = [&](const SimilarityTransform &t) { return ssd_impl(prev, cur, t, opts.region, pb, cb); };

    // The identity guess, clamped into the feasible box.
    std::array<double, kParams> base = as_params(SimilarityTransform::identity());
    for (int k = 0; k < kParams; ++k) base[k] = barr[k]->clamp(base[k]);

    std::vector<int> free_idx;
    for (int k = 0; k < kParams; ++k) {
        if (!barr[k]->fixed()) free_idx.push_back(k);
    }

    const std::array<double, kParams> steps = {opts.step_s, opts.step_theta, opts.step_translation * cur.width(),
                                               opts.step_translation * cur.height()};

    // Deterministic starting points: identity, then rotated and rescaled guesses.
    constexpr double deg = std::numbers::pi / 180.0;
    const std::array<std::array<double, kParams>, 4> offsets = {{
        {0.0, 20.0 * deg, 0.0, 0.0},
        {0.0, -20.0 * deg, 0.0, 0.0},
        {0.1, 0.0, 0.0, 0.0},
        {-0.1, 0.0, 0.0, 0.0},
    }};

    const auto to_physical = [&](std::span<const double> z, std::array<double, kParams> p) {
        for (std::size_t j = 0; j < free_idx.size(); ++j) {
            p[free_idx[j]] = unbounded_to_bound(z[j], *barr[free_idx[j]]);
        }
        return p;
    };

    PairResult result;
    result.initial_objective = objective(from_params(base));
    result.transform = from_params(base);
    result.objective = result.initial_objective;
    result.converged = free_idx.empty();
    result.evaluations = 1;
    if (free_idx.empty()) return result;

    bool have_best = false;
    for (int r = 0; r < opts.restarts; ++r) {
        std::array<double, kParams> start = base;
        if (r > 0) {
            const auto &off = offsets[static_cast<std::size_t>(r - 1) % offsets.size()];
            const double mult = 1.0 + static_cast<double>((r - 1) / offsets.size());
            for (int k = 0; k < kParams; ++k) start[k] = barr[k]->clamp(base[k] + mult * off[k]);
        }
        std::vector<double> z0(free_idx.size());
        for (std::size_t j = 0; j < free_idx.size(); ++j) {
            z0[j] = bound_to_unbounded(start[free_idx[j]], *barr[free_idx[j]]);
        }
        std::vector<std::vector<double>> simplex{z0};
        for (std::size_t j = 0; j < free_idx.size(); ++j) {
            const int k = free_idx[j];
            const Bound &b = *barr[k];
            double x1 = start[k] + steps[k];
            if (!b.contains(x1)) x1 = start[k] - steps[k];
            x1 = b.clamp(x1);
            std::vector<double> z = z0;
            z[j] = bound_to_unbounded(x1, b);
            if (z[j] == z0[j]) z[j] = z0[j] + 1e-3;
            simplex.push_back(std::move(z));
        }

        const auto nm = nelder_mead(
            [&](std::span<const double> z) { return objective(from_params(to_physical(z, start))); }, simplex,
            opts.simplex);
        result.evaluations += nm.evaluations;

        const SimilarityTransform cand = from_params(to_physical(nm.x, start));
        if (nm.f > result.initial_objective) continue; // never worse than the identity guess
        const double tol = 1e-9 * std::max(1.0, std::abs(result.objective));
        const bool better = nm.f < result.objective - tol;
        const bool tie = std::abs(nm.f - result.objective) <= tol &&
                         std::hypot(cand.tx, cand.ty) < std::hypot(result.transform.tx, result.transform.ty);
        if (!have_best || better || tie) {
            result.transform = cand;
            result.objective = nm.f;
            result.converged = nm.converged;
            have_best = true;
        }
    }
    return result;
}

namespace {

template <class R, class ToImage, class Post>
OcmResult<R> register_impl(const SliceStack<R> &stack, const ParameterBounds &bounds, const OcmOptions &opts,
                           ToImage to_img, Post post) {
    stack.validate();
    const int n = static_cast<int>(stack.size());
    if (n < 2) {
        throw Error(ErrorCode::InsufficientSlices, "registration needs at least two slices");
    }
    if (opts.reference_index < 0 || opts.reference_index >= n) {
        throw Error(ErrorCode::InvalidConfig, "reference slice index out of range");
    }
    OcmResult<R> res;
    res.transforms.assign(n, SimilarityTransform::identity());
    res.objective_trace.assign(n, 0.0);
    res.converged.assign(n, true);
    res.aligned.slice_thickness = stack.slice_thickness;
    res.aligned.scale = stack.scale;
    res.aligned.slices.assign(stack.slices.begin(), stack.slices.end());

    const int ref = opts.reference_index;
    auto step = [&](int i, int neighbour) {
        try {
            const PairResult pr = optimize_pair(to_img(res.aligned.slices[neighbour]), to_img(stack.slices[i]),
                                                bounds, opts);
            res.transforms[i] = pr.transform;
            res.objective_trace[i] = pr.objective;
            res.converged[i] = pr.converged;
            res.aligned.slices[i] = post(warp_similarity(stack.slices[i], pr.transform));
        } catch (const Error &e) {
            throw Error(e.code(), "slice " + std::to_string(i) + ": " + e.what());
        }
    };
    for (int i = ref + 1; i < n; ++i) step(i, i - 1);
    for (int i = ref - 1; i >= 0; --i) step(i, i + 1);
    return res;
}

} // namespace

OcmResult<Image2D> register_stack(const ImageStack &stack, const ParameterBounds &bounds, const OcmOptions &opts) {
    return register_impl(
        stack, bounds, opts, [](const Image2D &img) -> const Image2D & { return img; },
        [](Image2D img) { return img; });
}

OcmResult<Mask2D> register_stack(const MaskStack &stack, const ParameterBounds &bounds, const OcmOptions &opts) {
    return register_impl(
        stack, bounds, opts, [](const Mask2D &m) { return to_image(m); },
        [&](Mask2D m) {
            if (opts.mask_scaling) return local_mask_scaling(m, opts.mask_scaling->radius, opts.mask_scaling->mode);
            return m;
        });
}

} // namespace slicerecon
