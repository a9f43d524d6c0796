#include "slicerecon/refine.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "slicerecon/mask_ops.hpp"
#include "slicerecon/predictor.hpp"
#include "slicerecon/sampling.hpp"

namespace slicerecon {

namespace {

constexpr double kFlatVariance = 1e-10;

/// Window sums clipped to the canvas, via a summed-area table.
class BoxSum {
public:
    BoxSum(int w, int h, int radius) : w_(w), h_(h), r_(radius), table_(std::size_t(w + 1) * (h + 1)) {}

    void operator()(const std::vector<double> &src, std::vector<double> &dst) {
        for (int y = 0; y < h_; ++y) {
            double row = 0.0;
            for (int x = 0; x < w_; ++x) {
                row += src[std::size_t(y) * w_ + x];
                table_[std::size_t(y + 1) * (w_ + 1) + x + 1] = table_[std::size_t(y) * (w_ + 1) + x + 1] + row;
            }
        }
        dst.resize(src.size());
        for (int y = 0; y < h_; ++y) {
            const int y0 = std::max(0, y - r_), y1 = std::min(h_ - 1, y + r_);
            for (int x = 0; x < w_; ++x) {
                const int x0 = std::max(0, x - r_), x1 = std::min(w_ - 1, x + r_);
                dst[std::size_t(y) * w_ + x] = at(x1 + 1, y1 + 1) - at(x0, y1 + 1) - at(x1 + 1, y0) + at(x0, y0);
            }
        }
    }

    double count(int x, int y) const {
        const int y0 = std::max(0, y - r_), y1 = std::min(h_ - 1, y + r_);
        const int x0 = std::max(0, x - r_), x1 = std::min(w_ - 1, x + r_);
        return double(x1 - x0 + 1) * double(y1 - y0 + 1);
    }

private:
    double at(int x, int y) const { return table_[std::size_t(y) * (w_ + 1) + x]; }

    int w_, h_, r_;
    std::vector<double> table_;
};

struct NccResult {
    double value = 0.0;
    std::vector<double> grad; // d value / d b(q), empty unless requested
};

NccResult ncc_impl(std::span<const double> a, std::span<const double> b, int w, int h, int window, bool want_grad) {
    if (window < 1 || window % 2 == 0) {
        throw Error(ErrorCode::DomainError, "NCC window must be a positive odd number");
    }
    const std::size_t n = a.size();
    BoxSum box(w, h, window / 2);
    std::vector<double> aa(n), bb(n), ab(n), sa, sb, saa, sbb, sab;
    for (std::size_t i = 0; i < n; ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    const std::vector<double> av(a.begin(), a.end()), bv(b.begin(), b.end());
    box(av, sa);
    box(bv, sb);
    box(aa, saa);
    box(bb, sbb);
    box(ab, sab);

    std::vector<double> alpha, alpha_mu, beta, beta_mu;
    if (want_grad) {
        alpha.assign(n, 0.0);
        alpha_mu.assign(n, 0.0);
        beta.assign(n, 0.0);
        beta_mu.assign(n, 0.0);
    }
    double sum = 0.0;
    std::size_t counted = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t i = std::size_t(y) * w + x;
            const double cnt = box.count(x, y);
            const double va = std::max(0.0, saa[i] - sa[i] * sa[i] / cnt);
            const double vb = std::max(0.0, sbb[i] - sb[i] * sb[i] / cnt);
            if (va < kFlatVariance * cnt) continue;
            ++counted;
            if (vb < kFlatVariance * cnt) continue;
            const double cross = sab[i] - sa[i] * sb[i] / cnt;
            const double inv = 1.0 / std::sqrt(va * vb);
            const double cc = cross * inv;
            sum += cc;
            if (want_grad) {
                alpha[i] = inv;
                alpha_mu[i] = inv * sa[i] / cnt;
                beta[i] = cc / vb;
                beta_mu[i] = beta[i] * sb[i] / cnt;
            }
        }
    }
    NccResult res;
    if (counted == 0) {
        if (want_grad) res.grad.assign(n, 0.0);
        return res;
    }
    res.value = sum / static_cast<double>(counted);
    if (want_grad) {
        std::vector<double> s_alpha, s_alpha_mu, s_beta, s_beta_mu;
        box(alpha, s_alpha);
        box(alpha_mu, s_alpha_mu);
        box(beta, s_beta);
        box(beta_mu, s_beta_mu);
        res.grad.resize(n);
        const double norm = 1.0 / static_cast<double>(counted);
        for (std::size_t i = 0; i < n; ++i) {
            res.grad[i] = norm * (a[i] * s_alpha[i] - s_alpha_mu[i] - b[i] * s_beta[i] + s_beta_mu[i]);
        }
    }
    return res;
}

double smoothness_impl(std::span<const double> u, std::span<const double> v, int w, int h, std::span<double> gu,
                       std::span<double> gv) {
    const bool want = !gu.empty();
    const double nx = double(w - 1) * h, ny = double(w) * (h - 1);
    double total = 0.0;
    auto channel = [&](std::span<const double> c, std::span<double> g) {
        double sx = 0.0, sy = 0.0;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const std::size_t i = std::size_t(y) * w + x;
                if (x + 1 < w) {
                    const double d = c[i + 1] - c[i];
                    sx += d * d;
                    if (want) {
                        g[i + 1] += d / nx;
                        g[i] -= d / nx;
                    }
                }
                if (y + 1 < h) {
                    const double d = c[i + w] - c[i];
                    sy += d * d;
                    if (want) {
                        g[i + w] += d / ny;
                        g[i] -= d / ny;
                    }
                }
            }
        }
        return (nx > 0 ? sx / nx : 0.0) + (ny > 0 ? sy / ny : 0.0);
    };
    total += channel(u, gu);
    total += channel(v, gv);
    return 0.5 * total;
}

std::vector<double> as_doubles(const Image2D &img) { return {img.data().begin(), img.data().end()}; }

std::vector<double> gaussian_kernel(double sigma) {
    const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * r + 1);
    double ks = 0.0;
    for (int i = -r; i <= r; ++i) ks += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto &x : k) x /= ks;
    return k;
}

/// Separable Gaussian with clamp-to-edge borders.
void blur_in_place(std::vector<double> &buf, int w, int h, double sigma) {
    const auto k = gaussian_kernel(sigma);
    const int r = static_cast<int>(k.size() / 2);
    std::vector<double> tmp(buf.size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int i = -r; i <= r; ++i) s += k[i + r] * buf[std::size_t(y) * w + std::clamp(x + i, 0, w - 1)];
            tmp[std::size_t(y) * w + x] = s;
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int i = -r; i <= r; ++i) s += k[i + r] * tmp[std::size_t(std::clamp(y + i, 0, h - 1)) * w + x];
            buf[std::size_t(y) * w + x] = s;
        }
    }
}

} // namespace

void RefineConfig::validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) {
        throw Error(ErrorCode::InvalidConfig, "lambda must be positive");
    }
    if (window < 3 || window % 2 == 0) {
        throw Error(ErrorCode::InvalidConfig, "NCC window must be odd and at least 3");
    }
    if (steps < 0 || !(step_size > 0.0) || !(presmooth_sigma >= 0.0) || !(gradient_sigma >= 0.0)) {
        throw Error(ErrorCode::InvalidConfig, "invalid refinement step settings");
    }
}

double local_ncc(const Image2D &a, const Image2D &b, int window) {
    require_same_shape(a, b, "local_ncc");
    const auto av = as_doubles(a), bv = as_doubles(b);
    return ncc_impl(av, bv, a.width(), a.height(), window, false).value;
}

double smoothness(const DisplacementField &phi) {
    const std::vector<double> u(phi.u.begin(), phi.u.end()), v(phi.v.begin(), phi.v.end());
    return smoothness_impl(u, v, phi.width, phi.height, {}, {});
}

double loss_us(const Image2D &fixed, const Image2D &moving, const DisplacementField &phi, double lambda, int window) {
    require_same_shape(fixed, moving, "loss_us");
    const Image2D warped = warp_dense(moving, phi);
    return -local_ncc(fixed, warped, window) + lambda * smoothness(phi);
}

LossKernel::LossKernel(Image2D fixed, Image2D moving, double lambda, int window)
    : fixed_(std::move(fixed)), moving_(std::move(moving)), lambda_(lambda), window_(window) {
    require_same_shape(fixed_, moving_, "LossKernel");
}

LossTerms LossKernel::evaluate(std::span<const double> u, std::span<const double> v, std::span<double> grad_u,
                               std::span<double> grad_v) const {
    const int w = fixed_.width(), h = fixed_.height();
    const std::size_t n = std::size_t(w) * h;
    if (u.size() != n || v.size() != n) {
        throw Error(ErrorCode::ShapeError, "field size does not match the images");
    }
    const bool want = !grad_u.empty();
    if (want && (grad_u.size() != n || grad_v.size() != n)) {
        throw Error(ErrorCode::ShapeError, "gradient buffers do not match the images");
    }

    std::vector<double> warped(n), dmx, dmy;
    if (want) {
        dmx.resize(n);
        dmy.resize(n);
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t i = std::size_t(y) * w + x;
            const auto s = detail::bilinear_grad(moving_, x + u[i], y + v[i]);
            warped[i] = s.value;
            if (want) {
                dmx[i] = s.dx;
                dmy[i] = s.dy;
            }
        }
    }
    const auto fv = as_doubles(fixed_);
    const NccResult ncc = ncc_impl(fv, warped, w, h, window_, want);

    LossTerms t;
    t.ncc = ncc.value;
    if (want) {
        std::fill(grad_u.begin(), grad_u.end(), 0.0);
        std::fill(grad_v.begin(), grad_v.end(), 0.0);
    }
    t.smooth = smoothness_impl(u, v, w, h, grad_u, grad_v);
    t.loss = -t.ncc + lambda_ * t.smooth;
    if (want) {
        for (std::size_t i = 0; i < n; ++i) {
            grad_u[i] = lambda_ * grad_u[i] - ncc.grad[i] * dmx[i];
            grad_v[i] = lambda_ * grad_v[i] - ncc.grad[i] * dmy[i];
        }
    }
    return t;
}

Image2D gaussian_blur(const Image2D &img, double sigma) {
    if (sigma <= 0.0) return img;
    auto buf = as_doubles(img);
    blur_in_place(buf, img.width(), img.height(), sigma);
    Image2D out(img.width(), img.height(), img.spacing());
    for (std::size_t i = 0; i < buf.size(); ++i) out.data()[i] = static_cast<float>(std::clamp(buf[i], 0.0, 1.0));
    return out;
}

Image2D refine_input(const Image2D &img, const RefineConfig &cfg) { return gaussian_blur(img, cfg.presmooth_sigma); }

VariationalResult refine_variational(const Image2D &fixed, const Image2D &moving, const RefineConfig &cfg) {
    cfg.validate();
    require_same_shape(fixed, moving, "refine_variational");
    auto finite = [](const Image2D &img) {
        return std::all_of(img.data().begin(), img.data().end(), [](float x) { return std::isfinite(x); });
    };
    if (!finite(fixed) || !finite(moving)) {
        throw Error(ErrorCode::NumericalDivergence, "nonfinite input, loss undefined at iteration 0");
    }
    const int w = fixed.width(), h = fixed.height();
    const std::size_t n = std::size_t(w) * h;
    const LossKernel kernel(refine_input(fixed, cfg), refine_input(moving, cfg), cfg.lambda, cfg.window);

    std::vector<double> u(n, 0.0), v(n, 0.0), gu(n), gv(n), tu(n), tv(n), tgu(n), tgv(n);
    LossTerms cur = kernel.evaluate(u, v, gu, gv);
    if (!std::isfinite(cur.loss)) {
        throw Error(ErrorCode::NumericalDivergence, "nonfinite loss at iteration 0");
    }
    VariationalResult res;
    res.trace.push_back(cur.loss);

    double step = cfg.step_size;
    const double max_step = 4.0 * cfg.step_size;
    std::vector<double> du, dv;
    for (int it = 1; it <= cfg.steps; ++it) {
        du = gu;
        dv = gv;
        if (cfg.gradient_sigma > 0.0) {
            blur_in_place(du, w, h, cfg.gradient_sigma);
            blur_in_place(dv, w, h, cfg.gradient_sigma);
        }
        double gmax = 0.0;
        for (std::size_t i = 0; i < n; ++i) gmax = std::max(gmax, std::hypot(du[i], dv[i]));
        if (gmax == 0.0) break;

        bool accepted = false;
        for (int bt = 0; bt < 30 && step > 1e-6; ++bt) {
            const double scale = step / gmax;
            for (std::size_t i = 0; i < n; ++i) {
                tu[i] = u[i] - scale * du[i];
                tv[i] = v[i] - scale * dv[i];
            }
            const LossTerms trial = kernel.evaluate(tu, tv, tgu, tgv);
            if (!std::isfinite(trial.loss)) {
                throw Error(ErrorCode::NumericalDivergence, "nonfinite loss at iteration " + std::to_string(it));
            }
            if (trial.loss < cur.loss) {
                u.swap(tu);
                v.swap(tv);
                gu.swap(tgu);
                gv.swap(tgv);
                cur = trial;
                accepted = true;
                step = std::min(step * 1.5, max_step);
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;
        res.trace.push_back(cur.loss);
    }

    res.phi = DisplacementField(w, h);
    for (std::size_t i = 0; i < n; ++i) {
        res.phi.u[i] = static_cast<float>(u[i]);
        res.phi.v[i] = static_cast<float>(v[i]);
    }
    res.final_loss = cur.loss;
    return res;
}

namespace {

DisplacementField solve_pair(const Image2D &fixed, const Image2D &moving, const RefineConfig &cfg,
                             const PredictorParams *params) {
    if (cfg.backend == RefineBackend::Amortized) {
        if (params == nullptr) {
            throw Error(ErrorCode::InvalidParams, "amortized backend requires predictor parameters");
        }
        return predictor_apply(*params, refine_input(fixed, cfg), refine_input(moving, cfg));
    }
    return refine_variational(fixed, moving, cfg).phi;
}

template <class R, class ToImage>
RefineStackResult<R> refine_impl(const SliceStack<R> &aligned, const RefineConfig &cfg, const PredictorParams *params,
                                 ToImage to_img) {
    cfg.validate();
    aligned.validate();
    RefineStackResult<R> out;
    out.refined = aligned;
    const int n = static_cast<int>(aligned.size());
    const int w = aligned[0].width(), h = aligned[0].height();
    out.fields.assign(n, DisplacementField(w, h));
    for (int i = 1; i < n; ++i) {
        try {
            const R &target = cfg.chained ? out.refined.slices[i - 1] : aligned.slices[i - 1];
            out.fields[i] = solve_pair(to_img(target), to_img(aligned.slices[i]), cfg, params);
            out.refined.slices[i] = warp_dense(aligned.slices[i], out.fields[i]);
        } catch (const Error &e) {
            throw Error(e.code(), "slice " + std::to_string(i) + ": " + e.what());
        }
    }
    return out;
}

} // namespace

RefineStackResult<Mask2D> refine_stack(const MaskStack &aligned, const RefineConfig &cfg,
                                       const PredictorParams *params) {
    return refine_impl(aligned, cfg, params, [](const Mask2D &m) { return to_image(m); });
}

RefineStackResult<Image2D> refine_stack(const ImageStack &aligned, const RefineConfig &cfg,
                                        const PredictorParams *params) {
    return refine_impl(aligned, cfg, params, [](const Image2D &img) { return img; });
}

ImageStack apply_fields(const ImageStack &stack, const std::vector<DisplacementField> &fields) {
    if (fields.size() != stack.size()) {
        throw Error(ErrorCode::ShapeError, "one field per slice is required");
    }
    ImageStack out = stack;
    for (std::size_t i = 0; i < fields.size(); ++i) out.slices[i] = warp_dense(stack.slices[i], fields[i]);
    return out;
}

} // namespace slicerecon
