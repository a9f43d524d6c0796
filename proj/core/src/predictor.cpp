#include "slicerecon/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <string>

#include <json.hpp>

#include "binary_io.hpp"

namespace slicerecon {

namespace {

constexpr float kLeak = 0.2f;

struct Tensor {
    int c = 0, h = 0, w = 0;
    std::vector<float> d;

    Tensor() = default;
    Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), d(std::size_t(c_) * h_ * w_, 0.0f) {}

    std::size_t plane() const { return std::size_t(h) * w; }
    float *ch(int k) { return d.data() + std::size_t(k) * plane(); }
    const float *ch(int k) const { return d.data() + std::size_t(k) * plane(); }
};

void conv_forward(const Tensor &in, const ConvLayer &L, Tensor &out) {
    const int h = in.h, w = in.w;
    out = Tensor(L.out, h, w);
    for (int oc = 0; oc < L.out; ++oc) {
        float *__restrict o = out.ch(oc);
        std::fill(o, o + out.plane(), L.bias[oc]);
        for (int ic = 0; ic < L.in; ++ic) {
            const float *src = in.ch(ic);
            const float *wk = &L.weight[(std::size_t(oc) * L.in + ic) * 9];
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                for (int kx = 0; kx < 3; ++kx) {
                    const int dx = kx - 1;
                    const float wv = wk[ky * 3 + kx];
                    const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                    for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y) {
                        const float *__restrict s = src + std::size_t(y + dy) * w + dx;
                        float *__restrict orow = o + std::size_t(y) * w;
                        for (int x = x0; x < x1; ++x) orow[x] += wv * s[x];
                    }
                }
            }
        }
    }
}

/// Accumulates weight/bias gradients into G and, if din is non-null, writes
/// the input gradient.
void conv_backward(const Tensor &in, const ConvLayer &L, const Tensor &dout, ConvLayer &G, Tensor *din) {
    const int h = in.h, w = in.w;
    if (din) *din = Tensor(L.in, h, w);
    std::vector<float> partial(w);
    for (int oc = 0; oc < L.out; ++oc) {
        const float *g = dout.ch(oc);
        double bsum = 0.0;
        for (std::size_t i = 0; i < dout.plane(); ++i) bsum += g[i];
        G.bias[oc] += static_cast<float>(bsum);
        for (int ic = 0; ic < L.in; ++ic) {
            const float *src = in.ch(ic);
            const float *wk = &L.weight[(std::size_t(oc) * L.in + ic) * 9];
            float *gw = &G.weight[(std::size_t(oc) * L.in + ic) * 9];
            float *di = din ? din->ch(ic) : nullptr;
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                for (int kx = 0; kx < 3; ++kx) {
                    const int dx = kx - 1;
                    const float wv = wk[ky * 3 + kx];
                    const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                    std::fill(partial.begin(), partial.end(), 0.0f);
                    float *__restrict part = partial.data();
                    for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y) {
                        const float *__restrict s = src + std::size_t(y + dy) * w + dx;
                        const float *__restrict grow = g + std::size_t(y) * w;
                        for (int x = x0; x < x1; ++x) part[x] += grow[x] * s[x];
                        if (di) {
                            float *__restrict drow = di + std::size_t(y + dy) * w + dx;
                            for (int x = x0; x < x1; ++x) drow[x] += wv * grow[x];
                        }
                    }
                    double acc = 0.0;
                    for (int x = x0; x < x1; ++x) acc += part[x];
                    gw[ky * 3 + kx] += static_cast<float>(acc);
                }
            }
        }
    }
}

void leaky_forward(Tensor &t) {
    for (auto &v : t.d) v = v > 0.0f ? v : kLeak * v;
}

void leaky_backward(const Tensor &out, Tensor &grad) {
    for (std::size_t i = 0; i < grad.d.size(); ++i) {
        if (!(out.d[i] > 0.0f)) grad.d[i] *= kLeak;
    }
}

void pool_forward(const Tensor &in, Tensor &out, std::vector<std::uint32_t> &argmax) {
    const int oh = in.h / 2, ow = in.w / 2;
    out = Tensor(in.c, oh, ow);
    argmax.assign(out.d.size(), 0);
    for (int c = 0; c < in.c; ++c) {
        const float *src = in.ch(c);
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                std::size_t best = std::size_t(2 * y) * in.w + 2 * x;
                for (std::size_t cand : {best + 1, best + in.w, best + in.w + 1}) {
                    if (src[cand] > src[best]) best = cand;
                }
                const std::size_t o = std::size_t(c) * out.plane() + std::size_t(y) * ow + x;
                out.d[o] = src[best];
                argmax[o] = static_cast<std::uint32_t>(best);
            }
        }
    }
}

Tensor pool_backward(const Tensor &dout, const std::vector<std::uint32_t> &argmax, int h, int w) {
    Tensor din(dout.c, h, w);
    for (int c = 0; c < dout.c; ++c) {
        const float *g = dout.ch(c);
        float *di = din.ch(c);
        for (std::size_t i = 0; i < dout.plane(); ++i) di[argmax[std::size_t(c) * dout.plane() + i]] += g[i];
    }
    return din;
}

/// Nearest 2x upsample of `low` followed by channel concatenation with `skip`.
Tensor upsample_concat(const Tensor &low, const Tensor &skip) {
    Tensor out(low.c + skip.c, skip.h, skip.w);
    for (int c = 0; c < low.c; ++c) {
        const float *src = low.ch(c);
        float *dst = out.ch(c);
        for (int y = 0; y < skip.h; ++y) {
            for (int x = 0; x < skip.w; ++x) dst[std::size_t(y) * skip.w + x] = src[std::size_t(y / 2) * low.w + x / 2];
        }
    }
    std::copy(skip.d.begin(), skip.d.end(), out.d.begin() + std::size_t(low.c) * out.plane());
    return out;
}

/// Splits a concat gradient back into (low-resolution, skip) parts.
std::pair<Tensor, Tensor> upsample_concat_backward(const Tensor &g, int low_c, int low_h, int low_w) {
    Tensor dlow(low_c, low_h, low_w), dskip(g.c - low_c, g.h, g.w);
    for (int c = 0; c < low_c; ++c) {
        const float *src = g.ch(c);
        float *dst = dlow.ch(c);
        for (int y = 0; y < g.h; ++y) {
            for (int x = 0; x < g.w; ++x) dst[std::size_t(y / 2) * low_w + x / 2] += src[std::size_t(y) * g.w + x];
        }
    }
    std::copy(g.d.begin() + std::size_t(low_c) * g.plane(), g.d.end(), dskip.d.begin());
    return {std::move(dlow), std::move(dskip)};
}

struct Tape {
    Tensor input;
    std::vector<Tensor> enc_a, enc_b, pooled;
    std::vector<std::vector<std::uint32_t>> argmax;
    Tensor bott_a, bott_b;
    std::vector<Tensor> dec_cat, dec_a, dec_b; // indexed by level
    Tensor out;
};

// Layer indices: encoder 2l, 2l+1; bottleneck 2L, 2L+1; decoder level l at
// 2L+2+2(L-1-l), +1; head 4L+2.
int dec_index(int levels, int l) { return 2 * levels + 2 + 2 * (levels - 1 - l); }

void forward(const PredictorParams &P, Tape &t) {
    const int L = P.levels();
    const auto &layers = P.layers();
    t.enc_a.resize(L);
    t.enc_b.resize(L);
    t.pooled.resize(L);
    t.argmax.resize(L);
    t.dec_cat.resize(L);
    t.dec_a.resize(L);
    t.dec_b.resize(L);
    const Tensor *x = &t.input;
    for (int l = 0; l < L; ++l) {
        conv_forward(*x, layers[2 * l], t.enc_a[l]);
        leaky_forward(t.enc_a[l]);
        conv_forward(t.enc_a[l], layers[2 * l + 1], t.enc_b[l]);
        leaky_forward(t.enc_b[l]);
        pool_forward(t.enc_b[l], t.pooled[l], t.argmax[l]);
        x = &t.pooled[l];
    }
    conv_forward(*x, layers[2 * L], t.bott_a);
    leaky_forward(t.bott_a);
    conv_forward(t.bott_a, layers[2 * L + 1], t.bott_b);
    leaky_forward(t.bott_b);
    x = &t.bott_b;
    for (int l = L - 1; l >= 0; --l) {
        const int k = dec_index(L, l);
        t.dec_cat[l] = upsample_concat(*x, t.enc_b[l]);
        conv_forward(t.dec_cat[l], layers[k], t.dec_a[l]);
        leaky_forward(t.dec_a[l]);
        conv_forward(t.dec_a[l], layers[k + 1], t.dec_b[l]);
        leaky_forward(t.dec_b[l]);
        x = &t.dec_b[l];
    }
    conv_forward(*x, layers[4 * L + 2], t.out);
}

void backward(const PredictorParams &P, const Tape &t, const Tensor &dout, std::vector<ConvLayer> &G) {
    const int L = P.levels();
    const auto &layers = P.layers();
    Tensor dx, tmp;
    conv_backward(t.dec_b[0], layers[4 * L + 2], dout, G[4 * L + 2], &dx);
    std::vector<Tensor> dskip(L);
    for (int l = 0; l < L; ++l) {
        const int k = dec_index(L, l);
        leaky_backward(t.dec_b[l], dx);
        conv_backward(t.dec_a[l], layers[k + 1], dx, G[k + 1], &tmp);
        leaky_backward(t.dec_a[l], tmp);
        conv_backward(t.dec_cat[l], layers[k], tmp, G[k], &dx);
        const Tensor &low = l + 1 < L ? t.dec_b[l + 1] : t.bott_b;
        auto [dlow, ds] = upsample_concat_backward(dx, low.c, low.h, low.w);
        dx = std::move(dlow);
        dskip[l] = std::move(ds);
    }
    leaky_backward(t.bott_b, dx);
    conv_backward(t.bott_a, layers[2 * L + 1], dx, G[2 * L + 1], &tmp);
    leaky_backward(t.bott_a, tmp);
    conv_backward(t.pooled[L - 1], layers[2 * L], tmp, G[2 * L], &dx);
    for (int l = L - 1; l >= 0; --l) {
        Tensor g = pool_backward(dx, t.argmax[l], t.enc_b[l].h, t.enc_b[l].w);
        for (std::size_t i = 0; i < g.d.size(); ++i) g.d[i] += dskip[l].d[i];
        leaky_backward(t.enc_b[l], g);
        conv_backward(t.enc_a[l], layers[2 * l + 1], g, G[2 * l + 1], &tmp);
        leaky_backward(t.enc_a[l], tmp);
        const Tensor &in = l > 0 ? t.pooled[l - 1] : t.input;
        conv_backward(in, layers[2 * l], tmp, G[2 * l], l > 0 ? &dx : nullptr);
    }
}

int reflect(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i = std::abs(i) % period;
    return i < n ? i : period - i;
}

int padded(int n, int stride) { return (n + stride - 1) / stride * stride; }

Tensor make_input(const Image2D &fixed, const Image2D &moving, int stride) {
    const int w = fixed.width(), h = fixed.height();
    Tensor t(2, padded(h, stride), padded(w, stride));
    for (int c = 0; c < 2; ++c) {
        const Image2D &img = c == 0 ? fixed : moving;
        float *dst = t.ch(c);
        for (int y = 0; y < t.h; ++y) {
            for (int x = 0; x < t.w; ++x) dst[std::size_t(y) * t.w + x] = img(reflect(x, w), reflect(y, h));
        }
    }
    return t;
}

std::vector<ConvLayer> zero_like(const std::vector<ConvLayer> &layers) {
    std::vector<ConvLayer> g(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
        g[i].in = layers[i].in;
        g[i].out = layers[i].out;
        g[i].weight.assign(layers[i].weight.size(), 0.0f);
        g[i].bias.assign(layers[i].bias.size(), 0.0f);
    }
    return g;
}

void check_pair(const Image2D &fixed, const Image2D &moving) {
    require_same_shape(fixed, moving, "predictor");
    if (fixed.width() < 2 || fixed.height() < 2) {
        throw Error(ErrorCode::ShapeError, "predictor inputs must be at least 2x2");
    }
}

// k: bit 2 transposes (square canvases only), then bit 0 flips x, bit 1 flips y.
Image2D dihedral(const Image2D &img, int k) {
    const int w = img.width(), h = img.height();
    Image2D out(w, h, img.spacing());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            int sx = (k & 1) ? w - 1 - x : x;
            int sy = (k & 2) ? h - 1 - y : y;
            if (k & 4) std::swap(sx, sy);
            out(x, y) = img(sx, sy);
        }
    }
    return out;
}

} // namespace

PredictorParams PredictorParams::with_shape(std::vector<int> widths) {
    if (widths.empty() || std::any_of(widths.begin(), widths.end(), [](int c) { return c < 1; })) {
        throw Error(ErrorCode::InvalidParams, "predictor widths must be positive");
    }
    PredictorParams p;
    p.widths_ = std::move(widths);
    const int L = p.levels();
    auto add = [&](int in, int out) {
        ConvLayer c;
        c.in = in;
        c.out = out;
        c.weight.assign(std::size_t(in) * out * 9, 0.0f);
        c.bias.assign(out, 0.0f);
        p.layers_.push_back(std::move(c));
    };
    int prev = 2;
    for (int l = 0; l < L; ++l) {
        add(prev, p.widths_[l]);
        add(p.widths_[l], p.widths_[l]);
        prev = p.widths_[l];
    }
    add(prev, prev);
    add(prev, prev);
    for (int l = L - 1; l >= 0; --l) {
        add(prev + p.widths_[l], p.widths_[l]);
        add(p.widths_[l], p.widths_[l]);
        prev = p.widths_[l];
    }
    add(prev, 2);
    return p;
}

PredictorParams PredictorParams::initialize(std::uint64_t seed, std::vector<int> widths) {
    PredictorParams p = with_shape(std::move(widths));
    std::mt19937_64 rng(seed);
    const double gain = std::sqrt(2.0 / (1.0 + double(kLeak) * kLeak));
    for (std::size_t i = 0; i + 1 < p.layers_.size(); ++i) {
        ConvLayer &c = p.layers_[i];
        std::normal_distribution<double> d(0.0, gain / std::sqrt(9.0 * c.in));
        for (auto &v : c.weight) v = static_cast<float>(d(rng));
    }
    return p;
}

std::size_t PredictorParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto &c : layers_) n += c.weight.size() + c.bias.size();
    return n;
}

bool PredictorParams::finite() const {
    for (const auto &c : layers_) {
        for (float v : c.weight) {
            if (!std::isfinite(v)) return false;
        }
        for (float v : c.bias) {
            if (!std::isfinite(v)) return false;
        }
    }
    return true;
}

DisplacementField predictor_apply(const PredictorParams &params, const Image2D &fixed, const Image2D &moving) {
    if (params.layers().empty() || !params.finite()) {
        throw Error(ErrorCode::InvalidParams, "predictor parameters are missing or nonfinite");
    }
    check_pair(fixed, moving);
    Tape t;
    t.input = make_input(fixed, moving, params.stride());
    forward(params, t);
    const int w = fixed.width(), h = fixed.height();
    DisplacementField phi(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            phi.u[phi.index(x, y)] = t.out.ch(0)[std::size_t(y) * t.out.w + x];
            phi.v[phi.index(x, y)] = t.out.ch(1)[std::size_t(y) * t.out.w + x];
        }
    }
    return phi;
}

void TrainConfig::validate() const {
    if (epochs < 0 || batch < 1 || !(learning_rate > 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) ||
        !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
        throw Error(ErrorCode::InvalidConfig, "invalid training hyperparameters");
    }
}

TrainResult train_amortized(const std::vector<ImagePair> &pairs, const RefineConfig &refine, const TrainConfig &train,
                            const PredictorParams *init) {
    refine.validate();
    train.validate();
    if (pairs.empty()) {
        throw Error(ErrorCode::InvalidConfig, "training needs at least one pair");
    }
    for (const auto &[f, m] : pairs) {
        check_pair(f, m);
        require_same_shape(f, pairs.front().first, "training pairs");
    }
    TrainResult res;
    res.params = init ? *init : PredictorParams::initialize(train.seed);
    if (!res.params.finite()) {
        throw Error(ErrorCode::InvalidParams, "initial predictor parameters are nonfinite");
    }
    if (train.epochs == 0) return res;

    const int w = pairs.front().first.width(), h = pairs.front().first.height();
    const std::size_t n = std::size_t(w) * h;
    // every pair is stored in each symmetry of the canvas it is drawn in
    const int variants = !train.augment ? 1 : (w == h ? 8 : 4);
    std::vector<LossKernel> kernels;
    std::vector<Tensor> inputs;
    for (const auto &[f, m] : pairs) {
        const Image2D fs = refine_input(f, refine), ms = refine_input(m, refine);
        for (int k = 0; k < variants; ++k) {
            const Image2D fk = dihedral(fs, k), mk = dihedral(ms, k);
            inputs.push_back(make_input(fk, mk, res.params.stride()));
            kernels.emplace_back(fk, mk, refine.lambda, refine.window);
        }
    }

    auto &layers = res.params.layers();
    std::vector<ConvLayer> grads = zero_like(layers), m1 = zero_like(layers), m2 = zero_like(layers);
    std::mt19937_64 rng(train.seed ^ 0x5A17ull);
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::uniform_int_distribution<int> pick(0, variants - 1);
    std::vector<double> u(n), v(n), gu(n), gv(n);
    long step = 0;

    for (int epoch = 0; epoch < train.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += train.batch) {
            const std::size_t stop = std::min(order.size(), start + std::size_t(train.batch));
            const float inv_b = 1.0f / static_cast<float>(stop - start);
            for (auto &g : grads) {
                std::fill(g.weight.begin(), g.weight.end(), 0.0f);
                std::fill(g.bias.begin(), g.bias.end(), 0.0f);
            }
            for (std::size_t b = start; b < stop; ++b) {
                const std::size_t k = order[b] * variants + (variants > 1 ? pick(rng) : 0);
                Tape t;
                t.input = inputs[k];
                forward(res.params, t);
                for (int y = 0; y < h; ++y) {
                    for (int x = 0; x < w; ++x) {
                        u[std::size_t(y) * w + x] = t.out.ch(0)[std::size_t(y) * t.out.w + x];
                        v[std::size_t(y) * w + x] = t.out.ch(1)[std::size_t(y) * t.out.w + x];
                    }
                }
                const LossTerms lt = kernels[k].evaluate(u, v, gu, gv);
                if (!std::isfinite(lt.loss)) {
                    throw Error(ErrorCode::NumericalDivergence,
                                "training loss became nonfinite at epoch " + std::to_string(epoch));
                }
                epoch_loss += lt.loss;
                Tensor dout(2, t.out.h, t.out.w);
                for (int y = 0; y < h; ++y) {
                    for (int x = 0; x < w; ++x) {
                        dout.ch(0)[std::size_t(y) * dout.w + x] = static_cast<float>(gu[std::size_t(y) * w + x]) * inv_b;
                        dout.ch(1)[std::size_t(y) * dout.w + x] = static_cast<float>(gv[std::size_t(y) * w + x]) * inv_b;
                    }
                }
                backward(res.params, t, dout, grads);
            }
            ++step;
            const double c1 = 1.0 - std::pow(train.beta1, double(step));
            const double c2 = 1.0 - std::pow(train.beta2, double(step));
            auto adam = [&](std::vector<float> &p, const std::vector<float> &g, std::vector<float> &a,
                            std::vector<float> &s) {
                for (std::size_t i = 0; i < p.size(); ++i) {
                    a[i] = static_cast<float>(train.beta1 * a[i] + (1.0 - train.beta1) * g[i]);
                    s[i] = static_cast<float>(train.beta2 * s[i] + (1.0 - train.beta2) * double(g[i]) * g[i]);
                    const double mhat = a[i] / c1, vhat = s[i] / c2;
                    p[i] -= static_cast<float>(train.learning_rate * mhat / (std::sqrt(vhat) + train.epsilon));
                }
            };
            for (std::size_t li = 0; li < layers.size(); ++li) {
                adam(layers[li].weight, grads[li].weight, m1[li].weight, m2[li].weight);
                adam(layers[li].bias, grads[li].bias, m1[li].bias, m2[li].bias);
            }
        }
        res.loss_curve.push_back(epoch_loss / static_cast<double>(pairs.size()));
        if (!res.params.finite()) {
            throw Error(ErrorCode::NumericalDivergence, "weights became nonfinite at epoch " + std::to_string(epoch));
        }
    }
    return res;
}

void save_predictor(const PredictorParams &params, const std::filesystem::path &path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
    nlohmann::json header = {{"format", "slicerecon-predictor"},
                             {"version", 1},
                             {"widths", params.widths()},
                             {"parameters", params.parameter_count()}};
    os << header.dump() << '\n';
    for (const auto &c : params.layers()) {
        detail::write_f32_le(os, c.weight);
        detail::write_f32_le(os, c.bias);
    }
    if (!os) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

PredictorParams load_predictor(const std::filesystem::path &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    std::string line;
    std::getline(is, line);
    PredictorParams p;
    try {
        const auto header = nlohmann::json::parse(line);
        if (header.at("format") != "slicerecon-predictor") {
            throw Error(ErrorCode::IoError, path.string() + " is not a predictor file");
        }
        p = PredictorParams::with_shape(header.at("widths").get<std::vector<int>>());
        if (header.at("parameters").get<std::size_t>() != p.parameter_count()) {
            throw Error(ErrorCode::IoError, "parameter count in header does not match the architecture");
        }
    } catch (const nlohmann::json::exception &e) {
        throw Error(ErrorCode::IoError, path.string() + ": bad header: " + e.what());
    }
    for (auto &c : p.layers()) {
        c.weight = detail::read_f32_le(is, c.weight.size());
        c.bias = detail::read_f32_le(is, c.bias.size());
    }
    if (!p.finite()) throw Error(ErrorCode::InvalidParams, path.string() + " holds nonfinite weights");
    return p;
}

} // namespace slicerecon
