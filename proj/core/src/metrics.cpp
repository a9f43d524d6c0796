#include "slicerecon/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "slicerecon/volume.hpp"

namespace slicerecon {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Overlap {
    std::size_t inter = 0, a = 0, b = 0;
};

Overlap overlap(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    Overlap o;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool x = a[i] != 0, y = b[i] != 0;
        o.a += x;
        o.b += y;
        o.inter += x && y;
    }
    return o;
}

double dice_of(const Overlap &o, bool *both_empty) {
    if (both_empty) *both_empty = o.a + o.b == 0;
    if (o.a + o.b == 0) return 1.0;
    return 2.0 * double(o.inter) / double(o.a + o.b);
}

double iou_of(const Overlap &o) {
    const std::size_t uni = o.a + o.b - o.inter;
    return uni == 0 ? 1.0 : double(o.inter) / double(uni);
}

void require_dims(const Volume3D &a, const Volume3D &b) {
    if (a.dims != b.dims) {
        throw Error(ErrorCode::ShapeError, "volume dimensions differ");
    }
}

/// Grid of up to three dimensions, x fastest.
struct Grid {
    std::array<int, 3> dims{1, 1, 1};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    int rank = 2;

    std::size_t size() const { return std::size_t(dims[0]) * dims[1] * dims[2]; }
};

std::vector<std::uint8_t> boundary(const Grid &g, std::span<const std::uint8_t> m) {
    std::vector<std::uint8_t> out(m.size(), 0);
    const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];
    auto fg = [&](int x, int y, int z) {
        return x >= 0 && y >= 0 && z >= 0 && x < nx && y < ny && z < nz &&
               m[(std::size_t(z) * ny + y) * nx + x] != 0;
    };
    for (int z = 0; z < nz; ++z) {
        for (int y = 0; y < ny; ++y) {
            for (int x = 0; x < nx; ++x) {
                if (!fg(x, y, z)) continue;
                bool edge = !fg(x - 1, y, z) || !fg(x + 1, y, z) || !fg(x, y - 1, z) || !fg(x, y + 1, z);
                if (g.rank == 3) edge = edge || !fg(x, y, z - 1) || !fg(x, y, z + 1);
                out[(std::size_t(z) * ny + y) * nx + x] = edge;
            }
        }
    }
    return out;
}

/// One pass of the exact squared distance transform along a line.
void edt_line(std::vector<double> &f, std::vector<double> &out, double s2, std::vector<int> &v,
              std::vector<double> &z) {
    const int n = static_cast<int>(f.size());
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == kInf) continue;
        while (k >= 0) {
            const int p = v[k];
            const double inter = ((f[q] + s2 * q * q) - (f[p] + s2 * p * p)) / (2.0 * s2 * (q - p));
            if (inter <= z[k]) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        v[k] = q;
        z[k] = k == 0 ? -kInf : ((f[q] + s2 * q * q) - (f[v[k - 1]] + s2 * double(v[k - 1]) * v[k - 1])) /
                                    (2.0 * s2 * (q - v[k - 1]));
        z[k + 1] = kInf;
    }
    if (k < 0) {
        std::fill(out.begin(), out.end(), kInf);
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (z[j + 1] < q) ++j;
        const double d = q - v[j];
        out[q] = f[v[j]] + s2 * d * d;
    }
}

/// Squared physical distance to the nearest set pixel.
std::vector<double> squared_edt(const Grid &g, const std::vector<std::uint8_t> &set) {
    std::vector<double> d(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) d[i] = set[i] ? 0.0 : kInf;
    const std::array<std::size_t, 3> stride{1, std::size_t(g.dims[0]), std::size_t(g.dims[0]) * g.dims[1]};
    for (int axis = 0; axis < g.rank; ++axis) {
        const int n = g.dims[axis];
        std::vector<double> line(n), out(n), z(n + 1);
        std::vector<int> v(n);
        const double s2 = g.spacing[axis] * g.spacing[axis];
        for (std::size_t base = 0; base < d.size(); ++base) {
            // visit each line once, from its first element
            if ((base / stride[axis]) % n != 0) continue;
            for (int i = 0; i < n; ++i) line[i] = d[base + i * stride[axis]];
            edt_line(line, out, s2, v, z);
            for (int i = 0; i < n; ++i) d[base + i * stride[axis]] = out[i];
        }
    }
    return d;
}

double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * double(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
}

double hd95_impl(const Grid &g, std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    const auto ba = boundary(g, a), bb = boundary(g, b);
    if (std::none_of(ba.begin(), ba.end(), [](auto v) { return v != 0; }) ||
        std::none_of(bb.begin(), bb.end(), [](auto v) { return v != 0; })) {
        throw Error(ErrorCode::EmptyMask, "HD95 needs two nonempty masks");
    }
    const auto da = squared_edt(g, ba), db = squared_edt(g, bb);
    std::vector<double> pooled;
    for (std::size_t i = 0; i < ba.size(); ++i) {
        if (ba[i]) pooled.push_back(std::sqrt(db[i]));
        if (bb[i]) pooled.push_back(std::sqrt(da[i]));
    }
    return percentile(std::move(pooled), 0.95);
}

Grid grid_of(const Mask2D &m) {
    Grid g;
    g.dims = {m.width(), m.height(), 1};
    g.spacing = {m.spacing().x, m.spacing().y, 1.0};
    g.rank = 2;
    return g;
}

} // namespace

double dice(const Mask2D &a, const Mask2D &b, bool *both_empty) {
    require_same_shape(a, b, "dice");
    return dice_of(overlap(a.data(), b.data()), both_empty);
}

double dice(const Volume3D &a, const Volume3D &b, bool *both_empty) {
    require_dims(a, b);
    return dice_of(overlap(a.data, b.data), both_empty);
}

double iou(const Mask2D &a, const Mask2D &b) {
    require_same_shape(a, b, "iou");
    return iou_of(overlap(a.data(), b.data()));
}

double iou(const Volume3D &a, const Volume3D &b) {
    require_dims(a, b);
    return iou_of(overlap(a.data, b.data));
}

double iou_from_dice(double d) {
    if (!(d >= 0.0 && d <= 1.0)) {
        throw Error(ErrorCode::DomainError, "Dice must lie in [0, 1]");
    }
    return d / (2.0 - d);
}

double hd95(const Mask2D &a, const Mask2D &b) {
    require_same_shape(a, b, "hd95");
    return hd95_impl(grid_of(a), a.data(), b.data());
}

double hd95(const Volume3D &a, const Volume3D &b) {
    require_dims(a, b);
    Grid g;
    g.dims = a.dims;
    g.spacing = {a.spacing.x, a.spacing.y, a.spacing.z};
    g.rank = 3;
    return hd95_impl(g, a.data, b.data);
}

double ncc_global(const Image2D &a, const Image2D &b, const Mask2D *region) {
    require_same_shape(a, b, "ncc_global");
    std::vector<std::uint8_t> use(a.size(), 0);
    if (region) {
        if (!region->same_shape(a)) {
            throw Error(ErrorCode::ShapeError, "ncc_global: region dimensions differ");
        }
        for (std::size_t i = 0; i < a.size(); ++i) use[i] = region->data()[i] != 0;
    } else {
        for (std::size_t i = 0; i < a.size(); ++i) use[i] = a.data()[i] > 0.0f || b.data()[i] > 0.0f;
        if (std::none_of(use.begin(), use.end(), [](auto v) { return v != 0; })) {
            std::fill(use.begin(), use.end(), 1);
        }
    }
    double sa = 0, sb = 0, n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!use[i]) continue;
        sa += a.data()[i];
        sb += b.data()[i];
        n += 1;
    }
    if (n == 0) {
        throw Error(ErrorCode::UndefinedCorrelation, "empty correlation region");
    }
    const double ma = sa / n, mb = sb / n;
    double cab = 0, caa = 0, cbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!use[i]) continue;
        const double da = a.data()[i] - ma, db = b.data()[i] - mb;
        cab += da * db;
        caa += da * da;
        cbb += db * db;
    }
    if (caa < 1e-12 * n || cbb < 1e-12 * n) {
        throw Error(ErrorCode::UndefinedCorrelation, "an image is constant over the correlation region");
    }
    return std::clamp(cab / std::sqrt(caa * cbb), -1.0, 1.0);
}

double ssim(const Image2D &a, const Image2D &b, const Mask2D *region) {
    require_same_shape(a, b, "ssim");
    constexpr int win = 8;
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const int w = a.width(), h = a.height();
    if (w < win || h < win) {
        throw Error(ErrorCode::ShapeError, "ssim needs images of at least 8x8");
    }
    if (region && !region->same_shape(a)) {
        throw Error(ErrorCode::ShapeError, "ssim: region dimensions differ");
    }
    const double n = win * win;
    double total = 0.0;
    std::size_t count = 0;
    for (int y = 0; y + win <= h; ++y) {
        for (int x = 0; x + win <= w; ++x) {
            if (region && !(*region)(x + win / 2, y + win / 2)) continue;
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (int j = 0; j < win; ++j) {
                for (int i = 0; i < win; ++i) {
                    const double va = a(x + i, y + j), vb = b(x + i, y + j);
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            }
            const double ma = sa / n, mb = sb / n;
            const double va = std::max(0.0, saa / n - ma * ma), vb = std::max(0.0, sbb / n - mb * mb);
            const double cov = sab / n - ma * mb;
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    }
    if (count == 0) {
        throw Error(ErrorCode::EmptyMask, "ssim region selects no windows");
    }
    return std::clamp(total / double(count), -1.0, 1.0);
}

DifferenceCoefficient dc(double q_candidate, double q_reference) {
    if (!(q_reference > 0.0) || !std::isfinite(q_candidate)) {
        throw Error(ErrorCode::DomainError, "difference coefficient needs a positive reference quantity");
    }
    const double v = 1.0 - q_candidate / q_reference;
    return {v, std::abs(v)};
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw Error(ErrorCode::ShapeError, "Wilcoxon test needs paired samples of equal length");
    }
    std::vector<double> d;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double diff = x[i] - y[i];
        if (!std::isfinite(diff)) {
            throw Error(ErrorCode::DomainError, "nonfinite sample in Wilcoxon test");
        }
        if (diff != 0.0) d.push_back(diff);
    }
    WilcoxonResult r;
    r.n = static_cast<int>(d.size());
    if (d.empty()) {
        r.degenerate = true;
        return r;
    }
    const int n = r.n;
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int i, int j) { return std::abs(d[i]) < std::abs(d[j]); });
    // doubled average ranks stay integral
    std::vector<int> rank2(n);
    double tie_term = 0.0;
    for (int i = 0; i < n;) {
        int j = i;
        while (j + 1 < n && std::abs(d[idx[j + 1]]) == std::abs(d[idx[i]])) ++j;
        for (int k = i; k <= j; ++k) rank2[idx[k]] = i + j + 2;
        const double t = j - i + 1;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    int wplus2 = 0, total2 = 0;
    for (int i = 0; i < n; ++i) {
        total2 += rank2[i];
        if (d[i] > 0) wplus2 += rank2[i];
    }
    r.statistic = wplus2 / 2.0;
    r.w_minus = (total2 - wplus2) / 2.0;

    if (n <= 25) {
        r.exact = true;
        std::vector<double> count(total2 + 1, 0.0);
        count[0] = 1.0;
        for (int i = 0; i < n; ++i) {
            for (int s = total2; s >= rank2[i]; --s) count[s] += count[s - rank2[i]];
        }
        const double all = std::ldexp(1.0, n);
        double lower = 0.0, upper = 0.0;
        for (int s = 0; s <= total2; ++s) {
            if (s <= wplus2) lower += count[s];
            if (s >= wplus2) upper += count[s];
        }
        r.p_value = std::min(1.0, 2.0 * std::min(lower, upper) / all);
    } else {
        const double mean = n * (n + 1) / 4.0;
        const double var = n * (n + 1) * (2.0 * n + 1) / 24.0 - tie_term / 48.0;
        const double z = (r.statistic - mean) / std::sqrt(var);
        r.p_value = std::min(1.0, std::erfc(std::abs(z) / std::sqrt(2.0)));
    }
    return r;
}

std::vector<Fold> kfold_split(const std::vector<std::string> &ids, int k, std::uint64_t seed) {
    if (k < 2 || static_cast<std::size_t>(k) > ids.size()) {
        throw Error(ErrorCode::DomainError, "k-fold split needs 2 <= k <= number of ids");
    }
    if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size()) {
        throw Error(ErrorCode::DomainError, "k-fold split ids must be unique");
    }
    std::vector<std::string> order = ids;
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Fold> folds(k);
    for (std::size_t i = 0; i < order.size(); ++i) {
        for (int f = 0; f < k; ++f) {
            (f == static_cast<int>(i % k) ? folds[f].test : folds[f].train).push_back(order[i]);
        }
    }
    return folds;
}

EvaluationReport evaluate_all(const Volume3D &candidate, const Volume3D &reference, const IntensityPair *intensity) {
    candidate.validate();
    reference.validate();
    require_dims(candidate, reference);
    EvaluationReport rep;
    bool both_empty = false;
    const Overlap o = overlap(candidate.data, reference.data);
    rep.dice = dice_of(o, &both_empty);
    rep.iou = iou_of(o);
    if (both_empty) rep.flags.push_back("both volumes empty");
    if (std::abs(rep.iou - iou_from_dice(rep.dice)) > 1e-9) {
        throw Error(ErrorCode::NumericalDivergence, "IoU/Dice consistency violated");
    }
    Volume3D cand_on_ref = candidate;
    cand_on_ref.spacing = reference.spacing;
    rep.hd95 = hd95(cand_on_ref, reference);

    for (int z = 0; z < reference.dims[2]; ++z) {
        Mask2D a = candidate.slice(z), b = reference.slice(z);
        a.set_spacing({reference.spacing.x, reference.spacing.y});
        b.set_spacing({reference.spacing.x, reference.spacing.y});
        SliceMetrics s;
        s.dice = dice(a, b, &s.both_empty);
        s.iou = iou(a, b);
        if (!s.both_empty && std::any_of(a.data().begin(), a.data().end(), [](auto v) { return v != 0; }) &&
            std::any_of(b.data().begin(), b.data().end(), [](auto v) { return v != 0; })) {
            s.hd95 = hd95(a, b);
        }
        rep.slices.push_back(s);
    }

    const PrincipalAxes axes = pca_axes(reference);
    if (axes.degenerate) rep.flags.push_back("reference principal axes degenerate");
    const auto ref_e = axis_extents(reference, axes);
    const auto cand_e = axis_extents(candidate, axes);
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return ref_e[i] > ref_e[j]; });
    const char *names[3] = {"L", "W", "T"};
    for (int k = 0; k < 3; ++k) {
        rep.reference_quantities[names[k]] = ref_e[order[k]];
        rep.candidate_quantities[names[k]] = cand_e[order[k]];
        rep.dc[names[k]] = dc(cand_e[order[k]], ref_e[order[k]]);
    }
    rep.reference_quantities["Vol"] = volume_cm3(reference);
    rep.candidate_quantities["Vol"] = volume_cm3(candidate);
    rep.dc["Vol"] = dc(rep.candidate_quantities["Vol"], rep.reference_quantities["Vol"]);

    if (intensity && intensity->candidate && intensity->reference) {
        const ImageStack &ci = *intensity->candidate, &ri = *intensity->reference;
        if (ci.size() != ri.size()) {
            throw Error(ErrorCode::ShapeError, "intensity stacks differ in length");
        }
        double sn = 0, ss = 0;
        int nn = 0;
        for (std::size_t i = 0; i < ci.size(); ++i) {
            ss += ssim(ci[i], ri[i]);
            try {
                sn += ncc_global(ci[i], ri[i]);
                ++nn;
            } catch (const Error &e) {
                if (e.code() != ErrorCode::UndefinedCorrelation) throw;
                rep.flags.push_back("slice " + std::to_string(i) + ": NCC undefined");
            }
        }
        rep.ssim = ss / double(ci.size());
        if (nn > 0) rep.ncc = sn / nn;
    }
    return rep;
}

} // namespace slicerecon
