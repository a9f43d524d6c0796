#include "slicerecon/calibrate.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>

namespace slicerecon {

int HoughAccumulator::rho_bin_of(double rho) const {
    return static_cast<int>(std::lround(rho / rho_res)) + rho_offset;
}

std::uint32_t HoughAccumulator::max_count() const {
    return counts.empty() ? 0u : *std::max_element(counts.begin(), counts.end());
}

double otsu_threshold(std::span<const double> values) {
    if (values.empty()) return 0.0;
    const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *mn_it, hi = *mx_it;
    if (hi <= lo) return lo;
    constexpr int kBins = 256;
    std::array<double, kBins> hist{};
    for (double v : values) {
        const int b = std::min(kBins - 1, static_cast<int>((v - lo) / (hi - lo) * kBins));
        hist[b] += 1.0;
    }
    const double total = static_cast<double>(values.size());
    double sum_all = 0.0;
    for (int i = 0; i < kBins; ++i) sum_all += i * hist[i];
    double w0 = 0.0, sum0 = 0.0, best = -1.0;
    int best_bin = 0;
    for (int i = 0; i < kBins; ++i) {
        w0 += hist[i];
        if (w0 == 0.0) continue;
        const double w1 = total - w0;
        if (w1 == 0.0) break;
        sum0 += i * hist[i];
        const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
        const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if (between > best) {
            best = between;
            best_bin = i;
        }
    }
    // upper edge of the last background bin
    return lo + (hi - lo) * (best_bin + 1) / kBins;
}

Mask2D sobel_edges(const Image2D &img) {
    const int w = img.width(), h = img.height();
    Mask2D edges(w, h, img.spacing());
    if (w == 0 || h == 0) return edges;
    auto px = [&](int x, int y) { return double(img(std::clamp(x, 0, w - 1), std::clamp(y, 0, h - 1))); };
    std::vector<double> mag(std::size_t(w) * h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double gx = (px(x + 1, y - 1) + 2 * px(x + 1, y) + px(x + 1, y + 1)) -
                              (px(x - 1, y - 1) + 2 * px(x - 1, y) + px(x - 1, y + 1));
            const double gy = (px(x - 1, y + 1) + 2 * px(x, y + 1) + px(x + 1, y + 1)) -
                              (px(x - 1, y - 1) + 2 * px(x, y - 1) + px(x + 1, y - 1));
            mag[edges.index(x, y)] = std::hypot(gx, gy);
        }
    }
    const double t = otsu_threshold(mag);
    const double peak = *std::max_element(mag.begin(), mag.end());
    if (peak <= 0.0) return edges;
    for (std::size_t i = 0; i < mag.size(); ++i) edges.data()[i] = mag[i] >= t && mag[i] > 0.0;
    return edges;
}

HoughAccumulator hough_accumulate(const Mask2D &edges, double rho_res, double theta_res) {
    if (!(rho_res > 0.0) || !(theta_res > 0.0) || theta_res > std::numbers::pi) {
        throw Error(ErrorCode::DomainError, "Hough resolutions must be positive");
    }
    if (mask_area(edges) == 0) {
        throw Error(ErrorCode::EmptyInput, "edge mask has no foreground pixels");
    }
    HoughAccumulator H;
    H.theta_bins = std::max(1, static_cast<int>(std::lround(std::numbers::pi / theta_res)));
    H.theta_res = std::numbers::pi / H.theta_bins;
    H.rho_res = rho_res;
    const double rho_max = std::hypot(double(edges.width() - 1), double(edges.height() - 1));
    H.rho_offset = static_cast<int>(std::ceil(rho_max / rho_res));
    H.rho_bins = 2 * H.rho_offset + 1;
    H.counts.assign(std::size_t(H.rho_bins) * H.theta_bins, 0u);

    std::vector<double> cs(H.theta_bins), sn(H.theta_bins);
    for (int j = 0; j < H.theta_bins; ++j) {
        cs[j] = std::cos(H.theta_of(j));
        sn[j] = std::sin(H.theta_of(j));
    }
    for (int y = 0; y < edges.height(); ++y) {
        for (int x = 0; x < edges.width(); ++x) {
            if (!edges(x, y)) continue;
            for (int j = 0; j < H.theta_bins; ++j) {
                const int r = H.rho_bin_of(x * cs[j] + y * sn[j]);
                ++H.counts[std::size_t(r) * H.theta_bins + j];
            }
        }
    }
    return H;
}

HoughPeak hough_argmax(const HoughAccumulator &H) {
    const std::uint32_t top = H.max_count();
    if (top == 0) throw Error(ErrorCode::NoPeaks, "accumulator is empty");
    const std::size_t first =
        std::size_t(std::find(H.counts.begin(), H.counts.end(), top) - H.counts.begin());
    const int r0 = int(first / H.theta_bins), t0 = int(first % H.theta_bins);

    // flood the tied plateau in unwrapped theta, mirroring rho across 0 / pi
    struct Cell {
        int r, t; // t unwrapped relative to t0's period
    };
    std::vector<std::uint8_t> seen(H.counts.size(), 0);
    std::vector<Cell> plateau, todo{{r0, t0}};
    seen[first] = 1;
    while (!todo.empty()) {
        const Cell c = todo.back();
        todo.pop_back();
        plateau.push_back(c);
        for (int dt = -1; dt <= 1; ++dt) {
            for (int dr = -1; dr <= 1; ++dr) {
                if (!dt && !dr) continue;
                const int tu = c.t + dt;
                int rb = c.r + dr;
                int tb = tu;
                const int wraps = int(std::floor(double(tu) / H.theta_bins));
                tb -= wraps * H.theta_bins;
                if (wraps % 2) rb = 2 * H.rho_offset - rb;
                if (rb < 0 || rb >= H.rho_bins) continue;
                const std::size_t k = std::size_t(rb) * H.theta_bins + tb;
                if (seen[k] || H.counts[k] != top) continue;
                seen[k] = 1;
                // keep rho in the unwrapped frame of the neighbour
                todo.push_back({c.r + dr, tu});
            }
        }
    }
    std::vector<int> ts;
    for (const auto &c : plateau) ts.push_back(c.t);
    std::sort(ts.begin(), ts.end());
    const int tm = ts[(ts.size() - 1) / 2];
    std::vector<int> rs;
    for (const auto &c : plateau) {
        if (c.t == tm) rs.push_back(c.r);
    }
    std::sort(rs.begin(), rs.end());
    int rb = rs[(rs.size() - 1) / 2], tb = tm;
    const int wraps = int(std::floor(double(tm) / H.theta_bins));
    tb -= wraps * H.theta_bins;
    if (wraps % 2) rb = 2 * H.rho_offset - rb;

    HoughPeak p;
    p.rho_bin = rb;
    p.theta_bin = tb;
    p.rho = H.rho_of(rb);
    p.theta = H.theta_of(tb);
    p.votes = top;
    return p;
}

std::vector<HoughPeak> hough_peaks(const HoughAccumulator &H, int max_peaks, double threshold, int neighborhood) {
    if (max_peaks < 1) throw Error(ErrorCode::DomainError, "max_peaks must be at least 1");
    if (!(threshold > 0.0 && threshold <= 1.0)) throw Error(ErrorCode::DomainError, "threshold must lie in (0, 1]");
    if (neighborhood < 1 || neighborhood % 2 == 0) {
        throw Error(ErrorCode::DomainError, "suppression neighbourhood must be odd");
    }
    const std::uint32_t top = H.max_count();
    if (top == 0) throw Error(ErrorCode::NoPeaks, "accumulator is empty");
    const double floor_votes = threshold * top;
    const int half = neighborhood / 2;

    std::vector<std::uint32_t> work = H.counts;
    // an edge band of width b still puts about (b + rho_res) / sin(d) votes in a
    // cell d away from its peak; widen the theta window until those fall below
    // the floor, allowing bands up to 3 px (Sobel edges of a thin line)
    const double band = 3.0 + H.rho_res;
    const double lobe = std::asin(std::min(1.0, band / std::max(1.0, floor_votes)));
    const int half_t = std::min((H.theta_bins - 1) / 2, std::max(half, int(std::ceil(lobe / H.theta_res))));
    const double reach = H.rho_offset * H.rho_res;
    std::vector<HoughPeak> peaks;
    while (static_cast<int>(peaks.size()) < max_peaks) {
        // first maximum in (rho bin, theta bin) order
        std::size_t arg = 0;
        for (std::size_t i = 1; i < work.size(); ++i) {
            if (work[i] > work[arg]) arg = i;
        }
        const std::uint32_t votes = work[arg];
        if (votes == 0 || votes < floor_votes) break;
        HoughPeak p;
        p.rho_bin = static_cast<int>(arg / H.theta_bins);
        p.theta_bin = static_cast<int>(arg % H.theta_bins);
        p.theta = H.theta_of(p.theta_bin);
        p.votes = votes;

        // sub-bin rho: vote-weighted centre of the strong cells along rho
        double wsum = 0.0, rsum = 0.0;
        for (int dr = -half; dr <= half; ++dr) {
            const int rb = p.rho_bin + dr;
            if (rb < 0 || rb >= H.rho_bins) continue;
            const double c = H.at(rb, p.theta_bin);
            if (c < 0.5 * votes) continue;
            wsum += c;
            rsum += c * H.rho_of(rb);
        }
        p.rho = wsum > 0.0 ? rsum / wsum : H.rho_of(p.rho_bin);
        peaks.push_back(p);

        // clear the cells any line through this peak could have voted for
        const double rho0 = H.rho_of(p.rho_bin);
        for (int dt = -half_t; dt <= half_t; ++dt) {
            int tb = p.theta_bin + dt;
            double sign = 1.0;
            if (tb < 0) {
                tb += H.theta_bins;
                sign = -1.0; // crossing theta = 0 / pi flips the sign of rho
            } else if (tb >= H.theta_bins) {
                tb -= H.theta_bins;
                sign = -1.0;
            }
            const double d = dt * H.theta_res;
            const double spread = std::abs(std::sin(d)) * reach + half * H.rho_res;
            const double lo = rho0 * std::cos(d) - spread, hi = rho0 * std::cos(d) + spread;
            for (int rb = 0; rb < H.rho_bins; ++rb) {
                const double r = sign * H.rho_of(rb);
                if (r >= lo - 1e-9 && r <= hi + 1e-9) work[std::size_t(rb) * H.theta_bins + tb] = 0;
            }
        }
    }
    return peaks;
}

LineExtraction extract_lines(const Mask2D &edges, const std::vector<HoughPeak> &peaks, double rho_tolerance) {
    if (peaks.empty()) throw Error(ErrorCode::EmptyInput, "no peaks to extract lines from");
    LineExtraction out;
    for (std::size_t k = 0; k < peaks.size(); ++k) {
        const HoughPeak &p = peaks[k];
        const double c = std::cos(p.theta), s = std::sin(p.theta);
        double tmin = 1e300, tmax = -1e300;
        Point2 a, b;
        bool any = false;
        for (int y = 0; y < edges.height(); ++y) {
            for (int x = 0; x < edges.width(); ++x) {
                if (!edges(x, y)) continue;
                if (std::abs(x * c + y * s - p.rho) > rho_tolerance + 1e-9) continue;
                const double t = -x * s + y * c;
                any = true;
                if (t < tmin) {
                    tmin = t;
                    a = {double(x), double(y)};
                }
                if (t > tmax) {
                    tmax = t;
                    b = {double(x), double(y)};
                }
            }
        }
        if (!any) {
            out.diagnostics.push_back("peak " + std::to_string(k) + " (rho=" + std::to_string(p.rho) +
                                      ") has no supporting edge pixels; skipped");
            continue;
        }
        out.lines.push_back({p.rho, p.theta, a, b});
    }
    return out;
}

GridSpacing grid_spacing(const std::vector<DetectedLine> &lines, double angle_tolerance, double min_separation) {
    struct Normalised {
        double rho, theta;
        std::size_t order;
    };
    // fold theta into [-tol, pi - tol) so near-vertical lines at 0 and pi agree
    std::vector<Normalised> norm;
    for (const auto &l : lines) {
        double rho = l.rho, theta = l.theta;
        if (theta >= std::numbers::pi - angle_tolerance) {
            theta -= std::numbers::pi;
            rho = -rho;
        }
        norm.push_back({rho, theta, norm.size()});
    }
    std::sort(norm.begin(), norm.end(), [](const auto &a, const auto &b) { return a.theta < b.theta; });

    // the dominant family is the cluster holding the strongest line
    std::size_t best_begin = 0, best_len = 0;
    for (std::size_t i = 0; i < norm.size();) {
        std::size_t j = i + 1;
        while (j < norm.size() && norm[j].theta - norm[j - 1].theta <= angle_tolerance) ++j;
        for (std::size_t k = i; k < j; ++k) {
            if (norm[k].order == 0) {
                best_begin = i;
                best_len = j - i;
            }
        }
        i = j;
    }
    if (best_len < 2) {
        throw Error(ErrorCode::InsufficientGrid, "need at least two parallel grid lines");
    }
    GridSpacing g;
    g.family_size = best_len;
    std::vector<Normalised> family(norm.begin() + best_begin, norm.begin() + best_begin + best_len);
    std::sort(family.begin(), family.end(), [](const auto &a, const auto &b) { return a.order < b.order; });
    std::vector<double> rhos;
    double theta_sum = 0.0;
    for (const auto &l : family) {
        rhos.push_back(l.rho);
        theta_sum += l.theta;
    }
    g.family_theta = theta_sum / static_cast<double>(best_len);
    // lines arrive strongest first; weaker near-duplicates of a kept line are dropped
    std::vector<double> kept;
    for (double r : rhos) {
        if (std::none_of(kept.begin(), kept.end(), [&](double k) { return std::abs(k - r) < min_separation; })) {
            kept.push_back(r);
        }
    }
    rhos = std::move(kept);
    if (rhos.size() < 2) {
        throw Error(ErrorCode::InsufficientGrid, "need at least two distinct parallel grid lines");
    }
    g.family_size = rhos.size();
    std::sort(rhos.begin(), rhos.end());
    for (std::size_t i = 1; i < rhos.size(); ++i) g.spacings.push_back(rhos[i] - rhos[i - 1]);
    std::vector<double> sorted = g.spacings;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t m = sorted.size();
    g.median_spacing = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
    if (!(g.median_spacing > 0.0)) {
        throw Error(ErrorCode::InsufficientGrid, "grid lines coincide; spacing is zero");
    }
    return g;
}

ScaleFactor grid_scale(const std::vector<DetectedLine> &lines, double grid_pitch_mm, double angle_tolerance,
                       double min_separation) {
    if (!(grid_pitch_mm > 0.0) || !std::isfinite(grid_pitch_mm)) {
        throw Error(ErrorCode::DomainError, "grid pitch must be positive");
    }
    const GridSpacing g = grid_spacing(lines, angle_tolerance, min_separation);
    return {grid_pitch_mm / g.median_spacing};
}

CalibrationResult calibrate_image(const Image2D &img, double grid_pitch_mm, const HoughOptions &opts) {
    CalibrationResult res;
    const Mask2D edges = sobel_edges(img);
    const HoughAccumulator H = hough_accumulate(edges, opts.rho_res, opts.theta_res);
    const auto peaks = hough_peaks(H, opts.max_peaks, opts.threshold, opts.neighborhood);
    auto extraction = extract_lines(edges, peaks, opts.rho_res);
    res.lines = std::move(extraction.lines);
    res.diagnostics = std::move(extraction.diagnostics);
    res.grid = grid_spacing(res.lines, opts.parallel_tolerance, opts.min_separation);
    if (!(grid_pitch_mm > 0.0)) throw Error(ErrorCode::DomainError, "grid pitch must be positive");
    res.scale.S = grid_pitch_mm / res.grid.median_spacing;
    res.diagnostics.push_back("edge pixels: " + std::to_string(mask_area(edges)) +
                              ", peaks: " + std::to_string(peaks.size()) +
                              ", dominant family: " + std::to_string(res.grid.family_size) + " lines");
    return res;
}

StackScale combine_scales(const std::vector<double> &per_image) {
    if (per_image.empty()) throw Error(ErrorCode::EmptyInput, "no per-image scale factors");
    StackScale out;
    out.per_image = per_image;
    std::vector<double> s = per_image;
    std::sort(s.begin(), s.end());
    const std::size_t m = s.size();
    out.S = m % 2 ? s[m / 2] : 0.5 * (s[m / 2 - 1] + s[m / 2]);
    for (double v : per_image) out.relative_deviation.push_back(v / out.S - 1.0);
    return out;
}

} // namespace slicerecon
