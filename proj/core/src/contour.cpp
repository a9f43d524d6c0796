#include "slicerecon/contour.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>

namespace slicerecon {

namespace {

// Clockwise on screen (y down), starting east.
constexpr std::array<int, 8> kDx{1, 1, 0, -1, -1, -1, 0, 1};
constexpr std::array<int, 8> kDy{0, 1, 1, 1, 0, -1, -1, -1};

int direction_of(int dx, int dy) {
    for (int d = 0; d < 8; ++d) {
        if (kDx[d] == dx && kDy[d] == dy) return d;
    }
    return -1;
}

/// Labels 8-connected components; returns the label image (0 = background) and
/// per-label areas (index 0 unused).
std::vector<int> label_components(const Mask2D &m, std::vector<std::size_t> &areas) {
    const int w = m.width(), h = m.height();
    std::vector<int> label(m.size(), 0);
    areas.assign(1, 0);
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!m(x, y) || label[m.index(x, y)]) continue;
            const int id = static_cast<int>(areas.size());
            areas.push_back(0);
            label[m.index(x, y)] = id;
            queue.emplace_back(x, y);
            while (!queue.empty()) {
                const auto [cx, cy] = queue.front();
                queue.pop_front();
                ++areas[id];
                for (int d = 0; d < 8; ++d) {
                    const int nx = cx + kDx[d], ny = cy + kDy[d];
                    if (m.at_or(nx, ny) && !label[m.index(nx, ny)]) {
                        label[m.index(nx, ny)] = id;
                        queue.emplace_back(nx, ny);
                    }
                }
            }
        }
    }
    return label;
}

double cross(Point2 o, Point2 a, Point2 b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

bool segments_cross(Point2 a, Point2 b, Point2 c, Point2 d) {
    const double d1 = cross(c, d, a), d2 = cross(c, d, b), d3 = cross(a, b, c), d4 = cross(a, b, d);
    return ((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0)) && d1 != 0 && d2 != 0 && d3 != 0 && d4 != 0;
}

bool on_segment(double px, double py, Point2 a, Point2 b) {
    constexpr double tol = 1e-9;
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    if (len == 0.0) return std::hypot(px - a.x, py - a.y) <= tol;
    if (std::abs(cross(a, b, {px, py})) / len > tol) return false;
    const double t = ((px - a.x) * (b.x - a.x) + (py - a.y) * (b.y - a.y)) / (len * len);
    return t >= -tol && t <= 1.0 + tol;
}

BezierSegment fit_cubic(const std::vector<Point2> &run) {
    const Point2 p0 = run.front(), p3 = run.back();
    std::vector<double> t(run.size(), 0.0);
    for (std::size_t j = 1; j < run.size(); ++j) {
        t[j] = t[j - 1] + std::hypot(run[j].x - run[j - 1].x, run[j].y - run[j - 1].y);
    }
    const double total = t.back();
    if (total > 0.0) {
        for (auto &v : t) v /= total;
    }
    double a11 = 0, a12 = 0, a22 = 0;
    Point2 r1, r2;
    for (std::size_t j = 0; j < run.size(); ++j) {
        const double b0 = bernstein(0, 3, t[j]), b1 = bernstein(1, 3, t[j]);
        const double b2 = bernstein(2, 3, t[j]), b3 = bernstein(3, 3, t[j]);
        const double rx = run[j].x - b0 * p0.x - b3 * p3.x, ry = run[j].y - b0 * p0.y - b3 * p3.y;
        a11 += b1 * b1;
        a12 += b1 * b2;
        a22 += b2 * b2;
        r1.x += b1 * rx;
        r1.y += b1 * ry;
        r2.x += b2 * rx;
        r2.y += b2 * ry;
    }
    // Chord thirds act as a weak prior so short or degenerate runs stay well posed.
    const Point2 q1{p0.x + (p3.x - p0.x) / 3.0, p0.y + (p3.y - p0.y) / 3.0};
    const Point2 q2{p0.x + 2.0 * (p3.x - p0.x) / 3.0, p0.y + 2.0 * (p3.y - p0.y) / 3.0};
    const double mu = 1e-9 * std::max(1.0, a11 + a22);
    a11 += mu;
    a22 += mu;
    r1.x += mu * q1.x;
    r1.y += mu * q1.y;
    r2.x += mu * q2.x;
    r2.y += mu * q2.y;
    const double det = a11 * a22 - a12 * a12;
    BezierSegment seg;
    if (!(std::abs(det) > 1e-12 * std::max(1.0, a11 * a22))) {
        seg.control = {p0, q1, q2, p3};
        return seg;
    }
    const Point2 p1{(a22 * r1.x - a12 * r2.x) / det, (a22 * r1.y - a12 * r2.y) / det};
    const Point2 p2{(a11 * r2.x - a12 * r1.x) / det, (a11 * r2.y - a12 * r1.y) / det};
    seg.control = {p0, p1, p2, p3};
    return seg;
}

} // namespace

ContourExtraction extract_contour(const Mask2D &m) {
    std::vector<std::size_t> areas;
    const std::vector<int> label = label_components(m, areas);
    if (areas.size() < 2) {
        throw Error(ErrorCode::EmptyMask, "cannot extract a contour from an empty mask");
    }
    ContourExtraction out;
    out.components = static_cast<int>(areas.size()) - 1;
    out.multiple_components = out.components > 1;
    const int keep = static_cast<int>(std::max_element(areas.begin() + 1, areas.end()) - areas.begin());
    auto inside = [&](int x, int y) { return m.contains(x, y) && label[m.index(x, y)] == keep; };

    int sx = -1, sy = -1;
    for (int y = 0; y < m.height() && sx < 0; ++y) {
        for (int x = 0; x < m.width(); ++x) {
            if (label[m.index(x, y)] == keep) {
                sx = x;
                sy = y;
                break;
            }
        }
    }

    auto &pts = out.contour.points;
    pts.push_back({double(sx), double(sy)});
    // Entered from the west: that neighbour is background by construction.
    int cx = sx, cy = sy, back = 4;
    int first_x = -1, first_y = -1;
    const std::size_t limit = 4 * areas[keep] + 8;
    for (std::size_t step = 0; step < limit; ++step) {
        int found = -1;
        for (int k = 1; k <= 8; ++k) {
            const int d = (back + k) % 8;
            if (inside(cx + kDx[d], cy + kDy[d])) {
                found = d;
                break;
            }
        }
        if (found < 0) break; // isolated pixel
        const int bx = cx + kDx[(found + 7) % 8], by = cy + kDy[(found + 7) % 8];
        const int nx = cx + kDx[found], ny = cy + kDy[found];
        if (cx == sx && cy == sy) {
            if (first_x < 0) {
                first_x = nx;
                first_y = ny;
            } else if (nx == first_x && ny == first_y) {
                break;
            }
        }
        back = direction_of(bx - nx, by - ny);
        cx = nx;
        cy = ny;
        pts.push_back({double(cx), double(cy)});
    }
    // the walk ends back at the start, which is already the first point
    while (pts.size() > 1 && pts.back() == pts.front()) pts.pop_back();
    out.degenerate = pts.size() < 3;
    return out;
}

double bernstein(int i, int n, double t) {
    if (n < 0 || i < 0 || i > n) {
        throw Error(ErrorCode::DomainError, "Bernstein index out of range");
    }
    double c = 1.0;
    for (int k = 1; k <= i; ++k) c = c * (n - i + k) / k;
    return c * std::pow(t, i) * std::pow(1.0 - t, n - i);
}

Point2 bezier_eval(const BezierSegment &seg, double t) {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw Error(ErrorCode::DomainError, "Bezier parameter must lie in [0, 1]");
    }
    if (seg.control.size() < 2) {
        throw Error(ErrorCode::DomainError, "a Bezier segment needs at least two control points");
    }
    const int n = seg.degree();
    Point2 p;
    for (int i = 0; i <= n; ++i) {
        const double b = bernstein(i, n, t);
        p.x += b * seg.control[i].x;
        p.y += b * seg.control[i].y;
    }
    return p;
}

SmoothedContour smooth_contour(const Contour &c, int segment_len, int samples_per_segment) {
    if (segment_len < 2 || samples_per_segment < 1) {
        throw Error(ErrorCode::DomainError, "segment length must be >= 2 and samples >= 1");
    }
    SmoothedContour out;
    const int m = static_cast<int>(c.points.size());
    if (m < 4) {
        out.contour = c;
        out.unchanged = true;
        return out;
    }
    const int step = segment_len - 1;
    const int nseg = segment_len >= m ? 1 : (m + step - 1) / step;
    for (int k = 0; k < nseg; ++k) {
        const int start = k * step;
        const int stop = nseg == 1 ? m : std::min(start + step, m);
        std::vector<Point2> run;
        for (int j = start; j <= stop; ++j) run.push_back(c.points[j % m]);
        out.segments.push_back(fit_cubic(run));
    }
    out.contour.closed = true;
    for (const auto &seg : out.segments) {
        for (int j = 0; j < samples_per_segment; ++j) {
            out.contour.points.push_back(bezier_eval(seg, double(j) / samples_per_segment));
        }
    }
    return out;
}

double polygon_area(const Contour &c) {
    const auto &p = c.points;
    double a = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const auto &q = p[(i + 1) % p.size()];
        a += p[i].x * q.y - q.x * p[i].y;
    }
    return std::abs(a) * 0.5;
}

Rasterized rasterize_contour(const Contour &c, int width, int height, Spacing spacing) {
    Rasterized out;
    out.mask = Mask2D(width, height, spacing);
    const auto &p = c.points;
    const std::size_t n = p.size();
    if (n < 3) {
        out.degenerate = true;
        return out;
    }
    for (std::size_t i = 0; i < n && !out.self_intersecting; ++i) {
        for (std::size_t j = i + 2; j < n; ++j) {
            if (i == 0 && j == n - 1) continue;
            if (segments_cross(p[i], p[(i + 1) % n], p[j], p[(j + 1) % n])) {
                out.self_intersecting = true;
                break;
            }
        }
    }

    std::vector<double> xs;
    for (int y = 0; y < height; ++y) {
        xs.clear();
        for (std::size_t i = 0; i < n; ++i) {
            const Point2 a = p[i], b = p[(i + 1) % n];
            if ((a.y <= y) != (b.y <= y)) xs.push_back(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
            const int x0 = std::max(0, static_cast<int>(std::ceil(xs[k] - 1e-9)));
            const int x1 = std::min(width - 1, static_cast<int>(std::floor(xs[k + 1] + 1e-9)));
            for (int x = x0; x <= x1; ++x) out.mask(x, y) = 1;
        }
    }
    // boundary pixels missed by the half-open crossing rule
    for (std::size_t i = 0; i < n; ++i) {
        const Point2 a = p[i], b = p[(i + 1) % n];
        const int y0 = std::max(0, static_cast<int>(std::ceil(std::min(a.y, b.y) - 1e-9)));
        const int y1 = std::min(height - 1, static_cast<int>(std::floor(std::max(a.y, b.y) + 1e-9)));
        const int x0 = std::max(0, static_cast<int>(std::ceil(std::min(a.x, b.x) - 1e-9)));
        const int x1 = std::min(width - 1, static_cast<int>(std::floor(std::max(a.x, b.x) + 1e-9)));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                if (!out.mask(x, y) && on_segment(x, y, a, b)) out.mask(x, y) = 1;
            }
        }
    }
    return out;
}

MaskStack smooth_stack(const MaskStack &stack, int segment_len, int samples_per_segment,
                       std::vector<std::string> *warnings) {
    MaskStack out = stack;
    for (std::size_t i = 0; i < stack.size(); ++i) {
        const Mask2D &m = stack.slices[i];
        if (mask_area(m) == 0) continue;
        const ContourExtraction ex = extract_contour(m);
        if (warnings && ex.multiple_components) {
            warnings->push_back("slice " + std::to_string(i) + ": kept largest of " +
                                std::to_string(ex.components) + " components");
        }
        const SmoothedContour sm = smooth_contour(ex.contour, segment_len, samples_per_segment);
        Rasterized r = rasterize_contour(sm.contour, m.width(), m.height(), m.spacing());
        if (warnings && r.self_intersecting) {
            warnings->push_back("slice " + std::to_string(i) + ": smoothed contour self-intersects");
        }
        if (ex.degenerate || r.degenerate) continue;
        out.slices[i] = std::move(r.mask);
    }
    return out;
}

} // namespace slicerecon
