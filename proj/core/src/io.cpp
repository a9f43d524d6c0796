#include "slicerecon/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "binary_io.hpp"

namespace slicerecon {

using nlohmann::json;

namespace {

std::ifstream open_in(const fs::path &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    return is;
}

std::ofstream open_out(const fs::path &path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
    return os;
}

void finish(std::ofstream &os, const fs::path &path) {
    os.flush();
    if (!os) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

json header_line(std::istream &is, const fs::path &path) {
    std::string line;
    if (!std::getline(is, line)) throw Error(ErrorCode::IoError, path.string() + ": missing header");
    try {
        return json::parse(line);
    } catch (const json::exception &e) {
        throw Error(ErrorCode::IoError, path.string() + ": bad header: " + e.what());
    }
}

template <class T>
T field_of(const json &j, const char *key, const fs::path &path) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception &) {
        throw Error(ErrorCode::IoError, path.string() + ": header lacks a valid '" + key + "'");
    }
}

/// PGM tokens are separated by whitespace; '#' starts a comment.
std::string pgm_token(std::istream &is) {
    std::string tok;
    char c;
    while (is.get(c)) {
        if (c == '#') {
            std::string skip;
            std::getline(is, skip);
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(c);
    }
    return tok;
}

struct PgmData {
    int width = 0, height = 0, maxval = 0;
    std::vector<int> values;
};

PgmData read_pgm_raw(const fs::path &path) {
    auto is = open_in(path);
    PgmData d;
    try {
        if (pgm_token(is) != "P5") throw Error(ErrorCode::IoError, path.string() + " is not a binary PGM");
        d.width = std::stoi(pgm_token(is));
        d.height = std::stoi(pgm_token(is));
        d.maxval = std::stoi(pgm_token(is));
    } catch (const std::logic_error &) {
        throw Error(ErrorCode::IoError, path.string() + ": malformed PGM header");
    }
    if (d.width <= 0 || d.height <= 0 || d.maxval <= 0 || d.maxval > 65535) {
        throw Error(ErrorCode::IoError, path.string() + ": invalid PGM dimensions or maxval");
    }
    const std::size_t n = std::size_t(d.width) * d.height;
    const int bytes = d.maxval > 255 ? 2 : 1;
    std::vector<unsigned char> buf(n * bytes);
    is.read(reinterpret_cast<char *>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(is.gcount()) != buf.size()) {
        throw Error(ErrorCode::IoError, path.string() + ": truncated PGM data");
    }
    d.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) d.values[i] = bytes == 2 ? (buf[2 * i] << 8) | buf[2 * i + 1] : buf[i];
    return d;
}

void write_pgm_raw(const fs::path &path, int w, int h, int maxval, const std::vector<int> &values) {
    auto os = open_out(path);
    os << "P5\n" << w << ' ' << h << '\n' << maxval << '\n';
    std::vector<unsigned char> buf;
    buf.reserve(values.size() * (maxval > 255 ? 2 : 1));
    for (int v : values) {
        if (maxval > 255) buf.push_back(static_cast<unsigned char>(v >> 8));
        buf.push_back(static_cast<unsigned char>(v & 0xFF));
    }
    os.write(reinterpret_cast<const char *>(buf.data()), static_cast<std::streamsize>(buf.size()));
    finish(os, path);
}

json spacing_json(Spacing s) { return json::array({s.x, s.y}); }

Spacing parse_spacing(const json &j, const fs::path &path) {
    const auto v = field_of<std::vector<double>>(j, "spacing", path);
    if (v.size() != 2) throw Error(ErrorCode::IoError, path.string() + ": spacing needs two values");
    return {v[0], v[1]};
}

std::vector<float> read_planes(const fs::path &path, const std::vector<std::string> &expect, int &w, int &h,
                               json &header) {
    auto is = open_in(path);
    header = header_line(is, path);
    w = field_of<int>(header, "width", path);
    h = field_of<int>(header, "height", path);
    if (field_of<std::vector<std::string>>(header, "planes", path) != expect) {
        throw Error(ErrorCode::IoError, path.string() + ": unexpected planes");
    }
    if (w < 0 || h < 0) throw Error(ErrorCode::IoError, path.string() + ": negative dimensions");
    return detail::read_f32_le(is, std::size_t(w) * h * expect.size());
}

std::string slice_name(std::size_t i, const char *ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "slice_%03zu%s", i, ext);
    return buf;
}

json stack_header(const char *kind, double thickness, Spacing spacing, std::optional<double> scale, std::size_t n,
                  const char *ext) {
    json j;
    j["kind"] = kind;
    j["slice_thickness"] = thickness;
    j["spacing"] = spacing_json(spacing);
    j["scale"] = scale ? json(*scale) : json(nullptr);
    j["slices"] = json::array();
    for (std::size_t i = 0; i < n; ++i) j["slices"].push_back(slice_name(i, ext));
    return j;
}

template <class R>
void apply_stack_header(SliceStack<R> &stack, const json &j, const fs::path &path) {
    stack.slice_thickness = field_of<double>(j, "slice_thickness", path);
    if (j.contains("scale") && !j["scale"].is_null()) stack.scale = field_of<double>(j, "scale", path);
    const Spacing sp = parse_spacing(j, path);
    for (auto &s : stack.slices) s.set_spacing(sp);
    try {
        stack.validate();
    } catch (const Error &e) {
        throw Error(ErrorCode::IoError, path.string() + ": " + e.what());
    }
}

json transform_json(const SimilarityTransform &t) {
    return {{"s", t.s}, {"theta", t.theta}, {"tx", t.tx}, {"ty", t.ty}};
}

json axes_json(const PrincipalAxes &axes) {
    json a = json::array();
    for (const auto &v : axes.axes) a.push_back({v.x, v.y, v.z});
    return a;
}

json report_to_json(const EvaluationReport &r) {
    json j;
    j["dice"] = r.dice;
    j["iou"] = r.iou;
    j["hd95_mm"] = r.hd95;
    j["ncc"] = r.ncc ? json(*r.ncc) : json(nullptr);
    j["ssim"] = r.ssim ? json(*r.ssim) : json(nullptr);
    json dcj = json::object();
    for (const auto &[k, v] : r.dc) dcj[k] = {{"signed", v.value}, {"abs", v.magnitude}};
    j["dc"] = dcj;
    j["candidate"] = r.candidate_quantities;
    j["reference"] = r.reference_quantities;
    json slices = json::array();
    for (const auto &s : r.slices) {
        slices.push_back({{"dice", s.dice},
                          {"iou", s.iou},
                          {"hd95_mm", s.hd95 ? json(*s.hd95) : json(nullptr)},
                          {"both_empty", s.both_empty}});
    }
    j["slices"] = slices;
    j["flags"] = r.flags;
    return j;
}

std::string pretty(const json &j) { return j.dump(2) + "\n"; }

json parse_json(const std::string &text, const char *what) {
    try {
        return json::parse(text);
    } catch (const json::exception &e) {
        throw Error(ErrorCode::IoError, std::string(what) + ": " + e.what());
    }
}

} // namespace

Image2D read_pgm(const fs::path &path) {
    const PgmData d = read_pgm_raw(path);
    Image2D img(d.width, d.height);
    for (std::size_t i = 0; i < d.values.size(); ++i) {
        img.data()[i] = static_cast<float>(std::min(d.values[i], d.maxval)) / static_cast<float>(d.maxval);
    }
    return img;
}

void write_pgm(const fs::path &path, const Image2D &img, int bits) {
    if (bits != 8 && bits != 16) throw Error(ErrorCode::InvalidConfig, "PGM depth must be 8 or 16 bits");
    const int maxval = bits == 8 ? 255 : 65535;
    std::vector<int> values(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) {
        values[i] = static_cast<int>(std::lround(std::clamp(double(img.data()[i]), 0.0, 1.0) * maxval));
    }
    write_pgm_raw(path, img.width(), img.height(), maxval, values);
}

Mask2D read_mask_pgm(const fs::path &path) {
    const PgmData d = read_pgm_raw(path);
    Mask2D m(d.width, d.height);
    for (std::size_t i = 0; i < d.values.size(); ++i) m.data()[i] = 2 * d.values[i] > d.maxval;
    return m;
}

void write_mask_pgm(const fs::path &path, const Mask2D &m) {
    std::vector<int> values(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) values[i] = m.data()[i] ? 255 : 0;
    write_pgm_raw(path, m.width(), m.height(), 255, values);
}

void write_raster(const fs::path &path, const Image2D &img) {
    auto os = open_out(path);
    const json h = {{"width", img.width()},
                    {"height", img.height()},
                    {"planes", {"intensity"}},
                    {"spacing", spacing_json(img.spacing())}};
    os << h.dump() << '\n';
    detail::write_f32_le(os, img.data());
    finish(os, path);
}

Image2D read_raster(const fs::path &path) {
    int w = 0, h = 0;
    json header;
    auto data = read_planes(path, {"intensity"}, w, h, header);
    Spacing sp{};
    if (header.contains("spacing")) sp = parse_spacing(header, path);
    return Image2D(w, h, std::move(data), sp);
}

void write_field(const fs::path &path, const DisplacementField &phi) {
    phi.validate();
    auto os = open_out(path);
    const json h = {{"width", phi.width}, {"height", phi.height}, {"planes", {"u", "v"}}};
    os << h.dump() << '\n';
    detail::write_f32_le(os, phi.u);
    detail::write_f32_le(os, phi.v);
    finish(os, path);
}

DisplacementField read_field(const fs::path &path) {
    int w = 0, h = 0;
    json header;
    const auto data = read_planes(path, {"u", "v"}, w, h, header);
    DisplacementField phi(w, h);
    const std::size_t n = phi.size();
    std::copy(data.begin(), data.begin() + std::ptrdiff_t(n), phi.u.begin());
    std::copy(data.begin() + std::ptrdiff_t(n), data.end(), phi.v.begin());
    if (!phi.finite()) throw Error(ErrorCode::IoError, path.string() + ": nonfinite displacement");
    return phi;
}

void write_volume(const fs::path &path, const Volume3D &v) {
    v.validate();
    auto os = open_out(path);
    const json h = {{"dims", v.dims}, {"spacing", {v.spacing.x, v.spacing.y, v.spacing.z}}, {"dtype", "u8"}};
    os << h.dump() << '\n';
    os.write(reinterpret_cast<const char *>(v.data.data()), static_cast<std::streamsize>(v.data.size()));
    finish(os, path);
}

Volume3D read_volume(const fs::path &path) {
    auto is = open_in(path);
    const json h = header_line(is, path);
    const auto dims = field_of<std::array<int, 3>>(h, "dims", path);
    const auto sp = field_of<std::array<double, 3>>(h, "spacing", path);
    if (dims[0] < 0 || dims[1] < 0 || dims[2] < 0) throw Error(ErrorCode::IoError, path.string() + ": bad dims");
    Volume3D v;
    try {
        v = Volume3D(dims[0], dims[1], dims[2], Vec3{sp[0], sp[1], sp[2]});
    } catch (const Error &e) {
        throw Error(ErrorCode::IoError, path.string() + ": " + e.what());
    }
    is.read(reinterpret_cast<char *>(v.data.data()), static_cast<std::streamsize>(v.data.size()));
    if (static_cast<std::size_t>(is.gcount()) != v.data.size()) {
        throw Error(ErrorCode::IoError, path.string() + ": truncated volume data");
    }
    for (auto &b : v.data) b = b != 0;
    return v;
}

void write_mask_stack(const fs::path &dir, const MaskStack &stack) {
    stack.validate();
    fs::create_directories(dir);
    for (std::size_t i = 0; i < stack.size(); ++i) write_mask_pgm(dir / slice_name(i, ".pgm"), stack[i]);
    write_text(dir / "stack.json",
               pretty(stack_header("mask", stack.slice_thickness, stack[0].spacing(), stack.scale, stack.size(),
                                   ".pgm")));
}

MaskStack read_mask_stack(const fs::path &dir) {
    const fs::path meta = dir / "stack.json";
    const json j = parse_json(read_text(meta), meta.string().c_str());
    MaskStack stack;
    for (const auto &name : field_of<std::vector<std::string>>(j, "slices", meta)) {
        stack.slices.push_back(read_mask_pgm(dir / name));
    }
    if (stack.slices.empty()) throw Error(ErrorCode::IoError, meta.string() + ": no slices listed");
    apply_stack_header(stack, j, meta);
    return stack;
}

void write_image_stack(const fs::path &dir, const ImageStack &stack) {
    stack.validate();
    fs::create_directories(dir);
    for (std::size_t i = 0; i < stack.size(); ++i) write_raster(dir / slice_name(i, ".f32"), stack[i]);
    write_text(dir / "stack.json",
               pretty(stack_header("image", stack.slice_thickness, stack[0].spacing(), stack.scale, stack.size(),
                                   ".f32")));
}

ImageStack read_image_stack(const fs::path &dir) {
    const fs::path meta = dir / "stack.json";
    const json j = parse_json(read_text(meta), meta.string().c_str());
    ImageStack stack;
    for (const auto &name : field_of<std::vector<std::string>>(j, "slices", meta)) {
        const fs::path p = dir / name;
        stack.slices.push_back(p.extension() == ".pgm" ? read_pgm(p) : read_raster(p));
    }
    if (stack.slices.empty()) throw Error(ErrorCode::IoError, meta.string() + ": no slices listed");
    apply_stack_header(stack, j, meta);
    for (const auto &s : stack.slices) {
        try {
            validate_intensities(s);
        } catch (const Error &e) {
            throw Error(ErrorCode::IoError, meta.string() + ": " + e.what());
        }
    }
    return stack;
}

void write_fields(const fs::path &dir, const std::vector<DisplacementField> &fields) {
    fs::create_directories(dir);
    json names = json::array();
    for (std::size_t i = 0; i < fields.size(); ++i) {
        const std::string name = "field_" + slice_name(i, ".f32").substr(6);
        write_field(dir / name, fields[i]);
        names.push_back(name);
    }
    write_text(dir / "fields.json", pretty({{"fields", names}}));
}

std::vector<DisplacementField> read_fields(const fs::path &dir) {
    const fs::path meta = dir / "fields.json";
    const json j = parse_json(read_text(meta), meta.string().c_str());
    std::vector<DisplacementField> out;
    for (const auto &name : field_of<std::vector<std::string>>(j, "fields", meta)) out.push_back(read_field(dir / name));
    return out;
}

std::string read_text(const fs::path &path) {
    auto is = open_in(path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_text(const fs::path &path, const std::string &text) {
    auto os = open_out(path);
    os << text;
    finish(os, path);
}

std::string transforms_json(const std::vector<SimilarityTransform> &transforms, const std::vector<double> &objective) {
    json arr = json::array();
    for (std::size_t i = 0; i < transforms.size(); ++i) {
        json t = transform_json(transforms[i]);
        t["theta_deg"] = transforms[i].theta * 180.0 / 3.14159265358979323846;
        if (i < objective.size()) t["objective"] = objective[i];
        arr.push_back(t);
    }
    return pretty({{"transforms", arr}});
}

std::vector<SimilarityTransform> parse_transforms(const std::string &text) {
    const json j = parse_json(text, "transforms");
    std::vector<SimilarityTransform> out;
    try {
        for (const auto &t : j.at("transforms")) {
            SimilarityTransform s{t.at("s").get<double>(), t.at("theta").get<double>(), t.at("tx").get<double>(),
                                  t.at("ty").get<double>()};
            s.validate();
            out.push_back(s);
        }
    } catch (const json::exception &e) {
        throw Error(ErrorCode::IoError, std::string("transforms: ") + e.what());
    }
    return out;
}

std::string ground_truth_json(const Phantom &ph) {
    json fields = json::array();
    for (const auto &f : ph.gt_fields) fields.push_back({{"max_magnitude_px", f.max_magnitude()}});
    json arr = json::array();
    for (const auto &t : ph.gt_transforms) arr.push_back(transform_json(t));
    return pretty({{"transforms", arr}, {"fields", fields}});
}

std::string scale_json(const StackScale &scale) {
    return pretty({{"S", scale.S}, {"per_image", scale.per_image}, {"relative_deviation", scale.relative_deviation}});
}

double parse_scale(const std::string &text) {
    const json j = parse_json(text, "scale");
    try {
        const double s = j.at("S").get<double>();
        if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorCode::IoError, "scale: S must be positive");
        return s;
    } catch (const json::exception &e) {
        throw Error(ErrorCode::IoError, std::string("scale: ") + e.what());
    }
}

std::string measurements_json(const Extents &e, double volume, const PrincipalAxes &axes) {
    return pretty({{"L", e.L},
                   {"W", e.W},
                   {"T", e.T},
                   {"volume_cm3", volume},
                   {"axes", axes_json(axes)},
                   {"degenerate", e.degenerate}});
}

std::string report_json(const EvaluationReport &report) { return pretty(report_to_json(report)); }

std::string reports_json(const std::vector<std::pair<std::string, EvaluationReport>> &arms) {
    json j = json::object();
    for (const auto &[name, r] : arms) j[name] = report_to_json(r);
    return pretty({{"arms", j}});
}

std::vector<std::pair<std::string, std::vector<double>>> parse_report_slice_dice(const std::string &text) {
    const json j = parse_json(text, "report");
    std::vector<std::pair<std::string, std::vector<double>>> out;
    try {
        auto collect = [](const json &rep) {
            std::vector<double> d;
            for (const auto &s : rep.at("slices")) d.push_back(s.at("dice").get<double>());
            return d;
        };
        if (j.contains("arms")) {
            for (const auto &[name, rep] : j.at("arms").items()) out.emplace_back(name, collect(rep));
        } else {
            out.emplace_back("report", collect(j));
        }
    } catch (const json::exception &e) {
        throw Error(ErrorCode::IoError, std::string("report: ") + e.what());
    }
    return out;
}

std::string contour_json(const std::vector<std::vector<Point2>> &contours, const std::vector<std::size_t> &segments) {
    json arr = json::array();
    for (std::size_t i = 0; i < contours.size(); ++i) {
        json pts = json::array();
        for (const auto &p : contours[i]) pts.push_back({p.x, p.y});
        arr.push_back({{"points", pts}, {"segments", i < segments.size() ? segments[i] : 0}});
    }
    return pretty({{"slices", arr}});
}

} // namespace slicerecon
