#include "slicerecon/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "slicerecon/contour.hpp"
#include "slicerecon/field.hpp"
#include "slicerecon/io.hpp"
#include "slicerecon/metrics.hpp"
#include "slicerecon/predictor.hpp"
#include "slicerecon/volume.hpp"

#ifndef SLICERECON_VERSION
#define SLICERECON_VERSION "0.0.0"
#endif

namespace slicerecon {

using nlohmann::json;

std::string_view library_version() noexcept { return SLICERECON_VERSION; }

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

[[noreturn]] void bad_config(const std::string &what) { throw Error(ErrorCode::InvalidConfig, what); }

// Reads keys from one JSON object and rejects anything it did not consume.
class Reader {
public:
    Reader(const json &j, std::string ctx) : j_(j), ctx_(std::move(ctx)) {
        if (!j_.is_object()) bad_config(ctx_ + ": expected an object");
    }

    template <class T>
    void get(const char *key, T &out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            out = it->template get<T>();
        } catch (const json::exception &) {
            bad_config(ctx_ + "." + key + ": wrong type");
        }
    }

    const json *child(const char *key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) bad_config(ctx_ + ": unknown key '" + it.key() + "'");
        }
    }

private:
    const json &j_;
    std::string ctx_;
    std::set<std::string> seen_;
};

json opt_json(const std::optional<double> &v, double mul = 1.0) { return v ? json(*v * mul) : json(nullptr); }

json bound_json(const Bound &b, double mul = 1.0) { return json::array({opt_json(b.lower, mul), opt_json(b.upper, mul)}); }

Bound parse_bound(const json &j, const std::string &ctx, double mul = 1.0) {
    if (!j.is_array() || j.size() != 2) bad_config(ctx + ": expected [lower, upper]");
    Bound b;
    auto side = [&](const json &x) -> std::optional<double> {
        if (x.is_null()) return std::nullopt;
        if (!x.is_number()) bad_config(ctx + ": bounds must be numbers or null");
        return x.get<double>() * mul;
    };
    b.lower = side(j[0]);
    b.upper = side(j[1]);
    return b;
}

json bounds_json(const ParameterBounds &b) {
    return {{"s", bound_json(b.s)},
            {"theta_deg", bound_json(b.theta, 1.0 / kDeg)},
            {"tx", bound_json(b.tx)},
            {"ty", bound_json(b.ty)}};
}

ParameterBounds parse_bounds(const json &j, const std::string &ctx) {
    ParameterBounds b;
    Reader r(j, ctx);
    if (auto c = r.child("s")) b.s = parse_bound(*c, ctx + ".s");
    if (auto c = r.child("theta_deg")) b.theta = parse_bound(*c, ctx + ".theta_deg", kDeg);
    if (auto c = r.child("tx")) b.tx = parse_bound(*c, ctx + ".tx");
    if (auto c = r.child("ty")) b.ty = parse_bound(*c, ctx + ".ty");
    r.finish();
    return b;
}

json opt_path(const std::optional<std::filesystem::path> &p) { return p ? json(p->string()) : json(nullptr); }

std::optional<std::filesystem::path> parse_opt_path(const json *j, const std::string &ctx) {
    if (!j || j->is_null()) return std::nullopt;
    if (!j->is_string()) bad_config(ctx + ": expected a path string or null");
    return std::filesystem::path(j->get<std::string>());
}

const char *backend_name(RefineBackend b) { return b == RefineBackend::Amortized ? "amortized" : "variational"; }
const char *region_name(SsdRegion r) { return r == SsdRegion::ForegroundBoxes ? "foreground_boxes" : "full_canvas"; }

const std::set<std::string> kArms{"ocm_only", "refine_only", "hybrid"};

} // namespace

PipelineConfig PipelineConfig::defaults() {
    PipelineConfig cfg;
    cfg.phantom.nonrigid_amplitude = 4.0;
    cfg.phantom.field_control_spacing = 16;
    cfg.bounds = ParameterBounds::standard(cfg.phantom.width, cfg.phantom.height);
    return cfg;
}

void PipelineConfig::validate() const {
    const bool external = paths.stack.has_value();
    if (!external && !stages.phantom) {
        bad_config("no input: enable the phantom stage or set paths.stack");
    }
    if (!external) phantom.validate();
    bounds.validate();
    refine.validate();
    if (ocm_restarts < 1) bad_config("ocm_restarts must be at least 1");
    if (!(calibration.grid_pitch_mm > 0.0)) bad_config("calibration.grid_pitch_mm must be positive");
    if (calibration.synthetic_images < 1 || calibration.synthetic_size < 16) {
        bad_config("calibration needs at least one synthetic image of 16 px or more");
    }
    if (smooth.segment_len < 2 || smooth.samples < 1) bad_config("invalid smoothing settings");
    if (workers < 0) bad_config("workers must be >= 0");
    for (const auto &a : arms) {
        if (!kArms.count(a)) bad_config("unknown arm '" + a + "'");
    }
    if (refine.backend == RefineBackend::Amortized && stages.refine && !paths.predictor) {
        bad_config("the amortized backend needs paths.predictor");
    }
    if (external && stages.evaluate && !paths.reference) {
        bad_config("evaluating an external stack needs paths.reference");
    }
    if (output_dir.empty()) bad_config("output_dir is empty");
    auto must_exist = [](const std::filesystem::path &p) {
        if (!std::filesystem::exists(p)) throw Error(ErrorCode::IoError, "path does not exist: " + p.string());
    };
    for (const auto *p : {&paths.stack, &paths.intensity, &paths.reference, &paths.predictor}) {
        if (*p) must_exist(**p);
    }
    for (const auto &p : paths.grid_images) must_exist(p);
}

std::string config_to_json(const PipelineConfig &c) {
    json grid = json::array();
    for (const auto &p : c.paths.grid_images) grid.push_back(p.string());
    const auto &ph = c.phantom;
    const auto &h = c.calibration.hough;
    json j{
        {"seed", c.seed},
        {"output_dir", c.output_dir.string()},
        {"workers", c.workers},
        {"stages",
         {{"phantom", c.stages.phantom},
          {"calibrate", c.stages.calibrate},
          {"ocm", c.stages.ocm},
          {"refine", c.stages.refine},
          {"smooth", c.stages.smooth},
          {"reconstruct", c.stages.reconstruct},
          {"evaluate", c.stages.evaluate}}},
        {"paths",
         {{"stack", opt_path(c.paths.stack)},
          {"intensity", opt_path(c.paths.intensity)},
          {"reference", opt_path(c.paths.reference)},
          {"grid_images", grid},
          {"predictor", opt_path(c.paths.predictor)}}},
        {"phantom",
         {{"width", ph.width},
          {"height", ph.height},
          {"slices", ph.slices},
          {"spacing_mm", {ph.spacing.x, ph.spacing.y}},
          {"slice_thickness_mm", ph.slice_thickness},
          {"semi_axes_mm", {ph.semi_a, ph.semi_b, ph.semi_c}},
          {"exponent", ph.exponent},
          {"perturbation", bounds_json(ph.perturbation)},
          {"nonrigid_amplitude_px", ph.nonrigid_amplitude},
          {"field_control_spacing_px", ph.field_control_spacing}}},
        {"calibration",
         {{"grid_pitch_mm", c.calibration.grid_pitch_mm},
          {"synthetic_images", c.calibration.synthetic_images},
          {"synthetic_size", c.calibration.synthetic_size},
          {"hough",
           {{"rho_res", h.rho_res},
            {"theta_res_deg", h.theta_res / kDeg},
            {"max_peaks", h.max_peaks},
            {"threshold", h.threshold},
            {"neighborhood", h.neighborhood},
            {"parallel_tolerance_deg", h.parallel_tolerance / kDeg}}}}},
        {"bounds", bounds_json(c.bounds)},
        {"ocm", {{"restarts", c.ocm_restarts}, {"region", region_name(c.ocm_region)}}},
        {"refine",
         {{"lambda", c.refine.lambda},
          {"window", c.refine.window},
          {"steps", c.refine.steps},
          {"step_size", c.refine.step_size},
          {"presmooth_sigma", c.refine.presmooth_sigma},
          {"gradient_sigma", c.refine.gradient_sigma},
          {"backend", backend_name(c.refine.backend)},
          {"chained", c.refine.chained}}},
        {"smooth", {{"segment_len", c.smooth.segment_len}, {"samples", c.smooth.samples}}},
        {"arms", c.arms},
    };
    return j.dump(2) + "\n";
}

PipelineConfig config_from_json(const std::string &text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception &e) {
        bad_config(std::string("config is not valid JSON: ") + e.what());
    }
    PipelineConfig c = PipelineConfig::defaults();
    Reader r(j, "config");
    r.get("seed", c.seed);
    std::string out = c.output_dir.string();
    r.get("output_dir", out);
    c.output_dir = out;
    r.get("workers", c.workers);
    if (auto s = r.child("stages")) {
        Reader rs(*s, "stages");
        rs.get("phantom", c.stages.phantom);
        rs.get("calibrate", c.stages.calibrate);
        rs.get("ocm", c.stages.ocm);
        rs.get("refine", c.stages.refine);
        rs.get("smooth", c.stages.smooth);
        rs.get("reconstruct", c.stages.reconstruct);
        rs.get("evaluate", c.stages.evaluate);
        rs.finish();
    }
    if (auto p = r.child("paths")) {
        Reader rp(*p, "paths");
        c.paths.stack = parse_opt_path(rp.child("stack"), "paths.stack");
        c.paths.intensity = parse_opt_path(rp.child("intensity"), "paths.intensity");
        c.paths.reference = parse_opt_path(rp.child("reference"), "paths.reference");
        c.paths.predictor = parse_opt_path(rp.child("predictor"), "paths.predictor");
        std::vector<std::string> grid;
        rp.get("grid_images", grid);
        c.paths.grid_images.assign(grid.begin(), grid.end());
        rp.finish();
    }
    bool phantom_bounds_given = false;
    if (auto p = r.child("phantom")) {
        auto &ph = c.phantom;
        Reader rp(*p, "phantom");
        rp.get("width", ph.width);
        rp.get("height", ph.height);
        rp.get("slices", ph.slices);
        std::array<double, 2> sp{ph.spacing.x, ph.spacing.y};
        rp.get("spacing_mm", sp);
        ph.spacing = {sp[0], sp[1]};
        rp.get("slice_thickness_mm", ph.slice_thickness);
        std::array<double, 3> semi{ph.semi_a, ph.semi_b, ph.semi_c};
        rp.get("semi_axes_mm", semi);
        ph.semi_a = semi[0];
        ph.semi_b = semi[1];
        ph.semi_c = semi[2];
        rp.get("exponent", ph.exponent);
        if (auto b = rp.child("perturbation")) {
            ph.perturbation = parse_bounds(*b, "phantom.perturbation");
            phantom_bounds_given = true;
        }
        rp.get("nonrigid_amplitude_px", ph.nonrigid_amplitude);
        rp.get("field_control_spacing_px", ph.field_control_spacing);
        rp.finish();
    }
    if (!phantom_bounds_given) {
        c.phantom.perturbation = PhantomConfig::default_perturbation(c.phantom.width, c.phantom.height);
    }
    if (auto p = r.child("calibration")) {
        Reader rc(*p, "calibration");
        rc.get("grid_pitch_mm", c.calibration.grid_pitch_mm);
        rc.get("synthetic_images", c.calibration.synthetic_images);
        rc.get("synthetic_size", c.calibration.synthetic_size);
        if (auto hj = rc.child("hough")) {
            auto &h = c.calibration.hough;
            Reader rh(*hj, "calibration.hough");
            rh.get("rho_res", h.rho_res);
            double t = h.theta_res / kDeg, pt = h.parallel_tolerance / kDeg;
            rh.get("theta_res_deg", t);
            rh.get("parallel_tolerance_deg", pt);
            h.theta_res = t * kDeg;
            h.parallel_tolerance = pt * kDeg;
            rh.get("max_peaks", h.max_peaks);
            rh.get("threshold", h.threshold);
            rh.get("neighborhood", h.neighborhood);
            rh.finish();
        }
        rc.finish();
    }
    if (auto b = r.child("bounds")) {
        c.bounds = parse_bounds(*b, "bounds");
    } else {
        c.bounds = ParameterBounds::standard(c.phantom.width, c.phantom.height);
    }
    if (auto o = r.child("ocm")) {
        Reader ro(*o, "ocm");
        ro.get("restarts", c.ocm_restarts);
        std::string region = region_name(c.ocm_region);
        ro.get("region", region);
        if (region == "full_canvas") c.ocm_region = SsdRegion::FullCanvas;
        else if (region == "foreground_boxes") c.ocm_region = SsdRegion::ForegroundBoxes;
        else bad_config("ocm.region must be full_canvas or foreground_boxes");
        ro.finish();
    }
    if (auto f = r.child("refine")) {
        Reader rf(*f, "refine");
        rf.get("lambda", c.refine.lambda);
        rf.get("window", c.refine.window);
        rf.get("steps", c.refine.steps);
        rf.get("step_size", c.refine.step_size);
        rf.get("presmooth_sigma", c.refine.presmooth_sigma);
        rf.get("gradient_sigma", c.refine.gradient_sigma);
        rf.get("chained", c.refine.chained);
        std::string backend = backend_name(c.refine.backend);
        rf.get("backend", backend);
        if (backend == "variational") c.refine.backend = RefineBackend::Variational;
        else if (backend == "amortized") c.refine.backend = RefineBackend::Amortized;
        else bad_config("refine.backend must be variational or amortized");
        rf.finish();
    }
    if (auto s = r.child("smooth")) {
        Reader rs(*s, "smooth");
        rs.get("segment_len", c.smooth.segment_len);
        rs.get("samples", c.smooth.samples);
        rs.finish();
    }
    r.get("arms", c.arms);
    r.finish();
    return c;
}

int exit_code_for(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::IoError:
        return 4;
    case ErrorCode::InvalidConfig:
    case ErrorCode::ShapeError:
    case ErrorCode::InvalidTransform:
    case ErrorCode::OutOfBounds:
    case ErrorCode::DomainError:
    case ErrorCode::UncalibratedStack:
        return 2;
    default:
        return 3;
    }
}

namespace {

struct Arm {
    std::string name;
    MaskStack masks;
    std::optional<ImageStack> intensity;
    std::vector<DisplacementField> fields;
    std::vector<std::string> flags;
    std::optional<Volume3D> volume;
};

struct StageFailure {};

class Runner {
public:
    explicit Runner(const PipelineConfig &cfg) : cfg_(cfg), out_(cfg.output_dir) {}

    PipelineOutcome run() {
        try {
            stage("validate", true, [&] { cfg_.validate(); });
            stage("input", true, [&] { input(); });
            stage("calibrate", cfg_.stages.calibrate, [&] { calibrate(); });
            stage("ocm", cfg_.stages.ocm, [&] { ocm(); });
            stage("refine", cfg_.stages.refine, [&] { refine(); });
            build_arms();
            stage("smooth", cfg_.stages.smooth && !arms_.empty(), [&] { smooth(); });
            stage("reconstruct", cfg_.stages.reconstruct && !arms_.empty(), [&] { reconstruct(); });
            stage("evaluate", cfg_.stages.evaluate && cfg_.stages.reconstruct && !arms_.empty(),
                  [&] { evaluate(); });
        } catch (const StageFailure &) {
        }
        try {
            write_manifest();
        } catch (const Error &e) {
            if (outcome_.exit_code == 0) {
                outcome_.exit_code = exit_code_for(e.code());
                outcome_.failed_stage = "manifest";
                outcome_.message = e.what();
            }
        }
        return outcome_;
    }

private:
    void stage(const std::string &name, bool enabled, const std::function<void()> &fn) {
        if (!enabled) {
            outcome_.stages.push_back({name, "skipped", 0.0});
            return;
        }
        const auto t0 = std::chrono::steady_clock::now();
        auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
        int code = 0;
        std::string msg;
        try {
            fn();
            outcome_.stages.push_back({name, "ok", elapsed()});
            return;
        } catch (const Error &e) {
            code = exit_code_for(e.code());
            msg = e.what();
        } catch (const std::filesystem::filesystem_error &e) {
            code = 4;
            msg = e.what();
        } catch (const std::exception &e) {
            code = 3;
            msg = e.what();
        }
        outcome_.stages.push_back({name, "failed", elapsed()});
        outcome_.exit_code = code;
        outcome_.failed_stage = name;
        outcome_.message = msg;
        throw StageFailure{};
    }

    void input() {
        std::filesystem::create_directories(out_);
        if (cfg_.paths.stack) {
            masks_ = read_mask_stack(*cfg_.paths.stack);
            if (cfg_.paths.intensity) intensity_ = read_image_stack(*cfg_.paths.intensity);
            if (cfg_.paths.reference) {
                reference_ = read_mask_stack(*cfg_.paths.reference);
                if (!reference_->scale) reference_->scale = (*reference_)[0].spacing().x;
            }
            if (intensity_ && intensity_->size() != masks_.size()) {
                throw Error(ErrorCode::ShapeError, "intensity and mask stacks differ in length");
            }
            return;
        }
        PhantomConfig pc = cfg_.phantom;
        pc.seed = cfg_.seed;
        Phantom ph = generate_phantom(pc);
        const auto dir = out_ / "phantom";
        write_mask_stack(dir / "truth", ph.truth);
        write_mask_stack(dir / "perturbed", ph.perturbed);
        write_image_stack(dir / "truth_intensity", ph.truth_intensity);
        write_image_stack(dir / "perturbed_intensity", ph.perturbed_intensity);
        write_text(dir / "ground_truth.json", ground_truth_json(ph));
        masks_ = ph.perturbed;
        intensity_ = ph.perturbed_intensity;
        reference_ = ph.truth;
        reference_->scale = pc.spacing.x;
        reference_intensity_ = ph.truth_intensity;
        known_scale_ = pc.spacing.x;
    }

    void calibrate() {
        std::vector<Image2D> images;
        for (const auto &p : cfg_.paths.grid_images) images.push_back(read_pgm(p));
        if (images.empty()) {
            const double px = known_scale_ ? *known_scale_ : masks_[0].spacing().x;
            for (int i = 0; i < cfg_.calibration.synthetic_images; ++i) {
                GridImageConfig g;
                g.width = g.height = cfg_.calibration.synthetic_size;
                g.line_spacing = cfg_.calibration.grid_pitch_mm / px;
                g.offset_x = std::fmod(13.0 + 7.0 * i, g.line_spacing);
                g.offset_y = std::fmod(21.0 + 5.0 * i, g.line_spacing);
                g.seed = mix_seed(cfg_.seed, 500 + i);
                images.push_back(calibration_grid(g));
            }
        }
        std::vector<double> per_image;
        for (const auto &img : images) {
            per_image.push_back(calibrate_image(img, cfg_.calibration.grid_pitch_mm, cfg_.calibration.hough).scale.S);
        }
        const StackScale s = combine_scales(per_image);
        write_text(out_ / "calibration" / "scale.json", scale_json(s));
        scale_ = s.S;
    }

    void ocm() {
        OcmOptions opts;
        opts.restarts = cfg_.ocm_restarts;
        opts.region = cfg_.ocm_region;
        std::vector<SimilarityTransform> transforms;
        std::vector<double> trace;
        if (intensity_) {
            auto r = register_stack(*intensity_, cfg_.bounds, opts);
            transforms = r.transforms;
            trace = r.objective_trace;
            aligned_intensity_ = r.aligned;
        } else {
            auto r = register_stack(masks_, cfg_.bounds, opts);
            transforms = r.transforms;
            trace = r.objective_trace;
        }
        MaskStack aligned = masks_;
        for (std::size_t i = 0; i < aligned.size(); ++i) aligned.slices[i] = warp_similarity(masks_[i], transforms[i]);
        aligned_ = aligned;
        write_text(out_ / "ocm" / "transforms.json", transforms_json(transforms, trace));
        write_mask_stack(out_ / "ocm" / "aligned", aligned);
        std::ostringstream csv;
        csv.precision(17);
        csv << "slice,objective\n";
        for (std::size_t i = 0; i < trace.size(); ++i) csv << i << ',' << trace[i] << '\n';
        write_text(out_ / "traces" / "ocm_objective.csv", csv.str());
    }

    bool wants(const std::string &arm) const {
        return std::find(cfg_.arms.begin(), cfg_.arms.end(), arm) != cfg_.arms.end();
    }

    std::vector<DisplacementField> fields_for(const MaskStack &m, const std::optional<ImageStack> &img) {
        if (img) return refine_stack(*img, cfg_.refine, predictor_ ? &*predictor_ : nullptr).fields;
        return refine_stack(m, cfg_.refine, predictor_ ? &*predictor_ : nullptr).fields;
    }

    void refine() {
        if (cfg_.refine.backend == RefineBackend::Amortized) predictor_ = load_predictor(*cfg_.paths.predictor);
        std::ostringstream csv;
        csv.precision(17);
        csv << "arm,slice,max_displacement_px,fold_fraction\n";
        auto run_arm = [&](const std::string &name, const MaskStack &m, const std::optional<ImageStack> &img) {
            auto fields = fields_for(m, img);
            write_fields(out_ / "refine" / name / "fields", fields);
            for (std::size_t i = 0; i < fields.size(); ++i) {
                csv << name << ',' << i << ',' << fields[i].max_magnitude() << ',' << fold_fraction(fields[i]) << '\n';
            }
            return fields;
        };
        if (wants("refine_only")) refine_only_fields_ = run_arm("refine_only", masks_, intensity_);
        if (wants("hybrid") && aligned_) hybrid_fields_ = run_arm("hybrid", *aligned_, aligned_intensity_);
        write_text(out_ / "traces" / "refine_fields.csv", csv.str());
    }

    static MaskStack warped(const MaskStack &m, const std::vector<DisplacementField> &fields) {
        MaskStack out = m;
        for (std::size_t i = 0; i < out.size(); ++i) out.slices[i] = warp_dense(m[i], fields[i]);
        return out;
    }

    void build_arms() {
        if (wants("ocm_only") && aligned_) {
            arms_.push_back({"ocm_only", *aligned_, aligned_intensity_, {}, {}, {}});
        }
        if (refine_only_fields_) {
            Arm a{"refine_only", warped(masks_, *refine_only_fields_), std::nullopt, *refine_only_fields_, {}, {}};
            if (intensity_) a.intensity = apply_fields(*intensity_, a.fields);
            arms_.push_back(std::move(a));
        }
        if (hybrid_fields_) {
            Arm a{"hybrid", warped(*aligned_, *hybrid_fields_), std::nullopt, *hybrid_fields_, {}, {}};
            if (aligned_intensity_) a.intensity = apply_fields(*aligned_intensity_, a.fields);
            arms_.push_back(std::move(a));
        }
        for (auto &a : arms_) write_mask_stack(out_ / "arms" / a.name / "registered", a.masks);
    }

    void smooth() {
        for (auto &a : arms_) {
            a.masks = smooth_stack(a.masks, cfg_.smooth.segment_len, cfg_.smooth.samples, &a.flags);
            write_mask_stack(out_ / "arms" / a.name / "smoothed", a.masks);
        }
    }

    std::optional<double> candidate_scale() const {
        if (scale_) return scale_;
        if (masks_.scale) return masks_.scale;
        return known_scale_;
    }

    void reconstruct() {
        const auto s = candidate_scale();
        for (auto &a : arms_) {
            a.volume = stack_to_volume(a.masks, s);
            const auto axes = pca_axes(*a.volume);
            write_volume(out_ / "arms" / a.name / "volume.raw", *a.volume);
            write_text(out_ / "arms" / a.name / "measurements.json",
                       measurements_json(extents(*a.volume, axes), volume_cm3(*a.volume), axes));
        }
    }

    void evaluate() {
        if (!reference_) throw Error(ErrorCode::InvalidConfig, "no reference stack to evaluate against");
        const Volume3D ref = stack_to_volume(*reference_);
        std::vector<std::pair<std::string, EvaluationReport>> reports;
        std::ostringstream csv;
        csv.precision(17);
        csv << "arm,slice,dice,iou,hd95_mm\n";
        for (const auto &a : arms_) {
            IntensityPair pair{a.intensity ? &*a.intensity : nullptr,
                               reference_intensity_ ? &*reference_intensity_ : nullptr};
            EvaluationReport r = evaluate_all(*a.volume, ref, pair.candidate && pair.reference ? &pair : nullptr);
            for (const auto &f : a.flags) r.flags.push_back(f);
            for (std::size_t i = 0; i < r.slices.size(); ++i) {
                const auto &s = r.slices[i];
                csv << a.name << ',' << i << ',' << s.dice << ',' << s.iou << ',';
                if (s.hd95) csv << *s.hd95;
                csv << '\n';
            }
            reports.emplace_back(a.name, std::move(r));
        }
        write_text(out_ / "report.json", reports_json(reports));
        write_text(out_ / "traces" / "slice_metrics.csv", csv.str());
    }

    void write_manifest() {
        json stages = json::array();
        for (const auto &s : outcome_.stages) stages.push_back({{"name", s.name}, {"status", s.status}, {"seconds", s.seconds}});
        json failure = nullptr;
        if (outcome_.failed_stage) failure = {{"stage", *outcome_.failed_stage}, {"message", outcome_.message}};
        json cfg = json::parse(config_to_json(cfg_));
        json m{{"version", std::string(library_version())},
               {"seed", cfg_.seed},
               {"config", cfg},
               {"workers", {{"requested", cfg_.workers}, {"used", 1}}},
               {"stages", stages},
               {"status", outcome_.exit_code == 0 ? "ok" : "failed"},
               {"exit_code", outcome_.exit_code},
               {"failure", failure}};
        write_text(out_ / "run_manifest.json", m.dump(2) + "\n");
    }

    const PipelineConfig &cfg_;
    std::filesystem::path out_;
    PipelineOutcome outcome_;

    MaskStack masks_;
    std::optional<ImageStack> intensity_;
    std::optional<MaskStack> reference_;
    std::optional<ImageStack> reference_intensity_;
    std::optional<double> known_scale_;
    std::optional<double> scale_;
    std::optional<MaskStack> aligned_;
    std::optional<ImageStack> aligned_intensity_;
    std::optional<PredictorParams> predictor_;
    std::optional<std::vector<DisplacementField>> refine_only_fields_;
    std::optional<std::vector<DisplacementField>> hybrid_fields_;
    std::vector<Arm> arms_;
};

} // namespace

PipelineOutcome run_pipeline(const PipelineConfig &cfg) {
    Runner r(cfg);
    return r.run();
}

} // namespace slicerecon
