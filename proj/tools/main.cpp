#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "slicerecon/calibrate.hpp"
#include "slicerecon/contour.hpp"
#include "slicerecon/io.hpp"
#include "slicerecon/metrics.hpp"
#include "slicerecon/ocm.hpp"
#include "slicerecon/phantom.hpp"
#include "slicerecon/pipeline.hpp"
#include "slicerecon/predictor.hpp"
#include "slicerecon/refine.hpp"
#include "slicerecon/volume.hpp"

namespace fs = std::filesystem;
using namespace slicerecon;
using nlohmann::json;

namespace {

constexpr const char *kOutputEnv = "SLICERECON_OUTPUT_DIR";

fs::path output_root(const std::string &given, const char *fallback) {
    if (!given.empty()) return given;
    if (const char *env = std::getenv(kOutputEnv); env && *env) return fs::path(env) / fallback;
    return fallback;
}

RefineBackend parse_backend(const std::string &s) {
    if (s == "variational") return RefineBackend::Variational;
    if (s == "amortized") return RefineBackend::Amortized;
    throw Error(ErrorCode::InvalidConfig, "unknown backend '" + s + "'");
}

struct Common {
    std::uint64_t seed = 1;
    bool seed_given = false;
};

struct PhantomArgs {
    std::string out;
    int width = 128, height = 128, slices = 10;
    double spacing = 0.5, amplitude = 0.0;
    int control = 32;
};

int cmd_phantom(const PhantomArgs &a, const Common &c) {
    PhantomConfig cfg;
    cfg.width = a.width;
    cfg.height = a.height;
    cfg.slices = a.slices;
    cfg.spacing = {a.spacing, a.spacing};
    cfg.nonrigid_amplitude = a.amplitude;
    cfg.field_control_spacing = a.control;
    cfg.perturbation = PhantomConfig::default_perturbation(a.width, a.height);
    cfg.seed = c.seed;
    cfg.validate();
    const Phantom ph = generate_phantom(cfg);
    const fs::path out = output_root(a.out, "phantom");
    write_mask_stack(out / "truth", ph.truth);
    write_mask_stack(out / "perturbed", ph.perturbed);
    write_image_stack(out / "truth_intensity", ph.truth_intensity);
    write_image_stack(out / "perturbed_intensity", ph.perturbed_intensity);
    write_text(out / "ground_truth.json", ground_truth_json(ph));
    std::cout << out.string() << "\n";
    return 0;
}

struct CalibrateArgs {
    std::vector<std::string> images;
    int synthetic = 0;
    double line_spacing = 50.0;
    double pitch = 10.0;
    std::string out;
};

int cmd_calibrate(const CalibrateArgs &a, const Common &c) {
    std::vector<double> per_image;
    for (const auto &p : a.images) per_image.push_back(calibrate_image(read_pgm(p), a.pitch).scale.S);
    for (int i = 0; i < a.synthetic; ++i) {
        GridImageConfig g;
        g.line_spacing = a.line_spacing;
        g.seed = mix_seed(c.seed, 500 + i);
        per_image.push_back(calibrate_image(calibration_grid(g), a.pitch).scale.S);
    }
    if (per_image.empty()) throw Error(ErrorCode::InvalidConfig, "give --image files or --synthetic N");
    const std::string text = scale_json(combine_scales(per_image));
    if (a.out.empty()) std::cout << text;
    else write_text(a.out, text);
    return 0;
}

struct RegisterArgs {
    std::string stack, intensity, out, stage = "hybrid", backend = "variational", predictor;
    double lambda = 0.01;
    int steps = 300;
    int restarts = 5;
};

int cmd_register(const RegisterArgs &a, const Common &) {
    MaskStack masks = read_mask_stack(a.stack);
    std::optional<ImageStack> img;
    if (!a.intensity.empty()) img = read_image_stack(a.intensity);
    const fs::path out = output_root(a.out, "register");
    RefineConfig rc;
    rc.lambda = a.lambda;
    rc.steps = a.steps;
    rc.backend = parse_backend(a.backend);
    rc.validate();
    std::optional<PredictorParams> params;
    if (rc.backend == RefineBackend::Amortized) {
        if (a.predictor.empty()) throw Error(ErrorCode::InvalidConfig, "--backend amortized needs --predictor");
        params = load_predictor(a.predictor);
    }
    const bool do_ocm = a.stage == "ocm" || a.stage == "hybrid";
    const bool do_refine = a.stage == "refine" || a.stage == "hybrid";
    if (!do_ocm && !do_refine) throw Error(ErrorCode::InvalidConfig, "--stage must be ocm, refine or hybrid");

    if (do_ocm) {
        OcmOptions opts;
        opts.restarts = a.restarts;
        const auto bounds = ParameterBounds::standard(masks[0].width(), masks[0].height());
        std::vector<SimilarityTransform> T;
        std::vector<double> trace;
        if (img) {
            auto r = register_stack(*img, bounds, opts);
            T = r.transforms;
            trace = r.objective_trace;
            img = r.aligned;
        } else {
            auto r = register_stack(masks, bounds, opts);
            T = r.transforms;
            trace = r.objective_trace;
        }
        for (std::size_t i = 0; i < masks.size(); ++i) masks.slices[i] = warp_similarity(masks[i], T[i]);
        write_text(out / "transforms.json", transforms_json(T, trace));
    }
    if (do_refine) {
        const PredictorParams *p = params ? &*params : nullptr;
        const auto fields = img ? refine_stack(*img, rc, p).fields : refine_stack(masks, rc, p).fields;
        for (std::size_t i = 0; i < masks.size(); ++i) masks.slices[i] = warp_dense(masks[i], fields[i]);
        if (img) img = apply_fields(*img, fields);
        write_fields(out / "fields", fields);
    }
    write_mask_stack(out / "registered", masks);
    if (img) write_image_stack(out / "registered_intensity", *img);
    std::cout << out.string() << "\n";
    return 0;
}

struct SmoothArgs {
    std::string stack, out;
    int segment_len = 8, samples = 16;
};

int cmd_smooth(const SmoothArgs &a, const Common &) {
    const MaskStack in = read_mask_stack(a.stack);
    std::vector<std::string> warnings;
    const MaskStack smoothed = smooth_stack(in, a.segment_len, a.samples, &warnings);
    const fs::path out = output_root(a.out, "smoothed");
    write_mask_stack(out, smoothed);
    for (const auto &w : warnings) std::cerr << "warning: " << w << "\n";
    std::cout << out.string() << "\n";
    return 0;
}

struct ReconstructArgs {
    std::string stack, scale_file, out;
    double scale = 0.0;
};

int cmd_reconstruct(const ReconstructArgs &a, const Common &) {
    const MaskStack in = read_mask_stack(a.stack);
    std::optional<double> s;
    if (a.scale > 0.0) s = a.scale;
    else if (!a.scale_file.empty()) s = parse_scale(read_text(a.scale_file));
    const Volume3D v = stack_to_volume(in, s);
    const auto axes = pca_axes(v);
    const fs::path out = output_root(a.out, "reconstruct");
    write_volume(out / "volume.raw", v);
    const std::string m = measurements_json(extents(v, axes), volume_cm3(v), axes);
    write_text(out / "measurements.json", m);
    std::cout << m;
    return 0;
}

struct EvaluateArgs {
    std::string candidate, reference, out;
};

int cmd_evaluate(const EvaluateArgs &a, const Common &) {
    const auto r = evaluate_all(read_volume(a.candidate), read_volume(a.reference));
    const std::string text = report_json(r);
    if (a.out.empty()) std::cout << text;
    else write_text(a.out, text);
    return 0;
}

struct StatsArgs {
    std::string report, arm = "hybrid", versus = "ocm_only";
};

int cmd_stats(const StatsArgs &a, const Common &) {
    const auto arms = parse_report_slice_dice(read_text(a.report));
    const std::vector<double> *x = nullptr, *y = nullptr;
    for (const auto &[name, values] : arms) {
        if (name == a.arm) x = &values;
        if (name == a.versus) y = &values;
    }
    if (!x || !y) throw Error(ErrorCode::InvalidConfig, "report lacks arm '" + (x ? a.versus : a.arm) + "'");
    const auto w = wilcoxon_signed_rank(*x, *y);
    json j{{"arm", a.arm},     {"versus", a.versus}, {"W_plus", w.statistic}, {"W_minus", w.w_minus},
           {"n", w.n},         {"p_value", w.p_value}, {"exact", w.exact},    {"degenerate", w.degenerate}};
    std::cout << j.dump(2) << "\n";
    return 0;
}

struct TrainArgs {
    std::string out;
    int pairs = 10, size = 64, epochs = 100, batch = 8;
    double lr = 1e-4, amplitude = 4.0;
};

int cmd_train(const TrainArgs &a, const Common &c) {
    PhantomConfig pc;
    pc.width = pc.height = a.size;
    pc.spacing = {1.0, 1.0};
    pc.perturbation = PhantomConfig::default_perturbation(a.size, a.size);
    pc.nonrigid_amplitude = a.amplitude;
    pc.field_control_spacing = 16;
    pc.seed = c.seed;
    std::vector<ImagePair> pairs;
    for (auto &p : phantom_pairs(pc, a.pairs)) pairs.emplace_back(std::move(p.fixed), std::move(p.moving));
    TrainConfig tc;
    tc.epochs = a.epochs;
    tc.learning_rate = a.lr;
    tc.batch = a.batch;
    tc.seed = c.seed;
    const auto r = train_amortized(pairs, RefineConfig{}, tc);
    const fs::path out = output_root(a.out, "predictor");
    save_predictor(r.params, out / "predictor.bin");
    std::ostringstream csv;
    csv.precision(17);
    csv << "epoch,loss\n";
    for (std::size_t e = 0; e < r.loss_curve.size(); ++e) csv << e << ',' << r.loss_curve[e] << '\n';
    write_text(out / "loss_curve.csv", csv.str());
    std::cout << out.string() << "\n";
    return 0;
}

struct RunArgs {
    std::string config, out;
    bool print_defaults = false;
};

int cmd_run(const RunArgs &a, const Common &c) {
    PipelineConfig cfg = a.config.empty() ? PipelineConfig::defaults() : config_from_json(read_text(a.config));
    if (c.seed_given) cfg.seed = c.seed;
    if (!a.out.empty()) cfg.output_dir = a.out;
    else if (const char *env = std::getenv(kOutputEnv); env && *env) cfg.output_dir = env;
    if (a.print_defaults) {
        std::cout << config_to_json(cfg);
        return 0;
    }
    const auto r = run_pipeline(cfg);
    for (const auto &s : r.stages) std::cerr << s.name << ": " << s.status << " (" << s.seconds << " s)\n";
    if (r.exit_code != 0) std::cerr << "error in " << r.failed_stage.value_or("?") << ": " << r.message << "\n";
    return r.exit_code;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Slice stack registration and 3D reconstruction"};
    app.require_subcommand(1);
    Common common;
    app.add_option_function<std::uint64_t>(
           "--seed", [&](std::uint64_t s) { common.seed = s, common.seed_given = true; }, "random seed")
        ->envname("SLICERECON_SEED");
    bool print_defaults = false;
    app.add_flag("--print-defaults", print_defaults, "print the default pipeline config and exit");

    PhantomArgs pa;
    auto *ph = app.add_subcommand("phantom", "generate a synthetic perturbed stack");
    ph->add_option("-o,--out", pa.out, "output directory");
    ph->add_option("--width", pa.width);
    ph->add_option("--height", pa.height);
    ph->add_option("--slices", pa.slices);
    ph->add_option("--spacing", pa.spacing, "mm per pixel");
    ph->add_option("--amplitude", pa.amplitude, "nonrigid warp amplitude, px");
    ph->add_option("--control-spacing", pa.control, "B-spline control spacing, px");

    CalibrateArgs ca;
    auto *cal = app.add_subcommand("calibrate", "scale factor from grid photographs");
    cal->add_option("-i,--image", ca.images, "grid image (PGM)")->check(CLI::ExistingFile);
    cal->add_option("--synthetic", ca.synthetic, "number of synthetic grid sheets");
    cal->add_option("--line-spacing", ca.line_spacing, "synthetic line spacing, px");
    cal->add_option("--pitch", ca.pitch, "grid pitch, mm");
    cal->add_option("-o,--out", ca.out, "scale.json path (stdout if omitted)");

    RegisterArgs ra;
    auto *reg = app.add_subcommand("register", "OCM and/or residual refinement of a stack");
    reg->add_option("--stack", ra.stack, "mask stack directory")->required()->check(CLI::ExistingDirectory);
    reg->add_option("--intensity", ra.intensity, "intensity stack directory")->check(CLI::ExistingDirectory);
    reg->add_option("--stage", ra.stage)->check(CLI::IsMember({"ocm", "refine", "hybrid"}));
    reg->add_option("--backend", ra.backend)->check(CLI::IsMember({"variational", "amortized"}));
    reg->add_option("--predictor", ra.predictor, "trained predictor file");
    reg->add_option("--lambda", ra.lambda);
    reg->add_option("--steps", ra.steps);
    reg->add_option("--restarts", ra.restarts);
    reg->add_option("-o,--out", ra.out, "output directory");

    SmoothArgs sa;
    auto *sm = app.add_subcommand("smooth", "Bezier contour smoothing of a mask stack");
    sm->add_option("--stack", sa.stack)->required()->check(CLI::ExistingDirectory);
    sm->add_option("--segment-len", sa.segment_len);
    sm->add_option("--samples", sa.samples);
    sm->add_option("-o,--out", sa.out, "output directory");

    ReconstructArgs rca;
    auto *rec = app.add_subcommand("reconstruct", "stack to volume plus PCA measurements");
    rec->add_option("--stack", rca.stack)->required()->check(CLI::ExistingDirectory);
    rec->add_option("--scale", rca.scale, "mm per pixel");
    rec->add_option("--scale-file", rca.scale_file, "scale.json from calibrate")->check(CLI::ExistingFile);
    rec->add_option("-o,--out", rca.out, "output directory");

    EvaluateArgs ea;
    auto *ev = app.add_subcommand("evaluate", "compare a volume against a reference");
    ev->add_option("--candidate", ea.candidate)->required()->check(CLI::ExistingFile);
    ev->add_option("--reference", ea.reference)->required()->check(CLI::ExistingFile);
    ev->add_option("-o,--out", ea.out, "report path (stdout if omitted)");

    StatsArgs sta;
    auto *st = app.add_subcommand("stats", "Wilcoxon signed-rank test between two arms of a report");
    st->add_option("--report", sta.report)->required()->check(CLI::ExistingFile);
    st->add_option("--arm", sta.arm);
    st->add_option("--versus", sta.versus);

    TrainArgs ta;
    auto *tr = app.add_subcommand("train", "train the amortized predictor on phantom pairs");
    tr->add_option("--pairs", ta.pairs);
    tr->add_option("--size", ta.size, "canvas size, px (multiple of 16)");
    tr->add_option("--epochs", ta.epochs);
    tr->add_option("--lr", ta.lr);
    tr->add_option("--batch", ta.batch);
    tr->add_option("--amplitude", ta.amplitude);
    tr->add_option("-o,--out", ta.out, "output directory");

    RunArgs rua;
    auto *run = app.add_subcommand("run", "full pipeline from a JSON config");
    run->add_option("-c,--config", rua.config, "pipeline config")->check(CLI::ExistingFile);
    run->add_option("-o,--out", rua.out, "output directory");
    run->add_flag("--print-defaults", rua.print_defaults, "print the resolved config and exit");

    // --print-defaults works without a subcommand too
    for (int i = 1; i < argc; ++i) {
        if (std::string(argv[i]) == "--print-defaults" && argc == 2) {
            std::cout << config_to_json(PipelineConfig::defaults());
            return 0;
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (print_defaults) {
            std::cout << config_to_json(PipelineConfig::defaults());
            return 0;
        }
        if (*ph) return cmd_phantom(pa, common);
        if (*cal) return cmd_calibrate(ca, common);
        if (*reg) return cmd_register(ra, common);
        if (*sm) return cmd_smooth(sa, common);
        if (*rec) return cmd_reconstruct(rca, common);
        if (*ev) return cmd_evaluate(ea, common);
        if (*st) return cmd_stats(sta, common);
        if (*tr) return cmd_train(ta, common);
        if (*run) return cmd_run(rua, common);
    } catch (const Error &e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const fs::filesystem_error &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
