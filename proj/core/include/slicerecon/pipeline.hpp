#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "slicerecon/calibrate.hpp"
#include "slicerecon/error.hpp"
#include "slicerecon/ocm.hpp"
#include "slicerecon/phantom.hpp"
#include "slicerecon/refine.hpp"

namespace slicerecon {

std::string_view library_version() noexcept;

struct StageToggles {
    bool phantom = true;
    bool calibrate = true;
    bool ocm = true;
    bool refine = true;
    bool smooth = true;
    bool reconstruct = true;
    bool evaluate = true;
};

/// External inputs. When `stack` is set the phantom stage is skipped and the
/// stack is registered instead; `reference` is then needed for evaluation.
struct PipelinePaths {
    std::optional<std::filesystem::path> stack;       // mask stack directory
    std::optional<std::filesystem::path> intensity;   // image stack directory
    std::optional<std::filesystem::path> reference;   // mask stack directory
    std::vector<std::filesystem::path> grid_images;   // PGM calibration photographs
    std::optional<std::filesystem::path> predictor;   // trained amortized weights
};

struct CalibrationSettings {
    double grid_pitch_mm = 10.0;
    /// Synthetic sheets rendered when no grid images are given.
    int synthetic_images = 3;
    int synthetic_size = 256;
    HoughOptions hough{};
};

struct SmoothSettings {
    int segment_len = 8;
    int samples = 16;
};

struct PipelineConfig {
    std::uint64_t seed = 1;
    std::filesystem::path output_dir = "slicerecon-out";
    StageToggles stages{};
    PipelinePaths paths{};
    PhantomConfig phantom{};
    CalibrationSettings calibration{};
    ParameterBounds bounds = ParameterBounds::standard(128, 128);
    int ocm_restarts = 5;
    SsdRegion ocm_region = SsdRegion::FullCanvas;
    RefineConfig refine{};
    SmoothSettings smooth{};
    std::vector<std::string> arms{"ocm_only", "refine_only", "hybrid"};
    int workers = 0; // 0 = available parallelism

    /// Defaults used by the `run` subcommand: a 128x128x10 phantom with a
    /// 4 px nonrigid warp on a 16 px control grid.
    static PipelineConfig defaults();
    /// Throws InvalidConfig for inconsistent settings and IoError for
    /// referenced paths that do not exist.
    void validate() const;
};

/// JSON round trip. Missing keys keep their defaults; unknown keys are an
/// InvalidConfig error.
std::string config_to_json(const PipelineConfig &cfg);
PipelineConfig config_from_json(const std::string &text);

/// 0 ok, 2 configuration, 3 numerical, 4 I/O.
int exit_code_for(ErrorCode code) noexcept;

struct StageRecord {
    std::string name;
    std::string status; // ok | skipped | failed
    double seconds = 0.0;
};

struct PipelineOutcome {
    int exit_code = 0;
    std::vector<StageRecord> stages;
    std::optional<std::string> failed_stage;
    std::string message;
};

/// Runs the enabled stages in order, writing artifacts, report.json and
/// run_manifest.json under cfg.output_dir. Failures are caught, recorded in
/// the manifest and reflected in the exit code.
PipelineOutcome run_pipeline(const PipelineConfig &cfg);

} // namespace slicerecon
