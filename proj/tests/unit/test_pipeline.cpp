#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "slicerecon/pipeline.hpp"

using namespace slicerecon;
namespace fs = std::filesystem;

namespace {

PipelineConfig small_config(const fs::path &out) {
    auto c = PipelineConfig::defaults();
    c.output_dir = out;
    c.phantom.width = c.phantom.height = 48;
    c.phantom.slices = 3;
    c.phantom.spacing = {0.5, 0.5};
    c.phantom.semi_a = 8.0;
    c.phantom.semi_b = 5.0;
    c.phantom.perturbation = PhantomConfig::default_perturbation(48, 48);
    c.phantom.nonrigid_amplitude = 2.0;
    c.phantom.field_control_spacing = 12;
    c.bounds = ParameterBounds::standard(48, 48);
    c.calibration.synthetic_images = 1;
    c.calibration.synthetic_size = 128;
    c.ocm_restarts = 1;
    c.refine.steps = 5;
    return c;
}

nlohmann::json read_json(const fs::path &p) {
    std::ifstream in(p);
    return nlohmann::json::parse(in);
}

} // namespace

TEST_CASE("config json round trip") {
    auto c = PipelineConfig::defaults();
    c.seed = 77;
    c.refine.lambda = 0.1;
    c.arms = {"hybrid"};
    c.stages.smooth = false;
    const std::string text = config_to_json(c);
    const auto back = config_from_json(text);
    CHECK(back.seed == 77);
    CHECK(back.refine.lambda == 0.1);
    CHECK(back.arms == std::vector<std::string>{"hybrid"});
    CHECK_FALSE(back.stages.smooth);
    CHECK(config_to_json(back) == text);
}

TEST_CASE("config errors") {
    auto expect_code = [](auto fn, ErrorCode code) {
        try {
            fn();
            FAIL("expected an error");
        } catch (const Error &e) {
            CHECK(e.code() == code);
        }
    };
    expect_code([] { config_from_json(R"({"seed": 1, "bogus": 2})"); }, ErrorCode::InvalidConfig);
    expect_code([] { config_from_json("{not json"); }, ErrorCode::InvalidConfig);
    auto c = PipelineConfig::defaults();
    c.arms = {"unknown_arm"};
    expect_code([&] { c.validate(); }, ErrorCode::InvalidConfig);
    c = PipelineConfig::defaults();
    c.stages.phantom = false;
    c.paths.stack = "/nonexistent/stack";
    c.stages.evaluate = false;
    expect_code([&] { c.validate(); }, ErrorCode::IoError);
    CHECK(exit_code_for(ErrorCode::IoError) == 4);
    CHECK(exit_code_for(ErrorCode::InvalidConfig) == 2);
    CHECK(exit_code_for(ErrorCode::NumericalDivergence) == 3);
}

TEST_CASE("phantom-only run writes only phantom artifacts") {
    const fs::path out = fs::temp_directory_path() / "slicerecon_pipeline_phantom";
    fs::remove_all(out);
    auto c = small_config(out);
    c.stages = StageToggles{true, false, false, false, false, false, false};
    const auto r = run_pipeline(c);
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(out / "phantom" / "truth"));
    CHECK(fs::exists(out / "run_manifest.json"));
    CHECK_FALSE(fs::exists(out / "report.json"));
    CHECK_FALSE(fs::exists(out / "ocm"));
    const auto m = read_json(out / "run_manifest.json");
    CHECK(m["status"] == "ok");
    CHECK(m["seed"] == 1);
    fs::remove_all(out);
}

TEST_CASE("full small run produces a report for each arm") {
    const fs::path out = fs::temp_directory_path() / "slicerecon_pipeline_full";
    fs::remove_all(out);
    const auto r = run_pipeline(small_config(out));
    REQUIRE(r.exit_code == 0);
    const auto rep = read_json(out / "report.json");
    for (const char *arm : {"ocm_only", "refine_only", "hybrid"}) {
        REQUIRE(rep["arms"].contains(arm));
        const double d = rep["arms"][arm]["dice"];
        CHECK(d > 0.5);
        CHECK(d <= 1.0);
    }
    CHECK(fs::exists(out / "arms" / "hybrid" / "volume.raw"));
    CHECK(fs::exists(out / "traces" / "ocm_objective.csv"));
    fs::remove_all(out);
}

TEST_CASE("a failing stage is recorded in the manifest") {
    const fs::path out = fs::temp_directory_path() / "slicerecon_pipeline_fail";
    fs::remove_all(out);
    auto c = small_config(out);
    c.paths.predictor = out / "missing.bin";
    c.refine.backend = RefineBackend::Amortized;
    const auto r = run_pipeline(c);
    CHECK(r.exit_code != 0);
    REQUIRE(r.failed_stage);
    const auto m = read_json(out / "run_manifest.json");
    CHECK(m["status"] == "failed");
    fs::remove_all(out);
}
