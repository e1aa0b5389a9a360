// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "textforge/application.hpp"
#include "textforge/config.hpp"
#include "support.hpp"

#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <map>

using namespace textforge;
using textforge::testing::rect_mask;
using textforge::testing::test_card;

namespace {

/// Records every component call and returns recognisable images.
class SpyRunner final : public ComponentRunner {
public:
    int removals = 0;
    int inpaints = 0;
    std::vector<std::string> order;
    Image removal_input, removal_mask;
    pipeline::InpaintingRequest last_request;
    std::uint64_t last_seed = 0;

    pipeline::RemovalResult remove(const Image& image, const Image& mask, const pipeline::SamplingSchedule&,
                                   std::uint64_t seed) override {
        ++removals;
        order.push_back("remove");
        removal_input = image;
        removal_mask = mask;
        last_seed = seed;
        pipeline::RemovalResult r;
        r.raw = Image(image.width, image.height, image.channels, 7);
        r.composited = composite(r.raw, image, mask);
        return r;
    }

    pipeline::InpaintingResult inpaint(const pipeline::InpaintingRequest& request, const pipeline::SamplingSchedule&,
                                       std::uint64_t seed, const pipeline::InpaintingOptions&) override {
        ++inpaints;
        order.push_back("inpaint");
        last_request = request;
        last_seed = seed;
        pipeline::InpaintingResult r;
        r.output = Image(request.removed_image.width, request.removed_image.height, 3, 200);
        r.grid_output = Image(request.removed_image.width * 2, request.removed_image.height, 3, 100);
        r.trace = {{0, 0, 1.0, 2.0, 25.0}};
        return r;
    }

    SpatialDims latent_dims_for(const Image& image) const override { return {image.height / 8, image.width / 8}; }
};

class MemorySink final : public ArtifactSink {
public:
    std::map<std::string, Image> images;
    std::map<std::string, std::string> texts;
    void put_image(const std::string& name, const Image& image) override { images[name] = image; }
    void put_text(const std::string& name, const std::string& text) override { texts[name] = text; }
};

ApplicationInputs base_inputs(TaskKind task) {
    ApplicationInputs in;
    in.task = task;
    in.image = test_card(64, 32);
    in.mask = rect_mask(64, 32, 8, 8, 56, 24);
    in.target_text = "FLASH";
    in.seed = 7;
    return in;
}

}  // namespace

TEST_CASE("task names parse in both spellings") {
    for (TaskKind k : all_tasks()) CHECK(parse_task(to_string(k)) == k);
    CHECK(parse_task("style-insertion") == TaskKind::style_insertion);
    CHECK_THROWS_AS(parse_task("paint"), ValidationError);
    CHECK(all_tasks().size() == 7);
}

TEST_CASE("removal runs only the removal component") {
    SpyRunner spy;
    MemorySink sink;
    ApplicationInputs in = base_inputs(TaskKind::removal);
    in.target_text.clear();
    const ApplicationResult r = run_application(in, spy, &sink);
    CHECK(spy.removals == 1);
    CHECK(spy.inpaints == 0);
    CHECK(r.output == composite(Image(64, 32, 3, 7), in.image, in.mask));
    CHECK(sink.images.count("removal.png") == 1);
    CHECK(sink.images.count("output.png") == 1);
    CHECK(sink.images.count("grid.png") == 0);
}

TEST_CASE("editing, repositioning and rescaling remove first, then inpaint with the input as reference") {
    for (TaskKind task : {TaskKind::editing, TaskKind::repositioning, TaskKind::rescaling}) {
        SpyRunner spy;
        MemorySink sink;
        ApplicationInputs in = base_inputs(task);
        if (task != TaskKind::editing) in.target_mask = rect_mask(64, 32, 0, 0, 24, 16);
        const ApplicationResult r = run_application(in, spy, &sink);
        CHECK(spy.order == std::vector<std::string>{"remove", "inpaint"});
        CHECK(spy.removal_input == in.image);
        CHECK(spy.last_request.ref_image == in.image);
        CHECK(spy.last_request.ref_mask == in.mask);
        CHECK(spy.last_request.removed_image == *r.removal);
        CHECK(spy.last_request.mask_set.pixel_mask == (in.target_mask.empty() ? in.mask : in.target_mask));
        CHECK(spy.last_seed == 7);
        CHECK(r.output.width == 64);
        for (const char* name : {"input.png", "mask.png", "removal.png", "grid.png", "output.png"})
            CHECK(sink.images.count(name) == 1);
        CHECK(sink.texts.count("loss_trace.json") == 1);
    }
}

TEST_CASE("insertion skips removal and uses the input as reference") {
    SpyRunner spy;
    ApplicationInputs in = base_inputs(TaskKind::insertion);
    run_application(in, spy);
    CHECK(spy.removals == 0);
    CHECK(spy.inpaints == 1);
    CHECK(spy.last_request.ref_image == in.image);
    CHECK(spy.last_request.removed_image == in.image);
    CHECK(spy.last_request.ref_mask == in.mask);

    in.ref_mask = rect_mask(64, 32, 0, 0, 16, 16);
    run_application(in, spy);
    CHECK(spy.last_request.ref_mask == in.ref_mask);
}

TEST_CASE("style tasks use the given reference, resized to the input") {
    SpyRunner spy;
    ApplicationInputs in = base_inputs(TaskKind::style_editing);
    CHECK_THROWS_AS(run_application(in, spy), ValidationError);
    CHECK(spy.removals == 0);

    in.ref_image = test_card(128, 64, 9);
    in.ref_mask = rect_mask(128, 64, 16, 16, 112, 48);
    run_application(in, spy);
    CHECK(spy.order == std::vector<std::string>{"remove", "inpaint"});
    CHECK(spy.last_request.ref_image.width == 64);
    CHECK(spy.last_request.ref_mask.width == 64);
    CHECK(count_mask_pixels(spy.last_request.ref_mask) > 0);

    SpyRunner spy2;
    ApplicationInputs ins = base_inputs(TaskKind::style_insertion);
    ins.ref_image = test_card(64, 32, 3);
    run_application(ins, spy2);
    CHECK(spy2.removals == 0);
    CHECK(spy2.last_request.ref_image == ins.ref_image);
    CHECK(count_mask_pixels(spy2.last_request.ref_mask) == 64u * 32u);
}

TEST_CASE("source text shrinks the target mask") {
    SpyRunner spy;
    ApplicationInputs in = base_inputs(TaskKind::editing);
    in.source_text = "POCKET";
    const ApplicationResult r = run_application(in, spy);
    CHECK(r.shrink_ratio < 1.0);
    CHECK(count_mask_pixels(spy.last_request.mask_set.shrunk_pixel) < count_mask_pixels(in.mask));
}

TEST_CASE("validation errors") {
    SpyRunner spy;
    ApplicationInputs in = base_inputs(TaskKind::editing);
    in.mask = Image(64, 32, 1);
    CHECK_THROWS_AS(run_application(in, spy), ValidationError);
    in = base_inputs(TaskKind::editing);
    in.target_text.clear();
    CHECK_THROWS_AS(validate_inputs(in), ValidationError);
    in = base_inputs(TaskKind::editing);
    in.mask = rect_mask(32, 32, 0, 0, 8, 8);
    CHECK_THROWS_AS(validate_inputs(in), ValidationError);
    in = base_inputs(TaskKind::removal);
    in.weights.lambda_style = -1;
    CHECK_THROWS_AS(validate_inputs(in), ValidationError);
    CHECK(spy.removals == 0);
}

TEST_CASE("loss trace JSON writes null for non-finite values") {
    const std::string text = loss_trace_json({{4, 2, 1.5, std::nan(""), 3.0}});
    const auto doc = nlohmann::json::parse(text);
    CHECK(doc[0]["step"] == 4);
    CHECK(doc[0]["style"].is_null());
    CHECK(doc[0]["total"] == 3.0);
}

TEST_CASE("editing on the stub backbone keeps the input size and is reproducible") {
    auto session = pipeline::make_stub_backbone(2);
    SessionRunner runner(*session);
    ApplicationInputs in = base_inputs(TaskKind::editing);
    in.source_text = "POCKET";
    in.schedule.opt_iters = 3;
    const ApplicationResult a = run_application(in, runner);
    const ApplicationResult b = run_application(in, runner);
    CHECK(a.output.width == in.image.width);
    CHECK(a.output.height == in.image.height);
    CHECK(a.output == b.output);
    CHECK(a.removal_accounting.sai.size() == 1);
    CHECK(a.inpainting_accounting.opt_steps == std::vector<int>{0, 4, 8});
}

TEST_CASE("directory sink writes files") {
    const auto dir = std::filesystem::temp_directory_path() / "textforge_sink_test";
    std::filesystem::remove_all(dir);
    DirectorySink sink(dir);
    sink.put_image("a.png", Image(4, 4, 1, 9));
    sink.put_text("b.json", "[]");
    CHECK(sink.written().size() == 2);
    CHECK(read_png(dir / "a.png") == Image(4, 4, 1, 9));
    std::filesystem::remove_all(dir);
}

TEST_CASE("engine config JSON") {
    const EngineConfig cfg = engine_config_from_json(
        R"({"backbone_seed": 4, "device_slots": 2, "retention": 5,
            "defaults": {"lambda_content": 1.5, "steps": 10, "opt_stages": [0.0, 0.5], "learning_rate": 0.05}})");
    CHECK(cfg.backbone_seed == 4);
    CHECK(cfg.device_slots == 2);
    CHECK(cfg.retention == 5);
    CHECK(cfg.weights.lambda_content == 1.5);
    CHECK(cfg.weights.lambda_style == 10.0);
    CHECK(cfg.schedule.total_steps == 10);
    CHECK(cfg.schedule.opt_stages == std::vector<double>{0.0, 0.5});
    CHECK(cfg.adam.learning_rate == 0.05);
    CHECK_THROWS_AS(engine_config_from_json(R"({"device_slots": 0})"), ValidationError);
    CHECK_THROWS_AS(engine_config_from_json("{"), ValidationError);
    CHECK_THROWS_AS(load_engine_config("/nonexistent/config.json"), ValidationError);
}

TEST_CASE("shipped config and profile load") {
    const auto root = std::filesystem::path(TEXTFORGE_SOURCE_DIR);
    const EngineConfig cfg = load_engine_config(root / "configs" / "engine.json");
    CHECK(cfg.profile.to_json_text() == pipeline::BackboneProfile::reference_stub().to_json_text());
    CHECK(cfg.weights.lambda_style == 10.0);
}
