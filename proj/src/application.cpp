// SPDX-License-Identifier: Apache-2.0
#include "textforge/application.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>

namespace textforge {

namespace {

struct TaskName {
    TaskKind kind;
    const char* name;
};

constexpr TaskName kTaskNames[] = {
    {TaskKind::removal, "removal"},
    {TaskKind::editing, "editing"},
    {TaskKind::insertion, "insertion"},
    {TaskKind::repositioning, "repositioning"},
    {TaskKind::rescaling, "rescaling"},
    {TaskKind::style_insertion, "style_insertion"},
    {TaskKind::style_editing, "style_editing"},
};

Image as_mask(const Image& image) { return image.channels == 1 ? image : to_gray(image); }

/// Bilinear resize of a mask followed by re-binarization.
Image resize_mask(const Image& mask, int width, int height) {
    Image out = resize_bilinear(as_mask(mask), width, height);
    for (auto& p : out.pixels) p = p >= 128 ? 255 : 0;
    return out;
}

}  // namespace

const char* to_string(TaskKind kind) {
    for (const auto& t : kTaskNames)
        if (t.kind == kind) return t.name;
    return "?";
}

TaskKind parse_task(std::string_view name) {
    std::string normalized(name);
    for (char& c : normalized)
        if (c == '-') c = '_';
    for (const auto& t : kTaskNames)
        if (normalized == t.name) return t.kind;
    throw ValidationError("unknown task '" + std::string(name) + "'");
}

const std::vector<TaskKind>& all_tasks() {
    static const std::vector<TaskKind> tasks = [] {
        std::vector<TaskKind> out;
        for (const auto& t : kTaskNames) out.push_back(t.kind);
        return out;
    }();
    return tasks;
}

bool needs_removal(TaskKind kind) {
    return kind == TaskKind::removal || kind == TaskKind::editing || kind == TaskKind::repositioning ||
           kind == TaskKind::rescaling || kind == TaskKind::style_editing;
}

bool needs_inpainting(TaskKind kind) { return kind != TaskKind::removal; }

bool needs_reference(TaskKind kind) { return kind == TaskKind::style_insertion || kind == TaskKind::style_editing; }

void validate_inputs(const ApplicationInputs& in) {
    if (in.image.empty()) throw ValidationError("input image is empty");
    if (in.image.channels != 1 && in.image.channels != 3) throw ValidationError("input image must be grayscale or RGB");
    if (in.mask.width != in.image.width || in.mask.height != in.image.height)
        throw ValidationError("mask dimensions differ from the input image");
    if (count_mask_pixels(as_mask(in.mask)) == 0) throw ValidationError("mask is empty");
    if (!in.target_mask.empty()) {
        if (in.target_mask.width != in.image.width || in.target_mask.height != in.image.height)
            throw ValidationError("target mask dimensions differ from the input image");
        if (count_mask_pixels(as_mask(in.target_mask)) == 0) throw ValidationError("target mask is empty");
    }
    if (needs_inpainting(in.task) && in.target_text.empty())
        throw ValidationError(std::string("task ") + to_string(in.task) + " needs a target text");
    if (needs_reference(in.task) && in.ref_image.empty())
        throw ValidationError(std::string("task ") + to_string(in.task) + " needs a reference image");
    if (!in.ref_mask.empty()) {
        const Image& owner = in.ref_image.empty() ? in.image : in.ref_image;
        if (in.ref_mask.width != owner.width || in.ref_mask.height != owner.height)
            throw ValidationError("reference mask dimensions differ from its image");
        if (count_mask_pixels(as_mask(in.ref_mask)) == 0) throw ValidationError("reference mask is empty");
    }
    try {
        in.weights.validate();
        in.schedule.validate();
    } catch (const ContractError& e) {
        throw ValidationError(e.what());
    }
}

pipeline::RemovalResult SessionRunner::remove(const Image& image, const Image& mask, const pipeline::SamplingSchedule& schedule,
                                              std::uint64_t seed) {
    return pipeline::run_text_removal(session_, image, mask, schedule, seed, observer_);
}

pipeline::InpaintingResult SessionRunner::inpaint(const pipeline::InpaintingRequest& request,
                                                  const pipeline::SamplingSchedule& schedule, std::uint64_t seed,
                                                  const pipeline::InpaintingOptions& options) {
    return pipeline::run_controllable_inpainting(session_, request, schedule, seed, options, observer_);
}

DirectorySink::DirectorySink(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

void DirectorySink::put_image(const std::string& name, const Image& image) {
    const auto path = dir_ / name;
    write_png(path, image);
    written_.push_back(path);
}

void DirectorySink::put_text(const std::string& name, const std::string& text) {
    const auto path = dir_ / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw PipelineError("cannot write artifact " + path.string());
    out << text;
    written_.push_back(path);
}

std::string loss_trace_json(const std::vector<pipeline::LossSample>& trace) {
    auto number = [](double v) -> nlohmann::json {
        if (std::isfinite(v)) return v;
        return nullptr;
    };
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : trace)
        arr.push_back({{"step", s.step},
                       {"iteration", s.iteration},
                       {"content", number(s.content)},
                       {"style", number(s.style)},
                       {"total", number(s.total)}});
    return arr.dump(2);
}

ApplicationResult run_application(const ApplicationInputs& in, ComponentRunner& runner, ArtifactSink* sink) {
    validate_inputs(in);
    const Image image = in.image;
    const Image mask = as_mask(in.mask);
    const Image target_mask = in.target_mask.empty() ? mask : as_mask(in.target_mask);

    ApplicationResult result;
    if (sink) {
        sink->put_image("input.png", image);
        sink->put_image("mask.png", mask);
    }

    Image canvas = image;
    if (needs_removal(in.task)) {
        pipeline::RemovalResult removal = runner.remove(image, mask, in.schedule, in.seed);
        result.removal_accounting = removal.accounting;
        canvas = removal.composited;
        result.removal = canvas;
        if (sink) sink->put_image("removal.png", canvas);
    }

    if (!needs_inpainting(in.task)) {
        result.output = canvas;
        if (sink) sink->put_image("output.png", result.output);
        return result;
    }

    pipeline::InpaintingRequest request;
    request.removed_image = canvas;
    request.target_text = in.target_text;
    request.weights = in.weights;
    if (needs_reference(in.task)) {
        request.ref_image = in.ref_image;
        request.ref_mask = in.ref_mask.empty() ? Image(in.ref_image.width, in.ref_image.height, 1, 255) : as_mask(in.ref_mask);
        if (request.ref_image.width != image.width || request.ref_image.height != image.height) {
            request.ref_image = resize_bilinear(request.ref_image, image.width, image.height);
            request.ref_mask = resize_mask(request.ref_mask, image.width, image.height);
            if (count_mask_pixels(request.ref_mask) == 0) throw ValidationError("reference mask vanishes after resizing");
        }
    } else if (in.task == TaskKind::insertion) {
        request.ref_image = image;
        request.ref_mask = in.ref_mask.empty() ? target_mask : as_mask(in.ref_mask);
    } else {
        // editing, repositioning, rescaling: the input itself carries the style inside the original mask
        request.ref_image = image;
        request.ref_mask = mask;
    }
    if (request.ref_image.channels != canvas.channels) {
        request.ref_image = to_rgb(request.ref_image);
        request.removed_image = to_rgb(request.removed_image);
    }

    const SpatialDims dims = runner.latent_dims_for(image);
    const std::string_view source = in.task == TaskKind::insertion || in.task == TaskKind::style_insertion
                                        ? std::string_view{}
                                        : std::string_view{in.source_text};
    request.mask_set = masks::build_mask_set(target_mask, dims, source, in.target_text, in.priors, in.shrink);
    result.shrink_ratio = request.mask_set.shrink_ratio;

    pipeline::InpaintingOptions options;
    options.adam = in.adam;
    pipeline::InpaintingResult ci = runner.inpaint(request, in.schedule, in.seed, options);
    result.output = std::move(ci.output);
    result.grid = std::move(ci.grid_output);
    result.trace = std::move(ci.trace);
    result.inpainting_accounting = std::move(ci.accounting);
    result.warnings = std::move(ci.warnings);
    if (sink) {
        sink->put_image("grid.png", *result.grid);
        sink->put_image("output.png", result.output);
        sink->put_text("loss_trace.json", loss_trace_json(result.trace));
    }
    return result;
}

}  // namespace textforge
