// SPDX-License-Identifier: Apache-2.0
#pragma once

// Task-level wiring of text removal and controllable inpainting.

#include "textforge/pipeline.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace textforge {

enum class TaskKind { removal, editing, insertion, repositioning, rescaling, style_insertion, style_editing };

const char* to_string(TaskKind kind);
/// Accepts the snake_case names and their dashed spellings ("style-insertion").
TaskKind parse_task(std::string_view name);
const std::vector<TaskKind>& all_tasks();

bool needs_removal(TaskKind kind);
bool needs_inpainting(TaskKind kind);
bool needs_reference(TaskKind kind);

struct ApplicationInputs {
    TaskKind task = TaskKind::removal;
    Image image;
    Image mask;          // region of the existing text (or of the new text for insertion)
    Image target_mask;   // new location for repositioning and rescaling; empty means `mask`
    std::string source_text;  // text currently inside `mask`; enables mask shrinking when set
    std::string target_text;
    Image ref_image;     // style reference for the style tasks
    Image ref_mask;      // text region of the reference
    std::uint64_t seed = 0;
    losses::GuidanceWeights weights;
    pipeline::SamplingSchedule schedule;
    pipeline::AdamOptions adam;
    masks::ShrinkOptions shrink;
    masks::CharWidthPriors priors = masks::CharWidthPriors::standard();
};

/// Throws ValidationError describing the first problem found.
void validate_inputs(const ApplicationInputs& inputs);

/// The two components, behind an interface so wiring can be observed in isolation.
class ComponentRunner {
public:
    virtual ~ComponentRunner() = default;
    virtual pipeline::RemovalResult remove(const Image& image, const Image& mask, const pipeline::SamplingSchedule& schedule,
                                           std::uint64_t seed) = 0;
    virtual pipeline::InpaintingResult inpaint(const pipeline::InpaintingRequest& request,
                                               const pipeline::SamplingSchedule& schedule, std::uint64_t seed,
                                               const pipeline::InpaintingOptions& options) = 0;
    virtual SpatialDims latent_dims_for(const Image& image) const = 0;
};

class SessionRunner final : public ComponentRunner {
public:
    explicit SessionRunner(pipeline::BackboneSession& session, pipeline::RunObserver observer = {})
        : session_(session), observer_(std::move(observer)) {}

    pipeline::RemovalResult remove(const Image& image, const Image& mask, const pipeline::SamplingSchedule& schedule,
                                   std::uint64_t seed) override;
    pipeline::InpaintingResult inpaint(const pipeline::InpaintingRequest& request, const pipeline::SamplingSchedule& schedule,
                                       std::uint64_t seed, const pipeline::InpaintingOptions& options) override;
    SpatialDims latent_dims_for(const Image& image) const override { return session_.latent_dims_for(image); }

private:
    pipeline::BackboneSession& session_;
    pipeline::RunObserver observer_;
};

/// Destination for job artifacts.
class ArtifactSink {
public:
    virtual ~ArtifactSink() = default;
    virtual void put_image(const std::string& name, const Image& image) = 0;
    virtual void put_text(const std::string& name, const std::string& text) = 0;
};

class DirectorySink final : public ArtifactSink {
public:
    explicit DirectorySink(std::filesystem::path dir);
    void put_image(const std::string& name, const Image& image) override;
    void put_text(const std::string& name, const std::string& text) override;
    const std::vector<std::filesystem::path>& written() const { return written_; }

private:
    std::filesystem::path dir_;
    std::vector<std::filesystem::path> written_;
};

struct ApplicationResult {
    Image output;
    std::optional<Image> removal;   // composited removal intermediate
    std::optional<Image> grid;
    double shrink_ratio = 1.0;
    std::vector<pipeline::LossSample> trace;
    pipeline::HookAccounting removal_accounting;
    pipeline::HookAccounting inpainting_accounting;
    std::vector<std::string> warnings;
};

/// Runs `inputs.task`. Artifacts (input.png, mask.png, removal.png, grid.png, output.png,
/// loss_trace.json) go to `sink` when one is given.
ApplicationResult run_application(const ApplicationInputs& inputs, ComponentRunner& runner, ArtifactSink* sink = nullptr);

std::string loss_trace_json(const std::vector<pipeline::LossSample>& trace);

}  // namespace textforge
