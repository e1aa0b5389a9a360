// SPDX-License-Identifier: Apache-2.0
#pragma once

// Text removal and controllable inpainting over a BackboneSession.

#include "textforge/adam.hpp"
#include "textforge/backbone.hpp"
#include "textforge/grid.hpp"
#include "textforge/losses.hpp"
#include "textforge/masks.hpp"
#include "textforge/schedule.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace textforge::pipeline {

/// Optional callbacks fired from inside a run. `step` counts sampling steps from 0.
struct RunObserver {
    std::function<void(std::string_view phase, int completed_steps, int total_steps)> progress;
    /// Maps at the profile's inspect sites, seen during sampling forwards (after manipulation).
    std::function<void(std::string_view phase, int step, const HookSite& site, const AttentionMap& map)> attention;
};

/// How often each manipulation and collector ran during one call.
struct HookAccounting {
    std::map<HookSite, int> sai;
    std::map<HookSite, int> car;
    std::map<HookSite, int> sam;
    std::map<HookSite, int> content;
    std::map<HookSite, int> style;
    int denoise_steps = 0;
    std::vector<int> opt_steps;            // sampling steps at which optimization ran
    std::vector<int> opt_iterations;       // iterations completed per stage, aligned with opt_steps
};

struct LossSample {
    int step = 0;
    int iteration = 0;
    double content = 0.0;
    double style = 0.0;
    double total = 0.0;
};

struct RemovalResult {
    Image raw;          // decoded sample
    Image composited;   // raw inside the mask, original input elsewhere
    attention::LatentMask latent_mask;
    HookAccounting accounting;
};

/// Blank-prompt sampling with SAI during the first sai_fraction of the steps and CAR during the
/// first car_fraction.
RemovalResult run_text_removal(BackboneSession& session, const Image& image, const Image& pixel_mask,
                               const SamplingSchedule& schedule, std::uint64_t seed, const RunObserver& observer = {});

struct OptimizationOutcome {
    int iterations = 0;
    bool aborted = false;
    double last_loss = 0.0;
};

/// Objective returning a loss value and writing d loss / d latent into `grad`.
using LatentObjective = std::function<double(const Matrix& latent, Matrix& grad)>;

/// `iterations` Adam steps on `latent` with a fresh optimizer. A non-finite loss or gradient stops
/// the loop and restores the last latent whose loss was finite.
OptimizationOutcome optimize_latent(Matrix& latent, int iterations, const AdamOptions& options,
                                    const LatentObjective& objective, std::vector<double>* trace = nullptr);

struct InpaintingRequest {
    Image removed_image;  // I_r, the canvas to write into
    Image ref_image;      // style reference, same size as removed_image
    Image ref_mask;       // text region of the reference
    masks::MaskSet mask_set;
    std::string target_text;
    losses::GuidanceWeights weights;
};

struct InpaintingOptions {
    AdamOptions adam;
    bool apply_sam = true;
};

struct InpaintingResult {
    Image output;       // target slot of the decoded grid
    Image grid_output;  // the whole decoded grid
    grid::GridCanvas canvas;
    std::vector<LossSample> trace;
    HookAccounting accounting;
    std::vector<std::string> warnings;
};

/// Grid-trick sampling conditioned on `target_text`, with latent optimization against the
/// content and style losses at the schedule's optimization steps.
InpaintingResult run_controllable_inpainting(BackboneSession& session, const InpaintingRequest& request,
                                             const SamplingSchedule& schedule, std::uint64_t seed,
                                             const InpaintingOptions& options = {}, const RunObserver& observer = {});

}  // namespace textforge::pipeline
