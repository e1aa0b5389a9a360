// SPDX-License-Identifier: Apache-2.0
#include "textforge/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace textforge::pipeline {

namespace {

using attention::LatentMask;

void count_sites(HookRegistry& hooks, const std::vector<HookSite>& sites, std::map<HookSite, int>& out, bool collections) {
    for (const HookSite& site : sites)
        out[site] = collections ? hooks.collection_count(site) : hooks.invocation_count(site);
}

void install_observers(BackboneSession& session, const RunObserver& observer, std::string_view phase, const int& step) {
    if (!observer.attention) return;
    for (const HookSite& site : session.profile().sites.inspect) {
        session.hooks().observe(site, [&observer, phase, &step](const HookSite& s, const AttentionMap& map) {
            observer.attention(phase, step, s, map);
        });
    }
}

void report(const RunObserver& observer, std::string_view phase, int done, int total) {
    if (observer.progress) observer.progress(phase, done, total);
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

std::vector<AttentionMap> as_maps(const std::vector<ad::Var>& vars, AttentionKind kind, SpatialDims dims) {
    std::vector<AttentionMap> out;
    out.reserve(vars.size());
    for (const ad::Var& v : vars) out.push_back(AttentionMap{v.value(), kind, dims});
    return out;
}

}  // namespace

RemovalResult run_text_removal(BackboneSession& session, const Image& image, const Image& pixel_mask,
                               const SamplingSchedule& schedule, std::uint64_t seed, const RunObserver& observer) {
    schedule.validate();
    if (image.empty()) throw ValidationError("removal: empty input image");
    if (pixel_mask.width != image.width || pixel_mask.height != image.height)
        throw ValidationError("removal: mask and image dimensions differ");
    if (count_mask_pixels(pixel_mask) == 0) throw ValidationError("removal: mask is empty");

    const SpatialDims dims = session.latent_dims_for(image);
    const LatentMask latent_mask = masks::to_latent_mask(pixel_mask, dims);
    if (latent_mask.count() == 0) throw ValidationError("removal: mask vanishes at latent resolution");

    const Latent z0 = session.encode_image(image);
    const Conditioning cond{grid::zero_masked_cells(z0, latent_mask), latent_mask, session.encode_text("")};
    const std::vector<int> timesteps = session.noise_schedule().sampling_timesteps(schedule.total_steps);
    const Latent noise = gaussian_latent(z0.channels, z0.height, z0.width, seed);
    Latent z = init_latent(z0, timesteps.front(), noise, session.noise_schedule());

    const HookSiteConfig& sites = session.profile().sites;
    HookRegistry& hooks = session.hooks();
    hooks.clear();
    hooks.reset_counts();
    const int sai_steps = schedule.sai_steps();
    const int car_steps = schedule.car_steps();
    const attention::TokenLayout layout = cond.text.layout;

    int step = 0;
    for (; step < schedule.total_steps; ++step) {
        hooks.clear();
        if (step < sai_steps) {
            for (const HookSite& site : sites.sai)
                hooks.on(site, [&latent_mask](const HookSite&, const AttentionMap& map) {
                    return attention::invert_self_attention(map, latent_mask);
                });
        }
        if (step < car_steps) {
            for (const HookSite& site : sites.car)
                hooks.on(site, [&latent_mask, &layout](const HookSite&, const AttentionMap& map) {
                    return attention::reassign_cross_attention(map, latent_mask, layout);
                });
        }
        install_observers(session, observer, "removal", step);
        z = session.step(z, cond, step, schedule.total_steps);
        if (!all_finite(z.values)) throw PipelineError("removal: backbone produced non-finite latent at step " + std::to_string(step));
        report(observer, "removal", step + 1, schedule.total_steps);
    }
    hooks.clear();

    RemovalResult result;
    result.raw = session.decode_latent(z);
    result.composited = composite(result.raw, image, pixel_mask);
    result.latent_mask = latent_mask;
    count_sites(hooks, sites.sai, result.accounting.sai, false);
    count_sites(hooks, sites.car, result.accounting.car, false);
    result.accounting.denoise_steps = schedule.total_steps;
    return result;
}

OptimizationOutcome optimize_latent(Matrix& latent, int iterations, const AdamOptions& options,
                                    const LatentObjective& objective, std::vector<double>* trace) {
    OptimizationOutcome outcome;
    Adam adam(options);
    Matrix grad;
    Matrix last_finite = latent;
    bool have_finite = false;
    for (int it = 0; it < iterations; ++it) {
        grad = Matrix::Zero(latent.rows(), latent.cols());
        const double loss = objective(latent, grad);
        if (!std::isfinite(loss) || !all_finite(grad)) {
            if (have_finite) latent = last_finite;
            outcome.aborted = true;
            return outcome;
        }
        if (trace) trace->push_back(loss);
        outcome.last_loss = loss;
        last_finite = latent;
        have_finite = true;
        adam.step(latent, grad);
        ++outcome.iterations;
    }
    return outcome;
}

InpaintingResult run_controllable_inpainting(BackboneSession& session, const InpaintingRequest& request,
                                             const SamplingSchedule& schedule, std::uint64_t seed,
                                             const InpaintingOptions& options, const RunObserver& observer) {
    schedule.validate();
    request.weights.validate();
    if (request.target_text.empty()) throw ValidationError("inpainting: target text is empty");
    const Image& base = request.removed_image;
    if (base.empty()) throw ValidationError("inpainting: empty input image");
    if (request.ref_image.width != base.width || request.ref_image.height != base.height)
        throw ValidationError("inpainting: reference image must match the input size");
    if (request.ref_mask.width != base.width || request.ref_mask.height != base.height)
        throw ValidationError("inpainting: reference mask must match the input size");

    const SpatialDims dims = session.latent_dims_for(base);
    const masks::MaskSet& mask_set = request.mask_set;
    if (mask_set.shrunk_latent.dims() != dims) throw ContractError("inpainting: mask set was built for another latent size");

    const LatentMask ref_latent = masks::to_latent_mask(request.ref_mask, dims);
    if (ref_latent.count() == 0) throw ValidationError("inpainting: reference mask is empty at latent resolution");

    const Latent z_removed = session.encode_image(base);
    const Latent z_ref = session.encode_image(request.ref_image);
    const Latent noise = gaussian_latent(z_removed.channels, dims.height, dims.width, seed);

    InpaintingResult result;
    result.canvas = grid::assemble_grid(z_removed, z_ref, mask_set.shrunk_latent, noise);
    const grid::GridCanvas& canvas = result.canvas;
    const SpatialDims grid_dims = canvas.dims();
    const int ref_offset = canvas.reference_slot.x;

    std::vector<LatentMask> grid_chars;
    for (const LatentMask& m : mask_set.char_masks) grid_chars.push_back(masks::embed_mask(m, grid_dims, 0));
    const LatentMask grid_target = masks::embed_mask(mask_set.shrunk_latent, grid_dims, 0);
    const losses::StyleTarget style_gt = losses::style_target(masks::embed_mask(ref_latent, grid_dims, ref_offset));

    const Conditioning cond{canvas.grid_masked_latent, canvas.grid_latent_mask, session.encode_text(request.target_text)};
    if (cond.text.layout.char_indices.size() != grid_chars.size())
        throw ContractError("inpainting: character masks do not match the target text");

    const NoiseSchedule& noise_schedule = session.noise_schedule();
    const std::vector<int> timesteps = noise_schedule.sampling_timesteps(schedule.total_steps);
    Latent z = init_latent(canvas.grid_clean_latent, timesteps.front(), canvas.grid_noise, noise_schedule);

    const HookSiteConfig& sites = session.profile().sites;
    HookRegistry& hooks = session.hooks();
    hooks.clear();
    hooks.reset_counts();

    const std::vector<int> opt_steps = schedule.opt_step_indices();
    const std::set<int> opt_set(opt_steps.begin(), opt_steps.end());
    const losses::GuidanceWeights& w = request.weights;

    int step = 0;
    for (; step < schedule.total_steps; ++step) {
        if (opt_set.count(step) && schedule.opt_iters > 0) {
            const int t = timesteps[static_cast<size_t>(step)];
            const LatentObjective objective = [&](const Matrix& latent, Matrix& grad) {
                hooks.clear();
                for (const HookSite& site : sites.content) hooks.collect(site);
                for (const HookSite& site : sites.style) hooks.collect(site);
                if (options.apply_sam) {
                    for (const HookSite& site : sites.sam) {
                        hooks.on_differentiable(site, DifferentiableHook{
                            [&grid_chars](const AttentionMap& map) {
                                return attention::enforce_identity_self_attention(map, grid_chars);
                            },
                            [&grid_chars](const AttentionMap& map, const Matrix& g) {
                                return attention::enforce_identity_vjp(map, grid_chars, g);
                            }});
                    }
                }
                const ad::Var param = ad::Var::parameter(latent);
                session.predict_noise(param, cond, t);

                std::vector<ad::Var> content_vars, style_vars;
                for (const HookSite& site : sites.content)
                    for (const ad::Var& v : hooks.collected(site)) content_vars.push_back(v);
                for (const HookSite& site : sites.style)
                    for (const ad::Var& v : hooks.collected(site)) style_vars.push_back(v);

                losses::LossResult content{}, style{};
                if (!content_vars.empty())
                    content = losses::content_loss(as_maps(content_vars, AttentionKind::cross, grid_dims),
                                                   cond.text.layout, grid_chars, w.gamma);
                if (!style_vars.empty())
                    style = losses::style_loss(as_maps(style_vars, AttentionKind::self, grid_dims), grid_target, style_gt);
                const double total = losses::total_guidance(content.value, style.value, w);
                result.trace.push_back(LossSample{step, static_cast<int>(result.trace.size()), content.value,
                                                  style.value, total});
                if (!std::isfinite(total)) return total;

                std::vector<ad::Var> inputs = content_vars;
                inputs.insert(inputs.end(), style_vars.begin(), style_vars.end());
                Matrix value(1, 1);
                value(0, 0) = total;
                const ad::Var loss = ad::custom(inputs, value, [&content, &style, &w](const Matrix& g) {
                    std::vector<Matrix> grads;
                    for (const Matrix& m : content.grads) grads.push_back(w.lambda_content * g(0, 0) * m);
                    for (const Matrix& m : style.grads) grads.push_back(w.lambda_style * g(0, 0) * m);
                    return grads;
                });
                ad::backward(loss);
                if (param.grad().size() != 0) grad = param.grad();
                return total;
            };

            const size_t trace_start = result.trace.size();
            Matrix latent = z.values;
            const OptimizationOutcome outcome = optimize_latent(latent, schedule.opt_iters, options.adam, objective);
            hooks.clear();
            for (size_t k = trace_start; k < result.trace.size(); ++k)
                result.trace[k].iteration = static_cast<int>(k - trace_start);
            if (outcome.aborted)
                result.warnings.push_back("non-finite guidance loss at step " + std::to_string(step) + " after " +
                                          std::to_string(outcome.iterations) +
                                          " iterations; continuing with the last finite latent");
            z.values = latent;
            result.accounting.opt_steps.push_back(step);
            result.accounting.opt_iterations.push_back(outcome.iterations);
        }

        hooks.clear();
        install_observers(session, observer, "inpainting", step);
        z = session.step(z, cond, step, schedule.total_steps);
        if (!all_finite(z.values))
            throw PipelineError("inpainting: backbone produced non-finite latent at step " + std::to_string(step));
        report(observer, "inpainting", step + 1, schedule.total_steps);
    }
    hooks.clear();

    result.grid_output = session.decode_latent(z);
    result.output = grid::crop_grid_result(result.grid_output, canvas.target_slot.scaled(session.downsample_factor()));
    count_sites(hooks, sites.sam, result.accounting.sam, false);
    count_sites(hooks, sites.content, result.accounting.content, true);
    count_sites(hooks, sites.style, result.accounting.style, true);
    result.accounting.denoise_steps = schedule.total_steps;
    return result;
}

}  // namespace textforge::pipeline
