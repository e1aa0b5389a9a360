// SPDX-License-Identifier: Apache-2.0
#pragma once

// Adapter boundary between the editing pipeline and a diffusion inpainting model.
//
// A backbone is split into a text encoder, an image codec and a noise-predicting denoiser.
// The denoiser hands every attention probability map to an AttentionInterceptor before the
// map is used, which is how manipulations and loss collection reach inside the network.

#include "textforge/attention.hpp"
#include "textforge/autodiff.hpp"
#include "textforge/image.hpp"
#include "textforge/latent.hpp"
#include "textforge/schedule.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace textforge::pipeline {

using attention::AttentionKind;
using attention::AttentionMap;
using attention::LatentMask;
using attention::TokenLayout;

enum class Stage { encoder, middle, decoder };

/// Address of one attention layer, written "decoder.1.2.cross".
struct HookSite {
    Stage stage = Stage::decoder;
    int block = 0;
    int layer = 0;
    AttentionKind kind = AttentionKind::self;

    std::string to_string() const;
    static HookSite parse(std::string_view text);

    auto operator<=>(const HookSite&) const = default;
};

struct TextEncoding {
    std::string text;
    Matrix embedding;  // n_tokens x embedding dim
    TokenLayout layout;
};

/// Everything the denoiser sees besides the noisy latent.
struct Conditioning {
    Latent masked_image;
    LatentMask mask;
    TextEncoding text;
};

class AttentionInterceptor {
public:
    virtual ~AttentionInterceptor() = default;
    /// Called once per attention layer per forward pass; returns the map the layer should use.
    virtual ad::Var intercept(const HookSite& site, const ad::Var& probs, SpatialDims dims) = 0;
};

class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual std::vector<HookSite> attention_sites() const = 0;
    /// Noise prediction for `noisy` ((h*w) x channels), differentiable with respect to it.
    virtual ad::Var predict_noise(const ad::Var& noisy, const Conditioning& cond, int timestep,
                                  AttentionInterceptor& interceptor) const = 0;
};

class ImageCodec {
public:
    virtual ~ImageCodec() = default;
    virtual int downsample_factor() const = 0;
    virtual int channels() const = 0;
    virtual Latent encode(const Image& image) const = 0;
    virtual Image decode(const Latent& latent) const = 0;
};

class TextEncoder {
public:
    virtual ~TextEncoder() = default;
    virtual int n_tokens() const = 0;
    virtual TextEncoding encode(std::string_view text) const = 0;
};

/// Value-level manipulation; its output is treated as a constant by the backward pass.
using HookCallback = std::function<AttentionMap(const HookSite&, const AttentionMap&)>;

/// Manipulation that also provides its vector-Jacobian product.
struct DifferentiableHook {
    std::function<AttentionMap(const AttentionMap&)> apply;
    std::function<Matrix(const AttentionMap& input, const Matrix& grad_output)> vjp;
};

using AttentionObserver = std::function<void(const HookSite&, const AttentionMap&)>;

/// Site-keyed hook table. Hooks run synchronously inside the forward pass; registration is
/// rejected for sites the bound denoiser does not have.
class HookRegistry : public AttentionInterceptor {
public:
    explicit HookRegistry(std::vector<HookSite> valid_sites);

    void on(const HookSite& site, HookCallback callback);
    void on_differentiable(const HookSite& site, DifferentiableHook hook);
    /// Keeps the (post-manipulation) map of `site` from each forward pass for later retrieval.
    void collect(const HookSite& site);
    void observe(const HookSite& site, AttentionObserver observer);

    /// Drops hooks, collectors, observers and collected maps. Invocation counters are kept.
    void clear();

    const std::vector<ad::Var>& collected(const HookSite& site) const;
    std::vector<AttentionMap> collected_maps(const HookSite& site) const;

    /// Number of manipulation callbacks run at `site` since the last reset_counts().
    int invocation_count(const HookSite& site) const;
    int collection_count(const HookSite& site) const;
    void reset_counts();

    bool has_site(const HookSite& site) const;

    ad::Var intercept(const HookSite& site, const ad::Var& probs, SpatialDims dims) override;

private:
    void require_site(const HookSite& site) const;

    struct Entry {
        HookCallback value_hook;
        DifferentiableHook diff_hook;
        bool collect = false;
        std::vector<AttentionObserver> observers;
    };

    std::vector<HookSite> valid_sites_;
    std::map<HookSite, Entry> entries_;
    std::map<HookSite, std::vector<ad::Var>> collected_;
    std::map<HookSite, SpatialDims> collected_dims_;
    std::map<HookSite, int> invocations_;
    std::map<HookSite, int> collections_;
};

/// Hook addresses used by each manipulation.
struct HookSiteConfig {
    std::vector<HookSite> sai;
    std::vector<HookSite> car;
    std::vector<HookSite> content;
    std::vector<HookSite> style;
    std::vector<HookSite> sam;
    std::vector<HookSite> inspect;
};

/// On-disk description of a backbone: kind, shapes, noise schedule and hook addresses.
struct BackboneProfile {
    std::string name = "stub";
    std::string kind = "stub";
    int latent_channels = 4;
    int downsample_factor = 8;
    int n_tokens = 24;
    int model_dim = 16;
    double beta_start = 0.00085;
    double beta_end = 0.012;
    int train_steps = 1000;
    std::vector<double> alphas_cumprod;  // optional explicit table, overrides the betas
    HookSiteConfig sites;

    /// Decoder addresses of the reference configuration: SAI at block 2 layer 1 (self);
    /// CAR and the content loss at block 1 layer 2 and block 2 layer 0 (cross); the style
    /// loss at block 1 layers 0 and 1 (self); SAM at block 1 layer 2 (self).
    static BackboneProfile reference_stub();
    static BackboneProfile load(const std::filesystem::path& path);
    static BackboneProfile from_json_text(std::string_view text);
    std::string to_json_text() const;

    NoiseSchedule noise_schedule() const;
};

class BackboneSession {
public:
    BackboneSession(BackboneProfile profile, std::unique_ptr<Denoiser> denoiser, std::unique_ptr<ImageCodec> codec,
                    std::unique_ptr<TextEncoder> text_encoder);

    const BackboneProfile& profile() const { return profile_; }
    const NoiseSchedule& noise_schedule() const { return schedule_; }
    HookRegistry& hooks() { return hooks_; }
    const Denoiser& denoiser() const { return *denoiser_; }

    int downsample_factor() const { return codec_->downsample_factor(); }
    int latent_channels() const { return codec_->channels(); }
    /// Latent grid for an image; throws ValidationError when the image is not a multiple of the factor.
    SpatialDims latent_dims_for(const Image& image) const;

    Latent encode_image(const Image& image) const;
    Image decode_latent(const Latent& latent) const;
    TextEncoding encode_text(std::string_view text) const;

    /// One denoiser evaluation with the currently registered hooks.
    Latent predict_noise(const Latent& noisy, const Conditioning& cond, int timestep);
    ad::Var predict_noise(const ad::Var& noisy, const Conditioning& cond, int timestep);

    /// Denoise step `step_index` of a `total_steps` run: predict noise, then DDIM update.
    Latent step(const Latent& noisy, const Conditioning& cond, int step_index, int total_steps);

private:
    BackboneProfile profile_;
    NoiseSchedule schedule_;
    std::unique_ptr<Denoiser> denoiser_;
    std::unique_ptr<ImageCodec> codec_;
    std::unique_ptr<TextEncoder> text_encoder_;
    HookRegistry hooks_;
};

struct StubOptions {
    int channels = 4;
    int downsample_factor = 8;
    int n_tokens = 24;
    int model_dim = 16;
};

/// Deterministic tiny denoiser with the real token layout and hook addresses: seeded random
/// linear maps around self/cross attention layers at encoder block 0 layer 0, decoder block 1
/// layers 0-2 and decoder block 2 layers 0-1.
std::unique_ptr<BackboneSession> make_stub_backbone(std::uint64_t seed, const StubOptions& options = {});
std::unique_ptr<BackboneSession> make_stub_backbone(std::uint64_t seed, const BackboneProfile& profile);

/// Builds a session for `profile`. Only the "stub" kind ships with this build.
std::unique_ptr<BackboneSession> make_session(const BackboneProfile& profile, std::uint64_t seed);

}  // namespace textforge::pipeline
