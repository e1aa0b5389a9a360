// SPDX-License-Identifier: Apache-2.0
#include "textforge/backbone.hpp"

#include "json.hpp"

#include <fstream>
#include <sstream>

namespace textforge::pipeline {

namespace {

const char* stage_name(Stage s) {
    switch (s) {
    case Stage::encoder: return "encoder";
    case Stage::middle: return "middle";
    case Stage::decoder: return "decoder";
    }
    return "?";
}

}  // namespace

std::string HookSite::to_string() const {
    return std::string(stage_name(stage)) + "." + std::to_string(block) + "." + std::to_string(layer) + "." +
           attention::to_string(kind);
}

HookSite HookSite::parse(std::string_view text) {
    std::vector<std::string> parts;
    std::string current;
    for (char c : text) {
        if (c == '.') {
            parts.push_back(current);
            current.clear();
        } else {
            current.push_back(c);
        }
    }
    parts.push_back(current);
    const std::string original(text);
    if (parts.size() != 4) throw ValidationError("hook site '" + original + "' must look like decoder.1.2.cross");

    HookSite site;
    if (parts[0] == "encoder") site.stage = Stage::encoder;
    else if (parts[0] == "middle") site.stage = Stage::middle;
    else if (parts[0] == "decoder") site.stage = Stage::decoder;
    else throw ValidationError("hook site '" + original + "': unknown stage");
    try {
        size_t used = 0;
        site.block = std::stoi(parts[1], &used);
        if (used != parts[1].size()) throw std::invalid_argument("block");
        site.layer = std::stoi(parts[2], &used);
        if (used != parts[2].size()) throw std::invalid_argument("layer");
    } catch (const std::logic_error&) {
        throw ValidationError("hook site '" + original + "': block and layer must be integers");
    }
    if (parts[3] == "self") site.kind = AttentionKind::self;
    else if (parts[3] == "cross") site.kind = AttentionKind::cross;
    else throw ValidationError("hook site '" + original + "': kind must be self or cross");
    return site;
}

// ---------------------------------------------------------------------------------------------
// HookRegistry

HookRegistry::HookRegistry(std::vector<HookSite> valid_sites) : valid_sites_(std::move(valid_sites)) {}

bool HookRegistry::has_site(const HookSite& site) const {
    for (const HookSite& s : valid_sites_)
        if (s == site) return true;
    return false;
}

void HookRegistry::require_site(const HookSite& site) const {
    if (!has_site(site)) throw ContractError("hook site " + site.to_string() + " does not exist in this backbone");
}

void HookRegistry::on(const HookSite& site, HookCallback callback) {
    require_site(site);
    entries_[site].value_hook = std::move(callback);
}

void HookRegistry::on_differentiable(const HookSite& site, DifferentiableHook hook) {
    require_site(site);
    if (!hook.apply || !hook.vjp) throw ContractError("differentiable hook needs both apply and vjp");
    entries_[site].diff_hook = std::move(hook);
}

void HookRegistry::collect(const HookSite& site) {
    require_site(site);
    entries_[site].collect = true;
}

void HookRegistry::observe(const HookSite& site, AttentionObserver observer) {
    require_site(site);
    entries_[site].observers.push_back(std::move(observer));
}

void HookRegistry::clear() {
    entries_.clear();
    collected_.clear();
    collected_dims_.clear();
}

const std::vector<ad::Var>& HookRegistry::collected(const HookSite& site) const {
    static const std::vector<ad::Var> none;
    const auto it = collected_.find(site);
    return it == collected_.end() ? none : it->second;
}

std::vector<AttentionMap> HookRegistry::collected_maps(const HookSite& site) const {
    std::vector<AttentionMap> out;
    const auto it = collected_.find(site);
    if (it == collected_.end()) return out;
    const SpatialDims dims = collected_dims_.at(site);
    for (const ad::Var& v : it->second) out.push_back(AttentionMap{v.value(), site.kind, dims});
    return out;
}

int HookRegistry::invocation_count(const HookSite& site) const {
    const auto it = invocations_.find(site);
    return it == invocations_.end() ? 0 : it->second;
}

int HookRegistry::collection_count(const HookSite& site) const {
    const auto it = collections_.find(site);
    return it == collections_.end() ? 0 : it->second;
}

void HookRegistry::reset_counts() {
    invocations_.clear();
    collections_.clear();
}

ad::Var HookRegistry::intercept(const HookSite& site, const ad::Var& probs, SpatialDims dims) {
    const auto it = entries_.find(site);
    if (it == entries_.end()) return probs;
    Entry& entry = it->second;
    ad::Var out = probs;
    if (entry.value_hook) {
        AttentionMap edited = entry.value_hook(site, AttentionMap{out.value(), site.kind, dims});
        if (edited.probs.rows() != out.rows() || edited.probs.cols() != out.cols())
            throw ContractError("hook at " + site.to_string() + " changed the map shape");
        out = ad::Var::constant(std::move(edited.probs));
        ++invocations_[site];
    }
    if (entry.diff_hook.apply) {
        AttentionMap input{out.value(), site.kind, dims};
        AttentionMap edited = entry.diff_hook.apply(input);
        if (edited.probs.rows() != out.rows() || edited.probs.cols() != out.cols())
            throw ContractError("hook at " + site.to_string() + " changed the map shape");
        auto vjp = entry.diff_hook.vjp;
        out = ad::custom({out}, std::move(edited.probs),
                         [vjp, input = std::move(input)](const Matrix& g) { return std::vector<Matrix>{vjp(input, g)}; });
        ++invocations_[site];
    }
    if (entry.collect) {
        collected_[site].push_back(out);
        collected_dims_[site] = dims;
        ++collections_[site];
    }
    for (const AttentionObserver& observer : entry.observers) observer(site, AttentionMap{out.value(), site.kind, dims});
    return out;
}

// ---------------------------------------------------------------------------------------------
// BackboneProfile

BackboneProfile BackboneProfile::reference_stub() {
    BackboneProfile p;
    auto site = [](int block, int layer, AttentionKind kind) { return HookSite{Stage::decoder, block, layer, kind}; };
    p.sites.sai = {site(2, 1, AttentionKind::self)};
    p.sites.car = {site(1, 2, AttentionKind::cross), site(2, 0, AttentionKind::cross)};
    p.sites.content = {site(1, 2, AttentionKind::cross), site(2, 0, AttentionKind::cross)};
    p.sites.style = {site(1, 0, AttentionKind::self), site(1, 1, AttentionKind::self)};
    p.sites.sam = {site(1, 2, AttentionKind::self)};
    p.sites.inspect = {site(2, 0, AttentionKind::cross), site(2, 0, AttentionKind::self)};
    return p;
}

namespace {

std::vector<HookSite> parse_sites(const nlohmann::json& doc, const char* key, const std::vector<HookSite>& fallback) {
    if (!doc.contains(key)) return fallback;
    std::vector<HookSite> out;
    for (const auto& s : doc.at(key)) out.push_back(HookSite::parse(s.get<std::string>()));
    return out;
}

nlohmann::json sites_json(const std::vector<HookSite>& sites) {
    nlohmann::json arr = nlohmann::json::array();
    for (const HookSite& s : sites) arr.push_back(s.to_string());
    return arr;
}

}  // namespace

BackboneProfile BackboneProfile::from_json_text(std::string_view text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("backbone profile: ") + e.what());
    }
    BackboneProfile p = reference_stub();
    try {
        p.name = doc.value("name", p.name);
        p.kind = doc.value("kind", p.kind);
        p.latent_channels = doc.value("latent_channels", p.latent_channels);
        p.downsample_factor = doc.value("downsample_factor", p.downsample_factor);
        p.n_tokens = doc.value("n_tokens", p.n_tokens);
        p.model_dim = doc.value("model_dim", p.model_dim);
        if (doc.contains("noise_schedule")) {
            const auto& ns = doc.at("noise_schedule");
            p.beta_start = ns.value("beta_start", p.beta_start);
            p.beta_end = ns.value("beta_end", p.beta_end);
            p.train_steps = ns.value("train_steps", p.train_steps);
            if (ns.contains("alphas_cumprod")) p.alphas_cumprod = ns.at("alphas_cumprod").get<std::vector<double>>();
        }
        if (doc.contains("hook_sites")) {
            const auto& hs = doc.at("hook_sites");
            p.sites.sai = parse_sites(hs, "sai", p.sites.sai);
            p.sites.car = parse_sites(hs, "car", p.sites.car);
            p.sites.content = parse_sites(hs, "content", p.sites.content);
            p.sites.style = parse_sites(hs, "style", p.sites.style);
            p.sites.sam = parse_sites(hs, "sam", p.sites.sam);
            p.sites.inspect = parse_sites(hs, "inspect", p.sites.inspect);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("backbone profile: ") + e.what());
    }
    if (p.latent_channels < 3 || p.downsample_factor < 1 || p.n_tokens < 5 || p.model_dim < 4)
        throw ValidationError("backbone profile: invalid shape parameters");
    return p;
}

BackboneProfile BackboneProfile::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open backbone profile '" + path.string() + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return from_json_text(buffer.str());
}

std::string BackboneProfile::to_json_text() const {
    nlohmann::json doc;
    doc["name"] = name;
    doc["kind"] = kind;
    doc["latent_channels"] = latent_channels;
    doc["downsample_factor"] = downsample_factor;
    doc["n_tokens"] = n_tokens;
    doc["model_dim"] = model_dim;
    doc["noise_schedule"] = {{"beta_start", beta_start}, {"beta_end", beta_end}, {"train_steps", train_steps}};
    if (!alphas_cumprod.empty()) doc["noise_schedule"]["alphas_cumprod"] = alphas_cumprod;
    doc["hook_sites"] = {{"sai", sites_json(sites.sai)},         {"car", sites_json(sites.car)},
                         {"content", sites_json(sites.content)}, {"style", sites_json(sites.style)},
                         {"sam", sites_json(sites.sam)},         {"inspect", sites_json(sites.inspect)}};
    return doc.dump(2);
}

NoiseSchedule BackboneProfile::noise_schedule() const {
    if (!alphas_cumprod.empty()) return NoiseSchedule(alphas_cumprod);
    return NoiseSchedule::scaled_linear(beta_start, beta_end, train_steps);
}

// ---------------------------------------------------------------------------------------------
// BackboneSession

BackboneSession::BackboneSession(BackboneProfile profile, std::unique_ptr<Denoiser> denoiser,
                                 std::unique_ptr<ImageCodec> codec, std::unique_ptr<TextEncoder> text_encoder)
    : profile_(std::move(profile)),
      schedule_(profile_.noise_schedule()),
      denoiser_(std::move(denoiser)),
      codec_(std::move(codec)),
      text_encoder_(std::move(text_encoder)),
      hooks_(denoiser_->attention_sites()) {
    const HookSiteConfig& s = profile_.sites;
    for (const auto* group : {&s.sai, &s.car, &s.content, &s.style, &s.sam, &s.inspect})
        for (const HookSite& site : *group)
            if (!hooks_.has_site(site))
                throw ContractError("profile hook site " + site.to_string() + " is not resolvable in the backbone");
}

SpatialDims BackboneSession::latent_dims_for(const Image& image) const {
    const int f = downsample_factor();
    if (image.empty() || image.width % f != 0 || image.height % f != 0)
        throw ValidationError("image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                              " is not a multiple of the backbone downsample factor " + std::to_string(f));
    return {image.height / f, image.width / f};
}

Latent BackboneSession::encode_image(const Image& image) const {
    latent_dims_for(image);
    return codec_->encode(image);
}

Image BackboneSession::decode_latent(const Latent& latent) const { return codec_->decode(latent); }

TextEncoding BackboneSession::encode_text(std::string_view text) const { return text_encoder_->encode(text); }

Latent BackboneSession::predict_noise(const Latent& noisy, const Conditioning& cond, int timestep) {
    const ad::Var out = predict_noise(ad::Var::constant(noisy.values), cond, timestep);
    return Latent(noisy.channels, noisy.height, noisy.width, out.value());
}

ad::Var BackboneSession::predict_noise(const ad::Var& noisy, const Conditioning& cond, int timestep) {
    if (cond.masked_image.values.rows() != noisy.rows() || cond.masked_image.channels != noisy.cols())
        throw ContractError("predict_noise: masked image latent does not match the noisy latent");
    if (cond.mask.dims() != cond.masked_image.dims()) throw ContractError("predict_noise: mask dims mismatch");
    return denoiser_->predict_noise(noisy, cond, timestep, hooks_);
}

Latent BackboneSession::step(const Latent& noisy, const Conditioning& cond, int step_index, int total_steps) {
    const std::vector<int> timesteps = schedule_.sampling_timesteps(total_steps);
    if (step_index < 0 || step_index >= total_steps) throw ContractError("step: index out of range");
    const int t = timesteps[static_cast<size_t>(step_index)];
    const int prev = step_index + 1 < total_steps ? timesteps[static_cast<size_t>(step_index) + 1] : -1;
    const Latent eps = predict_noise(noisy, cond, t);
    return schedule_.ddim_step(noisy, eps, t, prev);
}

std::unique_ptr<BackboneSession> make_session(const BackboneProfile& profile, std::uint64_t seed) {
    if (profile.kind == "stub") return make_stub_backbone(seed, profile);
    throw PipelineError("backbone kind '" + profile.kind +
                        "' needs pretrained weights and an adapter that is not part of this build");
}

}  // namespace textforge::pipeline
