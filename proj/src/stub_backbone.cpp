// SPDX-License-Identifier: Apache-2.0
// Tiny seeded stand-in for a pretrained inpainting network. It has no learned behaviour but
// exercises every code path of the pipeline: real token layout, real hook addresses and a
// differentiable forward pass.

#include "textforge/backbone.hpp"
#include "textforge/text.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace textforge::pipeline {

namespace {

Matrix random_matrix(std::mt19937_64& rng, int rows, int cols, double stddev) {
    std::normal_distribution<double> normal(0.0, stddev);
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = normal(rng);
    return m;
}

// splitmix64 finalizer; mixes the seed with per-token salts.
std::uint64_t mix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

struct AttentionWeights {
    Matrix wq, wk, wv, wo;
};

class StubDenoiser final : public Denoiser {
public:
    StubDenoiser(std::uint64_t seed, int channels, int dim) : channels_(channels), dim_(dim) {
        std::mt19937_64 rng(mix(seed ^ 0xD1CEULL));
        const double s = 1.0 / std::sqrt(static_cast<double>(dim));
        w_in_ = random_matrix(rng, 2 * channels + 1, dim, 1.0 / std::sqrt(2.0 * channels + 1));
        w_out_ = random_matrix(rng, dim, channels, s);
        time_phase_ = random_matrix(rng, 1, dim, 3.0);
        auto site = [](Stage st, int block, int layer, AttentionKind kind) { return HookSite{st, block, layer, kind}; };
        const std::vector<std::pair<Stage, std::pair<int, int>>> layers = {
            {Stage::encoder, {0, 0}}, {Stage::decoder, {1, 0}}, {Stage::decoder, {1, 1}},
            {Stage::decoder, {1, 2}}, {Stage::decoder, {2, 0}}, {Stage::decoder, {2, 1}}};
        for (const auto& [stage, bl] : layers) {
            Layer layer;
            layer.self_site = site(stage, bl.first, bl.second, AttentionKind::self);
            layer.cross_site = site(stage, bl.first, bl.second, AttentionKind::cross);
            for (AttentionWeights* w : {&layer.self, &layer.cross}) {
                w->wq = random_matrix(rng, dim, dim, 1.5 * s);
                w->wk = random_matrix(rng, dim, dim, 1.5 * s);
                w->wv = random_matrix(rng, dim, dim, s);
                w->wo = random_matrix(rng, dim, dim, 0.5 * s);
            }
            layers_.push_back(std::move(layer));
        }
    }

    std::vector<HookSite> attention_sites() const override {
        std::vector<HookSite> out;
        for (const Layer& l : layers_) {
            out.push_back(l.self_site);
            out.push_back(l.cross_site);
        }
        return out;
    }

    ad::Var predict_noise(const ad::Var& noisy, const Conditioning& cond, int timestep,
                          AttentionInterceptor& interceptor) const override {
        const SpatialDims dims = cond.mask.dims();
        if (noisy.cols() != channels_ || noisy.rows() != dims.cells())
            throw ContractError("stub denoiser: latent shape does not match the conditioning");
        if (cond.text.embedding.cols() != dim_) throw ContractError("stub denoiser: text embedding width mismatch");

        Matrix mask_col(dims.cells(), 1);
        for (int i = 0; i < dims.cells(); ++i) mask_col(i, 0) = cond.mask.values(i / dims.width, i % dims.width);
        const ad::Var features = ad::concat_cols(
            {noisy, ad::Var::constant(cond.masked_image.values), ad::Var::constant(std::move(mask_col))});

        Matrix position = positional_encoding(dims) + time_embedding(timestep).replicate(dims.cells(), 1);
        ad::Var h = ad::tanh(ad::add(ad::matmul(features, ad::Var::constant(w_in_)), ad::Var::constant(std::move(position))));

        const ad::Var text = ad::Var::constant(cond.text.embedding);
        const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dim_));
        for (const Layer& layer : layers_) {
            h = attend(h, h, layer.self, layer.self_site, dims, inv_sqrt_d, interceptor);
            h = attend(h, text, layer.cross, layer.cross_site, dims, inv_sqrt_d, interceptor);
        }
        return ad::matmul(h, ad::Var::constant(w_out_));
    }

private:
    struct Layer {
        HookSite self_site, cross_site;
        AttentionWeights self, cross;
    };

    static ad::Var attend(const ad::Var& h, const ad::Var& context, const AttentionWeights& w, const HookSite& site,
                          SpatialDims dims, double inv_sqrt_d, AttentionInterceptor& interceptor) {
        const ad::Var q = ad::matmul(h, ad::Var::constant(w.wq));
        const ad::Var k = ad::matmul(context, ad::Var::constant(w.wk));
        const ad::Var v = ad::matmul(context, ad::Var::constant(w.wv));
        ad::Var probs = ad::softmax_rows(ad::scale(ad::matmul_transposed(q, k), inv_sqrt_d));
        probs = interceptor.intercept(site, probs, dims);
        const ad::Var mixed = ad::matmul(ad::matmul(probs, v), ad::Var::constant(w.wo));
        return ad::tanh(ad::add(h, mixed));
    }

    Matrix positional_encoding(SpatialDims dims) const {
        Matrix p = Matrix::Zero(dims.cells(), dim_);
        for (int y = 0; y < dims.height; ++y) {
            for (int x = 0; x < dims.width; ++x) {
                const int i = y * dims.width + x;
                for (int j = 0; j + 3 < dim_; j += 4) {
                    const double omega = 1.0 / static_cast<double>(1 << (j / 4));
                    p(i, j) = std::sin(y * omega);
                    p(i, j + 1) = std::cos(y * omega);
                    p(i, j + 2) = std::sin(x * omega);
                    p(i, j + 3) = std::cos(x * omega);
                }
            }
        }
        return p;
    }

    Matrix time_embedding(int timestep) const {
        Matrix e(1, dim_);
        const double t = timestep / 1000.0;
        for (int j = 0; j < dim_; ++j) e(0, j) = 0.5 * std::sin(t * (1.0 + j) + time_phase_(0, j));
        return e;
    }

    int channels_;
    int dim_;
    Matrix w_in_, w_out_, time_phase_;
    std::vector<Layer> layers_;
};

/// f x f average pooling to [-1, 1]; extra channels carry the mean of the colour channels.
class StubCodec final : public ImageCodec {
public:
    StubCodec(int factor, int channels) : factor_(factor), channels_(channels) {
        if (factor < 1 || channels < 3) throw ContractError("stub codec: need factor >= 1 and at least 3 channels");
    }

    int downsample_factor() const override { return factor_; }
    int channels() const override { return channels_; }

    Latent encode(const Image& image) const override {
        const Image rgb = to_rgb(image);
        const int h = rgb.height / factor_, w = rgb.width / factor_;
        Latent out(channels_, h, w);
        const double area = static_cast<double>(factor_) * factor_;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double mean = 0.0;
                for (int c = 0; c < 3; ++c) {
                    double sum = 0.0;
                    for (int dy = 0; dy < factor_; ++dy)
                        for (int dx = 0; dx < factor_; ++dx) sum += rgb.at(x * factor_ + dx, y * factor_ + dy, c);
                    out.at(c, y, x) = sum / area / 127.5 - 1.0;
                    mean += out.at(c, y, x) / 3.0;
                }
                for (int c = 3; c < channels_; ++c) out.at(c, y, x) = mean;
            }
        }
        return out;
    }

    Image decode(const Latent& latent) const override {
        if (latent.channels != channels_) throw ContractError("stub codec: channel mismatch");
        Image out(latent.width * factor_, latent.height * factor_, 3);
        for (int y = 0; y < latent.height; ++y) {
            for (int x = 0; x < latent.width; ++x) {
                for (int c = 0; c < 3; ++c) {
                    const double v = std::clamp((latent.at(c, y, x) + 1.0) * 127.5, 0.0, 255.0);
                    const auto byte = static_cast<std::uint8_t>(std::lround(v));
                    for (int dy = 0; dy < factor_; ++dy)
                        for (int dx = 0; dx < factor_; ++dx) out.at(x * factor_ + dx, y * factor_ + dy, c) = byte;
                }
            }
        }
        return out;
    }

private:
    int factor_;
    int channels_;
};

/// Seeded token vectors: one per special token, one per code point, plus a position term.
class StubTextEncoder final : public TextEncoder {
public:
    StubTextEncoder(std::uint64_t seed, int n_tokens, int dim) : seed_(seed), n_tokens_(n_tokens), dim_(dim) {}

    int n_tokens() const override { return n_tokens_; }

    TextEncoding encode(std::string_view text) const override {
        const std::u32string chars = decode_utf8(text);
        const int n = static_cast<int>(chars.size());
        if (n + 5 > n_tokens_)
            throw ValidationError("text of " + std::to_string(n) + " characters does not fit in " +
                                  std::to_string(n_tokens_) + " tokens");
        TextEncoding enc;
        enc.text = std::string(text);
        enc.layout = attention::TokenLayout::for_text(n, n_tokens_);
        enc.embedding.resize(n_tokens_, dim_);
        enc.embedding.row(0) = token_vector(1);
        enc.embedding.row(1) = token_vector(2);
        enc.embedding.row(2) = token_vector(3);
        for (int k = 0; k < n; ++k)
            enc.embedding.row(3 + k) = token_vector(0x100000000ULL + chars[static_cast<size_t>(k)]) +
                                       0.3 * token_vector(0x200000000ULL + static_cast<std::uint64_t>(k));
        enc.embedding.row(enc.layout.end_text) = token_vector(4);
        for (int p = enc.layout.padding_start; p < n_tokens_; ++p) enc.embedding.row(p) = token_vector(5);
        return enc;
    }

private:
    Eigen::RowVectorXd token_vector(std::uint64_t salt) const {
        std::mt19937_64 rng(mix(seed_ ^ mix(salt)));
        std::normal_distribution<double> normal(0.0, 1.0);
        Eigen::RowVectorXd v(dim_);
        for (int j = 0; j < dim_; ++j) v(j) = normal(rng);
        return v;
    }

    std::uint64_t seed_;
    int n_tokens_;
    int dim_;
};

}  // namespace

std::unique_ptr<BackboneSession> make_stub_backbone(std::uint64_t seed, const BackboneProfile& profile) {
    if (profile.kind != "stub") throw ContractError("make_stub_backbone: profile kind is not stub");
    return std::make_unique<BackboneSession>(
        profile, std::make_unique<StubDenoiser>(seed, profile.latent_channels, profile.model_dim),
        std::make_unique<StubCodec>(profile.downsample_factor, profile.latent_channels),
        std::make_unique<StubTextEncoder>(seed, profile.n_tokens, profile.model_dim));
}

std::unique_ptr<BackboneSession> make_stub_backbone(std::uint64_t seed, const StubOptions& options) {
    BackboneProfile profile = BackboneProfile::reference_stub();
    profile.latent_channels = options.channels;
    profile.downsample_factor = options.downsample_factor;
    profile.n_tokens = options.n_tokens;
    profile.model_dim = options.model_dim;
    return make_stub_backbone(seed, profile);
}

}  // namespace textforge::pipeline
