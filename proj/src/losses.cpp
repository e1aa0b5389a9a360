// SPDX-License-Identifier: Apache-2.0
#include "textforge/losses.hpp"

#include "textforge/masks.hpp"

#include <algorithm>
#include <cmath>

namespace textforge::losses {

void GuidanceWeights::validate() const {
    if (!(lambda_content >= 0.0) || !(lambda_style >= 0.0) || !(gamma >= 0.0))
        throw ValidationError("guidance weights must be non-negative");
}

namespace {

constexpr double kLow = kProbClamp;
constexpr double kHigh = 1.0 - kProbClamp;

bool clamp_active(double p) { return p < kLow || p > kHigh; }

}  // namespace

double focal_term(double p, int label, double gamma) {
    const double pc = std::clamp(p, kLow, kHigh);
    const double l = label ? 1.0 : 0.0;
    const double modulating = std::pow(1.0 - pc * l, gamma);
    const double cross_entropy = -(l * std::log(pc) + (1.0 - l) * std::log(1.0 - pc));
    return modulating * cross_entropy;
}

double focal_term_derivative(double p, int label, double gamma) {
    if (clamp_active(p)) return 0.0;
    const double l = label ? 1.0 : 0.0;
    const double m = 1.0 - p * l;
    const double cross_entropy = -(l * std::log(p) + (1.0 - l) * std::log(1.0 - p));
    const double d_cross_entropy = -(l / p - (1.0 - l) / (1.0 - p));
    const double d_modulating = gamma == 0.0 ? 0.0 : gamma * std::pow(m, gamma - 1.0) * (-l);
    return d_modulating * cross_entropy + std::pow(m, gamma) * d_cross_entropy;
}

LossResult content_loss(std::span<const AttentionMap> cross_maps, const TokenLayout& layout,
                        std::span<const LatentMask> char_masks, double gamma) {
    if (cross_maps.empty()) throw ContractError("content_loss: no cross-attention maps");
    if (char_masks.size() != layout.char_indices.size())
        throw ContractError("content_loss: one character mask per character token is required");

    LossResult result;
    const double layer_weight = 1.0 / static_cast<double>(cross_maps.size());
    for (const AttentionMap& map : cross_maps) {
        if (map.kind != attention::AttentionKind::cross) throw ContractError("content_loss: map is not cross-attention");
        if (map.cols() != layout.n_tokens) throw ContractError("content_loss: token layout does not match map");
        Matrix grad = Matrix::Zero(map.rows(), map.cols());
        double layer_value = 0.0;
        for (size_t k = 0; k < char_masks.size(); ++k) {
            const LatentMask mask = masks::resample_mask(char_masks[k], map.dims);
            const int column = layout.char_indices[k];
            for (int i = 0; i < map.dims.cells(); ++i) {
                const int label = mask.active(i) ? 1 : 0;
                const double p = map.probs(i, column);
                layer_value += focal_term(p, label, gamma);
                grad(i, column) = focal_term_derivative(p, label, gamma) * layer_weight;
            }
        }
        result.value += layer_value * layer_weight;
        result.grads.push_back(std::move(grad));
    }
    return result;
}

StyleTarget style_target(const LatentMask& ref_latent_mask) {
    const Matrix& v = ref_latent_mask.values;
    if (v.size() == 0) throw ValidationError("style_target: empty reference mask");
    if (v.minCoeff() < 0.0) throw ContractError("style_target: negative mask values");
    const double mass = v.sum();
    if (!(mass > 0.0)) throw ValidationError("style_target: reference mask has no mass (degenerate target)");
    StyleTarget target;
    target.source_mask = ref_latent_mask;
    target.distribution.resize(v.size());
    for (Eigen::Index y = 0; y < v.rows(); ++y)
        for (Eigen::Index x = 0; x < v.cols(); ++x) target.distribution(y * v.cols() + x) = v(y, x) / mass;
    return target;
}

LossResult style_loss(std::span<const AttentionMap> self_maps, const LatentMask& target_mask, const StyleTarget& target) {
    if (self_maps.empty()) throw ContractError("style_loss: no self-attention maps");
    LossResult result;
    const double layer_weight = 1.0 / static_cast<double>(self_maps.size());
    const Vector& gt = target.distribution;
    for (const AttentionMap& map : self_maps) {
        if (map.kind != attention::AttentionKind::self) throw ContractError("style_loss: map is not self-attention");
        if (map.cols() != gt.size()) throw ContractError("style_loss: target distribution does not match map keys");
        const LatentMask mask = masks::resample_mask(target_mask, map.dims);
        std::vector<int> rows;
        for (int i = 0; i < map.dims.cells(); ++i)
            if (mask.active(i)) rows.push_back(i);
        if (rows.empty()) throw ValidationError("style_loss: target mask selects no rows");

        const double row_weight = layer_weight / static_cast<double>(rows.size());
        Matrix grad = Matrix::Zero(map.rows(), map.cols());
        double layer_value = 0.0;
        for (int i : rows) {
            double kl = 0.0;
            for (Eigen::Index j = 0; j < gt.size(); ++j) {
                if (gt(j) <= 0.0) continue;
                const double s = map.probs(i, j);
                kl += gt(j) * (std::log(std::clamp(gt(j), kLow, kHigh)) - std::log(std::clamp(s, kLow, kHigh)));
                grad(i, j) = clamp_active(s) ? 0.0 : -gt(j) / s * row_weight;
            }
            layer_value += kl;
        }
        result.value += layer_value / static_cast<double>(rows.size()) * layer_weight;
        result.grads.push_back(std::move(grad));
    }
    return result;
}

}  // namespace textforge::losses
