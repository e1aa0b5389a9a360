// SPDX-License-Identifier: Apache-2.0
#pragma once

// Guidance objectives over attention maps. Each loss returns its value together with the
// gradient with respect to every input map so it can be spliced into a backward pass.

#include "textforge/attention.hpp"

#include <span>
#include <vector>

namespace textforge::losses {

using attention::AttentionMap;
using attention::LatentMask;
using attention::TokenLayout;

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before any log.
inline constexpr double kProbClamp = 1e-7;

struct GuidanceWeights {
    double lambda_content = 5.0;
    double lambda_style = 10.0;
    double gamma = 2.0;

    void validate() const;
};

struct LossResult {
    double value = 0.0;
    std::vector<Matrix> grads;  // one per input map, shaped like its probs
};

/// FL(p, l) = (1 - p*l)^gamma * -(l log p + (1 - l) log(1 - p)) on the clamped probability.
double focal_term(double p, int label, double gamma);

/// d focal_term / dp. Zero where the clamp is active.
double focal_term_derivative(double p, int label, double gamma);

/// Sum over characters k and positions i of FL(C[i, c_k], [i in m_k]), averaged over maps.
/// Character masks are resampled when a map's resolution differs from theirs.
LossResult content_loss(std::span<const AttentionMap> cross_maps, const TokenLayout& layout,
                        std::span<const LatentMask> char_masks, double gamma);

struct StyleTarget {
    Vector distribution;  // normalized reference mask, flattened
    LatentMask source_mask;
};

/// GT = m_ref / sum(m_ref). Throws ValidationError for a mask without mass.
StyleTarget style_target(const LatentMask& ref_latent_mask);

/// Mean over maps and over selected rows i of KL(GT || S_i).
LossResult style_loss(std::span<const AttentionMap> self_maps, const LatentMask& target_mask, const StyleTarget& target);

inline double total_guidance(double content, double style, const GuidanceWeights& w) {
    return w.lambda_content * content + w.lambda_style * style;
}

}  // namespace textforge::losses
