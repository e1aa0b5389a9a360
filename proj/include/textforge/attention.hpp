// SPDX-License-Identifier: Apache-2.0
#pragma once

// Backbone-independent operations on post-softmax attention probability maps.
// Every function here is pure: inputs are never modified.

#include "textforge/types.hpp"

#include <span>
#include <vector>

namespace textforge::attention {

enum class AttentionKind { self, cross };

const char* to_string(AttentionKind kind);

/// Row-stochastic map: rows are spatial queries (flattened y * w + x), columns are keys
/// (text tokens for cross attention, spatial positions for self attention).
struct AttentionMap {
    Matrix probs;
    AttentionKind kind = AttentionKind::self;
    SpatialDims dims;

    Eigen::Index rows() const { return probs.rows(); }
    Eigen::Index cols() const { return probs.cols(); }
};

/// Throws ContractError unless rows == dims.cells(), self maps are square, entries lie in
/// [0, 1] and every row sums to 1 within `tolerance`.
void validate(const AttentionMap& map, double tolerance = 1e-6);

/// Token positions inside a text embedding: [S_d E_d] [S_T c_1 .. c_N E_T] [P ...].
struct TokenLayout {
    int start_description = 0;
    int end_description = 1;
    int start_text = 2;
    int end_text = 3;
    std::vector<int> char_indices;
    int padding_start = 4;
    int n_tokens = 4;

    /// Layout for a text of `n_chars` characters inside an embedding of `n_tokens` slots.
    static TokenLayout for_text(int n_chars, int n_tokens);

    void validate() const;
};

/// Spatial mask at attention resolution. Values live in [0, 1]; a cell is selected when its
/// value reaches `threshold`.
struct LatentMask {
    Matrix values;  // height x width
    double threshold = 0.5;

    LatentMask() = default;
    explicit LatentMask(Matrix v, double t = 0.5) : values(std::move(v)), threshold(t) {}
    static LatentMask zeros(SpatialDims dims);

    SpatialDims dims() const { return {static_cast<int>(values.rows()), static_cast<int>(values.cols())}; }
    bool active(int y, int x) const { return values(y, x) >= threshold; }
    bool active(int flat) const { return active(flat / static_cast<int>(values.cols()), flat % static_cast<int>(values.cols())); }
    int count() const;
    LatentMask binarized() const;
};

/// softmax(Q K^T / sqrt(d)) row-wise.
AttentionMap attention_probabilities(const Matrix& query, const Matrix& key, AttentionKind kind, SpatialDims dims);

/// Numerically stable row softmax.
Matrix softmax_rows(const Matrix& logits);

/// Self-attention inversion. Each selected row is flipped to max + min - value and, when
/// `renormalize` is set, passed through a softmax. Unselected rows are copied unchanged.
AttentionMap invert_self_attention(const AttentionMap& map, const LatentMask& mask, bool renormalize = true);

/// Cross-attention reassignment: selected rows become one-hot on E_d, all other rows one-hot
/// on S_d. Every column past E_d is zero.
AttentionMap reassign_cross_attention(const AttentionMap& map, const LatentMask& mask, const TokenLayout& layout);

/// Forces each character region of a self-attention map to an identity block. A row inside a
/// region keeps its out-of-region entries and moves its whole in-region mass onto the diagonal;
/// the row is then renormalized.
AttentionMap enforce_identity_self_attention(const AttentionMap& map, std::span<const LatentMask> char_masks);

/// Vector-Jacobian product of enforce_identity_self_attention with respect to its input map.
Matrix enforce_identity_vjp(const AttentionMap& map, std::span<const LatentMask> char_masks, const Matrix& grad_output);

/// Column `token_index` of a cross map reshaped to the spatial grid.
Matrix extract_token_field(const AttentionMap& map, const TokenLayout& layout, int token_index);

}  // namespace textforge::attention
