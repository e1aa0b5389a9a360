// SPDX-License-Identifier: Apache-2.0
#include "textforge/attention.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace textforge::attention {

const char* to_string(AttentionKind kind) { return kind == AttentionKind::self ? "self" : "cross"; }

void validate(const AttentionMap& map, double tolerance) {
    if (map.rows() != map.dims.cells())
        throw ContractError("attention map rows (" + std::to_string(map.rows()) + ") do not match spatial dims");
    if (map.kind == AttentionKind::self && map.cols() != map.rows())
        throw ContractError("self-attention map must be square");
    for (Eigen::Index i = 0; i < map.rows(); ++i) {
        if (std::abs(map.probs.row(i).sum() - 1.0) > tolerance)
            throw ContractError("attention row " + std::to_string(i) + " is not normalized");
        if (map.probs.row(i).minCoeff() < 0.0 || map.probs.row(i).maxCoeff() > 1.0)
            throw ContractError("attention row " + std::to_string(i) + " has entries outside [0, 1]");
    }
}

TokenLayout TokenLayout::for_text(int n_chars, int n_tokens) {
    if (n_chars < 0) throw ContractError("negative character count");
    TokenLayout layout;
    layout.start_text = 2;
    for (int k = 0; k < n_chars; ++k) layout.char_indices.push_back(3 + k);
    layout.end_text = 3 + n_chars;
    layout.padding_start = layout.end_text + 1;
    layout.n_tokens = n_tokens;
    layout.validate();
    return layout;
}

void TokenLayout::validate() const {
    if (start_description != 0 || end_description != 1)
        throw ContractError("token layout: description tokens must occupy slots 0 and 1");
    if (end_text >= n_tokens || padding_start > n_tokens)
        throw ContractError("token layout: text does not fit in " + std::to_string(n_tokens) + " tokens");
    if (start_text <= end_description || end_text <= start_text)
        throw ContractError("token layout: text delimiters out of order");
    for (size_t k = 0; k < char_indices.size(); ++k) {
        if (char_indices[k] != start_text + 1 + static_cast<int>(k))
            throw ContractError("token layout: character tokens must be contiguous after S_T");
    }
    if (static_cast<int>(char_indices.size()) != end_text - start_text - 1)
        throw ContractError("token layout: character tokens must fill the text segment");
}

LatentMask LatentMask::zeros(SpatialDims dims) { return LatentMask(Matrix::Zero(dims.height, dims.width)); }

int LatentMask::count() const {
    int n = 0;
    for (Eigen::Index y = 0; y < values.rows(); ++y)
        for (Eigen::Index x = 0; x < values.cols(); ++x) n += values(y, x) >= threshold ? 1 : 0;
    return n;
}

LatentMask LatentMask::binarized() const {
    Matrix out = (values.array() >= threshold).cast<double>().matrix();
    return LatentMask(std::move(out), threshold);
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double peak = logits.row(i).maxCoeff();
        out.row(i) = (logits.row(i).array() - peak).exp().matrix();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

AttentionMap attention_probabilities(const Matrix& query, const Matrix& key, AttentionKind kind, SpatialDims dims) {
    if (query.cols() == 0 || query.cols() != key.cols())
        throw ContractError("attention_probabilities: query/key inner dimensions differ");
    if (query.rows() != dims.cells())
        throw ContractError("attention_probabilities: query rows do not match spatial dims");
    const double scale = 1.0 / std::sqrt(static_cast<double>(query.cols()));
    AttentionMap map{softmax_rows(query * key.transpose() * scale), kind, dims};
    return map;
}

namespace {

void require_mask_dims(const AttentionMap& map, const LatentMask& mask, const char* op) {
    if (mask.dims() != map.dims)
        throw ContractError(std::string(op) + ": mask dims do not match attention spatial dims");
    if (map.rows() != map.dims.cells())
        throw ContractError(std::string(op) + ": attention rows do not match spatial dims");
}

}  // namespace

AttentionMap invert_self_attention(const AttentionMap& map, const LatentMask& mask, bool renormalize) {
    if (map.kind != AttentionKind::self) throw ContractError("invert_self_attention: map is not self-attention");
    require_mask_dims(map, mask, "invert_self_attention");
    AttentionMap out = map;
    for (int i = 0; i < map.dims.cells(); ++i) {
        if (!mask.active(i)) continue;
        const double hi = map.probs.row(i).maxCoeff();
        const double lo = map.probs.row(i).minCoeff();
        Eigen::RowVectorXd flipped = (hi + lo) - map.probs.row(i).array();
        if (renormalize) {
            const double peak = flipped.maxCoeff();
            flipped = (flipped.array() - peak).exp().matrix();
            flipped /= flipped.sum();
        }
        out.probs.row(i) = flipped;
    }
    return out;
}

AttentionMap reassign_cross_attention(const AttentionMap& map, const LatentMask& mask, const TokenLayout& layout) {
    if (map.kind != AttentionKind::cross) throw ContractError("reassign_cross_attention: map is not cross-attention");
    require_mask_dims(map, mask, "reassign_cross_attention");
    if (map.cols() != layout.n_tokens)
        throw ContractError("reassign_cross_attention: token layout does not match map columns");
    AttentionMap out{Matrix::Zero(map.rows(), map.cols()), map.kind, map.dims};
    for (int i = 0; i < map.dims.cells(); ++i)
        out.probs(i, mask.active(i) ? layout.end_description : layout.start_description) = 1.0;
    return out;
}

namespace {

// Region id per spatial cell, -1 outside every character mask.
std::vector<int> region_labels(const AttentionMap& map, std::span<const LatentMask> char_masks) {
    std::vector<int> label(static_cast<size_t>(map.dims.cells()), -1);
    for (size_t k = 0; k < char_masks.size(); ++k) {
        require_mask_dims(map, char_masks[k], "enforce_identity_self_attention");
        for (int i = 0; i < map.dims.cells(); ++i) {
            if (!char_masks[k].active(i)) continue;
            if (label[i] != -1) throw ContractError("enforce_identity_self_attention: character masks overlap");
            label[i] = static_cast<int>(k);
        }
    }
    return label;
}

}  // namespace

AttentionMap enforce_identity_self_attention(const AttentionMap& map, std::span<const LatentMask> char_masks) {
    if (map.kind != AttentionKind::self) throw ContractError("enforce_identity_self_attention: map is not self-attention");
    const std::vector<int> label = region_labels(map, char_masks);
    AttentionMap out = map;
    const int n = map.dims.cells();
    for (int i = 0; i < n; ++i) {
        if (label[i] < 0) continue;
        double in_region = 0.0;
        for (int j = 0; j < n; ++j) {
            if (label[j] == label[i]) {
                in_region += map.probs(i, j);
                out.probs(i, j) = 0.0;
            }
        }
        out.probs(i, i) = in_region;
        const double total = out.probs.row(i).sum();
        if (total > 0.0) out.probs.row(i) /= total;
    }
    return out;
}

Matrix enforce_identity_vjp(const AttentionMap& map, std::span<const LatentMask> char_masks, const Matrix& grad_output) {
    if (grad_output.rows() != map.rows() || grad_output.cols() != map.cols())
        throw ContractError("enforce_identity_vjp: gradient shape mismatch");
    const std::vector<int> label = region_labels(map, char_masks);
    Matrix grad = grad_output;
    const int n = map.dims.cells();
    for (int i = 0; i < n; ++i) {
        if (label[i] < 0) continue;
        // out = u / Z with u = T(s) linear and Z = sum(u) = sum(s).
        double total = 0.0;
        double g_dot_u = 0.0;
        for (int j = 0; j < n; ++j) {
            total += map.probs(i, j);
            if (label[j] != label[i]) g_dot_u += grad_output(i, j) * map.probs(i, j);
        }
        double in_region = 0.0;
        for (int j = 0; j < n; ++j)
            if (label[j] == label[i]) in_region += map.probs(i, j);
        g_dot_u += grad_output(i, i) * in_region;
        if (total <= 0.0) {
            grad.row(i).setZero();
            continue;
        }
        for (int j = 0; j < n; ++j) {
            const double through = label[j] == label[i] ? grad_output(i, i) : grad_output(i, j);
            grad(i, j) = through / total - g_dot_u / (total * total);
        }
    }
    return grad;
}

Matrix extract_token_field(const AttentionMap& map, const TokenLayout& layout, int token_index) {
    if (map.kind != AttentionKind::cross) throw ContractError("extract_token_field: map is not cross-attention");
    if (token_index < 0 || token_index >= layout.n_tokens || token_index >= map.cols())
        throw ContractError("extract_token_field: token index out of range");
    Matrix field(map.dims.height, map.dims.width);
    for (int y = 0; y < map.dims.height; ++y)
        for (int x = 0; x < map.dims.width; ++x) field(y, x) = map.probs(y * map.dims.width + x, token_index);
    return field;
}

}  // namespace textforge::attention
