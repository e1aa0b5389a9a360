// SPDX-License-Identifier: Apache-2.0
#pragma once

// Mask arithmetic: pixel -> latent interpolation, per-character strips and width-prior shrinking.

#include "textforge/attention.hpp"
#include "textforge/image.hpp"

#include <filesystem>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace textforge::masks {

using attention::LatentMask;

/// Half-open rectangle [x0, x1) x [y0, y1).
struct BoundingBox {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    bool empty() const { return width() <= 0 || height() <= 0; }
    bool operator==(const BoundingBox&) const = default;
};

BoundingBox bounding_box(const LatentMask& mask);
BoundingBox bounding_box(const Image& pixel_mask);

/// Bilinear resampling of a scalar field, pixel-center aligned and without antialiasing
/// (the behaviour of `interpolate(mode="bilinear", align_corners=False)`).
Matrix resample_bilinear(const Matrix& field, SpatialDims target);

/// Bilinear downsample of pixel_mask / 255 to `latent_dims`.
LatentMask to_latent_mask(const Image& pixel_mask, SpatialDims latent_dims);

/// Resamples a latent mask to another attention resolution; identity when dims already match.
LatentMask resample_mask(const LatentMask& mask, SpatialDims target);

/// Splits the mask's bounding box into one equal-width vertical strip per character
/// (left to right), each intersected with the binarized mask. Remainder columns go to the
/// leftmost strips.
std::vector<LatentMask> split_character_masks(const LatentMask& latent_mask, std::string_view text);

/// Relative glyph advance widths used to shrink masks.
class CharWidthPriors {
public:
    CharWidthPriors(std::unordered_map<char32_t, double> widths, double default_width);

    /// Four-class sans-serif table: narrow 0.4, medium 0.8, wide 1.0, extra-wide 1.3.
    static CharWidthPriors standard();

    /// Reads `{"default_width": w, "widths": {"A": 1.0, ...}}`; listed entries override the
    /// standard table unless `"replace": true`.
    static CharWidthPriors load(const std::filesystem::path& path);
    static CharWidthPriors from_json_text(std::string_view json_text);

    double width_of(char32_t c) const;
    double total_width(std::string_view utf8_text) const;
    double default_width() const { return default_width_; }

private:
    std::unordered_map<char32_t, double> widths_;
    double default_width_;
};

enum class ShrinkAnchor { left, center, right };

struct ShrinkOptions {
    ShrinkAnchor anchor = ShrinkAnchor::left;
    bool shrink_height = false;  // when set, height is scaled by the same ratio around its center
};

struct ShrunkMask {
    Image pixel;
    LatentMask latent;
    double ratio = 1.0;
};

/// Narrows the mask's bounding box by r = width(target) / width(source), clamped to <= 1.
/// The result is always a subset of the input mask.
ShrunkMask shrink_mask(const Image& pixel_mask, std::string_view source_text, std::string_view target_text,
                       const CharWidthPriors& priors, SpatialDims latent_dims, const ShrinkOptions& options = {});

/// All masks one controllable-inpainting run needs.
struct MaskSet {
    Image pixel_mask;
    LatentMask latent_mask;
    std::vector<LatentMask> char_masks;  // equal strips of the shrunk latent mask
    Image shrunk_pixel;
    LatentMask shrunk_latent;
    double shrink_ratio = 1.0;
};

/// Builds the mask set for rendering `target_text` into `pixel_mask`. With an empty
/// `source_text` no shrinking is applied.
MaskSet build_mask_set(const Image& pixel_mask, SpatialDims latent_dims, std::string_view source_text,
                       std::string_view target_text, const CharWidthPriors& priors, const ShrinkOptions& options = {});

/// Places `mask` at column offset `x_offset` of an otherwise empty mask of size `target`.
LatentMask embed_mask(const LatentMask& mask, SpatialDims target, int x_offset);

}  // namespace textforge::masks
