// SPDX-License-Identifier: Apache-2.0
#pragma once

// 1x2 grid canvas pairing the edit target (left) with a style reference (right).

#include "textforge/attention.hpp"
#include "textforge/image.hpp"
#include "textforge/latent.hpp"

namespace textforge::grid {

using attention::LatentMask;

struct SlotRect {
    int x = 0;
    int y = 0;
    int width = 0;
    int height = 0;

    SlotRect scaled(int factor) const { return {x * factor, y * factor, width * factor, height * factor}; }
    bool operator==(const SlotRect&) const = default;
};

struct GridCanvas {
    Latent grid_noise;          // Gaussian latent expanded to grid size
    Latent grid_clean_latent;   // [z_removed ; z_ref], the clean latent the forward process noises
    Latent grid_masked_latent;  // [z_removed with the shrunk region zeroed ; z_ref]
    LatentMask grid_latent_mask;  // [m_shr ; 0]
    SlotRect target_slot;
    SlotRect reference_slot;

    SpatialDims dims() const { return grid_masked_latent.dims(); }
};

/// Zeroes every latent cell selected by `mask`.
Latent zero_masked_cells(const Latent& latent, const LatentMask& mask);

/// Builds the canvas. `noise_latent` may be input-sized (replicated into both halves) or
/// already grid-sized.
GridCanvas assemble_grid(const Latent& removed_image_latent, const Latent& ref_image_latent,
                         const LatentMask& shrunk_latent_mask, const Latent& noise_latent);

/// Exact sub-image copy of `slot` (pixel coordinates).
Image crop_grid_result(const Image& grid_image, const SlotRect& slot);

}  // namespace textforge::grid
