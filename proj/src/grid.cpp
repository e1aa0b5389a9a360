// SPDX-License-Identifier: Apache-2.0
#include "textforge/grid.hpp"

#include "textforge/masks.hpp"

namespace textforge::grid {

Latent zero_masked_cells(const Latent& latent, const LatentMask& mask) {
    if (mask.dims() != latent.dims()) throw ContractError("zero_masked_cells: mask dims differ from latent dims");
    Latent out = latent;
    for (int i = 0; i < latent.height * latent.width; ++i)
        if (mask.active(i)) out.values.row(i).setZero();
    return out;
}

GridCanvas assemble_grid(const Latent& removed_image_latent, const Latent& ref_image_latent,
                         const LatentMask& shrunk_latent_mask, const Latent& noise_latent) {
    if (!removed_image_latent.same_shape(ref_image_latent))
        throw ContractError("assemble_grid: removed and reference latents differ in shape");
    const Latent& base = removed_image_latent;
    if (shrunk_latent_mask.dims() != base.dims()) throw ContractError("assemble_grid: mask dims differ from latent dims");

    GridCanvas canvas;
    canvas.target_slot = {0, 0, base.width, base.height};
    canvas.reference_slot = {base.width, 0, base.width, base.height};
    canvas.grid_clean_latent = concat_width(removed_image_latent, ref_image_latent);
    canvas.grid_masked_latent = concat_width(zero_masked_cells(removed_image_latent, shrunk_latent_mask), ref_image_latent);
    canvas.grid_latent_mask = masks::embed_mask(shrunk_latent_mask, canvas.grid_masked_latent.dims(), 0);

    if (noise_latent.channels != base.channels || noise_latent.height != base.height)
        throw ContractError("assemble_grid: noise latent shape mismatch");
    if (noise_latent.width == base.width) {
        canvas.grid_noise = concat_width(noise_latent, noise_latent);
    } else if (noise_latent.width == 2 * base.width) {
        canvas.grid_noise = noise_latent;
    } else {
        throw ContractError("assemble_grid: noise latent must be input- or grid-sized");
    }
    return canvas;
}

Image crop_grid_result(const Image& grid_image, const SlotRect& slot) {
    if (slot.x < 0 || slot.y < 0 || slot.width <= 0 || slot.height <= 0 || slot.x + slot.width > grid_image.width ||
        slot.y + slot.height > grid_image.height)
        throw ContractError("crop_grid_result: slot outside grid bounds");
    return crop(grid_image, slot.x, slot.y, slot.width, slot.height);
}

}  // namespace textforge::grid
