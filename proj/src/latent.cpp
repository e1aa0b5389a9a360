// SPDX-License-Identifier: Apache-2.0
#include "textforge/latent.hpp"

#include <random>

namespace textforge {

Latent::Latent(int c, int h, int w, Matrix v) : channels(c), height(h), width(w), values(std::move(v)) {
    if (values.rows() != static_cast<Eigen::Index>(h) * w || values.cols() != c)
        throw ContractError("latent: value matrix does not match (c, h, w)");
}

Latent gaussian_latent(int channels, int height, int width, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Latent out(channels, height, width);
    // channel-major draw order so the stream is independent of the storage layout
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) out.at(c, y, x) = normal(rng);
    return out;
}

Latent concat_width(const Latent& left, const Latent& right) {
    if (left.channels != right.channels || left.height != right.height)
        throw ContractError("concat_width: channel/height mismatch");
    Latent out(left.channels, left.height, left.width + right.width);
    for (int c = 0; c < out.channels; ++c)
        for (int y = 0; y < out.height; ++y) {
            for (int x = 0; x < left.width; ++x) out.at(c, y, x) = left.at(c, y, x);
            for (int x = 0; x < right.width; ++x) out.at(c, y, left.width + x) = right.at(c, y, x);
        }
    return out;
}

Latent crop_latent(const Latent& latent, int x, int y, int w, int h) {
    if (x < 0 || y < 0 || w <= 0 || h <= 0 || x + w > latent.width || y + h > latent.height)
        throw ContractError("crop_latent: rectangle outside latent bounds");
    Latent out(latent.channels, h, w);
    for (int c = 0; c < latent.channels; ++c)
        for (int r = 0; r < h; ++r)
            for (int q = 0; q < w; ++q) out.at(c, r, q) = latent.at(c, y + r, x + q);
    return out;
}

}  // namespace textforge
