// SPDX-License-Identifier: Apache-2.0
#pragma once

// Shared generators for the test binaries.

#include "textforge/attention.hpp"
#include "textforge/image.hpp"

#include <cstdint>
#include <random>

namespace textforge::testing {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

/// Row-stochastic matrix with strictly positive entries.
inline Matrix random_stochastic(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        double sum = 0.0;
        for (Eigen::Index j = 0; j < cols; ++j) sum += m(i, j) = std::exp(uniform(rng, -3.0, 3.0));
        m.row(i) /= sum;
    }
    return m;
}

inline attention::AttentionMap random_self_map(Rng& rng, SpatialDims dims) {
    return {random_stochastic(rng, dims.cells(), dims.cells()), attention::AttentionKind::self, dims};
}

inline attention::AttentionMap random_cross_map(Rng& rng, SpatialDims dims, int n_tokens) {
    return {random_stochastic(rng, dims.cells(), n_tokens), attention::AttentionKind::cross, dims};
}

/// Mask with fractional values; roughly `density` of the cells are at or above 0.5.
inline attention::LatentMask random_latent_mask(Rng& rng, SpatialDims dims, double density = 0.4) {
    Matrix v(dims.height, dims.width);
    for (int y = 0; y < dims.height; ++y)
        for (int x = 0; x < dims.width; ++x)
            v(y, x) = uniform(rng) < density ? uniform(rng, 0.5, 1.0) : uniform(rng, 0.0, 0.49);
    return attention::LatentMask(v);
}

inline Image rect_mask(int w, int h, int x0, int y0, int x1, int y1) {
    Image m(w, h, 1);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) m.at(x, y) = 255;
    return m;
}

/// Smooth RGB test card with a few dark bars standing in for glyphs.
inline Image test_card(int w, int h, std::uint64_t seed = 1) {
    Rng rng(seed);
    Image img(w, h, 3);
    const int r0 = uniform_int(rng, 60, 200), g0 = uniform_int(rng, 60, 200), b0 = uniform_int(rng, 60, 200);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            img.at(x, y, 0) = static_cast<std::uint8_t>((r0 + x) % 256);
            img.at(x, y, 1) = static_cast<std::uint8_t>((g0 + y * 2) % 256);
            img.at(x, y, 2) = static_cast<std::uint8_t>((b0 + x + y) % 256);
        }
    for (int bar = 0; bar < 5; ++bar) {
        const int x0 = w / 4 + bar * (w / 10);
        for (int y = h / 3; y < 2 * h / 3; ++y)
            for (int x = x0; x < x0 + 2 && x < w; ++x)
                for (int c = 0; c < 3; ++c) img.at(x, y, c) = 20;
    }
    return img;
}

inline Image random_image(Rng& rng, int w, int h, int channels) {
    Image img(w, h, channels);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(uniform_int(rng, 0, 255));
    return img;
}

}  // namespace textforge::testing
